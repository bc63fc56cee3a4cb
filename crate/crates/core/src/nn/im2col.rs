//! Patch extraction that lowers convolution to a matrix product.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial geometry of a sliding window over a `C×H×W` feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn output_hw(&self) -> Result<(usize, usize)> {
        let (m, k) = self.kernel;
        if self.stride == 0 || m == 0 || k == 0 {
            return Err(Error::Geometry("kernel and stride must be positive".into()));
        }
        let ph = self.height + 2 * self.padding;
        let pw = self.width + 2 * self.padding;
        if m > ph || k > pw {
            return Err(Error::Geometry(format!(
                "kernel {m}x{k} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - m) / self.stride + 1, (pw - k) / self.stride + 1))
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    pub fn positions(&self) -> Result<usize> {
        let (h, w) = self.output_hw()?;
        Ok(h * w)
    }
}

fn window_of(input: &Tensor, kernel: (usize, usize), stride: usize, padding: usize) -> Result<Window> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("im2col expects b×C×H×W input, got {s:?}")));
    }
    Ok(Window {
        channels: s[1],
        height: s[2],
        width: s[3],
        kernel,
        stride,
        padding,
    })
}

/// Rows are output positions (sample-major), columns run channel-major and
/// then row-major within the kernel.
pub fn im2col(input: &Tensor, kernel: (usize, usize), stride: usize, padding: usize) -> Result<Tensor> {
    let win = window_of(input, kernel, stride, padding)?;
    im2col_with(input, &win)
}

/// Calls `f(col, offset)` for every in-bounds tap of the patch at output
/// (oy, ox); `offset` indexes one sample's `C×H×W` block.
#[inline]
fn for_each_tap(win: &Window, oy: usize, ox: usize, mut f: impl FnMut(usize, usize)) {
    let (m, k) = win.kernel;
    let y0 = (oy * win.stride) as isize - win.padding as isize;
    let x0 = (ox * win.stride) as isize - win.padding as isize;
    for c in 0..win.channels {
        for ky in 0..m {
            let y = y0 + ky as isize;
            if y < 0 || y as usize >= win.height {
                continue;
            }
            let base = (c * win.height + y as usize) * win.width;
            let col = (c * m + ky) * k;
            for kx in 0..k {
                let x = x0 + kx as isize;
                if x >= 0 && (x as usize) < win.width {
                    f(col + kx, base + x as usize);
                }
            }
        }
    }
}

pub(crate) fn im2col_with(input: &Tensor, win: &Window) -> Result<Tensor> {
    let (oh, ow) = win.output_hw()?;
    let batch = input.rows();
    let cols = win.patch_len();
    let per_sample = win.channels * win.height * win.width;
    let mut out = vec![0.0; batch * oh * ow * cols];
    let src = input.data();
    for b in 0..batch {
        let sample = &src[b * per_sample..(b + 1) * per_sample];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (b * oh + oy) * ow + ox;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for_each_tap(win, oy, ox, |col, i| dst[col] = sample[i]);
            }
        }
    }
    Tensor::from_vec(&[batch * oh * ow, cols], out)
}

/// Adjoint of [`im2col`]: scatters patch rows back, summing overlaps.
pub(crate) fn col2im(cols: &Tensor, batch: usize, win: &Window) -> Result<Tensor> {
    let (oh, ow) = win.output_hw()?;
    let width = win.patch_len();
    if cols.shape() != [batch * oh * ow, width] {
        return Err(Error::Shape(format!(
            "col2im expects {}x{width}, got {:?}",
            batch * oh * ow,
            cols.shape()
        )));
    }
    let per_sample = win.channels * win.height * win.width;
    let mut out = vec![0.0; batch * per_sample];
    let src = cols.data();
    for b in 0..batch {
        let sample = &mut out[b * per_sample..(b + 1) * per_sample];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (b * oh + oy) * ow + ox;
                let patch = &src[row * width..(row + 1) * width];
                for_each_tap(win, oy, ox, |col, i| sample[i] += patch[col]);
            }
        }
    }
    Tensor::from_vec(&[batch, win.channels, win.height, win.width], out)
}
