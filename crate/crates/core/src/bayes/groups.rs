//! Parameter groups sharing one variance, and the structured update rule.

use serde::{Deserialize, Serialize};

use super::update::{update_posterior_variance, update_switch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupPattern {
    EdgeSingleton,
    CellTied,
    ShapeWise,
    RowWise,
    ColumnWise,
    RowAndColumn,
    ChannelWise,
    GroupShapeWise,
    GroupRowWise,
    GroupColumnWise,
    GroupRowAndColumn,
    FilterWise,
}

/// Flat member indices of one group. Row-and-column groups list the shared
/// element twice, matching the concatenated weight vector they penalize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub id: usize,
    pub members: Vec<usize>,
    pub pattern: GroupPattern,
}

/// Partitions a weight tensor by `pattern`.
///
/// Convolution weights are `(N, C, m, k)`. Dense weights `(out, in)` use
/// `RowWise` for output neurons and `ColumnWise` for input features; the other
/// patterns view them as `(in, out, 1, 1)`.
pub fn weight_groups(pattern: GroupPattern, shape: &[usize]) -> Result<Vec<GroupSpec>> {
    let dims: [usize; 4] = match (pattern, shape) {
        (GroupPattern::RowWise, &[out, inp]) => {
            return Ok(collect(pattern, out, |g| (0..inp).map(|k| g * inp + k).collect()));
        }
        (GroupPattern::ColumnWise, &[out, inp]) => {
            return Ok(collect(pattern, inp, |g| (0..out).map(|j| j * inp + g).collect()));
        }
        (_, &[out, inp]) => [inp, out, 1, 1],
        (_, &[n, c, m, k]) => [n, c, m, k],
        _ => {
            return Err(Error::Group(format!(
                "{pattern:?} needs a 2-D or 4-D weight tensor, got {shape:?}"
            )))
        }
    };
    let [n, c, m, k] = dims;
    let dense = shape.len() == 2;
    // Flat index of element (n, c, m, k) in the stored layout.
    let at = |ni: usize, ci: usize, mi: usize, ki: usize| {
        if dense {
            ci * n + ni
        } else {
            ((ni * c + ci) * m + mi) * k + ki
        }
    };
    let pick = |ns: &[usize], cs: &[usize], ms: &[usize], ks: &[usize]| {
        let mut v = Vec::new();
        for &ni in ns {
            for &ci in cs {
                for &mi in ms {
                    for &ki in ks {
                        v.push(at(ni, ci, mi, ki));
                    }
                }
            }
        }
        v
    };
    let all = |len: usize| (0..len).collect::<Vec<_>>();
    let (an, ac, am, ak) = (all(n), all(c), all(m), all(k));
    Ok(match pattern {
        GroupPattern::EdgeSingleton => collect(pattern, n * c * m * k, |g| vec![g]),
        GroupPattern::CellTied => {
            return Err(Error::Group("cell-tied groups apply to graph edges, not weights".into()))
        }
        GroupPattern::ShapeWise => collect(pattern, c * m * k, |g| pick(&an, &[g / (m * k)], &[(g / k) % m], &[g % k])),
        GroupPattern::RowWise => collect(pattern, c * m, |g| pick(&an, &[g / m], &[g % m], &ak)),
        GroupPattern::ColumnWise => collect(pattern, c * k, |g| pick(&an, &[g / k], &am, &[g % k])),
        GroupPattern::RowAndColumn => collect(pattern, c * m * k, |g| {
            let (ci, mi, ki) = (g / (m * k), (g / k) % m, g % k);
            let mut v = pick(&an, &[ci], &[mi], &ak);
            v.extend(pick(&an, &[ci], &am, &[ki]));
            v
        }),
        GroupPattern::ChannelWise => collect(pattern, c, |g| pick(&an, &[g], &am, &ak)),
        GroupPattern::GroupShapeWise => collect(pattern, m * k, |g| pick(&an, &ac, &[g / k], &[g % k])),
        GroupPattern::GroupRowWise => collect(pattern, m, |g| pick(&an, &ac, &[g], &ak)),
        GroupPattern::GroupColumnWise => collect(pattern, k, |g| pick(&an, &ac, &am, &[g])),
        GroupPattern::GroupRowAndColumn => collect(pattern, m * k, |g| {
            let (mi, ki) = (g / k, g % k);
            let mut v = pick(&an, &ac, &[mi], &ak);
            v.extend(pick(&an, &ac, &am, &[ki]));
            v
        }),
        GroupPattern::FilterWise => collect(pattern, n, |g| pick(&[g], &ac, &am, &ak)),
    })
}

fn collect(pattern: GroupPattern, count: usize, members: impl Fn(usize) -> Vec<usize>) -> Vec<GroupSpec> {
    (0..count)
        .map(|id| GroupSpec {
            id,
            members: members(id),
            pattern,
        })
        .collect()
}

/// Variance state of one weight group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub gamma: f64,
    pub omega: f64,
    /// `Σ |α|` over members from the last update.
    pub alpha_sum: f64,
    pub pruned: bool,
}

impl Default for GroupState {
    fn default() -> Self {
        GroupState {
            gamma: 1.0,
            omega: 1.0,
            alpha_sum: 0.0,
            pruned: false,
        }
    }
}

/// Structured update for every group of one pattern:
/// `γ = ‖W_g‖₂ / (ρ ω_prev)`, `C_i = (1/γ + H_i)⁻¹`, `α_i = 1/γ − C_i/γ²`,
/// `ω = √(Σ|α_i|)`. Pruned groups are left untouched.
pub fn structural_update(
    weights: &Tensor,
    hess_diag: &Tensor,
    groups: &[GroupSpec],
    states: &mut [GroupState],
    rho: f64,
    floor: f64,
    cap: f64,
) -> Result<()> {
    if weights.shape() != hess_diag.shape() {
        return Err(Error::Group(format!(
            "curvature {:?} does not match weights {:?}",
            hess_diag.shape(),
            weights.shape()
        )));
    }
    if groups.len() != states.len() {
        return Err(Error::Group(format!("{} groups but {} states", groups.len(), states.len())));
    }
    let values = weights.data();
    let curv = hess_diag.data();
    for (group, state) in groups.iter().zip(states.iter_mut()) {
        if state.pruned {
            continue;
        }
        if let Some(&bad) = group.members.iter().find(|&&i| i >= values.len()) {
            return Err(Error::Group(format!("group {} member {bad} out of range", group.id)));
        }
        let norm = group.members.iter().map(|&i| values[i] * values[i]).sum::<f64>().sqrt();
        let gamma = update_switch(norm, rho * state.omega, floor, cap);
        state.gamma = gamma;
        if gamma == 0.0 {
            state.alpha_sum = 0.0;
            continue;
        }
        let mut alpha_sum = 0.0;
        for &i in &group.members {
            let posterior = update_posterior_variance(gamma, curv[i])?;
            let alpha = -posterior / (gamma * gamma) + 1.0 / gamma;
            alpha_sum += alpha.abs();
        }
        state.alpha_sum = alpha_sum;
        state.omega = alpha_sum.sqrt().max(floor);
    }
    Ok(())
}
