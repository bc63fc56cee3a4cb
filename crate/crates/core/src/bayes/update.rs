use crate::error::{Error, Result};

/// Lower bound applied to ω so that zero curvature cannot produce an infinite switch.
pub const OMEGA_FLOOR: f64 = 1e-8;
/// Upper bound on switch variances.
pub const SWITCH_CAP: f64 = 1e6;

/// `C = (1/γ + H)⁻¹`; negative curvature is clamped to zero first.
pub fn update_posterior_variance(gamma: f64, hess: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Hyper(format!("gamma must be positive and finite, got {gamma}")));
    }
    if hess.is_nan() {
        return Err(Error::NonFinite("curvature is NaN".into()));
    }
    let posterior = 1.0 / (1.0 / gamma + hess.max(0.0));
    Ok(posterior.min(gamma))
}

/// `ω = √(γ − C)/γ`, floored.
pub fn update_omega(gamma_prev: f64, posterior: f64, floor: f64) -> Result<f64> {
    if !(gamma_prev > 0.0) || !(posterior > 0.0) {
        return Err(Error::Hyper(format!("need 0 < C ≤ γ, got C = {posterior}, γ = {gamma_prev}")));
    }
    let gap = gamma_prev - posterior;
    if gap < -1e-12 * gamma_prev.max(1.0) {
        return Err(Error::Hyper(format!(
            "posterior variance {posterior} exceeds prior variance {gamma_prev}"
        )));
    }
    Ok((gap.max(0.0).sqrt() / gamma_prev).max(floor))
}

/// `s = |w/ω|`, with ω floored and the result capped.
pub fn update_switch(weight: f64, omega: f64, floor: f64, cap: f64) -> f64 {
    (weight.abs() / omega.max(floor)).min(cap)
}

/// `λ_w Σ |ω_i w_i|` and its subgradient (zero at `w = 0`).
pub fn reweighted_l1_penalty(weights: &[f64], omega: &[f64], lambda_w: f64) -> (f64, Vec<f64>) {
    let value = lambda_w * weights.iter().zip(omega).map(|(&wi, &oi)| (oi * wi).abs()).sum::<f64>();
    let grad = weights
        .iter()
        .zip(omega)
        .map(|(&wi, &oi)| {
            let dir = if wi == 0.0 { 0.0 } else { wi / wi.abs() };
            lambda_w * oi * dir
        })
        .collect();
    (value, grad)
}

/// `λ Σ_g ω_g ‖w_g‖₂` over possibly overlapping member lists, with subgradient.
pub fn group_l2_penalty(groups: &[Vec<usize>], weights: &[f64], omega: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for (members, &og) in groups.iter().zip(omega) {
        let norm = members.iter().map(|&i| weights[i] * weights[i]).sum::<f64>().sqrt();
        value += og * norm;
        if norm > 0.0 {
            for &i in members {
                grad[i] += lambda * og * (weights[i] / norm);
            }
        }
    }
    (lambda * value, grad)
}

/// Shared switch and reweighting coefficient of a tied group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupUpdate {
    pub switch: f64,
    pub omega: f64,
}

/// Group rule: `ω_g = √(Σ ω_i²)` with per-member `ω_i = √(γ_i − C_i)/γ_i`, and
/// `s_g = ‖w_g‖₂ / (ρ ω_g)`. A singleton reproduces the scalar rules bitwise.
pub fn group_update(weights: &[f64], gamma_prev: &[f64], posterior: &[f64], rho: f64, floor: f64, cap: f64) -> Result<GroupUpdate> {
    if weights.is_empty() || weights.len() != gamma_prev.len() || weights.len() != posterior.len() {
        return Err(Error::Group("group members must be nonempty and aligned".into()));
    }
    let mut omega_sq = 0.0;
    for (&g, &ci) in gamma_prev.iter().zip(posterior) {
        let o = update_omega(g, ci, floor)?;
        omega_sq += o * o;
    }
    let omega = omega_sq.sqrt();
    let norm = weights.iter().map(|&x| x * x).sum::<f64>().sqrt();
    Ok(GroupUpdate {
        switch: update_switch(norm, rho * omega, floor, cap),
        omega,
    })
}
