//! Product Epanechnikov kernel and its boundary treatment.

use crate::config::{BandwidthSpec, BoundaryPolicy};

/// `0.75 (1 - u^2)` on `[-1, 1]`, zero elsewhere.
#[inline]
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

#[inline]
fn antiderivative(u: f64) -> f64 {
    let u = u.clamp(-1.0, 1.0);
    0.75 * (u - u * u * u / 3.0)
}

/// Kernel mass on `[a, b]`.
pub fn kernel_mass(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    antiderivative(b) - antiderivative(a)
}

/// Per-axis normalization `c(X) = ∫_0^1 K((X - s)/h)/h ds`.
pub fn boundary_mass(x_obs: f64, h: f64) -> f64 {
    kernel_mass((x_obs - 1.0) / h, x_obs / h)
}

/// One-axis factor of the product kernel for observation coordinate `x_obs`
/// and output coordinate `x_out`: the weight factor and the scaled offset
/// `(x_obs - x_out) / h`. `None` outside the support.
#[inline]
pub fn axis_factor(policy: BoundaryPolicy, x_obs: f64, x_out: f64, h: f64) -> Option<(f64, f64)> {
    let z = (x_obs - x_out) / h;
    match policy {
        BoundaryPolicy::Renorm => {
            if z.abs() >= 1.0 {
                return None;
            }
            Some((epanechnikov(z) / (h * boundary_mass(x_obs, h)), z))
        }
        BoundaryPolicy::Inflate { boundary_ratio } => {
            let h_eff = inflated_bandwidth(x_out, h, boundary_ratio);
            let u = (x_obs - x_out) / h_eff;
            if u.abs() >= 1.0 {
                return None;
            }
            // Offsets stay on the nominal scale so slopes are comparable
            // across output points.
            Some((epanechnikov(u) / h_eff, z))
        }
    }
}

/// Bandwidth used at output coordinate `x` under [`BoundaryPolicy::Inflate`].
pub fn inflated_bandwidth(x: f64, h: f64, boundary_ratio: f64) -> f64 {
    let dist = x.min(1.0 - x).max(0.0);
    let closeness = (1.0 - dist / h).max(0.0);
    h * (1.0 + (boundary_ratio - 1.0) * closeness)
}

/// Largest distance between an observation and an output point that can
/// still carry weight on this axis.
pub(crate) fn support_radius(policy: BoundaryPolicy, h: f64) -> f64 {
    match policy {
        BoundaryPolicy::Renorm => h,
        BoundaryPolicy::Inflate { boundary_ratio } => h * boundary_ratio,
    }
}

/// Full product weight `K_h(X_i, x)` under the given policy.
pub fn kernel_weight(policy: BoundaryPolicy, x_obs: &[f64], x: &[f64], bw: &BandwidthSpec) -> f64 {
    let mut w = 1.0;
    for ((&xo, &xk), &h) in x_obs.iter().zip(x).zip(bw.per_axis()) {
        match axis_factor(policy, xo, xk, h) {
            Some((f, _)) => w *= f,
            None => return 0.0,
        }
    }
    w
}

/// Boundary-renormalized weight, integrating to one over `[0,1]^d` in `x`.
pub fn boundary_weight(x_obs: &[f64], x: &[f64], bw: &BandwidthSpec) -> f64 {
    kernel_weight(BoundaryPolicy::Renorm, x_obs, x, bw)
}
