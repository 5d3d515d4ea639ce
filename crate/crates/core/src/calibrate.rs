//! Univariate bandwidths with a prescribed number of degrees of freedom.

use serde::{Deserialize, Serialize};

use crate::config::BoundaryPolicy;
use crate::error::{Error, Result};
use crate::kernel::axis_factor;
use crate::linalg::local_pinv;

/// Bracket used for the search, on the `[0, 1]` predictor scale.
pub const H_MAX: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationLimit {
    /// Target at or above the interpolation limit; `h` is the lower bracket end.
    Lower,
    /// Target at or below what the widest bandwidth reaches.
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub h: f64,
    pub df: f64,
    pub limit: Option<CalibrationLimit>,
}

/// Trace of the univariate local-linear hat matrix at bandwidth `h`.
pub fn local_linear_df(x: &[f64], h: f64, policy: BoundaryPolicy, cutoff: f64) -> f64 {
    let n = x.len();
    (0..n)
        .map(|a| {
            let mut s = [0.0; 4];
            for &xi in x {
                if let Some((w, z)) = axis_factor(policy, xi, x[a], h) {
                    s[0] += w;
                    s[1] += w * z;
                    s[3] += w * z * z;
                }
            }
            s[2] = s[1];
            let own = axis_factor(policy, x[a], x[a], h).map_or(0.0, |f| f.0);
            // the 1/n factors of S and of the own weight cancel
            local_pinv(&s, 2, cutoff)[0] * own
        })
        .sum()
}

/// Bandwidth whose local-linear trace on `x` equals `target_df`, by bisection
/// on `log h` to relative tolerance `1e-4`.
pub fn calibrate_bandwidth_by_df(x: &[f64], target_df: f64, policy: BoundaryPolicy) -> Result<Calibration> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Calibration("need at least two observations".into()));
    }
    if !(target_df >= 2.0) {
        return Err(Error::Calibration(format!(
            "target df {target_df} below the linear-fit limit of 2"
        )));
    }
    let cutoff = 1e-10;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min_gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_gap.is_finite() {
        return Err(Error::Calibration("all observations coincide".into()));
    }
    let mut lo = 0.5 * min_gap;
    let mut hi = H_MAX;
    let df = |h: f64| local_linear_df(x, h, policy, cutoff);
    let (df_lo, df_hi) = (df(lo), df(hi));
    if target_df >= df_lo {
        return Ok(Calibration {
            h: lo,
            df: df_lo,
            limit: Some(CalibrationLimit::Lower),
        });
    }
    if target_df <= df_hi {
        return Ok(Calibration {
            h: hi,
            df: df_hi,
            limit: Some(CalibrationLimit::Upper),
        });
    }
    while hi / lo > 1.0 + 1e-4 {
        let mid = (lo * hi).sqrt();
        if df(mid) > target_df {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h = (lo * hi).sqrt();
    Ok(Calibration {
        h,
        df: df(h),
        limit: None,
    })
}
