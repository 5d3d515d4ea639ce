use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-axis kernel bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSpec {
    h: Vec<f64>,
}

impl BandwidthSpec {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::InvalidInput("bandwidth list is empty".into()));
        }
        if h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "bandwidths must be positive and finite: {h:?}"
            )));
        }
        Ok(Self { h })
    }

    pub fn uniform(d: usize, h: f64) -> Result<Self> {
        Self::new(vec![h; d])
    }

    pub fn per_axis(&self) -> &[f64] {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// Geometric mean `(h_1 ... h_d)^(1/d)`.
    pub fn geometric_mean(&self) -> f64 {
        let logs: f64 = self.h.iter().map(|v| v.ln()).sum();
        (logs / self.h.len() as f64).exp()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.h.iter().map(|v| v * c).collect())
    }
}

/// Penalty on the non-additive part. `Infinite` selects the pure additive fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Penalty {
    Finite(f64),
    Infinite(InfiniteTag),
}

/// Serialized form of an infinite penalty (`"inf"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfiniteTag {
    #[serde(rename = "inf", alias = "infinity", alias = "Inf")]
    Inf,
}

impl Penalty {
    pub const INFINITE: Penalty = Penalty::Infinite(InfiniteTag::Inf);
    pub const ZERO: Penalty = Penalty::Finite(0.0);

    pub fn finite(r: f64) -> Result<Self> {
        if r.is_nan() || r < 0.0 {
            return Err(Error::PenaltyDomain(format!("penalty must be >= 0, got {r}")));
        }
        if r.is_infinite() {
            return Ok(Self::INFINITE);
        }
        Ok(Penalty::Finite(r))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Penalty::Infinite(_))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Penalty::Finite(r) if *r == 0.0)
    }

    /// Numeric value, `f64::INFINITY` for the additive limit.
    pub fn value(&self) -> f64 {
        match self {
            Penalty::Finite(r) => *r,
            Penalty::Infinite(_) => f64::INFINITY,
        }
    }

    /// `R / (1 + R)`, the scale used by the search lattice.
    pub fn shrink_fraction(&self) -> f64 {
        match self {
            Penalty::Finite(r) => r / (1.0 + r),
            Penalty::Infinite(_) => 1.0,
        }
    }

    pub fn from_shrink_fraction(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::PenaltyDomain(format!(
                "R/(1+R) must lie in [0,1], got {q}"
            )));
        }
        if q == 1.0 {
            return Ok(Self::INFINITE);
        }
        Ok(Penalty::Finite(q / (1.0 - q)))
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Penalty::Finite(r) => write!(f, "{r}"),
            Penalty::Infinite(_) => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(Self::INFINITE),
            other => other
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("penalty {s:?}: {e}")))
                .and_then(Penalty::finite),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Direct,
    Iterative,
}

/// How kernel weights are treated near the edge of `[0,1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "policy")]
pub enum BoundaryPolicy {
    /// Per-observation renormalization so each weight integrates to one over
    /// the unit cube.
    #[default]
    Renorm,
    /// Widen the bandwidth at output points closer than `h` to an edge. The
    /// per-axis bandwidth grows linearly from `h` (at distance `h`) to
    /// `boundary_ratio * h` (on the edge).
    Inflate { boundary_ratio: f64 },
}

impl BoundaryPolicy {
    /// Edge bandwidth `2h`: the one-sided window `[0, 2h]` then has the same
    /// width as an interior window.
    pub const DEFAULT_INFLATION: f64 = 2.0;

    pub fn inflate() -> Self {
        BoundaryPolicy::Inflate {
            boundary_ratio: Self::DEFAULT_INFLATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub penalty: Penalty,
    pub bandwidth: BandwidthSpec,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
    /// Stop when the squared increment of the additive coordinates falls below this.
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
    /// Penalties at or above this value use the large-R formulas.
    #[serde(default = "defaults::large_r_threshold")]
    pub large_r_threshold: f64,
    /// Relative eigenvalue cutoff for generalized inverses.
    #[serde(default = "defaults::pinv_cutoff")]
    pub pinv_cutoff: f64,
}

pub(crate) mod defaults {
    pub fn tolerance() -> f64 {
        1e-10
    }
    pub fn max_iterations() -> usize {
        500
    }
    pub fn large_r_threshold() -> f64 {
        1.0
    }
    pub fn pinv_cutoff() -> f64 {
        1e-10
    }
}

impl FitConfig {
    pub fn new(penalty: Penalty, bandwidth: BandwidthSpec) -> Self {
        Self {
            penalty,
            bandwidth,
            solver: SolverKind::Direct,
            boundary: BoundaryPolicy::Renorm,
            tolerance: defaults::tolerance(),
            max_iterations: defaults::max_iterations(),
            large_r_threshold: defaults::large_r_threshold(),
            pinv_cutoff: defaults::pinv_cutoff(),
        }
    }

    pub fn with_penalty(&self, penalty: Penalty) -> Self {
        Self {
            penalty,
            ..self.clone()
        }
    }

    pub fn with_bandwidth(&self, bandwidth: BandwidthSpec) -> Self {
        Self {
            bandwidth,
            ..self.clone()
        }
    }

    pub fn with_solver(&self, solver: SolverKind) -> Self {
        Self {
            solver,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        if !(self.large_r_threshold > 0.0) {
            return Err(Error::InvalidInput(
                "large_r_threshold must be positive".into(),
            ));
        }
        if !(self.pinv_cutoff > 0.0 && self.pinv_cutoff < 1.0) {
            return Err(Error::InvalidInput("pinv_cutoff must lie in (0,1)".into()));
        }
        if let Penalty::Finite(r) = self.penalty {
            if r.is_nan() || r < 0.0 {
                return Err(Error::PenaltyDomain(format!("penalty {r}")));
            }
        }
        if let BoundaryPolicy::Inflate { boundary_ratio } = self.boundary {
            if !(boundary_ratio >= 1.0 && boundary_ratio.is_finite()) {
                return Err(Error::InvalidInput(
                    "boundary inflation ratio must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_mean() {
        let bw = BandwidthSpec::new(vec![0.1, 0.4]).unwrap();
        assert!((bw.geometric_mean() - 0.2).abs() < 1e-15);
        let bw = BandwidthSpec::new(vec![0.3, 0.3, 0.3]).unwrap();
        assert!((bw.geometric_mean() - 0.3).abs() < 1e-15);
        assert!(BandwidthSpec::new(vec![0.1, 0.0]).is_err());
        assert!(BandwidthSpec::new(vec![]).is_err());
    }

    #[test]
    fn penalty_parsing_and_fraction() {
        assert_eq!("inf".parse::<Penalty>().unwrap(), Penalty::INFINITE);
        assert_eq!("0.5".parse::<Penalty>().unwrap(), Penalty::Finite(0.5));
        assert!("-1".parse::<Penalty>().is_err());
        let p = Penalty::from_shrink_fraction(0.9999).unwrap();
        assert!((p.value() - 9999.0).abs() < 1e-6);
        assert_eq!(Penalty::from_shrink_fraction(1.0).unwrap(), Penalty::INFINITE);
        assert_eq!(Penalty::INFINITE.shrink_fraction(), 1.0);
    }

    #[test]
    fn penalty_serde() {
        let s = serde_json::to_string(&Penalty::INFINITE).unwrap();
        assert_eq!(s, "\"inf\"");
        let p: Penalty = serde_json::from_str("0.25").unwrap();
        assert_eq!(p, Penalty::Finite(0.25));
        let p: Penalty = serde_json::from_str("\"inf\"").unwrap();
        assert!(p.is_infinite());
    }

    #[test]
    fn config_validation() {
        let bw = BandwidthSpec::uniform(2, 0.2).unwrap();
        let mut cfg = FitConfig::new(Penalty::Finite(1.0), bw);
        assert!(cfg.validate().is_ok());
        cfg.pinv_cutoff = 1.0;
        assert!(cfg.validate().is_err());
        cfg.pinv_cutoff = 1e-10;
        cfg.tolerance = 0.0;
        assert!(cfg.validate().is_err());
    }
}
