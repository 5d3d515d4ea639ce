//! Simultaneous choice of the penalty `R` and bandwidth `h` by AIC, GCV or
//! AIC_C over a lattice, and ISE-oracle selection when the truth is known.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BandwidthSpec, FitConfig, Penalty};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::Smoother;
use crate::grid::Grid;
use crate::simulation::ise;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Aic,
    Gcv,
    #[default]
    Aicc,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 3] = [CriterionKind::Aic, CriterionKind::Gcv, CriterionKind::Aicc];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::Aic => "aic",
            CriterionKind::Gcv => "gcv",
            CriterionKind::Aicc => "aicc",
        }
    }
}

impl std::str::FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(CriterionKind::Aic),
            "gcv" => Ok(CriterionKind::Gcv),
            "aicc" => Ok(CriterionKind::Aicc),
            other => Err(Error::Parse(format!("unknown criterion {other:?}"))),
        }
    }
}

/// AIC = `log σ̂² + 2 tr/n`, GCV = `σ̂² / (1 - tr/n)²`,
/// AIC_C = `log σ̂² + (1 + tr/n) / (1 - (tr + 2)/n)`.
pub fn criterion(sigma2: f64, trace: f64, n: usize, kind: CriterionKind) -> Result<f64> {
    let nf = n as f64;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::UndefinedCriterion(format!("sigma2 = {sigma2}")));
    }
    if !(trace >= 0.0) || trace >= nf {
        return Err(Error::UndefinedCriterion(format!("trace {trace} outside [0, {n})")));
    }
    let ratio = trace / nf;
    match kind {
        CriterionKind::Aic => Ok(sigma2.ln() + 2.0 * ratio),
        CriterionKind::Gcv => Ok(sigma2 / ((1.0 - ratio) * (1.0 - ratio))),
        CriterionKind::Aicc => {
            let denom = 1.0 - (trace + 2.0) / nf;
            if denom <= 0.0 {
                return Err(Error::UndefinedCriterion(format!(
                    "trace + 2 = {} >= n = {n}",
                    trace + 2.0
                )));
            }
            Ok(sigma2.ln() + (1.0 + ratio) / denom)
        }
    }
}

/// The evaluated `(R, h)` pairs: every penalty is combined with every
/// bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchLattice {
    pub penalties: Vec<Penalty>,
    pub bandwidths: Vec<BandwidthSpec>,
}

/// `lo, lo + step, ...` up to `hi` (inclusive within half a step), built
/// from integer multiples to avoid drift.
pub fn equidistant(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 0.5).floor() as usize;
    (0..=count).map(|i| lo + i as f64 * step).collect()
}

impl SearchLattice {
    pub fn new(penalties: Vec<Penalty>, bandwidths: Vec<BandwidthSpec>) -> Result<Self> {
        if penalties.is_empty() || bandwidths.is_empty() {
            return Err(Error::InvalidInput("search lattice is empty".into()));
        }
        Ok(Self { penalties, bandwidths })
    }

    /// `R/(1+R)` equidistant in `[0, 1]` with step `shrink_step`, the ends
    /// replaced by `1e-4` and `0.9999` (so `R` runs from `1/9999` to
    /// `9999`).
    pub fn shrink_penalties(shrink_step: f64) -> Result<Vec<Penalty>> {
        if !(shrink_step > 0.0 && shrink_step <= 1.0) {
            return Err(Error::InvalidInput("shrink step must lie in (0, 1]".into()));
        }
        let mut q = equidistant(0.0, 1.0, shrink_step);
        let last = q.len() - 1;
        q[0] = 1e-4;
        q[last] = 0.9999;
        q.into_iter().map(Penalty::from_shrink_fraction).collect()
    }

    /// Uniform bandwidths with `log10 h` equidistant on `[log10 h_min, log10 h_max]`.
    pub fn log_bandwidths(d: usize, h_min: f64, h_max: f64, log_step: f64) -> Result<Vec<BandwidthSpec>> {
        if !(h_min > 0.0 && h_max >= h_min && log_step > 0.0) {
            return Err(Error::InvalidInput("invalid bandwidth range".into()));
        }
        equidistant(h_min.log10(), h_max.log10(), log_step)
            .into_iter()
            .map(|lh| BandwidthSpec::uniform(d, 10f64.powf(lh)))
            .collect()
    }

    /// Lattice with step `(shrink_step, log_step)` on `h ∈ [h_min, h_max]`.
    pub fn regular(d: usize, shrink_step: f64, log_step: f64, h_min: f64, h_max: f64) -> Result<Self> {
        Self::new(
            Self::shrink_penalties(shrink_step)?,
            Self::log_bandwidths(d, h_min, h_max, log_step)?,
        )
    }

    /// Steps 0.01 in `R/(1+R)` and 0.005 in `log10 h` over `[0.05, 0.5]`.
    pub fn default_for(d: usize) -> Result<Self> {
        Self::regular(d, 0.01, 0.005, 0.05, 0.5)
    }

    /// Bandwidths `c · base` with `log10 c` equidistant.
    pub fn scaled(penalties: Vec<Penalty>, base: &BandwidthSpec, c_min: f64, c_max: f64, log_step: f64) -> Result<Self> {
        let bws = equidistant(c_min.log10(), c_max.log10(), log_step)
            .into_iter()
            .map(|lc| base.scaled(10f64.powf(lc)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(penalties, bws)
    }

    /// Drop penalties below `floor`.
    pub fn with_r_floor(mut self, floor: f64) -> Result<Self> {
        self.penalties.retain(|p| p.value() >= floor);
        if self.penalties.is_empty() {
            return Err(Error::InvalidInput("R floor removes every penalty".into()));
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.penalties.len() * self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_penalty(&self) -> Penalty {
        *self
            .penalties
            .iter()
            .min_by(|a, b| a.value().total_cmp(&b.value()))
            .expect("nonempty lattice")
    }

    pub fn max_penalty(&self) -> Penalty {
        *self
            .penalties
            .iter()
            .max_by(|a, b| a.value().total_cmp(&b.value()))
            .expect("nonempty lattice")
    }
}

/// One evaluated lattice cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionCell {
    pub penalty: Penalty,
    /// Geometric-mean bandwidth.
    pub h: f64,
    #[serde(skip)]
    pub bandwidth: BandwidthSpec,
    pub sigma2: Option<f64>,
    pub trace: Option<f64>,
    pub aic: Option<f64>,
    pub gcv: Option<f64>,
    pub aicc: Option<f64>,
    pub ise: Option<f64>,
    /// Why the cell could not be evaluated.
    pub error: Option<String>,
}

impl SelectionCell {
    pub fn criterion(&self, kind: CriterionKind) -> Option<f64> {
        match kind {
            CriterionKind::Aic => self.aic,
            CriterionKind::Gcv => self.gcv,
            CriterionKind::Aicc => self.aicc,
        }
    }

    pub fn shrink_fraction(&self) -> f64 {
        self.penalty.shrink_fraction()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSurface {
    pub n: usize,
    pub cells: Vec<SelectionCell>,
}

/// Minimum with ties broken toward larger `R`, then larger `h`.
fn argmin_by<'a>(cells: impl Iterator<Item = (&'a SelectionCell, f64)>) -> Option<&'a SelectionCell> {
    let mut best: Option<(&SelectionCell, f64)> = None;
    for (cell, v) in cells {
        if !v.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, bv)) => {
                v < bv
                    || (v == bv
                        && (cell.penalty.value(), cell.h) > (b.penalty.value(), b.h))
            }
        };
        if better {
            best = Some((cell, v));
        }
    }
    best.map(|(c, _)| c)
}

impl SelectionSurface {
    pub fn argmin(&self, kind: CriterionKind) -> Option<&SelectionCell> {
        argmin_by(self.cells.iter().filter_map(|c| c.criterion(kind).map(|v| (c, v))))
    }

    /// Argmin restricted to cells with the given penalty.
    pub fn argmin_at(&self, kind: CriterionKind, penalty: Penalty) -> Option<&SelectionCell> {
        argmin_by(
            self.cells
                .iter()
                .filter(|c| c.penalty == penalty)
                .filter_map(|c| c.criterion(kind).map(|v| (c, v))),
        )
    }

    pub fn argmin_ise(&self) -> Option<&SelectionCell> {
        argmin_by(self.cells.iter().filter_map(|c| c.ise.map(|v| (c, v))))
    }

    pub fn argmin_ise_at(&self, penalty: Penalty) -> Option<&SelectionCell> {
        argmin_by(
            self.cells
                .iter()
                .filter(|c| c.penalty == penalty)
                .filter_map(|c| c.ise.map(|v| (c, v))),
        )
    }

    /// CSV with header `R,shrink,h,criterion,sigma2,trace,ise`; empty
    /// fields for undefined values.
    pub fn write_csv<W: Write>(&self, out: W, kind: CriterionKind) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["R", "shrink", "h", "criterion", "sigma2", "trace", "ise"])?;
        let fmt = |v: Option<f64>| v.map(crate::io::format_float).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.penalty.to_string(),
                crate::io::format_float(c.shrink_fraction()),
                crate::io::format_float(c.h),
                fmt(c.criterion(kind)),
                fmt(c.sigma2),
                fmt(c.trace),
                fmt(c.ise),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What to compute per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellWork {
    /// Fitted values, `σ̂²`, `tr(M_R)` and the three criteria.
    pub criteria: bool,
    /// ISE against a known truth surface.
    pub ise: bool,
}

/// Evaluate every lattice cell. Moment tables are built once per bandwidth
/// and reused across penalties.
pub fn evaluate_lattice(
    data: &Dataset,
    grid: &Grid,
    lattice: &SearchLattice,
    base: &FitConfig,
    truth: Option<&[f64]>,
    work: CellWork,
) -> Result<SelectionSurface> {
    if let Some(t) = truth {
        if t.len() != grid.len() {
            return Err(Error::Dimension("truth surface does not match grid".into()));
        }
    }
    let n = data.n();
    let columns: Vec<Vec<SelectionCell>> = lattice
        .bandwidths
        .par_iter()
        .map(|bw| {
            let smoother = Smoother::new(data, grid, bw, base.boundary)?;
            Ok(lattice
                .penalties
                .iter()
                .map(|&penalty| evaluate_cell(&smoother, penalty, base, truth, work, n))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(SelectionSurface {
        n,
        cells: columns.into_iter().flatten().collect(),
    })
}

fn evaluate_cell(
    smoother: &Smoother,
    penalty: Penalty,
    base: &FitConfig,
    truth: Option<&[f64]>,
    work: CellWork,
    n: usize,
) -> SelectionCell {
    let bw = smoother.bandwidth().clone();
    let mut cell = SelectionCell {
        penalty,
        h: bw.geometric_mean(),
        bandwidth: bw,
        sigma2: None,
        trace: None,
        aic: None,
        gcv: None,
        aicc: None,
        ise: None,
        error: None,
    };
    let surface = if work.criteria {
        match smoother.evaluate(penalty, base) {
            Ok(ev) => {
                cell.sigma2 = Some(ev.sigma2);
                cell.trace = Some(ev.trace);
                cell.aic = criterion(ev.sigma2, ev.trace, n, CriterionKind::Aic).ok();
                cell.gcv = criterion(ev.sigma2, ev.trace, n, CriterionKind::Gcv).ok();
                cell.aicc = criterion(ev.sigma2, ev.trace, n, CriterionKind::Aicc).ok();
                Some(ev.surface)
            }
            Err(e) => {
                cell.error = Some(e.to_string());
                None
            }
        }
    } else if truth.is_some() {
        match smoother.surface(penalty, base) {
            Ok(s) => Some(s),
            Err(e) => {
                cell.error = Some(e.to_string());
                None
            }
        }
    } else {
        None
    };
    if let (Some(t), Some(s), true) = (truth, surface, work.ise) {
        cell.ise = Some(ise(&s, t));
    }
    cell
}

/// Chosen `(R, h)` together with the evaluated surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub surface: SelectionSurface,
    pub best: SelectionCell,
}

pub fn select(
    data: &Dataset,
    grid: &Grid,
    lattice: &SearchLattice,
    kind: CriterionKind,
    base: &FitConfig,
) -> Result<Selection> {
    let surface = evaluate_lattice(data, grid, lattice, base, None, CellWork { criteria: true, ise: false })?;
    let best = surface.argmin(kind).cloned().ok_or(Error::SelectionFailed)?;
    Ok(Selection { surface, best })
}

/// ISE-minimizing `(R, h)` for a truth surface sampled at the grid nodes.
pub fn oracle_select(
    data: &Dataset,
    truth: &[f64],
    grid: &Grid,
    lattice: &SearchLattice,
    base: &FitConfig,
) -> Result<Selection> {
    let surface = evaluate_lattice(data, grid, lattice, base, Some(truth), CellWork { criteria: false, ise: true })?;
    let best = surface.argmin_ise().cloned().ok_or(Error::SelectionFailed)?;
    Ok(Selection { surface, best })
}
