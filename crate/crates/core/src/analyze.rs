//! Real-data workflow: df-calibrated base bandwidths, `(R, c)` search,
//! adjusted R² of the reference fits and ANOVA of the grid surfaces.

use serde::{Deserialize, Serialize};

use crate::anova::{anova_decompose, AnovaTable};
use crate::calibrate::{calibrate_bandwidth_by_df, Calibration};
use crate::config::{BandwidthSpec, BoundaryPolicy, FitConfig, Penalty};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::Smoother;
use crate::grid::Grid;
use crate::selection::{evaluate_lattice, CellWork, CriterionKind, SearchLattice, SelectionCell, SelectionSurface};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// Degrees of freedom of each univariate base bandwidth.
    pub df: f64,
    /// Output grid nodes per axis.
    pub grid_size: usize,
    /// Step of the penalty lattice in `R/(1+R)`.
    pub shrink_step: f64,
    /// Range and `log10` step of the common scale factor `c`.
    pub c_min: f64,
    pub c_max: f64,
    pub log_c_step: f64,
    pub criterion: CriterionKind,
    pub boundary: BoundaryPolicy,
    /// Penalty standing in for the local linear fit.
    pub local_penalty: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            df: 4.0,
            grid_size: 20,
            shrink_step: 0.01,
            c_min: 0.5,
            c_max: 2.0,
            log_c_step: 0.005,
            criterion: CriterionKind::Aicc,
            boundary: BoundaryPolicy::Renorm,
            local_penalty: 1e-4,
        }
    }
}

/// One reference fit with its own criterion-selected scale factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub label: String,
    pub penalty: Penalty,
    pub c: f64,
    /// Geometric-mean bandwidth `c h`.
    pub h: f64,
    pub criterion: f64,
    pub rss: f64,
    pub trace: f64,
    pub adjusted_r2: f64,
    #[serde(skip)]
    pub surface: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub calibrations: Vec<Calibration>,
    pub base_bandwidth: Vec<f64>,
    pub models: Vec<ModelSummary>,
    /// ANOVA of the penalized and the local linear surface.
    pub anova: Vec<(String, AnovaTable)>,
    #[serde(skip)]
    pub surface: SelectionSurface,
}

impl AnalysisReport {
    pub fn model(&self, label: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.label == label)
    }
}

/// `1 - (RSS / (n - tr)) / (TSS / (n - 1))`.
pub fn adjusted_r2(y: &[f64], fitted: &[f64], trace: f64) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let rss: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - (rss / (n - trace)) / (tss / (n - 1.0))
}

/// Penalties of the analysis lattice: the regular `R/(1+R)` lattice with the
/// ends replaced by the local-linear stand-in and `R = ∞`.
pub fn analysis_penalties(opts: &AnalyzeOptions) -> Result<Vec<Penalty>> {
    let mut p = SearchLattice::shrink_penalties(opts.shrink_step)?;
    let last = p.len() - 1;
    p[0] = Penalty::finite(opts.local_penalty)?;
    p[last] = Penalty::INFINITE;
    Ok(p)
}

pub fn analyze(data: &Dataset, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let d = data.dim();
    let calibrations = (0..d)
        .map(|k| calibrate_bandwidth_by_df(&data.column(k), opts.df, opts.boundary))
        .collect::<Result<Vec<_>>>()?;
    let base = BandwidthSpec::new(calibrations.iter().map(|c| c.h).collect())?;
    let grid = Grid::uniform(d, opts.grid_size)?;
    let lattice = SearchLattice::scaled(analysis_penalties(opts)?, &base, opts.c_min, opts.c_max, opts.log_c_step)?;
    let mut cfg = FitConfig::new(Penalty::ZERO, base.clone());
    cfg.boundary = opts.boundary;
    let surface = evaluate_lattice(data, &grid, &lattice, &cfg, None, CellWork { criteria: true, ise: false })?;
    let h_base = base.geometric_mean();
    let kind = opts.criterion;
    let picks: [(&str, Option<&SelectionCell>); 3] = [
        ("penalized", surface.argmin(kind)),
        ("local_linear", surface.argmin_at(kind, lattice.min_penalty())),
        ("additive", surface.argmin_at(kind, Penalty::INFINITE)),
    ];
    let mut models = Vec::new();
    for (label, cell) in picks {
        let cell = cell.ok_or(Error::SelectionFailed)?;
        let smoother = Smoother::new(data, &grid, &cell.bandwidth, opts.boundary)?;
        let ev = smoother.evaluate(cell.penalty, &cfg)?;
        let rss: f64 = data.y().iter().zip(&ev.fitted).map(|(a, b)| (a - b) * (a - b)).sum();
        models.push(ModelSummary {
            label: label.to_string(),
            penalty: cell.penalty,
            c: cell.h / h_base,
            h: cell.h,
            criterion: cell.criterion(kind).unwrap_or(f64::NAN),
            rss,
            trace: ev.trace,
            adjusted_r2: adjusted_r2(data.y(), &ev.fitted, ev.trace),
            surface: ev.surface,
        });
    }
    let anova = ["penalized", "local_linear"]
        .iter()
        .map(|label| {
            let m = models.iter().find(|m| m.label == *label).expect("model present");
            Ok((label.to_string(), anova_decompose(&m.surface, &grid)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisReport {
        n: data.n(),
        calibrations,
        base_bandwidth: base.per_axis().to_vec(),
        models,
        anova,
        surface,
    })
}

/// Mean-square table: one row per surface, columns `r0` (squared constant)
/// then every effect.
pub fn write_anova_csv<W: std::io::Write>(rows: &[(String, AnovaTable)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some((_, first)) = rows.first() {
        let mut header = vec!["surface".to_string(), "r0".to_string()];
        header.extend(first.components.iter().map(|c| c.label()));
        w.write_record(&header)?;
    }
    for (label, t) in rows {
        let mut rec = vec![label.clone(), crate::io::format_float(t.constant)];
        rec.extend(t.components.iter().map(|c| crate::io::format_float(c.mean_square)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quick() -> AnalyzeOptions {
        AnalyzeOptions {
            grid_size: 8,
            shrink_step: 0.25,
            c_min: 0.6,
            c_max: 1.2,
            log_c_step: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn adjusted_r2_definition() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!((adjusted_r2(&y, &y, 2.0) - 1.0).abs() < 1e-15);
        let mean = [2.5; 4];
        // RSS = TSS, trace 1: (TSS/3)/(TSS/3) -> 0
        assert!(adjusted_r2(&y, &mean, 1.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_additive_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 150;
        let x: Vec<f64> = (0..2 * n).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..n).map(|i| (3.0 * x[2 * i]).sin() + 2.0 * x[2 * i + 1].powi(2)).collect();
        let data = Dataset::new(x, 2, y).unwrap();
        let rep = analyze(&data, &quick()).unwrap();
        let pen = rep.model("penalized").unwrap().adjusted_r2;
        let add = rep.model("additive").unwrap().adjusted_r2;
        assert!(add > 0.99 && pen > 0.99, "{pen} {add}");
        assert!(pen >= add - 0.01);
        assert_eq!(rep.anova.len(), 2);
    }

    #[test]
    fn pure_noise_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 150;
        let x: Vec<f64> = (0..2 * n).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let data = Dataset::new(x, 2, y).unwrap();
        let rep = analyze(&data, &quick()).unwrap();
        for m in &rep.models {
            assert!(m.adjusted_r2.abs() < 0.15, "{}: {}", m.label, m.adjusted_r2);
        }
    }
}
