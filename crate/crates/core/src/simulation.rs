//! Data generators and the Monte Carlo driver for comparing penalized,
//! local linear and additive fits.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BoundaryPolicy, FitConfig, Penalty};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::format_float;
use crate::selection::{evaluate_lattice, CellWork, CriterionKind, SearchLattice};

/// `15 e^{-32‖x-¼‖²} + 35 e^{-128‖x-¾‖²} + 25 e^{-2‖x-½‖²}`.
pub fn truth_nonadditive(x: &[f64]) -> f64 {
    let sq = |c: f64| x.iter().map(|v| (v - c) * (v - c)).sum::<f64>();
    15.0 * (-32.0 * sq(0.25)).exp() + 35.0 * (-128.0 * sq(0.75)).exp() + 25.0 * (-2.0 * sq(0.5)).exp()
}

/// Sum over coordinates of `7.5 e^{-32(x-¼)²} + 17.5 e^{-128(x-¾)²} + 12.5 e^{-2(x-½)²}`.
pub fn truth_additive(x: &[f64]) -> f64 {
    x.iter()
        .map(|&v| {
            7.5 * (-32.0 * (v - 0.25).powi(2)).exp()
                + 17.5 * (-128.0 * (v - 0.75).powi(2)).exp()
                + 12.5 * (-2.0 * (v - 0.5).powi(2)).exp()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TruthKind {
    #[default]
    Nonadditive,
    Additive,
}

impl TruthKind {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TruthKind::Nonadditive => truth_nonadditive(x),
            TruthKind::Additive => truth_additive(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DesignDensity {
    #[default]
    Uniform,
    /// `½ + ½(x1 + x2)`.
    F1,
    /// `3/2 - ½(x1 + x2)`.
    F2,
}

impl DesignDensity {
    pub fn density(self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        match self {
            DesignDensity::Uniform => 1.0,
            DesignDensity::F1 => 0.5 + 0.5 * s,
            DesignDensity::F2 => 1.5 - 0.5 * s,
        }
    }
}

/// `n` draws from `density` on `[0,1]^d`, row-major. The linear densities
/// are drawn by rejection from the uniform with envelope 1.5.
pub fn sample_design<R: Rng>(density: DesignDensity, n: usize, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if density != DesignDensity::Uniform && d != 2 {
        return Err(Error::InvalidInput("linear design densities are defined for d = 2".into()));
    }
    let mut out = Vec::with_capacity(n * d);
    let mut point = vec![0.0; d];
    while out.len() < n * d {
        point.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        if density == DesignDensity::Uniform || rng.gen::<f64>() * 1.5 < density.density(&point) {
            out.extend_from_slice(&point);
        }
    }
    Ok(out)
}

/// Uniform-weight Riemann sum of the squared difference over the grid.
pub fn ise(estimate: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimate.len(), truth.len(), "surfaces differ in length");
    estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / estimate.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    #[serde(default = "lattice_defaults::shrink_step")]
    pub shrink_step: f64,
    #[serde(default = "lattice_defaults::log_h_step")]
    pub log_h_step: f64,
    #[serde(default = "lattice_defaults::h_min")]
    pub h_min: f64,
    #[serde(default = "lattice_defaults::h_max")]
    pub h_max: f64,
}

mod lattice_defaults {
    pub fn shrink_step() -> f64 {
        0.01
    }
    pub fn log_h_step() -> f64 {
        0.005
    }
    pub fn h_min() -> f64 {
        0.05
    }
    pub fn h_max() -> f64 {
        0.5
    }
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            shrink_step: lattice_defaults::shrink_step(),
            log_h_step: lattice_defaults::log_h_step(),
            h_min: lattice_defaults::h_min(),
            h_max: lattice_defaults::h_max(),
        }
    }
}

impl LatticeSpec {
    pub fn build(&self, d: usize) -> Result<SearchLattice> {
        SearchLattice::regular(d, self.shrink_step, self.log_h_step, self.h_min, self.h_max)
    }
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub truth: TruthKind,
    #[serde(default)]
    pub design: DesignDensity,
    #[serde(default = "scenario_defaults::n")]
    pub n: usize,
    #[serde(default = "scenario_defaults::sigma")]
    pub sigma: f64,
    #[serde(default = "scenario_defaults::grid")]
    pub grid: Vec<usize>,
    #[serde(default)]
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub criterion: CriterionKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "scenario_defaults::replications")]
    pub replications: usize,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
}

mod scenario_defaults {
    pub fn n() -> usize {
        200
    }
    pub fn sigma() -> f64 {
        5.0
    }
    pub fn grid() -> Vec<usize> {
        vec![50, 50]
    }
    pub fn replications() -> usize {
        50
    }
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            truth: TruthKind::default(),
            design: DesignDensity::default(),
            n: scenario_defaults::n(),
            sigma: scenario_defaults::sigma(),
            grid: scenario_defaults::grid(),
            lattice: LatticeSpec::default(),
            criterion: CriterionKind::default(),
            seed: 0,
            replications: scenario_defaults::replications(),
            boundary: BoundaryPolicy::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidInput("sigma must be >= 0".into()));
        }
        if self.replications == 0 || self.n == 0 {
            return Err(Error::InvalidInput("n and replications must be positive".into()));
        }
        Grid::new(&self.grid)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }
}

/// Generator for replication `rep`: the seed picks the key, the
/// replication index the stream.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Design and noisy responses for one replication.
pub fn simulate_data(spec: &ScenarioSpec, rep: usize, truth: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<Dataset> {
    let d = spec.dim();
    let mut rng = replication_rng(spec.seed, rep);
    let x = sample_design(spec.design, spec.n, d, &mut rng)?;
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let y = (0..spec.n)
        .map(|i| truth(&x[i * d..(i + 1) * d]) + noise.sample(&mut rng))
        .collect();
    Dataset::new(x, d, y)
}

/// Per-replication results. `ise_opt*` use ISE-optimal parameters, `ise_sel*`
/// the criterion-selected ones; `_rmin`/`_rmax` restrict to the smallest and
/// largest lattice penalty. Failed replications carry `NaN` and an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub ise_opt: f64,
    pub r_opt: f64,
    pub h_opt: f64,
    pub ise_opt_rmin: f64,
    pub ise_opt_rmax: f64,
    pub ise_sel: f64,
    pub r_sel: f64,
    pub h_sel: f64,
    pub ise_sel_rmin: f64,
    pub ise_sel_rmax: f64,
    /// Whether the selected penalty is the largest on the lattice.
    pub sel_at_rmax: bool,
    pub error: Option<String>,
}

impl ReplicationRecord {
    fn failed(replication: usize, error: String) -> Self {
        Self {
            replication,
            ise_opt: f64::NAN,
            r_opt: f64::NAN,
            h_opt: f64::NAN,
            ise_opt_rmin: f64::NAN,
            ise_opt_rmax: f64::NAN,
            ise_sel: f64::NAN,
            r_sel: f64::NAN,
            h_sel: f64::NAN,
            ise_sel_rmin: f64::NAN,
            ise_sel_rmax: f64::NAN,
            sel_at_rmax: false,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

fn replication(
    spec: &ScenarioSpec,
    rep: usize,
    grid: &Grid,
    lattice: &SearchLattice,
    truth: &(dyn Fn(&[f64]) -> f64 + Sync),
    truth_surface: &[f64],
) -> Result<ReplicationRecord> {
    let data = simulate_data(spec, rep, truth)?;
    let mut base = FitConfig::new(Penalty::ZERO, lattice.bandwidths[0].clone());
    base.boundary = spec.boundary;
    let surface = evaluate_lattice(
        &data,
        grid,
        lattice,
        &base,
        Some(truth_surface),
        CellWork { criteria: true, ise: true },
    )?;
    let (rmin, rmax) = (lattice.min_penalty(), lattice.max_penalty());
    let missing = || Error::SelectionFailed;
    let opt = surface.argmin_ise().ok_or_else(missing)?;
    let sel = surface.argmin(spec.criterion).ok_or_else(missing)?;
    let ise_of = |c: Option<&crate::selection::SelectionCell>| c.and_then(|c| c.ise).unwrap_or(f64::NAN);
    Ok(ReplicationRecord {
        replication: rep,
        ise_opt: opt.ise.unwrap_or(f64::NAN),
        r_opt: opt.penalty.value(),
        h_opt: opt.h,
        ise_opt_rmin: ise_of(surface.argmin_ise_at(rmin)),
        ise_opt_rmax: ise_of(surface.argmin_ise_at(rmax)),
        ise_sel: sel.ise.unwrap_or(f64::NAN),
        r_sel: sel.penalty.value(),
        h_sel: sel.h,
        ise_sel_rmin: ise_of(surface.argmin_at(spec.criterion, rmin)),
        ise_sel_rmax: ise_of(surface.argmin_at(spec.criterion, rmax)),
        sel_at_rmax: sel.penalty == rmax,
        error: None,
    })
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<Vec<ReplicationRecord>> {
    let truth = spec.truth;
    run_scenario_with_truth(spec, &move |x: &[f64]| truth.eval(x))
}

/// Like [`run_scenario`] with a user-supplied truth (the spec's `truth`
/// field is ignored).
pub fn run_scenario_with_truth(
    spec: &ScenarioSpec,
    truth: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<Vec<ReplicationRecord>> {
    spec.validate()?;
    let grid = Grid::new(&spec.grid)?;
    let lattice = spec.lattice.build(spec.dim())?;
    let truth_surface: Vec<f64> = (0..grid.len()).map(|j| truth(&grid.node(j))).collect();
    Ok((0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            replication(spec, rep, &grid, &lattice, truth, &truth_surface)
                .unwrap_or_else(|e| ReplicationRecord::failed(rep, e.to_string()))
        })
        .collect())
}

/// Lower empirical quantile: the `ceil(n p)`-th order statistic (the
/// minimum for `p = 0`).
pub fn type1_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((n as f64 * p).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRow {
    pub name: String,
    pub min: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

impl QuantileRow {
    pub fn from_values(name: &str, values: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Err(Error::EmptyData);
        }
        v.sort_by(f64::total_cmp);
        Ok(Self {
            name: name.to_string(),
            min: v[0],
            q10: type1_quantile(&v, 0.1),
            median: type1_quantile(&v, 0.5),
            q90: type1_quantile(&v, 0.9),
            max: v[v.len() - 1],
        })
    }
}

/// Per-record ratios:
/// (a) ideal gain of penalizing `(ISE(opt,Rmin) - ISE(opt)) / ISE(opt)`,
/// (b) loss due to selection `(ISE(sel) - ISE(opt)) / ISE(opt)`,
/// (c) gain for selected parameters `(ISE(sel,Rmin) - ISE(sel)) / ISE(opt)`,
/// (d) `(ISE(opt,Rmin) - ISE(sel)) / ISE(opt)`,
/// (e) `R_opt`.
pub fn ratios(r: &ReplicationRecord) -> [f64; 5] {
    [
        (r.ise_opt_rmin - r.ise_opt) / r.ise_opt,
        (r.ise_sel - r.ise_opt) / r.ise_opt,
        (r.ise_sel_rmin - r.ise_sel) / r.ise_opt,
        (r.ise_opt_rmin - r.ise_sel) / r.ise_opt,
        r.r_opt,
    ]
}

pub const RATIO_NAMES: [&str; 5] = ["a_gain_opt", "b_loss_selection", "c_gain_selected", "d_selected_vs_full_opt", "e_r_opt"];

pub fn summarize(records: &[ReplicationRecord]) -> Result<Vec<QuantileRow>> {
    let ok: Vec<[f64; 5]> = records.iter().filter(|r| r.is_ok()).map(ratios).collect();
    if ok.is_empty() {
        return Err(Error::EmptyData);
    }
    (0..5)
        .map(|k| {
            let values: Vec<f64> = ok.iter().map(|r| r[k]).collect();
            QuantileRow::from_values(RATIO_NAMES[k], &values)
        })
        .collect()
}

pub fn write_records_csv<W: Write>(records: &[ReplicationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "replication", "ise_opt", "r_opt", "h_opt", "ise_opt_rmin", "ise_opt_rmax", "ise_sel", "r_sel", "h_sel",
        "ise_sel_rmin", "ise_sel_rmax", "sel_at_rmax", "error",
    ])?;
    for r in records {
        let mut row = vec![r.replication.to_string()];
        for v in [
            r.ise_opt, r.r_opt, r.h_opt, r.ise_opt_rmin, r.ise_opt_rmax, r.ise_sel, r.r_sel, r.h_sel, r.ise_sel_rmin,
            r.ise_sel_rmax,
        ] {
            row.push(format_float(v));
        }
        row.push(r.sel_at_rmax.to_string());
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_quantiles_csv<W: Write>(rows: &[QuantileRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "min", "q10", "median", "q90", "max"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            format_float(r.min),
            format_float(r.q10),
            format_float(r.median),
            format_float(r.q90),
            format_float(r.max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anova::anova_decompose;
    use approx::assert_abs_diff_eq;

    #[test]
    fn truth_values() {
        let v = truth_nonadditive(&[0.25, 0.25]);
        assert_abs_diff_eq!(v, 15.0 + 35.0 * (-64.0f64).exp() + 25.0 * (-0.25f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 34.470, epsilon = 1e-3);
        assert_abs_diff_eq!(truth_nonadditive(&[0.75, 0.75]), 54.47, epsilon = 1e-2);
        assert_abs_diff_eq!(truth_additive(&[0.25, 0.25]), 37.07, epsilon = 1e-2);
        for (a, b) in [(0.1, 0.7), (0.33, 0.9), (0.5, 0.2)] {
            assert_eq!(truth_nonadditive(&[a, b]), truth_nonadditive(&[b, a]));
            assert_eq!(truth_additive(&[a, b]), truth_additive(&[b, a]));
        }
    }

    #[test]
    fn truth_range_and_additivity() {
        let g = Grid::uniform(2, 50).unwrap();
        let s: Vec<f64> = (0..g.len()).map(|j| truth_nonadditive(&g.node(j))).collect();
        let (lo, hi) = s.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!((lo - 9.0).abs() <= 1.0 && (hi - 54.0).abs() <= 1.0, "{lo} {hi}");
        let a: Vec<f64> = (0..g.len()).map(|j| truth_additive(&g.node(j))).collect();
        assert!(anova_decompose(&a, &g).unwrap().interaction_mean_square() < 1e-12);
    }

    #[test]
    fn ise_examples() {
        assert_eq!(ise(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_abs_diff_eq!(ise(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]), 4.0);
        assert_abs_diff_eq!(ise(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4]), 1.0);
    }

    #[test]
    fn quantile_convention() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(type1_quantile(&v, 0.1), 1.0);
        assert_eq!(type1_quantile(&v, 0.5), 5.0);
        assert_eq!(type1_quantile(&v, 0.0), 1.0);
        assert_eq!(type1_quantile(&v, 1.0), 10.0);
        let row = QuantileRow::from_values("x", &[3.0]).unwrap();
        assert_eq!((row.min, row.q10, row.median, row.q90, row.max), (3.0, 3.0, 3.0, 3.0, 3.0));
    }

    #[test]
    fn uniform_design_moments() {
        let mut rng = replication_rng(1, 0);
        let n = 20_000;
        let x = sample_design(DesignDensity::Uniform, n, 2, &mut rng).unwrap();
        for k in 0..2 {
            let mean = (0..n).map(|i| x[2 * i + k]).sum::<f64>() / n as f64;
            assert!((mean - 0.5).abs() < 3.0 / (12.0 * n as f64).sqrt());
        }
    }

    /// Mean of `x1 + x2` under a density by midpoint quadrature.
    fn quadrature_mean(d: DesignDensity) -> f64 {
        let k = 400;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..k {
            for j in 0..k {
                let x = [(i as f64 + 0.5) / k as f64, (j as f64 + 0.5) / k as f64];
                let f = d.density(&x);
                num += (x[0] + x[1]) * f;
                den += f;
            }
        }
        num / den
    }

    #[test]
    fn linear_design_means() {
        let n = 100_000;
        let mut means = Vec::new();
        for (dens, seed) in [(DesignDensity::F1, 2), (DesignDensity::F2, 3)] {
            let mut rng = replication_rng(seed, 0);
            let x = sample_design(dens, n, 2, &mut rng).unwrap();
            let s: Vec<f64> = (0..n).map(|i| x[2 * i] + x[2 * i + 1]).collect();
            let mean = s.iter().sum::<f64>() / n as f64;
            let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let oracle = quadrature_mean(dens);
            assert!((mean - oracle).abs() < 4.0 * sd / (n as f64).sqrt(), "{dens:?}: {mean} vs {oracle}");
            means.push(oracle);
        }
        assert_abs_diff_eq!(means[0], 13.0 / 12.0, epsilon = 1e-4);
        assert_abs_diff_eq!(means[0] + means[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn noise_level() {
        let spec = ScenarioSpec {
            n: 10_000,
            ..ScenarioSpec::default()
        };
        let data = simulate_data(&spec, 0, &|_x: &[f64]| 0.0).unwrap();
        let y = data.y();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!((sd - 5.0).abs() < 0.15, "{sd}");
    }

    fn tiny_spec() -> ScenarioSpec {
        ScenarioSpec {
            n: 60,
            grid: vec![8, 8],
            lattice: LatticeSpec {
                shrink_step: 0.25,
                log_h_step: 0.25,
                h_min: 0.15,
                h_max: 0.5,
            },
            replications: 2,
            seed: 42,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let spec = tiny_spec();
        let a = run_scenario(&spec).unwrap();
        let b = run_scenario(&spec).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_records_csv(&a, &mut ca).unwrap();
        write_records_csv(&b, &mut cb).unwrap();
        assert_eq!(ca, cb);
        for r in &a {
            assert!(r.is_ok());
            let [ra, rb, ..] = ratios(r);
            assert!(ra >= 0.0 && rb >= 0.0);
        }
        let rows = summarize(&a).unwrap();
        assert_eq!(rows.len(), 5);
    }

    #[test]
    fn noiseless_additive_truth() {
        let spec = ScenarioSpec {
            sigma: 0.0,
            n: 400,
            replications: 1,
            ..tiny_spec()
        };
        let truth = |x: &[f64]| (2.0 * x[0]).sin() + x[1] * x[1];
        let rec = &run_scenario_with_truth(&spec, &truth).unwrap()[0];
        assert!(rec.ise_opt < 1e-3, "{rec:?}");
        assert!(rec.ise_opt_rmax <= rec.ise_opt_rmin);
    }

    #[test]
    fn spec_from_toml() {
        let spec = ScenarioSpec::from_toml(
            "truth = \"additive\"\ndesign = \"f1\"\nn = 100\nseed = 7\nreplications = 3\ngrid = [20, 20]\n[lattice]\nshrink_step = 0.1\n",
        )
        .unwrap();
        assert_eq!(spec.truth, TruthKind::Additive);
        assert_eq!(spec.design, DesignDensity::F1);
        assert_eq!(spec.lattice.shrink_step, 0.1);
        assert_eq!(spec.lattice.log_h_step, 0.005);
        assert_eq!(spec.sigma, 5.0);
        assert!(ScenarioSpec::from_toml("sigma = -1.0").is_err());
        assert!(ScenarioSpec::from_toml("bogus = 1").is_err());
    }
}
