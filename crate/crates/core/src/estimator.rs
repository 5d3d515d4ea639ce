//! Fit pipeline: grid fit, prediction at arbitrary points, hat matrix.

use rayon::prelude::*;

use crate::additive::{
    apply_zt, axis_weights, center, interpolation_entries, node_positions,
};
use crate::field::block_offsets;
use crate::config::{BandwidthSpec, BoundaryPolicy, FitConfig, Penalty, SolverKind};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::field::{AdditiveCoords, ParamField};
use crate::grid::Grid;
use crate::kernel::axis_factor;
use crate::linalg::{local_pinv, mat_vec, spd_inverse, sym_pinv};
use crate::moments::{moments_at_point, DesignTable, KernelTable, MomentField, PointMoments};
use crate::solver::{residual_norm, IterationTrace, PenalizedSystem, Regime, Solution};

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub regime: Regime,
    pub iterations: usize,
    pub residual: f64,
    pub cholesky: Option<bool>,
    pub trace: Option<IterationTrace>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: ParamField,
    /// `Z^T γ`, the additive part of `β`.
    pub additive_part: ParamField,
    pub nonadditive_part: ParamField,
    pub gamma: AdditiveCoords,
    pub config: FitConfig,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn grid(&self) -> &Grid {
        self.beta.grid()
    }

    /// Intercept surface `r̂(t_j)` at the grid nodes.
    pub fn surface(&self) -> Vec<f64> {
        self.beta.intercept()
    }

    fn from_solution(sol: Solution, moments: &MomentField, cfg: &FitConfig) -> Self {
        let grid = sol.beta.grid().clone();
        let additive_part = apply_zt(&grid, &sol.gamma);
        let nonadditive_part = sol.beta.sub(&additive_part);
        let residual = residual_norm(moments, cfg.penalty, &sol.beta);
        FitResult {
            diagnostics: FitDiagnostics {
                regime: Regime::of(cfg.penalty, cfg.large_r_threshold),
                iterations: sol.iterations,
                residual,
                cholesky: sol.cholesky,
                trace: sol.trace,
            },
            beta: sol.beta,
            additive_part,
            nonadditive_part,
            gamma: sol.gamma,
            config: cfg.clone(),
        }
    }
}

fn check_shapes(data: &Dataset, grid: &Grid, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::EmptyData);
    }
    if grid.dim() != data.dim() || cfg.bandwidth.dim() != data.dim() {
        return Err(Error::Dimension(format!(
            "data dimension {}, grid {}, bandwidth {}",
            data.dim(),
            grid.dim(),
            cfg.bandwidth.dim()
        )));
    }
    Ok(())
}

/// Fit on precomputed moments.
pub fn fit_moments(moments: &MomentField, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let system = PenalizedSystem::new(moments, cfg.penalty, cfg)?;
    let sol = match cfg.solver {
        SolverKind::Direct => system.solve_direct(moments.l_all())?,
        SolverKind::Iterative => {
            system.solve_iterative(moments.l_all(), cfg.tolerance, cfg.max_iterations)?
        }
    };
    Ok(FitResult::from_solution(sol, moments, cfg))
}

pub fn fit(data: &Dataset, grid: &Grid, cfg: &FitConfig) -> Result<FitResult> {
    check_shapes(data, grid, cfg)?;
    let table = KernelTable::new(data, grid, &cfg.bandwidth, cfg.boundary)?;
    fit_moments(&table.moments(data.y()), cfg)
}

/// Largest node-wise deviation from
/// `β^(j) = (S^(j) + RI)^{-1} {R (P_add β)^(j) + L^(j)}`.
pub fn pointwise_compromise_check(result: &FitResult, moments: &MomentField) -> Result<f64> {
    let r = match result.config.penalty {
        Penalty::Finite(r) if r > 0.0 => r,
        other => {
            return Err(Error::PenaltyDomain(format!(
                "compromise check needs finite R > 0, got {other}"
            )))
        }
    };
    let p = moments.width();
    let large = r >= result.config.large_r_threshold;
    let mut worst: f64 = 0.0;
    for j in 0..moments.grid().len() {
        let s = moments.s_node(j);
        let mut shifted: Vec<f64> = s.iter().map(|v| if large { v / r } else { *v }).collect();
        for a in 0..p {
            shifted[a * p + a] += if large { 1.0 } else { r };
        }
        let inv = spd_inverse(&shifted, p).ok_or_else(|| {
            Error::DegenerateFit {
                eigenvalue: 0.0,
                largest: 0.0,
            }
        })?;
        let add = result.additive_part.node(j);
        let l = moments.l_node(j);
        let rhs: Vec<f64> = (0..p)
            .map(|a| if large { add[a] + l[a] / r } else { r * add[a] + l[a] })
            .collect();
        let mut expect = vec![0.0; p];
        mat_vec(&inv, &rhs, &mut expect);
        for (e, b) in expect.iter().zip(result.beta.node(j)) {
            worst = worst.max((e - b).abs());
        }
    }
    Ok(worst)
}

/// Map from point moments and the interpolated additive part to the local
/// coefficients `β(x)`.
#[derive(Debug, Clone, Copy)]
struct PointRule {
    regime: Regime,
    r: f64,
    cutoff: f64,
}

impl PointRule {
    fn new(penalty: Penalty, cfg: &FitConfig) -> Self {
        Self {
            regime: Regime::of(penalty, cfg.large_r_threshold),
            r: penalty.value(),
            cutoff: cfg.pinv_cutoff,
        }
    }

    /// The local operator `O(x)` with `β(x) = O(x) {α_L L(x) + α_a a(x)}`,
    /// and the factors `(α_L, α_a)`.
    fn operator(&self, s: &[f64], p: usize) -> (Vec<f64>, f64, f64) {
        match self.regime {
            Regime::Local => (local_pinv(s, p, self.cutoff), 1.0, 0.0),
            Regime::Small => {
                let mut m = s.to_vec();
                for a in 0..p {
                    m[a * p + a] += self.r;
                }
                let inv = spd_inverse(&m, p).unwrap_or_else(|| sym_pinv(&m, p, 1e-14));
                (inv, 1.0, self.r)
            }
            Regime::Large => {
                let mut m: Vec<f64> = s.iter().map(|v| v / self.r).collect();
                for a in 0..p {
                    m[a * p + a] += 1.0;
                }
                let inv = spd_inverse(&m, p).unwrap_or_else(|| sym_pinv(&m, p, 1e-14));
                (inv, 1.0 / self.r, 1.0)
            }
            Regime::Infinite => {
                let eye = (0..p * p).map(|e| if e % (p + 1) == 0 { 1.0 } else { 0.0 }).collect();
                (eye, 0.0, 1.0)
            }
        }
    }

    fn coefficients(&self, pm: &PointMoments, additive: &[f64]) -> Vec<f64> {
        let p = pm.l.len();
        let (op, al, aa) = self.operator(&pm.s, p);
        let rhs: Vec<f64> = (0..p).map(|a| al * pm.l[a] + aa * additive[a]).collect();
        let mut out = vec![0.0; p];
        mat_vec(&op, &rhs, &mut out);
        out
    }
}

fn interpolate(grid: &Grid, gamma: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.dim() + 1];
    for (pos, c, w) in interpolation_entries(grid, x) {
        out[c] += w * gamma[pos];
    }
    out
}

/// Local coefficients `β̂_R(x)` at an arbitrary point.
pub fn predict_coefficients_at(result: &FitResult, data: &Dataset, x: &[f64]) -> Result<Vec<f64>> {
    let cfg = &result.config;
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("prediction point outside [0,1]^d".into()));
    }
    let pm = moments_at_point(data, x, &cfg.bandwidth, cfg.boundary)?;
    let add = interpolate(result.grid(), result.gamma.as_slice(), x);
    Ok(PointRule::new(cfg.penalty, cfg).coefficients(&pm, &add))
}

/// Fitted value `r̂_R(x)`.
pub fn predict_at(result: &FitResult, data: &Dataset, x: &[f64]) -> Result<f64> {
    Ok(predict_coefficients_at(result, data, x)?[0])
}

/// Exact `n x n` hat matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HatMatrix {
    pub n: usize,
    pub values: Vec<f64>,
    pub trace: f64,
}

impl HatMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|k| self.get(i, k) * y[k]).sum())
            .collect()
    }
}

/// Fitted values and degrees of freedom for one `(R, h)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEvaluation {
    pub penalty: Penalty,
    pub fitted: Vec<f64>,
    pub sigma2: f64,
    pub trace: f64,
    pub surface: Vec<f64>,
}

/// Everything that depends on the data and bandwidth but not on `R`.
///
/// Used to evaluate many penalties on one design, and to build hat
/// matrices.
#[derive(Debug, Clone)]
pub struct Smoother {
    data: Dataset,
    grid: Grid,
    bandwidth: BandwidthSpec,
    boundary: BoundaryPolicy,
    table: KernelTable,
    design: DesignTable,
    moments: MomentField,
    /// Design-point moments for the observed responses.
    point_moments: Vec<PointMoments>,
    /// Kernel weight of each observation at its own location.
    self_weight: Vec<f64>,
    support: Support,
}

/// Per observation, the grid nodes in its kernel support with the local
/// linear design vector `K (1, z_1, ..., z_d)` there, and per node the
/// positions it touches in the additive coordinates.
#[derive(Debug, Clone)]
struct Support {
    start: Vec<usize>,
    node: Vec<u32>,
    design: Vec<f64>,
    positions: Vec<u32>,
}

impl Support {
    fn new(table: &KernelTable, grid: &Grid, n: usize) -> Self {
        let d = grid.dim();
        let p = d + 1;
        let mut start = Vec::with_capacity(n + 1);
        let mut node = Vec::new();
        let mut design = Vec::new();
        start.push(0);
        for a in 0..n {
            table.for_each_node(a, |j, _, w, z| {
                node.push(j as u32);
                design.push(w);
                design.extend(z.iter().map(|v| w * v));
            });
            start.push(node.len());
        }
        debug_assert_eq!(design.len(), node.len() * p);
        let offsets = block_offsets(grid.sizes());
        let mut positions = Vec::with_capacity(grid.len() * 2 * d);
        let mut pos = vec![0; 2 * d];
        for j in 0..grid.len() {
            node_positions(grid, &offsets, j, &mut pos);
            positions.extend(pos.iter().map(|&v| v as u32));
        }
        Self {
            start,
            node,
            design,
            positions,
        }
    }
}

impl Smoother {
    pub fn new(data: &Dataset, grid: &Grid, bandwidth: &BandwidthSpec, boundary: BoundaryPolicy) -> Result<Self> {
        if data.n() == 0 {
            return Err(Error::EmptyData);
        }
        let table = KernelTable::new(data, grid, bandwidth, boundary)?;
        let design = DesignTable::new(data, bandwidth, boundary);
        let moments = table.moments(data.y());
        let point_moments = (0..data.n()).map(|a| design.moments(a, data.y())).collect();
        let self_weight = (0..data.n())
            .map(|a| {
                let x = data.point(a);
                x.iter()
                    .zip(bandwidth.per_axis())
                    .map(|(&v, &h)| axis_factor(boundary, v, v, h).map_or(0.0, |f| f.0))
                    .product()
            })
            .collect();
        let support = Support::new(&table, grid, data.n());
        Ok(Self {
            data: data.clone(),
            grid: grid.clone(),
            bandwidth: bandwidth.clone(),
            boundary,
            table,
            design,
            moments,
            point_moments,
            self_weight,
            support,
        })
    }

    pub fn moments(&self) -> &MomentField {
        &self.moments
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bandwidth(&self) -> &BandwidthSpec {
        &self.bandwidth
    }

    fn config(&self, penalty: Penalty, base: &FitConfig) -> FitConfig {
        FitConfig {
            penalty,
            bandwidth: self.bandwidth.clone(),
            boundary: self.boundary,
            ..base.clone()
        }
    }

    /// Full fit for the observed responses.
    pub fn fit(&self, penalty: Penalty, base: &FitConfig) -> Result<FitResult> {
        fit_moments(&self.moments, &self.config(penalty, base))
    }

    /// Fit for another response vector on the same design.
    pub fn fit_response(&self, y: &[f64], penalty: Penalty, base: &FitConfig) -> Result<FitResult> {
        if y.len() != self.data.n() {
            return Err(Error::Dimension("response length differs from design".into()));
        }
        let moments = self.moments.with_l(self.table.response_moments(y))?;
        fit_moments(&moments, &self.config(penalty, base))
    }

    /// Fitted values at the design points for a fit of `y`.
    fn fitted_for(&self, rule: &PointRule, gamma: &[f64], moments: &[PointMoments]) -> Vec<f64> {
        (0..self.data.n())
            .into_par_iter()
            .map(|a| {
                let add = interpolate(&self.grid, gamma, self.data.point(a));
                rule.coefficients(&moments[a], &add)[0]
            })
            .collect()
    }

    /// Fitted values at the design points for the fit `result` of the
    /// observed responses.
    pub fn fitted_values(&self, result: &FitResult) -> Vec<f64> {
        let rule = PointRule::new(result.config.penalty, &result.config);
        self.fitted_for(&rule, result.gamma.as_slice(), &self.point_moments)
    }

    /// Intercept surface only (no hat-matrix work).
    pub fn surface(&self, penalty: Penalty, base: &FitConfig) -> Result<Vec<f64>> {
        Ok(self.fit(penalty, base)?.surface())
    }

    /// Fitted values, `σ̂²` and `tr(M_R)` for one penalty, using the
    /// diagonal of the hat matrix without forming it.
    pub fn evaluate(&self, penalty: Penalty, base: &FitConfig) -> Result<CellEvaluation> {
        let cfg = self.config(penalty, base).with_solver(SolverKind::Direct);
        cfg.validate()?;
        let system = PenalizedSystem::with_factorization(&self.moments, penalty, &cfg)?;
        let sol = system.solve_direct(self.moments.l_all())?;
        let rule = PointRule::new(penalty, &cfg);
        let fitted = self.fitted_for(&rule, sol.gamma.as_slice(), &self.point_moments);
        let n = self.data.n();
        let sigma2 = self
            .data
            .y()
            .iter()
            .zip(&fitted)
            .map(|(y, f)| (y - f) * (y - f))
            .sum::<f64>()
            / n as f64;
        let trace = self.hat_diagonal(&system, &rule)?.iter().sum();
        Ok(CellEvaluation {
            penalty,
            fitted,
            sigma2,
            trace,
            surface: sol.beta.intercept(),
        })
    }

    /// Diagonal of the hat matrix.
    ///
    /// `M_aa = α_L c_a[0] K(X_a, X_a)/n + q_a^T Λ^- Z D l_a` where
    /// `c_a = O(X_a) e_0`, `q_a` spreads `α_a c_a` through the interpolation
    /// of the additive coordinates and `l_a` is observation `a`'s
    /// contribution to `L`.
    fn hat_diagonal(&self, system: &PenalizedSystem, rule: &PointRule) -> Result<Vec<f64>> {
        let n = self.data.n();
        let grid = &self.grid;
        let p = grid.dim() + 1;
        let blocks = system.blocks();
        let inv_n = 1.0 / n as f64;
        // rows of P Λ^- picked by the interpolation entries, gathered back
        // through Ẑ^T over the kernel support of each observation
        let centered_inv = match rule.regime {
            Regime::Local => None,
            _ => {
                let mut inv = system
                    .reduced()
                    .ok_or_else(|| Error::InvalidInput("missing factorization".into()))?
                    .factor()
                    .inverse();
                for mut col in inv.column_iter_mut() {
                    center(grid, col.as_mut_slice());
                }
                Some(inv)
            }
        };
        let d = grid.dim();
        let w = axis_weights(grid);
        (0..n)
            .into_par_iter()
            .map(|a| {
                let (op, al, aa) = rule.operator(&self.point_moments[a].s, p);
                let c: Vec<f64> = (0..p).map(|i| op[i * p]).collect();
                let mut diag = al * c[0] * self.self_weight[a] * inv_n;
                let Some(inv) = centered_inv.as_ref() else {
                    return Ok(diag);
                };
                let len = inv.nrows();
                let mut y = vec![0.0; len];
                for (pos, coef, wt) in interpolation_entries(grid, self.data.point(a)) {
                    let f = aa * c[coef] * wt;
                    for (yi, v) in y.iter_mut().zip(&inv.as_slice()[pos * len..(pos + 1) * len]) {
                        *yi += f * v;
                    }
                }
                let sup = &self.support;
                let mut dl = vec![0.0; p];
                let mut acc = 0.0;
                for e in sup.start[a]..sup.start[a + 1] {
                    let j = sup.node[e] as usize;
                    mat_vec(blocks.data_node(j), &sup.design[e * p..(e + 1) * p], &mut dl);
                    let pos = &sup.positions[j * 2 * d..(j + 1) * 2 * d];
                    for k in 0..d {
                        acc += w[k] * (y[pos[k] as usize] * dl[0] + y[pos[d + k] as usize] * dl[k + 1]);
                    }
                }
                diag += acc * inv_n;
                Ok(diag)
            })
            .collect()
    }

    /// Exact hat matrix: column `i` holds the fitted values for the `i`-th
    /// canonical response.
    pub fn hat_matrix(&self, penalty: Penalty, base: &FitConfig) -> Result<HatMatrix> {
        let cfg = self.config(penalty, base);
        cfg.validate()?;
        let system = PenalizedSystem::new(&self.moments, penalty, &cfg)?;
        let rule = PointRule::new(penalty, &cfg);
        let n = self.data.n();
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let l = self.table.response_moments(&e);
                let sol = match cfg.solver {
                    SolverKind::Direct => system.solve_direct(&l)?,
                    SolverKind::Iterative => system.solve_iterative(&l, cfg.tolerance, cfg.max_iterations)?,
                };
                let pms: Vec<PointMoments> = (0..n).map(|a| self.design.moments(a, &e)).collect();
                Ok(self.fitted_for(&rule, sol.gamma.as_slice(), &pms))
            })
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; n * n];
        for (i, col) in columns.iter().enumerate() {
            for (a, v) in col.iter().enumerate() {
                values[a * n + i] = *v;
            }
        }
        let trace = (0..n).map(|i| values[i * n + i]).sum();
        Ok(HatMatrix { n, values, trace })
    }
}

pub fn hat_matrix(data: &Dataset, grid: &Grid, cfg: &FitConfig) -> Result<HatMatrix> {
    check_shapes(data, grid, cfg)?;
    Smoother::new(data, grid, &cfg.bandwidth, cfg.boundary)?.hat_matrix(cfg.penalty, cfg)
}

/// Fitted values at the design points for the fit `result` of `data`.
pub fn fitted_values(result: &FitResult, data: &Dataset) -> Result<Vec<f64>> {
    (0..data.n())
        .map(|a| predict_at(result, data, data.point(a)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::additive::apply_z;
    use crate::anova::anova_decompose;
    use crate::moments::assemble_moments;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| (3.0 * x[i * d]).sin() + x[i * d] * x[i * d + 1] + 0.1 * rng.gen::<f64>())
            .collect();
        Dataset::new(x, d, y).unwrap()
    }

    #[test]
    fn constant_response_reproduced() {
        let data = random_data(1, 60, 2).with_response(vec![2.5; 60]).unwrap();
        let grid = Grid::uniform(2, 5).unwrap();
        let bw = BandwidthSpec::uniform(2, 0.4).unwrap();
        for pen in [Penalty::ZERO, Penalty::Finite(0.3), Penalty::Finite(40.0), Penalty::INFINITE] {
            let res = fit(&data, &grid, &FitConfig::new(pen, bw.clone())).unwrap();
            let mf = assemble_moments(&data, &grid, &bw, BoundaryPolicy::Renorm).unwrap();
            for j in 0..grid.len() {
                if mf.s_node(j)[0] > 0.0 {
                    assert_abs_diff_eq!(res.beta.node(j)[0], 2.5, epsilon = 1e-9);
                    assert_abs_diff_eq!(res.beta.node(j)[1], 0.0, epsilon = 1e-8);
                }
            }
            for a in 0..data.n() {
                assert_abs_diff_eq!(predict_at(&res, &data, data.point(a)).unwrap(), 2.5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn local_linear_at_zero_penalty() {
        let data = random_data(2, 80, 2);
        let grid = Grid::uniform(2, 4).unwrap();
        let bw = BandwidthSpec::uniform(2, 0.5).unwrap();
        let res = fit(&data, &grid, &FitConfig::new(Penalty::ZERO, bw.clone())).unwrap();
        for j in 0..grid.len() {
            let pm = moments_at_point(&data, &grid.node(j), &bw, BoundaryPolicy::Renorm).unwrap();
            let s = nalgebra::DMatrix::from_row_slice(3, 3, &pm.s);
            let b = s.try_inverse().unwrap() * nalgebra::DVector::from_column_slice(&pm.l);
            for k in 0..3 {
                assert_abs_diff_eq!(res.beta.node(j)[k], b[k], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn infinite_penalty_gives_additive_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let x: Vec<f64> = (0..2 * n).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..n).map(|i| (4.0 * x[2 * i]).cos() + x[2 * i + 1].powi(2)).collect();
        let data = Dataset::new(x, 2, y).unwrap();
        let grid = Grid::uniform(2, 12).unwrap();
        let bw = BandwidthSpec::uniform(2, 0.25).unwrap();
        let res = fit(&data, &grid, &FitConfig::new(Penalty::INFINITE, bw)).unwrap();
        let table = anova_decompose(&res.surface(), &grid).unwrap();
        assert!(table.interaction_mean_square() < 1e-4 * table.variance());
    }

    #[test]
    fn decomposition_invariants() {
        let data = random_data(4, 50, 2);
        let grid = Grid::uniform(2, 5).unwrap();
        let bw = BandwidthSpec::uniform(2, 0.45).unwrap();
        for pen in [Penalty::Finite(0.2), Penalty::Finite(3.0), Penalty::ZERO, Penalty::INFINITE] {
            let res = fit(&data, &grid, &FitConfig::new(pen, bw.clone())).unwrap();
            assert!(res.additive_part.add(&res.nonadditive_part).max_abs_diff(&res.beta) < 1e-14);
            assert!(apply_z(&res.nonadditive_part).norm() <= 1e-10 * res.beta.norm());
            let proj = crate::additive::project_additive(&res.beta);
            assert!(proj.sub(&res.additive_part).norm() <= 1e-10 * res.beta.norm());
        }
    }

    #[test]
    fn compromise_check() {
        let data = random_data(5, 50, 2);
        let grid = Grid::uniform(2, 5).unwrap();
        let bw = BandwidthSpec::uniform(2, 0.45).unwrap();
        let mf = assemble_moments(&data, &grid, &bw, BoundaryPolicy::Renorm).unwrap();
        for r in [0.3, 1.0, 20.0] {
            let mut res = fit(&data, &grid, &FitConfig::new(Penalty::Finite(r), bw.clone())).unwrap();
            assert!(pointwise_compromise_check(&res, &mf).unwrap() < 1e-9);
            // corrupt the additive part by 1e-3 at one node
            res.additive_part.node_mut(7)[0] += 1e-3;
            let dev = pointwise_compromise_check(&res, &mf).unwrap();
            assert!(dev > 1e-5 && dev < 1e-3, "{dev}");
        }
    }

    #[test]
    fn prediction_matches_grid_at_nodes() {
        let data = random_data(6, 60, 2);
        let grid = Grid::uniform(2, 6).unwrap();
        let bw = BandwidthSpec::uniform(2, 0.4).unwrap();
        for pen in [Penalty::ZERO, Penalty::Finite(0.5), Penalty::Finite(5.0), Penalty::INFINITE] {
            let res = fit(&data, &grid, &FitConfig::new(pen, bw.clone())).unwrap();
            for j in 0..grid.len() {
                let v = predict_at(&res, &data, &grid.node(j)).unwrap();
                assert_abs_diff_eq!(v, res.beta.node(j)[0], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hat_matrix_consistent_with_pipeline() {
        let data = random_data(7, 25, 2);
        let grid = Grid::uniform(2, 4).unwrap();
        let bw = BandwidthSpec::uniform(2, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for pen in [Penalty::ZERO, Penalty::Finite(0.4), Penalty::Finite(7.0), Penalty::INFINITE] {
            let cfg = FitConfig::new(pen, bw.clone());
            let sm = Smoother::new(&data, &grid, &bw, BoundaryPolicy::Renorm).unwrap();
            let hat = sm.hat_matrix(pen, &cfg).unwrap();
            for _ in 0..5 {
                let y: Vec<f64> = (0..data.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let d2 = data.with_response(y.clone()).unwrap();
                let res = fit(&d2, &grid, &cfg).unwrap();
                let direct = fitted_values(&res, &d2).unwrap();
                for (a, b) in hat.apply(&y).iter().zip(&direct) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-9);
                }
            }
            let ones = hat.apply(&vec![1.0; data.n()]);
            assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-9));
            let eval = sm.evaluate(pen, &cfg).unwrap();
            assert_abs_diff_eq!(eval.trace, hat.trace, epsilon = 1e-9);
            let fitted = hat.apply(data.y());
            for (a, b) in eval.fitted.iter().zip(&fitted) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn iterative_pipeline_agrees() {
        let data = random_data(9, 40, 2);
        let grid = Grid::uniform(2, 4).unwrap();
        let bw = BandwidthSpec::uniform(2, 0.5).unwrap();
        let mut cfg = FitConfig::new(Penalty::Finite(0.5), bw).with_solver(SolverKind::Iterative);
        cfg.tolerance = 1e-22;
        cfg.max_iterations = 5000;
        let it = fit(&data, &grid, &cfg).unwrap();
        let direct = fit(&data, &grid, &cfg.with_solver(SolverKind::Direct)).unwrap();
        assert!(it.beta.max_abs_diff(&direct.beta) < 1e-8);
        assert!(it.diagnostics.trace.is_some());
    }
}
