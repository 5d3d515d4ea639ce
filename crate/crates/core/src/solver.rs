//! Solvers for the penalized normal equations `(S + R(I - P_add)) β = L`.
//!
//! Writing `A_R = R(S + RI)^{-1}` the solution satisfies
//! `β = (S + RI)^{-1} L + A_R Z^T γ` with `γ = Z β`, so only the `2 m*`
//! additive coordinates need a global solve.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::{center, gather, scatter, z_block_z_t};
use crate::config::{FitConfig, Penalty, SolverKind};
use crate::error::{Error, Result};
use crate::field::{AdditiveCoords, ParamField};
use crate::grid::Grid;
use crate::linalg::{local_pinv, mat_vec, spd_inverse_into, sym_pinv, SymFactor};
use crate::moments::MomentField;

/// Which closed form is used for a penalty value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `R = 0`: independent per-node solves.
    Local,
    /// `0 < R < large_r_threshold`.
    Small,
    /// `large_r_threshold <= R < ∞`.
    Large,
    /// `R = ∞`: the additive fit.
    Infinite,
}

impl Regime {
    pub fn of(penalty: Penalty, large_r_threshold: f64) -> Regime {
        match penalty {
            Penalty::Infinite(_) => Regime::Infinite,
            Penalty::Finite(r) if r == 0.0 => Regime::Local,
            Penalty::Finite(r) if r < large_r_threshold => Regime::Small,
            Penalty::Finite(_) => Regime::Large,
        }
    }
}

/// Per-node blocks `A_R`, `I - A_R` and `R(I - A_R)`.
#[derive(Debug, Clone)]
pub struct BlockDiagonalA {
    grid: Grid,
    p: usize,
    regime: Regime,
    penalty: Penalty,
    a: Vec<f64>,
    i_minus_a: Vec<f64>,
    r_i_minus_a: Vec<f64>,
    /// Operator applied to `L` in the data term: `(S+RI)^{-1}` for small R,
    /// `A_R` for large R, `I` for infinite R, `S^+` for R = 0.
    data_op: Vec<f64>,
}

impl BlockDiagonalA {
    /// Blocks for finite `R > 0`.
    pub fn build(moments: &MomentField, r: f64, large_r_threshold: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::PenaltyDomain(format!(
                "block construction needs finite R > 0, got {r}"
            )));
        }
        let p = moments.width();
        let m = moments.grid().len();
        let large = r >= large_r_threshold;
        let pp = p * p;
        let mut a = vec![0.0; m * pp];
        let mut i_minus_a = vec![0.0; m * pp];
        let mut r_i_minus_a = vec![0.0; m * pp];
        let mut data_op = vec![0.0; m * pp];
        a.par_chunks_mut(pp)
            .zip(i_minus_a.par_chunks_mut(pp))
            .zip(r_i_minus_a.par_chunks_mut(pp))
            .zip(data_op.par_chunks_mut(pp))
            .enumerate()
            .for_each_init(
                || vec![0.0; 4 * pp],
                |scratch, (j, (((a_blk, ia), ria), data))| {
                    let (shifted, work) = scratch.split_at_mut(pp);
                    let s = moments.s_node(j);
                    for u in 0..p {
                        for v in 0..p {
                            shifted[u * p + v] = if large { s[u * p + v] / r } else { s[u * p + v] };
                        }
                        shifted[u * p + u] += if large { 1.0 } else { r };
                    }
                    if !spd_inverse_into(shifted, p, data, work) {
                        data.copy_from_slice(&sym_pinv(shifted, p, 1e-14));
                    }
                    let inv = &*data;
                    let a_scale = if large { 1.0 } else { r };
                    for (x, v) in a_blk.iter_mut().zip(inv) {
                        *x = a_scale * v;
                    }
                    // A S, then I - A = S / R times the same inverse in both regimes
                    mat_mul_into(a_blk, s, p, ria);
                    for (x, v) in ia.iter_mut().zip(ria.iter()) {
                        *x = v / r;
                    }
                    symmetrize(ria, p);
                },
            );
        let out = Self {
            grid: moments.grid().clone(),
            p,
            regime: if large { Regime::Large } else { Regime::Small },
            penalty: Penalty::Finite(r),
            a,
            i_minus_a,
            r_i_minus_a,
            data_op,
        };
        Ok(out)
    }

    /// Blocks for `R = ∞`: `A = I`, `I - A = 0`, `R(I - A) = S`.
    pub fn infinite(moments: &MomentField) -> Self {
        let p = moments.width();
        let m = moments.grid().len();
        let eye: Vec<f64> = (0..m * p * p)
            .map(|e| if (e % (p * p)) % (p + 1) == 0 { 1.0 } else { 0.0 })
            .collect();
        Self {
            grid: moments.grid().clone(),
            p,
            regime: Regime::Infinite,
            penalty: Penalty::INFINITE,
            a: eye.clone(),
            i_minus_a: vec![0.0; m * p * p],
            r_i_minus_a: moments.s_all().to_vec(),
            data_op: eye,
        }
    }

    /// Per-node generalized inverses of `S` for `R = 0` (smallest slopes on
    /// rank-deficient nodes).
    pub(crate) fn local(moments: &MomentField, cutoff: f64) -> Self {
        let p = moments.width();
        let m = moments.grid().len();
        let data_op: Vec<f64> = (0..m)
            .into_par_iter()
            .flat_map_iter(|j| local_pinv(moments.s_node(j), p, cutoff))
            .collect();
        Self {
            grid: moments.grid().clone(),
            p,
            regime: Regime::Local,
            penalty: Penalty::ZERO,
            a: vec![0.0; m * p * p],
            i_minus_a: vec![0.0; m * p * p],
            r_i_minus_a: vec![0.0; m * p * p],
            data_op,
        }
    }

    pub fn for_penalty(moments: &MomentField, penalty: Penalty, cfg: &FitConfig) -> Result<Self> {
        match Regime::of(penalty, cfg.large_r_threshold) {
            Regime::Local => Ok(Self::local(moments, cfg.pinv_cutoff)),
            Regime::Infinite => Ok(Self::infinite(moments)),
            _ => Self::build(moments, penalty.value(), cfg.large_r_threshold),
        }
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn width(&self) -> usize {
        self.p
    }

    pub fn a_node(&self, j: usize) -> &[f64] {
        let pp = self.p * self.p;
        &self.a[j * pp..(j + 1) * pp]
    }

    pub fn i_minus_a_node(&self, j: usize) -> &[f64] {
        let pp = self.p * self.p;
        &self.i_minus_a[j * pp..(j + 1) * pp]
    }

    pub fn r_i_minus_a_node(&self, j: usize) -> &[f64] {
        let pp = self.p * self.p;
        &self.r_i_minus_a[j * pp..(j + 1) * pp]
    }

    pub(crate) fn data_node(&self, j: usize) -> &[f64] {
        let pp = self.p * self.p;
        &self.data_op[j * pp..(j + 1) * pp]
    }

    /// Factor on the data operator in `β = scale · D L + A Z^T γ`.
    pub(crate) fn data_scale(&self) -> f64 {
        match self.regime {
            Regime::Local | Regime::Small => 1.0,
            Regime::Large => 1.0 / self.penalty.value(),
            Regime::Infinite => 0.0,
        }
    }

    fn apply(blocks: &[f64], p: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        out.par_chunks_mut(p)
            .zip(x.par_chunks(p))
            .zip(blocks.par_chunks(p * p))
            .for_each(|((o, xi), b)| mat_vec(b, xi, o));
        out
    }

    pub(crate) fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        Self::apply(&self.a, self.p, x)
    }

    pub(crate) fn apply_data(&self, x: &[f64]) -> Vec<f64> {
        Self::apply(&self.data_op, self.p, x)
    }

    pub(crate) fn apply_r_i_minus_a(&self, x: &[f64]) -> Vec<f64> {
        Self::apply(&self.r_i_minus_a, self.p, x)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

fn symmetrize(a: &mut [f64], p: usize) {
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (a[i * p + j] + a[j * p + i]);
            a[i * p + j] = v;
            a[j * p + i] = v;
        }
    }
}

fn mat_mul_into(a: &[f64], b: &[f64], p: usize, out: &mut [f64]) {
    for i in 0..p {
        for j in 0..p {
            out[i * p + j] = (0..p).map(|k| a[i * p + k] * b[k * p + j]).sum();
        }
    }
}

/// `Z x` for a flat parameter array.
fn z_of(grid: &Grid, x: &[f64]) -> Vec<f64> {
    let mut g = scatter(grid, x);
    center(grid, &mut g);
    g
}

/// `Z^T g` for a vector already in the range of `P`.
fn zt_of(grid: &Grid, g: &[f64]) -> Vec<f64> {
    let mut c = g.to_vec();
    center(grid, &mut c);
    gather(grid, &c)
}

/// The symmetric `2m* x 2m*` system for `γ`, with its factorization.
///
/// Small R: `Λ = I - Z A_R Z^T` with right-hand side `Z (S+RI)^{-1} L`.
/// Large and infinite R: `Λ = (I - Z Z^T) + Z R(I - A_R) Z^T` with
/// right-hand side `Z A_R L`.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    matrix: DMatrix<f64>,
    factor: SymFactor,
}

impl ReducedSystem {
    pub fn build(blocks: &BlockDiagonalA, cutoff: f64) -> Result<Self> {
        let grid = blocks.grid();
        let len = 2 * grid.m_star();
        let matrix = match blocks.regime() {
            Regime::Local => DMatrix::identity(len, len),
            Regime::Small => DMatrix::identity(len, len) - z_block_z_t(grid, &blocks.a),
            Regime::Large | Regime::Infinite => {
                let eye = BlockDiagonalA::infinite_identity(grid, blocks.p);
                DMatrix::identity(len, len) - z_block_z_t(grid, &eye)
                    + z_block_z_t(grid, &blocks.r_i_minus_a)
            }
        };
        let factor = SymFactor::new(matrix.clone(), cutoff)?;
        Ok(Self { matrix, factor })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &SymFactor {
        &self.factor
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }
}

impl BlockDiagonalA {
    fn infinite_identity(grid: &Grid, p: usize) -> Vec<f64> {
        (0..grid.len() * p * p)
            .map(|e| if (e % (p * p)) % (p + 1) == 0 { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Output of either solver.
#[derive(Debug, Clone)]
pub struct Solution {
    pub beta: ParamField,
    pub gamma: AdditiveCoords,
    pub iterations: usize,
    pub trace: Option<IterationTrace>,
    /// Whether the reduced system was solved by Cholesky (direct path only).
    pub cholesky: Option<bool>,
}

/// Per-iteration diagnostics of [`solve_iterative`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// `‖γ^[a] - γ^[a-1]‖²`.
    pub gamma_increments: Vec<f64>,
    /// Grid mean of the squared change of the intercept surface, on the
    /// same scale as the ISE.
    pub surface_increments: Vec<f64>,
}

/// A penalized system with its blocks and (for the direct path) reduced
/// factorization, reusable across responses sharing the same design.
#[derive(Debug, Clone)]
pub struct PenalizedSystem {
    blocks: BlockDiagonalA,
    reduced: Option<ReducedSystem>,
}

impl PenalizedSystem {
    pub fn new(moments: &MomentField, penalty: Penalty, cfg: &FitConfig) -> Result<Self> {
        let blocks = BlockDiagonalA::for_penalty(moments, penalty, cfg)?;
        let reduced = match (blocks.regime(), cfg.solver) {
            (Regime::Local, _) => None,
            (_, SolverKind::Direct) => Some(ReducedSystem::build(&blocks, cfg.pinv_cutoff)?),
            (_, SolverKind::Iterative) => None,
        };
        Ok(Self { blocks, reduced })
    }

    /// Always carries the reduced factorization, regardless of solver kind.
    pub fn with_factorization(moments: &MomentField, penalty: Penalty, cfg: &FitConfig) -> Result<Self> {
        let blocks = BlockDiagonalA::for_penalty(moments, penalty, cfg)?;
        let reduced = match blocks.regime() {
            Regime::Local => None,
            _ => Some(ReducedSystem::build(&blocks, cfg.pinv_cutoff)?),
        };
        Ok(Self { blocks, reduced })
    }

    pub fn blocks(&self) -> &BlockDiagonalA {
        &self.blocks
    }

    pub fn reduced(&self) -> Option<&ReducedSystem> {
        self.reduced.as_ref()
    }

    pub fn regime(&self) -> Regime {
        self.blocks.regime
    }

    fn grid(&self) -> &Grid {
        &self.blocks.grid
    }

    /// Data field `D L` and right-hand side `Z D L`.
    fn data_and_rhs(&self, l: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u = self.blocks.apply_data(l);
        let rhs = z_of(self.grid(), &u);
        (u, rhs)
    }

    fn assemble_beta(&self, u: &[f64], gamma: &[f64]) -> Vec<f64> {
        let scale = self.blocks.data_scale();
        let mut beta = self.blocks.apply_a(&zt_of(self.grid(), gamma));
        if scale != 0.0 {
            beta.iter_mut().zip(u).for_each(|(b, v)| *b += scale * v);
        }
        beta
    }

    /// Direct solve for moment vector `l` (length `m (d+1)`).
    pub fn solve_direct(&self, l: &[f64]) -> Result<Solution> {
        let grid = self.grid().clone();
        if self.regime() == Regime::Local {
            return Ok(self.solve_local(l));
        }
        let reduced = self
            .reduced
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("system was built without a factorization".into()))?;
        let (u, rhs) = self.data_and_rhs(l);
        let mut gamma = reduced.solve(&rhs);
        // γ lives in the range of P; remove round-off outside it
        center(&grid, &mut gamma);
        let beta = self.assemble_beta(&u, &gamma);
        Ok(Solution {
            beta: ParamField::from_vec(&grid, beta)?,
            gamma: AdditiveCoords::from_vec(&grid, gamma)?,
            iterations: 0,
            trace: None,
            cholesky: Some(reduced.factor().is_cholesky()),
        })
    }

    fn solve_local(&self, l: &[f64]) -> Solution {
        let grid = self.grid().clone();
        let beta = self.blocks.apply_data(l);
        let gamma = z_of(&grid, &beta);
        Solution {
            beta: ParamField::from_vec(&grid, beta).expect("shape"),
            gamma: AdditiveCoords::from_vec(&grid, gamma).expect("shape"),
            iterations: 0,
            trace: None,
            cholesky: None,
        }
    }

    /// Step size of the damped large-R iteration; unused for small R.
    fn damping(&self) -> f64 {
        if self.regime() == Regime::Small {
            return 1.0;
        }
        let p = self.blocks.p;
        let lmax = (0..self.grid().len())
            .map(|j| crate::linalg::sym_max_eigenvalue(self.blocks.r_i_minus_a_node(j), p))
            .fold(0.0, f64::max);
        if lmax > 0.0 {
            0.9 / lmax
        } else {
            1.0
        }
    }

    fn step(&self, gamma: &[f64], rhs: &[f64], alpha: f64) -> Vec<f64> {
        let grid = self.grid();
        let back = zt_of(grid, gamma);
        match self.regime() {
            Regime::Small => {
                let zab = z_of(grid, &self.blocks.apply_a(&back));
                zab.iter().zip(rhs).map(|(a, b)| a + b).collect()
            }
            _ => {
                let zsb = z_of(grid, &self.blocks.apply_r_i_minus_a(&back));
                gamma
                    .iter()
                    .zip(&zsb)
                    .zip(rhs)
                    .map(|((g, s), r)| g - alpha * s + alpha * r)
                    .collect()
            }
        }
    }

    /// The first `steps` iterates `β^[1], β^[2], …` of the fixed-point
    /// iteration started from `β^[0] = 0`, without a stopping rule.
    pub fn iterates(&self, l: &[f64], steps: usize) -> Result<Vec<ParamField>> {
        let grid = self.grid().clone();
        if self.regime() == Regime::Local {
            return Ok(vec![self.solve_local(l).beta; steps]);
        }
        let (u, rhs) = self.data_and_rhs(l);
        let alpha = self.damping();
        let mut gamma = vec![0.0; rhs.len()];
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            out.push(ParamField::from_vec(&grid, self.assemble_beta(&u, &gamma))?);
            gamma = self.step(&gamma, &rhs, alpha);
        }
        Ok(out)
    }

    /// Fixed-point iteration on `γ` starting from zero.
    ///
    /// Small R: `γ ← Z A_R Z^T γ + Z (S+RI)^{-1} L`.
    /// Large and infinite R: `γ ← γ - α Z R(I-A_R) Z^T γ + α Z A_R L`.
    pub fn solve_iterative(
        &self,
        l: &[f64],
        tolerance: f64,
        max_iterations: usize,
    ) -> Result<Solution> {
        let grid = self.grid().clone();
        if self.regime() == Regime::Local {
            return Ok(self.solve_local(l));
        }
        let p = self.blocks.p;
        let (u, rhs) = self.data_and_rhs(l);
        let alpha = self.damping();
        let mut gamma = vec![0.0; rhs.len()];
        let mut trace = IterationTrace::default();
        let mut prev_intercept = vec![0.0; grid.len()];
        let m = grid.len() as f64;
        for it in 1..=max_iterations {
            let next = self.step(&gamma, &rhs, alpha);
            let inc: f64 = next.iter().zip(&gamma).map(|(a, b)| (a - b) * (a - b)).sum();
            gamma = next;
            let beta = self.assemble_beta(&u, &gamma);
            let intercept: Vec<f64> = beta.iter().step_by(p).copied().collect();
            let surf = intercept
                .iter()
                .zip(&prev_intercept)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / m;
            prev_intercept = intercept;
            trace.gamma_increments.push(inc);
            trace.surface_increments.push(surf);
            if inc <= tolerance {
                return Ok(Solution {
                    beta: ParamField::from_vec(&grid, beta)?,
                    gamma: AdditiveCoords::from_vec(&grid, gamma)?,
                    iterations: it,
                    trace: Some(trace),
                    cholesky: None,
                });
            }
            if !inc.is_finite() {
                break;
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iterations,
            last_increment: trace.gamma_increments.last().copied().unwrap_or(f64::NAN),
        })
    }
}

pub fn solve_direct(moments: &MomentField, penalty: Penalty, cfg: &FitConfig) -> Result<Solution> {
    let cfg = cfg.with_solver(SolverKind::Direct);
    PenalizedSystem::new(moments, penalty, &cfg)?.solve_direct(moments.l_all())
}

pub fn solve_iterative(moments: &MomentField, penalty: Penalty, cfg: &FitConfig) -> Result<Solution> {
    let cfg = cfg.with_solver(SolverKind::Iterative);
    PenalizedSystem::new(moments, penalty, &cfg)?.solve_iterative(
        moments.l_all(),
        cfg.tolerance,
        cfg.max_iterations,
    )
}

/// Relative residual of the normal equations.
///
/// Finite R: `‖(S + R(I - P_add)) β - L‖ / max(1, ‖L‖)`. For `R = ∞` the
/// equations become `β ∈ F_add` and `P_add(S β - L) = 0`, and both parts
/// enter the residual.
pub fn residual_norm(moments: &MomentField, penalty: Penalty, beta: &ParamField) -> f64 {
    let grid = moments.grid();
    let p = moments.width();
    let b = beta.as_slice();
    let mut sb = vec![0.0; b.len()];
    for j in 0..grid.len() {
        mat_vec(moments.s_node(j), &b[j * p..(j + 1) * p], &mut sb[j * p..(j + 1) * p]);
    }
    let l = moments.l_all();
    let l_norm = l.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let proj = zt_of(grid, &z_of(grid, b));
    let sq: f64 = match penalty {
        Penalty::Finite(r) => sb
            .iter()
            .zip(l)
            .zip(b.iter().zip(&proj))
            .map(|((s, l), (bv, pv))| {
                let e = s + r * (bv - pv) - l;
                e * e
            })
            .sum(),
        Penalty::Infinite(_) => {
            let diff: Vec<f64> = sb.iter().zip(l).map(|(s, l)| s - l).collect();
            let normal: f64 = z_of(grid, &diff).iter().map(|v| v * v).sum();
            let off: f64 = b.iter().zip(&proj).map(|(x, y)| (x - y) * (x - y)).sum();
            normal + off
        }
    };
    sq.sqrt() / l_norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BandwidthSpec;
    use crate::dataset::Dataset;
    use crate::moments::assemble_moments;
    use crate::BoundaryPolicy;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, n: usize, sizes: &[usize], h: f64) -> (MomentField, FitConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = sizes.len();
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let data = Dataset::new(x, d, y).unwrap();
        let grid = Grid::new(sizes).unwrap();
        let bw = BandwidthSpec::uniform(d, h).unwrap();
        let mf = assemble_moments(&data, &grid, &bw, BoundaryPolicy::Renorm).unwrap();
        (mf, FitConfig::new(Penalty::Finite(1.0), bw))
    }

    #[test]
    fn blocks_simple_cases() {
        let grid = Grid::new(&[2, 2]).unwrap();
        let p = 3;
        let mut s = vec![0.0; 4 * 9];
        for a in 0..p {
            s[9 + a * p + a] = 1.0;
        }
        let mf = MomentField::from_parts(&grid, s, vec![0.0; 12]).unwrap();
        let blk = BlockDiagonalA::build(&mf, 1.0, 10.0).unwrap();
        // empty node: A = I, I - A = 0
        for a in 0..p {
            for b in 0..p {
                let eye = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(blk.a_node(0)[a * p + b], eye, epsilon = 1e-15);
                assert_abs_diff_eq!(blk.i_minus_a_node(0)[a * p + b], 0.0, epsilon = 1e-15);
                assert_abs_diff_eq!(blk.a_node(1)[a * p + b], 0.5 * eye, epsilon = 1e-15);
            }
        }
        assert!(BlockDiagonalA::build(&mf, 0.0, 1.0).is_err());
        assert!(BlockDiagonalA::build(&mf, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn blocks_match_dense_inverse() {
        let (mf, _) = instance(4, 25, &[3, 3], 0.5);
        for (r, threshold) in [(0.5, 1.0), (0.5, 0.1), (30.0, 1.0)] {
            let blk = BlockDiagonalA::build(&mf, r, threshold).unwrap();
            for j in 0..mf.grid().len() {
                let s = DMatrix::from_row_slice(3, 3, mf.s_node(j));
                let a = (&s + DMatrix::identity(3, 3) * r).try_inverse().unwrap() * r;
                let ia = DMatrix::identity(3, 3) - &a;
                for e in 0..9 {
                    let (i, k) = (e / 3, e % 3);
                    assert_abs_diff_eq!(blk.a_node(j)[e], a[(i, k)], epsilon = 1e-12);
                    assert_abs_diff_eq!(blk.i_minus_a_node(j)[e], ia[(i, k)], epsilon = 1e-12);
                    assert_abs_diff_eq!(blk.r_i_minus_a_node(j)[e], r * ia[(i, k)], epsilon = 1e-9);
                    assert_abs_diff_eq!(
                        blk.a_node(j)[e] + blk.i_minus_a_node(j)[e],
                        if i == k { 1.0 } else { 0.0 },
                        epsilon = 1e-12
                    );
                }
                let eig = a.symmetric_eigenvalues();
                assert!(eig.iter().all(|&v| v > -1e-12 && v < 1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn small_and_large_forms_agree() {
        let (mf, cfg) = instance(7, 40, &[4, 4], 0.45);
        let mut small = cfg.clone();
        small.large_r_threshold = 10.0;
        let mut large = cfg.clone();
        large.large_r_threshold = 0.1;
        for r in [0.3, 1.0, 3.0] {
            let a = solve_direct(&mf, Penalty::Finite(r), &small).unwrap();
            let b = solve_direct(&mf, Penalty::Finite(r), &large).unwrap();
            assert!(a.beta.max_abs_diff(&b.beta) < 1e-8, "r = {r}");
            assert!(residual_norm(&mf, Penalty::Finite(r), &a.beta) < 1e-8);
            assert!(residual_norm(&mf, Penalty::Finite(r), &b.beta) < 1e-8);
        }
    }

    #[test]
    fn iterative_matches_direct() {
        let (mf, mut cfg) = instance(11, 30, &[4, 4], 0.5);
        cfg.max_iterations = 20_000;
        cfg.tolerance = 1e-24;
        for penalty in [Penalty::Finite(0.2), Penalty::Finite(5.0), Penalty::INFINITE] {
            let d = solve_direct(&mf, penalty, &cfg).unwrap();
            let it = solve_iterative(&mf, penalty, &cfg).unwrap();
            assert!(d.beta.max_abs_diff(&it.beta) < 1e-7, "{penalty}: {}", d.beta.max_abs_diff(&it.beta));
            assert!(residual_norm(&mf, penalty, &d.beta) < 1e-8);
        }
    }

    #[test]
    fn zero_response_converges_at_once() {
        let (mf, cfg) = instance(2, 20, &[3, 3], 0.5);
        let mf = mf.with_l(vec![0.0; mf.l_all().len()]).unwrap();
        let sol = solve_iterative(&mf, Penalty::Finite(0.5), &cfg).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.beta.norm() == 0.0);
    }

    #[test]
    fn residual_of_zero_field() {
        let (mf, _) = instance(5, 20, &[3, 3], 0.5);
        let l_norm = mf.l_all().iter().map(|v| v * v).sum::<f64>().sqrt();
        let zero = ParamField::zeros(mf.grid());
        assert_abs_diff_eq!(
            residual_norm(&mf, Penalty::Finite(0.7), &zero),
            l_norm / l_norm.max(1.0),
            epsilon = 1e-14
        );
    }

    #[test]
    fn residual_grows_linearly_under_perturbation() {
        let (mf, cfg) = instance(6, 30, &[4, 3], 0.5);
        let pen = Penalty::Finite(0.8);
        let sol = solve_direct(&mf, pen, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..sol.beta.as_slice().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at = |eps: f64| {
            let b: Vec<f64> = sol.beta.as_slice().iter().zip(&v).map(|(b, v)| b + eps * v).collect();
            residual_norm(&mf, pen, &ParamField::from_vec(mf.grid(), b).unwrap())
        };
        let (r1, r2) = (at(1e-3), at(2e-3));
        assert!((r2 / r1 - 2.0).abs() < 1e-3);
    }
}
