//! The operator `Z` onto additive coordinates and the projection
//! `P_add = Z^T Z`.
//!
//! `Z = P Ẑ`, where `Ẑ` sums a parameter field over all nodes sharing an
//! axis coordinate (scaled by `sqrt(m_k / m)`) and `P` removes the mean of
//! intercept blocks `2..d`.

use nalgebra::DMatrix;

use crate::field::{block_offsets, AdditiveCoords, ParamField};
use crate::grid::{bracket, Grid};

pub(crate) fn axis_weights(grid: &Grid) -> Vec<f64> {
    let m = grid.len() as f64;
    grid.sizes().iter().map(|&mk| (mk as f64 / m).sqrt()).collect()
}

/// Positions in `γ` touched by node `j`: intercept blocks first, then
/// slope blocks. Entry `t` carries coefficient `0` for `t < d` and
/// coefficient `t - d + 1` otherwise.
#[inline]
pub(crate) fn node_positions(grid: &Grid, offsets: &[usize], j: usize, out: &mut [usize]) {
    let d = grid.dim();
    for k in 0..d {
        let r = grid.axis_index(j, k);
        out[k] = offsets[k] + r;
        out[d + k] = offsets[d + k] + r;
    }
}

#[inline]
pub(crate) fn position_coefficient(d: usize, t: usize) -> usize {
    if t < d {
        0
    } else {
        t - d + 1
    }
}

/// `Ẑ β` without centering.
pub(crate) fn scatter(grid: &Grid, beta: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    let p = d + 1;
    let offsets = block_offsets(grid.sizes());
    let w = axis_weights(grid);
    let mut out = vec![0.0; 2 * grid.m_star()];
    let mut pos = vec![0; 2 * d];
    for j in 0..grid.len() {
        node_positions(grid, &offsets, j, &mut pos);
        let b = &beta[j * p..(j + 1) * p];
        for k in 0..d {
            out[pos[k]] += w[k] * b[0];
            out[pos[d + k]] += w[k] * b[k + 1];
        }
    }
    out
}

/// `Ẑ^T g`.
pub(crate) fn gather(grid: &Grid, g: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    let p = d + 1;
    let offsets = block_offsets(grid.sizes());
    let w = axis_weights(grid);
    let mut out = vec![0.0; grid.len() * p];
    let mut pos = vec![0; 2 * d];
    for j in 0..grid.len() {
        node_positions(grid, &offsets, j, &mut pos);
        let b = &mut out[j * p..(j + 1) * p];
        for k in 0..d {
            b[0] += w[k] * g[pos[k]];
            b[k + 1] = w[k] * g[pos[d + k]];
        }
    }
    out
}

/// Applies `P` in place: removes the mean of intercept blocks `2..d`.
pub(crate) fn center(grid: &Grid, g: &mut [f64]) {
    let offsets = block_offsets(grid.sizes());
    for k in 1..grid.dim() {
        let block = &mut g[offsets[k]..offsets[k] + grid.sizes()[k]];
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        block.iter_mut().for_each(|v| *v -= mean);
    }
}

pub fn apply_z(beta: &ParamField) -> AdditiveCoords {
    let grid = beta.grid();
    let mut g = scatter(grid, beta.as_slice());
    center(grid, &mut g);
    AdditiveCoords::from_vec(grid, g).expect("length matches grid")
}

pub fn apply_zt(grid: &Grid, gamma: &AdditiveCoords) -> ParamField {
    let mut g = gamma.as_slice().to_vec();
    center(grid, &mut g);
    ParamField::from_vec(grid, gather(grid, &g)).expect("shape matches grid")
}

/// `Z^T Z β`, the Euclidean projection onto additive fields.
pub fn project_additive(beta: &ParamField) -> ParamField {
    apply_zt(beta.grid(), &apply_z(beta))
}

/// Dense `Z B Z^T` for a block-diagonal `B` given as `m` row-major
/// `(d+1) x (d+1)` blocks (all blocks symmetric).
pub(crate) fn z_block_z_t(grid: &Grid, blocks: &[f64]) -> DMatrix<f64> {
    let d = grid.dim();
    let p = d + 1;
    let len = 2 * grid.m_star();
    let offsets = block_offsets(grid.sizes());
    let w = axis_weights(grid);
    let tw: Vec<f64> = (0..2 * d).map(|t| w[t % d]).collect();
    let mut out = DMatrix::<f64>::zeros(len, len);
    let mut pos = vec![0; 2 * d];
    for j in 0..grid.len() {
        node_positions(grid, &offsets, j, &mut pos);
        let b = &blocks[j * p * p..(j + 1) * p * p];
        for s in 0..2 * d {
            let cs = position_coefficient(d, s);
            for t in 0..2 * d {
                let ct = position_coefficient(d, t);
                out[(pos[s], pos[t])] += tw[s] * tw[t] * b[cs * p + ct];
            }
        }
    }
    center_rows_cols(grid, &mut out);
    out
}

/// `P X P` in place for a dense symmetric `X`.
pub(crate) fn center_rows_cols(grid: &Grid, x: &mut DMatrix<f64>) {
    let offsets = block_offsets(grid.sizes());
    let len = x.nrows();
    for k in 1..grid.dim() {
        let (start, size) = (offsets[k], grid.sizes()[k]);
        for c in 0..len {
            let mean = (start..start + size).map(|r| x[(r, c)]).sum::<f64>() / size as f64;
            for r in start..start + size {
                x[(r, c)] -= mean;
            }
        }
        for r in 0..len {
            let mean = (start..start + size).map(|c| x[(r, c)]).sum::<f64>() / size as f64;
            for c in start..start + size {
                x[(r, c)] -= mean;
            }
        }
    }
}

/// Sparse rows of the map from `γ` to the additive part interpolated at
/// `x`: entries `(position, coefficient, weight)`.
pub(crate) fn interpolation_entries(grid: &Grid, x: &[f64]) -> Vec<(usize, usize, f64)> {
    let d = grid.dim();
    let offsets = block_offsets(grid.sizes());
    let w = axis_weights(grid);
    let mut out = Vec::with_capacity(4 * d);
    for k in 0..d {
        let (lo, t) = bracket(grid, k, x[k]);
        for (r, f) in [(lo, 1.0 - t), (lo + 1, t)] {
            out.push((offsets[k] + r, 0, w[k] * f));
            out.push((offsets[d + k] + r, k + 1, w[k] * f));
        }
    }
    out
}

/// Additive part of `Z^T γ` interpolated at `x` (all `d+1` coefficients).
pub fn interpolate_additive(grid: &Grid, gamma: &AdditiveCoords, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.dim() + 1];
    for (pos, c, w) in interpolation_entries(grid, x) {
        out[c] += w * gamma.as_slice()[pos];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Explicit `Z` built row by row from its definition.
    fn dense_z(grid: &Grid) -> DMatrix<f64> {
        let d = grid.dim();
        let p = d + 1;
        let m = grid.len();
        let rows = 2 * grid.m_star();
        let mut z = DMatrix::zeros(rows, m * p);
        let mut row = 0;
        for coef_block in 0..2 {
            for k in 0..d {
                let mk = grid.sizes()[k];
                let scale = (mk as f64 / m as f64).sqrt();
                for r in 0..mk {
                    for j in 0..m {
                        let coeff = if coef_block == 0 { 0 } else { k + 1 };
                        let hit = if grid.axis_index(j, k) == r { 1.0 } else { 0.0 };
                        let mut v = scale * hit;
                        if coef_block == 0 && k > 0 {
                            v -= scale / mk as f64;
                        }
                        z[(row, j * p + coeff)] = v;
                    }
                    row += 1;
                }
            }
        }
        z
    }

    /// Orthogonal projector onto additive fields from an indicator basis.
    fn projector_from_basis(grid: &Grid) -> DMatrix<f64> {
        let d = grid.dim();
        let p = d + 1;
        let m = grid.len();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for k in 0..d {
            for r in 0..grid.sizes()[k] {
                for coeff in [0, k + 1] {
                    let mut v = vec![0.0; m * p];
                    for j in 0..m {
                        if grid.axis_index(j, k) == r {
                            v[j * p + coeff] = 1.0;
                        }
                    }
                    cols.push(v);
                }
            }
        }
        let b = DMatrix::from_fn(m * p, cols.len(), |i, c| cols[c][i]);
        let gram = b.transpose() * &b;
        let svd = gram.svd(true, true);
        let pinv = svd.pseudo_inverse(1e-10).unwrap();
        &b * pinv * b.transpose()
    }

    fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> ParamField {
        let len = grid.len() * (grid.dim() + 1);
        ParamField::from_vec(grid, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn hand_example_two_by_two() {
        let g = Grid::new(&[2, 2]).unwrap();
        let mut v = vec![0.0; 12];
        for (j, b0) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            v[j * 3] = *b0;
        }
        let gamma = apply_z(&ParamField::from_vec(&g, v).unwrap());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [3.0 * s, 7.0 * s, -s, s, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in gamma.as_slice().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        assert!(apply_z(&ParamField::zeros(&g)).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sizes in [vec![2, 2], vec![3, 4], vec![2, 3, 2]] {
            let g = Grid::new(&sizes).unwrap();
            let z = dense_z(&g);
            let beta = random_field(&g, &mut rng);
            let dense = &z * nalgebra::DVector::from_column_slice(beta.as_slice());
            let fast = apply_z(&beta);
            for (a, b) in fast.as_slice().iter().zip(dense.iter()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-13);
            }
            let gamma = AdditiveCoords::from_vec(
                &g,
                (0..2 * g.m_star()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let dense = z.transpose() * nalgebra::DVector::from_column_slice(gamma.as_slice());
            for (a, b) in apply_zt(&g, &gamma).as_slice().iter().zip(dense.iter()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-13);
            }
            // Z^T Z against an independently built projector
            let proj = projector_from_basis(&g);
            let ztz = z.transpose() * &z;
            assert!((proj - &ztz).abs().max() < 1e-10);
            // rank(Z) = 2 m* + 1 - d
            let rank = z.clone().svd(false, false).rank(1e-9);
            assert_eq!(rank, 2 * g.m_star() + 1 - g.dim());
            // Z Z^T idempotent
            let zzt = &z * z.transpose();
            assert!((&zzt * &zzt - &zzt).abs().max() < 1e-10);
        }
    }

    #[test]
    fn adjoint_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Grid::new(&[5, 4]).unwrap();
        for _ in 0..10 {
            let beta = random_field(&g, &mut rng);
            let gamma = AdditiveCoords::from_vec(
                &g,
                (0..2 * g.m_star()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let lhs = apply_z(&beta).dot(&gamma);
            let rhs = beta.dot(&apply_zt(&g, &gamma));
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            let once = project_additive(&beta);
            let twice = project_additive(&once);
            assert!(twice.max_abs_diff(&once) <= 1e-10 * beta.norm());
        }
    }

    #[test]
    fn additive_field_is_fixed() {
        let g = Grid::new(&[4, 5]).unwrap();
        let mut beta = ParamField::zeros(&g);
        for j in 0..g.len() {
            let x = g.node(j);
            let b = beta.node_mut(j);
            b[0] = (3.0 * x[0]).sin() + x[1] * x[1];
            b[1] = x[0].exp();
            b[2] = 1.0 - x[1];
        }
        assert!(project_additive(&beta).max_abs_diff(&beta) < 1e-12);
    }

    #[test]
    fn interaction_projects_to_main_effects() {
        let g = Grid::new(&[3, 3]).unwrap();
        let mut beta = ParamField::zeros(&g);
        for j in 0..g.len() {
            let x = g.node(j);
            beta.node_mut(j)[0] = x[0] * x[1];
        }
        let proj = project_additive(&beta);
        let dense = projector_from_basis(&g) * nalgebra::DVector::from_column_slice(beta.as_slice());
        for (a, b) in proj.as_slice().iter().zip(dense.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        // marginal means of x1*x2 over {0, 1/2, 1}: x_k / 2, overall 1/4
        for j in 0..g.len() {
            let x = g.node(j);
            assert_abs_diff_eq!(proj.node(j)[0], 0.5 * x[0] + 0.5 * x[1] - 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_shift_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Grid::new(&[3, 4, 2]).unwrap();
        let beta = random_field(&g, &mut rng);
        let mut shifted = beta.clone();
        for j in 0..g.len() {
            shifted.node_mut(j)[0] += 2.5;
        }
        let a = project_additive(&shifted);
        let mut b = project_additive(&beta);
        for j in 0..g.len() {
            b.node_mut(j)[0] += 2.5;
        }
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn block_product_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::new(&[3, 4]).unwrap();
        let p = 3;
        let mut blocks = vec![0.0; g.len() * p * p];
        for j in 0..g.len() {
            for a in 0..p {
                for b in a..p {
                    let v = rng.gen_range(-1.0..1.0);
                    blocks[j * 9 + a * p + b] = v;
                    blocks[j * 9 + b * p + a] = v;
                }
            }
        }
        let z = dense_z(&g);
        let n = g.len() * p;
        let bd = DMatrix::from_fn(n, n, |r, c| {
            if r / p == c / p {
                blocks[(r / p) * 9 + (r % p) * p + c % p]
            } else {
                0.0
            }
        });
        let dense = &z * bd * z.transpose();
        assert!((z_block_z_t(&g, &blocks) - dense).abs().max() < 1e-12);
    }

    #[test]
    fn interpolation_exact_at_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Grid::new(&[4, 3]).unwrap();
        let beta = random_field(&g, &mut rng);
        let gamma = apply_z(&beta);
        let add = apply_zt(&g, &gamma);
        for j in 0..g.len() {
            let v = interpolate_additive(&g, &gamma, &g.node(j));
            for (a, b) in v.iter().zip(add.node(j)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }
}
