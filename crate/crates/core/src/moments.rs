//! Kernel-weighted design moments `S(x)` and `L(x)`.
//!
//! For output point `x` with scaled offsets `z_k = (X_{i,k} - x_k) / h_k`:
//! `S(x) = (1/n) Σ K_h(X_i, x) (1, z)(1, z)^T` and
//! `L(x) = (1/n) Σ K_h(X_i, x) (1, z) Y_i`.

use rayon::prelude::*;

use crate::config::{BandwidthSpec, BoundaryPolicy};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernel::{axis_factor, support_radius};

/// `S^(j)` and `L^(j)` at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentField {
    grid: Grid,
    p: usize,
    s: Vec<f64>,
    l: Vec<f64>,
}

impl MomentField {
    pub fn from_parts(grid: &Grid, s: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        let p = grid.dim() + 1;
        if s.len() != grid.len() * p * p || l.len() != grid.len() * p {
            return Err(Error::Dimension("moment arrays do not match grid".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            p,
            s,
            l,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.p
    }

    /// Row-major `(d+1) x (d+1)` block of node `j`.
    pub fn s_node(&self, j: usize) -> &[f64] {
        let pp = self.p * self.p;
        &self.s[j * pp..(j + 1) * pp]
    }

    pub fn l_node(&self, j: usize) -> &[f64] {
        &self.l[j * self.p..(j + 1) * self.p]
    }

    pub fn s_all(&self) -> &[f64] {
        &self.s
    }

    pub fn l_all(&self) -> &[f64] {
        &self.l
    }

    /// Replace `L` (same design, new responses).
    pub fn with_l(&self, l: Vec<f64>) -> Result<Self> {
        Self::from_parts(&self.grid, self.s.clone(), l)
    }

    /// Largest eigenvalue over all `S^(j)`.
    pub fn max_eigenvalue(&self) -> f64 {
        (0..self.grid.len())
            .map(|j| crate::linalg::sym_max_eigenvalue(self.s_node(j), self.p))
            .fold(0.0, f64::max)
    }
}

/// Moments at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMoments {
    pub s: Vec<f64>,
    pub l: Vec<f64>,
}

#[inline]
fn accumulate(s: &mut [f64], l: &mut [f64], p: usize, w: f64, z: &[f64], y: f64) {
    // basis vector (1, z)
    let basis = |a: usize| if a == 0 { 1.0 } else { z[a - 1] };
    for a in 0..p {
        let ba = w * basis(a);
        l[a] += ba * y;
        for b in a..p {
            s[a * p + b] += ba * basis(b);
        }
    }
}

#[inline]
fn finish(s: &mut [f64], l: &mut [f64], p: usize, n: usize) {
    let inv = 1.0 / n as f64;
    for a in 0..p {
        l[a] *= inv;
        for b in a..p {
            s[a * p + b] *= inv;
            s[b * p + a] = s[a * p + b];
        }
    }
}

pub fn moments_at_point(
    data: &Dataset,
    x: &[f64],
    bw: &BandwidthSpec,
    policy: BoundaryPolicy,
) -> Result<PointMoments> {
    let d = data.dim();
    if x.len() != d || bw.dim() != d {
        return Err(Error::Dimension("point, data and bandwidth dimensions differ".into()));
    }
    let p = d + 1;
    let mut s = vec![0.0; p * p];
    let mut l = vec![0.0; p];
    let mut z = vec![0.0; d];
    'obs: for i in 0..data.n() {
        let xi = data.point(i);
        let mut w = 1.0;
        for k in 0..d {
            match axis_factor(policy, xi[k], x[k], bw.per_axis()[k]) {
                Some((f, zk)) => {
                    w *= f;
                    z[k] = zk;
                }
                None => continue 'obs,
            }
        }
        accumulate(&mut s, &mut l, p, w, &z, data.y()[i]);
    }
    finish(&mut s, &mut l, p, data.n());
    Ok(PointMoments { s, l })
}

pub fn assemble_moments(
    data: &Dataset,
    grid: &Grid,
    bw: &BandwidthSpec,
    policy: BoundaryPolicy,
) -> Result<MomentField> {
    let table = KernelTable::new(data, grid, bw, policy)?;
    Ok(table.moments(data.y()))
}

/// Per-axis kernel factors between observations and grid coordinates.
///
/// The product kernel factorizes over axes, so a node's weight for
/// observation `i` is the product of `d` table lookups.
#[derive(Debug, Clone)]
pub(crate) struct KernelTable {
    grid: Grid,
    n: usize,
    /// `factor[k][r * n + i]`, zero outside the support.
    factor: Vec<Vec<f64>>,
    offset: Vec<Vec<f64>>,
    /// Observations with nonzero factor at axis-0 coordinate `r`.
    first_axis: Vec<Vec<u32>>,
    /// Per observation and axis, the half-open range of grid indices in the support.
    ranges: Vec<Vec<(usize, usize)>>,
}

impl KernelTable {
    pub fn new(
        data: &Dataset,
        grid: &Grid,
        bw: &BandwidthSpec,
        policy: BoundaryPolicy,
    ) -> Result<Self> {
        let d = data.dim();
        if grid.dim() != d || bw.dim() != d {
            return Err(Error::Dimension(format!(
                "data has dimension {d}, grid {}, bandwidth {}",
                grid.dim(),
                bw.dim()
            )));
        }
        let n = data.n();
        let mut factor = Vec::with_capacity(d);
        let mut offset = Vec::with_capacity(d);
        let mut ranges = vec![Vec::with_capacity(d); n];
        for k in 0..d {
            let m = grid.sizes()[k];
            let h = bw.per_axis()[k];
            let radius = support_radius(policy, h);
            let step = grid.spacing(k);
            let mut f = vec![0.0; m * n];
            let mut z = vec![0.0; m * n];
            for (i, range) in ranges.iter_mut().enumerate() {
                let xi = data.point(i)[k];
                let lo = (((xi - radius) / step).floor().max(0.0)) as usize;
                let hi = ((((xi + radius) / step).ceil()) as usize + 1).min(m);
                let mut first = usize::MAX;
                let mut last = 0;
                for r in lo..hi {
                    if let Some((w, zz)) = axis_factor(policy, xi, grid.coord(k, r), h) {
                        if w > 0.0 {
                            f[r * n + i] = w;
                            z[r * n + i] = zz;
                            first = first.min(r);
                            last = r + 1;
                        }
                    }
                }
                range.push(if first == usize::MAX { (0, 0) } else { (first, last) });
            }
            factor.push(f);
            offset.push(z);
        }
        let m0 = grid.sizes()[0];
        let first_axis = (0..m0)
            .map(|r| {
                (0..n)
                    .filter(|&i| factor[0][r * n + i] > 0.0)
                    .map(|i| i as u32)
                    .collect()
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            n,
            factor,
            offset,
            first_axis,
            ranges,
        })
    }

    /// Visit every observation with positive weight at node `j`.
    #[inline]
    fn for_each_obs(&self, j: usize, z: &mut [f64], mut visit: impl FnMut(usize, f64, &[f64])) {
        let d = self.grid.dim();
        let n = self.n;
        let r0 = self.grid.axis_index(j, 0);
        let mut idx = vec![0usize; d];
        for (k, slot) in idx.iter_mut().enumerate().take(d) {
            *slot = self.grid.axis_index(j, k) * n;
        }
        'obs: for &i in &self.first_axis[r0] {
            let i = i as usize;
            let mut w = self.factor[0][idx[0] + i];
            z[0] = self.offset[0][idx[0] + i];
            for k in 1..d {
                let f = self.factor[k][idx[k] + i];
                if f == 0.0 {
                    continue 'obs;
                }
                w *= f;
                z[k] = self.offset[k][idx[k] + i];
            }
            visit(i, w, z);
        }
    }

    /// `S` and `L` at every node for responses `y`.
    pub fn moments(&self, y: &[f64]) -> MomentField {
        let d = self.grid.dim();
        let p = d + 1;
        let m = self.grid.len();
        let mut s = vec![0.0; m * p * p];
        let mut l = vec![0.0; m * p];
        s.par_chunks_mut(p * p)
            .zip(l.par_chunks_mut(p))
            .enumerate()
            .for_each(|(j, (sj, lj))| {
                let mut z = vec![0.0; d];
                self.for_each_obs(j, &mut z, |i, w, z| accumulate(sj, lj, p, w, z, y[i]));
                finish(sj, lj, p, self.n);
            });
        MomentField {
            grid: self.grid.clone(),
            p,
            s,
            l,
        }
    }

    /// `L` only, for new responses on the same design.
    pub fn response_moments(&self, y: &[f64]) -> Vec<f64> {
        let d = self.grid.dim();
        let p = d + 1;
        let inv = 1.0 / self.n as f64;
        let mut l = vec![0.0; self.grid.len() * p];
        l.par_chunks_mut(p).enumerate().for_each(|(j, lj)| {
            let mut z = vec![0.0; d];
            self.for_each_obs(j, &mut z, |i, w, z| {
                let wy = w * y[i] * inv;
                lj[0] += wy;
                for k in 0..d {
                    lj[k + 1] += wy * z[k];
                }
            });
        });
        l
    }

    /// Visit every node in the support of observation `i` with its
    /// multi-index, the observation's weight and offsets there.
    pub fn for_each_node(&self, i: usize, mut visit: impl FnMut(usize, &[usize], f64, &[f64])) {
        let d = self.grid.dim();
        let n = self.n;
        let ranges = &self.ranges[i];
        if ranges.iter().any(|&(a, b)| a >= b) {
            return;
        }
        let mut cur: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        let mut z = vec![0.0; d];
        loop {
            let mut w = 1.0;
            let mut j = 0;
            for k in 0..d {
                let f = self.factor[k][cur[k] * n + i];
                w *= f;
                z[k] = self.offset[k][cur[k] * n + i];
                j += cur[k] * self.grid.stride(k);
            }
            if w > 0.0 {
                visit(j, &cur, w, &z);
            }
            // odometer over the support box, last axis fastest
            let mut k = d;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                cur[k] += 1;
                if cur[k] < ranges[k].1 {
                    break;
                }
                cur[k] = ranges[k].0;
            }
        }
    }
}

/// Kernel neighbours of every design point, evaluated at the design points
/// themselves.
#[derive(Debug, Clone)]
pub(crate) struct DesignTable {
    d: usize,
    n: usize,
    /// CSR layout: neighbours of point `a` are `start[a]..start[a+1]`.
    start: Vec<usize>,
    obs: Vec<u32>,
    weight: Vec<f64>,
    offsets: Vec<f64>,
}

impl DesignTable {
    pub fn new(data: &Dataset, bw: &BandwidthSpec, policy: BoundaryPolicy) -> Self {
        let d = data.dim();
        let n = data.n();
        // per point: neighbour ids, weights and offsets (d per neighbour)
        let rows: Vec<(Vec<u32>, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|a| {
                let xa = data.point(a);
                let (mut ids, mut ws, mut zs) = (Vec::new(), Vec::new(), Vec::new());
                let mut z = vec![0.0; d];
                'obs: for i in 0..n {
                    let xi = data.point(i);
                    let mut w = 1.0;
                    for k in 0..d {
                        match axis_factor(policy, xi[k], xa[k], bw.per_axis()[k]) {
                            Some((f, zk)) => {
                                w *= f;
                                z[k] = zk;
                            }
                            None => continue 'obs,
                        }
                    }
                    if w > 0.0 {
                        ids.push(i as u32);
                        ws.push(w);
                        zs.extend_from_slice(&z);
                    }
                }
                (ids, ws, zs)
            })
            .collect();
        let mut start = Vec::with_capacity(n + 1);
        let mut obs = Vec::new();
        let mut weight = Vec::new();
        let mut offsets = Vec::new();
        start.push(0);
        for (ids, ws, zs) in rows {
            obs.extend(ids);
            weight.extend(ws);
            offsets.extend(zs);
            start.push(obs.len());
        }
        Self {
            d,
            n,
            start,
            obs,
            weight,
            offsets,
        }
    }

    pub fn neighbours(&self, a: usize) -> impl Iterator<Item = (usize, f64, &[f64])> + '_ {
        (self.start[a]..self.start[a + 1]).map(move |e| {
            (
                self.obs[e] as usize,
                self.weight[e],
                &self.offsets[e * self.d..(e + 1) * self.d],
            )
        })
    }

    /// `S(X_a)` and `L(X_a)` for responses `y`.
    pub fn moments(&self, a: usize, y: &[f64]) -> PointMoments {
        let p = self.d + 1;
        let mut s = vec![0.0; p * p];
        let mut l = vec![0.0; p];
        for (i, w, z) in self.neighbours(a) {
            accumulate(&mut s, &mut l, p, w, z, y[i]);
        }
        finish(&mut s, &mut l, p, self.n);
        PointMoments { s, l }
    }
}
