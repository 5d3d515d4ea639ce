//! Equidistant product grid of output points.
//!
//! Nodes along axis `k` are `0, 1/(m_k - 1), ..., 1`. The flat enumeration is
//! row-major with the first axis varying slowest; every file format in this
//! crate uses that order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl Grid {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one axis".into()));
        }
        if let Some(&bad) = sizes.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidInput(format!(
                "every grid axis needs at least 2 nodes, got {bad}"
            )));
        }
        let mut strides = vec![1; sizes.len()];
        for k in (0..sizes.len() - 1).rev() {
            strides[k] = strides[k + 1] * sizes[k + 1];
        }
        let total = sizes.iter().product();
        Ok(Self {
            sizes: sizes.to_vec(),
            strides,
            total,
        })
    }

    /// Same number of nodes `m` on each of `d` axes.
    pub fn uniform(d: usize, m: usize) -> Result<Self> {
        Self::new(&vec![m; d])
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Total node count `m`.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `m* = m_1 + ... + m_d`.
    pub fn m_star(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        1.0 / (self.sizes[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let last = self.sizes[axis] - 1;
        if i == last {
            1.0
        } else {
            i as f64 / last as f64
        }
    }

    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        (0..self.sizes[axis]).map(|i| self.coord(axis, i)).collect()
    }

    pub fn index(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "multi-index has {} entries, grid has {} axes",
                multi.len(),
                self.dim()
            )));
        }
        let mut j = 0;
        for (axis, (&i, &m)) in multi.iter().zip(&self.sizes).enumerate() {
            if i >= m {
                return Err(Error::Index {
                    axis,
                    index: i,
                    size: m,
                });
            }
            j += i * self.strides[axis];
        }
        Ok(j)
    }

    pub fn multi_index(&self, j: usize) -> Result<Vec<usize>> {
        if j >= self.total {
            return Err(Error::Index {
                axis: 0,
                index: j,
                size: self.total,
            });
        }
        Ok(self.axis_indices(j).collect())
    }

    /// Axis index of node `j` along `axis` (no bounds check on `j`).
    #[inline]
    pub fn axis_index(&self, j: usize, axis: usize) -> usize {
        (j / self.strides[axis]) % self.sizes[axis]
    }

    pub(crate) fn axis_indices(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).map(move |k| self.axis_index(j, k))
    }

    pub fn node(&self, j: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.coord(k, self.axis_index(j, k)))
            .collect()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }
}

/// Piecewise-linear interpolation position of `x` on axis `axis`:
/// lower node index and weight of the upper node.
pub(crate) fn bracket(grid: &Grid, axis: usize, x: f64) -> (usize, f64) {
    let last = grid.sizes()[axis] - 1;
    let pos = x.clamp(0.0, 1.0) * last as f64;
    let lo = (pos.floor() as usize).min(last - 1);
    (lo, pos - lo as f64)
}
