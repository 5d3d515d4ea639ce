use crate::error::{Error, Result};
use crate::grid::Grid;

/// Local linear parameters at every grid node: row `j` holds
/// `(intercept, slope_1, ..., slope_d)` at node `t_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamField {
    grid: Grid,
    values: Vec<f64>,
}

impl ParamField {
    pub fn zeros(grid: &Grid) -> Self {
        let p = grid.dim() + 1;
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len() * p],
        }
    }

    pub fn from_vec(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * (grid.dim() + 1);
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "parameter field needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Parameters per node, `d + 1`.
    pub fn width(&self) -> usize {
        self.grid.dim() + 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, j: usize) -> &[f64] {
        let p = self.width();
        &self.values[j * p..(j + 1) * p]
    }

    pub fn node_mut(&mut self, j: usize) -> &mut [f64] {
        let p = self.width();
        &mut self.values[j * p..(j + 1) * p]
    }

    /// Coefficient `l` (0 = intercept) at every node.
    pub fn coefficient(&self, l: usize) -> Vec<f64> {
        let p = self.width();
        self.values.iter().skip(l).step_by(p).copied().collect()
    }

    /// The intercept surface `r(t_j)`.
    pub fn intercept(&self) -> Vec<f64> {
        self.coefficient(0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn sub(&self, other: &ParamField) -> ParamField {
        ParamField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &ParamField) -> ParamField {
        ParamField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> ParamField {
        ParamField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &ParamField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Coordinates in the image of `Z`: `2 m*` numbers laid out as
/// `[intercept_1 | intercept_2 | ... | intercept_d | slope_1 | ... | slope_d]`,
/// each block of length `m_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveCoords {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl AdditiveCoords {
    pub fn zeros(grid: &Grid) -> Self {
        let layout = block_offsets(grid.sizes());
        let len = 2 * grid.m_star();
        Self {
            sizes: grid.sizes().to_vec(),
            offsets: layout,
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != 2 * grid.m_star() {
            return Err(Error::Dimension(format!(
                "additive coordinates need {} values, got {}",
                2 * grid.m_star(),
                values.len()
            )));
        }
        Ok(Self {
            sizes: grid.sizes().to_vec(),
            offsets: block_offsets(grid.sizes()),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn intercept_component(&self, k: usize) -> &[f64] {
        let start = self.offsets[k];
        &self.values[start..start + self.sizes[k]]
    }

    pub fn slope_component(&self, k: usize) -> &[f64] {
        let d = self.sizes.len();
        let start = self.offsets[d + k];
        &self.values[start..start + self.sizes[k]]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &AdditiveCoords) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Start offsets of the `2d` blocks of an additive coordinate vector.
pub(crate) fn block_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(2 * sizes.len());
    let mut acc = 0;
    for _ in 0..2 {
        for &m in sizes {
            offsets.push(acc);
            acc += m;
        }
    }
    offsets
}
