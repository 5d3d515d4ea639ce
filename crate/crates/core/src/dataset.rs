use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension accepted without an explicit override.
pub const DEFAULT_MAX_DIM: usize = 4;

/// Design points in `[0,1]^d` with their responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    d: usize,
    /// Row-major `n x d`.
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, d: usize, y: Vec<f64>) -> Result<Self> {
        Self::with_max_dim(x, d, y, DEFAULT_MAX_DIM)
    }

    /// Like [`Dataset::new`] but with a caller-chosen dimension cap.
    pub fn with_max_dim(x: Vec<f64>, d: usize, y: Vec<f64>, max_dim: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if d > max_dim {
            return Err(Error::InvalidInput(format!(
                "dimension {d} exceeds the cap {max_dim}"
            )));
        }
        if y.is_empty() {
            return Err(Error::EmptyData);
        }
        if x.len() != y.len() * d {
            return Err(Error::Dimension(format!(
                "x has {} values, expected {} x {}",
                x.len(),
                y.len(),
                d
            )));
        }
        if let Some(pos) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!(
                "design coordinate {} of row {} is outside [0,1]",
                x[pos],
                pos / d
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("responses must be finite".into()));
        }
        Ok(Self { d, x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged design rows".into()));
        }
        Self::new(rows.concat(), d, y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x[i * self.d + k]).collect()
    }

    /// Same design, different responses.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "response has {} values, design has {} rows",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("responses must be finite".into()));
        }
        Ok(Self {
            d: self.d,
            x: self.x.clone(),
            y,
        })
    }
}
