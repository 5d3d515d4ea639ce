//! Functional ANOVA decomposition of a grid surface.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// One effect `r_U` for a nonempty set of axes `U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaComponent {
    pub axes: Vec<usize>,
    /// Values at every grid node.
    #[serde(skip)]
    pub values: Vec<f64>,
    pub mean_square: f64,
}

impl AnovaComponent {
    pub fn order(&self) -> usize {
        self.axes.len()
    }

    /// Label such as `r1`, `r13` (axes counted from 1).
    pub fn label(&self) -> String {
        let digits: String = self.axes.iter().map(|k| (k + 1).to_string()).collect();
        format!("r{digits}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTable {
    pub constant: f64,
    /// All effects ordered by size of the axis set, then lexicographically.
    pub components: Vec<AnovaComponent>,
    /// Mean of the squared input values.
    pub total_mean_square: f64,
}

impl AnovaTable {
    pub fn component(&self, axes: &[usize]) -> Option<&AnovaComponent> {
        self.components.iter().find(|c| c.axes == axes)
    }

    pub fn order_mean_square(&self, order: usize) -> f64 {
        self.components
            .iter()
            .filter(|c| c.order() == order)
            .map(|c| c.mean_square)
            .sum()
    }

    /// Mean square of everything beyond the main effects.
    pub fn interaction_mean_square(&self) -> f64 {
        self.components
            .iter()
            .filter(|c| c.order() >= 2)
            .map(|c| c.mean_square)
            .sum()
    }

    /// Mean square of effects of order three and higher.
    pub fn remainder_mean_square(&self) -> f64 {
        self.components
            .iter()
            .filter(|c| c.order() >= 3)
            .map(|c| c.mean_square)
            .sum()
    }

    /// Total mean square minus the squared constant.
    pub fn variance(&self) -> f64 {
        self.total_mean_square - self.constant * self.constant
    }
}

/// Grid means over all axes outside `mask`, broadcast back to every node.
fn marginal_mean(values: &[f64], grid: &Grid, mask: usize) -> Vec<f64> {
    let d = grid.dim();
    let kept: Vec<usize> = (0..d).filter(|k| mask & (1 << k) != 0).collect();
    let reduced_len: usize = kept.iter().map(|&k| grid.sizes()[k]).product();
    let key = |j: usize| {
        kept.iter()
            .fold(0, |acc, &k| acc * grid.sizes()[k] + grid.axis_index(j, k))
    };
    let mut sums = vec![0.0; reduced_len];
    for (j, v) in values.iter().enumerate() {
        sums[key(j)] += v;
    }
    let count = (grid.len() / reduced_len) as f64;
    (0..grid.len()).map(|j| sums[key(j)] / count).collect()
}

pub fn anova_decompose(values: &[f64], grid: &Grid) -> Result<AnovaTable> {
    if values.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "surface has {} values, grid has {} nodes",
            values.len(),
            grid.len()
        )));
    }
    let d = grid.dim();
    let m = grid.len() as f64;
    let means: Vec<Vec<f64>> = (0..1usize << d).map(|mask| marginal_mean(values, grid, mask)).collect();
    let constant = means[0][0];
    let mut masks: Vec<usize> = (1..1usize << d).collect();
    masks.sort_by_key(|&mask| {
        let axes: Vec<usize> = (0..d).filter(|k| mask & (1 << k) != 0).collect();
        (axes.len(), axes)
    });
    let components = masks
        .into_iter()
        .map(|mask| {
            // inclusion-exclusion over subsets of the mask
            let mut r = vec![0.0; grid.len()];
            let mut sub = mask;
            loop {
                let sign = if (mask.count_ones() - sub.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
                r.iter_mut().zip(&means[sub]).for_each(|(a, b)| *a += sign * b);
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
            let mean_square = r.iter().map(|v| v * v).sum::<f64>() / m;
            AnovaComponent {
                axes: (0..d).filter(|k| mask & (1 << k) != 0).collect(),
                values: r,
                mean_square,
            }
        })
        .collect();
    Ok(AnovaTable {
        constant,
        components,
        total_mean_square: values.iter().map(|v| v * v).sum::<f64>() / m,
    })
}
