use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Inputs (`N × d`, one sample per row) and scalar labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub split: Split,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, split: Split) -> Self {
        assert_eq!(x.nrows(), y.len(), "inputs and labels disagree on N");
        Dataset { x, y, split }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.x.row_iter().map(|r| r.norm()).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.row_norms().into_iter().fold(0.0, f64::max)
    }

    /// Indices of rows with `‖x_i‖₂ > 1 + tol`.
    pub fn unit_ball_violations(&self, tol: f64) -> Vec<usize> {
        self.row_norms()
            .into_iter()
            .enumerate()
            .filter(|(_, n)| *n > 1.0 + tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// No two rows parallel (|cos| < 1 - 1e-12) and no zero rows.
    pub fn is_non_degenerate(&self) -> bool {
        let norms = self.row_norms();
        if norms.iter().any(|&n| n == 0.0) {
            return false;
        }
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let cos = self.x.row(i).dot(&self.x.row(j)) / (norms[i] * norms[j]);
                if cos.abs() >= 1.0 - 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            split: self.split,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}
