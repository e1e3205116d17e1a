//! Matched worker-job observations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` matched observations `(wage, x_C, x_M, y_C, y_M)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedSample {
    pub wage: Vec<f64>,
    /// Worker skills, n x 2.
    pub x: DMatrix<f64>,
    /// Job skill requirements, n x 2.
    pub y: DMatrix<f64>,
}

impl MatchedSample {
    pub fn new(wage: Vec<f64>, x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let n = wage.len();
        if x.nrows() != n || x.ncols() != 2 {
            return Err(Error::dimension(
                "worker skills",
                format!("{n} x 2"),
                format!("{} x {}", x.nrows(), x.ncols()),
            ));
        }
        if y.nrows() != n || y.ncols() != 2 {
            return Err(Error::dimension(
                "job requirements",
                format!("{n} x 2"),
                format!("{} x {}", y.nrows(), y.ncols()),
            ));
        }
        for i in 0..n {
            let row = [wage[i], x[(i, 0)], x[(i, 1)], y[(i, 0)], y[(i, 1)]];
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data {
                    row: i + 1,
                    column: COLUMNS[k].to_string(),
                    message: "non-finite value".into(),
                });
            }
        }
        Ok(Self { wage, x, y })
    }

    pub fn len(&self) -> usize {
        self.wage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wage.is_empty()
    }

    pub fn x_row(&self, i: usize) -> [f64; 2] {
        [self.x[(i, 0)], self.x[(i, 1)]]
    }

    pub fn y_row(&self, i: usize) -> [f64; 2] {
        [self.y[(i, 0)], self.y[(i, 1)]]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        match k {
            0 => self.wage.clone(),
            1 | 2 => self.x.column(k - 1).iter().copied().collect(),
            3 | 4 => self.y.column(k - 3).iter().copied().collect(),
            _ => panic!("column index {k} out of range"),
        }
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = order.len();
        Self {
            wage: order.iter().map(|&i| self.wage[i]).collect(),
            x: DMatrix::from_fn(n, 2, |i, j| self.x[(order[i], j)]),
            y: DMatrix::from_fn(n, 2, |i, j| self.y[(order[i], j)]),
        }
    }
}

pub const COLUMNS: [&str; 5] = ["wage", "x_C", "x_M", "y_C", "y_M"];
