use ndarray::Array2;
use rayon::prelude::*;

use crate::connectome::upper_triangle;
use crate::{Error, Result};

/// Subject-by-subject similarity; rows are session-1 subjects, columns
/// session-2 subjects, in the same subject order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() == 0 {
            return Err(Error::Dimension(format!("similarity matrix must be square, got {:?}", values.dim())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("similarity matrix has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Session-2 rows against session-1 columns.
    pub fn transposed(&self) -> Self {
        Self {
            values: self.values.t().to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationResult {
    pub predictions: Vec<usize>,
    pub n_correct: usize,
    pub accuracy: f64,
    pub simmat: SimilarityMatrix,
}

/// Centered, unit-norm copy of `v`, or `None` for a constant vector.
fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let ss: f64 = c.iter().map(|x| x * x).sum();
    let raw: f64 = v.iter().map(|x| x * x).sum();
    if ss == 0.0 || ss <= 1e-24 * raw || !ss.is_finite() {
        return None;
    }
    let norm = ss.sqrt();
    Some(c.into_iter().map(|x| x / norm).collect())
}

fn edge_vectors(set: &[Array2<f64>], name: &str) -> Result<Vec<Vec<f64>>> {
    set.iter()
        .enumerate()
        .map(|(i, m)| {
            standardize(&upper_triangle(m.view()))
                .ok_or_else(|| Error::Degenerate(format!("{name} matrix {i} has a constant edge vector")))
        })
        .collect()
}

/// Pearson correlation between the strict-upper-triangle edge vectors of
/// every `(set1[i], set2[j])` pair.
pub fn similarity_matrix(set1: &[Array2<f64>], set2: &[Array2<f64>]) -> Result<SimilarityMatrix> {
    if set1.len() != set2.len() || set1.len() < 2 {
        return Err(Error::Argument(format!(
            "similarity needs two equal-length sets of at least 2 matrices, got {} and {}",
            set1.len(),
            set2.len()
        )));
    }
    let p = set1[0].nrows();
    if set1.iter().chain(set2).any(|m| m.dim() != (p, p)) {
        return Err(Error::Dimension(format!("all matrices must be {p}x{p}")));
    }
    if p < 3 {
        return Err(Error::Dimension(format!("need p >= 3 for edge correlations, got {p}")));
    }
    let a = edge_vectors(set1, "session-1")?;
    let b = edge_vectors(set2, "session-2")?;
    let n = a.len();
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|u| {
            b.iter()
                .map(|v| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
                .collect()
        })
        .collect();
    let values = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);
    SimilarityMatrix::new(values)
}

/// Row-wise argmax; ties go to the lowest column index.
pub fn identify(simmat: &SimilarityMatrix) -> IdentificationResult {
    let predictions: Vec<usize> = simmat
        .values
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let n_correct = predictions.iter().enumerate().filter(|(i, &j)| *i == j).count();
    IdentificationResult {
        accuracy: n_correct as f64 / predictions.len() as f64,
        n_correct,
        predictions,
        simmat: simmat.clone(),
    }
}
