//! Sparse dictionary learning over residual edge vectors.

mod ksvd;
mod omp;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::connectome::{mat_from_slice, n_edges};
use crate::{Error, Result};

pub use ksvd::{ksvd, KsvdReport, POWER_MAX_ITERS, POWER_TOL};
pub use omp::RESIDUAL_TOL;

const UNIT_NORM_TOL: f64 = 1e-10;

/// `m × K` dictionary with unit-norm atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Vec<Vec<f64>>,
    m: usize,
}

impl Dictionary {
    /// Dictionary from the columns of an `m × K` matrix.
    pub fn from_matrix(d: &Array2<f64>) -> Result<Self> {
        let atoms = d.axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
        Self::from_atoms(atoms)
    }

    pub fn from_atoms(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let m = atoms.first().map(Vec::len).ok_or_else(|| Error::Argument("empty dictionary".into()))?;
        for (k, a) in atoms.iter().enumerate() {
            if a.len() != m {
                return Err(Error::Dimension(format!("atom {k} has length {}, expected {m}", a.len())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("atom {k} has non-finite entries")));
            }
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Argument(format!("atom {k} has norm {norm}, expected 1")));
            }
        }
        Ok(Self { atoms, m })
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k]
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.m, self.atoms.len()), |(i, k)| self.atoms[k][i])
    }

    /// `D x`.
    pub fn apply(&self, code: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (atom, &c) in self.atoms.iter().zip(code) {
            if c != 0.0 {
                out.iter_mut().zip(atom).for_each(|(o, a)| *o += c * a);
            }
        }
        out
    }
}

/// `K × n` code matrix with at most `L` nonzeros per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    codes: Array2<f64>,
    sparsity: usize,
}

impl SparseCodes {
    pub fn new(codes: Array2<f64>, sparsity: usize) -> Result<Self> {
        for (i, col) in codes.axis_iter(Axis(1)).enumerate() {
            let nnz = col.iter().filter(|&&v| v != 0.0).count();
            if nnz > sparsity {
                return Err(Error::Argument(format!("column {i} has {nnz} nonzeros, bound is {sparsity}")));
            }
        }
        Ok(Self { codes, sparsity })
    }

    fn from_columns(cols: &[Vec<f64>], k: usize, sparsity: usize) -> Self {
        let codes = Array2::from_shape_fn((k, cols.len()), |(r, c)| cols[c][r]);
        Self { codes, sparsity }
    }

    pub fn codes(&self) -> &Array2<f64> {
        &self.codes
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn n_columns(&self) -> usize {
        self.codes.ncols()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.codes.column(i).to_vec()
    }
}

/// OMP code of one signal; see the module docs of `omp` for the pursuit rule.
pub fn omp(dict: &Dictionary, y: &[f64], l: usize) -> Result<Vec<f64>> {
    omp::check_sparsity(l, dict.n_atoms(), dict.dim())?;
    if y.len() != dict.dim() {
        return Err(Error::Dimension(format!("signal length {} vs atom length {}", y.len(), dict.dim())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("signal has non-finite entries".into()));
    }
    Ok(omp::omp_atoms(&dict.atoms, y, l))
}

fn columns(y: &Array2<f64>) -> Vec<Vec<f64>> {
    y.axis_iter(Axis(1)).map(|c: ArrayView1<f64>| c.to_vec()).collect()
}

/// Column-wise OMP; columns are coded in parallel.
pub fn encode_all(dict: &Dictionary, y: &Array2<f64>, l: usize) -> Result<SparseCodes> {
    omp::check_sparsity(l, dict.n_atoms(), dict.dim())?;
    if y.nrows() != dict.dim() {
        return Err(Error::Dimension(format!("data has {} rows, atoms have {}", y.nrows(), dict.dim())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("data has non-finite entries".into()));
    }
    let cols = columns(y);
    let codes: Vec<Vec<f64>> = cols.par_iter().map(|c| omp::omp_atoms(&dict.atoms, c, l)).collect();
    Ok(SparseCodes::from_columns(&codes, dict.n_atoms(), l))
}

/// `target − mat(D x)`: subtract the sparse reconstruction of one subject's
/// edges from its matrix (residual or original connectome).
pub fn refine(target: &Array2<f64>, dict: &Dictionary, code: &[f64]) -> Result<Array2<f64>> {
    let p = target.nrows();
    if target.ncols() != p {
        return Err(Error::Dimension(format!("refine target must be square, got {:?}", target.dim())));
    }
    if dict.dim() != n_edges(p) {
        return Err(Error::Dimension(format!(
            "dictionary atoms have length {}, a {p}x{p} matrix has {} edges",
            dict.dim(),
            n_edges(p)
        )));
    }
    if code.len() != dict.n_atoms() {
        return Err(Error::Dimension(format!("code length {} vs {} atoms", code.len(), dict.n_atoms())));
    }
    let recon = mat_from_slice(&dict.apply(code), p)?;
    Ok(target - &recon)
}
