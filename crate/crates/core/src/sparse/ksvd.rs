//! K-SVD dictionary learning.
//!
//! Each iteration codes every column with OMP, then sweeps the atoms in
//! order. Atom `k` is refit to the leading singular pair of the error matrix
//! restricted to the columns that use it,
//!
//! ```text
//! E_k = Y_Ω − D X_Ω + d_k x^k_Ω,
//! ```
//!
//! found by power iteration on `E_k E_kᵀ` warm-started from the current atom.
//! Warm starting makes the Rayleigh quotient nondecreasing, so an atom update
//! never increases the objective. During coding a column keeps its previous
//! code whenever that code reconstructs it better than the fresh OMP code,
//! which makes the coding step nonincreasing as well.

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::omp::{check_sparsity, omp_atoms, residual_sq};
use super::{Dictionary, SparseCodes};
use crate::seed;
use crate::{Error, Result};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 1000;
/// `|⟨d, y/‖y‖⟩|` above which a data column is considered already an atom.
const SAME_DIRECTION: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KsvdReport {
    /// `‖Y − DX‖²_F` after each iteration.
    pub objective_history: Vec<f64>,
    /// Dead atoms replaced in each iteration.
    pub replaced_atoms: Vec<usize>,
    pub iterations_run: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Flip `atom` (and its coefficients) so its largest-magnitude entry is
/// positive; ties go to the lowest index.
fn fix_sign(atom: &mut [f64], coeffs: &mut [f64]) {
    let mut best = 0;
    for (i, v) in atom.iter().enumerate() {
        if v.abs() > atom[best].abs() {
            best = i;
        }
    }
    if atom[best] < 0.0 {
        atom.iter_mut().for_each(|v| *v = -*v);
        coeffs.iter_mut().for_each(|v| *v = -*v);
    }
}

fn random_unit(rng: &mut impl rand::Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// K distinct data columns sampled without replacement (stream 0 of `seed`),
/// normalized. Zero columns, and any shortfall when `K > n`, are filled with
/// random unit vectors from the same stream.
fn initial_atoms(cols: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::stream(seed, 0);
    let m = cols[0].len();
    let picks = index::sample(&mut rng, cols.len(), k.min(cols.len())).into_vec();
    let mut atoms: Vec<Vec<f64>> = picks
        .into_iter()
        .map(|i| {
            let n = norm(&cols[i]);
            if n > 0.0 {
                cols[i].iter().map(|v| v / n).collect()
            } else {
                random_unit(&mut rng, m)
            }
        })
        .collect();
    while atoms.len() < k {
        atoms.push(random_unit(&mut rng, m));
    }
    for a in &mut atoms {
        fix_sign(a, &mut []);
    }
    atoms
}

/// Leading left singular vector of `E` (columns `e`) by power iteration on
/// `E Eᵀ` from `start`. `None` when `Eᵀ start` vanishes.
fn leading_left_vector(e: &[Vec<f64>], start: &[f64]) -> Option<Vec<f64>> {
    let m = start.len();
    let mut u = start.to_vec();
    for _ in 0..POWER_MAX_ITERS {
        let mut next = vec![0.0; m];
        for col in e {
            let c = dot(col, &u);
            next.iter_mut().zip(col).for_each(|(n, v)| *n += c * v);
        }
        let n = norm(&next);
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        next.iter_mut().for_each(|v| *v /= n);
        let delta = next.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        u = next;
        if delta < POWER_TOL {
            break;
        }
    }
    Some(u)
}

fn residual_columns(cols: &[Vec<f64>], atoms: &[Vec<f64>], codes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    cols.iter()
        .zip(codes)
        .map(|(y, x)| {
            let mut r = y.clone();
            for (a, &c) in atoms.iter().zip(x) {
                if c != 0.0 {
                    r.iter_mut().zip(a).for_each(|(rv, av)| *rv -= c * av);
                }
            }
            r
        })
        .collect()
}

/// Learn a `K`-atom dictionary for the columns of `y` under the sparsity
/// bound `L`, running exactly `iters` iterations.
pub fn ksvd(y: &Array2<f64>, k: usize, l: usize, iters: usize, seed: u64) -> Result<(Dictionary, SparseCodes, KsvdReport)> {
    let (m, n) = y.dim();
    if m < 2 {
        return Err(Error::Argument(format!("K-SVD needs signals of length >= 2, got {m}")));
    }
    if n == 0 {
        return Err(Error::Argument("K-SVD needs at least one signal".into()));
    }
    if iters == 0 {
        return Err(Error::Argument("K-SVD needs at least one iteration".into()));
    }
    if k == 0 {
        return Err(Error::Argument("K-SVD needs at least one atom".into()));
    }
    check_sparsity(l, k, m)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("K-SVD input has non-finite entries".into()));
    }
    if n < k {
        log::warn!("K-SVD with fewer signals ({n}) than atoms ({k})");
    }

    let cols: Vec<Vec<f64>> = y.axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
    let mut atoms = initial_atoms(&cols, k, seed);
    let mut codes: Vec<Vec<f64>> = Vec::new();
    let mut report = KsvdReport {
        objective_history: Vec::with_capacity(iters),
        replaced_atoms: Vec::with_capacity(iters),
        iterations_run: 0,
    };

    for it in 0..iters {
        // Sparse coding.
        codes = cols
            .par_iter()
            .enumerate()
            .map(|(i, col)| {
                let fresh = omp_atoms(&atoms, col, l);
                if it > 0 && residual_sq(&atoms, col, &codes[i]) < residual_sq(&atoms, col, &fresh) {
                    codes[i].clone()
                } else {
                    fresh
                }
            })
            .collect();

        // Sequential atom sweep.
        let mut resid = residual_columns(&cols, &atoms, &codes);
        let mut replaced = 0;
        for a in 0..k {
            let omega: Vec<usize> = (0..n).filter(|&i| codes[i][a] != 0.0).collect();
            if omega.is_empty() {
                if let Some(atom) = replacement_atom(&cols, &resid, &atoms) {
                    atoms[a] = atom;
                    replaced += 1;
                }
                continue;
            }
            let old = atoms[a].clone();
            let e: Vec<Vec<f64>> = omega
                .iter()
                .map(|&i| {
                    let x = codes[i][a];
                    resid[i].iter().zip(&old).map(|(r, d)| r + x * d).collect()
                })
                .collect();
            let (mut atom, mut coeffs) = match leading_left_vector(&e, &old) {
                Some(u) => {
                    let c: Vec<f64> = e.iter().map(|col| dot(col, &u)).collect();
                    (u, c)
                }
                // The restricted error is orthogonal to the atom: best coefficients are zero.
                None => (old, vec![0.0; omega.len()]),
            };
            fix_sign(&mut atom, &mut coeffs);
            for ((&i, col), &c) in omega.iter().zip(&e).zip(&coeffs) {
                codes[i][a] = c;
                resid[i] = col.iter().zip(&atom).map(|(v, d)| v - c * d).collect();
            }
            atoms[a] = atom;
        }

        let objective: f64 = residual_columns(&cols, &atoms, &codes).iter().map(|r| dot(r, r)).sum();
        log::debug!("K-SVD iteration {}: objective {objective:.6e}, replaced {replaced}", it + 1);
        report.objective_history.push(objective);
        report.replaced_atoms.push(replaced);
        report.iterations_run += 1;
    }

    let dict = Dictionary::from_atoms(atoms)?;
    let codes = SparseCodes::from_columns(&codes, k, l);
    Ok((dict, codes, report))
}

/// Worst-reconstructed nonzero data column that is not already an atom,
/// normalized; lowest index wins ties.
fn replacement_atom(cols: &[Vec<f64>], resid: &[Vec<f64>], atoms: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (col, r)) in cols.iter().zip(resid).enumerate() {
        let n = norm(col);
        if n == 0.0 {
            continue;
        }
        if atoms.iter().any(|a| (dot(a, col) / n).abs() >= SAME_DIRECTION) {
            continue;
        }
        let err = dot(r, r);
        if best.is_none_or(|(_, e)| err > e) {
            best = Some((i, err));
        }
    }
    best.map(|(i, _)| {
        let n = norm(&cols[i]);
        let mut atom: Vec<f64> = cols[i].iter().map(|v| v / n).collect();
        fix_sign(&mut atom, &mut []);
        atom
    })
}
