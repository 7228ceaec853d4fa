//! Orthogonal Matching Pursuit.

use crate::{Error, Result};

/// Residual norm below which pursuit stops early.
pub const RESIDUAL_TOL: f64 = 1e-12;
/// Orthogonalized atom norm below which an atom counts as linearly dependent
/// on the current support.
const DEPENDENCE_TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yv, xv)| *yv += alpha * xv);
}

pub(crate) fn check_sparsity(l: usize, k: usize, m: usize) -> Result<()> {
    if l == 0 || l > k.min(m) {
        return Err(Error::Argument(format!(
            "sparsity L = {l} must lie in [1, min(K = {k}, m = {m})]"
        )));
    }
    Ok(())
}

/// Greedy `L`-sparse code of `y` over unit-norm `atoms`.
///
/// Each step picks the unselected atom with the largest `|⟨d, r⟩|` (lowest
/// index on ties), extends an orthonormal basis of the support by
/// Gram-Schmidt (two passes), and re-projects, so the coefficients are the
/// exact least-squares solution on the support. An atom that is numerically
/// dependent on the support ends the pursuit, which keeps the support system
/// full rank.
pub(crate) fn omp_atoms(atoms: &[Vec<f64>], y: &[f64], l: usize) -> Vec<f64> {
    let k_atoms = atoms.len();
    let mut code = vec![0.0; k_atoms];
    let mut residual = y.to_vec();
    let mut support: Vec<usize> = Vec::with_capacity(l);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(l);
    // Column j of R holds the coordinates of atom support[j] in `basis`.
    let mut r_cols: Vec<Vec<f64>> = Vec::with_capacity(l);
    let mut proj: Vec<f64> = Vec::with_capacity(l);

    for _ in 0..l {
        if dot(&residual, &residual).sqrt() < RESIDUAL_TOL {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, atom) in atoms.iter().enumerate() {
            if support.contains(&k) {
                continue;
            }
            let c = dot(atom, &residual).abs();
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((k, c));
            }
        }
        let Some((k, c)) = best else { break };
        if c == 0.0 {
            break;
        }
        let mut q = atoms[k].clone();
        let mut coords = vec![0.0; basis.len() + 1];
        for _ in 0..2 {
            for (j, b) in basis.iter().enumerate() {
                let c = dot(b, &q);
                coords[j] += c;
                axpy(-c, b, &mut q);
            }
        }
        let norm = dot(&q, &q).sqrt();
        if norm < DEPENDENCE_TOL {
            break;
        }
        q.iter_mut().for_each(|v| *v /= norm);
        coords[basis.len()] = norm;
        let z = dot(&q, y);
        proj.push(z);
        basis.push(q);
        r_cols.push(coords);
        support.push(k);
        // r = y - Q Qᵀ y, recomputed against the full basis.
        residual.copy_from_slice(y);
        for (b, &zj) in basis.iter().zip(&proj) {
            axpy(-zj, b, &mut residual);
        }
        for b in &basis {
            let c = dot(b, &residual);
            axpy(-c, b, &mut residual);
        }
    }

    // Back-substitution R x = Qᵀ y.
    let s = support.len();
    let mut x = vec![0.0; s];
    for i in (0..s).rev() {
        let mut acc = proj[i];
        for j in i + 1..s {
            acc -= r_cols[j][i] * x[j];
        }
        x[i] = acc / r_cols[i][i];
    }
    for (&k, &v) in support.iter().zip(&x) {
        code[k] = v;
    }
    code
}

/// Squared reconstruction error `‖y − D x‖²`.
pub(crate) fn residual_sq(atoms: &[Vec<f64>], y: &[f64], code: &[f64]) -> f64 {
    let mut r = y.to_vec();
    for (atom, &c) in atoms.iter().zip(code) {
        if c != 0.0 {
            axpy(-c, atom, &mut r);
        }
    }
    dot(&r, &r)
}
