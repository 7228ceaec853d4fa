//! Series conditioning and Pearson functional connectomes.
//!
//! Edge vectors use one fixed layout everywhere (in memory, on disk, in the
//! dictionary): the strict upper triangle in row-major order,
//! `(0,1), (0,2), …, (0,p-1), (1,2), …, (p-2,p-1)`.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::synth::NetworkPartition;
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// A `p × p` Pearson correlation matrix for one subject and session.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectome {
    matrix: Array2<f64>,
    pub subject_id: String,
    pub session_label: String,
}

impl Connectome {
    /// Wrap a matrix, checking symmetry, unit diagonal and the `[-1, 1]` range.
    pub fn new(matrix: Array2<f64>, subject_id: impl Into<String>, session_label: impl Into<String>) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c || r < 2 {
            return Err(Error::Dimension(format!("connectome must be square with p >= 2, got {r}x{c}")));
        }
        for i in 0..r {
            if matrix[[i, i]] != 1.0 {
                return Err(Error::Argument(format!("diagonal entry {i} is {} not 1", matrix[[i, i]])));
            }
            for j in 0..r {
                let v = matrix[[i, j]];
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Argument(format!("entry ({i},{j}) = {v} outside [-1, 1]")));
                }
                if (v - matrix[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(Error::Argument(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self {
            matrix,
            subject_id: subject_id.into(),
            session_label: session_label.into(),
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Strict-upper-triangle edge weights of a `p × p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVector {
    values: Vec<f64>,
    p: usize,
}

impl EdgeVector {
    pub fn new(values: Vec<f64>, p: usize) -> Result<Self> {
        if values.len() != n_edges(p) {
            return Err(Error::Dimension(format!(
                "edge vector of length {} does not match p = {p} (expected {})",
                values.len(),
                n_edges(p)
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("edge vector has non-finite entries".into()));
        }
        Ok(Self { values, p })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

/// `p(p-1)/2`.
pub fn n_edges(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Position of edge `(i, j)`, `i < j < p`, in the edge layout.
pub fn edge_index(p: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < p);
    i * p - i * (i + 1) / 2 + (j - i - 1)
}

/// Strict upper triangle of any square matrix, in edge layout.
pub fn upper_triangle(m: ArrayView2<'_, f64>) -> Vec<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(n_edges(p));
    for i in 0..p {
        for j in i + 1..p {
            out.push(m[[i, j]]);
        }
    }
    out
}

pub fn vectorize_upper(c: &Connectome) -> EdgeVector {
    EdgeVector {
        values: upper_triangle(c.matrix.view()),
        p: c.p(),
    }
}

/// Symmetric matrix with the given edges and a zero diagonal.
pub fn mat(e: &EdgeVector) -> Array2<f64> {
    mat_from_slice(&e.values, e.p).expect("EdgeVector length is checked on construction")
}

/// [`mat`] for a raw slice, checking its length against `p`.
pub fn mat_from_slice(values: &[f64], p: usize) -> Result<Array2<f64>> {
    if values.len() != n_edges(p) {
        return Err(Error::Dimension(format!(
            "{} edges cannot fill a {p}x{p} matrix",
            values.len()
        )));
    }
    let mut m = Array2::zeros((p, p));
    let mut k = 0;
    for i in 0..p {
        for j in i + 1..p {
            m[[i, j]] = values[k];
            m[[j, i]] = values[k];
            k += 1;
        }
    }
    Ok(m)
}

/// Remove the least-squares line (over the sample index) from every row.
pub fn detrend(series: &Array2<f64>) -> Result<Array2<f64>> {
    let t = series.ncols();
    if t < 2 {
        return Err(Error::Dimension(format!("detrend needs at least 2 samples, got {t}")));
    }
    let t_mean = (t - 1) as f64 / 2.0;
    let t_ss: f64 = (0..t).map(|k| (k as f64 - t_mean).powi(2)).sum();
    let mut out = series.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / t as f64;
        let slope = row
            .iter()
            .enumerate()
            .map(|(k, &x)| (k as f64 - t_mean) * (x - mean))
            .sum::<f64>()
            / t_ss;
        for (k, x) in row.iter_mut().enumerate() {
            *x -= mean + slope * (k as f64 - t_mean);
        }
    }
    Ok(out)
}

/// Ideal band-pass: zero every DFT bin whose `|f|` falls outside
/// `[low_hz, high_hz]` (bounds inclusive) and return the real part of the
/// inverse transform.
pub fn bandpass(series: &Array2<f64>, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<Array2<f64>> {
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::Config(format!("sample rate must be positive, got {sample_rate_hz}")));
    }
    if !(low_hz >= 0.0 && low_hz < high_hz && high_hz <= sample_rate_hz / 2.0) {
        return Err(Error::Config(format!(
            "band [{low_hz}, {high_hz}] Hz invalid for sample rate {sample_rate_hz} Hz"
        )));
    }
    let t = series.ncols();
    if t == 0 {
        return Ok(series.clone());
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(t);
    let inv = planner.plan_fft_inverse(t);
    let keep: Vec<bool> = (0..t)
        .map(|k| {
            let signed = if k <= t / 2 { k as f64 } else { k as f64 - t as f64 };
            let f = (signed * sample_rate_hz / t as f64).abs();
            low_hz <= f && f <= high_hz
        })
        .collect();
    let mut out = Array2::zeros(series.dim());
    let mut buf = vec![Complex::new(0.0, 0.0); t];
    for (src, mut dst) in series.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        for (b, &x) in buf.iter_mut().zip(src.iter()) {
            *b = Complex::new(x, 0.0);
        }
        fwd.process(&mut buf);
        for (b, &k) in buf.iter_mut().zip(&keep) {
            if !k {
                *b = Complex::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        for (d, b) in dst.iter_mut().zip(&buf) {
            *d = b.re / t as f64;
        }
    }
    Ok(out)
}

/// Sample Pearson correlation between every pair of rows.
pub fn pearson_fc(series: &Array2<f64>, subject_id: &str, session_label: &str) -> Result<Connectome> {
    let (p, t) = series.dim();
    if t < 3 {
        return Err(Error::Dimension(format!("pearson_fc needs at least 3 samples, got {t}")));
    }
    if p < 2 {
        return Err(Error::Dimension(format!("pearson_fc needs at least 2 ROIs, got {p}")));
    }
    let mut z = series.clone();
    for (roi, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        let raw_ss: f64 = row.iter().map(|x| x * x).sum();
        let mean = row.sum() / t as f64;
        row.mapv_inplace(|x| x - mean);
        let ss: f64 = row.iter().map(|x| x * x).sum();
        if !ss.is_finite() || ss <= 1e-24 * raw_ss || ss == 0.0 {
            return Err(Error::Degenerate(format!(
                "ROI {roi} of {subject_id}/{session_label} has zero variance"
            )));
        }
        let norm = ss.sqrt();
        row.mapv_inplace(|x| x / norm);
    }
    let mut c = z.dot(&z.t());
    for i in 0..p {
        c[[i, i]] = 1.0;
        for j in i + 1..p {
            let v = c[[i, j]].clamp(-1.0, 1.0);
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    Connectome::new(c, subject_id, session_label)
}

/// Elementwise mean connectome.
pub fn group_average(connectomes: &[Connectome]) -> Result<Connectome> {
    let first = connectomes
        .first()
        .ok_or_else(|| Error::Argument("group_average of an empty list".into()))?;
    let p = first.p();
    let mut sum = Array2::<f64>::zeros((p, p));
    for c in connectomes {
        if c.p() != p {
            return Err(Error::Dimension(format!("mixed connectome sizes {p} and {}", c.p())));
        }
        sum += c.matrix();
    }
    sum /= connectomes.len() as f64;
    for i in 0..p {
        sum[[i, i]] = 1.0;
        for j in i + 1..p {
            let v = sum[[i, j]].clamp(-1.0, 1.0);
            sum[[i, j]] = v;
            sum[[j, i]] = v;
        }
    }
    Connectome::new(sum, "group", first.session_label.clone())
}

/// ROIs that survive excluding the given networks, ascending.
pub fn kept_rois(part: &NetworkPartition, excluded: &BTreeSet<usize>) -> Result<Vec<usize>> {
    if let Some(&g) = excluded.iter().find(|&&g| g >= part.n_networks()) {
        return Err(Error::Argument(format!(
            "network {g} does not exist (partition has {})",
            part.n_networks()
        )));
    }
    let kept: Vec<usize> = (0..part.p_rois())
        .filter(|&r| !excluded.contains(&part.assignment()[r]))
        .collect();
    if kept.len() < 2 {
        return Err(Error::Degenerate(format!(
            "excluding networks {excluded:?} leaves {} ROI(s)",
            kept.len()
        )));
    }
    Ok(kept)
}

/// Principal submatrix on `rois`.
pub fn select_rois(m: &Array2<f64>, rois: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rois).select(Axis(1), rois)
}

/// Drop the rows and columns of every ROI in an excluded network.
pub fn exclude_networks(c: &Connectome, part: &NetworkPartition, excluded: &BTreeSet<usize>) -> Result<Connectome> {
    if part.p_rois() != c.p() {
        return Err(Error::Dimension(format!(
            "partition covers {} ROIs, connectome has {}",
            part.p_rois(),
            c.p()
        )));
    }
    let kept = kept_rois(part, excluded)?;
    Ok(Connectome {
        matrix: select_rois(&c.matrix, &kept),
        subject_id: c.subject_id.clone(),
        session_label: c.session_label.clone(),
    })
}

/// Fisher z (`atanh`) of the off-diagonal entries; the diagonal is kept at 1.
/// Correlations are clamped to `±(1 - 1e-12)` first.
pub fn fisher_z(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.mapv(|r| r.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh());
    for i in 0..out.nrows() {
        out[[i, i]] = 1.0;
    }
    out
}
