//! Dense CHW kernels for strided 2-D convolution, its transpose, and affine maps.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

/// Geometry shared by a convolution and the transposed convolution that
/// mirrors it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Spatial size on the wide side (convolution input).
    pub wide: usize,
    /// Spatial size on the narrow side (convolution output).
    pub narrow: usize,
}

impl ConvGeom {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, wide: usize) -> Self {
        let pad = (kernel - 1) / 2;
        let narrow = (wide + 2 * pad - kernel) / stride + 1;
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            wide,
            narrow,
        }
    }

    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel * self.kernel
    }

    /// Wide-side coordinate touched by narrow position `n` and tap `k`.
    #[inline]
    fn wide_index(&self, n: usize, k: usize) -> Option<usize> {
        let i = (n * self.stride + k).checked_sub(self.pad)?;
        (i < self.wide).then_some(i)
    }
}

/// Patch matrix `[in_ch·k·k][narrow²]` of a wide-side tensor; padding taps are zero.
fn im2col(g: &ConvGeom, src: &[f64]) -> Array2<f64> {
    let (k, nw, nn) = (g.kernel, g.wide, g.narrow);
    let mut cols = Array2::zeros((g.in_ch * k * k, nn * nn));
    for c in 0..g.in_ch {
        let plane = &src[c * nw * nw..(c + 1) * nw * nw];
        for ky in 0..k {
            for kx in 0..k {
                let mut row = cols.row_mut((c * k + ky) * k + kx);
                for y in 0..nn {
                    let Some(iy) = g.wide_index(y, ky) else { continue };
                    for x in 0..nn {
                        if let Some(ix) = g.wide_index(x, kx) {
                            row[y * nn + x] = plane[iy * nw + ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto the wide side.
fn col2im(g: &ConvGeom, cols: &Array2<f64>, dst: &mut [f64]) {
    let (k, nw, nn) = (g.kernel, g.wide, g.narrow);
    for c in 0..g.in_ch {
        let plane = &mut dst[c * nw * nw..(c + 1) * nw * nw];
        for ky in 0..k {
            for kx in 0..k {
                let row = cols.row((c * k + ky) * k + kx);
                for y in 0..nn {
                    let Some(iy) = g.wide_index(y, ky) else { continue };
                    for x in 0..nn {
                        if let Some(ix) = g.wide_index(x, kx) {
                            plane[iy * nw + ix] += row[y * nn + x];
                        }
                    }
                }
            }
        }
    }
}

fn weights<'a>(g: &ConvGeom, w: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((g.out_ch, g.in_ch * g.kernel * g.kernel), w).expect("weight slot shape")
}

fn narrow_view<'a>(g: &ConvGeom, x: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((g.out_ch, g.narrow * g.narrow), x).expect("narrow tensor shape")
}

/// `aᵀ·b`.
fn t_dot(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.ncols(), b.ncols()));
    general_mat_mul(1.0, &a.t(), &b, 0.0, &mut out);
    out
}

/// Convolution `in_ch × wide² → out_ch × narrow²`; weights `[out][in][ky][kx]`.
pub(crate) fn conv_forward(g: &ConvGeom, w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
    let mut o = ArrayViewMut2::from_shape((g.out_ch, g.narrow * g.narrow), out).expect("output shape");
    for (mut row, &bias) in o.rows_mut().into_iter().zip(b) {
        row.fill(bias);
    }
    general_mat_mul(1.0, &weights(g, w), &im2col(g, input), 1.0, &mut o);
}

/// Gradients of [`conv_forward`]; accumulates into `dw`, `db`, and `din` if given.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    w: &[f64],
    input: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    din: Option<&mut [f64]>,
) {
    let d = narrow_view(g, dout);
    for (acc, row) in db.iter_mut().zip(d.rows()) {
        *acc += row.sum();
    }
    let mut dwv = ArrayViewMut2::from_shape((g.out_ch, g.in_ch * g.kernel * g.kernel), dw).expect("weight shape");
    general_mat_mul(1.0, &d, &im2col(g, input).t(), 1.0, &mut dwv);
    if let Some(din) = din {
        col2im(g, &t_dot(weights(g, w), d), din);
    }
}

/// Transposed convolution `out_ch × narrow² → in_ch × wide²` (the adjoint
/// geometry of `g`); weights `[out_ch][in_ch][ky][kx]`, bias per `in_ch`.
pub(crate) fn deconv_forward(g: &ConvGeom, w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
    let nw = g.wide;
    for c in 0..g.in_ch {
        out[c * nw * nw..(c + 1) * nw * nw].fill(b[c]);
    }
    col2im(g, &t_dot(weights(g, w), narrow_view(g, input)), out);
}

pub(crate) fn deconv_backward(
    g: &ConvGeom,
    w: &[f64],
    input: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    din: Option<&mut [f64]>,
) {
    let nw = g.wide;
    for c in 0..g.in_ch {
        db[c] += dout[c * nw * nw..(c + 1) * nw * nw].iter().sum::<f64>();
    }
    let cols = im2col(g, dout);
    let mut dwv = ArrayViewMut2::from_shape((g.out_ch, g.in_ch * g.kernel * g.kernel), dw).expect("weight shape");
    general_mat_mul(1.0, &narrow_view(g, input), &cols.t(), 1.0, &mut dwv);
    if let Some(din) = din {
        let mut dv = ArrayViewMut2::from_shape((g.out_ch, g.narrow * g.narrow), din).expect("input shape");
        general_mat_mul(1.0, &weights(g, w), &cols, 1.0, &mut dv);
    }
}

/// `out = W·x + b` with `W` row-major `[rows][cols]`.
pub(crate) fn affine_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

pub(crate) fn affine_backward(w: &[f64], x: &[f64], dout: &[f64], dw: &mut [f64], db: &mut [f64], din: &mut [f64]) {
    let cols = x.len();
    for (r, &d) in dout.iter().enumerate() {
        db[r] += d;
        let row = &w[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for (g, &v) in drow.iter_mut().zip(x) {
            *g += d * v;
        }
        for (g, &v) in din.iter_mut().zip(row) {
            *g += d * v;
        }
    }
}
