//! Convolutional autoencoder over connectome matrices.
//!
//! The input is a one-channel `p × p` image. The encoder is a stack of
//! strided convolutions (odd kernels, symmetric zero padding `(k-1)/2`, so a
//! stride-2 layer maps `n` to `ceil(n/2)`), optionally followed by an affine
//! map to a latent vector. The decoder mirrors it: affine map back, then
//! transposed convolutions whose output sizes are pinned to the encoder's
//! input sizes. Every layer is followed by the activation except the last
//! transposed convolution, which is linear.
//!
//! All parameters live in one flat vector described by [`ParamSlot`]s, which
//! keeps the optimizer and gradient checks layer-agnostic.

mod layers;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::connectome::Connectome;
use crate::seed;
use crate::{Error, Result};
use layers::ConvGeom;

pub use train::{train, train_matrices, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub p: usize,
    pub conv: Vec<ConvSpec>,
    pub latent: Option<usize>,
    pub activation: Activation,
}

impl Architecture {
    /// Two 3×3 stride-2 layers (1→8→16 channels), latent 64, tanh.
    pub fn default_for(p: usize) -> Self {
        Self {
            p,
            conv: vec![
                ConvSpec { out_channels: 8, kernel: 3, stride: 2 },
                ConvSpec { out_channels: 16, kernel: 3, stride: 2 },
            ],
            latent: Some(64),
            activation: Activation::Tanh,
        }
    }

    fn geometries(&self) -> Result<Vec<ConvGeom>> {
        if self.p < 1 {
            return Err(Error::Config("architecture needs p >= 1".into()));
        }
        if self.conv.is_empty() {
            return Err(Error::Config("architecture needs at least one conv layer".into()));
        }
        let mut geoms = Vec::with_capacity(self.conv.len());
        let (mut ch, mut size) = (1, self.p);
        for (l, spec) in self.conv.iter().enumerate() {
            if spec.kernel == 0 || spec.kernel % 2 == 0 || spec.stride == 0 || spec.out_channels == 0 {
                return Err(Error::Config(format!(
                    "conv layer {l}: kernel must be odd and stride, channels positive ({spec:?})"
                )));
            }
            if spec.kernel > size + 2 * ((spec.kernel - 1) / 2) {
                return Err(Error::Config(format!("conv layer {l}: kernel larger than padded input")));
            }
            let g = ConvGeom::new(ch, spec.out_channels, spec.kernel, spec.stride, size);
            ch = g.out_ch;
            size = g.narrow;
            geoms.push(g);
        }
        if self.latent == Some(0) {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        Ok(geoms)
    }
}

/// Name, position and shape of one parameter tensor in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Layer plan shared by params, forward and backward.
#[derive(Debug, Clone, PartialEq)]
struct Plan {
    geoms: Vec<ConvGeom>,
    flat: usize,
    latent: Option<usize>,
    activation: Activation,
    slots: Vec<ParamSlot>,
    /// Per conv layer: (weight slot, bias slot) for encoder and decoder.
    enc: Vec<(usize, usize)>,
    dec: Vec<(usize, usize)>,
    /// (enc weight, enc bias, dec weight, dec bias) slots of the latent maps.
    fc: Option<[usize; 4]>,
}

impl Plan {
    fn new(arch: &Architecture) -> Result<Self> {
        let geoms = arch.geometries()?;
        let last = geoms.last().expect("non-empty");
        let flat = last.out_ch * last.narrow * last.narrow;
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let slot = ParamSlot { name, offset, shape };
            offset += slot.len();
            slots.push(slot);
            slots.len() - 1
        };
        let enc = geoms
            .iter()
            .enumerate()
            .map(|(l, g)| {
                let w = push(format!("enc{l}.weight"), vec![g.out_ch, g.in_ch, g.kernel, g.kernel]);
                let b = push(format!("enc{l}.bias"), vec![g.out_ch]);
                (w, b)
            })
            .collect();
        let fc = arch.latent.map(|z| {
            [
                push("latent_in.weight".into(), vec![z, flat]),
                push("latent_in.bias".into(), vec![z]),
                push("latent_out.weight".into(), vec![flat, z]),
                push("latent_out.bias".into(), vec![flat]),
            ]
        });
        let mut dec = vec![(0, 0); geoms.len()];
        for (l, g) in geoms.iter().enumerate().rev() {
            let w = push(format!("dec{l}.weight"), vec![g.out_ch, g.in_ch, g.kernel, g.kernel]);
            let b = push(format!("dec{l}.bias"), vec![g.in_ch]);
            dec[l] = (w, b);
        }
        Ok(Self {
            geoms,
            flat,
            latent: arch.latent,
            activation: arch.activation,
            slots,
            enc,
            dec,
            fc,
        })
    }

    fn n_params(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.len())
    }

    fn fan_in(&self, slot: usize) -> usize {
        let shape = &self.slots[slot].shape;
        match shape.len() {
            4 => shape[1] * shape[2] * shape[3],
            2 => shape[1],
            _ => 1,
        }
    }
}

/// Autoencoder weights plus the architecture and seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    arch: Architecture,
    plan: Plan,
    values: Vec<f64>,
    seed: u64,
}

impl AutoencoderParams {
    /// All-zero weights and biases.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        let plan = Plan::new(arch)?;
        let values = vec![0.0; plan.n_params()];
        Ok(Self {
            arch: arch.clone(),
            plan,
            values,
            seed: 0,
        })
    }

    /// Fan-in scaled uniform weights `U(±scale/√fan_in)`, zero biases,
    /// drawn from stream 0 of `seed`.
    pub fn init(arch: &Architecture, scale: f64, seed: u64) -> Result<Self> {
        use rand::Rng;
        let mut params = Self::zeros(arch)?;
        params.seed = seed;
        let mut rng = seed::stream(seed, 0);
        for (k, slot) in params.plan.slots.iter().enumerate() {
            if slot.shape.len() == 1 {
                continue;
            }
            let bound = scale / (params.plan.fan_in(k) as f64).sqrt();
            for v in &mut params.values[slot.range()] {
                *v = rng.random_range(-1.0..=1.0) * bound;
            }
        }
        Ok(params)
    }

    /// Rebuild params from a flat vector (e.g. read back from disk).
    pub fn from_values(arch: &Architecture, values: Vec<f64>, seed: u64) -> Result<Self> {
        let plan = Plan::new(arch)?;
        if values.len() != plan.n_params() {
            return Err(Error::Dimension(format!(
                "architecture needs {} parameters, got {}",
                plan.n_params(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite autoencoder parameter".into()));
        }
        Ok(Self {
            arch: arch.clone(),
            plan,
            values,
            seed,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.plan.slots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Values of the named tensor.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let slot = self.plan.slots.iter().find(|s| s.name == name)?;
        Some(&mut self.values[slot.range()])
    }

    fn slot(&self, k: usize) -> &[f64] {
        &self.values[self.plan.slots[k].range()]
    }
}

/// Gradient of the loss, laid out like [`AutoencoderParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

/// Intermediate activations kept for backprop.
struct Trace {
    /// Encoder activations; `enc[0]` is the input.
    enc: Vec<Vec<f64>>,
    /// Post-activation latent and expanded latent.
    latent: Option<(Vec<f64>, Vec<f64>)>,
    /// `dec[l]` is the input of transposed conv `l`; `dec_out` the final output.
    dec: Vec<Vec<f64>>,
    out: Vec<f64>,
}

fn run_forward(params: &AutoencoderParams, input: &[f64]) -> Trace {
    let plan = &params.plan;
    let act = plan.activation;
    let mut enc = Vec::with_capacity(plan.geoms.len() + 1);
    enc.push(input.to_vec());
    for (g, &(w, b)) in plan.geoms.iter().zip(&plan.enc) {
        let mut out = vec![0.0; g.out_ch * g.narrow * g.narrow];
        conv_fwd(g, params.slot(w), params.slot(b), enc.last().expect("input"), &mut out);
        out.iter_mut().for_each(|v| *v = act.apply(*v));
        enc.push(out);
    }
    let top = enc.last().expect("encoder output").clone();
    let (latent, mut cur) = match (plan.latent, plan.fc) {
        (Some(z), Some([wi, bi, wo, bo])) => {
            let mut h = vec![0.0; z];
            layers::affine_forward(params.slot(wi), params.slot(bi), &top, &mut h);
            h.iter_mut().for_each(|v| *v = act.apply(*v));
            let mut g = vec![0.0; plan.flat];
            layers::affine_forward(params.slot(wo), params.slot(bo), &h, &mut g);
            g.iter_mut().for_each(|v| *v = act.apply(*v));
            (Some((h, g.clone())), g)
        }
        _ => (None, top),
    };
    let mut dec = vec![Vec::new(); plan.geoms.len()];
    for l in (0..plan.geoms.len()).rev() {
        let g = &plan.geoms[l];
        let (w, b) = plan.dec[l];
        let mut out = vec![0.0; g.in_ch * g.wide * g.wide];
        layers::deconv_forward(g, params.slot(w), params.slot(b), &cur, &mut out);
        if l != 0 {
            out.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        dec[l] = std::mem::replace(&mut cur, out);
    }
    Trace { enc, latent, dec, out: cur }
}

#[inline]
fn conv_fwd(g: &ConvGeom, w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
    layers::conv_forward(g, w, b, input, out);
}

/// Split the adjacent weight and bias slots out of a gradient buffer.
fn wb_mut<'a>(grads: &'a mut [f64], slots: &[ParamSlot], w: usize, b: usize) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(slots[w].offset + slots[w].len(), slots[b].offset);
    let region = &mut grads[slots[w].offset..slots[b].offset + slots[b].len()];
    region.split_at_mut(slots[w].len())
}

/// Accumulate `d loss / d params` given `d loss / d output`.
fn run_backward(params: &AutoencoderParams, trace: &Trace, dout: Vec<f64>, grads: &mut [f64]) {
    let plan = &params.plan;
    let act = plan.activation;
    let slots = &plan.slots;
    let mut d = dout;
    for l in 0..plan.geoms.len() {
        let g = &plan.geoms[l];
        // Output of transposed conv l is the input of l - 1; layer 0 is linear.
        if l != 0 {
            for (dv, &y) in d.iter_mut().zip(&trace.dec[l - 1]) {
                *dv *= act.grad_from_output(y);
            }
        }
        let (w, b) = plan.dec[l];
        let mut din = vec![0.0; g.out_ch * g.narrow * g.narrow];
        let (dw, db) = wb_mut(grads, slots, w, b);
        layers::deconv_backward(g, params.slot(w), &trace.dec[l], &d, dw, db, Some(&mut din));
        d = din;
    }
    // `d` is now the gradient w.r.t. the decoder input.
    if let (Some((h, gx)), Some([wi, bi, wo, bo])) = (&trace.latent, plan.fc) {
        for (dv, &y) in d.iter_mut().zip(gx) {
            *dv *= act.grad_from_output(y);
        }
        let mut dh = vec![0.0; h.len()];
        let (dw, db) = wb_mut(grads, slots, wo, bo);
        layers::affine_backward(params.slot(wo), h, &d, dw, db, &mut dh);
        for (dv, &y) in dh.iter_mut().zip(h) {
            *dv *= act.grad_from_output(y);
        }
        let top = trace.enc.last().expect("encoder output");
        let mut dtop = vec![0.0; top.len()];
        let (dw, db) = wb_mut(grads, slots, wi, bi);
        layers::affine_backward(params.slot(wi), top, &dh, dw, db, &mut dtop);
        d = dtop;
    }
    for l in (0..plan.geoms.len()).rev() {
        let g = &plan.geoms[l];
        for (dv, &y) in d.iter_mut().zip(&trace.enc[l + 1]) {
            *dv *= act.grad_from_output(y);
        }
        let (w, b) = plan.enc[l];
        let (dw, db) = wb_mut(grads, slots, w, b);
        if l == 0 {
            layers::conv_backward(g, params.slot(w), &trace.enc[0], &d, dw, db, None);
        } else {
            let mut din = vec![0.0; g.in_ch * g.wide * g.wide];
            layers::conv_backward(g, params.slot(w), &trace.enc[l], &d, dw, db, Some(&mut din));
            d = din;
        }
    }
}

fn check_input(params: &AutoencoderParams, input: &Array2<f64>) -> Result<()> {
    let p = params.arch.p;
    if input.dim() != (p, p) {
        return Err(Error::Dimension(format!(
            "autoencoder expects {p}x{p} input, got {:?}",
            input.dim()
        )));
    }
    Ok(())
}

fn flat(input: &Array2<f64>) -> Vec<f64> {
    input.iter().copied().collect()
}

/// Latent vector and reconstruction of one matrix. Without a latent map the
/// latent is the flattened output of the last encoder layer.
pub fn forward(params: &AutoencoderParams, input: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    check_input(params, input)?;
    let trace = run_forward(params, &flat(input));
    let p = params.arch.p;
    let latent = match trace.latent {
        Some((h, _)) => h,
        None => trace.enc.last().expect("encoder output").clone(),
    };
    let recon = Array2::from_shape_vec((p, p), trace.out).expect("output shape");
    Ok((latent, recon))
}

/// Per-sample squared error `‖x − x̂‖²_F / p²` and its gradient, accumulated
/// into `grads` with weight `weight`.
fn sample_loss_grad(params: &AutoencoderParams, input: &[f64], weight: f64, grads: &mut [f64]) -> f64 {
    let trace = run_forward(params, input);
    let n = input.len() as f64;
    let mut loss = 0.0;
    let dout: Vec<f64> = trace
        .out
        .iter()
        .zip(input)
        .map(|(y, x)| {
            let r = y - x;
            loss += r * r;
            2.0 * r * weight / n
        })
        .collect();
    run_backward(params, &trace, dout, grads);
    loss / n
}

/// Mean squared reconstruction error over a batch and its exact gradient.
pub fn loss_and_grad(params: &AutoencoderParams, batch: &[Array2<f64>]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Argument("loss_and_grad on an empty batch".into()));
    }
    for x in batch {
        check_input(params, x)?;
    }
    let inputs: Vec<Vec<f64>> = batch.iter().map(flat).collect();
    let (loss, values) = batch_loss_grad(params, &inputs);
    Ok((loss, Gradients { values }))
}

/// Samples accumulated into one partial gradient buffer.
const GRAD_CHUNK: usize = 4;

/// Fixed-size sample chunks run in parallel and their partial gradients are
/// summed in chunk order, so the result does not depend on scheduling or
/// thread count.
fn batch_loss_grad(params: &AutoencoderParams, inputs: &[Vec<f64>]) -> (f64, Vec<f64>) {
    use rayon::prelude::*;
    let weight = 1.0 / inputs.len() as f64;
    let mut parts: Vec<(f64, Vec<f64>)> = inputs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; params.values.len()];
            let l = chunk.iter().map(|x| sample_loss_grad(params, x, weight, &mut g)).sum::<f64>();
            (l, g)
        })
        .collect();
    let (mut loss, mut total) = parts.remove(0);
    for (l, g) in parts {
        loss += l;
        total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
    }
    (loss * weight, total)
}

/// Mean loss without gradients.
pub fn mean_loss(params: &AutoencoderParams, batch: &[Array2<f64>]) -> Result<f64> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(Error::Argument("mean_loss on an empty batch".into()));
    }
    for x in batch {
        check_input(params, x)?;
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|x| {
            let input = flat(x);
            let out = run_forward(params, &input).out;
            out.iter().zip(&input).map(|(y, v)| (y - v).powi(2)).sum::<f64>() / input.len() as f64
        })
        .collect();
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// `C − reconstruction`, symmetrized, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualConnectome {
    matrix: Array2<f64>,
    pub subject_id: String,
    pub session_label: String,
}

impl ResidualConnectome {
    /// Symmetrize `(m + mᵀ)/2` and zero the diagonal.
    pub fn from_difference(mut m: Array2<f64>, subject_id: impl Into<String>, session_label: impl Into<String>) -> Result<Self> {
        let (r, c) = m.dim();
        if r != c {
            return Err(Error::Dimension(format!("residual must be square, got {r}x{c}")));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("residual has non-finite entries".into()));
        }
        for i in 0..r {
            m[[i, i]] = 0.0;
            for j in i + 1..r {
                let v = 0.5 * (m[[i, j]] + m[[j, i]]);
                m[[i, j]] = v;
                m[[j, i]] = v;
            }
        }
        Ok(Self {
            matrix: m,
            subject_id: subject_id.into(),
            session_label: session_label.into(),
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Residual of a plain matrix (used for Fisher-z inputs).
pub fn residual_matrix(m: &Array2<f64>, params: &AutoencoderParams) -> Result<Array2<f64>> {
    let (_, recon) = forward(params, m)?;
    Ok(ResidualConnectome::from_difference(m - &recon, "", "")?.matrix)
}

pub fn residual(c: &Connectome, params: &AutoencoderParams) -> Result<ResidualConnectome> {
    let (_, recon) = forward(params, c.matrix())?;
    ResidualConnectome::from_difference(c.matrix() - &recon, c.subject_id.clone(), c.session_label.clone())
}
