//! Two-layer perceptron encoder with unit-norm outputs, its exact InfoNCE
//! gradient against a cluster memory bank, SGD, and the EMA "mean net".

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::memory::MemoryBank;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
}

impl EncoderDims {
    pub fn num_params(&self) -> usize {
        self.d_hidden * self.d_in + self.d_hidden + self.d_out * self.d_hidden + self.d_out
    }

    /// `(name, shape)` of every tensor, in storage order.
    pub fn tensors(&self) -> [(&'static str, Vec<usize>); 4] {
        [
            ("w1", vec![self.d_hidden, self.d_in]),
            ("b1", vec![self.d_hidden]),
            ("w2", vec![self.d_out, self.d_hidden]),
            ("b2", vec![self.d_out]),
        ]
    }
}

/// Flat parameter vector laid out as `w1 | b1 | w2 | b2`, weights row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dims: EncoderDims,
    data: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(dims: EncoderDims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.num_params()],
        }
    }

    pub fn from_vec(dims: EncoderDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.num_params() {
            return Err(Error::shape(dims.num_params(), data.len()));
        }
        Ok(Self { dims, data })
    }

    /// Gaussian weights with variance `1 / fan_in`, small random output bias.
    pub fn init(dims: EncoderDims, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dims);
        let s1 = 1.0 / (dims.d_in as f64).sqrt();
        let s2 = 1.0 / (dims.d_hidden as f64).sqrt();
        for w in p.w1_mut() {
            *w = s1 * rng.sample::<f64, _>(StandardNormal);
        }
        for w in p.w2_mut() {
            *w = s2 * rng.sample::<f64, _>(StandardNormal);
        }
        for b in p.b2_mut() {
            *b = 0.01 * rng.sample::<f64, _>(StandardNormal);
        }
        p
    }

    pub fn dims(&self) -> EncoderDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self) -> [usize; 4] {
        let d = self.dims;
        let b1 = d.d_hidden * d.d_in;
        let w2 = b1 + d.d_hidden;
        let b2 = w2 + d.d_out * d.d_hidden;
        [0, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[0]..o[1]]
    }
    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[1]..o[2]]
    }
    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[2]..o[3]]
    }
    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[3]..]
    }
    pub fn w1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[0]..o[1]]
    }
    pub fn b1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[1]..o[2]]
    }
    pub fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[2]..o[3]]
    }
    pub fn b2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[3]..]
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        Ok(())
    }

    /// `theta <- theta * (1 - lr * weight_decay) - lr * grad`.
    pub fn sgd_step(&mut self, grad: &EncoderParams, lr: f64, weight_decay: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config("lr", "must be >= 0"));
        }
        self.check_same_shape(grad)?;
        if let Some(index) = grad.data.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        let shrink = 1.0 - lr * weight_decay;
        for (p, g) in self.data.iter_mut().zip(&grad.data) {
            *p = *p * shrink - lr * g;
        }
        Ok(())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Hidden activations and pre-normalization output of one row.
struct RowTrace {
    hidden: Vec<f64>,
    out: Vec<f64>,
    out_norm: f64,
}

fn forward_row(p: &EncoderParams, x: &[f64], row: usize) -> Result<RowTrace> {
    let d = p.dims;
    let (w1, b1, w2, b2) = (p.w1(), p.b1(), p.w2(), p.b2());
    let hidden: Vec<f64> = (0..d.d_hidden)
        .map(|h| (dot(&w1[h * d.d_in..(h + 1) * d.d_in], x) + b1[h]).tanh())
        .collect();
    let out: Vec<f64> = (0..d.d_out)
        .map(|o| dot(&w2[o * d.d_hidden..(o + 1) * d.d_hidden], &hidden) + b2[o])
        .collect();
    let out_norm = dot(&out, &out).sqrt();
    if !out_norm.is_finite() {
        return Err(Error::NonFinite { row });
    }
    if out_norm == 0.0 {
        return Err(Error::DegenerateEmbedding { row });
    }
    Ok(RowTrace {
        hidden,
        out,
        out_norm,
    })
}

fn check_inputs(p: &EncoderParams, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != p.dims.d_in {
        return Err(Error::shape(
            format!("{} input columns", p.dims.d_in),
            inputs.cols(),
        ));
    }
    if let Some(row) = inputs
        .iter_rows()
        .position(|r| r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite { row });
    }
    Ok(())
}

/// Embeds every input row; output rows have unit L2 norm.
pub fn forward(params: &EncoderParams, inputs: &Matrix) -> Result<Matrix> {
    check_inputs(params, inputs)?;
    let mut out = Matrix::zeros(inputs.rows(), params.dims.d_out);
    for (i, x) in inputs.iter_rows().enumerate() {
        let t = forward_row(params, x, i)?;
        for (dst, v) in out.row_mut(i).iter_mut().zip(&t.out) {
            *dst = v / t.out_norm;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: EncoderParams,
    /// Unit-norm embeddings of the batch, reused for memory updates.
    pub features: Matrix,
}

/// Mean InfoNCE loss of the batch against the memory bank with temperature
/// `tau`, and its exact gradient with respect to the encoder parameters.
/// The bank is a constant.
pub fn loss_and_grad(
    params: &EncoderParams,
    inputs: &Matrix,
    positives: &[usize],
    memory: &MemoryBank,
    tau: f64,
) -> Result<LossOutput> {
    if !(tau > 0.0) {
        return Err(Error::config("tau", "must be > 0"));
    }
    if inputs.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if positives.len() != inputs.rows() {
        return Err(Error::shape(
            format!("{} positive ids", inputs.rows()),
            positives.len(),
        ));
    }
    let k = memory.len();
    if let Some(&bad) = positives.iter().find(|&&p| p >= k) {
        return Err(Error::OutOfRange {
            what: "cluster id",
            index: bad,
            size: k,
        });
    }
    check_inputs(params, inputs)?;
    let reps = memory.reps();
    if reps.cols() != params.dims.d_out {
        return Err(Error::shape(
            format!("memory dim {}", params.dims.d_out),
            reps.cols(),
        ));
    }

    let d = params.dims;
    let batch = inputs.rows() as f64;
    let mut grad = EncoderParams::zeros(d);
    let mut features = Matrix::zeros(inputs.rows(), d.d_out);
    let mut total = 0.0;
    let mut logits = vec![0.0; k];
    let mut d_emb = vec![0.0; d.d_out];
    let mut d_out = vec![0.0; d.d_out];
    let mut d_pre = vec![0.0; d.d_hidden];

    for (i, x) in inputs.iter_rows().enumerate() {
        let t = forward_row(params, x, i)?;
        let emb: Vec<f64> = t.out.iter().map(|v| v / t.out_norm).collect();
        features.row_mut(i).copy_from_slice(&emb);

        for (c, l) in logits.iter_mut().enumerate() {
            *l = dot(&emb, reps.row(c)) / tau;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - logits[positives[i]];

        // dL/demb = (sum_k p_k c_k - c_pos) / (tau * B)
        d_emb.iter_mut().for_each(|v| *v = 0.0);
        for (c, l) in logits.iter().enumerate() {
            let p = (l - log_z).exp();
            for (g, r) in d_emb.iter_mut().zip(reps.row(c)) {
                *g += p * r;
            }
        }
        for (g, r) in d_emb.iter_mut().zip(reps.row(positives[i])) {
            *g = (*g - r) / (tau * batch);
        }

        // Through normalization: dL/dz = (I - e e^T) dL/de / |z|.
        let proj = dot(&d_emb, &emb);
        for o in 0..d.d_out {
            d_out[o] = (d_emb[o] - proj * emb[o]) / t.out_norm;
        }

        {
            let gw2 = grad.w2_mut();
            for o in 0..d.d_out {
                let row = &mut gw2[o * d.d_hidden..(o + 1) * d.d_hidden];
                for (g, h) in row.iter_mut().zip(&t.hidden) {
                    *g += d_out[o] * h;
                }
            }
        }
        for (g, v) in grad.b2_mut().iter_mut().zip(&d_out) {
            *g += v;
        }

        let w2 = params.w2();
        for h in 0..d.d_hidden {
            let mut acc = 0.0;
            for o in 0..d.d_out {
                acc += w2[o * d.d_hidden + h] * d_out[o];
            }
            d_pre[h] = acc * (1.0 - t.hidden[h] * t.hidden[h]);
        }
        {
            let gw1 = grad.w1_mut();
            for h in 0..d.d_hidden {
                let row = &mut gw1[h * d.d_in..(h + 1) * d.d_in];
                for (g, xv) in row.iter_mut().zip(x) {
                    *g += d_pre[h] * xv;
                }
            }
        }
        for (g, v) in grad.b1_mut().iter_mut().zip(&d_pre) {
            *g += v;
        }
    }

    Ok(LossOutput {
        loss: total / batch,
        grad,
        features,
    })
}

/// Temporally averaged copy of an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanNet {
    params: EncoderParams,
    alpha: f64,
}

impl MeanNet {
    /// Starts as an exact copy of `current`.
    pub fn new(current: &EncoderParams, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::config("alpha", "must lie in [0, 1)"));
        }
        Ok(Self {
            params: current.clone(),
            alpha,
        })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `mean <- alpha * mean + (1 - alpha) * current`.
    pub fn update(&mut self, current: &EncoderParams) -> Result<()> {
        self.params.check_same_shape(current)?;
        let a = self.alpha;
        for (m, c) in self.params.data.iter_mut().zip(&current.data) {
            *m = a * *m + (1.0 - a) * c;
        }
        Ok(())
    }
}

/// Step decay: x0.1 every `round(20 * epochs / 50)` epochs (at least 1).
pub fn lr_at_epoch(base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
    let step = ((20.0 * total_epochs as f64 / 50.0).round() as usize).max(1);
    base_lr * 0.1f64.powi((epoch / step) as i32)
}
