//! Row-encoder / max-pool / head network over spectral features.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::eigen::Spectral;
use super::matrix::N;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SMPLTNET";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    /// Hidden widths of the row encoder; the last is the embedding size.
    pub encoder: Vec<usize>,
    /// Hidden widths of the head before the single output logit.
    pub head: Vec<usize>,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            encoder: vec![64, 64],
            head: vec![64],
        }
    }
}

impl NetDims {
    pub fn embedding(&self) -> usize {
        *self.encoder.last().expect("encoder has at least one layer")
    }
}

/// Dense layer, `w` row-major `out x inp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inp: usize,
    pub out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(inp: usize, out: usize) -> Self {
        Layer {
            inp,
            out,
            w: vec![0.0; inp * out],
            b: vec![0.0; out],
        }
    }

    fn forward(&self, x: &[f64], y: &mut [f64]) {
        for o in 0..self.out {
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            y[o] = self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients and writes the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Layer, dx: &mut [f64]) {
        dx.fill(0.0);
        for o in 0..self.out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            let grow = &mut grad.w[o * self.inp..(o + 1) * self.inp];
            for i in 0..self.inp {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }
}

/// The learned transitivity approximator.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitivityNet {
    dims: NetDims,
    encoder: Vec<Layer>,
    head: Vec<Layer>,
}

fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-layer activations of one row through the encoder.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    /// `acts[0]` is the input row; `acts[l + 1]` the post-ReLU output of layer `l`.
    pub acts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadTrace {
    pub acts: Vec<Vec<f64>>,
    pub logit: f64,
}

impl TransitivityNet {
    pub fn zeros(dims: NetDims) -> Self {
        let mut encoder = Vec::new();
        let mut inp = N;
        for &w in &dims.encoder {
            encoder.push(Layer::zeros(inp, w));
            inp = w;
        }
        let mut head = Vec::new();
        let mut inp = 2 * dims.embedding() + N;
        for &w in &dims.head {
            head.push(Layer::zeros(inp, w));
            inp = w;
        }
        head.push(Layer::zeros(inp, 1));
        TransitivityNet {
            dims,
            encoder,
            head,
        }
    }

    /// He-style uniform initialisation.
    pub fn random<R: Rng>(dims: NetDims, rng: &mut R) -> Self {
        let mut net = TransitivityNet::zeros(dims);
        for layer in net.encoder.iter_mut().chain(net.head.iter_mut()) {
            let bound = (6.0 / layer.inp as f64).sqrt();
            for w in &mut layer.w {
                *w = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder.iter().chain(self.head.iter())
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.encoder.iter_mut().chain(self.head.iter_mut())
    }

    pub fn n_params(&self) -> usize {
        self.layers().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut it = p.iter();
        for l in self.layers_mut() {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().expect("parameter count");
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    /// Rounds every weight to the nearest f32, the precision of the file.
    pub fn round_to_f32(&mut self) {
        for l in self.layers_mut() {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub(crate) fn encode_row(&self, row: &[f64]) -> EncoderTrace {
        let mut acts = vec![row.to_vec()];
        for layer in &self.encoder {
            let mut y = vec![0.0; layer.out];
            layer.forward(acts.last().unwrap(), &mut y);
            relu_in_place(&mut y);
            acts.push(y);
        }
        EncoderTrace { acts }
    }

    pub(crate) fn head_forward(&self, input: Vec<f64>) -> HeadTrace {
        let mut acts = vec![input];
        let last = self.head.len() - 1;
        let mut logit = 0.0;
        for (li, layer) in self.head.iter().enumerate() {
            let mut y = vec![0.0; layer.out];
            layer.forward(acts.last().unwrap(), &mut y);
            if li == last {
                logit = y[0];
            } else {
                relu_in_place(&mut y);
                acts.push(y);
            }
        }
        HeadTrace { acts, logit }
    }

    /// Backpropagates `dlogit` through the head; returns the head input
    /// gradient and accumulates parameter gradients into `grad`.
    pub(crate) fn head_backward(&self, trace: &HeadTrace, dlogit: f64, grad: &mut TransitivityNet) -> Vec<f64> {
        let mut dy = vec![dlogit];
        for li in (0..self.head.len()).rev() {
            let layer = &self.head[li];
            let x = &trace.acts[li];
            let mut dx = vec![0.0; layer.inp];
            layer.backward(x, &dy, &mut grad.head[li], &mut dx);
            if li > 0 {
                // x is the ReLU output of the previous layer
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dy = dx;
        }
        dy
    }

    pub(crate) fn encoder_backward(&self, trace: &EncoderTrace, demb: &[f64], grad: &mut TransitivityNet) {
        let mut dy = demb.to_vec();
        for li in (0..self.encoder.len()).rev() {
            let out = &trace.acts[li + 1];
            for (d, a) in dy.iter_mut().zip(out) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let layer = &self.encoder[li];
            let mut dx = vec![0.0; layer.inp];
            layer.backward(&trace.acts[li], &dy, &mut grad.encoder[li], &mut dx);
            dy = dx;
        }
    }

    /// Output probability for the pair occupying rows 0 and 1 of `v`.
    pub fn forward(&self, spectral: &Spectral) -> f64 {
        let rows = self.embed(spectral);
        sigmoid(self.pooled_logit(&rows, &spectral.values, 0, 1))
    }

    /// Every row's embedding.
    pub(crate) fn embed(&self, spectral: &Spectral) -> Vec<Vec<f64>> {
        (0..N)
            .map(|r| self.encode_row(spectral.row(r)).acts.pop().unwrap())
            .collect()
    }

    /// Head logit with rows `i`, `j` as the target group.
    pub(crate) fn pooled_logit(&self, emb: &[Vec<f64>], values: &[f64], i: usize, j: usize) -> f64 {
        self.head_forward(pooled_input(emb, values, i, j)).logit
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        let mut header = vec![VERSION, self.dims.encoder.len() as u32];
        header.extend(self.dims.encoder.iter().map(|&d| d as u32));
        header.push(self.dims.head.len() as u32);
        header.extend(self.dims.head.iter().map(|&d| d as u32));
        for h in header {
            out.write_all(&h.to_le_bytes())?;
        }
        for l in self.layers() {
            for v in l.w.iter().chain(&l.b) {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::ModelFormat("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic bytes".into()));
        }
        let read_u32 = |input: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            input
                .read_exact(&mut b)
                .map_err(|_| Error::ModelFormat("truncated header".into()))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let read_dims = |input: &mut R| -> Result<Vec<usize>> {
            let n = read_u32(input)? as usize;
            if n > 64 {
                return Err(Error::ModelFormat(format!("implausible layer count {n}")));
            }
            (0..n)
                .map(|_| {
                    let d = read_u32(input)? as usize;
                    if d == 0 || d > 1 << 16 {
                        return Err(Error::ModelFormat(format!("implausible width {d}")));
                    }
                    Ok(d)
                })
                .collect()
        };
        let encoder = read_dims(&mut input)?;
        let head = read_dims(&mut input)?;
        if encoder.is_empty() {
            return Err(Error::ModelFormat("encoder has no layers".into()));
        }
        let mut net = TransitivityNet::zeros(NetDims { encoder, head });
        let mut buf = [0u8; 4];
        for l in net.layers_mut() {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                input
                    .read_exact(&mut buf)
                    .map_err(|_| Error::ModelFormat("truncated weights".into()))?;
                *v = f64::from(f32::from_le_bytes(buf));
            }
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", rest.len())));
        }
        if !net.is_finite() {
            return Err(Error::ModelFormat("non-finite weight".into()));
        }
        Ok(net)
    }
}

/// `[max(e_i, e_j), max over other rows, eigenvalues]`, plus the row that
/// attains each second-group maximum.
pub(crate) fn pooled_input_with_argmax(
    emb: &[Vec<f64>],
    values: &[f64],
    i: usize,
    j: usize,
) -> (Vec<f64>, Vec<usize>) {
    let dim = emb[0].len();
    let mut input = Vec::with_capacity(2 * dim + values.len());
    for d in 0..dim {
        input.push(emb[i][d].max(emb[j][d]));
    }
    let mut arg = vec![usize::MAX; dim];
    for d in 0..dim {
        let mut m = f64::NEG_INFINITY;
        for (r, e) in emb.iter().enumerate() {
            if r != i && r != j && e[d] > m {
                m = e[d];
                arg[d] = r;
            }
        }
        input.push(m);
    }
    input.extend_from_slice(values);
    (input, arg)
}

pub(crate) fn pooled_input(emb: &[Vec<f64>], values: &[f64], i: usize, j: usize) -> Vec<f64> {
    pooled_input_with_argmax(emb, values, i, j).0
}
