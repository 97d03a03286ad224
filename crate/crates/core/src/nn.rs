//! Multilayer perceptrons with hand-written reverse-mode gradients.
//!
//! An [`Architecture`] describes layer widths and evaluates any flat parameter
//! vector laid out for it, so the same network can be run with online,
//! target and deployed parameters without copying. [`Mlp`] bundles an
//! architecture with its own parameters.
//!
//! Parameter layout, layer by layer: the weight matrix in row-major order
//! (`out × in`), followed by the bias vector (`out`). Hidden layers use the
//! rectifier `max(0, z)` (zero subgradient at 0); the output layer is linear.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    sizes: Vec<usize>,
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub output: Vec<f64>,
    /// Activation of the final hidden layer (the input itself when the
    /// network has no hidden layer).
    pub feature: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`Architecture::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[l]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input")
    }

    pub fn feature(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2]
    }
}

impl Architecture {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Argument("an MLP needs at least input and output sizes".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::Argument(format!("layer sizes must be positive, got {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec() })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Width of the representation returned as `feature`.
    pub fn feature_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 2]
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Uniform initialization in ±1/√fan_in for weights and biases.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        for w in self.sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                params.push(rng.random_range(-bound..bound));
            }
        }
        params
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Argument(format!(
                "parameter vector has length {}, architecture {:?} needs {}",
                params.len(),
                self.sizes,
                self.param_count()
            )));
        }
        if input.len() != self.input_dim() {
            return Err(Error::Argument(format!(
                "input has dimension {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Forward> {
        let mut trace = self.trace(params, input)?;
        let output = trace.activations.pop().unwrap();
        let feature = trace.activations.pop().unwrap();
        Ok(Forward { output, feature })
    }

    /// Network output only.
    pub fn output(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(params, input)?.output)
    }

    pub fn trace(&self, params: &[f64], input: &[f64]) -> Result<Trace> {
        self.check(params, input)?;
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            offset += (n_in + 1) * n_out;
            let x = &activations[l];
            let hidden = l + 1 < layers;
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let s = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + biases[o];
                    if hidden {
                        s.max(0.0)
                    } else {
                        s
                    }
                })
                .collect();
            activations.push(z);
        }
        Ok(Trace { activations })
    }

    /// Accumulate `∂(output · output_grad)/∂params` into `grads` and return
    /// the gradient with respect to the input.
    pub fn backward(&self, params: &[f64], trace: &Trace, output_grad: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if params.len() != self.param_count() || grads.len() != self.param_count() {
            return Err(Error::Argument("parameter or gradient length does not match architecture".into()));
        }
        if trace.activations.len() != self.sizes.len()
            || trace.activations.iter().zip(&self.sizes).any(|(a, n)| a.len() != *n)
        {
            return Err(Error::Protocol("trace was not produced by this architecture".into()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Argument(format!(
                "output gradient has dimension {}, network outputs {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += (w[0] + 1) * w[1];
        }
        let mut delta = output_grad.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &trace.activations[l];
            // gradient w.r.t. pre-activation: rectifier mask on hidden layers
            if l + 1 < layers {
                for (d, a) in delta.iter_mut().zip(&trace.activations[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (gw, gb) = grads[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let weights = &params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Flat little-endian encoding of `params` with an architecture header:
    /// magic `LSMP`, format version `u32 = 1`, layer count `u32`, each size
    /// `u32`, parameter count `u64`, then the parameters as `f64`.
    pub fn encode(&self, params: &[f64]) -> Result<Vec<u8>> {
        if params.len() != self.param_count() {
            return Err(Error::Argument("parameter vector does not match architecture".into()));
        }
        let mut out = Vec::with_capacity(24 + 4 * self.sizes.len() + 8 * params.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for s in &self.sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    /// Inverse of [`Architecture::encode`].
    pub fn decode(bytes: &[u8]) -> Result<(Self, Vec<f64>)> {
        let bad = |what: &str| Error::Argument(format!("malformed parameter blob: {what}"));
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != BLOB_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        if u32_at(take(4)?) != BLOB_VERSION {
            return Err(bad("unsupported version"));
        }
        let n_layers = u32_at(take(4)?) as usize;
        let mut sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            sizes.push(u32_at(take(4)?) as usize);
        }
        let arch = Architecture::new(&sizes)?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if count != arch.param_count() {
            return Err(bad("parameter count does not match header"));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok((arch, params))
    }
}

const BLOB_MAGIC: &[u8; 4] = b"LSMP";
const BLOB_VERSION: u32 = 1;

/// An architecture together with its parameters and the trace of the last
/// forward pass.
#[derive(Debug, Clone)]
pub struct Mlp {
    arch: Architecture,
    pub params: Vec<f64>,
    last: Option<Trace>,
}

impl Mlp {
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let arch = Architecture::new(sizes)?;
        let params = arch.init(rng);
        Ok(Self { arch, params, last: None })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let arch = Architecture::new(sizes)?;
        if params.len() != arch.param_count() {
            return Err(Error::Argument(format!("expected {} parameters, got {}", arch.param_count(), params.len())));
        }
        Ok(Self { arch, params, last: None })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Evaluate and remember the activations for a following [`Mlp::backward`].
    pub fn forward(&mut self, input: &[f64]) -> Result<Forward> {
        let trace = self.arch.trace(&self.params, input)?;
        let f = Forward { output: trace.output().to_vec(), feature: trace.feature().to_vec() };
        self.last = Some(trace);
        Ok(f)
    }

    /// Gradient of `output · output_grad` with respect to all parameters, at
    /// the input of the most recent forward pass.
    pub fn backward(&self, output_grad: &[f64]) -> Result<Vec<f64>> {
        let trace = self
            .last
            .as_ref()
            .ok_or_else(|| Error::Protocol("backward called without a preceding forward pass".into()))?;
        let mut grads = vec![0.0; self.params.len()];
        self.arch.backward(&self.params, trace, output_grad, &mut grads)?;
        Ok(grads)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.arch.encode(&self.params).expect("own parameters match")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (arch, params) = Architecture::decode(bytes)?;
        Ok(Self { arch, params, last: None })
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, eps: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr, beta1: 0.9, beta2: 0.999, eps }
    }

    /// One bias-corrected update of `params` along `-grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Argument(format!(
                "adam length mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical(format!("non-finite gradient component {i}")));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
