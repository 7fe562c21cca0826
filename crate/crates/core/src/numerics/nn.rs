//! Parameter storage and transformer layers built on the tape.

use rand::{Rng, RngCore};

use crate::error::{FstError, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Glorot/Xavier uniform over `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Ordered list of parameter shapes. The order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

/// Concrete parameter values for a [`ParamLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn init(layout: &ParamLayout, rng: &mut dyn RngCore) -> Self {
        let tensors = layout
            .specs()
            .iter()
            .map(|spec| match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, T::one()),
                Init::XavierUniform => {
                    let fan_in = spec.shape.first().copied().unwrap_or(1);
                    let fan_out = spec.shape.get(1).copied().unwrap_or(1);
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = spec.shape.iter().product();
                    let data = (0..n).map(|_| T::of(rng.random_range(-a..a))).collect();
                    Tensor::new(spec.shape.clone(), data).expect("spec shape")
                }
            })
            .collect();
        ParamStore {
            names: layout.specs().iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    pub fn zeros(layout: &ParamLayout) -> Self {
        ParamStore {
            names: layout.specs().iter().map(|s| s.name.clone()).collect(),
            tensors: layout.specs().iter().map(|s| Tensor::zeros(&s.shape)).collect(),
        }
    }

    /// Builds a store from raw tensors, checking them against `layout`.
    pub fn from_tensors(layout: &ParamLayout, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != layout.len() {
            return Err(FstError::Shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.specs().iter().zip(&tensors) {
            if spec.shape != t.shape() {
                return Err(FstError::Shape(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(ParamStore {
            names: layout.specs().iter().map(|s| s.name.clone()).collect(),
            tensors,
        })
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Copies every tensor whose name also exists in `other` with the same
    /// shape. Returns how many were copied.
    pub fn copy_matching(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if let Some(src) = other.by_name(name) {
                if src.shape() == t.shape() {
                    *t = src.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Records every parameter as a gradient-tracking leaf, in layout order.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundParams {
        BoundParams(
            self.tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), requires_grad))
                .collect(),
        )
    }
}

/// Tape handles of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Optional inverted dropout. A rate of zero or a missing generator makes it
/// the identity.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut dyn RngCore>,
}

impl<'a> Dropout<'a> {
    pub fn disabled() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'a mut dyn RngCore) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn apply<T: Real>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    T::of(1.0 / keep)
                } else {
                    T::zero()
                }
            })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }
}

/// `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: layout.add(format!("{name}.weight"), &[d_in, d_out], Init::XavierUniform),
            bias: layout.add(format!("{name}.bias"), &[d_out], Init::Zeros),
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p.var(self.weight))?;
        tape.add_row(h, p.var(self.bias))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(layout: &mut ParamLayout, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: layout.add(format!("{name}.gamma"), &[d], Init::Ones),
            beta: layout.add(format!("{name}.beta"), &[d], Init::Zeros),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gamma), p.var(self.beta), Self::EPS)
    }
}

/// Output of [`MultiHeadAttention::forward`].
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub out: Var,
    /// Per-head `T_q x T_k` attention weights.
    pub weights: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(layout: &mut ParamLayout, name: &str, d_model: usize, n_heads: usize) -> Self {
        MultiHeadAttention {
            query: Linear::new(layout, &format!("{name}.query"), d_model, d_model),
            key: Linear::new(layout, &format!("{name}.key"), d_model, d_model),
            value: Linear::new(layout, &format!("{name}.value"), d_model, d_model),
            output: Linear::new(layout, &format!("{name}.output"), d_model, d_model),
            n_heads,
        }
    }

    /// Scaled dot-product attention of `q_in` over `kv_in`; keys whose
    /// `key_mask` entry is `false` receive zero weight.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        q_in: Var,
        kv_in: Var,
        key_mask: &[bool],
    ) -> Result<AttentionOutput> {
        let d_model = self.query.d_out;
        if self.n_heads == 0 || !d_model.is_multiple_of(self.n_heads) {
            return Err(FstError::Config(format!(
                "d_model {d_model} is not divisible by {} heads",
                self.n_heads
            )));
        }
        let d_head = d_model / self.n_heads;
        let q = self.query.forward(tape, p, q_in)?;
        let k = self.key.forward(tape, p, kv_in)?;
        let v = self.value.forward(tape, p, kv_in)?;
        let scale = T::of(1.0 / (d_head as f64).sqrt());

        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * d_head, d_head)?;
            let kh = tape.slice_cols(k, h * d_head, d_head)?;
            let vh = tape.slice_cols(v, h * d_head, d_head)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_lastdim(scores, Some(key_mask))?;
            heads.push(tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let out = self.output.forward(tape, p, merged)?;
        Ok(AttentionOutput { out, weights })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(layout: &mut ParamLayout, name: &str, d_model: usize, d_ffn: usize) -> Self {
        FeedForward {
            up: Linear::new(layout, &format!("{name}.up"), d_model, d_ffn),
            down: Linear::new(layout, &format!("{name}.down"), d_ffn, d_model),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, p, x)?;
        let h = tape.gelu(h);
        self.down.forward(tape, p, h)
    }
}

/// Post-norm transformer encoder layer:
/// `x = LN(x + SelfAttn(x)); x = LN(x + FFN(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(layout: &mut ParamLayout, name: &str, d_model: usize, n_heads: usize, d_ffn: usize) -> Self {
        EncoderLayer {
            attention: MultiHeadAttention::new(layout, &format!("{name}.attn"), d_model, n_heads),
            norm1: LayerNorm::new(layout, &format!("{name}.norm1"), d_model),
            ffn: FeedForward::new(layout, &format!("{name}.ffn"), d_model, d_ffn),
            norm2: LayerNorm::new(layout, &format!("{name}.norm2"), d_model),
        }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        x: Var,
        mask: &[bool],
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        let attn = self.attention.forward(tape, p, x, x, mask)?.out;
        let attn = dropout.apply(tape, attn)?;
        let h = tape.add(x, attn)?;
        let h = self.norm1.forward(tape, p, h)?;
        let ff = self.ffn.forward(tape, p, h)?;
        let ff = dropout.apply(tape, ff)?;
        let out = tape.add(h, ff)?;
        self.norm2.forward(tape, p, out)
    }
}

/// Fixed sinusoidal position table of shape `[n, d]`:
/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(...)`.
pub fn sinusoidal_positions<T: Real>(n: usize, d: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(&[n, d]);
    for pos in 0..n {
        let row = out.row_mut(pos);
        for (j, slot) in row.iter_mut().enumerate() {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
            *slot = T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}
