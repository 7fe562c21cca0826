//! The fusion segment transformer.
//!
//! Data flow for one track, with `T = max_segments`:
//!
//! ```text
//! E [T x d_in] --Linear--> +PE --> embedding encoder --> X_emb [T x d_model]
//! SSM(E) [T x T] --Linear--> +PE --> SSM encoder -----> X_ssm [T x d_model]
//! X_contents  = LN(X_emb + CrossAttn(q = X_emb, kv = X_ssm))
//! X_structure = LN(X_ssm + CrossAttn(q = X_ssm, kv = X_emb))
//! G       = sigmoid([X_contents ; X_structure] W_g + b_g)       (per position, per channel)
//! X_fused = G * X_contents + (1 - G) * X_structure
//! logit   = Linear([masked_mean(X_fused) ; masked_max(X_fused)])
//! ```
//!
//! Parameters are serialized in [`FstModel::layout`] order: embedding stream
//! (input projection, then encoder layers), SSM stream (row projection, then
//! encoder layers), fusion parameters, classifier. Within a linear layer the
//! weight (`[in, out]`, row-major) precedes the bias; attention blocks store
//! query, key, value, output projections in that order; encoder layers store
//! attention, norm1, feed-forward (up, down), norm2.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{FstConfig, FusionMode};

use rand::RngCore;

use crate::error::{FstError, Result};
use crate::numerics::nn::{
    sinusoidal_positions, BoundParams, Dropout, EncoderLayer, LayerNorm, Linear, MultiHeadAttention,
    ParamLayout, ParamStore,
};
use crate::numerics::{sigmoid, Gradients, Real, Tape, Tensor, Var};
use crate::ssm::{self_similarity, SegmentEmbeddingSequence};

/// Channel-averaged fusion gate per segment, recorded at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct GateTrace {
    pub track_id: String,
    /// Mean of `G` over channels, one entry per position (padding included).
    pub mean_gate: Vec<f64>,
    pub mask: Vec<bool>,
    pub predicted_label: u8,
}

impl GateTrace {
    /// `(segment_index, mean_gate)` for valid positions only.
    pub fn valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mean_gate
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(|(i, (&g, _))| (i, g))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct CrossModal {
    content_attn: MultiHeadAttention,
    content_norm: LayerNorm,
    structure_attn: MultiHeadAttention,
    structure_norm: LayerNorm,
}

#[derive(Clone, Debug, PartialEq)]
enum Fusion {
    Gated { cross: CrossModal, gate: Linear },
    Concat { proj: Linear },
    XattnOnly { cross: CrossModal },
}

/// Model structure: the configuration plus the parameter layout it implies.
#[derive(Clone, Debug, PartialEq)]
pub struct FstModel {
    config: FstConfig,
    layout: ParamLayout,
    embed_in: Linear,
    embed_layers: Vec<EncoderLayer>,
    ssm_in: Linear,
    ssm_layers: Vec<EncoderLayer>,
    fusion: Fusion,
    classifier: Linear,
}

/// Model-ready input: padded embeddings, their SSM and the validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub track_id: String,
    pub embeddings: Tensor<T>,
    pub ssm: Tensor<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> ModelInput<T> {
    /// `seq` must already be padded or cropped to the model length.
    pub fn from_sequence(seq: &SegmentEmbeddingSequence) -> Result<Self> {
        seq.validate()?;
        if seq.n_valid == 0 {
            return Err(FstError::Contract(format!(
                "track {} has no valid segments",
                seq.track_id
            )));
        }
        let embeddings: Tensor<T> = seq.embeddings.cast();
        let ssm = self_similarity(&embeddings, seq.n_valid)?.values;
        Ok(ModelInput {
            track_id: seq.track_id.clone(),
            embeddings,
            ssm,
            mask: seq.mask(),
        })
    }
}

/// Tape handles of the intermediate representations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub x_emb: Var,
    pub x_ssm: Var,
    pub x_contents: Option<Var>,
    pub x_structure: Option<Var>,
    pub gate: Option<Var>,
    pub fused: Var,
    pub logit: Var,
}

/// Result of a gradient evaluation on one track.
#[derive(Clone, Debug)]
pub struct LossAndGrads<T> {
    pub loss: f64,
    pub logit: f64,
    pub grads: Vec<Tensor<T>>,
}

impl FstModel {
    pub fn new(config: FstConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut layout = ParamLayout::default();

        let embed_in = Linear::new(&mut layout, "embed.input", c.d_in, c.d_model);
        let embed_layers = (0..c.n_layers_embed)
            .map(|i| {
                EncoderLayer::new(
                    &mut layout,
                    &format!("embed.layer{i}"),
                    c.d_model,
                    c.n_heads,
                    c.d_ffn,
                )
            })
            .collect();
        let ssm_in = Linear::new(&mut layout, "ssm.input", c.max_segments, c.d_model);
        let ssm_layers = (0..c.n_layers_ssm)
            .map(|i| {
                EncoderLayer::new(
                    &mut layout,
                    &format!("ssm.layer{i}"),
                    c.d_model,
                    c.n_heads,
                    c.d_ffn,
                )
            })
            .collect();

        let cross = |layout: &mut ParamLayout| CrossModal {
            content_attn: MultiHeadAttention::new(layout, "fusion.content_attn", c.d_model, c.n_heads),
            content_norm: LayerNorm::new(layout, "fusion.content_norm", c.d_model),
            structure_attn: MultiHeadAttention::new(layout, "fusion.structure_attn", c.d_model, c.n_heads),
            structure_norm: LayerNorm::new(layout, "fusion.structure_norm", c.d_model),
        };
        let fusion = match c.fusion_mode {
            FusionMode::Gated => {
                let cross = cross(&mut layout);
                let gate = Linear::new(&mut layout, "fusion.gate", 2 * c.d_model, c.d_model);
                Fusion::Gated { cross, gate }
            }
            FusionMode::XattnOnly => Fusion::XattnOnly {
                cross: cross(&mut layout),
            },
            FusionMode::Concat => Fusion::Concat {
                proj: Linear::new(&mut layout, "fusion.concat", 2 * c.d_model, c.d_model),
            },
        };
        let classifier = Linear::new(&mut layout, "classifier", 2 * c.d_model, 1);

        Ok(FstModel {
            config,
            layout,
            embed_in,
            embed_layers,
            ssm_in,
            ssm_layers,
            fusion,
            classifier,
        })
    }

    pub fn config(&self) -> &FstConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Exact number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layout.numel()
    }

    pub fn init_params<T: Real>(&self, rng: &mut dyn RngCore) -> ParamStore<T> {
        ParamStore::init(&self.layout, rng)
    }

    /// Gate projection `(W_g, b_g)`, in gated mode only.
    pub fn gate_linear(&self) -> Option<&Linear> {
        match &self.fusion {
            Fusion::Gated { gate, .. } => Some(gate),
            _ => None,
        }
    }

    /// Concat projection, in concat mode only.
    pub fn concat_linear(&self) -> Option<&Linear> {
        match &self.fusion {
            Fusion::Concat { proj } => Some(proj),
            _ => None,
        }
    }

    pub fn ssm_projection(&self) -> &Linear {
        &self.ssm_in
    }

    pub fn embed_projection(&self) -> &Linear {
        &self.embed_in
    }

    fn check_input<T: Real>(&self, input: &ModelInput<T>) -> Result<()> {
        let t = self.config.max_segments;
        if input.embeddings.shape() != [t, self.config.d_in] {
            return Err(FstError::Shape(format!(
                "embeddings {:?}, model expects [{t}, {}]",
                input.embeddings.shape(),
                self.config.d_in
            )));
        }
        if input.ssm.shape() != [t, t] {
            return Err(FstError::Shape(format!(
                "SSM {:?}, model expects [{t}, {t}]",
                input.ssm.shape()
            )));
        }
        check_mask(&input.mask, t)
    }

    fn encode<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        projected: Var,
        layers: &[EncoderLayer],
        mask: &[bool],
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        let pe = sinusoidal_positions::<T>(self.config.max_segments, self.config.d_model);
        let pe = tape.constant(pe);
        let mut x = tape.add(projected, pe)?;
        for layer in layers {
            x = layer.forward(tape, p, x, mask, dropout)?;
        }
        Ok(x)
    }

    /// Content stream: input projection, positional encoding, encoder layers.
    pub fn embed_stream_forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        embeddings: Var,
        mask: &[bool],
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        check_mask(mask, self.config.max_segments)?;
        let h = self.embed_in.forward(tape, p, embeddings)?;
        self.encode(tape, p, h, &self.embed_layers, mask, dropout)
    }

    /// Structure stream: each SSM row is projected to `d_model`, then
    /// positional encoding and encoder layers.
    pub fn ssm_stream_forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        ssm: Var,
        mask: &[bool],
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        check_mask(mask, self.config.max_segments)?;
        let h = self.ssm_in.forward(tape, p, ssm)?;
        self.encode(tape, p, h, &self.ssm_layers, mask, dropout)
    }

    fn cross_streams<T: Real>(
        cross: &CrossModal,
        tape: &mut Tape<T>,
        p: &BoundParams,
        x_emb: Var,
        x_ssm: Var,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let c = cross.content_attn.forward(tape, p, x_emb, x_ssm, mask)?.out;
        let c = tape.add(x_emb, c)?;
        let contents = cross.content_norm.forward(tape, p, c)?;
        let s = cross.structure_attn.forward(tape, p, x_ssm, x_emb, mask)?.out;
        let s = tape.add(x_ssm, s)?;
        let structure = cross.structure_norm.forward(tape, p, s)?;
        Ok((contents, structure))
    }

    /// `structure + gate * (contents - structure)`, i.e.
    /// `gate * contents + (1 - gate) * structure`.
    fn blend<T: Real>(tape: &mut Tape<T>, contents: Var, structure: Var, gate: Var) -> Result<Var> {
        let diff = tape.sub(contents, structure)?;
        let weighted = tape.mul(gate, diff)?;
        tape.add(structure, weighted)
    }

    /// Gated cross-modal fusion. Returns `(X_contents, X_structure, G, X_fused)`.
    pub fn cross_modal_fusion<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        x_emb: Var,
        x_ssm: Var,
        mask: &[bool],
    ) -> Result<(Var, Var, Var, Var)> {
        let Fusion::Gated { cross, gate } = &self.fusion else {
            return Err(FstError::Contract(format!(
                "cross_modal_fusion needs gated fusion, model uses {}",
                self.config.fusion_mode
            )));
        };
        let (contents, structure) = Self::cross_streams(cross, tape, p, x_emb, x_ssm, mask)?;
        let both = tape.concat_cols(&[contents, structure])?;
        let g = gate.forward(tape, p, both)?;
        let g = tape.sigmoid(g);
        let fused = Self::blend(tape, contents, structure, g)?;
        Ok((contents, structure, g, fused))
    }

    /// The ablation variants: `concat` and `xattn_only`.
    pub fn fusion_variant_forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        x_emb: Var,
        x_ssm: Var,
        mask: &[bool],
    ) -> Result<Var> {
        match &self.fusion {
            Fusion::Concat { proj } => {
                let both = tape.concat_cols(&[x_emb, x_ssm])?;
                proj.forward(tape, p, both)
            }
            Fusion::XattnOnly { cross } => {
                let (contents, structure) = Self::cross_streams(cross, tape, p, x_emb, x_ssm, mask)?;
                let shape = tape.value(contents).shape().to_vec();
                let half = tape.constant(Tensor::full(&shape, T::of(0.5)));
                Self::blend(tape, contents, structure, half)
            }
            Fusion::Gated { .. } => Err(FstError::Config(
                "gated fusion is not an ablation variant; use cross_modal_fusion".into(),
            )),
        }
    }

    /// Masked mean and masked max pooling, concatenated, then a linear head
    /// to one logit.
    pub fn pool_and_classify<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        fused: Var,
        mask: &[bool],
    ) -> Result<Var> {
        let pooled = self.pool(tape, fused, mask)?;
        self.classifier.forward(tape, p, pooled)
    }

    /// The `[1, 2 * d_model]` pooled vector.
    pub fn pool<T: Real>(&self, tape: &mut Tape<T>, fused: Var, mask: &[bool]) -> Result<Var> {
        let mean = tape.masked_mean_rows(fused, mask)?;
        let max = tape.masked_max_rows(fused, mask)?;
        tape.concat_cols(&[mean, max])
    }

    /// Full forward pass on an already-bound parameter set.
    pub fn forward_on_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        input: &ModelInput<T>,
        dropout: &mut Dropout<'_>,
    ) -> Result<ForwardVars> {
        self.check_input(input)?;
        let e = tape.constant(input.embeddings.clone());
        let s = tape.constant(input.ssm.clone());
        let x_emb = self.embed_stream_forward(tape, p, e, &input.mask, dropout)?;
        let x_ssm = self.ssm_stream_forward(tape, p, s, &input.mask, dropout)?;
        let (x_contents, x_structure, gate, fused) = match self.config.fusion_mode {
            FusionMode::Gated => {
                let (c, s, g, f) = self.cross_modal_fusion(tape, p, x_emb, x_ssm, &input.mask)?;
                (Some(c), Some(s), Some(g), f)
            }
            _ => (
                None,
                None,
                None,
                self.fusion_variant_forward(tape, p, x_emb, x_ssm, &input.mask)?,
            ),
        };
        let logit = self.pool_and_classify(tape, p, fused, &input.mask)?;
        Ok(ForwardVars {
            x_emb,
            x_ssm,
            x_contents,
            x_structure,
            gate,
            fused,
            logit,
        })
    }

    /// Inference on one padded track: the logit and, in gated mode, the gate
    /// trace.
    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        seq: &SegmentEmbeddingSequence,
    ) -> Result<(f64, Option<GateTrace>)> {
        let input = ModelInput::<T>::from_sequence(seq)?;
        self.forward_input(params, &input)
    }

    pub fn forward_input<T: Real>(
        &self,
        params: &ParamStore<T>,
        input: &ModelInput<T>,
    ) -> Result<(f64, Option<GateTrace>)> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let vars = self.forward_on_tape(&mut tape, &p, input, &mut Dropout::disabled())?;
        let logit = tape.value(vars.logit).data()[0].to_f64_lossy();
        let trace = vars.gate.map(|g| {
            let g = tape.value(g);
            GateTrace {
                track_id: input.track_id.clone(),
                mean_gate: (0..g.rows())
                    .map(|r| g.row(r).iter().map(|v| v.to_f64_lossy()).sum::<f64>() / g.cols() as f64)
                    .collect(),
                mask: input.mask.clone(),
                predicted_label: u8::from(sigmoid(logit) >= 0.5),
            }
        });
        Ok((logit, trace))
    }

    /// BCE loss of one track and its gradient with respect to every
    /// parameter, in layout order.
    pub fn loss_and_grads<T: Real>(
        &self,
        params: &ParamStore<T>,
        input: &ModelInput<T>,
        label: u8,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<LossAndGrads<T>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, true);
        let mut dropout = match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => Dropout::new(self.config.dropout, rng),
            _ => Dropout::disabled(),
        };
        let vars = self.forward_on_tape(&mut tape, &p, input, &mut dropout)?;
        let logit = tape.value(vars.logit).data()[0].to_f64_lossy();
        let loss_var = tape.bce_with_logits(vars.logit, label)?;
        let loss = tape.value(loss_var).data()[0].to_f64_lossy();
        if !loss.is_finite() {
            return Err(FstError::NonFinite(format!("loss on track {}", input.track_id)));
        }
        let mut grads: Gradients<T> = tape.backward(loss_var)?;
        let grads = p
            .vars()
            .iter()
            .map(|&v| grads.take(v).expect("parameters are gradient leaves"))
            .collect();
        Ok(LossAndGrads { loss, logit, grads })
    }

    /// BCE loss of one track without gradients.
    pub fn loss<T: Real>(&self, params: &ParamStore<T>, input: &ModelInput<T>, label: u8) -> Result<f64> {
        let (logit, _) = self.forward_input(params, input)?;
        Ok(crate::numerics::bce_with_logits(logit, label as f64))
    }
}

/// Exact number of scalar parameters for `config`.
pub fn param_count(config: &FstConfig) -> Result<usize> {
    Ok(FstModel::new(config.clone())?.param_count())
}

fn check_mask(mask: &[bool], len: usize) -> Result<()> {
    if mask.len() != len {
        return Err(FstError::Shape(format!(
            "mask of {} entries for {len} positions",
            mask.len()
        )));
    }
    let n_valid = mask.iter().take_while(|&&m| m).count();
    if n_valid == 0 {
        return Err(FstError::Contract("mask has no valid position".into()));
    }
    if mask[n_valid..].iter().any(|&m| m) {
        return Err(FstError::Contract("padding mask must be tail-only".into()));
    }
    Ok(())
}
