//! The encoder-decoder network shared by every variant.
//!
//! All computation is batched over rows: a batch of `B` sequences is padded
//! to a common length and each step works on `B x dim` tensors. Encoder
//! padding is handled by carrying the previous state through padded steps;
//! decoder padding is masked out of the loss.

use rand::Rng;

use crate::attention::{self, SourceMask, ATTN_W, VAR_B1, VAR_B2, VAR_W1, VAR_W2};
use crate::autodiff::{Graph, Var};
use crate::config::{ModelConfig, Variant};
use crate::data::{EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::gaussian::GaussianNode;
use crate::noise::{derive_seed, rng_from, NoiseSource};
use crate::objective;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const SRC_EMBED: &str = "src_embed";
pub const TGT_EMBED: &str = "tgt_embed";
pub const ENC_W: &str = "enc.w";
pub const ENC_B: &str = "enc.b";
pub const DEC_W: &str = "dec.w";
pub const DEC_B: &str = "dec.b";
pub const Z_MEAN_W: &str = "z_mean.w";
pub const Z_MEAN_B: &str = "z_mean.b";
pub const Z_LOGVAR_W: &str = "z_logvar.w";
pub const Z_LOGVAR_B: &str = "z_logvar.b";
pub const INIT_H_W: &str = "init_h.w";
pub const INIT_H_B: &str = "init_h.b";
pub const INIT_C_W: &str = "init_c.w";
pub const INIT_C_B: &str = "init_c.b";
pub const OUT_W: &str = "out.w";

/// Name and shape of every parameter a configuration requires, in a fixed order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(&'static str, [usize; 2])> {
    let (e, h, l) = (cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim);
    let v = cfg.variant;
    let dec_in = e + if v.has_attention() { h } else { 0 };
    let mut layout = vec![
        (SRC_EMBED, [cfg.src_vocab, e]),
        (TGT_EMBED, [cfg.tgt_vocab, e]),
        (ENC_W, [e + h, 4 * h]),
        (ENC_B, [1, 4 * h]),
        (DEC_W, [dec_in + h, 4 * h]),
        (DEC_B, [1, 4 * h]),
    ];
    if v.is_variational() {
        layout.extend([
            (Z_MEAN_W, [h, l]),
            (Z_MEAN_B, [1, l]),
            (Z_LOGVAR_W, [h, l]),
            (Z_LOGVAR_B, [1, l]),
        ]);
    }
    if !v.decoder_starts_from_encoder() {
        layout.extend([
            (INIT_H_W, [l, h]),
            (INIT_H_B, [1, h]),
            (INIT_C_W, [l, h]),
            (INIT_C_B, [1, h]),
        ]);
    }
    if v.has_attention() {
        layout.push((ATTN_W, [h, h]));
    }
    if v.has_variational_attention() {
        layout.extend([
            (VAR_W1, [h, h]),
            (VAR_B1, [1, h]),
            (VAR_W2, [h, h]),
            (VAR_B2, [1, h]),
        ]);
    }
    layout.push((OUT_W, [h, cfg.tgt_vocab]));
    layout
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Per-position source states plus the final recurrent state.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub states: Vec<Var>,
    pub final_hidden: Var,
    pub final_cell: Var,
    pub mask: SourceMask,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
}

/// One LSTM transition with gate order `[input, forget, candidate, output]`.
/// `w` is `(in + H) x 4H` acting on `[x; h]`.
pub fn lstm_step(g: &mut Graph, w: Var, b: Var, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hid = g.value(h).cols();
    let (in_dim, rows) = (g.value(x).cols(), g.value(x).rows());
    let ws = g.shape(w).to_vec();
    if ws != [in_dim + hid, 4 * hid]
        || g.shape(b) != [1, 4 * hid]
        || g.shape(c) != g.shape(h)
        || g.value(h).rows() != rows
    {
        return Err(Error::contract(format!(
            "lstm_step dimensions: x {:?}, h {:?}, c {:?}, w {:?}, b {:?}",
            g.shape(x),
            g.shape(h),
            g.shape(c),
            ws,
            g.shape(b)
        )));
    }
    let xh = g.concat_cols(&[x, h])?;
    let pre = g.matmul(xh, w)?;
    let gates = g.add_row(pre, b)?;
    let i = g.slice_cols(gates, 0, hid)?;
    let f = g.slice_cols(gates, hid, hid)?;
    let cand = g.slice_cols(gates, 2 * hid, hid)?;
    let o = g.slice_cols(gates, 3 * hid, hid)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

fn affine(g: &mut Graph, params: &ParamSet, x: Var, w: &str, b: &str) -> Result<Var> {
    let w = g.param_by_name(params, w)?;
    let b = g.param_by_name(params, b)?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Training batch: decoder inputs are `SOS + target`, targets are `target + EOS`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sources: Vec<Vec<usize>>,
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a (Vec<usize>, Vec<usize>)>) -> Self {
        let mut b = Batch {
            sources: Vec::new(),
            inputs: Vec::new(),
            targets: Vec::new(),
        };
        for (s, t) in pairs {
            b.sources.push(s.clone());
            b.inputs.push(std::iter::once(SOS).chain(t.iter().copied()).collect());
            b.targets.push(t.iter().copied().chain(std::iter::once(EOS)).collect());
        }
        b
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn with_word_dropout(mut self, rate: f64, rng: &mut impl Rng) -> Self {
        for inp in &mut self.inputs {
            *inp = objective::word_dropout(inp, rate, rng);
        }
        self
    }

    fn steps(&self) -> usize {
        self.targets.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn column(seqs: &[Vec<usize>], j: usize) -> Vec<usize> {
        seqs.iter().map(|s| s.get(j).copied().unwrap_or(PAD)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub lambda_kl: f64,
    pub gamma_a: f64,
    /// When false the decoder is fed a zero attention vector.
    pub attention_enabled: bool,
    /// When false KL terms are not built at all.
    pub include_kl: bool,
}

impl ForwardOptions {
    pub fn new(lambda_kl: f64, gamma_a: f64) -> Self {
        ForwardOptions {
            lambda_kl,
            gamma_a,
            attention_enabled: true,
            include_kl: true,
        }
    }
}

/// Loss nodes for one batch. `kl_z` and `kl_attn` are batch means;
/// `kl_attn` is summed over decoder steps.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub rec: Var,
    pub kl_z: Var,
    pub kl_attn: Var,
}

/// How the attention vector is produced at a decoder step.
pub(crate) enum AttentionDraw<'n> {
    /// Posterior mean (deterministic attention, or MAP for variational).
    Mean,
    /// Reparameterized sample using this noise stream.
    Sample(&'n mut dyn NoiseSource),
}

pub(crate) struct StepAttention {
    pub vector: Var,
    pub kl_rows: Option<Var>,
}

impl Model {
    /// Randomly initialized model. Weights are Glorot-uniform, biases zero
    /// except LSTM forget gates (`config.forget_bias`).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(derive_seed(config.seed, 0x1417));
        let mut params = ParamSet::new();
        let h = config.hidden_dim;
        for (name, [rows, cols]) in parameter_layout(&config) {
            let is_bias = rows == 1 && name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
            let mut t = if is_bias {
                Tensor::zeros(&[rows, cols])
            } else {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
                Tensor::matrix(rows, cols, data)?
            };
            if name == ENC_B || name == DEC_B {
                t.data_mut()[h..2 * h].fill(config.forget_bias);
            }
            params.add(name, t)?;
        }
        Ok(Model { config, params })
    }

    /// Wrap existing parameters after checking they match the configuration's layout.
    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::contract(format!(
                "{} expects {} parameters, got {}",
                config.variant,
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in layout {
            let id = params.require(name)?;
            if params.value(id).shape() != shape {
                return Err(Error::Dimension {
                    op: "parameter layout",
                    left: shape.to_vec(),
                    right: params.value(id).shape().to_vec(),
                });
            }
        }
        Ok(Model { config, params })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn embed_target(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let table = g.param_by_name(&self.params, TGT_EMBED)?;
        g.gather_rows(table, ids)
    }

    /// Left-to-right LSTM over a (padded) batch of sources.
    pub fn encode(&self, g: &mut Graph, sources: &[Vec<usize>]) -> Result<EncoderOutput> {
        if sources.is_empty() || sources.iter().any(Vec::is_empty) {
            return Err(Error::input("cannot encode an empty source"));
        }
        let mask = SourceMask::new(sources.iter().map(Vec::len).collect())?;
        let (batch, hid) = (sources.len(), self.config.hidden_dim);
        let table = g.param_by_name(&self.params, SRC_EMBED)?;
        let w = g.param_by_name(&self.params, ENC_W)?;
        let b = g.param_by_name(&self.params, ENC_B)?;
        let mut h = g.constant(Tensor::zeros(&[batch, hid]));
        let mut c = g.constant(Tensor::zeros(&[batch, hid]));
        let mut states = Vec::with_capacity(mask.width());
        for i in 0..mask.width() {
            let ids = Batch::column(sources, i);
            let x = g.gather_rows(table, &ids)?;
            let (h_new, c_new) = lstm_step(g, w, b, x, h, c)?;
            if mask.lengths().iter().all(|&l| i < l) {
                h = h_new;
                c = c_new;
            } else {
                let keep = mask.valid_column(i);
                let hold = keep.map(|v| 1.0 - v);
                let (keep, hold) = (g.constant(keep), g.constant(hold));
                h = blend(g, h_new, h, keep, hold)?;
                c = blend(g, c_new, c, keep, hold)?;
            }
            states.push(h);
        }
        Ok(EncoderOutput {
            states,
            final_hidden: h,
            final_cell: c,
            mask,
        })
    }

    /// `q(z | x)`: affine mean and log-variance heads on the final encoder state.
    pub fn recognize_latent(&self, g: &mut Graph, enc: &EncoderOutput) -> Result<GaussianNode> {
        if !self.variant().is_variational() {
            return Err(Error::contract(format!(
                "{} has no latent variable",
                self.variant()
            )));
        }
        let mean = affine(g, &self.params, enc.final_hidden, Z_MEAN_W, Z_MEAN_B)?;
        let log_var = affine(g, &self.params, enc.final_hidden, Z_LOGVAR_W, Z_LOGVAR_B)?;
        GaussianNode::from_log_var(g, mean, log_var)
    }

    pub fn init_decoder(&self, g: &mut Graph, z: Option<Var>, enc: &EncoderOutput) -> Result<DecoderState> {
        let v = self.variant();
        if z.is_some() != v.is_variational() {
            return Err(Error::contract(format!(
                "{v}: latent sample must be supplied exactly for variational variants"
            )));
        }
        if v.decoder_starts_from_encoder() {
            return Ok(DecoderState {
                hidden: enc.final_hidden,
                cell: enc.final_cell,
            });
        }
        let z = z.expect("checked above");
        let hidden = affine(g, &self.params, z, INIT_H_W, INIT_H_B)?;
        let cell = affine(g, &self.params, z, INIT_C_W, INIT_C_B)?;
        Ok(DecoderState { hidden, cell })
    }

    /// One decoder transition on `[y_{j-1}; a_j]`, returning logits over the target vocabulary.
    pub fn decoder_step(
        &self,
        g: &mut Graph,
        state: DecoderState,
        prev_embedding: Var,
        attention: Option<Var>,
    ) -> Result<(Var, DecoderState)> {
        if attention.is_some() != self.variant().has_attention() {
            return Err(Error::contract(format!(
                "{}: attention vector must be supplied exactly for attentive variants",
                self.variant()
            )));
        }
        let input = match attention {
            Some(a) => g.concat_cols(&[prev_embedding, a])?,
            None => prev_embedding,
        };
        let w = g.param_by_name(&self.params, DEC_W)?;
        let b = g.param_by_name(&self.params, DEC_B)?;
        let (hidden, cell) = lstm_step(g, w, b, input, state.hidden, state.cell)?;
        let out = g.param_by_name(&self.params, OUT_W)?;
        let logits = g.matmul(hidden, out)?;
        Ok((logits, DecoderState { hidden, cell }))
    }

    /// Attention input for the next decoder step, computed from the previous
    /// decoder hidden state. `None` for variants without attention.
    pub(crate) fn attention_input(
        &self,
        g: &mut Graph,
        state: &DecoderState,
        enc: &EncoderOutput,
        prior_mean: Option<Var>,
        draw: AttentionDraw<'_>,
        enabled: bool,
        want_kl: bool,
    ) -> Result<Option<StepAttention>> {
        let v = self.variant();
        if !v.has_attention() {
            return Ok(None);
        }
        if !enabled {
            let rows = enc.mask.batch();
            let zero = g.constant(Tensor::zeros(&[rows, self.config.hidden_dim]));
            return Ok(Some(StepAttention {
                vector: zero,
                kl_rows: None,
            }));
        }
        let w = g.param_by_name(&self.params, ATTN_W)?;
        let sc = attention::scores(g, w, state.hidden, &enc.states)?;
        let alpha = attention::weights(g, sc, &enc.mask)?;
        let a_det = attention::deterministic_vector(g, alpha, &enc.states)?;
        if !v.has_variational_attention() {
            return Ok(Some(StepAttention {
                vector: a_det,
                kl_rows: None,
            }));
        }
        let sampling = matches!(draw, AttentionDraw::Sample(_));
        if !sampling && !want_kl {
            // posterior mean is the deterministic vector itself
            return Ok(Some(StepAttention {
                vector: a_det,
                kl_rows: None,
            }));
        }
        let q = attention::variational_posterior(g, &self.params, a_det)?;
        let vector = match draw {
            AttentionDraw::Mean => q.mean,
            AttentionDraw::Sample(noise) => {
                let eps = noise.draw(enc.mask.batch(), self.config.hidden_dim);
                let eps = g.constant(eps);
                q.sample(g, eps)?
            }
        };
        let kl_rows = if want_kl { Some(q.kl_rows(g, prior_mean)?) } else { None };
        Ok(Some(StepAttention { vector, kl_rows }))
    }

    /// Teacher-forced loss for a batch, drawing z and attention noise from `noise`.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        batch: &Batch,
        noise: &mut dyn NoiseSource,
        opts: ForwardOptions,
    ) -> Result<LossTerms> {
        if batch.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let v = self.variant();
        let rows = batch.len();
        let inv_b = 1.0 / rows as f64;
        let enc = self.encode(g, &batch.sources)?;

        let mut kl_z = g.constant(Tensor::scalar(0.0));
        let z = if v.is_variational() {
            let q = self.recognize_latent(g, &enc)?;
            let eps = g.constant(noise.draw(rows, self.config.latent_dim));
            if opts.include_kl {
                let rows_kl = q.kl_rows(g, None)?;
                let total = g.sum(rows_kl);
                kl_z = g.scale(total, inv_b);
            }
            Some(q.sample(g, eps)?)
        } else {
            None
        };
        let mut state = self.init_decoder(g, z, &enc)?;

        let want_attn_kl = opts.include_kl && v.has_variational_attention() && opts.attention_enabled;
        let prior_mean = if want_attn_kl {
            attention::prior_for(g, v, &enc.states, &enc.mask)?
        } else {
            None
        };

        let steps = batch.steps();
        let mut logits = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps);
        let mut kl_attn: Option<Var> = None;
        for j in 0..steps {
            let step_targets = Batch::column(&batch.targets, j);
            let draw = if v.has_variational_attention() {
                AttentionDraw::Sample(&mut *noise)
            } else {
                AttentionDraw::Mean
            };
            let attn = self.attention_input(g, &state, &enc, prior_mean, draw, opts.attention_enabled, want_attn_kl)?;
            let (attn_vec, kl_rows) = match attn {
                Some(s) => (Some(s.vector), s.kl_rows),
                None => (None, None),
            };
            if let Some(kl_rows) = kl_rows {
                let w: Vec<f64> = step_targets
                    .iter()
                    .map(|&t| if t == PAD { 0.0 } else { inv_b })
                    .collect();
                let w = g.constant(Tensor::column_vector(w));
                let weighted = g.mul(kl_rows, w)?;
                let step_kl = g.sum(weighted);
                kl_attn = Some(match kl_attn {
                    Some(acc) => g.add(acc, step_kl)?,
                    None => step_kl,
                });
            }
            let prev = Batch::column(&batch.inputs, j);
            let emb = self.embed_target(g, &prev)?;
            let (step_logits, next) = self.decoder_step(g, state, emb, attn_vec)?;
            state = next;
            logits.push(step_logits);
            targets.push(step_targets);
        }
        let rec = objective::reconstruction_term(g, &logits, &targets)?;
        let kl_attn = kl_attn.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)));
        let total = if opts.include_kl {
            objective::total_term(g, rec, kl_z, kl_attn, opts.lambda_kl, opts.gamma_a)?
        } else {
            rec
        };
        Ok(LossTerms {
            total,
            rec,
            kl_z,
            kl_attn,
        })
    }
}

fn blend(g: &mut Graph, new: Var, old: Var, keep: Var, hold: Var) -> Result<Var> {
    let a = g.mul_col(new, keep)?;
    let b = g.mul_col(old, hold)?;
    g.add(a, b)
}
