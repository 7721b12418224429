//! Model variants and hyperparameters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gaussian::PriorKind;
use crate::objective::AnnealSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Deterministic encoder-decoder, no attention.
    Ded,
    DedDAttn,
    /// Variational encoder-decoder; z initializes the decoder.
    Ved,
    /// VED whose decoder starts from the encoder's final state.
    VedHInit,
    VedDAttn,
    /// VED+DAttn with attention zeroed for the first training epochs.
    VedDAttn2Stage,
    /// Variational attention with an `N(0, I)` prior.
    VedVAttn0,
    /// Variational attention with an `N(mean source state, I)` prior.
    VedVAttnHbar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    None,
    Deterministic,
    Variational(PriorKind),
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Ded,
        Variant::DedDAttn,
        Variant::Ved,
        Variant::VedHInit,
        Variant::VedDAttn,
        Variant::VedDAttn2Stage,
        Variant::VedVAttn0,
        Variant::VedVAttnHbar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ded => "ded",
            Variant::DedDAttn => "ded-dattn",
            Variant::Ved => "ved",
            Variant::VedHInit => "ved-hinit",
            Variant::VedDAttn => "ved-dattn",
            Variant::VedDAttn2Stage => "ved-dattn-2stage",
            Variant::VedVAttn0 => "ved-vattn-0",
            Variant::VedVAttnHbar => "ved-vattn-hbar",
        }
    }

    pub fn is_variational(self) -> bool {
        !matches!(self, Variant::Ded | Variant::DedDAttn)
    }

    pub fn attention(self) -> AttentionKind {
        match self {
            Variant::Ded | Variant::Ved | Variant::VedHInit => AttentionKind::None,
            Variant::DedDAttn | Variant::VedDAttn | Variant::VedDAttn2Stage => AttentionKind::Deterministic,
            Variant::VedVAttn0 => AttentionKind::Variational(PriorKind::Standard),
            Variant::VedVAttnHbar => AttentionKind::Variational(PriorKind::FixedMean),
        }
    }

    pub fn has_attention(self) -> bool {
        self.attention() != AttentionKind::None
    }

    pub fn has_variational_attention(self) -> bool {
        matches!(self.attention(), AttentionKind::Variational(_))
    }

    /// Decoder starts from the encoder's final state rather than from z.
    pub fn decoder_starts_from_encoder(self) -> bool {
        matches!(self, Variant::Ded | Variant::DedDAttn | Variant::VedHInit)
    }

    pub fn names() -> String {
        Variant::ALL.map(Variant::name).join(", ")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::input(format!("unknown variant `{s}`; expected one of: {}", Variant::names())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    /// Fixed decode length cap; `None` means `2 * source length + 5`.
    pub max_decode_len: Option<usize>,
    pub gamma_a: f64,
    pub word_dropout: f64,
    pub anneal: AnnealSchedule,
    pub forget_bias: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            variant,
            embed_dim: 32,
            hidden_dim: 32,
            latent_dim: 16,
            src_vocab,
            tgt_vocab,
            max_decode_len: None,
            gamma_a: 0.1,
            word_dropout: 0.25,
            anneal: AnnealSchedule::default(),
            forget_bias: 1.0,
            seed: 0,
        }
    }

    /// The 100-unit LSTM / 100-d latent / 300-d embedding setting.
    pub fn full_scale(variant: Variant, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            embed_dim: 300,
            hidden_dim: 100,
            latent_dim: 100,
            ..Self::new(variant, src_vocab, tgt_vocab)
        }
    }

    pub fn with_dims(mut self, embed: usize, hidden: usize, latent: usize) -> Self {
        self.embed_dim = embed;
        self.hidden_dim = hidden;
        self.latent_dim = latent;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embed_dim,
            self.hidden_dim,
            self.latent_dim,
            self.src_vocab,
            self.tgt_vocab,
        ];
        if dims.contains(&0) {
            return Err(Error::input("all model dimensions must be positive"));
        }
        if self.max_decode_len == Some(0) {
            return Err(Error::input("max decode length must be positive"));
        }
        if !(self.gamma_a >= 0.0 && self.gamma_a.is_finite()) {
            return Err(Error::input(format!("gamma_a must be >= 0, got {}", self.gamma_a)));
        }
        if !(0.0..=1.0).contains(&self.word_dropout) {
            return Err(Error::input(format!(
                "word dropout must be in [0, 1], got {}",
                self.word_dropout
            )));
        }
        self.anneal.validate()
    }

    pub fn decode_len_for(&self, src_len: usize) -> usize {
        self.max_decode_len.unwrap_or(2 * src_len + 5)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("variant".into(), self.variant.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("hidden_dim".into(), self.hidden_dim.to_string()),
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("src_vocab".into(), self.src_vocab.to_string()),
            ("tgt_vocab".into(), self.tgt_vocab.to_string()),
            (
                "max_decode_len".into(),
                self.max_decode_len.map_or("auto".into(), |v| v.to_string()),
            ),
            ("gamma_a".into(), fmt_f64(self.gamma_a)),
            ("word_dropout".into(), fmt_f64(self.word_dropout)),
            ("kl_k".into(), fmt_f64(self.anneal.steepness)),
            ("kl_s0".into(), fmt_f64(self.anneal.midpoint)),
            ("forget_bias".into(), fmt_f64(self.forget_bias)),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = ModelConfig {
            variant: kv_get(map, "variant")?.parse()?,
            embed_dim: kv_parse(map, "embed_dim")?,
            hidden_dim: kv_parse(map, "hidden_dim")?,
            latent_dim: kv_parse(map, "latent_dim")?,
            src_vocab: kv_parse(map, "src_vocab")?,
            tgt_vocab: kv_parse(map, "tgt_vocab")?,
            max_decode_len: match kv_get(map, "max_decode_len")? {
                "auto" => None,
                _ => Some(kv_parse(map, "max_decode_len")?),
            },
            gamma_a: kv_parse(map, "gamma_a")?,
            word_dropout: kv_parse(map, "word_dropout")?,
            anneal: AnnealSchedule {
                steepness: kv_parse(map, "kl_k")?,
                midpoint: kv_parse(map, "kl_s0")?,
            },
            forget_bias: kv_parse(map, "forget_bias")?,
            seed: kv_parse(map, "seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Epochs trained with attention zeroed (2-stage variant only).
    pub two_stage_epochs: usize,
    /// Reparameterized samples per sequence when estimating the expected
    /// reconstruction loss.
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            lr_decay: 0.95,
            batch_size: 100,
            epochs: 10,
            clip_norm: Some(5.0),
            two_stage_epochs: 6,
            mc_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::input("learning rate and decay must be positive"));
        }
        if self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::input("batch size and sample count must be positive"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::input("clip norm must be positive"));
        }
        Ok(())
    }

    /// `lr * lr_decay^epoch`
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("lr".into(), fmt_f64(self.lr)),
            ("lr_decay".into(), fmt_f64(self.lr_decay)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            (
                "clip_norm".into(),
                self.clip_norm.map_or("none".into(), fmt_f64),
            ),
            ("two_stage_epochs".into(), self.two_stage_epochs.to_string()),
            ("mc_samples".into(), self.mc_samples.to_string()),
        ]
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = TrainConfig {
            lr: kv_parse(map, "lr")?,
            lr_decay: kv_parse(map, "lr_decay")?,
            batch_size: kv_parse(map, "batch_size")?,
            epochs: kv_parse(map, "epochs")?,
            clip_norm: match kv_get(map, "clip_norm")? {
                "none" => None,
                _ => Some(kv_parse(map, "clip_norm")?),
            },
            two_stage_epochs: kv_parse(map, "two_stage_epochs")?,
            mc_samples: kv_parse(map, "mc_samples")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn kv_get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::input(format!("missing key `{key}`")))
}

pub(crate) fn kv_parse<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = kv_get(map, key)?;
    raw.parse()
        .map_err(|_| Error::input(format!("bad value {raw:?} for `{key}`")))
}
