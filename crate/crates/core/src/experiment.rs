//! Bypassing experiment: train several variants on the same synthetic
//! one-to-many data and compare latent usage, quality and diversity.

use std::fmt;

use crate::config::{fmt_f64, ModelConfig, TrainConfig, Variant};
use crate::data::{ParallelCorpus, Provenance, SyntheticTaskSpec, TextPair, Vocabulary};
use crate::error::{Error, Result};
use crate::inference::{decode_map_batch, decode_samples_batch, DecodeOptions};
use crate::metrics::{corpus_bleu, Diversity};
use crate::noise::derive_seed;
use crate::seq2seq::Model;
use crate::train::{EpochLog, Trainer};

/// Variants compared by the bypass experiment, in report order.
pub const BYPASS_VARIANTS: [Variant; 6] = [
    Variant::Ved,
    Variant::VedHInit,
    Variant::VedDAttn,
    Variant::VedDAttn2Stage,
    Variant::VedVAttn0,
    Variant::VedVAttnHbar,
];

/// Synthetic data encoded with vocabularies covering every token the task can emit.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub spec: SyntheticTaskSpec,
    pub vocab: Vocabulary,
    pub train: ParallelCorpus,
    pub heldout: ParallelCorpus,
    pub heldout_text: Vec<TextPair>,
}

impl PreparedTask {
    pub fn new(spec: &SyntheticTaskSpec, heldout: usize) -> Result<Self> {
        let (train_text, heldout_text) = spec.generate_split(heldout)?;
        let vocab = Vocabulary::from_tokens((0..spec.vocab_size).map(|i| spec.token_name(i)))?;
        let prov = Provenance::Synthetic(spec.clone());
        Ok(PreparedTask {
            spec: spec.clone(),
            train: ParallelCorpus::from_text(&train_text, &vocab, &vocab, prov.clone())?,
            heldout: ParallelCorpus::from_text(&heldout_text, &vocab, &vocab, prov)?,
            heldout_text,
            vocab,
        })
    }

    /// Model configuration sized to this task's vocabulary.
    pub fn model_config(&self, template: &ModelConfig, variant: Variant, seed: u64) -> ModelConfig {
        ModelConfig {
            variant,
            src_vocab: self.vocab.len(),
            tgt_vocab: self.vocab.len(),
            seed,
            ..template.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: SyntheticTaskSpec,
    pub heldout: usize,
    /// Dimensions and objective settings shared by every run; variant,
    /// vocabulary sizes and seed are filled in per run.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    /// Samples per held-out source.
    pub samples: usize,
    pub seed: u64,
    /// Record validation curves every this many epochs; 0 disables them.
    pub curve_every: usize,
}

impl ExperimentConfig {
    /// Desk-scale defaults on the one-to-many task.
    pub fn desk(seed: u64) -> Self {
        let task = SyntheticTaskSpec::one_to_many(30, 4, 8, 2000, 3, 17);
        let mut model = ModelConfig::new(Variant::Ved, 0, 0).with_dims(16, 24, 8);
        model.anneal.midpoint = 200.0;
        model.anneal.steepness = 0.02;
        ExperimentConfig {
            task,
            heldout: 100,
            model,
            train: TrainConfig {
                batch_size: 50,
                epochs: 25,
                ..TrainConfig::default()
            },
            variants: BYPASS_VARIANTS.to_vec(),
            samples: 10,
            seed,
            curve_every: 0,
        }
    }
}

/// Validation metrics after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub bleu2: f64,
    pub bleu4: f64,
    pub entropy: f64,
    pub dist1: f64,
}

/// Held-out evaluation of one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub map_bleu: [f64; 4],
    /// Per-sample corpus BLEU averaged over samples.
    pub sample_bleu: Option<[f64; 4]>,
    pub diversity: Option<Diversity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRow {
    pub variant: Variant,
    pub seed: u64,
    pub gamma_a: f64,
    pub eval: Evaluation,
    pub final_kl_z: f64,
    pub final_kl_attn: f64,
    pub logs: Vec<EpochLog>,
    pub curve: Vec<CurvePoint>,
}

impl VariantRow {
    /// Sampling BLEU when available, otherwise MAP BLEU.
    pub fn bleu(&self) -> [f64; 4] {
        self.eval.sample_bleu.unwrap_or(self.eval.map_bleu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seed: u64,
    pub gamma_a: f64,
    pub rows: Vec<VariantRow>,
}

impl ExperimentReport {
    pub fn row(&self, variant: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(|r| {
            let e = &r.eval;
            let mut vals: Vec<f64> = e.map_bleu.to_vec();
            vals.extend(e.sample_bleu.iter().flatten());
            if let Some(d) = &e.diversity {
                vals.extend([d.entropy_corpus, d.entropy_per_source_avg, d.dist1, d.dist2]);
            }
            vals.extend([r.final_kl_z, r.final_kl_attn]);
            vals.iter().all(|v| v.is_finite())
        })
    }

    /// Training and validation curves as `key=value` lines.
    pub fn curves(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            for log in &r.logs {
                out.push_str(&format!("variant={} {log}\n", r.variant));
            }
            for p in &r.curve {
                out.push_str(&format!(
                    "variant={} epoch={} val_bleu2={} val_bleu4={} val_entropy={} val_dist1={}\n",
                    r.variant,
                    p.epoch,
                    fmt_f64(p.bleu2),
                    fmt_f64(p.bleu4),
                    fmt_f64(p.entropy),
                    fmt_f64(p.dist1)
                ));
            }
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), fmt_f64)
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "gamma_a = {}", fmt_f64(self.gamma_a))?;
        for r in &self.rows {
            let v = r.variant;
            let e = &r.eval;
            for n in 0..4 {
                writeln!(f, "{v}.map_bleu{} = {}", n + 1, fmt_f64(e.map_bleu[n]))?;
            }
            for n in 0..4 {
                writeln!(f, "{v}.sample_bleu{} = {}", n + 1, fmt_opt(e.sample_bleu.map(|b| b[n])))?;
            }
            let d = e.diversity;
            writeln!(f, "{v}.entropy_corpus = {}", fmt_opt(d.map(|d| d.entropy_corpus)))?;
            writeln!(f, "{v}.entropy_per_source_avg = {}", fmt_opt(d.map(|d| d.entropy_per_source_avg)))?;
            writeln!(f, "{v}.dist1 = {}", fmt_opt(d.map(|d| d.dist1)))?;
            writeln!(f, "{v}.dist2 = {}", fmt_opt(d.map(|d| d.dist2)))?;
            writeln!(f, "{v}.final_kl_z = {}", fmt_f64(r.final_kl_z))?;
            writeln!(f, "{v}.final_kl_attn_sum = {}", fmt_f64(r.final_kl_attn))?;
        }
        Ok(())
    }
}

fn bleu_all(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (n, b) in out.iter_mut().enumerate() {
        *b = corpus_bleu(hyps, refs, n + 1)?;
    }
    Ok(out)
}

/// MAP BLEU, plus sampling BLEU and diversity for variational variants,
/// on the held-out set. `opts` lets the 2-stage variant be evaluated with
/// attention disabled.
pub fn evaluate_model(model: &Model, heldout: &ParallelCorpus, samples: usize, seed: u64, opts: DecodeOptions) -> Result<Evaluation> {
    if heldout.is_empty() {
        return Err(Error::input("held-out set is empty"));
    }
    let sources: Vec<Vec<usize>> = heldout.pairs.iter().map(|p| p.0.clone()).collect();
    let refs: Vec<Vec<usize>> = heldout.pairs.iter().map(|p| p.1.clone()).collect();
    let strip = |t: &[usize]| crate::inference::strip_eos(t).to_vec();
    let map: Vec<Vec<usize>> = decode_map_batch(model, &sources, opts)?.iter().map(|t| strip(t)).collect();
    let map_bleu = bleu_all(&map, &refs)?;
    if !model.variant().is_variational() || samples == 0 {
        return Ok(Evaluation {
            map_bleu,
            sample_bleu: None,
            diversity: None,
        });
    }
    let groups: Vec<Vec<Vec<usize>>> = decode_samples_batch(model, &sources, samples, seed, opts)?
        .into_iter()
        .map(|g| g.iter().map(|s| s.content().to_vec()).collect())
        .collect();
    let mut sample_bleu = [0.0; 4];
    for k in 0..samples {
        let hyps: Vec<Vec<usize>> = groups.iter().map(|g| g[k].clone()).collect();
        for (acc, b) in sample_bleu.iter_mut().zip(bleu_all(&hyps, &refs)?) {
            *acc += b / samples as f64;
        }
    }
    Ok(Evaluation {
        map_bleu,
        sample_bleu: Some(sample_bleu),
        diversity: Some(Diversity::of_samples(&groups)?),
    })
}

/// Train and evaluate one variant on `task`.
pub fn run_variant(cfg: &ExperimentConfig, task: &PreparedTask, variant: Variant, seed: u64) -> Result<VariantRow> {
    let model_cfg = task.model_config(&cfg.model, variant, derive_seed(seed, 0x5eed));
    let gamma_a = model_cfg.gamma_a;
    let mut trainer = Trainer::new(Model::new(model_cfg)?, cfg.train.clone())?;
    let eval_seed = derive_seed(seed, 0xe7a1);
    let mut curve = Vec::new();
    let logs = trainer.fit(&task.train.pairs, |tr, log| {
        if cfg.curve_every > 0 && log.epoch % cfg.curve_every == 0 {
            let opts = DecodeOptions {
                attention_enabled: tr.attention_enabled(),
                ..DecodeOptions::default()
            };
            let e = evaluate_model(tr.model(), &task.heldout, cfg.samples, eval_seed, opts)?;
            let bleu = e.sample_bleu.unwrap_or(e.map_bleu);
            curve.push(CurvePoint {
                epoch: log.epoch,
                bleu2: bleu[1],
                bleu4: bleu[3],
                entropy: e.diversity.map_or(0.0, |d| d.entropy_per_source_avg),
                dist1: e.diversity.map_or(0.0, |d| d.dist1),
            });
        }
        Ok(true)
    })?;
    let opts = DecodeOptions {
        attention_enabled: trainer.attention_enabled(),
        ..DecodeOptions::default()
    };
    let eval = evaluate_model(trainer.model(), &task.heldout, cfg.samples, eval_seed, opts)?;
    let last = logs.last().ok_or_else(|| Error::input("experiment needs at least one epoch"))?;
    Ok(VariantRow {
        variant,
        seed,
        gamma_a,
        eval,
        final_kl_z: last.kl_z,
        final_kl_attn: last.kl_attn_sum,
        curve,
        logs,
    })
}

/// Train every configured variant on identical data and seeds.
pub fn bypass_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let task = PreparedTask::new(&cfg.task, cfg.heldout)?;
    let rows = cfg
        .variants
        .iter()
        .map(|&v| run_variant(cfg, &task, v, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        seed: cfg.seed,
        gamma_a: cfg.model.gamma_a,
        rows,
    })
}

/// One report per attention-KL weight.
pub fn gamma_sweep(cfg: &ExperimentConfig, gammas: &[f64]) -> Result<Vec<ExperimentReport>> {
    gammas
        .iter()
        .map(|&gamma| {
            let mut c = cfg.clone();
            c.model.gamma_a = gamma;
            bypass_experiment(&c)
        })
        .collect()
}
