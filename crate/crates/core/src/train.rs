//! Mini-batch training loop.

use std::fmt;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::config::{fmt_f64, ModelConfig, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, rng_from, GaussianNoise};
use crate::optim::Adam;
use crate::seq2seq::{Batch, ForwardOptions, Model};

/// Epoch-averaged training statistics. Loss terms are means over the epoch's batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub lambda_kl: f64,
    pub rec_loss: f64,
    pub kl_z: f64,
    pub kl_attn_sum: f64,
    pub total: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} step={} lr={} lambda_kl={} rec_loss={} kl_z={} kl_attn_sum={} total={}",
            self.epoch,
            self.step,
            fmt_f64(self.lr),
            fmt_f64(self.lambda_kl),
            fmt_f64(self.rec_loss),
            fmt_f64(self.kl_z),
            fmt_f64(self.kl_attn_sum),
            fmt_f64(self.total)
        )
    }
}

/// Loss values from one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub lambda_kl: f64,
    pub rec: f64,
    pub kl_z: f64,
    pub kl_attn: f64,
    pub total: f64,
    pub grad_norm: f64,
}

pub struct Trainer {
    model: Model,
    config: TrainConfig,
    optimizer: Adam,
    noise: GaussianNoise,
    dropout_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    step: u64,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let seed = model.config.seed;
        let optimizer = Adam::new(&model.params, config.clip_norm);
        Ok(Trainer {
            noise: GaussianNoise::new(derive_seed(seed, 1)),
            dropout_rng: rng_from(derive_seed(seed, 2)),
            shuffle_rng: rng_from(derive_seed(seed, 3)),
            model,
            config,
            optimizer,
            step: 0,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Whether attention is fed to the decoder in the current epoch.
    pub fn attention_enabled(&self) -> bool {
        self.model.variant() != Variant::VedDAttn2Stage || self.epoch >= self.config.two_stage_epochs
    }

    /// Options the schedule prescribes for the next step.
    pub fn scheduled_options(&self) -> ForwardOptions {
        let cfg = &self.model.config;
        let mut opts = ForwardOptions::new(cfg.anneal.lambda(self.step), cfg.gamma_a);
        opts.attention_enabled = self.attention_enabled();
        opts
    }

    /// One optimizer update on `batch` (word dropout applied here) with explicit options.
    pub fn train_step(&mut self, batch: &Batch, opts: ForwardOptions, lr: f64) -> Result<StepStats> {
        let batch = batch.clone().with_word_dropout(self.model.config.word_dropout, &mut self.dropout_rng);
        let samples = self.config.mc_samples;
        let mut g = Graph::new();
        let mut sums = [0.0; 4];
        let mut total = None;
        for _ in 0..samples {
            let terms = self.model.batch_loss(&mut g, &batch, &mut self.noise, opts)?;
            for (acc, v) in sums.iter_mut().zip([terms.rec, terms.kl_z, terms.kl_attn, terms.total]) {
                *acc += g.value(v).item();
            }
            total = Some(match total {
                Some(t) => g.add(t, terms.total)?,
                None => terms.total,
            });
        }
        let inv = 1.0 / samples as f64;
        let loss = g.scale(total.expect("at least one sample"), inv);
        let [rec, kl_z, kl_attn, tot] = sums.map(|s| s * inv);
        if !tot.is_finite() {
            return Err(Error::Divergence {
                epoch: self.epoch,
                step: self.step,
                detail: format!("rec={rec} kl_z={kl_z} kl_attn={kl_attn} total={tot}"),
            });
        }
        g.backward_into(loss, &mut self.model.params)?;
        let grad_norm = self.optimizer.step(&mut self.model.params, lr).map_err(|e| Error::Divergence {
            epoch: self.epoch,
            step: self.step,
            detail: e.to_string(),
        })?;
        self.step += 1;
        Ok(StepStats {
            lambda_kl: opts.lambda_kl,
            rec,
            kl_z,
            kl_attn,
            total: tot,
            grad_norm,
        })
    }

    /// One pass over `pairs` in shuffled mini-batches.
    pub fn run_epoch(&mut self, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<EpochLog> {
        if pairs.is_empty() {
            return Err(Error::input("training corpus is empty"));
        }
        let lr = self.config.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        let mut lambda = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = Batch::from_pairs(chunk.iter().map(|&i| &pairs[i]));
            let opts = self.scheduled_options();
            let s = self.train_step(&batch, opts, lr)?;
            for (acc, v) in sums.iter_mut().zip([s.rec, s.kl_z, s.kl_attn, s.total]) {
                *acc += v;
            }
            lambda = s.lambda_kl;
            batches += 1;
        }
        let n = batches as f64;
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            step: self.step,
            lr,
            lambda_kl: lambda,
            rec_loss: sums[0] / n,
            kl_z: sums[1] / n,
            kl_attn_sum: sums[2] / n,
            total: sums[3] / n,
        })
    }

    /// Train for the configured number of epochs. `on_epoch` sees each log and
    /// may stop training early by returning `false`.
    pub fn fit<F>(&mut self, pairs: &[(Vec<usize>, Vec<usize>)], mut on_epoch: F) -> Result<Vec<EpochLog>>
    where
        F: FnMut(&Trainer, &EpochLog) -> Result<bool>,
    {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let log = self.run_epoch(pairs)?;
            let keep_going = on_epoch(self, &log)?;
            logs.push(log);
            if !keep_going {
                break;
            }
        }
        Ok(logs)
    }
}

/// Build a model from `model_config` and train it on `pairs`.
pub fn train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    pairs: &[(Vec<usize>, Vec<usize>)],
) -> Result<(Model, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(Model::new(model_config)?, train_config)?;
    let logs = trainer.fit(pairs, |_, _| Ok(true))?;
    Ok((trainer.into_model(), logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(variant: Variant) -> (ModelConfig, TrainConfig) {
        let mut m = ModelConfig::new(variant, 10, 10).with_dims(8, 8, 4);
        m.seed = 5;
        let t = TrainConfig {
            batch_size: 2,
            epochs: 3,
            ..TrainConfig::default()
        };
        (m, t)
    }

    fn pairs() -> Vec<(Vec<usize>, Vec<usize>)> {
        vec![
            (vec![4, 5, 6], vec![6, 5, 4]),
            (vec![7, 8], vec![8, 7]),
            (vec![9, 4, 5, 6], vec![6, 5, 4, 9]),
        ]
    }

    #[test]
    fn log_line_format() {
        let log = EpochLog {
            epoch: 1,
            step: 10,
            lr: 0.005,
            lambda_kl: 0.5,
            rec_loss: 2.0,
            kl_z: 0.25,
            kl_attn_sum: 0.0,
            total: 2.125,
        };
        assert_eq!(
            log.to_string(),
            "epoch=1 step=10 lr=0.005 lambda_kl=0.5 rec_loss=2.0 kl_z=0.25 kl_attn_sum=0.0 total=2.125"
        );
    }

    #[test]
    fn same_seed_same_logs() {
        let (m, t) = tiny_cfg(Variant::VedVAttnHbar);
        let a = train(m.clone(), t.clone(), &pairs()).unwrap();
        let b = train(m, t, &pairs()).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        let (m, t) = tiny_cfg(Variant::Ded);
        let (_, logs) = train(m, t, &pairs()).unwrap();
        for log in &logs {
            assert_eq!(log.lr, 0.005 * 0.95f64.powi(log.epoch as i32 - 1));
        }
    }

    #[test]
    fn two_stage_switches_attention_on() {
        let (m, mut t) = tiny_cfg(Variant::VedDAttn2Stage);
        t.two_stage_epochs = 2;
        let mut trainer = Trainer::new(Model::new(m).unwrap(), t).unwrap();
        let mut seen = Vec::new();
        trainer
            .fit(&pairs(), |tr, _| {
                seen.push(tr.attention_enabled());
                Ok(true)
            })
            .unwrap();
        assert_eq!(seen, vec![false, true, true]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let (m, t) = tiny_cfg(Variant::Ded);
        assert!(matches!(train(m, t, &[]), Err(Error::Input(_))));
    }

    #[test]
    fn multi_sample_estimate_trains() {
        let (m, mut t) = tiny_cfg(Variant::Ved);
        t.mc_samples = 3;
        let (_, logs) = train(m, t, &pairs()).unwrap();
        assert!(logs.iter().all(|l| l.total.is_finite()));
    }
}
