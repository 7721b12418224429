//! Training objective: reconstruction NLL plus annealed KL terms.
//!
//! `J = rec + lambda * (kl_z + gamma_a * sum_j kl_a_j)`, with a single
//! `lambda` shared by both KL terms.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::data::{PAD, SOS, UNK};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Logistic KL weight `1 / (1 + exp(-k (step - s0)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub steepness: f64,
    pub midpoint: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            steepness: 0.0025,
            midpoint: 2500.0,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.steepness > 0.0) || !self.midpoint.is_finite() {
            return Err(Error::input("annealing needs k > 0 and a finite midpoint"));
        }
        Ok(())
    }

    pub fn lambda(&self, step: u64) -> f64 {
        anneal_lambda(self, step)
    }
}

pub fn anneal_lambda(schedule: &AnnealSchedule, step: u64) -> f64 {
    1.0 / (1.0 + (-schedule.steepness * (step as f64 - schedule.midpoint)).exp())
}

/// Replace each decoder-input token except a leading SOS with UNK with
/// probability `rate`. Padding is left alone.
pub fn word_dropout(tokens: &[usize], rate: f64, rng: &mut impl Rng) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let eligible = !(i == 0 && t == SOS) && t != PAD;
            if eligible && rate > 0.0 && (rate >= 1.0 || rng.random::<f64>() < rate) {
                UNK
            } else {
                t
            }
        })
        .collect()
}

/// Masked NLL on a graph: `step_logits[j]` is `B x V`, `step_targets[j][b]`
/// the target id of row `b` at step `j` (`PAD` rows are excluded). Summed
/// over steps and averaged over the `B` sequences.
pub fn reconstruction_term(g: &mut Graph, step_logits: &[Var], step_targets: &[Vec<usize>]) -> Result<Var> {
    if step_logits.len() != step_targets.len() || step_logits.is_empty() {
        return Err(Error::contract(format!(
            "reconstruction loss over {} logit steps and {} target steps",
            step_logits.len(),
            step_targets.len()
        )));
    }
    let batch = g.value(step_logits[0]).rows();
    let mut total: Option<Var> = None;
    for (&logits, targets) in step_logits.iter().zip(step_targets) {
        if targets.len() != g.value(logits).rows() || targets.len() != batch {
            return Err(Error::contract("target rows do not match logit rows"));
        }
        let weights: Vec<f64> = targets
            .iter()
            .map(|&t| if t == PAD { 0.0 } else { -1.0 / batch as f64 })
            .collect();
        if weights.iter().all(|&w| w == 0.0) {
            continue;
        }
        let picks: Vec<usize> = targets.iter().map(|&t| if t == PAD { 0 } else { t }).collect();
        let logp = g.log_softmax_last_dim(logits);
        let picked = g.pick_cols(logp, &picks)?;
        let w = g.constant(Tensor::column_vector(weights));
        let weighted = g.mul(picked, w)?;
        let step = g.sum(weighted);
        total = Some(match total {
            Some(t) => g.add(t, step)?,
            None => step,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0))))
}

/// Value-level reconstruction loss over per-step logits.
pub fn reconstruction_loss(step_logits: &[Tensor], step_targets: &[Vec<usize>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = step_logits.iter().map(|t| g.constant(t.clone())).collect();
    let rec = reconstruction_term(&mut g, &vars, step_targets)?;
    Ok(g.value(rec).item())
}

/// `rec + lambda * (kl_z + gamma_a * kl_attn_sum)` on a graph.
pub fn total_term(g: &mut Graph, rec: Var, kl_z: Var, kl_attn_sum: Var, lambda: f64, gamma_a: f64) -> Result<Var> {
    let attn = g.scale(kl_attn_sum, gamma_a);
    let kl = g.add(kl_z, attn)?;
    let weighted = g.scale(kl, lambda);
    g.add(rec, weighted)
}

pub fn total_loss(rec: f64, kl_z: f64, kl_attn: &[f64], lambda: f64, gamma_a: f64) -> f64 {
    let attn: f64 = kl_attn.iter().sum();
    rec + lambda * (kl_z + gamma_a * attn)
}
