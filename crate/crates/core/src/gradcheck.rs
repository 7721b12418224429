//! Central finite-difference checking of tape gradients.

use crate::autodiff::{Graph, Var};
use crate::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::noise::GaussianNoise;
use crate::params::ParamSet;
use crate::seq2seq::{Batch, ForwardOptions, Model};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is below this magnitude are judged on absolute error
    /// `tolerance * floor`.
    pub floor: f64,
    /// Negate the analytic gradient of this parameter before comparing (fault injection).
    pub flip_sign_of: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-5,
            floor: 1e-4,
            flip_sign_of: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compare backward gradients of `f` against central differences for every
/// element of every parameter in `params`.
///
/// `f` builds a scalar loss on a fresh graph. It must be deterministic: it is
/// evaluated twice at the base point and a mismatch is a contract error.
pub fn grad_check<F>(params: &ParamSet, mut f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet, &mut Graph) -> Result<Var>,
{
    if cfg.step <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut work = params.clone();
    work.zero_grads();
    let base = {
        let mut g = Graph::new();
        let loss = f(&work, &mut g)?;
        g.backward_into(loss, &mut work)?;
        g.value(loss).item()
    };
    let mut eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(ps, &mut g)?;
        Ok(g.value(loss).item())
    };
    let again = eval(&work)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::contract(format!(
            "function is not deterministic: {base} vs {again} at the same point"
        )));
    }

    let mut reports = Vec::with_capacity(work.len());
    for id in params.ids() {
        let name = params.name(id).to_string();
        let flip = cfg.flip_sign_of.as_deref() == Some(name.as_str());
        let analytic: Vec<f64> = work
            .grad(id)
            .data()
            .iter()
            .map(|&g| if flip { -g } else { g })
            .collect();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut worst = 0;
        for (idx, &a) in analytic.iter().enumerate() {
            let orig = work.value(id).data()[idx];
            work.value_mut(id).data_mut()[idx] = orig + cfg.step;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[idx] = orig - cfg.step;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let rel = relative_error(a, numeric, cfg.floor);
            if rel > max_rel || !rel.is_finite() {
                max_rel = if rel.is_finite() { rel } else { f64::INFINITY };
                worst = idx;
            }
            max_abs = max_abs.max((a - numeric).abs());
        }
        reports.push(ParamCheck {
            name,
            elements: analytic.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            worst_index: worst,
            passed: max_rel <= cfg.tolerance,
        });
    }
    Ok(GradCheckReport {
        loss: base,
        tolerance: cfg.tolerance,
        params: reports,
    })
}

/// Gradient check of the full training objective for one variant at
/// hidden 8, embed 8, latent 4 and vocabulary 12, on a fixed two-pair batch
/// with frozen noise. Both KL terms are active.
pub fn model_grad_check(variant: Variant, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut config = ModelConfig::new(variant, 12, 12).with_dims(8, 8, 4);
    config.seed = 20;
    let model = Model::new(config.clone())?;
    let pairs = vec![(vec![4, 7, 9, 5], vec![9, 11, 4]), (vec![6, 10], vec![10, 6, 8, 5, 7])];
    let batch = Batch::from_pairs(&pairs);
    let opts = ForwardOptions::new(0.7, 0.3);
    let mut probe = model.clone();
    grad_check(
        &model.params,
        |ps, g| {
            probe.params.clone_from(ps);
            let terms = probe.batch_loss(g, &batch, &mut GaussianNoise::new(99), opts)?;
            Ok(terms.total)
        },
        cfg,
    )
}
