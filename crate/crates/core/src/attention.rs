//! Bilinear attention and its variational counterpart.
//!
//! Scores are `score_ji = <W h_j^tar, h_i^src>`, normalized by a softmax
//! over source positions; the deterministic attention vector is the
//! weighted sum of source states. The variational posterior keeps that
//! vector as its mean and learns a per-dimension standard deviation through
//! a tanh layer followed by a linear log-variance layer.

use crate::autodiff::{Graph, Var};
use crate::config::{AttentionKind, Variant};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianNode, PriorKind};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const ATTN_W: &str = "attn.w";
pub const VAR_W1: &str = "attn_var.w1";
pub const VAR_B1: &str = "attn_var.b1";
pub const VAR_W2: &str = "attn_var.w2";
pub const VAR_B2: &str = "attn_var.b2";

/// Added to the scores of padded source positions before the softmax.
pub const MASK_FILL: f64 = -1e9;

/// Valid lengths of a padded source batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMask {
    lengths: Vec<usize>,
    width: usize,
}

impl SourceMask {
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::input("source batch must be non-empty with non-empty rows"));
        }
        let width = *lengths.iter().max().expect("non-empty");
        Ok(SourceMask { lengths, width })
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_padded(&self) -> bool {
        self.lengths.iter().any(|&l| l < self.width)
    }

    /// `B x 1` column: 1 where position `i` is real, else 0.
    pub fn valid_column(&self, i: usize) -> Tensor {
        Tensor::column_vector(self.lengths.iter().map(|&l| if i < l { 1.0 } else { 0.0 }).collect())
    }

    /// `B x width` additive score mask, `None` when nothing is padded.
    pub fn additive(&self) -> Option<Tensor> {
        if !self.is_padded() {
            return None;
        }
        let mut data = Vec::with_capacity(self.batch() * self.width);
        for &l in &self.lengths {
            data.extend((0..self.width).map(|i| if i < l { 0.0 } else { MASK_FILL }));
        }
        Some(Tensor::matrix(self.batch(), self.width, data).expect("mask shape"))
    }
}

/// Unnormalized scores `B x |x|`.
pub fn scores(g: &mut Graph, w: Var, h_tar: Var, states: &[Var]) -> Result<Var> {
    let (ws, hs) = (g.shape(w).to_vec(), g.shape(h_tar).to_vec());
    if ws.len() != 2 || hs.len() != 2 || ws[1] != hs[1] {
        return Err(Error::Dimension {
            op: "attention scores",
            left: ws,
            right: hs,
        });
    }
    if states.is_empty() {
        return Err(Error::contract("attention over zero source states"));
    }
    // rows of W h_tar, one per batch row
    let projected = g.matmul_t(h_tar, w)?;
    let mut cols = Vec::with_capacity(states.len());
    for &s in states {
        let prod = g.mul(projected, s)?;
        cols.push(g.row_sum(prod));
    }
    g.concat_cols(&cols)
}

/// Masked softmax over source positions.
pub fn weights(g: &mut Graph, scores: Var, mask: &SourceMask) -> Result<Var> {
    let masked = match mask.additive() {
        Some(m) => {
            if m.shape() != g.shape(scores) {
                return Err(Error::Dimension {
                    op: "attention mask",
                    left: m.shape().to_vec(),
                    right: g.shape(scores).to_vec(),
                });
            }
            let m = g.constant(m);
            g.add(scores, m)?
        }
        None => scores,
    };
    Ok(g.softmax_last_dim(masked))
}

/// `a_j = sum_i alpha_ji h_i^src`.
pub fn deterministic_vector(g: &mut Graph, weights: Var, states: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (i, &s) in states.iter().enumerate() {
        let alpha_i = g.slice_cols(weights, i, 1)?;
        let term = g.mul_col(s, alpha_i)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::contract("attention over zero source states"))
}

/// Posterior over `a_j` built from the deterministic vector. The mean node
/// is `a_det` itself.
pub fn variational_posterior(g: &mut Graph, params: &ParamSet, a_det: Var) -> Result<GaussianNode> {
    let missing: Vec<&str> = [VAR_W1, VAR_B1, VAR_W2, VAR_B2]
        .into_iter()
        .filter(|n| !params.contains(n))
        .collect();
    if !missing.is_empty() {
        return Err(Error::contract(format!(
            "variational attention needs variance-layer parameters, missing {missing:?}"
        )));
    }
    let w1 = g.param_by_name(params, VAR_W1)?;
    let b1 = g.param_by_name(params, VAR_B1)?;
    let w2 = g.param_by_name(params, VAR_W2)?;
    let b2 = g.param_by_name(params, VAR_B2)?;
    let pre = g.matmul(a_det, w1)?;
    let pre = g.add_row(pre, b1)?;
    let hidden = g.tanh(pre)?;
    let lv = g.matmul(hidden, w2)?;
    let log_var = g.add_row(lv, b2)?;
    GaussianNode::from_log_var(g, a_det, log_var)
}

/// Masked mean of the source states, `B x H`.
pub fn mean_source_state(g: &mut Graph, states: &[Var], mask: &SourceMask) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (i, &s) in states.iter().enumerate() {
        let w: Vec<f64> = mask
            .lengths()
            .iter()
            .map(|&l| if i < l { 1.0 / l as f64 } else { 0.0 })
            .collect();
        let w = g.constant(Tensor::column_vector(w));
        let term = g.mul_col(s, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::contract("mean of zero source states"))
}

/// Prior mean for the attention posterior: `None` for the standard prior,
/// the (differentiable) mean source state for the fixed-mean prior.
pub fn prior_for(g: &mut Graph, variant: Variant, states: &[Var], mask: &SourceMask) -> Result<Option<Var>> {
    match variant.attention() {
        AttentionKind::Variational(PriorKind::Standard) => Ok(None),
        AttentionKind::Variational(PriorKind::FixedMean) => Ok(Some(mean_source_state(g, states, mask)?)),
        _ => Err(Error::contract(format!(
            "{variant} has no variational attention prior"
        ))),
    }
}

/// Value snapshot of one step's attention distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub scores: Tensor,
    pub alpha: Tensor,
}

impl AttentionWeights {
    pub fn from_graph(g: &Graph, scores: Var, alpha: Var) -> Self {
        AttentionWeights {
            scores: g.value(scores).clone(),
            alpha: g.value(alpha).clone(),
        }
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_normalization_error(&self) -> f64 {
        (0..self.alpha.rows())
            .map(|r| (self.alpha.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.alpha.data().iter().all(|&a| a >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn states(g: &mut Graph, rows: &[Vec<f64>]) -> Vec<Var> {
        rows.iter().map(|r| g.constant(Tensor::row_vector(r.clone()))).collect()
    }

    #[test]
    fn zero_bilinear_gives_uniform() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::zeros(&[3, 3]));
        let h = g.constant(Tensor::row_vector(vec![0.4, -1.0, 2.0]));
        let s = states(&mut g, &[vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0], vec![-5.0, 1.0, 1.0]]);
        let sc = scores(&mut g, w, h, &s).unwrap();
        assert!(g.value(sc).data().iter().all(|&v| v == 0.0));
        let mask = SourceMask::new(vec![3]).unwrap();
        let a = weights(&mut g, sc, &mask).unwrap();
        for &v in g.value(a).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_bilinear_on_orthonormal_states() {
        let basis = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        for (k, target) in basis.iter().enumerate() {
            let mut g = Graph::new();
            let w = g.constant(Tensor::identity(3));
            let h = g.constant(Tensor::row_vector(target.clone()));
            let s = states(&mut g, &basis);
            let sc = scores(&mut g, w, h, &s).unwrap();
            for (i, &v) in g.value(sc).data().iter().enumerate() {
                assert_eq!(v, if i == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn scores_are_linear_in_target_state() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 2.0]).unwrap());
        let s = states(&mut g, &[vec![1.0, 2.0], vec![-0.5, 0.25]]);
        let h = g.constant(Tensor::row_vector(vec![0.9, -0.4]));
        let h3 = g.scale(h, 3.0);
        let base = scores(&mut g, w, h, &s).unwrap();
        let scaled = scores(&mut g, w, h3, &s).unwrap();
        for (b, s3) in g.value(base).data().iter().zip(g.value(scaled).data()) {
            assert!((3.0 * b - s3).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_shape_mismatch() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::zeros(&[3, 2]));
        let h = g.constant(Tensor::zeros(&[1, 3]));
        let s = states(&mut g, &[vec![0.0; 3]]);
        assert!(matches!(scores(&mut g, w, h, &s), Err(Error::Dimension { .. })));
    }

    #[test]
    fn one_hot_and_uniform_weights() {
        let rows = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]];
        let mut g = Graph::new();
        let s = states(&mut g, &rows);
        let onehot = g.constant(Tensor::row_vector(vec![0.0, 1.0, 0.0]));
        let a = deterministic_vector(&mut g, onehot, &s).unwrap();
        assert_eq!(g.value(a).data(), &rows[1][..]);
        let uniform = g.constant(Tensor::row_vector(vec![1.0 / 3.0; 3]));
        let a = deterministic_vector(&mut g, uniform, &s).unwrap();
        let mask = SourceMask::new(vec![3]).unwrap();
        let hbar = mean_source_state(&mut g, &s, &mask).unwrap();
        for (x, y) in g.value(a).data().iter().zip(g.value(hbar).data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn padded_positions_get_zero_weight() {
        let mut g = Graph::new();
        let sc = g.constant(Tensor::matrix(2, 3, vec![0.1, 0.2, 5.0, 1.0, -1.0, 0.0]).unwrap());
        let mask = SourceMask::new(vec![2, 3]).unwrap();
        let a = weights(&mut g, sc, &mask).unwrap();
        let a = g.value(a);
        assert_eq!(a.get(0, 2), 0.0);
        assert!((a.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.get(1, 2) > 0.0);
    }

    #[test]
    fn mean_state_priors() {
        let mut g = Graph::new();
        let one = states(&mut g, &[vec![0.3, -0.2]]);
        let mask = SourceMask::new(vec![1]).unwrap();
        let m = prior_for(&mut g, Variant::VedVAttnHbar, &one, &mask).unwrap().unwrap();
        assert_eq!(g.value(m).data(), &[0.3, -0.2]);
        let pair = states(&mut g, &[vec![0.5, -2.0], vec![-0.5, 2.0]]);
        let mask = SourceMask::new(vec![2]).unwrap();
        let m = prior_for(&mut g, Variant::VedVAttnHbar, &pair, &mask).unwrap().unwrap();
        assert_eq!(g.value(m).data(), &[0.0, 0.0]);
        assert!(prior_for(&mut g, Variant::VedVAttn0, &pair, &mask).unwrap().is_none());
        assert!(prior_for(&mut g, Variant::VedDAttn, &pair, &mask).is_err());
    }

    #[test]
    fn posterior_mean_is_identity_and_zero_layers_give_unit_std() {
        let h = 3;
        let mut ps = ParamSet::new();
        ps.add(VAR_W1, Tensor::zeros(&[h, h])).unwrap();
        ps.add(VAR_B1, Tensor::zeros(&[1, h])).unwrap();
        ps.add(VAR_W2, Tensor::zeros(&[h, h])).unwrap();
        ps.add(VAR_B2, Tensor::zeros(&[1, h])).unwrap();
        let mut g = Graph::new();
        let a = g.constant(Tensor::row_vector(vec![0.1, -0.7, 0.33]));
        let q = variational_posterior(&mut g, &ps, a).unwrap();
        assert_eq!(q.mean, a);
        assert_eq!(g.value(q.std).data(), &[1.0, 1.0, 1.0]);
        assert!(variational_posterior(&mut g, &ParamSet::new(), a).is_err());
    }
}
