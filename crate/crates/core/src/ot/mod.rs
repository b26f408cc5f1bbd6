//! Optimal-transport alignment between LM-head vocabulary distributions and
//! classifier class distributions.
//!
//! The ground cost between word `v` and class `c` is `1 - cos(e_v, g_c)`,
//! where `e_v` is a frozen vocabulary embedding and `g_c` a trainable class
//! embedding. The per-trigger loss is the Sinkhorn distance between the
//! trigger's vocabulary distribution and the classifier's class distribution,
//! plus a vocabulary-space cross-entropy through [`phi_map`].

mod exact;
mod loss;
mod sinkhorn;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{cosine, softmax, Matrix};

pub use exact::exact_ot_lp;
pub use loss::{ot_loss_and_grads, OtLoss};
pub use sinkhorn::{sinkhorn, SinkhornOptions, SinkhornSolver, TransportPlan};

/// Which vocabulary indices carry mass in a batch's OT problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportMode {
    /// Verb-flagged tokens only.
    FullCandidate,
    /// Verb-flagged tokens plus every token id occurring in the batch.
    #[default]
    BatchUnion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtConfig {
    /// Entropic regularization of the Sinkhorn distance.
    pub lambda: f64,
    /// LM-head temperature.
    pub tau: f64,
    /// Weight of the vocabulary cross-entropy term.
    pub epsilon: f64,
    /// Temperature of the class-to-vocabulary map.
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub support: SupportMode,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 1.0,
            epsilon: 1.0,
            kappa: 1.0,
            tol: 1e-9,
            max_iter: 1000,
            support: SupportMode::BatchUnion,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("tau", self.tau), ("kappa", self.kappa), ("tol", self.tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("OT {name} must be positive, got {v}")));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("OT epsilon must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A trigger's distribution over a vocabulary support.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabDistribution {
    pub support: Vec<usize>,
    pub probs: Vec<f64>,
    pub tau: f64,
}

/// Class probabilities over the current non-NA classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        sinkhorn::check_marginal(&probs, "class distribution")?;
        Ok(Self { probs })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Ok(Self {
            probs: softmax(logits, 1.0)?,
        })
    }
}

/// `x = (softmax(start[S] / tau) + softmax(end[S] / tau)) / 2` over support `S`.
pub fn lm_head_distribution(
    inst: &FeatureInstance,
    tau: f64,
    support: &[usize],
) -> Result<VocabDistribution> {
    if support.is_empty() {
        return Err(Error::Domain("empty vocabulary support".into()));
    }
    let v = inst.lm_logits_start.len();
    if let Some(&s) = support.iter().find(|&&s| s >= v) {
        return Err(Error::Domain(format!("support index {s} outside {v} logits")));
    }
    let pick = |l: &[f64]| support.iter().map(|&s| l[s]).collect::<Vec<_>>();
    let xs = softmax(&pick(&inst.lm_logits_start), tau)?;
    let xe = softmax(&pick(&inst.lm_logits_end), tau)?;
    Ok(VocabDistribution {
        support: support.to_vec(),
        probs: xs.iter().zip(&xe).map(|(a, b)| (a + b) / 2.0).collect(),
        tau,
    })
}

/// Sorted vocabulary support for one batch.
pub fn batch_support(batch: &[&FeatureInstance], vocab: &Vocabulary, mode: SupportMode) -> Vec<usize> {
    let mut set: BTreeSet<usize> = vocab.verb_indices().into_iter().collect();
    if mode == SupportMode::BatchUnion {
        for inst in batch {
            set.extend(inst.token_ids.iter().map(|&t| t as usize));
        }
    }
    set.into_iter().collect()
}

/// Class embeddings, the snapshot taken at the last expansion, and which rows
/// may still move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTables {
    /// `C x D_e`, one row per seen non-NA class in head order.
    pub g: Matrix<f64>,
    /// Copy of `g` before the most recent expansion. Row `i` pairs with row `i` of `g`.
    pub g_prev: Matrix<f64>,
    pub trainable: Vec<bool>,
}

impl EmbeddingTables {
    pub fn new(dim: usize) -> Self {
        Self {
            g: Matrix::zeros(0, dim),
            g_prev: Matrix::zeros(0, dim),
            trainable: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.g.rows()
    }

    pub fn dim(&self) -> usize {
        self.g.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trainable.len() != self.g.rows() || self.g_prev.rows() > self.g.rows() {
            return Err(Error::DimensionMismatch("embedding tables out of sync".into()));
        }
        Ok(())
    }
}

/// `|S| x C` ground cost `m_vc = 1 - cos(e_v, g_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub support: Vec<usize>,
    pub values: Matrix<f64>,
}

pub fn build_cost_matrix(
    vocab: &Vocabulary,
    support: &[usize],
    tables: &EmbeddingTables,
) -> Result<CostMatrix> {
    if tables.dim() != vocab.embedding_dim() {
        return Err(Error::DimensionMismatch(format!(
            "class embeddings of width {} against vocabulary width {}",
            tables.dim(),
            vocab.embedding_dim()
        )));
    }
    let c = tables.num_classes();
    let mut values = Matrix::zeros(support.len(), c);
    for (r, &v) in support.iter().enumerate() {
        let e = vocab.embedding(v);
        for k in 0..c {
            values[(r, k)] = 1.0 - cosine(e, tables.g.row(k))?;
        }
    }
    Ok(CostMatrix {
        support: support.to_vec(),
        values,
    })
}

/// Column-wise softmax of `-M / kappa` over the support axis.
pub(crate) fn class_word_map(cost: &Matrix<f64>, kappa: f64) -> Matrix<f64> {
    let (s, c) = (cost.rows(), cost.cols());
    let mut q = Matrix::zeros(s, c);
    for k in 0..c {
        let col: Vec<f64> = (0..s).map(|v| -cost[(v, k)] / kappa).collect();
        let sm = crate::numerics::softmax_unchecked(&col);
        for v in 0..s {
            q[(v, k)] = sm[v];
        }
    }
    q
}

/// Maps class probabilities to a vocabulary distribution:
/// `phi(p)_v = sum_c p_c softmax_v(-M[., c] / kappa)`.
pub fn phi_map(p: &[f64], cost: &CostMatrix, kappa: f64) -> Result<Vec<f64>> {
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
    }
    if p.len() != cost.values.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} class probabilities for {} cost columns",
            p.len(),
            cost.values.cols()
        )));
    }
    sinkhorn::check_marginal(p, "class distribution")?;
    Ok(class_word_map(&cost.values, kappa).matvec(p))
}
