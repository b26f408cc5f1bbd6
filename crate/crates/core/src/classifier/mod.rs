//! Span classifier over frozen features: one GELU hidden layer and a linear
//! head with an NA output followed by one output per seen class.

mod loss;
mod optim;
mod train;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Ontology, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{norm, softmax_unchecked, Matrix, SeededRng};
use crate::ot::EmbeddingTables;

pub use loss::{
    loss_classification, loss_distill, loss_embed_reg, loss_replay, total_loss, LabeledBatch, LossBreakdown,
    LossToggles, TotalLoss,
};
pub use optim::{AdamW, AdamWConfig};
pub use train::{train_task, EpochLog, ModelState, TrainingConfig, TaskLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// `H x I`
    pub w1: Matrix<f64>,
    pub b1: Vec<f64>,
    /// `(1 + C) x H`; row 0 is NA.
    pub w2: Matrix<f64>,
    pub b2: Vec<f64>,
}

/// Gradients with the shapes of [`ClassifierParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w1: Matrix<f64>,
    pub b1: Vec<f64>,
    pub w2: Matrix<f64>,
    pub b2: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(p: &ClassifierParams) -> Self {
        Self {
            w1: Matrix::zeros(p.w1.rows(), p.w1.cols()),
            b1: vec![0.0; p.b1.len()],
            w2: Matrix::zeros(p.w2.rows(), p.w2.cols()),
            b2: vec![0.0; p.b2.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        let pairs = [
            (self.w1.as_mut_slice(), other.w1.as_slice()),
            (&mut self.b1[..], &other.b1[..]),
            (self.w2.as_mut_slice(), other.w2.as_slice()),
            (&mut self.b2[..], &other.b2[..]),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    /// Flattened in the order `w1, b1, w2, b2`.
    pub fn flatten(&self) -> Vec<f64> {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2].concat()
    }
}

/// Cached activations of a batch forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub pre: Matrix<f64>,
    pub hidden: Matrix<f64>,
    pub logits: Matrix<f64>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Dot product with four independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results stay deterministic.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl ClassifierParams {
    /// He-scaled Gaussian hidden weights, zero biases, and an NA-only head.
    pub fn new(input_dim: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let std = (2.0 / input_dim as f64).sqrt();
        let w1 = Matrix::from_fn(hidden, input_dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        });
        Self {
            w1,
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(1, hidden),
            b2: vec![0.0],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    /// Head outputs, NA included.
    pub fn outputs(&self) -> usize {
        self.w2.rows()
    }

    /// Seen non-NA classes.
    pub fn num_classes(&self) -> usize {
        self.w2.rows() - 1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[x])?.logits.row(0).to_vec())
    }

    pub fn forward_batch(&self, xs: &[&[f64]]) -> Result<Forward> {
        let (h, i) = (self.hidden(), self.input_dim());
        let o = self.outputs();
        let b = xs.len();
        let mut pre = Matrix::zeros(b, h);
        let mut hidden = Matrix::zeros(b, h);
        let mut logits = Matrix::zeros(b, o);
        for (r, x) in xs.iter().enumerate() {
            if x.len() != i {
                return Err(Error::DimensionMismatch(format!("input of width {} for a {i}-wide layer", x.len())));
            }
            for k in 0..h {
                let z = self.b1[k] + dot4(self.w1.row(k), x);
                pre[(r, k)] = z;
                hidden[(r, k)] = gelu(z);
            }
            let act = hidden.row(r);
            for c in 0..o {
                logits[(r, c)] = self.b2[c] + dot4(self.w2.row(c), act);
            }
        }
        Ok(Forward { pre, hidden, logits })
    }

    /// Backpropagates `dlogits` (`B x (1 + C)`) through a cached pass.
    pub fn backward(&self, xs: &[&[f64]], fw: &Forward, dlogits: &Matrix<f64>) -> ParamGrads {
        let mut g = ParamGrads::zeros_like(self);
        let (h, o) = (self.hidden(), self.outputs());
        let mut dpre = vec![0.0; h];
        for (r, x) in xs.iter().enumerate() {
            let dl = dlogits.row(r);
            if dl.iter().all(|&v| v == 0.0) {
                continue;
            }
            let act = fw.hidden.row(r);
            dpre.fill(0.0);
            for c in 0..o {
                let d = dl[c];
                if d == 0.0 {
                    continue;
                }
                g.b2[c] += d;
                let w = self.w2.row(c);
                for (k, (gw, a)) in g.w2.row_mut(c).iter_mut().zip(act).enumerate() {
                    *gw += d * a;
                    dpre[k] += d * w[k];
                }
            }
            for k in 0..h {
                let d = dpre[k] * gelu_grad(fw.pre[(r, k)]);
                g.b1[k] += d;
                for (gw, v) in g.w1.row_mut(k).iter_mut().zip(*x) {
                    *gw += d * v;
                }
            }
        }
        g
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite())
    }
}

/// How new class embeddings are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Unit-normalized Gaussian rows.
    Random,
    /// Copy of the class's anchor-token embedding; classes without an
    /// anchor fall back to random.
    #[default]
    Mapping,
}

/// Appends zero-initialized head rows and fresh class-embedding rows for
/// `new_classes` (ontology ids), snapshotting the current embeddings into
/// `g_prev` first.
pub fn expand_head(
    params: &mut ClassifierParams,
    tables: &mut EmbeddingTables,
    new_classes: &[usize],
    init: InitMode,
    ontology: &Ontology,
    vocab: &Vocabulary,
    rng: &mut SeededRng,
) -> Result<()> {
    if new_classes.is_empty() {
        return Err(Error::InvalidInput("expansion needs at least one class".into()));
    }
    if tables.num_classes() != params.num_classes() {
        return Err(Error::DimensionMismatch("head and class embeddings disagree".into()));
    }
    tables.g_prev = tables.g.clone();
    let h = params.hidden();
    for &class in new_classes {
        params.w2.push_row(&vec![0.0; h])?;
        params.b2.push(0.0);
        let row = match (init, ontology.anchor(class)) {
            (InitMode::Mapping, Some(a)) => vocab.embedding(a).to_vec(),
            _ => {
                let mut v: Vec<f64> = (0..vocab.embedding_dim()).map(|_| StandardNormal.sample(rng)).collect();
                let n = norm(&v);
                v.iter_mut().for_each(|x| *x /= n);
                v
            }
        };
        tables.g.push_row(&row)?;
        tables.trainable.push(true);
    }
    Ok(())
}

/// Frozen copy of the classifier at the end of the previous task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSnapshot {
    params: ClassifierParams,
}

impl TeacherSnapshot {
    pub fn new(params: &ClassifierParams) -> Self {
        Self { params: params.clone() }
    }

    /// Outputs covered by the teacher, NA included.
    pub fn outputs(&self) -> usize {
        self.params.outputs()
    }

    pub fn params(&self) -> &ClassifierParams {
        &self.params
    }

    /// `B x outputs()` predictive distributions.
    pub fn probs(&self, xs: &[&[f64]]) -> Result<Matrix<f64>> {
        let fw = self.params.forward_batch(xs)?;
        let mut out = fw.logits;
        for r in 0..out.rows() {
            let p = softmax_unchecked(out.row(r));
            out.row_mut(r).copy_from_slice(&p);
        }
        Ok(out)
    }
}
