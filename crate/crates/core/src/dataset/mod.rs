//! Feature datasets: frozen-encoder span features, LM-head logits, the
//! candidate vocabulary and the event ontology, plus task streams built on
//! top of them.

mod format;
mod stream;
mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix};

pub use format::{find_manifest, read_feature_file, write_feature_file, FORMAT_VERSION};
pub(crate) use stream::check_permutation;
pub use stream::{apply_oracle_negative, validate_oracle_negative, Example, Task, TaskStream};
pub use synthetic::{make_synthetic_stream, SyntheticConfig};

/// Label id of the negative class.
pub const NA: usize = 0;

/// One trigger candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureInstance {
    pub instance_id: String,
    /// Global gold label; [`NA`] for non-triggers.
    pub label: usize,
    pub h_start: Vec<f64>,
    pub h_end: Vec<f64>,
    /// LM-head logits at the start token, restricted to the candidate vocabulary.
    pub lm_logits_start: Vec<f64>,
    pub lm_logits_end: Vec<f64>,
    /// Candidate-vocabulary indices occurring in the instance's sentence.
    pub token_ids: Vec<u32>,
}

impl FeatureInstance {
    /// The span representation `[h_start, h_end]`.
    pub fn features(&self) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.h_start.len() * 2);
        h.extend_from_slice(&self.h_start);
        h.extend_from_slice(&self.h_end);
        h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabToken {
    pub text: String,
    pub is_verb: bool,
}

/// Candidate vocabulary with its input-embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub tokens: Vec<VocabToken>,
    /// `V_cand x D_e`.
    pub embeddings: Matrix<f64>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<VocabToken>, embeddings: Matrix<f64>) -> Result<Self> {
        let v = Self { tokens, embeddings };
        v.validate()?;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embedding(&self, v: usize) -> &[f64] {
        self.embeddings.row(v)
    }

    /// Indices flagged as verbs, ascending.
    pub fn verb_indices(&self) -> Vec<usize> {
        (0..self.tokens.len()).filter(|&i| self.tokens[i].is_verb).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embeddings.rows() != self.tokens.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} tokens but {} embedding rows",
                self.tokens.len(),
                self.embeddings.rows()
            )));
        }
        let mut seen = HashSet::new();
        for t in &self.tokens {
            if !seen.insert(t.text.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate token {:?}", t.text)));
            }
        }
        if !self.embeddings.is_finite() {
            return Err(Error::NonFinitePayload("vocabulary embeddings".into()));
        }
        for v in 0..self.tokens.len() {
            if !(norm(self.embeddings.row(v)) > 0.0) {
                return Err(Error::DegenerateVector(format!(
                    "embedding of token {:?} has zero norm",
                    self.tokens[v].text
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    /// Vocabulary index of the token naming this class, used by mapping init.
    #[serde(default)]
    pub anchor_token: Option<usize>,
}

/// Event types. Class 0 is always `NA`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    pub classes: Vec<ClassInfo>,
}

impl Ontology {
    pub fn new(classes: Vec<ClassInfo>, vocab_len: usize) -> Result<Self> {
        let o = Self { classes };
        o.validate(vocab_len)?;
        Ok(o)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn anchor(&self, class: usize) -> Option<usize> {
        self.classes.get(class).and_then(|c| c.anchor_token)
    }

    pub fn validate(&self, vocab_len: usize) -> Result<()> {
        match self.classes.first() {
            Some(c) if c.name == "NA" => {}
            _ => return Err(Error::Ontology("class 0 must be NA".into())),
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Ontology(format!("duplicate class {:?}", c.name)));
            }
            if let Some(a) = c.anchor_token {
                if a >= vocab_len {
                    return Err(Error::Ontology(format!(
                        "anchor {a} of class {:?} outside vocabulary of {vocab_len}",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Which task pool and split an instance was published in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub task: usize,
    pub split: Split,
}

/// Task partition as published with a dataset, before any relabeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamLayout {
    /// Non-NA label subset of each task.
    pub task_labels: Vec<Vec<usize>>,
    /// One entry per instance.
    pub placement: Vec<Placement>,
}

/// A loaded or generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub vocab: Vocabulary,
    pub ontology: Ontology,
    pub instances: Vec<FeatureInstance>,
    pub layout: StreamLayout,
}

impl Dataset {
    /// Span feature width `D` (each of `h_start`, `h_end`).
    pub fn feature_dim(&self) -> usize {
        self.instances.first().map_or(0, |i| i.h_start.len())
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        self.ontology.validate(self.vocab.len())?;
        let v = self.vocab.len();
        let d = self.feature_dim();
        for inst in &self.instances {
            let id = &inst.instance_id;
            if inst.h_start.len() != d || inst.h_end.len() != d {
                return Err(Error::DimensionMismatch(format!("span features of {id}")));
            }
            if inst.lm_logits_start.len() != v || inst.lm_logits_end.len() != v {
                return Err(Error::DimensionMismatch(format!(
                    "LM logits of {id} do not have {v} entries"
                )));
            }
            let finite = [&inst.h_start, &inst.h_end, &inst.lm_logits_start, &inst.lm_logits_end]
                .iter()
                .all(|xs| xs.iter().all(|x| x.is_finite()));
            if !finite {
                return Err(Error::NonFinitePayload(format!("instance {id}")));
            }
            if inst.label >= self.ontology.len() {
                return Err(Error::Ontology(format!("label {} of {id}", inst.label)));
            }
            if let Some(t) = inst.token_ids.iter().find(|&&t| t as usize >= v) {
                return Err(Error::InvalidInput(format!("token id {t} of {id} outside vocabulary")));
            }
        }
        if self.layout.placement.len() != self.instances.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} placements for {} instances",
                self.layout.placement.len(),
                self.instances.len()
            )));
        }
        let n_tasks = self.layout.task_labels.len();
        if let Some(p) = self.layout.placement.iter().find(|p| p.task >= n_tasks) {
            return Err(Error::Config(format!("placement in task {} of {n_tasks}", p.task)));
        }
        let mut owner = HashSet::new();
        for labels in &self.layout.task_labels {
            for &l in labels {
                if l == NA || l >= self.ontology.len() {
                    return Err(Error::Ontology(format!("task label {l}")));
                }
                if !owner.insert(l) {
                    return Err(Error::Ontology(format!("label {l} assigned to two tasks")));
                }
            }
        }
        Ok(())
    }
}
