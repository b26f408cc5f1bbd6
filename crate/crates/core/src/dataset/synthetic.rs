//! Desk-scale stand-in for frozen-encoder features.
//!
//! Each event class gets a Gaussian cluster in span-feature space and an
//! anchor verb in the candidate vocabulary. LM-head logits of a class
//! instance lift the anchor by `lm_gap` and the anchor's nearest embedding
//! neighbours by `lm_gap / 2`; every other token sits at its base logit plus
//! noise. `NA` spans come from a broad background Gaussian.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    ClassInfo, Dataset, FeatureInstance, Ontology, Placement, Split, StreamLayout, VocabToken,
    Vocabulary, NA,
};
use crate::error::{Error, Result};
use crate::numerics::{cosine, Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub name: String,
    pub tasks: usize,
    pub classes_per_task: usize,
    pub train_per_class: usize,
    pub dev_per_class: usize,
    pub test_per_class: usize,
    /// `D`, width of each of `h_start` and `h_end`.
    pub feature_dim: usize,
    /// `D_e`, vocabulary embedding width.
    pub embed_dim: usize,
    pub vocab_size: usize,
    /// The first `verb_count` tokens are verb-flagged. Anchors are drawn from them.
    pub verb_count: usize,
    /// `NA` instances per non-NA instance, per split.
    pub na_ratio: f64,
    /// Scale of the class-mean offsets relative to unit within-class noise.
    pub separation: f64,
    pub lm_gap: f64,
    pub lm_noise: f64,
    /// Tokens near each anchor that receive half the logit gap.
    pub neighbors: usize,
    pub tokens_per_instance: usize,
    /// Extra instances per task pool labelled with other tasks' classes,
    /// as a fraction of the pool's non-NA count.
    pub cross_task_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            tasks: 5,
            classes_per_task: 4,
            train_per_class: 200,
            dev_per_class: 50,
            test_per_class: 100,
            feature_dim: 32,
            embed_dim: 32,
            vocab_size: 300,
            verb_count: 120,
            na_ratio: 3.0,
            separation: 0.6,
            lm_gap: 8.0,
            lm_noise: 1.0,
            neighbors: 5,
            tokens_per_instance: 4,
            cross_task_fraction: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn num_classes(&self) -> usize {
        self.tasks * self.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tasks == 0 || self.classes_per_task == 0 {
            return bad("need at least one task and one class per task".into());
        }
        if self.feature_dim == 0 || self.embed_dim == 0 {
            return bad("feature and embedding widths must be positive".into());
        }
        if self.verb_count > self.vocab_size {
            return bad(format!("{} verbs in a vocabulary of {}", self.verb_count, self.vocab_size));
        }
        if self.num_classes() > self.verb_count {
            return bad(format!(
                "{} classes need distinct anchor verbs but only {} verbs exist",
                self.num_classes(),
                self.verb_count
            ));
        }
        if self.neighbors >= self.vocab_size {
            return bad("neighbour count must be below the vocabulary size".into());
        }
        if self.train_per_class == 0 {
            return bad("train_per_class must be positive".into());
        }
        for (name, v) in [
            ("na_ratio", self.na_ratio),
            ("separation", self.separation),
            ("lm_gap", self.lm_gap),
            ("lm_noise", self.lm_noise),
            ("cross_task_fraction", self.cross_task_fraction),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

fn gauss(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Rounds through `f32` so the dataset survives the on-disk format bit-exactly.
fn f32r(x: f64) -> f64 {
    x as f32 as f64
}

struct ClassModel {
    mean: Vec<f64>,
    anchor: usize,
    neighbors: Vec<usize>,
}

/// Generates a dataset with its task layout. Identical seeds give identical
/// datasets, and therefore identical files.
pub fn make_synthetic_stream(cfg: &SyntheticConfig, rng: &mut SeededRng) -> Result<Dataset> {
    cfg.validate()?;
    let v = cfg.vocab_size;
    let d = cfg.feature_dim;

    let mut vrng = rng.fork(1);
    let tokens: Vec<VocabToken> = (0..v)
        .map(|i| {
            let is_verb = i < cfg.verb_count;
            let text = if is_verb { format!("verb{i:04}") } else { format!("tok{i:04}") };
            VocabToken { text, is_verb }
        })
        .collect();
    let embeddings = Matrix::from_fn(v, cfg.embed_dim, |_, _| f32r(gauss(&mut vrng)));
    let vocab = Vocabulary::new(tokens, embeddings)?;
    let base_logits: Vec<f64> = (0..v).map(|_| gauss(&mut vrng)).collect();

    let n_classes = cfg.num_classes();
    let mut crng = rng.fork(2);
    let mut verbs: Vec<usize> = (0..cfg.verb_count).collect();
    verbs.shuffle(&mut crng);
    let feat_scale = cfg.separation;
    let classes: Vec<ClassModel> = (0..n_classes)
        .map(|c| {
            let anchor = verbs[c];
            let mut by_sim: Vec<(usize, f64)> = (0..v)
                .filter(|&u| u != anchor)
                .map(|u| {
                    let s = cosine(vocab.embedding(anchor), vocab.embedding(u)).unwrap_or(0.0);
                    (u, s)
                })
                .collect();
            by_sim.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ClassModel {
                mean: (0..2 * d).map(|_| feat_scale * gauss(&mut crng)).collect(),
                anchor,
                neighbors: by_sim[..cfg.neighbors].iter().map(|p| p.0).collect(),
            }
        })
        .collect();

    let mut class_info = vec![ClassInfo {
        name: "NA".into(),
        anchor_token: None,
    }];
    class_info.extend(classes.iter().enumerate().map(|(c, m)| ClassInfo {
        name: format!("event{:02}", c + 1),
        anchor_token: Some(m.anchor),
    }));
    let ontology = Ontology::new(class_info, v)?;

    let task_labels: Vec<Vec<usize>> = (0..cfg.tasks)
        .map(|t| (0..cfg.classes_per_task).map(|k| 1 + t * cfg.classes_per_task + k).collect())
        .collect();

    let na_std = (1.0 + cfg.separation * cfg.separation).sqrt();
    let make = |label: usize, id: String, r: &mut SeededRng| -> FeatureInstance {
        let (h, bumps): (Vec<f64>, Option<&ClassModel>) = if label == NA {
            ((0..2 * d).map(|_| na_std * gauss(r)).collect(), None)
        } else {
            let m = &classes[label - 1];
            (m.mean.iter().map(|mu| mu + gauss(r)).collect(), Some(m))
        };
        let logits = |r: &mut SeededRng| -> Vec<f64> {
            let mut l: Vec<f64> = base_logits.iter().map(|b| b + cfg.lm_noise * gauss(r)).collect();
            if let Some(m) = bumps {
                l[m.anchor] += cfg.lm_gap;
                for &u in &m.neighbors {
                    l[u] += cfg.lm_gap / 2.0;
                }
            }
            l.into_iter().map(f32r).collect()
        };
        let lm_logits_start = logits(r);
        let lm_logits_end = logits(r);
        let mut token_ids: Vec<u32> = (0..cfg.tokens_per_instance)
            .map(|_| r.random_range(0..v) as u32)
            .collect();
        if let Some(m) = bumps {
            if r.random_bool(0.5) {
                token_ids.push(m.anchor as u32);
            }
        }
        token_ids.sort_unstable();
        token_ids.dedup();
        FeatureInstance {
            instance_id: id,
            label,
            h_start: h[..d].iter().copied().map(f32r).collect(),
            h_end: h[d..].iter().copied().map(f32r).collect(),
            lm_logits_start,
            lm_logits_end,
            token_ids,
        }
    };

    let mut instances = Vec::new();
    let mut placement = Vec::new();
    for (t, labels) in task_labels.iter().enumerate() {
        let mut r = rng.fork(100 + t as u64);
        let others: Vec<usize> = (1..=n_classes).filter(|l| !labels.contains(l)).collect();
        for (split, per_class, tag) in [
            (Split::Train, cfg.train_per_class, "train"),
            (Split::Dev, cfg.dev_per_class, "dev"),
            (Split::Test, cfg.test_per_class, "test"),
        ] {
            let mut pool = Vec::new();
            for &l in labels {
                pool.extend(std::iter::repeat_n(l, per_class));
            }
            let positives = pool.len();
            let n_cross = if others.is_empty() {
                0
            } else {
                (cfg.cross_task_fraction * positives as f64).round() as usize
            };
            for _ in 0..n_cross {
                pool.push(others[r.random_range(0..others.len())]);
            }
            let n_na = (cfg.na_ratio * positives as f64).round() as usize;
            pool.extend(std::iter::repeat_n(NA, n_na));
            for (i, &label) in pool.iter().enumerate() {
                instances.push(make(label, format!("t{t}-{tag}-{i:05}"), &mut r));
                placement.push(Placement { task: t, split });
            }
        }
    }

    let ds = Dataset {
        name: cfg.name.clone(),
        vocab,
        ontology,
        instances,
        layout: StreamLayout {
            task_labels,
            placement,
        },
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{apply_oracle_negative, validate_oracle_negative, TaskStream};

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            train_per_class: 10,
            dev_per_class: 3,
            test_per_class: 4,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn default_profile_counts() {
        let cfg = SyntheticConfig {
            cross_task_fraction: 0.0,
            ..SyntheticConfig::default()
        };
        let ds = make_synthetic_stream(&cfg, &mut SeededRng::new(0)).unwrap();
        assert_eq!(ds.ontology.len(), 21);
        assert_eq!(ds.layout.task_labels.len(), 5);
        let mut all: Vec<usize> = ds.layout.task_labels.concat();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 20);
        let train_pos = ds
            .instances
            .iter()
            .zip(&ds.layout.placement)
            .filter(|(i, p)| p.split == Split::Train && i.label != NA)
            .count();
        assert_eq!(train_pos, 20 * 200);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = make_synthetic_stream(&small(), &mut SeededRng::new(4)).unwrap();
        let b = make_synthetic_stream(&small(), &mut SeededRng::new(4)).unwrap();
        let c = make_synthetic_stream(&small(), &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn anchors_get_the_largest_mean_lift() {
        let ds = make_synthetic_stream(&small(), &mut SeededRng::new(9)).unwrap();
        let inst = ds.instances.iter().find(|i| i.label == 3).unwrap();
        let anchor = ds.ontology.anchor(3).unwrap();
        assert!(ds.vocab.tokens[anchor].is_verb);
        let na_mean: f64 = ds
            .instances
            .iter()
            .filter(|i| i.label == NA)
            .map(|i| i.lm_logits_start[anchor])
            .sum::<f64>()
            / ds.instances.iter().filter(|i| i.label == NA).count() as f64;
        assert!(inst.lm_logits_start[anchor] > na_mean);
    }

    #[test]
    fn config_errors() {
        let cfg = SyntheticConfig {
            verb_count: 10,
            ..SyntheticConfig::default()
        };
        assert!(matches!(
            make_synthetic_stream(&cfg, &mut SeededRng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn relabeled_synthetic_stream_is_valid() {
        let ds = make_synthetic_stream(&small(), &mut SeededRng::new(2)).unwrap();
        let s = apply_oracle_negative(&TaskStream::from_dataset(&ds).unwrap()).unwrap();
        validate_oracle_negative(&s).unwrap();
    }
}
