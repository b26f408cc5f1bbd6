use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{LabeledBatch, LossBreakdown, LossToggles};
use super::{expand_head, total_loss, AdamW, AdamWConfig, ClassifierParams, InitMode, TeacherSnapshot};
use crate::dataset::{Dataset, Example, FeatureInstance, Task, NA};
use crate::error::{Error, Result};
use crate::metrics::micro_f1;
use crate::numerics::SeededRng;
use crate::ot::{EmbeddingTables, OtConfig};
use crate::replay::{
    effective_buffer, generate_synthetic, select_memory, update_prototypes, EffectiveBuffer, MemoryItem,
    ReplayBuffer, ReplayConfig, ReplayState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub hidden: usize,
    /// Weight of the NA term in the classification loss.
    pub eta: f64,
    /// Weight of the class-embedding proximity term.
    pub alpha: f64,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement tolerated before stopping.
    pub patience: usize,
    pub enable_ot: bool,
    pub enable_replay: bool,
    pub enable_distill: bool,
    /// Stored exemplars enter the effective buffer.
    pub enable_buffer: bool,
    /// Prototype samples enter the effective buffer.
    pub enable_prototypes: bool,
    /// Keep old class embeddings trainable after their task.
    pub soft_freeze: bool,
    pub init_mode: InitMode,
    pub ot: OtConfig,
    pub replay: ReplayConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            eta: 0.95,
            alpha: 0.5,
            optimizer: AdamWConfig::default(),
            batch_size: 128,
            max_epochs: 20,
            patience: 2,
            enable_ot: true,
            enable_replay: true,
            enable_distill: true,
            enable_buffer: true,
            enable_prototypes: true,
            soft_freeze: false,
            init_mode: InitMode::Mapping,
            ot: OtConfig::default(),
            replay: ReplayConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size, hidden width and epochs must be positive".into()));
        }
        if self.replay.memory_size == 0 {
            return Err(Error::Config("memory size must be positive".into()));
        }
        self.ot.validate()
    }

    pub fn toggles(&self) -> LossToggles {
        LossToggles {
            replay: self.enable_replay,
            distill: self.enable_distill,
            ot: self.enable_ot,
        }
    }
}

/// Everything carried from one task to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: ClassifierParams,
    pub tables: EmbeddingTables,
    /// Global class id of head output `k + 1`.
    pub seen: Vec<usize>,
    pub teacher: Option<TeacherSnapshot>,
    pub replay: ReplayState,
}

impl ModelState {
    pub fn new(input_dim: usize, embed_dim: usize, cfg: &TrainingConfig, rng: &mut SeededRng) -> Self {
        Self {
            params: ClassifierParams::new(input_dim, cfg.hidden, rng),
            tables: EmbeddingTables::new(embed_dim),
            seen: Vec::new(),
            teacher: None,
            replay: ReplayState::new(cfg.replay.memory_size),
        }
    }

    pub fn head_index(&self, class: usize) -> Option<usize> {
        if class == NA {
            return Some(0);
        }
        self.seen.iter().position(|&c| c == class).map(|k| k + 1)
    }

    pub fn class_of(&self, head: usize) -> usize {
        if head == 0 {
            NA
        } else {
            self.seen[head - 1]
        }
    }

    /// Argmax over every head output, as global class ids.
    pub fn predict(&self, xs: &[&[f64]]) -> Result<Vec<usize>> {
        let fw = self.params.forward_batch(xs)?;
        Ok((0..fw.logits.rows())
            .map(|r| {
                let row = fw.logits.row(r);
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (k, &v)| if v > row[b] { k } else { b });
                self.class_of(best)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub classification: f64,
    pub replay: f64,
    pub distill: f64,
    pub ot: f64,
    pub embed_reg: f64,
    pub total: f64,
    pub dev_f1: f64,
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub new_classes: Vec<usize>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

fn features_of(ds: &Dataset, examples: &[Example]) -> Vec<Vec<f64>> {
    examples.iter().map(|e| ds.instances[e.index].features()).collect()
}

pub(crate) fn dev_f1(state: &ModelState, features: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
    let refs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    Ok(micro_f1(&state.predict(&refs)?, gold).f1)
}

fn build_buffer(state: &ModelState, cfg: &TrainingConfig, rng: &mut SeededRng) -> Result<EffectiveBuffer> {
    if !(cfg.enable_replay || cfg.enable_distill) {
        return Ok(EffectiveBuffer::default());
    }
    let synthetic = if cfg.enable_prototypes {
        generate_synthetic(
            &state.replay.prototypes,
            &state.replay.nominal_counts,
            cfg.replay.ratio,
            cfg.replay.variance_floor,
            rng,
        )?
    } else {
        Vec::new()
    };
    let empty = ReplayBuffer::new(cfg.replay.memory_size);
    let real = if cfg.enable_buffer { &state.replay.buffer } else { &empty };
    Ok(effective_buffer(real, &synthetic))
}

/// Trains on one task of a relabeled stream, then updates memory, takes the
/// teacher snapshot and freezes class embeddings.
pub fn train_task(
    state: &mut ModelState,
    ds: &Dataset,
    task: &Task,
    cfg: &TrainingConfig,
    rng: &mut SeededRng,
) -> Result<TaskLog> {
    cfg.validate()?;
    let new_classes: Vec<usize> = task.labels.iter().copied().filter(|c| !state.seen.contains(c)).collect();
    if !new_classes.is_empty() {
        expand_head(
            &mut state.params,
            &mut state.tables,
            &new_classes,
            cfg.init_mode,
            &ds.ontology,
            &ds.vocab,
            rng,
        )?;
        state.seen.extend_from_slice(&new_classes);
    }
    if task.train.is_empty() {
        return Err(Error::InvalidInput("task has no training data".into()));
    }

    let head = |state: &ModelState, class: usize| {
        state
            .head_index(class)
            .ok_or_else(|| Error::Ontology(format!("class {class} is not in the head")))
    };
    let train_x = features_of(ds, &task.train);
    let train_y = task.train.iter().map(|e| head(state, e.label)).collect::<Result<Vec<_>>>()?;
    let train_inst: Vec<&FeatureInstance> = task.train.iter().map(|e| &ds.instances[e.index]).collect();
    let dev_x = features_of(ds, &task.dev);
    let dev_gold: Vec<usize> = task.dev.iter().map(|e| e.label).collect();

    let mut opt = AdamW::new(cfg.optimizer);
    let mut eff = build_buffer(state, cfg, rng)?;
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut buf_order: Vec<usize> = Vec::new();
    let mut buf_pos = 0;

    let mut best = (f64::NEG_INFINITY, 0, state.params.clone(), state.tables.clone());
    let mut since_best = 0;
    let mut epochs = Vec::new();
    for epoch in 0..cfg.max_epochs {
        if epoch > 0 && cfg.replay.resample_each_epoch && cfg.enable_prototypes {
            eff = build_buffer(state, cfg, rng)?;
        }
        let buf_x: Vec<&[f64]> = eff.entries.iter().map(|e| e.item.features.as_slice()).collect();
        let buf_y = eff.entries.iter().map(|e| head(state, e.item.label)).collect::<Result<Vec<_>>>()?;
        if buf_order.len() != buf_x.len() {
            buf_order = (0..buf_x.len()).collect();
            buf_pos = buf_order.len();
        }

        order.shuffle(rng);
        let mut sums = LossBreakdown::default();
        let mut total = 0.0;
        let mut nonconverged = 0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let current = LabeledBatch {
                features: chunk.iter().map(|&i| train_x[i].as_slice()).collect(),
                labels: chunk.iter().map(|&i| train_y[i]).collect(),
            };
            let insts: Vec<&FeatureInstance> = chunk.iter().map(|&i| train_inst[i]).collect();
            let buffer = (!buf_x.is_empty()).then(|| {
                let mut idx = Vec::with_capacity(cfg.batch_size.min(buf_x.len()));
                while idx.len() < cfg.batch_size.min(buf_x.len()) {
                    if buf_pos == buf_order.len() {
                        buf_order.shuffle(rng);
                        buf_pos = 0;
                    }
                    idx.push(buf_order[buf_pos]);
                    buf_pos += 1;
                }
                LabeledBatch {
                    features: idx.iter().map(|&i| buf_x[i]).collect(),
                    labels: idx.iter().map(|&i| buf_y[i]).collect(),
                }
            });
            let out = total_loss(
                &state.params,
                &state.tables,
                state.teacher.as_ref(),
                &current,
                &insts,
                buffer.as_ref(),
                &ds.vocab,
                cfg,
            )?;
            opt.step(&mut state.params, &out.grads, &mut state.tables, &out.dg)?;
            let b = out.breakdown;
            sums.classification += b.classification;
            sums.replay += b.replay;
            sums.distill += b.distill;
            sums.ot += b.ot;
            sums.embed_reg += b.embed_reg;
            total += out.loss;
            nonconverged += out.nonconverged;
            steps += 1;
        }
        if !state.params.is_finite() {
            return Err(Error::Domain(format!("parameters diverged in epoch {epoch}")));
        }
        let f1 = if dev_x.is_empty() { 0.0 } else { dev_f1(state, &dev_x, &dev_gold)? };
        let n = steps as f64;
        epochs.push(EpochLog {
            epoch,
            steps,
            classification: sums.classification / n,
            replay: sums.replay / n,
            distill: sums.distill / n,
            ot: sums.ot / n,
            embed_reg: sums.embed_reg / n,
            total: total / n,
            dev_f1: f1,
            nonconverged,
        });
        if f1 > best.0 {
            best = (f1, epoch, state.params.clone(), state.tables.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    let (best_dev_f1, best_epoch, params, tables) = best;
    state.params = params;
    state.tables = tables;

    let items: Vec<MemoryItem> = task
        .train
        .iter()
        .zip(&train_x)
        .filter(|(e, _)| e.label != NA)
        .map(|(e, x)| MemoryItem {
            features: x.clone(),
            label: e.label,
        })
        .collect();
    let chosen = select_memory(&items, cfg.replay.memory_size, cfg.replay.strategy, rng)?;
    let counts: BTreeMap<usize, usize> = chosen.iter().map(|(&l, v)| (l, v.len())).collect();
    for (l, n) in counts {
        state.replay.nominal_counts.insert(l, n);
    }
    if cfg.enable_buffer {
        state.replay.buffer.extend(chosen)?;
    }
    update_prototypes(&mut state.replay.prototypes, &items)?;
    state.teacher = Some(TeacherSnapshot::new(&state.params));
    if !cfg.soft_freeze {
        state.tables.trainable.iter_mut().for_each(|t| *t = false);
    }

    Ok(TaskLog {
        new_classes,
        epochs,
        best_epoch,
        best_dev_f1,
    })
}
