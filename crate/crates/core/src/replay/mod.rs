//! Exemplar memory, per-class Gaussian prototypes and the effective buffer
//! they form together.

mod checkpoint;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::NA;
use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, SeededRng};

pub use checkpoint::{load_checkpoint, save_checkpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// Herding: grow the set so its running mean stays closest to the class mean.
    #[default]
    ClosestToMean,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// Exemplars kept per label.
    pub memory_size: usize,
    /// Synthetic items generated per stored exemplar.
    pub ratio: usize,
    pub strategy: SelectionStrategy,
    /// Lower bound on sampled variances.
    pub variance_floor: f64,
    /// Draw fresh synthetic items every epoch instead of once per task.
    pub resample_each_epoch: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            memory_size: 20,
            ratio: 10,
            strategy: SelectionStrategy::ClosestToMean,
            variance_floor: 1e-8,
            resample_each_epoch: true,
        }
    }
}

/// A labeled feature vector. `label` is a global class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Up to `capacity` stored vectors per non-NA label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub slots: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            slots: BTreeMap::new(),
        }
    }

    /// Adds exemplars for labels not yet stored. Existing labels are never
    /// touched.
    pub fn extend(&mut self, additions: BTreeMap<usize, Vec<Vec<f64>>>) -> Result<()> {
        for (label, items) in additions {
            if label == NA {
                return Err(Error::InvalidInput("NA exemplars are not stored".into()));
            }
            if self.slots.contains_key(&label) {
                return Err(Error::InvalidInput(format!("label {label} already has exemplars")));
            }
            if items.len() > self.capacity {
                return Err(Error::InvalidInput(format!(
                    "{} exemplars for label {label} exceed capacity {}",
                    items.len(),
                    self.capacity
                )));
            }
            self.slots.insert(label, items);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> BTreeMap<usize, usize> {
        self.slots.iter().map(|(&l, v)| (l, v.len())).collect()
    }
}

fn group_by_label(items: &[MemoryItem]) -> BTreeMap<usize, Vec<&[f64]>> {
    let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for it in items.iter().filter(|it| it.label != NA) {
        groups.entry(it.label).or_default().push(&it.features);
    }
    groups
}

/// Picks up to `k` exemplars per non-NA label of `items`.
pub fn select_memory(
    items: &[MemoryItem],
    k: usize,
    strategy: SelectionStrategy,
    rng: &mut SeededRng,
) -> Result<BTreeMap<usize, Vec<Vec<f64>>>> {
    if k == 0 {
        return Err(Error::Config("memory size must be at least 1".into()));
    }
    let mut out = BTreeMap::new();
    for (label, group) in group_by_label(items) {
        let chosen: Vec<usize> = if group.len() <= k {
            (0..group.len()).collect()
        } else {
            match strategy {
                SelectionStrategy::Random => {
                    let mut idx = sample(rng, group.len(), k).into_vec();
                    idx.sort_unstable();
                    idx
                }
                SelectionStrategy::ClosestToMean => herding(&group, k),
            }
        };
        out.insert(label, chosen.into_iter().map(|i| group[i].to_vec()).collect());
    }
    Ok(out)
}

fn herding(group: &[&[f64]], k: usize) -> Vec<usize> {
    let dim = group[0].len();
    let n = group.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in group {
        for (m, v) in mean.iter_mut().zip(*x) {
            *m += v / n;
        }
    }
    let mut sum = vec![0.0; dim];
    let mut taken = vec![false; group.len()];
    let mut chosen = Vec::with_capacity(k);
    for step in 1..=k {
        let s = step as f64;
        let mut best = (f64::INFINITY, 0);
        for (i, x) in group.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d: f64 = (0..dim)
                .map(|j| {
                    let r = mean[j] - (sum[j] + x[j]) / s;
                    r * r
                })
                .sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        let i = best.1;
        taken[i] = true;
        for (a, v) in sum.iter_mut().zip(group[i]) {
            *a += v;
        }
        chosen.push(i);
    }
    chosen
}

/// Mean and population (divisor n) diagonal variance of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrototypeStore {
    pub classes: BTreeMap<usize, Prototype>,
}

/// Folds the non-NA items into the store with Welford updates. A label seen
/// again is merged with its earlier statistics.
pub fn update_prototypes(store: &mut PrototypeStore, items: &[MemoryItem]) -> Result<()> {
    for (label, group) in group_by_label(items) {
        let dim = group[0].len();
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for (n, x) in group.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::DimensionMismatch(format!("ragged features for label {label}")));
            }
            let n1 = (n + 1) as f64;
            for j in 0..dim {
                let delta = x[j] - mean[j];
                mean[j] += delta / n1;
                m2[j] += delta * (x[j] - mean[j]);
            }
        }
        let count = group.len();
        let fresh = Prototype {
            variance: m2.iter().map(|m| m / count as f64).collect(),
            mean,
            count,
        };
        let merged = match store.classes.remove(&label) {
            None => fresh,
            Some(old) => merge(&old, &fresh)?,
        };
        store.classes.insert(label, merged);
    }
    Ok(())
}

fn merge(a: &Prototype, b: &Prototype) -> Result<Prototype> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::DimensionMismatch("prototype widths differ".into()));
    }
    let (na, nb) = (a.count as f64, b.count as f64);
    let n = na + nb;
    let mut mean = Vec::with_capacity(a.mean.len());
    let mut variance = Vec::with_capacity(a.mean.len());
    for j in 0..a.mean.len() {
        let d = b.mean[j] - a.mean[j];
        mean.push(a.mean[j] + d * nb / n);
        let m2 = a.variance[j] * na + b.variance[j] * nb + d * d * na * nb / n;
        variance.push(m2 / n);
    }
    Ok(Prototype {
        mean,
        variance,
        count: a.count + b.count,
    })
}

/// Draws `ratio * per_label_real[label]` samples from each label's prototype.
pub fn generate_synthetic(
    store: &PrototypeStore,
    per_label_real: &BTreeMap<usize, usize>,
    ratio: usize,
    variance_floor: f64,
    rng: &mut SeededRng,
) -> Result<Vec<MemoryItem>> {
    let mut out = Vec::new();
    if ratio == 0 {
        return Ok(out);
    }
    for (&label, &real) in per_label_real {
        let proto = store
            .classes
            .get(&label)
            .ok_or_else(|| Error::InvalidInput(format!("no prototype for label {label}")))?;
        let var: Vec<f64> = proto.variance.iter().map(|v| v.max(variance_floor)).collect();
        let draws = gaussian_sample(&proto.mean, &var, ratio * real, rng)?;
        out.extend((0..draws.rows()).map(|r| MemoryItem {
            features: draws.row(r).to_vec(),
            label,
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub item: MemoryItem,
    pub synthetic: bool,
}

/// Stored exemplars plus generated items, label-major, real before
/// synthetic within a label, each in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EffectiveBuffer {
    pub entries: Vec<BufferEntry>,
}

impl EffectiveBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn effective_buffer(buffer: &ReplayBuffer, synthetic: &[MemoryItem]) -> EffectiveBuffer {
    let mut by_label: BTreeMap<usize, Vec<BufferEntry>> = BTreeMap::new();
    for (&label, items) in &buffer.slots {
        by_label.entry(label).or_default().extend(items.iter().map(|f| BufferEntry {
            item: MemoryItem {
                features: f.clone(),
                label,
            },
            synthetic: false,
        }));
    }
    for it in synthetic {
        by_label.entry(it.label).or_default().push(BufferEntry {
            item: it.clone(),
            synthetic: true,
        });
    }
    EffectiveBuffer {
        entries: by_label.into_values().flatten().collect(),
    }
}

/// Everything the memory keeps between tasks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayState {
    pub buffer: ReplayBuffer,
    pub prototypes: PrototypeStore,
    /// Per-label exemplar counts that set the synthetic volume, kept even
    /// when the buffer itself is disabled.
    pub nominal_counts: BTreeMap<usize, usize>,
}

impl ReplayState {
    pub fn new(capacity: usize) -> Self {
        Self {
            buffer: ReplayBuffer::new(capacity),
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn items(label: usize, xs: &[&[f64]]) -> Vec<MemoryItem> {
        xs.iter()
            .map(|x| MemoryItem {
                features: x.to_vec(),
                label,
            })
            .collect()
    }

    #[test]
    fn small_class_is_kept_whole() {
        let its = items(3, &[&[1.0], &[2.0], &[3.0]]);
        let mut rng = SeededRng::new(0);
        for s in [SelectionStrategy::ClosestToMean, SelectionStrategy::Random] {
            let sel = select_memory(&its, 20, s, &mut rng).unwrap();
            assert_eq!(sel[&3].len(), 3);
        }
    }

    #[test]
    fn herding_on_identical_vectors() {
        let its = items(1, &[&[0.5, -1.0][..]; 30]);
        let sel = select_memory(&its, 20, SelectionStrategy::ClosestToMean, &mut SeededRng::new(0)).unwrap();
        assert_eq!(sel[&1].len(), 20);
        assert!(sel[&1].iter().all(|x| x == &[0.5, -1.0]));
    }

    #[test]
    fn herding_tracks_the_mean() {
        let mut rng = SeededRng::new(4);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        let its: Vec<MemoryItem> = pts.iter().map(|p| MemoryItem { features: p.clone(), label: 1 }).collect();
        let sel = select_memory(&its, 10, SelectionStrategy::ClosestToMean, &mut rng).unwrap();
        let mean = |v: &[Vec<f64>]| -> Vec<f64> {
            (0..2).map(|j| v.iter().map(|x| x[j]).sum::<f64>() / v.len() as f64).collect()
        };
        let (m, s) = (mean(&pts), mean(&sel[&1]));
        let dist = ((m[0] - s[0]).powi(2) + (m[1] - s[1]).powi(2)).sqrt();
        assert!(dist < 0.05, "{dist}");
    }

    #[test]
    fn random_selection_is_seeded() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let its: Vec<MemoryItem> = pts.iter().map(|p| MemoryItem { features: p.clone(), label: 2 }).collect();
        let a = select_memory(&its, 5, SelectionStrategy::Random, &mut SeededRng::new(9)).unwrap();
        let b = select_memory(&its, 5, SelectionStrategy::Random, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn buffer_capacity_and_immutability() {
        let mut buf = ReplayBuffer::new(2);
        buf.extend(BTreeMap::from([(1, vec![vec![1.0], vec![2.0]])])).unwrap();
        let before = buf.slots[&1].clone();
        assert!(buf.extend(BTreeMap::from([(2, vec![vec![0.0]; 3])])).is_err());
        assert!(buf.extend(BTreeMap::from([(1, vec![vec![9.0]])])).is_err());
        buf.extend(BTreeMap::from([(2, vec![vec![0.0]])])).unwrap();
        assert_eq!(buf.slots[&1], before);
        assert_eq!(buf.len(), 3);
    }

    #[test]
    fn prototype_analytic_cases() {
        let mut store = PrototypeStore::default();
        update_prototypes(&mut store, &items(1, &[&[4.0, -1.0]])).unwrap();
        assert_eq!(store.classes[&1].mean, vec![4.0, -1.0]);
        assert_eq!(store.classes[&1].variance, vec![0.0, 0.0]);
        update_prototypes(&mut store, &items(2, &[&[0.0], &[2.0]])).unwrap();
        assert_eq!(store.classes[&2].mean, vec![1.0]);
        assert_eq!(store.classes[&2].variance, vec![1.0]);
    }

    #[test]
    fn prototype_matches_two_pass() {
        let mut rng = SeededRng::new(12);
        let pts: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..6).map(|j| 3.0 * j as f64 + rng.sample::<f64, _>(StandardNormal) * (j + 1) as f64).collect())
            .collect();
        let its: Vec<MemoryItem> = pts.iter().map(|p| MemoryItem { features: p.clone(), label: 5 }).collect();
        let mut store = PrototypeStore::default();
        update_prototypes(&mut store, &its).unwrap();
        for j in 0..6 {
            let mean = pts.iter().map(|x| x[j]).sum::<f64>() / 500.0;
            let var = pts.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / 500.0;
            assert!((store.classes[&5].mean[j] - mean).abs() < 1e-10);
            assert!((store.classes[&5].variance[j] - var).abs() < 1e-10);
        }
        // merging halves equals one pass over the whole
        let mut halves = PrototypeStore::default();
        update_prototypes(&mut halves, &its[..200]).unwrap();
        update_prototypes(&mut halves, &its[200..]).unwrap();
        for j in 0..6 {
            assert!((halves.classes[&5].mean[j] - store.classes[&5].mean[j]).abs() < 1e-10);
            assert!((halves.classes[&5].variance[j] - store.classes[&5].variance[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn synthetic_counts_and_degenerate_case() {
        let mut store = PrototypeStore::default();
        update_prototypes(&mut store, &items(1, &[&[1.0, 2.0]])).unwrap();
        let real = BTreeMap::from([(1, 20)]);
        let mut rng = SeededRng::new(1);
        assert!(generate_synthetic(&store, &real, 0, 0.0, &mut rng).unwrap().is_empty());
        let syn = generate_synthetic(&store, &real, 10, 0.0, &mut rng).unwrap();
        assert_eq!(syn.len(), 200);
        assert!(syn.iter().all(|s| s.features == vec![1.0, 2.0] && s.label == 1));
        let missing = BTreeMap::from([(7, 1)]);
        assert!(generate_synthetic(&store, &missing, 1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn effective_buffer_assembly() {
        let mut buf = ReplayBuffer::new(5);
        buf.extend(BTreeMap::from([(1, vec![vec![1.0]]), (3, vec![vec![3.0], vec![3.5]])])).unwrap();
        let eff = effective_buffer(&buf, &[]);
        assert_eq!(eff.len(), 3);
        assert!(eff.entries.iter().all(|e| !e.synthetic));

        let syn = items(1, &[&[1.1], &[1.2]]);
        let only = effective_buffer(&ReplayBuffer::new(5), &syn);
        assert_eq!(only.len(), 2);
        assert!(only.entries.iter().all(|e| e.synthetic));

        let both = effective_buffer(&buf, &syn);
        assert_eq!(both.len(), 5);
        let labels: Vec<usize> = both.entries.iter().map(|e| e.item.label).collect();
        assert_eq!(labels, vec![1, 1, 1, 3, 3]);
        assert!(!both.entries[0].synthetic && both.entries[1].synthetic);
    }
}
