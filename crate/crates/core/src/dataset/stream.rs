use std::collections::HashSet;

use super::{Dataset, Split, NA};
use crate::error::{Error, Result};

/// An instance reference with the label it carries in a particular task context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example {
    /// Index into [`Dataset::instances`].
    pub index: usize,
    /// Effective global label (gold, or [`NA`] after relabeling).
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Task {
    /// Non-NA label subset introduced by this task.
    pub labels: Vec<usize>,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    /// This task's own test pool.
    pub test: Vec<Example>,
    /// Cumulative evaluation pool used after training this task. Filled by
    /// [`apply_oracle_negative`].
    pub eval: Vec<Example>,
}

/// Ordered sequence of tasks over one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub relabeled: bool,
}

impl TaskStream {
    /// Builds the raw stream from a dataset's published layout. Tasks without
    /// a dev pool get every tenth train item moved into dev.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        ds.validate()?;
        let mut tasks: Vec<Task> = ds
            .layout
            .task_labels
            .iter()
            .map(|labels| Task {
                labels: labels.clone(),
                ..Task::default()
            })
            .collect();
        for (index, (inst, p)) in ds.instances.iter().zip(&ds.layout.placement).enumerate() {
            let ex = Example {
                index,
                label: inst.label,
            };
            let t = &mut tasks[p.task];
            match p.split {
                Split::Train => t.train.push(ex),
                Split::Dev => t.dev.push(ex),
                Split::Test => t.test.push(ex),
            }
        }
        for t in tasks.iter_mut() {
            if t.dev.is_empty() && !t.train.is_empty() {
                let (dev, train): (Vec<_>, Vec<_>) = t
                    .train
                    .iter()
                    .enumerate()
                    .partition(|(i, _)| i % 10 == 9);
                t.dev = dev.into_iter().map(|(_, e)| *e).collect();
                t.train = train.into_iter().map(|(_, e)| *e).collect();
            }
        }
        Ok(Self {
            tasks,
            relabeled: false,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Reorders the raw tasks. `order[k]` is the original index of the k-th task.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if self.relabeled {
            return Err(Error::Config("permute the raw stream before relabeling".into()));
        }
        check_permutation(order, self.tasks.len())?;
        Ok(Self {
            tasks: order.iter().map(|&i| self.tasks[i].clone()).collect(),
            relabeled: false,
        })
    }

    /// Merges every task into one, for joint (upper-bound) training.
    pub fn joint(&self) -> Self {
        let mut all = Task::default();
        for t in &self.tasks {
            all.labels.extend_from_slice(&t.labels);
            all.train.extend_from_slice(&t.train);
            all.dev.extend_from_slice(&t.dev);
            all.test.extend_from_slice(&t.test);
        }
        all.eval = all.test.clone();
        Self {
            tasks: vec![all],
            relabeled: true,
        }
    }

    /// Union of label subsets of tasks `0..=t`.
    pub fn seen_labels(&self, t: usize) -> Vec<usize> {
        self.tasks[..=t].iter().flat_map(|k| k.labels.iter().copied()).collect()
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::Config(format!("permutation of length {} for {n} tasks", order.len())));
    }
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config(format!("malformed permutation {order:?}")));
        }
    }
    Ok(())
}

/// Oracle-negative relabeling.
///
/// For task `t`: train/dev items whose gold label belongs to an earlier
/// task are dropped, items of future tasks become `NA`. The evaluation pool
/// after task `t` is the union of test pools `0..=t` with future labels
/// mapped to `NA`.
pub fn apply_oracle_negative(stream: &TaskStream) -> Result<TaskStream> {
    if stream.relabeled {
        return Err(Error::Config("stream is already relabeled".into()));
    }
    let mut owner = HashSet::new();
    for t in &stream.tasks {
        for &l in &t.labels {
            if l == NA || !owner.insert(l) {
                return Err(Error::Ontology(format!("label {l} is NA or owned by two tasks")));
            }
        }
    }
    let check = |ex: &Example| -> Result<()> {
        if ex.label != NA && !owner.contains(&ex.label) {
            return Err(Error::Ontology(format!(
                "instance {} has label {} outside every task",
                ex.index, ex.label
            )));
        }
        Ok(())
    };

    let mut previous: HashSet<usize> = HashSet::new();
    let mut tasks = Vec::with_capacity(stream.tasks.len());
    let mut eval_acc: Vec<Example> = Vec::new();
    for task in &stream.tasks {
        let current: HashSet<usize> = task.labels.iter().copied().collect();
        let relabel = |split: &[Example]| -> Result<Vec<Example>> {
            let mut out = Vec::with_capacity(split.len());
            for ex in split {
                check(ex)?;
                if previous.contains(&ex.label) {
                    continue;
                }
                let label = if current.contains(&ex.label) { ex.label } else { NA };
                out.push(Example { index: ex.index, label });
            }
            Ok(out)
        };
        let train = relabel(&task.train)?;
        let dev = relabel(&task.dev)?;
        for ex in &task.test {
            check(ex)?;
        }
        eval_acc.extend_from_slice(&task.test);
        let seen: HashSet<usize> = previous.union(&current).copied().collect();
        let eval = eval_acc
            .iter()
            .map(|ex| Example {
                index: ex.index,
                label: if seen.contains(&ex.label) { ex.label } else { NA },
            })
            .collect();
        tasks.push(Task {
            labels: task.labels.clone(),
            train,
            dev,
            test: task.test.clone(),
            eval,
        });
        previous = seen;
    }
    Ok(TaskStream {
        tasks,
        relabeled: true,
    })
}

/// Checks the post-relabeling invariants; a stream with any planted
/// violation is rejected.
pub fn validate_oracle_negative(stream: &TaskStream) -> Result<()> {
    let mut seen: HashSet<usize> = HashSet::new();
    for (t, task) in stream.tasks.iter().enumerate() {
        let current: HashSet<usize> = task.labels.iter().copied().collect();
        if let Some(l) = current.iter().find(|l| seen.contains(*l)) {
            return Err(Error::Ontology(format!("task {t} reuses label {l}")));
        }
        for ex in task.train.iter().chain(&task.dev) {
            if ex.label != NA && !current.contains(&ex.label) {
                return Err(Error::Ontology(format!(
                    "task {t} train/dev instance {} carries out-of-task label {}",
                    ex.index, ex.label
                )));
            }
        }
        seen.extend(current);
        for ex in &task.eval {
            if ex.label != NA && !seen.contains(&ex.label) {
                return Err(Error::Ontology(format!(
                    "task {t} evaluation instance {} carries future label {}",
                    ex.index, ex.label
                )));
            }
        }
    }
    Ok(())
}
