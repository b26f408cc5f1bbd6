use super::{ClassifierParams, ParamGrads, TeacherSnapshot, TrainingConfig};
use crate::dataset::{FeatureInstance, Vocabulary, NA};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax, Matrix};
use crate::ot::{ot_loss_and_grads, EmbeddingTables};

/// Feature vectors with head-index labels (0 = NA, `k` = k-th seen class).
#[derive(Debug, Clone, Default)]
pub struct LabeledBatch<'a> {
    pub features: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl LabeledBatch<'_> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Which optional terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossToggles {
    pub replay: bool,
    pub distill: bool,
    /// OT alignment together with the embedding-proximity term.
    pub ot: bool,
}

/// Per-term values. `embed_reg` is unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub classification: f64,
    pub replay: f64,
    pub distill: f64,
    pub ot: f64,
    pub embed_reg: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.classification + self.replay + self.distill + self.ot + self.alpha * self.embed_reg
    }
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub loss: f64,
    pub breakdown: LossBreakdown,
    pub grads: ParamGrads,
    /// Gradient with respect to the class embeddings.
    pub dg: Matrix<f64>,
    pub nonconverged: usize,
}

/// Weighted NLL over full-head softmax; returns the loss and `dL/dlogits`.
fn weighted_nll(logits: &Matrix<f64>, labels: &[usize], weights: &[f64]) -> Result<(f64, Matrix<f64>)> {
    let mut loss = 0.0;
    let mut d = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let y = labels[r];
        if y >= logits.cols() {
            return Err(Error::InvalidInput(format!("label {y} outside a {}-way head", logits.cols())));
        }
        let w = weights[r];
        if w == 0.0 {
            continue;
        }
        let ls = log_softmax(logits.row(r));
        loss -= w * ls[y];
        for (c, dv) in d.row_mut(r).iter_mut().enumerate() {
            *dv = w * (ls[c].exp() - f64::from(u8::from(c == y)));
        }
    }
    Ok((loss, d))
}

fn classification_weights(labels: &[usize], eta: f64) -> Vec<f64> {
    let n_na = labels.iter().filter(|&&y| y == NA).count();
    let n_pos = labels.len() - n_na;
    labels
        .iter()
        .map(|&y| {
            if y == NA {
                eta / n_na as f64
            } else {
                (1.0 - eta) / n_pos as f64
            }
        })
        .collect()
}

/// Cross-entropy against teacher distributions over the teacher's outputs,
/// with the student softmax restricted to those outputs.
fn distill_terms(logits: &Matrix<f64>, teacher: &Matrix<f64>) -> (f64, Matrix<f64>) {
    let t = teacher.cols();
    let mut loss = 0.0;
    let mut d = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let ls = log_softmax(&logits.row(r)[..t]);
        let pt = teacher.row(r);
        loss -= pt.iter().zip(&ls).map(|(p, l)| p * l).sum::<f64>();
        let mass: f64 = pt.iter().sum();
        for c in 0..t {
            d[(r, c)] = mass * ls[c].exp() - pt[c];
        }
    }
    (loss, d)
}

fn check_labels(batch: &LabeledBatch) -> Result<()> {
    if batch.labels.len() != batch.features.len() {
        return Err(Error::DimensionMismatch("labels and features differ in length".into()));
    }
    Ok(())
}

/// `eta * mean NLL(NA items) + (1 - eta) * mean NLL(other items)`; a term
/// whose subset is empty is dropped.
pub fn loss_classification(params: &ClassifierParams, batch: &LabeledBatch, eta: f64) -> Result<(f64, ParamGrads)> {
    check_labels(batch)?;
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let fw = params.forward_batch(&batch.features)?;
    let (loss, d) = weighted_nll(&fw.logits, &batch.labels, &classification_weights(&batch.labels, eta))?;
    Ok((loss, params.backward(&batch.features, &fw, &d)))
}

/// Mean NLL over the effective buffer.
pub fn loss_replay(params: &ClassifierParams, batch: &LabeledBatch) -> Result<(f64, ParamGrads)> {
    check_labels(batch)?;
    if batch.is_empty() {
        return Ok((0.0, ParamGrads::zeros_like(params)));
    }
    let fw = params.forward_batch(&batch.features)?;
    let w = vec![1.0 / batch.len() as f64; batch.len()];
    let (loss, d) = weighted_nll(&fw.logits, &batch.labels, &w)?;
    Ok((loss, params.backward(&batch.features, &fw, &d)))
}

/// Summed teacher-student cross-entropy over the buffer items.
pub fn loss_distill(
    params: &ClassifierParams,
    features: &[&[f64]],
    teacher: Option<&TeacherSnapshot>,
) -> Result<(f64, ParamGrads)> {
    let Some(teacher) = teacher else {
        return Ok((0.0, ParamGrads::zeros_like(params)));
    };
    if teacher.outputs() > params.outputs() {
        return Err(Error::DimensionMismatch("teacher has more outputs than the student".into()));
    }
    if features.is_empty() {
        return Ok((0.0, ParamGrads::zeros_like(params)));
    }
    let fw = params.forward_batch(features)?;
    let (loss, d) = distill_terms(&fw.logits, &teacher.probs(features)?);
    Ok((loss, params.backward(features, &fw, &d)))
}

/// `|G[..n] - G_prev|_F^2` over the rows shared with the snapshot. The
/// gradient is zero on frozen rows.
pub fn loss_embed_reg(tables: &EmbeddingTables) -> Result<(f64, Matrix<f64>)> {
    tables.validate()?;
    let mut grad = Matrix::zeros(tables.g.rows(), tables.g.cols());
    let mut loss = 0.0;
    for r in 0..tables.g_prev.rows() {
        for (c, (g, p)) in tables.g.row(r).iter().zip(tables.g_prev.row(r)).enumerate() {
            let diff = g - p;
            loss += diff * diff;
            if tables.trainable[r] {
                grad[(r, c)] = 2.0 * diff;
            }
        }
    }
    Ok((loss, grad))
}

/// Full objective for one step: classification (and OT) on the current
/// batch, replay and distillation on the buffer batch.
///
/// `instances[i]` is the source instance of `current` row `i`; rows whose
/// label is NA are left out of the OT term.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    params: &ClassifierParams,
    tables: &EmbeddingTables,
    teacher: Option<&TeacherSnapshot>,
    current: &LabeledBatch,
    instances: &[&FeatureInstance],
    buffer: Option<&LabeledBatch>,
    vocab: &Vocabulary,
    cfg: &TrainingConfig,
) -> Result<TotalLoss> {
    check_labels(current)?;
    if instances.len() != current.len() {
        return Err(Error::DimensionMismatch("instances and batch rows differ".into()));
    }
    let toggles = cfg.toggles();
    let mut bd = LossBreakdown {
        alpha: cfg.alpha,
        ..LossBreakdown::default()
    };
    let mut grads = ParamGrads::zeros_like(params);
    let mut dg = Matrix::zeros(tables.g.rows(), tables.g.cols());
    let mut nonconverged = 0;

    if !current.is_empty() {
        let fw = params.forward_batch(&current.features)?;
        let (lc, mut d) = weighted_nll(&fw.logits, &current.labels, &classification_weights(&current.labels, cfg.eta))?;
        bd.classification = lc;

        let rows: Vec<usize> = (0..current.len()).filter(|&r| current.labels[r] != NA).collect();
        if toggles.ot && !rows.is_empty() && params.num_classes() > 0 {
            let c = params.num_classes();
            let sub = Matrix::from_fn(rows.len(), c, |i, k| fw.logits[(rows[i], k + 1)]);
            let batch: Vec<&FeatureInstance> = rows.iter().map(|&r| instances[r]).collect();
            let ot = ot_loss_and_grads(&batch, &sub, tables, vocab, &cfg.ot)?;
            bd.ot = ot.loss;
            nonconverged = ot.nonconverged;
            for (i, &r) in rows.iter().enumerate() {
                for k in 0..c {
                    d[(r, k + 1)] += ot.dlogits[(i, k)];
                }
            }
            for (a, b) in dg.as_mut_slice().iter_mut().zip(ot.dg.as_slice()) {
                *a += b;
            }
        }
        grads.add_scaled(&params.backward(&current.features, &fw, &d), 1.0);
    }

    if let Some(buf) = buffer.filter(|b| !b.is_empty() && (toggles.replay || toggles.distill)) {
        check_labels(buf)?;
        let fw = params.forward_batch(&buf.features)?;
        let mut d = Matrix::zeros(buf.len(), params.outputs());
        if toggles.replay {
            let w = vec![1.0 / buf.len() as f64; buf.len()];
            let (lr, dr) = weighted_nll(&fw.logits, &buf.labels, &w)?;
            bd.replay = lr;
            d = dr;
        }
        if let Some(t) = teacher.filter(|_| toggles.distill) {
            if t.outputs() > params.outputs() {
                return Err(Error::DimensionMismatch("teacher has more outputs than the student".into()));
            }
            let (ld, dd) = distill_terms(&fw.logits, &t.probs(&buf.features)?);
            bd.distill = ld;
            for (a, b) in d.as_mut_slice().iter_mut().zip(dd.as_slice()) {
                *a += b;
            }
        }
        grads.add_scaled(&params.backward(&buf.features, &fw, &d), 1.0);
    }

    if toggles.ot && cfg.alpha != 0.0 {
        let (lg, g) = loss_embed_reg(tables)?;
        bd.embed_reg = lg;
        for (a, b) in dg.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a += cfg.alpha * b;
        }
    }

    Ok(TotalLoss {
        loss: bd.total(),
        breakdown: bd,
        grads,
        dg,
        nonconverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::tests::{flatten, unflatten};
    use crate::numerics::{entropy, finite_diff_grad, relative_error, SeededRng};
    use rand::Rng;

    fn params(rng: &mut SeededRng, i: usize, h: usize, o: usize) -> ClassifierParams {
        let mut p = ClassifierParams::new(i, h, rng);
        p.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        p.w2 = Matrix::from_fn(o, h, |_, _| rng.random_range(-1.0..1.0));
        p.b2 = (0..o).map(|_| rng.random_range(-0.5..0.5)).collect();
        p
    }

    fn inputs(rng: &mut SeededRng, n: usize, i: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..i).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn check_grad(p: &ClassifierParams, f: impl Fn(&ClassifierParams) -> f64, g: &ParamGrads) {
        let fd = finite_diff_grad(|v| f(&unflatten(p, v)), &flatten(p), 1e-6);
        let e = relative_error(&g.flatten(), &fd);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn classification_cases() {
        let mut rng = SeededRng::new(0);
        let mut p = ClassifierParams::new(3, 4, &mut rng);
        p.w2 = Matrix::zeros(4, 4);
        p.b2 = vec![0.0; 4];
        let xs = inputs(&mut rng, 4, 3);
        let batch = LabeledBatch {
            features: xs.iter().map(Vec::as_slice).collect(),
            labels: vec![0, 1, 0, 3],
        };
        let (l, _) = loss_classification(&p, &batch, 0.3).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);

        let (l0, g0) = loss_classification(&p, &LabeledBatch { labels: vec![0; 4], ..batch.clone() }, 0.0).unwrap();
        assert_eq!(l0, 0.0);
        assert!(g0.flatten().iter().all(|&v| v == 0.0));

        // a head confident on every gold label
        let mut sure = p.clone();
        sure.w1 = Matrix::zeros(4, 3);
        sure.b1 = vec![0.0; 4];
        sure.b2 = vec![800.0, 0.0, 0.0, 0.0];
        let all_na = LabeledBatch { labels: vec![0; 4], ..batch };
        assert_eq!(loss_classification(&sure, &all_na, 0.9).unwrap().0, 0.0);
    }

    #[test]
    fn classification_gradient() {
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed);
            let p = params(&mut rng, 4, 5, 4);
            let xs = inputs(&mut rng, 5, 4);
            let batch = LabeledBatch {
                features: xs.iter().map(Vec::as_slice).collect(),
                labels: (0..5).map(|_| rng.random_range(0..4)).collect(),
            };
            let (_, g) = loss_classification(&p, &batch, 0.8).unwrap();
            check_grad(&p, |q| loss_classification(q, &batch, 0.8).unwrap().0, &g);
        }
    }

    #[test]
    fn replay_cases_and_gradient() {
        let mut rng = SeededRng::new(7);
        let p = params(&mut rng, 4, 5, 3);
        let (l, g) = loss_replay(&p, &LabeledBatch::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));

        let mut flat = p.clone();
        flat.w2 = Matrix::zeros(3, 5);
        flat.b2 = vec![0.0; 3];
        let x = [0.1, 0.2, 0.3, 0.4];
        let one = LabeledBatch { features: vec![&x], labels: vec![2] };
        assert!((loss_replay(&flat, &one).unwrap().0 - 3f64.ln()).abs() < 1e-12);

        for seed in 0..20 {
            let mut rng = SeededRng::new(100 + seed);
            let p = params(&mut rng, 4, 5, 3);
            let xs = inputs(&mut rng, 6, 4);
            let labels: Vec<usize> = (0..6).map(|i| 1 + i % 2).collect();
            let batch = LabeledBatch { features: xs.iter().map(Vec::as_slice).collect(), labels };
            let (l, g) = loss_replay(&p, &batch).unwrap();
            // same items, all non-NA, eta = 0: the classification loss is the same mean NLL
            let (lc, _) = loss_classification(&p, &batch, 0.0).unwrap();
            assert!((l - lc).abs() < 1e-12);
            check_grad(&p, |q| loss_replay(q, &batch).unwrap().0, &g);
        }
    }

    #[test]
    fn distill_cases_and_gradient() {
        let mut rng = SeededRng::new(8);
        let teacher_params = params(&mut rng, 4, 5, 3);
        let teacher = TeacherSnapshot::new(&teacher_params);
        let xs = inputs(&mut rng, 3, 4);
        let feats: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();

        // student equal to the teacher on the old outputs, with two new zero rows
        let mut student = teacher_params.clone();
        student.w2.push_row(&[0.0; 5]).unwrap();
        student.w2.push_row(&[0.0; 5]).unwrap();
        student.b2.extend([0.0, 0.0]);
        let pt = teacher.probs(&feats).unwrap();
        let expected: f64 = (0..3).map(|r| entropy(pt.row(r))).sum();
        let (l, _) = loss_distill(&student, &feats, Some(&teacher)).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert_eq!(loss_distill(&student, &feats, None).unwrap().0, 0.0);

        // one-hot teacher: the student's NLL of the teacher's argmax
        let mut hard = teacher_params.clone();
        hard.w2 = Matrix::zeros(3, 5);
        hard.b2 = vec![0.0, 900.0, 0.0];
        let hard_t = TeacherSnapshot::new(&hard);
        let (l, _) = loss_distill(&student, &feats, Some(&hard_t)).unwrap();
        let nll: f64 = feats
            .iter()
            .map(|x| -log_softmax(&student.forward(x).unwrap()[..3])[1])
            .sum();
        assert!((l - nll).abs() < 1e-12);

        for seed in 0..20 {
            let mut rng = SeededRng::new(200 + seed);
            let t = TeacherSnapshot::new(&params(&mut rng, 4, 5, 3));
            let s = params(&mut rng, 4, 5, 5);
            let xs = inputs(&mut rng, 3, 4);
            let feats: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let (_, g) = loss_distill(&s, &feats, Some(&t)).unwrap();
            check_grad(&s, |q| loss_distill(q, &feats, Some(&t)).unwrap().0, &g);
        }
    }

    fn tables(rows: &[&[f64]], prev: &[&[f64]], trainable: &[bool]) -> EmbeddingTables {
        EmbeddingTables {
            g: Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
            g_prev: if prev.is_empty() {
                Matrix::zeros(0, rows[0].len())
            } else {
                Matrix::from_rows(&prev.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
            },
            trainable: trainable.to_vec(),
        }
    }

    #[test]
    fn embed_reg_cases_and_gradient() {
        let t = tables(&[&[1.0, 2.0], &[3.0, 4.0]], &[&[1.0, 2.0]], &[true, true]);
        assert_eq!(loss_embed_reg(&t).unwrap().0, 0.0);
        let t = tables(&[&[3.0]], &[&[1.0]], &[true]);
        assert_eq!(loss_embed_reg(&t).unwrap().0, 4.0);
        let t = tables(&[&[3.0], &[1.0]], &[&[1.0], &[0.0]], &[false, false]);
        let (l, g) = loss_embed_reg(&t).unwrap();
        assert_eq!(l, 5.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));

        for seed in 0..20 {
            let mut rng = SeededRng::new(300 + seed);
            let mut t = EmbeddingTables::new(3);
            for _ in 0..4 {
                let row: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                t.g.push_row(&row).unwrap();
                t.trainable.push(true);
            }
            t.g_prev = Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
            let (_, g) = loss_embed_reg(&t).unwrap();
            let fd = finite_diff_grad(
                |v| {
                    let mut u = t.clone();
                    u.g = Matrix::from_vec(4, 3, v.to_vec()).unwrap();
                    loss_embed_reg(&u).unwrap().0
                },
                t.g.as_slice(),
                1e-6,
            );
            assert!(relative_error(g.as_slice(), &fd) < 1e-4);
        }
    }

    struct Scene {
        vocab: Vocabulary,
        insts: Vec<FeatureInstance>,
        xs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        buf_xs: Vec<Vec<f64>>,
        buf_labels: Vec<usize>,
        params: ClassifierParams,
        tables: EmbeddingTables,
        teacher: TeacherSnapshot,
        cfg: TrainingConfig,
    }

    /// Two old classes, one new; four current rows (one NA) and three buffer rows.
    fn scene(seed: u64) -> Scene {
        use crate::dataset::VocabToken;
        use crate::ot::OtConfig;
        let mut rng = SeededRng::new(seed);
        let (words, de) = (5, 3);
        let tokens = (0..words)
            .map(|i| VocabToken {
                text: format!("w{i}"),
                is_verb: true,
            })
            .collect();
        let vocab = Vocabulary::new(tokens, Matrix::from_fn(words, de, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let labels = vec![1, 0, 3, 2];
        let insts: Vec<FeatureInstance> = labels
            .iter()
            .enumerate()
            .map(|(b, &l)| FeatureInstance {
                instance_id: format!("i{b}"),
                label: l,
                h_start: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                h_end: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                lm_logits_start: (0..words).map(|_| rng.random_range(-2.0..2.0)).collect(),
                lm_logits_end: (0..words).map(|_| rng.random_range(-2.0..2.0)).collect(),
                token_ids: vec![b as u32],
            })
            .collect();
        let xs = insts.iter().map(FeatureInstance::features).collect();
        let mut tables = EmbeddingTables::new(de);
        for k in 0..3 {
            let row: Vec<f64> = (0..de).map(|_| rng.random_range(-1.0..1.0)).collect();
            tables.g.push_row(&row).unwrap();
            tables.trainable.push(k > 0);
        }
        tables.g_prev = Matrix::from_fn(2, de, |_, _| rng.random_range(-1.0..1.0));
        let cfg = TrainingConfig {
            eta: 0.7,
            alpha: 0.5,
            ot: OtConfig {
                lambda: 0.5,
                epsilon: 0.7,
                kappa: 0.8,
                tol: 1e-14,
                max_iter: 100_000,
                ..OtConfig::default()
            },
            ..TrainingConfig::default()
        };
        Scene {
            vocab,
            insts,
            xs,
            labels,
            buf_xs: inputs(&mut rng, 3, 4),
            buf_labels: vec![1, 2, 0],
            params: params(&mut rng, 4, 5, 4),
            tables,
            teacher: TeacherSnapshot::new(&params(&mut rng, 4, 5, 3)),
            cfg,
        }
    }

    fn eval(sc: &Scene, p: &ClassifierParams, t: &EmbeddingTables, cfg: &TrainingConfig) -> TotalLoss {
        let current = LabeledBatch {
            features: sc.xs.iter().map(Vec::as_slice).collect(),
            labels: sc.labels.clone(),
        };
        let buffer = LabeledBatch {
            features: sc.buf_xs.iter().map(Vec::as_slice).collect(),
            labels: sc.buf_labels.clone(),
        };
        let insts: Vec<&FeatureInstance> = sc.insts.iter().collect();
        total_loss(p, t, Some(&sc.teacher), &current, &insts, Some(&buffer), &sc.vocab, cfg).unwrap()
    }

    #[test]
    fn total_loss_gradient_through_every_term() {
        for seed in 0..5 {
            let sc = scene(400 + seed);
            let out = eval(&sc, &sc.params, &sc.tables, &sc.cfg);
            let b = out.breakdown;
            assert!(b.classification > 0.0 && b.replay > 0.0 && b.distill > 0.0 && b.ot != 0.0 && b.embed_reg > 0.0, "{b:?}");
            assert_eq!(out.loss, b.total());

            check_grad(&sc.params, |q| eval(&sc, q, &sc.tables, &sc.cfg).loss, &out.grads);

            let (r, c) = (sc.tables.g.rows(), sc.tables.g.cols());
            let mut fd = finite_diff_grad(
                |v| {
                    let mut t = sc.tables.clone();
                    t.g = Matrix::from_vec(r, c, v.to_vec()).unwrap();
                    eval(&sc, &sc.params, &t, &sc.cfg).loss
                },
                sc.tables.g.as_slice(),
                1e-6,
            );
            // row 0 is frozen
            fd[..c].iter_mut().for_each(|v| *v = 0.0);
            let e = relative_error(out.dg.as_slice(), &fd);
            assert!(e < 1e-4, "seed {seed}: {e}");
        }
    }

    #[test]
    fn toggles_reduce_to_classification() {
        let sc = scene(7);
        let cfg = TrainingConfig {
            enable_ot: false,
            enable_replay: false,
            enable_distill: false,
            ..sc.cfg.clone()
        };
        let out = eval(&sc, &sc.params, &sc.tables, &cfg);
        let current = LabeledBatch {
            features: sc.xs.iter().map(Vec::as_slice).collect(),
            labels: sc.labels.clone(),
        };
        let (lc, g) = loss_classification(&sc.params, &current, cfg.eta).unwrap();
        assert_eq!(out.loss, lc);
        assert_eq!(out.grads.flatten(), g.flatten());
        assert!(out.dg.as_slice().iter().all(|&v| v == 0.0));

        let full = eval(&sc, &sc.params, &sc.tables, &sc.cfg);
        let no_alpha = eval(&sc, &sc.params, &sc.tables, &TrainingConfig { alpha: 0.0, ..sc.cfg.clone() });
        assert_eq!(no_alpha.breakdown.embed_reg, 0.0);
        assert!((full.loss - no_alpha.loss - 0.5 * full.breakdown.embed_reg).abs() < 1e-12);
    }
}
