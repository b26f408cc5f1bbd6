use rayon::prelude::*;

use super::{batch_support, build_cost_matrix, class_word_map, lm_head_distribution, EmbeddingTables, OtConfig, SinkhornSolver};
use crate::dataset::{FeatureInstance, Vocabulary, NA};
use crate::error::{Error, Result};
use crate::numerics::{norm, softmax_unchecked, Matrix};

/// Batch OT loss and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct OtLoss {
    /// Mean over the batch of `s(x, p) - epsilon * x^T log phi(p)`.
    pub loss: f64,
    /// Mean Sinkhorn distance alone.
    pub sinkhorn: f64,
    /// `B x C`, with respect to the non-NA class logits.
    pub dlogits: Matrix<f64>,
    /// `C x D_e`; rows of frozen classes are zero.
    pub dg: Matrix<f64>,
    /// Instances whose Sinkhorn solve hit `max_iter`.
    pub nonconverged: usize,
}

struct Item {
    loss: f64,
    distance: f64,
    dlogit: Vec<f64>,
    dcost: Matrix<f64>,
    converged: bool,
}

/// OT loss over a batch of non-NA triggers.
///
/// `logits` holds the non-NA class logits only, one row per instance, in
/// the same class order as the rows of `tables.g`. Class probabilities are
/// their softmax.
pub fn ot_loss_and_grads(
    batch: &[&FeatureInstance],
    logits: &Matrix<f64>,
    tables: &EmbeddingTables,
    vocab: &Vocabulary,
    cfg: &OtConfig,
) -> Result<OtLoss> {
    cfg.validate()?;
    let c = tables.num_classes();
    if c == 0 {
        return Err(Error::Domain("no classes to transport onto".into()));
    }
    if logits.rows() != batch.len() || logits.cols() != c {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} logits for {} instances and {c} classes",
            logits.rows(),
            logits.cols(),
            batch.len()
        )));
    }
    if let Some(inst) = batch.iter().find(|i| i.label == NA) {
        return Err(Error::InvalidInput(format!(
            "instance {} is NA and has no trigger distribution",
            inst.instance_id
        )));
    }
    let mut dg = Matrix::zeros(c, tables.dim());
    if batch.is_empty() {
        return Ok(OtLoss {
            loss: 0.0,
            sinkhorn: 0.0,
            dlogits: Matrix::zeros(0, c),
            dg,
            nonconverged: 0,
        });
    }

    let support = batch_support(batch, vocab, cfg.support);
    let cost = build_cost_matrix(vocab, &support, tables)?;
    let m = &cost.values;
    let solver = SinkhornSolver::new(m, cfg.lambda)?;
    let q = (cfg.epsilon > 0.0).then(|| class_word_map(m, cfg.kappa));

    let items: Vec<Item> = batch
        .par_iter()
        .enumerate()
        .map(|(b, inst)| -> Result<Item> {
            let x = lm_head_distribution(inst, cfg.tau, &support)?;
            let p = softmax_unchecked(logits.row(b));
            let sol = solver.solve(&x.probs, &p, cfg.tol, cfg.max_iter)?;

            // envelope: ds/dp = g (centered), ds/dM = P
            let mean_g = sol.dual_col.iter().sum::<f64>() / c as f64;
            let mut dldp: Vec<f64> = sol.dual_col.iter().map(|g| g - mean_g).collect();
            let mut dcost = sol.plan;
            let mut loss = sol.distance;

            if let Some(q) = &q {
                let eps = cfg.epsilon;
                let phi = q.matvec(&p);
                loss -= eps * x.probs.iter().zip(&phi).map(|(xv, fv)| xv * fv.ln()).sum::<f64>();
                let w: Vec<f64> = x.probs.iter().zip(&phi).map(|(xv, fv)| xv / fv).collect();
                // t_c = sum_v w_v Q_vc, so dT/dp_c = -eps t_c and, with
                // R_vc = -eps w_v p_c, dT/dM_vc = -(1/kappa) Q_vc (R_vc - sum_u R_uc Q_uc)
                //                               = (eps/kappa) p_c Q_vc (w_v - t_c)
                let t = q.t_matvec(&w);
                for (d, tk) in dldp.iter_mut().zip(&t) {
                    *d -= eps * tk;
                }
                let scale: Vec<f64> = p.iter().map(|pk| eps * pk / cfg.kappa).collect();
                for (v, wv) in w.iter().enumerate() {
                    let qrow = q.row(v);
                    for (k, d) in dcost.row_mut(v).iter_mut().enumerate() {
                        *d += scale[k] * qrow[k] * (wv - t[k]);
                    }
                }
            }

            let dot: f64 = p.iter().zip(&dldp).map(|(a, b)| a * b).sum();
            let dlogit = p.iter().zip(&dldp).map(|(pc, d)| pc * (d - dot)).collect();
            Ok(Item {
                loss,
                distance: sol.distance,
                dlogit,
                dcost,
                converged: sol.converged,
            })
        })
        .collect::<Result<_>>()?;

    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut dist = 0.0;
    let mut nonconverged = 0;
    let mut dlogits = Matrix::zeros(batch.len(), c);
    let mut dm: Matrix<f64> = Matrix::zeros(support.len(), c);
    for (b, it) in items.iter().enumerate() {
        loss += it.loss;
        dist += it.distance;
        nonconverged += usize::from(!it.converged);
        for (d, g) in dlogits.row_mut(b).iter_mut().zip(&it.dlogit) {
            *d = g / n;
        }
        for (d, g) in dm.as_mut_slice().iter_mut().zip(it.dcost.as_slice()) {
            *d += g;
        }
    }

    // m_vc = 1 - <e_v, g_c> / (|e_v| |g_c|)
    let units: Vec<Vec<f64>> = support
        .iter()
        .map(|&v| {
            let e = vocab.embedding(v);
            let ne = norm(e);
            e.iter().map(|x| x / ne).collect()
        })
        .collect();
    for k in 0..c {
        if !tables.trainable[k] {
            continue;
        }
        let gk = tables.g.row(k);
        let ng = norm(gk);
        let row = dg.row_mut(k);
        for (v, ev) in units.iter().enumerate() {
            let wv = dm[(v, k)] / n;
            if wv == 0.0 {
                continue;
            }
            let cos = 1.0 - m[(v, k)];
            for d in 0..row.len() {
                row[d] += wv * (-ev[d] / ng + cos * gk[d] / (ng * ng));
            }
        }
    }

    Ok(OtLoss {
        loss: loss / n,
        sinkhorn: dist / n,
        dlogits,
        dg,
        nonconverged,
    })
}
