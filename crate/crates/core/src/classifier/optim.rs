use serde::{Deserialize, Serialize};

use super::{ClassifierParams, ParamGrads};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::ot::EmbeddingTables;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay and bias correction.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
    mg: Vec<f64>,
    vg: Vec<f64>,
}

fn update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamWConfig, t: i32) {
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        theta[i] = theta[i] * decay - cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
            mg: Vec::new(),
            vg: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One step on the classifier and on the trainable class-embedding rows.
    /// Frozen rows keep their values and moments.
    pub fn step(
        &mut self,
        params: &mut ClassifierParams,
        grads: &ParamGrads,
        tables: &mut EmbeddingTables,
        dg: &Matrix<f64>,
    ) -> Result<()> {
        let np = params.w1.as_slice().len() + params.b1.len() + params.w2.as_slice().len() + params.b2.len();
        let ng = tables.g.as_slice().len();
        if grads.w1.as_slice().len() + grads.b1.len() + grads.w2.as_slice().len() + grads.b2.len() != np
            || dg.as_slice().len() != ng
        {
            return Err(Error::DimensionMismatch("gradient shapes differ from parameters".into()));
        }
        if self.m.is_empty() {
            self.m = vec![0.0; np];
            self.v = vec![0.0; np];
            self.mg = vec![0.0; ng];
            self.vg = vec![0.0; ng];
        } else if self.m.len() != np || self.mg.len() != ng {
            return Err(Error::DimensionMismatch("parameters changed shape under the optimizer".into()));
        }
        self.t += 1;
        let cfg = self.cfg;
        let t = self.t;
        let mut off = 0;
        let pairs = [
            (params.w1.as_mut_slice(), grads.w1.as_slice()),
            (&mut params.b1[..], &grads.b1[..]),
            (params.w2.as_mut_slice(), grads.w2.as_slice()),
            (&mut params.b2[..], &grads.b2[..]),
        ];
        for (theta, g) in pairs {
            let n = theta.len();
            update(theta, g, &mut self.m[off..off + n], &mut self.v[off..off + n], &cfg, t);
            off += n;
        }
        let d = tables.g.cols();
        for r in 0..tables.g.rows() {
            if !tables.trainable[r] {
                continue;
            }
            let span = r * d..(r + 1) * d;
            update(
                tables.g.row_mut(r),
                &dg.as_slice()[span.clone()],
                &mut self.mg[span.clone()],
                &mut self.vg[span],
                &cfg,
                t,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn setup() -> (ClassifierParams, EmbeddingTables) {
        let mut rng = SeededRng::new(0);
        let mut p = ClassifierParams::new(3, 4, &mut rng);
        p.w2 = Matrix::from_fn(2, 4, |r, c| (r + c) as f64 * 0.1);
        p.b2 = vec![0.3, -0.2];
        let mut t = EmbeddingTables::new(2);
        t.g.push_row(&[1.0, 2.0]).unwrap();
        t.g.push_row(&[-1.0, 0.5]).unwrap();
        t.trainable = vec![false, true];
        (p, t)
    }

    #[test]
    fn zero_gradient_only_decays() {
        let (mut p, mut t) = setup();
        let before = (p.clone(), t.clone());
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let g = ParamGrads::zeros_like(&p);
        let dg = Matrix::zeros(2, 2);
        AdamW::new(cfg).step(&mut p, &g, &mut t, &dg).unwrap();
        let f = 1.0 - 0.1 * 0.5;
        for (a, b) in p.w1.as_slice().iter().zip(before.0.w1.as_slice()) {
            assert_eq!(*a, b * f);
        }
        assert_eq!(p.b2, vec![0.3 * f, -0.2 * f]);
        assert_eq!(t.g.row(0), before.1.g.row(0));
        assert_eq!(t.g.row(1), &[-1.0 * f, 0.5 * f]);

        let (mut p, mut t) = setup();
        let cfg0 = AdamWConfig {
            weight_decay: 0.0,
            ..cfg
        };
        AdamW::new(cfg0).step(&mut p, &g, &mut t, &dg).unwrap();
        assert_eq!((p, t), before);
    }

    #[test]
    fn hand_traced_step_on_square() {
        // f(x) = x^2 at x = 1: g = 2, m = 0.2, v = 0.004, mhat = 2, vhat = 4
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut x = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        update(&mut x, &[2.0], &mut m, &mut v, &cfg, 1);
        let expected = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((x[0] - expected).abs() < 1e-15);
        assert!(x[0] < 1.0);
        assert!((m[0] - 0.2).abs() < 1e-15 && (v[0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn frozen_rows_untouched_under_gradient() {
        let (mut p, mut t) = setup();
        let frozen = t.g.row(0).to_vec();
        let mut g = ParamGrads::zeros_like(&p);
        g.b1.iter_mut().for_each(|x| *x = 1.0);
        let dg = Matrix::from_fn(2, 2, |_, _| 3.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        for _ in 0..5 {
            opt.step(&mut p, &g, &mut t, &dg).unwrap();
        }
        assert_eq!(t.g.row(0), &frozen[..]);
        assert!(t.g.row(1)[0] < -1.0);
    }
}
