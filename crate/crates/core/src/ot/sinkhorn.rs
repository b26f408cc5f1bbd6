//! Entropic optimal transport by Sinkhorn–Knopp scaling.
//!
//! Solves `min <P, M> + lambda * sum P_ij (log P_ij - 1)` over couplings with
//! marginals `a` (rows) and `b` (columns). Iterations run on scaling vectors
//! `u, v` with the Gibbs kernel `K = exp(-M / lambda)`; once a scaling factor
//! leaves `[1e-100, 1e100]` the solver restarts on log-domain potentials
//! `f = lambda log u`, `g = lambda log v`, annealing the regularization down
//! to `lambda` from the cost range.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, Matrix, Scalar};

const SCALING_MIN: f64 = 1e-100;
const SCALING_MAX: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions<T> {
    /// Entropic regularization strength.
    pub lambda: T,
    /// Stop once the largest marginal violation falls below this.
    pub tol: T,
    pub max_iter: usize,
}

impl Default for SinkhornOptions<f64> {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

/// Solution of one entropic OT problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan<T> {
    /// `|a| x |b|`, strictly positive.
    pub plan: Matrix<T>,
    /// Row potentials `f`.
    pub dual_row: Vec<T>,
    /// Column potentials `g`. The gradient of `distance` with respect to `b`
    /// up to an additive constant.
    pub dual_col: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub log_domain: bool,
    /// Largest absolute marginal violation of `plan`.
    pub max_violation: T,
    /// `<P, M>`.
    pub transport_cost: T,
    /// Regularized objective `<P, M> + lambda sum P (log P - 1)`.
    pub distance: T,
}

fn simplex_tolerance<T: Scalar>() -> T {
    T::of(1e-8).max(T::epsilon() * T::of(100.0))
}

pub(crate) fn check_marginal<T: Scalar>(x: &[T], what: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Domain(format!("{what} is empty")));
    }
    if x.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
        return Err(Error::Domain(format!("{what} must be strictly positive and finite")));
    }
    let s: T = x.iter().copied().sum();
    if (s - T::one()).abs() > simplex_tolerance() {
        return Err(Error::Domain(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Sinkhorn solver bound to one cost matrix, so the Gibbs kernel is shared by
/// every problem solved against it.
#[derive(Debug, Clone)]
pub struct SinkhornSolver<'a, T> {
    cost: &'a Matrix<T>,
    kernel: Matrix<T>,
    lambda: T,
}

impl<'a, T: Scalar> SinkhornSolver<'a, T> {
    pub fn new(cost: &'a Matrix<T>, lambda: T) -> Result<Self> {
        if !(lambda > T::zero() && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        if !cost.is_finite() {
            return Err(Error::InvalidInput("cost matrix has non-finite entries".into()));
        }
        let kernel = cost.map(|m| (-m / lambda).exp());
        Ok(Self { cost, kernel, lambda })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn solve(&self, a: &[T], b: &[T], tol: T, max_iter: usize) -> Result<TransportPlan<T>> {
        let (n, m) = (self.cost.rows(), self.cost.cols());
        if a.len() != n || b.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "marginals of length {}/{} for a {n}x{m} cost",
                a.len(),
                b.len()
            )));
        }
        check_marginal(a, "row marginal")?;
        check_marginal(b, "column marginal")?;
        if !(tol > T::zero()) {
            return Err(Error::Domain("tolerance must be positive".into()));
        }
        match self.scaling(a, b, tol, max_iter) {
            Some(plan) => Ok(plan),
            None => Ok(self.log_domain(a, b, tol, max_iter)),
        }
    }

    /// Scaling-vector iterations. Returns `None` when a factor leaves the safe range.
    fn scaling(&self, a: &[T], b: &[T], tol: T, max_iter: usize) -> Option<TransportPlan<T>> {
        let k = &self.kernel;
        let lo = T::of(SCALING_MIN);
        let hi = T::of(SCALING_MAX);
        let in_range = |x: &T| x.is_finite() && *x >= lo && *x <= hi;
        let mut u = vec![T::one(); a.len()];
        let mut v = vec![T::one(); b.len()];
        let mut converged = false;
        let mut iterations = 0;
        loop {
            let kv = k.matvec(&v);
            if iterations > 0 {
                let err = u
                    .iter()
                    .zip(&kv)
                    .zip(a)
                    .fold(T::zero(), |e, ((&ui, &kvi), &ai)| e.max((ui * kvi - ai).abs()));
                if err < tol {
                    converged = true;
                    break;
                }
            }
            if iterations == max_iter {
                break;
            }
            for ((ui, &ai), &kvi) in u.iter_mut().zip(a).zip(&kv) {
                *ui = ai / kvi;
            }
            let ktu = k.t_matvec(&u);
            for ((vj, &bj), &kj) in v.iter_mut().zip(b).zip(&ktu) {
                *vj = bj / kj;
            }
            iterations += 1;
            if !u.iter().all(in_range) || !v.iter().all(in_range) {
                return None;
            }
        }
        let f: Vec<T> = u.iter().map(|x| self.lambda * x.ln()).collect();
        let g: Vec<T> = v.iter().map(|x| self.lambda * x.ln()).collect();
        let plan = Matrix::from_fn(a.len(), b.len(), |i, j| u[i] * k[(i, j)] * v[j]);
        Some(self.finish(plan, f, g, a, b, iterations, converged, false))
    }

    fn log_domain(&self, a: &[T], b: &[T], tol: T, max_iter: usize) -> TransportPlan<T> {
        let (n, m) = (a.len(), b.len());
        let c = self.cost;
        let log_a: Vec<T> = a.iter().map(|x| x.ln()).collect();
        let log_b: Vec<T> = b.iter().map(|x| x.ln()).collect();
        let mut f = vec![T::zero(); n];
        let mut g = vec![T::zero(); m];

        // Anneal from the cost range down to the target regularization.
        let spread = c.as_slice().iter().fold(T::zero(), |s, x| s.max(x.abs()));
        let mut schedule = Vec::new();
        let mut eps = self.lambda * T::of(2.0);
        while eps < spread {
            schedule.push(eps);
            eps = eps * T::of(2.0);
        }
        schedule.reverse();
        schedule.push(self.lambda);
        let stage_tol = tol.max(T::of(1e-6));
        let stage_cap = 2000usize;

        let mut iterations = 0;
        let mut converged = false;
        let mut row_buf = vec![T::zero(); m];
        let mut col_buf = vec![T::zero(); n];
        let last = schedule.len() - 1;
        for (stage, &lam) in schedule.iter().enumerate() {
            let final_stage = stage == last;
            let target = if final_stage { tol } else { stage_tol };
            let mut stage_iters = 0;
            loop {
                // row update, checking the row marginal of the current iterate first
                let mut err = T::zero();
                for i in 0..n {
                    for j in 0..m {
                        row_buf[j] = (g[j] - c[(i, j)]) / lam;
                    }
                    let s = log_sum_exp(&row_buf);
                    if stage_iters > 0 {
                        err = err.max(((f[i] / lam + s).exp() - a[i]).abs());
                    }
                    f[i] = lam * (log_a[i] - s);
                }
                if stage_iters > 0 && err < target {
                    if final_stage {
                        converged = true;
                    }
                    break;
                }
                if iterations == max_iter || (!final_stage && stage_iters == stage_cap) {
                    break;
                }
                for j in 0..m {
                    for i in 0..n {
                        col_buf[i] = (f[i] - c[(i, j)]) / lam;
                    }
                    g[j] = lam * (log_b[j] - log_sum_exp(&col_buf));
                }
                iterations += 1;
                stage_iters += 1;
            }
            if iterations == max_iter {
                break;
            }
        }
        // Final column update so the column marginal is exact for the returned plan.
        let lam = self.lambda;
        for j in 0..m {
            for i in 0..n {
                col_buf[i] = (f[i] - c[(i, j)]) / lam;
            }
            g[j] = lam * (log_b[j] - log_sum_exp(&col_buf));
        }
        let plan = Matrix::from_fn(n, m, |i, j| ((f[i] + g[j] - c[(i, j)]) / lam).exp());
        let mut out = self.finish(plan, f, g, a, b, iterations, converged, true);
        if out.max_violation >= tol {
            out.converged = false;
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        plan: Matrix<T>,
        f: Vec<T>,
        g: Vec<T>,
        a: &[T],
        b: &[T],
        iterations: usize,
        converged: bool,
        log_domain: bool,
    ) -> TransportPlan<T> {
        let (n, m) = (a.len(), b.len());
        let mut violation = T::zero();
        for i in 0..n {
            let s: T = plan.row(i).iter().copied().sum();
            violation = violation.max((s - a[i]).abs());
        }
        for j in 0..m {
            let s: T = (0..n).map(|i| plan[(i, j)]).sum();
            violation = violation.max((s - b[j]).abs());
        }
        let transport_cost = plan.frobenius_dot(self.cost);
        // log P_ij = (f_i + g_j - M_ij) / lambda, so the entropic term folds into the potentials
        let mut reg = T::zero();
        let mut mass = T::zero();
        for i in 0..n {
            for j in 0..m {
                let p = plan[(i, j)];
                reg += p * (f[i] + g[j] - self.cost[(i, j)]);
                mass += p;
            }
        }
        let distance = transport_cost + reg - self.lambda * mass;
        TransportPlan {
            plan,
            dual_row: f,
            dual_col: g,
            iterations,
            converged,
            log_domain,
            max_violation: violation,
            transport_cost,
            distance,
        }
    }
}

/// One-shot Sinkhorn solve. See [`SinkhornSolver`].
pub fn sinkhorn<T: Scalar>(
    a: &[T],
    b: &[T],
    cost: &Matrix<T>,
    opts: &SinkhornOptions<T>,
) -> Result<TransportPlan<T>> {
    SinkhornSolver::new(cost, opts.lambda)?.solve(a, b, opts.tol, opts.max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::exact_ot_lp;

    fn opts(lambda: f64) -> SinkhornOptions<f64> {
        SinkhornOptions {
            lambda,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }

    #[test]
    fn constant_cost_gives_outer_product() {
        let a = [0.2, 0.3, 0.5];
        let b = [0.6, 0.4];
        let cost = Matrix::from_fn(3, 2, |_, _| 0.7);
        let p = sinkhorn(&a, &b, &cost, &opts(1.0)).unwrap();
        assert!(p.converged);
        for i in 0..3 {
            for j in 0..2 {
                assert!((p.plan[(i, j)] - a[i] * b[j]).abs() < 1e-12);
            }
        }
        assert!((p.transport_cost - 0.7).abs() < 1e-12);
    }

    #[test]
    fn crossing_two_by_two_goes_to_zero() {
        let a = [0.5, 0.5];
        let cost = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = sinkhorn(&a, &a, &cost, &opts(1e-3)).unwrap();
        assert!(p.converged);
        assert!(p.transport_cost.abs() < 1e-3);
        assert_eq!(exact_ot_lp(&a, &a, &cost).unwrap(), 0.0);
    }

    #[test]
    fn distance_matches_primal_formula() {
        let a = [0.1, 0.4, 0.5];
        let b = [0.3, 0.7];
        let cost = Matrix::from_vec(3, 2, vec![0.2, 1.0, 0.5, 0.1, 1.5, 0.3]).unwrap();
        let lambda = 0.7;
        let p = sinkhorn(&a, &b, &cost, &opts(lambda)).unwrap();
        let mut primal = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                let x = p.plan[(i, j)];
                primal += x * cost[(i, j)] + lambda * x * (x.ln() - 1.0);
            }
        }
        assert!((primal - p.distance).abs() < 1e-12);
    }

    #[test]
    fn nonconvergence_is_flagged_not_an_error() {
        let a = [0.1, 0.9];
        let b = [0.5, 0.5];
        let cost = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = sinkhorn(
            &a,
            &b,
            &cost,
            &SinkhornOptions {
                lambda: 0.05,
                tol: 1e-14,
                max_iter: 2,
            },
        )
        .unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations, 2);
    }

    #[test]
    fn rejects_non_simplex_inputs() {
        let cost = Matrix::from_fn(2, 2, |_, _| 1.0);
        assert!(matches!(
            sinkhorn(&[0.5, 0.6], &[0.5, 0.5], &cost, &opts(1.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sinkhorn(&[1.0, 0.0], &[0.5, 0.5], &cost, &opts(1.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sinkhorn(&[0.5, 0.5], &[0.5, 0.5], &cost, &opts(0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn works_in_f32() {
        let a = [0.5f32, 0.5];
        let cost = Matrix::from_vec(2, 2, vec![0.0f32, 1.0, 1.0, 0.0]).unwrap();
        let p = sinkhorn(
            &a,
            &a,
            &cost,
            &SinkhornOptions {
                lambda: 0.1,
                tol: 1e-6,
                max_iter: 10_000,
            },
        )
        .unwrap();
        assert!(p.converged);
        assert!(p.transport_cost < 1e-3);
    }
}
