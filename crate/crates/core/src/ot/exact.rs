//! Exact (unregularized) optimal transport by two-phase dense simplex on the
//! transportation polytope. Meant for small instances used as a test oracle.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

/// `min <P, M>` over couplings of `a` and `b`.
///
/// Marginals must have equal mass within `1e-9`; they need not be strictly
/// positive.
pub fn exact_ot_lp<T: Scalar>(a: &[T], b: &[T], cost: &Matrix<T>) -> Result<T> {
    let (n, m) = (a.len(), b.len());
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::DimensionMismatch(format!(
            "{n}x{m} marginals for a {}x{} cost",
            cost.rows(),
            cost.cols()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::Domain("empty marginal".into()));
    }
    if a.iter().chain(b).any(|x| !(x.is_finite() && *x >= T::zero())) {
        return Err(Error::Domain("marginals must be finite and nonnegative".into()));
    }
    let sa: T = a.iter().copied().sum();
    let sb: T = b.iter().copied().sum();
    if (sa - sb).abs() > T::of(1e-9).max(T::epsilon() * T::of(100.0)) {
        return Err(Error::Domain(format!("infeasible marginals: masses {sa} and {sb}")));
    }

    // Variables x_ij in row-major order; one equality per row and per column.
    let nvar = n * m;
    let mut rows = Vec::with_capacity(n + m);
    let mut rhs = Vec::with_capacity(n + m);
    for i in 0..n {
        let mut r = vec![T::zero(); nvar];
        r[i * m..(i + 1) * m].fill(T::one());
        rows.push(r);
        rhs.push(a[i]);
    }
    for j in 0..m {
        let mut r = vec![T::zero(); nvar];
        for i in 0..n {
            r[i * m + j] = T::one();
        }
        rows.push(r);
        rhs.push(b[j]);
    }
    let c: Vec<T> = cost.as_slice().to_vec();
    Simplex::new(&rows, &rhs).minimize(&c)
}

/// Dense tableau for `min c^T x, A x = b, x >= 0` with `b >= 0`, using
/// artificial variables in phase one and Bland's rule throughout.
struct Simplex<T> {
    /// `rows x (nvar + nart + 1)`, last column is the right-hand side.
    tab: Vec<Vec<T>>,
    basis: Vec<usize>,
    nvar: usize,
    eps: T,
}

impl<T: Scalar> Simplex<T> {
    fn new(a: &[Vec<T>], b: &[T]) -> Self {
        let nrow = a.len();
        let nvar = a.first().map_or(0, Vec::len);
        let width = nvar + nrow + 1;
        let tab = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(i, (row, &bi))| {
                let mut t = vec![T::zero(); width];
                t[..nvar].copy_from_slice(row);
                t[nvar + i] = T::one();
                t[width - 1] = bi;
                t
            })
            .collect();
        Self {
            tab,
            basis: (nvar..nvar + nrow).collect(),
            nvar,
            eps: T::epsilon() * T::of(1e4),
        }
    }

    fn width(&self) -> usize {
        self.tab.first().map_or(0, Vec::len)
    }

    fn pivot(&mut self, r: usize, s: usize, obj: &mut [T]) {
        let w = self.width();
        let piv = self.tab[r][s];
        for x in self.tab[r].iter_mut() {
            *x /= piv;
        }
        let pivot_row = self.tab[r].clone();
        for (i, row) in self.tab.iter_mut().enumerate() {
            if i != r {
                let f = row[s];
                if f != T::zero() {
                    for k in 0..w {
                        row[k] -= f * pivot_row[k];
                    }
                }
            }
        }
        let f = obj[s];
        if f != T::zero() {
            for k in 0..w {
                obj[k] -= f * pivot_row[k];
            }
        }
        self.basis[r] = s;
    }

    /// Runs simplex iterations on reduced-cost row `obj` over columns `< allowed`.
    fn iterate(&mut self, obj: &mut [T], allowed: usize) -> Result<()> {
        let w = self.width();
        // Bland's rule terminates; the cap only guards against numerical trouble.
        for _ in 0..100_000 {
            let Some(s) = (0..allowed).find(|&j| obj[j] < -self.eps) else {
                return Ok(());
            };
            let mut best: Option<(usize, T)> = None;
            for (i, row) in self.tab.iter().enumerate() {
                if row[s] > self.eps {
                    let ratio = row[w - 1] / row[s];
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - self.eps
                                || ((ratio - br).abs() <= self.eps && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Err(Error::Domain("unbounded linear program".into()));
            };
            self.pivot(r, s, obj);
        }
        Err(Error::Domain("simplex iteration cap reached".into()))
    }

    fn minimize(mut self, c: &[T]) -> Result<T> {
        let w = self.width();
        let nvar = self.nvar;

        // Phase one: minimize the sum of artificials.
        let mut obj = vec![T::zero(); w];
        for j in nvar..w - 1 {
            obj[j] = T::one();
        }
        for row in &self.tab {
            for k in 0..w {
                obj[k] -= row[k];
            }
        }
        self.iterate(&mut obj, w - 1)?;
        let infeasibility = -obj[w - 1];
        if infeasibility > T::of(1e-9).max(self.eps) {
            return Err(Error::Domain(format!("infeasible program (phase one {infeasibility})")));
        }

        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < self.tab.len() {
            if self.basis[r] >= nvar {
                match (0..nvar).find(|&j| self.tab[r][j].abs() > self.eps) {
                    Some(j) => {
                        self.pivot(r, j, &mut obj);
                        r += 1;
                    }
                    None => {
                        self.tab.remove(r);
                        self.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }

        // Phase two.
        let mut obj = vec![T::zero(); w];
        obj[..nvar].copy_from_slice(c);
        for (i, row) in self.tab.iter().enumerate() {
            let cb = c[self.basis[i]];
            if cb != T::zero() {
                for k in 0..w {
                    obj[k] -= cb * row[k];
                }
            }
        }
        self.iterate(&mut obj, nvar)?;
        Ok(self
            .tab
            .iter()
            .zip(&self.basis)
            .map(|(row, &bv)| c[bv] * row[w - 1])
            .sum())
    }
}
