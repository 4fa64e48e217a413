//! Sparse matrices, matrix-free operators, restarted GMRES and power iteration.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A linear map on `f64` vectors.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Operators that also expose their Euclidean transpose.
pub trait TransposeOperator: LinearOperator {
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]);
}

/// Matrix-free square operator backed by a closure.
pub struct FnOperator<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn nrows(&self) -> usize {
        self.n
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(r, c, _)) = t.iter().find(|(r, c, _)| *r >= nrows || *c >= ncols) {
            return Err(Error::param("triplets", format!("entry ({r}, {c}) outside {nrows}x{ncols}")));
        }
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    fn drop_zeros(&mut self) {
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates stored entries as (row, col, value).
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t).expect("transpose indices are in range")
    }

    /// Writes the matrix in coordinate text format: a `rows cols nnz` header, then one `row col value` line per entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:.17e}")?;
        }
        Ok(())
    }
}

impl LinearOperator for CsrMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yr = s;
        }
    }
}

impl TransposeOperator for CsrMatrix {
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[k]] += self.values[k] * x[r];
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            restart: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveInfo {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final true relative residual `‖b − A x‖ / ‖b‖`.
    pub residual: f64,
}

/// Solves `A x = b` to `‖A x − b‖ ≤ tol ‖b‖` with default restart settings.
pub fn solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    preconditioner: Option<&dyn LinearOperator>,
) -> Result<SolveInfo> {
    gmres(
        a,
        b,
        None,
        &GmresOptions {
            tol,
            max_iter,
            ..GmresOptions::default()
        },
        preconditioner,
    )
}

/// Restarted GMRES with optional right preconditioning.
///
/// The residual contract is always checked on the true residual before
/// returning, so an accepted solution satisfies `‖b − A x‖ ≤ tol ‖b‖`.
pub fn gmres<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &GmresOptions,
    preconditioner: Option<&dyn LinearOperator>,
) -> Result<SolveInfo> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Shape {
            expected: n,
            actual: a.nrows(),
        });
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 || opts.restart == 0 {
        return Err(Error::param("gmres", "tol > 0, max_iter ≥ 1 and restart ≥ 1 required"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side".into()));
    }
    let bnorm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if bnorm == 0.0 {
        return Ok(SolveInfo {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = opts.tol * bnorm;
    let m = opts.restart.min(n.max(1));
    let mut iterations = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        a.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm(&r);
        if !beta.is_finite() {
            return Err(Error::NonFinite("GMRES residual".into()));
        }
        if beta <= target {
            return Ok(SolveInfo {
                x,
                iterations,
                residual: beta / bnorm,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::Solver {
                iterations,
                residual: beta / bnorm,
            });
        }
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        let mut breakdown = false;
        for j in 0..m {
            match preconditioner {
                Some(p) => {
                    p.apply(&v[j], &mut z);
                    a.apply(&z, &mut w);
                }
                None => a.apply(&v[j], &mut w),
            }
            // modified Gram–Schmidt, two passes
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let hij = dot(&w, vi);
                    h[i][j] += hij;
                    axpy(-hij, vi, &mut w);
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = h[j][j].hypot(h[j + 1][j]);
            iterations += 1;
            k = j + 1;
            if d <= f64::EPSILON * beta {
                // A maps the Krylov space into the span already built: singular direction
                return Err(Error::Solver {
                    iterations,
                    residual: g[j].abs() / bnorm,
                });
            }
            cs[j] = h[j][j] / d;
            sn[j] = h[j + 1][j] / d;
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            if hn <= 1e-14 * beta {
                breakdown = true;
                break;
            }
            if g[j + 1].abs() <= 0.5 * target || iterations >= opts.max_iter {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in (i + 1)..k {
                s -= h[i][l] * y[l];
            }
            y[i] = s / h[i][i];
        }
        let mut dx = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&v) {
            axpy(*yi, vi, &mut dx);
        }
        match preconditioner {
            Some(p) => {
                p.apply(&dx, &mut z);
                axpy(1.0, &z, &mut x);
            }
            None => axpy(1.0, &dx, &mut x),
        }
        if breakdown {
            a.apply(&x, &mut r);
            let res = r.iter().zip(b).map(|(ri, bi)| (bi - ri).powi(2)).sum::<f64>().sqrt();
            if res > target {
                return Err(Error::Solver {
                    iterations,
                    residual: res / bnorm,
                });
            }
        }
    }
}

/// Power iteration for the norm of a map on a space with inner product `inner`.
///
/// `apply` and `adjoint` are `S` and its adjoint with respect to `inner`. The
/// estimate is `sqrt(⟨S*S x, x⟩ / ⟨x, x⟩)` and stops once it changes by less
/// than `tol` relatively between iterations.
pub fn power_norm<FA, FT, IP>(
    start: &[f64],
    mut apply: FA,
    mut adjoint: FT,
    inner: IP,
    max_iter: usize,
    tol: f64,
) -> Result<f64>
where
    FA: FnMut(&[f64]) -> Result<Vec<f64>>,
    FT: FnMut(&[f64]) -> Result<Vec<f64>>,
    IP: Fn(&[f64], &[f64]) -> f64,
{
    let n0 = inner(start, start).sqrt();
    if !(n0 > 0.0) {
        return Err(Error::param("start", "start vector must be nonzero"));
    }
    let mut x: Vec<f64> = start.iter().map(|v| v / n0).collect();
    let mut est = 0.0;
    for it in 1..=max_iter {
        let sx = apply(&x)?;
        let new = inner(&sx, &sx).sqrt();
        if !new.is_finite() {
            return Err(Error::NonFinite("power iteration".into()));
        }
        if new == 0.0 {
            return Ok(0.0);
        }
        let y = adjoint(&sx)?;
        let ny = inner(&y, &y).sqrt();
        if ny == 0.0 {
            return Ok(new);
        }
        x = y.iter().map(|v| v / ny).collect();
        if it > 1 && (new - est).abs() <= tol * new {
            return Ok(new.max(est));
        }
        est = new;
    }
    Err(Error::PowerIteration {
        iterations: max_iter,
        estimate: est,
    })
}

/// Spectral-norm estimate `sqrt(λ_max(AᵀA))` by power iteration from a fixed pseudo-random start.
pub fn operator_norm_est<A: TransposeOperator + ?Sized>(a: &A, iterations: usize) -> Result<f64> {
    operator_norm_est_tol(a, iterations, 1e-13)
}

pub fn operator_norm_est_tol<A: TransposeOperator + ?Sized>(a: &A, iterations: usize, tol: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_a11);
    let start: Vec<f64> = (0..a.ncols()).map(|_| rng.random::<f64>() - 0.5).collect();
    power_norm(
        &start,
        |x| {
            let mut y = vec![0.0; a.nrows()];
            a.apply(x, &mut y);
            Ok(y)
        },
        |x| {
            let mut y = vec![0.0; a.ncols()];
            a.apply_transpose(x, &mut y);
            Ok(y)
        },
        dot,
        iterations,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_sparse(n: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if rng.random::<f64>() < density {
                    t.push((r, c, rng.random::<f64>() * 2.0 - 1.0));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    fn to_dense(a: &CsrMatrix) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(a.nrows(), a.ncols());
        for (r, c, v) in a.triplets() {
            d[(r, c)] += v;
        }
        d
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let s = solve(&CsrMatrix::identity(20), &b, 1e-12, 10, None).unwrap();
        for (x, y) in s.x.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(5, 5, &[]).unwrap();
        let b = vec![1.0; 5];
        assert!(matches!(solve(&a, &b, 1e-10, 50, None), Err(Error::Solver { .. })));
    }

    #[test]
    fn duplicates_summed_and_transpose() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 2, -1.0), (1, 0, 0.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        let mut y = vec![0.0; 2];
        a.apply(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, -1.0]);
        let mut yt = vec![0.0; 3];
        a.apply_transpose(&[1.0, 2.0], &mut yt);
        assert_eq!(yt, vec![0.0, 3.0, -2.0]);
        let mut yt2 = vec![0.0; 3];
        a.transpose().apply(&[1.0, 2.0], &mut yt2);
        assert_eq!(yt, yt2);
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn gmres_matches_dense_lu_on_shifted_skew_system() {
        let n = 60;
        let r = random_sparse(n, 0.1, 3);
        // I + 0.05 (R − Rᵀ)
        let mut t: Vec<_> = r.triplets().map(|(i, j, v)| (i, j, 0.05 * v)).collect();
        t.extend(r.triplets().map(|(i, j, v)| (j, i, -0.05 * v)));
        t.extend((0..n).map(|i| (i, i, 1.0)));
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let s = solve(&a, &b, 1e-12, 200, None).unwrap();
        let lu = to_dense(&a).lu();
        let xd = lu.solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        for (x, y) in s.x.iter().zip(xd.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(s.residual <= 1e-12);
    }

    #[test]
    fn preconditioner_hook_is_used() {
        let n = 30;
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0 + i as f64)).collect();
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let inv: Vec<_> = (0..n).map(|i| (i, i, 1.0 / (1.0 + i as f64))).collect();
        let p = CsrMatrix::from_triplets(n, n, &inv).unwrap();
        let b = vec![1.0; n];
        let s = solve(&a, &b, 1e-12, 100, Some(&p)).unwrap();
        assert!(s.iterations <= 2, "{}", s.iterations);
    }

    #[test]
    fn restart_respected_and_max_iter_reported() {
        let n = 80;
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0 + i as f64)).collect();
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let b = vec![1.0; n];
        let opts = GmresOptions {
            tol: 1e-12,
            max_iter: 5,
            restart: 3,
        };
        match gmres(&a, &b, None, &opts, None) {
            Err(Error::Solver { iterations, residual }) => {
                assert_eq!(iterations, 5);
                assert!(residual > 1e-12);
            }
            other => panic!("expected solver error, got {other:?}"),
        }
        let opts = GmresOptions {
            tol: 1e-10,
            max_iter: 2000,
            restart: 10,
        };
        let s = gmres(&a, &b, None, &opts, None).unwrap();
        assert!(s.residual <= 1e-10);
    }

    #[test]
    fn norm_examples() {
        let i = CsrMatrix::identity(10);
        assert!((operator_norm_est(&i, 100).unwrap() - 1.0).abs() < 1e-8);
        let d = CsrMatrix::from_triplets(3, 3, &[(0, 0, 3.0), (1, 1, 1.0), (2, 2, 1.0)]).unwrap();
        assert!((operator_norm_est(&d, 1000).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn norm_matches_dense_svd() {
        let a = random_sparse(50, 0.15, 11);
        let est = operator_norm_est(&a, 100_000).unwrap();
        let sv = to_dense(&a).singular_values();
        let top = sv.iter().cloned().fold(0.0, f64::max);
        assert!(((est - top) / top).abs() < 1e-6, "{est} vs {top}");
    }

    #[test]
    fn power_iteration_cap_is_reported() {
        let a = random_sparse(40, 0.2, 5);
        assert!(matches!(
            operator_norm_est_tol(&a, 2, 0.0),
            Err(Error::PowerIteration { iterations: 2, .. })
        ));
    }

    #[test]
    fn coo_export_lists_entries() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.5), (1, 0, -2.0)]).unwrap();
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "2 2 2");
        assert!(lines[2].starts_with("1 0 -2"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn residual_contract_on_shifted_systems(seed in 0u64..10_000, skew in any::<bool>(), n in 5usize..40) {
                let r = random_sparse(n, 0.2, seed);
                let mut t: Vec<_> = r.triplets().map(|(i, j, v)| (i, j, 0.1 * v)).collect();
                let sign = if skew { -0.1 } else { 0.1 };
                t.extend(r.triplets().map(|(i, j, v)| (j, i, sign * v)));
                t.extend((0..n).map(|i| (i, i, 2.0)));
                let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
                let b: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.3).cos()).collect();
                let s = solve(&a, &b, 1e-10, 500, None).unwrap();
                let mut ax = vec![0.0; n];
                a.apply(&s.x, &mut ax);
                let res = ax.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                prop_assert!(res <= 1e-10 * norm(&b));
            }

            #[test]
            fn apply_is_linear(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
                let a = random_sparse(20, 0.3, seed);
                let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
                let y: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).cos()).collect();
                let comb: Vec<f64> = x.iter().zip(&y).map(|(u, v)| alpha * u + beta * v).collect();
                let (mut ax, mut ay, mut ac) = (vec![0.0; 20], vec![0.0; 20], vec![0.0; 20]);
                a.apply(&x, &mut ax);
                a.apply(&y, &mut ay);
                a.apply(&comb, &mut ac);
                for i in 0..20 {
                    prop_assert!((ac[i] - alpha * ax[i] - beta * ay[i]).abs() < 1e-12);
                }
            }
        }
    }
}
