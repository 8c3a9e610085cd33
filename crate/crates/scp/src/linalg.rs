//! Minimal dense linear algebra for the subset-Hessian machinery: symmetric
//! storage, Cholesky factorization, and smallest-eigenvalue computation via
//! Householder tridiagonalization plus Sturm-sequence bisection. Everything
//! here is sized for blocks of at most a few hundred rows.

use crate::error::{Error, Result};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMat {
    n: usize,
    a: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(n: usize) -> Self {
        SquareMat { n, a: vec![0.0; n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.a[i * n + j] = f(i, j);
            }
        }
        m
    }

    /// Build from a flat row-major slice; `data.len()` must be `n*n`.
    pub fn from_rows(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(SquareMat { n, a: data.to_vec() })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Replace with `(M + M^T) / 2`.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    /// Maximum absolute asymmetry `|M_ij - M_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Principal submatrix on the given (not necessarily sorted) row set.
    pub fn principal_submatrix(&self, rows: &[usize]) -> SquareMat {
        let m = rows.len();
        let mut out = SquareMat::zeros(m);
        for (oi, &i) in rows.iter().enumerate() {
            for (oj, &j) in rows.iter().enumerate() {
                out.a[oi * m + oj] = self.get(i, j);
            }
        }
        out
    }
}

/// Lower Cholesky factor of `m + shift*I`, or `None` if a pivot is not
/// strictly positive. The strict test is the positive-definiteness probe the
/// jitter policy relies on, so no pivot tolerance is applied here.
pub fn cholesky_lower(m: &SquareMat, shift: f64) -> Option<SquareMat> {
    let n = m.dim();
    let mut l = SquareMat::zeros(n);
    for j in 0..n {
        let mut s = m.get(j, j) + shift;
        for k in 0..j {
            s -= l.get(j, k) * l.get(j, k);
        }
        if s <= 0.0 || !s.is_finite() {
            return None;
        }
        let d = s.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Some(l)
}

/// Solve `L y = b` in place for lower-triangular `L`.
pub fn forward_solve(l: &SquareMat, b: &mut [f64]) {
    let n = l.dim();
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let mut s = b[i];
        let row = l.row(i);
        for k in 0..i {
            s -= row[k] * b[k];
        }
        b[i] = s / row[i];
    }
}

/// Solve `L^T x = y` in place for lower-triangular `L`.
pub fn back_solve_transposed(l: &SquareMat, y: &mut [f64]) {
    let n = l.dim();
    debug_assert_eq!(y.len(), n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
}

/// Householder reduction of a symmetric matrix to tridiagonal form,
/// eigenvalues only: returns the diagonal `d` and subdiagonal `e`, where
/// `e[i]` couples rows `i-1` and `i` (`e[0]` is unused and set to zero).
fn tridiagonalize(m: &SquareMat) -> (Vec<f64>, Vec<f64>) {
    let n = m.dim();
    let mut a = m.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        if l == 0 {
            e[i] = a.get(i, 0);
            continue;
        }
        let mut scale = 0.0;
        for k in 0..=l {
            scale += a.get(i, k).abs();
        }
        if scale == 0.0 {
            e[i] = a.get(i, l);
            continue;
        }
        let mut h = 0.0;
        for k in 0..=l {
            let v = a.get(i, k) / scale;
            a.set(i, k, v);
            h += v * v;
        }
        let f = a.get(i, l);
        let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
        e[i] = scale * g;
        h -= f * g;
        a.set(i, l, f - g);
        // p = A u / h, accumulated into e[0..=l] using the lower triangle
        let mut f_acc = 0.0;
        for j in 0..=l {
            let mut g = 0.0;
            for k in 0..=j {
                g += a.get(j, k) * a.get(i, k);
            }
            for k in (j + 1)..=l {
                g += a.get(k, j) * a.get(i, k);
            }
            e[j] = g / h;
            f_acc += e[j] * a.get(i, j);
        }
        // rank-2 update A <- A - u q^T - q u^T with q = p - (u^T p / 2h) u
        let hh = f_acc / (h + h);
        for j in 0..=l {
            let fj = a.get(i, j);
            let gj = e[j] - hh * fj;
            e[j] = gj;
            for k in 0..=j {
                let v = a.get(j, k) - fj * e[k] - gj * a.get(i, k);
                a.set(j, k, v);
            }
        }
    }
    for i in 0..n {
        d[i] = a.get(i, i);
    }
    e[0] = 0.0;
    (d, e)
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`,
/// counted through the signs of the sequence of LDL^T pivots.
fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        let e2 = e[i] * e[i];
        let denom = if q == 0.0 { 1e-300 } else { q };
        q = d[i] - x - e2 / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest eigenvalue of a symmetric matrix, accurate to well below the
/// 1e-8 absolute tolerance the subset-acceptance tests rely on.
pub fn symmetric_min_eigenvalue(m: &SquareMat) -> Result<f64> {
    let n = m.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("symmetric eigenvalue input"));
    }
    if n == 1 {
        return Ok(m.get(0, 0));
    }
    let (d, e) = tridiagonalize(m);
    // Gershgorin bracket for the whole spectrum.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let mut r = 0.0;
        if i > 0 {
            r += e[i].abs();
        }
        if i + 1 < n {
            r += e[i + 1].abs();
        }
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let span = (hi - lo).max(1e-30);
    let (mut lo, mut hi) = (lo - 1e-12 * span, hi + 1e-12 * span);
    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        if count_below(&d, &e, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * span {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: cyclic Jacobi rotations. A different algorithm
    /// family from the tridiagonalize+bisect production path on purpose.
    fn jacobi_eigenvalues(m: &SquareMat) -> Vec<f64> {
        let n = m.dim();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = m.get(i, j);
            }
        }
        let scale = m.max_abs().max(1e-300);
        for _sweep in 0..200 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(a[p][q].abs());
                }
            }
            if off < 1e-14 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    let t = sgn / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eigs: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eigs
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SquareMat {
        let mut m = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-scale..scale);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SquareMat {
        // R R^T + n*I is comfortably positive definite
        let r = SquareMat::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut m = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += r.get(i, k) * r.get(j, k);
                }
                m.set(i, j, s);
            }
        }
        for i in 0..n {
            m.set(i, i, m.get(i, i) + n as f64);
        }
        m
    }

    #[test]
    fn cholesky_reconstructs_spd_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 3, 5, 9, 17] {
            let m = random_spd(&mut rng, n);
            let l = cholesky_lower(&m, 0.0).expect("SPD factorization");
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += l.get(i, k) * l.get(j, k);
                    }
                    worst = worst.max((s - m.get(i, j)).abs());
                }
            }
            assert!(worst <= 1e-10 * m.max_abs(), "n={n} worst={worst:e}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = SquareMat::from_rows(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(cholesky_lower(&m, 0.0).is_none());
        // shifting past the negative eigenvalue (-1) makes it factorizable
        assert!(cholesky_lower(&m, 1.5).is_some());
    }

    #[test]
    fn triangular_solves_invert_each_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_spd(&mut rng, 8);
        let l = cholesky_lower(&m, 0.0).unwrap();
        let x_true: Vec<f64> = (0..8).map(|i| (i as f64) - 3.5).collect();
        // b = M x = L (L^T x)
        let mut b = vec![0.0; 8];
        for i in 0..8 {
            b[i] = (0..8).map(|j| m.get(i, j) * x_true[j]).sum();
        }
        forward_solve(&l, &mut b);
        back_solve_transposed(&l, &mut b);
        for i in 0..8 {
            assert!((b[i] - x_true[i]).abs() < 1e-9, "i={i}");
        }
    }

    #[test]
    fn min_eigenvalue_exact_on_diagonal_matrix() {
        let m = SquareMat::from_fn(5, |i, j| if i == j { [4.0, -2.0, 7.0, 0.5, -2.0001][i] } else { 0.0 });
        let lam = symmetric_min_eigenvalue(&m).unwrap();
        assert!((lam - (-2.0001)).abs() < 1e-12);
    }

    #[test]
    fn min_eigenvalue_matches_closed_form_2x2() {
        // eigenvalues of [[a, b], [b, c]] are ((a+c) +- sqrt((a-c)^2+4b^2))/2
        let (a, b, c) = (1.3, -0.7, -2.1);
        let m = SquareMat::from_rows(2, &[a, b, b, c]).unwrap();
        let expect = 0.5 * ((a + c) - ((a - c).powi(2) + 4.0 * b * b).sqrt());
        let lam = symmetric_min_eigenvalue(&m).unwrap();
        assert!((lam - expect).abs() < 1e-12, "got {lam}, want {expect}");
    }

    #[test]
    fn min_eigenvalue_matches_jacobi_oracle_on_random_9x9() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..25 {
            let m = random_symmetric(&mut rng, 9, 5.0);
            let lam = symmetric_min_eigenvalue(&m).unwrap();
            let oracle = jacobi_eigenvalues(&m)[0];
            assert!(
                (lam - oracle).abs() <= 1e-6,
                "trial {trial}: bisection {lam} vs jacobi {oracle}"
            );
        }
    }

    #[test]
    fn min_eigenvalue_various_dims_vs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 3, 4, 6, 12, 21] {
            let m = random_symmetric(&mut rng, n, 2.0);
            let lam = symmetric_min_eigenvalue(&m).unwrap();
            let oracle = jacobi_eigenvalues(&m)[0];
            assert!((lam - oracle).abs() <= 1e-8, "n={n}: {lam} vs {oracle}");
        }
    }

    #[test]
    fn min_eigenvalue_rejects_non_finite() {
        let mut m = SquareMat::zeros(3);
        m.set(1, 1, f64::NAN);
        assert!(symmetric_min_eigenvalue(&m).is_err());
    }

    #[test]
    fn principal_submatrix_picks_rows_and_cols() {
        let m = SquareMat::from_fn(4, |i, j| (10 * i + j) as f64);
        let s = m.principal_submatrix(&[3, 1]);
        assert_eq!(s.get(0, 0), 33.0);
        assert_eq!(s.get(0, 1), 31.0);
        assert_eq!(s.get(1, 0), 13.0);
        assert_eq!(s.get(1, 1), 11.0);
    }
}
