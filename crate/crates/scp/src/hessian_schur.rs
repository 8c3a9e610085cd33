//! Restricted curvature blocks and incremental positive-definiteness tests.
//!
//! The subset search never forms the full Hessian. It keeps a Cholesky factor
//! of the current subset's 3s x 3s block (plus a recorded diagonal jitter when
//! the raw block is numerically indefinite) and prices each candidate point by
//! the minimum eigenvalue of its 3x3 Schur complement against that factor —
//! the "surplus". Accepting a candidate extends the factor in place by three
//! bordered rows; a failed extension falls back to a full refactorization with
//! escalating jitter.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, forward_solve, symmetric_min_eigenvalue, SquareMat};
use crate::objective::SampleObjective;

/// A symmetric curvature block over `indices` (three rows per point).
#[derive(Debug, Clone)]
pub struct HessianBlock {
    pub indices: Vec<usize>,
    pub mat: SquareMat,
}

impl HessianBlock {
    pub fn min_eigenvalue(&self) -> Result<f64> {
        symmetric_min_eigenvalue(&self.mat)
    }
}

fn check_indices(n: usize, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty index set".into()));
    }
    for (i, &a) in indices.iter().enumerate() {
        if a >= n {
            return Err(Error::InvalidArgument(format!("point index {a} out of range")));
        }
        if indices[i + 1..].contains(&a) {
            return Err(Error::InvalidArgument(format!("duplicate point index {a}")));
        }
    }
    Ok(())
}

/// Assemble the loss Hessian restricted to `indices`, evaluated at
/// `clean + delta`, by probing one coordinate direction per column and
/// reading the gradient rows back. The result is symmetrized; the
/// probe noise this removes is measured by `SquareMat::asymmetry` first
/// if the caller cares.
pub fn assemble_block<O: SampleObjective + ?Sized>(
    obj: &O,
    delta: &[(usize, [f64; 3])],
    indices: &[usize],
) -> Result<HessianBlock> {
    check_indices(obj.num_points(), indices)?;
    let t = indices.len();
    let mut mat = SquareMat::zeros(3 * t);
    for (ci, &point) in indices.iter().enumerate() {
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            let col = obj.hvp_rows(delta, &[(point, e)], indices)?;
            for (rj, row) in col.iter().enumerate() {
                for a in 0..3 {
                    mat.set(3 * rj + a, 3 * ci + k, row[a]);
                }
            }
        }
    }
    mat.symmetrize();
    if !mat.is_finite() {
        return Err(Error::NonFinite("curvature block"));
    }
    Ok(HessianBlock { indices: indices.to_vec(), mat })
}

/// Coupling of one candidate against the current subset: `b` is the
/// 3s x 3 off-diagonal block (row-major), `c` the candidate's own 3x3 block,
/// symmetrized. Three curvature probes total.
pub fn candidate_coupling<O: SampleObjective + ?Sized>(
    obj: &O,
    delta: &[(usize, [f64; 3])],
    subset: &[usize],
    cand: usize,
) -> Result<(Vec<f64>, SquareMat)> {
    check_indices(obj.num_points(), subset)?;
    if cand >= obj.num_points() {
        return Err(Error::InvalidArgument(format!("candidate {cand} out of range")));
    }
    if subset.contains(&cand) {
        return Err(Error::InvalidArgument(format!("candidate {cand} already selected")));
    }
    let s = subset.len();
    let mut rows: Vec<usize> = subset.to_vec();
    rows.push(cand);
    let mut b = vec![0.0; 3 * s * 3];
    let mut c = SquareMat::zeros(3);
    for k in 0..3 {
        let mut e = [0.0; 3];
        e[k] = 1.0;
        let col = obj.hvp_rows(delta, &[(cand, e)], &rows)?;
        for (rj, row) in col[..s].iter().enumerate() {
            for a in 0..3 {
                b[(3 * rj + a) * 3 + k] = row[a];
            }
        }
        for a in 0..3 {
            c.set(a, k, col[s][a]);
        }
    }
    c.symmetrize();
    if !c.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("candidate coupling"));
    }
    Ok((b, c))
}

/// Factor `m + jitter I`, choosing the smallest jitter in the escalation
/// schedule that works: zero first, then `max(0, -lambda_min) + 1e-8`
/// escalating tenfold.
fn factor_with_jitter(m: &SquareMat) -> Result<(SquareMat, f64)> {
    if let Some(l) = cholesky_lower(m, 0.0) {
        return Ok((l, 0.0));
    }
    let lam = symmetric_min_eigenvalue(m)?;
    let mut jitter = (-lam).max(0.0) + 1e-8;
    for _ in 0..6 {
        if let Some(l) = cholesky_lower(m, jitter) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter })
}

/// Cholesky factor of the current subset block, maintained incrementally.
///
/// Invariant: `factor * factor' == matrix + jitter I` to rounding, where
/// `matrix` is the raw assembled block. All surplus values are measured
/// against the factored (jittered) matrix, which is what the acceptance
/// certificate accounts for.
#[derive(Debug, Clone)]
pub struct CholeskyState {
    indices: Vec<usize>,
    matrix: SquareMat,
    factor: SquareMat,
    jitter: f64,
}

impl CholeskyState {
    pub fn new(block: HessianBlock) -> Result<Self> {
        if block.mat.dim() != 3 * block.indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "block is {} wide for {} points",
                block.mat.dim(),
                block.indices.len()
            )));
        }
        let (factor, jitter) = factor_with_jitter(&block.mat)?;
        Ok(CholeskyState { indices: block.indices, matrix: block.mat, factor, jitter })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn matrix(&self) -> &SquareMat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// X = L^-1 B, one forward solve per candidate column.
    fn whiten(&self, b: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        if b.len() != d * 3 {
            return Err(Error::ShapeMismatch(format!(
                "coupling block has {} entries, expected {}",
                b.len(),
                d * 3
            )));
        }
        let mut cols = Vec::with_capacity(3);
        for k in 0..3 {
            let mut x: Vec<f64> = (0..d).map(|r| b[r * 3 + k]).collect();
            forward_solve(&self.factor, &mut x);
            cols.push(x);
        }
        Ok(cols)
    }

    /// S = C - X'X for the candidate described by (b, c).
    fn schur_matrix(&self, b: &[f64], c: &SquareMat) -> Result<SquareMat> {
        if c.dim() != 3 {
            return Err(Error::ShapeMismatch("candidate block must be 3x3".into()));
        }
        let x = self.whiten(b)?;
        let mut s = SquareMat::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
                s.set(i, j, c.get(i, j) - dot);
            }
        }
        s.symmetrize();
        Ok(s)
    }

    /// The candidate's surplus: the minimum eigenvalue of its Schur
    /// complement against the factored subset block. Positive means the
    /// grown block stays positive definite.
    pub fn schur_surplus(&self, b: &[f64], c: &SquareMat) -> Result<f64> {
        symmetric_min_eigenvalue(&self.schur_matrix(b, c)?)
    }

    /// The grown raw matrix [[A, B], [B', C]].
    fn extended_matrix(&self, b: &[f64], c: &SquareMat) -> SquareMat {
        let d = self.dim();
        let mut m = SquareMat::zeros(d + 3);
        for r in 0..d {
            for q in 0..d {
                m.set(r, q, self.matrix.get(r, q));
            }
            for k in 0..3 {
                m.set(r, d + k, b[r * 3 + k]);
                m.set(d + k, r, b[r * 3 + k]);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                m.set(d + i, d + j, c.get(i, j));
            }
        }
        m
    }

    /// Grow the state by an accepted candidate. The cheap path appends three
    /// bordered rows to the factor; if the candidate's jittered Schur block
    /// is not numerically positive definite, the whole grown matrix is
    /// refactored with an escalated jitter. Errors only when even heavy
    /// jitter cannot produce a factorization.
    pub fn extend(&mut self, cand: usize, b: &[f64], c: &SquareMat) -> Result<()> {
        if self.indices.contains(&cand) {
            return Err(Error::InvalidArgument(format!("candidate {cand} already selected")));
        }
        let d = self.dim();
        let x = self.whiten(b)?;
        let mut tail = self.schur_matrix(b, c)?;
        for i in 0..3 {
            tail.set(i, i, tail.get(i, i) + self.jitter);
        }
        let grown = self.extended_matrix(b, c);
        match cholesky_lower(&tail, 0.0) {
            Some(lc) => {
                let mut f = SquareMat::zeros(d + 3);
                for r in 0..d {
                    for q in 0..=r {
                        f.set(r, q, self.factor.get(r, q));
                    }
                }
                for i in 0..3 {
                    for r in 0..d {
                        f.set(d + i, r, x[i][r]);
                    }
                    for j in 0..=i {
                        f.set(d + i, d + j, lc.get(i, j));
                    }
                }
                self.factor = f;
            }
            None => {
                let (f, j) = factor_with_jitter(&grown)?;
                self.factor = f;
                self.jitter = j;
            }
        }
        self.matrix = grown;
        self.indices.push(cand);
        Ok(())
    }
}
