//! Analytic objectives for unit tests: closed-form losses whose gradients,
//! Hessians, and cooperative behavior are known exactly, so the selection and
//! attack machinery can be tested without a trained classifier.

use crate::error::{Error, Result};
use crate::linalg::SquareMat;
use crate::objective::{SampleEval, SampleObjective};

/// How the quadratic stub's Hessian is stored.
pub(crate) enum QuadHessian {
    /// Independent 3x3 diagonal per point: H = diag over points of diag(d_i).
    PerPointDiag(Vec<[f64; 3]>),
    /// Full dense symmetric matrix over the 3n flattened coordinates.
    Dense(SquareMat),
}

/// L(x) = 0.5 (x - t)' H (x - t) + offset over flattened coordinates, with
/// "adversarial" defined as loss <= success_threshold. The Hessian-vector
/// product is exact (overridden), so curvature-based code paths behave
/// deterministically under test.
pub(crate) struct QuadraticObjective {
    pub clean: Vec<[f64; 3]>,
    pub target: Vec<f64>,
    pub hess: QuadHessian,
    pub label: usize,
    pub adversary: usize,
    pub offset: f64,
    pub success_threshold: f64,
}

impl QuadraticObjective {
    pub fn centered_diag(clean: Vec<[f64; 3]>, diag: Vec<[f64; 3]>) -> Self {
        let target = clean.iter().flatten().copied().collect();
        QuadraticObjective {
            clean,
            target,
            hess: QuadHessian::PerPointDiag(diag),
            label: 0,
            adversary: 1,
            offset: 0.0,
            success_threshold: f64::NEG_INFINITY,
        }
    }

    pub fn centered_dense(clean: Vec<[f64; 3]>, hess: SquareMat) -> Self {
        assert_eq!(hess.dim(), 3 * clean.len());
        let target = clean.iter().flatten().copied().collect();
        QuadraticObjective {
            clean,
            target,
            hess: QuadHessian::Dense(hess),
            label: 0,
            adversary: 1,
            offset: 0.0,
            success_threshold: f64::NEG_INFINITY,
        }
    }

    fn flat_displaced(&self, delta: &[(usize, [f64; 3])]) -> Vec<f64> {
        let mut x: Vec<f64> = self.clean.iter().flatten().copied().collect();
        for &(row, d) in delta {
            for k in 0..3 {
                x[3 * row + k] += d[k];
            }
        }
        x
    }

    /// H v for a flattened vector.
    fn hess_apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.hess {
            QuadHessian::PerPointDiag(diag) => v
                .iter()
                .enumerate()
                .map(|(i, &vi)| diag[i / 3][i % 3] * vi)
                .collect(),
            QuadHessian::Dense(h) => {
                let n = h.dim();
                let mut out = vec![0.0; n];
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += h.get(r, c) * v[c];
                    }
                    out[r] = acc;
                }
                out
            }
        }
    }

    fn check(&self, delta: &[(usize, [f64; 3])], grad_rows: &[usize]) -> Result<()> {
        let n = self.clean.len();
        if delta.iter().any(|&(r, _)| r >= n) || grad_rows.iter().any(|&r| r >= n) {
            return Err(Error::InvalidArgument("row out of range".into()));
        }
        Ok(())
    }
}

impl SampleObjective for QuadraticObjective {
    fn num_points(&self) -> usize {
        self.clean.len()
    }

    fn clean_points(&self) -> &[[f64; 3]] {
        &self.clean
    }

    fn label(&self) -> usize {
        self.label
    }

    fn eval_rows(&self, delta: &[(usize, [f64; 3])], grad_rows: &[usize]) -> Result<SampleEval> {
        self.check(delta, grad_rows)?;
        let x = self.flat_displaced(delta);
        let r: Vec<f64> = x.iter().zip(&self.target).map(|(a, t)| a - t).collect();
        let hr = self.hess_apply(&r);
        let loss = 0.5 * r.iter().zip(&hr).map(|(a, b)| a * b).sum::<f64>() + self.offset;
        let grad = grad_rows
            .iter()
            .map(|&row| [hr[3 * row], hr[3 * row + 1], hr[3 * row + 2]])
            .collect();
        let adversarial = loss <= self.success_threshold;
        Ok(SampleEval {
            loss,
            predicted: if adversarial { self.adversary } else { self.label },
            adversarial,
            grad,
        })
    }

    /// Exact: the Hessian of a quadratic is constant.
    fn hvp_rows(
        &self,
        _delta_base: &[(usize, [f64; 3])],
        v: &[(usize, [f64; 3])],
        rows: &[usize],
    ) -> Result<Vec<[f64; 3]>> {
        self.check(v, rows)?;
        let mut flat = vec![0.0; 3 * self.clean.len()];
        for &(row, d) in v {
            for k in 0..3 {
                flat[3 * row + k] += d[k];
            }
        }
        let hv = self.hess_apply(&flat);
        Ok(rows
            .iter()
            .map(|&row| [hv[3 * row], hv[3 * row + 1], hv[3 * row + 2]])
            .collect())
    }
}

/// Affine logits over the mean-pooled cloud: z = W * mean(points) + b. The
/// loss surface is piecewise linear in the points, its Hessian is zero away
/// from margin switches, and single-point effects add exactly — the
/// equality case for cooperation statistics.
pub(crate) struct LinearLogitObjective {
    pub clean: Vec<[f64; 3]>,
    pub w: Vec<[f64; 3]>,
    pub b: Vec<f64>,
    pub label: usize,
}

impl LinearLogitObjective {
    fn logits(&self, delta: &[(usize, [f64; 3])]) -> Vec<f64> {
        let n = self.clean.len() as f64;
        let mut mean = [0.0f64; 3];
        for p in &self.clean {
            for k in 0..3 {
                mean[k] += p[k];
            }
        }
        for &(_, d) in delta {
            for k in 0..3 {
                mean[k] += d[k];
            }
        }
        for k in &mut mean {
            *k /= n;
        }
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, bias)| row[0] * mean[0] + row[1] * mean[1] + row[2] * mean[2] + bias)
            .collect()
    }
}

impl SampleObjective for LinearLogitObjective {
    fn num_points(&self) -> usize {
        self.clean.len()
    }

    fn clean_points(&self) -> &[[f64; 3]] {
        &self.clean
    }

    fn label(&self) -> usize {
        self.label
    }

    fn eval_rows(&self, delta: &[(usize, [f64; 3])], grad_rows: &[usize]) -> Result<SampleEval> {
        let n = self.clean.len();
        if delta.iter().any(|&(r, _)| r >= n) || grad_rows.iter().any(|&r| r >= n) {
            return Err(Error::InvalidArgument("row out of range".into()));
        }
        let logits = self.logits(delta);
        let (loss, dlogits) =
            crate::classifier::loss_and_dlogits(crate::classifier::Loss::CwMargin { kappa: 0.0 }, &logits, self.label);
        // d loss / d point = W' dlogits / n, identical for every point
        let mut g = [0.0f64; 3];
        for (row, &dz) in self.w.iter().zip(&dlogits) {
            for k in 0..3 {
                g[k] += row[k] * dz;
            }
        }
        for k in &mut g {
            *k /= n as f64;
        }
        Ok(SampleEval {
            loss,
            predicted: crate::classifier::argmax(&logits),
            adversarial: crate::classifier::is_adversarial(&logits, self.label),
            grad: grad_rows.iter().map(|_| g).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_closed_form() {
        let clean = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let diag = vec![[2.0, 2.0, 2.0], [4.0, 4.0, 4.0], [6.0, 6.0, 6.0]];
        let obj = QuadraticObjective::centered_diag(clean, diag);
        assert_eq!(obj.loss_at(&[]).unwrap(), 0.0, "minimum sits at the clean cloud");
        let delta = vec![(1usize, [0.5, 0.0, -0.5])];
        // L = 0.5 * 4 * (0.25 + 0.25) = 1.0, dL/dx1 = 4 * (0.5, 0, -0.5)
        let eval = obj.eval_rows(&delta, &[1, 2]).unwrap();
        assert!((eval.loss - 1.0).abs() < 1e-15);
        assert_eq!(eval.grad[0], [2.0, 0.0, -2.0]);
        assert_eq!(eval.grad[1], [0.0, 0.0, 0.0]);
        // exact hvp equals H restricted to the touched rows
        let hv = obj.hvp_rows(&[], &[(0, [1.0, 1.0, 1.0])], &[0, 1]).unwrap();
        assert_eq!(hv[0], [2.0, 2.0, 2.0]);
        assert_eq!(hv[1], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_logit_effects_add_exactly() {
        let obj = LinearLogitObjective {
            clean: vec![[0.1, 0.2, 0.3], [-0.4, 0.0, 0.2], [0.5, -0.5, 0.0], [0.0, 0.1, -0.1]],
            w: vec![[1.0, -2.0, 0.5], [0.3, 0.9, -1.1], [-0.7, 0.2, 0.4]],
            b: vec![0.2, -0.1, 0.0],
            label: 0,
        };
        let d0 = (0usize, [0.3, -0.2, 0.1]);
        let d2 = (2usize, [-0.1, 0.4, 0.2]);
        let clean = obj.loss_at(&[]).unwrap();
        let l0 = obj.loss_at(&[d0]).unwrap();
        let l2 = obj.loss_at(&[d2]).unwrap();
        let both = obj.loss_at(&[d0, d2]).unwrap();
        // margins over mean pooling are affine until the runner-up switches
        assert!(
            ((both - clean) - ((l0 - clean) + (l2 - clean))).abs() < 1e-12,
            "joint effect must equal the sum of single effects"
        );
    }
}
