//! Per-sample attack objective: the one interface the selection and
//! perturbation stages talk to. An objective owns a clean cloud, its true
//! label, and a loss; callers probe it with sparse displacements and ask for
//! gradients on chosen rows only. The classifier-backed implementation caches
//! clean per-point features so a probe costs work proportional to the touched
//! rows, not the cloud.

use crate::classifier::{self, Loss, PointClassifier, Trace};
use crate::error::{Error, Result};
use crate::pointset_io::PointCloud;

/// Result of one objective probe.
#[derive(Debug, Clone)]
pub struct SampleEval {
    /// Attack loss at the displaced cloud (lower is more adversarial).
    pub loss: f64,
    /// Lowest-index argmax class.
    pub predicted: usize,
    /// Whether the displaced cloud counts as adversarial: some other class's
    /// logit at least ties the label's.
    pub adversarial: bool,
    /// dLoss/dPoint for each requested row, in request order.
    pub grad: Vec<[f64; 3]>,
}

/// A differentiable misclassification objective over one sample.
///
/// `delta` rows are displacements added to the clean points; rows absent from
/// `delta` stay clean. `grad_rows` selects which rows' gradients to compute —
/// gradients of unmoved rows are meaningful and often requested (the
/// curvature probes do exactly that).
pub trait SampleObjective {
    fn num_points(&self) -> usize;
    fn clean_points(&self) -> &[[f64; 3]];
    fn label(&self) -> usize;
    fn eval_rows(&self, delta: &[(usize, [f64; 3])], grad_rows: &[usize]) -> Result<SampleEval>;

    /// Loss only.
    fn loss_at(&self, delta: &[(usize, [f64; 3])]) -> Result<f64> {
        Ok(self.eval_rows(delta, &[])?.loss)
    }

    /// Loss and gradient over every row.
    fn eval_full(&self, delta: &[(usize, [f64; 3])]) -> Result<SampleEval> {
        let all: Vec<usize> = (0..self.num_points()).collect();
        self.eval_rows(delta, &all)
    }

    /// Hessian-vector product restricted to `rows`, via central differences
    /// of the analytic gradient around `delta_base`. The probe step scales
    /// with the cloud and inversely with `v`, which makes the product exactly
    /// linear under power-of-two scalings of `v`. Implementations with an
    /// analytic Hessian may override.
    fn hvp_rows(
        &self,
        delta_base: &[(usize, [f64; 3])],
        v: &[(usize, [f64; 3])],
        rows: &[usize],
    ) -> Result<Vec<[f64; 3]>> {
        let x_inf = {
            let mut m = 0.0f64;
            for p in self.clean_points() {
                for c in p {
                    m = m.max(c.abs());
                }
            }
            for (_, d) in delta_base {
                for c in d {
                    m = m.max(c.abs()); // displaced coords move by at most this
                }
            }
            m
        };
        let v_inf = v
            .iter()
            .flat_map(|(_, d)| d.iter())
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let h = 1e-4 * x_inf.max(1.0) / v_inf.max(1e-12);
        let shifted = |sign: f64| -> Vec<(usize, [f64; 3])> {
            let mut merged: Vec<(usize, [f64; 3])> = delta_base.to_vec();
            for &(row, d) in v {
                match merged.iter_mut().find(|(r, _)| *r == row) {
                    Some((_, base)) => {
                        for k in 0..3 {
                            base[k] += sign * h * d[k];
                        }
                    }
                    None => merged.push((
                        row,
                        [sign * h * d[0], sign * h * d[1], sign * h * d[2]],
                    )),
                }
            }
            merged
        };
        let gp = self.eval_rows(&shifted(1.0), rows)?.grad;
        let gm = self.eval_rows(&shifted(-1.0), rows)?.grad;
        Ok(gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| {
                [
                    (a[0] - b[0]) / (2.0 * h),
                    (a[1] - b[1]) / (2.0 * h),
                    (a[2] - b[2]) / (2.0 * h),
                ]
            })
            .collect())
    }
}

/// Classifier-backed objective with cached clean per-point features.
///
/// A probe recomputes features only for displaced rows, re-pools by scanning
/// cached and fresh features in index order (so tie-breaking matches the
/// plain forward pass bitwise), runs the small head, and backpropagates into
/// the requested rows alone.
pub struct ClassifierObjective<'a> {
    model: &'a PointClassifier,
    clean: Vec<[f64; 3]>,
    label: usize,
    kind: Loss,
    clean_features: Vec<Vec<f64>>,
}

impl<'a> ClassifierObjective<'a> {
    pub fn new(model: &'a PointClassifier, cloud: &PointCloud, kind: Loss) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if cloud.label < 0 || cloud.label as usize >= model.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "cloud {} label {} out of range for {} classes",
                cloud.id,
                cloud.label,
                model.num_classes()
            )));
        }
        let clean_features = cloud.points.iter().map(|p| model.point_feature(p)).collect();
        Ok(ClassifierObjective {
            model,
            clean: cloud.points.clone(),
            label: cloud.label as usize,
            kind,
            clean_features,
        })
    }

    pub fn loss_kind(&self) -> Loss {
        self.kind
    }

    fn validate_rows(&self, delta: &[(usize, [f64; 3])], grad_rows: &[usize]) -> Result<()> {
        let n = self.clean.len();
        for &(row, _) in delta {
            if row >= n {
                return Err(Error::InvalidArgument(format!("delta row {row} out of range")));
            }
        }
        for w in 0..delta.len() {
            for u in w + 1..delta.len() {
                if delta[w].0 == delta[u].0 {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate delta row {}",
                        delta[w].0
                    )));
                }
            }
        }
        if let Some(&row) = grad_rows.iter().find(|&&r| r >= n) {
            return Err(Error::InvalidArgument(format!("grad row {row} out of range")));
        }
        Ok(())
    }
}

impl SampleObjective for ClassifierObjective<'_> {
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
        self.validate_rows(delta, grad_rows)?;
        let n = self.clean.len();
        let dim = self.model.feature_dim();

        // fresh features for displaced rows
        let moved: Vec<(usize, [f64; 3], Vec<f64>)> = delta
            .iter()
            .map(|&(row, d)| {
                let p = [
                    self.clean[row][0] + d[0],
                    self.clean[row][1] + d[1],
                    self.clean[row][2] + d[2],
                ];
                (row, p, self.model.point_feature(&p))
            })
            .collect();
        let moved_feature = |row: usize| -> Option<&Vec<f64>> {
            moved.iter().find(|(r, _, _)| *r == row).map(|(_, _, f)| f)
        };

        // re-pool in index order: same comparisons as the full forward pass
        let mut pooled = vec![f64::NEG_INFINITY; dim];
        let mut winners = vec![0usize; dim];
        for i in 0..n {
            let f = moved_feature(i).unwrap_or(&self.clean_features[i]);
            for c in 0..dim {
                if f[c] > pooled[c] {
                    pooled[c] = f[c];
                    winners[c] = i;
                }
            }
        }

        let head = self.model.head_trace(&pooled);
        let logits = head.output();
        let (loss, dlogits) = classifier::loss_and_dlogits(self.kind, logits, self.label);
        let predicted = classifier::argmax(logits);
        let adversarial = classifier::is_adversarial(logits, self.label);

        let grad = if grad_rows.is_empty() {
            Vec::new()
        } else {
            let dpooled = self.model.head_input_grad(&head, &dlogits);
            let mut dfeature = vec![0.0; dim];
            let mut out = Vec::with_capacity(grad_rows.len());
            for &row in grad_rows {
                let mut any = false;
                for c in 0..dim {
                    if winners[c] == row && dpooled[c] != 0.0 {
                        dfeature[c] = dpooled[c];
                        any = true;
                    } else {
                        dfeature[c] = 0.0;
                    }
                }
                if !any {
                    out.push([0.0; 3]);
                    continue;
                }
                // trace at the row's current (possibly displaced) position
                let pos = moved
                    .iter()
                    .find(|(r, _, _)| *r == row)
                    .map(|(_, p, _)| *p)
                    .unwrap_or(self.clean[row]);
                let trace: Trace = self.model.point_trace(&pos);
                out.push(self.model.point_input_grad(&trace, &dfeature));
            }
            out
        };

        Ok(SampleEval { loss, predicted, adversarial, grad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (PointClassifier, PointCloud) {
        let model = PointClassifier::new(&[3, 10, 12], &[12, 8, 5], Activation::Tanh, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<[f64; 3]> = (0..40)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        (model, PointCloud::new("fx", 2, points))
    }

    fn apply_delta(points: &[[f64; 3]], delta: &[(usize, [f64; 3])]) -> Vec<[f64; 3]> {
        let mut out = points.to_vec();
        for &(row, d) in delta {
            for k in 0..3 {
                out[row][k] += d[k];
            }
        }
        out
    }

    #[test]
    fn cached_probe_matches_plain_forward_bitwise() {
        let (model, cloud) = fixture();
        for kind in [Loss::NegCrossEntropy, Loss::CwMargin { kappa: 0.0 }] {
            let obj = ClassifierObjective::new(&model, &cloud, kind).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            for trial in 0..25 {
                let moved: Vec<(usize, [f64; 3])> = (0..rng.random_range(0..8usize))
                    .map(|_| {
                        (
                            rng.random_range(0..cloud.len()),
                            [
                                rng.random_range(-0.5..0.5),
                                rng.random_range(-0.5..0.5),
                                rng.random_range(-0.5..0.5),
                            ],
                        )
                    })
                    .collect();
                // dedup rows, keeping the first occurrence
                let mut delta: Vec<(usize, [f64; 3])> = Vec::new();
                for m in moved {
                    if !delta.iter().any(|(r, _)| *r == m.0) {
                        delta.push(m);
                    }
                }
                let grad_rows: Vec<usize> = (0..cloud.len()).step_by(3).collect();
                let eval = obj.eval_rows(&delta, &grad_rows).unwrap();

                let displaced = apply_delta(&cloud.points, &delta);
                let want = model
                    .loss_input_grad(&displaced, cloud.label as usize, kind)
                    .unwrap();
                assert_eq!(eval.loss, want.loss, "trial {trial}: loss must match bitwise");
                assert_eq!(eval.predicted, crate::classifier::argmax(&want.logits));
                for (gi, &row) in grad_rows.iter().enumerate() {
                    assert_eq!(
                        eval.grad[gi], want.grad[row],
                        "trial {trial}: grad row {row} must match bitwise"
                    );
                }
            }
        }
    }

    #[test]
    fn repeated_probes_leave_cache_intact() {
        let (model, cloud) = fixture();
        let obj = ClassifierObjective::new(&model, &cloud, Loss::default()).unwrap();
        let clean = obj.loss_at(&[]).unwrap();
        let _ = obj.loss_at(&[(5, [0.4, -0.2, 0.1])]).unwrap();
        let _ = obj.eval_full(&[(0, [0.9, 0.0, 0.0]), (39, [0.0, 0.3, 0.0])]).unwrap();
        assert_eq!(obj.loss_at(&[]).unwrap(), clean, "clean loss drifted across probes");
    }

    #[test]
    fn hvp_rows_matches_full_cloud_probe() {
        let (model, cloud) = fixture();
        let obj = ClassifierObjective::new(&model, &cloud, Loss::NegCrossEntropy).unwrap();
        let v = vec![(3usize, [0.2, -0.1, 0.4]), (7, [0.0, 0.5, -0.3])];
        let rows = vec![3usize, 7, 11];
        let got = obj.hvp_rows(&[], &v, &rows).unwrap();

        let mut v_full = vec![[0.0; 3]; cloud.len()];
        for &(r, d) in &v {
            v_full[r] = d;
        }
        let want = model
            .hvp(&cloud.points, cloud.label as usize, Loss::NegCrossEntropy, &v_full)
            .unwrap();
        for (gi, &row) in rows.iter().enumerate() {
            assert_eq!(got[gi], want[row], "restricted probe must equal the full one");
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let (model, cloud) = fixture();
        let obj = ClassifierObjective::new(&model, &cloud, Loss::default()).unwrap();
        assert!(obj.eval_rows(&[(40, [0.0; 3])], &[]).is_err());
        assert!(obj.eval_rows(&[(1, [0.0; 3]), (1, [0.1; 3])], &[]).is_err());
        assert!(obj.eval_rows(&[], &[40]).is_err());
        let mislabeled = PointCloud::new("m", -1, cloud.points.clone());
        assert!(ClassifierObjective::new(&model, &mislabeled, Loss::default()).is_err());
    }
}
