//! Stage three: joint perturbation of the selected subset. Each round runs
//! Adam from a zero displacement against `loss + weight * distortion`, then
//! an interval-halving search moves the distortion weight up after successful
//! rounds and down after failed ones. The returned displacement is the
//! least-distorted adversarial one seen anywhere in the search.

use crate::error::{Error, Result};
use crate::objective::SampleObjective;
use crate::optim::Adam;

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Distortion-weight search rounds.
    pub rounds: usize,
    /// Adam steps per round.
    pub steps: usize,
    /// Initial distortion weight and its search interval.
    pub weight_init: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    /// Distortion is `chamfer_weight * CD + hausdorff_weight * HD`.
    pub chamfer_weight: f64,
    pub hausdorff_weight: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            adam_lr: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            rounds: 10,
            steps: 500,
            weight_init: 1.0,
            weight_min: 0.0,
            weight_max: 1e4,
            chamfer_weight: 1.0,
            hausdorff_weight: 0.1,
        }
    }
}

impl AttackConfig {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument("rounds and steps must be >= 1".into()));
        }
        let finite_pos = [self.adam_lr, self.weight_init]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !finite_pos {
            return Err(Error::InvalidArgument(
                "learning rate and initial weight must be positive".into(),
            ));
        }
        if !(self.weight_min >= 0.0
            && self.weight_min <= self.weight_init
            && self.weight_init <= self.weight_max
            && self.weight_max.is_finite())
        {
            return Err(Error::InvalidArgument(
                "need weight_min <= weight_init <= weight_max, all finite".into(),
            ));
        }
        if self.chamfer_weight < 0.0 || self.hausdorff_weight < 0.0 {
            return Err(Error::InvalidArgument("distortion weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// One weight-search round.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundRecord {
    /// Distortion weight this round optimized against.
    pub weight: f64,
    /// Whether any step of the round produced an adversarial cloud.
    pub succeeded: bool,
    /// Smallest distortion among this round's adversarial evaluations.
    pub best_dist: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub success: bool,
    /// Full-cloud displacement; rows outside the subset are exactly zero.
    pub delta: Vec<[f64; 3]>,
    pub adv_points: Vec<[f64; 3]>,
    pub subset: Vec<usize>,
    /// Distortion of the returned displacement.
    pub dist: f64,
    pub loss: f64,
    pub predicted: usize,
    /// Distortion weight after the final halving update.
    pub weight_final: f64,
    pub rounds: Vec<RoundRecord>,
    /// Always true in this implementation: Adam's moment estimates are
    /// re-initialized at each round boundary while the displacement carries
    /// over. Recorded so downstream consumers can tell which convention
    /// produced the result.
    pub optimizer_reset_each_round: bool,
}

/// Shift the given rows of a cloud by their matching displacement rows. Rows
/// not named in `indices` are returned bitwise unchanged, and zero
/// displacement components leave their coordinate bits alone too.
pub fn apply_sparse_delta(
    points: &[[f64; 3]],
    indices: &[usize],
    delta: &[[f64; 3]],
) -> Result<Vec<[f64; 3]>> {
    if indices.len() != delta.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} displacement rows for {} indices",
            delta.len(),
            indices.len()
        )));
    }
    let mut out = points.to_vec();
    let mut seen = vec![false; points.len()];
    for (&row, d) in indices.iter().zip(delta) {
        if row >= points.len() {
            return Err(Error::InvalidArgument(format!("row {row} out of range")));
        }
        if seen[row] {
            return Err(Error::InvalidArgument(format!("duplicate row {row}")));
        }
        seen[row] = true;
        for k in 0..3 {
            if d[k] != 0.0 {
                out[row][k] = points[row][k] + d[k];
            }
        }
    }
    Ok(out)
}

/// Frozen geometry for the distortion term: for each subset row, the squared
/// distance to its nearest non-subset clean point. Unmoved rows coincide with
/// their clean selves, so only these terms can become nonzero.
struct SubsetGeometry {
    d2_unmoved: Vec<f64>,
}

impl SubsetGeometry {
    fn new(clean: &[[f64; 3]], subset: &[usize]) -> Self {
        let in_subset = {
            let mut mask = vec![false; clean.len()];
            for &s in subset {
                mask[s] = true;
            }
            mask
        };
        let d2_unmoved = subset
            .iter()
            .map(|&row| {
                let p = clean[row];
                let mut best = f64::INFINITY;
                for (j, q) in clean.iter().enumerate() {
                    if !in_subset[j] {
                        let d = d2(&p, q);
                        if d < best {
                            best = d;
                        }
                    }
                }
                best
            })
            .collect();
        SubsetGeometry { d2_unmoved }
    }
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Distortion `cw * CD + hw * HD` between the clean cloud and the cloud with
/// the subset displaced, plus its gradient with respect to the flattened
/// subset displacement. Correspondences are those of the current positions
/// (recomputed every call, held fixed inside the gradient).
///
/// Exploits that non-subset rows are identical in both clouds: their nearest
/// neighbor is themselves at distance exactly zero, so both chamfer sums and
/// the directed Hausdorff reduce to subset-row terms and the cost is
/// O(t * n) instead of O(n^2). The values equal the full-cloud metrics
/// bitwise (zero terms drop out of sums exactly).
fn distortion_and_grad(
    clean: &[[f64; 3]],
    subset: &[usize],
    geom: &SubsetGeometry,
    flat_delta: &[f64],
    cw: f64,
    hw: f64,
) -> (f64, Vec<f64>) {
    let n = clean.len();
    let t = subset.len();
    let adv: Vec<[f64; 3]> = subset
        .iter()
        .enumerate()
        .map(|(si, &row)| {
            [
                clean[row][0] + flat_delta[3 * si],
                clean[row][1] + flat_delta[3 * si + 1],
                clean[row][2] + flat_delta[3 * si + 2],
            ]
        })
        .collect();
    let mut grad = vec![0.0; 3 * t];

    // attacked -> clean: nearest clean point per displaced row
    let mut sum_fwd = 0.0;
    let mut hd2 = 0.0f64;
    let mut hd_si = usize::MAX;
    let mut fwd_nn: Vec<usize> = vec![0; t];
    for si in 0..t {
        let mut best = f64::INFINITY;
        let mut nn = 0;
        for (q, c) in clean.iter().enumerate() {
            let d = d2(&adv[si], c);
            if d < best {
                best = d;
                nn = q;
            }
        }
        fwd_nn[si] = nn;
        sum_fwd += best;
        if best > hd2 {
            hd2 = best;
            hd_si = si;
        }
    }

    // clean -> attacked: only subset rows can have a nonzero nearest distance
    let mut sum_bwd = 0.0;
    for (si, &row) in subset.iter().enumerate() {
        let p = clean[row];
        let mut best_mv = f64::INFINITY;
        let mut nn = 0;
        for (sj, a) in adv.iter().enumerate() {
            let d = d2(&p, a);
            if d < best_mv {
                best_mv = d;
                nn = sj;
            }
        }
        if best_mv < geom.d2_unmoved[si] {
            sum_bwd += best_mv;
            // d/d adv_nn of 0.5 * (1/n) |p - adv_nn|^2
            for k in 0..3 {
                grad[3 * nn + k] += cw * (adv[nn][k] - p[k]) / n as f64;
            }
        } else if geom.d2_unmoved[si].is_finite() {
            sum_bwd += geom.d2_unmoved[si];
        } else {
            // every row is in the subset: the displaced set is all there is
            sum_bwd += best_mv;
            for k in 0..3 {
                grad[3 * nn + k] += cw * (adv[nn][k] - p[k]) / n as f64;
            }
        }
    }

    let cd = 0.5 * (sum_fwd + sum_bwd) / n as f64;
    for si in 0..t {
        let c = clean[fwd_nn[si]];
        for k in 0..3 {
            grad[3 * si + k] += cw * (adv[si][k] - c[k]) / n as f64;
        }
    }

    let hd = hd2.sqrt();
    if hd_si != usize::MAX && hd > 1e-12 {
        let c = clean[fwd_nn[hd_si]];
        for k in 0..3 {
            grad[3 * hd_si + k] += hw * (adv[hd_si][k] - c[k]) / hd;
        }
    }

    (cw * cd + hw * hd, grad)
}

fn to_sparse(subset: &[usize], flat: &[f64]) -> Vec<(usize, [f64; 3])> {
    subset
        .iter()
        .enumerate()
        .map(|(si, &row)| (row, [flat[3 * si], flat[3 * si + 1], flat[3 * si + 2]]))
        .collect()
}

struct Candidate {
    dist: f64,
    flat: Vec<f64>,
    loss: f64,
    predicted: usize,
}

enum RoundOutcome {
    Finished { succeeded: bool, best: Option<Candidate>, end: Vec<f64> },
    NonFinite,
}

/// Run one optimization round at a fixed distortion weight, continuing from
/// `start`. Returns the round's best adversarial candidate plus the final
/// iterate, or flags a non-finite evaluation so the caller can apply the
/// retry policy.
fn run_round<O: SampleObjective + ?Sized>(
    obj: &O,
    subset: &[usize],
    geom: &SubsetGeometry,
    cfg: &AttackConfig,
    lr: f64,
    weight: f64,
    start: &[f64],
    last_state: &mut Option<Candidate>,
) -> Result<RoundOutcome> {
    let t = subset.len();
    let mut flat = start.to_vec();
    let mut adam = Adam::new(3 * t, lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut best: Option<Candidate> = None;
    for step in 0..=cfg.steps {
        let eval = obj.eval_rows(&to_sparse(subset, &flat), subset)?;
        let (dist, dist_grad) = distortion_and_grad(
            obj.clean_points(),
            subset,
            geom,
            &flat,
            cfg.chamfer_weight,
            cfg.hausdorff_weight,
        );
        if !eval.loss.is_finite() || !dist.is_finite() {
            return Ok(RoundOutcome::NonFinite);
        }
        if eval.adversarial && best.as_ref().is_none_or(|b| dist < b.dist) {
            best = Some(Candidate {
                dist,
                flat: flat.clone(),
                loss: eval.loss,
                predicted: eval.predicted,
            });
        }
        *last_state = Some(Candidate {
            dist,
            flat: flat.clone(),
            loss: eval.loss,
            predicted: eval.predicted,
        });
        if step == cfg.steps {
            break; // final evaluation only
        }
        let mut g = vec![0.0; 3 * t];
        for (si, gr) in eval.grad.iter().enumerate() {
            for k in 0..3 {
                g[3 * si + k] = gr[k] + weight * dist_grad[3 * si + k];
            }
        }
        adam.step(&mut flat, &g);
    }
    Ok(RoundOutcome::Finished { succeeded: best.is_some(), best, end: flat })
}

/// Optimize a displacement supported on `subset` against the objective.
///
/// A cloud that is already adversarial returns immediately with a zero
/// displacement. The displacement starts at exact zero (the clean cloud is
/// the expansion point the subset was certified at) and carries over from
/// round to round; Adam's moments are re-initialized at every round boundary
/// since the round's weight change redefines the objective. Success anchors
/// the weight's interval-halving upward (pay more for distortion), failure
/// anchors it downward. A round whose evaluations go non-finite is retried
/// once at half the learning rate from the same starting iterate and counts
/// as failed if that also blows up, leaving the iterate where the round
/// began. The global best adversarial candidate across all rounds is
/// returned.
pub fn optimize_subset<O: SampleObjective + ?Sized>(
    obj: &O,
    subset: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let n = obj.num_points();
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty attack subset".into()));
    }
    for (i, &s) in subset.iter().enumerate() {
        if s >= n {
            return Err(Error::InvalidArgument(format!("subset row {s} out of range")));
        }
        if subset[i + 1..].contains(&s) {
            return Err(Error::InvalidArgument(format!("duplicate subset row {s}")));
        }
    }

    let clean = obj.clean_points().to_vec();
    let assemble = |flat: &[f64]| -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let mut delta = vec![[0.0; 3]; n];
        let mut adv = clean.clone();
        for (si, &row) in subset.iter().enumerate() {
            for k in 0..3 {
                delta[row][k] = flat[3 * si + k];
                adv[row][k] += flat[3 * si + k];
            }
        }
        (delta, adv)
    };

    // already adversarial: nothing to optimize
    let clean_eval = obj.eval_rows(&[], &[])?;
    if clean_eval.adversarial {
        let (delta, adv) = assemble(&vec![0.0; 3 * subset.len()]);
        return Ok(AttackResult {
            success: true,
            delta,
            adv_points: adv,
            subset: subset.to_vec(),
            dist: 0.0,
            loss: clean_eval.loss,
            predicted: clean_eval.predicted,
            weight_final: cfg.weight_init,
            rounds: Vec::new(),
            optimizer_reset_each_round: true,
        });
    }

    let geom = SubsetGeometry::new(&clean, subset);
    let mut weight = cfg.weight_init;
    let (mut lo, mut hi) = (cfg.weight_min, cfg.weight_max);
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut global_best: Option<Candidate> = None;
    let mut last_state: Option<Candidate> = None;

    let mut carry = vec![0.0; 3 * subset.len()];
    for _ in 0..cfg.rounds {
        let mut outcome =
            run_round(obj, subset, &geom, cfg, cfg.adam_lr, weight, &carry, &mut last_state)?;
        if matches!(outcome, RoundOutcome::NonFinite) {
            outcome = run_round(
                obj,
                subset,
                &geom,
                cfg,
                cfg.adam_lr * 0.5,
                weight,
                &carry,
                &mut last_state,
            )?;
        }
        let (succeeded, round_best) = match outcome {
            RoundOutcome::Finished { succeeded, best, end } => {
                carry = end;
                (succeeded, best)
            }
            RoundOutcome::NonFinite => (false, None),
        };
        rounds.push(RoundRecord {
            weight,
            succeeded,
            best_dist: round_best.as_ref().map(|b| b.dist),
        });
        if let Some(cand) = round_best {
            if global_best.as_ref().is_none_or(|b| cand.dist < b.dist) {
                global_best = Some(cand);
            }
        }
        // interval halving anchored at the current weight
        if succeeded {
            lo = weight;
            weight = 0.5 * (weight + hi);
        } else {
            hi = weight;
            weight = 0.5 * (lo + weight);
        }
    }

    let success = global_best.is_some();
    let cand = global_best
        .or(last_state)
        .ok_or(Error::NonFinite("attack objective"))?;
    let (delta, adv) = assemble(&cand.flat);
    Ok(AttackResult {
        success,
        delta,
        adv_points: adv,
        subset: subset.to_vec(),
        dist: cand.dist,
        loss: cand.loss,
        predicted: cand.predicted,
        weight_final: weight,
        rounds,
        optimizer_reset_each_round: true,
    })
}
