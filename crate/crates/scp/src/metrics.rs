//! Distortion metrics between clean and attacked clouds, and the cooperation
//! statistics that test whether subset members reinforce each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::objective::SampleObjective;

/// Points whose displacement exceeds this count as modified.
pub const MODIFIED_TOL: f64 = 1e-6;

/// Largest cloud the exact transport metric will take (cubic matching).
pub const EMD_MAX_POINTS: usize = 512;

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn check_nonempty(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(())
}

/// Symmetric chamfer discrepancy: the average of both directed
/// mean-squared-nearest-neighbor distances.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    check_nonempty(a, b)?;
    let directed = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
        let total: f64 = from
            .iter()
            .map(|p| to.iter().map(|q| d2(p, q)).fold(f64::INFINITY, f64::min))
            .sum();
        total / from.len() as f64
    };
    Ok(0.5 * (directed(a, b) + directed(b, a)))
}

/// Directed Hausdorff distance from `a` to `b` (not squared).
pub fn hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    check_nonempty(a, b)?;
    let worst = a
        .iter()
        .map(|p| b.iter().map(|q| d2(p, q)).fold(f64::INFINITY, f64::min))
        .fold(0.0f64, f64::max);
    Ok(worst.sqrt())
}

fn check_paired(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<()> {
    check_nonempty(a, b)?;
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "paired metrics need equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Frobenius norm of the row-wise displacement.
pub fn l2_displacement(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    check_paired(a, b)?;
    Ok(a.iter().zip(b).map(|(p, q)| d2(p, q)).sum::<f64>().sqrt())
}

/// Exact earth mover's distance: the minimum over point bijections of the
/// mean matched distance. Refuses clouds beyond [`EMD_MAX_POINTS`].
pub fn emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    check_paired(a, b)?;
    if a.len() > EMD_MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "exact transport cost is cubic; {} points exceeds the {EMD_MAX_POINTS} cap",
            a.len()
        )));
    }
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|p| b.iter().map(|q| d2(p, q).sqrt()).collect())
        .collect();
    let assign = min_cost_assignment(&cost);
    let total: f64 = assign.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    Ok(total / a.len() as f64)
}

/// Rows displaced by more than [`MODIFIED_TOL`] in l2.
pub fn count_modified(clean: &[[f64; 3]], adv: &[[f64; 3]]) -> Result<usize> {
    check_paired(clean, adv)?;
    Ok(clean
        .iter()
        .zip(adv)
        .filter(|(p, q)| d2(p, q).sqrt() > MODIFIED_TOL)
        .count())
}

/// Everything the per-sample report records about distortion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricBundle {
    pub chamfer: f64,
    /// Directed, attacked cloud toward the clean one.
    pub hausdorff: f64,
    pub l2: f64,
    pub emd: f64,
    pub points_modified: usize,
}

impl MetricBundle {
    pub fn compute(clean: &[[f64; 3]], adv: &[[f64; 3]]) -> Result<MetricBundle> {
        Ok(MetricBundle {
            chamfer: chamfer(adv, clean)?,
            hausdorff: hausdorff(adv, clean)?,
            l2: l2_displacement(clean, adv)?,
            emd: emd(clean, adv)?,
            points_modified: count_modified(clean, adv)?,
        })
    }
}

/// Cooperation evidence for one attacked subset.
///
/// The attack loss is minimized, so "stronger" always means a *lower* loss
/// here: displacements cooperate when applying them together attacks harder
/// than the matching blend of one-at-a-time displacements. A subset whose
/// block Hessian is positive definite sits in a locally convex bowl, where
/// the mixture inequality holds strictly for every blend — which is why the
/// selection stage hunts for exactly that certificate.
#[derive(Debug, Clone)]
pub struct CoopStats {
    /// Per subset position: how many partners amplify it (the pair's joint
    /// half-strength loss lands strictly below the mean of the solo losses).
    pub cooperative: Vec<usize>,
    /// Per subset position: how many partners cancel it (the joint loss
    /// lands strictly above the solo mean).
    pub counteractive: Vec<usize>,
    /// Fraction of random convex mixtures where the jointly displaced loss
    /// drops strictly below the mixture of solo-displacement losses.
    pub jensen_pass_fraction: f64,
}

/// Threshold separating cooperative / neutral / counteractive pairs.
pub const PAIR_TOL: f64 = 1e-9;

/// Measure how the subset's displacements interact, by probing the loss at
/// convex mixtures of the solo displacements.
///
/// `deltas[i]` is the displacement the attack assigned to `subset[i]`. Each
/// mixture draw applies `alpha_i * delta_i` to every subset point jointly,
/// with alpha uniform on the simplex (normalized unit exponentials); it
/// "passes" when the joint loss drops strictly below the alpha-mixture of
/// solo losses. Pairs are probed at alpha = (1/2, 1/2).
pub fn cooperation_stats<O: SampleObjective + ?Sized>(
    obj: &O,
    subset: &[usize],
    deltas: &[[f64; 3]],
    draws: usize,
    seed: u64,
) -> Result<CoopStats> {
    let t = subset.len();
    if t == 0 {
        return Err(Error::InvalidArgument("empty subset".into()));
    }
    if deltas.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "{} deltas for {} subset points",
            deltas.len(),
            t
        )));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("need at least one mixture draw".into()));
    }
    let n = obj.num_points();
    for (i, &p) in subset.iter().enumerate() {
        if p >= n {
            return Err(Error::InvalidArgument(format!("subset point {p} out of range")));
        }
        if subset[i + 1..].contains(&p) {
            return Err(Error::InvalidArgument(format!("duplicate subset point {p}")));
        }
    }
    if deltas.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("subset displacement"));
    }

    // solo losses
    let solo: Vec<f64> = subset
        .iter()
        .zip(deltas)
        .map(|(&p, &d)| obj.loss_at(&[(p, d)]))
        .collect::<Result<_>>()?;

    // simplex mixtures
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passes = 0usize;
    for _ in 0..draws {
        let weights: Vec<f64> = (0..t)
            .map(|_| -(1.0 - rng.random::<f64>()).ln()) // Exp(1), strictly positive
            .collect();
        let norm: f64 = weights.iter().sum();
        let alpha: Vec<f64> = weights.iter().map(|w| w / norm).collect();
        let mixed: Vec<(usize, [f64; 3])> = subset
            .iter()
            .zip(deltas)
            .zip(&alpha)
            .map(|((&p, &d), &a)| (p, [a * d[0], a * d[1], a * d[2]]))
            .collect();
        let joint = obj.loss_at(&mixed)?;
        let mixture_of_solos: f64 = alpha.iter().zip(&solo).map(|(a, l)| a * l).sum();
        if joint < mixture_of_solos {
            passes += 1;
        }
    }

    // pairwise interactions at equal weights
    let mut cooperative = vec![0usize; t];
    let mut counteractive = vec![0usize; t];
    for i in 0..t {
        for j in i + 1..t {
            let half = |d: &[f64; 3]| [0.5 * d[0], 0.5 * d[1], 0.5 * d[2]];
            let joint = obj.loss_at(&[
                (subset[i], half(&deltas[i])),
                (subset[j], half(&deltas[j])),
            ])?;
            let v = joint - 0.5 * (solo[i] + solo[j]);
            if v < -PAIR_TOL {
                cooperative[i] += 1;
                cooperative[j] += 1;
            } else if v > PAIR_TOL {
                counteractive[i] += 1;
                counteractive[j] += 1;
            }
        }
    }

    Ok(CoopStats {
        cooperative,
        counteractive,
        jensen_pass_fraction: passes as f64 / draws as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stubs::{LinearLogitObjective, QuadraticObjective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    /// Plain-loop oracle reimplementations.
    fn chamfer_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let mut ab = 0.0;
        for p in a {
            let mut best = f64::INFINITY;
            for q in b {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best {
                    best = d;
                }
            }
            ab += best;
        }
        let mut ba = 0.0;
        for q in b {
            let mut best = f64::INFINITY;
            for p in a {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best {
                    best = d;
                }
            }
            ba += best;
        }
        0.5 * (ab / a.len() as f64 + ba / b.len() as f64)
    }

    fn hausdorff_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let mut worst = 0.0f64;
        for p in a {
            let mut best = f64::INFINITY;
            for q in b {
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                    .sqrt();
                if d < best {
                    best = d;
                }
            }
            if best > worst {
                worst = best;
            }
        }
        worst
    }

    #[test]
    fn chamfer_and_hausdorff_match_oracles() {
        let a = random_cloud(30, 1);
        let b = random_cloud(40, 2);
        assert!((chamfer(&a, &b).unwrap() - chamfer_oracle(&a, &b)).abs() <= 1e-12);
        assert!((hausdorff(&a, &b).unwrap() - hausdorff_oracle(&a, &b)).abs() <= 1e-12);
        // identical clouds sit at exactly zero
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_point_clouds_have_closed_forms() {
        let p = vec![[1.0, 2.0, 2.0]];
        let q = vec![[1.0, 0.0, 0.0]];
        // displacement (0, 2, 2): norm sqrt(8)
        let norm = 8.0f64.sqrt();
        assert!((chamfer(&p, &q).unwrap() - 8.0).abs() < 1e-12, "mean squared");
        assert!((hausdorff(&p, &q).unwrap() - norm).abs() < 1e-12);
        assert!((l2_displacement(&p, &q).unwrap() - norm).abs() < 1e-12);
        assert!((emd(&p, &q).unwrap() - norm).abs() < 1e-12);
    }

    #[test]
    fn emd_matches_brute_force_bijections() {
        fn brute(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
            let n = a.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            fn walk(
                k: usize,
                perm: &mut Vec<usize>,
                a: &[[f64; 3]],
                b: &[[f64; 3]],
                best: &mut f64,
            ) {
                let n = perm.len();
                if k == n {
                    let mut total = 0.0;
                    for (i, &j) in perm.iter().enumerate() {
                        total += ((a[i][0] - b[j][0]).powi(2)
                            + (a[i][1] - b[j][1]).powi(2)
                            + (a[i][2] - b[j][2]).powi(2))
                        .sqrt();
                    }
                    let mean = total / n as f64;
                    if mean < *best {
                        *best = mean;
                    }
                    return;
                }
                for i in k..n {
                    perm.swap(k, i);
                    walk(k + 1, perm, a, b, best);
                    perm.swap(k, i);
                }
            }
            walk(0, &mut perm, a, b, &mut best);
            best
        }
        let a = random_cloud(6, 5);
        let b = random_cloud(6, 6);
        let got = emd(&a, &b).unwrap();
        let want = brute(&a, &b);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        assert_eq!(emd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn emd_refuses_oversized_clouds() {
        let a = vec![[0.0; 3]; EMD_MAX_POINTS + 1];
        assert!(emd(&a, &a).is_err());
        let b = vec![[0.0; 3]; 4];
        let c = vec![[0.0; 3]; 5];
        assert!(emd(&b, &c).is_err(), "paired metric needs equal sizes");
    }

    #[test]
    fn modified_count_uses_strict_threshold() {
        let clean = vec![[0.0; 3]; 4];
        let mut adv = clean.clone();
        adv[0][0] = 2e-6; // counted
        adv[1][0] = MODIFIED_TOL; // exactly at the threshold: not counted
        adv[2][1] = 0.4e-6; // below: not counted
        assert_eq!(count_modified(&clean, &adv).unwrap(), 1);
    }

    #[test]
    fn bundle_agrees_with_parts() {
        let clean = random_cloud(12, 7);
        let mut adv = clean.clone();
        adv[3] = [adv[3][0] + 0.2, adv[3][1], adv[3][2] - 0.1];
        adv[9] = [adv[9][0], adv[9][1] + 0.5, adv[9][2]];
        let m = MetricBundle::compute(&clean, &adv).unwrap();
        assert_eq!(m.chamfer, chamfer(&adv, &clean).unwrap());
        assert_eq!(m.hausdorff, hausdorff(&adv, &clean).unwrap());
        assert_eq!(m.l2, l2_displacement(&clean, &adv).unwrap());
        assert_eq!(m.emd, emd(&clean, &adv).unwrap());
        assert_eq!(m.points_modified, 2);
    }

    #[test]
    fn convex_loss_is_fully_cooperative() {
        // strictly convex quadratic, distinct solo displacements: the joint
        // loss at any mixture sits strictly below the mixture of solo losses
        // (Jensen, strict), so every draw passes and every pair amplifies —
        // the regime the positive-definiteness certificate guarantees
        let n = 6;
        let obj = QuadraticObjective::centered_diag(
            vec![[0.0; 3]; n],
            vec![[1.5; 3]; n],
        );
        let subset = vec![0usize, 2, 4];
        let deltas = vec![[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.5, 0.5, 0.5]];
        let stats = cooperation_stats(&obj, &subset, &deltas, 200, 3).unwrap();
        assert_eq!(stats.jensen_pass_fraction, 1.0);
        assert_eq!(stats.cooperative, vec![2, 2, 2]);
        assert_eq!(stats.counteractive, vec![0, 0, 0]);
    }

    #[test]
    fn concave_loss_is_fully_counteractive() {
        // flip the curvature: mixing displacements only hurts, no draw passes
        let n = 6;
        let obj = QuadraticObjective::centered_diag(
            vec![[0.0; 3]; n],
            vec![[-2.0; 3]; n],
        );
        let subset = vec![1usize, 3, 5];
        let deltas = vec![[0.8, 0.0, 0.0], [0.0, 0.7, 0.0], [0.0, 0.0, -0.9]];
        let stats = cooperation_stats(&obj, &subset, &deltas, 200, 9).unwrap();
        assert_eq!(stats.jensen_pass_fraction, 0.0);
        assert_eq!(stats.cooperative, vec![0, 0, 0]);
        assert_eq!(stats.counteractive, vec![2, 2, 2]);
    }

    #[test]
    fn affine_loss_pairs_are_neutral() {
        let obj = LinearLogitObjective {
            clean: random_cloud(8, 11),
            w: vec![[1.0, -2.0, 0.5], [0.3, 0.9, -1.1]],
            b: vec![0.0, 0.4],
            label: 0,
        };
        let subset = vec![0usize, 3, 6];
        let deltas = vec![[0.3, 0.1, 0.0], [-0.2, 0.0, 0.4], [0.0, 0.2, 0.2]];
        let stats = cooperation_stats(&obj, &subset, &deltas, 50, 21).unwrap();
        assert_eq!(stats.cooperative, vec![0, 0, 0], "affine effects add exactly");
        assert_eq!(stats.counteractive, vec![0, 0, 0]);
    }

    #[test]
    fn cooperation_stats_are_seed_deterministic() {
        let n = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let diag: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let obj = QuadraticObjective::centered_diag(vec![[0.0; 3]; n], diag);
        let subset = vec![0usize, 1, 2];
        let deltas = vec![[0.5, 0.2, 0.0], [0.1, -0.3, 0.2], [0.0, 0.4, -0.4]];
        let a = cooperation_stats(&obj, &subset, &deltas, 100, 77).unwrap();
        let b = cooperation_stats(&obj, &subset, &deltas, 100, 77).unwrap();
        assert_eq!(a.jensen_pass_fraction, b.jensen_pass_fraction);
        assert_eq!(a.cooperative, b.cooperative);
    }

    #[test]
    fn cooperation_validates_inputs() {
        let obj = QuadraticObjective::centered_diag(vec![[0.0; 3]; 4], vec![[1.0; 3]; 4]);
        let d = [[0.1; 3]];
        assert!(cooperation_stats(&obj, &[], &[], 10, 0).is_err());
        assert!(cooperation_stats(&obj, &[0], &d, 0, 0).is_err());
        assert!(cooperation_stats(&obj, &[9], &d, 10, 0).is_err());
        assert!(cooperation_stats(&obj, &[0, 0], &[[0.1; 3], [0.1; 3]], 10, 0).is_err());
        assert!(cooperation_stats(&obj, &[0, 1], &d, 10, 0).is_err());
        assert!(cooperation_stats(&obj, &[0], &[[f64::NAN; 3]], 10, 0).is_err());
    }
}
