//! Stage one and two of the attack: gradient screening to a candidate pool,
//! then subset construction. The cooperative modes grow a subset whose
//! restricted curvature block stays positive definite — greedily via
//! incremental Schur-complement pricing, or against a one-shot fully
//! assembled block — and two baselines (gradient top-k, uniform random)
//! anchor the comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hessian_schur::{assemble_block, candidate_coupling, CholeskyState};
use crate::linalg::symmetric_min_eigenvalue;
use crate::objective::SampleObjective;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Incremental Schur-complement acceptance over the screened pool.
    Greedy,
    /// Assemble the full pool block once, accept on exact principal-submatrix
    /// minimum eigenvalues. Same decision rule, no incremental factor.
    FullHessian,
    /// Highest gradient norms, no curvature test.
    GradientTopK,
    /// Uniform random points, no screening at all.
    Random,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Greedy => "greedy",
            SelectionMode::FullHessian => "full_hessian",
            SelectionMode::GradientTopK => "gradient_topk",
            SelectionMode::Random => "random",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "greedy" => Ok(SelectionMode::Greedy),
            "full_hessian" => Ok(SelectionMode::FullHessian),
            "gradient_topk" => Ok(SelectionMode::GradientTopK),
            "random" => Ok(SelectionMode::Random),
            other => Err(Error::InvalidArgument(format!("unknown selection mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionConfig {
    /// Screening pool size.
    pub k: usize,
    /// Surplus tolerance: candidates with surplus > -epsilon are accepted.
    pub epsilon: f64,
    /// Subset size cap.
    pub t_max: usize,
    pub mode: SelectionMode,
    /// Seed for the random baseline.
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k: 256,
            epsilon: 1e-6,
            t_max: 64,
            mode: SelectionMode::Greedy,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.t_max == 0 {
            return Err(Error::InvalidArgument("k and t_max must be >= 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// The selected subset plus the evidence trail the reports need.
#[derive(Debug, Clone)]
pub struct CooperativeSubset {
    /// Selected point indices in acceptance order.
    pub indices: Vec<usize>,
    /// The seed point (first entry of `indices`).
    pub init_index: usize,
    /// Own-block minimum eigenvalue of the seed (cooperative modes only).
    pub init_lambda: Option<f64>,
    /// Surplus of each accepted candidate after the seed, in order.
    pub surpluses: Vec<f64>,
    /// Candidates tested and turned down, with the surplus that sank them.
    pub rejected: Vec<(usize, f64)>,
    /// No candidate passed the seed test; the subset fell back to the top
    /// screened point alone.
    pub fallback: bool,
    pub mode: SelectionMode,
}

fn screen_with_norms<O: SampleObjective + ?Sized>(
    obj: &O,
    k: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("screening pool must be >= 1".into()));
    }
    let eval = obj.eval_full(&[])?;
    let norms: Vec<f64> = eval
        .grad
        .iter()
        .map(|g| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())
        .collect();
    if norms.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("screening gradient"));
    }
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    Ok((order, norms))
}

/// Rank points by the l2 norm of the clean-cloud loss gradient, descending,
/// ties toward the lower index; keep the best `k`.
pub fn gradient_screen<O: SampleObjective + ?Sized>(obj: &O, k: usize) -> Result<Vec<usize>> {
    Ok(screen_with_norms(obj, k)?.0)
}

/// Run the configured selection stage against one objective.
pub fn select<O: SampleObjective + ?Sized>(obj: &O, cfg: &SelectionConfig) -> Result<CooperativeSubset> {
    cfg.validate()?;
    if obj.num_points() == 0 {
        return Err(Error::EmptyCloud);
    }
    match cfg.mode {
        SelectionMode::Random => select_random(obj, cfg),
        SelectionMode::GradientTopK => {
            let screened = gradient_screen(obj, cfg.k)?;
            let take = cfg.t_max.min(screened.len());
            let indices: Vec<usize> = screened[..take].to_vec();
            Ok(CooperativeSubset {
                init_index: indices[0],
                init_lambda: None,
                surpluses: Vec::new(),
                rejected: Vec::new(),
                fallback: false,
                mode: cfg.mode,
                indices,
            })
        }
        SelectionMode::Greedy => {
            let (screened, norms) = screen_with_norms(obj, cfg.k)?;
            let live = live_candidates(&screened, &norms);
            select_greedy(obj, cfg, &screened, &live)
        }
        SelectionMode::FullHessian => {
            let (screened, norms) = screen_with_norms(obj, cfg.k)?;
            let live = live_candidates(&screened, &norms);
            select_full_hessian(obj, cfg, &screened, &live)
        }
    }
}

/// The curvature scans consider only rows whose loss gradient is nonzero. A
/// row the loss does not depend on at all (no pooled channel won, under a
/// max-pool model) has an exactly-zero gradient, an exactly-zero curvature
/// block, and an exactly-zero coupling to every other row — it would pass
/// every positive-semidefinite test as inert padding while contributing
/// nothing an optimizer could use. Screening is meant to rank candidates by
/// influence; rows with none are not candidates.
fn live_candidates(screened: &[usize], norms: &[f64]) -> Vec<usize> {
    screened.iter().copied().filter(|&i| norms[i] > 0.0).collect()
}

fn top1_fallback(screened: &[usize], lambda: Option<f64>, mode: SelectionMode, rejected: Vec<(usize, f64)>) -> CooperativeSubset {
    CooperativeSubset {
        indices: vec![screened[0]],
        init_index: screened[0],
        init_lambda: lambda,
        surpluses: Vec::new(),
        rejected,
        fallback: true,
        mode,
    }
}

/// One pass over the live screened candidates in gradient order. The seed is
/// the first candidate whose own 3x3 curvature block clears -epsilon; each
/// later candidate is priced by its Schur surplus against the factored subset
/// block and accepted or rejected on the spot.
fn select_greedy<O: SampleObjective + ?Sized>(
    obj: &O,
    cfg: &SelectionConfig,
    screened: &[usize],
    live: &[usize],
) -> Result<CooperativeSubset> {
    let mut rejected: Vec<(usize, f64)> = Vec::new();
    let mut seed: Option<(usize, usize, f64)> = None; // (position, index, lambda)
    for (pos, &cand) in live.iter().enumerate() {
        let block = assemble_block(obj, &[], &[cand])?;
        let lambda = block.min_eigenvalue()?;
        if lambda > -cfg.epsilon {
            seed = Some((pos, cand, lambda));
            break;
        }
        rejected.push((cand, lambda));
    }
    let Some((seed_pos, seed_index, seed_lambda)) = seed else {
        return Ok(top1_fallback(screened, None, cfg.mode, rejected));
    };

    let block = assemble_block(obj, &[], &[seed_index])?;
    let mut state = CholeskyState::new(block)?;
    let mut surpluses = Vec::new();
    for (pos, &cand) in live.iter().enumerate() {
        if state.indices().len() >= cfg.t_max {
            break;
        }
        if pos <= seed_pos {
            continue; // earlier candidates already failed the seed test
        }
        let (b, c) = candidate_coupling(obj, &[], state.indices(), cand)?;
        let surplus = state.schur_surplus(&b, &c)?;
        if surplus > -cfg.epsilon {
            match state.extend(cand, &b, &c) {
                Ok(()) => surpluses.push(surplus),
                // numerically unfactorable even with jitter: treat as a
                // rejection rather than aborting the sample
                Err(Error::NotPositiveDefinite { .. }) => rejected.push((cand, surplus)),
                Err(e) => return Err(e),
            }
        } else {
            rejected.push((cand, surplus));
        }
    }
    Ok(CooperativeSubset {
        indices: state.indices().to_vec(),
        init_index: seed_index,
        init_lambda: Some(seed_lambda),
        surpluses,
        rejected,
        fallback: false,
        mode: cfg.mode,
    })
}

/// Reference implementation of the same acceptance rule: assemble the whole
/// screened pool's curvature block up front — every top-k candidate, before
/// knowing which rows even matter — then accept each live candidate iff the
/// grown principal submatrix's exact minimum eigenvalue clears -epsilon.
/// Paying for the full block plus a cubic eigensolve per test is what makes
/// this the slow path by design.
fn select_full_hessian<O: SampleObjective + ?Sized>(
    obj: &O,
    cfg: &SelectionConfig,
    screened: &[usize],
    live: &[usize],
) -> Result<CooperativeSubset> {
    const MAX_FULL_DIM: usize = 768;
    if 3 * screened.len() > MAX_FULL_DIM {
        return Err(Error::InvalidArgument(format!(
            "full-block mode assembles 3k x 3k = {0} x {0}; k = {1} exceeds the {2}-column cap",
            3 * screened.len(),
            screened.len(),
            MAX_FULL_DIM
        )));
    }
    let pool = assemble_block(obj, &[], screened)?;
    // positions of the live candidates within the screened pool, in order
    let live_pos: Vec<usize> = {
        let mut next = 0;
        live.iter()
            .map(|&cand| {
                let p = screened[next..].iter().position(|&s| s == cand).unwrap() + next;
                next = p + 1;
                p
            })
            .collect()
    };

    // principal submatrix over chosen pool positions
    let sub_min = |positions: &[usize]| -> Result<f64> {
        let rows: Vec<usize> = positions
            .iter()
            .flat_map(|&p| (0..3).map(move |k| 3 * p + k))
            .collect();
        symmetric_min_eigenvalue(&pool.mat.principal_submatrix(&rows))
    };

    let mut rejected: Vec<(usize, f64)> = Vec::new();
    let mut seed: Option<(usize, f64)> = None;
    for (i, &pos) in live_pos.iter().enumerate() {
        let lambda = sub_min(&[pos])?;
        if lambda > -cfg.epsilon {
            seed = Some((i, lambda));
            break;
        }
        rejected.push((live[i], lambda));
    }
    let Some((seed_i, seed_lambda)) = seed else {
        return Ok(top1_fallback(screened, None, cfg.mode, rejected));
    };

    let mut positions = vec![live_pos[seed_i]];
    let mut chosen = vec![live[seed_i]];
    let mut surpluses = Vec::new();
    for i in seed_i + 1..live.len() {
        if positions.len() >= cfg.t_max {
            break;
        }
        let mut grown = positions.clone();
        grown.push(live_pos[i]);
        let lambda = sub_min(&grown)?;
        if lambda > -cfg.epsilon {
            positions = grown;
            chosen.push(live[i]);
            surpluses.push(lambda);
        } else {
            rejected.push((live[i], lambda));
        }
    }
    Ok(CooperativeSubset {
        indices: chosen,
        init_index: live[seed_i],
        init_lambda: Some(seed_lambda),
        surpluses,
        rejected,
        fallback: false,
        mode: cfg.mode,
    })
}

/// Uniform random t-subset of all points via a partial Fisher-Yates pass.
fn select_random<O: SampleObjective + ?Sized>(obj: &O, cfg: &SelectionConfig) -> Result<CooperativeSubset> {
    let n = obj.num_points();
    let t = cfg.t_max.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..t {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let indices: Vec<usize> = pool[..t].to_vec();
    Ok(CooperativeSubset {
        init_index: indices[0],
        init_lambda: None,
        surpluses: Vec::new(),
        rejected: Vec::new(),
        fallback: false,
        mode: cfg.mode,
        indices,
    })
}
