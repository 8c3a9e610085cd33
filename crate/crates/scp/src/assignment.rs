//! Exact minimum-cost perfect matching on a square cost matrix, via the
//! O(n^3) shortest-augmenting-path method with dual potentials. Small and
//! exact is the point here: the transport metric refuses clouds large enough
//! for cubic cost to hurt.

/// Returns `assign` with `assign[row] = col` minimizing the total cost.
/// `cost` must be square and finite.
pub(crate) fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == n));
    // 1-indexed duals and matching; p[j] = row matched to column j
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // unwind the augmenting path
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(cost: &[Vec<f64>], assign: &[usize]) -> f64 {
        assign.iter().enumerate().map(|(r, &c)| cost[r][c]).sum()
    }

    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let mut cols: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        // Heap's algorithm over column permutations
        fn heaps(k: usize, cols: &mut Vec<usize>, cost: &[Vec<f64>], best: &mut f64) {
            if k == 1 {
                let t: f64 = cols.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
                if t < *best {
                    *best = t;
                }
                return;
            }
            for i in 0..k {
                heaps(k - 1, cols, cost, best);
                if k % 2 == 0 {
                    cols.swap(i, k - 1);
                } else {
                    cols.swap(0, k - 1);
                }
            }
        }
        heaps(n, &mut cols, cost, &mut best);
        best
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in 1..=7usize {
            for _ in 0..8 {
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
                    .collect();
                let assign = min_cost_assignment(&cost);
                let mut seen = assign.clone();
                seen.sort_unstable();
                seen.dedup();
                assert_eq!(seen.len(), n, "assignment must be a permutation");
                let got = total(&cost, &assign);
                let want = brute_force_min(&cost);
                assert!(
                    (got - want).abs() <= 1e-12 * want.max(1.0),
                    "n={n}: got {got}, brute force {want}"
                );
            }
        }
    }

    #[test]
    fn prefers_the_diagonal_when_it_dominates() {
        let n = 5;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|r| (0..n).map(|c| if r == c { 0.1 } else { 5.0 }).collect())
            .collect();
        assert_eq!(min_cost_assignment(&cost), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_matrix_is_fine() {
        assert!(min_cost_assignment(&[]).is_empty());
    }
}
