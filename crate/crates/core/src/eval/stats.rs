//! Two-sided Mann-Whitney U test.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest `n_a * n_b` handled by exact enumeration.
pub const EXACT_LIMIT: usize = 400;

/// Midranks (1-based) of the pooled sample and the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// `U` statistic of sample `a`: pairs `(x, y)` with `x > y`, ties counted half.
pub fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            u += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    u
}

/// Null distribution of twice the rank sum of `n_a` items drawn from the
/// pooled midranks, as `(doubled sum, probability)` pairs.
fn rank_sum_distribution(ranks: &[f64], n_a: usize) -> Vec<(usize, f64)> {
    // Doubled midranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: subsets of size k with doubled sum s.
    let mut ways = vec![vec![0.0f64; max_sum + 1]; n_a + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n_a).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            for s in (r..=max_sum).rev() {
                hi[0][s] += lo[k - 1][s - r];
            }
        }
    }
    let total: f64 = ways[n_a].iter().sum();
    ways[n_a]
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, &w)| (s, w / total))
        .collect()
}

/// Two-sided p-value for a location shift between `a` and `b`. Exact
/// (permutation over midranks) when `n_a * n_b <= 400`, otherwise the normal
/// approximation with tie correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Mann-Whitney U needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::invalid("Mann-Whitney U samples must be finite"));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let mean = (na * nb) as f64 / 2.0;
    let u = u_statistic(a, b);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);

    if na * nb <= EXACT_LIMIT {
        // U = R_a - na(na+1)/2, so |U - mean| is a function of the rank sum.
        let offset = (na * (na + 1)) as f64 / 2.0;
        let observed = (u - mean).abs();
        let p: f64 = rank_sum_distribution(&ranks, na)
            .into_iter()
            .filter(|&(s2, _)| ((s2 as f64 / 2.0 - offset) - mean).abs() >= observed - 1e-9)
            .map(|(_, p)| p)
            .sum();
        return Ok(p.min(1.0));
    }

    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1)) as f64;
    let var = (na * nb) as f64 / 12.0 * ((n + 1) as f64 - tie_term);
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = (u - mean).abs() / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok((2.0 * normal.sf(z)).min(1.0))
}
