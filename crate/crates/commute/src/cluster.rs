//! Per-region hourly tweet-rate distributions and k-medoids clustering
//! under the 1-D earth-mover's distance.

use std::collections::BTreeMap;

use num_traits::Float;
use serde::Serialize;
use thiserror::Error;

use crate::civil::DayClass;
use crate::geo::RegionSet;
use crate::ingest::UserProfile;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("distribution is not normalized (sum {0})")]
    Unnormalized(f64),
    #[error("distributions have different lengths")]
    LengthMismatch,
    #[error("requested {k} clusters from {n} items")]
    TooFewItems { k: usize, n: usize },
}

/// 24-bin tweet-rate histogram for one region, split by day-class, with
/// both raw counts and normalized masses.
#[derive(Debug, Clone, Serialize)]
pub struct HourlyDistribution {
    pub region_id: String,
    pub weekday_counts: [u64; 24],
    pub weekend_counts: [u64; 24],
    pub weekday_mass: [f64; 24],
    pub weekend_mass: [f64; 24],
}

fn normalize_counts(counts: &[u64; 24]) -> [f64; 24] {
    let total: u64 = counts.iter().sum();
    let mut mass = [0.0; 24];
    if total > 0 {
        for h in 0..24 {
            mass[h] = counts[h] as f64 / total as f64;
        }
    }
    mass
}

impl HourlyDistribution {
    pub fn from_counts(region_id: String, weekday: [u64; 24], weekend: [u64; 24]) -> Self {
        HourlyDistribution {
            region_id,
            weekday_mass: normalize_counts(&weekday),
            weekend_mass: normalize_counts(&weekend),
            weekday_counts: weekday,
            weekend_counts: weekend,
        }
    }

    pub fn weekday_total(&self) -> u64 {
        self.weekday_counts.iter().sum()
    }

    pub fn weekend_total(&self) -> u64 {
        self.weekend_counts.iter().sum()
    }
}

/// Cross-region mean of the normalized weekday and weekend curves.
#[derive(Debug, Clone, Serialize)]
pub struct MeanCurves {
    pub weekday: [f64; 24],
    pub weekend: [f64; 24],
}

/// Aggregate hourly tweet counts per region over all users. Regions with no
/// tweets in either day-class are excluded and reported.
pub fn hourly_distributions(
    profiles: &BTreeMap<String, UserProfile>,
    rs: &RegionSet,
) -> (Vec<HourlyDistribution>, Vec<String>, MeanCurves) {
    let k = rs.len();
    let mut weekday = vec![[0u64; 24]; k];
    let mut weekend = vec![[0u64; 24]; k];
    for profile in profiles.values() {
        for (region, visit) in &profile.visits {
            let Some(idx) = rs.index_of(region) else {
                continue;
            };
            for h in 0..24 {
                weekday[idx][h] += visit.hourly[DayClass::Weekday.index()][h].count;
                weekend[idx][h] += visit.hourly[DayClass::Weekend.index()][h].count;
            }
        }
    }
    let mut dists = Vec::new();
    let mut excluded = Vec::new();
    for i in 0..k {
        let wd: u64 = weekday[i].iter().sum();
        let we: u64 = weekend[i].iter().sum();
        if wd == 0 || we == 0 {
            excluded.push(rs.id_of(i).to_string());
            continue;
        }
        dists.push(HourlyDistribution::from_counts(
            rs.id_of(i).to_string(),
            weekday[i],
            weekend[i],
        ));
    }
    let mut mean = MeanCurves {
        weekday: [0.0; 24],
        weekend: [0.0; 24],
    };
    if !dists.is_empty() {
        for d in &dists {
            for h in 0..24 {
                mean.weekday[h] += d.weekday_mass[h];
                mean.weekend[h] += d.weekend_mass[h];
            }
        }
        for h in 0..24 {
            mean.weekday[h] /= dists.len() as f64;
            mean.weekend[h] /= dists.len() as f64;
        }
    }
    (dists, excluded, mean)
}

/// Earth-mover's distance between two normalized histograms on a linear
/// axis with unit bin width: the summed absolute CDF gap.
pub fn emd_1d<F: Float>(a: &[F], b: &[F]) -> Result<F, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::LengthMismatch);
    }
    let tol = F::from(1e-9).unwrap();
    for dist in [a, b] {
        let sum = dist.iter().fold(F::zero(), |acc, &v| acc + v);
        if (sum - F::one()).abs() > tol {
            return Err(ClusterError::Unnormalized(sum.to_f64().unwrap_or(f64::NAN)));
        }
    }
    let mut cdf_gap = F::zero();
    let mut total = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        cdf_gap = cdf_gap + (x - y);
        total = total + cdf_gap.abs();
    }
    Ok(total)
}

/// A k-medoids partition over a fixed item set.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub k: usize,
    /// Item indices of the medoids, ascending.
    pub medoids: Vec<usize>,
    /// For each item, the position of its medoid in `medoids`.
    pub labels: Vec<usize>,
    pub cost: f64,
}

fn assignment_cost(d: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let n = d.len();
    let mut labels = vec![0; n];
    let mut cost = 0.0;
    for i in 0..n {
        let mut best = 0;
        for (m, &medoid) in medoids.iter().enumerate() {
            if d[i][medoid] < d[i][medoids[best]] {
                best = m;
            }
        }
        labels[i] = best;
        cost += d[i][medoids[best]];
    }
    (labels, cost)
}

/// Number of k-subsets of n items, saturating.
fn n_subsets(n: usize, k: usize) -> u64 {
    let mut c = 1u64;
    for i in 0..k as u64 {
        c = c.saturating_mul(n as u64 - i) / (i + 1);
    }
    c
}

/// Exhaustive search over medoid subsets; ties go to the lexicographically
/// smallest set.
fn exact_small(d: &[Vec<f64>], k: usize) -> Clustering {
    let n = d.len();
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best: Option<(Vec<usize>, Vec<usize>, f64)> = None;
    loop {
        let (labels, cost) = assignment_cost(d, &subset);
        if best.as_ref().is_none_or(|(_, _, c)| cost < *c) {
            best = Some((subset.clone(), labels, cost));
        }
        // Advance to the next combination in lexicographic order.
        let mut i = k;
        loop {
            if i == 0 {
                let (medoids, labels, cost) = best.unwrap();
                return Clustering {
                    k,
                    medoids,
                    labels,
                    cost,
                };
            }
            i -= 1;
            if subset[i] < n - (k - i) {
                subset[i] += 1;
                for j in (i + 1)..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// PAM over a precomputed distance matrix. Small instances are solved by
/// exhaustive subset search; otherwise a deterministic greedy
/// initialization (most-central item, then farthest-point) is refined with
/// best-improvement swaps until no move helps or `max_iter` is hit.
/// Assignment ties go to the lower-indexed medoid.
pub fn k_medoids_from_distances(
    d: &[Vec<f64>],
    k: usize,
    max_iter: usize,
) -> Result<Clustering, ClusterError> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(ClusterError::TooFewItems { k, n });
    }
    // Tiny instances are solved exactly: swap descent can stall in a local
    // optimum, and enumerating medoid subsets is cheap at this scale.
    if n_subsets(n, k) <= 20_000 {
        return Ok(exact_small(d, k));
    }
    // Most-central item first.
    let mut medoids = vec![(0..n)
        .min_by(|&a, &b| {
            let sa: f64 = d[a].iter().sum();
            let sb: f64 = d[b].iter().sum();
            sa.partial_cmp(&sb).unwrap().then(a.cmp(&b))
        })
        .unwrap()];
    // Farthest-point for the rest.
    while medoids.len() < k {
        let next = (0..n)
            .filter(|i| !medoids.contains(i))
            .max_by(|&a, &b| {
                let da = medoids.iter().map(|&m| d[a][m]).fold(f64::INFINITY, f64::min);
                let db = medoids.iter().map(|&m| d[b][m]).fold(f64::INFINITY, f64::min);
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        medoids.push(next);
    }
    medoids.sort_unstable();

    let (mut labels, mut cost) = assignment_cost(d, &medoids);
    for _ in 0..max_iter {
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for candidate in 0..n {
                if medoids.contains(&candidate) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = candidate;
                trial.sort_unstable();
                let (_, trial_cost) = assignment_cost(d, &trial);
                if trial_cost < cost - 1e-12
                    && best.is_none_or(|(_, _, c)| trial_cost < c)
                {
                    best = Some((slot, candidate, trial_cost));
                }
            }
        }
        let Some((slot, candidate, _)) = best else {
            break;
        };
        medoids[slot] = candidate;
        medoids.sort_unstable();
        let (new_labels, new_cost) = assignment_cost(d, &medoids);
        debug_assert!(new_cost <= cost);
        labels = new_labels;
        cost = new_cost;
    }
    Ok(Clustering {
        k,
        medoids,
        labels,
        cost,
    })
}

/// Cluster weekday hourly distributions by EMD.
pub fn k_medoids(
    distributions: &[HourlyDistribution],
    k: usize,
    max_iter: usize,
) -> Result<Clustering, ClusterError> {
    let n = distributions.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = emd_1d(&distributions[i].weekday_mass, &distributions[j].weekday_mass)?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    k_medoids_from_distances(&d, k, max_iter)
}

/// Exhaustive-search optimal cost for small instances; the oracle PAM is
/// checked against (k = 2 only).
pub fn exhaustive_two_medoid_cost(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let mut best = f64::INFINITY;
    for a in 0..n {
        for b in (a + 1)..n {
            let (_, cost) = assignment_cost(d, &[a, b]);
            best = best.min(cost);
        }
    }
    best
}
