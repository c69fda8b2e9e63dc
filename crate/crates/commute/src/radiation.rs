//! Radiation-model baselines: the parameter-free standard model and the
//! one-parameter variant, plus the intervening-population matrix and the
//! area-based estimate for the parameter.

use num_traits::Float;
use thiserror::Error;

use crate::flow::{normalize_rows, CommuterMarginals, CommutingMode, FlowMatrix, Provenance};
use crate::geo::RegionSet;

#[derive(Debug, Error)]
pub enum RadiationError {
    #[error("region {0} has zero population")]
    ZeroPopulation(String),
    #[error("non-positive area for alpha estimation")]
    NonPositiveArea,
    #[error(transparent)]
    Flow(#[from] crate::flow::FlowError),
}

/// Everything the radiation models consume: populations, pairwise centroid
/// distances, marginals, and the intervening-population matrix.
#[derive(Debug, Clone)]
pub struct RadiationInputs<F> {
    pub ids: Vec<String>,
    pub populations: Vec<F>,
    pub distances: Vec<Vec<F>>,
    pub marginals: CommuterMarginals<F>,
    pub intervening: Vec<Vec<F>>,
}

impl<F: Float> RadiationInputs<F> {
    pub fn from_parts(
        ids: Vec<String>,
        populations: Vec<F>,
        distances: Vec<Vec<F>>,
        marginals: CommuterMarginals<F>,
    ) -> Self {
        let intervening = intervening_population(&populations, &distances);
        RadiationInputs {
            ids,
            populations,
            distances,
            marginals,
            intervening,
        }
    }

    pub fn from_region_set(rs: &RegionSet, marginals: CommuterMarginals<F>) -> Self {
        let ids = rs.ids().map(str::to_owned).collect();
        let populations = rs
            .populations()
            .into_iter()
            .map(|p| F::from(p).unwrap())
            .collect();
        let distances = rs
            .centroid_distances_km()
            .into_iter()
            .map(|row| row.into_iter().map(|d| F::from(d).unwrap()).collect())
            .collect();
        Self::from_parts(ids, populations, distances, marginals)
    }

    fn check_populations(&self) -> Result<(), RadiationError> {
        for (id, &n) in self.ids.iter().zip(&self.populations) {
            if n <= F::zero() {
                return Err(RadiationError::ZeroPopulation(id.clone()));
            }
        }
        Ok(())
    }
}

/// s_ij: total population strictly inside the circle around i of radius
/// d_ij, excluding regions i and j. Computed per origin row by sorting
/// destinations by distance and prefix-summing; ties at exactly d_ij are
/// excluded by the strict inequality.
pub fn intervening_population<F: Float>(populations: &[F], distances: &[Vec<F>]) -> Vec<Vec<F>> {
    let k = populations.len();
    let mut s = vec![vec![F::zero(); k]; k];
    for i in 0..k {
        let mut order: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| distances[i][a].partial_cmp(&distances[i][b]).unwrap());
        let mut prefix = Vec::with_capacity(order.len() + 1);
        prefix.push(F::zero());
        for &j in &order {
            let last = *prefix.last().unwrap();
            prefix.push(last + populations[j]);
        }
        for j in 0..k {
            if j == i {
                continue;
            }
            // Number of sorted entries with distance strictly below d_ij.
            let d_ij = distances[i][j];
            let below = order.partition_point(|&m| distances[i][m] < d_ij);
            // j itself sits at distance d_ij, so it is never inside.
            s[i][j] = prefix[below];
        }
    }
    s
}

/// Raw standard-model score for one pair.
pub fn standard_score<F: Float>(n_i: F, n_j: F, s_ij: F) -> F {
    n_i * n_j / ((n_i + s_ij) * (n_i + n_j + s_ij))
}

/// Raw one-parameter score for one pair, with a_ij = n_i + s_ij.
pub fn one_param_score<F: Float>(n_i: F, n_j: F, s_ij: F, alpha: F) -> F {
    let a = n_i + s_ij;
    let one = F::one();
    ((a + n_j).powf(alpha) - a.powf(alpha)) * (n_i.powf(alpha) + one)
        / ((a.powf(alpha) + one) * ((a + n_j).powf(alpha) + one))
}

fn scores_to_matrix<F: Float>(
    inputs: &RadiationInputs<F>,
    provenance: Provenance,
    score: impl Fn(usize, usize) -> F,
) -> Result<(FlowMatrix<F>, Vec<usize>), RadiationError> {
    let k = inputs.ids.len();
    let mut m = FlowMatrix::zeros(inputs.ids.clone(), provenance);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                m.set(i, j, score(i, j));
            }
        }
    }
    let (normalized, zero_rows) = normalize_rows(&m, &inputs.marginals, CommutingMode::External)?;
    Ok((normalized, zero_rows))
}

/// Parameter-free radiation model: zero diagonal, rows normalized to c_i.
/// Rows with all-zero raw scores stay zero and are returned as diagnostics.
pub fn radiation_standard<F: Float>(
    inputs: &RadiationInputs<F>,
) -> Result<(FlowMatrix<F>, Vec<usize>), RadiationError> {
    inputs.check_populations()?;
    scores_to_matrix(inputs, Provenance::RadiationStd, |i, j| {
        standard_score(
            inputs.populations[i],
            inputs.populations[j],
            inputs.intervening[i][j],
        )
    })
}

/// The model parameter: one global value or one per origin region.
#[derive(Debug, Clone)]
pub enum Alpha<F> {
    Global(F),
    PerOrigin(Vec<F>),
}

impl<F: Copy> Alpha<F> {
    fn for_origin(&self, i: usize) -> F {
        match self {
            Alpha::Global(a) => *a,
            Alpha::PerOrigin(v) => v[i],
        }
    }
}

/// One-parameter radiation model.
pub fn radiation_one_param<F: Float>(
    inputs: &RadiationInputs<F>,
    alpha: &Alpha<F>,
) -> Result<(FlowMatrix<F>, Vec<usize>), RadiationError> {
    inputs.check_populations()?;
    scores_to_matrix(inputs, Provenance::Radiation1p, |i, j| {
        one_param_score(
            inputs.populations[i],
            inputs.populations[j],
            inputs.intervening[i][j],
            alpha.for_origin(i),
        )
    })
}

/// Area-based parameter estimate alpha = (l / 36 km)^1.33 with l =
/// sqrt(area). The estimate is stated for l in [1, 65] km; values outside
/// are clamped and flagged.
pub fn alpha_estimate<F: Float>(area_km2: F) -> Result<(F, bool), RadiationError> {
    if area_km2 <= F::zero() {
        return Err(RadiationError::NonPositiveArea);
    }
    let l = area_km2.sqrt();
    let lo = F::one();
    let hi = F::from(65.0).unwrap();
    let clamped = l < lo || l > hi;
    let l = l.max(lo).min(hi);
    let alpha = (l / F::from(36.0).unwrap()).powf(F::from(1.33).unwrap());
    Ok((alpha, clamped))
}

/// Brute-force O(K^3) intervening population, the oracle the fast version
/// is checked against.
pub fn intervening_population_brute<F: Float>(
    populations: &[F],
    distances: &[Vec<F>],
) -> Vec<Vec<F>> {
    let k = populations.len();
    let mut s = vec![vec![F::zero(); k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let mut total = F::zero();
            for m in 0..k {
                if m != i && m != j && distances[i][m] < distances[i][j] {
                    total = total + populations[m];
                }
            }
            s[i][j] = total;
        }
    }
    s
}
