//! Origin-destination flow matrices: construction from assignments,
//! row normalization to commuter marginals, and the OD CSV format.
//!
//! `FlowMatrix` is generic over the scalar type; the pipeline uses the
//! `f64` alias at the crate root. K is small (a few hundred regions) so
//! storage is dense row-major.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use num_traits::Float;
use thiserror::Error;

use crate::assign::{HardAssignment, SoftAssignment};
use crate::geo::RegionSet;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("unknown region id {0}")]
    UnknownRegion(String),
    #[error("no soft assignments to average")]
    NoUsers,
    #[error("negative marginal c for region {0}")]
    NegativeMarginal(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad OD csv at line {line}: {reason}")]
    BadCsv { line: usize, reason: String },
}

/// Where a flow matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    TwitterHard,
    TwitterSoft,
    RadiationStd,
    Radiation1p,
    Census,
    SyntheticTruth,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::TwitterHard => "twitter-hard",
            Provenance::TwitterSoft => "twitter-soft",
            Provenance::RadiationStd => "radiation-std",
            Provenance::Radiation1p => "radiation-1p",
            Provenance::Census => "census",
            Provenance::SyntheticTruth => "synthetic-truth",
        };
        f.write_str(s)
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "twitter-hard" => Provenance::TwitterHard,
            "twitter-soft" => Provenance::TwitterSoft,
            "radiation-std" => Provenance::RadiationStd,
            "radiation-1p" => Provenance::Radiation1p,
            "census" => Provenance::Census,
            "synthetic-truth" => Provenance::SyntheticTruth,
            other => return Err(format!("unknown provenance {other}")),
        })
    }
}

/// Which trips count: everything, or off-diagonal (external) only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommutingMode {
    All,
    External,
}

/// Dense K x K non-negative flow matrix with its region index.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix<F> {
    ids: Vec<String>,
    data: Vec<F>,
    pub diagonal_meaningful: bool,
    pub provenance: Provenance,
}

impl<F: Float> FlowMatrix<F> {
    pub fn zeros(ids: Vec<String>, provenance: Provenance) -> Self {
        let k = ids.len();
        FlowMatrix {
            ids,
            data: vec![F::zero(); k * k],
            diagonal_meaningful: true,
            provenance,
        }
    }

    pub fn from_region_set(rs: &RegionSet, provenance: Provenance) -> Self {
        Self::zeros(rs.ids().map(str::to_owned).collect(), provenance)
    }

    pub fn k(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.k() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: F) {
        let k = self.k();
        self.data[i * k + j] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: F) {
        let k = self.k();
        self.data[i * k + j] = self.data[i * k + j] + v;
    }

    pub fn total(&self) -> F {
        self.data.iter().fold(F::zero(), |a, &b| a + b)
    }

    pub fn row_sum(&self, i: usize) -> F {
        let k = self.k();
        self.data[i * k..(i + 1) * k]
            .iter()
            .fold(F::zero(), |a, &b| a + b)
    }

    pub fn scale(&mut self, factor: F) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }

    /// Copy with the diagonal zeroed; diagonal_meaningful becomes false.
    pub fn zero_diagonal(&self) -> Self {
        let mut out = self.clone();
        let k = out.k();
        for i in 0..k {
            out.data[i * k + i] = F::zero();
        }
        out.diagonal_meaningful = false;
        out
    }

    pub fn same_index(&self, other: &Self) -> Result<(), FlowError> {
        if self.ids != other.ids {
            return Err(FlowError::DimensionMismatch(self.k(), other.k()));
        }
        Ok(())
    }
}

/// Per-region outward-commuter totals and populations.
#[derive(Debug, Clone, PartialEq)]
pub struct CommuterMarginals<F> {
    /// Outward-commuter total per home region.
    pub c: Vec<F>,
    /// Population per region.
    pub n: Vec<F>,
}

impl<F: Float> CommuterMarginals<F> {
    /// Proportional model: c_i = C * n_i / N.
    pub fn uniform(total_commuters: F, populations: Vec<F>) -> Self {
        let total_pop = populations.iter().fold(F::zero(), |a, &b| a + b);
        let c = populations
            .iter()
            .map(|&n| total_commuters * n / total_pop)
            .collect();
        CommuterMarginals { c, n: populations }
    }

    /// Marginals read off a reference matrix's row sums, respecting the
    /// commuting mode (external drops the diagonal first).
    pub fn from_matrix(m: &FlowMatrix<F>, mode: CommutingMode, populations: Vec<F>) -> Self {
        let base = match mode {
            CommutingMode::All => m.clone(),
            CommutingMode::External => m.zero_diagonal(),
        };
        let c = (0..base.k()).map(|i| base.row_sum(i)).collect();
        CommuterMarginals { c, n: populations }
    }

    pub fn total_commuters(&self) -> F {
        self.c.iter().fold(F::zero(), |a, &b| a + b)
    }
}

/// Count matrix from hard assignments: entry (i, j) is the number of users
/// with home i and work j.
pub fn flows_from_hard<F: Float>(
    assignments: &[HardAssignment],
    rs: &RegionSet,
) -> Result<FlowMatrix<F>, FlowError> {
    let mut m = FlowMatrix::from_region_set(rs, Provenance::TwitterHard);
    for a in assignments {
        let i = rs
            .index_of(&a.home)
            .ok_or_else(|| FlowError::UnknownRegion(a.home.clone()))?;
        let j = rs
            .index_of(&a.work)
            .ok_or_else(|| FlowError::UnknownRegion(a.work.clone()))?;
        m.add(i, j, F::one());
    }
    Ok(m)
}

/// Mean of per-user location matrices (outer products h w^T); total mass 1.
pub fn flows_from_soft<F: Float>(
    assignments: &[SoftAssignment],
    rs: &RegionSet,
) -> Result<FlowMatrix<F>, FlowError> {
    if assignments.is_empty() {
        return Err(FlowError::NoUsers);
    }
    let mut m = FlowMatrix::from_region_set(rs, Provenance::TwitterSoft);
    for sa in assignments {
        for (home_id, hw) in &sa.home {
            let i = rs
                .index_of(home_id)
                .ok_or_else(|| FlowError::UnknownRegion(home_id.clone()))?;
            let hw = F::from(*hw).unwrap();
            for (work_id, ww) in &sa.work {
                let j = rs
                    .index_of(work_id)
                    .ok_or_else(|| FlowError::UnknownRegion(work_id.clone()))?;
                m.add(i, j, hw * F::from(*ww).unwrap());
            }
        }
    }
    m.scale(F::one() / F::from(assignments.len()).unwrap());
    Ok(m)
}

/// Rescale each nonzero row to sum to c_i. In external mode the diagonal is
/// zeroed first. All-zero rows stay zero and are returned as diagnostics.
pub fn normalize_rows<F: Float>(
    m: &FlowMatrix<F>,
    marginals: &CommuterMarginals<F>,
    mode: CommutingMode,
) -> Result<(FlowMatrix<F>, Vec<usize>), FlowError> {
    let mut out = match mode {
        CommutingMode::All => m.clone(),
        CommutingMode::External => m.zero_diagonal(),
    };
    let k = out.k();
    let mut zero_rows = Vec::new();
    for i in 0..k {
        let c_i = marginals.c[i];
        if c_i < F::zero() {
            return Err(FlowError::NegativeMarginal(out.ids[i].clone()));
        }
        let sum = out.row_sum(i);
        if sum > F::zero() {
            let factor = c_i / sum;
            for j in 0..k {
                let v = out.get(i, j);
                out.set(i, j, v * factor);
            }
        } else {
            zero_rows.push(i);
        }
    }
    Ok((out, zero_rows))
}

// --- OD CSV format -------------------------------------------------------

/// Triplet CSV: a provenance comment, a header, then `home_id,work_id,value`
/// rows with zero entries omitted.
pub fn write_od_csv<F: Float + fmt::Display, W: Write>(
    mut w: W,
    m: &FlowMatrix<F>,
) -> Result<(), FlowError> {
    writeln!(w, "# provenance: {}", m.provenance)?;
    writeln!(w, "home_id,work_id,value")?;
    let k = m.k();
    for i in 0..k {
        for j in 0..k {
            let v = m.get(i, j);
            if v != F::zero() {
                writeln!(w, "{},{},{}", m.ids[i], m.ids[j], v)?;
            }
        }
    }
    Ok(())
}

pub fn read_od_csv<F: Float, R: BufRead>(
    reader: R,
    rs: &RegionSet,
) -> Result<FlowMatrix<F>, FlowError> {
    let mut m = FlowMatrix::from_region_set(rs, Provenance::Census);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line == "home_id,work_id,value" {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(p) = rest.trim().strip_prefix("provenance:") {
                if let Ok(prov) = p.trim().parse() {
                    m.provenance = prov;
                }
            }
            continue;
        }
        let mut parts = line.split(',');
        let bad = |reason: &str| FlowError::BadCsv {
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let home = parts.next().ok_or_else(|| bad("missing home_id"))?;
        let work = parts.next().ok_or_else(|| bad("missing work_id"))?;
        let value: f64 = parts
            .next()
            .ok_or_else(|| bad("missing value"))?
            .parse()
            .map_err(|_| bad("unparseable value"))?;
        let i = rs
            .index_of(home)
            .ok_or_else(|| FlowError::UnknownRegion(home.to_string()))?;
        let j = rs
            .index_of(work)
            .ok_or_else(|| FlowError::UnknownRegion(work.to_string()))?;
        m.add(i, j, F::from(value).unwrap());
    }
    Ok(m)
}
