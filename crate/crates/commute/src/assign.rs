//! Home/work inference per user: the hard frequency heuristic, temporal
//! window variants, and probabilistic soft assignment.

use std::io::Write;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::civil::DayClass;
use crate::ingest::{RegionVisit, UserProfile};

#[derive(Debug, Error)]
pub enum AssignError {
    #[error("user {0} has no visited regions")]
    EmptyVisits(String),
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// A set of civil-time hour ranges, each half-open [start, end), optionally
/// restricted to weekdays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub hours: Vec<(u32, u32)>,
    pub weekdays_only: bool,
}

impl TimeWindow {
    pub fn all_hours() -> Self {
        TimeWindow {
            hours: vec![(0, 24)],
            weekdays_only: false,
        }
    }

    pub fn contains(&self, class: DayClass, hour: u32) -> bool {
        if self.weekdays_only && class == DayClass::Weekend {
            return false;
        }
        self.hours.iter().any(|&(s, e)| hour >= s && hour < e)
    }
}

/// Tweet count and observed span of one region restricted to a window.
pub struct WindowStats {
    pub count: u64,
    pub first: Option<DateTime<Utc>>,
    pub last: Option<DateTime<Utc>>,
}

pub fn window_stats(visit: &RegionVisit, window: &TimeWindow) -> WindowStats {
    let mut stats = WindowStats {
        count: 0,
        first: None,
        last: None,
    };
    for class in DayClass::ALL {
        for hour in 0..24u32 {
            if !window.contains(class, hour) {
                continue;
            }
            let bin = &visit.hourly[class.index()][hour as usize];
            stats.count += bin.count;
            stats.first = match (stats.first, bin.first) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            stats.last = match (stats.last, bin.last) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
        }
    }
    stats
}

impl WindowStats {
    pub fn span_at_least(&self, min: Duration) -> bool {
        match (self.first, self.last) {
            (Some(f), Some(l)) => l - f >= min,
            _ => false,
        }
    }
}

/// Named window presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowPreset {
    /// Work 09:00-17:00, home the complement of the working day.
    Workday,
    /// Work 10:00-15:00, home 20:00-23:00.
    Restricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentMode {
    Hard,
    TemporalHard,
    TemporalSoft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPolicy {
    pub mode: AssignmentMode,
    /// Threshold for the single-region rule in hard mode, in [0, 1].
    pub lambda: f64,
    pub home_window: TimeWindow,
    pub work_window: TimeWindow,
    /// Minimum first-to-last span a candidate region must cover inside its
    /// window, in days.
    pub min_span_days: i64,
}

impl AssignmentPolicy {
    pub fn hard(lambda: f64) -> Self {
        AssignmentPolicy {
            mode: AssignmentMode::Hard,
            lambda,
            home_window: TimeWindow::all_hours(),
            work_window: TimeWindow::all_hours(),
            min_span_days: 30,
        }
    }

    /// Temporal policy from a preset. The weekday restriction applies to
    /// the work window only; the home window keeps all days.
    pub fn temporal(mode: AssignmentMode, preset: WindowPreset, weekdays_only_work: bool) -> Self {
        let (home_hours, work_hours) = match preset {
            WindowPreset::Workday => (vec![(0u32, 9u32), (17, 24)], vec![(9u32, 17u32)]),
            WindowPreset::Restricted => (vec![(20, 23)], vec![(10, 15)]),
        };
        AssignmentPolicy {
            mode,
            lambda: 0.0,
            home_window: TimeWindow {
                hours: home_hours,
                weekdays_only: false,
            },
            work_window: TimeWindow {
                hours: work_hours,
                weekdays_only: weekdays_only_work,
            },
            min_span_days: 30,
        }
    }
}

/// A user pinned to one home and one work region (possibly the same).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAssignment {
    pub user_id: String,
    pub home: String,
    pub work: String,
}

/// Normalized home and work location distributions, sparse over region ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    pub user_id: String,
    pub home: Vec<(String, f64)>,
    pub work: Vec<(String, f64)>,
}

/// Frequency heuristic: the most-tweeted region is home; if its share of
/// assigned tweets strictly exceeds `lambda` the user is an internal
/// commuter, otherwise the runner-up region is work. Ties break by earlier
/// first_seen, then region id.
pub fn assign_hard(profile: &UserProfile, lambda: f64) -> Result<HardAssignment, AssignError> {
    let ranked = profile.regions_by_count();
    let (top_id, top) = *ranked
        .first()
        .ok_or_else(|| AssignError::EmptyVisits(profile.user_id.clone()))?;
    let share = top.tweet_count as f64 / profile.total_assigned as f64;
    let work = if ranked.len() == 1 || share > lambda {
        top_id
    } else {
        ranked[1].0
    };
    Ok(HardAssignment {
        user_id: profile.user_id.clone(),
        home: top_id.to_string(),
        work: work.to_string(),
    })
}

/// Best-qualifying region inside a window: highest windowed count with a
/// span of at least `min_span`, ties broken by (earlier windowed
/// first_seen, region id).
fn window_argmax<'a>(
    profile: &'a UserProfile,
    window: &TimeWindow,
    min_span: Duration,
) -> Option<&'a str> {
    let mut best: Option<(&str, u64, DateTime<Utc>)> = None;
    for (id, visit) in &profile.visits {
        let stats = window_stats(visit, window);
        if stats.count == 0 || !stats.span_at_least(min_span) {
            continue;
        }
        let first = stats.first.unwrap();
        let better = match best {
            None => true,
            Some((bid, bcount, bfirst)) => {
                (stats.count, std::cmp::Reverse(first), std::cmp::Reverse(id.as_str()))
                    > (bcount, std::cmp::Reverse(bfirst), std::cmp::Reverse(bid))
            }
        };
        if better {
            best = Some((id, stats.count, first));
        }
    }
    best.map(|(id, _, _)| id)
}

/// Temporal hard assignment: argmax within the home and work windows, each
/// candidate required to span `min_span_days` inside its own window. Users
/// with no qualifying region in either window are discarded.
pub fn assign_temporal_hard(
    profile: &UserProfile,
    policy: &AssignmentPolicy,
) -> Option<HardAssignment> {
    let min_span = Duration::days(policy.min_span_days);
    let home = window_argmax(profile, &policy.home_window, min_span)?;
    let work = window_argmax(profile, &policy.work_window, min_span)?;
    Some(HardAssignment {
        user_id: profile.user_id.clone(),
        home: home.to_string(),
        work: work.to_string(),
    })
}

fn window_distribution(
    profile: &UserProfile,
    window: &TimeWindow,
    min_span: Duration,
) -> Vec<(String, f64)> {
    let mut entries: Vec<(String, f64)> = Vec::new();
    let mut total = 0u64;
    for (id, visit) in &profile.visits {
        let stats = window_stats(visit, window);
        if stats.count == 0 || !stats.span_at_least(min_span) {
            continue;
        }
        total += stats.count;
        entries.push((id.clone(), stats.count as f64));
    }
    if total > 0 {
        for e in &mut entries {
            e.1 /= total as f64;
        }
    }
    entries
}

/// Soft assignment: window-restricted counts with sub-span entries zeroed,
/// normalized to probability vectors. Users left with an empty home or work
/// vector are discarded.
pub fn assign_soft(profile: &UserProfile, policy: &AssignmentPolicy) -> Option<SoftAssignment> {
    let min_span = Duration::days(policy.min_span_days);
    let home = window_distribution(profile, &policy.home_window, min_span);
    let work = window_distribution(profile, &policy.work_window, min_span);
    if home.is_empty() || work.is_empty() {
        return None;
    }
    Some(SoftAssignment {
        user_id: profile.user_id.clone(),
        home,
        work,
    })
}

/// Outer product h w^T as a K x K matrix; entries sum to 1.
pub fn location_matrix(
    sa: &SoftAssignment,
    rs: &crate::geo::RegionSet,
) -> Result<crate::flow::FlowMatrix<f64>, crate::flow::FlowError> {
    crate::flow::flows_from_soft(std::slice::from_ref(sa), rs)
}

// --- Assignment dumps ----------------------------------------------------

pub fn write_hard_assignments<W: Write>(
    mut w: W,
    assignments: &[HardAssignment],
) -> Result<(), AssignError> {
    writeln!(w, "user_id,home_region,work_region")?;
    for a in assignments {
        writeln!(w, "{},{},{}", a.user_id, a.home, a.work)?;
    }
    Ok(())
}

pub fn write_soft_assignments<W: Write>(
    mut w: W,
    assignments: &[SoftAssignment],
) -> Result<(), AssignError> {
    writeln!(w, "user_id,region,weight,channel")?;
    for a in assignments {
        for (region, weight) in &a.home {
            writeln!(w, "{},{},{},home", a.user_id, region, weight)?;
        }
        for (region, weight) in &a.work {
            writeln!(w, "{},{},{},work", a.user_id, region, weight)?;
        }
    }
    Ok(())
}
