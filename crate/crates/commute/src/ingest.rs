//! Event-stream parsing, user filtering, and per-user per-region
//! aggregation.
//!
//! Input is JSON Lines, one event per line. Malformed lines are tallied and
//! skipped; only an unreadable source is fatal. Aggregation merges are
//! associative and commutative so any partitioning of the stream yields the
//! same profiles.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::civil::{civil_bin, DayClass};
use crate::geo::{resolve_event_location, BoundingBox, EventLocation, GeoPoint, PlaceType, RegionSet};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read event stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt profile cache at line {line}: {reason}")]
    BadCache { line: usize, reason: String },
}

/// One geotagged event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub user_id: String,
    pub ts: DateTime<Utc>,
    pub location: EventLocation,
}

#[derive(Deserialize)]
struct RawPoint {
    lon: f64,
    lat: f64,
}

#[derive(Deserialize)]
struct RawPlace {
    bbox: [f64; 4],
    #[serde(rename = "type")]
    place_type: PlaceType,
}

#[derive(Deserialize)]
struct RawEvent {
    user_id: Option<String>,
    ts: Option<String>,
    point: Option<RawPoint>,
    place: Option<RawPlace>,
}

/// Parse a single JSON Lines event. Any schema violation (missing fields,
/// bad timestamp, zero or two location variants) is a per-line error.
pub fn parse_event_line(line: &str) -> Result<EventRecord, String> {
    let raw: RawEvent = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let user_id = match raw.user_id {
        Some(u) if !u.is_empty() => u,
        _ => return Err("missing user_id".into()),
    };
    let ts = raw
        .ts
        .ok_or_else(|| "missing ts".to_string())?
        .parse::<DateTime<Utc>>()
        .map_err(|e| format!("bad ts: {e}"))?;
    let location = match (raw.point, raw.place) {
        (Some(p), None) => EventLocation::Point(GeoPoint::new(p.lon, p.lat)),
        (None, Some(pl)) => {
            let [west, south, east, north] = pl.bbox;
            if west > east || south > north {
                return Err("inverted bbox".into());
            }
            EventLocation::Place(BoundingBox {
                west,
                south,
                east,
                north,
                place_type: pl.place_type,
            })
        }
        (Some(_), Some(_)) => return Err("both point and place present".into()),
        (None, None) => return Err("no location".into()),
    };
    Ok(EventRecord { user_id, ts, location })
}

/// Outcome counters for a parse pass.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ParseTally {
    pub lines: u64,
    pub parsed: u64,
    pub parse_errors: u64,
}

/// Parse every line of the stream; malformed lines are counted, never fatal.
pub fn parse_events<R: BufRead>(reader: R) -> Result<(Vec<EventRecord>, ParseTally), IngestError> {
    let mut events = Vec::new();
    let mut tally = ParseTally::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        tally.lines += 1;
        match parse_event_line(&line) {
            Ok(ev) => {
                tally.parsed += 1;
                events.push(ev);
            }
            Err(_) => tally.parse_errors += 1,
        }
    }
    Ok((events, tally))
}

/// Count and first/last timestamp for one (day-class, hour) bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub count: u64,
    pub first: Option<DateTime<Utc>>,
    pub last: Option<DateTime<Utc>>,
}

impl BinStat {
    fn add(&mut self, ts: DateTime<Utc>) {
        self.count += 1;
        self.first = Some(self.first.map_or(ts, |f| f.min(ts)));
        self.last = Some(self.last.map_or(ts, |l| l.max(ts)));
    }

    fn merge(&mut self, other: &BinStat) {
        self.count += other.count;
        self.first = match (self.first, other.first) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.last = match (self.last, other.last) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }
}

/// Aggregate tweet statistics for one user in one region, with hourly
/// detail split by weekday/weekend (UK civil time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionVisit {
    pub tweet_count: u64,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub hourly: [[BinStat; 24]; 2],
}

impl RegionVisit {
    fn new(ts: DateTime<Utc>, hour: u32, class: DayClass) -> Self {
        let mut v = RegionVisit {
            tweet_count: 0,
            first_seen: ts,
            last_seen: ts,
            hourly: Default::default(),
        };
        v.record(ts, hour, class);
        v
    }

    fn record(&mut self, ts: DateTime<Utc>, hour: u32, class: DayClass) {
        self.tweet_count += 1;
        self.first_seen = self.first_seen.min(ts);
        self.last_seen = self.last_seen.max(ts);
        self.hourly[class.index()][hour as usize].add(ts);
    }

    pub fn merge(&mut self, other: &RegionVisit) {
        self.tweet_count += other.tweet_count;
        self.first_seen = self.first_seen.min(other.first_seen);
        self.last_seen = self.last_seen.max(other.last_seen);
        for c in 0..2 {
            for h in 0..24 {
                self.hourly[c][h].merge(&other.hourly[c][h]);
            }
        }
    }

    pub fn span(&self) -> Duration {
        self.last_seen - self.first_seen
    }
}

/// All assigned activity for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub visits: BTreeMap<String, RegionVisit>,
    pub total_assigned: u64,
}

impl UserProfile {
    /// Visited regions ordered by (count desc, first_seen asc, id asc);
    /// the same ordering the assignment heuristics use.
    pub fn regions_by_count(&self) -> Vec<(&str, &RegionVisit)> {
        let mut v: Vec<(&str, &RegionVisit)> =
            self.visits.iter().map(|(id, rv)| (id.as_str(), rv)).collect();
        v.sort_by(|a, b| {
            b.1.tweet_count
                .cmp(&a.1.tweet_count)
                .then(a.1.first_seen.cmp(&b.1.first_seen))
                .then(a.0.cmp(b.0))
        });
        v
    }
}

/// Counters for profile building.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BuildTally {
    pub assigned: u64,
    pub dropped: u64,
}

/// Resolve each event to a region and fold it into its user's profile.
/// Unresolvable events are dropped and tallied.
pub fn build_profiles<I>(events: I, rs: &RegionSet) -> (BTreeMap<String, UserProfile>, BuildTally)
where
    I: IntoIterator<Item = EventRecord>,
{
    let mut profiles: BTreeMap<String, UserProfile> = BTreeMap::new();
    let mut tally = BuildTally::default();
    for ev in events {
        let Some(region) = resolve_event_location(&ev.location, rs) else {
            tally.dropped += 1;
            continue;
        };
        tally.assigned += 1;
        let (hour, class) = civil_bin(ev.ts);
        let profile = profiles.entry(ev.user_id.clone()).or_insert_with(|| UserProfile {
            user_id: ev.user_id.clone(),
            visits: BTreeMap::new(),
            total_assigned: 0,
        });
        profile.total_assigned += 1;
        profile
            .visits
            .entry(region)
            .and_modify(|v| v.record(ev.ts, hour, class))
            .or_insert_with(|| RegionVisit::new(ev.ts, hour, class));
    }
    (profiles, tally)
}

/// Keep a user iff they have at least `min_tweets` assigned tweets and each
/// of their two most-tweeted regions (the candidate home and work) spans at
/// least `min_span_days`. A single-region user needs only that region to
/// satisfy the span.
pub fn filter_users(
    profiles: BTreeMap<String, UserProfile>,
    min_tweets: u64,
    min_span_days: i64,
) -> BTreeMap<String, UserProfile> {
    let min_span = Duration::days(min_span_days);
    profiles
        .into_iter()
        .filter(|(_, p)| {
            if p.total_assigned < min_tweets {
                return false;
            }
            let ranked = p.regions_by_count();
            ranked.iter().take(2).all(|(_, v)| v.span() >= min_span)
        })
        .collect()
}

// --- Profile cache -----------------------------------------------------

/// Write profiles as JSON Lines, one user per line, in user-id order.
pub fn write_profiles<W: Write>(
    mut w: W,
    profiles: &BTreeMap<String, UserProfile>,
) -> Result<(), IngestError> {
    for profile in profiles.values() {
        serde_json::to_writer(&mut w, profile)
            .map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_profiles<R: BufRead>(reader: R) -> Result<BTreeMap<String, UserProfile>, IngestError> {
    let mut profiles = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let profile: UserProfile = serde_json::from_str(&line).map_err(|e| IngestError::BadCache {
            line: i + 1,
            reason: e.to_string(),
        })?;
        profiles.insert(profile.user_id.clone(), profile);
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Region, RegionSet};

    fn two_region_set() -> RegionSet {
        let sq = |id: &str, x0: f64| {
            Region::new(
                id.into(),
                id.into(),
                vec![vec![
                    (x0, 0.0),
                    (x0 + 1.0, 0.0),
                    (x0 + 1.0, 1.0),
                    (x0, 1.0),
                    (x0, 0.0),
                ]],
                10,
                None,
            )
            .unwrap()
        };
        RegionSet::new(vec![sq("A", 0.0), sq("B", 2.0)]).unwrap()
    }

    fn point_line(user: &str, ts: &str, lon: f64, lat: f64) -> String {
        format!(r#"{{"user_id":"{user}","ts":"{ts}","point":{{"lon":{lon},"lat":{lat}}}}}"#)
    }

    #[test]
    fn parses_valid_point_line() {
        let ev = parse_event_line(&point_line("u1", "2015-01-05T12:00:00Z", 0.5, 0.5)).unwrap();
        assert_eq!(ev.user_id, "u1");
    }

    #[test]
    fn missing_user_id_is_tallied() {
        let input = format!(
            "{}\n{}\n",
            r#"{"ts":"2015-01-05T12:00:00Z","point":{"lon":0.5,"lat":0.5}}"#,
            point_line("u1", "2015-01-05T12:00:00Z", 0.5, 0.5)
        );
        let (events, tally) = parse_events(input.as_bytes()).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(tally.parse_errors, 1);
        assert_eq!(tally.lines, 2);
    }

    #[test]
    fn ambiguous_location_is_rejected() {
        let line = r#"{"user_id":"u","ts":"2015-01-05T12:00:00Z","point":{"lon":0.5,"lat":0.5},"place":{"bbox":[0,0,1,1],"type":"city"}}"#;
        assert!(parse_event_line(line).is_err());
    }

    #[test]
    fn builds_per_user_counts() {
        let rs = two_region_set();
        let mut events = Vec::new();
        for day in [5, 6, 7] {
            events.push(
                parse_event_line(&point_line("u1", &format!("2015-01-0{day}T12:00:00Z"), 0.5, 0.5))
                    .unwrap(),
            );
        }
        let (profiles, tally) = build_profiles(events, &rs);
        assert_eq!(tally.assigned, 3);
        assert_eq!(profiles["u1"].visits["A"].tweet_count, 3);
        assert_eq!(profiles["u1"].total_assigned, 3);
    }

    #[test]
    fn country_box_event_is_dropped() {
        let rs = two_region_set();
        let line = r#"{"user_id":"u","ts":"2015-01-05T12:00:00Z","place":{"bbox":[0,0,3,1],"type":"country"}}"#;
        let ev = parse_event_line(line).unwrap();
        let (profiles, tally) = build_profiles(vec![ev], &rs);
        assert!(profiles.is_empty());
        assert_eq!(tally.dropped, 1);
    }

    #[test]
    fn interleaved_users_stay_independent() {
        let rs = two_region_set();
        let mut events = Vec::new();
        for i in 0..6 {
            let (user, lon) = if i % 2 == 0 { ("u1", 0.5) } else { ("u2", 2.5) };
            events.push(
                parse_event_line(&point_line(
                    user,
                    &format!("2015-01-{:02}T10:00:00Z", 5 + i),
                    lon,
                    0.5,
                ))
                .unwrap(),
            );
        }
        let (profiles, _) = build_profiles(events, &rs);
        assert_eq!(profiles["u1"].visits["A"].tweet_count, 3);
        assert_eq!(profiles["u2"].visits["B"].tweet_count, 3);
    }

    #[test]
    fn profiles_are_order_insensitive() {
        let rs = two_region_set();
        let mut events = Vec::new();
        for i in 0..10 {
            let lon = if i % 3 == 0 { 2.5 } else { 0.5 };
            events.push(
                parse_event_line(&point_line(
                    "u1",
                    &format!("2015-01-{:02}T{:02}:00:00Z", 5 + i, 8 + i),
                    lon,
                    0.5,
                ))
                .unwrap(),
            );
        }
        let (forward, _) = build_profiles(events.clone(), &rs);
        events.reverse();
        let (backward, _) = build_profiles(events, &rs);
        assert_eq!(forward, backward);
    }

    fn profile_with(counts: &[(&str, u64, &str, &str)]) -> UserProfile {
        // (region, count, first, last)
        let mut visits = BTreeMap::new();
        let mut total = 0;
        for &(region, count, first, last) in counts {
            let first: DateTime<Utc> = first.parse().unwrap();
            let last: DateTime<Utc> = last.parse().unwrap();
            let mut v = RegionVisit::new(first, 12, DayClass::Weekday);
            for _ in 1..count {
                v.record(last, 12, DayClass::Weekday);
            }
            total += count;
            visits.insert(region.to_string(), v);
        }
        UserProfile {
            user_id: "u".into(),
            visits,
            total_assigned: total,
        }
    }

    #[test]
    fn filter_enforces_min_tweets() {
        let p = profile_with(&[("A", 4, "2015-01-01T00:00:00Z", "2015-03-01T00:00:00Z")]);
        let kept = filter_users(BTreeMap::from([("u".into(), p)]), 5, 30);
        assert!(kept.is_empty());
    }

    #[test]
    fn filter_keeps_long_span_single_region_user() {
        let p = profile_with(&[("A", 50, "2015-01-01T00:00:00Z", "2015-07-20T00:00:00Z")]);
        let kept = filter_users(BTreeMap::from([("u".into(), p)]), 5, 30);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn filter_requires_span_on_both_top_regions() {
        let p = profile_with(&[
            ("A", 7, "2015-01-01T00:00:00Z", "2015-02-10T00:00:00Z"), // 40 days
            ("B", 3, "2015-01-01T00:00:00Z", "2015-01-03T00:00:00Z"), // 2 days
        ]);
        let kept = filter_users(BTreeMap::from([("u".into(), p)]), 5, 30);
        assert!(kept.is_empty());
    }

    #[test]
    fn filter_is_idempotent() {
        let p = profile_with(&[
            ("A", 7, "2015-01-01T00:00:00Z", "2015-02-10T00:00:00Z"),
            ("B", 5, "2015-01-01T00:00:00Z", "2015-02-20T00:00:00Z"),
            ("C", 1, "2015-01-02T00:00:00Z", "2015-01-02T00:00:00Z"),
        ]);
        let once = filter_users(BTreeMap::from([("u".into(), p)]), 5, 30);
        let twice = filter_users(once.clone(), 5, 30);
        assert_eq!(once, twice);
    }

    #[test]
    fn cache_round_trips() {
        let rs = two_region_set();
        let events: Vec<_> = (0..5)
            .map(|i| {
                parse_event_line(&point_line(
                    "u1",
                    &format!("2015-01-{:02}T12:00:00Z", 5 + i),
                    0.5,
                    0.5,
                ))
                .unwrap()
            })
            .collect();
        let (profiles, _) = build_profiles(events, &rs);
        let mut buf = Vec::new();
        write_profiles(&mut buf, &profiles).unwrap();
        let loaded = read_profiles(buf.as_slice()).unwrap();
        assert_eq!(profiles, loaded);
    }

    #[test]
    fn hourly_counts_sum_to_tweet_count() {
        let rs = two_region_set();
        let events: Vec<_> = (0..7)
            .map(|i| {
                parse_event_line(&point_line(
                    "u1",
                    &format!("2015-01-{:02}T{:02}:00:00Z", 5 + i, 3 * i),
                    0.5,
                    0.5,
                ))
                .unwrap()
            })
            .collect();
        let (profiles, _) = build_profiles(events, &rs);
        let v = &profiles["u1"].visits["A"];
        let sum: u64 = v.hourly.iter().flatten().map(|b| b.count).sum();
        assert_eq!(sum, v.tweet_count);
    }
}
