//! UK civil time: UTC plus British Summer Time when in force.
//!
//! BST runs from 01:00 UTC on the last Sunday of March to 01:00 UTC on the
//! last Sunday of October. Hour-of-day binning and weekday/weekend
//! classification both follow the civil clock.

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Utc, Weekday};
use serde::{Deserialize, Serialize};

/// Weekday (Mon-Fri) vs weekend (Sat-Sun) by the local civil date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayClass {
    Weekday,
    Weekend,
}

impl DayClass {
    pub const ALL: [DayClass; 2] = [DayClass::Weekday, DayClass::Weekend];

    pub fn index(self) -> usize {
        match self {
            DayClass::Weekday => 0,
            DayClass::Weekend => 1,
        }
    }
}

fn last_sunday(year: i32, month: u32) -> NaiveDate {
    let last_day = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1).unwrap()
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1).unwrap()
    }
    .pred_opt()
    .unwrap();
    let back = last_day.weekday().num_days_from_sunday();
    last_day - Duration::days(back as i64)
}

/// Offset of UK civil time from UTC, in hours (0 in winter, 1 under BST).
pub fn uk_offset_hours(t: DateTime<Utc>) -> i64 {
    let year = t.year();
    let start = last_sunday(year, 3).and_hms_opt(1, 0, 0).unwrap().and_utc();
    let end = last_sunday(year, 10).and_hms_opt(1, 0, 0).unwrap().and_utc();
    if t >= start && t < end {
        1
    } else {
        0
    }
}

/// UTC instant -> naive UK civil datetime.
pub fn to_civil(t: DateTime<Utc>) -> NaiveDateTime {
    (t + Duration::hours(uk_offset_hours(t))).naive_utc()
}

/// Naive UK civil datetime -> UTC instant. During the spring-forward gap or
/// the autumn fold the BST interpretation wins.
pub fn from_civil(civil: NaiveDateTime) -> DateTime<Utc> {
    for offset in [1i64, 0] {
        let candidate = (civil - Duration::hours(offset)).and_utc();
        if uk_offset_hours(candidate) == offset {
            return candidate;
        }
    }
    civil.and_utc()
}

/// Civil hour-of-day (0..24) and day-class of a UTC instant.
pub fn civil_bin(t: DateTime<Utc>) -> (u32, DayClass) {
    let civil = to_civil(t);
    let class = match civil.weekday() {
        Weekday::Sat | Weekday::Sun => DayClass::Weekend,
        _ => DayClass::Weekday,
    };
    (civil.hour(), class)
}
