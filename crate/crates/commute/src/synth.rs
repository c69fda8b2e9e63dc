//! Synthetic ground-truth generator: a grid world with known commuting
//! flows and an event stream shaped to exercise the whole pipeline.
//!
//! Destination choice in the truth uses an exponential distance-decay
//! kernel, deliberately unlike the radiation model, so the baselines are an
//! imperfect fit by construction. All randomness flows from `seed`: the
//! world generator draws with stream `seed`, the event generator with
//! stream `seed + 1`, each in documented per-user order.

use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::civil::from_civil;
use crate::flow::{CommuterMarginals, FlowMatrix, Provenance};
use crate::geo::{GeoPoint, Region, RegionSet, KM_PER_DEG};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("region construction failed: {0}")]
    Geo(#[from] crate::geo::GeoError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_km: f64,
    pub population_range: (u64, u64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommuterSpec {
    pub num_users: usize,
    /// Probability a user lives and works in the same region.
    pub internal_fraction: f64,
    /// Decay length of the destination-choice kernel, km.
    pub decay_km: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TweetSpec {
    pub tweets_per_user: (u64, u64),
    /// Share of a commuter's non-noise tweets sent from home.
    pub home_share: f64,
    /// First civil date of the observation window (ISO date).
    pub start_date: NaiveDate,
    pub span_days: u32,
    /// Guarantee every non-wanderer user passes the default ingest filters
    /// (>= 30-day span in both home and work tweet sets).
    pub filter_compatible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-tweet probability of relocation to a uniform random region and
    /// uniform random time.
    pub tweet_share: f64,
    /// Share of users whose entire stream is uniform noise ("wanderers");
    /// they still commute in the truth matrix.
    pub wanderer_share: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub commuters: CommuterSpec,
    pub tweets: TweetSpec,
    pub noise: NoiseSpec,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::InvalidConfig(msg.into()));
        if self.grid.rows == 0 || self.grid.cols == 0 || self.grid.rows * self.grid.cols < 2 {
            return bad("grid must contain at least 2 cells");
        }
        if self.grid.cell_km <= 0.0 {
            return bad("cell_km must be positive");
        }
        if self.grid.population_range.0 == 0 || self.grid.population_range.0 > self.grid.population_range.1 {
            return bad("population_range must be a non-empty positive range");
        }
        for (name, v) in [
            ("internal_fraction", self.commuters.internal_fraction),
            ("home_share", self.tweets.home_share),
            ("tweet_share", self.noise.tweet_share),
            ("wanderer_share", self.noise.wanderer_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.commuters.decay_km <= 0.0 {
            return bad("decay_km must be positive");
        }
        let (lo, hi) = self.tweets.tweets_per_user;
        if lo == 0 || lo > hi {
            return bad("tweets_per_user must be a non-empty positive range");
        }
        if self.tweets.filter_compatible {
            if self.tweets.span_days < 45 {
                return bad("filter-compatible generation needs span_days >= 45");
            }
            if lo < 4 || !(0.5..0.9).contains(&self.tweets.home_share) {
                return bad("filter-compatible generation needs >= 4 tweets/user and home_share in [0.5, 0.9)");
            }
        }
        Ok(())
    }
}

/// The generated world: regions, the exact commuting truth, and marginals.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub regions: RegionSet,
    pub truth: FlowMatrix<f64>,
    pub marginals: CommuterMarginals<f64>,
    /// True home/work region index per user.
    pub homes: Vec<usize>,
    pub works: Vec<usize>,
}

/// Build the grid world and draw every user's true home (population
/// weighted) and work (exponential distance decay, or home with the
/// internal fraction).
pub fn generate_world(config: &SynthConfig) -> Result<SynthWorld, SynthError> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let cell_deg = config.grid.cell_km / KM_PER_DEG;
    let mut regions = Vec::new();
    for row in 0..config.grid.rows {
        for col in 0..config.grid.cols {
            let idx = row * config.grid.cols + col;
            let x0 = col as f64 * cell_deg;
            let y0 = row as f64 * cell_deg;
            let population =
                rng.gen_range(config.grid.population_range.0..=config.grid.population_range.1);
            regions.push(Region::new(
                format!("g{idx:03}"),
                format!("cell {row},{col}"),
                vec![vec![
                    (x0, y0),
                    (x0 + cell_deg, y0),
                    (x0 + cell_deg, y0 + cell_deg),
                    (x0, y0 + cell_deg),
                    (x0, y0),
                ]],
                population,
                Some(GeoPoint::new(x0 + cell_deg / 2.0, y0 + cell_deg / 2.0)),
            )?);
        }
    }
    let rs = RegionSet::new(regions)?;
    let k = rs.len();
    let populations = rs.populations();
    let distances = rs.centroid_distances_km();

    let home_weights = WeightedIndex::new(&populations)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let mut truth = FlowMatrix::from_region_set(&rs, Provenance::SyntheticTruth);
    let mut homes = Vec::with_capacity(config.commuters.num_users);
    let mut works = Vec::with_capacity(config.commuters.num_users);
    for _ in 0..config.commuters.num_users {
        let home = home_weights.sample(&mut rng);
        let work = if rng.gen_bool(config.commuters.internal_fraction) {
            home
        } else {
            let weights: Vec<f64> = (0..k)
                .map(|j| {
                    if j == home {
                        0.0
                    } else {
                        (-distances[home][j] / config.commuters.decay_km).exp()
                    }
                })
                .collect();
            WeightedIndex::new(&weights)
                .map_err(|e| SynthError::InvalidConfig(e.to_string()))?
                .sample(&mut rng)
        };
        truth.add(home, work, 1.0);
        homes.push(home);
        works.push(work);
    }
    let c = (0..k).map(|i| truth.row_sum(i)).collect();
    Ok(SynthWorld {
        regions: rs,
        truth,
        marginals: CommuterMarginals { c, n: populations },
        homes,
        works,
    })
}

/// Weekday offsets (days from start) available for work tweets.
fn weekday_offsets(start: NaiveDate, span_days: u32) -> Vec<u32> {
    (0..span_days)
        .filter(|&d| {
            !matches!(
                (start + Duration::days(d as i64)).weekday(),
                chrono::Weekday::Sat | chrono::Weekday::Sun
            )
        })
        .collect()
}

fn evenly_spaced(count: u64, pool: &[u32]) -> Vec<u32> {
    // First and last pool entries are always included so spans are maximal.
    let n = pool.len() as u64;
    (0..count)
        .map(|i| {
            let pos = if count == 1 {
                0
            } else {
                (i * (n - 1) + (count - 1) / 2) / (count - 1)
            };
            pool[pos as usize]
        })
        .collect()
}

struct TweetSink<'a, W: Write> {
    out: &'a mut W,
    lines: u64,
}

impl<W: Write> TweetSink<'_, W> {
    fn emit(
        &mut self,
        user: usize,
        region: &Region,
        day: NaiveDate,
        hour: u32,
        rng: &mut impl Rng,
    ) -> Result<(), SynthError> {
        let civil = day
            .and_hms_opt(hour, rng.gen_range(0..60), rng.gen_range(0..60))
            .unwrap();
        let ts = from_civil(civil).format("%Y-%m-%dT%H:%M:%SZ");
        let (w, s, e, n) = region.bbox();
        let lon = rng.gen_range(w..e);
        let lat = rng.gen_range(s..n);
        writeln!(
            self.out,
            r#"{{"user_id":"u{user:06}","ts":"{ts}","point":{{"lon":{lon},"lat":{lat}}}}}"#
        )?;
        self.lines += 1;
        Ok(())
    }
}

/// Write the JSON Lines event stream for a generated world. Home tweets
/// land in evening hours (20:00-22:59) on any day, work tweets on weekdays
/// 10:00-14:59, noise anywhere anytime. Returns the number of lines.
pub fn generate_events<W: Write>(
    world: &SynthWorld,
    config: &SynthConfig,
    out: &mut W,
) -> Result<u64, SynthError> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(1));
    let start = config.tweets.start_date;
    let span = config.tweets.span_days;
    let weekdays = weekday_offsets(start, span);
    if weekdays.len() < 2 {
        return Err(SynthError::InvalidConfig(
            "observation window contains fewer than 2 weekdays".into(),
        ));
    }
    let all_days: Vec<u32> = (0..span).collect();
    let k = world.regions.len();
    let mut sink = TweetSink { out, lines: 0 };

    for user in 0..config.commuters.num_users {
        let n_tweets = rng.gen_range(config.tweets.tweets_per_user.0..=config.tweets.tweets_per_user.1);
        let wanderer = rng.gen_bool(config.noise.wanderer_share);
        if wanderer {
            for _ in 0..n_tweets {
                let region = world.regions.region(rng.gen_range(0..k));
                let day = start + Duration::days(rng.gen_range(0..span) as i64);
                let hour = rng.gen_range(0..24);
                sink.emit(user, region, day, hour, &mut rng)?;
            }
            continue;
        }
        // Home tweets strictly outnumber work tweets and, with home_share
        // < 0.9, stay at or below a 0.9 share of the total.
        let home_count = ((config.tweets.home_share * n_tweets as f64).ceil() as u64)
            .clamp(1, n_tweets);
        let work_count = n_tweets - home_count;
        let home_days = evenly_spaced(home_count, &all_days);
        let work_days = evenly_spaced(work_count, &weekdays);
        let home_region = world.regions.region(world.homes[user]);
        let work_region = world.regions.region(world.works[user]);
        for (days, region, hours) in [
            (&home_days, home_region, 20..23u32),
            (&work_days, work_region, 10..15u32),
        ] {
            for &day_offset in days {
                let noise = config.noise.tweet_share > 0.0 && rng.gen_bool(config.noise.tweet_share);
                if noise {
                    let region = world.regions.region(rng.gen_range(0..k));
                    let day = start + Duration::days(rng.gen_range(0..span) as i64);
                    let hour = rng.gen_range(0..24);
                    sink.emit(user, region, day, hour, &mut rng)?;
                } else {
                    let day = start + Duration::days(day_offset as i64);
                    let hour = rng.gen_range(hours.clone());
                    sink.emit(user, region, day, hour, &mut rng)?;
                }
            }
        }
    }
    Ok(sink.lines)
}

/// Write the world's regions as the GeoJSON FeatureCollection the geo
/// module consumes.
pub fn write_regions_geojson<W: Write>(rs: &RegionSet, out: &mut W) -> Result<(), SynthError> {
    writeln!(out, "{{\"type\":\"FeatureCollection\",\"features\":[")?;
    let k = rs.len();
    for (i, region) in rs.regions().iter().enumerate() {
        let ring = &region.rings[0];
        let coords: Vec<String> = ring.iter().map(|(x, y)| format!("[{x},{y}]")).collect();
        write!(
            out,
            "{{\"type\":\"Feature\",\"properties\":{{\"region_id\":\"{}\",\"name\":\"{}\",\"population\":{},\"centroid\":[{},{}]}},\"geometry\":{{\"type\":\"Polygon\",\"coordinates\":[[{}]]}}}}",
            region.id,
            region.name,
            region.population,
            region.centroid.lon,
            region.centroid.lat,
            coords.join(",")
        )?;
        writeln!(out, "{}", if i + 1 < k { "," } else { "" })?;
    }
    writeln!(out, "]}}")?;
    Ok(())
}

/// A small default world for tests and examples.
pub fn default_config(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        grid: GridSpec {
            rows: 7,
            cols: 7,
            cell_km: 10.0,
            population_range: (5_000, 100_000),
        },
        commuters: CommuterSpec {
            num_users: 5_000,
            internal_fraction: 0.3,
            decay_km: 20.0,
        },
        tweets: TweetSpec {
            tweets_per_user: (12, 20),
            home_share: 0.6,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(),
            span_days: 56,
            filter_compatible: true,
        },
        noise: NoiseSpec {
            tweet_share: 0.0,
            wanderer_share: 0.0,
        },
    }
}
