//! Region storage, geometric predicates, and event-to-region resolution.
//!
//! Regions are loaded from a GeoJSON FeatureCollection and held in a
//! [`RegionSet`] with a fixed id -> matrix-index mapping. Containment uses
//! the even-odd (crossing number) rule with a half-open edge convention so
//! a point on a shared border belongs to exactly one region.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

/// Mean Earth radius (IUGG), km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Kilometres per degree of latitude on the sphere.
pub const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("failed to read region file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid region GeoJSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("region {id}: {reason}")]
    InvalidRegion { id: String, reason: String },
    #[error("duplicate region id {0}")]
    DuplicateId(String),
    #[error("region set is empty")]
    Empty,
}

/// A longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Self {
        GeoPoint { lon, lat }
    }
}

/// Place granularity attached to a bounding-box location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceType {
    City,
    Admin,
    Country,
    Other,
}

/// A place bounding box, west/south/east/north in degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, Deserialize)]
pub struct BoundingBox {
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
    pub place_type: PlaceType,
}

impl BoundingBox {
    /// Midpoint of the box in plain lon/lat arithmetic.
    pub fn centroid(&self) -> GeoPoint {
        GeoPoint::new((self.west + self.east) / 2.0, (self.south + self.north) / 2.0)
    }
}

/// One spatial unit: polygon geometry plus census population.
#[derive(Debug, Clone)]
pub struct Region {
    pub id: String,
    pub name: String,
    /// Closed rings (first vertex repeated last), exterior and holes mixed;
    /// containment is even-odd over all rings.
    pub rings: Vec<Vec<(f64, f64)>>,
    pub population: u64,
    pub centroid: GeoPoint,
    bbox: (f64, f64, f64, f64),
}

impl Region {
    pub fn new(
        id: String,
        name: String,
        rings: Vec<Vec<(f64, f64)>>,
        population: u64,
        centroid: Option<GeoPoint>,
    ) -> Result<Self, GeoError> {
        if rings.is_empty() {
            return Err(GeoError::InvalidRegion {
                id,
                reason: "no rings".into(),
            });
        }
        for ring in &rings {
            if ring.len() < 4 {
                return Err(GeoError::InvalidRegion {
                    id,
                    reason: "ring with fewer than 4 vertices".into(),
                });
            }
            if ring.first() != ring.last() {
                return Err(GeoError::InvalidRegion {
                    id,
                    reason: "ring not closed".into(),
                });
            }
        }
        let bbox = rings_bbox(&rings);
        let centroid = centroid.unwrap_or_else(|| planar_centroid(&rings));
        if centroid.lon < bbox.0
            || centroid.lon > bbox.2
            || centroid.lat < bbox.1
            || centroid.lat > bbox.3
        {
            return Err(GeoError::InvalidRegion {
                id,
                reason: "centroid outside polygon bounding box".into(),
            });
        }
        Ok(Region {
            id,
            name,
            rings,
            population,
            centroid,
            bbox,
        })
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.bbox
    }

    /// Even-odd containment over all rings.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let (w, s, e, n) = self.bbox;
        if p.lon < w || p.lon > e || p.lat < s || p.lat > n {
            return false;
        }
        crossing_count(&self.rings, p) % 2 == 1
    }

    /// Planar polygon area converted to km^2 with a cos(lat) stretch for
    /// longitude. Adequate for the small administrative units in scope.
    pub fn area_km2(&self) -> f64 {
        let deg2 = self
            .rings
            .iter()
            .map(|r| signed_ring_area(r))
            .sum::<f64>()
            .abs();
        deg2 * KM_PER_DEG * KM_PER_DEG * self.centroid.lat.to_radians().cos()
    }
}

/// Half-open crossing counter shared by containment and its test oracle:
/// an edge contributes when its endpoints straddle the scan line with the
/// convention (a.lat > p.lat) != (b.lat > p.lat), and the crossing must lie
/// strictly east of the point.
pub fn crossing_count(rings: &[Vec<(f64, f64)>], p: GeoPoint) -> u32 {
    let mut crossings = 0u32;
    for ring in rings {
        for edge in ring.windows(2) {
            let (ax, ay) = edge[0];
            let (bx, by) = edge[1];
            if (ay > p.lat) != (by > p.lat) {
                let x = ax + (p.lat - ay) / (by - ay) * (bx - ax);
                if p.lon < x {
                    crossings += 1;
                }
            }
        }
    }
    crossings
}

fn rings_bbox(rings: &[Vec<(f64, f64)>]) -> (f64, f64, f64, f64) {
    let mut w = f64::INFINITY;
    let mut s = f64::INFINITY;
    let mut e = f64::NEG_INFINITY;
    let mut n = f64::NEG_INFINITY;
    for ring in rings {
        for &(x, y) in ring {
            w = w.min(x);
            s = s.min(y);
            e = e.max(x);
            n = n.max(y);
        }
    }
    (w, s, e, n)
}

/// Area-weighted planar centroid; opposite-wound holes subtract naturally
/// through the signed areas.
fn planar_centroid(rings: &[Vec<(f64, f64)>]) -> GeoPoint {
    let mut a_sum = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for ring in rings {
        for edge in ring.windows(2) {
            let (x0, y0) = edge[0];
            let (x1, y1) = edge[1];
            let cross = x0 * y1 - x1 * y0;
            a_sum += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
    }
    if a_sum.abs() < 1e-300 {
        // Degenerate geometry: fall back to the bbox midpoint.
        let (w, s, e, n) = rings_bbox(rings);
        return GeoPoint::new((w + e) / 2.0, (s + n) / 2.0);
    }
    GeoPoint::new(cx / (3.0 * a_sum), cy / (3.0 * a_sum))
}

fn signed_ring_area(ring: &[(f64, f64)]) -> f64 {
    ring.windows(2)
        .map(|e| e[0].0 * e[1].1 - e[1].0 * e[0].1)
        .sum::<f64>()
        / 2.0
}

const GRID_DIM: usize = 32;

/// Ordered regions with a fixed id -> matrix-position index and a uniform
/// grid over polygon bounding boxes for point queries.
#[derive(Debug, Clone)]
pub struct RegionSet {
    regions: Vec<Region>,
    by_id: HashMap<String, usize>,
    grid_bbox: (f64, f64, f64, f64),
    grid: Vec<Vec<u32>>,
}

impl RegionSet {
    pub fn new(regions: Vec<Region>) -> Result<Self, GeoError> {
        if regions.is_empty() {
            return Err(GeoError::Empty);
        }
        let mut by_id = HashMap::with_capacity(regions.len());
        for (i, r) in regions.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(GeoError::DuplicateId(r.id.clone()));
            }
        }
        let mut grid_bbox = regions[0].bbox();
        for r in &regions[1..] {
            let b = r.bbox();
            grid_bbox.0 = grid_bbox.0.min(b.0);
            grid_bbox.1 = grid_bbox.1.min(b.1);
            grid_bbox.2 = grid_bbox.2.max(b.2);
            grid_bbox.3 = grid_bbox.3.max(b.3);
        }
        let mut grid = vec![Vec::new(); GRID_DIM * GRID_DIM];
        for (i, r) in regions.iter().enumerate() {
            let (w, s, e, n) = r.bbox();
            let (c0, r0) = grid_cell(grid_bbox, w, s);
            let (c1, r1) = grid_cell(grid_bbox, e, n);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    grid[row * GRID_DIM + col].push(i as u32);
                }
            }
        }
        Ok(RegionSet {
            regions,
            by_id,
            grid_bbox,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, idx: usize) -> &Region {
        &self.regions[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn id_of(&self, idx: usize) -> &str {
        &self.regions[idx].id
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.regions.iter().map(|r| r.id.as_str())
    }

    /// Grid-accelerated point-in-region lookup; candidates are tested in
    /// index order so the result matches a linear scan exactly.
    pub fn point_in_region(&self, p: GeoPoint) -> Option<&str> {
        let (w, s, e, n) = self.grid_bbox;
        if p.lon < w || p.lon > e || p.lat < s || p.lat > n {
            return None;
        }
        let (col, row) = grid_cell(self.grid_bbox, p.lon, p.lat);
        self.grid[row * GRID_DIM + col]
            .iter()
            .map(|&i| &self.regions[i as usize])
            .find(|r| r.contains(p))
            .map(|r| r.id.as_str())
    }

    /// Linear scan over every polygon; the oracle the grid must agree with.
    pub fn point_in_region_linear(&self, p: GeoPoint) -> Option<&str> {
        self.regions
            .iter()
            .find(|r| r.contains(p))
            .map(|r| r.id.as_str())
    }

    /// K x K symmetric matrix of centroid great-circle distances.
    pub fn centroid_distances_km(&self) -> Vec<Vec<f64>> {
        let k = self.regions.len();
        let mut d = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in (i + 1)..k {
                let v = great_circle_km(self.regions[i].centroid, self.regions[j].centroid);
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        d
    }

    pub fn populations(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.population as f64).collect()
    }
}

fn grid_cell(bbox: (f64, f64, f64, f64), lon: f64, lat: f64) -> (usize, usize) {
    let (w, s, e, n) = bbox;
    let fx = if e > w { (lon - w) / (e - w) } else { 0.0 };
    let fy = if n > s { (lat - s) / (n - s) } else { 0.0 };
    let col = ((fx * GRID_DIM as f64) as usize).min(GRID_DIM - 1);
    let row = ((fy * GRID_DIM as f64) as usize).min(GRID_DIM - 1);
    (col, row)
}

/// An event location: exact coordinates or a place bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventLocation {
    Point(GeoPoint),
    Place(BoundingBox),
}

/// Resolve an event location to a region. Exact points go straight through
/// containment; city boxes are reduced to their centroid; coarser boxes are
/// unassignable.
pub fn resolve_event_location(loc: &EventLocation, rs: &RegionSet) -> Option<String> {
    match loc {
        EventLocation::Point(p) => rs.point_in_region(*p).map(str::to_owned),
        EventLocation::Place(b) => {
            if b.place_type == PlaceType::City {
                rs.point_in_region(b.centroid()).map(str::to_owned)
            } else {
                None
            }
        }
    }
}

/// Haversine great-circle distance in km on the mean-radius sphere.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians() / 2.0;
    let dlon = (b.lon - a.lon).to_radians() / 2.0;
    let h = dlat.sin().powi(2) + lat1.cos() * lat2.cos() * dlon.sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

// --- GeoJSON loading ---------------------------------------------------

#[derive(Deserialize)]
struct FeatureCollection {
    features: Vec<Feature>,
}

#[derive(Deserialize)]
struct Feature {
    properties: FeatureProps,
    geometry: Geometry,
}

#[derive(Deserialize)]
struct FeatureProps {
    region_id: String,
    name: String,
    population: u64,
    #[serde(default)]
    centroid: Option<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(tag = "type")]
enum Geometry {
    Polygon { coordinates: Vec<Vec<[f64; 2]>> },
    MultiPolygon { coordinates: Vec<Vec<Vec<[f64; 2]>>> },
}

/// Load a RegionSet from a GeoJSON FeatureCollection file. Feature order in
/// the file fixes the matrix index.
pub fn load_regions(path: &Path) -> Result<RegionSet, GeoError> {
    let text = fs::read_to_string(path)?;
    parse_regions(&text)
}

pub fn parse_regions(geojson: &str) -> Result<RegionSet, GeoError> {
    let fc: FeatureCollection = serde_json::from_str(geojson)?;
    let mut regions = Vec::with_capacity(fc.features.len());
    for f in fc.features {
        let rings: Vec<Vec<(f64, f64)>> = match f.geometry {
            Geometry::Polygon { coordinates } => coordinates
                .into_iter()
                .map(|ring| ring.into_iter().map(|c| (c[0], c[1])).collect())
                .collect(),
            Geometry::MultiPolygon { coordinates } => coordinates
                .into_iter()
                .flatten()
                .map(|ring| ring.into_iter().map(|c| (c[0], c[1])).collect())
                .collect(),
        };
        let centroid = f.properties.centroid.map(|c| GeoPoint::new(c[0], c[1]));
        regions.push(Region::new(
            f.properties.region_id,
            f.properties.name,
            rings,
            f.properties.population,
            centroid,
        )?);
    }
    RegionSet::new(regions)
}
