//! Data sources: the synthetic four-cluster benchmark, check-in file
//! ingestion, and the geo projection tying them to metric coordinates.
//!
//! Everything here is a pure function of (input file, config, seed), so a
//! rerun reproduces splits byte for byte.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Dataset, LabeledSample, Location, Region, SplitTag};
use crate::seeds::RngFactory;

/// Meridian arc length per degree of latitude, meters.
const M_PER_DEG_LAT: f64 = 111_190.0;

/// Equirectangular projection about the region center: x east, y north,
/// meters. Accurate to well under a meter at city scale; do not use more
/// than a degree or so away from the center.
pub fn project_to_meters(region: &Region, lat: f64, lon: f64) -> Location {
    let y = (lat - region.center_lat) * M_PER_DEG_LAT;
    let x = (lon - region.center_lon) * M_PER_DEG_LAT * region.center_lat.to_radians().cos();
    Location::new(x, y)
}

/// Inverse of [`project_to_meters`].
pub fn project_to_geo(region: &Region, loc: &Location) -> (f64, f64) {
    let lat = region.center_lat + loc.y_m / M_PER_DEG_LAT;
    let lon =
        region.center_lon + loc.x_m / (M_PER_DEG_LAT * region.center_lat.to_radians().cos());
    (lat, lon)
}

/// Train, validation and test portions of one source.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

// The train/validation split is four to one, rounded to the nearest count.
fn train_portion(trainval: usize) -> usize {
    (trainval * 4 + 2) / 5
}

/// The synthetic benchmark: four clusters of points on the vertices of a
/// square, each point uniform on a disk around its vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub center_lat: f64,
    pub center_lon: f64,
    pub region_side_m: f64,
    pub cluster_square_side_m: f64,
    pub max_radius_m: f64,
    pub per_class: usize,
    pub per_class_trainval: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            center_lat: 48.8635,
            center_lon: 2.3486,
            region_side_m: 6500.0,
            cluster_square_side_m: 300.0,
            max_radius_m: 45.0,
            per_class: 600,
            per_class_trainval: 480,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cluster_square_side_m > 0.0 && self.cluster_square_side_m.is_finite()) {
            return Err(Error::invalid("cluster square side must be positive"));
        }
        // Vertices of a square: the closest pair is one side apart.
        if !(self.max_radius_m > 0.0 && self.max_radius_m < self.cluster_square_side_m / 2.0) {
            return Err(Error::invalid(format!(
                "max radius {} must stay under half the {} m vertex spacing",
                self.max_radius_m, self.cluster_square_side_m
            )));
        }
        if self.per_class == 0 || self.per_class_trainval >= self.per_class {
            return Err(Error::invalid(format!(
                "need trainval < per-class total, got {}/{}",
                self.per_class_trainval, self.per_class
            )));
        }
        let half_extent = self.cluster_square_side_m / 2.0 + self.max_radius_m;
        if self.region_side_m / 2.0 < half_extent {
            return Err(Error::invalid("region does not contain the clusters"));
        }
        Ok(())
    }

    pub fn region(&self) -> Result<Region> {
        Region::new(self.center_lat, self.center_lon, self.region_side_m)
    }

    /// Cluster vertex positions, class order: (+,+), (+,−), (−,+), (−,−).
    pub fn vertices(&self) -> [(f64, f64); 4] {
        let h = self.cluster_square_side_m / 2.0;
        [(h, h), (h, -h), (-h, h), (-h, -h)]
    }
}

/// Generates the synthetic clusters and splits them per class into
/// train/validation/test. Points are disk-uniform: radius `max·sqrt(u)`,
/// uniform angle.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Splits> {
    spec.validate()?;
    let region = spec.region()?;
    let factory = RngFactory::new(spec.seed);
    let vertices = spec.vertices();

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let n_train = train_portion(spec.per_class_trainval);

    for (class_id, &(cx, cy)) in vertices.iter().enumerate() {
        let mut rng = factory.stream("synthetic-class", class_id as u64);
        for i in 0..spec.per_class {
            let r = spec.max_radius_m * rng.random::<f64>().sqrt();
            let th = rng.random::<f64>() * std::f64::consts::TAU;
            let sample = LabeledSample {
                class_id,
                loc: Location::new(cx + r * th.cos(), cy + r * th.sin()),
            };
            if i < n_train {
                train.push(sample);
            } else if i < spec.per_class_trainval {
                val.push(sample);
            } else {
                test.push(sample);
            }
        }
    }

    Ok(Splits {
        train: Dataset::new(train, 4, region, SplitTag::Train)?,
        val: Dataset::new(val, 4, region, SplitTag::Val)?,
        test: Dataset::new(test, 4, region, SplitTag::Test)?,
    })
}

/// One parsed check-in line.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckinRecord {
    pub user: String,
    pub lat: f64,
    pub lon: f64,
}

/// Which zero-based columns hold the user id and coordinates. The default
/// matches the common five-column check-in dump (user, timestamp,
/// latitude, longitude, place id).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnConfig {
    pub user: usize,
    pub lat: usize,
    pub lon: usize,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        ColumnConfig { user: 0, lat: 2, lon: 3 }
    }
}

/// Check-in ingestion settings: the study region, how many of the most
/// frequent users become classes, and per-user sample counts.
#[derive(Debug, Clone)]
pub struct GowallaSpec {
    pub region: Region,
    pub num_users: usize,
    pub per_user_trainval: usize,
    pub per_user_test: usize,
    pub seed: u64,
    pub columns: ColumnConfig,
    /// Drop points that lie within this distance of another selected
    /// user's point, before sampling. Off by default.
    pub overlap_filter_m: Option<f64>,
}

impl GowallaSpec {
    pub fn new(region: Region, num_users: usize) -> Self {
        GowallaSpec {
            region,
            num_users,
            per_user_trainval: 82,
            per_user_test: 20,
            seed: 0,
            columns: ColumnConfig::default(),
            overlap_filter_m: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return Err(Error::invalid("num_users must be >= 1"));
        }
        if self.per_user_trainval == 0 || self.per_user_test == 0 {
            return Err(Error::invalid("per-user sample counts must be >= 1"));
        }
        Ok(())
    }
}

/// Ingestion output: the splits plus provenance of the source file.
#[derive(Debug, Clone)]
pub struct GowallaSplits {
    pub splits: Splits,
    pub source_sha256: String,
    /// Selected user ids, most check-ins first; index = class id.
    pub users: Vec<String>,
}

/// Parses tab-, comma- or space-separated check-in lines. Blank lines and
/// `#` comments are skipped. Errors carry the offending line number.
pub fn parse_checkins(path: &Path, columns: &ColumnConfig) -> Result<Vec<CheckinRecord>> {
    let text = fs::read_to_string(path)?;
    parse_checkin_text(&text, columns, &path.display().to_string())
}

fn parse_checkin_text(
    text: &str,
    columns: &ColumnConfig,
    path: &str,
) -> Result<Vec<CheckinRecord>> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_string(), line, msg };
    let need = columns.user.max(columns.lat).max(columns.lon) + 1;
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> =
            line.split(|c| c == ',' || c == '\t' || c == ' ').filter(|f| !f.is_empty()).collect();
        if fields.len() < need {
            return Err(err(line_no, format!("{} fields, need {need}", fields.len())));
        }
        let lat: f64 = fields[columns.lat]
            .parse()
            .map_err(|_| err(line_no, format!("bad latitude {:?}", fields[columns.lat])))?;
        let lon: f64 = fields[columns.lon]
            .parse()
            .map_err(|_| err(line_no, format!("bad longitude {:?}", fields[columns.lon])))?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(err(line_no, format!("latitude {lat} out of range")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(err(line_no, format!("longitude {lon} out of range")));
        }
        records.push(CheckinRecord { user: fields[columns.user].to_string(), lat, lon });
    }
    Ok(records)
}

/// Reads a check-in file and builds class-labeled splits from the most
/// frequent in-region users: classes are users ranked by in-region count
/// (ties by id), and each user's points are subsampled with a per-class
/// seed stream after sorting, so the input file order never matters.
pub fn ingest_gowalla(path: &Path, spec: &GowallaSpec) -> Result<GowallaSplits> {
    spec.validate()?;
    let bytes = fs::read(path)?;
    let source_sha256 =
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect::<String>();
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::data(format!("{} is not utf-8", path.display())))?;
    let records = parse_checkin_text(&text, &spec.columns, &path.display().to_string())?;

    // In-region points per user, in metric coordinates.
    let mut by_user: std::collections::BTreeMap<String, Vec<Location>> =
        std::collections::BTreeMap::new();
    for rec in &records {
        let loc = project_to_meters(&spec.region, rec.lat, rec.lon);
        if spec.region.contains(&loc) {
            by_user.entry(rec.user.clone()).or_default().push(loc);
        }
    }
    if by_user.is_empty() {
        return Err(Error::data("no qualifying users: no check-ins fall inside the region"));
    }

    // Most frequent first; ties by id. BTreeMap iteration already sorts by
    // id, and the sort below is stable.
    let mut ranked: Vec<(&String, usize)> = by_user.iter().map(|(u, v)| (u, v.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    if ranked.len() < spec.num_users {
        return Err(Error::data(format!(
            "only {} users have in-region check-ins, need {}",
            ranked.len(),
            spec.num_users
        )));
    }
    let users: Vec<String> = ranked[..spec.num_users].iter().map(|(u, _)| (*u).clone()).collect();

    // Per-user point sets, order-canonicalized.
    let mut points: Vec<Vec<Location>> = users
        .iter()
        .map(|u| {
            let mut v = by_user[u].clone();
            v.sort_by(|a, b| a.x_m.total_cmp(&b.x_m).then(a.y_m.total_cmp(&b.y_m)));
            v
        })
        .collect();

    if let Some(r) = spec.overlap_filter_m {
        points = drop_overlaps(&points, r);
    }

    let need = spec.per_user_trainval + spec.per_user_test;
    for (class_id, (user, pts)) in users.iter().zip(&points).enumerate() {
        if pts.len() < need {
            return Err(Error::data(format!(
                "user {user} (class {class_id}) has {} usable in-region check-ins, need {need}",
                pts.len()
            )));
        }
    }

    let factory = RngFactory::new(spec.seed);
    let n_train = train_portion(spec.per_user_trainval);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (class_id, pts) in points.iter().enumerate() {
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut factory.stream("gowalla-class", class_id as u64));
        for (k, &idx) in order[..need].iter().enumerate() {
            let sample = LabeledSample { class_id, loc: pts[idx] };
            if k < n_train {
                train.push(sample);
            } else if k < spec.per_user_trainval {
                val.push(sample);
            } else {
                test.push(sample);
            }
        }
    }

    let k = spec.num_users;
    Ok(GowallaSplits {
        splits: Splits {
            train: Dataset::new(train, k, spec.region, SplitTag::Train)?,
            val: Dataset::new(val, k, spec.region, SplitTag::Val)?,
            test: Dataset::new(test, k, spec.region, SplitTag::Test)?,
        },
        source_sha256,
        users,
    })
}

// Removes every point lying within `r` meters of any other user's point.
// Quadratic, meant for study-sized selections, not the raw dump.
fn drop_overlaps(points: &[Vec<Location>], r: f64) -> Vec<Vec<Location>> {
    points
        .iter()
        .enumerate()
        .map(|(u, pts)| {
            pts.iter()
                .filter(|p| {
                    points
                        .iter()
                        .enumerate()
                        .filter(|(v, _)| *v != u)
                        .all(|(_, other)| other.iter().all(|q| p.distance(q) > r))
                })
                .copied()
                .collect()
        })
        .collect()
}
