//! Zoned point clouds and stratified collocation sampling.
//!
//! Training points come from externally meshed point clouds in which
//! every point carries a zone label (a hand-drawn subdivision of the
//! domain) and a boundary tag. Sampling caps the number of points drawn
//! per zone so densely meshed regions cannot dominate the loss, drawing
//! uniformly without replacement inside each zone.
//!
//! File format (header mandatory, one file per Reynolds number):
//! `x,y,zone,tag,Re[,u,v,p,k,eps]` with `tag` one of interior, inlet,
//! outlet, wall, freestream. Ground-truth columns are all-or-none.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Boundary classification of a cloud point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Interior,
    Inlet,
    Outlet,
    Wall,
    Freestream,
}

impl BoundaryTag {
    pub fn parse(s: &str) -> Option<BoundaryTag> {
        match s {
            "interior" => Some(BoundaryTag::Interior),
            "inlet" => Some(BoundaryTag::Inlet),
            "outlet" => Some(BoundaryTag::Outlet),
            "wall" => Some(BoundaryTag::Wall),
            "freestream" => Some(BoundaryTag::Freestream),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Interior => "interior",
            BoundaryTag::Inlet => "inlet",
            BoundaryTag::Outlet => "outlet",
            BoundaryTag::Wall => "wall",
            BoundaryTag::Freestream => "freestream",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One point of a cloud: position, zone label, boundary tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub x: f64,
    pub y: f64,
    pub zone: usize,
    pub tag: BoundaryTag,
}

/// A validated point cloud at a single Reynolds number. Ground truth
/// (u, v, p, k, ε per point, already nondimensional) is present for all
/// points or for none.
#[derive(Clone, Debug, PartialEq)]
pub struct ZonedPointCloud {
    points: Vec<CloudPoint>,
    truth: Option<Vec<[f64; 5]>>,
    re: f64,
    zone_count: usize,
}

impl ZonedPointCloud {
    pub fn new(
        points: Vec<CloudPoint>,
        truth: Option<Vec<[f64; 5]>>,
        re: f64,
    ) -> Result<Self, SamplerError> {
        if points.is_empty() {
            return Err(SamplerError::Validation { message: "point cloud is empty".into() });
        }
        if !(re > 0.0 && re.is_finite()) {
            return Err(SamplerError::Validation {
                message: format!("Reynolds number must be positive and finite, got {re}"),
            });
        }
        if let Some(t) = &truth {
            if t.len() != points.len() {
                return Err(SamplerError::Validation {
                    message: format!(
                        "ground truth rows ({}) do not match point count ({})",
                        t.len(),
                        points.len()
                    ),
                });
            }
        }
        let zone_count = points.iter().map(|p| p.zone).max().unwrap() + 1;
        let mut seen = vec![false; zone_count];
        for p in &points {
            seen[p.zone] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(SamplerError::Validation {
                message: format!(
                    "zone ids must be contiguous 0..{}, but zone {missing} has no points",
                    zone_count - 1
                ),
            });
        }
        Ok(ZonedPointCloud { points, truth, re, zone_count })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[CloudPoint] {
        &self.points
    }

    pub fn truth(&self) -> Option<&[[f64; 5]]> {
        self.truth.as_deref()
    }

    pub fn re(&self) -> f64 {
        self.re
    }

    pub fn zone_count(&self) -> usize {
        self.zone_count
    }

    /// ((x_min, x_max), (y_min, y_max)) over all points.
    pub fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
        let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            xr = (xr.0.min(p.x), xr.1.max(p.x));
            yr = (yr.0.min(p.y), yr.1.max(p.y));
        }
        (xr, yr)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("failed to read point cloud: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse point cloud: {0}")]
    Csv(#[from] csv::Error),
    #[error("row 1: bad header `{found}` (expected `x,y,zone,tag,Re` or `x,y,zone,tag,Re,u,v,p,k,eps`)")]
    Header { found: String },
    #[error("row {row}: {message}")]
    Schema { row: u64, message: String },
    #[error("invalid point cloud: {message}")]
    Validation { message: String },
}

/// Column order of a cloud CSV without ground truth.
pub const HEADER_BARE: [&str; 5] = ["x", "y", "zone", "tag", "Re"];
/// Column order of a cloud CSV with ground truth appended.
pub const HEADER_TRUTH: [&str; 10] = ["x", "y", "zone", "tag", "Re", "u", "v", "p", "k", "eps"];

/// Load and validate a point-cloud CSV. Errors carry 1-based row
/// numbers counting the header as row 1.
pub fn load_point_cloud(path: &Path) -> Result<ZonedPointCloud, SamplerError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => return Err(SamplerError::Header { found: String::new() }),
    };
    let cols: Vec<&str> = header.iter().collect();
    let with_truth = if cols == HEADER_TRUTH {
        true
    } else if cols == HEADER_BARE {
        false
    } else {
        return Err(SamplerError::Header { found: cols.join(",") });
    };
    let expected_len = if with_truth { 10 } else { 5 };

    let parse_f64 = |row: u64, name: &str, s: &str| -> Result<f64, SamplerError> {
        let v: f64 = s.parse().map_err(|_| SamplerError::Schema {
            row,
            message: format!("column {name}: `{s}` is not a number"),
        })?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SamplerError::Schema { row, message: format!("column {name}: non-finite value") })
        }
    };

    let mut points = Vec::new();
    let mut truth = if with_truth { Some(Vec::new()) } else { None };
    let mut re: Option<f64> = None;
    for (i, rec) in records.enumerate() {
        let row = i as u64 + 2; // header is row 1
        let rec = rec?;
        if rec.len() != expected_len {
            return Err(SamplerError::Schema {
                row,
                message: format!("expected {expected_len} columns, found {}", rec.len()),
            });
        }
        let x = parse_f64(row, "x", &rec[0])?;
        let y = parse_f64(row, "y", &rec[1])?;
        let zone: usize = rec[2].parse().map_err(|_| SamplerError::Schema {
            row,
            message: format!("column zone: `{}` is not a nonnegative integer", &rec[2]),
        })?;
        let tag = BoundaryTag::parse(&rec[3]).ok_or_else(|| SamplerError::Schema {
            row,
            message: format!(
                "column tag: `{}` is not one of interior, inlet, outlet, wall, freestream",
                &rec[3]
            ),
        })?;
        let row_re = parse_f64(row, "Re", &rec[4])?;
        if row_re <= 0.0 {
            return Err(SamplerError::Schema {
                row,
                message: format!("column Re: must be positive, got {row_re}"),
            });
        }
        match re {
            None => re = Some(row_re),
            Some(first) if first != row_re => {
                return Err(SamplerError::Schema {
                    row,
                    message: format!("column Re: {row_re} differs from {first} earlier in the file"),
                });
            }
            _ => {}
        }
        if let Some(t) = &mut truth {
            let mut vals = [0.0; 5];
            for (j, name) in ["u", "v", "p", "k", "eps"].iter().enumerate() {
                vals[j] = parse_f64(row, name, &rec[5 + j])?;
            }
            t.push(vals);
        }
        points.push(CloudPoint { x, y, zone, tag });
    }
    let re = re.ok_or(SamplerError::Validation { message: "point cloud is empty".into() })?;
    ZonedPointCloud::new(points, truth, re)
}

/// Record of how a training set was drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub seed: u64,
    pub caps: Vec<usize>,
}

/// Indices into a cloud selected for training, with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    /// Selected point indices, ascending. Sorting makes the set
    /// independent of per-zone draw order.
    pub indices: Vec<usize>,
    pub provenance: SampleProvenance,
}

/// Equal split of a total budget across zones; the integer remainder
/// goes to the largest zone (lowest index on ties).
pub fn default_caps(cloud: &ZonedPointCloud, total_budget: usize) -> Vec<usize> {
    let z = cloud.zone_count();
    let mut caps = vec![total_budget / z; z];
    let remainder = total_budget % z;
    if remainder > 0 {
        let mut sizes = vec![0usize; z];
        for p in cloud.points() {
            sizes[p.zone] += 1;
        }
        let largest = (0..z).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))).unwrap();
        caps[largest] += remainder;
    }
    caps
}

/// Draw min(cap, zone size) points uniformly without replacement from
/// each zone. `caps` is indexed by zone id (ids are contiguous). Zone z
/// draws from stream z of the seed, so changing one zone's cap cannot
/// reshuffle another zone's selection.
pub fn zone_sample(cloud: &ZonedPointCloud, caps: &[usize], seed: u64) -> TrainingSet {
    assert_eq!(caps.len(), cloud.zone_count(), "one cap per zone");
    let mut by_zone: Vec<Vec<usize>> = vec![Vec::new(); cloud.zone_count()];
    for (i, p) in cloud.points().iter().enumerate() {
        by_zone[p.zone].push(i);
    }
    let mut indices = Vec::new();
    for (z, members) in by_zone.iter().enumerate() {
        let take = caps[z].min(members.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(z as u64);
        for pick in rand::seq::index::sample(&mut rng, members.len(), take) {
            indices.push(members[pick]);
        }
    }
    indices.sort_unstable();
    TrainingSet { indices, provenance: SampleProvenance { seed, caps: caps.to_vec() } }
}

/// Dirichlet targets for the tagged boundary subsets: inlet and
/// freestream pin velocity to (inlet_velocity, 0), walls to (0, 0), the
/// outlet pins pressure to 0. Indices refer to the cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySets {
    pub inlet: Vec<usize>,
    pub wall: Vec<usize>,
    pub outlet: Vec<usize>,
    pub freestream: Vec<usize>,
    /// Normalized inlet speed (1 when velocity is scaled by itself).
    pub inlet_velocity: f64,
}

impl BoundarySets {
    pub fn total_points(&self) -> usize {
        self.inlet.len() + self.wall.len() + self.outlet.len() + self.freestream.len()
    }
}

pub fn split_boundary_sets(cloud: &ZonedPointCloud, inlet_velocity: f64) -> BoundarySets {
    let mut sets = BoundarySets {
        inlet: Vec::new(),
        wall: Vec::new(),
        outlet: Vec::new(),
        freestream: Vec::new(),
        inlet_velocity,
    };
    for (i, p) in cloud.points().iter().enumerate() {
        match p.tag {
            BoundaryTag::Interior => {}
            BoundaryTag::Inlet => sets.inlet.push(i),
            BoundaryTag::Wall => sets.wall.push(i),
            BoundaryTag::Outlet => sets.outlet.push(i),
            BoundaryTag::Freestream => sets.freestream.push(i),
        }
    }
    sets
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn small_cloud() -> ZonedPointCloud {
        let f = write_csv(
            "x,y,zone,tag,Re\n\
             0.0,0.0,0,inlet,1000\n\
             0.5,0.5,0,interior,1000\n\
             1.0,0.5,1,interior,1000\n\
             1.0,1.0,1,outlet,1000\n",
        );
        load_point_cloud(f.path()).unwrap()
    }

    #[test]
    fn loads_well_formed_file() {
        let cloud = small_cloud();
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.zone_count(), 2);
        assert_eq!(cloud.re(), 1000.0);
        assert!(cloud.truth().is_none());
        assert_eq!(cloud.points()[0].tag, BoundaryTag::Inlet);
        assert_eq!(cloud.bounding_box(), ((0.0, 1.0), (0.0, 1.0)));
    }

    #[test]
    fn loads_truth_columns_all_or_none() {
        let f = write_csv(
            "x,y,zone,tag,Re,u,v,p,k,eps\n\
             0.0,0.0,0,interior,500,1.0,0.0,0.5,0.1,0.2\n\
             1.0,0.0,0,interior,500,0.9,0.1,0.4,0.2,0.3\n",
        );
        let cloud = load_point_cloud(f.path()).unwrap();
        assert_eq!(cloud.truth().unwrap().len(), 2);
        assert_eq!(cloud.truth().unwrap()[1], [0.9, 0.1, 0.4, 0.2, 0.3]);

        // Truth header without the eps column is rejected at row 1.
        let f = write_csv("x,y,zone,tag,Re,u,v,p,k\n0,0,0,interior,500,1,0,0.5,0.1\n");
        match load_point_cloud(f.path()) {
            Err(SamplerError::Header { found }) => assert!(found.ends_with("k")),
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_row_numbers() {
        // Bad float on data row 3 (header is row 1).
        let f = write_csv(
            "x,y,zone,tag,Re\n\
             0.0,0.0,0,interior,1000\n\
             0.5,oops,0,interior,1000\n",
        );
        match load_point_cloud(f.path()) {
            Err(SamplerError::Schema { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("column y"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }

        // Unknown tag.
        let f = write_csv("x,y,zone,tag,Re\n0,0,0,slipwall,1000\n");
        match load_point_cloud(f.path()) {
            Err(SamplerError::Schema { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("tag"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }

        // Re must be constant within one file.
        let f = write_csv(
            "x,y,zone,tag,Re\n\
             0,0,0,interior,1000\n\
             1,0,0,interior,2000\n",
        );
        match load_point_cloud(f.path()) {
            Err(SamplerError::Schema { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("differs"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }

        // Short row.
        let f = write_csv("x,y,zone,tag,Re\n0,0,0,interior\n");
        match load_point_cloud(f.path()) {
            Err(SamplerError::Schema { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("columns"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_contiguous_zone_ids_are_rejected() {
        let f = write_csv(
            "x,y,zone,tag,Re\n\
             0,0,0,interior,1000\n\
             1,0,2,interior,1000\n",
        );
        match load_point_cloud(f.path()) {
            Err(SamplerError::Validation { message }) => {
                assert!(message.contains("zone 1"), "{message}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    fn grid_cloud(zones: &[usize]) -> ZonedPointCloud {
        // One point per entry, zone as listed, all interior.
        let points: Vec<CloudPoint> = zones
            .iter()
            .enumerate()
            .map(|(i, &z)| CloudPoint { x: i as f64, y: 0.0, zone: z, tag: BoundaryTag::Interior })
            .collect();
        ZonedPointCloud::new(points, None, 1000.0).unwrap()
    }

    #[test]
    fn caps_limit_each_zone() {
        let zones: Vec<usize> = (0..20).map(|i| i / 10).collect(); // 2 zones × 10
        let cloud = grid_cloud(&zones);
        let set = zone_sample(&cloud, &[5, 5], 7);
        assert_eq!(set.indices.len(), 10);
        let in_zone0 = set.indices.iter().filter(|&&i| i < 10).count();
        assert_eq!(in_zone0, 5);

        // A cap beyond the zone size takes the whole zone.
        let set = zone_sample(&cloud, &[50, 0], 7);
        assert_eq!(set.indices, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_deterministic_and_duplicate_free() {
        let zones: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let cloud = grid_cloud(&zones);
        let a = zone_sample(&cloud, &[7, 5, 9], 42);
        let b = zone_sample(&cloud, &[7, 5, 9], 42);
        assert_eq!(a, b);
        let c = zone_sample(&cloud, &[7, 5, 9], 43);
        assert_ne!(a.indices, c.indices);

        assert_eq!(a.indices.len(), 21);
        let mut dedup = a.indices.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), a.indices.len(), "no duplicates");
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]), "sorted ascending");
        for &i in &a.indices {
            assert!(i < cloud.len());
        }
        // Per-zone counts respect the caps exactly (zones are bigger).
        for (z, want) in [(0usize, 7usize), (1, 5), (2, 9)] {
            let got = a.indices.iter().filter(|&&i| cloud.points()[i].zone == z).count();
            assert_eq!(got, want, "zone {z}");
        }
    }

    /// With caps at or above every zone size the result is the whole
    /// cloud in original order, regardless of zone labeling.
    #[test]
    fn saturated_caps_return_identity() {
        let zones: Vec<usize> = (0..30).map(|i| (i * 7 + 3) % 4).collect();
        let cloud = grid_cloud(&zones);
        let set = zone_sample(&cloud, &[30, 30, 30, 30], 5);
        assert_eq!(set.indices, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn default_caps_split_budget_with_remainder_to_largest_zone() {
        let zones: Vec<usize> = (0..17)
            .map(|i| if i < 5 { 0 } else if i < 8 { 1 } else { 2 })
            .collect(); // sizes 5, 3, 9
        let cloud = grid_cloud(&zones);
        assert_eq!(default_caps(&cloud, 3000), vec![1000, 1000, 1000]);
        assert_eq!(default_caps(&cloud, 10), vec![3, 3, 4]);
    }

    /// Marginal selection frequency per point over 10⁴ reseeded draws
    /// matches the uniform without-replacement expectation n/M within 3σ.
    #[test]
    fn selection_frequency_is_uniform() {
        let zones = vec![0usize; 20];
        let cloud = grid_cloud(&zones);
        let (m, n, draws) = (20usize, 10usize, 10_000usize);
        let mut counts = vec![0usize; m];
        for seed in 0..draws as u64 {
            for &i in &zone_sample(&cloud, &[n], seed).indices {
                counts[i] += 1;
            }
        }
        let p = n as f64 / m as f64;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - expected).abs();
            assert!(dev <= 3.0 * sigma, "point {i}: count {c}, expected {expected} ± {}", 3.0 * sigma);
        }
    }

    #[test]
    fn boundary_split_routes_tags_to_target_sets() {
        let f = write_csv(
            "x,y,zone,tag,Re\n\
             0.0,0.5,0,inlet,1000\n\
             0.5,0.5,0,interior,1000\n\
             1.0,0.5,0,outlet,1000\n\
             0.5,0.0,0,wall,1000\n\
             0.5,1.0,0,freestream,1000\n",
        );
        let cloud = load_point_cloud(f.path()).unwrap();
        let sets = split_boundary_sets(&cloud, 1.0);
        assert_eq!(sets.inlet, vec![0]);
        assert_eq!(sets.outlet, vec![2]);
        assert_eq!(sets.wall, vec![3]);
        assert_eq!(sets.freestream, vec![4]);
        assert_eq!(sets.inlet_velocity, 1.0);
        assert_eq!(sets.total_points(), 4); // the interior point appears nowhere
    }

    #[test]
    fn empty_boundary_sets_are_not_an_error() {
        let f = write_csv("x,y,zone,tag,Re\n0.5,0.5,0,interior,1000\n");
        let cloud = load_point_cloud(f.path()).unwrap();
        let sets = split_boundary_sets(&cloud, 1.0);
        assert!(sets.inlet.is_empty());
        assert_eq!(sets.total_points(), 0);
    }
}
