//! Inverse-distance-weighted gridding of scattered sensor snapshots.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Bounds;
use crate::transit::{MeasurementSeries, Sample, SensorSnapshot};

/// Number of neighbors used throughout the experiments.
pub const DEFAULT_NEIGHBORS: usize = 3;

/// Regular grid anchored at the lower-left corner of `bounds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    bounds: Bounds,
    dmin: f64,
    nx: usize,
    ny: usize,
}

impl GridSpec {
    pub fn new(bounds: Bounds, dmin: f64) -> Result<Self> {
        if !(dmin.is_finite() && dmin > 0.0) {
            return Err(Error::Parameter(format!("grid spacing {dmin} m must be positive")));
        }
        if !bounds.is_valid() {
            return Err(Error::Parameter(format!("degenerate bounds {bounds:?}")));
        }
        let nx = (bounds.width() / dmin).floor() as usize + 1;
        let ny = (bounds.height() / dmin).floor() as usize + 1;
        Ok(GridSpec { bounds, dmin, nx, ny })
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }
    pub fn dmin(&self) -> f64 {
        self.dmin
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// World position of grid point `(col, row)`.
    pub fn point(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.bounds.min_x + col as f64 * self.dmin,
            self.bounds.min_y + row as f64 * self.dmin,
        )
    }
}

/// Gridded clear-sky indices, row-major with row 0 at the southern edge.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSnapshot {
    pub t: u32,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f32>,
    pub valid: bool,
}

impl GridSnapshot {
    pub fn new(t: u32, nx: usize, ny: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), nx * ny, "grid shape mismatch");
        GridSnapshot {
            t,
            nx,
            ny,
            values,
            valid: true,
        }
    }

    pub fn invalid(t: u32, nx: usize, ny: usize) -> Self {
        GridSnapshot {
            t,
            nx,
            ny,
            values: vec![f32::NAN; nx * ny],
            valid: false,
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.nx + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.nx..(row + 1) * self.nx]
    }

    /// CSV dump as `row,col,kstar`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "row,col,kstar").expect("in-memory write");
        for r in 0..self.ny {
            for c in 0..self.nx {
                writeln!(out, "{r},{c},{:.6}", self.get(c, r)).expect("in-memory write");
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    d2: f64,
    x: f64,
    y: f64,
    kstar: f32,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    a.d2.total_cmp(&b.d2)
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
}

/// Inverse-distance weighting of the `k_neighbors` nearest sensors at every
/// grid point. Snapshots with fewer sensors than `k_neighbors` come back
/// invalid.
pub fn idw_interpolate(snapshot: &SensorSnapshot, spec: &GridSpec, k_neighbors: usize) -> GridSnapshot {
    assert!(k_neighbors >= 1, "k_neighbors must be at least 1");
    let sensors: &[Sample] = &snapshot.sensors;
    if sensors.len() < k_neighbors {
        return GridSnapshot::invalid(snapshot.t, spec.nx, spec.ny);
    }

    let mut best: Vec<Candidate> = Vec::with_capacity(k_neighbors + 1);
    let mut values = Vec::with_capacity(spec.len());
    for row in 0..spec.ny {
        for col in 0..spec.nx {
            let (gx, gy) = spec.point(col, row);
            best.clear();
            for s in sensors {
                let c = Candidate {
                    d2: (s.x - gx).powi(2) + (s.y - gy).powi(2),
                    x: s.x,
                    y: s.y,
                    kstar: s.kstar,
                };
                if best.len() == k_neighbors && rank(&c, &best[k_neighbors - 1]) != Ordering::Less {
                    continue;
                }
                let at = best.partition_point(|b| rank(b, &c) != Ordering::Greater);
                best.insert(at, c);
                best.truncate(k_neighbors);
            }
            values.push(weigh(&best));
        }
    }
    GridSnapshot::new(snapshot.t, spec.nx, spec.ny, values)
}

fn weigh(neighbors: &[Candidate]) -> f32 {
    if neighbors[0].d2 == 0.0 {
        return neighbors[0].kstar;
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for n in neighbors {
        let w = 1.0 / n.d2.sqrt();
        num += w * n.kstar as f64;
        den += w;
    }
    (num / den) as f32
}

/// Grids every snapshot of a series, keeping order.
pub fn grid_series(series: &MeasurementSeries, spec: &GridSpec, k_neighbors: usize) -> Vec<GridSnapshot> {
    series
        .snapshots
        .iter()
        .map(|s| idw_interpolate(s, spec, k_neighbors))
        .collect()
}
