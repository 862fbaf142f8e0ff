//! Cumulative mean absolute error (CMAE) motion estimation over gridded
//! snapshot pairs.
//!
//! For a displacement `d = (dx, dy)` in grid cells (east, north), the MAE of
//! a pair `(a, b)` compares `a` at cell `k` with `b` at `k + d` over the
//! overlapping cells only. A pattern moving by `d` cells between the two
//! snapshots gives zero MAE at `d`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::heading_of;
use crate::gridding::GridSnapshot;

/// Displacements implying faster motion than this are not considered, m/s.
pub const DEFAULT_SPEED_CAP: f64 = 40.0;
/// Smallest overlap, as a fraction of the grid, a displacement may have.
pub const MIN_OVERLAP_FRACTION: f64 = 0.1;
/// Number of lowest-CMAE displacements blended into the estimate.
pub const BLEND_COUNT: usize = 3;

// Values are converted to fixed point with a power-of-two scale chosen from
// the largest magnitude, so sums do not depend on traversal order (mirror
// symmetry holds bit for bit) and scaling all values by a power of two
// leaves the integers unchanged.
const FIXED_BITS: i32 = 23;
// |difference| < 2^24, so a block of this many fits a u32 sum.
const SUM_BLOCK: usize = 128;

fn fixed_scale(max_abs: f32) -> f64 {
    if max_abs.is_nan() || max_abs <= 0.0 {
        return 1.0;
    }
    let e = (max_abs as f64).log2().floor() as i32 + 1;
    2f64.powi(FIXED_BITS - e)
}

fn to_fixed(values: &[f32], scale: f64) -> Vec<i32> {
    values.iter().map(|&v| (v as f64 * scale).round() as i32).collect()
}

fn max_abs(values: &[f32]) -> f32 {
    values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: i32,
    pub dy: i32,
}

impl Displacement {
    pub fn new(dx: i32, dy: i32) -> Self {
        Displacement { dx, dy }
    }

    pub fn norm2(&self) -> i64 {
        (self.dx as i64).pow(2) + (self.dy as i64).pow(2)
    }

    /// Speed in m/s implied by this displacement per `timestep_s`.
    pub fn speed(&self, dmin: f64, timestep_s: f64) -> f64 {
        dmin * (self.norm2() as f64).sqrt() / timestep_s
    }

    fn overlap(&self, nx: usize, ny: usize) -> usize {
        let ox = nx.saturating_sub(self.dx.unsigned_abs() as usize);
        let oy = ny.saturating_sub(self.dy.unsigned_abs() as usize);
        ox * oy
    }
}

/// Displacements within the speed cap whose overlap covers at least
/// [`MIN_OVERLAP_FRACTION`] of an `nx` x `ny` grid, in (dy, dx) order.
pub fn candidate_displacements(
    nx: usize,
    ny: usize,
    timestep_s: u32,
    dmin: f64,
    v_cap: f64,
) -> Vec<Displacement> {
    let reach = (v_cap * timestep_s as f64 / dmin).floor() as i32;
    let min_overlap = MIN_OVERLAP_FRACTION * (nx * ny) as f64;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d = Displacement::new(dx, dy);
            if d.speed(dmin, timestep_s as f64) <= v_cap * (1.0 + 1e-12)
                && d.overlap(nx, ny) > 0
                && d.overlap(nx, ny) as f64 >= min_overlap
            {
                out.push(d);
            }
        }
    }
    out
}

fn fixed_sum(a: &[i32], b: &[i32], nx: usize, ny: usize, d: Displacement) -> u64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at run time.
            return unsafe { fixed_sum_avx2(a, b, nx, ny, d) };
        }
    }
    fixed_sum_body(a, b, nx, ny, d)
}

// Same integer arithmetic, compiled with wider vectors.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fixed_sum_avx2(a: &[i32], b: &[i32], nx: usize, ny: usize, d: Displacement) -> u64 {
    fixed_sum_body(a, b, nx, ny, d)
}

#[inline(always)]
fn fixed_sum_body(a: &[i32], b: &[i32], nx: usize, ny: usize, d: Displacement) -> u64 {
    let (nxi, nyi) = (nx as i64, ny as i64);
    let (dx, dy) = (d.dx as i64, d.dy as i64);
    let c0 = 0.max(-dx) as usize;
    let c1 = nxi.min(nxi - dx) as usize;
    let r0 = 0.max(-dy) as usize;
    let r1 = nyi.min(nyi - dy) as usize;
    let width = c1 - c0;
    let mut total = 0u64;
    for r in r0..r1 {
        let ra = &a[r * nx + c0..r * nx + c1];
        let rb_start = ((r as i64 + dy) as usize) * nx + (c0 as i64 + dx) as usize;
        let rb = &b[rb_start..rb_start + width];
        for (ca, cb) in ra.chunks(SUM_BLOCK).zip(rb.chunks(SUM_BLOCK)) {
            // bounded operands: wrapping ops never wrap, and skip overflow checks
            let block = ca
                .iter()
                .zip(cb)
                .fold(0u32, |acc, (&x, &y)| acc.wrapping_add(x.wrapping_sub(y).unsigned_abs()));
            total += block as u64;
        }
    }
    total
}

/// MAE between `a` and `b` displaced by `d` over overlapping cells, or
/// `None` when nothing overlaps. Values are resolved to 2^-23 of the
/// largest magnitude in either grid.
pub fn mae_for_displacement(a: &GridSnapshot, b: &GridSnapshot, d: Displacement) -> Option<f64> {
    assert_eq!((a.nx, a.ny), (b.nx, b.ny), "grid shapes differ");
    let n = d.overlap(a.nx, a.ny);
    if n == 0 {
        return None;
    }
    let scale = fixed_scale(max_abs(&a.values).max(max_abs(&b.values)));
    let (fa, fb) = (to_fixed(&a.values, scale), to_fixed(&b.values, scale));
    Some(fixed_sum(&fa, &fb, a.nx, a.ny, d) as f64 / scale / n as f64)
}

/// Accumulated MAE per candidate displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaeSurface {
    pub displacements: Vec<Displacement>,
    /// Sum of per-pair MAEs, aligned with `displacements`.
    pub cmae: Vec<f64>,
    pub pair_count: usize,
}

impl CmaeSurface {
    pub fn get(&self, d: Displacement) -> Option<f64> {
        self.displacements
            .iter()
            .position(|&x| x == d)
            .map(|i| self.cmae[i])
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    /// Candidate indices ordered by CMAE, then slower, then dx, then dy.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.displacements.len()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (self.displacements[i], self.displacements[j]);
            self.cmae[i]
                .total_cmp(&self.cmae[j])
                .then(a.norm2().cmp(&b.norm2()))
                .then(a.dx.cmp(&b.dx))
                .then(a.dy.cmp(&b.dy))
        });
        order
    }

    /// CSV dump as `dx,dy,cmae`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "dx,dy,cmae").expect("in-memory write");
        for (d, v) in self.displacements.iter().zip(&self.cmae) {
            writeln!(out, "{},{},{:.9}", d.dx, d.dy, v).expect("in-memory write");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Index pairs `(i, j)` with `grids[j].t == grids[i].t + timestep_s`, both valid.
pub fn usable_pairs(grids: &[GridSnapshot], timestep_s: u32) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, a) in grids.iter().enumerate() {
        if !a.valid {
            continue;
        }
        let target = a.t + timestep_s;
        if let Ok(j) = grids.binary_search_by_key(&target, |g| g.t) {
            if grids[j].valid {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Sums MAE over every valid `(t, t + timestep_s)` pair for each
/// displacement within `v_cap`. `grids` must be sorted by time.
pub fn accumulate_cmae(
    grids: &[GridSnapshot],
    timestep_s: u32,
    dmin: f64,
    v_cap: f64,
) -> Result<CmaeSurface> {
    if timestep_s == 0 {
        return Err(Error::Parameter("time step must be positive".into()));
    }
    let Some(first) = grids.first() else {
        return Err(Error::InsufficientData("no grid snapshots".into()));
    };
    let (nx, ny) = (first.nx, first.ny);
    if grids.iter().any(|g| g.nx != nx || g.ny != ny) {
        return Err(Error::Parameter("grid snapshots differ in shape".into()));
    }
    let pairs = usable_pairs(grids, timestep_s);
    if pairs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no valid snapshot pairs {timestep_s} s apart"
        )));
    }
    let displacements = candidate_displacements(nx, ny, timestep_s, dmin, v_cap);
    if displacements.is_empty() {
        return Err(Error::InsufficientData(
            "no displacement satisfies the speed cap and overlap floor".into(),
        ));
    }

    let mut used: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    used.sort_unstable();
    used.dedup();
    if used.iter().any(|&i| grids[i].values.iter().any(|v| !v.is_finite())) {
        return Err(Error::Parameter("valid grid snapshot holds non-finite values".into()));
    }
    let scale = fixed_scale(used.iter().map(|&i| max_abs(&grids[i].values)).fold(0.0, f32::max));
    let mut fixed: Vec<Vec<i32>> = vec![Vec::new(); grids.len()];
    for &i in &used {
        fixed[i] = to_fixed(&grids[i].values, scale);
    }

    const CHUNK: usize = 64;
    let cmae: Vec<f64> = displacements
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut sums = vec![0.0f64; chunk.len()];
            for &(i, j) in &pairs {
                for (s, &d) in sums.iter_mut().zip(chunk) {
                    let n = d.overlap(nx, ny) as f64;
                    *s += fixed_sum(&fixed[i], &fixed[j], nx, ny, d) as f64 / scale / n;
                }
            }
            sums
        })
        .collect();

    Ok(CmaeSurface {
        displacements,
        cmae,
        pair_count: pairs.len(),
    })
}

/// Motion estimate derived from a CMAE surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmvEstimate {
    pub speed: f64,
    pub direction_deg: f64,
    pub valid: bool,
    /// Blended displacements with their mean per-pair MAE.
    pub top: Vec<(Displacement, f64)>,
    /// Set when fewer than three candidates were available.
    pub partial: bool,
}

impl CmvEstimate {
    pub fn invalid() -> Self {
        CmvEstimate {
            speed: f64::NAN,
            direction_deg: f64::NAN,
            valid: false,
            top: Vec::new(),
            partial: false,
        }
    }

    /// (east, north) velocity in m/s.
    pub fn velocity(&self) -> (f64, f64) {
        let (e, n) = crate::geom::heading_unit(self.direction_deg);
        (self.speed * e, self.speed * n)
    }
}

/// Blends the three lowest-CMAE displacements with weights `1 / CMAE`.
/// A displacement with zero CMAE is taken as is.
pub fn estimate_cmv(surface: &CmaeSurface, timestep_s: u32, dmin: f64) -> CmvEstimate {
    if surface.is_empty() {
        return CmvEstimate::invalid();
    }
    let ranked = surface.ranked();
    let chosen = &ranked[..BLEND_COUNT.min(ranked.len())];
    let pairs = surface.pair_count.max(1) as f64;
    let top: Vec<(Displacement, f64)> = chosen
        .iter()
        .map(|&i| (surface.displacements[i], surface.cmae[i] / pairs))
        .collect();

    let (mx, my) = if surface.cmae[chosen[0]] == 0.0 {
        let d = surface.displacements[chosen[0]];
        (d.dx as f64, d.dy as f64)
    } else {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for &i in chosen {
            let w = 1.0 / surface.cmae[i];
            let d = surface.displacements[i];
            sx += w * d.dx as f64;
            sy += w * d.dy as f64;
            sw += w;
        }
        (sx / sw, sy / sw)
    };

    let scale = dmin / timestep_s as f64;
    let (east, north) = (mx * scale, my * scale);
    CmvEstimate {
        speed: east.hypot(north),
        direction_deg: heading_of(east, north),
        valid: true,
        top,
        partial: chosen.len() < BLEND_COUNT,
    }
}

/// Accumulation and blending in one call; failures to find usable pairs
/// yield an invalid estimate.
pub fn estimate_from_grids(grids: &[GridSnapshot], timestep_s: u32, dmin: f64, v_cap: f64) -> CmvEstimate {
    match accumulate_cmae(grids, timestep_s, dmin, v_cap) {
        Ok(surface) => estimate_cmv(&surface, timestep_s, dmin),
        Err(_) => CmvEstimate::invalid(),
    }
}
