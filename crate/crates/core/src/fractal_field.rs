//! Fractal cloud-shadow synthesis.
//!
//! A diamond-square surface is thresholded at its median into a cloud-index
//! map in [-0.2, 1.2] with a linear transition band, then mapped to clear-sky
//! index values by the empirical piecewise relation in [`cloud_to_clearsky`].
//!
//! Rasters are stored row-major with row 0 adjacent to the field origin, so
//! pixel `(col, row)` covers `[col, col + 1) x [row, row + 1)` in units of the
//! pixel size, x east and y north.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest cloud index (fully clear).
pub const CLOUD_INDEX_MIN: f64 = -0.2;
/// Highest cloud index (fully cloudy).
pub const CLOUD_INDEX_MAX: f64 = 1.2;
/// Lowest clear-sky index produced by [`cloud_to_clearsky`].
pub const KSTAR_MIN: f64 = 0.09;
/// Highest clear-sky index produced by [`cloud_to_clearsky`].
pub const KSTAR_MAX: f64 = 1.2;

/// Default half width of the threshold transition band, in normalized
/// surface units.
pub const DEFAULT_TRANSITION_HALFWIDTH: f64 = 0.15;
pub const DEFAULT_FRACTAL_DIMENSION: f64 = 1.5;

/// Square fractal surface normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct FractalSurface {
    values: Vec<f32>,
    side_px: usize,
    fractal_dimension: f64,
}

impl FractalSurface {
    /// Wraps existing values. Fails unless `values` is a finite square raster.
    pub fn from_values(values: Vec<f32>, side_px: usize, fractal_dimension: f64) -> Result<Self> {
        if side_px == 0 || values.len() != side_px * side_px {
            return Err(Error::Size(format!(
                "{} values do not form a {side_px} x {side_px} surface",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("surface values must be finite".into()));
        }
        Ok(FractalSurface {
            values,
            side_px,
            fractal_dimension,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn side_px(&self) -> usize {
        self.side_px
    }

    pub fn fractal_dimension(&self) -> f64 {
        self.fractal_dimension
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.side_px + col]
    }
}

fn is_power_of_two_ge2(n: usize) -> bool {
    n >= 2 && n.is_power_of_two()
}

/// True for sizes the generator accepts: `2^k` or `2^k + 1` with `k >= 1`.
pub fn is_admissible_side(side_px: usize) -> bool {
    is_power_of_two_ge2(side_px) || (side_px >= 3 && is_power_of_two_ge2(side_px - 1))
}

/// Generates a seeded diamond-square surface.
///
/// Noise amplitude shrinks by `2^-H` per subdivision level with Hurst
/// exponent `H = 2 - fractal_dimension`, so `fractal_dimension` is the
/// dimension of the surface's isolines (cloud edges). Power-of-two sizes are
/// generated at `side_px + 1` and cropped by one row and column. The result
/// is rescaled to span [0, 1].
pub fn generate_fractal(side_px: usize, fractal_dimension: f64, seed: u64) -> Result<FractalSurface> {
    if !is_admissible_side(side_px) {
        return Err(Error::Size(format!(
            "side {side_px} px is neither 2^k nor 2^k + 1 (k >= 1)"
        )));
    }
    if !(fractal_dimension > 1.0 && fractal_dimension < 2.0) {
        return Err(Error::Parameter(format!(
            "fractal dimension {fractal_dimension} outside (1, 2)"
        )));
    }

    let n = if side_px.is_power_of_two() {
        side_px + 1
    } else {
        side_px
    };
    let hurst = 2.0 - fractal_dimension;
    let decay = 2f64.powf(-hurst);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = vec![0f32; n * n];
    let idx = |c: usize, r: usize| r * n + c;

    let mut amp = 1.0f64;
    let mut noise = |amp: f64| -> f64 { amp * rng.random_range(-1.0..1.0) };

    for &(c, r) in &[(0, 0), (n - 1, 0), (0, n - 1), (n - 1, n - 1)] {
        grid[idx(c, r)] = noise(amp) as f32;
    }

    let mut step = n - 1;
    while step > 1 {
        let half = step / 2;
        amp *= decay;

        // diamond step: centers of squares
        let mut r = half;
        while r < n {
            let mut c = half;
            while c < n {
                let sum = grid[idx(c - half, r - half)] as f64
                    + grid[idx(c + half, r - half)] as f64
                    + grid[idx(c - half, r + half)] as f64
                    + grid[idx(c + half, r + half)] as f64;
                grid[idx(c, r)] = (0.25 * sum + noise(amp)) as f32;
                c += step;
            }
            r += step;
        }

        // square step: edge midpoints, averaging the 3 or 4 available neighbors
        let mut r = 0;
        while r < n {
            let mut c = if (r / half) % 2 == 0 { half } else { 0 };
            while c < n {
                let mut sum = 0.0f64;
                let mut count = 0u32;
                if r >= half {
                    sum += grid[idx(c, r - half)] as f64;
                    count += 1;
                }
                if r + half < n {
                    sum += grid[idx(c, r + half)] as f64;
                    count += 1;
                }
                if c >= half {
                    sum += grid[idx(c - half, r)] as f64;
                    count += 1;
                }
                if c + half < n {
                    sum += grid[idx(c + half, r)] as f64;
                    count += 1;
                }
                grid[idx(c, r)] = (sum / count as f64 + noise(amp)) as f32;
                c += step;
            }
            r += half;
        }

        step = half;
    }

    if n != side_px {
        for r in 0..side_px {
            grid.copy_within(r * n..r * n + side_px, r * side_px);
        }
        grid.truncate(side_px * side_px);
        grid.shrink_to_fit();
    }

    let (lo, hi) = grid
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span > 0.0 {
        for v in grid.iter_mut() {
            *v = (*v - lo) / span;
        }
    } else {
        grid.fill(0.5);
    }

    FractalSurface::from_values(grid, side_px, fractal_dimension)
}

/// Median of a slice, averaging the two middle elements for even lengths.
pub(crate) fn median_f32(values: &[f32]) -> f64 {
    let mut scratch = values.to_vec();
    let len = scratch.len();
    let mid = len / 2;
    let (_, upper, _) = scratch.select_nth_unstable_by(mid, f32::total_cmp);
    let upper = *upper as f64;
    if len % 2 == 1 {
        upper
    } else {
        let lower = scratch[..mid]
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max) as f64;
        0.5 * (lower + upper)
    }
}

/// Cloud-index raster with values in [-0.2, 1.2].
#[derive(Debug, Clone)]
pub struct CloudIndexField {
    n: Vec<f32>,
    side_px: usize,
    pixel_size_m: f64,
    threshold: f64,
}

impl CloudIndexField {
    pub fn values(&self) -> &[f32] {
        &self.n
    }

    pub fn side_px(&self) -> usize {
        self.side_px
    }

    pub fn pixel_size_m(&self) -> f64 {
        self.pixel_size_m
    }

    /// Median of the source surface used as cloud/clear separator.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_pixel_size(mut self, pixel_size_m: f64) -> Result<Self> {
        check_pixel_size(pixel_size_m)?;
        self.pixel_size_m = pixel_size_m;
        Ok(self)
    }

    pub fn side_m(&self) -> f64 {
        self.side_px as f64 * self.pixel_size_m
    }
}

fn check_pixel_size(pixel_size_m: f64) -> Result<()> {
    if pixel_size_m.is_finite() && pixel_size_m > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "pixel size {pixel_size_m} m must be positive"
        )))
    }
}

/// Linear threshold map around `threshold`: clamps to [-0.2, 1.2] outside
/// `threshold ± halfwidth`.
pub fn cloud_index_of(value: f64, threshold: f64, halfwidth: f64) -> f64 {
    let lo = threshold - halfwidth;
    let hi = threshold + halfwidth;
    if value <= lo {
        CLOUD_INDEX_MIN
    } else if value >= hi {
        CLOUD_INDEX_MAX
    } else {
        CLOUD_INDEX_MIN + (CLOUD_INDEX_MAX - CLOUD_INDEX_MIN) * (value - lo) / (hi - lo)
    }
}

/// Thresholds a surface at its median into a cloud-index field.
pub fn to_cloud_index(surface: FractalSurface, transition_halfwidth: f64) -> Result<CloudIndexField> {
    if !(transition_halfwidth.is_finite() && transition_halfwidth > 0.0) {
        return Err(Error::Parameter(format!(
            "transition half width {transition_halfwidth} must be positive"
        )));
    }
    let first = surface.values[0];
    if surface.values.iter().all(|&v| v == first) {
        return Err(Error::Degenerate(
            "surface is constant; its median does not separate cloud from clear".into(),
        ));
    }
    let threshold = median_f32(&surface.values);
    let FractalSurface {
        mut values,
        side_px,
        ..
    } = surface;
    for v in values.iter_mut() {
        *v = cloud_index_of(*v as f64, threshold, transition_halfwidth) as f32;
    }
    Ok(CloudIndexField {
        n: values,
        side_px,
        pixel_size_m: 1.0,
        threshold,
    })
}

/// Empirical cloud-index to clear-sky-index relation.
///
/// The quadratic branch does not meet the linear one exactly at n = 0.8
/// (0.20498 against 0.2).
pub fn cloud_to_clearsky(n: f64) -> f64 {
    if n <= -0.2 {
        1.2
    } else if n <= 0.8 {
        1.0 - n
    } else if n <= 1.05 {
        1.1661 - 1.7814 * n + 0.7250 * n * n
    } else {
        0.09
    }
}

/// Size of one 8-bit quantization step over the clear-sky range.
pub const QUANT_STEP: f64 = (KSTAR_MAX - KSTAR_MIN) / 255.0;

/// 8-bit level for a clear-sky value, clamped to [0, 255].
pub fn kstar_to_level(k: f64) -> u8 {
    ((k - KSTAR_MIN) / QUANT_STEP).round().clamp(0.0, 255.0) as u8
}

pub fn level_to_kstar(level: u8) -> f64 {
    KSTAR_MIN + level as f64 * QUANT_STEP
}

/// Clear-sky-index raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearSkyField {
    kstar: Vec<f32>,
    side_px: usize,
    pixel_size_m: f64,
}

impl ClearSkyField {
    pub fn from_cloud_index(field: &CloudIndexField) -> Self {
        ClearSkyField {
            kstar: field
                .n
                .iter()
                .map(|&n| cloud_to_clearsky(n as f64) as f32)
                .collect(),
            side_px: field.side_px,
            pixel_size_m: field.pixel_size_m,
        }
    }

    /// Builds a field by evaluating `f(x_m, y_m)` at every pixel center.
    /// Values are clamped into the clear-sky range.
    pub fn from_fn(
        side_px: usize,
        pixel_size_m: f64,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self> {
        check_pixel_size(pixel_size_m)?;
        if side_px == 0 {
            return Err(Error::Size("field side must be positive".into()));
        }
        let mut kstar = Vec::with_capacity(side_px * side_px);
        for r in 0..side_px {
            let y = (r as f64 + 0.5) * pixel_size_m;
            for c in 0..side_px {
                let x = (c as f64 + 0.5) * pixel_size_m;
                kstar.push(f(x, y).clamp(KSTAR_MIN, KSTAR_MAX) as f32);
            }
        }
        Ok(ClearSkyField {
            kstar,
            side_px,
            pixel_size_m,
        })
    }

    /// Field decoded from 8-bit levels, row 0 first.
    pub fn from_levels(levels: &[u8], side_px: usize, pixel_size_m: f64) -> Result<Self> {
        check_pixel_size(pixel_size_m)?;
        if side_px == 0 || levels.len() != side_px * side_px {
            return Err(Error::Size(format!(
                "{} levels do not form a {side_px} x {side_px} field",
                levels.len()
            )));
        }
        Ok(ClearSkyField {
            kstar: levels.iter().map(|&l| level_to_kstar(l) as f32).collect(),
            side_px,
            pixel_size_m,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.kstar
    }

    pub fn side_px(&self) -> usize {
        self.side_px
    }

    pub fn pixel_size_m(&self) -> f64 {
        self.pixel_size_m
    }

    pub fn side_m(&self) -> f64 {
        self.side_px as f64 * self.pixel_size_m
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.kstar[row * self.side_px + col]
    }

    /// Value of the pixel containing field-frame point `(x, y)` meters,
    /// or `None` outside the raster.
    pub fn lookup(&self, x: f64, y: f64) -> Option<f32> {
        let c = (x / self.pixel_size_m).floor();
        let r = (y / self.pixel_size_m).floor();
        let side = self.side_px as f64;
        if c >= 0.0 && r >= 0.0 && c < side && r < side {
            Some(self.get(c as usize, r as usize))
        } else {
            None
        }
    }

    /// 8-bit levels in storage order.
    pub fn levels(&self) -> Vec<u8> {
        self.kstar.iter().map(|&k| kstar_to_level(k as f64)).collect()
    }

    pub fn stats(&self) -> FieldStats {
        let (min, max) = self
            .kstar
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        FieldStats {
            min: min as f64,
            max: max as f64,
            median: median_f32(&self.kstar),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

/// Rounds every value to its nearest 8-bit level over [0.09, 1.2].
pub fn quantize_8bit(field: ClearSkyField) -> ClearSkyField {
    let ClearSkyField {
        mut kstar,
        side_px,
        pixel_size_m,
    } = field;
    for k in kstar.iter_mut() {
        *k = level_to_kstar(kstar_to_level(*k as f64)) as f32;
    }
    ClearSkyField {
        kstar,
        side_px,
        pixel_size_m,
    }
}

/// Field extent in meters needed to keep a moving observation area inside
/// the field: the distance travelled plus the observation diagonal.
pub fn required_field_side(sim_duration_s: f64, v_max: f64, obs_diag_m: f64) -> f64 {
    sim_duration_s * v_max + obs_diag_m
}

/// Smallest power-of-two pixel count covering `extent_m`.
pub fn admissible_side_px(extent_m: f64, pixel_size_m: f64) -> usize {
    let px = (extent_m / pixel_size_m).ceil().max(2.0) as usize;
    px.next_power_of_two()
}

/// Parameters of the full synthesis pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub side_px: usize,
    pub fractal_dimension: f64,
    pub seed: u64,
    pub transition_halfwidth: f64,
    pub pixel_size_m: f64,
    pub quantize: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            side_px: 16384,
            fractal_dimension: DEFAULT_FRACTAL_DIMENSION,
            seed: 0,
            transition_halfwidth: DEFAULT_TRANSITION_HALFWIDTH,
            pixel_size_m: 1.0,
            quantize: true,
        }
    }
}

/// Fractal surface, median threshold, clear-sky mapping and optional 8-bit
/// quantization in one call.
pub fn synthesize(cfg: &FieldConfig) -> Result<ClearSkyField> {
    check_pixel_size(cfg.pixel_size_m)?;
    let surface = generate_fractal(cfg.side_px, cfg.fractal_dimension, cfg.seed)?;
    let cloud = to_cloud_index(surface, cfg.transition_halfwidth)?.with_pixel_size(cfg.pixel_size_m)?;
    let field = ClearSkyField::from_cloud_index(&cloud);
    Ok(if cfg.quantize {
        quantize_8bit(field)
    } else {
        field
    })
}
