//! Cloud-shadow passage over the sensor network.
//!
//! The field moves rigidly with a constant velocity. A world point `p` at
//! time `t` sees the field pixel at `p - anchor - t * v`, where `anchor` is
//! the world position of the field origin at `t = 0` and
//! `v = speed * (sin θ, cos θ)` for a heading θ clockwise from north.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{active_sensors, ActiveSensor, ShadowMask, TrajectoryDataset};
use crate::fractal_field::ClearSkyField;
use crate::geom::{heading_unit, Bounds};

pub const MIN_DRAW_SPEED: f64 = 1.0;
pub const MAX_DRAW_SPEED: f64 = 30.0;

/// Ground-truth shadow motion: speed in m/s, heading in degrees clockwise
/// from north toward which the shadow moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionTruth {
    pub speed: f64,
    pub direction_deg: f64,
}

impl MotionTruth {
    pub fn new(speed: f64, direction_deg: f64) -> Self {
        MotionTruth {
            speed,
            direction_deg: direction_deg.rem_euclid(360.0),
        }
    }

    /// (east, north) velocity in m/s.
    pub fn velocity(&self) -> (f64, f64) {
        let (e, n) = heading_unit(self.direction_deg);
        (self.speed * e, self.speed * n)
    }
}

/// Seeded draw with speed uniform on [1, 30] m/s and heading uniform on
/// [0, 360) degrees.
pub fn draw_truth(seed: u64) -> MotionTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speed = rng.random_range(MIN_DRAW_SPEED..=MAX_DRAW_SPEED);
    let direction_deg = rng.random_range(0.0..360.0);
    MotionTruth {
        speed,
        direction_deg,
    }
}

/// Where the field sits relative to the observation area.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FieldAnchor {
    /// Field centered over the area halfway through the transit, so the
    /// swept region is symmetric about the field center.
    #[default]
    Midpoint,
    /// Field centered over the area at `t = 0`.
    Start,
    /// Explicit world position of the field origin at `t = 0`.
    Origin { x: f64, y: f64 },
}

impl FieldAnchor {
    pub fn resolve(
        &self,
        field: &ClearSkyField,
        bounds: &Bounds,
        truth: &MotionTruth,
        duration_s: u32,
    ) -> (f64, f64) {
        let (cx, cy) = bounds.center();
        let half = 0.5 * field.side_m();
        let (vx, vy) = truth.velocity();
        match *self {
            FieldAnchor::Midpoint => {
                let tc = 0.5 * duration_s as f64;
                (cx - tc * vx - half, cy - tc * vy - half)
            }
            FieldAnchor::Start => (cx - half, cy - half),
            FieldAnchor::Origin { x, y } => (x, y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitConfig {
    pub duration_s: u32,
    pub sampling_period_s: u32,
    #[serde(default)]
    pub field_anchor: FieldAnchor,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TransitConfig {
    fn default() -> Self {
        TransitConfig {
            duration_s: 300,
            sampling_period_s: 1,
            field_anchor: FieldAnchor::Midpoint,
            seed: 0,
        }
    }
}

impl TransitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_s == 0 || self.sampling_period_s == 0 {
            return Err(Error::Parameter(
                "duration and sampling period must be positive".into(),
            ));
        }
        if !self.duration_s.is_multiple_of(self.sampling_period_s) {
            return Err(Error::Parameter(format!(
                "duration {} s is not a multiple of the {} s sampling period",
                self.duration_s, self.sampling_period_s
            )));
        }
        Ok(())
    }

    pub fn snapshot_count(&self) -> usize {
        (self.duration_s / self.sampling_period_s) as usize + 1
    }
}

/// A clear-sky reading taken by one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub vehicle: u32,
    pub x: f64,
    pub y: f64,
    pub kstar: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSnapshot {
    pub t: u32,
    pub sensors: Vec<Sample>,
}

impl SensorSnapshot {
    /// Copy holding only sensors of vehicles flagged in `keep`.
    pub fn retain_vehicles(&self, keep: &[bool]) -> SensorSnapshot {
        SensorSnapshot {
            t: self.t,
            sensors: self
                .sensors
                .iter()
                .filter(|s| keep[s.vehicle as usize])
                .copied()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub snapshots: Vec<SensorSnapshot>,
    pub truth: MotionTruth,
    pub config: TransitConfig,
}

impl MeasurementSeries {
    pub fn retain_vehicles(&self, keep: &[bool]) -> MeasurementSeries {
        MeasurementSeries {
            snapshots: self.snapshots.iter().map(|s| s.retain_vehicles(keep)).collect(),
            truth: self.truth,
            config: self.config,
        }
    }
}

/// Reads the moving field under each position at time `t`.
pub fn sample_field_at(
    field: &ClearSkyField,
    anchor: (f64, f64),
    truth: &MotionTruth,
    t: u32,
    positions: &[ActiveSensor],
) -> Result<SensorSnapshot> {
    let (vx, vy) = truth.velocity();
    let tf = t as f64;
    let ox = anchor.0 + tf * vx;
    let oy = anchor.1 + tf * vy;
    let sensors = positions
        .iter()
        .map(|p| {
            let (qx, qy) = (p.x - ox, p.y - oy);
            field
                .lookup(qx, qy)
                .map(|kstar| Sample {
                    vehicle: p.vehicle,
                    x: p.x,
                    y: p.y,
                    kstar,
                })
                .ok_or(Error::Sizing {
                    x: qx,
                    y: qy,
                    extent: field.side_m(),
                })
        })
        .collect::<Result<_>>()?;
    Ok(SensorSnapshot { t, sensors })
}

/// One snapshot per sampling instant, both window ends included.
pub fn run_transit(
    field: &ClearSkyField,
    ds: &TrajectoryDataset,
    mask: Option<&ShadowMask>,
    truth: &MotionTruth,
    cfg: &TransitConfig,
) -> Result<MeasurementSeries> {
    cfg.validate()?;
    if ds.duration_s() < cfg.duration_s {
        return Err(Error::Parameter(format!(
            "trajectories span {} s, transit needs {} s",
            ds.duration_s(),
            cfg.duration_s
        )));
    }
    let anchor = cfg
        .field_anchor
        .resolve(field, &ds.bounds(), truth, cfg.duration_s);
    let snapshots = (0..=cfg.duration_s)
        .step_by(cfg.sampling_period_s as usize)
        .map(|t| {
            let positions = active_sensors(ds, mask, t)?;
            sample_field_at(field, anchor, truth, t, &positions)
        })
        .collect::<Result<_>>()?;
    Ok(MeasurementSeries {
        snapshots,
        truth: *truth,
        config: *cfg,
    })
}

const CHANGE_EPS: f64 = 1e-6;

/// Event validity: sensors inside the central ninth of `bounds` must
/// register irradiance change over more than `min_variability_s`.
///
/// A sensor registers change when its reading differs from the same
/// vehicle's reading at the previous sampling instant, or, without a
/// previous reading, from the most common central-area value of the series.
/// With `Q` qualifying instants the covered time is `(Q - 1) * period`.
pub fn is_valid_event(series: &MeasurementSeries, bounds: &Bounds, min_variability_s: u32) -> bool {
    let center = bounds.central_ninth();
    let inside = |s: &&Sample| center.contains(s.x, s.y);

    let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
    for snap in &series.snapshots {
        for s in snap.sensors.iter().filter(inside) {
            *hist.entry(quantize_key(s.kstar)).or_default() += 1;
        }
    }
    let Some(modal) = hist
        .iter()
        .max_by_key(|(k, c)| (**c, **k))
        .map(|(k, _)| *k as f64 * CHANGE_EPS)
    else {
        return false;
    };

    let period = series.config.sampling_period_s;
    let mut qualifying = 0u64;
    let mut previous: HashMap<u32, f32> = HashMap::new();
    let mut prev_t: Option<u32> = None;
    for snap in &series.snapshots {
        let contiguous = prev_t.is_some_and(|p| p + period == snap.t);
        let changed = snap.sensors.iter().filter(inside).any(|s| {
            match previous.get(&s.vehicle).filter(|_| contiguous) {
                Some(&before) => (s.kstar as f64 - before as f64).abs() > CHANGE_EPS,
                None => (s.kstar as f64 - modal).abs() > CHANGE_EPS,
            }
        });
        if changed {
            qualifying += 1;
        }
        previous.clear();
        previous.extend(snap.sensors.iter().map(|s| (s.vehicle, s.kstar)));
        prev_t = Some(snap.t);
    }
    qualifying > 0 && (qualifying - 1) * period as u64 > min_variability_s as u64
}

fn quantize_key(k: f32) -> i64 {
    (k as f64 / CHANGE_EPS).round() as i64
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesHeader {
    truth: MotionTruth,
    config: TransitConfig,
    snapshot_times: Vec<u32>,
}

/// Writes `<stem>.csv` (`t,x,y,kstar`) and `<stem>.json` (truth, config and
/// snapshot times, so instants without sensors survive the round trip).
pub fn export_series(series: &MeasurementSeries, dir: &Path, stem: &str) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut out = Vec::new();
    writeln!(out, "t,x,y,kstar").expect("in-memory write");
    for snap in &series.snapshots {
        for s in &snap.sensors {
            writeln!(out, "{},{:.3},{:.3},{:.6}", snap.t, s.x, s.y, s.kstar).expect("in-memory write");
        }
    }
    fs::write(&csv_path, out).map_err(|e| Error::io(&csv_path, e))?;

    let header = SeriesHeader {
        truth: series.truth,
        config: series.config,
        snapshot_times: series.snapshots.iter().map(|s| s.t).collect(),
    };
    let json_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
}

/// Reads a series written by [`export_series`]. Vehicle identity is not
/// part of the interchange format; samples get sequential vehicle numbers
/// within each snapshot.
pub fn import_series(dir: &Path, stem: &str) -> Result<MeasurementSeries> {
    let json_path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: SeriesHeader = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: json_path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let mut snapshots: Vec<SensorSnapshot> = header
        .snapshot_times
        .iter()
        .map(|&t| SensorSnapshot {
            t,
            sensors: Vec::new(),
        })
        .collect();
    let slot: HashMap<u32, usize> = header
        .snapshot_times
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, i))
        .collect();

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| Error::Parse {
        path: csv_path.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    for rec in reader.deserialize::<(u32, f64, f64, f32)>() {
        let (t, x, y, kstar) = rec.map_err(|e| Error::Parse {
            path: csv_path.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let i = *slot.get(&t).ok_or_else(|| Error::Parse {
            path: csv_path.clone(),
            line: 0,
            message: format!("t = {t} is not a snapshot time"),
        })?;
        let vehicle = snapshots[i].sensors.len() as u32;
        snapshots[i].sensors.push(Sample {
            vehicle,
            x,
            y,
            kstar,
        });
    }
    Ok(MeasurementSeries {
        snapshots,
        truth: header.truth,
        config: header.config,
    })
}
