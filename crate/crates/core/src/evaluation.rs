//! Monte Carlo campaigns: paired truth draws, parameter sweeps and RMSE
//! tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmae::{estimate_from_grids, CmvEstimate, DEFAULT_SPEED_CAP};
use crate::error::{Error, Result};
use crate::fleet::{penetration_subset, ShadowMask, TrajectoryDataset};
use crate::fractal_field::ClearSkyField;
use crate::gridding::{grid_series, GridSpec, DEFAULT_NEIGHBORS};
use crate::transit::{draw_truth, is_valid_event, run_transit, MotionTruth, TransitConfig, MAX_DRAW_SPEED};

/// Root mean square of `errors`.
pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InsufficientData("RMSE of an empty sample".into()));
    }
    let ss: f64 = errors.iter().map(|e| e * e).sum();
    Ok((ss / errors.len() as f64).sqrt())
}

/// Signed angular difference `est - truth` wrapped to (-180, 180].
pub fn direction_error(truth_deg: f64, est_deg: f64) -> f64 {
    let e = (est_deg - truth_deg).rem_euclid(360.0);
    if e > 180.0 {
        e - 360.0
    } else {
        e
    }
}

/// Sensor network a campaign runs on.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub fleet: TrajectoryDataset,
    pub mask: Option<ShadowMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub n_simulations: usize,
    pub base_seed: u64,
    pub dmin_list: Vec<f64>,
    pub timestep_list: Vec<u32>,
    pub pr_list: Vec<f64>,
    pub duration_s: u32,
    pub sampling_period_s: u32,
    pub k_neighbors: usize,
    pub v_cap: f64,
    pub min_variability_s: u32,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            n_simulations: 100,
            base_seed: 0,
            dmin_list: vec![10.0],
            timestep_list: vec![10],
            pr_list: vec![1.0],
            duration_s: 300,
            sampling_period_s: 1,
            k_neighbors: DEFAULT_NEIGHBORS,
            v_cap: DEFAULT_SPEED_CAP,
            min_variability_s: 60,
        }
    }
}

impl CampaignConfig {
    pub fn transit(&self) -> TransitConfig {
        TransitConfig {
            duration_s: self.duration_s,
            sampling_period_s: self.sampling_period_s,
            ..TransitConfig::default()
        }
    }

    /// Checks sweep consistency against the observation area.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_simulations == 0 {
            problems.push("n_simulations must be at least 1".to_string());
        }
        if self.dmin_list.is_empty() || self.timestep_list.is_empty() || self.pr_list.is_empty() {
            problems.push("dmin, time step and penetration lists must be non-empty".into());
        }
        if let Err(e) = self.transit().validate() {
            problems.push(e.to_string());
        }
        if self.k_neighbors == 0 {
            problems.push("k_neighbors must be at least 1".into());
        }
        if self.v_cap.is_nan() || self.v_cap <= 0.0 {
            problems.push("v_cap must be positive".into());
        }
        let b = scenario.fleet.bounds();
        let max_step = b.width().min(b.height()) / MAX_DRAW_SPEED;
        for &ts in &self.timestep_list {
            if ts == 0 || self.sampling_period_s == 0 || ts % self.sampling_period_s != 0 {
                problems.push(format!(
                    "time step {ts} s is not a positive multiple of the {} s sampling period",
                    self.sampling_period_s
                ));
            } else if ts as f64 > max_step {
                problems.push(format!(
                    "time step {ts} s exceeds shorter side / {MAX_DRAW_SPEED} m/s = {max_step:.1} s"
                ));
            }
        }
        for &d in &self.dmin_list {
            if !(d.is_finite() && d > 0.0) {
                problems.push(format!("grid spacing {d} must be positive"));
            }
        }
        for &pr in &self.pr_list {
            if !(pr > 0.0 && pr <= 1.0) {
                problems.push(format!("penetration rate {pr} outside (0, 1]"));
            }
        }
        if scenario.fleet.duration_s() < self.duration_s {
            problems.push(format!(
                "trajectories span {} s, transits need {} s",
                scenario.fleet.duration_s(),
                self.duration_s
            ));
        }
        match problems.len() {
            0 => Ok(()),
            1 => Err(Error::Config(problems.remove(0))),
            _ => Err(Error::Config(problems.join("; "))),
        }
    }
}

/// Outcome of one simulation in one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitResult {
    pub sim: usize,
    pub truth: MotionTruth,
    pub estimate: CmvEstimate,
    pub valid_event: bool,
    pub active_vehicle_median: usize,
    /// Estimate within one displacement quantum of the speed cap.
    pub capped: bool,
}

impl TransitResult {
    /// Counted toward the cell RMSE.
    pub fn scored(&self) -> bool {
        self.valid_event && self.estimate.valid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub dmin: f64,
    pub timestep: u32,
    pub pr: f64,
    pub n_valid: usize,
    /// `None` when no simulation of the cell could be scored.
    pub rmse_speed: Option<f64>,
    pub rmse_direction: Option<f64>,
    pub scatter: Vec<TransitResult>,
}

/// Per-simulation facts shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventSummary {
    pub sim: usize,
    pub truth: MotionTruth,
    pub valid_event: bool,
    pub active_vehicle_median: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignResult {
    pub n_simulations: usize,
    pub events: Vec<EventSummary>,
    pub cells: Vec<CellResult>,
}

impl CampaignResult {
    pub fn cell(&self, dmin: f64, timestep: u32, pr: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.dmin == dmin && c.timestep == timestep && c.pr == pr)
    }

    pub fn valid_events(&self) -> usize {
        self.events.iter().filter(|e| e.valid_event).count()
    }
}

/// Seed of the penetration draw for simulation `sim`.
fn subset_seed(base_seed: u64, sim: usize) -> u64 {
    base_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(sim as u64)
        ^ 0x5EED_F1EE_7000_0000
}

struct SimOutcome {
    summary: EventSummary,
    // indexed like `cells` in the campaign result
    estimates: Vec<CmvEstimate>,
}

fn simulate(
    cfg: &CampaignConfig,
    scenario: &Scenario,
    field: &ClearSkyField,
    sim: usize,
) -> Result<SimOutcome> {
    let truth = draw_truth(cfg.base_seed.wrapping_add(sim as u64));
    let series = run_transit(field, &scenario.fleet, scenario.mask.as_ref(), &truth, &cfg.transit())?;
    let bounds = scenario.fleet.bounds();
    let valid_event = is_valid_event(&series, &bounds, cfg.min_variability_s);
    let mut counts: Vec<usize> = series.snapshots.iter().map(|s| s.sensors.len()).collect();
    counts.sort_unstable();
    let active_vehicle_median = counts[(counts.len() - 1) / 2];

    let n_ids = scenario.fleet.ids().len();
    let specs = cfg
        .dmin_list
        .iter()
        .map(|&d| GridSpec::new(bounds, d))
        .collect::<Result<Vec<_>>>()?;

    // cell order: dmin, then time step, then penetration rate
    let mut estimates = vec![CmvEstimate::invalid(); cfg.dmin_list.len() * cfg.timestep_list.len() * cfg.pr_list.len()];
    for (pi, &pr) in cfg.pr_list.iter().enumerate() {
        let keep = penetration_subset(n_ids, pr, subset_seed(cfg.base_seed, sim))?;
        let sub = series.retain_vehicles(&keep);
        for (di, spec) in specs.iter().enumerate() {
            let grids = grid_series(&sub, spec, cfg.k_neighbors);
            for (ti, &ts) in cfg.timestep_list.iter().enumerate() {
                let idx = (di * cfg.timestep_list.len() + ti) * cfg.pr_list.len() + pi;
                estimates[idx] = estimate_from_grids(&grids, ts, spec.dmin(), cfg.v_cap);
            }
        }
    }

    Ok(SimOutcome {
        summary: EventSummary {
            sim,
            truth,
            valid_event,
            active_vehicle_median,
        },
        estimates,
    })
}

/// Runs every simulation against every sweep cell.
///
/// Truth draws depend only on `base_seed` and the simulation index, so all
/// cells see the same events. Simulations run on up to `jobs` threads; the
/// result is assembled in simulation order and does not depend on `jobs`.
pub fn run_campaign(
    cfg: &CampaignConfig,
    scenario: &Scenario,
    field: &ClearSkyField,
    jobs: usize,
) -> Result<CampaignResult> {
    cfg.validate(scenario)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<SimOutcome> = pool.install(|| {
        (0..cfg.n_simulations)
            .into_par_iter()
            .map(|sim| simulate(cfg, scenario, field, sim))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut cells = Vec::new();
    for &dmin in &cfg.dmin_list {
        for &timestep in &cfg.timestep_list {
            for &pr in &cfg.pr_list {
                let idx = cells.len();
                let quantum = dmin / timestep as f64;
                let scatter: Vec<TransitResult> = outcomes
                    .iter()
                    .map(|o| {
                        let est = o.estimates[idx].clone();
                        TransitResult {
                            sim: o.summary.sim,
                            truth: o.summary.truth,
                            capped: est.valid && est.speed >= cfg.v_cap - quantum,
                            estimate: est,
                            valid_event: o.summary.valid_event,
                            active_vehicle_median: o.summary.active_vehicle_median,
                        }
                    })
                    .collect();
                cells.push(aggregate(dmin, timestep, pr, scatter));
            }
        }
    }

    Ok(CampaignResult {
        n_simulations: cfg.n_simulations,
        events: outcomes.into_iter().map(|o| o.summary).collect(),
        cells,
    })
}

fn aggregate(dmin: f64, timestep: u32, pr: f64, scatter: Vec<TransitResult>) -> CellResult {
    let scored: Vec<&TransitResult> = scatter.iter().filter(|r| r.scored()).collect();
    let speed_err: Vec<f64> = scored.iter().map(|r| r.estimate.speed - r.truth.speed).collect();
    let dir_err: Vec<f64> = scored
        .iter()
        .map(|r| direction_error(r.truth.direction_deg, r.estimate.direction_deg))
        .collect();
    CellResult {
        dmin,
        timestep,
        pr,
        n_valid: scored.len(),
        rmse_speed: rmse(&speed_err).ok(),
        rmse_direction: rmse(&dir_err).ok(),
        scatter,
    }
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_default()
}

fn fmt_num(v: f64) -> String {
    // shortest round-trip form keeps 10 and 0.4 readable
    format!("{v}")
}

/// Name of the scatter file of one cell.
pub fn scatter_file_name(cell: &CellResult) -> String {
    format!(
        "scatter_dmin{}_ts{}_pr{}.csv",
        fmt_num(cell.dmin),
        cell.timestep,
        fmt_num(cell.pr)
    )
}

pub fn results_csv(result: &CampaignResult) -> String {
    let mut out = String::from("dmin,timestep,pr,n_valid,rmse_speed_mps,rmse_direction_deg\n");
    for c in &result.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_num(c.dmin),
            c.timestep,
            fmt_num(c.pr),
            c.n_valid,
            fmt_opt(c.rmse_speed, 4),
            fmt_opt(c.rmse_direction, 4)
        );
    }
    out
}

pub fn scatter_csv(cell: &CellResult) -> String {
    let mut out = String::from("sim,truth_speed,truth_dir,est_speed,est_dir,valid_event,capped\n");
    for r in &cell.scatter {
        let (es, ed) = if r.estimate.valid {
            (format!("{:.4}", r.estimate.speed), format!("{:.4}", r.estimate.direction_deg))
        } else {
            (String::new(), String::new())
        };
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{},{},{},{}",
            r.sim, r.truth.speed, r.truth.direction_deg, es, ed, r.valid_event, r.capped
        );
    }
    out
}

/// Writes `results.csv` and one scatter file per cell; returns the paths.
pub fn write_results(result: &CampaignResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join("results.csv");
    fs::write(&path, results_csv(result)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    for cell in &result.cells {
        let path = dir.join(scatter_file_name(cell));
        fs::write(&path, scatter_csv(cell)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, -4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((rmse(&[3.0, -4.0]).unwrap() - 3.5355).abs() < 1e-4);
        assert!((rmse(&[-2.5; 7]).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(rmse(&[]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn direction_wrapping() {
        assert_eq!(direction_error(350.0, 10.0), 20.0);
        assert_eq!(direction_error(10.0, 350.0), -20.0);
        assert_eq!(direction_error(123.4, 123.4), 0.0);
        assert_eq!(direction_error(0.0, 180.0), 180.0);
        assert_eq!(direction_error(180.0, 0.0), 180.0);
        assert_eq!(direction_error(90.0, 271.0), -179.0);
    }

    #[test]
    fn empty_cells_render_blank() {
        let cell = aggregate(10.0, 10, 0.4, vec![]);
        assert_eq!(cell.n_valid, 0);
        assert!(cell.rmse_speed.is_none());
        let r = CampaignResult {
            n_simulations: 0,
            events: vec![],
            cells: vec![cell],
        };
        assert_eq!(
            results_csv(&r),
            "dmin,timestep,pr,n_valid,rmse_speed_mps,rmse_direction_deg\n10,10,0.4,0,,\n"
        );
        assert_eq!(scatter_file_name(&r.cells[0]), "scatter_dmin10_ts10_pr0.4.csv");
    }
}
