//! TOML run configuration and run manifests.
//!
//! ```toml
//! [field]
//! side_px = 2048
//! pixel_size_m = 5.0
//! seed = 7
//!
//! [scenario]
//! bounds = [0.0, 0.0, 600.0, 900.0]
//! synthetic_vehicles = 100
//!
//! [campaign]
//! n_simulations = 30
//! dmin_list = [10.0]
//! timestep_list = [10]
//! pr_list = [0.4, 1.0]
//! ```
//!
//! Relative paths resolve against the directory of the configuration file.
//! A manifest written by a previous run is itself a valid configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{CampaignConfig, Scenario};
use crate::fleet::{load_trajectories, random_walk_fleet, RandomWalk, ShadowMask};
use crate::fractal_field::{required_field_side, synthesize, ClearSkyField, FieldConfig};
use crate::geom::Bounds;
use crate::raster_io;
use crate::transit::MAX_DRAW_SPEED;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSection {
    #[serde(flatten)]
    pub params: FieldConfig,
    /// Previously exported field to load instead of synthesizing one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// `[min_x, min_y, max_x, max_y]` in meters.
    pub bounds: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<PathBuf>,
    /// Inclusive `[t_start, t_end]` window in trajectory-file seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// Random-walk fleet size when no trajectory file is given.
    pub synthetic_vehicles: usize,
    pub synthetic_seed: u64,
    pub synthetic_min_speed: f64,
    pub synthetic_max_speed: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let walk = RandomWalk::default();
        ScenarioSection {
            bounds: [0.0, 0.0, 600.0, 900.0],
            trajectories: None,
            window: None,
            mask: None,
            synthetic_vehicles: walk.vehicles,
            synthetic_seed: 0,
            synthetic_min_speed: walk.min_speed,
            synthetic_max_speed: walk.max_speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub simulations: usize,
    /// Penetration rate applied before export.
    pub pr: f64,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            simulations: 1,
            pr: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldSection,
    pub scenario: ScenarioSection,
    pub campaign: CampaignConfig,
    pub export: ExportSection,
}

#[derive(Debug, Deserialize)]
struct ManifestShape {
    config: RunConfig,
}

/// A configuration together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub base_dir: PathBuf,
    pub config: RunConfig,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = parse_config(&text).map_err(|message| Error::Parse {
            path: path.to_owned(),
            line: 0,
            message,
        })?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(LoadedConfig {
            path: path.to_owned(),
            base_dir,
            config,
        })
    }

    pub fn from_config(config: RunConfig, base_dir: &Path) -> Self {
        LoadedConfig {
            path: base_dir.join("<inline>"),
            base_dir: base_dir.to_owned(),
            config,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Seeds both the field and the campaign from one value.
    pub fn override_seed(&mut self, seed: u64) {
        self.config.field.params.seed = seed;
        self.config.campaign.base_seed = seed;
    }

    pub fn bounds(&self) -> Result<Bounds> {
        let [a, b, c, d] = self.config.scenario.bounds;
        let bounds = Bounds::new(a, b, c, d);
        if bounds.is_valid() {
            Ok(bounds)
        } else {
            Err(Error::Config(format!("scenario bounds {bounds:?} are degenerate")))
        }
    }

    /// Input files named by the configuration, resolved.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = Vec::new();
        if let Some(p) = &self.config.field.path {
            v.push(self.resolve(p));
            v.push(raster_io::sidecar_path(&self.resolve(p)));
        }
        if let Some(p) = &self.config.scenario.trajectories {
            v.push(self.resolve(p));
        }
        if let Some(p) = &self.config.scenario.mask {
            v.push(self.resolve(p));
            v.push(raster_io::sidecar_path(&self.resolve(p)));
        }
        v
    }

    /// Fails with every missing input listed at once.
    pub fn check_inputs(&self) -> Result<()> {
        let missing: Vec<String> = self
            .inputs()
            .into_iter()
            .filter(|p| !p.is_file())
            .map(|p| format!("missing input {}", p.display()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Multiple(missing))
        }
    }

    pub fn load_scenario(&self) -> Result<Scenario> {
        self.check_inputs()?;
        let bounds = self.bounds()?;
        let sc = &self.config.scenario;
        let fleet = match &sc.trajectories {
            Some(p) => load_trajectories(&self.resolve(p), bounds, sc.window.map(|[a, b]| (a, b)))?,
            None => {
                if sc.synthetic_vehicles == 0 {
                    return Err(Error::Config(
                        "scenario needs a trajectory file or synthetic_vehicles > 0".into(),
                    ));
                }
                random_walk_fleet(
                    bounds,
                    RandomWalk {
                        vehicles: sc.synthetic_vehicles,
                        duration_s: self.config.campaign.duration_s,
                        min_speed: sc.synthetic_min_speed,
                        max_speed: sc.synthetic_max_speed,
                        ..RandomWalk::default()
                    },
                    sc.synthetic_seed,
                )
            }
        };
        let mask = match &sc.mask {
            Some(p) => {
                let m = ShadowMask::load(&self.resolve(p))?;
                let e = m.extent();
                if !(e.contains(bounds.min_x, bounds.min_y) && e.contains(bounds.max_x, bounds.max_y)) {
                    return Err(Error::Config(format!(
                        "shadow mask {e:?} does not cover scenario bounds {bounds:?}"
                    )));
                }
                Some(m)
            }
            None => None,
        };
        Ok(Scenario { fleet, mask })
    }

    pub fn load_field(&self) -> Result<ClearSkyField> {
        match &self.config.field.path {
            Some(p) => raster_io::import_field(&self.resolve(p)),
            None => synthesize(&self.config.field.params),
        }
    }

    /// Rejects fields too small for the fastest drawn transit.
    pub fn check_field_extent(&self) -> Result<()> {
        if self.config.field.path.is_some() {
            return Ok(());
        }
        let bounds = self.bounds()?;
        let need = required_field_side(
            self.config.campaign.duration_s as f64,
            MAX_DRAW_SPEED,
            bounds.diagonal(),
        );
        let f = &self.config.field.params;
        let have = f.side_px as f64 * f.pixel_size_m;
        if have < need {
            return Err(Error::Config(format!(
                "field of {} px x {} m = {have:.0} m is smaller than the {need:.0} m a {} s transit at {MAX_DRAW_SPEED} m/s needs",
                f.side_px, f.pixel_size_m, self.config.campaign.duration_s
            )));
        }
        Ok(())
    }
}

/// Parses either a plain configuration or a run manifest.
pub fn parse_config(text: &str) -> std::result::Result<RunConfig, String> {
    let value: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
    if value.contains_key("config") {
        toml::from_str::<ManifestShape>(text)
            .map(|m| m.config)
            .map_err(|e| e.to_string())
    } else {
        toml::from_str::<RunConfig>(text).map_err(|e| e.to_string())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub config_path: String,
    pub output_dir: String,
    pub field_seed: u64,
    pub campaign_seed: u64,
    /// SHA-256 of every input file, keyed by resolved path.
    pub inputs: BTreeMap<String, String>,
}

/// Everything needed to replay a run; stored as `manifest.toml`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run: RunInfo,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, loaded: &LoadedConfig, out_dir: &Path) -> Result<Self> {
        let mut inputs = BTreeMap::new();
        for p in loaded.inputs() {
            inputs.insert(p.display().to_string(), sha256_file(&p)?);
        }
        // paths are made absolute so the manifest replays from anywhere
        let mut config = loaded.config.clone();
        let absolute = |p: &Path| -> PathBuf {
            let r = loaded.resolve(p);
            fs::canonicalize(&r).unwrap_or(r)
        };
        config.field.path = config.field.path.as_deref().map(absolute);
        config.scenario.trajectories = config.scenario.trajectories.as_deref().map(absolute);
        config.scenario.mask = config.scenario.mask.as_deref().map(absolute);
        Ok(RunManifest {
            run: RunInfo {
                command: command.to_string(),
                config_path: loaded.path.display().to_string(),
                output_dir: out_dir.display().to_string(),
                field_seed: loaded.config.field.params.seed,
                campaign_seed: loaded.config.campaign.base_seed,
                inputs,
            },
            config,
        })
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.toml");
        let text = toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
