//! Batch command line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{LoadedConfig, RunManifest};
use crate::error::{Error, Result};
use crate::evaluation::{run_campaign, write_results, CampaignResult};
use crate::fleet::penetration_subset;
use crate::raster_io;
use crate::transit::{draw_truth, export_series, run_transit};

#[derive(Debug, Parser)]
#[command(name = "shadowcast", version, about = "Cloud-shadow motion estimation from mobile irradiance sensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a clear-sky field and write it as PGM plus sidecar.
    Genfield(CommonArgs),
    /// Run a Monte Carlo campaign and write RMSE tables and scatter files.
    Campaign(CommonArgs),
    /// Write measurement series of individual transits.
    Export(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration or a manifest from a previous run.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory, created if needed.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides the field and campaign seeds.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
}

fn prepare(args: &CommonArgs) -> Result<LoadedConfig> {
    let mut loaded = LoadedConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        loaded.override_seed(seed);
    }
    if args.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    Ok(loaded)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Genfield(a) => cmd_genfield(&a),
        Command::Campaign(a) => cmd_campaign(&a).map(|_| ()),
        Command::Export(a) => cmd_export_series(&a),
    }
}

pub fn cmd_genfield(args: &CommonArgs) -> Result<()> {
    let loaded = prepare(args)?;
    if loaded.config.field.path.is_some() {
        return Err(Error::Config("genfield synthesizes a field; remove field.path".into()));
    }
    let field = loaded.load_field()?;
    let path = args.out.join("field.pgm");
    raster_io::export_field(&field, &path)?;
    let st = field.stats();
    println!(
        "field {}x{} px, {} m/px: k* min {:.4} max {:.4} median {:.4}",
        field.side_px(),
        field.side_px(),
        field.pixel_size_m(),
        st.min,
        st.max,
        st.median
    );
    println!("wrote {}", path.display());
    RunManifest::new("genfield", &loaded, &args.out)?.write(&args.out)?;
    Ok(())
}

pub fn cmd_campaign(args: &CommonArgs) -> Result<CampaignResult> {
    let loaded = prepare(args)?;
    loaded.check_inputs()?;
    loaded.check_field_extent()?;
    let scenario = loaded.load_scenario()?;
    loaded.config.campaign.validate(&scenario)?;
    let field = loaded.load_field()?;
    let result = run_campaign(&loaded.config.campaign, &scenario, &field, args.jobs)?;
    write_results(&result, &args.out)?;
    write_events(&result, &args.out)?;
    RunManifest::new("campaign", &loaded, &args.out)?.write(&args.out)?;

    println!(
        "{} of {} events valid",
        result.valid_events(),
        result.n_simulations
    );
    for c in &result.cells {
        let show = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "dmin {:>5} m  step {:>3} s  pr {:>4}  n {:>4}  rmse {:>8} m/s  {:>8} deg",
            c.dmin,
            c.timestep,
            c.pr,
            c.n_valid,
            show(c.rmse_speed),
            show(c.rmse_direction)
        );
    }
    Ok(result)
}

fn write_events(result: &CampaignResult, dir: &Path) -> Result<()> {
    let mut out = String::from("sim,truth_speed,truth_dir,valid_event,active_vehicle_median\n");
    for e in &result.events {
        out.push_str(&format!(
            "{},{:.4},{:.4},{},{}\n",
            e.sim, e.truth.speed, e.truth.direction_deg, e.valid_event, e.active_vehicle_median
        ));
    }
    let path = dir.join("events.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

pub fn cmd_export_series(args: &CommonArgs) -> Result<()> {
    let loaded = prepare(args)?;
    loaded.check_inputs()?;
    loaded.check_field_extent()?;
    let scenario = loaded.load_scenario()?;
    let field = loaded.load_field()?;
    let cfg = &loaded.config;
    let transit = cfg.campaign.transit();
    let keep = penetration_subset(scenario.fleet.ids().len(), cfg.export.pr, cfg.campaign.base_seed)?;
    for sim in 0..cfg.export.simulations {
        let truth = draw_truth(cfg.campaign.base_seed.wrapping_add(sim as u64));
        let series = run_transit(&field, &scenario.fleet, scenario.mask.as_ref(), &truth, &transit)?
            .retain_vehicles(&keep);
        export_series(&series, &args.out, &format!("series_{sim:04}"))?;
    }
    println!("wrote {} series to {}", cfg.export.simulations, args.out.display());
    RunManifest::new("export", &loaded, &args.out)?.write(&args.out)?;
    Ok(())
}
