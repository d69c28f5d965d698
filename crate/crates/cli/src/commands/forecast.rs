use std::path::PathBuf;

use clap::Args;
use lpbf_thermal::datastore::{self, ReportInputs};
use lpbf_thermal::filter::{self, Covariance, NoiseConfig, RunConfig};
use lpbf_thermal::pseudodata::{fit_triangle, fit_triangle_least_squares, pseudo_feed, PseudoMode};
use lpbf_thermal::rom::models_for_schedule;
use lpbf_thermal::{Error, Result, ThermalTrace};
use log::info;
use serde::Deserialize;

use crate::config;

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastArgs {
    /// JSON config file whose keys mirror these flags
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Dataset directory providing measurements and the build schedule
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Parameter-schedule JSON (output of `identify`)
    #[arg(long)]
    pub params: Option<PathBuf>,

    /// Historical dataset directories for the first-layer profile fit;
    /// repeatable. Falls back to the target dataset itself when omitted.
    #[arg(long)]
    pub historical: Vec<PathBuf>,

    /// Process-noise variance (°C²) (default 2.3)
    #[arg(long)]
    pub sigma_p: Option<f64>,

    /// Measurement-noise variance (°C²) (default 1.0)
    #[arg(long)]
    pub sigma_m: Option<f64>,

    /// Seconds of real measurements per layer epoch (default 70)
    #[arg(long)]
    pub split_time: Option<f64>,

    /// Filter step (s) (default 0.1)
    #[arg(long)]
    pub dt: Option<f64>,

    /// Initial state variance (defaults to sigma-m)
    #[arg(long)]
    pub p0: Option<f64>,

    /// First-layer pseudo-data mode: triangle (default) or literal
    #[arg(long)]
    pub pseudo_mode: Option<String>,

    /// Triangle fit route: features (default) or least-squares
    #[arg(long)]
    pub triangle_fit: Option<String>,

    /// Seed recorded for reproducibility bookkeeping (the run is
    /// deterministic)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for traces, tables, diagnostics and plots
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn merge_args(cli: ForecastArgs) -> Result<ForecastArgs> {
    let Some(path) = cli.config.as_ref() else {
        return Ok(cli);
    };
    let file: ForecastArgs = config::load(path)?;
    Ok(ForecastArgs {
        config: None,
        dataset: config::merge(cli.dataset, file.dataset),
        params: config::merge(cli.params, file.params),
        historical: if cli.historical.is_empty() {
            file.historical
        } else {
            cli.historical
        },
        sigma_p: config::merge(cli.sigma_p, file.sigma_p),
        sigma_m: config::merge(cli.sigma_m, file.sigma_m),
        split_time: config::merge(cli.split_time, file.split_time),
        dt: config::merge(cli.dt, file.dt),
        p0: config::merge(cli.p0, file.p0),
        pseudo_mode: config::merge(cli.pseudo_mode, file.pseudo_mode),
        triangle_fit: config::merge(cli.triangle_fit, file.triangle_fit),
        seed: config::merge(cli.seed, file.seed),
        out: config::merge(cli.out, file.out),
    })
}

pub fn run(args: ForecastArgs) -> Result<()> {
    let args = merge_args(args)?;
    let dataset_dir = config::require(args.dataset.clone(), "dataset")?;
    let params_path = config::require(args.params.clone(), "params")?;
    let out = config::require(args.out.clone(), "out")?;

    let dataset = datastore::ingest(&dataset_dir)?;
    let schedule = dataset.build_schedule(Some(args.dt.unwrap_or(0.1)))?;
    let params = datastore::read_param_schedule(&params_path)?;
    let models = models_for_schedule(&params, schedule.dt)?;

    // First-layer pseudo profile comes from historical builds when given,
    // otherwise from the target's own first layer.
    let mut historical_segments: Vec<ThermalTrace> = Vec::new();
    if args.historical.is_empty() {
        info!("no --historical datasets; fitting the triangle on the target's first layer");
        let (start, end) = dataset.manifest.schedule.epoch_window(1);
        historical_segments.push(dataset.trace.layer_segment(1, start, end)?);
    } else {
        for dir in &args.historical {
            let h = datastore::ingest(dir)?;
            let (start, end) = h.manifest.schedule.epoch_window(1);
            historical_segments.push(h.trace.layer_segment(1, start, end)?);
        }
    }
    let triangle = match args.triangle_fit.as_deref() {
        None | Some("features") => fit_triangle(&historical_segments)?,
        Some("least-squares") => fit_triangle_least_squares(&historical_segments)?,
        Some(other) => {
            return Err(Error::InvalidParams(format!(
                "unknown triangle fit '{other}' (expected features or least-squares)"
            )))
        }
    };
    info!(
        "triangle profile: peak {:.1} °C, settle {:.1} °C, width {:.3} s",
        triangle.t_peak, triangle.t_settle, triangle.t_base_width
    );

    let pseudo_mode = match args.pseudo_mode.as_deref() {
        None | Some("triangle") => PseudoMode::Triangle,
        Some("literal") => PseudoMode::Literal,
        Some(other) => {
            return Err(Error::InvalidParams(format!(
                "unknown pseudo mode '{other}' (expected triangle or literal)"
            )))
        }
    };
    let feed = pseudo_feed(&schedule, &dataset.trace, &triangle, pseudo_mode)?;

    let noise = NoiseConfig::scalar(args.sigma_p.unwrap_or(2.3), args.sigma_m.unwrap_or(1.0));
    let run_config = RunConfig {
        split_time: args.split_time.unwrap_or(70.0),
        p0: args.p0.map(Covariance::Scalar),
        u: None,
    };
    let run = filter::run(&schedule, &models, &dataset.trace, &feed, &noise, &run_config)?;
    let open = filter::open_loop(&schedule, &models, None)?;

    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    datastore::write_trace_csv(&out.join("estimate.csv"), &run.estimate)?;
    datastore::write_trace_csv(&out.join("forecast.csv"), &run.forecast)?;
    datastore::write_trace_csv(&out.join("open_loop.csv"), &open)?;
    datastore::write_trace_csv(&out.join("pseudo.csv"), &feed)?;
    let paths = datastore::report(
        &out,
        &ReportInputs {
            truth: &dataset.trace,
            open_loop: &open,
            run: &run,
            schedule: &schedule,
            split_time: run_config.split_time,
        },
    )?;

    crate::outln!("report written to {}", out.display());
    crate::outln!("per-layer RMSE (own build window) from {}:", paths.rmse_per_layer.display());
    let rom = datastore::per_layer_rmse(
        &open,
        &dataset.trace,
        &schedule,
        datastore::RmseWindow::OwnEpoch,
    )?;
    let kf = datastore::per_layer_rmse(
        &run.combined,
        &dataset.trace,
        &schedule,
        datastore::RmseWindow::OwnEpoch,
    )?;
    crate::outln!("layer  open_loop_rmse_c  kalman_rmse_c");
    for (r, k) in rom.iter().zip(&kf) {
        crate::outln!("{:>5}  {:<16.2} {:.2}", r.layer, r.rmse_c, k.rmse_c);
    }
    Ok(())
}
