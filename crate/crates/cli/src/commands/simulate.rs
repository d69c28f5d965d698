use std::path::PathBuf;

use clap::Args;
use lpbf_thermal::datastore;
use lpbf_thermal::oracle::{
    simulate_fd, GeometryMaterialSpec, ProcessSpec, Scheme, SolverConfig,
};
use lpbf_thermal::{Error, Result};
use log::info;
use serde::Deserialize;

use crate::config;

/// Part side lengths of the bundled presets (mm).
const PRESETS: [(&str, f64); 3] = [("dataset1", 0.2), ("dataset2", 0.8), ("dataset3", 0.4)];

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// JSON config file whose keys mirror these flags
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Named setup: dataset1 (0.2 mm), dataset2 (0.8 mm) or dataset3 (0.4 mm)
    #[arg(long, conflicts_with = "side_mm")]
    pub preset: Option<String>,

    /// Part square side (mm)
    #[arg(long)]
    pub side_mm: Option<f64>,

    /// Number of layers (default 10)
    #[arg(long)]
    pub layers: Option<usize>,

    /// Pause between depositions (s) (default 200)
    #[arg(long)]
    pub dwell_s: Option<f64>,

    /// Laser power (W) (default 142)
    #[arg(long)]
    pub power_w: Option<f64>,

    /// Absorptivity (default 0.4)
    #[arg(long)]
    pub absorptivity: Option<f64>,

    /// Scan speed (mm/s) (default 960)
    #[arg(long)]
    pub scan_mm_s: Option<f64>,

    /// Hatch spacing (mm) (default 0.1)
    #[arg(long)]
    pub hatch_mm: Option<f64>,

    /// Ambient and base-plate temperature (°C) (default 27)
    #[arg(long)]
    pub ambient_c: Option<f64>,

    /// Time scheme: implicit (default) or explicit
    #[arg(long)]
    pub scheme: Option<String>,

    /// Relaxation-phase solver step (s) (default 0.1 implicit, stability
    /// limit explicit)
    #[arg(long)]
    pub fd_dt: Option<f64>,

    /// Trace sample rate (Hz) (default 10)
    #[arg(long)]
    pub sample_rate: Option<f64>,

    /// Dataset name recorded in the manifest (default preset name or "custom")
    #[arg(long)]
    pub name: Option<String>,

    /// Seed recorded in the manifest (the solver itself is deterministic)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output dataset directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn merge_args(cli: SimulateArgs) -> Result<SimulateArgs> {
    let Some(path) = cli.config.as_ref() else {
        return Ok(cli);
    };
    let file: SimulateArgs = config::load(path)?;
    Ok(SimulateArgs {
        config: None,
        preset: config::merge(cli.preset, file.preset),
        side_mm: config::merge(cli.side_mm, file.side_mm),
        layers: config::merge(cli.layers, file.layers),
        dwell_s: config::merge(cli.dwell_s, file.dwell_s),
        power_w: config::merge(cli.power_w, file.power_w),
        absorptivity: config::merge(cli.absorptivity, file.absorptivity),
        scan_mm_s: config::merge(cli.scan_mm_s, file.scan_mm_s),
        hatch_mm: config::merge(cli.hatch_mm, file.hatch_mm),
        ambient_c: config::merge(cli.ambient_c, file.ambient_c),
        scheme: config::merge(cli.scheme, file.scheme),
        fd_dt: config::merge(cli.fd_dt, file.fd_dt),
        sample_rate: config::merge(cli.sample_rate, file.sample_rate),
        name: config::merge(cli.name, file.name),
        seed: config::merge(cli.seed, file.seed),
        out: config::merge(cli.out, file.out),
    })
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let args = merge_args(args)?;
    let out = config::require(args.out.clone(), "out")?;

    let (default_name, side_mm) = match (&args.preset, args.side_mm) {
        (Some(p), None) => {
            let side = PRESETS
                .iter()
                .find(|(name, _)| name == p)
                .map(|(_, side)| *side)
                .ok_or_else(|| {
                    Error::InvalidParams(format!(
                        "unknown preset '{p}' (expected dataset1, dataset2 or dataset3)"
                    ))
                })?;
            (p.clone(), side)
        }
        (None, Some(side)) => ("custom".to_string(), side),
        (None, None) => {
            return Err(Error::InvalidParams(
                "either --preset or --side-mm must be given".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let geometry = GeometryMaterialSpec::cube_build(side_mm * 1e-3, args.layers.unwrap_or(10));
    let process = ProcessSpec {
        power_w: args.power_w.unwrap_or(142.0),
        absorptivity: args.absorptivity.unwrap_or(0.4),
        scan_speed_m_per_s: args.scan_mm_s.unwrap_or(960.0) * 1e-3,
        hatch_spacing_m: args.hatch_mm.unwrap_or(0.1) * 1e-3,
        interlayer_dwell_s: args.dwell_s.unwrap_or(200.0),
        ambient_c: args.ambient_c.unwrap_or(27.0),
    };
    let scheme = match args.scheme.as_deref() {
        None | Some("implicit") => Scheme::Implicit,
        Some("explicit") => Scheme::Explicit,
        Some(other) => {
            return Err(Error::InvalidParams(format!(
                "unknown scheme '{other}' (expected implicit or explicit)"
            )))
        }
    };
    let solver = SolverConfig {
        scheme,
        dt: args.fd_dt.or(match scheme {
            Scheme::Implicit => Some(0.1),
            Scheme::Explicit => None,
        }),
        sample_rate_hz: args.sample_rate.unwrap_or(10.0),
        ..SolverConfig::default()
    };
    let name = args.name.unwrap_or(default_name);
    let seed = args.seed.unwrap_or(42);

    info!("simulating {name}: side {side_mm} mm, {} layers", geometry.n_layers);
    let result = simulate_fd(&geometry, &process, &solver)?;
    let dataset = datastore::export_dataset(&out, &name, &result, &geometry, &process, &solver, seed)?;

    crate::outln!("dataset '{name}' written to {}", dataset.dir.display());
    crate::outln!(
        "energy: injected {:.4} J, max post-heating drift {:.3e} (limit 1e-3)",
        result.energy.injected_j, result.energy.max_rel_drift
    );
    crate::outln!(
        "max-principle excess: {:.3e} °C",
        result
            .energy
            .windows
            .iter()
            .map(|w| w.max_principle_excess.max(w.min_principle_excess))
            .fold(0.0, f64::max)
    );
    for (i, t_mp) in result.schedule.t_mp.iter().enumerate() {
        crate::outln!("  layer {:>2}: peak {:.1} °C", i + 1, t_mp);
    }
    Ok(())
}
