use std::path::PathBuf;

use clap::Args;
use lpbf_thermal::datastore;
use lpbf_thermal::ident::{identify_build, GaConfig, ParamBounds};
use lpbf_thermal::Result;
use log::info;
use serde::Deserialize;

use crate::config;

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyArgs {
    /// JSON config file whose keys mirror these flags
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Dataset directory to fit against
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Model integration step (s) (default 0.1)
    #[arg(long)]
    pub dt: Option<f64>,

    /// Bounds JSON file overriding the default search box
    #[arg(long)]
    pub bounds: Option<PathBuf>,

    /// Include c5 in the identified vector (default off)
    #[arg(long)]
    #[serde(default)]
    pub with_c5: bool,

    /// GA population size (default 50)
    #[arg(long)]
    pub population: Option<usize>,

    /// GA generation count (default 100)
    #[arg(long)]
    pub generations: Option<usize>,

    /// GA crossover fraction (default 0.8)
    #[arg(long)]
    pub crossover: Option<f64>,

    /// GA per-gene mutation rate (default 0.1)
    #[arg(long)]
    pub mutation: Option<f64>,

    /// GA elite count (default 2)
    #[arg(long)]
    pub elite: Option<usize>,

    /// GA random seed (default 42)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for params.json and rmse_rom.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn merge_args(cli: IdentifyArgs) -> Result<IdentifyArgs> {
    let Some(path) = cli.config.as_ref() else {
        return Ok(cli);
    };
    let file: IdentifyArgs = config::load(path)?;
    Ok(IdentifyArgs {
        config: None,
        dataset: config::merge(cli.dataset, file.dataset),
        dt: config::merge(cli.dt, file.dt),
        bounds: config::merge(cli.bounds, file.bounds),
        with_c5: cli.with_c5 || file.with_c5,
        population: config::merge(cli.population, file.population),
        generations: config::merge(cli.generations, file.generations),
        crossover: config::merge(cli.crossover, file.crossover),
        mutation: config::merge(cli.mutation, file.mutation),
        elite: config::merge(cli.elite, file.elite),
        seed: config::merge(cli.seed, file.seed),
        out: config::merge(cli.out, file.out),
    })
}

pub fn run(args: IdentifyArgs) -> Result<()> {
    let args = merge_args(args)?;
    let dataset_dir = config::require(args.dataset.clone(), "dataset")?;
    let out = config::require(args.out.clone(), "out")?;

    let dataset = datastore::ingest(&dataset_dir)?;
    let schedule = dataset.build_schedule(Some(args.dt.unwrap_or(0.1)))?;

    let mut bounds = match &args.bounds {
        Some(path) => config::load::<ParamBounds>(path)?,
        None => ParamBounds::default(),
    };
    if args.with_c5 && bounds.c5.is_none() {
        bounds = bounds.with_c5();
    }
    bounds.validate()?;

    let defaults = GaConfig::default();
    let ga = GaConfig {
        population: args.population.unwrap_or(defaults.population),
        generations: args.generations.unwrap_or(defaults.generations),
        crossover_fraction: args.crossover.unwrap_or(defaults.crossover_fraction),
        mutation_rate: args.mutation.unwrap_or(defaults.mutation_rate),
        elite: args.elite.unwrap_or(defaults.elite),
        seed: args.seed.unwrap_or(defaults.seed),
        warm_start: defaults.warm_start,
    };

    info!(
        "identifying {} epochs on '{}'",
        schedule.n_layers(),
        dataset.manifest.name
    );
    let result = identify_build(&dataset.trace, &schedule, &bounds, &ga)?;

    std::fs::create_dir_all(&out)
        .map_err(|e| lpbf_thermal::Error::Io {
            path: out.display().to_string(),
            source: e,
        })?;
    let params_path = out.join("params.json");
    datastore::write_param_schedule(&params_path, &result.schedule)?;
    let rmse_path = out.join("rmse_rom.csv");
    datastore::write_rom_rmse_table(&rmse_path, &result.per_layer_rmse)?;

    crate::outln!("parameter schedule written to {}", params_path.display());
    crate::outln!("per-layer ROM RMSE written to {}", rmse_path.display());
    crate::outln!("epoch  c1        c2     c3          c4          fit_rmse_c");
    for e in &result.epochs {
        crate::outln!(
            "{:>5}  {:<9.1} {:<6.3} {:<11.1} {:<11.1} {:.3}",
            e.epoch, e.params.c1, e.params.c2, e.params.c3, e.params.c4, e.fit_rmse
        );
    }
    Ok(())
}
