//! Effective-parameter identification by genetic search.
//!
//! For every build epoch the coefficients are re-identified by minimizing the
//! RMSE between the epoch's reduced-order simulation and the ground-truth
//! trace, with the epoch's initial temperatures anchored to the truth. The
//! search is a small real-coded genetic algorithm with elitism; one member of
//! the initial population is seeded at the midpoint of the bounds, which acts
//! as a neutral warm start and keeps bounded self-consistency fits exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rom::{integrate_window, BuildSchedule, LayerParams, ParamSchedule};
use crate::trace::{ThermalTrace, TraceKind};

/// Box constraints on the identified coefficients.
///
/// The default `c3` range spans both signs: published identified values sit
/// on the negative branch, while the positive branch is the only one that
/// lets a single top layer shed heat downward, so epoch 1 stays fittable.
/// `c5` joins the parameter vector only when its bounds are present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub c1: (f64, f64),
    pub c2: (f64, f64),
    pub c3: (f64, f64),
    pub c4: (f64, f64),
    pub c5: Option<(f64, f64)>,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            c1: (5e3, 2e4),
            c2: (0.5, 2.0),
            c3: (-5e4, 5e4),
            c4: (1e3, 5e4),
            c5: None,
        }
    }
}

impl ParamBounds {
    /// Bounds of `frac` relative half-width centred on `p` (e.g. 0.5 for
    /// ±50%). `c5` bounds are included only when `with_c5` is set.
    pub fn around(p: &LayerParams, frac: f64, with_c5: bool) -> Self {
        let pair = |v: f64| -> (f64, f64) {
            let (a, b) = (v * (1.0 - frac), v * (1.0 + frac));
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        };
        ParamBounds {
            c1: pair(p.c1),
            c2: pair(p.c2),
            c3: pair(p.c3),
            c4: pair(p.c4),
            c5: with_c5.then(|| pair(p.c5)),
        }
    }

    /// Enables the default `c5` search range.
    pub fn with_c5(mut self) -> Self {
        self.c5 = Some((0.0, 5e4));
        self
    }

    pub fn dim(&self) -> usize {
        if self.c5.is_some() {
            5
        } else {
            4
        }
    }

    fn as_vecs(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.c1.0, self.c2.0, self.c3.0, self.c4.0];
        let mut hi = vec![self.c1.1, self.c2.1, self.c3.1, self.c4.1];
        if let Some((a, b)) = self.c5 {
            lo.push(a);
            hi.push(b);
        }
        (lo, hi)
    }

    fn decode(&self, genes: &[f64]) -> Result<LayerParams> {
        LayerParams::new(
            genes[0],
            genes[1],
            genes[2],
            genes[3],
            if self.c5.is_some() { genes[4] } else { 0.0 },
        )
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
        ];
        for (name, (lo, hi)) in pairs
            .into_iter()
            .chain(self.c5.map(|p| ("c5", p)))
        {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidParams(format!(
                    "infeasible {name} bounds [{lo}, {hi}]"
                )));
            }
        }
        if self.c1.0 <= 0.0 || self.c2.0 <= 0.0 {
            return Err(Error::InvalidParams(
                "c1 and c2 lower bounds must be positive".into(),
            ));
        }
        if let Some((lo, _)) = self.c5 {
            if lo < 0.0 {
                return Err(Error::InvalidParams(
                    "c5 lower bound must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Knobs of the genetic search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_fraction: f64,
    pub mutation_rate: f64,
    pub elite: usize,
    pub seed: u64,
    /// Seed one individual at the midpoint of the bounds.
    pub warm_start: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 50,
            generations: 100,
            crossover_fraction: 0.8,
            mutation_rate: 0.1,
            elite: 2,
            seed: 42,
            warm_start: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::InvalidParams(format!(
                "population must be at least 4 (got {})",
                self.population
            )));
        }
        if self.generations < 1 {
            return Err(Error::InvalidParams("generations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_fraction)
            || !(0.0..=1.0).contains(&self.mutation_rate)
        {
            return Err(Error::InvalidParams(
                "crossover fraction and mutation rate must lie in [0, 1]".into(),
            ));
        }
        if self.elite >= self.population {
            return Err(Error::InvalidParams(
                "elite count must be below the population size".into(),
            ));
        }
        Ok(())
    }
}

/// Root-mean-square difference between two traces over their overlapping
/// span, evaluated on the merged sample grid with linear interpolation, so
/// the result is symmetric in its arguments.
pub fn rmse(a: &ThermalTrace, b: &ThermalTrace) -> Result<f64> {
    let times = a.common_times(b);
    let mut sum = 0.0;
    let mut count = 0usize;
    for &t in &times {
        let mut layer = 1usize;
        while let (Some(va), Some(vb)) = (a.sample_layer(layer, t), b.sample_layer(layer, t)) {
            let d = va - vb;
            sum += d * d;
            count += 1;
            layer += 1;
        }
    }
    if count == 0 {
        return Err(Error::MissingData(
            "traces share no samples to compare".into(),
        ));
    }
    Ok((sum / count as f64).sqrt())
}

/// Outcome of one epoch identification.
#[derive(Debug, Clone)]
pub struct IdentifiedEpoch {
    pub epoch: usize,
    pub params: LayerParams,
    /// RMSE of the epoch simulation under the returned parameters.
    pub fit_rmse: f64,
    /// Best RMSE present in the initial population, for monotonicity checks.
    pub initial_rmse: f64,
}

/// Identifies one epoch's parameters against the truth segment covering it.
pub fn identify_epoch(
    truth: &ThermalTrace,
    epoch: usize,
    schedule: &BuildSchedule,
    bounds: &ParamBounds,
    ga: &GaConfig,
) -> Result<IdentifiedEpoch> {
    schedule.validate()?;
    bounds.validate()?;
    ga.validate()?;
    if epoch == 0 || epoch > schedule.n_layers() {
        return Err(Error::InvalidSchedule(format!(
            "epoch {epoch} outside 1..={}",
            schedule.n_layers()
        )));
    }
    let (start, end) = schedule.epoch_window(epoch);
    let n_window_samples = truth
        .times()
        .iter()
        .filter(|&&t| t >= start && t <= end)
        .count();
    if n_window_samples < 10 {
        return Err(Error::MissingData(format!(
            "epoch {epoch} window [{start}, {end}] s holds only {n_window_samples} truth samples"
        )));
    }

    // Initial temperatures: truth at the window start for layers already
    // printed, the scheduled peak for the epoch's own layer.
    let slack = schedule.dt;
    let mut init = Vec::with_capacity(epoch);
    for layer in 1..epoch {
        let v = truth
            .sample_layer_clamped(layer, start, slack)
            .ok_or_else(|| {
                Error::MissingData(format!(
                    "truth has no value for layer {layer} at epoch {epoch} start"
                ))
            })?;
        init.push(v);
    }
    init.push(schedule.t_mp[epoch - 1]);

    // Resample the truth onto the epoch's own integration grid once, so the
    // search loop compares samples by index instead of interpolating.
    let dt = schedule.dt;
    let grid_steps = (((end - start) / dt) + 1e-9).floor() as usize;
    let mut truth_grid: Vec<Vec<f64>> = Vec::with_capacity(grid_steps + 1);
    for i in 0..=grid_steps {
        let t = start + i as f64 * dt;
        let mut row = Vec::with_capacity(epoch);
        for layer in 1..=epoch {
            row.push(truth.sample_layer_clamped(layer, t, slack).ok_or_else(|| {
                Error::MissingData(format!(
                    "truth has no value for layer {layer} at t = {t} s in epoch {epoch}"
                ))
            })?);
        }
        truth_grid.push(row);
    }

    let fitness = |genes: &[f64]| -> f64 {
        let Ok(p) = bounds.decode(genes) else {
            return f64::INFINITY;
        };
        // Identified parameters also feed the diagonal state-space models of
        // the filter, so candidates whose discrete pole leaves the unit
        // circle at this sample rate are rejected outright.
        if (1.0 + dt * p.beta_c()).abs() >= 1.0 {
            return f64::INFINITY;
        }
        let params = ParamSchedule::constant(epoch, p);
        let sim = integrate_window(
            &init,
            start,
            end,
            epoch,
            &params,
            schedule.t_base,
            schedule.t_ambient,
            dt,
            TraceKind::Rom,
        );
        let Ok(sim) = sim else {
            return f64::INFINITY;
        };
        if sim.len() != truth_grid.len() {
            return f64::INFINITY;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for (row, sim_row) in truth_grid.iter().zip(sim.temps()) {
            for (tv, sv) in row.iter().zip(sim_row) {
                let d = sv - tv;
                sum += d * d;
                count += 1;
            }
        }
        let v = (sum / count as f64).sqrt();
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let outcome = run_ga(bounds, ga, fitness)?;
    if !outcome.best_fitness.is_finite() {
        return Err(Error::Solver(format!(
            "no parameter set within the bounds yields a stable, finite fit for epoch {epoch}"
        )));
    }
    Ok(IdentifiedEpoch {
        epoch,
        params: bounds.decode(&outcome.best_genes)?,
        fit_rmse: outcome.best_fitness,
        initial_rmse: outcome.initial_best_fitness,
    })
}

/// Per-layer RMSE row of the identification report.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LayerRmse {
    pub layer: usize,
    pub rmse_c: f64,
}

/// Identification result over a whole build.
#[derive(Debug, Clone)]
pub struct IdentifiedBuild {
    pub schedule: ParamSchedule,
    pub epochs: Vec<IdentifiedEpoch>,
    /// RMSE of the fully re-simulated build against the truth, one row per
    /// layer over that layer's own build window.
    pub per_layer_rmse: Vec<LayerRmse>,
}

/// Runs [`identify_epoch`] over every epoch and reports per-layer errors of
/// the re-simulated build.
pub fn identify_build(
    truth: &ThermalTrace,
    schedule: &BuildSchedule,
    bounds: &ParamBounds,
    ga: &GaConfig,
) -> Result<IdentifiedBuild> {
    let n = schedule.n_layers();
    let mut epochs = Vec::with_capacity(n);
    for epoch in 1..=n {
        // Decorrelate the per-epoch searches while keeping the whole run a
        // pure function of the configured seed.
        let ga_epoch = GaConfig {
            seed: ga.seed.wrapping_add(epoch as u64),
            ..*ga
        };
        epochs.push(identify_epoch(truth, epoch, schedule, bounds, &ga_epoch)?);
    }
    let params = ParamSchedule::uniform(epochs.iter().map(|e| e.params).collect());
    let resim = crate::rom::integrate_build(schedule, &params)?;
    let mut per_layer_rmse = Vec::with_capacity(n);
    for layer in 1..=n {
        let (start, end) = schedule.epoch_window(layer);
        let sim_seg = resim.layer_segment(layer, start, end)?;
        let truth_seg = truth.layer_segment(layer, start, end)?;
        per_layer_rmse.push(LayerRmse {
            layer,
            rmse_c: rmse(&sim_seg, &truth_seg)?,
        });
    }
    Ok(IdentifiedBuild {
        schedule: params,
        epochs,
        per_layer_rmse,
    })
}

struct GaOutcome {
    best_genes: Vec<f64>,
    best_fitness: f64,
    initial_best_fitness: f64,
}

fn run_ga(
    bounds: &ParamBounds,
    cfg: &GaConfig,
    fitness: impl Fn(&[f64]) -> f64,
) -> Result<GaOutcome> {
    let (lo, hi) = bounds.as_vecs();
    let dim = lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let sample_uniform = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|g| rng.gen_range(lo[g]..=hi[g])).collect()
    };

    let mut pop: Vec<Vec<f64>> = Vec::with_capacity(cfg.population);
    if cfg.warm_start {
        pop.push((0..dim).map(|g| 0.5 * (lo[g] + hi[g])).collect());
    }
    while pop.len() < cfg.population {
        pop.push(sample_uniform(&mut rng));
    }
    let mut fit: Vec<f64> = pop.iter().map(|g| fitness(g)).collect();
    sort_population(&mut pop, &mut fit);
    let initial_best_fitness = fit[0];

    for _ in 0..cfg.generations {
        if fit[0] == 0.0 {
            break;
        }
        let mut next: Vec<Vec<f64>> = pop[..cfg.elite].to_vec();
        while next.len() < cfg.population {
            let child = if rng.gen::<f64>() < cfg.crossover_fraction {
                let a = tournament(&fit, &mut rng);
                let b = tournament(&fit, &mut rng);
                crossover(&pop[a], &pop[b], &mut rng)
            } else {
                pop[tournament(&fit, &mut rng)].clone()
            };
            next.push(mutate(child, &lo, &hi, cfg.mutation_rate, &mut rng));
        }
        let mut next_fit: Vec<f64> = next.iter().map(|g| fitness(g)).collect();
        sort_population(&mut next, &mut next_fit);
        pop = next;
        fit = next_fit;
    }

    Ok(GaOutcome {
        best_genes: pop[0].clone(),
        best_fitness: fit[0],
        initial_best_fitness,
    })
}

fn sort_population(pop: &mut [Vec<f64>], fit: &mut [f64]) {
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&i, &j| fit[i].partial_cmp(&fit[j]).unwrap_or(std::cmp::Ordering::Equal));
    let sorted_pop: Vec<Vec<f64>> = order.iter().map(|&i| pop[i].clone()).collect();
    let sorted_fit: Vec<f64> = order.iter().map(|&i| fit[i]).collect();
    pop.clone_from_slice(&sorted_pop);
    fit.copy_from_slice(&sorted_fit);
}

fn tournament(fit: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let a = rng.gen_range(0..fit.len());
    let b = rng.gen_range(0..fit.len());
    if fit[a] <= fit[b] {
        a
    } else {
        b
    }
}

fn crossover(a: &[f64], b: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let w = rng.gen::<f64>();
            w * x + (1.0 - w) * y
        })
        .collect()
}

fn mutate(
    mut genes: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    for (g, gene) in genes.iter_mut().enumerate() {
        if rng.gen::<f64>() < rate {
            let span = hi[g] - lo[g];
            *gene += (rng.gen::<f64>() - 0.5) * 0.3 * span;
        }
        *gene = gene.clamp(lo[g], hi[g]);
    }
    genes
}
