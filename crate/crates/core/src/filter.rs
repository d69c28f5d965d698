//! Kalman estimation and forecasting over a growing layer state.
//!
//! The filter runs predict/update cycles on the discrete state-space models
//! from [`crate::rom`], taking the full state as measured (H = I). During the
//! first `split_time` seconds of each layer epoch the update consumes real
//! measurements; afterwards it consumes synthesized pseudo-measurements, which
//! is what turns the same machinery into a forecaster. The gain is formed from
//! the propagated covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rom::{BuildSchedule, DiscreteModel};
use crate::trace::{ThermalTrace, TraceKind};

/// Eigenvalue floor accepted when checking positive semidefiniteness.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Noise covariance given either as `sigma * I` or as a full matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Scalar(f64),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Scalar(s) => Ok(DMatrix::from_diagonal_element(n, n, *s)),
            Covariance::Full(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance is {}x{}, state wants {n}x{n}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(m.clone())
            }
        }
    }

    /// Scalar stand-in used when a single variance is needed (new state
    /// entries). For a full matrix this is its largest diagonal entry.
    pub fn scalar_value(&self) -> f64 {
        match self {
            Covariance::Scalar(s) => *s,
            Covariance::Full(m) => m.diagonal().iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Covariance::Scalar(s) => {
                if !s.is_finite() || *s < 0.0 {
                    return Err(Error::InvalidParams(format!(
                        "noise variance must be finite and >= 0 (got {s})"
                    )));
                }
            }
            Covariance::Full(m) => {
                if m.nrows() != m.ncols() {
                    return Err(Error::DimensionMismatch("covariance must be square".into()));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("noise covariance".into()));
                }
                let asym = (m - m.transpose()).abs().max();
                if asym > 1e-9 * (1.0 + m.abs().max()) {
                    return Err(Error::InvalidParams(
                        "noise covariance must be symmetric".into(),
                    ));
                }
                if min_eigenvalue(m) < -PSD_TOLERANCE {
                    return Err(Error::InvalidParams(
                        "noise covariance must be positive semidefinite".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Process and measurement noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub sigma_p: Covariance,
    pub sigma_m: Covariance,
}

impl NoiseConfig {
    pub fn scalar(sigma_p: f64, sigma_m: f64) -> Self {
        NoiseConfig {
            sigma_p: Covariance::Scalar(sigma_p),
            sigma_m: Covariance::Scalar(sigma_m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sigma_p.validate()?;
        self.sigma_m.validate()
    }
}

impl Default for NoiseConfig {
    /// Empirically tuned defaults: process 2.3, measurement 1.0 \[°C²\].
    fn default() -> Self {
        NoiseConfig::scalar(2.3, 1.0)
    }
}

/// Which feedback signal an update consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Real,
    Pseudo,
}

impl UpdateMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateMode::Real => "real",
            UpdateMode::Pseudo => "pseudo",
        }
    }
}

/// Filter state: current estimate and covariance plus per-update histories.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub estimate: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub gain_history: Vec<DMatrix<f64>>,
    pub mode_history: Vec<UpdateMode>,
}

impl FilterState {
    pub fn new(estimate: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != estimate.len() || covariance.ncols() != estimate.len() {
            return Err(Error::DimensionMismatch(format!(
                "estimate of length {} with covariance {}x{}",
                estimate.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        Ok(FilterState {
            estimate,
            covariance,
            gain_history: Vec::new(),
            mode_history: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.estimate.len()
    }

    /// Time update: advance estimate through the open-loop model and inflate
    /// the covariance by the process noise.
    pub fn predict(&mut self, model: &DiscreteModel, u: f64, noise: &NoiseConfig) -> Result<()> {
        let n = self.dim();
        if model.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "model dimension {} vs state dimension {n}",
                model.dim()
            )));
        }
        let sigma_p = noise.sigma_p.matrix(n)?;
        self.estimate = &model.a * &self.estimate + &model.b * u;
        self.covariance = &model.a * &self.covariance * model.a.transpose() + sigma_p;
        symmetrize(&mut self.covariance);
        Ok(())
    }

    /// Measurement update with a full-state measurement `y`. The gain is
    /// computed from the covariance currently held, i.e. the one propagated
    /// by the preceding [`predict`](Self::predict).
    pub fn update(&mut self, y: &DVector<f64>, noise: &NoiseConfig, mode: UpdateMode) -> Result<()> {
        let n = self.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "measurement of length {} vs state dimension {n}",
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement vector".into()));
        }
        let sigma_m = noise.sigma_m.matrix(n)?;
        let innovation_cov = &self.covariance + sigma_m;
        let inv = innovation_cov
            .try_inverse()
            .ok_or_else(|| Error::Singular("innovation covariance".into()))?;
        let gain = &self.covariance * inv;
        self.estimate = &self.estimate + &gain * (y - &self.estimate);
        self.covariance = (DMatrix::identity(n, n) - &gain) * &self.covariance;
        symmetrize(&mut self.covariance);
        self.gain_history.push(gain);
        self.mode_history.push(mode);
        Ok(())
    }

    /// Appends one state entry for a newly deposited layer.
    fn grow(&mut self, initial: f64, variance: f64) {
        let n = self.dim();
        self.estimate = self.estimate.clone().insert_row(n, initial);
        self.covariance = self
            .covariance
            .clone()
            .insert_row(n, 0.0)
            .insert_column(n, 0.0);
        self.covariance[(n, n)] = variance;
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Options for a full filtering run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Seconds of real-measurement feedback at the start of each layer epoch.
    pub split_time: f64,
    /// Initial state variance; defaults to the measurement noise level.
    pub p0: Option<Covariance>,
    /// Control input; defaults to the schedule's ambient temperature.
    pub u: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            split_time: 70.0,
            p0: None,
            u: None,
        }
    }
}

/// Per-step diagnostics of a run, one entry per filter step.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub times: Vec<f64>,
    pub modes: Vec<UpdateMode>,
    pub epochs: Vec<usize>,
    /// Post-update covariance diagonal per active layer.
    pub covariance_diag: Vec<Vec<f64>>,
    /// Smallest eigenvalue of the post-update covariance.
    pub covariance_min_eig: Vec<f64>,
    /// Largest absolute asymmetry of the covariance before symmetrization.
    pub covariance_asymmetry: Vec<f64>,
    /// Gain diagonal per active layer.
    pub gain_diag: Vec<Vec<f64>>,
}

/// Everything a filtering run produces.
#[derive(Debug, Clone)]
pub struct FilterRun {
    /// Samples updated with real measurements.
    pub estimate: ThermalTrace,
    /// Samples updated with pseudo-measurements.
    pub forecast: ThermalTrace,
    /// Merged estimate-then-forecast series over the whole run.
    pub combined: ThermalTrace,
    pub diagnostics: Diagnostics,
    pub state: FilterState,
}

/// Runs estimation and forecasting over a full build.
///
/// Steps on the schedule's `dt` grid. At each deposition the state grows by
/// one entry initialized to that layer's scheduled peak, and the epoch's
/// model takes over. Updates use `measurements` while the epoch-relative time
/// is at most `split_time` and `pseudo` afterwards.
pub fn run(
    schedule: &BuildSchedule,
    models: &[DiscreteModel],
    measurements: &ThermalTrace,
    pseudo: &ThermalTrace,
    noise: &NoiseConfig,
    config: &RunConfig,
) -> Result<FilterRun> {
    schedule.validate()?;
    noise.validate()?;
    let n_layers = schedule.n_layers();
    if n_layers == 0 {
        return Err(Error::InvalidSchedule("empty build".into()));
    }
    if config.split_time < 0.0 || !config.split_time.is_finite() {
        return Err(Error::InvalidParams(format!(
            "split time must be finite and >= 0 (got {})",
            config.split_time
        )));
    }
    if models.len() < n_layers {
        return Err(Error::DimensionMismatch(format!(
            "{} models for {n_layers} epochs",
            models.len()
        )));
    }
    for (i, m) in models.iter().take(n_layers).enumerate() {
        if m.dim() != i + 1 {
            return Err(Error::DimensionMismatch(format!(
                "model for epoch {} has dimension {}",
                i + 1,
                m.dim()
            )));
        }
    }

    let p0 = config.p0.clone().unwrap_or_else(|| noise.sigma_m.clone());
    p0.validate()?;
    let u = config.u.unwrap_or(schedule.t_ambient);
    let dt = schedule.dt;
    let t0 = schedule.deposition_times[0];
    let eps = dt * 1e-6;
    let steps = (((schedule.t_end - t0) / dt) + 1e-9).floor() as usize;

    let mut state = FilterState::new(
        DVector::from_element(1, schedule.t_mp[0]),
        p0.matrix(1)?,
    )?;
    let mut epoch = 1usize;

    let mut estimate = ThermalTrace::new(TraceKind::Estimate);
    let mut forecast = ThermalTrace::new(TraceKind::Forecast);
    let mut combined = ThermalTrace::with_capacity(TraceKind::Estimate, steps + 1);
    let mut diag = Diagnostics::default();

    estimate.push_sample(t0, state.estimate.iter().copied().collect())?;
    combined.push_sample(t0, state.estimate.iter().copied().collect())?;

    for i in 1..=steps {
        let t = t0 + i as f64 * dt;

        // Propagate over [t - dt, t] with the epoch that was active there.
        state.predict(&models[epoch - 1], u, noise)?;

        // Depositions crossed during this step grow the state.
        while epoch < n_layers && schedule.deposition_times[epoch] <= t + eps {
            state.grow(schedule.t_mp[epoch], p0.scalar_value());
            epoch += 1;
        }

        let rel_t = t - schedule.deposition_times[epoch - 1];
        let mode = if rel_t <= config.split_time + eps {
            UpdateMode::Real
        } else {
            UpdateMode::Pseudo
        };
        let source = match mode {
            UpdateMode::Real => measurements,
            UpdateMode::Pseudo => pseudo,
        };
        let y = sample_vector(source, epoch, t, dt, mode)?;

        // Track the raw asymmetry produced by this step before update()
        // symmetrizes; the update itself reuses the symmetrized covariance.
        let asym = asymmetry(&state.covariance);
        state.update(&y, noise, mode)?;

        let temps: Vec<f64> = state.estimate.iter().copied().collect();
        match mode {
            UpdateMode::Real => estimate.push_sample(t, temps.clone())?,
            UpdateMode::Pseudo => forecast.push_sample(t, temps.clone())?,
        }
        combined.push_sample(t, temps)?;

        diag.times.push(t);
        diag.modes.push(mode);
        diag.epochs.push(epoch);
        diag.covariance_diag
            .push(state.covariance.diagonal().iter().copied().collect());
        diag.covariance_min_eig.push(min_eigenvalue(&state.covariance));
        diag.covariance_asymmetry.push(asym);
        diag.gain_diag.push(
            state
                .gain_history
                .last()
                .expect("update appended a gain")
                .diagonal()
                .iter()
                .copied()
                .collect(),
        );
    }

    Ok(FilterRun {
        estimate,
        forecast,
        combined,
        diagnostics: diag,
        state,
    })
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

fn sample_vector(
    trace: &ThermalTrace,
    n: usize,
    t: f64,
    slack: f64,
    mode: UpdateMode,
) -> Result<DVector<f64>> {
    let mut y = DVector::zeros(n);
    for layer in 1..=n {
        y[layer - 1] = trace.sample_layer_clamped(layer, t, slack).ok_or_else(|| {
            Error::MissingData(format!(
                "no {} feedback for layer {layer} at t = {t} s",
                mode.as_str()
            ))
        })?;
    }
    Ok(y)
}

/// Open-loop companion run: the same stepping and state growth as [`run`]
/// but without any measurement updates.
pub fn open_loop(
    schedule: &BuildSchedule,
    models: &[DiscreteModel],
    u: Option<f64>,
) -> Result<ThermalTrace> {
    schedule.validate()?;
    let n_layers = schedule.n_layers();
    if n_layers == 0 {
        return Ok(ThermalTrace::new(TraceKind::Rom));
    }
    if models.len() < n_layers {
        return Err(Error::DimensionMismatch(format!(
            "{} models for {n_layers} epochs",
            models.len()
        )));
    }
    let u = u.unwrap_or(schedule.t_ambient);
    let dt = schedule.dt;
    let t0 = schedule.deposition_times[0];
    let eps = dt * 1e-6;
    let steps = (((schedule.t_end - t0) / dt) + 1e-9).floor() as usize;

    let mut x = DVector::from_element(1, schedule.t_mp[0]);
    let mut epoch = 1usize;
    let mut trace = ThermalTrace::with_capacity(TraceKind::Rom, steps + 1);
    trace.push_sample(t0, x.iter().copied().collect())?;

    for i in 1..=steps {
        let t = t0 + i as f64 * dt;
        let m = &models[epoch - 1];
        x = &m.a * &x + &m.b * u;
        while epoch < n_layers && schedule.deposition_times[epoch] <= t + eps {
            let n = x.len();
            x = x.insert_row(n, schedule.t_mp[epoch]);
            epoch += 1;
        }
        trace.push_sample(t, x.iter().copied().collect())?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rom::{self, LayerParams, ParamSchedule};
    use approx::assert_abs_diff_eq;

    fn model_1d(a: f64, b: f64, dt: f64) -> DiscreteModel {
        DiscreteModel {
            a: DMatrix::from_element(1, 1, a),
            b: DVector::from_element(1, b),
            dt,
            epoch: 1,
        }
    }

    fn state_1d(x: f64, p: f64) -> FilterState {
        FilterState::new(DVector::from_element(1, x), DMatrix::from_element(1, 1, p)).unwrap()
    }

    #[test]
    fn predict_inflates_covariance_by_process_noise() {
        let mut s = state_1d(42.0, 1.0);
        let noise = NoiseConfig::scalar(2.3, 1.0);
        s.predict(&model_1d(1.0, 0.0, 0.1), 27.0, &noise).unwrap();
        assert_eq!(s.estimate[0], 42.0);
        assert_abs_diff_eq!(s.covariance[(0, 0)], 3.3, epsilon = 1e-15);
    }

    #[test]
    fn predict_noiseless_identity_is_identity() {
        let mut s = state_1d(42.0, 1.5);
        let noise = NoiseConfig::scalar(0.0, 1.0);
        s.predict(&model_1d(1.0, 0.0, 0.1), 27.0, &noise).unwrap();
        assert_eq!(s.estimate[0], 42.0);
        assert_eq!(s.covariance[(0, 0)], 1.5);
    }

    #[test]
    fn predict_hand_evaluated_affine_step() {
        let mut s = state_1d(100.0, 1.0);
        let noise = NoiseConfig::scalar(0.0, 1.0);
        s.predict(&model_1d(0.8, 0.4, 0.1), 27.0, &noise).unwrap();
        assert_abs_diff_eq!(s.estimate[0], 90.8, epsilon = 1e-12);
    }

    #[test]
    fn update_perfect_sensor_limit() {
        let mut s = state_1d(90.0, 3.0);
        let noise = NoiseConfig::scalar(2.3, 0.0);
        s.update(&DVector::from_element(1, 100.0), &noise, UpdateMode::Real)
            .unwrap();
        assert_eq!(s.estimate[0], 100.0);
        assert_eq!(s.gain_history[0][(0, 0)], 1.0);
    }

    #[test]
    fn update_hand_evaluated_gain() {
        let mut s = state_1d(90.0, 3.0);
        let noise = NoiseConfig::scalar(2.3, 1.0);
        s.update(&DVector::from_element(1, 100.0), &noise, UpdateMode::Real)
            .unwrap();
        assert_abs_diff_eq!(s.gain_history[0][(0, 0)], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(s.estimate[0], 97.5, epsilon = 1e-12);
        assert!(matches!(s.mode_history[0], UpdateMode::Real));
    }

    #[test]
    fn update_distrusted_sensor_limit() {
        let mut s = state_1d(90.0, 3.0);
        let noise = NoiseConfig::scalar(2.3, 1e12);
        s.update(&DVector::from_element(1, 100.0), &noise, UpdateMode::Pseudo)
            .unwrap();
        assert_abs_diff_eq!(s.estimate[0], 90.0, epsilon = 1e-9);
    }

    #[test]
    fn update_rejects_nan_and_bad_dims() {
        let mut s = state_1d(90.0, 3.0);
        let noise = NoiseConfig::default();
        assert!(s
            .update(&DVector::from_element(1, f64::NAN), &noise, UpdateMode::Real)
            .is_err());
        assert!(s
            .update(&DVector::from_element(2, 1.0), &noise, UpdateMode::Real)
            .is_err());
    }

    #[test]
    fn gain_stays_in_unit_interval() {
        for p in [0.0, 0.1, 1.0, 10.0, 1e6] {
            for r in [1e-6, 1.0, 1e6] {
                let mut s = state_1d(50.0, p);
                let noise = NoiseConfig::scalar(0.0, r);
                s.update(&DVector::from_element(1, 60.0), &noise, UpdateMode::Real)
                    .unwrap();
                let k = s.gain_history[0][(0, 0)];
                assert!((0.0..=1.0).contains(&k), "gain {k} for P = {p}, R = {r}");
                // Convex combination of prediction and measurement.
                assert!(s.estimate[0] >= 50.0 - 1e-12 && s.estimate[0] <= 60.0 + 1e-12);
            }
        }
    }

    fn tiny_setup() -> (BuildSchedule, Vec<DiscreteModel>, ThermalTrace) {
        let p = LayerParams::new(100.0, 1.0, -20.0, 20.0, 0.0).unwrap();
        let schedule =
            BuildSchedule::evenly_spaced(2, 10.0, vec![500.0, 450.0], 27.0, 27.0, 0.5).unwrap();
        let params = ParamSchedule::constant(2, p);
        let models = rom::models_for_schedule(&params, schedule.dt).unwrap();
        let truth = rom::integrate_build(&schedule, &params).unwrap();
        (schedule, models, truth)
    }

    #[test]
    fn run_consistent_data_reproduces_open_loop() {
        // Measurements generated by the very model the filter propagates and
        // no process noise: the estimate must ride the open-loop trajectory.
        let (schedule, models, _) = tiny_setup();
        let open = open_loop(&schedule, &models, None).unwrap();
        let noise = NoiseConfig::scalar(0.0, 1.0);
        let config = RunConfig {
            split_time: 1e9, // real data throughout
            p0: Some(Covariance::Scalar(0.0)),
            u: None,
        };
        let out = run(&schedule, &models, &open, &open, &noise, &config).unwrap();
        for (i, v) in out.combined.temps().iter().enumerate() {
            for (j, x) in v.iter().enumerate() {
                assert_abs_diff_eq!(*x, open.temps()[i][j], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn run_splits_modes_and_grows_state() {
        let (schedule, models, truth) = tiny_setup();
        let noise = NoiseConfig::default();
        let config = RunConfig {
            split_time: 5.0,
            ..RunConfig::default()
        };
        let out = run(&schedule, &models, &truth, &truth, &noise, &config).unwrap();
        assert!(!out.estimate.is_empty());
        assert!(!out.forecast.is_empty());
        assert_eq!(out.combined.n_layers(), 2);
        // Mode flips from real to pseudo 5 s into each epoch.
        for (i, &t) in out.diagnostics.times.iter().enumerate() {
            let epoch = out.diagnostics.epochs[i];
            let rel = t - schedule.deposition_times[epoch - 1];
            let expect = if rel <= 5.0 + 1e-9 {
                UpdateMode::Real
            } else {
                UpdateMode::Pseudo
            };
            assert_eq!(out.diagnostics.modes[i], expect, "at t = {t}");
        }
        // Covariance stays PSD and gains stay in [0, 1].
        for eig in &out.diagnostics.covariance_min_eig {
            assert!(*eig >= -PSD_TOLERANCE);
        }
        for gains in &out.diagnostics.gain_diag {
            for g in gains {
                assert!((-1e-12..=1.0 + 1e-12).contains(g));
            }
        }
    }

    #[test]
    fn run_is_deterministic() {
        let (schedule, models, truth) = tiny_setup();
        let noise = NoiseConfig::default();
        let config = RunConfig {
            split_time: 5.0,
            ..RunConfig::default()
        };
        let a = run(&schedule, &models, &truth, &truth, &noise, &config).unwrap();
        let b = run(&schedule, &models, &truth, &truth, &noise, &config).unwrap();
        assert_eq!(a.combined, b.combined);
        assert_eq!(a.state.gain_history, b.state.gain_history);
    }

    #[test]
    fn run_reports_missing_feedback() {
        let (schedule, models, truth) = tiny_setup();
        let noise = NoiseConfig::default();
        // Pseudo trace that stops half-way through the build.
        let pseudo = truth.layer_segment(1, 0.0, 9.0).unwrap();
        let config = RunConfig {
            split_time: 2.0,
            ..RunConfig::default()
        };
        let err = run(&schedule, &models, &truth, &pseudo, &noise, &config).unwrap_err();
        assert!(matches!(err, Error::MissingData(_)), "got {err:?}");
    }

    #[test]
    fn open_loop_grows_state_with_peaks() {
        let (schedule, models, _) = tiny_setup();
        let trace = open_loop(&schedule, &models, None).unwrap();
        assert_eq!(trace.n_layers(), 2);
        let birth = trace.layer_birth(2).unwrap();
        assert_abs_diff_eq!(birth, 10.0, epsilon = 1e-9);
        assert_eq!(trace.sample_layer(2, birth), Some(450.0));
    }
}
