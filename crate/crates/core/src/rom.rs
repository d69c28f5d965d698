//! Reduced-order thermal model of a layer-by-layer build.
//!
//! Each printed layer is lumped into a single temperature governed by a heat
//! balance against its neighbours and the ambient. The module provides the
//! per-layer rate function, a sequential forward-Euler integrator that grows
//! the state as layers are deposited, and the diagonal state-space form used
//! by the estimation filter together with its Euler discretization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{ThermalTrace, TraceKind};

/// Relative slack used when matching sample times against deposition times.
const TIME_EPS_FRAC: f64 = 1e-9;

/// Effective lumped coefficients of one layer for one build epoch.
///
/// `c1` \[kg/m³\] and `c2` \[J/(kg·K)\] multiply the temperature rate and must be
/// positive; `c3`, `c4`, `c5` \[W/(m³·K)\] scale conduction to the layer below,
/// conduction from the layer above and convective loss. Identified values are
/// stored verbatim, signs included (`c3` typically comes out negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    #[serde(default)]
    pub c5: f64,
}

impl LayerParams {
    pub fn new(c1: f64, c2: f64, c3: f64, c4: f64, c5: f64) -> Result<Self> {
        let p = LayerParams { c1, c2, c3, c4, c5 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.c1, self.c2, self.c3, self.c4, self.c5];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        if self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "c1 and c2 must be positive (got c1 = {}, c2 = {})",
                self.c1, self.c2
            )));
        }
        if self.c5 < 0.0 {
            return Err(Error::InvalidParams(format!(
                "c5 must be non-negative (got {})",
                self.c5
            )));
        }
        Ok(())
    }

    /// Thermal inertia product `c1 * c2`.
    pub fn heat_capacity(&self) -> f64 {
        self.c1 * self.c2
    }

    /// Continuous-time diagonal rate `-(-c3 + c4 - c5) / (c1 c2)` of the
    /// state-space form.
    pub fn beta_c(&self) -> f64 {
        -(-self.c3 + self.c4 - self.c5) / (self.c1 * self.c2)
    }
}

/// Per-epoch, per-layer parameter sets.
///
/// Epoch `n` is the interval during which `n` layers have been deposited;
/// within it every active layer `1..=n` has its own [`LayerParams`] entry
/// (often all identical, mirroring a single re-identified set per epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchedule {
    epochs: Vec<EpochParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochParams {
    pub epoch: usize,
    /// Index `j` holds parameters for layer `j + 1`.
    pub layers: Vec<LayerParams>,
}

impl ParamSchedule {
    /// One parameter set per epoch, shared by every active layer.
    pub fn uniform(per_epoch: Vec<LayerParams>) -> Self {
        let epochs = per_epoch
            .into_iter()
            .enumerate()
            .map(|(i, p)| EpochParams {
                epoch: i + 1,
                layers: vec![p; i + 1],
            })
            .collect();
        ParamSchedule { epochs }
    }

    /// The same parameter set for every epoch and layer.
    pub fn constant(n_layers: usize, p: LayerParams) -> Self {
        ParamSchedule::uniform(vec![p; n_layers])
    }

    pub fn from_epochs(epochs: Vec<EpochParams>) -> Result<Self> {
        let s = ParamSchedule { epochs };
        s.validate()?;
        Ok(s)
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn epochs(&self) -> &[EpochParams] {
        &self.epochs
    }

    /// Parameters of `layer` (1-based) during `epoch` (1-based).
    pub fn params(&self, epoch: usize, layer: usize) -> Result<&LayerParams> {
        let e = self
            .epochs
            .get(epoch.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidSchedule(format!("no parameters for epoch {epoch}")))?;
        e.layers.get(layer.wrapping_sub(1)).ok_or_else(|| {
            Error::InvalidSchedule(format!("no parameters for layer {layer} in epoch {epoch}"))
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.epochs.iter().enumerate() {
            if e.epoch != i + 1 {
                return Err(Error::InvalidSchedule(format!(
                    "epoch {} found where {} was expected",
                    e.epoch,
                    i + 1
                )));
            }
            if e.layers.len() != e.epoch {
                return Err(Error::InvalidSchedule(format!(
                    "epoch {} must carry {} layer entries, has {}",
                    e.epoch,
                    e.epoch,
                    e.layers.len()
                )));
            }
            for p in &e.layers {
                p.validate()?;
            }
        }
        Ok(())
    }
}

/// Deposition timeline and boundary temperatures of one build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSchedule {
    /// Laser-off instants `t_0 < t_1 < ...`, one per layer \[s\].
    pub deposition_times: Vec<f64>,
    /// End of the simulated horizon \[s\].
    pub t_end: f64,
    /// Initial peak temperature assigned to each freshly deposited layer \[°C\].
    pub t_mp: Vec<f64>,
    /// Base-plate temperature seen by layer 1 \[°C\].
    pub t_base: f64,
    /// Ambient temperature \[°C\].
    pub t_ambient: f64,
    /// Integration and sample step \[s\].
    pub dt: f64,
}

impl BuildSchedule {
    /// Evenly spaced build: layer `k` deposited at `(k - 1) * dwell`.
    pub fn evenly_spaced(
        n_layers: usize,
        dwell: f64,
        t_mp: Vec<f64>,
        t_base: f64,
        t_ambient: f64,
        dt: f64,
    ) -> Result<Self> {
        let deposition_times = (0..n_layers).map(|k| k as f64 * dwell).collect();
        let s = BuildSchedule {
            deposition_times,
            t_end: n_layers as f64 * dwell,
            t_mp,
            t_base,
            t_ambient,
            dt,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn n_layers(&self) -> usize {
        self.deposition_times.len()
    }

    /// Deposition time of `layer` (1-based).
    pub fn deposition_time(&self, layer: usize) -> f64 {
        self.deposition_times[layer - 1]
    }

    /// Time span of epoch `n`: from layer `n`'s deposition to the next
    /// deposition (or the horizon end for the last epoch).
    pub fn epoch_window(&self, epoch: usize) -> (f64, f64) {
        let start = self.deposition_times[epoch - 1];
        let end = self
            .deposition_times
            .get(epoch)
            .copied()
            .unwrap_or(self.t_end);
        (start, end)
    }

    fn min_gap(&self) -> f64 {
        self.deposition_times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .deposition_times
            .iter()
            .chain(self.t_mp.iter())
            .chain([&self.t_end, &self.t_base, &self.t_ambient, &self.dt])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("build schedule".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "dt must be positive (got {})",
                self.dt
            )));
        }
        if self.t_mp.len() != self.deposition_times.len() {
            return Err(Error::InvalidSchedule(format!(
                "{} deposition times but {} peak temperatures",
                self.deposition_times.len(),
                self.t_mp.len()
            )));
        }
        if self.deposition_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule(
                "deposition times must increase strictly".into(),
            ));
        }
        if let Some(&last) = self.deposition_times.last() {
            if self.t_end <= last {
                return Err(Error::InvalidSchedule(format!(
                    "t_end {} does not extend past the last deposition at {last}",
                    self.t_end
                )));
            }
        }
        if self.n_layers() > 1 && self.dt >= self.min_gap() {
            return Err(Error::InvalidSchedule(format!(
                "dt {} must be below the smallest inter-layer gap {}",
                self.dt,
                self.min_gap()
            )));
        }
        // A peak at the ambient level is allowed so that all-equilibrium
        // builds stay expressible; anything colder than ambient is rejected.
        if self.t_mp.iter().any(|&t| t < self.t_ambient) {
            return Err(Error::InvalidSchedule(
                "per-layer peak temperatures must not undercut the ambient".into(),
            ));
        }
        Ok(())
    }
}

/// Discrete-time state-space model `T(i+1) = a T(i) + b u` for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub dt: f64,
    /// Number of deposited layers this model is valid for (= state size).
    pub epoch: usize,
}

impl DiscreteModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Heat-balance rate of one layer [°C/s].
///
/// Intermediate layers exchange with both neighbours; the top layer has no
/// layer above, its convective slot (`c5`) covering the exposed surfaces.
/// `is_top` must agree with `t_above.is_none()`.
pub fn layer_rhs(
    t_layer: f64,
    t_below: f64,
    t_above: Option<f64>,
    t_ambient: f64,
    p: &LayerParams,
    is_top: bool,
) -> Result<f64> {
    if is_top != t_above.is_none() {
        return Err(Error::InvalidParams(
            "is_top flag disagrees with the presence of an upper neighbour".into(),
        ));
    }
    if ![t_layer, t_below, t_ambient].iter().all(|v| v.is_finite())
        || t_above.is_some_and(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("layer temperatures".into()));
    }
    let cap = p.heat_capacity();
    if cap == 0.0 || !cap.is_finite() {
        return Err(Error::InvalidParams(format!(
            "c1 * c2 must be non-zero and finite (got {cap})"
        )));
    }
    let conduction_below = -p.c3 * (t_layer - t_below);
    let conduction_above = t_above.map_or(0.0, |ta| p.c4 * (ta - t_layer));
    let convection = -p.c5 * (t_layer - t_ambient);
    Ok((conduction_below + conduction_above + convection) / cap)
}

/// One forward-Euler step of all active layers.
///
/// `temps[j]` is layer `j + 1`; `params_of(layer)` supplies that layer's
/// coefficients. The newest (last) layer uses the top-layer balance.
fn euler_step<'a>(
    temps: &mut [f64],
    t_base: f64,
    t_ambient: f64,
    dt: f64,
    mut params_of: impl FnMut(usize) -> &'a LayerParams,
) -> Result<()> {
    let n = temps.len();
    let mut rates = Vec::with_capacity(n);
    for j in 0..n {
        let layer = j + 1;
        let below = if j == 0 { t_base } else { temps[j - 1] };
        let above = if j + 1 < n { Some(temps[j + 1]) } else { None };
        let is_top = j + 1 == n;
        rates.push(layer_rhs(
            temps[j],
            below,
            above,
            t_ambient,
            params_of(layer),
            is_top,
        )?);
    }
    for (t, r) in temps.iter_mut().zip(rates) {
        *t += dt * r;
        if !t.is_finite() {
            return Err(Error::Solver(
                "layer temperature diverged during integration".into(),
            ));
        }
    }
    Ok(())
}

/// Integrates a fixed set of `init.len()` layers over `[t_start, t_end]`
/// without depositions, sampling every `dt`. Used on its own for per-epoch
/// fitting and by [`integrate_build`] for each inter-deposition span.
#[allow(clippy::too_many_arguments)]
pub fn integrate_window(
    init: &[f64],
    t_start: f64,
    t_end: f64,
    epoch: usize,
    params: &ParamSchedule,
    t_base: f64,
    t_ambient: f64,
    dt: f64,
    kind: TraceKind,
) -> Result<ThermalTrace> {
    if init.len() != epoch {
        return Err(Error::DimensionMismatch(format!(
            "{} initial temperatures for epoch {epoch}",
            init.len()
        )));
    }
    let mut temps = init.to_vec();
    let steps = window_steps(t_start, t_end, dt);
    let mut trace = ThermalTrace::with_capacity(kind, steps + 1);
    for i in 0..=steps {
        trace.push_sample(t_start + i as f64 * dt, temps.clone())?;
        if i < steps {
            euler_step(&mut temps, t_base, t_ambient, dt, |layer| {
                params.params(epoch, layer).expect("validated schedule")
            })?;
        }
    }
    Ok(trace)
}

fn window_steps(t_start: f64, t_end: f64, dt: f64) -> usize {
    (((t_end - t_start) / dt) + TIME_EPS_FRAC).floor().max(0.0) as usize
}

/// Runs the sequential multi-layer integration over a full build.
///
/// At each deposition time the new layer enters at its scheduled peak
/// temperature while previously active layers continue from their current
/// values; between depositions all active layers advance by forward Euler.
pub fn integrate_build(schedule: &BuildSchedule, params: &ParamSchedule) -> Result<ThermalTrace> {
    schedule.validate()?;
    params.validate()?;
    let n = schedule.n_layers();
    if n == 0 {
        return Ok(ThermalTrace::new(TraceKind::Rom));
    }
    if params.n_epochs() < n {
        return Err(Error::InvalidSchedule(format!(
            "schedule has {n} layers but parameters cover only {} epochs",
            params.n_epochs()
        )));
    }

    let dt = schedule.dt;
    let t0 = schedule.deposition_times[0];
    let eps = dt * 1e-6;
    let steps = window_steps(t0, schedule.t_end, dt);
    let mut trace = ThermalTrace::with_capacity(TraceKind::Rom, steps + 1);
    let mut temps: Vec<f64> = Vec::with_capacity(n);
    let mut next = 0usize;

    for i in 0..=steps {
        let t = t0 + i as f64 * dt;
        while next < n && schedule.deposition_times[next] <= t + eps {
            temps.push(schedule.t_mp[next]);
            next += 1;
        }
        trace.push_sample(t, temps.clone())?;
        if i < steps {
            let epoch = temps.len();
            euler_step(&mut temps, schedule.t_base, schedule.t_ambient, dt, |layer| {
                params.params(epoch, layer).expect("validated schedule")
            })?;
        }
    }
    Ok(trace)
}

/// Continuous-time system matrices for `n` active layers sharing one
/// parameter set: `A_c` is diagonal with `beta_c` everywhere and every `B_c`
/// entry is `c5 / (c1 c2)`, keeping both terms on the same normalization as
/// the rate equation.
pub fn build_continuous(p: &LayerParams, n: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if n < 1 {
        return Err(Error::InvalidParams(
            "state dimension must be at least 1".into(),
        ));
    }
    p.validate()?;
    let a_c = DMatrix::from_diagonal_element(n, n, p.beta_c());
    let b_c = DVector::from_element(n, p.c5 / p.heat_capacity());
    Ok((a_c, b_c))
}

/// Euler discretization: `a = I + dt A_c`, `b = dt B_c`.
pub fn discretize(a_c: &DMatrix<f64>, b_c: &DVector<f64>, dt: f64) -> Result<DiscreteModel> {
    if a_c.nrows() != a_c.ncols() || a_c.nrows() != b_c.len() {
        return Err(Error::DimensionMismatch(format!(
            "A_c {}x{} with B_c of length {}",
            a_c.nrows(),
            a_c.ncols(),
            b_c.len()
        )));
    }
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::InvalidParams(format!("dt must be >= 0 (got {dt})")));
    }
    if a_c.iter().chain(b_c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("system matrices".into()));
    }
    let n = a_c.nrows();
    Ok(DiscreteModel {
        a: DMatrix::identity(n, n) + a_c * dt,
        b: b_c * dt,
        dt,
        epoch: n,
    })
}

/// Builds one discrete model per epoch from a parameter schedule. Each
/// layer's diagonal entry and input gain come from its own parameter set,
/// which collapses to the uniform diagonal form when the schedule is uniform.
pub fn models_for_schedule(params: &ParamSchedule, dt: f64) -> Result<Vec<DiscreteModel>> {
    params.validate()?;
    let mut models = Vec::with_capacity(params.n_epochs());
    for e in params.epochs() {
        let n = e.epoch;
        let mut a_c = DMatrix::zeros(n, n);
        let mut b_c = DVector::zeros(n);
        for (j, p) in e.layers.iter().enumerate() {
            a_c[(j, j)] = p.beta_c();
            b_c[j] = p.c5 / p.heat_capacity();
        }
        models.push(discretize(&a_c, &b_c, dt)?);
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn table1_layer1() -> LayerParams {
        LayerParams::new(13190.0, 0.7, -1500.0, 1500.0, 0.0).unwrap()
    }

    #[test]
    fn rhs_zero_gradient_equilibrium() {
        let p = LayerParams::new(2.0, 3.0, 5.0, 7.0, 11.0).unwrap();
        let r = layer_rhs(27.0, 27.0, Some(27.0), 27.0, &p, false).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rhs_hand_evaluated_conduction() {
        let p = LayerParams::new(1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let r = layer_rhs(100.0, 50.0, Some(20.0), 27.0, &p, false).unwrap();
        assert_eq!(r, -50.0);
    }

    #[test]
    fn rhs_table1_layer1_golden() {
        // Independent arithmetic: -c3 (T - T_below) = 1500 * 73 = 109500 and
        // c4 (T_above - T) = 1500 * (-73) = -109500 cancel exactly, so the
        // rate is 0 / (13190 * 0.7) = 0.
        let expected = (1500.0_f64 * 73.0 + 1500.0 * (-73.0)) / (13190.0 * 0.7);
        assert_eq!(expected, 0.0);
        let r = layer_rhs(100.0, 27.0, Some(27.0), 27.0, &table1_layer1(), false).unwrap();
        assert_eq!(r, expected);
    }

    #[test]
    fn rhs_rejects_inconsistent_top_flag() {
        let p = table1_layer1();
        assert!(layer_rhs(100.0, 27.0, None, 27.0, &p, false).is_err());
        assert!(layer_rhs(100.0, 27.0, Some(3.0), 27.0, &p, true).is_err());
        assert!(layer_rhs(f64::NAN, 27.0, None, 27.0, &p, true).is_err());
    }

    #[test]
    fn params_reject_zero_capacity() {
        assert!(LayerParams::new(0.0, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(LayerParams::new(1.0, -1.0, 0.0, 0.0, 0.0).is_err());
        assert!(LayerParams::new(1.0, 1.0, 0.0, 0.0, -0.5).is_err());
    }

    fn single_layer_schedule(
        c: LayerParams,
        t_mp: f64,
        t_end: f64,
        dt: f64,
    ) -> (BuildSchedule, ParamSchedule) {
        let schedule = BuildSchedule {
            deposition_times: vec![0.0],
            t_end,
            t_mp: vec![t_mp],
            t_base: 27.0,
            t_ambient: 27.0,
            dt,
        };
        (schedule, ParamSchedule::constant(1, c))
    }

    #[test]
    fn integrate_matches_analytic_exponential() {
        // Decoupled layer: dT/dt = -c5 (T - T_inf) / (c1 c2).
        let p = LayerParams::new(100.0, 2.0, 0.0, 0.0, 40.0).unwrap();
        let tau = p.heat_capacity() / p.c5; // 5 s
        let dt = 0.001 * tau;
        let (schedule, params) = single_layer_schedule(p, 1000.0, 3.0 * tau, dt);
        let trace = integrate_build(&schedule, &params).unwrap();

        let gap = 1000.0 - 27.0;
        let max_err = trace
            .times()
            .iter()
            .zip(trace.temps())
            .map(|(&t, v)| {
                let analytic = 27.0 + gap * (-t / tau).exp();
                (v[0] - analytic).abs()
            })
            .fold(0.0, f64::max);
        assert!(
            max_err / gap < 0.01,
            "max error {max_err} exceeds 1% of the initial gap"
        );

        // First-order convergence: halving dt at least roughly halves the error.
        let (s2, params2) = single_layer_schedule(p, 1000.0, 3.0 * tau, dt / 2.0);
        let trace2 = integrate_build(&s2, &params2).unwrap();
        let max_err2 = trace2
            .times()
            .iter()
            .zip(trace2.temps())
            .map(|(&t, v)| (v[0] - (27.0 + gap * (-t / tau).exp())).abs())
            .fold(0.0, f64::max);
        assert!(
            max_err2 <= 0.55 * max_err,
            "halving dt reduced the error only from {max_err} to {max_err2}"
        );
    }

    #[test]
    fn integrate_equilibrium_stays_constant() {
        let p = table1_layer1();
        let schedule =
            BuildSchedule::evenly_spaced(3, 10.0, vec![27.0; 3], 27.0, 27.0, 0.5).unwrap();
        let params = ParamSchedule::constant(3, p);
        let trace = integrate_build(&schedule, &params).unwrap();
        for v in trace.temps() {
            for &x in v {
                assert_eq!(x, 27.0);
            }
        }
    }

    #[test]
    fn integrate_three_layer_deposition_structure() {
        let p = LayerParams::new(100.0, 1.0, 20.0, 20.0, 5.0).unwrap();
        let schedule =
            BuildSchedule::evenly_spaced(3, 10.0, vec![900.0, 800.0, 700.0], 27.0, 27.0, 0.1)
                .unwrap();
        let params = ParamSchedule::constant(3, p);
        let trace = integrate_build(&schedule, &params).unwrap();

        // Layer 3 enters exactly at its peak at t = t_2 = 20 s.
        let i_at = trace
            .times()
            .iter()
            .position(|&t| (t - 20.0).abs() < 1e-9)
            .unwrap();
        assert_eq!(trace.temps()[i_at].len(), 3);
        assert_eq!(trace.temps()[i_at][2], 700.0);
        assert_eq!(trace.temps()[i_at - 1].len(), 2);

        // Layers 1 and 2 are continuous across the deposition: the change over
        // one step stays within dt times a crude rate bound for these values.
        let before = &trace.temps()[i_at - 1];
        let after = &trace.temps()[i_at];
        let rate_bound = 2.0 * 20.0 * 900.0 / 100.0 + 5.0 * 900.0 / 100.0;
        for j in 0..2 {
            assert!((after[j] - before[j]).abs() <= schedule.dt * rate_bound);
        }
    }

    #[test]
    fn integrate_empty_build_is_empty_trace() {
        let schedule = BuildSchedule {
            deposition_times: vec![],
            t_end: 1.0,
            t_mp: vec![],
            t_base: 27.0,
            t_ambient: 27.0,
            dt: 0.1,
        };
        let trace = integrate_build(&schedule, &ParamSchedule::uniform(vec![])).unwrap();
        assert!(trace.is_empty());
    }

    #[test]
    fn monotone_cooling_without_upper_coupling() {
        // c4 = 0 and every neighbour colder: temperature strictly decreases.
        let p = LayerParams::new(50.0, 1.0, 10.0, 0.0, 5.0).unwrap();
        let (schedule, params) = single_layer_schedule(p, 500.0, 5.0, 0.01);
        let trace = integrate_build(&schedule, &params).unwrap();
        for w in trace.temps().windows(2) {
            assert!(w[1][0] < w[0][0]);
        }
    }

    #[test]
    fn continuous_matrices_table1_layer1() {
        let (a_c, b_c) = build_continuous(&table1_layer1(), 3).unwrap();
        let beta = -3000.0 / (13190.0 * 0.7);
        assert_relative_eq!(a_c[(0, 0)], beta, max_relative = 1e-12);
        assert_abs_diff_eq!(a_c[(1, 1)], -0.32492, epsilon = 1e-5);
        assert_eq!(a_c[(0, 1)], 0.0);
        assert_eq!(a_c[(2, 1)], 0.0);
        assert_eq!(b_c[2], 0.0);
        assert_eq!(a_c.nrows(), 3);
    }

    #[test]
    fn continuous_matrices_no_heat_paths() {
        let p = LayerParams::new(10.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let (a_c, b_c) = build_continuous(&p, 2).unwrap();
        assert!(a_c.iter().all(|&v| v == 0.0));
        assert!(b_c.iter().all(|&v| v == 0.0));
        assert!(build_continuous(&p, 0).is_err());
    }

    #[test]
    fn discretize_hand_example() {
        let a_c = DMatrix::from_element(1, 1, -2.0);
        let b_c = DVector::from_element(1, 4.0);
        let m = discretize(&a_c, &b_c, 0.1).unwrap();
        assert_abs_diff_eq!(m.a[(0, 0)], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(m.b[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn discretize_zero_step_is_identity() {
        let (a_c, b_c) = build_continuous(&table1_layer1(), 4).unwrap();
        let m = discretize(&a_c, &b_c, 0.0).unwrap();
        assert_eq!(m.a, DMatrix::identity(4, 4));
        assert!(m.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn discrete_spectral_radius_below_one_at_default_step() {
        let (a_c, b_c) = build_continuous(&table1_layer1(), 1).unwrap();
        let m = discretize(&a_c, &b_c, 0.1).unwrap();
        assert!(m.a[(0, 0)].abs() < 1.0);
    }

    #[test]
    fn schedule_validation_catches_bad_inputs() {
        let mut s =
            BuildSchedule::evenly_spaced(2, 10.0, vec![100.0, 100.0], 27.0, 27.0, 0.1).unwrap();
        s.deposition_times[1] = -1.0;
        assert!(s.validate().is_err());

        let s = BuildSchedule::evenly_spaced(2, 1.0, vec![100.0, 100.0], 27.0, 27.0, 2.0);
        assert!(s.is_err(), "dt above the inter-layer gap must be rejected");

        let s = BuildSchedule::evenly_spaced(1, 1.0, vec![10.0], 27.0, 27.0, 0.1);
        assert!(s.is_err(), "peak below ambient must be rejected");
    }

    #[test]
    fn models_for_schedule_matches_direct_build() {
        let p = table1_layer1();
        let schedule = ParamSchedule::constant(3, p);
        let models = models_for_schedule(&schedule, 0.1).unwrap();
        assert_eq!(models.len(), 3);
        let (a_c, b_c) = build_continuous(&p, 2).unwrap();
        let direct = discretize(&a_c, &b_c, 0.1).unwrap();
        assert_eq!(models[1].a, direct.a);
        assert_eq!(models[1].b, direct.b);
        assert_eq!(models[2].epoch, 3);
    }
}
