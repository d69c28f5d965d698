//! Desk-scale transient conduction solver used as the ground-truth source.
//!
//! Layers are added one at a time: at each deposition the layer's elements
//! activate at ambient temperature and receive a uniform volumetric source
//! for a heating duration derived from scan speed and hatch coverage, after
//! which the stack relaxes until the next deposition. Every exterior face is
//! adiabatic. The solver steps in enthalpy with face-to-face fluxes, which
//! conserves total enthalpy to round-off by construction, and can run either
//! explicit (with a stability guard) or backward-Euler implicit with a
//! conjugate-gradient solve per step.

pub mod material;
pub mod mesh;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rom::BuildSchedule;
use crate::trace::{ThermalTrace, TraceKind};

pub use crate::datastore::export_dataset;
pub use material::{MaterialTable, PropertyPoint};
pub use mesh::{Link, Mesh, Node};

/// Build geometry, meshing and material of one simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryMaterialSpec {
    /// Side of the part's square cross-section \[m\].
    pub part_side: f64,
    /// Layer thickness \[m\].
    pub layer_thickness: f64,
    pub n_layers: usize,
    /// Side of the cubic base plate \[m\].
    pub plate_side: f64,
    /// Part element size \[m\]; must divide both part side and layer thickness.
    pub part_element_size: f64,
    /// Plate element size \[m\].
    pub plate_element_size: f64,
    pub material: MaterialTable,
}

impl GeometryMaterialSpec {
    /// Reference configuration: square part on a 2 mm plate, 0.04 mm layers
    /// meshed one element thick, 0.25 mm plate elements, bundled material.
    pub fn cube_build(part_side: f64, n_layers: usize) -> Self {
        GeometryMaterialSpec {
            part_side,
            layer_thickness: 0.04e-3,
            n_layers,
            plate_side: 2.0e-3,
            part_element_size: 0.04e-3,
            plate_element_size: 0.25e-3,
            material: MaterialTable::in718(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.part_side,
            self.layer_thickness,
            self.plate_side,
            self.part_element_size,
            self.plate_element_size,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParams(
                "geometry lengths must be positive and finite".into(),
            ));
        }
        if self.n_layers == 0 {
            return Err(Error::InvalidParams("build needs at least one layer".into()));
        }
        if self.part_side > self.plate_side {
            return Err(Error::InvalidParams(
                "part cross-section exceeds the plate".into(),
            ));
        }
        self.material.validate()
    }

    pub fn layer_area(&self) -> f64 {
        self.part_side * self.part_side
    }

    pub fn layer_volume(&self) -> f64 {
        self.layer_area() * self.layer_thickness
    }
}

/// Laser and process parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub power_w: f64,
    pub absorptivity: f64,
    pub scan_speed_m_per_s: f64,
    pub hatch_spacing_m: f64,
    /// Pause between consecutive depositions \[s\].
    pub interlayer_dwell_s: f64,
    pub ambient_c: f64,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        ProcessSpec {
            power_w: 142.0,
            absorptivity: 0.4,
            scan_speed_m_per_s: 0.96,
            hatch_spacing_m: 0.1e-3,
            interlayer_dwell_s: 200.0,
            ambient_c: 27.0,
        }
    }
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_w.is_finite() && self.power_w >= 0.0) {
            return Err(Error::InvalidParams("laser power must be >= 0".into()));
        }
        if !(self.absorptivity > 0.0 && self.absorptivity <= 1.0) {
            return Err(Error::InvalidParams(
                "absorptivity must lie in (0, 1]".into(),
            ));
        }
        if self.scan_speed_m_per_s <= 0.0 || self.hatch_spacing_m <= 0.0 {
            return Err(Error::InvalidParams(
                "scan speed and hatch spacing must be positive".into(),
            ));
        }
        if self.interlayer_dwell_s <= 0.0 {
            return Err(Error::InvalidParams("dwell must be positive".into()));
        }
        Ok(())
    }

    /// Time to scan one layer: area / (scan speed * hatch spacing).
    pub fn heating_duration(&self, layer_area: f64) -> f64 {
        layer_area / (self.scan_speed_m_per_s * self.hatch_spacing_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Explicit,
    Implicit,
}

/// Time-integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Step for the relaxation phase \[s\]. `None` picks the stability limit in
    /// explicit mode and 0.1 s in implicit mode. Heating always runs in fine
    /// explicit substeps regardless of the scheme.
    pub dt: Option<f64>,
    pub sample_rate_hz: f64,
    /// Number of substeps the heating duration is at least divided into.
    pub heating_substeps: usize,
    /// Fixed-point refinements of the temperature-dependent capacity and
    /// conductivity within each implicit step.
    pub property_iterations: usize,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
    pub stability_safety: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::Explicit,
            dt: None,
            sample_rate_hz: 10.0,
            heating_substeps: 20,
            property_iterations: 3,
            cg_tolerance: 1e-10,
            cg_max_iterations: 5000,
            stability_safety: 0.9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::InvalidParams("solver dt must be positive".into()));
            }
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::InvalidParams("sample rate must be positive".into()));
        }
        if self.heating_substeps == 0 {
            return Err(Error::InvalidParams(
                "heating needs at least one substep".into(),
            ));
        }
        if self.property_iterations == 0 {
            return Err(Error::InvalidParams(
                "implicit stepping needs at least one property iteration".into(),
            ));
        }
        if !(self.stability_safety > 0.0 && self.stability_safety <= 1.0) {
            return Err(Error::InvalidParams(
                "stability safety factor must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Conservation and extremum bookkeeping for one post-heating window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowAudit {
    pub layer: usize,
    /// Total enthalpy at heat-off \[J\].
    pub energy_start_j: f64,
    /// Total enthalpy at the end of the window \[J\].
    pub energy_end_j: f64,
    /// |end - start| / |start|.
    pub rel_drift: f64,
    /// How far the running field maximum exceeded the heat-off maximum \[°C\].
    pub max_principle_excess: f64,
    /// How far the running field minimum undercut the heat-off minimum \[°C\].
    pub min_principle_excess: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnergyAudit {
    /// Laser energy delivered over the whole build \[J\].
    pub injected_j: f64,
    pub windows: Vec<WindowAudit>,
    pub max_rel_drift: f64,
}

/// Full output of one simulation.
#[derive(Debug, Clone)]
pub struct FdResult {
    /// Per-layer trace: maximum nodal temperature within each active layer at
    /// every sample, with extra samples at the heat-off instants so the true
    /// peaks are captured.
    pub trace: ThermalTrace,
    /// Build schedule implied by the run, with per-layer peaks read off the
    /// trace. Its `dt` matches the sample spacing.
    pub schedule: BuildSchedule,
    pub energy: EnergyAudit,
    /// Temperature field snapshots at each heat-off instant plus the final
    /// state, as `(time, temperatures)` over all mesh nodes (inactive nodes
    /// hold the ambient).
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub mesh: Mesh,
}

/// Runs the layer-by-layer conduction simulation.
pub fn simulate_fd(
    geom: &GeometryMaterialSpec,
    proc: &ProcessSpec,
    config: &SolverConfig,
) -> Result<FdResult> {
    geom.validate()?;
    proc.validate()?;
    config.validate()?;
    let mesh = mesh::build(geom)?;
    let mut solver = FdSolver::new(geom, proc, config, &mesh);
    solver.run()?;

    let trace = solver.trace;
    let mut t_mp = Vec::with_capacity(geom.n_layers);
    for layer in 1..=geom.n_layers {
        t_mp.push(trace.layer_max(layer).ok_or_else(|| {
            Error::MissingData(format!("layer {layer} never appears in the trace"))
        })?);
    }
    let schedule = BuildSchedule {
        deposition_times: (0..geom.n_layers)
            .map(|k| k as f64 * proc.interlayer_dwell_s)
            .collect(),
        t_end: geom.n_layers as f64 * proc.interlayer_dwell_s,
        t_mp,
        t_base: proc.ambient_c,
        t_ambient: proc.ambient_c,
        dt: 1.0 / config.sample_rate_hz,
    };
    schedule.validate()?;

    let mut energy = solver.audit;
    energy.max_rel_drift = energy
        .windows
        .iter()
        .map(|w| w.rel_drift)
        .fold(0.0, f64::max);

    Ok(FdResult {
        trace,
        schedule,
        energy,
        snapshots: solver.snapshots,
        mesh,
    })
}

struct FdSolver<'a> {
    geom: &'a GeometryMaterialSpec,
    proc: &'a ProcessSpec,
    cfg: &'a SolverConfig,
    mesh: &'a Mesh,
    temps: Vec<f64>,
    /// Volumetric enthalpy per node \[J/m³\].
    enthalpy: Vec<f64>,
    active: Vec<bool>,
    active_links: Vec<Link>,
    /// Volumetric source per node [W/m³].
    source: Vec<f64>,
    n_active_layers: usize,
    trace: ThermalTrace,
    sample_dt: f64,
    next_sample: usize,
    audit: EnergyAudit,
    snapshots: Vec<(f64, Vec<f64>)>,
    // Scratch buffers reused across steps.
    conductance: Vec<f64>,
    net_power: Vec<f64>,
}

impl<'a> FdSolver<'a> {
    fn new(
        geom: &'a GeometryMaterialSpec,
        proc: &'a ProcessSpec,
        cfg: &'a SolverConfig,
        mesh: &'a Mesh,
    ) -> Self {
        let n = mesh.nodes.len();
        let ambient_h = geom.material.enthalpy(proc.ambient_c);
        let mut active = vec![false; n];
        for a in active.iter_mut().take(mesh.n_plate_nodes) {
            *a = true;
        }
        let mut solver = FdSolver {
            geom,
            proc,
            cfg,
            mesh,
            temps: vec![proc.ambient_c; n],
            enthalpy: vec![ambient_h; n],
            active,
            active_links: Vec::new(),
            source: vec![0.0; n],
            n_active_layers: 0,
            trace: ThermalTrace::new(TraceKind::GroundTruth),
            sample_dt: 1.0 / cfg.sample_rate_hz,
            next_sample: 0,
            audit: EnergyAudit::default(),
            snapshots: Vec::new(),
            conductance: Vec::new(),
            net_power: vec![0.0; n],
        };
        solver.rebuild_active_links();
        solver
    }

    fn run(&mut self) -> Result<()> {
        let n_layers = self.geom.n_layers;
        let dwell = self.proc.interlayer_dwell_s;
        let t_end = n_layers as f64 * dwell;
        let tau = self.proc.heating_duration(self.geom.layer_area());
        if tau >= dwell {
            return Err(Error::InvalidSchedule(format!(
                "heating duration {tau} s does not fit in the dwell {dwell} s"
            )));
        }
        let q_vol = self.proc.power_w * self.proc.absorptivity / self.geom.layer_volume();

        for layer in 1..=n_layers {
            let dep = (layer - 1) as f64 * dwell;
            self.activate_layer(layer);
            self.record_due_samples(dep)?;

            // Heating phase in fine explicit substeps.
            self.set_source(layer, q_vol);
            let heat_off = self.advance(dep, dep + tau, true)?;
            self.clear_source();
            self.record_due_samples(heat_off)?;
            self.record_extra_sample(heat_off)?;
            self.snapshots.push((heat_off, self.temps.clone()));

            // Relaxation until the next deposition (or the horizon).
            let window_end = if layer < n_layers {
                layer as f64 * dwell
            } else {
                t_end
            };
            let e_start = self.total_enthalpy();
            let (f_min, f_max) = self.field_extremes();
            let mut run_min = f_min;
            let mut run_max = f_max;
            self.advance_tracking(heat_off, window_end, &mut run_min, &mut run_max)?;
            let e_end = self.total_enthalpy();
            self.audit.windows.push(WindowAudit {
                layer,
                energy_start_j: e_start,
                energy_end_j: e_end,
                rel_drift: (e_end - e_start).abs() / e_start.abs().max(f64::MIN_POSITIVE),
                max_principle_excess: (run_max - f_max).max(0.0),
                min_principle_excess: (f_min - run_min).max(0.0),
            });
        }
        self.record_due_samples(t_end)?;
        self.snapshots.push((t_end, self.temps.clone()));
        Ok(())
    }

    fn activate_layer(&mut self, layer: usize) {
        let ambient_h = self.geom.material.enthalpy(self.proc.ambient_c);
        for &i in &self.mesh.layer_nodes[layer - 1] {
            self.active[i] = true;
            self.temps[i] = self.proc.ambient_c;
            self.enthalpy[i] = ambient_h;
        }
        self.n_active_layers = layer;
        self.rebuild_active_links();
    }

    fn rebuild_active_links(&mut self) {
        self.active_links = self
            .mesh
            .links
            .iter()
            .filter(|l| self.active[l.a] && self.active[l.b])
            .copied()
            .collect();
        self.conductance = vec![0.0; self.active_links.len()];
    }

    fn set_source(&mut self, layer: usize, q_vol: f64) {
        for &i in &self.mesh.layer_nodes[layer - 1] {
            self.source[i] = q_vol;
        }
    }

    fn clear_source(&mut self) {
        self.source.iter_mut().for_each(|q| *q = 0.0);
    }

    fn advance(&mut self, t: f64, target: f64, heating: bool) -> Result<f64> {
        let mut sink_min = f64::NEG_INFINITY;
        let mut sink_max = f64::INFINITY;
        self.advance_inner(t, target, heating, &mut sink_min, &mut sink_max)
    }

    fn advance_tracking(
        &mut self,
        t: f64,
        target: f64,
        run_min: &mut f64,
        run_max: &mut f64,
    ) -> Result<f64> {
        self.advance_inner(t, target, false, run_min, run_max)
    }

    /// Steps from `t` to `target`. Sample-grid points strictly inside the
    /// span are recorded on the fly; a sample falling exactly on `target` is
    /// left to the caller so that layer activation lands in it first.
    ///
    /// Right after heat-off the field still carries sharp gradients, so
    /// relaxation restarts at the explicit-stable step and doubles it until
    /// the configured coarse step is reached.
    fn advance_inner(
        &mut self,
        mut t: f64,
        target: f64,
        heating: bool,
        run_min: &mut f64,
        run_max: &mut f64,
    ) -> Result<f64> {
        let eps = self.sample_dt * 1e-9;
        let tau = self.proc.heating_duration(self.geom.layer_area());
        let mut ramp: Option<f64> = None;
        while t < target - eps {
            let dt_max = if heating {
                let limit = self.cfg.stability_safety * self.stability_limit();
                (tau / self.cfg.heating_substeps as f64).min(limit)
            } else {
                match (self.cfg.scheme, self.cfg.dt) {
                    (Scheme::Explicit, None) => {
                        self.cfg.stability_safety * self.stability_limit()
                    }
                    (Scheme::Explicit, Some(dt)) => {
                        let limit = self.cfg.stability_safety * self.stability_limit();
                        if dt > limit {
                            return Err(Error::Unstable { dt, limit });
                        }
                        dt
                    }
                    (Scheme::Implicit, dt) => {
                        let coarse = dt.unwrap_or(0.1);
                        let current = *ramp.get_or_insert_with(|| {
                            (self.cfg.stability_safety * self.stability_limit()).min(coarse)
                        });
                        ramp = Some((current * 2.0).min(coarse));
                        current
                    }
                }
            };
            let next_sample_t = self.next_sample as f64 * self.sample_dt;
            let stop = target.min(next_sample_t);
            let dt = dt_max.min(stop - t).max(eps);
            if heating || self.cfg.scheme == Scheme::Explicit {
                self.step_explicit(dt)?;
            } else {
                self.step_implicit(dt)?;
            }
            t += dt;

            let (mn, mx) = self.field_extremes();
            if mn < *run_min {
                *run_min = mn;
            }
            if mx > *run_max {
                *run_max = mx;
            }

            if (t - next_sample_t).abs() <= eps && next_sample_t < target - eps {
                self.record_sample(next_sample_t)?;
                self.next_sample += 1;
                t = next_sample_t;
            }
        }
        Ok(target)
    }

    /// Records every sample-grid point due at or before `t` that has not been
    /// recorded yet.
    fn record_due_samples(&mut self, t: f64) -> Result<()> {
        let eps = self.sample_dt * 1e-9;
        while (self.next_sample as f64 * self.sample_dt) <= t + eps {
            let ts = self.next_sample as f64 * self.sample_dt;
            self.record_sample(ts)?;
            self.next_sample += 1;
        }
        Ok(())
    }

    fn record_sample(&mut self, t: f64) -> Result<()> {
        let v = self.layer_maxima();
        self.trace.push_sample(t, v)
    }

    /// Off-grid sample (heat-off instants), skipped when it collides with a
    /// grid point already recorded.
    fn record_extra_sample(&mut self, t: f64) -> Result<()> {
        if let Some(last) = self.trace.end_time() {
            if t <= last + self.sample_dt * 1e-9 {
                return Ok(());
            }
        }
        self.record_sample(t)
    }

    fn layer_maxima(&self) -> Vec<f64> {
        (1..=self.n_active_layers)
            .map(|layer| {
                self.mesh.layer_nodes[layer - 1]
                    .iter()
                    .map(|&i| self.temps[i])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    fn field_extremes(&self) -> (f64, f64) {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for (i, &t) in self.temps.iter().enumerate() {
            if self.active[i] {
                mn = mn.min(t);
                mx = mx.max(t);
            }
        }
        (mn, mx)
    }

    fn total_enthalpy(&self) -> f64 {
        self.mesh
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| self.active[*i])
            .map(|(i, n)| self.enthalpy[i] * n.volume)
            .sum()
    }

    fn update_conductances(&mut self) {
        let temps = std::mem::take(&mut self.temps);
        self.update_conductances_at(&temps);
        self.temps = temps;
    }

    fn update_conductances_at(&mut self, temps: &[f64]) {
        let mat = &self.geom.material;
        for (g, l) in self.conductance.iter_mut().zip(&self.active_links) {
            let ka = mat.k(temps[l.a]);
            let kb = mat.k(temps[l.b]);
            *g = l.area / (l.half_a / ka + l.half_b / kb);
        }
    }

    /// Secant heat capacity per volume between two temperatures, exact for
    /// the piecewise-linear cp tables; falls back to cp at `a` when the two
    /// states coincide.
    fn secant_capacity(&self, a: f64, b: f64) -> f64 {
        let mat = &self.geom.material;
        if (b - a).abs() < 1e-9 {
            mat.density() * mat.cp(a)
        } else {
            (mat.enthalpy(b) - mat.enthalpy(a)) / (b - a)
        }
    }

    /// Largest stable explicit step: min over nodes of heat capacity over
    /// total link conductance, which reduces to the usual element-size bound
    /// on a uniform grid.
    fn stability_limit(&mut self) -> f64 {
        self.update_conductances();
        let mat = &self.geom.material;
        let mut g_sum = vec![0.0f64; self.mesh.nodes.len()];
        for (g, l) in self.conductance.iter().zip(&self.active_links) {
            g_sum[l.a] += g;
            g_sum[l.b] += g;
        }
        let mut limit = f64::INFINITY;
        for (i, node) in self.mesh.nodes.iter().enumerate() {
            if self.active[i] && g_sum[i] > 0.0 {
                let c = mat.density() * mat.cp(self.temps[i]) * node.volume;
                limit = limit.min(c / g_sum[i]);
            }
        }
        limit
    }

    /// Applies link fluxes evaluated at `temps` plus the current source to
    /// the enthalpy field, then maps back to temperatures. Flux antisymmetry
    /// makes the total enthalpy change exactly the injected energy.
    fn apply_fluxes(&mut self, dt: f64, temps: &[f64]) {
        self.net_power.iter_mut().for_each(|p| *p = 0.0);
        for (g, l) in self.conductance.iter().zip(&self.active_links) {
            let q = g * (temps[l.a] - temps[l.b]);
            self.net_power[l.a] -= q;
            self.net_power[l.b] += q;
        }
        let mat = &self.geom.material;
        for (i, node) in self.mesh.nodes.iter().enumerate() {
            if !self.active[i] {
                continue;
            }
            let dh = dt * (self.net_power[i] / node.volume + self.source[i]);
            if dh != 0.0 {
                self.enthalpy[i] += dh;
                self.temps[i] = mat.temperature_of_enthalpy(self.enthalpy[i]);
            }
            if self.source[i] != 0.0 {
                self.audit.injected_j += dt * self.source[i] * node.volume;
            }
        }
    }

    fn step_explicit(&mut self, dt: f64) -> Result<()> {
        self.update_conductances();
        let temps = self.temps.clone();
        self.apply_fluxes(dt, &temps);
        if self.temps.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("temperature field diverged".into()));
        }
        Ok(())
    }

    /// Backward-Euler step: solve `(C/dt + L) x = (C/dt) T + q V` for the new
    /// temperatures, refining the temperature-dependent capacity (as a secant
    /// through the enthalpy curve) and conductivity at the new state by
    /// fixed-point iteration, then push the implied fluxes through the
    /// enthalpy so conservation stays exact regardless of the linear-solve
    /// tolerance.
    fn step_implicit(&mut self, dt: f64) -> Result<()> {
        let n = self.mesh.nodes.len();
        let mut guess = self.temps.clone();
        let mut diag_c = vec![0.0f64; n];
        let mut rhs = vec![0.0f64; n];
        let mut diag_a = vec![0.0f64; n];

        for _ in 0..self.cfg.property_iterations {
            self.update_conductances_at(&guess);
            for (i, node) in self.mesh.nodes.iter().enumerate() {
                let c = self.secant_capacity(self.temps[i], guess[i]) * node.volume / dt;
                diag_c[i] = c;
                rhs[i] = c * self.temps[i] + self.source[i] * node.volume;
                diag_a[i] = c;
            }
            for (g, l) in self.conductance.iter().zip(&self.active_links) {
                diag_a[l.a] += g;
                diag_a[l.b] += g;
            }

            let links = &self.active_links;
            let conductance = &self.conductance;
            let matvec = |x: &[f64], out: &mut [f64]| {
                for i in 0..n {
                    out[i] = diag_c[i] * x[i];
                }
                for (g, l) in conductance.iter().zip(links) {
                    let d = g * (x[l.a] - x[l.b]);
                    out[l.a] += d;
                    out[l.b] -= d;
                }
            };

            guess = conjugate_gradient(
                matvec,
                &diag_a,
                &rhs,
                &guess,
                self.cfg.cg_tolerance,
                self.cfg.cg_max_iterations,
            )?;
        }

        self.update_conductances_at(&guess);
        self.apply_fluxes(dt, &guess);
        if self.temps.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("temperature field diverged".into()));
        }
        Ok(())
    }
}

/// Jacobi-preconditioned conjugate gradient.
fn conjugate_gradient(
    matvec: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    matvec(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let threshold = tol * b_norm.max(f64::MIN_POSITIVE);

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(&r) <= threshold {
        return Ok(x);
    }

    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];

    for _ in 0..max_iter {
        matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Solver(
                "conjugate gradient lost positive definiteness".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= threshold {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!(
        "conjugate gradient did not converge within {max_iter} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_geom(layers: usize) -> GeometryMaterialSpec {
        GeometryMaterialSpec::cube_build(0.2e-3, layers)
    }

    fn fast_process(dwell: f64) -> ProcessSpec {
        ProcessSpec {
            interlayer_dwell_s: dwell,
            ..ProcessSpec::default()
        }
    }

    #[test]
    fn zero_power_field_stays_at_ambient() {
        let geom = tiny_geom(2);
        let proc = ProcessSpec {
            power_w: 0.0,
            interlayer_dwell_s: 0.5,
            ..ProcessSpec::default()
        };
        let cfg = SolverConfig {
            scheme: Scheme::Implicit,
            dt: Some(0.05),
            ..SolverConfig::default()
        };
        let out = simulate_fd(&geom, &proc, &cfg).unwrap();
        for v in out.trace.temps() {
            for &x in v {
                assert!((x - 27.0).abs() < 1e-9, "got {x}");
            }
        }
    }

    #[test]
    fn energy_conserved_after_heat_off() {
        let geom = tiny_geom(1);
        let proc = fast_process(2.0);
        let cfg = SolverConfig {
            scheme: Scheme::Implicit,
            dt: Some(0.05),
            ..SolverConfig::default()
        };
        let out = simulate_fd(&geom, &proc, &cfg).unwrap();
        assert!(out.energy.injected_j > 0.0);
        assert!(
            out.energy.max_rel_drift <= 1e-3,
            "drift {}",
            out.energy.max_rel_drift
        );
        let w = &out.energy.windows[0];
        assert!(w.energy_start_j > 0.0);
    }

    #[test]
    fn max_principle_during_free_decay() {
        let geom = tiny_geom(1);
        let proc = fast_process(2.0);
        let cfg = SolverConfig {
            scheme: Scheme::Implicit,
            dt: Some(0.02),
            ..SolverConfig::default()
        };
        let out = simulate_fd(&geom, &proc, &cfg).unwrap();
        for w in &out.energy.windows {
            assert!(w.max_principle_excess <= 1e-6, "{w:?}");
            assert!(w.min_principle_excess <= 1e-6, "{w:?}");
        }
    }

    #[test]
    fn explicit_mode_rejects_oversized_step() {
        let geom = tiny_geom(1);
        let proc = fast_process(1.0);
        let cfg = SolverConfig {
            scheme: Scheme::Explicit,
            dt: Some(0.05),
            ..SolverConfig::default()
        };
        let err = simulate_fd(&geom, &proc, &cfg).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }), "got {err:?}");
    }

    #[test]
    fn explicit_auto_step_runs_short_horizon() {
        let geom = tiny_geom(1);
        let proc = fast_process(0.2);
        let cfg = SolverConfig {
            sample_rate_hz: 20.0,
            ..SolverConfig::default()
        };
        let out = simulate_fd(&geom, &proc, &cfg).unwrap();
        assert!(out.trace.layer_max(1).unwrap() > 100.0);
        assert!(out.energy.max_rel_drift <= 1e-6);
    }

    #[test]
    fn heating_peak_far_exceeds_ambient() {
        let geom = tiny_geom(1);
        let proc = fast_process(2.0);
        let cfg = SolverConfig {
            scheme: Scheme::Implicit,
            dt: Some(0.05),
            ..SolverConfig::default()
        };
        let out = simulate_fd(&geom, &proc, &cfg).unwrap();
        let peak = out.trace.layer_max(1).unwrap();
        assert!(peak > 30.0 * 27.0, "peak {peak} not well above ambient");
        assert_eq!(out.schedule.t_mp[0], peak);
    }

    #[test]
    fn field_symmetric_under_square_symmetry() {
        let geom = tiny_geom(1);
        let proc = fast_process(1.0);
        let cfg = SolverConfig {
            scheme: Scheme::Implicit,
            dt: Some(0.05),
            cg_tolerance: 1e-12,
            ..SolverConfig::default()
        };
        let out = simulate_fd(&geom, &proc, &cfg).unwrap();
        let (t_snap, field) = &out.snapshots[0];
        assert!(*t_snap > 0.0);
        let side = geom.plate_side;
        // Mirror across x: for every node there is a node at (side - x, y, z)
        // with the same temperature.
        for (i, node) in out.mesh.nodes.iter().enumerate() {
            let c = node.center;
            let mirrored = [side - c[0], c[1], c[2]];
            let j = out
                .mesh
                .nodes
                .iter()
                .position(|m| {
                    (m.center[0] - mirrored[0]).abs() < 1e-12
                        && (m.center[1] - mirrored[1]).abs() < 1e-12
                        && (m.center[2] - mirrored[2]).abs() < 1e-12
                })
                .expect("mirror node exists");
            let d = (field[i] - field[j]).abs();
            assert!(d < 1e-6, "asymmetry {d} between nodes {i} and {j}");
        }
    }

    #[test]
    fn refinement_converges_on_layer_peak() {
        // Halving the part element size must shrink the change in the
        // first-layer peak with observed order >= 1.
        let proc = fast_process(0.5);
        let peak_for = |el: f64| {
            let mut geom = tiny_geom(1);
            geom.part_element_size = el;
            let cfg = SolverConfig {
                scheme: Scheme::Implicit,
                dt: Some(0.01),
                ..SolverConfig::default()
            };
            simulate_fd(&geom, &proc, &cfg)
                .unwrap()
                .trace
                .layer_max(1)
                .unwrap()
        };
        let p1 = peak_for(0.04e-3);
        let p2 = peak_for(0.02e-3);
        let p3 = peak_for(0.01e-3);
        let e1 = (p1 - p2).abs();
        let e2 = (p2 - p3).abs();
        assert!(e2 < e1, "refinement not convergent: {e1} -> {e2}");
        let order = (e1 / e2).log2();
        assert!(order >= 1.0, "observed order {order} (errors {e1}, {e2})");
    }
}
