//! Dataset files, ingestion and report generation.
//!
//! A dataset is a directory holding `manifest.json` (geometry, process,
//! solver settings, schedule, provenance, units) and `trace.csv` with the
//! per-layer temperature history in long format: `time_s, layer_index,
//! temperature_c`, one row per (sample, layer), header mandatory. Values are
//! written with Rust's shortest round-trip float formatting, so export
//! followed by ingest reproduces every value bit for bit.

pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Diagnostics, FilterRun};
use crate::ident::{rmse, LayerRmse};
use crate::oracle::{EnergyAudit, FdResult, GeometryMaterialSpec, ProcessSpec, SolverConfig};
use crate::rom::{BuildSchedule, ParamSchedule};
use crate::trace::{ThermalTrace, TraceKind};

pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
const TRACE_HEADER: &str = "time_s,layer_index,temperature_c";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub time: String,
    pub temperature: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            time: "s".into(),
            temperature: "C".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub units: Units,
    pub n_layers: usize,
    pub sample_rate_hz: f64,
    pub schedule: BuildSchedule,
    pub geometry: GeometryMaterialSpec,
    pub process: ProcessSpec,
    pub solver: SolverConfig,
    pub energy: EnergyAudit,
    pub provenance: Provenance,
}

/// A validated dataset held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub trace: ThermalTrace,
    pub dir: PathBuf,
}

impl Dataset {
    /// Build schedule recorded at export time, optionally re-sampled with a
    /// different integration step.
    pub fn build_schedule(&self, dt: Option<f64>) -> Result<BuildSchedule> {
        let mut s = self.manifest.schedule.clone();
        if let Some(dt) = dt {
            s.dt = dt;
        }
        s.validate()?;
        Ok(s)
    }
}

/// Writes a simulation result as a dataset directory.
pub fn export_dataset(
    dir: &Path,
    name: &str,
    result: &FdResult,
    geometry: &GeometryMaterialSpec,
    process: &ProcessSpec,
    solver: &SolverConfig,
    seed: u64,
) -> Result<Dataset> {
    let manifest = Manifest {
        name: name.to_string(),
        units: Units::default(),
        n_layers: geometry.n_layers,
        sample_rate_hz: solver.sample_rate_hz,
        schedule: result.schedule.clone(),
        geometry: geometry.clone(),
        process: *process,
        solver: *solver,
        energy: result.energy.clone(),
        provenance: Provenance {
            generator: "lpbf-tf simulate".into(),
            seed,
            note: format!("material: {}", geometry.material.name),
        },
    };
    export(dir, &manifest, &result.trace)?;
    Ok(Dataset {
        manifest,
        trace: result.trace.clone(),
        dir: dir.to_path_buf(),
    })
}

/// Writes `manifest.json` and `trace.csv` into `dir`, creating it if needed.
pub fn export(dir: &Path, manifest: &Manifest, trace: &ThermalTrace) -> Result<()> {
    if manifest.n_layers != trace.n_layers() {
        return Err(Error::DimensionMismatch(format!(
            "manifest says {} layers, trace ends with {}",
            manifest.n_layers,
            trace.n_layers()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::InvalidParams(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, json + "\n")
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    write_trace_csv(&dir.join(TRACE_FILE), trace)
}

/// Reads and validates a dataset directory.
pub fn ingest(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| Error::Format {
        path: manifest_path.display().to_string(),
        row: e.line(),
        message: e.to_string(),
    })?;
    if manifest.units != Units::default() {
        return Err(Error::InvalidParams(format!(
            "unsupported units: time [{}], temperature [{}] (expected s and C)",
            manifest.units.time, manifest.units.temperature
        )));
    }
    manifest.schedule.validate()?;
    let trace = read_trace_csv(&dir.join(TRACE_FILE), TraceKind::GroundTruth)?;
    if trace.n_layers() != manifest.n_layers {
        return Err(Error::DimensionMismatch(format!(
            "manifest says {} layers, trace ends with {}",
            manifest.n_layers,
            trace.n_layers()
        )));
    }
    Ok(Dataset {
        manifest,
        trace,
        dir: dir.to_path_buf(),
    })
}

/// Writes a trace in the long CSV format, rows ordered by time then layer.
pub fn write_trace_csv(path: &Path, trace: &ThermalTrace) -> Result<()> {
    let mut out = String::with_capacity(trace.len() * 24 + 32);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for (i, temps) in trace.temps().iter().enumerate() {
        let t = trace.times()[i];
        for (j, v) in temps.iter().enumerate() {
            out.push_str(&format!("{t},{},{v}\n", j + 1));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads the long CSV format back into a trace, reporting schema violations
/// with their file row.
pub fn read_trace_csv(path: &Path, kind: TraceKind) -> Result<ThermalTrace> {
    let raw =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_str = path.display().to_string();
    let fail = |row: usize, message: String| Error::Format {
        path: path_str.clone(),
        row,
        message,
    };

    let mut lines = raw.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == TRACE_HEADER => {}
        Some((_, header)) => {
            return Err(fail(
                1,
                format!("expected header '{TRACE_HEADER}', found '{header}'"),
            ))
        }
        None => return Err(fail(1, "empty file".into())),
    }

    let mut trace = ThermalTrace::new(kind);
    let mut group_time: Option<f64> = None;
    let mut group_row = 0usize;
    let mut group: Vec<f64> = Vec::new();
    let mut last_time: Option<f64> = None;

    let flush = |time: Option<f64>,
                     group: &mut Vec<f64>,
                     row: usize,
                     trace: &mut ThermalTrace,
                     last_time: &mut Option<f64>|
     -> Result<()> {
        if let Some(t) = time {
            if let Some(prev) = *last_time {
                if t <= prev {
                    return Err(fail(row, format!("time {t} does not increase past {prev}")));
                }
            }
            if let Some(prev_len) = trace.temps().last().map(|v| v.len()) {
                if group.len() < prev_len {
                    return Err(fail(
                        row,
                        format!("layer count dropped from {prev_len} to {}", group.len()),
                    ));
                }
            }
            trace
                .push_sample(t, std::mem::take(group))
                .map_err(|e| fail(row, e.to_string()))?;
            *last_time = Some(t);
        }
        Ok(())
    };

    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(t_str), Some(l_str), Some(v_str), None) = (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) else {
            return Err(fail(row, "expected exactly 3 comma-separated fields".into()));
        };
        let t: f64 = t_str
            .trim()
            .parse()
            .map_err(|_| fail(row, format!("bad time '{t_str}'")))?;
        let layer: usize = l_str
            .trim()
            .parse()
            .map_err(|_| fail(row, format!("bad layer index '{l_str}'")))?;
        let v: f64 = v_str
            .trim()
            .parse()
            .map_err(|_| fail(row, format!("bad temperature '{v_str}'")))?;
        if !t.is_finite() {
            return Err(fail(row, format!("non-finite time {t}")));
        }
        if !v.is_finite() {
            return Err(fail(row, format!("non-finite temperature {v}")));
        }

        if group_time == Some(t) {
            if layer != group.len() + 1 {
                return Err(fail(
                    row,
                    format!("expected layer {}, found {layer}", group.len() + 1),
                ));
            }
            group.push(v);
        } else {
            flush(group_time, &mut group, group_row, &mut trace, &mut last_time)?;
            if layer != 1 {
                return Err(fail(row, format!("sample must start at layer 1, found {layer}")));
            }
            group_time = Some(t);
            group_row = row;
            group = vec![v];
        }
    }
    flush(group_time, &mut group, group_row, &mut trace, &mut last_time)?;

    if trace.is_empty() {
        return Err(fail(2, "no data rows".into()));
    }
    Ok(trace)
}

pub fn write_param_schedule(path: &Path, params: &ParamSchedule) -> Result<()> {
    let json = serde_json::to_string_pretty(params)
        .map_err(|e| Error::InvalidParams(format!("parameter schedule serialization: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_param_schedule(path: &Path) -> Result<ParamSchedule> {
    let raw =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let params: ParamSchedule = serde_json::from_str(&raw).map_err(|e| Error::Format {
        path: path.display().to_string(),
        row: e.line(),
        message: e.to_string(),
    })?;
    params.validate()?;
    Ok(params)
}

/// Which span of a layer's life a per-layer RMSE row covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RmseWindow {
    /// From the layer's deposition to the next one.
    OwnEpoch,
    /// The forecast phase of the layer's own epoch: from `split_time` after
    /// deposition to the next deposition.
    OwnEpochForecast { split_time: f64 },
    /// From the layer's deposition to the end of the build.
    WholeBuild,
}

/// Per-layer RMSE of `pred` against `truth` over the chosen window, comparing
/// each layer's own temperature series.
pub fn per_layer_rmse(
    pred: &ThermalTrace,
    truth: &ThermalTrace,
    schedule: &BuildSchedule,
    window: RmseWindow,
) -> Result<Vec<LayerRmse>> {
    let mut rows = Vec::with_capacity(schedule.n_layers());
    for layer in 1..=schedule.n_layers() {
        let (start, end) = match window {
            RmseWindow::OwnEpoch => schedule.epoch_window(layer),
            RmseWindow::OwnEpochForecast { split_time } => {
                let (s, e) = schedule.epoch_window(layer);
                (s + split_time, e)
            }
            RmseWindow::WholeBuild => {
                (schedule.deposition_time(layer), schedule.t_end)
            }
        };
        let p = pred.layer_segment(layer, start, end)?;
        let t = truth.layer_segment(layer, start, end)?;
        rows.push(LayerRmse {
            layer,
            rmse_c: rmse(&p, &t)?,
        });
    }
    Ok(rows)
}

/// Writes a two-column RMSE table: `layer, rom_rmse_c, kalman_rmse_c`.
pub fn write_rmse_table(path: &Path, rom: &[LayerRmse], kalman: &[LayerRmse]) -> Result<()> {
    if rom.len() != kalman.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} open-loop rows vs {} filter rows",
            rom.len(),
            kalman.len()
        )));
    }
    let mut out = String::from("layer,rom_rmse_c,kalman_rmse_c\n");
    for (r, k) in rom.iter().zip(kalman) {
        out.push_str(&format!("{},{},{}\n", r.layer, r.rmse_c, k.rmse_c));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Single-column RMSE table in the same shape, for identification reports.
pub fn write_rom_rmse_table(path: &Path, rows: &[LayerRmse]) -> Result<()> {
    let mut out = String::from("layer,rom_rmse_c\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.layer, r.rmse_c));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Everything a forecast report needs.
pub struct ReportInputs<'a> {
    pub truth: &'a ThermalTrace,
    pub open_loop: &'a ThermalTrace,
    pub run: &'a FilterRun,
    pub schedule: &'a BuildSchedule,
    pub split_time: f64,
}

/// Files written by [`report`].
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub rmse_per_layer: PathBuf,
    pub rmse_forecast: PathBuf,
    pub error_traces: PathBuf,
    pub diagnostics: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Emits the standard run report: per-layer RMSE tables, pointwise error
/// series, filter diagnostic series and one SVG quick-look per layer plus
/// covariance/gain charts.
///
/// Two RMSE tables are written. `rmse_per_layer.csv` evaluates each layer
/// over its own full epoch window (estimation plus forecast phases) and is
/// the canonical per-layer table; `rmse_forecast_window.csv` restricts the
/// comparison to the forecast phase of each epoch.
pub fn report(dir: &Path, inputs: &ReportInputs) -> Result<ReportPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let plots_dir = dir.join("plots");
    fs::create_dir_all(&plots_dir).map_err(|e| Error::io(plots_dir.display().to_string(), e))?;

    let kalman = &inputs.run.combined;
    let window = RmseWindow::OwnEpochForecast {
        split_time: inputs.split_time,
    };
    let rom_fc = per_layer_rmse(inputs.open_loop, inputs.truth, inputs.schedule, window)?;
    let kf_fc = per_layer_rmse(kalman, inputs.truth, inputs.schedule, window)?;
    let rmse_forecast = dir.join("rmse_forecast_window.csv");
    write_rmse_table(&rmse_forecast, &rom_fc, &kf_fc)?;

    let rom_full = per_layer_rmse(inputs.open_loop, inputs.truth, inputs.schedule, RmseWindow::OwnEpoch)?;
    let kf_full = per_layer_rmse(kalman, inputs.truth, inputs.schedule, RmseWindow::OwnEpoch)?;
    let rmse_per_layer = dir.join("rmse_per_layer.csv");
    write_rmse_table(&rmse_per_layer, &rom_full, &kf_full)?;

    let error_traces = dir.join("error_traces.csv");
    write_error_traces(&error_traces, inputs)?;

    let diagnostics = dir.join("diagnostics.csv");
    write_diagnostics(&diagnostics, &inputs.run.diagnostics)?;

    let mut plots = Vec::new();
    for layer in 1..=inputs.schedule.n_layers() {
        let (start, end) = inputs.schedule.epoch_window(layer);
        let chart = svg::Chart {
            title: format!("layer {layer}: truth vs open loop vs filter"),
            x_label: "time [s]".into(),
            y_label: "temperature [C]".into(),
            series: vec![
                series_for(inputs.truth, layer, start, end, "ground truth"),
                series_for(inputs.open_loop, layer, start, end, "open loop"),
                series_for(kalman, layer, start, end, "kalman"),
            ],
        };
        let path = plots_dir.join(format!("layer_{layer:02}.svg"));
        fs::write(&path, chart.render())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        plots.push(path);
    }
    for (what, path_name) in [("covariance", "covariance.svg"), ("gain", "gain.svg")] {
        let diag = &inputs.run.diagnostics;
        let n_layers = inputs.schedule.n_layers();
        let mut series = Vec::new();
        for layer in 1..=n_layers {
            let mut points = Vec::new();
            for (i, &t) in diag.times.iter().enumerate() {
                let values = if what == "covariance" {
                    &diag.covariance_diag[i]
                } else {
                    &diag.gain_diag[i]
                };
                if values.len() >= layer {
                    points.push((t, values[layer - 1]));
                }
            }
            series.push(svg::Series {
                label: format!("layer {layer}"),
                points,
            });
        }
        let chart = svg::Chart {
            title: format!("{what} evolution"),
            x_label: "time [s]".into(),
            y_label: what.into(),
            series,
        };
        let path = plots_dir.join(path_name);
        fs::write(&path, chart.render())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        plots.push(path);
    }

    Ok(ReportPaths {
        rmse_per_layer,
        rmse_forecast,
        error_traces,
        diagnostics,
        plots,
    })
}

fn series_for(trace: &ThermalTrace, layer: usize, start: f64, end: f64, label: &str) -> svg::Series {
    let mut points = Vec::new();
    for (i, &t) in trace.times().iter().enumerate() {
        if t >= start && t <= end && trace.temps()[i].len() >= layer {
            points.push((t, trace.temps()[i][layer - 1]));
        }
    }
    svg::Series {
        label: label.into(),
        points,
    }
}

fn write_error_traces(path: &Path, inputs: &ReportInputs) -> Result<()> {
    let kalman = &inputs.run.combined;
    let mut out = String::from("time_s,layer_index,open_loop_error_c,kalman_error_c\n");
    for (i, &t) in kalman.times().iter().enumerate() {
        for layer in 1..=kalman.temps()[i].len() {
            let (Some(truth), Some(open)) = (
                inputs.truth.sample_layer(layer, t),
                inputs.open_loop.sample_layer(layer, t),
            ) else {
                continue;
            };
            let kf = kalman.temps()[i][layer - 1];
            out.push_str(&format!("{t},{layer},{},{}\n", open - truth, kf - truth));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_diagnostics(path: &Path, diag: &Diagnostics) -> Result<()> {
    let mut out = String::from("time_s,layer_index,mode,covariance,gain\n");
    for (i, &t) in diag.times.iter().enumerate() {
        let mode = diag.modes[i].as_str();
        for layer in 1..=diag.covariance_diag[i].len() {
            out.push_str(&format!(
                "{t},{layer},{mode},{},{}\n",
                diag.covariance_diag[i][layer - 1],
                diag.gain_diag[i][layer - 1]
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{simulate_fd, Scheme};

    fn tiny_dataset(dir: &Path) -> Dataset {
        let geom = GeometryMaterialSpec::cube_build(0.2e-3, 2);
        let proc = ProcessSpec {
            interlayer_dwell_s: 1.0,
            ..ProcessSpec::default()
        };
        let solver = SolverConfig {
            scheme: Scheme::Implicit,
            dt: Some(0.05),
            ..SolverConfig::default()
        };
        let result = simulate_fd(&geom, &proc, &solver).unwrap();
        export_dataset(dir, "tiny", &result, &geom, &proc, &solver, 7).unwrap()
    }

    #[test]
    fn export_ingest_roundtrip_is_identity() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(tmp.path());
        let back = ingest(tmp.path()).unwrap();
        assert_eq!(back.trace.times(), ds.trace.times());
        assert_eq!(back.trace.temps(), ds.trace.temps());
        assert_eq!(back.manifest.n_layers, 2);
        assert_eq!(back.manifest.provenance.seed, 7);
    }

    #[test]
    fn export_is_byte_deterministic() {
        let tmp_a = tempfile::tempdir().unwrap();
        let tmp_b = tempfile::tempdir().unwrap();
        tiny_dataset(tmp_a.path());
        tiny_dataset(tmp_b.path());
        for f in [TRACE_FILE, MANIFEST_FILE] {
            let a = fs::read(tmp_a.path().join(f)).unwrap();
            let b = fs::read(tmp_b.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between identical runs");
        }
    }

    #[test]
    fn backwards_time_error_names_the_row() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.csv");
        fs::write(
            &path,
            "time_s,layer_index,temperature_c\n\
             0,1,27\n\
             1,1,28\n\
             1,2,30\n\
             2,1,26\n\
             2,2,29\n\
             1.5,1,25\n\
             1.5,2,26\n",
        )
        .unwrap();
        let err = read_trace_csv(&path, TraceKind::GroundTruth).unwrap_err();
        match err {
            Error::Format { row, .. } => assert_eq!(row, 7),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_layer_order_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.csv");
        fs::write(
            &path,
            "time_s,layer_index,temperature_c\n0,1,27\n0,3,28\n",
        )
        .unwrap();
        let err = read_trace_csv(&path, TraceKind::GroundTruth).unwrap_err();
        match err {
            Error::Format { row, message, .. } => {
                assert_eq!(row, 3);
                assert!(message.contains("layer"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_and_field_count_are_enforced() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.csv");
        fs::write(&path, "t,l,v\n0,1,27\n").unwrap();
        assert!(matches!(
            read_trace_csv(&path, TraceKind::GroundTruth),
            Err(Error::Format { row: 1, .. })
        ));
        fs::write(&path, "time_s,layer_index,temperature_c\n0,1\n").unwrap();
        assert!(matches!(
            read_trace_csv(&path, TraceKind::GroundTruth),
            Err(Error::Format { row: 2, .. })
        ));
    }

    #[test]
    fn param_schedule_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("params.json");
        let p = crate::rom::LayerParams::new(13190.0, 0.7, -1500.0, 1500.0, 0.0).unwrap();
        let schedule = ParamSchedule::uniform(vec![p, p, p]);
        write_param_schedule(&path, &schedule).unwrap();
        let back = read_param_schedule(&path).unwrap();
        assert_eq!(back, schedule);
    }

    #[test]
    fn manifest_layer_mismatch_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dataset(tmp.path());
        // Truncate the trace to a single layer 1 row: final layer count drops.
        fs::write(
            tmp.path().join(TRACE_FILE),
            "time_s,layer_index,temperature_c\n0,1,27\n",
        )
        .unwrap();
        assert!(matches!(
            ingest(tmp.path()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
