//! Pseudo-measurement synthesis for the forecasting phase.
//!
//! Layer 1 has no history within the current build, so its feedback curve is
//! a triangle profile fitted to first-layer traces of previously printed
//! parts: an instantaneous peak followed by a linear decay to a settling
//! level. Every later layer reuses the current build's own history: the
//! pointwise average of all previous layers' build-window traces, aligned on
//! their deposition instants.

use crate::error::{Error, Result};
use crate::rom::BuildSchedule;
use crate::trace::{ThermalTrace, TraceKind};

/// Fraction of the triangle height used to detect the settling crossing.
const SETTLE_BAND: f64 = 0.02;

/// Fitted triangle profile of a first-layer temperature response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleParams {
    /// Average peak temperature \[°C\].
    pub t_peak: f64,
    /// Settling temperature \[°C\].
    pub t_settle: f64,
    /// Duration of the decaying edge \[s\].
    pub t_base_width: f64,
    /// Peak instant relative to the start of the layer window \[s\].
    pub onset: f64,
}

impl TriangleParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.t_peak, self.t_settle, self.t_base_width, self.onset];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("triangle parameters".into()));
        }
        if self.t_peak <= self.t_settle {
            return Err(Error::InvalidParams(format!(
                "triangle peak {} must exceed settling level {}",
                self.t_peak, self.t_settle
            )));
        }
        if self.t_base_width <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "triangle base width must be positive (got {})",
                self.t_base_width
            )));
        }
        Ok(())
    }

    /// Triangle value at time `t` relative to the layer window start.
    pub fn value_at(&self, t: f64) -> f64 {
        if t <= self.onset {
            self.t_peak
        } else if t < self.onset + self.t_base_width {
            let f = (t - self.onset) / self.t_base_width;
            self.t_peak - (self.t_peak - self.t_settle) * f
        } else {
            self.t_settle
        }
    }

    /// The literal constant `(T_p - T_s) / T_b + T_p`, kept for cross-checks
    /// against the published closed form.
    pub fn literal_value(&self) -> f64 {
        (self.t_peak - self.t_settle) / self.t_base_width + self.t_peak
    }
}

struct TriangleFeatures {
    peak: f64,
    settle: f64,
    width: f64,
    onset: f64,
}

/// Reads (peak, settle, width, onset) off one single-layer trace.
///
/// The settling crossing is located where the trace first comes within 2% of
/// the triangle height above the settling level; the leading edge is then
/// extrapolated down to the settling level so that exact triangles are
/// recovered exactly.
fn extract_features(trace: &ThermalTrace) -> Result<TriangleFeatures> {
    if trace.len() < 3 {
        return Err(Error::MissingData(format!(
            "triangle fit needs at least 3 samples, got {}",
            trace.len()
        )));
    }
    if trace.n_layers() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "triangle fit wants a single-layer trace, got {} layers",
            trace.n_layers()
        )));
    }
    let t0 = trace.times()[0];
    let values: Vec<f64> = trace.temps().iter().map(|v| v[0]).collect();
    let times = trace.times();

    let (peak_idx, &peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("non-empty trace");
    let settle = *values.last().expect("non-empty trace");
    if peak <= settle {
        return Err(Error::InvalidParams(
            "trace never decays below its peak; no triangle to fit".into(),
        ));
    }

    let height = peak - settle;
    let threshold = settle + SETTLE_BAND * height;
    let peak_time = times[peak_idx];

    let mut crossing = None;
    for i in peak_idx + 1..values.len() {
        if values[i] <= threshold {
            let (ta, tb) = (times[i - 1], times[i]);
            let (va, vb) = (values[i - 1], values[i]);
            let t_cross = if (va - vb).abs() > 0.0 {
                ta + (tb - ta) * (va - threshold) / (va - vb)
            } else {
                tb
            };
            crossing = Some(t_cross);
            break;
        }
    }
    let t_cross = crossing.unwrap_or_else(|| *times.last().unwrap());
    // Extend the peak-to-crossing edge down to the settling level.
    let width = ((t_cross - peak_time) / (1.0 - SETTLE_BAND)).max(f64::MIN_POSITIVE);

    Ok(TriangleFeatures {
        peak,
        settle,
        width,
        onset: peak_time - t0,
    })
}

/// Fits a triangle to each historical first-layer trace by feature
/// extraction and averages the fitted parameters across traces.
pub fn fit_triangle(historical: &[ThermalTrace]) -> Result<TriangleParams> {
    if historical.is_empty() {
        return Err(Error::MissingData(
            "triangle fit needs at least one historical trace".into(),
        ));
    }
    let mut acc = TriangleFeatures {
        peak: 0.0,
        settle: 0.0,
        width: 0.0,
        onset: 0.0,
    };
    for trace in historical {
        let f = extract_features(trace)?;
        acc.peak += f.peak;
        acc.settle += f.settle;
        acc.width += f.width;
        acc.onset += f.onset;
    }
    let n = historical.len() as f64;
    let params = TriangleParams {
        t_peak: acc.peak / n,
        t_settle: acc.settle / n,
        t_base_width: acc.width / n,
        onset: acc.onset / n,
    };
    params.validate()?;
    Ok(params)
}

/// Least-squares alternative to [`fit_triangle`]: per trace, a coarse-to-fine
/// grid search over (settle, width) minimizing the squared misfit of the
/// triangle profile, with the peak pinned to the observed maximum. Parameters
/// are then averaged across traces like the feature route.
pub fn fit_triangle_least_squares(historical: &[ThermalTrace]) -> Result<TriangleParams> {
    if historical.is_empty() {
        return Err(Error::MissingData(
            "triangle fit needs at least one historical trace".into(),
        ));
    }
    let mut sum = [0.0f64; 4];
    for trace in historical {
        let f = extract_features(trace)?; // reuse validation + peak/onset
        let t0 = trace.times()[0];
        let times: Vec<f64> = trace.times().iter().map(|&t| t - t0).collect();
        let values: Vec<f64> = trace.temps().iter().map(|v| v[0]).collect();
        let span = *times.last().unwrap();
        let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);

        let misfit = |settle: f64, width: f64| -> f64 {
            let tri = TriangleParams {
                t_peak: f.peak,
                t_settle: settle,
                t_base_width: width,
                onset: f.onset,
            };
            times
                .iter()
                .zip(&values)
                .map(|(&t, &v)| {
                    let d = v - tri.value_at(t);
                    d * d
                })
                .sum()
        };

        let (mut s_lo, mut s_hi) = (vmin, f.peak);
        let (mut w_lo, mut w_hi) = (f64::MIN_POSITIVE, span.max(1e-12));
        let (mut best_s, mut best_w) = (f.settle, f.width);
        for _ in 0..4 {
            let mut best = f64::INFINITY;
            for i in 0..=40 {
                let s = s_lo + (s_hi - s_lo) * i as f64 / 40.0;
                for j in 1..=40 {
                    let w = w_lo + (w_hi - w_lo) * j as f64 / 40.0;
                    let m = misfit(s, w);
                    if m < best {
                        best = m;
                        best_s = s;
                        best_w = w;
                    }
                }
            }
            let ds = (s_hi - s_lo) / 10.0;
            let dw = (w_hi - w_lo) / 10.0;
            s_lo = best_s - ds;
            s_hi = best_s + ds;
            w_lo = (best_w - dw).max(f64::MIN_POSITIVE);
            w_hi = best_w + dw;
        }
        sum[0] += f.peak;
        sum[1] += best_s;
        sum[2] += best_w;
        sum[3] += f.onset;
    }
    let n = historical.len() as f64;
    let params = TriangleParams {
        t_peak: sum[0] / n,
        t_settle: sum[1] / n,
        t_base_width: sum[2] / n,
        onset: sum[3] / n,
    };
    params.validate()?;
    Ok(params)
}

/// First-layer pseudo-measurements on `times` (relative to the layer window)
/// as the piecewise-linear triangle profile.
pub fn first_layer_pseudo(params: &TriangleParams, times: &[f64]) -> Result<ThermalTrace> {
    params.validate()?;
    if times.is_empty() {
        return Err(Error::MissingData("empty pseudo-data time grid".into()));
    }
    let values: Vec<f64> = times.iter().map(|&t| params.value_at(t)).collect();
    ThermalTrace::single_layer(TraceKind::Pseudo, times, &values)
}

/// First-layer pseudo-measurements in the literal closed form: a constant
/// `(T_p - T_s) / T_b + T_p` over the whole grid.
pub fn first_layer_pseudo_literal(params: &TriangleParams, times: &[f64]) -> Result<ThermalTrace> {
    params.validate()?;
    if times.is_empty() {
        return Err(Error::MissingData("empty pseudo-data time grid".into()));
    }
    let v = params.literal_value();
    let values = vec![v; times.len()];
    ThermalTrace::single_layer(TraceKind::Pseudo, times, &values)
}

/// Pseudo-measurements for layer `n >= 2`: the pointwise mean of the previous
/// `n - 1` layers' build-window traces, each aligned so its own deposition
/// instant maps to relative time 0 and resampled onto `grid` by linear
/// interpolation.
pub fn layer_n_pseudo(
    prior_segments: &[ThermalTrace],
    n: usize,
    grid: &[f64],
) -> Result<ThermalTrace> {
    if n < 2 {
        return Err(Error::InvalidParams(format!(
            "layer-average pseudo-data is defined for layer >= 2 (got {n})"
        )));
    }
    if prior_segments.len() != n - 1 {
        return Err(Error::MissingData(format!(
            "layer {n} needs {} prior segments, got {}",
            n - 1,
            prior_segments.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::MissingData("empty pseudo-data time grid".into()));
    }
    for (j, seg) in prior_segments.iter().enumerate() {
        if seg.is_empty() || seg.n_layers() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "prior segment {} must be a non-empty single-layer trace",
                j + 1
            )));
        }
    }

    let mut values = Vec::with_capacity(grid.len());
    let mut column = Vec::with_capacity(n - 1);
    for &t in grid {
        column.clear();
        for (j, seg) in prior_segments.iter().enumerate() {
            let rel0 = seg.times()[0];
            let span = seg.end_time().unwrap() - rel0;
            let slack = span * 1e-9 + 1e-12;
            let v = seg
                .sample_layer_clamped(1, rel0 + t, slack)
                .ok_or_else(|| {
                    Error::MissingData(format!(
                        "prior segment {} does not cover relative time {t} s",
                        j + 1
                    ))
                })?;
            column.push(v);
        }
        // Summing in value order makes the mean exactly invariant under
        // permutation of the prior traces.
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.push(column.iter().sum::<f64>() / (n - 1) as f64);
    }
    ThermalTrace::single_layer(TraceKind::Pseudo, grid, &values)
}

/// How the first layer's pseudo-data is synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoMode {
    /// Triangle profile over time (default).
    Triangle,
    /// The literal constant closed form, for cross-checking.
    Literal,
}

/// Assembles the full-state pseudo-measurement trace for a build.
///
/// Each layer gets one curve on its own relative clock: the fitted triangle
/// for layer 1 and the prior-layer average for the rest, with prior windows
/// taken from `measured` (they lie in the past once the layer prints). Beyond
/// its own build window a layer's curve is held at its final value, so the
/// feed is defined for every active layer at every sample of the build grid.
pub fn pseudo_feed(
    schedule: &BuildSchedule,
    measured: &ThermalTrace,
    triangle: &TriangleParams,
    mode: PseudoMode,
) -> Result<ThermalTrace> {
    schedule.validate()?;
    triangle.validate()?;
    let n_layers = schedule.n_layers();
    if n_layers == 0 {
        return Err(Error::InvalidSchedule("empty build".into()));
    }
    let dt = schedule.dt;
    let t0 = schedule.deposition_times[0];
    let steps = (((schedule.t_end - t0) / dt) + 1e-9).floor() as usize;

    // One relative-time curve per layer.
    let mut curves: Vec<ThermalTrace> = Vec::with_capacity(n_layers);
    for layer in 1..=n_layers {
        let (start, end) = schedule.epoch_window(layer);
        let window = end - start;
        let rel_steps = ((window / dt) + 1e-9).floor() as usize;
        let grid: Vec<f64> = (0..=rel_steps).map(|i| i as f64 * dt).collect();
        let curve = if layer == 1 {
            match mode {
                PseudoMode::Triangle => first_layer_pseudo(triangle, &grid)?,
                PseudoMode::Literal => first_layer_pseudo_literal(triangle, &grid)?,
            }
        } else {
            let priors: Vec<ThermalTrace> = (1..layer)
                .map(|j| {
                    let (s, e) = schedule.epoch_window(j);
                    measured.layer_segment(j, s, e)
                })
                .collect::<Result<_>>()?;
            layer_n_pseudo(&priors, layer, &grid)?
        };
        curves.push(curve);
    }

    let eps = dt * 1e-6;
    let mut feed = ThermalTrace::with_capacity(TraceKind::Pseudo, steps + 1);
    let mut active = 0usize;
    for i in 0..=steps {
        let t = t0 + i as f64 * dt;
        while active < n_layers && schedule.deposition_times[active] <= t + eps {
            active += 1;
        }
        let mut v = Vec::with_capacity(active);
        for layer in 1..=active {
            let rel = t - schedule.deposition_time(layer);
            let curve = &curves[layer - 1];
            let end = curve.end_time().expect("curves are non-empty");
            let x = curve
                .sample_layer_clamped(1, rel.min(end), eps)
                .expect("curve covers its own window");
            v.push(x);
        }
        feed.push_sample(t, v)?;
    }
    Ok(feed)
}
