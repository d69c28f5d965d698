//! Per-layer temperature time series.
//!
//! A [`ThermalTrace`] stores one temperature per active layer per sample.
//! Layer indices are 1-based throughout the crate (layer 1 sits on the base
//! plate); the temperature vector at a sample covers layers `1..=len`, so the
//! vector grows as the build deposits new layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a trace represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    GroundTruth,
    Rom,
    Estimate,
    Forecast,
    Pseudo,
}

impl TraceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::GroundTruth => "ground-truth",
            TraceKind::Rom => "rom",
            TraceKind::Estimate => "estimate",
            TraceKind::Forecast => "forecast",
            TraceKind::Pseudo => "pseudo",
        }
    }
}

/// Time series of per-layer temperatures in degrees Celsius.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalTrace {
    times: Vec<f64>,
    temps: Vec<Vec<f64>>,
    kind: TraceKind,
}

impl ThermalTrace {
    pub fn new(kind: TraceKind) -> Self {
        ThermalTrace {
            times: Vec::new(),
            temps: Vec::new(),
            kind,
        }
    }

    pub fn with_capacity(kind: TraceKind, n: usize) -> Self {
        ThermalTrace {
            times: Vec::with_capacity(n),
            temps: Vec::with_capacity(n),
            kind,
        }
    }

    /// Builds a single-layer trace from parallel time/value slices.
    pub fn single_layer(kind: TraceKind, times: &[f64], values: &[f64]) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "times ({}) vs values ({})",
                times.len(),
                values.len()
            )));
        }
        let mut trace = ThermalTrace::with_capacity(kind, times.len());
        for (&t, &v) in times.iter().zip(values) {
            trace.push_sample(t, vec![v])?;
        }
        Ok(trace)
    }

    /// Appends a sample. Times must be strictly increasing and the layer
    /// vector may never shrink.
    pub fn push_sample(&mut self, time: f64, layer_temps: Vec<f64>) -> Result<()> {
        if !time.is_finite() {
            return Err(Error::NonFinite(format!("sample time {time}")));
        }
        if layer_temps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("temperature at t = {time} s")));
        }
        if let Some(&last) = self.times.last() {
            if time <= last {
                return Err(Error::InvalidSchedule(format!(
                    "sample times must increase strictly ({time} after {last})"
                )));
            }
        }
        if let Some(prev) = self.temps.last() {
            if layer_temps.len() < prev.len() {
                return Err(Error::DimensionMismatch(format!(
                    "layer count dropped from {} to {} at t = {time} s",
                    prev.len(),
                    layer_temps.len()
                )));
            }
        }
        self.times.push(time);
        self.temps.push(layer_temps);
        Ok(())
    }

    pub fn kind(&self) -> TraceKind {
        self.kind
    }

    pub fn set_kind(&mut self, kind: TraceKind) {
        self.kind = kind;
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn temps(&self) -> &[Vec<f64>] {
        &self.temps
    }

    pub fn sample(&self, i: usize) -> (f64, &[f64]) {
        (self.times[i], &self.temps[i])
    }

    /// Number of layers present at the final sample (0 for an empty trace).
    pub fn n_layers(&self) -> usize {
        self.temps.last().map_or(0, |v| v.len())
    }

    pub fn start_time(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn end_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// First sample time at which `layer` (1-based) is present.
    pub fn layer_birth(&self, layer: usize) -> Option<f64> {
        self.temps
            .iter()
            .position(|v| v.len() >= layer)
            .map(|i| self.times[i])
    }

    /// Linearly interpolated temperature of `layer` at time `t`.
    ///
    /// Returns `None` when `t` falls outside the span over which the layer
    /// exists. Interpolation between the activation sample and anything
    /// earlier is deliberately not attempted.
    pub fn sample_layer(&self, layer: usize, t: f64) -> Option<f64> {
        if layer == 0 {
            return None;
        }
        let first = self.temps.iter().position(|v| v.len() >= layer)?;
        let times = &self.times[first..];
        let idx = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return Some(self.temps[first + i][layer - 1]),
            Err(i) => i,
        };
        if idx == 0 || idx == times.len() {
            return None;
        }
        let (t0, t1) = (times[idx - 1], times[idx]);
        let v0 = self.temps[first + idx - 1][layer - 1];
        let v1 = self.temps[first + idx][layer - 1];
        Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
    }

    /// Like [`sample_layer`](Self::sample_layer) but clamps `t` to the layer's
    /// span when it lies within `slack` of either end.
    pub fn sample_layer_clamped(&self, layer: usize, t: f64, slack: f64) -> Option<f64> {
        if let Some(v) = self.sample_layer(layer, t) {
            return Some(v);
        }
        let birth = self.layer_birth(layer)?;
        let end = self.end_time()?;
        if t < birth && birth - t <= slack {
            self.sample_layer(layer, birth)
        } else if t > end && t - end <= slack {
            self.sample_layer(layer, end)
        } else {
            None
        }
    }

    /// Maximum temperature ever reached by `layer` (1-based).
    pub fn layer_max(&self, layer: usize) -> Option<f64> {
        let mut max: Option<f64> = None;
        for v in &self.temps {
            if v.len() >= layer {
                let x = v[layer - 1];
                max = Some(max.map_or(x, |m| f64::max(m, x)));
            }
        }
        max
    }

    /// Extracts `layer`'s samples with `start <= t <= end` as a single-layer
    /// trace (absolute times, same kind).
    pub fn layer_segment(&self, layer: usize, start: f64, end: f64) -> Result<ThermalTrace> {
        let mut seg = ThermalTrace::new(self.kind);
        for (i, v) in self.temps.iter().enumerate() {
            let t = self.times[i];
            if t >= start && t <= end && v.len() >= layer {
                seg.push_sample(t, vec![v[layer - 1]])?;
            }
        }
        if seg.is_empty() {
            return Err(Error::MissingData(format!(
                "layer {layer} has no samples in [{start}, {end}] s"
            )));
        }
        Ok(seg)
    }

    /// Sample times of both traces restricted to their overlapping span,
    /// merged and deduplicated. Used to compare traces symmetrically.
    pub fn common_times(&self, other: &ThermalTrace) -> Vec<f64> {
        let (Some(a0), Some(a1)) = (self.start_time(), self.end_time()) else {
            return Vec::new();
        };
        let (Some(b0), Some(b1)) = (other.start_time(), other.end_time()) else {
            return Vec::new();
        };
        let lo = a0.max(b0);
        let hi = a1.min(b1);
        if lo > hi {
            return Vec::new();
        }
        let mut merged: Vec<f64> = self
            .times
            .iter()
            .chain(other.times.iter())
            .copied()
            .filter(|&t| t >= lo && t <= hi)
            .collect();
        merged.sort_by(|a, b| a.partial_cmp(b).unwrap());
        merged.dedup();
        merged
    }
}
