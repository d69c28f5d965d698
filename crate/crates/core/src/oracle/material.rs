//! Temperature-dependent material properties.
//!
//! Properties come as monotone lookup tables in temperature. Specific heat is
//! integrated once into a volumetric enthalpy curve so the solver can step in
//! enthalpy (which is what adiabatic conservation acts on) and map back to
//! temperature exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyPoint {
    pub temperature_c: f64,
    pub specific_heat_j_per_kg_k: f64,
    pub conductivity_w_per_m_k: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaterialTable {
    pub name: String,
    #[serde(default)]
    pub note: String,
    pub density_kg_per_m3: f64,
    pub points: Vec<PropertyPoint>,
    /// Cumulative volumetric enthalpy \[J/m³\] at each table knot, relative to
    /// 0 °C. Rebuilt on load, never serialized.
    #[serde(skip)]
    enthalpy_knots: Vec<f64>,
}

// Deserialization goes through validation so the enthalpy curve always
// exists on a live table.
impl<'de> Deserialize<'de> for MaterialTable {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            name: String,
            #[serde(default)]
            note: String,
            density_kg_per_m3: f64,
            points: Vec<PropertyPoint>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let mut table = MaterialTable {
            name: raw.name,
            note: raw.note,
            density_kg_per_m3: raw.density_kg_per_m3,
            points: raw.points,
            enthalpy_knots: Vec::new(),
        };
        table.finalize().map_err(serde::de::Error::custom)?;
        Ok(table)
    }
}

impl MaterialTable {
    /// Bundled IN718 substitute table.
    pub fn in718() -> Self {
        let raw = include_str!("../../data/in718.json");
        Self::from_json(raw).expect("bundled material table is valid")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let mut table: MaterialTable = serde_json::from_str(raw)
            .map_err(|e| Error::InvalidParams(format!("material table: {e}")))?;
        table.finalize()?;
        Ok(table)
    }

    pub fn new(name: &str, density: f64, points: Vec<PropertyPoint>) -> Result<Self> {
        let mut table = MaterialTable {
            name: name.to_string(),
            note: String::new(),
            density_kg_per_m3: density,
            points,
            enthalpy_knots: Vec::new(),
        };
        table.finalize()?;
        Ok(table)
    }

    /// Constant-property table, mostly for tests and convergence studies.
    pub fn constant(name: &str, density: f64, cp: f64, k: f64) -> Result<Self> {
        Self::new(
            name,
            density,
            vec![
                PropertyPoint {
                    temperature_c: 0.0,
                    specific_heat_j_per_kg_k: cp,
                    conductivity_w_per_m_k: k,
                },
                PropertyPoint {
                    temperature_c: 3000.0,
                    specific_heat_j_per_kg_k: cp,
                    conductivity_w_per_m_k: k,
                },
            ],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidParams(
                "material table needs at least two points".into(),
            ));
        }
        if !self.density_kg_per_m3.is_finite() || self.density_kg_per_m3 <= 0.0 {
            return Err(Error::InvalidParams("density must be positive".into()));
        }
        for w in self.points.windows(2) {
            if w[1].temperature_c <= w[0].temperature_c {
                return Err(Error::InvalidParams(
                    "material table temperatures must increase strictly".into(),
                ));
            }
        }
        for p in &self.points {
            if p.specific_heat_j_per_kg_k <= 0.0 || p.conductivity_w_per_m_k <= 0.0 {
                return Err(Error::InvalidParams(
                    "specific heat and conductivity must be positive".into(),
                ));
            }
            if ![
                p.temperature_c,
                p.specific_heat_j_per_kg_k,
                p.conductivity_w_per_m_k,
            ]
            .iter()
            .all(|v| v.is_finite())
            {
                return Err(Error::NonFinite("material table".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn finalize(&mut self) -> Result<()> {
        self.validate()?;
        // Enthalpy relative to 0 °C; cp extends as a constant below the first
        // and above the last knot.
        let rho = self.density_kg_per_m3;
        let mut knots = Vec::with_capacity(self.points.len());
        let first = &self.points[0];
        let mut acc = rho * first.specific_heat_j_per_kg_k * first.temperature_c;
        knots.push(acc);
        for w in self.points.windows(2) {
            let dt = w[1].temperature_c - w[0].temperature_c;
            let mean_cp = 0.5 * (w[0].specific_heat_j_per_kg_k + w[1].specific_heat_j_per_kg_k);
            acc += rho * mean_cp * dt;
            knots.push(acc);
        }
        self.enthalpy_knots = knots;
        Ok(())
    }

    fn lerp(&self, t: f64, pick: impl Fn(&PropertyPoint) -> f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].temperature_c {
            return pick(&pts[0]);
        }
        if t >= pts[pts.len() - 1].temperature_c {
            return pick(&pts[pts.len() - 1]);
        }
        let i = pts
            .partition_point(|p| p.temperature_c <= t)
            .min(pts.len() - 1);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let f = (t - a.temperature_c) / (b.temperature_c - a.temperature_c);
        pick(a) + (pick(b) - pick(a)) * f
    }

    /// Specific heat \[J/(kg·K)\] at `t` °C, clamped to the table range.
    pub fn cp(&self, t: f64) -> f64 {
        self.lerp(t, |p| p.specific_heat_j_per_kg_k)
    }

    /// Conductivity \[W/(m·K)\] at `t` °C, clamped to the table range.
    pub fn k(&self, t: f64) -> f64 {
        self.lerp(t, |p| p.conductivity_w_per_m_k)
    }

    pub fn density(&self) -> f64 {
        self.density_kg_per_m3
    }

    /// Volumetric enthalpy \[J/m³\] at `t` °C, relative to 0 °C.
    pub fn enthalpy(&self, t: f64) -> f64 {
        let pts = &self.points;
        let rho = self.density_kg_per_m3;
        if t <= pts[0].temperature_c {
            let cp = pts[0].specific_heat_j_per_kg_k;
            return self.enthalpy_knots[0] + rho * cp * (t - pts[0].temperature_c);
        }
        let last = pts.len() - 1;
        if t >= pts[last].temperature_c {
            let cp = pts[last].specific_heat_j_per_kg_k;
            return self.enthalpy_knots[last] + rho * cp * (t - pts[last].temperature_c);
        }
        let i = pts.partition_point(|p| p.temperature_c <= t).min(last);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let dt = t - a.temperature_c;
        let slope =
            (b.specific_heat_j_per_kg_k - a.specific_heat_j_per_kg_k)
                / (b.temperature_c - a.temperature_c);
        let cp_a = a.specific_heat_j_per_kg_k;
        self.enthalpy_knots[i - 1] + rho * dt * (cp_a + 0.5 * slope * dt)
    }

    /// Temperature \[°C\] holding volumetric enthalpy `h`, the inverse of
    /// [`enthalpy`](Self::enthalpy).
    pub fn temperature_of_enthalpy(&self, h: f64) -> f64 {
        let pts = &self.points;
        let rho = self.density_kg_per_m3;
        let knots = &self.enthalpy_knots;
        if h <= knots[0] {
            let cp = pts[0].specific_heat_j_per_kg_k;
            return pts[0].temperature_c + (h - knots[0]) / (rho * cp);
        }
        let last = knots.len() - 1;
        if h >= knots[last] {
            let cp = pts[last].specific_heat_j_per_kg_k;
            return pts[last].temperature_c + (h - knots[last]) / (rho * cp);
        }
        let i = knots.partition_point(|&x| x <= h).min(last);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let seg = b.temperature_c - a.temperature_c;
        let slope = (b.specific_heat_j_per_kg_k - a.specific_heat_j_per_kg_k) / seg;
        let cp_a = a.specific_heat_j_per_kg_k;
        let target = (h - knots[i - 1]) / rho;
        // Solve cp_a * dt + slope/2 * dt^2 = target for dt in [0, seg].
        let dt = if slope.abs() < 1e-12 * cp_a.abs().max(1.0) {
            target / cp_a
        } else {
            let disc = (cp_a * cp_a + 2.0 * slope * target).max(0.0);
            (-cp_a + disc.sqrt()) / slope
        };
        a.temperature_c + dt.clamp(0.0, seg)
    }
}
