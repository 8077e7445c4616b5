use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of learned physical coefficients.
pub const N_PARAMS: usize = 17;

/// Slot names in the canonical flattening order of [`ModelParams`].
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "Bf", "Cf", "Df", "Ef", "Br", "Cr", "Dr", "Er", "Shf", "Svf", "Shr", "Svr", "Cm1", "Cm2",
    "Cr0", "Cr2", "Iz",
];

/// Fixed vehicle constants (not learned).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    /// Mass (kg).
    pub mass: f64,
    /// CG to front axle (m).
    pub lf: f64,
    /// CG to rear axle (m).
    pub lr: f64,
    /// CG height (m).
    pub hcg: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Nominal static normal force used to normalize tire loads (N).
    pub fz0: f64,
    /// Lower clamp applied to each computed axle load (N).
    pub load_floor: f64,
}

impl VehicleGeometry {
    /// 1:43 scale car used for the synthetic dataset.
    pub fn small_scale() -> Self {
        let mass = 0.041;
        let gravity = 9.81;
        Self {
            mass,
            lf: 0.029,
            lr: 0.033,
            hcg: 0.01,
            gravity,
            fz0: 0.5 * mass * gravity,
            load_floor: 1e-4,
        }
    }

    /// Full-size open-wheel race car.
    pub fn full_scale() -> Self {
        let mass = 790.0;
        let gravity = 9.81;
        Self {
            mass,
            lf: 1.7238,
            lr: 1.2612,
            hcg: 0.275,
            gravity,
            fz0: 0.5 * mass * gravity,
            load_floor: 1.0,
        }
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    /// Axle loads with the vehicle at rest (no load transfer).
    pub fn static_loads(&self) -> AxleLoads {
        let w = self.mass * self.gravity / self.wheelbase();
        AxleLoads {
            front: w * self.lr,
            rear: w * self.lf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.lf > 0.0
            && self.lr > 0.0
            && self.hcg >= 0.0
            && self.gravity > 0.0
            && self.fz0 > 0.0
            && self.load_floor >= 0.0;
        let finite = [
            self.mass,
            self.lf,
            self.lr,
            self.hcg,
            self.gravity,
            self.fz0,
            self.load_floor,
        ]
        .iter()
        .all(|v| v.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid vehicle geometry {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PacejkaCoeffs {
    pub bf: f64,
    pub cf: f64,
    pub df: f64,
    pub ef: f64,
    pub br: f64,
    pub cr: f64,
    pub dr: f64,
    pub er: f64,
    /// Front slip-angle shift (rad).
    pub shf: f64,
    /// Front lateral-force shift (N).
    pub svf: f64,
    /// Rear slip-angle shift (rad).
    pub shr: f64,
    /// Rear lateral-force shift (N).
    pub svr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DrivetrainCoeffs {
    pub cm1: f64,
    pub cm2: f64,
    pub cr0: f64,
    pub cr2: f64,
}

/// The 17 learned physical coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams {
    pub pacejka: PacejkaCoeffs,
    pub drivetrain: DrivetrainCoeffs,
    /// Yaw moment of inertia (kg·m²).
    pub iz: f64,
}

impl ModelParams {
    /// Flatten in the order of [`PARAM_NAMES`].
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        let p = &self.pacejka;
        let d = &self.drivetrain;
        [
            p.bf, p.cf, p.df, p.ef, p.br, p.cr, p.dr, p.er, p.shf, p.svf, p.shr, p.svr, d.cm1,
            d.cm2, d.cr0, d.cr2, self.iz,
        ]
    }

    pub fn from_array(v: &[f64; N_PARAMS]) -> Self {
        Self {
            pacejka: PacejkaCoeffs {
                bf: v[0],
                cf: v[1],
                df: v[2],
                ef: v[3],
                br: v[4],
                cr: v[5],
                dr: v[6],
                er: v[7],
                shf: v[8],
                svf: v[9],
                shr: v[10],
                svr: v[11],
            },
            drivetrain: DrivetrainCoeffs {
                cm1: v[12],
                cm2: v[13],
                cr0: v[14],
                cr2: v[15],
            },
            iz: v[16],
        }
    }

    pub fn slot_index(name: &str) -> Option<usize> {
        PARAM_NAMES.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Reference coefficients for the small-scale car, used as ground truth
    /// for synthetic data. Drivetrain values are typical for 1:43 cars.
    pub fn small_scale_reference() -> Self {
        Self::from_array(&[
            5.71, 1.17, 0.192, -0.158, 6.68, 0.940, 0.188, -0.399, -0.0015, 3.0e-4, -0.0040,
            8.4e-4, 0.287, 0.0545, 0.0518, 0.00035, 2.78e-5,
        ])
    }

    /// Parse a flat TOML table keyed by slot name (an optional `[params]`
    /// table is also accepted).
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(s)?;
        if let Some(v) = table.get("schema_version") {
            if v.as_integer() != Some(1) {
                return Err(Error::Schema(format!(
                    "unsupported params schema_version {v}"
                )));
            }
        }
        let table = match table.get("params") {
            Some(toml::Value::Table(inner)) => inner.clone(),
            _ => table,
        };
        let mut out = [0.0; N_PARAMS];
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            let value = table
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(name))
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Schema(format!("params file is missing `{name}`")))?;
            out[i] = match value {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(n) => *n as f64,
                other => {
                    return Err(Error::Schema(format!(
                        "`{name}` must be a number, got {other}"
                    )))
                }
            };
        }
        let params = Self::from_array(&out);
        if !params.is_finite() {
            return Err(Error::Domain("params file contains non-finite values".into()));
        }
        Ok(params)
    }

    pub fn to_toml_string(&self) -> String {
        let mut s = String::from("schema_version = 1\n\n[params]\n");
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            s.push_str(&format!("{name} = {v:?}\n"));
        }
        s
    }
}

/// Body-frame velocity state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyState {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl BodyState {
    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.vx, self.vy, self.omega]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.vx.abs().max(self.vy.abs()).max(self.omega.abs())
    }
}

/// World-frame pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Throttle fraction and steering angle (rad, left positive).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub throttle: f64,
    pub steer: f64,
}

impl ControlInput {
    pub fn new(throttle: f64, steer: f64) -> Self {
        Self { throttle, steer }
    }

    pub fn is_finite(&self) -> bool {
        self.throttle.is_finite() && self.steer.is_finite()
    }
}

/// Front and rear axle normal loads (N).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxleLoads {
    pub front: f64,
    pub rear: f64,
}

impl AxleLoads {
    pub fn total(&self) -> f64 {
        self.front + self.rear
    }
}

/// Internal forces of one step, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceTrace {
    pub frx: f64,
    pub ffy: f64,
    pub fry: f64,
    pub ffz: f64,
    pub frz: f64,
    /// Axle loads from the load-transfer balance before the floor clamp.
    pub ffz_raw: f64,
    pub frz_raw: f64,
    pub alpha_f: f64,
    pub alpha_r: f64,
}

/// Physics variants used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhysicsMode {
    /// Load transfer plus lateral forces scaled by `Fz / Fz0`.
    #[default]
    Full,
    /// Lateral forces evaluated at the nominal load, no load transfer.
    NominalLoad,
    /// Lateral forces scaled by each axle's load relative to its own static
    /// load, so only the transferred part changes the force.
    LoadTransferOnly,
}

impl PhysicsMode {
    pub const ALL: [PhysicsMode; 3] = [
        PhysicsMode::Full,
        PhysicsMode::NominalLoad,
        PhysicsMode::LoadTransferOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PhysicsMode::Full => "full",
            PhysicsMode::NominalLoad => "nominal-load",
            PhysicsMode::LoadTransferOnly => "load-transfer-only",
        }
    }
}

impl fmt::Display for PhysicsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhysicsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PhysicsMode::Full),
            "nominal-load" | "nominal" => Ok(PhysicsMode::NominalLoad),
            "load-transfer-only" | "load-transfer" => Ok(PhysicsMode::LoadTransferOnly),
            _ => Err(Error::Config(format!("unknown physics mode `{s}`"))),
        }
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattening_round_trips() {
        let p = ModelParams::small_scale_reference();
        assert_eq!(ModelParams::from_array(&p.to_array()), p);
        assert_eq!(p.to_array()[16], p.iz);
        assert_eq!(ModelParams::slot_index("cm1"), Some(12));
    }

    #[test]
    fn params_toml_round_trip() {
        let p = ModelParams::small_scale_reference();
        let back = ModelParams::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn params_toml_missing_slot() {
        let err = ModelParams::from_toml_str("Bf = 1.0").unwrap_err();
        assert!(err.to_string().contains("Cf"));
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn geometry_defaults_are_valid() {
        VehicleGeometry::small_scale().validate().unwrap();
        VehicleGeometry::full_scale().validate().unwrap();
        let mut g = VehicleGeometry::small_scale();
        g.mass = 0.0;
        assert!(g.validate().is_err());
    }
}
