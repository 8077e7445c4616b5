//! Physics guard: maps unbounded network outputs into the box of physically
//! valid coefficients and checks externally supplied coefficient sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParams, N_PARAMS, PARAM_NAMES};
use crate::error::{Error, Result};

/// Per-slot closed intervals, in [`PARAM_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lo: [f64; N_PARAMS],
    pub hi: [f64; N_PARAMS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Sim,
    Real,
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileName::Sim => "sim",
            ProfileName::Real => "real",
        })
    }
}

impl FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sim" => Ok(ProfileName::Sim),
            "real" => Ok(ProfileName::Real),
            _ => Err(Error::Config(format!("unknown bounds profile `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsProfile {
    pub name: ProfileName,
    pub bounds: ParamBounds,
}

impl BoundsProfile {
    pub fn builtin(name: ProfileName) -> Self {
        let p = builtin_profiles();
        match name {
            ProfileName::Sim => p.sim,
            ProfileName::Real => p.real,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BuiltinProfiles {
    pub sim: BoundsProfile,
    pub real: BoundsProfile,
}

/// Coefficient boxes for the simulated (1:43) and full-scale vehicles.
/// Drivetrain ranges (`Cm1`..`Cr2`) are defaults and may be overridden.
pub fn builtin_profiles() -> BuiltinProfiles {
    #[rustfmt::skip]
    let sim = ParamBounds {
        //   Bf   Cf   Df   Ef    Br   Cr   Dr   Er    Shf    Svf     Shr    Svr     Cm1  Cm2  Cr0  Cr2  Iz
        lo: [5.0, 0.5, 0.1, -2.0, 5.0, 0.5, 0.1, -2.0, -0.02, -0.003, -0.02, -0.003, 0.0, 0.0, 0.0, 0.0, 1.4e-5],
        hi: [30.0, 2.0, 0.9, 0.0, 30.0, 2.0, 0.9, 0.0, 0.02, 0.003, 0.02, 0.003, 12.0, 1.0, 1.0, 1.0, 5.6e-5],
    };
    #[rustfmt::skip]
    let real = ParamBounds {
        lo: [5.0, 0.5, 100.0, -2.0, 5.0, 0.5, 100.0, -2.0, -0.02, -300.0, -0.02, -300.0, 0.0, 0.0, 0.0, 0.0, 500.0],
        hi: [30.0, 2.0, 1e4, 0.0, 30.0, 2.0, 1e4, 0.0, 0.02, 300.0, 0.02, 300.0, 4000.0, 200.0, 2000.0, 20.0, 2000.0],
    };
    BuiltinProfiles {
        sim: BoundsProfile { name: ProfileName::Sim, bounds: sim },
        real: BoundsProfile { name: ProfileName::Real, bounds: real },
    }
}

impl ParamBounds {
    pub fn check(&self) -> Result<()> {
        for i in 0..N_PARAMS {
            if !(self.lo[i].is_finite() && self.hi[i].is_finite() && self.lo[i] < self.hi[i]) {
                return Err(Error::Config(format!(
                    "bounds for {} are not a valid interval: [{}, {}]",
                    PARAM_NAMES[i], self.lo[i], self.hi[i]
                )));
            }
        }
        Ok(())
    }

    pub fn midpoint(&self) -> ModelParams {
        let mut m = [0.0; N_PARAMS];
        for (i, v) in m.iter_mut().enumerate() {
            *v = 0.5 * (self.lo[i] + self.hi[i]);
        }
        ModelParams::from_array(&m)
    }

    /// Apply a TOML override file of `[bounds.<slot>]` tables with keys
    /// `lo` and `hi` (either may be omitted).
    pub fn with_overrides(&self, toml_src: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Entry {
            lo: Option<f64>,
            hi: Option<f64>,
        }
        #[derive(Deserialize)]
        struct File {
            schema_version: Option<i64>,
            #[serde(default)]
            bounds: std::collections::BTreeMap<String, Entry>,
        }
        let file: File = toml::from_str(toml_src)?;
        if let Some(v) = file.schema_version {
            if v != 1 {
                return Err(Error::Schema(format!("unsupported bounds schema_version {v}")));
            }
        }
        let mut out = *self;
        for (slot, entry) in file.bounds {
            let i = ModelParams::slot_index(&slot)
                .ok_or_else(|| Error::Schema(format!("unknown parameter slot `{slot}`")))?;
            if let Some(lo) = entry.lo {
                out.lo[i] = lo;
            }
            if let Some(hi) = entry.hi {
                out.hi[i] = hi;
            }
        }
        out.check()?;
        Ok(out)
    }
}

/// Coefficients emitted by the guard; every slot lies strictly inside the
/// profile's box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardedParams {
    pub params: ModelParams,
    pub profile: ProfileName,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid box projection of a single slot; stays strictly inside `(lo, hi)`
/// even when the logistic saturates in floating point.
pub fn project_slot(z: f64, lo: f64, hi: f64) -> f64 {
    let p = lo + logistic(z) * (hi - lo);
    if p >= hi {
        hi.next_down()
    } else if p <= lo {
        lo.next_up()
    } else {
        p
    }
}

/// Derivative of [`project_slot`] w.r.t. `z`.
pub fn project_slot_grad(z: f64, lo: f64, hi: f64) -> f64 {
    let s = logistic(z);
    s * (1.0 - s) * (hi - lo)
}

pub fn project(z: &[f64; N_PARAMS], profile: &BoundsProfile) -> Result<GuardedParams> {
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite latent value for slot {}",
            PARAM_NAMES[i]
        )));
    }
    let b = &profile.bounds;
    let mut p = [0.0; N_PARAMS];
    for i in 0..N_PARAMS {
        p[i] = project_slot(z[i], b.lo[i], b.hi[i]);
    }
    Ok(GuardedParams {
        params: ModelParams::from_array(&p),
        profile: profile.name,
    })
}

/// Diagonal Jacobian of [`project`].
pub fn project_grad(z: &[f64; N_PARAMS], bounds: &ParamBounds) -> [f64; N_PARAMS] {
    let mut g = [0.0; N_PARAMS];
    for i in 0..N_PARAMS {
        g[i] = project_slot_grad(z[i], bounds.lo[i], bounds.hi[i]);
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub slot: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {} outside [{}, {}]", self.slot, self.value, self.lo, self.hi)
    }
}

/// All slots that fall outside their closed interval (NaN counts as outside).
pub fn validate(params: &ModelParams, bounds: &ParamBounds) -> Vec<Violation> {
    params
        .to_array()
        .iter()
        .enumerate()
        .filter(|(i, v)| !(bounds.lo[*i] <= **v && **v <= bounds.hi[*i]))
        .map(|(i, v)| Violation {
            slot: PARAM_NAMES[i],
            value: *v,
            lo: bounds.lo[i],
            hi: bounds.hi[i],
        })
        .collect()
}

/// Hard clamp into the closed box; only for externally supplied values.
pub fn clamp(params: &ModelParams, bounds: &ParamBounds) -> ModelParams {
    let mut v = params.to_array();
    for (i, x) in v.iter_mut().enumerate() {
        *x = x.clamp(bounds.lo[i], bounds.hi[i]);
    }
    ModelParams::from_array(&v)
}
