use super::types::{AxleLoads, BodyState, DrivetrainCoeffs, PacejkaCoeffs, VehicleGeometry};
use super::V_EPS;
use crate::error::{Error, Result};

fn slip_denominator(vx: f64) -> (f64, f64) {
    // value and derivative w.r.t. vx
    if vx.abs() > V_EPS {
        (vx.abs(), vx.signum())
    } else {
        (V_EPS, 0.0)
    }
}

/// Front and rear slip angles (rad).
pub fn slip_angles(
    state: &BodyState,
    delta: f64,
    geom: &VehicleGeometry,
    coeffs: &PacejkaCoeffs,
) -> Result<(f64, f64)> {
    if !state.is_finite() || !delta.is_finite() || !coeffs.shf.is_finite() || !coeffs.shr.is_finite()
    {
        return Err(Error::Domain(format!(
            "slip angles of non-finite input: state {state:?}, delta {delta}"
        )));
    }
    let (den, _) = slip_denominator(state.vx);
    let alpha_f = delta - ((geom.lf * state.omega + state.vy) / den).atan() + coeffs.shf;
    let alpha_r = ((geom.lr * state.omega - state.vy) / den).atan() + coeffs.shr;
    Ok((alpha_f, alpha_r))
}

/// Partial derivatives of the slip angles. Derivatives w.r.t. `delta`,
/// `Shf` and `Shr` are identically one and omitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipPartials {
    pub front: [f64; 3],
    pub rear: [f64; 3],
}

pub fn slip_angles_partials(state: &BodyState, geom: &VehicleGeometry) -> SlipPartials {
    let (den, dden) = slip_denominator(state.vx);
    let qf = (geom.lf * state.omega + state.vy) / den;
    let qr = (geom.lr * state.omega - state.vy) / den;
    let kf = -1.0 / (1.0 + qf * qf);
    let kr = 1.0 / (1.0 + qr * qr);
    SlipPartials {
        front: [kf * (-qf / den * dden), kf / den, kf * geom.lf / den],
        rear: [kr * (-qr / den * dden), -kr / den, kr * geom.lr / den],
    }
}

/// Rear-drive longitudinal force: drive/brake minus rolling and drag terms.
pub fn longitudinal_force(vx: f64, throttle: f64, c: &DrivetrainCoeffs) -> f64 {
    (c.cm1 - c.cm2 * vx) * throttle - c.cr0 - c.cr2 * vx * vx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalPartials {
    pub vx: f64,
    pub throttle: f64,
    /// w.r.t. `[Cm1, Cm2, Cr0, Cr2]`
    pub coeffs: [f64; 4],
}

pub fn longitudinal_force_partials(
    vx: f64,
    throttle: f64,
    c: &DrivetrainCoeffs,
) -> LongitudinalPartials {
    LongitudinalPartials {
        vx: -c.cm2 * throttle - 2.0 * c.cr2 * vx,
        throttle: c.cm1 - c.cm2 * vx,
        coeffs: [throttle, -vx * throttle, -1.0, -vx * vx],
    }
}

/// Axle loads from the pitch balance with `a_x = Frx / m`, before clamping.
/// The two loads always sum to `m·g`.
pub fn axle_loads_unclamped(frx: f64, geom: &VehicleGeometry) -> AxleLoads {
    let l = geom.wheelbase();
    let mg = geom.mass * geom.gravity;
    AxleLoads {
        front: (mg * geom.lr - geom.hcg * frx) / l,
        rear: (mg * geom.lf + geom.hcg * frx) / l,
    }
}

/// Axle loads clamped from below at `geom.load_floor`.
pub fn axle_loads(frx: f64, geom: &VehicleGeometry) -> AxleLoads {
    let raw = axle_loads_unclamped(frx, geom);
    AxleLoads {
        front: raw.front.max(geom.load_floor),
        rear: raw.rear.max(geom.load_floor),
    }
}

/// Load-scaled Magic Formula lateral force.
#[allow(clippy::too_many_arguments)]
pub fn pacejka_lateral(alpha: f64, fz: f64, b: f64, c: f64, d: f64, e: f64, sv: f64, fz0: f64) -> f64 {
    let u = b * alpha;
    let psi = (u - e * (u - u.atan())).atan();
    (sv + d * (c * psi).sin()) * (fz / fz0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacejkaPartials {
    pub alpha: f64,
    pub fz: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub sv: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn pacejka_partials(
    alpha: f64,
    fz: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    sv: f64,
    fz0: f64,
) -> PacejkaPartials {
    let scale = fz / fz0;
    let u = b * alpha;
    let atan_u = u.atan();
    let inner = u - e * (u - atan_u);
    let psi = inner.atan();
    let (s, co) = (c * psi).sin_cos();
    let base = sv + d * s;
    let dpsi_dinner = 1.0 / (1.0 + inner * inner);
    let dinner_du = 1.0 - e * (1.0 - 1.0 / (1.0 + u * u));
    let dbase_dpsi = d * co * c;
    let dbase_du = dbase_dpsi * dpsi_dinner * dinner_du;
    PacejkaPartials {
        alpha: scale * dbase_du * b,
        fz: base / fz0,
        b: scale * dbase_du * alpha,
        c: scale * d * co * psi,
        d: scale * s,
        e: scale * dbase_dpsi * dpsi_dinner * (-(u - atan_u)),
        sv: scale,
    }
}

/// Continuous-time body accelerations `(v̇x, v̇y, ω̇)`.
pub fn body_derivative(
    state: &BodyState,
    delta: f64,
    frx: f64,
    ffy: f64,
    fry: f64,
    geom: &VehicleGeometry,
    iz: f64,
) -> [f64; 3] {
    let m = geom.mass;
    let (sd, cd) = delta.sin_cos();
    [
        (frx - ffy * sd + m * state.vy * state.omega) / m,
        (ffy * cd + fry - m * state.vx * state.omega) / m,
        (geom.lf * ffy * cd - geom.lr * fry) / iz,
    ]
}

/// Jacobian of [`body_derivative`]; columns are
/// `[vx, vy, omega, delta, Frx, Ffy, Fry, Iz]`.
pub fn body_derivative_jacobian(
    state: &BodyState,
    delta: f64,
    ffy: f64,
    fry: f64,
    geom: &VehicleGeometry,
    iz: f64,
) -> [[f64; 8]; 3] {
    let m = geom.mass;
    let (sd, cd) = delta.sin_cos();
    let wdot = (geom.lf * ffy * cd - geom.lr * fry) / iz;
    [
        [0.0, state.omega, state.vy, -ffy * cd / m, 1.0 / m, -sd / m, 0.0, 0.0],
        [-state.omega, 0.0, -state.vx, -ffy * sd / m, 0.0, cd / m, 1.0 / m, 0.0],
        [0.0, 0.0, 0.0, -geom.lf * ffy * sd / iz, 0.0, geom.lf * cd / iz, -geom.lr / iz, -wdot / iz],
    ]
}

/// Forward Euler update of the body state.
pub fn euler_step(state: &BodyState, deriv: &[f64; 3], dt: f64) -> BodyState {
    BodyState {
        vx: state.vx + dt * deriv[0],
        vy: state.vy + dt * deriv[1],
        omega: state.omega + dt * deriv[2],
    }
}
