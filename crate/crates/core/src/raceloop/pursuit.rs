use serde::{Deserialize, Serialize};

use crate::dynamics::{BodyState, ControlInput, Pose, VehicleGeometry};
use crate::telemetry::{Projection, Raceline};

/// Box on the actuator commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    pub throttle_min: f64,
    pub throttle_max: f64,
    /// Symmetric steering limit (rad).
    pub steer_max: f64,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self {
            throttle_min: -1.0,
            throttle_max: 1.0,
            steer_max: 0.4,
        }
    }
}

impl InputBounds {
    pub fn clip(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            throttle: u.throttle.clamp(self.throttle_min, self.throttle_max),
            steer: u.steer.clamp(-self.steer_max, self.steer_max),
        }
    }

    pub fn contains(&self, u: &ControlInput) -> bool {
        (self.throttle_min..=self.throttle_max).contains(&u.throttle)
            && u.steer.abs() <= self.steer_max
    }

    pub fn is_valid(&self) -> bool {
        self.throttle_min <= self.throttle_max && self.steer_max >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurePursuitConfig {
    /// Arc distance from the projected position to the target point (m).
    pub lookahead: f64,
    /// Throttle per m/s of speed error.
    pub speed_gain: f64,
    pub bounds: InputBounds,
}

impl Default for PurePursuitConfig {
    fn default() -> Self {
        Self {
            lookahead: 0.45,
            speed_gain: 1.0,
            bounds: InputBounds::default(),
        }
    }
}

/// Geometric steering toward the raceline point `lookahead` metres ahead of
/// the vehicle's projection, plus a proportional speed law toward that
/// point's reference speed. Left steering is positive.
pub fn pure_pursuit(
    pose: &Pose,
    state: &BodyState,
    raceline: &Raceline,
    cfg: &PurePursuitConfig,
    geom: &VehicleGeometry,
) -> ControlInput {
    let pr = raceline.path.project([pose.x, pose.y]);
    pure_pursuit_from(pose, state, raceline, &pr, cfg, geom)
}

/// As [`pure_pursuit`] with a precomputed projection of the pose.
pub fn pure_pursuit_from(
    pose: &Pose,
    state: &BodyState,
    raceline: &Raceline,
    pr: &Projection,
    cfg: &PurePursuitConfig,
    geom: &VehicleGeometry,
) -> ControlInput {
    let s_target = pr.s + cfg.lookahead;
    let (target, _) = raceline.path.point_at(s_target);
    let dx = target[0] - pose.x;
    let dy = target[1] - pose.y;
    let steer = if cfg.lookahead > 0.0 && dx.hypot(dy) > 1e-9 {
        let alpha = dy.atan2(dx) - pose.theta;
        (2.0 * geom.wheelbase() * alpha.sin() / cfg.lookahead).atan()
    } else {
        0.0
    };
    let throttle = cfg.speed_gain * (raceline.speed_at(s_target) - state.vx);
    cfg.bounds.clip(ControlInput { throttle, steer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::Polyline;
    use std::f64::consts::PI;

    fn straight(v: f64) -> Raceline {
        let pts: Vec<[f64; 2]> = (0..50).map(|i| [i as f64 * 0.1, 0.0]).collect();
        Raceline {
            speeds: vec![v; pts.len()],
            path: Polyline::new(pts, false),
        }
    }

    fn circle(r: f64, n: usize) -> Raceline {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        Raceline {
            speeds: vec![1.0; n],
            path: Polyline::new(pts, true),
        }
    }

    #[test]
    fn aligned_on_straight() {
        let g = VehicleGeometry::small_scale();
        let u = pure_pursuit(
            &Pose::new(1.0, 0.0, 0.0),
            &BodyState::new(2.0, 0.0, 0.0),
            &straight(2.0),
            &PurePursuitConfig::default(),
            &g,
        );
        assert_eq!(u.steer, 0.0);
        assert_eq!(u.throttle, 0.0);
    }

    #[test]
    fn target_to_the_left_steers_left() {
        let g = VehicleGeometry::small_scale();
        // heading -y while the path runs along +x: the target is 90° left
        let u = pure_pursuit(
            &Pose::new(1.0, 0.0, -PI / 2.0),
            &BodyState::new(1.0, 0.0, 0.0),
            &straight(1.0),
            &PurePursuitConfig::default(),
            &g,
        );
        assert!(u.steer > 0.0);
    }

    #[test]
    fn longer_lookahead_steers_less_on_circle() {
        let g = VehicleGeometry::small_scale();
        let r = 1.0;
        let line = circle(r, 2000);
        // on the circle, tangent heading
        let pose = Pose::new(r, 0.0, PI / 2.0);
        let st = BodyState::new(1.0, 0.0, 0.0);
        let mut last = f64::INFINITY;
        for ld in [0.2, 0.4, 0.8] {
            let cfg = PurePursuitConfig {
                lookahead: ld,
                bounds: InputBounds {
                    steer_max: 10.0,
                    ..InputBounds::default()
                },
                ..PurePursuitConfig::default()
            };
            let u = pure_pursuit(&pose, &st, &line, &cfg, &g);
            // chord geometry: alpha = ld / (2 r) for arc length ld
            let expect = (2.0 * g.wheelbase() * (ld / (2.0 * r)).sin() / ld).atan();
            assert!((u.steer - expect).abs() < 1e-5, "{ld}: {} vs {expect}", u.steer);
            assert!(u.steer.abs() < last);
            last = u.steer.abs();
        }
    }

    #[test]
    fn outputs_are_clipped() {
        let g = VehicleGeometry::small_scale();
        let cfg = PurePursuitConfig {
            lookahead: 0.05,
            speed_gain: 100.0,
            ..PurePursuitConfig::default()
        };
        let u = pure_pursuit(
            &Pose::new(1.0, 0.0, -PI / 2.0),
            &BodyState::new(0.0, 0.0, 0.0),
            &straight(3.0),
            &cfg,
            &g,
        );
        assert_eq!(u.throttle, 1.0);
        assert_eq!(u.steer, 0.4);
    }
}
