use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ETHZ_LIKE: &str = include_str!("../../tracks/ethz-like.toml");
const ETHZMOBIL_LIKE: &str = include_str!("../../tracks/ethzmobil-like.toml");

/// Names accepted by [`TrackDefinition::bundled`], with their aliases.
pub const BUNDLED_TRACKS: [(&str, &str); 2] = [
    ("ethz-like", "train-track"),
    ("ethzmobil-like", "test-track"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RacePoint {
    pub x: f64,
    pub y: f64,
    /// Reference speed (m/s).
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackDefinition {
    pub name: String,
    pub closed: bool,
    pub half_width: f64,
    pub centerline: Vec<[f64; 2]>,
    pub raceline: Vec<RacePoint>,
}

#[derive(Serialize, Deserialize)]
struct TrackFile {
    schema_version: i64,
    name: String,
    closed: bool,
    half_width: f64,
    centerline: Vec<[f64; 2]>,
    raceline: Vec<[f64; 3]>,
}

impl TrackDefinition {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: TrackFile = toml::from_str(s)?;
        if f.schema_version != 1 {
            return Err(Error::Schema(format!(
                "unsupported track schema_version {}",
                f.schema_version
            )));
        }
        let track = Self {
            name: f.name,
            closed: f.closed,
            half_width: f.half_width,
            centerline: f.centerline,
            raceline: f
                .raceline
                .into_iter()
                .map(|[x, y, v]| RacePoint { x, y, v })
                .collect(),
        };
        track.validate()?;
        Ok(track)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let f = TrackFile {
            schema_version: 1,
            name: self.name.clone(),
            closed: self.closed,
            half_width: self.half_width,
            centerline: self.centerline.clone(),
            raceline: self.raceline.iter().map(|p| [p.x, p.y, p.v]).collect(),
        };
        Ok(toml::to_string(&f)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        let src = match name {
            "ethz-like" | "train-track" => ETHZ_LIKE,
            "ethzmobil-like" | "test-track" => ETHZMOBIL_LIKE,
            _ => return None,
        };
        Some(Self::from_toml_str(src).expect("bundled track is valid"))
    }

    /// A bundled name/alias, else a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::bundled(name_or_path) {
            Some(t) => Ok(t),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.centerline.len() < 3 || self.raceline.len() < 3 {
            return Err(Error::Schema(format!(
                "track `{}` needs at least 3 centerline and raceline points",
                self.name
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::Schema(format!("track `{}`: half_width must be positive", self.name)));
        }
        let finite = self.centerline.iter().flatten().all(|v| v.is_finite())
            && self
                .raceline
                .iter()
                .all(|p| p.x.is_finite() && p.y.is_finite() && p.v.is_finite() && p.v >= 0.0);
        if !finite {
            return Err(Error::Schema(format!("track `{}` has invalid coordinates", self.name)));
        }
        for (name, pts) in [
            ("centerline", self.centerline.clone()),
            ("raceline", self.raceline.iter().map(|p| [p.x, p.y]).collect()),
        ] {
            let n = pts.len();
            let pairs = if self.closed { n } else { n - 1 };
            for i in 0..pairs {
                if pts[i] == pts[(i + 1) % n] {
                    return Err(Error::Schema(format!(
                        "track `{}`: repeated consecutive {name} point at index {i}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn centerline_path(&self) -> Polyline {
        Polyline::new(self.centerline.clone(), self.closed)
    }

    pub fn raceline_path(&self) -> Polyline {
        Polyline::new(self.raceline.iter().map(|p| [p.x, p.y]).collect(), self.closed)
    }

    pub fn raceline_ref(&self) -> Raceline {
        Raceline {
            path: self.raceline_path(),
            speeds: self.raceline.iter().map(|p| p.v).collect(),
        }
    }

    /// Copy with every reference speed multiplied by `k`.
    pub fn with_speed_scale(&self, k: f64) -> Self {
        let mut t = self.clone();
        t.raceline.iter_mut().for_each(|p| p.v *= k);
        t
    }
}

/// Raceline geometry with per-vertex reference speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Raceline {
    pub path: Polyline,
    pub speeds: Vec<f64>,
}

impl Raceline {
    pub fn speed_at(&self, s: f64) -> f64 {
        self.path.interpolate(&self.speeds, s)
    }
}

/// Nearest-point query result against a [`Polyline`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub offset: f64,
    pub segment: usize,
    /// Unit tangent of the segment.
    pub tangent: [f64; 2],
}

/// Piecewise-linear path parameterized by arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
    closed: bool,
}

impl Polyline {
    pub fn new(pts: Vec<[f64; 2]>, closed: bool) -> Self {
        let n = pts.len();
        let segs = if closed { n } else { n.saturating_sub(1) };
        let mut cum = Vec::with_capacity(segs + 1);
        cum.push(0.0);
        for i in 0..segs {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            cum.push(cum[i] + (b[0] - a[0]).hypot(b[1] - a[1]));
        }
        Self { pts, cum, closed }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    pub fn segments(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.pts
    }

    fn seg(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.pts[i], self.pts[(i + 1) % self.pts.len()])
    }

    /// Wrap (closed) or clamp (open) an arc length into the path's range.
    pub fn normalize_s(&self, s: f64) -> f64 {
        let l = self.length();
        if self.closed {
            s.rem_euclid(l)
        } else {
            s.clamp(0.0, l)
        }
    }

    fn segment_at(&self, s: f64) -> usize {
        let i = self.cum.partition_point(|c| *c <= s);
        i.saturating_sub(1).min(self.segments() - 1)
    }

    /// Point and unit tangent at arc length `s`.
    pub fn point_at(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let s = self.normalize_s(s);
        let i = self.segment_at(s);
        let (a, b) = self.seg(i);
        let len = self.cum[i + 1] - self.cum[i];
        let t = if len > 0.0 { (s - self.cum[i]) / len } else { 0.0 };
        let tan = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], tan)
    }

    /// Linear interpolation of per-vertex values at arc length `s`.
    pub fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        let s = self.normalize_s(s);
        let i = self.segment_at(s);
        let len = self.cum[i + 1] - self.cum[i];
        let t = if len > 0.0 { (s - self.cum[i]) / len } else { 0.0 };
        let j = (i + 1) % values.len();
        values[i] + t * (values[j] - values[i])
    }

    fn project_segment(&self, i: usize, p: [f64; 2]) -> (f64, Projection) {
        let (a, b) = self.seg(i);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = self.cum[i + 1] - self.cum[i];
        let tan = [d[0] / len, d[1] / len];
        let rel = [p[0] - a[0], p[1] - a[1]];
        let t = (rel[0] * tan[0] + rel[1] * tan[1]).clamp(0.0, len);
        let foot = [a[0] + t * tan[0], a[1] + t * tan[1]];
        let dist2 = (p[0] - foot[0]).powi(2) + (p[1] - foot[1]).powi(2);
        let offset = tan[0] * rel[1] - tan[1] * rel[0];
        (
            dist2,
            Projection {
                s: self.cum[i] + t,
                offset,
                segment: i,
                tangent: tan,
            },
        )
    }

    /// Nearest point over all segments.
    pub fn project(&self, p: [f64; 2]) -> Projection {
        let mut best = self.project_segment(0, p);
        for i in 1..self.segments() {
            let c = self.project_segment(i, p);
            if c.0 < best.0 {
                best = c;
            }
        }
        best.1
    }

    /// Nearest point among segments within `window` of `hint`; falls back to
    /// a global search when the local result is farther than `max_dist`.
    pub fn project_near(&self, p: [f64; 2], hint: usize, window: usize, max_dist: f64) -> Projection {
        let n = self.segments();
        if window * 2 + 1 >= n {
            return self.project(p);
        }
        let mut best: Option<(f64, Projection)> = None;
        for k in 0..=2 * window {
            let i = if self.closed {
                (hint + n + k - window) % n
            } else {
                match (hint + k).checked_sub(window) {
                    Some(i) if i < n => i,
                    _ => continue,
                }
            };
            let c = self.project_segment(i, p);
            if best.as_ref().map_or(true, |b| c.0 < b.0) {
                best = Some(c);
            }
        }
        match best {
            Some((d2, pr)) if d2 <= max_dist * max_dist => pr,
            _ => self.project(p),
        }
    }

    /// Forward arc distance from `from` to `to` along a closed path.
    pub fn forward_distance(&self, from: f64, to: f64) -> f64 {
        if self.closed {
            (to - from).rem_euclid(self.length())
        } else {
            to - from
        }
    }
}
