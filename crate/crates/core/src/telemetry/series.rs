use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BodyState, ControlInput, Pose};
use crate::error::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Column order written by [`write_csv`]; [`read_csv`] accepts any order.
pub const CSV_COLUMNS: [&str; 11] = [
    "t",
    "x",
    "y",
    "theta",
    "vx",
    "vy",
    "omega",
    "throttle_fb",
    "steer_fb",
    "throttle_cmd",
    "steer_cmd",
];

/// One telemetry sample. `u_fb` is the input actually applied between this
/// sample and the next; `u_cmd` is what the controller asked for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub t: f64,
    pub state: BodyState,
    pub pose: Pose,
    pub u_fb: ControlInput,
    pub u_cmd: ControlInput,
}

impl TelemetryRecord {
    fn values(&self) -> [f64; 11] {
        [
            self.t,
            self.pose.x,
            self.pose.y,
            self.pose.theta,
            self.state.vx,
            self.state.vy,
            self.state.omega,
            self.u_fb.throttle,
            self.u_fb.steer,
            self.u_cmd.throttle,
            self.u_cmd.steer,
        ]
    }

    fn from_values(v: &[f64; 11]) -> Self {
        Self {
            t: v[0],
            pose: Pose::new(v[1], v[2], v[3]),
            state: BodyState::new(v[4], v[5], v[6]),
            u_fb: ControlInput::new(v[7], v[8]),
            u_cmd: ControlInput::new(v[9], v[10]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Imported,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Synthetic => "synthetic",
            Source::Imported => "imported",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Source::Synthetic),
            "imported" => Ok(Source::Imported),
            _ => Err(Error::Schema(format!("unknown telemetry source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySeries {
    pub records: Vec<TelemetryRecord>,
    pub rate_hz: f64,
    pub source: Source,
}

impl TelemetrySeries {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// Check ordering, spacing (within 1% of the nominal period) and
    /// finiteness. Row numbers in errors are 1-based data rows.
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::Schema(format!("invalid rate_hz {}", self.rate_hz)));
        }
        let dt = self.dt();
        for (i, r) in self.records.iter().enumerate() {
            if !r.values().iter().all(|v| v.is_finite()) {
                return Err(Error::Data {
                    row: i + 1,
                    detail: "non-finite value".into(),
                });
            }
            if i > 0 {
                let gap = r.t - self.records[i - 1].t;
                if gap <= 0.0 {
                    return Err(Error::Ordering {
                        row: i + 1,
                        detail: format!("timestamp {} does not increase", r.t),
                    });
                }
                if (gap - dt).abs() > 0.01 * dt {
                    return Err(Error::Ordering {
                        row: i + 1,
                        detail: format!("spacing {gap} deviates from 1/rate_hz = {dt}"),
                    });
                }
            }
        }
        Ok(())
    }
}

fn header_line(series: &TelemetrySeries) -> String {
    format!(
        "# trackdyn-telemetry schema_version={CSV_SCHEMA_VERSION} rate_hz={} source={}",
        series.rate_hz, series.source
    )
}

/// Serialize to the versioned CSV format. Floats use shortest round-trip
/// formatting so reading back is exact.
pub fn write_csv_string(series: &TelemetrySeries) -> String {
    let mut out = header_line(series);
    out.push('\n');
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for r in &series.records {
        let row: Vec<String> = r.values().iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(series: &TelemetrySeries, path: &Path) -> Result<()> {
    std::fs::write(path, write_csv_string(series)).map_err(|e| Error::io(path, e))
}

fn parse_header(line: &str) -> Result<(f64, Source)> {
    let rest = line
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|l| l.strip_prefix("trackdyn-telemetry"))
        .ok_or_else(|| Error::Schema("missing `# trackdyn-telemetry` header line".into()))?;
    let mut version = None;
    let mut rate = None;
    let mut source = Source::Imported;
    for kv in rest.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("malformed header field `{kv}`")))?;
        match k {
            "schema_version" => version = v.parse::<u32>().ok(),
            "rate_hz" => rate = v.parse::<f64>().ok(),
            "source" => source = v.parse()?,
            _ => {}
        }
    }
    match version {
        Some(CSV_SCHEMA_VERSION) => {}
        Some(v) => return Err(Error::Schema(format!("unsupported schema_version {v}"))),
        None => return Err(Error::Schema("header lacks schema_version".into())),
    }
    let rate = rate.ok_or_else(|| Error::Schema("header lacks rate_hz".into()))?;
    Ok((rate, source))
}

pub fn read_csv_str(text: &str) -> Result<TelemetrySeries> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let (rate_hz, source) = parse_header(first.trim_end_matches('\r'))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 11];
    for (slot, name) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))?;
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let mut v = [0.0; 11];
        for (k, &c) in idx.iter().enumerate() {
            let cell = row.get(c).unwrap_or("");
            v[k] = cell.parse::<f64>().map_err(|_| Error::Data {
                row: i + 1,
                detail: format!("column `{}`: cannot parse `{cell}`", CSV_COLUMNS[k]),
            })?;
        }
        records.push(TelemetryRecord::from_values(&v));
    }
    let series = TelemetrySeries {
        records,
        rate_hz,
        source,
    };
    series.validate()?;
    Ok(series)
}

pub fn read_csv(path: &Path) -> Result<TelemetrySeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_csv_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize) -> TelemetrySeries {
        let records = (0..n)
            .map(|i| {
                let f = i as f64;
                TelemetryRecord {
                    t: f * 0.02,
                    state: BodyState::new(1.0 + 0.1 * f, 0.01 / (f + 3.0), -0.3),
                    pose: Pose::new(f.sin(), 1e-17 * f, 0.1),
                    u_fb: ControlInput::new(0.2, -0.05),
                    u_cmd: ControlInput::new(1.0 / 3.0, 0.0),
                }
            })
            .collect();
        TelemetrySeries {
            records,
            rate_hz: 50.0,
            source: Source::Synthetic,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = series(100);
        let back = read_csv_str(&write_csv_string(&s)).unwrap();
        assert_eq!(back.len(), 100);
        assert_eq!(back, s);
    }

    #[test]
    fn missing_column_is_named() {
        let text = write_csv_string(&series(3)).replace(",omega,", ",yaw_rate,");
        match read_csv_str(&text) {
            Err(Error::Schema(m)) => assert!(m.contains("omega"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_timestamp_reports_row() {
        let mut s = series(5);
        s.records[3].t = s.records[2].t;
        match read_csv_str(&write_csv_string(&s)) {
            Err(Error::Ordering { row, .. }) => assert_eq!(row, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_reports_row() {
        let text = write_csv_string(&series(4));
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[4] = lines[4].replacen("0.2,", "NaN,", 1);
        match read_csv_str(&lines.join("\n")) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        lines[4] = lines[4].replacen("NaN,", "abc,", 1);
        assert!(matches!(read_csv_str(&lines.join("\n")), Err(Error::Data { row: 3, .. })));
    }

    #[test]
    fn schema_version_checked() {
        let text = write_csv_string(&series(2)).replace("schema_version=1", "schema_version=7");
        assert!(matches!(read_csv_str(&text), Err(Error::Schema(_))));
        assert!(matches!(read_csv_str("t,x\n1,2\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn column_order_is_free() {
        let s = series(3);
        let text = write_csv_string(&s);
        let mut lines: Vec<Vec<String>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(String::from).collect())
            .collect();
        for l in lines.iter_mut() {
            l.swap(0, 10);
        }
        let body: Vec<String> = lines.iter().map(|l| l.join(",")).collect();
        let shuffled = format!("{}\n{}\n", text.lines().next().unwrap(), body.join("\n"));
        assert_eq!(read_csv_str(&shuffled).unwrap(), s);
    }

    #[test]
    fn uneven_spacing_rejected() {
        let mut s = series(4);
        s.records[2].t += 0.005;
        s.records[3].t += 0.005;
        assert!(matches!(s.validate(), Err(Error::Ordering { row: 3, .. })));
    }
}
