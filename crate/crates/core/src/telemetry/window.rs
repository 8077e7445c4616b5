use serde::{Deserialize, Serialize};

use super::series::{TelemetryRecord, TelemetrySeries};
use super::track::Polyline;
use crate::error::{Error, Result};

/// `history_len` consecutive records plus the record that follows them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    /// Index of the first record in the source series.
    pub start: usize,
    pub records: Vec<TelemetryRecord>,
    pub target: TelemetryRecord,
}

impl SampleWindow {
    pub fn history_len(&self) -> usize {
        self.records.len()
    }

    /// The most recent record (the one the next-state prediction starts from).
    pub fn current(&self) -> &TelemetryRecord {
        self.records.last().expect("window is never empty")
    }

    /// Index of the target record in the source series.
    pub fn target_index(&self) -> usize {
        self.start + self.records.len()
    }
}

/// Sliding windows of length `history_len` taken every `stride` records.
/// A series with at most `history_len` records yields no windows.
pub fn make_windows(series: &TelemetrySeries, history_len: usize, stride: usize) -> Result<Vec<SampleWindow>> {
    if history_len == 0 || stride == 0 {
        return Err(Error::Config("history_len and stride must be at least 1".into()));
    }
    let n = series.records.len();
    if n <= history_len {
        return Ok(Vec::new());
    }
    Ok((0..n - history_len)
        .step_by(stride)
        .map(|start| SampleWindow {
            start,
            records: series.records[start..start + history_len].to_vec(),
            target: series.records[start + history_len],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// The first `fraction` of the windows (in order) go to training.
    ByFraction(f64),
    /// Windows whose target falls in the first `train_laps` laps go to training.
    ByLap { train_laps: usize },
}

/// Disjoint, exhaustive train/test partition. `lap_starts` holds the record
/// index at which each lap begins and is only used by [`SplitPolicy::ByLap`].
pub fn split_windows(
    windows: Vec<SampleWindow>,
    policy: SplitPolicy,
    lap_starts: &[usize],
) -> Result<(Vec<SampleWindow>, Vec<SampleWindow>)> {
    let cut = match policy {
        SplitPolicy::ByFraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("split fraction {f} outside [0, 1]")));
            }
            (f * windows.len() as f64).round() as usize
        }
        SplitPolicy::ByLap { train_laps } => match lap_starts.get(train_laps) {
            Some(&boundary) => windows.partition_point(|w| w.target_index() < boundary),
            None => windows.len(),
        },
    };
    let mut train = windows;
    let test = train.split_off(cut);
    Ok((train, test))
}

/// Record indices where each lap starts, from forward progress along the
/// centerline (the first entry is always 0 for a nonempty series).
pub fn detect_laps(series: &TelemetrySeries, centerline: &Polyline) -> Vec<usize> {
    let Some(first) = series.records.first() else {
        return Vec::new();
    };
    let len = centerline.length();
    let mut pr = centerline.project([first.pose.x, first.pose.y]);
    let mut progress = 0.0;
    let mut starts = vec![0];
    for (i, r) in series.records.iter().enumerate().skip(1) {
        let next = centerline.project_near([r.pose.x, r.pose.y], pr.segment, 8, 1.0);
        let mut ds = next.s - pr.s;
        if centerline.closed() {
            ds -= len * (ds / len).round();
        }
        progress += ds;
        pr = next;
        if progress >= starts.len() as f64 * len {
            starts.push(i);
        }
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{BodyState, ControlInput, Pose};
    use crate::telemetry::series::Source;

    fn series(n: usize) -> TelemetrySeries {
        TelemetrySeries {
            records: (0..n)
                .map(|i| TelemetryRecord {
                    t: i as f64 * 0.02,
                    state: BodyState::new(i as f64, 0.0, 0.0),
                    pose: Pose::default(),
                    u_fb: ControlInput::default(),
                    u_cmd: ControlInput::default(),
                })
                .collect(),
            rate_hz: 50.0,
            source: Source::Synthetic,
        }
    }

    /// Enumerate every start position directly.
    fn brute_count(n: usize, tau: usize, stride: usize) -> usize {
        (0..n).filter(|s| s % stride == 0 && s + tau < n).count()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&series(13), 12, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&series(40), 12, 1).unwrap().len(), 28);
        assert!(make_windows(&series(12), 12, 1).unwrap().is_empty());
        for n in 0..40 {
            for tau in 1..6 {
                for stride in 1..8 {
                    assert_eq!(
                        make_windows(&series(n), tau, stride).unwrap().len(),
                        brute_count(n, tau, stride),
                        "{n} {tau} {stride}"
                    );
                }
            }
        }
        assert!(make_windows(&series(5), 0, 1).is_err());
    }

    #[test]
    fn windows_are_contiguous_and_target_follows() {
        let s = series(30);
        for w in make_windows(&s, 5, 3).unwrap() {
            for (k, r) in w.records.iter().enumerate() {
                assert_eq!(r.state.vx, (w.start + k) as f64);
            }
            assert_eq!(w.target.state.vx, w.target_index() as f64);
            let gaps: Vec<f64> = w.records.windows(2).map(|p| p[1].t - p[0].t).collect();
            assert!(gaps.iter().all(|g| (g - 0.02).abs() < 1e-12));
        }
    }

    #[test]
    fn fraction_split() {
        let w = make_windows(&series(101), 1, 1).unwrap();
        let (a, b) = split_windows(w, SplitPolicy::ByFraction(0.8), &[]).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        assert!(a.iter().all(|x| b.iter().all(|y| x.start != y.start)));
    }

    #[test]
    fn lap_split_respects_boundaries() {
        let w = make_windows(&series(90), 4, 1).unwrap();
        let laps = [0, 30, 60];
        let (a, b) = split_windows(w.clone(), SplitPolicy::ByLap { train_laps: 2 }, &laps).unwrap();
        assert_eq!(a.len() + b.len(), w.len());
        assert!(a.iter().all(|x| x.target_index() < 60));
        assert!(b.iter().all(|x| x.target_index() >= 60));
        let (a, b) = split_windows(w, SplitPolicy::ByLap { train_laps: 3 }, &laps).unwrap();
        assert!(b.is_empty() && !a.is_empty());
    }
}
