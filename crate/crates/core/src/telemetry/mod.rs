//! Telemetry schema and CSV I/O, windowing and splits, track geometry, and
//! the synthetic closed-loop data generator.

mod generator;
mod series;
mod track;
mod window;

pub use generator::{generate_synthetic, GeneratedData, GeneratorConfig};
pub use series::{
    read_csv, read_csv_str, write_csv, write_csv_string, Source, TelemetryRecord,
    TelemetrySeries, CSV_COLUMNS, CSV_SCHEMA_VERSION,
};
pub use track::{Polyline, Projection, RacePoint, Raceline, TrackDefinition, BUNDLED_TRACKS};
pub use window::{detect_laps, make_windows, split_windows, SampleWindow, SplitPolicy};
