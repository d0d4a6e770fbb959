//! File formats: the QMRD array container, run configuration, CSV and PGM.

mod config;
mod container;
mod csv;
mod pgm;

pub use config::{RegularizerKind, RunConfig, KEYS};
pub use container::{
    read_container, write_atomic, write_container, ArrayData, Container, NamedArray, HEADER_LEN, MAGIC, VERSION,
};
pub use csv::{csv_text, parse_metrics_csv, write_csv, write_metrics_csv, MetricRow, METRIC_HEADER};
pub use pgm::{pgm_bytes, write_pgm};
