//! Scenario configuration, seeded geometry generation, sweeps over the
//! scenario parameters and CSV artifacts.

mod config;
mod output;
mod runs;
mod sweep;

pub use config::{
    dbm_to_watts, generate_geometry, generate_ring_geometry, ArrayConfig, ChannelConfig, LinkConfig, McConfig,
    OptimizerConfig, RegionConfig, RingConfig, RotationConfig, ScenarioConfig, UserConfig,
};
pub use output::{emit_csv, emit_report, format_float, parse_csv, sidecar_path, write_csv, CSV_HEADER};
pub use runs::{
    emit_optimized, optimize_geometries, validate_surrogates, write_validation, OptimizedGeometry, ValidationReport,
    ValidationRow, OPTIMIZE_HEADER,
};
pub use sweep::{
    evaluate_metrics, run_sweep, scheme_orientation, Axis, Failure, Metric, Outputs, Sample, Scheme, SweepReport,
    SweepRow, SweepSpec,
};
