//! Batch optimization and the surrogate-versus-ergodic validation run.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::config::{generate_geometry, ScenarioConfig};
use super::output::format_float;
use super::sweep::{evaluate_metrics, tag, Metric, Scheme};
use crate::channel::tilt;
use crate::error::{Error, Result};
use crate::geometry::geometry_tables;
use crate::optimizer::{pga_restarts, NmseObjective, Objective, PgaTrace, SumRateObjective, Termination};
use crate::rng::stream;
use crate::simulation::ergodic_rate;
use crate::surrogates::Receiver;

/// Optimized orientation of one geometry realization.
#[derive(Debug, Clone)]
pub struct OptimizedGeometry {
    pub geometry: usize,
    pub trace: PgaTrace,
    pub mrc_sur: f64,
    pub wzf_sur: f64,
    pub nmse: f64,
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::GradientNorm => "gradient-norm",
        Termination::MaxIters => "max-iters",
        Termination::StepFailure => "step-failure",
    }
}

/// Runs PGA for `scheme` (one of the `-opt` schemes) on every configured
/// geometry.
pub fn optimize_geometries(config: &ScenarioConfig, scheme: Scheme) -> Result<Vec<OptimizedGeometry>> {
    config.validate()?;
    let seed = config.mc.seed;
    let pga = config.pga();
    (0..config.mc.geometries)
        .into_par_iter()
        .map(|g| {
            let sc = generate_geometry(config, seed, g)?;
            let tables = geometry_tables(&sc)?;
            let restart_seed = stream(seed, &[g as u64, tag::RESTARTS]).random::<u64>();
            let n = sc.n_antennas();
            let run = |obj: &dyn Objective| pga_restarts(obj, n, sc.theta_max, config.optimizer.restarts, restart_seed, &pga);
            let trace = match scheme {
                Scheme::MrcOpt => run(&SumRateObjective { scenario: &sc, tables: &tables, receiver: Receiver::Mrc })?,
                Scheme::WzfOpt => run(&SumRateObjective { scenario: &sc, tables: &tables, receiver: Receiver::Wzf })?,
                Scheme::NmseOpt => run(&NmseObjective::new(&sc, &tables))?,
                other => return Err(Error::InvalidArgument(format!("{other} is not an optimization scheme"))),
            };
            let m = [Metric::MrcSurrogate, Metric::WzfSurrogate, Metric::Nmse];
            let x = evaluate_metrics(&sc, &tables, &trace.orientation, &m, 1, 0)?;
            Ok(OptimizedGeometry { geometry: g, trace, mrc_sur: x[0], wzf_sur: x[1], nmse: x[2] })
        })
        .collect()
}

pub const OPTIMIZE_HEADER: [&str; 16] = [
    "geometry",
    "antenna",
    "fx",
    "fy",
    "fz",
    "tilt_deg",
    "azimuth_deg",
    "objective",
    "mrc_sur",
    "wzf_sur",
    "nmse",
    "iterations",
    "termination",
    "scheme",
    "seed",
    "config_hash",
];

/// One row per (geometry, antenna).
pub fn emit_optimized(results: &[OptimizedGeometry], scheme: Scheme, config: &ScenarioConfig, path: &Path) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(std::io::BufWriter::new(file));
    let cerr = |source| Error::Csv { path: path.to_path_buf(), source };
    w.write_record(OPTIMIZE_HEADER).map_err(cerr)?;
    let hash = config.hash();
    for r in results {
        for (n, f) in r.trace.orientation.boresights().iter().enumerate() {
            w.write_record([
                r.geometry.to_string(),
                n.to_string(),
                format_float(f.x),
                format_float(f.y),
                format_float(f.z),
                format_float(tilt(f).to_degrees()),
                format_float(f.y.atan2(f.x).to_degrees()),
                format_float(r.trace.objective),
                format_float(r.mrc_sur),
                format_float(r.wzf_sur),
                format_float(r.nmse),
                r.trace.iterations.len().to_string(),
                termination_name(r.trace.termination).to_string(),
                scheme.name().to_string(),
                config.mc.seed.to_string(),
                hash.clone(),
            ])
            .map_err(cerr)?;
        }
    }
    w.flush().map_err(io)
}

/// Surrogate and ergodic sum rate of one receiver on one geometry, both at
/// the orientation optimized for that receiver's surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub geometry: usize,
    pub receiver: Receiver,
    pub surrogate: f64,
    pub ergodic: f64,
    pub ergodic_stderr: f64,
    pub skipped_blocks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    /// |mean surrogate − mean ergodic| / mean surrogate.
    pub mrc_gap: f64,
    pub wzf_gap: f64,
    /// Geometries where the MRC surrogate exceeded the ergodic rate by more
    /// than two standard errors.
    pub uatf_violations: Vec<usize>,
    pub mrc_tolerance: f64,
    pub wzf_tolerance: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.mrc_gap < self.mrc_tolerance && self.wzf_gap < self.wzf_tolerance && self.uatf_violations.is_empty()
    }
}

fn relative_gap(rows: &[ValidationRow], receiver: Receiver) -> f64 {
    let sel: Vec<_> = rows.iter().filter(|r| r.receiver == receiver).collect();
    let n = sel.len() as f64;
    let s = sel.iter().map(|r| r.surrogate).sum::<f64>() / n;
    let e = sel.iter().map(|r| r.ergodic).sum::<f64>() / n;
    (s - e).abs() / s
}

/// Optimizes each receiver's surrogate on `config.mc.geometries`
/// realizations and compares it with `blocks_per_geometry` simulated
/// coherence blocks.
pub fn validate_surrogates(config: &ScenarioConfig) -> Result<ValidationReport> {
    config.validate()?;
    let seed = config.mc.seed;
    let pga = config.pga();
    let per_geometry: Vec<Vec<ValidationRow>> = (0..config.mc.geometries)
        .into_par_iter()
        .map(|g| {
            let sc = generate_geometry(config, seed, g)?;
            let tables = geometry_tables(&sc)?;
            let restart_seed = stream(seed, &[g as u64, tag::RESTARTS]).random::<u64>();
            let block_seed = stream(seed, &[g as u64, tag::BLOCKS]).random::<u64>();
            [Receiver::Mrc, Receiver::Wzf]
                .into_iter()
                .map(|receiver| {
                    let obj = SumRateObjective { scenario: &sc, tables: &tables, receiver };
                    let t = pga_restarts(&obj, sc.n_antennas(), sc.theta_max, config.optimizer.restarts, restart_seed, &pga)?;
                    let e = ergodic_rate(&sc, &tables, &t.orientation, receiver, config.mc.blocks_per_geometry, block_seed)?;
                    Ok(ValidationRow {
                        geometry: g,
                        receiver,
                        surrogate: t.objective,
                        ergodic: e.sum_rate,
                        ergodic_stderr: e.sum_rate_stderr,
                        skipped_blocks: e.skipped,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ValidationRow> = per_geometry.into_iter().flatten().collect();
    let uatf_violations = rows
        .iter()
        .filter(|r| r.receiver == Receiver::Mrc && r.surrogate > r.ergodic + 2.0 * r.ergodic_stderr)
        .map(|r| r.geometry)
        .collect();
    Ok(ValidationReport {
        mrc_gap: relative_gap(&rows, Receiver::Mrc),
        wzf_gap: relative_gap(&rows, Receiver::Wzf),
        rows,
        uatf_violations,
        mrc_tolerance: 0.05,
        wzf_tolerance: 0.08,
    })
}

/// Human-readable summary, one line per geometry and receiver.
pub fn write_validation<W: Write>(report: &ValidationReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "geometry receiver surrogate ergodic stderr skipped")?;
    for r in &report.rows {
        writeln!(
            out,
            "{:>8} {:>8} {:>9.4} {:>7.4} {:>6.4} {:>7}",
            r.geometry,
            r.receiver.name(),
            r.surrogate,
            r.ergodic,
            r.ergodic_stderr,
            r.skipped_blocks
        )?;
    }
    writeln!(out, "mrc relative gap {:.4} (tolerance {})", report.mrc_gap, report.mrc_tolerance)?;
    writeln!(out, "wzf relative gap {:.4} (tolerance {})", report.wzf_gap, report.wzf_tolerance)?;
    writeln!(out, "UatF bound violations: {:?}", report.uatf_violations)?;
    writeln!(out, "{}", if report.passed() { "PASS" } else { "FAIL" })
}
