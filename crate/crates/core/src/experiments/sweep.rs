//! Parameter sweeps over paired geometry realizations.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{generate_geometry, generate_ring_geometry, ScenarioConfig};
use crate::channel::OrientationMatrix;
use crate::error::{Error, Result};
use crate::estimation::nmse;
use crate::geometry::{geometry_tables, GeometryTables, Scenario};
use crate::optimizer::{evaluate_statistics, pga_restarts, NmseObjective, PgaConfig, SumRateObjective};
use crate::rng::stream;
use crate::simulation::ergodic_rate;
use crate::surrogates::{mrc_surrogate, wzf_surrogate, Receiver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Total antenna count; the row count is kept and columns adjusted.
    N,
    K,
    /// User transmit power (data and pilot) in dBm.
    Power,
    /// Cap half-angle in degrees.
    ThetaMax,
    B,
    /// τ_p / T_c.
    PilotFraction,
    /// Azimuth spacing of users on a common ring, degrees.
    AngularSeparation,
}

impl Axis {
    pub const ALL: [Axis; 7] =
        [Axis::N, Axis::K, Axis::Power, Axis::ThetaMax, Axis::B, Axis::PilotFraction, Axis::AngularSeparation];

    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "N",
            Axis::K => "K",
            Axis::Power => "power",
            Axis::ThetaMax => "theta_max",
            Axis::B => "b",
            Axis::PilotFraction => "pilot_fraction",
            Axis::AngularSeparation => "angular_separation",
        }
    }

    /// Configuration with this axis set to `value`.
    pub fn apply(self, config: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut c = config.clone();
        let whole = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} needs a positive integer, got {v}", self.name())))
            }
        };
        match self {
            Axis::N => {
                let n = whole(value)?;
                if n % c.array.n_row != 0 {
                    return Err(Error::Config(format!("N = {n} is not a multiple of n_row = {}", c.array.n_row)));
                }
                c.array.n_col = n / c.array.n_row;
            }
            Axis::K => {
                let k = whole(value)?;
                c.users.k = k;
                c.link.tau_p = k;
            }
            Axis::Power => {
                c.link.power_dbm = value;
                c.link.pilot_power_dbm = value;
            }
            Axis::ThetaMax => c.rotation.theta_max_deg = value,
            Axis::B => c.channel.b = value,
            Axis::PilotFraction => c.link.tau_p = (value * c.link.t_c as f64).round() as usize,
            Axis::AngularSeparation => {}
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown axis '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    MrcOpt,
    MrcRan,
    WzfOpt,
    WzfRan,
    /// Every element facing the array normal.
    Fix,
    NmseOpt,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::MrcOpt, Scheme::MrcRan, Scheme::WzfOpt, Scheme::WzfRan, Scheme::Fix, Scheme::NmseOpt];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::MrcOpt => "mrc-opt",
            Scheme::MrcRan => "mrc-ran",
            Scheme::WzfOpt => "wzf-opt",
            Scheme::WzfRan => "wzf-ran",
            Scheme::Fix => "fix",
            Scheme::NmseOpt => "nmse-opt",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    MrcSurrogate,
    WzfSurrogate,
    Nmse,
    MrcErgodic,
    WzfErgodic,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MrcSurrogate => "mrc_sur",
            Metric::WzfSurrogate => "wzf_sur",
            Metric::Nmse => "nmse",
            Metric::MrcErgodic => "mrc_erg",
            Metric::WzfErgodic => "wzf_erg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outputs {
    pub surrogate: bool,
    pub ergodic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub outputs: Outputs,
}

impl SweepSpec {
    /// Metrics emitted for every scheme, in output order.
    pub fn metrics(&self) -> Vec<Metric> {
        let mut m = Vec::new();
        if self.outputs.surrogate {
            m.extend([Metric::MrcSurrogate, Metric::WzfSurrogate, Metric::Nmse]);
        }
        if self.outputs.ergodic {
            m.extend([Metric::MrcErgodic, Metric::WzfErgodic]);
        }
        m
    }

    pub fn validate(&self, config: &ScenarioConfig) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::InvalidArgument("no schemes requested".into()));
        }
        if !self.outputs.surrogate && !self.outputs.ergodic {
            return Err(Error::InvalidArgument("no outputs requested".into()));
        }
        for &v in &self.values {
            let c = self.axis.apply(config, v)?;
            if c.users.k > c.n_antennas() {
                return Err(Error::Config(format!(
                    "{} = {v}: K = {} exceeds N = {}, wZF is undefined",
                    self.axis,
                    c.users.k,
                    c.n_antennas()
                )));
            }
        }
        Ok(())
    }
}

/// Aggregated output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub scheme: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_geometries: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// One metric of one scheme on one geometry realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub geometry: usize,
    pub scheme: Scheme,
    pub metric: Metric,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub value: f64,
    pub geometry: usize,
    pub scheme: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: Axis,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
    pub samples: Vec<Sample>,
    /// Geometries excluded for an axis value, with the first error seen.
    pub failures: Vec<Failure>,
}

impl SweepReport {
    /// Per-geometry values of one (value, scheme, metric) cell, ordered by
    /// geometry index.
    pub fn cell(&self, value: f64, scheme: Scheme, metric: Metric) -> Vec<(usize, f64)> {
        self.samples
            .iter()
            .filter(|s| s.value == value && s.scheme == scheme && s.metric == metric)
            .map(|s| (s.geometry, s.x))
            .collect()
    }

    pub fn row(&self, value: f64, scheme: Scheme, metric: Metric) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value && r.scheme == scheme.name() && r.metric == metric.name())
    }
}

/// Stream tags shared by every scheme of one geometry.
pub(crate) mod tag {
    pub const RANDOM_F: u64 = 3;
    pub const RESTARTS: u64 = 4;
    pub const BLOCKS: u64 = 5;
}

/// Orientation chosen by `scheme` on one geometry.
pub fn scheme_orientation(
    scheme: Scheme,
    scenario: &Scenario,
    tables: &GeometryTables,
    pga: &PgaConfig,
    restarts: usize,
    seed: u64,
    geometry: usize,
) -> Result<OrientationMatrix> {
    let n = scenario.n_antennas();
    let theta = scenario.theta_max;
    let restart_seed = stream(seed, &[geometry as u64, tag::RESTARTS]).random::<u64>();
    let optimize = |receiver| {
        let obj = SumRateObjective { scenario, tables, receiver };
        pga_restarts(&obj, n, theta, restarts, restart_seed, pga).map(|t| t.orientation)
    };
    match scheme {
        Scheme::Fix => Ok(OrientationMatrix::broadside(n, theta)),
        Scheme::MrcRan | Scheme::WzfRan => {
            Ok(OrientationMatrix::random(n, theta, &mut stream(seed, &[geometry as u64, tag::RANDOM_F])))
        }
        Scheme::MrcOpt => optimize(Receiver::Mrc),
        Scheme::WzfOpt => optimize(Receiver::Wzf),
        Scheme::NmseOpt => {
            let obj = NmseObjective::new(scenario, tables);
            pga_restarts(&obj, n, theta, restarts, restart_seed, pga).map(|t| t.orientation)
        }
    }
}

/// Every requested metric at one orientation.
pub fn evaluate_metrics(
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
    metrics: &[Metric],
    blocks: usize,
    block_seed: u64,
) -> Result<Vec<f64>> {
    let (stats, est) = evaluate_statistics(scenario, tables, orientation)?;
    metrics
        .iter()
        .map(|m| match m {
            Metric::MrcSurrogate => Ok(mrc_surrogate(&stats, &est, scenario).sum_rate()),
            Metric::WzfSurrogate => Ok(wzf_surrogate(&stats, &est, scenario)?.sum_rate()),
            Metric::Nmse => Ok(nmse(&stats, &est, scenario).mean()),
            Metric::MrcErgodic => Ok(ergodic_rate(scenario, tables, orientation, Receiver::Mrc, blocks, block_seed)?.sum_rate),
            Metric::WzfErgodic => Ok(ergodic_rate(scenario, tables, orientation, Receiver::Wzf, blocks, block_seed)?.sum_rate),
        })
        .collect()
}

type GeometryOutcome = std::result::Result<Vec<(Scheme, Vec<f64>)>, Failure>;

fn run_geometry(config: &ScenarioConfig, spec: &SweepSpec, metrics: &[Metric], value: f64, g: usize) -> GeometryOutcome {
    let seed = config.mc.seed;
    let fail = |scheme: Option<Scheme>, e: Error| Failure {
        value,
        geometry: g,
        scheme: scheme.map(|s| s.name().to_string()),
        error: e.to_string(),
    };
    let scenario = match spec.axis {
        Axis::AngularSeparation => generate_ring_geometry(config, seed, g, value.to_radians()),
        _ => generate_geometry(config, seed, g),
    }
    .map_err(|e| fail(None, e))?;
    let tables = geometry_tables(&scenario).map_err(|e| fail(None, e))?;
    let pga = config.pga();
    let block_seed = stream(seed, &[g as u64, tag::BLOCKS]).random::<u64>();
    spec.schemes
        .iter()
        .map(|&scheme| {
            let f = scheme_orientation(scheme, &scenario, &tables, &pga, config.optimizer.restarts, seed, g)
                .map_err(|e| fail(Some(scheme), e))?;
            let x = evaluate_metrics(&scenario, &tables, &f, metrics, config.mc.blocks_per_geometry, block_seed)
                .map_err(|e| fail(Some(scheme), e))?;
            Ok((scheme, x))
        })
        .collect()
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every (value, geometry, scheme) combination. Geometry g uses the
/// same random streams for every scheme and axis value, so scheme gaps are
/// paired. A geometry that fails under any scheme is dropped for that
/// value and recorded in `failures`.
pub fn run_sweep(config: &ScenarioConfig, spec: &SweepSpec) -> Result<SweepReport> {
    config.validate()?;
    spec.validate(config)?;
    let metrics = spec.metrics();
    let seed = config.mc.seed;
    let hash = config.hash();
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for &value in &spec.values {
        let cfg = spec.axis.apply(config, value)?;
        info!("{} = {value}: {} geometries", spec.axis, cfg.mc.geometries);
        let outcomes: Vec<GeometryOutcome> =
            (0..cfg.mc.geometries).into_par_iter().map(|g| run_geometry(&cfg, spec, &metrics, value, g)).collect();
        let mut kept = Vec::new();
        for (g, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(per_scheme) => kept.push((g, per_scheme)),
                Err(f) => {
                    warn!("{} = {value}, geometry {g} dropped: {}", spec.axis, f.error);
                    failures.push(f);
                }
            }
        }
        for (si, &scheme) in spec.schemes.iter().enumerate() {
            for (mi, &metric) in metrics.iter().enumerate() {
                let xs: Vec<f64> = kept.iter().map(|(_, r)| r[si].1[mi]).collect();
                samples.extend(kept.iter().map(|(g, r)| Sample { value, geometry: *g, scheme, metric, x: r[si].1[mi] }));
                let (mean, stderr) = mean_stderr(&xs);
                rows.push(SweepRow {
                    axis: spec.axis.name().to_string(),
                    value,
                    scheme: scheme.name().to_string(),
                    metric: metric.name().to_string(),
                    mean,
                    stderr,
                    n_geometries: xs.len(),
                    seed,
                    config_hash: hash.clone(),
                });
            }
        }
    }
    Ok(SweepReport { axis: spec.axis, seed, config_hash: hash, rows, samples, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.mc.geometries = 3;
        c.mc.blocks_per_geometry = 20;
        c.optimizer.max_iters = 10;
        c
    }

    #[test]
    fn names_round_trip() {
        for a in Axis::ALL {
            assert_eq!(a.name().parse::<Axis>().unwrap(), a);
        }
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("bogus".parse::<Axis>().is_err());
    }

    #[test]
    fn axis_application() {
        let c = ScenarioConfig::default();
        assert_eq!(Axis::N.apply(&c, 16.0).unwrap().array.n_col, 8);
        assert!(Axis::N.apply(&c, 7.0).is_err());
        let k = Axis::K.apply(&c, 6.0).unwrap();
        assert_eq!((k.users.k, k.link.tau_p), (6, 6));
        assert_eq!(Axis::PilotFraction.apply(&c, 0.1).unwrap().link.tau_p, 20);
        assert!(Axis::PilotFraction.apply(&c, 0.01).is_err());
        let spec = SweepSpec {
            axis: Axis::K,
            values: vec![10.0],
            schemes: vec![Scheme::Fix],
            outputs: Outputs { surrogate: true, ergodic: false },
        };
        assert!(spec.validate(&c).is_err());
    }

    #[test]
    fn sweep_is_paired_and_complete() {
        let c = small();
        let spec = SweepSpec {
            axis: Axis::Power,
            values: vec![10.0, 20.0],
            schemes: vec![Scheme::Fix, Scheme::WzfRan, Scheme::MrcRan],
            outputs: Outputs { surrogate: true, ergodic: true },
        };
        let r = run_sweep(&c, &spec).unwrap();
        assert_eq!(r.rows.len(), 2 * 3 * 5);
        let a = r.cell(20.0, Scheme::WzfRan, Metric::WzfSurrogate);
        let b = r.cell(20.0, Scheme::MrcRan, Metric::WzfSurrogate);
        assert_eq!(a, b);
        assert!(r.rows.iter().all(|row| row.n_geometries + r.failures.iter().filter(|f| f.value == row.value).count() == 3));
    }
}
