//! Projected gradient ascent over the product of spherical caps.
//!
//! Each iteration removes the radial part of every boresight gradient, steps
//! along the tangent, renormalizes, projects back into the cap and accepts
//! the largest step of the form α₀ρ^q that satisfies the Armijo condition
//! R(F⁺) ≥ R(F) + c·α·Σ‖g_n‖².

use std::sync::Mutex;

use log::{debug, warn};
use rayon::prelude::*;

use crate::channel::{cap_project, channel_statistics, tilt, ChannelStatistics, OrientationMatrix, E_Z};
use crate::error::{Error, Result};
use crate::estimation::{active_eigenpairs, estimation_statistics, EstimationStatistics};
use crate::geometry::{GeometryTables, Scenario, Vec3};
use crate::gradients::{mrc_gradient, nmse_gradient, wzf_gradient};
use crate::rng::stream;
use crate::surrogates::Receiver;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgaConfig {
    pub alpha0: f64,
    pub rho: f64,
    pub c: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
}

impl Default for PgaConfig {
    fn default() -> Self {
        Self { alpha0: 1.0, rho: 0.5, c: 1e-4, eps: 1e-6, max_iters: 500, max_backtracks: 40 }
    }
}

impl PgaConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha0 > 0.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.c > 0.0
            && self.c < 1.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid PGA configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Largest projected-gradient norm fell below ε.
    GradientNorm,
    MaxIters,
    /// No step satisfied the Armijo condition within the backtracking budget.
    StepFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgaIteration {
    /// Objective at the start of the iteration.
    pub objective: f64,
    /// max_n ‖g_n‖.
    pub grad_norm: f64,
    /// Accepted step, or 0 when the iteration stopped.
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone)]
pub struct PgaTrace {
    pub iterations: Vec<PgaIteration>,
    pub orientation: OrientationMatrix,
    pub objective: f64,
    pub termination: Termination,
}

impl PgaTrace {
    /// Objective at every visited iterate, ending with the final one.
    pub fn objective_history(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.iterations.iter().map(|i| i.objective).collect();
        if self.termination == Termination::MaxIters {
            v.push(self.objective);
        }
        v
    }
}

/// Objective maximized by [`pga`].
pub trait Objective: Sync {
    fn value(&self, orientation: &OrientationMatrix) -> Result<f64>;
    /// Value and Euclidean gradient with respect to every boresight.
    fn value_and_gradient(&self, orientation: &OrientationMatrix) -> Result<(f64, Vec<Vec3>)>;
}

/// Elements within this angle of the cap boundary count as on it.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// `(I − f fᵀ) ∇`.
pub fn tangent_project(f: &Vec3, grad: &Vec3) -> Vec3 {
    grad - f * f.dot(grad)
}

/// Tangent projection, with the outward part removed for an element sitting
/// on the cap boundary: the feasible-direction (effective) gradient.
pub fn effective_gradient(f: &Vec3, grad: &Vec3, theta_max: f64) -> Vec3 {
    let g = tangent_project(f, grad);
    if tilt(f) < theta_max - BOUNDARY_TOL {
        return g;
    }
    // Unit tangent pointing towards larger tilt.
    let out = f * f.z - E_Z;
    let norm = out.norm();
    if norm == 0.0 {
        return g;
    }
    let out = out / norm;
    let along = g.dot(&out);
    if along > 0.0 {
        g - out * along
    } else {
        g
    }
}

/// Retraction `(f + αg)/‖f + αg‖` followed by projection onto the cap.
pub fn retract_and_cap(f: &Vec3, g: &Vec3, step: f64, theta_max: f64) -> Result<Vec3> {
    let v = f + g * step;
    let norm = v.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::StepTooLarge);
    }
    Ok(cap_project(&v, theta_max, f))
}

pub fn pga<O: Objective + ?Sized>(objective: &O, start: OrientationMatrix, cfg: &PgaConfig) -> Result<PgaTrace> {
    cfg.validate()?;
    let theta = start.theta_max();
    let wrap = |iteration: usize| move |e: Error| Error::Objective { iteration, source: Box::new(e) };
    let mut f = start;
    let (mut value, mut grad) = objective.value_and_gradient(&f).map_err(wrap(0))?;
    let mut iterations = Vec::new();
    let mut termination = Termination::MaxIters;
    for it in 0..cfg.max_iters {
        let g: Vec<Vec3> =
            f.boresights().iter().zip(&grad).map(|(fn_, gn)| effective_gradient(fn_, gn, theta)).collect();
        let grad_norm = g.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let g_sq: f64 = g.iter().map(|v| v.norm_squared()).sum();
        if grad_norm <= cfg.eps {
            iterations.push(PgaIteration { objective: value, grad_norm, step: 0.0, backtracks: 0 });
            termination = Termination::GradientNorm;
            break;
        }
        let mut step = cfg.alpha0;
        let mut accepted = None;
        let mut backtracks = 0;
        for q in 0..=cfg.max_backtracks {
            backtracks = q;
            if let Some(candidate) = candidate(&f, &g, step, theta) {
                match objective.value(&candidate) {
                    Ok(v) if v >= value + cfg.c * step * g_sq => {
                        accepted = Some(candidate);
                        break;
                    }
                    Ok(_) => {}
                    Err(e) => debug!("iteration {it}: candidate at step {step:e} rejected: {e}"),
                }
            }
            step *= cfg.rho;
        }
        let Some(next) = accepted else {
            iterations.push(PgaIteration { objective: value, grad_norm, step: 0.0, backtracks });
            termination = Termination::StepFailure;
            break;
        };
        iterations.push(PgaIteration { objective: value, grad_norm, step, backtracks });
        f = next;
        (value, grad) = objective.value_and_gradient(&f).map_err(wrap(it + 1))?;
    }
    Ok(PgaTrace { iterations, orientation: f, objective: value, termination })
}

fn candidate(f: &OrientationMatrix, g: &[Vec3], step: f64, theta: f64) -> Option<OrientationMatrix> {
    let bs: Result<Vec<Vec3>> = f.boresights().iter().zip(g).map(|(fn_, gn)| retract_and_cap(fn_, gn, step, theta)).collect();
    OrientationMatrix::new(bs.ok()?, theta).ok()
}

/// Runs PGA from `restarts` starting points and keeps the best result. The
/// first start is broadside; the others are drawn uniformly on the caps
/// from independent streams of `seed`.
pub fn pga_restarts<O: Objective + ?Sized>(
    objective: &O,
    n_antennas: usize,
    theta_max: f64,
    restarts: usize,
    seed: u64,
    cfg: &PgaConfig,
) -> Result<PgaTrace> {
    let restarts = restarts.max(1);
    let runs: Vec<Result<PgaTrace>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                OrientationMatrix::broadside(n_antennas, theta_max)
            } else {
                OrientationMatrix::random(n_antennas, theta_max, &mut stream(seed, &[r as u64]))
            };
            pga(objective, start, cfg)
        })
        .collect();
    let mut best: Option<PgaTrace> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(t) => {
                if best.as_ref().is_none_or(|b| t.objective > b.objective) {
                    best = Some(t);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart ran"))
}

/// Channel and estimation statistics at a feasible orientation.
pub fn evaluate_statistics(
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
) -> Result<(ChannelStatistics, EstimationStatistics)> {
    let stats = channel_statistics(scenario, tables, orientation)?;
    let est = estimation_statistics(&stats, scenario)?;
    Ok((stats, est))
}

/// Surrogate sum rate under one receiver.
pub struct SumRateObjective<'a> {
    pub scenario: &'a Scenario,
    pub tables: &'a GeometryTables,
    pub receiver: Receiver,
}

impl Objective for SumRateObjective<'_> {
    fn value(&self, orientation: &OrientationMatrix) -> Result<f64> {
        let (stats, est) = evaluate_statistics(self.scenario, self.tables, orientation)?;
        self.receiver.sum_rate(&stats, &est, self.scenario)
    }

    fn value_and_gradient(&self, orientation: &OrientationMatrix) -> Result<(f64, Vec<Vec3>)> {
        let (stats, est) = evaluate_statistics(self.scenario, self.tables, orientation)?;
        match self.receiver {
            Receiver::Mrc => {
                let (terms, g) = mrc_gradient(&stats, &est, self.scenario, self.tables, orientation);
                Ok((terms.sum_rate(), g.per_antenna))
            }
            Receiver::Wzf => {
                let (terms, g) = wzf_gradient(&stats, &est, self.scenario, self.tables, orientation)?;
                Ok((terms.sum_rate(), g.per_antenna))
            }
        }
    }
}

/// Negated mean NMSE, so that ascent minimizes the estimation error.
/// Changes in the numerical rank of any R_k between evaluations are logged.
pub struct NmseObjective<'a> {
    pub scenario: &'a Scenario,
    pub tables: &'a GeometryTables,
    ranks: Mutex<Option<Vec<usize>>>,
}

impl<'a> NmseObjective<'a> {
    pub fn new(scenario: &'a Scenario, tables: &'a GeometryTables) -> Self {
        Self { scenario, tables, ranks: Mutex::new(None) }
    }

    fn note_ranks(&self, ranks: Vec<usize>) {
        let mut seen = self.ranks.lock().expect("rank log poisoned");
        if let Some(prev) = seen.as_ref() {
            if *prev != ranks {
                warn!("covariance rank changed from {prev:?} to {ranks:?}; NMSE gradient is not defined across the change");
            }
        }
        *seen = Some(ranks);
    }
}

impl Objective for NmseObjective<'_> {
    fn value(&self, orientation: &OrientationMatrix) -> Result<f64> {
        let (stats, est) = evaluate_statistics(self.scenario, self.tables, orientation)?;
        let report = crate::estimation::nmse(&stats, &est, self.scenario);
        self.note_ranks(stats.r.iter().map(|r| active_eigenpairs(r).0.len()).collect());
        Ok(-report.mean())
    }

    fn value_and_gradient(&self, orientation: &OrientationMatrix) -> Result<(f64, Vec<Vec3>)> {
        let (stats, est) = evaluate_statistics(self.scenario, self.tables, orientation)?;
        let (v, ranks, g) = nmse_gradient(&stats, &est, self.scenario, self.tables, orientation);
        self.note_ranks(ranks);
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::TILT_TOL;
    use crate::geometry::{geometry_tables, tests::toy_scenario};

    #[test]
    fn tangent_projection_cases() {
        let f = Vec3::new(1.0, 2.0, 2.0) / 3.0;
        assert!(tangent_project(&f, &(f * 5.0)).norm() < 1e-15);
        let orth = Vec3::new(2.0, -1.0, 0.0);
        assert_eq!(tangent_project(&f, &orth), orth);
        assert_eq!(tangent_project(&E_Z, &Vec3::new(1.0, 0.0, 1.0)), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn retraction_stays_inside_or_hits_boundary() {
        let cap = 60f64.to_radians();
        let f = Vec3::new(40f64.to_radians().sin(), 0.0, 40f64.to_radians().cos());
        assert!((retract_and_cap(&f, &Vec3::zeros(), 1.0, cap).unwrap() - f).norm() < 1e-15);
        let out = retract_and_cap(&E_Z, &Vec3::new(10.0, 0.0, 0.0), 1.0, cap).unwrap();
        assert!((tilt(&out) - cap).abs() < 1e-12);
        assert!(matches!(retract_and_cap(&E_Z, &-E_Z, 1.0, cap), Err(Error::StepTooLarge)));
        let prev = Vec3::new(0.0, cap.sin(), cap.cos());
        let down = retract_and_cap(&prev, &(-E_Z * 2.0 - prev), 1.0, cap).unwrap();
        assert!((down - prev).norm() < 1e-12);
    }

    struct Flat;
    impl Objective for Flat {
        fn value(&self, _: &OrientationMatrix) -> Result<f64> {
            Ok(1.0)
        }
        fn value_and_gradient(&self, o: &OrientationMatrix) -> Result<(f64, Vec<Vec3>)> {
            Ok((1.0, o.boresights().iter().map(|f| f * 3.0).collect()))
        }
    }

    #[test]
    fn stationary_start_stops_immediately() {
        let start = OrientationMatrix::broadside(3, 1.0);
        let t = pga(&Flat, start.clone(), &PgaConfig::default()).unwrap();
        assert_eq!(t.termination, Termination::GradientNorm);
        assert_eq!(t.iterations.len(), 1);
        assert_eq!(t.orientation, start);
    }

    struct Failing;
    impl Objective for Failing {
        fn value(&self, _: &OrientationMatrix) -> Result<f64> {
            Err(Error::Precondition("nope".into()))
        }
        fn value_and_gradient(&self, _: &OrientationMatrix) -> Result<(f64, Vec<Vec3>)> {
            Err(Error::Precondition("nope".into()))
        }
    }

    #[test]
    fn objective_errors_carry_iteration() {
        let e = pga(&Failing, OrientationMatrix::broadside(2, 1.0), &PgaConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Objective { iteration: 0, .. }));
    }

    #[test]
    fn ascent_is_monotone_and_feasible() {
        let sc = toy_scenario();
        let t = geometry_tables(&sc).unwrap();
        for receiver in [Receiver::Mrc, Receiver::Wzf] {
            let obj = SumRateObjective { scenario: &sc, tables: &t, receiver };
            let cfg = PgaConfig { max_iters: 60, ..PgaConfig::default() };
            let start = OrientationMatrix::random(4, sc.theta_max, &mut stream(4, &[]));
            let first = obj.value(&start).unwrap();
            let tr = pga(&obj, start, &cfg).unwrap();
            let h = tr.objective_history();
            assert!(h.windows(2).all(|w| w[1] >= w[0]));
            assert!(tr.objective >= first);
            for b in tr.orientation.boresights() {
                assert!((b.norm() - 1.0).abs() < 1e-12 && tilt(b) <= sc.theta_max + TILT_TOL);
            }
        }
    }

    #[test]
    fn pga_is_deterministic() {
        let sc = toy_scenario();
        let t = geometry_tables(&sc).unwrap();
        let obj = SumRateObjective { scenario: &sc, tables: &t, receiver: Receiver::Wzf };
        let cfg = PgaConfig { max_iters: 20, ..PgaConfig::default() };
        let a = pga_restarts(&obj, 4, sc.theta_max, 3, 9, &cfg).unwrap();
        let b = pga_restarts(&obj, 4, sc.theta_max, 3, 9, &cfg).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.orientation, b.orientation);
    }

    #[test]
    fn nmse_objective_lowers_error() {
        let sc = toy_scenario();
        let t = geometry_tables(&sc).unwrap();
        let obj = NmseObjective::new(&sc, &t);
        let start = OrientationMatrix::broadside(4, sc.theta_max);
        let before = obj.value(&start).unwrap();
        let cfg = PgaConfig { max_iters: 50, ..PgaConfig::default() };
        let tr = pga(&obj, start, &cfg).unwrap();
        assert!(tr.objective >= before);
    }
}
