//! Orientation design for uplink multi-user MIMO with rotatable directional
//! antenna elements.
//!
//! Each element's boresight is a unit vector confined to a spherical cap
//! around the array normal. The crate computes the second-order channel
//! statistics induced by a set of boresights, LMMSE channel estimation,
//! closed-form rate surrogates for maximum-ratio (MRC) and weighted
//! zero-forcing (wZF) combining, their gradients with respect to every
//! boresight, and a projected gradient ascent that maximizes them. A Monte
//! Carlo harness measures the ergodic rates the surrogates stand in for.
//!
//! ```
//! use ra_orient::experiments::{generate_geometry, ScenarioConfig};
//! use ra_orient::geometry::geometry_tables;
//! use ra_orient::optimizer::{pga, PgaConfig, SumRateObjective};
//! use ra_orient::surrogates::Receiver;
//! use ra_orient::OrientationMatrix;
//!
//! let config = ScenarioConfig::default();
//! let scenario = generate_geometry(&config, 7, 0)?;
//! let tables = geometry_tables(&scenario)?;
//! let objective = SumRateObjective { scenario: &scenario, tables: &tables, receiver: Receiver::Wzf };
//! let start = OrientationMatrix::broadside(scenario.n_antennas(), scenario.theta_max);
//! let cfg = PgaConfig { max_iters: 50, ..PgaConfig::default() };
//! let trace = pga(&objective, start, &cfg)?;
//! assert!(trace.objective >= trace.iterations[0].objective);
//! # Ok::<(), ra_orient::Error>(())
//! ```

// `!(x > 0.0)` guards reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod geometry;
pub mod gradients;
pub mod linalg;
pub mod optimizer;
pub mod rng;
pub mod simulation;
pub mod surrogates;

pub use channel::{ChannelStatistics, OrientationMatrix};
pub use error::{Error, Result};
pub use estimation::EstimationStatistics;
pub use geometry::{GeometryTables, Scenario, Vec3};
pub use surrogates::Receiver;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/scenario.md")]
    pub mod scenario {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    pub mod statistics {}
    #[doc = include_str!("../../../book/src/surrogates.md")]
    pub mod surrogates {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    pub mod gradients {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    pub mod optimization {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
