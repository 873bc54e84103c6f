//! Array layout and the static distance / direction tables between antennas,
//! users and scatterer clusters.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on ‖s‖ = 1 for direction vectors produced here.
pub const UNIT_TOL: f64 = 1e-12;

/// Static geometry plus the physical constants of one deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Element positions on the z = 0 plane.
    pub antenna_positions: Vec<Vec3>,
    pub user_positions: Vec<Vec3>,
    pub cluster_positions: Vec<Vec3>,
    /// Radar cross sections σ_q in m², one per cluster.
    pub cluster_rcs: Vec<f64>,
    /// Carrier wavelength in m.
    pub wavelength: f64,
    /// Physical element aperture ϱ in m² (the −30 dB reference loss is ϱ/4π = 1e-3).
    pub aperture: f64,
    /// Directivity exponent b of the cosine pattern.
    pub gain_exponent: f64,
    /// Maximum boresight tilt from the array normal, radians.
    pub theta_max: f64,
    /// Receiver noise power σ² in W.
    pub noise_power: f64,
    pub data_powers: Vec<f64>,
    pub pilot_powers: Vec<f64>,
    /// Pilot length τ_p in symbols.
    pub pilot_length: usize,
    /// Coherence block length T_c in symbols.
    pub coherence_length: usize,
}

impl Scenario {
    pub fn n_antennas(&self) -> usize {
        self.antenna_positions.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_positions.len()
    }

    /// Pre-log factor η = 1 − τ_p / T_c.
    pub fn pre_log(&self) -> f64 {
        1.0 - self.pilot_length as f64 / self.coherence_length as f64
    }

    /// Effective pilot energy a_k = τ_p · p_k^tr.
    pub fn pilot_energy(&self, k: usize) -> f64 {
        self.pilot_length as f64 * self.pilot_powers[k]
    }

    /// Peak element gain G₀ = 2(2b + 1).
    pub fn peak_gain(&self) -> f64 {
        2.0 * (2.0 * self.gain_exponent + 1.0)
    }

    /// Checks every structural invariant. Clusters may be absent (Q = 0),
    /// which models a pure line-of-sight deployment.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_antennas();
        let k = self.n_users();
        let q = self.n_clusters();
        if n == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("need N ≥ 1 and K ≥ 1, got N = {n}, K = {k}")));
        }
        if self.cluster_rcs.len() != q {
            return Err(Error::InvalidArgument(format!(
                "{} cluster cross sections for {q} clusters",
                self.cluster_rcs.len()
            )));
        }
        if self.data_powers.len() != k || self.pilot_powers.len() != k {
            return Err(Error::InvalidArgument("one data and one pilot power per user required".into()));
        }
        if self.pilot_length < k {
            return Err(Error::InvalidArgument(format!(
                "pilot length {} shorter than user count {k}",
                self.pilot_length
            )));
        }
        if self.coherence_length <= self.pilot_length {
            return Err(Error::InvalidArgument(format!(
                "coherence length {} must exceed pilot length {}",
                self.coherence_length, self.pilot_length
            )));
        }
        let positive = [
            ("wavelength", self.wavelength),
            ("aperture", self.aperture),
            ("noise power", self.noise_power),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gain_exponent.is_finite() && self.gain_exponent >= 0.0) {
            return Err(Error::InvalidArgument(format!("gain exponent must be ≥ 0, got {}", self.gain_exponent)));
        }
        if !(self.theta_max > 0.0 && self.theta_max <= std::f64::consts::FRAC_PI_2 + 1e-15) {
            return Err(Error::InvalidArgument(format!("theta_max must lie in (0, π/2], got {}", self.theta_max)));
        }
        if self.cluster_rcs.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("cluster cross sections must be positive".into()));
        }
        if self.data_powers.iter().chain(&self.pilot_powers).any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument("powers must be finite and non-negative".into()));
        }
        if let Some(w) = self.antenna_positions.iter().find(|w| w.z != 0.0) {
            return Err(Error::InvalidArgument(format!("antenna off the array plane: z = {}", w.z)));
        }
        Ok(())
    }
}

/// Uniform planar array with half-wavelength spacing, centred on the origin.
///
/// Elements are indexed row-major: element `r * n_col + c` sits at
/// x = (c − (n_col − 1)/2)·λ/2, y = (r − (n_row − 1)/2)·λ/2.
pub fn build_upa(n_row: usize, n_col: usize, wavelength: f64) -> Result<Vec<Vec3>> {
    if n_row == 0 || n_col == 0 {
        return Err(Error::InvalidArgument(format!("UPA dimensions must be ≥ 1, got {n_row}×{n_col}")));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::InvalidArgument(format!("wavelength must be positive, got {wavelength}")));
    }
    let d = wavelength / 2.0;
    let x0 = (n_col as f64 - 1.0) / 2.0;
    let y0 = (n_row as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n_row * n_col);
    for r in 0..n_row {
        for c in 0..n_col {
            out.push(Vec3::new((c as f64 - x0) * d, (r as f64 - y0) * d, 0.0));
        }
    }
    Ok(out)
}

/// Distance and unit direction from `from` to `to`.
pub fn distance_direction(from: &Vec3, to: &Vec3) -> Result<(f64, Vec3)> {
    let delta = to - from;
    let r = delta.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::DegenerateGeometry(format!("coincident points at {from:?}")));
    }
    Ok((r, delta / r))
}

/// Per-pair distances and directions, indexed antenna-major.
#[derive(Debug, Clone)]
pub struct GeometryTables {
    n_antennas: usize,
    n_users: usize,
    n_clusters: usize,
    user_dist: Vec<f64>,
    user_dir: Vec<Vec3>,
    cluster_dist: Vec<f64>,
    cluster_dir: Vec<Vec3>,
    cluster_user_dist: Vec<f64>,
}

impl GeometryTables {
    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// r_{k,n}
    pub fn user_distance(&self, k: usize, n: usize) -> f64 {
        self.user_dist[n * self.n_users + k]
    }

    /// s_{k,n}, pointing from antenna n to user k.
    pub fn user_direction(&self, k: usize, n: usize) -> Vec3 {
        self.user_dir[n * self.n_users + k]
    }

    /// r_{q,n}
    pub fn cluster_distance(&self, q: usize, n: usize) -> f64 {
        self.cluster_dist[n * self.n_clusters + q]
    }

    /// s_{q,n}, pointing from antenna n to cluster q.
    pub fn cluster_direction(&self, q: usize, n: usize) -> Vec3 {
        self.cluster_dir[n * self.n_clusters + q]
    }

    /// d_{q,k}
    pub fn cluster_user_distance(&self, q: usize, k: usize) -> f64 {
        self.cluster_user_dist[q * self.n_users + k]
    }
}

pub fn geometry_tables(scenario: &Scenario) -> Result<GeometryTables> {
    scenario.validate()?;
    let n_ant = scenario.n_antennas();
    let n_users = scenario.n_users();
    let n_clusters = scenario.n_clusters();
    let mut user_dist = Vec::with_capacity(n_ant * n_users);
    let mut user_dir = Vec::with_capacity(n_ant * n_users);
    let mut cluster_dist = Vec::with_capacity(n_ant * n_clusters);
    let mut cluster_dir = Vec::with_capacity(n_ant * n_clusters);
    for (n, w) in scenario.antenna_positions.iter().enumerate() {
        for (k, u) in scenario.user_positions.iter().enumerate() {
            let (r, s) = distance_direction(w, u)
                .map_err(|_| Error::DegenerateGeometry(format!("user {k} coincides with antenna {n}")))?;
            user_dist.push(r);
            user_dir.push(s);
        }
        for (q, cq) in scenario.cluster_positions.iter().enumerate() {
            let (r, s) = distance_direction(w, cq)
                .map_err(|_| Error::DegenerateGeometry(format!("cluster {q} coincides with antenna {n}")))?;
            cluster_dist.push(r);
            cluster_dir.push(s);
        }
    }
    let mut cluster_user_dist = Vec::with_capacity(n_clusters * n_users);
    for (q, cq) in scenario.cluster_positions.iter().enumerate() {
        for (k, u) in scenario.user_positions.iter().enumerate() {
            let d = (u - cq).norm();
            if !(d > 0.0) {
                return Err(Error::DegenerateGeometry(format!("user {k} coincides with cluster {q}")));
            }
            cluster_user_dist.push(d);
        }
    }
    Ok(GeometryTables {
        n_antennas: n_ant,
        n_users,
        n_clusters,
        user_dist,
        user_dir,
        cluster_dist,
        cluster_dir,
        cluster_user_dist,
    })
}
