//! Orientation-dependent directional gains and the per-user Rician statistics
//! (μ_k, B_k, R_k = B_k B_kᴴ).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{GeometryTables, Scenario, Vec3};
use crate::linalg::{hermitize, CMat, CVec};
use crate::rng::complex_gaussian_vec;

pub const E_Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// Tolerance on ‖f_n‖ = 1 for boresights.
pub const BORESIGHT_NORM_TOL: f64 = 1e-10;
/// Slack on the tilt constraint.
pub const TILT_TOL: f64 = 1e-9;

/// Angle between `v` and the array normal.
pub fn tilt(v: &Vec3) -> f64 {
    (v.z / v.norm()).clamp(-1.0, 1.0).acos()
}

/// Nearest point of the cap to the direction of `v` (`v` must be non-zero).
///
/// Directions inside the cap are normalized and returned. Outside, the result
/// sits on the cap boundary at the azimuth of `v`. When `v` points straight
/// down the azimuth is undefined; that of `previous` is kept, or the x-axis
/// if `previous` has none either.
pub fn cap_project(v: &Vec3, theta_max: f64, previous: &Vec3) -> Vec3 {
    let u = v.normalize();
    if tilt(&u) <= theta_max {
        return u;
    }
    let horizontal = |w: &Vec3| Vec3::new(w.x, w.y, 0.0);
    let mut a = horizontal(&u);
    if a.norm() <= f64::EPSILON {
        a = horizontal(previous);
        if a.norm() <= f64::EPSILON * previous.norm().max(1.0) {
            a = Vec3::x();
        }
    }
    E_Z * theta_max.cos() + a.normalize() * theta_max.sin()
}

/// Boresights of all N elements, each inside the spherical cap of half-angle
/// `theta_max` around e_z.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationMatrix {
    boresights: Vec<Vec3>,
    theta_max: f64,
}

impl OrientationMatrix {
    pub fn new(boresights: Vec<Vec3>, theta_max: f64) -> Result<Self> {
        if !(theta_max > 0.0 && theta_max <= std::f64::consts::FRAC_PI_2 + 1e-15) {
            return Err(Error::InvalidArgument(format!("theta_max must lie in (0, π/2], got {theta_max}")));
        }
        for (n, f) in boresights.iter().enumerate() {
            if (f.norm() - 1.0).abs() > BORESIGHT_NORM_TOL {
                return Err(Error::InvalidArgument(format!("boresight {n} has norm {}", f.norm())));
            }
            if tilt(f) > theta_max + TILT_TOL {
                return Err(Error::InvalidArgument(format!(
                    "boresight {n} tilted {:.6}° beyond the {:.6}° cap",
                    tilt(f).to_degrees(),
                    theta_max.to_degrees()
                )));
            }
        }
        Ok(Self { boresights, theta_max })
    }

    /// Every element facing the array normal.
    pub fn broadside(n: usize, theta_max: f64) -> Self {
        Self { boresights: vec![E_Z; n], theta_max }
    }

    /// Independent draws, uniform in area over each cap.
    pub fn random<R: Rng + ?Sized>(n: usize, theta_max: f64, rng: &mut R) -> Self {
        let cos_min = theta_max.cos();
        let boresights = (0..n)
            .map(|_| {
                let cos_t = cos_min + (1.0 - cos_min) * rng.random::<f64>();
                let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
                let phi = 2.0 * PI * rng.random::<f64>();
                Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
            })
            .collect();
        Self { boresights, theta_max }
    }

    pub fn boresights(&self) -> &[Vec3] {
        &self.boresights
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn len(&self) -> usize {
        self.boresights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boresights.is_empty()
    }

    pub fn into_boresights(self) -> Vec<Vec3> {
        self.boresights
    }
}

/// `[t]₊ᵇ`, the amplitude factor of the cosine pattern (square root of G/G₀).
/// At t = 0 with b = 0 the pattern is taken from the front side, i.e. 1.
pub(crate) fn amplitude_factor(t: f64, b: f64) -> f64 {
    if t > 0.0 {
        if b == 0.0 {
            1.0
        } else {
            t.powf(b)
        }
    } else if t == 0.0 && b == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Element gain G(f, s) = 2(2b+1)·[fᵀs]₊^{2b} for unit `f` and `s`.
pub fn element_gain(f: &Vec3, s: &Vec3, b: f64) -> Result<f64> {
    for (name, v) in [("boresight", f), ("direction", s)] {
        if (v.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("{name} is not a unit vector (norm {})", v.norm())));
        }
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("gain exponent must be ≥ 0, got {b}")));
    }
    let a = amplitude_factor(f.dot(s), b);
    Ok(2.0 * (2.0 * b + 1.0) * a * a)
}

/// Rician statistics for every user under one orientation.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    /// LoS means μ_k (N entries each).
    pub mu: Vec<CVec>,
    /// Scattering factors B_k (N×Q each).
    pub b: Vec<CMat>,
    /// Covariances R_k = B_k B_kᴴ.
    pub r: Vec<CMat>,
}

impl ChannelStatistics {
    pub fn n_users(&self) -> usize {
        self.mu.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.mu.first().map_or(0, |m| m.len())
    }

    /// LoS matrix M = [μ_1, …, μ_K].
    pub fn los_matrix(&self) -> CMat {
        CMat::from_columns(&self.mu)
    }
}

pub(crate) fn phase(distance: f64, wavelength: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * distance / wavelength)
}

/// μ_k, B_k and R_k for a feasible orientation.
pub fn channel_statistics(
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
) -> Result<ChannelStatistics> {
    if orientation.len() != scenario.n_antennas() {
        return Err(Error::InvalidArgument(format!(
            "{} boresights for {} antennas",
            orientation.len(),
            scenario.n_antennas()
        )));
    }
    Ok(statistics_at(scenario, tables, orientation.boresights()))
}

/// Same as [`channel_statistics`] but evaluated at arbitrary boresight
/// vectors, using the analytic extension of the gain off the unit sphere.
/// Finite-difference checks perturb single coordinates through this entry.
pub fn statistics_at(scenario: &Scenario, tables: &GeometryTables, boresights: &[Vec3]) -> ChannelStatistics {
    let n_ant = scenario.n_antennas();
    let n_users = scenario.n_users();
    let n_clusters = scenario.n_clusters();
    let b = scenario.gain_exponent;
    let g0 = scenario.peak_gain();
    let lam = scenario.wavelength;
    let los_scale = (scenario.aperture * g0 / (4.0 * PI)).sqrt();

    let mut mu = vec![CVec::zeros(n_ant); n_users];
    let mut bk = vec![CMat::zeros(n_ant, n_clusters); n_users];
    for (n, f) in boresights.iter().enumerate() {
        for k in 0..n_users {
            let r = tables.user_distance(k, n);
            let amp = amplitude_factor(f.dot(&tables.user_direction(k, n)), b);
            mu[k][n] = phase(r, lam) * (los_scale * amp / r);
        }
        for q in 0..n_clusters {
            let rq = tables.cluster_distance(q, n);
            let amp = amplitude_factor(f.dot(&tables.cluster_direction(q, n)), b);
            if amp == 0.0 {
                continue;
            }
            let base = (scenario.aperture * scenario.cluster_rcs[q] * g0 / (4.0 * PI)).sqrt() * amp / rq;
            for k in 0..n_users {
                let d = tables.cluster_user_distance(q, k);
                bk[k][(n, q)] = phase(rq + d, lam) * (base / d);
            }
        }
    }
    let r = bk.iter().map(|bm| hermitize(&(bm * bm.adjoint()))).collect();
    ChannelStatistics { mu, b: bk, r }
}

/// One draw of H = [h_1, …, h_K] with h_k = μ_k + B_k ϖ_k, ϖ_k ~ CN(0, I_Q).
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: CMat,
}

pub fn sample_channel<R: Rng + ?Sized>(stats: &ChannelStatistics, rng: &mut R) -> ChannelRealization {
    let n_ant = stats.n_antennas();
    let mut h = CMat::zeros(n_ant, stats.n_users());
    for (k, (mu, b)) in stats.mu.iter().zip(&stats.b).enumerate() {
        let mut col = mu.clone();
        if b.ncols() > 0 {
            let w = complex_gaussian_vec(rng, b.ncols());
            col += b * w;
        }
        h.set_column(k, &col);
    }
    ChannelRealization { h }
}
