//! LMMSE channel estimation under orthogonal pilots: observation model,
//! estimator, error / estimate covariances and the active-subspace NMSE.
//!
//! With A_k = a_k R_k + σ² I and G_k = R_k A_k⁻¹ (Hermitian, since R_k and
//! A_k commute):
//!
//! * C_e,k = σ² G_k = R_k (I + (a_k/σ²) R_k)⁻¹
//! * C_ĥ,k = a_k G_k R_k = a_k R_k A_k⁻¹ R_k
//! * ĥ_k = μ_k + √a_k G_k (y_p,k − √a_k μ_k)
//!
//! Everything is evaluated in cluster space: with R_k = B_k B_kᴴ, M_k = B_kᴴB_k
//! and S_k = a_k M_k + σ² I_Q, G_k = B_k S_k⁻¹ B_kᴴ and
//! C_ĥ,k = a_k B_k S_k⁻¹ M_k B_kᴴ. This needs only a Q×Q inverse and avoids
//! the rounding that inverting the N×N matrix A_k puts into small
//! derivatives. Both covariances are formed directly rather than by
//! subtraction so the identity C_e + C_ĥ = R is a genuine check.

use rand::Rng;

use crate::channel::ChannelStatistics;
use crate::error::{Error, Result};
use crate::geometry::Scenario;
use crate::linalg::{c, hermitian_eigen, hermitize, hpd_inverse, outer, re_trace, CMat, CVec};
use crate::rng::complex_gaussian_vec;

/// Eigenvalues below this fraction of the largest are treated as zero when
/// counting the active subspace.
pub const RANK_THRESHOLD: f64 = 1e-10;

/// Estimation statistics of one user.
#[derive(Debug, Clone)]
pub struct UserEstimation {
    /// a_k = τ_p p_k^tr.
    pub pilot_energy: f64,
    /// Error covariance C_e,k.
    pub c_e: CMat,
    /// Estimate covariance C_ĥ,k.
    pub c_hat: CMat,
    /// Σ_h,k = R_k + μ_k μ_kᴴ.
    pub sigma_h: CMat,
    /// Σ_ĥ,k = C_ĥ,k + μ_k μ_kᴴ.
    pub sigma_hhat: CMat,
    /// G_k = R_k A_k⁻¹.
    pub g: CMat,
}

#[derive(Debug, Clone)]
pub struct EstimationStatistics {
    pub users: Vec<UserEstimation>,
}

pub fn estimation_statistics(stats: &ChannelStatistics, scenario: &Scenario) -> Result<EstimationStatistics> {
    if stats.n_users() != scenario.n_users() {
        return Err(Error::InvalidArgument("statistics and scenario disagree on K".into()));
    }
    let n = stats.n_antennas();
    let sigma2 = scenario.noise_power;
    let mut users = Vec::with_capacity(stats.n_users());
    for k in 0..stats.n_users() {
        let a = scenario.pilot_energy(k);
        let r = &stats.r[k];
        let b = &stats.b[k];
        let q = b.ncols();
        let (g, c_hat) = if q == 0 {
            if r.norm() > 0.0 {
                return Err(Error::InvalidArgument(format!("user {k}: nonzero R_k without a factor B_k")));
            }
            (CMat::zeros(n, n), CMat::zeros(n, n))
        } else {
            let m = hermitize(&(b.adjoint() * b));
            let s = &m * c(a) + CMat::identity(q, q) * c(sigma2);
            let bs = b * hpd_inverse(&s, "pilot observation covariance")?;
            (hermitize(&(&bs * b.adjoint())), hermitize(&(&bs * &m * b.adjoint() * c(a))))
        };
        let c_e = &g * c(sigma2);
        let mm = outer(&stats.mu[k], &stats.mu[k]);
        users.push(UserEstimation {
            pilot_energy: a,
            sigma_h: r + &mm,
            sigma_hhat: &c_hat + &mm,
            c_e,
            c_hat,
            g,
        });
    }
    Ok(EstimationStatistics { users })
}

/// Pilot observation of user `k` after correlating with its own pilot:
/// y = √a_k h_k + n, n ~ CN(0, σ² I).
pub fn pilot_observation<R: Rng + ?Sized>(h_k: &CVec, scenario: &Scenario, k: usize, rng: &mut R) -> CVec {
    let a = scenario.pilot_energy(k);
    let mut y = h_k * c(a.sqrt());
    if scenario.noise_power > 0.0 {
        y += complex_gaussian_vec(rng, h_k.len()) * c(scenario.noise_power.sqrt());
    }
    y
}

/// LMMSE (= MMSE) estimate of h_k from its pilot observation.
pub fn lmmse_estimate(stats: &ChannelStatistics, est: &EstimationStatistics, y: &CVec, k: usize) -> CVec {
    let u = &est.users[k];
    let sa = u.pilot_energy.sqrt();
    let innovation = y - &stats.mu[k] * c(sa);
    &stats.mu[k] + (&u.g * innovation) * c(sa)
}

/// Active-subspace NMSE of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserNmse {
    pub nmse: f64,
    /// ι_k, the numerical rank of R_k.
    pub rank: usize,
    /// Non-zero eigenvalues of R_k, descending.
    pub active_eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmseReport {
    pub users: Vec<UserNmse>,
}

impl NmseReport {
    pub fn mean(&self) -> f64 {
        self.users.iter().map(|u| u.nmse).sum::<f64>() / self.users.len() as f64
    }
}

/// Eigenvalues of a covariance above the rank threshold, with their
/// eigenvectors as columns.
pub(crate) fn active_eigenpairs(r: &CMat) -> (Vec<f64>, CMat) {
    let (values, vectors) = hermitian_eigen(r);
    let lmax = values.first().copied().unwrap_or(0.0);
    if !(lmax > 0.0) {
        return (Vec::new(), CMat::zeros(r.nrows(), 0));
    }
    let rank = values.iter().take_while(|&&v| v > RANK_THRESHOLD * lmax).count();
    (values[..rank].to_vec(), vectors.columns(0, rank).into_owned())
}

/// NMSE_k = (1/ι_k) Σ_i 1/(1 + a_k λ_{k,i}/σ²) over the active eigenvalues.
pub fn nmse(stats: &ChannelStatistics, est: &EstimationStatistics, scenario: &Scenario) -> NmseReport {
    let sigma2 = scenario.noise_power;
    let users = stats
        .r
        .iter()
        .zip(&est.users)
        .map(|(r, u)| {
            let (active, _) = active_eigenpairs(r);
            let rank = active.len();
            let nmse = if rank == 0 {
                0.0
            } else {
                active.iter().map(|&l| 1.0 / (1.0 + u.pilot_energy * l / sigma2)).sum::<f64>() / rank as f64
            };
            UserNmse { nmse, rank, active_eigenvalues: active }
        })
        .collect();
    NmseReport { users }
}

/// NMSE through the normalized error covariance E_k = R_k^{†/2} C_e,k R_k^{†/2}:
/// tr(E_k)/ι_k. Independent of the eigenvalue closed form used by [`nmse`].
pub fn nmse_trace_form(stats: &ChannelStatistics, est: &EstimationStatistics) -> Vec<f64> {
    stats
        .r
        .iter()
        .zip(&est.users)
        .map(|(r, u)| {
            let (active, vecs) = active_eigenpairs(r);
            if active.is_empty() {
                return 0.0;
            }
            let inv_sqrt = CMat::from_diagonal(&CVec::from_iterator(
                active.len(),
                active.iter().map(|&l| c(1.0 / l.sqrt())),
            ));
            let half = &vecs * inv_sqrt * vecs.adjoint();
            let e = &half * &u.c_e * &half;
            re_trace(&e) / active.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_statistics, sample_channel, OrientationMatrix};
    use crate::geometry::{geometry_tables, tests::toy_scenario};
    use crate::linalg::{rel_frobenius, ONE};
    use crate::rng::stream;

    /// Statistics with B_k = U Λ^{1/2} over the positive eigenpairs of R_k.
    fn stats_from_r(mu: Vec<CVec>, r: Vec<CMat>) -> ChannelStatistics {
        let b = r
            .iter()
            .map(|m| {
                let (values, vectors) = hermitian_eigen(m);
                let rank = values.iter().take_while(|&&v| v > 0.0).count();
                let scale = CMat::from_diagonal(&CVec::from_iterator(rank, values[..rank].iter().map(|v| c(v.sqrt()))));
                vectors.columns(0, rank) * scale
            })
            .collect();
        ChannelStatistics { mu, b, r }
    }

    fn scalar_scenario(n_users: usize) -> Scenario {
        let mut sc = toy_scenario();
        sc.user_positions.truncate(n_users);
        sc.data_powers.truncate(n_users);
        sc.pilot_powers.truncate(n_users);
        sc
    }

    #[test]
    fn deterministic_channel_is_known_exactly() {
        let sc = scalar_scenario(1);
        let mu = CVec::from_element(4, ONE);
        let st = stats_from_r(vec![mu.clone()], vec![CMat::zeros(4, 4)]);
        let est = estimation_statistics(&st, &sc).unwrap();
        assert_eq!(est.users[0].c_e.norm(), 0.0);
        assert_eq!(est.users[0].c_hat.norm(), 0.0);
        assert!(rel_frobenius(&est.users[0].sigma_hhat, &outer(&mu, &mu)) < 1e-15);
        let y = CVec::from_element(4, c(3.0));
        assert_eq!(lmmse_estimate(&st, &est, &y, 0), mu);
        assert_eq!(nmse(&st, &est, &sc).users[0].nmse, 0.0);
    }

    #[test]
    fn scaled_identity_prior_halves_error() {
        let sc = scalar_scenario(1);
        let a = sc.pilot_energy(0);
        let s2 = sc.noise_power;
        let r = CMat::identity(4, 4) * c(s2 / a);
        let st = stats_from_r(vec![CVec::zeros(4)], vec![r]);
        let est = estimation_statistics(&st, &sc).unwrap();
        let expect = CMat::identity(4, 4) * c(s2 / (2.0 * a));
        assert!(rel_frobenius(&est.users[0].c_e, &expect) < 1e-12);
        let rep = nmse(&st, &est, &sc);
        assert_eq!(rep.users[0].rank, 4);
        assert!((rep.users[0].nmse - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rank_one_prior_at_unit_snr_gives_half() {
        let sc = scalar_scenario(1);
        let a = sc.pilot_energy(0);
        let v = CVec::from_vec(vec![c(1.0), c(0.0), Complex64::new(0.0, 1.0), c(0.0)]) * c(0.5f64.sqrt());
        let r = outer(&v, &v) * c(sc.noise_power / a);
        let st = stats_from_r(vec![CVec::zeros(4)], vec![r]);
        let est = estimation_statistics(&st, &sc).unwrap();
        let rep = nmse(&st, &est, &sc);
        assert_eq!(rep.users[0].rank, 1);
        assert!((rep.users[0].nmse - 0.5).abs() < 1e-12);
        assert!((nmse_trace_form(&st, &est)[0] - 0.5).abs() < 1e-10);
    }

    use num_complex::Complex64;

    #[test]
    fn zero_innovation_returns_mean() {
        let sc = toy_scenario();
        let t = geometry_tables(&sc).unwrap();
        let st = channel_statistics(&sc, &t, &OrientationMatrix::broadside(4, sc.theta_max)).unwrap();
        let est = estimation_statistics(&st, &sc).unwrap();
        for k in 0..2 {
            let y = &st.mu[k] * c(sc.pilot_energy(k).sqrt());
            let h = lmmse_estimate(&st, &est, &y, k);
            assert!((h - &st.mu[k]).norm() <= 1e-15 * st.mu[k].norm());
        }
    }

    #[test]
    fn noiseless_pilots_scale_channel() {
        let mut sc = toy_scenario();
        sc.noise_power = 0.0;
        let h = CVec::from_element(4, Complex64::new(0.3, -0.1));
        let y = pilot_observation(&h, &sc, 1, &mut stream(0, &[]));
        assert_eq!(y, &h * c(sc.pilot_energy(1).sqrt()));
    }

    #[test]
    fn covariances_split_prior_and_increase_with_pilot_power() {
        let sc = toy_scenario();
        let t = geometry_tables(&sc).unwrap();
        let st = channel_statistics(&sc, &t, &OrientationMatrix::broadside(4, sc.theta_max)).unwrap();
        let est = estimation_statistics(&st, &sc).unwrap();
        for (u, r) in est.users.iter().zip(&st.r) {
            assert!(rel_frobenius(&(&u.c_e + &u.c_hat), r) < 1e-10);
        }
        let mut prev = f64::INFINITY;
        for p in [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let mut s2 = sc.clone();
            s2.pilot_powers = vec![p; 2];
            let e2 = estimation_statistics(&st, &s2).unwrap();
            let v = nmse(&st, &e2, &s2).users[0].nmse;
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn sampled_pilots_have_expected_moments() {
        let sc = toy_scenario();
        let t = geometry_tables(&sc).unwrap();
        let st = channel_statistics(&sc, &t, &OrientationMatrix::broadside(4, sc.theta_max)).unwrap();
        let mut rng = stream(5, &[]);
        let n = 100_000;
        let k = 0;
        let a = sc.pilot_energy(k);
        let mut mean = CVec::zeros(4);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let h = sample_channel(&st, &mut rng).h.column(k).into_owned();
            let y = pilot_observation(&h, &sc, k, &mut rng);
            mean += &y;
            ys.push(y);
        }
        mean /= c(n as f64);
        let expect_mean = &st.mu[k] * c(a.sqrt());
        assert!((&mean - &expect_mean).norm() / expect_mean.norm() < 0.02);
        let mut cov = CMat::zeros(4, 4);
        for y in &ys {
            let d = y - &expect_mean;
            cov += outer(&d, &d);
        }
        cov /= c(n as f64);
        let expect_cov = &st.r[k] * c(a) + CMat::identity(4, 4) * c(sc.noise_power);
        assert!(rel_frobenius(&cov, &expect_cov) < 0.05);
    }
}
