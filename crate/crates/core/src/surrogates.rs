//! Closed-form large-timescale rate surrogates.
//!
//! MRC uses the use-and-then-forget bound, which is exact in closed form for
//! Rician channels with LMMSE estimates. wZF uses the first-order statistical
//! Gram surrogate S̄ and its inverse-diagonal SINR p_k / [S̄⁻¹]_kk, checked
//! against the Schur-complement form.

use log::warn;

use crate::channel::{cap_project, channel_statistics, ChannelStatistics, OrientationMatrix, E_Z};
use crate::error::{Error, Result};
use crate::estimation::EstimationStatistics;
use crate::geometry::{GeometryTables, Scenario};
use crate::linalg::{c, hermitian_eigen, hermitize, hpd_inverse, quad_form, re_trace, re_trace_product, remove_index, CMat, CVec};

/// S̄ with a condition number above this is rejected rather than inverted.
pub const MAX_GRAM_CONDITION: f64 = 1e12;
/// Relative agreement required between the two wZF SINR forms.
pub const SCHUR_TOL: f64 = 1e-8;

/// Receive combiner family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Receiver {
    Mrc,
    Wzf,
}

impl Receiver {
    pub fn name(self) -> &'static str {
        match self {
            Receiver::Mrc => "mrc",
            Receiver::Wzf => "wzf",
        }
    }

    /// Surrogate sum rate under this receiver.
    pub fn sum_rate(self, stats: &ChannelStatistics, est: &EstimationStatistics, scenario: &Scenario) -> Result<f64> {
        match self {
            Receiver::Mrc => Ok(mrc_surrogate(stats, est, scenario).sum_rate()),
            Receiver::Wzf => Ok(wzf_surrogate(stats, est, scenario)?.sum_rate()),
        }
    }
}

/// UatF terms of one user under MRC.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcUser {
    /// α_k = tr C_ĥ,k + ‖μ_k‖² (mean effective gain).
    pub alpha: f64,
    /// Θ_{i,k} = tr(Σ_h,i Σ_ĥ,k) for every i; the entry at i = k is unused and set to zero.
    pub theta: Vec<f64>,
    /// Self-interference Φ_k.
    pub phi: f64,
    /// I_k, the UatF denominator.
    pub interference: f64,
    pub sinr: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrcTerms {
    pub users: Vec<MrcUser>,
    pub pre_log: f64,
}

impl MrcTerms {
    pub fn sum_rate(&self) -> f64 {
        self.users.iter().map(|u| u.rate).sum()
    }
}

pub(crate) fn rate(pre_log: f64, sinr: f64) -> f64 {
    pre_log * sinr.ln_1p() / std::f64::consts::LN_2
}

pub fn mrc_surrogate(stats: &ChannelStatistics, est: &EstimationStatistics, scenario: &Scenario) -> MrcTerms {
    let k_users = stats.n_users();
    let sigma2 = scenario.noise_power;
    let eta = scenario.pre_log();
    let users = (0..k_users)
        .map(|k| {
            let u = &est.users[k];
            let mu = &stats.mu[k];
            let alpha = re_trace(&u.c_hat) + mu.norm_squared();
            let theta: Vec<f64> = (0..k_users)
                .map(|i| if i == k { 0.0 } else { re_trace_product(&est.users[i].sigma_h, &u.sigma_hhat) })
                .collect();
            let phi = re_trace_product(&u.c_hat, &u.c_hat)
                + 2.0 * quad_form(mu, &u.c_hat, mu).re
                + re_trace_product(&u.c_e, &u.sigma_hhat);
            let p = scenario.data_powers[k];
            let cross: f64 = theta.iter().zip(&scenario.data_powers).map(|(t, pi)| pi * t).sum();
            let interference = p * phi + cross + sigma2 * alpha;
            let sinr = if alpha == 0.0 { 0.0 } else { p * alpha * alpha / interference };
            MrcUser { alpha, theta, phi, interference, sinr, rate: rate(eta, sinr) }
        })
        .collect();
    MrcTerms { users, pre_log: eta }
}

/// Statistical SINR of one user under wZF.
#[derive(Debug, Clone, PartialEq)]
pub struct WzfUser {
    /// Ψ_k = [S̄⁻¹]_kk.
    pub psi: f64,
    pub sinr: f64,
    /// p_k times the Schur complement of S̄ at k; equals `sinr` up to rounding.
    pub schur_sinr: f64,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct WzfTerms {
    /// Colored effective noise Z = σ² I + Σ_i p_i C_e,i.
    pub z: CMat,
    pub z_inv: CMat,
    /// S̄ = diag(tr(Z⁻¹ C_ĥ,k)) + Mᴴ Z⁻¹ M.
    pub s_bar: CMat,
    pub s_bar_inv: CMat,
    pub users: Vec<WzfUser>,
    pub pre_log: f64,
}

impl WzfTerms {
    pub fn sum_rate(&self) -> f64 {
        self.users.iter().map(|u| u.rate).sum()
    }

    /// Largest relative gap between the two SINR forms.
    pub fn schur_gap(&self) -> f64 {
        self.users
            .iter()
            .map(|u| (u.sinr - u.schur_sinr).abs() / u.sinr.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn colored_noise(est: &EstimationStatistics, scenario: &Scenario) -> CMat {
    let n = est.users.first().map_or(0, |u| u.c_e.nrows());
    let mut z = CMat::identity(n, n) * c(scenario.noise_power);
    for (u, &p) in est.users.iter().zip(&scenario.data_powers) {
        z += &u.c_e * c(p);
    }
    hermitize(&z)
}

/// Users carrying weight in the near-null direction of a Gram matrix.
fn offending_users(gram: &CMat) -> Vec<usize> {
    let (_, vecs) = hermitian_eigen(gram);
    let last = vecs.column(vecs.ncols() - 1);
    let peak = last.iter().map(|z| z.norm()).fold(0.0, f64::max);
    (0..last.len()).filter(|&i| last[i].norm() >= 0.1 * peak).collect()
}

/// Inverts a user-indexed Hermitian Gram matrix, reporting the users
/// responsible if it is singular or ill-conditioned.
pub(crate) fn invert_gram(gram: &CMat, what: &str) -> Result<CMat> {
    let (values, _) = hermitian_eigen(gram);
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if cond > MAX_GRAM_CONDITION {
        return Err(Error::RankDeficient {
            users: offending_users(gram),
            detail: format!("{what} has condition number {cond:.3e}"),
        });
    }
    hpd_inverse(gram, what).map_err(|_| Error::RankDeficient {
        users: offending_users(gram),
        detail: format!("{what} is not positive definite"),
    })
}

pub fn wzf_surrogate(stats: &ChannelStatistics, est: &EstimationStatistics, scenario: &Scenario) -> Result<WzfTerms> {
    let k_users = stats.n_users();
    let n = stats.n_antennas();
    if k_users > n {
        return Err(Error::Precondition(format!("wZF needs K ≤ N, got K = {k_users}, N = {n}")));
    }
    let z = colored_noise(est, scenario);
    let z_inv = hpd_inverse(&z, "colored noise Z")?;
    let m = stats.los_matrix();
    let zm = &z_inv * &m;
    let mut s_bar = m.adjoint() * &zm;
    for k in 0..k_users {
        s_bar[(k, k)] += c(re_trace_product(&z_inv, &est.users[k].c_hat));
    }
    let s_bar = hermitize(&s_bar);
    let s_bar_inv = invert_gram(&s_bar, "statistical Gram matrix S̄")?;
    let eta = scenario.pre_log();
    let users: Vec<WzfUser> = (0..k_users)
        .map(|k| {
            let psi = s_bar_inv[(k, k)].re;
            let p = scenario.data_powers[k];
            let sinr = p / psi;
            WzfUser { psi, sinr, schur_sinr: p * schur_complement(&s_bar, k), rate: rate(eta, sinr) }
        })
        .collect();
    let terms = WzfTerms { z, z_inv, s_bar, s_bar_inv, users, pre_log: eta };
    let gap = terms.schur_gap();
    if gap > SCHUR_TOL {
        warn!("wZF SINR forms disagree by {gap:.3e} (relative)");
    }
    Ok(terms)
}

/// s_kk − s_{k,−k}ᴴ S_{−k,−k}⁻¹ s_{k,−k}.
pub fn schur_complement(s: &CMat, k: usize) -> f64 {
    let skk = s[(k, k)].re;
    if s.nrows() == 1 {
        return skk;
    }
    let rest = remove_index(s, k);
    let col: CVec = s.column(k).into_owned().remove_row(k);
    let solved = match rest.clone().cholesky() {
        Some(ch) => ch.solve(&col),
        None => match rest.lu().solve(&col) {
            Some(x) => x,
            None => return f64::NAN,
        },
    };
    skk - col.dotc(&solved).re
}

/// Closed-form optimum for one user without scattering: each boresight is
/// the cap projection of the direction towards the user.
pub fn single_user_orientation(scenario: &Scenario, tables: &GeometryTables) -> Result<OrientationMatrix> {
    if scenario.n_users() != 1 {
        return Err(Error::Precondition(format!(
            "closed-form orientation needs exactly one user, got {}",
            scenario.n_users()
        )));
    }
    let boresights = (0..scenario.n_antennas())
        .map(|n| cap_project(&tables.user_direction(0, n), scenario.theta_max, &E_Z))
        .collect();
    let f = OrientationMatrix::new(boresights, scenario.theta_max)?;
    let stats = channel_statistics(scenario, tables, &f)?;
    if stats.r[0].iter().any(|z| z.norm() > 0.0) {
        return Err(Error::Precondition(
            "closed-form orientation needs a line-of-sight-only channel, but scattering is visible".into(),
        ));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;
    use crate::estimation::{estimation_statistics, lmmse_estimate, pilot_observation};
    use crate::geometry::{geometry_tables, tests::toy_scenario, Vec3};
    use crate::linalg::rel_frobenius;
    use crate::rng::stream;

    fn toy_stats(seed: u64) -> (Scenario, ChannelStatistics, EstimationStatistics) {
        let sc = toy_scenario();
        let t = geometry_tables(&sc).unwrap();
        let f = OrientationMatrix::random(4, sc.theta_max, &mut stream(seed, &[]));
        let st = channel_statistics(&sc, &t, &f).unwrap();
        let est = estimation_statistics(&st, &sc).unwrap();
        (sc, st, est)
    }

    #[test]
    fn mrc_single_user_without_scattering_is_matched_filter() {
        let mut sc = toy_scenario();
        sc.user_positions.truncate(1);
        sc.data_powers.truncate(1);
        sc.pilot_powers.truncate(1);
        sc.cluster_positions.clear();
        sc.cluster_rcs.clear();
        let t = geometry_tables(&sc).unwrap();
        let st = channel_statistics(&sc, &t, &OrientationMatrix::broadside(4, sc.theta_max)).unwrap();
        let est = estimation_statistics(&st, &sc).unwrap();
        let m = mrc_surrogate(&st, &est, &sc);
        let mu2 = st.mu[0].norm_squared();
        assert!((m.users[0].alpha - mu2).abs() <= 1e-15 * mu2);
        assert_eq!(m.users[0].phi, 0.0);
        let snr = sc.data_powers[0] * mu2 / sc.noise_power;
        assert!((m.users[0].sinr - snr).abs() < 1e-12 * snr);
        let w = wzf_surrogate(&st, &est, &sc).unwrap();
        assert!((w.users[0].sinr - snr).abs() < 1e-10 * snr);
    }

    #[test]
    fn mrc_terms_are_consistent() {
        let (sc, st, est) = toy_stats(1);
        let m = mrc_surrogate(&st, &est, &sc);
        for (k, u) in m.users.iter().enumerate() {
            let cross: f64 = (0..2).filter(|&i| i != k).map(|i| sc.data_powers[i] * u.theta[i]).sum();
            let i_k = sc.data_powers[k] * u.phi + cross + sc.noise_power * u.alpha;
            assert!((u.interference - i_k).abs() <= 1e-14 * i_k);
            assert!(u.alpha > 0.0 && u.phi >= 0.0);
        }
        assert!((m.sum_rate() - m.users.iter().map(|u| u.rate).sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn mrc_matches_monte_carlo_uatf() {
        let (sc, st, est) = toy_stats(2);
        let m = mrc_surrogate(&st, &est, &sc);
        let mut rng = stream(9, &[]);
        let draws = 100_000;
        let kk = st.n_users();
        let mut mean_gain = vec![num_complex::Complex64::new(0.0, 0.0); kk];
        let mut gain_sq = vec![0.0; kk];
        let mut cross = vec![vec![0.0; kk]; kk];
        let mut norm_sq = vec![0.0; kk];
        for _ in 0..draws {
            let h = sample_channel(&st, &mut rng).h;
            for k in 0..kk {
                let hk = h.column(k).into_owned();
                let y = pilot_observation(&hk, &sc, k, &mut rng);
                let v = lmmse_estimate(&st, &est, &y, k);
                let g = v.dotc(&hk);
                mean_gain[k] += g;
                gain_sq[k] += g.norm_sqr();
                norm_sq[k] += v.norm_squared();
                for i in 0..kk {
                    if i != k {
                        cross[k][i] += v.dotc(&h.column(i).into_owned()).norm_sqr();
                    }
                }
            }
        }
        let d = draws as f64;
        for k in 0..kk {
            let mg = mean_gain[k] / d;
            let var = gain_sq[k] / d - mg.norm_sqr();
            let interf: f64 = (0..kk).filter(|&i| i != k).map(|i| sc.data_powers[i] * cross[k][i] / d).sum();
            let denom = sc.data_powers[k] * var + interf + sc.noise_power * norm_sq[k] / d;
            let sinr = sc.data_powers[k] * mg.norm_sqr() / denom;
            let rel = (sinr - m.users[k].sinr).abs() / m.users[k].sinr;
            assert!(rel < 0.03, "user {k}: mc {sinr} vs closed form {}", m.users[k].sinr);
        }
    }

    #[test]
    fn wzf_schur_form_agrees() {
        for seed in 0..20 {
            let (sc, st, est) = toy_stats(seed);
            let w = wzf_surrogate(&st, &est, &sc).unwrap();
            assert!(w.schur_gap() < SCHUR_TOL, "seed {seed}: {}", w.schur_gap());
        }
    }

    #[test]
    fn wzf_perfect_csi_specialization() {
        let (sc, st, mut est) = toy_stats(3);
        for u in &mut est.users {
            u.c_hat = &u.c_hat + &u.c_e;
            u.c_e = CMat::zeros(4, 4);
        }
        let w = wzf_surrogate(&st, &est, &sc).unwrap();
        let s2 = sc.noise_power;
        assert!(rel_frobenius(&w.z, &(CMat::identity(4, 4) * c(s2))) < 1e-15);
        let m = st.los_matrix();
        let mut expect = m.adjoint() * &m / c(s2);
        for k in 0..2 {
            expect[(k, k)] += c(re_trace(&est.users[k].c_hat) / s2);
        }
        assert!(rel_frobenius(&w.s_bar, &expect) < 1e-12);
    }

    #[test]
    fn wzf_rejects_more_users_than_antennas() {
        let (mut sc, st, est) = toy_stats(4);
        sc.antenna_positions.truncate(1);
        let mut st1 = st.clone();
        for k in 0..2 {
            st1.mu[k] = st.mu[k].rows(0, 1).into_owned();
            st1.r[k] = st.r[k].view((0, 0), (1, 1)).into_owned();
        }
        let mut est1 = est.clone();
        for u in &mut est1.users {
            u.c_e = u.c_e.view((0, 0), (1, 1)).into_owned();
            u.c_hat = u.c_hat.view((0, 0), (1, 1)).into_owned();
        }
        assert!(matches!(wzf_surrogate(&st1, &est1, &sc), Err(Error::Precondition(_))));
    }

    #[test]
    fn collinear_users_are_named() {
        let (sc, mut st, mut est) = toy_stats(5);
        st.mu[1] = st.mu[0].clone();
        for u in &mut est.users {
            u.c_hat = CMat::zeros(4, 4);
        }
        match wzf_surrogate(&st, &est, &sc) {
            Err(Error::RankDeficient { users, .. }) => assert_eq!(users, vec![0, 1]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn white_noise_bounds_colored_noise() {
        for seed in 0..10 {
            let (sc, st, est) = toy_stats(seed + 100);
            let w = wzf_surrogate(&st, &est, &sc).unwrap();
            let z_inv = CMat::identity(4, 4) / c(sc.noise_power);
            let m = st.los_matrix();
            let mut s = m.adjoint() * &z_inv * &m;
            for k in 0..2 {
                s[(k, k)] += c(re_trace_product(&z_inv, &est.users[k].c_hat));
            }
            let white = hpd_inverse(&s, "white").unwrap();
            for k in 0..2 {
                assert!(sc.data_powers[k] / white[(k, k)].re >= w.users[k].sinr * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn single_user_orientation_projects_directions() {
        let mut sc = toy_scenario();
        sc.user_positions = vec![Vec3::new(0.0, 0.0, 120.0)];
        sc.data_powers.truncate(1);
        sc.pilot_powers.truncate(1);
        sc.cluster_positions.clear();
        sc.cluster_rcs.clear();
        let t = geometry_tables(&sc).unwrap();
        let f = single_user_orientation(&sc, &t).unwrap();
        for (n, fn_) in f.boresights().iter().enumerate() {
            assert!((fn_ - t.user_direction(0, n)).norm() < 1e-15);
        }
        sc.user_positions = vec![Vec3::new(500.0, 0.0, 500.0 * 10f64.to_radians().tan())];
        let t = geometry_tables(&sc).unwrap();
        let f = single_user_orientation(&sc, &t).unwrap();
        for b in f.boresights() {
            assert!((crate::channel::tilt(b) - sc.theta_max).abs() < 1e-12);
        }
        let two = toy_scenario();
        let t2 = geometry_tables(&two).unwrap();
        assert!(matches!(single_user_orientation(&two, &t2), Err(Error::Precondition(_))));
    }
}
