//! Analytic derivatives of the channel and estimation statistics, the two
//! sum-rate surrogates and the mean NMSE with respect to every boresight
//! coordinate, plus a central-difference verifier.
//!
//! Perturbing [f_n]_m only touches row n of M and of every B_k, so
//! ∂R_k = e_n xᴴ + x e_nᴴ with x = B_k conj(∂b) and every estimation
//! derivative is a short sum of outer products. Derivatives on the clipping
//! set fᵀs ≤ 0 are taken as zero.

use num_complex::Complex64;

use crate::channel::{ChannelStatistics, OrientationMatrix};
use crate::estimation::{active_eigenpairs, EstimationStatistics};
use crate::error::Result;
use crate::geometry::{GeometryTables, Scenario, Vec3};
use crate::linalg::{c, outer, re_trace_product, CMat, CVec, ZERO};
use crate::surrogates::{mrc_surrogate, wzf_surrogate, MrcTerms, WzfTerms};

/// Derivatives of every statistic with respect to [f_n]_m.
#[derive(Debug, Clone)]
pub struct StatDerivatives {
    pub antenna: usize,
    pub axis: usize,
    /// Entry n of ∂μ_k for each user; all other entries are zero.
    pub d_mu: Vec<Complex64>,
    /// Row n of ∂B_k for each user (Q entries); other rows are zero.
    pub d_b: Vec<CVec>,
    pub d_r: Vec<CMat>,
    pub d_c_hat: Vec<CMat>,
    pub d_c_e: Vec<CMat>,
    pub d_sigma_h: Vec<CMat>,
    pub d_sigma_hhat: Vec<CMat>,
}

impl StatDerivatives {
    /// ∂μ_k as a full N-vector.
    pub fn d_mu_vector(&self, k: usize, n_antennas: usize) -> CVec {
        let mut v = CVec::zeros(n_antennas);
        v[self.antenna] = self.d_mu[k];
        v
    }
}

/// Which statistics move with the orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Full,
    /// C_e and C_ĥ held fixed; only μ varies.
    FrozenEstimation,
}

/// ∂ log [t]₊ᵇ / ∂f_m = b s_m / t, and zero on the clipped side.
fn log_slope(t: f64, b: f64, s_m: f64) -> f64 {
    if t > 0.0 && b != 0.0 {
        b * s_m / t
    } else {
        0.0
    }
}

fn mu_derivative(stats: &ChannelStatistics, scenario: &Scenario, tables: &GeometryTables, f: &Vec3, k: usize, n: usize, m: usize) -> Complex64 {
    let s = tables.user_direction(k, n);
    stats.mu[k][n] * log_slope(f.dot(&s), scenario.gain_exponent, s[m])
}

/// Row n of ∂B_k (identical slope for every user, cluster-dependent).
fn b_row_derivative(stats: &ChannelStatistics, scenario: &Scenario, tables: &GeometryTables, f: &Vec3, k: usize, n: usize, m: usize) -> CVec {
    let bk = &stats.b[k];
    CVec::from_iterator(
        bk.ncols(),
        (0..bk.ncols()).map(|q| {
            let s = tables.cluster_direction(q, n);
            bk[(n, q)] * log_slope(f.dot(&s), scenario.gain_exponent, s[m])
        }),
    )
}

/// `e_n uᴴ + u e_nᴴ` added into `out`, scaled by `w`.
fn add_sym_unit(out: &mut CMat, n: usize, u: &CVec, w: f64) {
    for j in 0..out.ncols() {
        out[(n, j)] += u[j].conj() * w;
    }
    for i in 0..out.nrows() {
        out[(i, n)] += u[i] * w;
    }
}

/// `u vᴴ + v uᴴ` added into `out`, scaled by `w`.
fn add_sym_outer(out: &mut CMat, u: &CVec, v: &CVec, w: f64) {
    let n = out.nrows();
    for j in 0..n {
        let uj = u[j].conj() * w;
        let vj = v[j].conj() * w;
        for i in 0..n {
            out[(i, j)] += v[i] * uj + u[i] * vj;
        }
    }
}

struct UserDerivative {
    d_mu: Complex64,
    d_b: CVec,
    d_r: CMat,
    d_c_hat: CMat,
    d_c_e: CMat,
}

fn user_derivative(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    tables: &GeometryTables,
    f: &Vec3,
    k: usize,
    n: usize,
    m: usize,
    mode: Mode,
) -> UserDerivative {
    let n_ant = stats.n_antennas();
    let d_mu = mu_derivative(stats, scenario, tables, f, k, n, m);
    let d_b = b_row_derivative(stats, scenario, tables, f, k, n, m);
    let mut d_r = CMat::zeros(n_ant, n_ant);
    let mut d_c_hat = CMat::zeros(n_ant, n_ant);
    if d_b.iter().any(|z| *z != ZERO) {
        let x = &stats.b[k] * d_b.map(|z| z.conj());
        add_sym_unit(&mut d_r, n, &x, 1.0);
        if mode == Mode::Full {
            let u = &est.users[k];
            let a = u.pilot_energy;
            let g_n: CVec = u.g.column(n).into_owned();
            let y = &u.g * &x;
            add_sym_unit(&mut d_c_hat, n, &y, a);
            add_sym_outer(&mut d_c_hat, &x, &g_n, a);
            add_sym_outer(&mut d_c_hat, &g_n, &y, -a * a);
        }
    }
    let d_c_e = match mode {
        Mode::Full => &d_r - &d_c_hat,
        Mode::FrozenEstimation => CMat::zeros(n_ant, n_ant),
    };
    if mode == Mode::FrozenEstimation {
        d_r.fill(ZERO);
    }
    UserDerivative { d_mu, d_b, d_r, d_c_hat, d_c_e }
}

/// `∂Σ = ∂C + e_n ∂μ_n μᴴ + μ ∂μ_n* e_nᵀ`.
fn second_moment_derivative(d_cov: &CMat, mu: &CVec, d_mu: Complex64, n: usize) -> CMat {
    let mut d = d_cov.clone();
    if d_mu != ZERO {
        let u = mu * d_mu.conj();
        add_sym_unit(&mut d, n, &u, 1.0);
    }
    d
}

/// All statistic derivatives with respect to the m-th coordinate of f_n.
pub fn stat_derivatives(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
    n: usize,
    m: usize,
) -> StatDerivatives {
    derivatives_at(stats, est, scenario, tables, orientation.boresights(), n, m, Mode::Full)
}

#[allow(clippy::too_many_arguments)]
fn derivatives_at(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    tables: &GeometryTables,
    boresights: &[Vec3],
    n: usize,
    m: usize,
    mode: Mode,
) -> StatDerivatives {
    let f = &boresights[n];
    let k_users = stats.n_users();
    let mut out = StatDerivatives {
        antenna: n,
        axis: m,
        d_mu: Vec::with_capacity(k_users),
        d_b: Vec::with_capacity(k_users),
        d_r: Vec::with_capacity(k_users),
        d_c_hat: Vec::with_capacity(k_users),
        d_c_e: Vec::with_capacity(k_users),
        d_sigma_h: Vec::with_capacity(k_users),
        d_sigma_hhat: Vec::with_capacity(k_users),
    };
    for k in 0..k_users {
        let d = user_derivative(stats, est, scenario, tables, f, k, n, m, mode);
        out.d_sigma_h.push(second_moment_derivative(&d.d_r, &stats.mu[k], d.d_mu, n));
        out.d_sigma_hhat.push(second_moment_derivative(&d.d_c_hat, &stats.mu[k], d.d_mu, n));
        out.d_mu.push(d.d_mu);
        out.d_b.push(d.d_b);
        out.d_r.push(d.d_r);
        out.d_c_hat.push(d.d_c_hat);
        out.d_c_e.push(d.d_c_e);
    }
    out
}

/// Gradient of a sum rate with respect to every boresight, with the
/// contribution of each user's rate kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct RateGradient {
    pub per_antenna: Vec<Vec3>,
    /// `per_user[k][n]` is the gradient of user k's rate with respect to f_n.
    pub per_user: Vec<Vec<Vec3>>,
}

impl RateGradient {
    fn zeros(n_users: usize, n_antennas: usize) -> Self {
        Self { per_antenna: vec![Vec3::zeros(); n_antennas], per_user: vec![vec![Vec3::zeros(); n_antennas]; n_users] }
    }

    fn add(&mut self, k: usize, n: usize, m: usize, v: f64) {
        self.per_user[k][n][m] += v;
        self.per_antenna[n][m] += v;
    }
}

fn rate_slope(pre_log: f64, sinr: f64) -> f64 {
    pre_log / ((1.0 + sinr) * std::f64::consts::LN_2)
}

/// Gradient of the MRC sum-rate surrogate.
pub fn mrc_gradient(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
) -> (MrcTerms, RateGradient) {
    let terms = mrc_surrogate(stats, est, scenario);
    let k_users = stats.n_users();
    let n_ant = stats.n_antennas();
    let sigma2 = scenario.noise_power;
    let mut grad = RateGradient::zeros(k_users, n_ant);
    let c_hat_mu: Vec<CVec> = (0..k_users).map(|k| &est.users[k].c_hat * &stats.mu[k]).collect();
    for n in 0..n_ant {
        for m in 0..3 {
            let d = derivatives_at(stats, est, scenario, tables, orientation.boresights(), n, m, Mode::Full);
            for k in 0..k_users {
                let u = &est.users[k];
                let t = &terms.users[k];
                let mu = &stats.mu[k];
                let d_mu = d.d_mu[k];
                let d_alpha = 2.0 * (mu[n].conj() * d_mu).re + d.d_c_hat[k].diagonal().iter().map(|z| z.re).sum::<f64>();
                let d_phi = 2.0 * re_trace_product(&u.c_hat, &d.d_c_hat[k])
                    + 2.0 * mu.dotc(&(&d.d_c_hat[k] * mu)).re
                    + 4.0 * (d_mu.conj() * c_hat_mu[k][n]).re
                    + re_trace_product(&d.d_c_e[k], &u.sigma_hhat)
                    + re_trace_product(&u.c_e, &d.d_sigma_hhat[k]);
                let mut d_cross = 0.0;
                for i in (0..k_users).filter(|&i| i != k) {
                    let d_theta = re_trace_product(&d.d_sigma_h[i], &u.sigma_hhat)
                        + re_trace_product(&est.users[i].sigma_h, &d.d_sigma_hhat[k]);
                    d_cross += scenario.data_powers[i] * d_theta;
                }
                let p = scenario.data_powers[k];
                let d_i = p * d_phi + d_cross + sigma2 * d_alpha;
                let (alpha, big_i) = (t.alpha, t.interference);
                if alpha == 0.0 {
                    continue;
                }
                let d_sinr = p * (2.0 * alpha * big_i * d_alpha - alpha * alpha * d_i) / (big_i * big_i);
                grad.add(k, n, m, rate_slope(terms.pre_log, t.sinr) * d_sinr);
            }
        }
    }
    (terms, grad)
}

/// Gradient of the wZF sum-rate surrogate.
pub fn wzf_gradient(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
) -> Result<(WzfTerms, RateGradient)> {
    wzf_gradient_mode(stats, est, scenario, tables, orientation.boresights(), Mode::Full)
}

/// wZF gradient with the estimation covariances treated as constants, so
/// only the LoS matrix depends on the orientation. Matches finite
/// differences of `wzf_surrogate(statistics(F), est_fixed, scenario)`.
pub fn wzf_gradient_frozen(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
) -> Result<(WzfTerms, RateGradient)> {
    wzf_gradient_mode(stats, est, scenario, tables, orientation.boresights(), Mode::FrozenEstimation)
}

fn wzf_gradient_mode(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    tables: &GeometryTables,
    boresights: &[Vec3],
    mode: Mode,
) -> Result<(WzfTerms, RateGradient)> {
    let terms = wzf_surrogate(stats, est, scenario)?;
    let k_users = stats.n_users();
    let n_ant = stats.n_antennas();
    let m_los = stats.los_matrix();
    let zm = &terms.z_inv * &m_los;
    let s_inv = &terms.s_bar_inv;
    let mut grad = RateGradient::zeros(k_users, n_ant);
    for n in 0..n_ant {
        for m in 0..3 {
            let d = derivatives_at(stats, est, scenario, tables, boresights, n, m, mode);
            let mut d_s = CMat::zeros(k_users, k_users);
            if mode == Mode::Full {
                let mut d_z = CMat::zeros(n_ant, n_ant);
                for (dce, &p) in d.d_c_e.iter().zip(&scenario.data_powers) {
                    d_z += dce * c(p);
                }
                let d_z_inv = -(&terms.z_inv * d_z * &terms.z_inv);
                for k in 0..k_users {
                    let chi = re_trace_product(&d_z_inv, &est.users[k].c_hat)
                        + re_trace_product(&terms.z_inv, &d.d_c_hat[k]);
                    d_s[(k, k)] += c(chi);
                }
                d_s += m_los.adjoint() * d_z_inv * &m_los;
            }
            let dm_row = CVec::from_vec(d.d_mu.clone());
            if dm_row.iter().any(|z| *z != ZERO) {
                let zm_row: CVec = zm.row(n).transpose();
                // dMᴴ Z⁻¹M + (dMᴴ Z⁻¹M)ᴴ, with dM nonzero only in row n.
                let left = outer(&dm_row.map(|z| z.conj()), &zm_row.map(|z| z.conj()));
                d_s += &left + left.adjoint();
            }
            let core = s_inv * d_s * s_inv;
            for k in 0..k_users {
                let u = &terms.users[k];
                let d_sinr = scenario.data_powers[k] / (u.psi * u.psi) * core[(k, k)].re;
                grad.add(k, n, m, rate_slope(terms.pre_log, u.sinr) * d_sinr);
            }
        }
    }
    Ok((terms, grad))
}

/// Mean active-subspace NMSE, (1/K) Σ_k NMSE_k, and its gradient with
/// respect to every boresight. Eigenvectors of each R_k are held fixed
/// (first-order perturbation of the eigenvalues), and so is the rank.
pub fn nmse_gradient(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
) -> (f64, Vec<usize>, Vec<Vec3>) {
    let k_users = stats.n_users();
    let n_ant = stats.n_antennas();
    let sigma2 = scenario.noise_power;
    let mut value = 0.0;
    let mut ranks = Vec::with_capacity(k_users);
    // W_k = (1/ι_k) U diag(−c/(1+cλ)²) Uᴴ so that ∂NMSE_k = tr(W_k ∂R_k).
    let mut weights = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let (lams, vecs) = active_eigenpairs(&stats.r[k]);
        let rank = lams.len();
        ranks.push(rank);
        if rank == 0 {
            weights.push(None);
            continue;
        }
        let cc = est.users[k].pilot_energy / sigma2;
        value += lams.iter().map(|&l| 1.0 / (1.0 + cc * l)).sum::<f64>() / rank as f64;
        let diag = CVec::from_iterator(rank, lams.iter().map(|&l| c(-cc / ((1.0 + cc * l).powi(2) * rank as f64))));
        weights.push(Some(&vecs * CMat::from_diagonal(&diag) * vecs.adjoint()));
    }
    let mut grad = vec![Vec3::zeros(); n_ant];
    for (n, g) in grad.iter_mut().enumerate() {
        let f = &orientation.boresights()[n];
        for m in 0..3 {
            let mut acc = 0.0;
            for k in 0..k_users {
                let Some(w) = &weights[k] else { continue };
                let d_b = b_row_derivative(stats, scenario, tables, f, k, n, m);
                if d_b.iter().all(|z| *z == ZERO) {
                    continue;
                }
                let x = &stats.b[k] * d_b.map(|z| z.conj());
                // tr(W (e_n xᴴ + x e_nᴴ)) = 2 Re(xᴴ W e_n).
                acc += 2.0 * x.dotc(&w.column(n).into_owned()).re;
            }
            g[m] = acc / k_users as f64;
        }
    }
    (value / k_users as f64, ranks, grad)
}

/// Central difference of `objective` along coordinate m of boresight n.
/// The perturbed boresights leave the unit sphere; the statistics are
/// evaluated through their analytic extension.
pub fn central_difference<F: FnMut(&[Vec3]) -> f64>(mut objective: F, boresights: &[Vec3], n: usize, m: usize, step: f64) -> f64 {
    let mut plus = boresights.to_vec();
    plus[n][m] += step;
    let mut minus = boresights.to_vec();
    minus[n][m] -= step;
    (objective(&plus) - objective(&minus)) / (2.0 * step)
}

/// Steps swept by the gradient checks.
pub const FD_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];

/// Relative error of `analytic` against central differences of `objective`
/// at each step in [`FD_STEPS`]; returns the smallest.
pub fn min_fd_error<F: FnMut(&[Vec3]) -> f64>(mut objective: F, boresights: &[Vec3], n: usize, m: usize, analytic: f64) -> f64 {
    FD_STEPS
        .iter()
        .map(|&h| {
            let fd = central_difference(&mut objective, boresights, n, m, h);
            (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_statistics, statistics_at};
    use crate::estimation::estimation_statistics;
    use crate::geometry::{geometry_tables, tests::toy_scenario};
    use crate::linalg::rel_frobenius;
    use crate::rng::stream;

    fn setup(seed: u64) -> (Scenario, GeometryTables, OrientationMatrix, ChannelStatistics, EstimationStatistics) {
        let sc = toy_scenario();
        let t = geometry_tables(&sc).unwrap();
        let f = OrientationMatrix::random(4, sc.theta_max, &mut stream(seed, &[]));
        let st = channel_statistics(&sc, &t, &f).unwrap();
        let est = estimation_statistics(&st, &sc).unwrap();
        (sc, t, f, st, est)
    }

    fn is_hermitian(m: &CMat) -> bool {
        (m - m.adjoint()).norm() <= 1e-12 * m.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn derivative_structure() {
        let (sc, t, f, st, est) = setup(1);
        for n in 0..4 {
            for m in 0..3 {
                let d = stat_derivatives(&st, &est, &sc, &t, &f, n, m);
                for k in 0..2 {
                    assert!(rel_frobenius(&(&d.d_c_hat[k] + &d.d_c_e[k]), &d.d_r[k]) < 1e-9);
                    for mat in [&d.d_r[k], &d.d_c_hat[k], &d.d_c_e[k], &d.d_sigma_h[k], &d.d_sigma_hhat[k]] {
                        assert!(is_hermitian(mat));
                    }
                    for i in 0..4 {
                        for j in 0..4 {
                            if i != n && j != n {
                                assert_eq!(d.d_r[k][(i, j)], ZERO);
                            }
                        }
                    }
                    let v = d.d_mu_vector(k, 4);
                    assert!((0..4).filter(|&i| i != n).all(|i| v[i] == ZERO));
                }
            }
        }
    }

    #[test]
    fn statistic_derivatives_match_finite_differences() {
        let (sc, t, f, st, est) = setup(2);
        for n in 0..4 {
            for m in 0..3 {
                let d = stat_derivatives(&st, &est, &sc, &t, &f, n, m);
                let h = 1e-6;
                let mut plus = f.boresights().to_vec();
                plus[n][m] += h;
                let mut minus = f.boresights().to_vec();
                minus[n][m] -= h;
                let sp = statistics_at(&sc, &t, &plus);
                let sm = statistics_at(&sc, &t, &minus);
                let ep = estimation_statistics(&sp, &sc).unwrap();
                let em = estimation_statistics(&sm, &sc).unwrap();
                let fd = |a: &CMat, b: &CMat| (a - b) / c(2.0 * h);
                for k in 0..2 {
                    let pairs = [
                        (&d.d_r[k], fd(&sp.r[k], &sm.r[k])),
                        (&d.d_c_hat[k], fd(&ep.users[k].c_hat, &em.users[k].c_hat)),
                        (&d.d_c_e[k], fd(&ep.users[k].c_e, &em.users[k].c_e)),
                        (&d.d_sigma_h[k], fd(&ep.users[k].sigma_h, &em.users[k].sigma_h)),
                        (&d.d_sigma_hhat[k], fd(&ep.users[k].sigma_hhat, &em.users[k].sigma_hhat)),
                    ];
                    for (i, (an, num)) in pairs.iter().enumerate() {
                        if num.norm() > 0.0 || an.norm() > 0.0 {
                            assert!(rel_frobenius(an, num) < 1e-5, "n={n} m={m} k={k} #{i}: {}", rel_frobenius(an, num));
                        }
                    }
                    let dmu_fd = (sp.mu[k][n] - sm.mu[k][n]) / (2.0 * h);
                    assert!((d.d_mu[k] - dmu_fd).norm() <= 1e-5 * dmu_fd.norm().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn clipped_element_has_zero_derivatives() {
        let (mut sc, _, _, _, _) = setup(3);
        sc.user_positions = vec![crate::geometry::Vec3::new(0.0, 0.0, 200.0)];
        sc.data_powers.truncate(1);
        sc.pilot_powers.truncate(1);
        sc.cluster_positions = vec![crate::geometry::Vec3::new(0.0, 0.0, 80.0)];
        let t = geometry_tables(&sc).unwrap();
        let mut bs = vec![crate::channel::E_Z; 4];
        bs[2] = -crate::channel::E_Z;
        let st = statistics_at(&sc, &t, &bs);
        let est = estimation_statistics(&st, &sc).unwrap();
        let d = derivatives_at(&st, &est, &sc, &t, &bs, 2, 2, Mode::Full);
        assert_eq!(d.d_mu[0], ZERO);
        assert_eq!(d.d_r[0].norm(), 0.0);
        assert_eq!(d.d_c_hat[0].norm(), 0.0);
        assert_eq!(d.d_sigma_hhat[0].norm(), 0.0);
    }

    #[test]
    fn isotropic_elements_have_zero_derivatives() {
        let (mut sc, t, f, _, _) = setup(4);
        sc.gain_exponent = 0.0;
        let st = channel_statistics(&sc, &t, &f).unwrap();
        let est = estimation_statistics(&st, &sc).unwrap();
        let d = stat_derivatives(&st, &est, &sc, &t, &f, 1, 0);
        assert!(d.d_mu.iter().all(|z| *z == ZERO));
        assert!(d.d_b.iter().all(|v| v.iter().all(|z| *z == ZERO)));
    }

    fn rate_objective<'a>(sc: &'a Scenario, t: &'a GeometryTables, wzf: bool) -> impl FnMut(&[Vec3]) -> f64 + 'a {
        move |bs: &[Vec3]| {
            let st = statistics_at(sc, t, bs);
            let est = estimation_statistics(&st, sc).unwrap();
            if wzf {
                wzf_surrogate(&st, &est, sc).unwrap().sum_rate()
            } else {
                mrc_surrogate(&st, &est, sc).sum_rate()
            }
        }
    }

    #[test]
    fn rate_gradients_match_finite_differences() {
        for seed in 0..3 {
            let (sc, t, f, st, est) = setup(10 + seed);
            let (_, gm) = mrc_gradient(&st, &est, &sc, &t, &f);
            let (_, gw) = wzf_gradient(&st, &est, &sc, &t, &f).unwrap();
            for n in 0..4 {
                for m in 0..3 {
                    let em = min_fd_error(rate_objective(&sc, &t, false), f.boresights(), n, m, gm.per_antenna[n][m]);
                    let ew = min_fd_error(rate_objective(&sc, &t, true), f.boresights(), n, m, gw.per_antenna[n][m]);
                    assert!(em < 1e-5, "mrc seed {seed} n {n} m {m}: {em}");
                    assert!(ew < 1e-5, "wzf seed {seed} n {n} m {m}: {ew}");
                }
            }
        }
    }

    #[test]
    fn frozen_wzf_gradient_matches_frozen_surrogate() {
        let (sc, t, f, st, est) = setup(20);
        let (_, g) = wzf_gradient_frozen(&st, &est, &sc, &t, &f).unwrap();
        for n in 0..4 {
            for m in 0..3 {
                let obj = |bs: &[Vec3]| wzf_surrogate(&statistics_at(&sc, &t, bs), &est, &sc).unwrap().sum_rate();
                let e = min_fd_error(obj, f.boresights(), n, m, g.per_antenna[n][m]);
                assert!(e < 1e-5, "n {n} m {m}: {e}");
            }
        }
    }

    #[test]
    fn per_user_contributions_sum_to_total() {
        let (sc, t, f, st, est) = setup(21);
        let (_, g) = mrc_gradient(&st, &est, &sc, &t, &f);
        for n in 0..4 {
            let s: Vec3 = g.per_user.iter().map(|u| u[n]).sum();
            assert!((s - g.per_antenna[n]).norm() <= 1e-14 * g.per_antenna[n].norm().max(1.0));
        }
    }

    #[test]
    fn nmse_gradient_matches_finite_differences() {
        let (sc, t, f, st, est) = setup(30);
        let (_, _, g) = nmse_gradient(&st, &est, &sc, &t, &f);
        for n in 0..4 {
            for m in 0..3 {
                let obj = |bs: &[Vec3]| {
                    let st = statistics_at(&sc, &t, bs);
                    let est = estimation_statistics(&st, &sc).unwrap();
                    crate::estimation::nmse(&st, &est, &sc).mean()
                };
                let e = min_fd_error(obj, f.boresights(), n, m, g[n][m]);
                assert!(e < 1e-4 || g[n][m].abs() < 1e-12, "n {n} m {m}: {e}");
            }
        }
    }

    #[test]
    fn nmse_without_scattering_is_flat() {
        let (mut sc, _, f, _, _) = setup(31);
        sc.cluster_positions.clear();
        sc.cluster_rcs.clear();
        let t = geometry_tables(&sc).unwrap();
        let st = channel_statistics(&sc, &t, &f).unwrap();
        let est = estimation_statistics(&st, &sc).unwrap();
        let (v, ranks, g) = nmse_gradient(&st, &est, &sc, &t, &f);
        assert_eq!(v, 0.0);
        assert_eq!(ranks, vec![0, 0]);
        assert!(g.iter().all(|x| x.norm() == 0.0));
    }
}
