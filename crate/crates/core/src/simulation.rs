//! Block-level Monte Carlo: fading and pilot noise are drawn per coherence
//! block, combiners are built from the LMMSE estimates and the instantaneous
//! SINR is evaluated against the true channel.

use log::debug;
use rayon::prelude::*;

use crate::channel::{sample_channel, ChannelStatistics, OrientationMatrix};
use crate::error::{Error, Result};
use crate::estimation::{lmmse_estimate, pilot_observation, EstimationStatistics};
use crate::geometry::{GeometryTables, Scenario};
use crate::linalg::{hpd_inverse, hermitize, CMat};
use crate::optimizer::evaluate_statistics;
use crate::rng::stream;
use crate::surrogates::{colored_noise, rate, Receiver};

/// Columns of Ĥ whose smallest singular value falls below this fraction of
/// the largest are treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Combiner {
    pub kind: Receiver,
    /// Combining vectors as columns (N×K).
    pub v: CMat,
    /// wZF only: p_k / [(Ĥᴴ Z⁻¹ Ĥ)⁻¹]_kk, the SINR conditioned on Ĥ.
    pub conditional_sinr: Option<Vec<f64>>,
}

/// Combiner for the estimates `h_hat` (N×K).
pub fn build_combiner(kind: Receiver, h_hat: &CMat, est: &EstimationStatistics, scenario: &Scenario) -> Result<Combiner> {
    match kind {
        Receiver::Mrc => Ok(Combiner { kind, v: h_hat.clone(), conditional_sinr: None }),
        Receiver::Wzf => {
            let z = colored_noise(est, scenario);
            let z_inv = hpd_inverse(&z, "colored noise Z")?;
            wzf_combiner(h_hat, &z_inv, &scenario.data_powers)
        }
    }
}

fn wzf_combiner(h_hat: &CMat, z_inv: &CMat, powers: &[f64]) -> Result<Combiner> {
    let (n, k) = h_hat.shape();
    if k > n {
        return Err(Error::Precondition(format!("wZF needs K ≤ N, got K = {k}, N = {n}")));
    }
    let svd = h_hat.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOL * smax) {
        let v_t = svd.v_t.expect("requested");
        let (idx, _) = svd.singular_values.argmin();
        let row = v_t.row(idx);
        let peak = row.iter().map(|z| z.norm()).fold(0.0, f64::max);
        return Err(Error::RankDeficient {
            users: (0..k).filter(|&i| row[i].norm() >= 0.1 * peak).collect(),
            detail: format!("estimate matrix has singular values {smax:.3e} … {smin:.3e}"),
        });
    }
    let zh = z_inv * h_hat;
    let gram = hermitize(&(h_hat.adjoint() * &zh));
    let gram_inv = hpd_inverse(&gram, "whitened estimate Gram matrix")?;
    let v = zh * &gram_inv;
    let sinr = (0..k).map(|i| powers[i] / gram_inv[(i, i)].re).collect();
    Ok(Combiner { kind: Receiver::Wzf, v, conditional_sinr: Some(sinr) })
}

/// p_k / (v_kᴴ Z v_k) for a combiner satisfying Vᴴ Ĥ = I.
pub fn conditional_zf_sinr(v: &CMat, z: &CMat, powers: &[f64]) -> Vec<f64> {
    (0..v.ncols())
        .map(|k| {
            let vk = v.column(k);
            powers[k] / vk.dotc(&(z * vk)).re
        })
        .collect()
}

/// γ_k = p_k|v_kᴴh_k|² / (Σ_{i≠k} p_i|v_kᴴh_i|² + σ²‖v_k‖²).
pub fn instantaneous_sinr(v: &CMat, h: &CMat, scenario: &Scenario) -> Result<Vec<f64>> {
    if v.shape() != h.shape() {
        return Err(Error::InvalidArgument(format!("combiner is {:?} but channel is {:?}", v.shape(), h.shape())));
    }
    let gains = v.adjoint() * h;
    (0..v.ncols())
        .map(|k| {
            let vn = v.column(k).norm_squared();
            if vn == 0.0 {
                return Err(Error::InvalidArgument(format!("combiner column {k} is zero")));
            }
            let mut interference = scenario.noise_power * vn;
            for i in (0..h.ncols()).filter(|&i| i != k) {
                interference += scenario.data_powers[i] * gains[(k, i)].norm_sqr();
            }
            Ok(scenario.data_powers[k] * gains[(k, k)].norm_sqr() / interference)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicReport {
    pub user_rates: Vec<f64>,
    pub user_stderr: Vec<f64>,
    pub sum_rate: f64,
    pub sum_rate_stderr: f64,
    /// Blocks that contributed to the averages.
    pub blocks: usize,
    /// Blocks skipped because Ĥ was rank deficient.
    pub skipped: usize,
    pub seed: u64,
}

fn mean_stderr(samples: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = samples.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = samples.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-block rates of one block, or `None` if the block was skipped.
fn simulate_block(
    stats: &ChannelStatistics,
    est: &EstimationStatistics,
    scenario: &Scenario,
    kind: Receiver,
    z_inv: Option<&CMat>,
    seed: u64,
    block: u64,
) -> Result<Option<Vec<f64>>> {
    let mut rng = stream(seed, &[block]);
    let h = sample_channel(stats, &mut rng).h;
    let mut h_hat = CMat::zeros(h.nrows(), h.ncols());
    for k in 0..h.ncols() {
        let y = pilot_observation(&h.column(k).into_owned(), scenario, k, &mut rng);
        h_hat.set_column(k, &lmmse_estimate(stats, est, &y, k));
    }
    let combiner = match (kind, z_inv) {
        (Receiver::Wzf, Some(z_inv)) => match wzf_combiner(&h_hat, z_inv, &scenario.data_powers) {
            Ok(c) => c,
            Err(Error::RankDeficient { users, .. }) => {
                debug!("block {block}: rank-deficient estimates for users {users:?}, skipped");
                return Ok(None);
            }
            Err(e) => return Err(e),
        },
        _ => build_combiner(kind, &h_hat, est, scenario)?,
    };
    let eta = scenario.pre_log();
    let sinr = instantaneous_sinr(&combiner.v, &h, scenario)?;
    Ok(Some(sinr.into_iter().map(|g| rate(eta, g)).collect()))
}

/// Ergodic rates over `n_blocks` independent coherence blocks. Block b
/// draws from stream (`seed`, b), so the report does not depend on how
/// blocks are scheduled.
pub fn ergodic_rate(
    scenario: &Scenario,
    tables: &GeometryTables,
    orientation: &OrientationMatrix,
    kind: Receiver,
    n_blocks: usize,
    seed: u64,
) -> Result<ErgodicReport> {
    if n_blocks == 0 {
        return Err(Error::InvalidArgument("need at least one block".into()));
    }
    let (stats, est) = evaluate_statistics(scenario, tables, orientation)?;
    let z_inv = match kind {
        Receiver::Wzf => Some(hpd_inverse(&colored_noise(&est, scenario), "colored noise Z")?),
        Receiver::Mrc => None,
    };
    let per_block: Vec<Option<Vec<f64>>> = (0..n_blocks as u64)
        .into_par_iter()
        .map(|b| simulate_block(&stats, &est, scenario, kind, z_inv.as_ref(), seed, b))
        .collect::<Result<_>>()?;
    let used: Vec<&Vec<f64>> = per_block.iter().flatten().collect();
    let skipped = n_blocks - used.len();
    let k_users = scenario.n_users();
    let (user_rates, user_stderr) = (0..k_users).map(|k| mean_stderr(used.iter().map(move |r| r[k]))).unzip();
    let (sum_rate, sum_rate_stderr) = mean_stderr(used.iter().map(|r| r.iter().sum::<f64>()));
    Ok(ErgodicReport { user_rates, user_stderr, sum_rate, sum_rate_stderr, blocks: used.len(), skipped, seed })
}
