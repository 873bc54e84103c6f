//! Scenario configuration files (TOML) and seeded geometry generation.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{build_upa, Scenario, Vec3};
use crate::optimizer::PgaConfig;
use crate::rng::stream;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub array: ArrayConfig,
    pub channel: ChannelConfig,
    pub users: UserConfig,
    pub clusters: RegionConfig,
    pub link: LinkConfig,
    pub rotation: RotationConfig,
    pub mc: McConfig,
    pub ring: RingConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_row: usize,
    pub n_col: usize,
    pub carrier_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Directivity exponent of the cosine pattern.
    pub b: f64,
    /// Path gain at 1 m, ϱ/4π (linear).
    pub rho_over_4pi: f64,
    /// Cluster radar cross-section σ_q in m².
    pub cluster_rcs: f64,
    #[serde(rename = "Q")]
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    #[serde(rename = "K")]
    pub k: usize,
    /// Horizontal distance range from the array centre, m.
    pub radius: [f64; 2],
    pub height: [f64; 2],
    /// Draw the horizontal radius uniformly instead of uniformly in area.
    pub radial_uniform: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub radius: [f64; 2],
    pub height: [f64; 2],
    pub radial_uniform: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub noise_dbm: f64,
    pub power_dbm: f64,
    pub pilot_power_dbm: f64,
    pub tau_p: usize,
    #[serde(rename = "T_c")]
    pub t_c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationConfig {
    pub theta_max_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub geometries: usize,
    pub blocks_per_geometry: usize,
    pub seed: u64,
}

/// Common ring used by the angular-separation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingConfig {
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub alpha0: f64,
    pub rho: f64,
    pub c: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub restarts: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let pga = PgaConfig::default();
        Self {
            array: ArrayConfig { n_row: 2, n_col: 4, carrier_hz: 6e9 },
            channel: ChannelConfig { b: 4.0, rho_over_4pi: 1e-3, cluster_rcs: 100.0 / 3.0, q: 3 },
            users: UserConfig { k: 4, radius: [0.0, 300.0], height: [100.0, 200.0], radial_uniform: false },
            clusters: RegionConfig { radius: [0.0, 350.0], height: [50.0, 250.0], radial_uniform: false },
            link: LinkConfig { noise_dbm: -80.0, power_dbm: 20.0, pilot_power_dbm: 20.0, tau_p: 4, t_c: 200 },
            rotation: RotationConfig { theta_max_deg: 60.0 },
            mc: McConfig { geometries: 100, blocks_per_geometry: 100, seed: 1 },
            ring: RingConfig { radius: 150.0, height: 150.0 },
            optimizer: OptimizerConfig {
                alpha0: pga.alpha0,
                rho: pga.rho,
                c: pga.c,
                eps: pga.eps,
                max_iters: pga.max_iters,
                max_backtracks: pga.max_backtracks,
                restarts: 1,
            },
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= 0.0 && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} must be a non-negative range [lo, hi] with lo ≤ hi, got {r:?}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.array.n_row == 0 || self.array.n_col == 0 {
            return bad("array needs at least one row and one column".into());
        }
        if !(self.array.carrier_hz > 0.0) {
            return bad(format!("carrier_hz must be positive, got {}", self.array.carrier_hz));
        }
        if !(self.channel.b >= 0.0 && self.channel.b.is_finite()) {
            return bad(format!("b must be ≥ 0, got {}", self.channel.b));
        }
        if !(self.channel.rho_over_4pi > 0.0) || !(self.channel.cluster_rcs > 0.0) {
            return bad("rho_over_4pi and cluster_rcs must be positive".into());
        }
        if self.users.k == 0 {
            return bad("need at least one user".into());
        }
        check_range("users.radius", self.users.radius)?;
        check_range("users.height", self.users.height)?;
        check_range("clusters.radius", self.clusters.radius)?;
        check_range("clusters.height", self.clusters.height)?;
        if self.link.tau_p < self.users.k {
            return bad(format!("tau_p = {} is shorter than K = {}", self.link.tau_p, self.users.k));
        }
        if self.link.tau_p >= self.link.t_c {
            return bad(format!("tau_p = {} leaves no data symbols in T_c = {}", self.link.tau_p, self.link.t_c));
        }
        let th = self.rotation.theta_max_deg;
        if !(th > 0.0 && th <= 90.0) {
            return bad(format!("theta_max_deg must lie in (0, 90], got {th}"));
        }
        if self.mc.geometries == 0 || self.mc.blocks_per_geometry == 0 {
            return bad("mc.geometries and mc.blocks_per_geometry must be positive".into());
        }
        if !(self.ring.radius >= 0.0 && self.ring.height > 0.0) {
            return bad("ring needs radius ≥ 0 and height > 0".into());
        }
        self.pga().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn pga(&self) -> PgaConfig {
        let o = &self.optimizer;
        PgaConfig {
            alpha0: o.alpha0,
            rho: o.rho,
            c: o.c,
            eps: o.eps,
            max_iters: o.max_iters,
            max_backtracks: o.max_backtracks,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.array.carrier_hz
    }

    pub fn n_antennas(&self) -> usize {
        self.array.n_row * self.array.n_col
    }
}

/// Stream tags for the independent pieces of one geometry.
mod tag {
    pub const USERS: u64 = 0;
    pub const CLUSTERS: u64 = 1;
    pub const RING: u64 = 2;
}

/// Horizontal radius in `[lo, hi]`, uniform in area or in radius.
fn draw_radius<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2], radial_uniform: bool) -> f64 {
    let u: f64 = rng.random();
    if radial_uniform {
        range[0] + u * (range[1] - range[0])
    } else {
        (range[0] * range[0] + u * (range[1] * range[1] - range[0] * range[0])).sqrt()
    }
}

fn draw_point<R: Rng + ?Sized>(rng: &mut R, radius: [f64; 2], height: [f64; 2], radial_uniform: bool) -> Vec3 {
    let r = draw_radius(rng, radius, radial_uniform);
    let phi = 2.0 * PI * rng.random::<f64>();
    let z = height[0] + rng.random::<f64>() * (height[1] - height[0]);
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

fn scenario_with(config: &ScenarioConfig, users: Vec<Vec3>, clusters: Vec<Vec3>) -> Result<Scenario> {
    let wavelength = config.wavelength();
    let k = users.len();
    let sc = Scenario {
        antenna_positions: build_upa(config.array.n_row, config.array.n_col, wavelength)?,
        cluster_rcs: vec![config.channel.cluster_rcs; clusters.len()],
        user_positions: users,
        cluster_positions: clusters,
        wavelength,
        aperture: 4.0 * PI * config.channel.rho_over_4pi,
        gain_exponent: config.channel.b,
        theta_max: config.rotation.theta_max_deg.to_radians(),
        noise_power: dbm_to_watts(config.link.noise_dbm),
        data_powers: vec![dbm_to_watts(config.link.power_dbm); k],
        pilot_powers: vec![dbm_to_watts(config.link.pilot_power_dbm); k],
        pilot_length: config.link.tau_p,
        coherence_length: config.link.t_c,
    };
    sc.validate()?;
    Ok(sc)
}

fn draw_clusters(config: &ScenarioConfig, seed: u64, index: usize) -> Vec<Vec3> {
    let mut rng = stream(seed, &[index as u64, tag::CLUSTERS]);
    let c = &config.clusters;
    (0..config.channel.q).map(|_| draw_point(&mut rng, c.radius, c.height, c.radial_uniform)).collect()
}

/// Geometry realization `index` of the sweep seeded by `seed`. Users and
/// clusters come from separate streams, and user k is always the k-th draw,
/// so realizations with different K share their first users.
pub fn generate_geometry(config: &ScenarioConfig, seed: u64, index: usize) -> Result<Scenario> {
    config.validate()?;
    let mut rng = stream(seed, &[index as u64, tag::USERS]);
    let u = &config.users;
    let users = (0..u.k).map(|_| draw_point(&mut rng, u.radius, u.height, u.radial_uniform)).collect();
    scenario_with(config, users, draw_clusters(config, seed, index))
}

/// As [`generate_geometry`], but the K users sit on the configured ring at
/// azimuths φ₀ + kΔφ with a random φ₀.
pub fn generate_ring_geometry(config: &ScenarioConfig, seed: u64, index: usize, spacing: f64) -> Result<Scenario> {
    config.validate()?;
    let phi0 = 2.0 * PI * stream(seed, &[index as u64, tag::RING]).random::<f64>();
    let ring = &config.ring;
    let users = (0..config.users.k)
        .map(|k| {
            let phi = phi0 + k as f64 * spacing;
            Vec3::new(ring.radius * phi.cos(), ring.radius * phi.sin(), ring.height)
        })
        .collect();
    scenario_with(config, users, draw_clusters(config, seed, index))
}
