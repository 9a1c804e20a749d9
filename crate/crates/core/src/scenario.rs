//! Deployment model: users, edge servers, channel gains, and a seeded
//! generator for randomized scenarios.
//!
//! Everything inside a [`Scenario`] is SI (Hz, W, bits, s, J). Decibel
//! quantities only appear in [`GeneratorConfig`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Global constants shared by every user and edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Total uplink bandwidth `B` across all edges (Hz).
    pub total_bandwidth: f64,
    /// Weight on latency in `R = E_sum + lambda * T_sum`.
    pub importance_weight: f64,
    pub global_iters: u32,
    pub edge_iters: u32,
    pub local_iters: u32,
    /// Model size (bits).
    pub model_size: f64,
    /// `alpha` in `E = (alpha/2) f^2 * cycles`.
    pub capacitance_coeff: f64,
    /// Noise power spectral density (W/Hz).
    pub noise_density: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_bandwidth", self.total_bandwidth),
            ("importance_weight", self.importance_weight),
            ("model_size", self.model_size),
            ("capacitance_coeff", self.capacitance_coeff),
            ("noise_density", self.noise_density),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.global_iters == 0 || self.edge_iters == 0 || self.local_iters == 0 {
            return Err(invalid("iteration counts I, K, L must be >= 1"));
        }
        Ok(())
    }

    /// `I * K`, the number of uploads each user performs over a full run.
    pub fn uploads_per_run(&self) -> f64 {
        f64::from(self.global_iters) * f64::from(self.edge_iters)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: usize,
    pub samples: u64,
    pub cycles_per_sample: f64,
    pub f_max: f64,
    pub p_max: f64,
    pub position: [f64; 2],
}

impl User {
    /// CPU cycles for one pass over the local dataset.
    pub fn cycles_per_pass(&self) -> f64 {
        self.cycles_per_sample * self.samples as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeServer {
    pub id: usize,
    pub position: [f64; 2],
    /// Edge-to-cloud rate `r_m` (bits/s).
    pub cloud_rate: f64,
    /// Edge-to-cloud transmit power `p_m` (W).
    pub cloud_power: f64,
    /// Bandwidth budget drawn for this edge (Hz). Informational: the solvers
    /// only use the pooled total in [`SystemParams::total_bandwidth`].
    pub bandwidth: f64,
}

impl EdgeServer {
    /// `T_cloud_m = s / r_m`.
    pub fn cloud_delay(&self, model_size: f64) -> f64 {
        model_size / self.cloud_rate
    }

    /// `E_cloud_m = p_m * T_cloud_m`.
    pub fn cloud_energy(&self, model_size: f64) -> f64 {
        self.cloud_power * self.cloud_delay(model_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: SystemParams,
    pub users: Vec<User>,
    pub edges: Vec<EdgeServer>,
    pub cloud_position: [f64; 2],
    /// `gains[n][m]`: linear channel gain between user `n` and edge `m`.
    pub gains: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn gain(&self, user: usize, edge: usize) -> f64 {
        self.gains[user][edge]
    }

    pub fn with_importance_weight(&self, lambda: f64) -> Scenario {
        let mut s = self.clone();
        s.params.importance_weight = lambda;
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.users.is_empty() || self.edges.is_empty() {
            return Err(invalid("scenario needs at least one user and one edge"));
        }
        for (n, u) in self.users.iter().enumerate() {
            if u.id != n {
                return Err(invalid(format!("user at position {n} has id {}", u.id)));
            }
            if u.samples == 0 {
                return Err(invalid(format!("user {n}: samples must be >= 1")));
            }
            for (name, v) in [
                ("cycles_per_sample", u.cycles_per_sample),
                ("f_max", u.f_max),
                ("p_max", u.p_max),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid(format!("user {n}: {name} must be > 0, got {v}")));
                }
            }
        }
        for (m, e) in self.edges.iter().enumerate() {
            if e.id != m {
                return Err(invalid(format!("edge at position {m} has id {}", e.id)));
            }
            if !(e.cloud_rate.is_finite() && e.cloud_rate > 0.0) {
                return Err(invalid(format!("edge {m}: cloud_rate must be > 0")));
            }
            if !(e.cloud_power.is_finite() && e.cloud_power >= 0.0) {
                return Err(invalid(format!("edge {m}: cloud_power must be >= 0")));
            }
        }
        if self.gains.len() != self.users.len() {
            return Err(invalid("gain matrix must have one row per user"));
        }
        for (n, row) in self.gains.iter().enumerate() {
            if row.len() != self.edges.len() {
                return Err(invalid(format!(
                    "gain row {n} must have one entry per edge"
                )));
            }
            if let Some(g) = row.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
                return Err(invalid(format!(
                    "user {n}: channel gain must be > 0, got {g}"
                )));
            }
        }
        Ok(())
    }
}

/// Partition of users over edge servers.
///
/// Groups are kept sorted, so two assignments describing the same partition
/// compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub groups: Vec<Vec<usize>>,
}

impl Assignment {
    /// Build from a user -> edge map.
    pub fn from_edge_of(edge_of: &[usize], n_edges: usize) -> Result<Assignment> {
        let mut groups = vec![Vec::new(); n_edges];
        for (n, &m) in edge_of.iter().enumerate() {
            if m >= n_edges {
                return Err(invalid(format!("user {n} mapped to edge {m} of {n_edges}")));
            }
            groups[m].push(n);
        }
        Ok(Assignment { groups })
    }

    /// User -> edge map. Panics if the assignment does not cover `0..n_users`
    /// exactly once; call [`Assignment::validate`] first on untrusted input.
    pub fn edge_of(&self, n_users: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n_users];
        for (m, g) in self.groups.iter().enumerate() {
            for &n in g {
                out[n] = m;
            }
        }
        assert!(
            out.iter().all(|&m| m != usize::MAX),
            "assignment does not cover every user"
        );
        out
    }

    pub fn n_edges(&self) -> usize {
        self.groups.len()
    }

    pub fn non_empty_edges(&self) -> usize {
        self.groups.iter().filter(|g| !g.is_empty()).count()
    }

    /// Disjointness and cover over `0..n_users`, one group per edge.
    pub fn validate(&self, n_users: usize, n_edges: usize) -> Result<()> {
        if self.groups.len() != n_edges {
            return Err(invalid(format!(
                "assignment has {} groups, scenario has {n_edges} edges",
                self.groups.len()
            )));
        }
        let mut seen = vec![false; n_users];
        for (m, g) in self.groups.iter().enumerate() {
            for &n in g {
                if n >= n_users {
                    return Err(invalid(format!("group {m} references unknown user {n}")));
                }
                if std::mem::replace(&mut seen[n], true) {
                    return Err(invalid(format!("user {n} appears in more than one group")));
                }
            }
        }
        if let Some(n) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("user {n} is not assigned")));
        }
        Ok(())
    }

    /// Move `user` from group `from` to group `to`, keeping groups sorted.
    pub fn transfer(&mut self, user: usize, from: usize, to: usize) -> Result<()> {
        let pos = self.groups[from]
            .iter()
            .position(|&n| n == user)
            .ok_or_else(|| invalid(format!("user {user} is not in group {from}")))?;
        self.groups[from].remove(pos);
        let dest = &mut self.groups[to];
        let at = dest.partition_point(|&n| n < user);
        dest.insert(at, user);
        Ok(())
    }
}

/// Assign each user to its Euclidean-nearest edge; ties go to the lowest
/// edge index.
pub fn geo_initial_assignment(scenario: &Scenario) -> Assignment {
    let edge_of: Vec<usize> = scenario
        .users
        .iter()
        .map(|u| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (m, e) in scenario.edges.iter().enumerate() {
                let d = distance(u.position, e.position);
                if d < best_d {
                    best = m;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    Assignment::from_edge_of(&edge_of, scenario.n_edges()).expect("edge indices in range")
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `128.1 + 37.6 log10(d_km)` in dB, `d` given in meters.
pub fn path_loss_db(distance_m: f64) -> f64 {
    128.1 + 37.6 * (distance_m / 1000.0).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) * 1e-3
}

/// Unit attached to the configured noise density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseUnit {
    DbmPerHz,
    DbmPerMhz,
}

impl NoiseUnit {
    /// Convert a density in this unit to W/Hz.
    pub fn to_watts_per_hz(self, value: f64) -> f64 {
        match self {
            NoiseUnit::DbmPerHz => dbm_to_watts(value),
            NoiseUnit::DbmPerMhz => dbm_to_watts(value) / 1e6,
        }
    }
}

impl std::str::FromStr for NoiseUnit {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dbm_per_hz" | "dBm/Hz" => Ok(NoiseUnit::DbmPerHz),
            "dbm_per_mhz" | "dBm/MHz" => Ok(NoiseUnit::DbmPerMhz),
            other => Err(invalid(format!("unknown noise unit `{other}`"))),
        }
    }
}

/// Everything [`generate_scenario`] draws from, with the defaults of the
/// reference deployment (ImageNette-sized model and datasets).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub area_side_m: f64,
    /// Distances below this are clamped before evaluating path loss.
    pub min_distance_m: f64,
    pub shadow_sigma_db: f64,
    pub noise_dbm: f64,
    pub noise_unit: NoiseUnit,
    pub edge_bandwidth_min_hz: f64,
    pub edge_bandwidth_max_hz: f64,
    pub f_max_hz: f64,
    pub p_max_dbm: f64,
    pub cycles_min: f64,
    pub cycles_max: f64,
    pub samples_min: u64,
    pub samples_max: u64,
    pub model_size_bits: f64,
    pub capacitance_coeff: f64,
    pub importance_weight: f64,
    pub global_iters: u32,
    pub edge_iters: u32,
    pub local_iters: u32,
    pub cloud_rate_bps: f64,
    pub cloud_power_w: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            area_side_m: 500.0,
            min_distance_m: 1.0,
            shadow_sigma_db: 8.0,
            noise_dbm: -174.0,
            noise_unit: NoiseUnit::DbmPerHz,
            edge_bandwidth_min_hz: 10e3,
            edge_bandwidth_max_hz: 1000e3,
            f_max_hz: 5e9,
            p_max_dbm: 23.0,
            cycles_min: 1e4,
            cycles_max: 1e5,
            samples_min: 150,
            samples_max: 220,
            model_size_bits: 881.0 * 1024.0 * 8.0,
            capacitance_coeff: 2e-28,
            importance_weight: 1.0,
            global_iters: 80,
            edge_iters: 5,
            local_iters: 5,
            cloud_rate_bps: 10e6,
            cloud_power_w: 0.5,
        }
    }
}

impl GeneratorConfig {
    /// Apply a `key = value` override. Keys are the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| invalid(format!("override `{key}`: cannot parse `{v}`")))
        }
        match key {
            "area_side_m" => self.area_side_m = num(key, value)?,
            "min_distance_m" => self.min_distance_m = num(key, value)?,
            "shadow_sigma_db" => self.shadow_sigma_db = num(key, value)?,
            "noise_dbm" => self.noise_dbm = num(key, value)?,
            "noise_unit" => self.noise_unit = value.trim().parse()?,
            "edge_bandwidth_min_hz" => self.edge_bandwidth_min_hz = num(key, value)?,
            "edge_bandwidth_max_hz" => self.edge_bandwidth_max_hz = num(key, value)?,
            "f_max_hz" => self.f_max_hz = num(key, value)?,
            "p_max_dbm" => self.p_max_dbm = num(key, value)?,
            "cycles_min" => self.cycles_min = num(key, value)?,
            "cycles_max" => self.cycles_max = num(key, value)?,
            "samples_min" => self.samples_min = num(key, value)?,
            "samples_max" => self.samples_max = num(key, value)?,
            "model_size_bits" => self.model_size_bits = num(key, value)?,
            "capacitance_coeff" => self.capacitance_coeff = num(key, value)?,
            "importance_weight" | "lambda" => self.importance_weight = num(key, value)?,
            "global_iters" => self.global_iters = num(key, value)?,
            "edge_iters" => self.edge_iters = num(key, value)?,
            "local_iters" => self.local_iters = num(key, value)?,
            "cloud_rate_bps" => self.cloud_rate_bps = num(key, value)?,
            "cloud_power_w" => self.cloud_power_w = num(key, value)?,
            other => return Err(invalid(format!("unknown override `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &BTreeMap<String, String>) -> Result<()> {
        overrides.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area_side_m", self.area_side_m),
            ("min_distance_m", self.min_distance_m),
            ("edge_bandwidth_min_hz", self.edge_bandwidth_min_hz),
            ("f_max_hz", self.f_max_hz),
            ("cycles_min", self.cycles_min),
            ("model_size_bits", self.model_size_bits),
            ("capacitance_coeff", self.capacitance_coeff),
            ("importance_weight", self.importance_weight),
            ("cloud_rate_bps", self.cloud_rate_bps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.shadow_sigma_db.is_finite() && self.shadow_sigma_db >= 0.0) {
            return Err(invalid("shadow_sigma_db must be >= 0"));
        }
        if !(self.cloud_power_w.is_finite() && self.cloud_power_w >= 0.0) {
            return Err(invalid("cloud_power_w must be >= 0"));
        }
        if !self.noise_dbm.is_finite() || !self.p_max_dbm.is_finite() {
            return Err(invalid("noise_dbm and p_max_dbm must be finite"));
        }
        if self.edge_bandwidth_max_hz < self.edge_bandwidth_min_hz {
            return Err(invalid("edge_bandwidth_max_hz < edge_bandwidth_min_hz"));
        }
        if self.cycles_max < self.cycles_min {
            return Err(invalid("cycles_max < cycles_min"));
        }
        if self.samples_min == 0 || self.samples_max < self.samples_min {
            return Err(invalid("need 1 <= samples_min <= samples_max"));
        }
        if self.global_iters == 0 || self.edge_iters == 0 || self.local_iters == 0 {
            return Err(invalid("iteration counts must be >= 1"));
        }
        Ok(())
    }
}

/// Draw a random deployment. Pure function of `(seed, n_users, n_edges, cfg)`.
pub fn generate_scenario(
    seed: u64,
    n_users: usize,
    n_edges: usize,
    cfg: &GeneratorConfig,
) -> Result<Scenario> {
    if n_users == 0 || n_edges == 0 {
        return Err(invalid("n_users and n_edges must be >= 1"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = cfg.area_side_m;
    let point = |rng: &mut ChaCha8Rng| [rng.gen_range(0.0..side), rng.gen_range(0.0..side)];

    let edges: Vec<EdgeServer> = (0..n_edges)
        .map(|m| {
            let position = point(&mut rng);
            let bandwidth = uniform(
                &mut rng,
                cfg.edge_bandwidth_min_hz,
                cfg.edge_bandwidth_max_hz,
            );
            EdgeServer {
                id: m,
                position,
                cloud_rate: cfg.cloud_rate_bps,
                cloud_power: cfg.cloud_power_w,
                bandwidth,
            }
        })
        .collect();

    let p_max = dbm_to_watts(cfg.p_max_dbm);
    let users: Vec<User> = (0..n_users)
        .map(|n| {
            let position = point(&mut rng);
            let cycles_per_sample = uniform(&mut rng, cfg.cycles_min, cfg.cycles_max);
            let samples = rng.gen_range(cfg.samples_min..=cfg.samples_max);
            User {
                id: n,
                samples,
                cycles_per_sample,
                f_max: cfg.f_max_hz,
                p_max,
                position,
            }
        })
        .collect();

    let shadow = Normal::new(0.0, cfg.shadow_sigma_db).map_err(|e| invalid(e.to_string()))?;
    let gains = users
        .iter()
        .map(|u| {
            edges
                .iter()
                .map(|e| {
                    let d = distance(u.position, e.position).max(cfg.min_distance_m);
                    let fading = if cfg.shadow_sigma_db > 0.0 {
                        shadow.sample(&mut rng)
                    } else {
                        0.0
                    };
                    db_to_linear(-(path_loss_db(d) + fading))
                })
                .collect()
        })
        .collect();

    let scenario = Scenario {
        params: SystemParams {
            total_bandwidth: edges.iter().map(|e| e.bandwidth).sum(),
            importance_weight: cfg.importance_weight,
            global_iters: cfg.global_iters,
            edge_iters: cfg.edge_iters,
            local_iters: cfg.local_iters,
            model_size: cfg.model_size_bits,
            capacitance_coeff: cfg.capacitance_coeff,
            noise_density: cfg.noise_unit.to_watts_per_hz(cfg.noise_dbm),
        },
        users,
        edges,
        cloud_position: [side / 2.0, side / 2.0],
        gains,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}
