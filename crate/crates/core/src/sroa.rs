//! Joint bandwidth / CPU-frequency / transmit-power allocation for a fixed
//! user assignment.
//!
//! The problem is solved through an auxiliary deadline `t` that upper-bounds
//! every user's end-to-end latency over the whole run. For a fixed `t` the
//! objective reduces to energy, which is minimized by two nested bisections
//! (CPU frequency inside, transmit power outside); a third search over `t`
//! trades that energy against `lambda * t`.
//!
//! The default fixed-deadline solver prices the shared bandwidth budget: at a
//! given price every user independently picks the `(b, f, p)` that meets the
//! deadline at least cost, and the price is bisected until the budget is
//! spent. The nested-bisection variants move frequencies and powers by a
//! *shared relative position* between each user's lower bound (position `0`)
//! and its hardware maximum (position `1`).

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::cost::{total_cost, Allocation, CostReport};
use crate::error::{invalid, Result};
use crate::scenario::{Assignment, Scenario};

/// How the fixed-deadline energy problem is solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    /// Lower power while the bandwidth budget is met, raise it otherwise.
    /// Because the inner frequency loop always spends the whole budget, this
    /// settles on the lowest power that stays feasible at `f_max`.
    BandwidthRule,
    /// Locate the same feasibility boundary, then minimize energy over the
    /// feasible power positions by golden-section search.
    MinEnergy,
    /// Put a price on the shared bandwidth budget, let every user pick its own
    /// `(b, f, p)` against that price, and bisect the price until the budget
    /// is spent. Replaces both nested loops.
    BandwidthPrice,
}

/// How the outer deadline loop moves its bracket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineSearch {
    /// Raise `t_low` on infeasibility or when `R` got worse than the best seen,
    /// otherwise lower `t_up`.
    Descent,
    /// Bisect the feasibility boundary, then golden-section search `R(t)` on
    /// the feasible side.
    Golden,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum DeadlineBounds {
    /// Lower bound from the Shannon cap at full resources, upper bound ten
    /// times the deadline met by the full-resource equal-share allocation.
    Analytic,
    Explicit {
        low: f64,
        up: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative tolerance of the CPU-frequency loop.
    pub freq_tol: f64,
    /// Relative tolerance of the transmit-power loop.
    pub power_tol: f64,
    /// Relative tolerance of the deadline loop.
    pub deadline_tol: f64,
    /// Relative tolerance of the per-user bandwidth bisection.
    pub bandwidth_tol: f64,
    /// Per-user bandwidth cap `b_max`; `None` means the total budget `B`.
    pub max_user_bandwidth: Option<f64>,
    pub deadline_bounds: DeadlineBounds,
    /// Safety cap on every loop.
    pub max_iters: usize,
    pub inner: InnerSolver,
    pub deadline_search: DeadlineSearch,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            freq_tol: 1e-6,
            power_tol: 1e-6,
            deadline_tol: 1e-6,
            bandwidth_tol: 1e-6,
            max_user_bandwidth: None,
            deadline_bounds: DeadlineBounds::Analytic,
            max_iters: 200,
            inner: InnerSolver::BandwidthPrice,
            deadline_search: DeadlineSearch::Golden,
        }
    }
}

impl SolverConfig {
    /// Set all four tolerances at once.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.freq_tol = tol;
        self.power_tol = tol;
        self.deadline_tol = tol;
        self.bandwidth_tol = tol;
        self
    }

    /// Shared-position bisection on power and the descent rule on the deadline.
    pub fn literal() -> Self {
        SolverConfig {
            inner: InnerSolver::BandwidthRule,
            deadline_search: DeadlineSearch::Descent,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("freq_tol", self.freq_tol),
            ("power_tol", self.power_tol),
            ("deadline_tol", self.deadline_tol),
            ("bandwidth_tol", self.bandwidth_tol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if let Some(b) = self.max_user_bandwidth {
            if !(b.is_finite() && b > 0.0) {
                return Err(invalid("max_user_bandwidth must be > 0"));
            }
        }
        if let DeadlineBounds::Explicit { low, up } = self.deadline_bounds {
            if !(low.is_finite() && up.is_finite() && 0.0 <= low && low < up) {
                return Err(invalid("explicit deadline bounds need 0 <= low < up"));
            }
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be >= 1"));
        }
        Ok(())
    }
}

/// Why a sub-problem has no solution at the requested deadline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Infeasible {
    /// Cloud hop plus local computation already exceed the deadline.
    ComputeExceedsDeadline { user: usize },
    /// Required throughput is at or above the Shannon cap `G / ln 2`.
    ShannonCap { user: usize },
    /// Even `b_max` bandwidth does not meet the deadline.
    BandwidthCap { user: usize },
    /// The users' minimal bandwidths sum past the budget.
    BandwidthBudget { required: f64, available: f64 },
    /// The power lower bound lies above `p_max`.
    PowerBound { user: usize },
    /// No deadline inside the search bracket is feasible.
    NoFeasibleDeadline { low: f64, up: f64 },
}

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Infeasible::ComputeExceedsDeadline { user } => {
                write!(f, "user {user}: computation alone exceeds the deadline")
            }
            Infeasible::ShannonCap { user } => {
                write!(f, "user {user}: required rate above Shannon cap")
            }
            Infeasible::BandwidthCap { user } => {
                write!(f, "user {user}: b_max does not meet the deadline")
            }
            Infeasible::BandwidthBudget {
                required,
                available,
            } => {
                write!(f, "needs {required} Hz of {available} Hz")
            }
            Infeasible::PowerBound { user } => {
                write!(f, "user {user}: power lower bound above p_max")
            }
            Infeasible::NoFeasibleDeadline { low, up } => {
                write!(f, "no feasible deadline in [{low}, {up}]")
            }
        }
    }
}

/// Assignment-dependent constants of one user, scaled to the whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserCoefficients {
    pub user: usize,
    /// `A_n = (alpha/2) I K L c_n D_n`.
    pub energy_coeff: f64,
    /// `J_n = I K L c_n D_n` (cycles).
    pub workload: f64,
    /// `H_n = I K s` (bits uploaded over the run).
    pub upload_bits: f64,
    /// Gain to the assigned edge.
    pub gain: f64,
    /// `I * T_cloud` of the assigned edge.
    pub cloud_delay: f64,
    pub f_max: f64,
    pub p_max: f64,
}

impl UserCoefficients {
    /// `G_n = p h_n / N0`.
    pub fn snr_scale(&self, p: f64, noise_density: f64) -> f64 {
        p * self.gain / noise_density
    }

    /// `U_n = H_n p`.
    pub fn upload_energy_coeff(&self, p: f64) -> f64 {
        self.upload_bits * p
    }

    /// `Y_n = H_n / b`.
    pub fn bits_per_hz(&self, b: f64) -> f64 {
        self.upload_bits / b
    }

    /// `Z_n = h_n / (N0 b)`.
    pub fn gain_per_noise(&self, b: f64, noise_density: f64) -> f64 {
        self.gain / (noise_density * b)
    }

    /// `F_n = J_n / f + delta_n`.
    pub fn fixed_delay(&self, f: f64) -> f64 {
        self.workload / f + self.cloud_delay
    }

    /// Run-level latency at `(b, f, p)`.
    pub fn latency(&self, b: f64, f: f64, p: f64, noise_density: f64) -> f64 {
        self.upload_bits / throughput(b, self.snr_scale(p, noise_density)) + self.fixed_delay(f)
    }

    /// Run-level energy at `(b, f, p)`, cloud hop excluded.
    pub fn energy(&self, b: f64, f: f64, p: f64, noise_density: f64) -> f64 {
        self.energy_coeff * f * f
            + self.upload_energy_coeff(p) / throughput(b, self.snr_scale(p, noise_density))
    }
}

/// Everything the solver needs from `(Scenario, Assignment)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedCoefficients {
    pub users: Vec<UserCoefficients>,
    pub noise_density: f64,
    pub total_bandwidth: f64,
    pub max_user_bandwidth: f64,
    pub importance_weight: f64,
    /// `I * sum of E_cloud_m` over non-empty edges.
    pub cloud_energy: f64,
}

impl DerivedCoefficients {
    pub fn new(scenario: &Scenario, assignment: &Assignment, cfg: &SolverConfig) -> Result<Self> {
        scenario.validate()?;
        assignment.validate(scenario.n_users(), scenario.n_edges())?;
        let p = &scenario.params;
        let iters = f64::from(p.global_iters);
        let runs = p.uploads_per_run();
        let edge_of = assignment.edge_of(scenario.n_users());
        let users = scenario
            .users
            .iter()
            .zip(&edge_of)
            .map(|(u, &m)| {
                let workload = runs * f64::from(p.local_iters) * u.cycles_per_pass();
                UserCoefficients {
                    user: u.id,
                    energy_coeff: p.capacitance_coeff / 2.0 * workload,
                    workload,
                    upload_bits: runs * p.model_size,
                    gain: scenario.gain(u.id, m),
                    cloud_delay: iters * scenario.edges[m].cloud_delay(p.model_size),
                    f_max: u.f_max,
                    p_max: u.p_max,
                }
            })
            .collect();
        let cloud_energy = assignment
            .groups
            .iter()
            .zip(&scenario.edges)
            .filter(|(g, _)| !g.is_empty())
            .map(|(_, e)| iters * e.cloud_energy(p.model_size))
            .sum();
        Ok(DerivedCoefficients {
            users,
            noise_density: p.noise_density,
            total_bandwidth: p.total_bandwidth,
            max_user_bandwidth: cfg.max_user_bandwidth.unwrap_or(p.total_bandwidth),
            importance_weight: p.importance_weight,
            cloud_energy,
        })
    }

    /// `X = sum A_n f_n^2`.
    pub fn compute_energy(&self, f: &[f64]) -> f64 {
        self.users
            .iter()
            .zip(f)
            .map(|(u, f)| u.energy_coeff * f * f)
            .sum()
    }

    /// Energy of the fixed-deadline problem (cloud hop excluded).
    pub fn energy(&self, b: &[f64], f: &[f64], p: &[f64]) -> f64 {
        self.users
            .iter()
            .enumerate()
            .map(|(n, u)| u.energy(b[n], f[n], p[n], self.noise_density))
            .sum()
    }
}

/// `x log2(1 + g / x)`: increasing in `x`, bounded by `g / ln 2`.
pub fn throughput(x: f64, g: f64) -> f64 {
    x * (g / x).ln_1p() / LN_2
}

/// `x 2^(xi / x) - x`: the SNR-bandwidth product needed to carry `xi`
/// bits/s over `x` Hz. Decreasing in `x`.
pub fn excess_rate_cost(x: f64, xi: f64) -> f64 {
    x * (xi / x * LN_2).exp_m1()
}

/// Derivative of [`throughput`] in `x`.
pub fn throughput_slope(x: f64, g: f64) -> f64 {
    ((g / x).ln_1p() - g / (x + g)) / LN_2
}

const MAX_BISECTION_STEPS: usize = 2000;

/// Smallest bandwidth meeting the deadline `t` at frequency `f` and power `p`,
/// to relative tolerance `tol`. The returned value always meets the deadline.
pub fn solve_b_for_deadline(
    u: &UserCoefficients,
    f: f64,
    p: f64,
    t: f64,
    noise_density: f64,
    b_max: f64,
    tol: f64,
) -> Result<f64, Infeasible> {
    let slack = t - u.fixed_delay(f);
    if !(slack > 0.0) {
        return Err(Infeasible::ComputeExceedsDeadline { user: u.user });
    }
    let required = u.upload_bits / slack;
    if required == 0.0 {
        return Ok(f64::MIN_POSITIVE);
    }
    let g = u.snr_scale(p, noise_density);
    if required >= g / LN_2 {
        return Err(Infeasible::ShannonCap { user: u.user });
    }
    if throughput(b_max, g) < required {
        return Err(Infeasible::BandwidthCap { user: u.user });
    }
    // Bisection on [0, b_max], with two extra bracket candidates per step:
    // the tangent at `up` lies above the concave throughput curve (so its
    // crossing is a lower bound) and the chord over [low, up] lies below it
    // (an upper bound). Every candidate is classified by evaluating it.
    let mut up = b_max;
    let mut h_up = throughput(up, g);
    let mut low = 0.0;
    let mut h_low = 0.0;
    let mut steps = 0;
    while (up - low) / up > tol && steps < MAX_BISECTION_STEPS {
        steps += 1;
        let width = up - low;
        let tangent = up - (h_up - required) / throughput_slope(up, g);
        let chord = low + (required - h_low) * (up - low) / (h_up - h_low);
        for x in [tangent, chord] {
            if x > low && x < up {
                let hx = throughput(x, g);
                if hx >= required {
                    (up, h_up) = (x, hx);
                } else {
                    (low, h_low) = (x, hx);
                }
            }
        }
        if up - low > 0.5 * width {
            let mid = 0.5 * (low + up);
            if mid <= low || mid >= up {
                break;
            }
            let hm = throughput(mid, g);
            if hm >= required {
                (up, h_up) = (mid, hm);
            } else {
                (low, h_low) = (mid, hm);
            }
        }
    }
    Ok(up)
}

/// Lowest frequency that can still meet `t` with unlimited bandwidth:
/// `max(0, J / (t - delta - ln2 H / G))`.
pub fn f_lower_bound(
    u: &UserCoefficients,
    p: f64,
    t: f64,
    noise_density: f64,
) -> Result<f64, Infeasible> {
    let g = u.snr_scale(p, noise_density);
    let denom = t - u.cloud_delay - LN_2 * u.upload_bits / g;
    if !(denom > 0.0) {
        return Err(Infeasible::ShannonCap { user: u.user });
    }
    Ok((u.workload / denom).max(0.0))
}

/// Lowest power that can meet `t` with `b_max` bandwidth at `f_max`:
/// `(N0 / h) b_max (2^(H / (b_max eta)) - 1)`, where `eta` is the time left
/// for the upload.
pub fn p_lower_bound(
    u: &UserCoefficients,
    t: f64,
    noise_density: f64,
    b_max: f64,
) -> Result<f64, Infeasible> {
    let eta = t - u.cloud_delay - u.workload / u.f_max;
    if !(eta > 0.0) {
        return Err(Infeasible::ComputeExceedsDeadline { user: u.user });
    }
    Ok((noise_density / u.gain * excess_rate_cost(b_max, u.upload_bits / eta)).max(0.0))
}

/// Output of the CPU-frequency loop.
#[derive(Clone, Debug, PartialEq)]
pub struct BfSolution {
    pub bandwidth: Vec<f64>,
    pub cpu_freq: Vec<f64>,
    pub bandwidth_sum: f64,
    /// Bandwidth needed with every user at `f_max`.
    pub bandwidth_sum_at_fmax: f64,
    pub iterations: usize,
}

fn lerp(lo: f64, hi: f64, theta: f64) -> f64 {
    lo + theta * (hi - lo)
}

fn solve_all_b(
    c: &DerivedCoefficients,
    f: &[f64],
    p: &[f64],
    t: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64), Infeasible> {
    let b: Vec<f64> = c
        .users
        .iter()
        .enumerate()
        .map(|(n, u)| {
            solve_b_for_deadline(u, f[n], p[n], t, c.noise_density, c.max_user_bandwidth, tol)
        })
        .collect::<Result<_, _>>()?;
    let sum = b.iter().sum();
    Ok((b, sum))
}

/// Minimize energy over `(b, f)` at fixed `(p, t)`: push every frequency down
/// (by a shared position between its lower bound and `f_max`) until the
/// bandwidth they force reaches the budget.
pub fn optimize_bf(
    p: &[f64],
    t: f64,
    c: &DerivedCoefficients,
    cfg: &SolverConfig,
) -> Result<BfSolution, Infeasible> {
    let f_low: Vec<f64> = c
        .users
        .iter()
        .zip(p)
        .map(|(u, &p)| {
            let lb = f_lower_bound(u, p, t, c.noise_density)?;
            if lb >= u.f_max {
                Err(Infeasible::ShannonCap { user: u.user })
            } else {
                Ok(lb)
            }
        })
        .collect::<Result<_, _>>()?;
    let f_at = |theta: f64| -> Vec<f64> {
        f_low
            .iter()
            .zip(&c.users)
            .map(|(&lo, u)| lerp(lo, u.f_max, theta))
            .collect()
    };

    let f_up_vec = f_at(1.0);
    let (mut b_up, mut sum_up) = solve_all_b(c, &f_up_vec, p, t, cfg.bandwidth_tol)?;
    let sum_at_fmax = sum_up;
    if sum_up > c.total_bandwidth {
        return Err(Infeasible::BandwidthBudget {
            required: sum_up,
            available: c.total_bandwidth,
        });
    }

    let gap = |lo: f64, hi: f64| -> f64 {
        f_low
            .iter()
            .zip(&c.users)
            .map(|(&fl, u)| {
                let up = lerp(fl, u.f_max, hi);
                (up - lerp(fl, u.f_max, lo)) / up
            })
            .fold(0.0, f64::max)
    };

    let (mut lo, mut hi) = (0.0, 1.0);
    let mut f_up = f_up_vec;
    let mut iterations = 0;
    while gap(lo, hi) > cfg.freq_tol && iterations < cfg.max_iters {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let f = f_at(mid);
        match solve_all_b(c, &f, p, t, cfg.bandwidth_tol) {
            Ok((b, sum)) => {
                debug_assert!(
                    sum >= sum_up * (1.0 - 2.0 * cfg.bandwidth_tol),
                    "bandwidth sum must not grow with frequency"
                );
                if sum <= c.total_bandwidth {
                    hi = mid;
                    f_up = f;
                    b_up = b;
                    sum_up = sum;
                    if sum == c.total_bandwidth {
                        break;
                    }
                } else {
                    lo = mid;
                }
            }
            Err(_) => lo = mid,
        }
    }
    Ok(BfSolution {
        bandwidth: b_up,
        cpu_freq: f_up,
        bandwidth_sum: sum_up,
        bandwidth_sum_at_fmax: sum_at_fmax,
        iterations,
    })
}

/// Output of the transmit-power loop at a fixed deadline.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSolution {
    pub bandwidth: Vec<f64>,
    pub cpu_freq: Vec<f64>,
    pub power: Vec<f64>,
    pub bandwidth_sum: f64,
    pub bandwidth_sum_at_fmax: f64,
    /// Fixed-deadline energy, cloud hop excluded.
    pub energy: f64,
    pub iterations: usize,
    pub freq_iterations: usize,
}

/// Minimize energy over `(p, b, f)` at fixed `t`.
pub fn optimize_p(
    t: f64,
    c: &DerivedCoefficients,
    cfg: &SolverConfig,
) -> Result<PowerSolution, Infeasible> {
    if cfg.inner == InnerSolver::BandwidthPrice {
        return optimize_priced(t, c, cfg);
    }
    let p_low: Vec<f64> = c
        .users
        .iter()
        .map(|u| {
            let lb = p_lower_bound(u, t, c.noise_density, c.max_user_bandwidth)?;
            if lb > u.p_max {
                Err(Infeasible::PowerBound { user: u.user })
            } else {
                Ok(lb)
            }
        })
        .collect::<Result<_, _>>()?;
    let p_at = |theta: f64| -> Vec<f64> {
        p_low
            .iter()
            .zip(&c.users)
            .map(|(&lo, u)| lerp(lo, u.p_max, theta))
            .collect()
    };
    let gap = |lo: f64, hi: f64| -> f64 {
        p_low
            .iter()
            .zip(&c.users)
            .map(|(&pl, u)| {
                let up = lerp(pl, u.p_max, hi);
                if up == 0.0 {
                    0.0
                } else {
                    (up - lerp(pl, u.p_max, lo)) / up
                }
            })
            .fold(0.0, f64::max)
    };

    let mut freq_iterations = 0;
    let mut solve = |theta: f64| -> Result<PowerSolution, Infeasible> {
        let p = p_at(theta);
        let bf = optimize_bf(&p, t, c, cfg)?;
        freq_iterations += bf.iterations;
        let energy = c.energy(&bf.bandwidth, &bf.cpu_freq, &p);
        Ok(PowerSolution {
            bandwidth: bf.bandwidth,
            cpu_freq: bf.cpu_freq,
            power: p,
            bandwidth_sum: bf.bandwidth_sum,
            bandwidth_sum_at_fmax: bf.bandwidth_sum_at_fmax,
            energy,
            iterations: 0,
            freq_iterations: 0,
        })
    };

    let mut best = solve(1.0)?;
    let mut iterations = 0;
    match cfg.inner {
        InnerSolver::BandwidthRule => {
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut sum_hi = best.bandwidth_sum_at_fmax;
            while gap(lo, hi) > cfg.power_tol && iterations < cfg.max_iters {
                iterations += 1;
                let mid = 0.5 * (lo + hi);
                match solve(mid) {
                    Ok(s) if s.bandwidth_sum <= c.total_bandwidth => {
                        // lower power never needs less bandwidth at f_max
                        debug_assert!(
                            s.bandwidth_sum_at_fmax >= sum_hi * (1.0 - 2.0 * cfg.bandwidth_tol)
                        );
                        sum_hi = s.bandwidth_sum_at_fmax;
                        hi = mid;
                        best = s;
                    }
                    _ => lo = mid,
                }
            }
        }
        InnerSolver::BandwidthPrice => unreachable!(),
        InnerSolver::MinEnergy => {
            let (_, found, n) = golden_section(
                0.0,
                1.0,
                |a, b| gap(a, b) <= cfg.power_tol,
                cfg.max_iters,
                |x| solve(x).map(|s| (s.energy, s)).ok(),
            );
            iterations += n;
            if let Some((energy, s)) = found {
                if energy < best.energy {
                    best = s;
                }
            }
        }
    }
    best.iterations = iterations;
    best.freq_iterations = freq_iterations;
    Ok(best)
}

/// `(2^x - 1) / x`, with its limit `ln 2` at zero.
fn energy_per_bit(x: f64) -> f64 {
    if x == 0.0 {
        LN_2
    } else {
        (x * LN_2).exp_m1() / x
    }
}

/// Spectral efficiency (bits/s/Hz) at which the marginal upload energy
/// matches a bandwidth price: the root of `e^y (y - 1) + 1 = kappa` with
/// `y = x ln 2`. Newton from an upper bound converges monotonically because
/// the left side is convex and increasing for `y > 0`.
fn priced_efficiency(kappa: f64) -> f64 {
    if !(kappa > 0.0) {
        return 0.0;
    }
    let mut y = (2.0 * kappa).sqrt();
    if kappa >= 1.0 {
        y = y.min(kappa.ln() + 1.0);
    }
    for _ in 0..200 {
        let ey = y.exp();
        let step = (price_lhs(y) - kappa) / (y * ey);
        y -= step;
        if step.abs() <= 1e-15 * y {
            break;
        }
    }
    y / LN_2
}

/// `e^y (y - 1) + 1`, summed as a series near zero to avoid cancellation.
fn price_lhs(y: f64) -> f64 {
    if y > 0.5 {
        return y.exp() * (y - 1.0) + 1.0;
    }
    // sum over k >= 2 of (k - 1) y^k / k!
    let mut term = y * y / 2.0;
    let mut sum = term;
    for k in 3..40 {
        term *= y / k as f64;
        sum += (k - 1) as f64 * term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

/// Largest efficiency reachable at a power cap: the positive root of
/// `2^x - 1 = rho x`, starting from any `x` above it.
fn capped_efficiency(rho: f64, mut x: f64) -> f64 {
    for _ in 0..200 {
        let e = (x * LN_2).exp();
        let step = (e - 1.0 - rho * x) / (LN_2 * e - rho);
        x -= step;
        if step.abs() <= 1e-15 * x {
            break;
        }
    }
    x
}

#[derive(Clone, Copy, Debug)]
struct Choice {
    b: f64,
    f: f64,
    p: f64,
    energy: f64,
}

/// Cheapest `(b, p)` for user `u` at frequency `f`, deadline `t` and price
/// `mu`. The deadline is met with equality.
fn priced_choice(
    u: &UserCoefficients,
    f: f64,
    t: f64,
    mu: f64,
    c: &DerivedCoefficients,
) -> Option<Choice> {
    let tc = t - u.fixed_delay(f);
    if !(tc > 0.0) {
        return None;
    }
    let k0 = c.noise_density * u.upload_bits / u.gain;
    let rho = u.p_max * tc / k0;
    let x_lo = u.upload_bits / (tc * c.max_user_bandwidth);
    if energy_per_bit(x_lo) > rho {
        return None;
    }
    let mut x = priced_efficiency(mu * u.gain / (c.noise_density * tc)).max(x_lo);
    if energy_per_bit(x) > rho {
        x = capped_efficiency(rho, x).max(x_lo);
    }
    let b = u.upload_bits / (tc * x);
    let p = (k0 * energy_per_bit(x) / tc).min(u.p_max);
    Some(Choice {
        b,
        f,
        p,
        energy: u.energy_coeff * f * f + p * tc,
    })
}

/// Fixed-deadline solve under [`InnerSolver::BandwidthPrice`].
fn optimize_priced(
    t: f64,
    c: &DerivedCoefficients,
    cfg: &SolverConfig,
) -> Result<PowerSolution, Infeasible> {
    let f_max: Vec<f64> = c.users.iter().map(|u| u.f_max).collect();
    let p_max: Vec<f64> = c.users.iter().map(|u| u.p_max).collect();
    let (b_min, sum_min) = solve_all_b(c, &f_max, &p_max, t, cfg.bandwidth_tol)?;
    if sum_min > c.total_bandwidth {
        return Err(Infeasible::BandwidthBudget {
            required: sum_min,
            available: c.total_bandwidth,
        });
    }
    // Lowest frequency each user can afford with b_max and p_max.
    let f_low: Vec<f64> = c
        .users
        .iter()
        .map(|u| {
            let tc = u.upload_bits
                / throughput(c.max_user_bandwidth, u.snr_scale(u.p_max, c.noise_density));
            (u.workload / (t - u.cloud_delay - tc)).min(u.f_max)
        })
        .collect();

    let mut freq_iterations = 0;
    let mut respond = |mu: f64| -> Vec<Choice> {
        c.users
            .iter()
            .enumerate()
            .map(|(n_user, u)| {
                let (_, found, n) = golden_section(
                    f_low[n_user],
                    u.f_max,
                    |a, b| (b - a) <= cfg.freq_tol * b,
                    cfg.max_iters,
                    |f| priced_choice(u, f, t, mu, c).map(|ch| (ch.energy + mu * ch.b, ch)),
                );
                freq_iterations += n;
                found.map(|(_, ch)| ch).unwrap_or(Choice {
                    b: b_min[n_user],
                    f: u.f_max,
                    p: u.p_max,
                    energy: f64::NAN,
                })
            })
            .collect()
    };
    let spent = |ch: &[Choice]| ch.iter().map(|x| x.b).sum::<f64>();

    let mut best = respond(0.0);
    let mut iterations = 0;
    if spent(&best) > c.total_bandwidth {
        let scale = best
            .iter()
            .map(|x| x.energy)
            .filter(|e| e.is_finite())
            .sum::<f64>()
            / c.total_bandwidth;
        let (mut lo, mut hi) = (0.0, scale.max(f64::MIN_POSITIVE));
        let mut found = None;
        while iterations < cfg.max_iters {
            iterations += 1;
            let ch = respond(hi);
            if spent(&ch) <= c.total_bandwidth {
                found = Some(ch);
                break;
            }
            lo = hi;
            hi *= 4.0;
        }
        match found {
            None => {
                best = c
                    .users
                    .iter()
                    .enumerate()
                    .map(|(n, u)| Choice {
                        b: b_min[n],
                        f: u.f_max,
                        p: u.p_max,
                        energy: 0.0,
                    })
                    .collect();
            }
            Some(ch) => {
                best = ch;
                while iterations < cfg.max_iters
                    && spent(&best) < c.total_bandwidth * (1.0 - cfg.bandwidth_tol)
                    && hi - lo > 1e-15 * hi
                {
                    iterations += 1;
                    let mid = if lo > 0.0 && hi > 4.0 * lo {
                        (lo * hi).sqrt()
                    } else {
                        0.5 * (lo + hi)
                    };
                    let ch = respond(mid);
                    if spent(&ch) <= c.total_bandwidth {
                        hi = mid;
                        best = ch;
                    } else {
                        lo = mid;
                    }
                }
            }
        }
    }
    let bandwidth: Vec<f64> = best.iter().map(|x| x.b).collect();
    let cpu_freq: Vec<f64> = best.iter().map(|x| x.f).collect();
    let power: Vec<f64> = best.iter().map(|x| x.p).collect();
    let energy = c.energy(&bandwidth, &cpu_freq, &power);
    Ok(PowerSolution {
        bandwidth_sum: bandwidth.iter().sum(),
        bandwidth,
        cpu_freq,
        power,
        bandwidth_sum_at_fmax: sum_min,
        energy,
        iterations,
        freq_iterations,
    })
}

/// Golden-section minimization of `eval` over `[lo, hi]`. `eval` returns
/// `None` for infeasible points, which must form a prefix of the interval.
/// Returns the best evaluated point, its payload, and the iteration count.
fn golden_section<T>(
    mut lo: f64,
    mut hi: f64,
    converged: impl Fn(f64, f64) -> bool,
    max_iters: usize,
    mut eval: impl FnMut(f64) -> Option<(f64, T)>,
) -> (Option<f64>, Option<(f64, T)>, usize) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut best: Option<(f64, (f64, T))> = None;
    let record = |x: f64, r: Option<(f64, T)>, best: &mut Option<(f64, (f64, T))>| -> f64 {
        match r {
            Some((v, payload)) => {
                if best.as_ref().is_none_or(|(_, (bv, _))| v < *bv) {
                    *best = Some((x, (v, payload)));
                }
                v
            }
            None => f64::INFINITY,
        }
    };
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let r1 = eval(x1);
    let mut v1 = record(x1, r1, &mut best);
    let r2 = eval(x2);
    let mut v2 = record(x2, r2, &mut best);
    let mut iterations = 0;
    while !converged(lo, hi) && iterations < max_iters {
        iterations += 1;
        // Infeasible points sit left of the feasible region.
        if v1 <= v2 && v1.is_finite() {
            hi = x2;
            x2 = x1;
            v2 = v1;
            x1 = hi - INV_PHI * (hi - lo);
            let r = eval(x1);
            v1 = record(x1, r, &mut best);
        } else {
            lo = x1;
            x1 = x2;
            v1 = v2;
            x2 = lo + INV_PHI * (hi - lo);
            let r = eval(x2);
            v2 = record(x2, r, &mut best);
        }
    }
    match best {
        Some((x, payload)) => (Some(x), Some(payload), iterations),
        None => (None, None, iterations),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub deadline: usize,
    /// Power-loop (or price-loop) iterations summed over all deadline probes.
    pub power: usize,
    /// Frequency-loop iterations summed over all power (or price) probes.
    pub freq: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SroaSolution {
    pub allocation: Allocation,
    /// `B_m` per edge.
    pub edge_bandwidth: Vec<f64>,
    pub deadline: f64,
    /// `E_sum + lambda * T_sum` of the returned allocation.
    pub objective: f64,
    pub report: CostReport,
    pub iterations: IterationCounts,
    pub deadline_bracket: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SroaOutcome {
    Solved(Box<SroaSolution>),
    Infeasible(Infeasible),
}

impl SroaOutcome {
    pub fn objective(&self) -> f64 {
        match self {
            SroaOutcome::Solved(s) => s.objective,
            SroaOutcome::Infeasible(_) => f64::INFINITY,
        }
    }

    pub fn solution(&self) -> Option<&SroaSolution> {
        match self {
            SroaOutcome::Solved(s) => Some(s),
            SroaOutcome::Infeasible(_) => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, SroaOutcome::Solved(_))
    }
}

/// Deadline bracket used when [`DeadlineBounds::Analytic`] is selected.
pub fn analytic_deadline_bounds(c: &DerivedCoefficients) -> (f64, f64) {
    let low = c
        .users
        .iter()
        .map(|u| {
            u.cloud_delay
                + u.workload / u.f_max
                + LN_2 * u.upload_bits / u.snr_scale(u.p_max, c.noise_density)
        })
        .fold(0.0, f64::max);
    let share = c.total_bandwidth / c.users.len() as f64;
    let equal = c
        .users
        .iter()
        .map(|u| u.latency(share, u.f_max, u.p_max, c.noise_density))
        .fold(0.0, f64::max);
    (low, 10.0 * equal)
}

/// Solve the allocation problem for a fixed assignment.
pub fn sroa(
    scenario: &Scenario,
    assignment: &Assignment,
    cfg: &SolverConfig,
) -> Result<SroaOutcome> {
    cfg.validate()?;
    let c = DerivedCoefficients::new(scenario, assignment, cfg)?;
    let (t_low0, t_up0) = match cfg.deadline_bounds {
        DeadlineBounds::Analytic => analytic_deadline_bounds(&c),
        DeadlineBounds::Explicit { low, up } => (low, up),
    };
    let lambda = c.importance_weight;
    let mut counts = IterationCounts::default();
    let probe = |t: f64, counts: &mut IterationCounts| -> Option<(f64, PowerSolution)> {
        match optimize_p(t, &c, cfg) {
            Ok(s) => {
                counts.power += s.iterations;
                counts.freq += s.freq_iterations;
                Some((s.energy + c.cloud_energy + lambda * t, s))
            }
            Err(_) => None,
        }
    };

    let rel_gap = |lo: f64, hi: f64| (hi - lo) / hi;
    let mut best: Option<(f64, f64, PowerSolution)> = None;
    let keep = |best: &mut Option<(f64, f64, PowerSolution)>, t: f64, r: f64, s: PowerSolution| {
        if best.as_ref().is_none_or(|(_, br, _)| r < *br) {
            *best = Some((t, r, s));
        }
    };

    match cfg.deadline_search {
        DeadlineSearch::Descent => {
            let (mut lo, mut hi) = (t_low0, t_up0);
            let mut r_star = f64::INFINITY;
            while rel_gap(lo, hi) > cfg.deadline_tol && counts.deadline < cfg.max_iters {
                counts.deadline += 1;
                let t = 0.5 * (lo + hi);
                match probe(t, &mut counts) {
                    Some((r, s)) if s.bandwidth_sum <= c.total_bandwidth => {
                        if r > r_star {
                            lo = t;
                        } else {
                            hi = t;
                            r_star = r;
                        }
                        keep(&mut best, t, r, s);
                    }
                    _ => lo = t,
                }
            }
        }
        DeadlineSearch::Golden => {
            match probe(t_up0, &mut counts) {
                Some((r, s)) => keep(&mut best, t_up0, r, s),
                None => {
                    return Ok(SroaOutcome::Infeasible(Infeasible::NoFeasibleDeadline {
                        low: t_low0,
                        up: t_up0,
                    }))
                }
            }
            let mut golden_counts = IterationCounts::default();
            let (_, found, n) = golden_section(
                t_low0,
                t_up0,
                |a, b| rel_gap(a, b) <= cfg.deadline_tol,
                cfg.max_iters,
                |t| probe(t, &mut golden_counts).map(|(r, s)| (r, (t, s))),
            );
            counts.deadline += n;
            counts.power += golden_counts.power;
            counts.freq += golden_counts.freq;
            if let Some((r, (t, s))) = found {
                keep(&mut best, t, r, s);
            }
        }
    }

    let Some((deadline, _, sol)) = best else {
        return Ok(SroaOutcome::Infeasible(Infeasible::NoFeasibleDeadline {
            low: t_low0,
            up: t_up0,
        }));
    };
    let allocation = Allocation {
        bandwidth: sol.bandwidth,
        cpu_freq: sol.cpu_freq,
        power: sol.power,
    };
    let report = total_cost(scenario, assignment, &allocation)?;
    Ok(SroaOutcome::Solved(Box::new(SroaSolution {
        edge_bandwidth: allocation.edge_bandwidth(assignment),
        allocation,
        deadline,
        objective: report.objective,
        report,
        iterations: counts,
        deadline_bracket: (t_low0, t_up0),
    })))
}
