//! Energy and latency of one full training run for a given assignment and
//! resource allocation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scenario::{Assignment, Scenario, User};

/// Per-user decision variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Uplink bandwidth `b_n` (Hz).
    pub bandwidth: Vec<f64>,
    /// CPU frequency `f_n` (Hz).
    pub cpu_freq: Vec<f64>,
    /// Transmit power `p_n` (W).
    pub power: Vec<f64>,
}

impl Allocation {
    pub fn len(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidth.is_empty()
    }

    /// Every user at `f_max`, `p_max`, with `B` split evenly.
    pub fn max_resources_equal_share(scenario: &Scenario) -> Allocation {
        let n = scenario.n_users();
        let share = scenario.params.total_bandwidth / n as f64;
        Allocation {
            bandwidth: vec![share; n],
            cpu_freq: scenario.users.iter().map(|u| u.f_max).collect(),
            power: scenario.users.iter().map(|u| u.p_max).collect(),
        }
    }

    /// `B_m = sum of b_n over the users of edge m`.
    pub fn edge_bandwidth(&self, assignment: &Assignment) -> Vec<f64> {
        assignment
            .groups
            .iter()
            .map(|g| g.iter().map(|&n| self.bandwidth[n]).sum())
            .collect()
    }

    pub fn total_bandwidth(&self) -> f64 {
        self.bandwidth.iter().sum()
    }

    fn check_len(&self, n_users: usize) -> Result<()> {
        for len in [self.bandwidth.len(), self.cpu_freq.len(), self.power.len()] {
            if len != n_users {
                return Err(Error::DimensionMismatch {
                    expected: n_users,
                    got: len,
                });
            }
        }
        Ok(())
    }

    /// Box constraints, positivity of `b`, and `sum b <= B (1 + rel_tol)`.
    pub fn check_feasible(&self, scenario: &Scenario, rel_tol: f64) -> Result<()> {
        self.check_len(scenario.n_users())?;
        for (n, u) in scenario.users.iter().enumerate() {
            let (b, f, p) = (self.bandwidth[n], self.cpu_freq[n], self.power[n]);
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid(format!("user {n}: bandwidth {b} must be > 0")));
            }
            if !(0.0..=u.f_max).contains(&f) {
                return Err(invalid(format!(
                    "user {n}: cpu frequency {f} outside [0, {}]",
                    u.f_max
                )));
            }
            if !(0.0..=u.p_max).contains(&p) {
                return Err(invalid(format!(
                    "user {n}: power {p} outside [0, {}]",
                    u.p_max
                )));
            }
        }
        let total = self.total_bandwidth();
        let budget = scenario.params.total_bandwidth;
        if total > budget * (1.0 + rel_tol) {
            return Err(invalid(format!(
                "bandwidth {total} exceeds budget {budget}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserCost {
    pub user: usize,
    pub edge: usize,
    /// Per edge iteration.
    pub t_cmp: f64,
    pub e_cmp: f64,
    pub t_com: f64,
    pub e_com: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCost {
    pub edge: usize,
    pub n_users: usize,
    /// `K * max(T_cmp + T_com)` over the group.
    pub t_round: f64,
    /// `K * sum(E_cmp + E_com)` over the group.
    pub e_round: f64,
    pub t_cloud: f64,
    pub e_cloud: f64,
    /// `(E_cloud + E_m) + lambda (T_cloud + T_m)`, per global iteration.
    pub weighted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub users: Vec<UserCost>,
    pub edges: Vec<EdgeCost>,
    /// Per global iteration.
    pub delay: f64,
    pub energy: f64,
    pub t_sum: f64,
    pub e_sum: f64,
    /// `E_sum + lambda * T_sum`.
    pub objective: f64,
}

impl CostReport {
    pub fn edge_objectives(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weighted).collect()
    }
}

/// Computation delay and energy for one edge iteration (`L` local steps).
pub fn local_cost(
    user: &User,
    f: f64,
    local_iters: u32,
    capacitance_coeff: f64,
) -> Result<(f64, f64)> {
    let cycles = f64::from(local_iters) * user.cycles_per_pass();
    if cycles == 0.0 {
        return Ok((0.0, 0.0));
    }
    if f == 0.0 {
        return Err(Error::InfiniteDelay { user: user.id });
    }
    if !(f.is_finite() && f > 0.0) {
        return Err(invalid(format!(
            "user {}: cpu frequency {f} must be > 0",
            user.id
        )));
    }
    Ok((cycles / f, capacitance_coeff / 2.0 * f * f * cycles))
}

/// Shannon rate `b log2(1 + g p / (N0 b))` in bits/s.
pub fn tx_rate(b: f64, p: f64, gain: f64, noise_density: f64) -> f64 {
    b * (gain * p / (noise_density * b)).ln_1p() / std::f64::consts::LN_2
}

/// Upload delay and energy for `bits` at `rate` with transmit power `p`.
pub fn comm_cost(bits: f64, rate: f64, p: f64) -> Result<(f64, f64)> {
    if bits == 0.0 {
        return Ok((0.0, 0.0));
    }
    if !(rate > 0.0) {
        return Err(Error::InfeasibleRate { rate });
    }
    let t = bits / rate;
    Ok((t, p * t))
}

fn user_cost(scenario: &Scenario, alloc: &Allocation, n: usize, edge: usize) -> Result<UserCost> {
    let params = &scenario.params;
    let user = &scenario.users[n];
    let (t_cmp, e_cmp) = local_cost(
        user,
        alloc.cpu_freq[n],
        params.local_iters,
        params.capacitance_coeff,
    )?;
    let b = alloc.bandwidth[n];
    if !(b > 0.0) {
        return Err(invalid(format!("user {n}: bandwidth {b} must be > 0")));
    }
    let rate = tx_rate(
        b,
        alloc.power[n],
        scenario.gain(n, edge),
        params.noise_density,
    );
    let (t_com, e_com) = comm_cost(params.model_size, rate, alloc.power[n])?;
    Ok(UserCost {
        user: n,
        edge,
        t_cmp,
        e_cmp,
        t_com,
        e_com,
    })
}

/// `(T_m, E_m)` for edge `m` over its `K` edge iterations. Empty groups cost
/// nothing.
pub fn edge_round_cost(
    scenario: &Scenario,
    assignment: &Assignment,
    alloc: &Allocation,
    m: usize,
) -> Result<(f64, f64)> {
    alloc.check_len(scenario.n_users())?;
    let k = f64::from(scenario.params.edge_iters);
    let mut t_max: f64 = 0.0;
    let mut e_sum = 0.0;
    for &n in &assignment.groups[m] {
        let c = user_cost(scenario, alloc, n, m)?;
        t_max = t_max.max(c.t_cmp + c.t_com);
        e_sum += c.e_cmp + c.e_com;
    }
    Ok((k * t_max, k * e_sum))
}

/// Full cost breakdown of a run.
pub fn total_cost(
    scenario: &Scenario,
    assignment: &Assignment,
    alloc: &Allocation,
) -> Result<CostReport> {
    alloc.check_len(scenario.n_users())?;
    assignment.validate(scenario.n_users(), scenario.n_edges())?;
    let params = &scenario.params;
    let k = f64::from(params.edge_iters);
    let lambda = params.importance_weight;

    let mut users = Vec::with_capacity(scenario.n_users());
    let mut edges = Vec::with_capacity(scenario.n_edges());
    for (m, group) in assignment.groups.iter().enumerate() {
        let mut t_max: f64 = 0.0;
        let mut e_sum = 0.0;
        for &n in group {
            let c = user_cost(scenario, alloc, n, m)?;
            t_max = t_max.max(c.t_cmp + c.t_com);
            e_sum += c.e_cmp + c.e_com;
            users.push(c);
        }
        let (t_cloud, e_cloud) = if group.is_empty() {
            (0.0, 0.0)
        } else {
            let edge = &scenario.edges[m];
            (
                edge.cloud_delay(params.model_size),
                edge.cloud_energy(params.model_size),
            )
        };
        let (t_round, e_round) = (k * t_max, k * e_sum);
        edges.push(EdgeCost {
            edge: m,
            n_users: group.len(),
            t_round,
            e_round,
            t_cloud,
            e_cloud,
            weighted: (e_cloud + e_round) + lambda * (t_cloud + t_round),
        });
    }
    users.sort_by_key(|c| c.user);

    let delay = edges
        .iter()
        .map(|e| e.t_cloud + e.t_round)
        .fold(0.0, f64::max);
    let energy: f64 = edges.iter().map(|e| e.e_cloud + e.e_round).sum();
    let iters = f64::from(params.global_iters);
    let (t_sum, e_sum) = (iters * delay, iters * energy);
    Ok(CostReport {
        users,
        edges,
        delay,
        energy,
        t_sum,
        e_sum,
        objective: e_sum + lambda * t_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, geo_initial_assignment, GeneratorConfig};
    use proptest::prelude::*;

    fn user(c: f64, d: u64) -> User {
        User {
            id: 0,
            samples: d,
            cycles_per_sample: c,
            f_max: 5e9,
            p_max: 0.2,
            position: [0.0; 2],
        }
    }

    #[test]
    fn local_cost_examples() {
        let (t, _) = local_cost(&user(2e4, 1000), 1e9, 5, 2e-28).unwrap();
        assert!((t - 0.1).abs() < 1e-15);
        let (_, e) = local_cost(&user(1e4, 1000), 1e9, 5, 2e-28).unwrap();
        assert!((e - 5e-3).abs() < 1e-15);
        assert_eq!(
            local_cost(&user(1e4, 0), 1e9, 5, 2e-28).unwrap(),
            (0.0, 0.0)
        );
        assert!(matches!(
            local_cost(&user(1e4, 10), 0.0, 5, 2e-28),
            Err(Error::InfiniteDelay { .. })
        ));
        assert!(matches!(
            local_cost(&user(1e4, 10), -1.0, 5, 2e-28),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn tx_rate_examples() {
        assert_eq!(tx_rate(1e5, 0.0, 1.0, 1.0), 0.0);
        // SNR exactly 1
        assert!((tx_rate(1e5, 1e5, 1.0, 1.0) - 1e5).abs() < 1e-9);
        // g p / N0 = 3e5 with b = 1e5 gives SNR 3
        assert!((tx_rate(1e5, 3e5, 1.0, 1.0) - 2e5).abs() < 1e-9);
    }

    #[test]
    fn comm_cost_examples() {
        assert_eq!(comm_cost(0.0, 0.0, 0.1).unwrap(), (0.0, 0.0));
        let (t, e) = comm_cost(1e6, 2e5, 0.1).unwrap();
        assert!((t - 5.0).abs() < 1e-15);
        assert!((e - 0.5).abs() < 1e-15);
        assert!(matches!(
            comm_cost(1.0, 0.0, 0.1),
            Err(Error::InfeasibleRate { .. })
        ));
    }

    fn tiny() -> (Scenario, Assignment, Allocation) {
        let s = generate_scenario(11, 6, 3, &GeneratorConfig::default()).unwrap();
        let a = geo_initial_assignment(&s);
        let alloc = Allocation::max_resources_equal_share(&s);
        (s, a, alloc)
    }

    /// Straight-line evaluation of the whole objective, written without any
    /// of the helpers above.
    fn oracle_objective(s: &Scenario, a: &Assignment, al: &Allocation) -> f64 {
        let p = &s.params;
        let (i, k, l) = (
            p.global_iters as f64,
            p.edge_iters as f64,
            p.local_iters as f64,
        );
        let mut energy = 0.0;
        let mut delay: f64 = 0.0;
        for (m, g) in a.groups.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let mut slowest: f64 = 0.0;
            for &n in g {
                let u = &s.users[n];
                let cyc = l * u.cycles_per_sample * u.samples as f64;
                let snr = s.gains[n][m] * al.power[n] / (p.noise_density * al.bandwidth[n]);
                let rate = al.bandwidth[n] * (1.0 + snr).log2();
                let tc = p.model_size / rate;
                energy += k
                    * (p.capacitance_coeff / 2.0 * al.cpu_freq[n].powi(2) * cyc + al.power[n] * tc);
                slowest = slowest.max(cyc / al.cpu_freq[n] + tc);
            }
            let tcl = p.model_size / s.edges[m].cloud_rate;
            energy += s.edges[m].cloud_power * tcl;
            delay = delay.max(tcl + k * slowest);
        }
        i * energy + p.importance_weight * i * delay
    }

    #[test]
    fn total_cost_matches_oracle() {
        let (s, a, alloc) = tiny();
        let r = total_cost(&s, &a, &alloc).unwrap();
        let want = oracle_objective(&s, &a, &alloc);
        assert!(
            (r.objective - want).abs() <= 1e-12 * want,
            "{} vs {want}",
            r.objective
        );
    }

    #[test]
    fn single_edge_delay_and_zero_lambda() {
        let (s, _, alloc) = tiny();
        let s = s.with_importance_weight(1.0);
        let a = Assignment {
            groups: vec![(0..6).collect(), vec![], vec![]],
        };
        let r = total_cost(&s, &a, &alloc).unwrap();
        assert_eq!(r.delay, r.edges[0].t_cloud + r.edges[0].t_round);
        assert_eq!(r.edges[1].weighted, 0.0);
        assert_eq!(r.edges[2].e_cloud, 0.0);

        let mut s0 = s.clone();
        s0.params.importance_weight = f64::MIN_POSITIVE;
        let r0 = total_cost(&s0, &a, &alloc).unwrap();
        assert!((r0.objective - r0.e_sum).abs() <= 1e-12 * r0.e_sum);
    }

    #[test]
    fn edge_round_cost_examples() {
        let (mut s, _, mut alloc) = tiny();
        s.params.edge_iters = 5;
        // Two users with per-round delays of exactly 1 s and 3 s: zero-size
        // model, frequency chosen to hit the delay.
        s.params.model_size = 0.0;
        for (n, secs) in [(0usize, 1.0), (1, 3.0)] {
            alloc.cpu_freq[n] = s.params.local_iters as f64 * s.users[n].cycles_per_pass() / secs;
        }
        let a = Assignment {
            groups: vec![vec![0, 1], vec![2, 3, 4, 5], vec![]],
        };
        let (t, _) = edge_round_cost(&s, &a, &alloc, 0).unwrap();
        assert!((t - 15.0).abs() < 1e-12);
        assert_eq!(edge_round_cost(&s, &a, &alloc, 2).unwrap(), (0.0, 0.0));

        let single = Assignment {
            groups: vec![vec![0], vec![1, 2, 3, 4, 5], vec![]],
        };
        let (t, _) = edge_round_cost(&s, &single, &alloc, 0).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
    }

    #[test]
    fn energy_sum_decomposes_over_edges() {
        let (s, a, alloc) = tiny();
        let r = total_cost(&s, &a, &alloc).unwrap();
        let parts: f64 = r.edges.iter().map(|e| e.e_cloud + e.e_round).sum();
        assert!((r.e_sum - s.params.global_iters as f64 * parts).abs() <= 1e-12 * r.e_sum);
    }

    proptest! {
        #[test]
        fn objective_monotone_in_lambda(l1 in 1e-3f64..1e3, l2 in 1e-3f64..1e3) {
            let (s, a, alloc) = tiny();
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let r_lo = total_cost(&s.with_importance_weight(lo), &a, &alloc).unwrap();
            let r_hi = total_cost(&s.with_importance_weight(hi), &a, &alloc).unwrap();
            prop_assert!(r_lo.objective <= r_hi.objective);
        }

        #[test]
        fn higher_frequency_trades_time_for_energy(scale in 0.05f64..1.0) {
            let (s, a, hi) = tiny();
            let mut lo = hi.clone();
            lo.cpu_freq.iter_mut().for_each(|f| *f *= scale);
            let r_lo = total_cost(&s, &a, &lo).unwrap();
            let r_hi = total_cost(&s, &a, &hi).unwrap();
            for (u_lo, u_hi) in r_lo.users.iter().zip(&r_hi.users) {
                prop_assert!(u_hi.t_cmp <= u_lo.t_cmp);
                prop_assert!(u_hi.e_cmp >= u_lo.e_cmp);
            }
        }

        #[test]
        fn relabeling_within_group_is_invariant(seed in 0u64..50) {
            let (s, a, mut alloc) = tiny();
            alloc.cpu_freq.iter_mut().enumerate().for_each(|(n, f)| *f *= 0.3 + 0.1 * ((n as u64 + seed) % 7) as f64);
            let base = total_cost(&s, &a, &alloc).unwrap();
            let mut reordered = a.clone();
            for g in &mut reordered.groups {
                g.reverse();
            }
            // Reversed groups are no longer sorted, but describe the same partition.
            let r = total_cost(&s, &reordered, &alloc).unwrap();
            prop_assert!((r.objective - base.objective).abs() <= 1e-12 * base.objective);
        }
    }
}
