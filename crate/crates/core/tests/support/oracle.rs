//! Brute-force reference solvers. They evaluate the cost model from scratch
//! and never call into the library's solvers.

#![allow(dead_code)]

use hfl_core::{Assignment, Scenario};

/// Per edge-iteration latency and energy of user `n` talking to edge `m`.
pub fn round_cost(s: &Scenario, n: usize, m: usize, b: f64, f: f64, p: f64) -> (f64, f64) {
    let u = &s.users[n];
    let w = f64::from(s.params.local_iters) * u.cycles_per_sample * u.samples as f64;
    let rate = b * (1.0 + s.gains[n][m] * p / (s.params.noise_density * b)).log2();
    let t_com = s.params.model_size / rate;
    (
        w / f + t_com,
        0.5 * s.params.capacitance_coeff * w * f * f + p * t_com,
    )
}

/// Weighted objective for a single user on a single edge.
pub fn single_user_objective(s: &Scenario, b: f64, f: f64, p: f64) -> f64 {
    let i = f64::from(s.params.global_iters);
    let k = f64::from(s.params.edge_iters);
    let (lat, e) = round_cost(s, 0, 0, b, f, p);
    let t_cloud = s.params.model_size / s.edges[0].cloud_rate;
    let e_cloud = s.edges[0].cloud_power * t_cloud;
    i * (k * e + e_cloud) + s.params.importance_weight * i * (t_cloud + k * lat)
}

/// Uniform `k^3` grid over `(0, B] x (0, f_max] x (0, p_max]`.
pub fn grid_single_user(s: &Scenario, k: usize) -> f64 {
    let u = &s.users[0];
    let bt = s.params.total_bandwidth;
    let mut best = f64::INFINITY;
    for i in 1..=k {
        let f = u.f_max * i as f64 / k as f64;
        for j in 1..=k {
            let p = u.p_max * j as f64 / k as f64;
            for l in 1..=k {
                let b = bt * l as f64 / k as f64;
                best = best.min(single_user_objective(s, b, f, p));
            }
        }
    }
    best
}

/// Least energy for one edge iteration of user `n` on edge `m` given bandwidth
/// `b` and a latency budget `tau`. Power is set so the budget is met exactly;
/// frequency is scanned then refined. `None` if the budget cannot be met.
pub fn min_round_energy(
    s: &Scenario,
    n: usize,
    m: usize,
    b: f64,
    tau: f64,
) -> Option<(f64, f64, f64)> {
    let u = &s.users[n];
    let w = f64::from(s.params.local_iters) * u.cycles_per_sample * u.samples as f64;
    let g = s.gains[n][m];
    let n0 = s.params.noise_density;
    let bits = s.params.model_size;
    let energy = |f: f64| -> Option<(f64, f64)> {
        let tc = tau - w / f;
        if tc <= 0.0 {
            return None;
        }
        let p = ((bits / (b * tc)) * std::f64::consts::LN_2).exp_m1() * n0 * b / g;
        if p.is_nan() || p > u.p_max {
            return None;
        }
        Some((0.5 * s.params.capacitance_coeff * w * f * f + p * tc, p))
    };
    let steps = 64;
    let mut best: Option<(f64, f64, f64)> = None;
    let mut best_i = 0;
    for i in 1..=steps {
        let f = u.f_max * i as f64 / steps as f64;
        if let Some((e, p)) = energy(f) {
            if best.is_none_or(|(be, _, _)| e < be) {
                best = Some((e, f, p));
                best_i = i;
            }
        }
    }
    let (mut e0, mut f0, mut p0) = best?;
    let mut lo = u.f_max * (best_i as f64 - 1.0) / steps as f64;
    let mut hi = (u.f_max * (best_i as f64 + 1.0) / steps as f64).min(u.f_max);
    for _ in 0..60 {
        let a = lo + (hi - lo) / 3.0;
        let c = hi - (hi - lo) / 3.0;
        let ea = energy(a).map_or(f64::INFINITY, |x| x.0);
        let ec = energy(c).map_or(f64::INFINITY, |x| x.0);
        if ea <= ec && ea.is_finite() {
            hi = c;
        } else {
            lo = a;
        }
    }
    let f = 0.5 * (lo + hi);
    if let Some((e, p)) = energy(f) {
        if e < e0 {
            e0 = e;
            f0 = f;
            p0 = p;
        }
    }
    Some((e0, f0, p0))
}

/// Objective of two users sharing one edge, minimized over the bandwidth split
/// and the per-iteration latency budget by a coarse grid followed by repeated
/// zooming.
pub fn two_user_oracle(s: &Scenario) -> f64 {
    assert_eq!(s.users.len(), 2);
    assert_eq!(s.edges.len(), 1);
    let i = f64::from(s.params.global_iters);
    let k = f64::from(s.params.edge_iters);
    let bt = s.params.total_bandwidth;
    let lambda = s.params.importance_weight;
    let t_cloud = s.params.model_size / s.edges[0].cloud_rate;
    let e_cloud = s.edges[0].cloud_power * t_cloud;
    let eval = |beta: f64, tau: f64| -> f64 {
        let b0 = beta * bt;
        let b1 = (1.0 - beta) * bt;
        match (
            min_round_energy(s, 0, 0, b0, tau),
            min_round_energy(s, 1, 0, b1, tau),
        ) {
            (Some((e0, ..)), Some((e1, ..))) => {
                i * (k * (e0 + e1) + e_cloud) + lambda * i * (t_cloud + k * tau)
            }
            _ => f64::INFINITY,
        }
    };
    let tau_min = (0..2)
        .map(|n| round_cost(s, n, 0, bt, s.users[n].f_max, s.users[n].p_max).0)
        .fold(0.0, f64::max);
    let (mut ln_lo, mut ln_hi) = (tau_min.ln(), (tau_min * 1e3).ln());
    let (mut be_lo, mut be_hi) = (0.0, 1.0);
    let mut best = f64::INFINITY;
    let mut arg = (0.5, tau_min);
    let coarse = 48;
    for a in 1..coarse {
        let beta = a as f64 / coarse as f64;
        for t in 0..=coarse {
            let tau = (ln_lo + (ln_hi - ln_lo) * t as f64 / coarse as f64).exp();
            let r = eval(beta, tau);
            if r < best {
                best = r;
                arg = (beta, tau);
            }
        }
    }
    let mut wb = (be_hi - be_lo) / coarse as f64;
    let mut wt = (ln_hi - ln_lo) / coarse as f64;
    for _ in 0..40 {
        be_lo = (arg.0 - wb).max(1e-9);
        be_hi = (arg.0 + wb).min(1.0 - 1e-9);
        ln_lo = arg.1.ln() - wt;
        ln_hi = arg.1.ln() + wt;
        let z = 8;
        for a in 0..=z {
            let beta = be_lo + (be_hi - be_lo) * a as f64 / z as f64;
            for t in 0..=z {
                let tau = (ln_lo + (ln_hi - ln_lo) * t as f64 / z as f64).exp();
                let r = eval(beta, tau);
                if r < best {
                    best = r;
                    arg = (beta, tau);
                }
            }
        }
        wb *= 0.6;
        wt *= 0.6;
    }
    best
}

/// Every assignment of `n` users to `m` edges, in lexicographic order of the
/// edge index vector.
pub fn all_assignments(n: usize, m: usize) -> Vec<Assignment> {
    let total = m.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut edge_of = vec![0; n];
            for slot in edge_of.iter_mut().rev() {
                *slot = code % m;
                code /= m;
            }
            Assignment::from_edge_of(&edge_of, m).unwrap()
        })
        .collect()
}

/// `E_sum + lambda * T_sum` of a full allocation, summed by hand.
pub fn objective(s: &Scenario, a: &Assignment, b: &[f64], f: &[f64], p: &[f64]) -> f64 {
    let i = f64::from(s.params.global_iters);
    let k = f64::from(s.params.edge_iters);
    let (mut energy, mut delay) = (0.0, 0.0f64);
    for (m, group) in a.groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let t_cloud = s.params.model_size / s.edges[m].cloud_rate;
        let mut slowest = 0.0f64;
        energy += s.edges[m].cloud_power * t_cloud;
        for &n in group {
            let (lat, e) = round_cost(s, n, m, b[n], f[n], p[n]);
            slowest = slowest.max(lat);
            energy += k * e;
        }
        delay = delay.max(t_cloud + k * slowest);
    }
    i * energy + s.params.importance_weight * i * delay
}
