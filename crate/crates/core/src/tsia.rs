//! Two-stage user-assignment search.
//!
//! Each step moves one user from the *costly* edge (largest weighted cost,
//! among edges that still serve someone) to the *economic* edge (smallest
//! weighted cost, empty edges included) and re-solves the allocation. Stage 1
//! moves the user holding the most bandwidth; stage 2 restarts from the best
//! pattern found so far and moves the user holding the least. A stage ends
//! as soon as it produces a pattern it has already visited.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cost::{total_cost, Allocation};
use crate::error::{invalid, Error, Result};
use crate::io::extended_f64;
use crate::scenario::{geo_initial_assignment, Assignment, Scenario};
use crate::sroa::{sroa, SolverConfig, SroaOutcome, SroaSolution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsiaConfig {
    pub solver: SolverConfig,
    /// Cap on moves per stage.
    pub max_iters: usize,
}

impl Default for TsiaConfig {
    fn default() -> Self {
        TsiaConfig {
            solver: SolverConfig::default(),
            max_iters: 500,
        }
    }
}

impl TsiaConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.max_iters == 0 {
            return Err(invalid("tsia max_iters must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Move the costly user (largest bandwidth).
    Costly,
    /// Move the economic user (smallest bandwidth).
    Economic,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Costly => 1,
            Stage::Economic => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The stage reached a pattern it had already visited (a degenerate
    /// cost vector that allows no move counts as revisiting the current one).
    PatternRepeat,
    IterationCap,
    /// Only one edge: the initial pattern is the only one.
    SingleEdge,
}

/// One evaluated assignment pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsiaStep {
    /// Strictly increasing over the whole run; `0` is the initial pattern.
    pub q: usize,
    pub stage: Stage,
    /// `(from, to, user)` of the move that produced this pattern.
    pub m_plus: Option<usize>,
    pub m_minus: Option<usize>,
    pub user: Option<usize>,
    /// Objective of this pattern (`inf` if the allocation problem was infeasible).
    #[serde(with = "extended_f64")]
    pub objective: f64,
    /// Best objective seen so far, this step included.
    #[serde(with = "extended_f64")]
    pub best_objective: f64,
    pub assignment: Assignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    /// Moves attempted, including the one that revisited a pattern.
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsiaResult {
    pub assignment: Assignment,
    #[serde(with = "extended_f64")]
    pub objective: f64,
    /// Allocation of the best pattern; `None` if every pattern was infeasible.
    pub solution: Option<SroaSolution>,
    #[serde(with = "extended_f64")]
    pub initial_objective: f64,
    pub trace: Vec<TsiaStep>,
    pub stages: Vec<StageSummary>,
    /// Distinct patterns handed to the allocation solver.
    pub evaluations: usize,
}

/// `(m+, m-)`: the costliest occupied edge and the cheapest edge overall,
/// ties to the lowest index. `None` when no move is possible (no occupied
/// edge, or both picks coincide).
pub fn costly_economic_servers(edge_costs: &[f64], occupied: &[bool]) -> Option<(usize, usize)> {
    let mut plus: Option<usize> = None;
    let mut minus: Option<usize> = None;
    for (m, &r) in edge_costs.iter().enumerate() {
        if occupied[m] && plus.is_none_or(|p| r > edge_costs[p]) {
            plus = Some(m);
        }
        if minus.is_none_or(|p| r < edge_costs[p]) {
            minus = Some(m);
        }
    }
    match (plus, minus) {
        (Some(p), Some(m)) if p != m => Some((p, m)),
        _ => None,
    }
}

/// `(n+, n-)`: the users with the largest and smallest bandwidth in `group`,
/// ties to the lowest user index.
pub fn costly_economic_users(bandwidth: &[f64], group: &[usize]) -> Result<(usize, usize)> {
    let mut users = group.to_vec();
    users.sort_unstable();
    let (&first, rest) = users.split_first().ok_or(Error::EmptyGroup)?;
    let (mut plus, mut minus) = (first, first);
    for &n in rest {
        if bandwidth[n] > bandwidth[plus] {
            plus = n;
        }
        if bandwidth[n] < bandwidth[minus] {
            minus = n;
        }
    }
    Ok((plus, minus))
}

struct Evaluation {
    objective: f64,
    /// Bandwidth used to pick the user to move.
    bandwidth: Vec<f64>,
    edge_costs: Vec<f64>,
    solution: Option<SroaSolution>,
}

fn evaluate(
    scenario: &Scenario,
    assignment: &Assignment,
    cfg: &SolverConfig,
) -> Result<Evaluation> {
    match sroa(scenario, assignment, cfg)? {
        SroaOutcome::Solved(sol) => Ok(Evaluation {
            objective: sol.objective,
            bandwidth: sol.allocation.bandwidth.clone(),
            edge_costs: sol.report.edge_objectives(),
            solution: Some(*sol),
        }),
        SroaOutcome::Infeasible(_) => {
            // Rank edges by what the plain full-resource split would cost.
            let fallback = Allocation::max_resources_equal_share(scenario);
            let report = total_cost(scenario, assignment, &fallback)?;
            Ok(Evaluation {
                objective: f64::INFINITY,
                bandwidth: fallback.bandwidth,
                edge_costs: report.edge_objectives(),
                solution: None,
            })
        }
    }
}

/// Run both stages from the nearest-edge assignment.
pub fn tsia(scenario: &Scenario, cfg: &TsiaConfig) -> Result<TsiaResult> {
    cfg.validate()?;
    scenario.validate()?;
    let initial = geo_initial_assignment(scenario);
    let mut cache: HashMap<Assignment, Evaluation> = HashMap::new();
    cache.insert(initial.clone(), evaluate(scenario, &initial, &cfg.solver)?);
    let r0 = cache[&initial].objective;

    let mut best = (initial.clone(), r0);
    let mut trace = vec![TsiaStep {
        q: 0,
        stage: Stage::Costly,
        m_plus: None,
        m_minus: None,
        user: None,
        objective: r0,
        best_objective: r0,
        assignment: initial.clone(),
    }];
    let mut stages = Vec::new();

    if scenario.n_edges() == 1 {
        for stage in [Stage::Costly, Stage::Economic] {
            stages.push(StageSummary {
                stage,
                iterations: 0,
                termination: Termination::SingleEdge,
            });
        }
    } else {
        for stage in [Stage::Costly, Stage::Economic] {
            let mut current = best.0.clone();
            let mut seen: HashSet<Assignment> = HashSet::from([current.clone()]);
            let mut iterations = 0;
            let termination = loop {
                if iterations >= cfg.max_iters {
                    break Termination::IterationCap;
                }
                iterations += 1;
                let eval = &cache[&current];
                let occupied: Vec<bool> = current.groups.iter().map(|g| !g.is_empty()).collect();
                let Some((from, to)) = costly_economic_servers(&eval.edge_costs, &occupied) else {
                    break Termination::PatternRepeat;
                };
                let (n_plus, n_minus) =
                    costly_economic_users(&eval.bandwidth, &current.groups[from])?;
                let user = match stage {
                    Stage::Costly => n_plus,
                    Stage::Economic => n_minus,
                };
                current.transfer(user, from, to)?;
                if !seen.insert(current.clone()) {
                    break Termination::PatternRepeat;
                }
                if !cache.contains_key(&current) {
                    let e = evaluate(scenario, &current, &cfg.solver)?;
                    cache.insert(current.clone(), e);
                }
                let r = cache[&current].objective;
                if r < best.1 {
                    best = (current.clone(), r);
                }
                trace.push(TsiaStep {
                    q: trace.len(),
                    stage,
                    m_plus: Some(from),
                    m_minus: Some(to),
                    user: Some(user),
                    objective: r,
                    best_objective: best.1,
                    assignment: current.clone(),
                });
            };
            stages.push(StageSummary {
                stage,
                iterations,
                termination,
            });
        }
    }

    let evaluations = cache.len();
    let solution = cache.remove(&best.0).and_then(|e| e.solution);
    Ok(TsiaResult {
        assignment: best.0,
        objective: best.1,
        solution,
        initial_objective: r0,
        trace,
        stages,
        evaluations,
    })
}
