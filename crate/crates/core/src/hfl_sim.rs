//! Hierarchical federated averaging on small synthetic models.
//!
//! Users run full-batch gradient descent on their own data, edges average
//! their users every `L` local steps (weighted by sample count), and the
//! cloud averages the edges every `K` edge rounds (weighted by the data each
//! edge covers).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scenario::{Assignment, Scenario};

pub type WeightVector = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(1/2D) |X w - y|^2`
    LeastSquares,
    /// Mean logistic loss with labels in `{0, 1}`.
    Logistic,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_squares" | "ls" => Ok(LossKind::LeastSquares),
            "logistic" => Ok(LossKind::Logistic),
            _ => Err(invalid(format!(
                "unknown loss `{s}` (expected least_squares or logistic)"
            ))),
        }
    }
}

/// One user's local dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: LossKind,
    pub dim: usize,
    /// Row-major design matrix, `samples x dim`.
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl SyntheticTask {
    pub fn new(kind: LossKind, dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != dim * targets.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * targets.len(),
                got: features.len(),
            });
        }
        Ok(SyntheticTask {
            kind,
            dim,
            features,
            targets,
        })
    }

    pub fn samples(&self) -> usize {
        self.targets.len()
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features
            .chunks_exact(self.dim)
            .zip(self.targets.iter().copied())
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        Ok(())
    }

    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        self.check_dim(w)?;
        let d = self.samples() as f64;
        if d == 0.0 {
            return Ok(0.0);
        }
        let total: f64 = self
            .rows()
            .map(|(x, y)| {
                let z = dot(x, w);
                match self.kind {
                    LossKind::LeastSquares => 0.5 * (z - y) * (z - y),
                    LossKind::Logistic => softplus(z) - y * z,
                }
            })
            .sum();
        Ok(total / d)
    }

    pub fn gradient(&self, w: &[f64]) -> Result<WeightVector> {
        self.check_dim(w)?;
        let mut g = vec![0.0; self.dim];
        let d = self.samples() as f64;
        if d == 0.0 {
            return Ok(g);
        }
        for (x, y) in self.rows() {
            let z = dot(x, w);
            let r = match self.kind {
                LossKind::LeastSquares => z - y,
                LossKind::Logistic => sigmoid(z) - y,
            };
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += r * xi;
            }
        }
        g.iter_mut().for_each(|gi| *gi /= d);
        Ok(g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Draw one task per entry of `samples` around a shared ground-truth model.
/// Least-squares targets get Gaussian noise of std `noise`; logistic labels
/// are Bernoulli draws of the true model's probabilities.
pub fn generate_tasks(
    seed: u64,
    samples: &[u64],
    dim: usize,
    kind: LossKind,
    noise: f64,
) -> Result<Vec<SyntheticTask>> {
    if dim == 0 {
        return Err(invalid("task dimension must be >= 1"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(invalid("noise must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    samples
        .iter()
        .map(|&d| {
            let d =
                usize::try_from(d).map_err(|_| invalid("sample count does not fit in memory"))?;
            let features: Vec<f64> = (0..d * dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let targets = features
                .chunks_exact(dim)
                .map(|x| {
                    let z = dot(x, &truth);
                    match kind {
                        LossKind::LeastSquares => z + noise * rng.sample::<f64, _>(StandardNormal),
                        LossKind::Logistic => f64::from(u8::from(rng.gen::<f64>() < sigmoid(z))),
                    }
                })
                .collect();
            SyntheticTask::new(kind, dim, features, targets)
        })
        .collect()
}

/// Tasks sized by the scenario's per-user sample counts.
pub fn tasks_for_scenario(
    scenario: &Scenario,
    seed: u64,
    dim: usize,
    kind: LossKind,
    noise: f64,
) -> Result<Vec<SyntheticTask>> {
    let samples: Vec<u64> = scenario.users.iter().map(|u| u.samples).collect();
    generate_tasks(seed, &samples, dim, kind, noise)
}

const DIVERGENCE_FACTOR: f64 = 1e6;

/// `steps` full-batch gradient steps with learning rate `lr`.
pub fn local_update(w: &[f64], task: &SyntheticTask, steps: u32, lr: f64) -> Result<WeightVector> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(invalid(format!("learning rate must be > 0, got {lr}")));
    }
    task.check_dim(w)?;
    let initial = norm(w);
    let limit = DIVERGENCE_FACTOR * initial.max(1.0);
    let mut w = w.to_vec();
    for _ in 0..steps {
        let g = task.gradient(&w)?;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= lr * gi;
        }
        let current = norm(&w);
        if !(current <= limit) {
            return Err(Error::Divergence { initial, current });
        }
    }
    Ok(w)
}

fn weighted_average(weights: &[WeightVector], sizes: &[u64]) -> Result<WeightVector> {
    if weights.len() != sizes.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: sizes.len(),
        });
    }
    let first = weights.first().ok_or(Error::EmptyGroup)?;
    let dim = first.len();
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    if !(total > 0.0) {
        return Err(invalid("aggregation weights sum to zero"));
    }
    let mut out = vec![0.0; dim];
    for (w, &s) in weights.iter().zip(sizes) {
        if w.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: w.len(),
            });
        }
        let share = s as f64 / total;
        for (o, x) in out.iter_mut().zip(w) {
            *o += share * x;
        }
    }
    Ok(out)
}

/// Sample-weighted average of the user models of one edge.
pub fn edge_aggregate(weights: &[WeightVector], samples: &[u64]) -> Result<WeightVector> {
    weighted_average(weights, samples)
}

/// Average of edge models weighted by the samples each edge covers.
pub fn global_aggregate(
    edge_weights: &[WeightVector],
    edge_samples: &[u64],
) -> Result<WeightVector> {
    weighted_average(edge_weights, edge_samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HflConfig {
    pub global_iters: u32,
    pub edge_iters: u32,
    pub local_iters: u32,
    pub learning_rate: f64,
}

impl HflConfig {
    pub fn from_scenario(scenario: &Scenario, learning_rate: f64) -> Self {
        let p = &scenario.params;
        HflConfig {
            global_iters: p.global_iters,
            edge_iters: p.edge_iters,
            local_iters: p.local_iters,
            learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HflRun {
    /// Sample-weighted global loss after each global aggregation.
    pub losses: Vec<f64>,
    pub weights: WeightVector,
}

/// Sample-weighted mean loss over all tasks.
pub fn global_loss(tasks: &[SyntheticTask], w: &[f64]) -> Result<f64> {
    let total: f64 = tasks.iter().map(|t| t.samples() as f64).sum();
    let mut acc = 0.0;
    for t in tasks {
        acc += t.samples() as f64 * t.loss(w)?;
    }
    Ok(if total > 0.0 { acc / total } else { 0.0 })
}

fn check_tasks(tasks: &[SyntheticTask], initial: &[f64]) -> Result<()> {
    if tasks.is_empty() {
        return Err(invalid("no tasks"));
    }
    for t in tasks {
        t.check_dim(initial)?;
    }
    Ok(())
}

/// Three-tier training: `global_iters` cloud rounds of `edge_iters` edge
/// rounds of `local_iters` local steps. Empty edges take no part.
pub fn run_hfl(
    tasks: &[SyntheticTask],
    assignment: &Assignment,
    cfg: &HflConfig,
    initial: &[f64],
) -> Result<HflRun> {
    check_tasks(tasks, initial)?;
    assignment.validate(tasks.len(), assignment.n_edges())?;
    let samples: Vec<u64> = tasks.iter().map(|t| t.samples() as u64).collect();
    let groups: Vec<&Vec<usize>> = assignment.groups.iter().filter(|g| !g.is_empty()).collect();
    let edge_samples: Vec<u64> = groups
        .iter()
        .map(|g| g.iter().map(|&n| samples[n]).sum())
        .collect();

    let mut global = initial.to_vec();
    let mut losses = Vec::with_capacity(cfg.global_iters as usize);
    for _ in 0..cfg.global_iters {
        let mut edge_models = Vec::with_capacity(groups.len());
        for group in &groups {
            let mut edge = global.clone();
            for _ in 0..cfg.edge_iters {
                let locals = group
                    .iter()
                    .map(|&n| local_update(&edge, &tasks[n], cfg.local_iters, cfg.learning_rate))
                    .collect::<Result<Vec<_>>>()?;
                let sizes: Vec<u64> = group.iter().map(|&n| samples[n]).collect();
                edge = edge_aggregate(&locals, &sizes)?;
            }
            edge_models.push(edge);
        }
        global = global_aggregate(&edge_models, &edge_samples)?;
        losses.push(global_loss(tasks, &global)?);
    }
    Ok(HflRun {
        losses,
        weights: global,
    })
}

/// Two-tier federated averaging: every round, all users start from the
/// global model, take `local_iters` steps, and are averaged by sample count.
pub fn run_fedavg(
    tasks: &[SyntheticTask],
    rounds: u32,
    local_iters: u32,
    lr: f64,
    initial: &[f64],
) -> Result<HflRun> {
    check_tasks(tasks, initial)?;
    let samples: Vec<u64> = tasks.iter().map(|t| t.samples() as u64).collect();
    let mut global = initial.to_vec();
    let mut losses = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let locals = tasks
            .iter()
            .map(|t| local_update(&global, t, local_iters, lr))
            .collect::<Result<Vec<_>>>()?;
        global = weighted_average(&locals, &samples)?;
        losses.push(global_loss(tasks, &global)?);
    }
    Ok(HflRun {
        losses,
        weights: global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(kind: LossKind, seed: u64) -> SyntheticTask {
        generate_tasks(seed, &[40], 4, kind, 0.1).unwrap().remove(0)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for kind in [LossKind::LeastSquares, LossKind::Logistic] {
            let t = task(kind, 3);
            let w = vec![0.3, -0.2, 0.5, 0.1];
            let g = t.gradient(&w).unwrap();
            for i in 0..w.len() {
                let h = 1e-6;
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[i] += h;
                wm[i] -= h;
                let fd = (t.loss(&wp).unwrap() - t.loss(&wm).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3),
                    "{kind:?} {i}: {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn stationary_point_is_fixed() {
        // single sample x = [1], y = 2: w = [2] has zero gradient
        let t = SyntheticTask::new(LossKind::LeastSquares, 1, vec![1.0], vec![2.0]).unwrap();
        assert_eq!(local_update(&[2.0], &t, 10, 0.5).unwrap(), vec![2.0]);
    }

    #[test]
    fn unit_quadratic_converges_in_one_step() {
        let t = SyntheticTask::new(LossKind::LeastSquares, 1, vec![1.0], vec![-3.5]).unwrap();
        assert_eq!(local_update(&[10.0], &t, 1, 1.0).unwrap(), vec![-3.5]);
    }

    #[test]
    fn divergence_is_detected() {
        let t = task(LossKind::LeastSquares, 1);
        let r = local_update(&[0.0; 4], &t, 200, 50.0);
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
        assert!(local_update(&[0.0; 4], &t, 1, 0.0).is_err());
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(
            edge_aggregate(&[vec![1.0], vec![3.0]], &[1, 3]).unwrap(),
            vec![2.5]
        );
        let same = vec![vec![0.7, -1.0]; 3];
        assert_eq!(edge_aggregate(&same, &[5, 1, 9]).unwrap(), vec![0.7, -1.0]);
        let mean = global_aggregate(&[vec![1.0, 2.0], vec![3.0, 6.0]], &[4, 4]).unwrap();
        assert_eq!(mean, vec![2.0, 4.0]);
        assert_eq!(
            global_aggregate(&[vec![1.5, 2.0]], &[9]).unwrap(),
            vec![1.5, 2.0]
        );
        assert!(matches!(
            edge_aggregate(&[vec![1.0], vec![1.0, 2.0]], &[1, 1]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(edge_aggregate(&[], &[]), Err(Error::EmptyGroup)));
    }

    #[test]
    fn zero_like_learning_rate_keeps_weights() {
        let tasks = generate_tasks(2, &[10, 12, 9], 3, LossKind::LeastSquares, 0.1).unwrap();
        let a = Assignment::from_edge_of(&[0, 1, 1], 2).unwrap();
        let cfg = HflConfig {
            global_iters: 5,
            edge_iters: 2,
            local_iters: 2,
            learning_rate: 1e-300,
        };
        let w0 = vec![0.25, -0.5, 1.0];
        assert_eq!(run_hfl(&tasks, &a, &cfg, &w0).unwrap().weights, w0);
    }

    #[test]
    fn loss_decreases_on_least_squares() {
        let tasks = generate_tasks(4, &[30, 25, 40, 35], 5, LossKind::LeastSquares, 0.05).unwrap();
        let a = Assignment::from_edge_of(&[0, 1, 0, 1], 2).unwrap();
        let cfg = HflConfig {
            global_iters: 80,
            edge_iters: 3,
            local_iters: 2,
            learning_rate: 0.02,
        };
        let run = run_hfl(&tasks, &a, &cfg, &[0.0; 5]).unwrap();
        for pair in run.losses.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn generator_is_seeded() {
        let a = generate_tasks(9, &[5, 6], 3, LossKind::Logistic, 0.0).unwrap();
        assert_eq!(
            a,
            generate_tasks(9, &[5, 6], 3, LossKind::Logistic, 0.0).unwrap()
        );
        assert_ne!(
            a,
            generate_tasks(10, &[5, 6], 3, LossKind::Logistic, 0.0).unwrap()
        );
        assert!(a
            .iter()
            .flat_map(|t| &t.targets)
            .all(|&y| y == 0.0 || y == 1.0));
    }
}
