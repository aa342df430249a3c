//! Optimizer comparisons outside diffusion: analytic test functions and a
//! small tree-embedding task in the Poincaré disk.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{poincare_distance, poincare_distance_grad, project_in_place, ParamTensor};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::records::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// `Σ θᵢ²`
    Quadratic,
    /// `Σ 100(θᵢ₊₁ − θᵢ²)² + (1 − θᵢ)²`
    Rosenbrock,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Rosenbrock => "rosenbrock",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ProblemKind::Quadratic),
            "rosenbrock" => Ok(ProblemKind::Rosenbrock),
            other => Err(Error::usage(format!(
                "unknown problem `{other}` (expected quadratic or rosenbrock)"
            ))),
        }
    }
}

pub fn quadratic(x: &[f64]) -> (f64, Vec<f64>) {
    (x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect())
}

pub fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() < 2 {
        return Err(Error::usage(format!(
            "rosenbrock needs dim >= 2, got {}",
            x.len()
        )));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() - 1 {
        let a = x[i + 1] - x[i] * x[i];
        let b = 1.0 - x[i];
        value += 100.0 * a * a + b * b;
        grad[i] += -400.0 * x[i] * a - 2.0 * b;
        grad[i + 1] += 200.0 * a;
    }
    Ok((value, grad))
}

/// An objective with a fixed start point.
#[derive(Debug, Clone, PartialEq)]
pub struct TestProblem {
    kind: ProblemKind,
    start: Vec<f64>,
}

impl TestProblem {
    /// Default start: every coordinate `0.5/√dim` for the quadratic (norm
    /// 0.5) and the origin for Rosenbrock, so both begin inside the ball.
    pub fn new(kind: ProblemKind, dim: usize) -> Result<Self> {
        let start = match kind {
            ProblemKind::Quadratic => vec![0.5 / (dim as f64).sqrt(); dim],
            ProblemKind::Rosenbrock => vec![0.0; dim],
        };
        Self::with_start(kind, start)
    }

    pub fn with_start(kind: ProblemKind, start: Vec<f64>) -> Result<Self> {
        let min_dim = match kind {
            ProblemKind::Quadratic => 1,
            ProblemKind::Rosenbrock => 2,
        };
        if start.len() < min_dim {
            return Err(Error::usage(format!(
                "{kind} needs dim >= {min_dim}, got {}",
                start.len()
            )));
        }
        if start.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("start point is not finite"));
        }
        Ok(Self { kind, start })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.as_str()
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    /// Both problems have global minimum 0.
    pub fn optimum_value(&self) -> f64 {
        0.0
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::usage(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                x.len()
            )));
        }
        match self.kind {
            ProblemKind::Quadratic => Ok(quadratic(x)),
            ProblemKind::Rosenbrock => rosenbrock(x),
        }
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(x).map(|(v, _)| v)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluate(x).map(|(_, g)| g)
    }
}

/// Objective values of one optimizer run, `values[k-1] = f(θ_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub label: String,
    pub values: Vec<f64>,
    /// `‖θ_k‖` alongside each value.
    pub norms: Vec<f64>,
    pub wall_ms: Vec<u64>,
    /// Set when the run hit a non-finite value and was cut short.
    pub diverged: bool,
    pub final_params: Vec<f64>,
}

impl Trajectory {
    /// One record per step; `metric` holds the parameter norm.
    pub fn to_records(&self, run_id: &str, seed: u64) -> Vec<RunRecord> {
        self.values
            .iter()
            .zip(&self.norms)
            .zip(&self.wall_ms)
            .enumerate()
            .map(|(k, ((v, n), ms))| RunRecord {
                run_id: run_id.to_string(),
                config_label: self.label.clone(),
                epoch: k as u64 + 1,
                loss: *v,
                metric: Some(*n),
                wall_ms: *ms,
                seed,
            })
            .collect()
    }
}

/// Run every labelled optimizer from the problem's start point for `steps`
/// steps. The problems are deterministic, so `seed` is carried through to
/// the records only.
///
/// Hyperbolic optimizers see the start point after registration, which
/// changes it only when it lies outside the ball.
pub fn run_comparison(
    problem: &TestProblem,
    configs: &[(String, OptimizerConfig)],
    steps: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let _ = seed;
    for (label, c) in configs {
        c.validate()
            .map_err(|e| Error::usage(format!("config `{label}`: {e}")))?;
    }
    configs
        .iter()
        .map(|(label, config)| run_single(problem, label, config, steps))
        .collect()
}

fn run_single(
    problem: &TestProblem,
    label: &str,
    config: &OptimizerConfig,
    steps: usize,
) -> Result<Trajectory> {
    let start = Instant::now();
    let mut opt = Optimizer::new(*config)?;
    let mut params = vec![ParamTensor::from_vec(problem.start().to_vec())];
    opt.register(&mut params);
    let mut traj = Trajectory {
        label: label.to_string(),
        values: Vec::with_capacity(steps),
        norms: Vec::with_capacity(steps),
        wall_ms: Vec::with_capacity(steps),
        diverged: false,
        final_params: params[0].data.clone(),
    };
    let (_, mut grad) = problem.evaluate(&params[0].data)?;
    for _ in 0..steps {
        let g = vec![ParamTensor::from_vec(grad)];
        match opt.step(&mut params, &g) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient { .. }) | Err(Error::Domain(_)) => {
                traj.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        let (value, next) = problem.evaluate(&params[0].data)?;
        if !value.is_finite() || params[0].data.iter().any(|v| !v.is_finite()) {
            traj.diverged = true;
            break;
        }
        traj.values.push(value);
        traj.norms.push(params[0].norm());
        traj.wall_ms.push(start.elapsed().as_millis() as u64);
        traj.final_params.clone_from(&params[0].data);
        grad = next;
    }
    Ok(traj)
}

pub const TREE_EMBED_DIM: usize = 2;
pub const DEFAULT_NEGATIVES: usize = 5;
/// Initial embeddings are drawn uniformly from the disk of this radius.
pub const INIT_RADIUS: f64 = 1e-3;

/// A rooted tree whose nodes are embedded in the Poincaré disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeTask {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    negatives: usize,
    adjacency: Vec<Vec<usize>>,
}

impl TreeTask {
    /// Complete `branching`-ary tree with `depth` levels below the root.
    pub fn balanced(branching: usize, depth: usize) -> Result<Self> {
        if branching == 0 && depth > 0 {
            return Err(Error::usage("branching must be positive"));
        }
        let mut edges = Vec::new();
        let mut level = vec![0usize];
        let mut next_id = 1;
        for _ in 0..depth {
            let mut next = Vec::with_capacity(level.len() * branching);
            for &p in &level {
                for _ in 0..branching {
                    edges.push((p, next_id));
                    next.push(next_id);
                    next_id += 1;
                }
            }
            level = next;
        }
        Self::from_edges(next_id, edges)
    }

    /// Validate that `edges` form a tree over `nodes` nodes.
    pub fn from_edges(nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::usage("a tree needs at least one node"));
        }
        if edges.len() != nodes - 1 {
            return Err(Error::usage(format!(
                "a tree on {nodes} nodes has {} edges, got {}",
                nodes - 1,
                edges.len()
            )));
        }
        let mut adjacency = vec![Vec::new(); nodes];
        for &(a, b) in &edges {
            if a >= nodes || b >= nodes || a == b {
                return Err(Error::usage(format!("invalid edge ({a}, {b})")));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let task = Self {
            nodes,
            edges,
            negatives: DEFAULT_NEGATIVES,
            adjacency,
        };
        if task.hop_distances_from(0).iter().any(|d| d.is_none()) {
            return Err(Error::usage("edge list is not connected"));
        }
        Ok(task)
    }

    pub fn with_negatives(mut self, negatives: usize) -> Self {
        self.negatives = negatives;
        self
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn negatives(&self) -> usize {
        self.negatives
    }

    pub fn embed_dim(&self) -> usize {
        TREE_EMBED_DIM
    }

    fn hop_distances_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes];
        dist[src] = Some(0);
        let mut queue = std::collections::VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// All-pairs hop distances, row-major `nodes × nodes`.
    pub fn hop_distances(&self) -> Vec<usize> {
        (0..self.nodes)
            .flat_map(|s| self.hop_distances_from(s).into_iter().map(|d| d.unwrap_or(0)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResult {
    /// Row-major `nodes × 2`.
    pub embeddings: Vec<f64>,
    /// Mean contrastive loss per epoch, before that epoch's update.
    pub losses: Vec<f64>,
    pub distortion: f64,
}

/// Mean relative distortion `|s·d_E − d_T| / d_T` over node pairs, with `s`
/// the least-squares scale mapping embedding distances onto hop distances.
pub fn mean_distortion(task: &TreeTask, embeddings: &[f64]) -> Result<f64> {
    let n = task.nodes();
    let hops = task.hop_distances();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let de = poincare_distance(&embeddings[2 * i..2 * i + 2], &embeddings[2 * j..2 * j + 2])?;
            pairs.push((hops[i * n + j] as f64, de));
        }
    }
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let num: f64 = pairs.iter().map(|(t, e)| t * e).sum();
    let den: f64 = pairs.iter().map(|(_, e)| e * e).sum();
    let scale = if den > 0.0 { num / den } else { 0.0 };
    Ok(pairs.iter().map(|(t, e)| (scale * e - t).abs() / t).sum::<f64>() / pairs.len() as f64)
}

/// Fit a 2-D Poincaré embedding of the tree.
///
/// For every directed edge `(u, v)` the loss is
/// `−log(e^{−d(u,v)} / (e^{−d(u,v)} + Σ e^{−d(u,n)}))` over `k` negatives
/// `n` drawn uniformly from the nodes not adjacent to `u`. Each epoch
/// averages over all directed edges and takes one optimizer step. Every
/// node is its own parameter tensor; Euclidean optimizers get a projection
/// after each step so distances stay defined.
pub fn embed_tree(
    task: &TreeTask,
    config: &OptimizerConfig,
    epochs: usize,
    seed: u64,
) -> Result<EmbeddingResult> {
    let n = task.nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<ParamTensor> = (0..n)
        .map(|_| {
            let r = INIT_RADIUS * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            ParamTensor::from_vec(vec![r * a.cos(), r * a.sin()])
        })
        .collect();
    let mut opt = Optimizer::new(*config)?;
    opt.register(&mut params);

    let non_adjacent: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            (0..n)
                .filter(|&v| v != u && !task.adjacency[u].contains(&v))
                .collect()
        })
        .collect();
    let mut directed: Vec<(usize, usize)> = task
        .edges()
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();

    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        directed.shuffle(&mut rng);
        let mut grads: Vec<ParamTensor> = params.iter().map(ParamTensor::zeros_like).collect();
        let mut total = 0.0;
        for &(u, v) in &directed {
            let pool = &non_adjacent[u];
            let mut cands = vec![v];
            if !pool.is_empty() {
                cands.extend((0..task.negatives()).map(|_| pool[rng.random_range(0..pool.len())]));
            }
            total += contrastive_term(&params, u, &cands, &mut grads)?;
        }
        let m = directed.len().max(1) as f64;
        let loss = total / m;
        if !loss.is_finite() {
            return Err(Error::EmbeddingDiverged { epoch });
        }
        losses.push(loss);
        for g in &mut grads {
            g.data.iter_mut().for_each(|x| *x /= m);
        }
        opt.step(&mut params, &grads).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::EmbeddingDiverged { epoch },
            other => other,
        })?;
        if !config.hyperbolic() {
            for p in &mut params {
                project_in_place(p, config.proj_eps)?;
            }
        }
    }
    let embeddings: Vec<f64> = params.iter().flat_map(|p| p.data.iter().copied()).collect();
    let distortion = mean_distortion(task, &embeddings)?;
    Ok(EmbeddingResult {
        embeddings,
        losses,
        distortion,
    })
}

/// Softmax cross-entropy with `cands[0]` the positive; accumulates gradients.
fn contrastive_term(
    params: &[ParamTensor],
    u: usize,
    cands: &[usize],
    grads: &mut [ParamTensor],
) -> Result<f64> {
    let mut parts = Vec::with_capacity(cands.len());
    for &c in cands {
        parts.push(poincare_distance_grad(&params[u].data, &params[c].data)?);
    }
    // log-sum-exp of −d for stability
    let dmin = parts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = parts.iter().map(|p| (dmin - p.0).exp()).collect();
    let z: f64 = weights.iter().sum();
    let loss = parts[0].0 - dmin + z.ln();
    for (i, ((_, gu, gc), w)) in parts.iter().zip(&weights).enumerate() {
        // ∂loss/∂d_i = [i == 0] − softmax_i
        let coef = if i == 0 { 1.0 } else { 0.0 } - w / z;
        for k in 0..TREE_EMBED_DIM {
            grads[u].data[k] += coef * gu[k];
            grads[cands[i]].data[k] += coef * gc[k];
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;

    #[test]
    fn rosenbrock_examples() {
        assert_eq!(rosenbrock(&[1.0, 1.0]).unwrap(), (0.0, vec![0.0, 0.0]));
        assert_eq!(rosenbrock(&[0.0, 0.0]).unwrap(), (1.0, vec![-2.0, 0.0]));
        assert!(rosenbrock(&[1.0]).is_err());
    }

    #[test]
    fn sgd_quadratic_closed_form() {
        let p = TestProblem::with_start(ProblemKind::Quadratic, vec![1.0]).unwrap();
        let c = OptimizerConfig::new(OptimizerKind::Sgd, 0.1);
        let t = run_comparison(&p, &[("sgd".into(), c)], 100, 0).unwrap();
        let last = *t[0].values.last().unwrap();
        let expected = 0.8f64.powi(100).powi(2);
        assert!((last - expected).abs() <= 1e-12 * expected, "{last} vs {expected}");
        assert!(t[0].values.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn empty_and_duplicate_runs() {
        let p = TestProblem::new(ProblemKind::Rosenbrock, 2).unwrap();
        let c = OptimizerConfig::new(OptimizerKind::HyperAdamW, 0.01);
        let t = run_comparison(&p, &[("a".into(), c), ("a".into(), c)], 50, 0).unwrap();
        assert_eq!(t[0], t[1]);
        let e = run_comparison(&p, &[("a".into(), OptimizerConfig::new(OptimizerKind::Sgd, 0.01))], 0, 0)
            .unwrap();
        assert!(e[0].values.is_empty() && !e[0].diverged);
    }

    #[test]
    fn divergence_is_flagged() {
        let p = TestProblem::with_start(ProblemKind::Rosenbrock, vec![3.0, -3.0]).unwrap();
        let c = OptimizerConfig::new(OptimizerKind::Sgd, 1.0);
        let t = run_comparison(&p, &[("big".into(), c)], 200, 0).unwrap();
        assert!(t[0].diverged);
        assert!(t[0].values.len() < 200);
    }

    #[test]
    fn tree_construction() {
        let t = TreeTask::balanced(2, 3).unwrap();
        assert_eq!(t.nodes(), 15);
        assert_eq!(t.edges().len(), 14);
        assert_eq!(t.hop_distances()[7], 3);
        assert!(TreeTask::from_edges(3, vec![(0, 1)]).is_err());
        assert!(TreeTask::from_edges(4, vec![(0, 1), (1, 0), (2, 3)]).is_err());
        assert!(TreeTask::from_edges(2, vec![(0, 2)]).is_err());
    }

    #[test]
    fn tiny_trees() {
        let c = OptimizerConfig::new(OptimizerKind::HyperSgd, 0.1);
        let one = TreeTask::balanced(2, 0).unwrap();
        assert_eq!(embed_tree(&one, &c, 10, 0).unwrap().distortion, 0.0);
        let two = TreeTask::from_edges(2, vec![(0, 1)]).unwrap();
        let r = embed_tree(&two, &c, 50, 0).unwrap();
        assert!(r.distortion <= 0.1);
    }
}
