//! Topological node embeddings from graph diffusion.
//!
//! Random walk with restart gives each node `i` a relevance vector
//! `t_i = (1 − p)(I − pÃ)⁻¹ e_i` over all nodes, with `Ã` the
//! column-stochastic adjacency. Sorting each node's vector removes any
//! dependence on node order.

pub mod cache;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::Graph;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Graphs up to this size are solved with a dense LU factorization.
pub const DIRECT_SOLVE_MAX_NODES: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingVariant {
    Rwr,
    Adjacency,
    NormalizedAdjacency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Dense solve up to [`DIRECT_SOLVE_MAX_NODES`], power iteration above.
    Auto,
    Direct,
    PowerIteration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    Descending,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub restart_prob: f64,
    pub variant: EmbeddingVariant,
    pub solver: Solver,
    pub tol: f64,
    pub max_iter: usize,
    /// `None` leaves rows unsorted (not permutation invariant).
    pub sort_order: Option<SortOrder>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            restart_prob: 0.1,
            variant: EmbeddingVariant::Rwr,
            solver: Solver::Auto,
            tol: 1e-10,
            max_iter: 10_000,
            sort_order: Some(SortOrder::Descending),
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.restart_prob > 0.0 && self.restart_prob < 1.0) {
            return Err(Error::Config(format!(
                "restart_prob {} must lie in (0, 1)",
                self.restart_prob
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol {} must be positive", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMethod {
    Random,
    RwrRank,
}

/// Column-stochastic `Ã = A D⁻¹`, after giving isolated nodes a self-loop.
pub fn normalize_adjacency<T: Scalar>(adjacency: &Tensor<T>) -> Tensor<T> {
    let n = adjacency.rows();
    let mut a = adjacency.clone();
    for j in 0..n {
        let mut col_sum: T = (0..n).map(|i| a.get(i, j)).sum();
        if col_sum == T::zero() {
            a.set(j, j, T::one());
            col_sum = T::one();
        }
        for i in 0..n {
            a.set(i, j, a.get(i, j) / col_sum);
        }
    }
    a
}

/// RWR relevance matrix; column `i` is the score vector of node `i`.
pub fn rwr_scores<T: Scalar>(normalized: &Tensor<T>, cfg: &DiffusionConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let n = normalized.rows();
    let direct = match cfg.solver {
        Solver::Direct => true,
        Solver::PowerIteration => false,
        Solver::Auto => n <= DIRECT_SOLVE_MAX_NODES,
    };
    if direct {
        rwr_direct(normalized, T::lit(cfg.restart_prob))
    } else {
        rwr_power(normalized, T::lit(cfg.restart_prob), T::lit(cfg.tol), cfg.max_iter)
    }
}

fn rwr_direct<T: Scalar>(a: &Tensor<T>, p: T) -> Result<Tensor<T>> {
    let n = a.rows();
    // M = I − pÃ
    let mut m = a.map(|v| -p * v);
    for i in 0..n {
        m.set(i, i, m.get(i, i) + T::one());
    }
    let lu = Lu::factor(m)?;
    let mut s = Tensor::zeros(&[n, n]);
    let scale = T::one() - p;
    let mut rhs = vec![T::zero(); n];
    for i in 0..n {
        rhs.iter_mut().for_each(|v| *v = T::zero());
        rhs[i] = scale;
        let col = lu.solve(&rhs);
        for (r, v) in col.into_iter().enumerate() {
            s.set(r, i, v);
        }
    }
    Ok(s)
}

fn rwr_power<T: Scalar>(a: &Tensor<T>, p: T, tol: T, max_iter: usize) -> Result<Tensor<T>> {
    let n = a.rows();
    let restart = Tensor::<T>::eye(n).map(|v| v * (T::one() - p));
    let mut t = restart.clone();
    let mut residual = T::infinity();
    for _ in 0..max_iter {
        let next = a.matmul(&t)?.zip_map(&restart, |x, r| p * x + r)?;
        // largest column-wise L1 change
        residual = (0..n)
            .map(|j| (0..n).map(|i| (next.get(i, j) - t.get(i, j)).abs()).sum::<T>())
            .fold(T::zero(), T::max);
        t = next;
        if residual < tol {
            return Ok(t);
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: residual.to_f64_lossy(),
    })
}

/// LU factorization with partial pivoting.
struct Lu<T> {
    lu: Tensor<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    fn factor(mut m: Tensor<T>) -> Result<Self> {
        let n = m.rows();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let pivot = (k..n)
                .max_by(|&a, &b| m.get(a, k).abs().partial_cmp(&m.get(b, k).abs()).unwrap())
                .unwrap();
            if m.get(pivot, k) == T::zero() {
                return Err(Error::Data("singular diffusion system".into()));
            }
            if pivot != k {
                for j in 0..n {
                    let tmp = m.get(k, j);
                    m.set(k, j, m.get(pivot, j));
                    m.set(pivot, j, tmp);
                }
                perm.swap(k, pivot);
            }
            let d = m.get(k, k);
            for i in k + 1..n {
                let f = m.get(i, k) / d;
                m.set(i, k, f);
                if f != T::zero() {
                    for j in k + 1..n {
                        m.set(i, j, m.get(i, j) - f * m.get(k, j));
                    }
                }
            }
        }
        Ok(Lu { lu: m, perm })
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let n = b.len();
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                y[i] = y[i] - self.lu.get(i, k) * y[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] = y[i] - self.lu.get(i, k) * y[k];
            }
            y[i] = y[i] / self.lu.get(i, i);
        }
        y
    }
}

/// Raw per-node diffusion rows for a graph: row `i` describes node `i`.
pub fn diffusion_rows<T: Scalar>(graph: &Graph, cfg: &DiffusionConfig) -> Result<Tensor<T>> {
    let a: Tensor<T> = graph.adjacency().cast();
    Ok(match cfg.variant {
        EmbeddingVariant::Adjacency => a,
        EmbeddingVariant::NormalizedAdjacency => normalize_adjacency(&a),
        EmbeddingVariant::Rwr => rwr_scores(&normalize_adjacency(&a), cfg)?.transpose(),
    })
}

/// Sorts (when configured) and right-pads per-node rows to `n_max` columns.
pub fn embed_rows<T: Scalar>(rows: &Tensor<T>, cfg: &DiffusionConfig, n_max: usize) -> Result<Tensor<T>> {
    let n = rows.rows();
    if n > n_max {
        return Err(Error::Contract(format!("graph with {n} nodes exceeds n_max {n_max}")));
    }
    let mut out = Tensor::zeros(&[n, n_max]);
    for i in 0..n {
        let mut row = rows.row(i).to_vec();
        if cfg.sort_order.is_some() {
            row.sort_by(|a, b| b.partial_cmp(a).unwrap());
        }
        out.row_mut(i)[..n].copy_from_slice(&row);
    }
    Ok(out)
}

/// Sorted, zero-padded `n × n_max` topological embedding of a graph.
pub fn topological_embedding<T: Scalar>(
    graph: &Graph,
    cfg: &DiffusionConfig,
    n_max: usize,
) -> Result<Tensor<T>> {
    if graph.node_count() > n_max {
        return Err(Error::Contract(format!(
            "graph with {} nodes exceeds n_max {n_max}",
            graph.node_count()
        )));
    }
    embed_rows(&diffusion_rows(graph, cfg)?, cfg, n_max)
}

fn ceil_fraction(ratio: f64, count: usize) -> usize {
    ((ratio * count as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Drops edges, keeping every node.
///
/// `Random` keeps `⌈ratio·e⌉` edges sampled without replacement.
/// `RwrRank` lets each node keep its `⌈ratio·deg⌉` neighbours with the
/// highest RWR relevance from that node; the kept set is the union.
pub fn downsample_edges(
    graph: &Graph,
    ratio: f64,
    method: DownsampleMethod,
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<Graph> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Contract(format!("downsample ratio {ratio} outside (0, 1]")));
    }
    if ratio == 1.0 {
        return Ok(graph.clone());
    }
    let e = graph.edge_count();
    let keep: Vec<usize> = match method {
        DownsampleMethod::Random => {
            let mut rng = rng::seeded(seed);
            let mut idx = index::sample(&mut rng, e, ceil_fraction(ratio, e)).into_vec();
            idx.sort_unstable();
            idx
        }
        DownsampleMethod::RwrRank => {
            let scores: Tensor<f64> = rwr_scores(&normalize_adjacency(&graph.adjacency()), cfg)?;
            let neighbors = graph.neighbors();
            let mut kept = std::collections::HashSet::new();
            for (i, nbrs) in neighbors.iter().enumerate() {
                let mut ranked = nbrs.clone();
                // relevance of j for a walk restarting at i is S[j, i]
                ranked.sort_by(|&a, &b| {
                    scores
                        .get(b, i)
                        .partial_cmp(&scores.get(a, i))
                        .unwrap()
                        .then(a.cmp(&b))
                });
                for &j in ranked.iter().take(ceil_fraction(ratio, nbrs.len())) {
                    kept.insert((i.min(j), i.max(j)));
                }
            }
            (0..e).filter(|&k| kept.contains(&graph.edges()[k])).collect()
        }
    };
    Ok(graph.with_edge_subset(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Target;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.to_vec(), Tensor::ones(&[n, 1]), None, Target::Class(0)).unwrap()
    }

    #[test]
    fn isolated_node_gets_self_loop() {
        let a = normalize_adjacency(&Tensor::<f64>::zeros(&[1, 1]));
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn path_normalization() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let a = normalize_adjacency(&g.adjacency());
        for j in 0..3 {
            let s: f64 = (0..3).map(|i| a.get(i, j)).sum();
            assert_eq!(s, 1.0);
        }
        assert_eq!((a.get(0, 1), a.get(1, 1), a.get(2, 1)), (0.5, 0.0, 0.5));
    }

    #[test]
    fn single_node_rwr() {
        let s = rwr_scores(&normalize_adjacency(&Tensor::<f64>::zeros(&[1, 1])), &DiffusionConfig::default())
            .unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_restart_is_identity() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let cfg = DiffusionConfig {
            restart_prob: 1e-12,
            ..Default::default()
        };
        let s = rwr_scores(&normalize_adjacency(&g.adjacency()), &cfg).unwrap();
        assert!(s.max_abs_diff(&Tensor::eye(3)) < 1e-11);
    }

    #[test]
    fn power_iteration_reports_non_convergence() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let cfg = DiffusionConfig {
            solver: Solver::PowerIteration,
            max_iter: 2,
            ..Default::default()
        };
        let err = rwr_scores(&normalize_adjacency(&g.adjacency()), &cfg).unwrap_err();
        assert!(matches!(err, Error::Convergence { iterations: 2, .. }));
    }

    #[test]
    fn cycle_rows_identical() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let e: Tensor<f64> = topological_embedding(&g, &DiffusionConfig::default(), 5).unwrap();
        assert_eq!(e.shape(), &[3, 5]);
        for i in 1..3 {
            for (a, b) in e.row(0).iter().zip(e.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(&e.row(0)[3..], &[0.0, 0.0]);
    }

    #[test]
    fn star_center_differs_from_leaf() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let cfg = DiffusionConfig {
            variant: EmbeddingVariant::Adjacency,
            ..Default::default()
        };
        let e: Tensor<f64> = topological_embedding(&g, &cfg, 4).unwrap();
        assert_eq!(e.row(0), &[1.0, 1.0, 1.0, 0.0]);
        assert_eq!(e.row(1), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn downsample_ratio_one_is_identity() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let cfg = DiffusionConfig::default();
        for m in [DownsampleMethod::Random, DownsampleMethod::RwrRank] {
            assert_eq!(downsample_edges(&g, 1.0, m, &cfg, 1).unwrap(), g);
        }
        assert!(downsample_edges(&g, 0.0, DownsampleMethod::Random, &cfg, 1).is_err());
        assert!(downsample_edges(&g, 1.5, DownsampleMethod::Random, &cfg, 1).is_err());
    }

    #[test]
    fn random_downsample_count() {
        // 100 edges on a 15-node graph
        let mut edges = Vec::new();
        'outer: for i in 0..15 {
            for j in i + 1..15 {
                edges.push((i, j));
                if edges.len() == 100 {
                    break 'outer;
                }
            }
        }
        let g = graph(15, &edges);
        let d = downsample_edges(&g, 0.1, DownsampleMethod::Random, &DiffusionConfig::default(), 9).unwrap();
        assert_eq!(d.edge_count(), 10);
        assert_eq!(d.node_count(), 15);
    }

    #[test]
    fn rwr_rank_star_keeps_leaves_attached() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let d = downsample_edges(&g, 0.34, DownsampleMethod::RwrRank, &DiffusionConfig::default(), 0).unwrap();
        let deg = d.degrees();
        assert!(deg[1..].iter().all(|&x| x == 1));
    }
}
