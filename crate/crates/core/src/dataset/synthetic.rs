//! Generated community-structure graphs for end-to-end checks.

use rand::Rng as _;

use super::{DatasetTable, Graph, Target, Task};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

/// Edges of a dense random community on `nodes`, kept connected by a path.
fn community(rng: &mut rng::Rng, nodes: &[usize], p: f64, edges: &mut Vec<(usize, usize)>) {
    for (a, &i) in nodes.iter().enumerate() {
        for &j in &nodes[a + 1..] {
            if j == nodes[a + 1] || rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
}

/// Binary dataset of `count` graphs, half per class. Class 0 has two dense
/// 8-node communities joined by one edge; class 1 has a single dense
/// 16-node community. Node features are one-hot degrees.
pub fn two_community_dataset(count: usize, density: f64, seed: u64) -> Result<DatasetTable> {
    let mut rng = rng::seeded(seed);
    let mut raw = Vec::with_capacity(count);
    for g in 0..count {
        let class = g % 2;
        let mut edges = Vec::new();
        if class == 0 {
            let a: Vec<usize> = (0..8).collect();
            let b: Vec<usize> = (8..16).collect();
            community(&mut rng, &a, density, &mut edges);
            community(&mut rng, &b, density, &mut edges);
            edges.push((rng.gen_range(0..8), rng.gen_range(8..16)));
        } else {
            let a: Vec<usize> = (0..16).collect();
            community(&mut rng, &a, density, &mut edges);
        }
        raw.push((edges, class));
    }
    let degree = |edges: &[(usize, usize)]| {
        let mut d = vec![0usize; 16];
        for &(i, j) in edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    };
    let dim = raw.iter().flat_map(|(e, _)| degree(e)).max().unwrap_or(0) + 1;
    let graphs = raw
        .into_iter()
        .map(|(edges, class)| {
            let mut x = Tensor::zeros(&[16, dim]);
            for (i, d) in degree(&edges).into_iter().enumerate() {
                x.set(i, d, 1.0);
            }
            Graph::new(16, edges, x, None, Target::Class(class))
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetTable::new("two_community", graphs, Task::Binary, Some(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_connected() {
        let ds = two_community_dataset(20, 0.6, 3).unwrap();
        assert_eq!(ds.len(), 20);
        let ones = ds.graphs().iter().filter(|g| g.target() == Target::Class(1)).count();
        assert_eq!(ones, 10);
        for g in ds.graphs() {
            assert!(g.degrees().iter().all(|&d| d > 0));
            for i in 0..16 {
                assert_eq!(g.node_features().row(i).iter().sum::<f64>(), 1.0);
            }
        }
    }
}
