#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphmem::dataset::synthetic::two_community_dataset;
use graphmem::dataset::write_molecule_dataset;

pub fn graphmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphmem"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove(graphmem_cli::CACHE_ENV)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Two-community graphs written as a molecule file.
pub fn synthetic_file(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("communities{count}.jsonl"));
    let ds = two_community_dataset(count, 0.7, seed).unwrap();
    write_molecule_dataset(&ds, &path).unwrap();
    path
}

pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

/// Small-model config over a molecule file.
pub fn small_config(dir: &Path, data: &Path, out: &Path, extra: &str) -> PathBuf {
    write_config(
        dir,
        &format!(
            r#"output_dir = "{out}"

[dataset]
path = "{data}"
format = "molecule"

[model]
kind = "gmn"
key_schedule = [4, 1]
heads = 2
hidden_dim = 16

[train]
lr = 0.01
batch_size = 8
max_epochs = 3
seed = 7
{extra}
"#,
            out = out.display(),
            data = data.display(),
        ),
    )
}

pub struct TuGraph {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub label: i64,
    pub node_labels: Vec<usize>,
}

/// Writes graphs in TU text format (1-based node ids, both directions).
pub fn write_tu(dir: &Path, name: &str, graphs: &[TuGraph]) {
    let (mut a, mut ind, mut gl, mut nl) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0;
    for (g, tg) in graphs.iter().enumerate() {
        for &(i, j) in &tg.edges {
            writeln!(a, "{}, {}", offset + i + 1, offset + j + 1).unwrap();
            writeln!(a, "{}, {}", offset + j + 1, offset + i + 1).unwrap();
        }
        for v in 0..tg.nodes {
            writeln!(ind, "{}", g + 1).unwrap();
            writeln!(nl, "{}", tg.node_labels[v]).unwrap();
        }
        writeln!(gl, "{}", tg.label).unwrap();
        offset += tg.nodes;
    }
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(format!("{name}_A.txt")), a).unwrap();
    fs::write(dir.join(format!("{name}_graph_indicator.txt")), ind).unwrap();
    fs::write(dir.join(format!("{name}_graph_labels.txt")), gl).unwrap();
    fs::write(dir.join(format!("{name}_node_labels.txt")), nl).unwrap();
}

/// `count` random graphs with `classes` labels numbered from 1.
pub fn random_tu_graphs(count: usize, classes: i64, seed: u64) -> Vec<TuGraph> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..count)
        .map(|g| {
            let nodes = rng.gen_range(1..=12);
            let mut edges = Vec::new();
            for i in 1..nodes {
                edges.push((rng.gen_range(0..i), i));
            }
            TuGraph {
                nodes,
                edges,
                label: 1 + (g as i64 % classes),
                node_labels: (0..nodes).map(|_| rng.gen_range(0..3)).collect(),
            }
        })
        .collect()
}
