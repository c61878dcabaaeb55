//! Skeleton topology and its k-adjacency operators.
//!
//! `A^(k)[i][j] = 1` when the hop distance between joints `i` and `j` is
//! exactly `k`, and on the diagonal. The normalized form is
//! `D^(-1/2) A D^(1/2)` with `D_i = Σ_j A_ij + β`; the symmetric variant
//! `D^(-1/2) A D^(-1/2)` is available behind a flag.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use crate::error::{DestError, Result};
use crate::tensor::Tensor;

/// The bundled 25-joint body topology.
pub const KINECT25_TOPOLOGY: &str = include_str!("../data/kinect25.topology");

pub const DEFAULT_BETA: f64 = 0.001;
pub const DEFAULT_K: usize = 13;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonTopology {
    joints: usize,
    edges: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    pub fn new(joints: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if joints == 0 {
            return Err(DestError::Config("topology needs at least one joint".into()));
        }
        for &(i, j) in &edges {
            if i >= joints || j >= joints {
                return Err(DestError::Config(format!(
                    "edge ({i}, {j}) out of range for {joints} joints"
                )));
            }
            if i == j {
                return Err(DestError::Config(format!("self-loop on joint {i}")));
            }
        }
        let topo = SkeletonTopology { joints, edges };
        topo.shortest_distances()?;
        Ok(topo)
    }

    /// Path `0–1–…–(n−1)`.
    pub fn chain(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|j| (j - 1, j)).collect())
    }

    pub fn kinect25() -> Self {
        Self::parse(KINECT25_TOPOLOGY, Path::new("<bundled kinect25>"))
            .expect("bundled topology is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DestError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Line format: first non-comment line is `V`, then one `i j` pair per line.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| DestError::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut joints = None;
        let mut edges = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match (joints, fields.as_slice()) {
                (None, [v]) => {
                    joints = Some(
                        v.parse::<usize>()
                            .map_err(|e| perr(no + 1, format!("joint count: {e}")))?,
                    )
                }
                (None, _) => return Err(perr(no + 1, "expected joint count".into())),
                (Some(_), [a, b]) => {
                    let a = a.parse().map_err(|e| perr(no + 1, format!("{e}")))?;
                    let b = b.parse().map_err(|e| perr(no + 1, format!("{e}")))?;
                    edges.push((a, b));
                }
                (Some(_), _) => return Err(perr(no + 1, format!("expected `i j`, got `{line}`"))),
            }
        }
        let joints = joints.ok_or_else(|| perr(0, "empty topology".into()))?;
        Self::new(joints, edges)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.joints);
        for (i, j) in &self.edges {
            s.push_str(&format!("{i} {j}\n"));
        }
        s
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.joints];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// All-pairs hop distances by BFS from each joint.
    pub fn shortest_distances(&self) -> Result<Vec<Vec<usize>>> {
        let adj = self.neighbors();
        let n = self.joints;
        let mut dist = vec![vec![usize::MAX; n]; n];
        for src in 0..n {
            let row = &mut dist[src];
            row[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if row[w] == usize::MAX {
                        row[w] = row[u] + 1;
                        queue.push_back(w);
                    }
                }
            }
            if let Some(j) = row.iter().position(|&d| d == usize::MAX) {
                return Err(DestError::Config(format!(
                    "skeleton graph is disconnected: joint {j} unreachable from joint {src}"
                )));
            }
        }
        Ok(dist)
    }

    pub fn diameter(&self) -> usize {
        self.shortest_distances()
            .map(|d| d.iter().flatten().copied().max().unwrap_or(0))
            .unwrap_or(0)
    }
}

/// Binary `A^(1..=K)`, each `V×V` with unit diagonal.
pub fn build_k_adjacency(topology: &SkeletonTopology, k_max: usize) -> Result<Vec<Tensor>> {
    if k_max < 1 {
        return Err(DestError::Config("K must be at least 1".into()));
    }
    let dist = topology.shortest_distances()?;
    let v = topology.joints();
    Ok((1..=k_max)
        .map(|k| {
            let mut a = Tensor::zeros(&[v, v]);
            let data = a.data_mut();
            for i in 0..v {
                for j in 0..v {
                    if i == j || dist[i][j] == k {
                        data[i * v + j] = 1.0;
                    }
                }
            }
            a
        })
        .collect())
}

/// `D^(-1/2) A D^(1/2)`, or `D^(-1/2) A D^(-1/2)` when `symmetric`.
pub fn normalize(a: &Tensor, beta: f64, symmetric: bool) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(DestError::Dimension(format!(
            "normalize expects a square matrix, got {s:?}"
        )));
    }
    let v = s[0];
    let src = a.data();
    let deg: Vec<f64> = (0..v)
        .map(|i| src[i * v..(i + 1) * v].iter().sum::<f64>() + beta)
        .collect();
    let col_exp = if symmetric { -0.5 } else { 0.5 };
    let mut out = Tensor::zeros(&[v, v]);
    let dst = out.data_mut();
    for i in 0..v {
        for j in 0..v {
            dst[i * v + j] = deg[i].powf(-0.5) * src[i * v + j] * deg[j].powf(col_exp);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SkeletonGraph {
    pub topology: SkeletonTopology,
    pub k_max: usize,
    pub beta: f64,
    pub symmetric_norm: bool,
    pub adjacency: Vec<Tensor>,
    pub normalized: Vec<Tensor>,
}

impl SkeletonGraph {
    pub fn build(topology: SkeletonTopology, k_max: usize, beta: f64, symmetric_norm: bool) -> Result<Self> {
        if beta <= 0.0 {
            return Err(DestError::Config("beta must be positive".into()));
        }
        let adjacency = build_k_adjacency(&topology, k_max)?;
        let normalized = adjacency
            .iter()
            .map(|a| normalize(a, beta, symmetric_norm))
            .collect::<Result<_>>()?;
        Ok(SkeletonGraph {
            topology,
            k_max,
            beta,
            symmetric_norm,
            adjacency,
            normalized,
        })
    }

    pub fn joints(&self) -> usize {
        self.topology.joints()
    }
}
