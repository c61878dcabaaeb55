mod common;

use std::collections::VecDeque;

use common::{close, random, rng};
use dest_core::graph::{build_k_adjacency, normalize, SkeletonGraph, SkeletonTopology};
use dest_core::params::ParamStore;
use dest_core::spatial::{graph_constants, spatial_forward, split_groups, SpatialParams, SpatialShape};
use dest_core::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn bfs(v: usize, edges: &[(usize, usize)], src: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); v];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![usize::MAX; v];
    dist[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

#[test]
fn kinect_distances_match_bfs() {
    let topo = SkeletonTopology::kinect25();
    let d = topo.shortest_distances().unwrap();
    for s in 0..25 {
        assert_eq!(d[s], bfs(25, topo.edges(), s), "source {s}");
    }
    let chain = SkeletonTopology::chain(3).unwrap();
    assert_eq!(chain.shortest_distances().unwrap()[0][2], 2);
}

#[test]
fn k_beyond_diameter_is_identity() {
    let topo = SkeletonTopology::chain(4).unwrap();
    let a = build_k_adjacency(&topo, topo.diameter() + 1).unwrap();
    assert_eq!(a.last().unwrap(), &Tensor::identity(4));
}

fn random_tree() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..10).prop_flat_map(|v| {
        let parents: Vec<_> = (1..v).map(|i| 0..i).collect();
        (Just(v), parents).prop_map(|(v, ps)| (v, ps.into_iter().enumerate().map(|(i, p)| (p, i + 1)).collect()))
    })
}

proptest! {
    #[test]
    fn k_adjacency_follows_distances((v, edges) in random_tree(), k_max in 1usize..5) {
        let topo = SkeletonTopology::new(v, edges.clone()).unwrap();
        let a = build_k_adjacency(&topo, k_max).unwrap();
        for i in 0..v {
            let d = bfs(v, &edges, i);
            prop_assert_eq!(d[i], 0);
            for (k, ak) in a.iter().enumerate() {
                for j in 0..v {
                    let want = if i == j || d[j] == k + 1 { 1.0 } else { 0.0 };
                    prop_assert_eq!(ak.at(&[i, j]), want);
                }
            }
        }
    }

    #[test]
    fn normalization_matches_dense_products((v, edges) in random_tree(), beta in 1e-4f64..1.0) {
        let topo = SkeletonTopology::new(v, edges).unwrap();
        let a = &build_k_adjacency(&topo, 1).unwrap()[0];
        let diag = |p: f64| {
            let mut m = vec![0.0; v * v];
            for i in 0..v {
                let d: f64 = (0..v).map(|j| a.at(&[i, j])).sum::<f64>() + beta;
                m[i * v + i] = d.powf(p);
            }
            m
        };
        let mm = |x: &[f64], y: &[f64]| {
            let mut o = vec![0.0; v * v];
            for i in 0..v {
                for j in 0..v {
                    o[i * v + j] = (0..v).map(|l| x[i * v + l] * y[l * v + j]).sum();
                }
            }
            o
        };
        let want = mm(&mm(&diag(-0.5), a.data()), &diag(0.5));
        let got = normalize(a, beta, false).unwrap();
        prop_assert!(close(got.data(), &want, 1e-12));
        let want_sym = mm(&mm(&diag(-0.5), a.data()), &diag(-0.5));
        prop_assert!(close(normalize(a, beta, true).unwrap().data(), &want_sym, 1e-12));
    }
}

fn set_random(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = r.gen_range(-1.0..1.0));
    }
}

#[test]
fn spatial_matches_loop_oracle() {
    let (c, t, v, k, cm, cs) = (3, 4, 5, 2, 2, 4);
    let graph = SkeletonGraph::build(SkeletonTopology::chain(v).unwrap(), k, 0.001, false).unwrap();
    let mut store = ParamStore::new();
    let shape = SpatialShape { in_channels: c, mid_channels: cm, out_channels: cs, joints: v, scales: k };
    let p = SpatialParams::new(&mut store, "sp", shape, &mut rng(0));
    set_random(&mut store, 9);
    let x = random(&[c, t, v], &mut rng(10));

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let a_hat = graph_constants(&mut tape, &graph).unwrap();
    let xv = tape.leaf(&x);
    let s = spatial_forward(&mut tape, &bound, &p, &a_hat, xv).unwrap();

    let ws = store.get(p.w_s);
    let (w1, b1, w2, b2) = (store.get(p.mlp_w1), store.get(p.mlp_b1), store.get(p.mlp_w2), store.get(p.mlp_b2));
    let mut want = vec![0.0; cs * t * v];
    for ti in 0..t {
        for w in 0..v {
            let mut g = vec![0.0; k * cm];
            for kk in 0..k {
                let b = store.get(p.b[kk]);
                for m in 0..cm {
                    for u in 0..v {
                        let proj: f64 = (0..c).map(|ci| ws.at(&[m, ci]) * x.at(&[ci, ti, u])).sum();
                        g[kk * cm + m] += proj * (graph.normalized[kk].at(&[u, w]) + b.at(&[u, w]));
                    }
                }
            }
            let h: Vec<f64> = (0..cs)
                .map(|hi| ((0..k * cm).map(|q| w1.at(&[hi, q]) * g[q]).sum::<f64>() + b1.data()[hi]).max(0.0))
                .collect();
            for o in 0..cs {
                want[(o * t + ti) * v + w] = (0..cs).map(|hi| w2.at(&[o, hi]) * h[hi]).sum::<f64>() + b2.data()[o];
            }
        }
    }
    assert_eq!(tape.shape(s), &[cs, t, v]);
    assert!(close(tape.value(s), &want, 1e-10));
}

#[test]
fn constant_signal_stays_constant_on_uniform_degree_graph() {
    let v = 6;
    let ring = SkeletonTopology::new(v, (0..v).map(|i| (i, (i + 1) % v)).collect()).unwrap();
    let graph = SkeletonGraph::build(ring, 2, 0.001, true).unwrap();
    let mut store = ParamStore::new();
    let shape = SpatialShape { in_channels: 2, mid_channels: 3, out_channels: 4, joints: v, scales: 2 };
    let p = SpatialParams::new(&mut store, "sp", shape, &mut rng(1));
    let per_channel = [0.7, -1.3];
    let x = Tensor::new(vec![2, 3, v], (0..2 * 3 * v).map(|i| per_channel[i / (3 * v)]).collect()).unwrap();
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let a_hat = graph_constants(&mut tape, &graph).unwrap();
    let xv = tape.leaf(&x);
    let s = spatial_forward(&mut tape, &bound, &p, &a_hat, xv).unwrap();
    for row in tape.value(s).chunks(v) {
        assert!(row.iter().all(|y| (y - row[0]).abs() < 1e-12), "{row:?}");
    }
}

#[test]
fn grouping_cases() {
    let s = random(&[20, 3, 4], &mut rng(2));
    let mut tape = Tape::new();
    let sv = tape.leaf(&s);
    let groups = split_groups(&mut tape, sv, 10).unwrap();
    assert_eq!(groups.len(), 10);
    assert!(groups.iter().all(|g| tape.shape(*g) == [2, 3, 4]));
    let one = split_groups(&mut tape, sv, 1).unwrap();
    assert_eq!(tape.value(one[0]), s.data());
    let back = tape.concat(&groups, 0).unwrap();
    assert_eq!(tape.value(back), s.data());
    assert!(split_groups(&mut tape, sv, 3).is_err());
}
