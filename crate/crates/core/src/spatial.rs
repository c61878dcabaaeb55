//! Unified multi-scale spatial modeling and sub-feature grouping.
//!
//! `S = MLP( W_S X · [ (Â1+B1) ∥ … ∥ (ÂK+BK) ] )`: the input is projected
//! once, aggregated over joints by right-multiplying each scale operator,
//! the K results are stacked along channels and an MLP (pointwise conv,
//! ReLU, pointwise conv) maps `K·C_mid → C_s`. Runs once per sequence.

use rand::Rng;

use crate::config::TransformMode;
use crate::error::{DestError, Result};
use crate::graph::SkeletonGraph;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialShape {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub joints: usize,
    pub scales: usize,
}

#[derive(Clone, Debug)]
pub struct SpatialParams {
    pub shape: SpatialShape,
    pub w_s: ParamId,
    pub b: Vec<ParamId>,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

impl SpatialParams {
    /// `B^(k)` starts at zero so the first pass sees only the physical topology.
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, shape: SpatialShape, rng: &mut R) -> Self {
        let SpatialShape {
            in_channels: c,
            mid_channels: cm,
            out_channels: cs,
            joints: v,
            scales: k,
        } = shape;
        let w_s = store.add(format!("{prefix}.w_s"), Tensor::xavier(&[cm, c], c, cm, rng));
        let b = (0..k)
            .map(|i| store.add(format!("{prefix}.b{}", i + 1), Tensor::zeros(&[v, v])))
            .collect();
        let mlp_w1 = store.add(
            format!("{prefix}.mlp.w1"),
            Tensor::xavier(&[cs, k * cm], k * cm, cs, rng),
        );
        let mlp_b1 = store.add(format!("{prefix}.mlp.b1"), Tensor::zeros(&[cs]));
        let mlp_w2 = store.add(format!("{prefix}.mlp.w2"), Tensor::xavier(&[cs, cs], cs, cs, rng));
        let mlp_b2 = store.add(format!("{prefix}.mlp.b2"), Tensor::zeros(&[cs]));
        SpatialParams {
            shape,
            w_s,
            b,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
        }
    }

    pub fn param_count(shape: &SpatialShape) -> usize {
        let SpatialShape {
            in_channels: c,
            mid_channels: cm,
            out_channels: cs,
            joints: v,
            scales: k,
        } = *shape;
        cm * c + k * v * v + cs * k * cm + cs + cs * cs + cs
    }

    /// Multiply-adds per frame.
    pub fn macs_per_frame(shape: &SpatialShape) -> usize {
        let SpatialShape {
            in_channels: c,
            mid_channels: cm,
            out_channels: cs,
            joints: v,
            scales: k,
        } = *shape;
        v * cm * c + k * cm * v * v + v * (cs * k * cm + cs * cs)
    }
}

/// Records the normalized adjacency matrices as tape constants.
pub fn graph_constants(tape: &mut Tape, graph: &SkeletonGraph) -> Result<Vec<Var>> {
    graph
        .normalized
        .iter()
        .map(|a| tape.constant(a.shape(), a.data().to_vec()))
        .collect()
}

/// `X[C×T×V] → S[C_s×T×V]`.
pub fn spatial_forward(
    tape: &mut Tape,
    bound: &Bound,
    params: &SpatialParams,
    a_hat: &[Var],
    x: Var,
) -> Result<Var> {
    let sh = params.shape;
    if a_hat.len() != params.b.len() {
        return Err(DestError::Config(format!(
            "graph has K = {} scales but the spatial module was built for {}",
            a_hat.len(),
            params.b.len()
        )));
    }
    let xs = tape.shape(x).to_vec();
    if xs.len() != 3 || xs[0] != sh.in_channels || xs[2] != sh.joints {
        return Err(DestError::Dimension(format!(
            "spatial input {xs:?} does not match C = {}, V = {}",
            sh.in_channels, sh.joints
        )));
    }
    let (t, v) = (xs[1], xs[2]);
    let flat = tape.reshape(x, &[sh.in_channels, t * v])?;
    let proj = tape.matmul(bound.var(params.w_s), flat)?;
    let rows = tape.reshape(proj, &[sh.mid_channels * t, v])?;
    let mut scales = Vec::with_capacity(a_hat.len());
    for (&a, &b) in a_hat.iter().zip(&params.b) {
        let op = tape.add(a, bound.var(b))?;
        let agg = tape.matmul(rows, op)?;
        scales.push(tape.reshape(agg, &[sh.mid_channels, t * v])?);
    }
    let stacked = tape.concat(&scales, 0)?;
    let h = tape.matmul(bound.var(params.mlp_w1), stacked)?;
    let h = tape.add_bias(h, bound.var(params.mlp_b1), 0)?;
    let h = tape.relu(h);
    let s = tape.matmul(bound.var(params.mlp_w2), h)?;
    let s = tape.add_bias(s, bound.var(params.mlp_b2), 0)?;
    tape.reshape(s, &[sh.out_channels, t, v])
}

/// Contiguous channel groups `S_1..S_M`.
pub fn split_groups(tape: &mut Tape, s: Var, groups: usize) -> Result<Vec<Var>> {
    let c = tape.shape(s)[0];
    if groups == 0 || c % groups != 0 {
        return Err(DestError::Config(format!(
            "cannot divide {c} spatial channels into {groups} groups"
        )));
    }
    tape.split(s, 0, groups)
}

/// Which axis of a `c×T×V` sub-feature the transform collapses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollapseAxis {
    /// `c×T×V → T×V`, the default sub-feature transform.
    Channels,
    /// `c×T×V → c×T`, the joint-shared baseline's input.
    Joints,
}

#[derive(Clone, Debug)]
pub enum TransformParams {
    /// Trainable pointwise map over the collapsed axis.
    Convolution { w: ParamId, b: ParamId },
    Avgpool,
    Maxpool,
}

impl TransformParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        mode: TransformMode,
        width: usize,
        rng: &mut R,
    ) -> Self {
        match mode {
            TransformMode::Convolution => TransformParams::Convolution {
                w: store.add(format!("{name}.w"), Tensor::xavier(&[width], width, 1, rng)),
                b: store.add(format!("{name}.b"), Tensor::zeros(&[1])),
            },
            TransformMode::Avgpool => TransformParams::Avgpool,
            TransformMode::Maxpool => TransformParams::Maxpool,
        }
    }

    pub fn param_count(mode: TransformMode, width: usize) -> usize {
        match mode {
            TransformMode::Convolution => width + 1,
            _ => 0,
        }
    }
}

pub fn transform(
    tape: &mut Tape,
    bound: &Bound,
    params: &TransformParams,
    s_i: Var,
    axis: CollapseAxis,
) -> Result<Var> {
    let sh = tape.shape(s_i).to_vec();
    if sh.len() != 3 {
        return Err(DestError::Dimension(format!(
            "transform expects c×T×V, got {sh:?}"
        )));
    }
    let (c, t, v) = (sh[0], sh[1], sh[2]);
    let reduce_axis = match axis {
        CollapseAxis::Channels => 0,
        CollapseAxis::Joints => 2,
    };
    match params {
        TransformParams::Convolution { w, b } => {
            let w = bound.var(*w);
            let b = bound.var(*b);
            let out = match axis {
                CollapseAxis::Channels => {
                    let flat = tape.reshape(s_i, &[c, t * v])?;
                    let w = tape.reshape(w, &[1, c])?;
                    let y = tape.matmul(w, flat)?;
                    let y = tape.add_bias(y, b, 0)?;
                    tape.reshape(y, &[t, v])?
                }
                CollapseAxis::Joints => {
                    let flat = tape.reshape(s_i, &[c * t, v])?;
                    let w = tape.reshape(w, &[v, 1])?;
                    let y = tape.matmul(flat, w)?;
                    let y = tape.reshape(y, &[1, c * t])?;
                    let y = tape.add_bias(y, b, 0)?;
                    tape.reshape(y, &[c, t])?
                }
            };
            Ok(out)
        }
        TransformParams::Avgpool => {
            let n = sh[reduce_axis] as f64;
            let s = tape.sum_axis(s_i, reduce_axis)?;
            Ok(tape.scale(s, 1.0 / n))
        }
        TransformParams::Maxpool => tape.max_axis(s_i, reduce_axis),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{SkeletonGraph, SkeletonTopology};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn split_then_concat_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random(&[20, 3, 4], &mut rng);
        let mut tape = Tape::new();
        let sv = tape.leaf(&s);
        let groups = split_groups(&mut tape, sv, 10).unwrap();
        assert_eq!(groups.len(), 10);
        assert!(groups.iter().all(|&g| tape.shape(g) == [2, 3, 4]));
        let back = tape.concat(&groups, 0).unwrap();
        assert_eq!(tape.value(back), s.data());

        let one = split_groups(&mut tape, sv, 1).unwrap();
        assert_eq!(tape.value(one[0]), s.data());
        assert!(matches!(
            split_groups(&mut tape, sv, 3),
            Err(DestError::Config(_))
        ));
    }

    #[test]
    fn pooling_transforms() {
        let s = Tensor::new(vec![2, 1, 2], vec![1.0, 4.0, -3.0, 2.0]).unwrap();
        let mut store = ParamStore::new();
        let bound = store.bind(&mut Tape::new());
        let mut tape = Tape::new();
        let sv = tape.leaf(&s);
        let avg = transform(&mut tape, &bound, &TransformParams::Avgpool, sv, CollapseAxis::Channels).unwrap();
        assert_eq!(tape.shape(avg), &[1, 2]);
        assert_eq!(tape.value(avg), &[-1.0, 3.0]);
        let mx = transform(&mut tape, &bound, &TransformParams::Maxpool, sv, CollapseAxis::Channels).unwrap();
        assert_eq!(tape.value(mx), &[1.0, 4.0]);
        let _ = &mut store;
    }

    #[test]
    fn convolution_transform_is_weighted_sum() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TransformParams::new(&mut store, "r", TransformMode::Convolution, 2, &mut rng);
        store.set("r.w", Tensor::new(vec![2], vec![0.5, -2.0]).unwrap()).unwrap();
        let s = Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let sv = tape.leaf(&s);
        let y = transform(&mut tape, &bound, &p, sv, CollapseAxis::Channels).unwrap();
        assert_eq!(tape.value(y), &[-19.5, -39.0, -58.5]);
    }

    #[test]
    fn degenerate_single_scale_is_projection() {
        // K=1 on a graph whose A^(1) is the identity (single joint), identity MLP.
        let graph = SkeletonGraph::build(SkeletonTopology::chain(1).unwrap(), 1, 0.001, false).unwrap();
        let shape = SpatialShape {
            in_channels: 2,
            mid_channels: 3,
            out_channels: 3,
            joints: 1,
            scales: 1,
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = SpatialParams::new(&mut store, "sp", shape, &mut rng);
        let eye = Tensor::identity(3);
        store.set("sp.mlp.w1", eye.clone()).unwrap();
        store.set("sp.mlp.w2", eye).unwrap();
        let w_s = Tensor::new(vec![3, 2], vec![1.0, 0.5, 0.2, 0.3, 2.0, 0.0]).unwrap();
        store.set("sp.w_s", w_s.clone()).unwrap();
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let a = graph_constants(&mut tape, &graph).unwrap();
        let xv = tape.leaf(&x);
        let s = spatial_forward(&mut tape, &bound, &p, &a, xv).unwrap();
        // Â = D^(-1/2)·1·D^(1/2) = 1 for a lone joint
        let scale = 1.0;
        for c in 0..3 {
            for t in 0..2 {
                let want = (0..2).map(|i| w_s.at(&[c, i]) * x.at(&[i, t, 0])).sum::<f64>() * scale;
                let got = tape.value(s)[c * 2 + t];
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn k_mismatch_is_config_error() {
        let graph = SkeletonGraph::build(SkeletonTopology::chain(3).unwrap(), 2, 0.001, false).unwrap();
        let shape = SpatialShape {
            in_channels: 1,
            mid_channels: 1,
            out_channels: 2,
            joints: 3,
            scales: 3,
        };
        let mut store = ParamStore::new();
        let p = SpatialParams::new(&mut store, "sp", shape, &mut ChaCha8Rng::seed_from_u64(0));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let a = graph_constants(&mut tape, &graph).unwrap();
        let x = tape.leaf(&Tensor::zeros(&[1, 2, 3]));
        assert!(matches!(
            spatial_forward(&mut tape, &bound, &p, &a, x),
            Err(DestError::Config(_))
        ));
    }
}
