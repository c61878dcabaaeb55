//! Full network: spatial front end, sub-feature transforms, stacked temporal
//! layers with interleaved interaction layers, prediction heads and the two
//! multi-stage refinement branches.
//!
//! For layer `l` the temporal input is `Ŝ_1ᵀ` when `l = 1`, the interaction
//! output `R = DSTI(Ŝ_g, H_(l−1))` with `g = min(l, M)` while `l − 1 ≤ L_c`,
//! and `H_(l−1)` afterwards.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DestConfig, TemporalVariant, TransformMode};
use crate::error::{DestError, Result};
use crate::graph::{SkeletonGraph, SkeletonTopology};
use crate::interaction::{dsti_forward, DstiParams};
use crate::params::{Bound, ParamId, ParamStore};
use crate::spatial::{
    graph_constants, spatial_forward, split_groups, transform, CollapseAxis, SpatialParams, SpatialShape,
    TransformParams,
};
use crate::temporal::{dilation_for, jtm_forward, jwtm_forward, JtmLayer, JtmShape};
use crate::tensor::{Tape, Tensor, Var};

/// Pointwise (kernel-size-1) convolution `c_in → c_out`.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Pointwise {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Pointwise {
            w: store.add(format!("{name}.w"), Tensor::xavier(&[c_out, c_in], c_in, c_out, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[c_out])),
            c_in,
            c_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(bound.var(self.w), x)?;
        tape.add_bias(y, bound.var(self.b), 0)
    }

    pub fn param_count(&self) -> usize {
        self.c_in * self.c_out + self.c_out
    }
}

/// `x + W_2 · ReLU(DConv_3(x) + b)`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub pointwise: Pointwise,
    pub dilation: usize,
}

/// Dilated residual TCN stage used by both refinement branches.
#[derive(Clone, Debug)]
pub struct RefineStage {
    pub input: Pointwise,
    pub blocks: Vec<ResidualBlock>,
    pub output: Pointwise,
}

impl RefineStage {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        channels: usize,
        c_out: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let input = Pointwise::new(store, &format!("{name}.in"), c_in, channels, rng);
        let blocks = (0..layers)
            .map(|i| ResidualBlock {
                conv_w: store.add(
                    format!("{name}.block{i}.conv.w"),
                    Tensor::xavier(&[channels, channels, 3], channels * 3, channels * 3, rng),
                ),
                conv_b: store.add(format!("{name}.block{i}.conv.b"), Tensor::zeros(&[channels])),
                pointwise: Pointwise::new(store, &format!("{name}.block{i}.pw"), channels, channels, rng),
                dilation: 1 << i.min(30),
            })
            .collect();
        let output = Pointwise::new(store, &format!("{name}.out"), channels, c_out, rng);
        RefineStage { input, blocks, output }
    }

    /// Returns pre-activation outputs `c_out×T`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = self.input.forward(tape, bound, x)?;
        for b in &self.blocks {
            let y = tape.conv1d(h, bound.var(b.conv_w), b.dilation)?;
            let y = tape.add_bias(y, bound.var(b.conv_b), 0)?;
            let y = tape.relu(y);
            let y = b.pointwise.forward(tape, bound, y)?;
            h = tape.add(h, y)?;
        }
        self.output.forward(tape, bound, h)
    }

    pub fn param_count(&self) -> usize {
        let ch = self.input.c_out;
        self.input.param_count()
            + self.blocks.len() * (ch * ch * 3 + ch + ch * ch + ch)
            + self.output.param_count()
    }

    pub fn macs_per_frame(&self) -> usize {
        let ch = self.input.c_out;
        self.input.c_in * ch + self.blocks.len() * (ch * ch * 3 + ch * ch) + ch * self.output.c_out
    }
}

#[derive(Clone, Debug)]
pub struct DestModel {
    pub config: DestConfig,
    pub graph: SkeletonGraph,
    pub store: ParamStore,
    pub spatial: SpatialParams,
    pub transforms: Vec<TransformParams>,
    pub temporal: Vec<JtmLayer>,
    pub interaction: Vec<DstiParams>,
    pub class_head: Pointwise,
    pub boundary_head: Pointwise,
    pub asb: Vec<RefineStage>,
    pub brb: Vec<RefineStage>,
}

/// Every stage's outputs, in order.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `C_o×T` log-probabilities, initial head first.
    pub class_log_probs: Vec<Var>,
    /// `C_o×T` probabilities.
    pub class_probs: Vec<Var>,
    /// `1×T`.
    pub boundary_probs: Vec<Var>,
    /// Final trunk features `H_(L_y)`.
    pub features: Var,
    /// One `C_t×C_t` map per cross-attention layer.
    pub attention: Vec<Var>,
}

impl DestModel {
    pub fn new(config: DestConfig, topology: SkeletonTopology, seed: u64) -> Result<Self> {
        config.validate()?;
        if topology.joints() != config.joints {
            return Err(DestError::Config(format!(
                "topology has {} joints but the model expects V = {}",
                topology.joints(),
                config.joints
            )));
        }
        let graph = SkeletonGraph::build(topology, config.k_max, config.beta, config.symmetric_norm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let group_width = c.spatial_channels / c.groups;
        let spatial = SpatialParams::new(
            &mut store,
            "spatial",
            SpatialShape {
                in_channels: c.in_channels,
                mid_channels: c.mid_channels,
                out_channels: c.spatial_channels,
                joints: c.joints,
                scales: c.k_max,
            },
            &mut rng,
        );
        let transforms = (0..c.groups)
            .map(|g| {
                let width = if g == 0 && c.jwtm_baseline { c.joints } else { group_width };
                TransformParams::new(&mut store, &format!("transform{}", g + 1), c.transform_mode, width, &mut rng)
            })
            .collect();
        let first_rows = if c.jwtm_baseline { group_width } else { c.joints };
        let mut temporal = Vec::with_capacity(c.temporal_layers);
        for l in 0..c.temporal_layers {
            let shape = JtmShape {
                rows: if l == 0 { first_rows } else { c.temporal_channels },
                channels: c.temporal_channels,
                kernel: c.kernel_size,
            };
            let name = format!("temporal{}", l + 1);
            temporal.push(match c.temporal_variant {
                TemporalVariant::Tcn => JtmLayer::tcn(&mut store, &name, shape, &mut rng)?,
                TemporalVariant::LinearTransformer => {
                    JtmLayer::transformer(&mut store, &name, shape, c.normalized_attention, &mut rng)?
                }
            });
        }
        let lc = c.effective_interaction_layers();
        let interaction = (0..lc)
            .map(|l| {
                DstiParams::new(
                    &mut store,
                    &format!("interaction{}", l + 1),
                    c.joints,
                    c.temporal_channels,
                    c.interaction_mode,
                    c.tau,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let head_in = if c.temporal_layers == 0 { first_rows } else { c.temporal_channels };
        let class_head = Pointwise::new(&mut store, "head.class", head_in, c.classes, &mut rng);
        let boundary_head = Pointwise::new(&mut store, "head.boundary", head_in, 1, &mut rng);
        let asb = (0..c.asb_stages)
            .map(|i| {
                RefineStage::new(
                    &mut store,
                    &format!("asb{}", i + 1),
                    c.classes,
                    c.stage_channels,
                    c.classes,
                    c.stage_layers,
                    &mut rng,
                )
            })
            .collect();
        let brb = (0..c.brb_stages)
            .map(|i| RefineStage::new(&mut store, &format!("brb{}", i + 1), 1, c.stage_channels, 1, c.stage_layers, &mut rng))
            .collect();
        Ok(DestModel {
            config,
            graph,
            store,
            spatial,
            transforms,
            temporal,
            interaction,
            class_head,
            boundary_head,
            asb,
            brb,
        })
    }

    pub fn interaction_layers(&self) -> usize {
        self.interaction.len()
    }

    /// `X[C×T×V]` → every stage's predictions.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<ForwardOutput> {
        let c = &self.config;
        let xs = tape.shape(x).to_vec();
        if xs.len() != 3 || xs[0] != c.in_channels || xs[2] != c.joints || xs[1] == 0 {
            return Err(DestError::Dimension(format!(
                "model expects input of shape [{}, T, {}], got {xs:?}",
                c.in_channels, c.joints
            )));
        }
        let t = xs[1];
        let a_hat = graph_constants(tape, &self.graph)?;
        let s = spatial_forward(tape, bound, &self.spatial, &a_hat, x)?;
        let groups = split_groups(tape, s, c.groups)?;
        let mut sub: BTreeMap<usize, Var> = BTreeMap::new();

        let first = if c.jwtm_baseline {
            transform(tape, bound, &self.transforms[0], groups[0], CollapseAxis::Joints)?
        } else {
            let s1 = transform(tape, bound, &self.transforms[0], groups[0], CollapseAxis::Channels)?;
            tape.transpose(s1)?
        };
        let mut h = first;
        let mut attention = Vec::new();
        for (i, layer) in self.temporal.iter().enumerate() {
            let l = i + 1;
            let input = if l == 1 {
                first
            } else if l - 1 <= self.interaction.len() {
                let g = l.min(c.groups);
                let s_g = match sub.get(&g) {
                    Some(&v) => v,
                    None => {
                        let v = transform(tape, bound, &self.transforms[g - 1], groups[g - 1], CollapseAxis::Channels)?;
                        sub.insert(g, v);
                        v
                    }
                };
                let out = dsti_forward(tape, bound, &self.interaction[l - 2], s_g, h)?;
                attention.extend(out.attention);
                out.r
            } else {
                h
            };
            let dil = dilation_for(l, t);
            h = if l == 1 && c.jwtm_baseline {
                jwtm_forward(tape, bound, layer, input, dil)?
            } else {
                jtm_forward(tape, bound, layer, input, dil)?
            };
        }

        let logits = self.class_head.forward(tape, bound, h)?;
        let mut lp = tape.log_softmax(logits, 0)?;
        let mut probs = tape.exp(lp);
        let mut class_log_probs = vec![lp];
        let mut class_probs = vec![probs];
        for stage in &self.asb {
            let logits = stage.forward(tape, bound, probs)?;
            lp = tape.log_softmax(logits, 0)?;
            probs = tape.exp(lp);
            class_log_probs.push(lp);
            class_probs.push(probs);
        }
        let b = self.boundary_head.forward(tape, bound, h)?;
        let mut yb = tape.sigmoid(b);
        let mut boundary_probs = vec![yb];
        for stage in &self.brb {
            let b = stage.forward(tape, bound, yb)?;
            yb = tape.sigmoid(b);
            boundary_probs.push(yb);
        }
        Ok(ForwardOutput {
            class_log_probs,
            class_probs,
            boundary_probs,
            features: h,
            attention,
        })
    }

    /// Inference without gradient bookkeeping on the caller's side.
    pub fn predict(&self, coords: &Tensor) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let x = tape.leaf(coords);
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(Prediction {
            class_probs: tape.tensor(*out.class_probs.last().expect("initial head")),
            boundary_probs: tape.tensor(*out.boundary_probs.last().expect("initial head")),
            features: tape.tensor(out.features),
            attention: out.attention.iter().map(|&a| tape.tensor(a)).collect(),
        })
    }

    pub fn summary(&self) -> ModelSummary {
        model_summary(self)
    }
}

/// Final-stage outputs of one sequence.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub class_probs: Tensor,
    pub boundary_probs: Tensor,
    pub features: Tensor,
    pub attention: Vec<Tensor>,
}

impl Prediction {
    pub fn labels(&self) -> Vec<usize> {
        argmax_columns(&self.class_probs)
    }

    pub fn refined(&self, threshold: f64) -> Vec<usize> {
        refine_with_boundaries(&self.class_probs, self.boundary_probs.data(), threshold)
    }
}

/// Per-column argmax of a `C×T` matrix; ties go to the lower class id.
pub fn argmax_columns(m: &Tensor) -> Vec<usize> {
    let (c, t) = (m.shape()[0], m.shape()[1]);
    let d = m.data();
    (0..t)
        .map(|ti| {
            (0..c).fold(0, |best, ci| if d[ci * t + ti] > d[best * t + ti] { ci } else { best })
        })
        .collect()
}

/// Frames where `y_b` exceeds `threshold` and is the first maximum of its
/// ±2-frame window.
pub fn boundary_peaks(y_b: &[f64], threshold: f64) -> Vec<usize> {
    const HALF: usize = 2;
    (0..y_b.len())
        .filter(|&t| {
            if !(y_b[t] > threshold) {
                return false;
            }
            let lo = t.saturating_sub(HALF);
            let hi = (t + HALF).min(y_b.len() - 1);
            (lo..=hi).all(|s| if s < t { y_b[s] < y_b[t] } else { y_b[s] <= y_b[t] })
        })
        .collect()
}

/// Relabels every inter-boundary span with its majority framewise class.
pub fn refine_with_boundaries(y_c: &Tensor, y_b: &[f64], threshold: f64) -> Vec<usize> {
    let frame = argmax_columns(y_c);
    let classes = y_c.shape()[0];
    let mut cuts = vec![0];
    cuts.extend(boundary_peaks(y_b, threshold).into_iter().filter(|&p| p > 0));
    cuts.push(frame.len());
    let mut out = Vec::with_capacity(frame.len());
    for w in cuts.windows(2) {
        let span = &frame[w[0]..w[1]];
        let mut votes = vec![0usize; classes];
        for &l in span {
            votes[l] += 1;
        }
        let major = (0..classes).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
        out.extend(std::iter::repeat(major).take(span.len()));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSummary {
    /// `(component, parameter count)`, in forward order.
    pub breakdown: Vec<(String, usize)>,
    pub params: usize,
    /// Multiply-adds per frame, excluding the `T`-independent spatial-operator
    /// construction.
    pub macs_per_frame: usize,
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "component\tparams")?;
        for (name, n) in &self.breakdown {
            writeln!(f, "{name}\t{n}")?;
        }
        writeln!(f, "total\t{}", self.params)?;
        writeln!(f, "macs_per_frame\t{}", self.macs_per_frame)
    }
}

/// Closed-form parameter and multiply-add counts.
pub fn model_summary(model: &DestModel) -> ModelSummary {
    let c = &model.config;
    let sp_shape = model.spatial.shape;
    let group_width = c.spatial_channels / c.groups;
    let spatial = SpatialParams::param_count(&sp_shape);
    let transforms: usize = (0..c.groups)
        .map(|g| {
            let width = if g == 0 && c.jwtm_baseline { c.joints } else { group_width };
            TransformParams::param_count(c.transform_mode, width)
        })
        .sum();
    let temporal: usize = model.temporal.iter().map(JtmLayer::param_count).sum();
    let interaction: usize = model.interaction.iter().map(DstiParams::param_count).sum();
    let heads = model.class_head.param_count() + model.boundary_head.param_count();
    let asb: usize = model.asb.iter().map(RefineStage::param_count).sum();
    let brb: usize = model.brb.iter().map(RefineStage::param_count).sum();
    let breakdown: Vec<(String, usize)> = [
        ("spatial", spatial),
        ("transforms", transforms),
        ("temporal", temporal),
        ("interaction", interaction),
        ("heads", heads),
        ("asb", asb),
        ("brb", brb),
    ]
    .into_iter()
    .map(|(n, v)| (n.to_string(), v))
    .collect();
    let params = breakdown.iter().map(|(_, n)| n).sum();

    // transforms actually evaluated: group 1 plus the groups feeding interaction layers
    let used_groups = 1 + (2..=model.interaction.len() + 1)
        .map(|l| l.min(c.groups))
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let transform_macs = match c.transform_mode {
        TransformMode::Convolution | TransformMode::Avgpool => used_groups * group_width * c.joints,
        TransformMode::Maxpool => 0,
    };
    let head_macs = model.class_head.c_in * (c.classes + 1);
    let macs = SpatialParams::macs_per_frame(&sp_shape)
        + transform_macs
        + model.temporal.iter().map(JtmLayer::macs_per_frame).sum::<usize>()
        + model.interaction.iter().map(DstiParams::macs_per_frame).sum::<usize>()
        + head_macs
        + model.asb.iter().chain(&model.brb).map(RefineStage::macs_per_frame).sum::<usize>();
    ModelSummary {
        breakdown,
        params,
        macs_per_frame: macs,
    }
}
