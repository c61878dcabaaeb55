//! Central-difference gradient checks over every differentiable op and
//! every module, plus an end-to-end check of the micro model.
//!
//! Each check reduces its output to a scalar with a fixed random weighting
//! and compares the tape's gradient with `(f(x+ε) − f(x−ε)) / 2ε`. The
//! relative error is `|a − n| / max(|a|, |n|, floor)`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DestConfig, InteractionMode, LossConfig, TransformMode};
use crate::error::Result;
use crate::graph::{SkeletonGraph, SkeletonTopology};
use crate::interaction::{dsti_forward, DstiParams};
use crate::loss::{brb_loss, ce_loss, gs_tmse_against, total_loss_against, BoundaryTarget};
use crate::model::{DestModel, RefineStage};
use crate::params::{Bound, ParamStore};
use crate::spatial::{graph_constants, spatial_forward, transform, CollapseAxis, SpatialParams, SpatialShape, TransformParams};
use crate::temporal::{jtm_forward, jwtm_forward, JtmLayer, JtmShape, ResidualKind};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Denominator floor so vanishing gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    pub seed: u64,
    /// Substring filter on check names.
    pub only: Option<String>,
    /// Test hook: flip the analytic gradient of the named check.
    pub inject_wrong_sign: Option<String>,
    /// Entries sampled for the end-to-end model check.
    pub model_samples: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: DEFAULT_EPS,
            tol: DEFAULT_TOL,
            seed: 0,
            only: None,
            inject_wrong_sign: None,
            model_samples: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Op,
    Module,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub entries: usize,
    pub max_rel_err: f64,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub results: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "check\tkind\tentries\tmax_rel_err\tworst\tstatus")?;
        for r in &self.results {
            let kind = match r.kind {
                CheckKind::Op => "op",
                CheckKind::Module => "module",
            };
            writeln!(
                f,
                "{}\t{kind}\t{}\t{:.3e}\t{}:{}\t{}",
                r.name,
                r.entries,
                r.max_rel_err,
                r.worst.0,
                r.worst.1,
                if r.passed { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

type Forward<'a> = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a>;

struct Case<'a> {
    name: &'static str,
    kind: CheckKind,
    inputs: Vec<Tensor>,
    /// Inputs whose gradients are checked; the rest are held fixed.
    checked: Vec<usize>,
    /// Entries per checked input; `None` checks all of them.
    sample: Option<usize>,
    /// Output is already the scalar objective.
    scalar: bool,
    forward: Forward<'a>,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Values bounded away from zero by `gap`, with random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn objective(tape: &mut Tape, out: Var, scalar: bool, weights: &Tensor) -> Result<Var> {
    if scalar {
        return Ok(out);
    }
    let w = tape.constant(weights.shape(), weights.data().to_vec())?;
    let y = tape.mul(out, w)?;
    Ok(tape.sum(y))
}

fn eval_loss(case: &Case, inputs: &[Tensor], weights: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = (case.forward)(&mut tape, &vars)?;
    let l = objective(&mut tape, out, case.scalar, weights)?;
    Ok(tape.scalar(l))
}

fn run_case(case: Case, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let inputs: Vec<Tensor> = case
        .inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut t = t.clone();
            t.set_requires_grad(case.checked.contains(&i));
            t
        })
        .collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = (case.forward)(&mut tape, &vars)?;
    let weights = rand_tensor(rng, tape.shape(out), -1.0, 1.0);
    let loss = objective(&mut tape, out, case.scalar, &weights)?;
    tape.backward(loss)?;
    let flip = opts.inject_wrong_sign.as_deref() == Some(case.name);

    let mut picks: Vec<(usize, usize)> = Vec::new();
    match case.sample {
        None => {
            for &i in &case.checked {
                picks.extend((0..inputs[i].numel()).map(|e| (i, e)));
            }
        }
        Some(n) => {
            let flat: Vec<(usize, usize)> = case
                .checked
                .iter()
                .flat_map(|&i| (0..inputs[i].numel()).map(move |e| (i, e)))
                .collect();
            for _ in 0..n.min(flat.len()) {
                picks.push(flat[rng.gen_range(0..flat.len())]);
            }
        }
    }

    let mut worst = (0, 0);
    let mut max_rel: f64 = 0.0;
    let mut work = inputs.clone();
    for &(i, e) in &picks {
        let analytic = tape.grad(vars[i]).map_or(0.0, |g| g[e]);
        let analytic = if flip { -analytic } else { analytic };
        let x0 = work[i].data()[e];
        work[i].data_mut()[e] = x0 + opts.eps;
        let up = eval_loss(&case, &work, &weights)?;
        work[i].data_mut()[e] = x0 - opts.eps;
        let down = eval_loss(&case, &work, &weights)?;
        work[i].data_mut()[e] = x0;
        let numeric = (up - down) / (2.0 * opts.eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > max_rel || !rel.is_finite() {
            max_rel = if rel.is_finite() { rel } else { f64::INFINITY };
            worst = (i, e);
        }
    }
    Ok(CheckResult {
        name: case.name.to_string(),
        kind: case.kind,
        entries: picks.len(),
        max_rel_err: max_rel,
        worst,
        passed: max_rel < opts.tol,
    })
}

fn op(name: &'static str, inputs: Vec<Tensor>, forward: Forward<'static>) -> Case<'static> {
    let checked = (0..inputs.len()).collect();
    Case {
        name,
        kind: CheckKind::Op,
        inputs,
        checked,
        sample: None,
        scalar: false,
        forward,
    }
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case<'static>> {
    let r = |rng: &mut ChaCha8Rng, s: &[usize]| rand_tensor(rng, s, -1.0, 1.0);
    vec![
        op("matmul", vec![r(rng, &[3, 4]), r(rng, &[4, 2])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        op("add", vec![r(rng, &[2, 3]), r(rng, &[2, 3])], Box::new(|t, v| t.add(v[0], v[1]))),
        op("sub", vec![r(rng, &[2, 3]), r(rng, &[2, 3])], Box::new(|t, v| t.sub(v[0], v[1]))),
        op("mul", vec![r(rng, &[2, 3]), r(rng, &[2, 3])], Box::new(|t, v| t.mul(v[0], v[1]))),
        op(
            "div",
            vec![r(rng, &[2, 3]), rand_tensor(rng, &[2, 3], 0.5, 1.5)],
            Box::new(|t, v| t.div(v[0], v[1])),
        ),
        op(
            "add_bias",
            vec![r(rng, &[3, 4]), r(rng, &[3]), r(rng, &[4])],
            Box::new(|t, v| {
                let y = t.add_bias(v[0], v[1], 0)?;
                t.add_bias(y, v[2], 1)
            }),
        ),
        op("scale", vec![r(rng, &[5])], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        op("add_scalar", vec![r(rng, &[5])], Box::new(|t, v| Ok(t.add_scalar(v[0], 0.3)))),
        op("relu", vec![away_from_zero(rng, &[2, 5], 0.05)], Box::new(|t, v| Ok(t.relu(v[0])))),
        op("elu", vec![away_from_zero(rng, &[2, 5], 0.05)], Box::new(|t, v| Ok(t.elu(v[0])))),
        op("sigmoid", vec![r(rng, &[6])], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        op("log", vec![rand_tensor(rng, &[6], 0.5, 2.0)], Box::new(|t, v| Ok(t.log(v[0])))),
        op("exp", vec![r(rng, &[6])], Box::new(|t, v| Ok(t.exp(v[0])))),
        op(
            "clamp",
            vec![Tensor::new(vec![6], vec![-0.9, -0.3, 0.1, 0.4, 0.7, -0.6]).expect("shape")],
            Box::new(|t, v| Ok(t.clamp(v[0], -0.5, 0.5))),
        ),
        op("transpose", vec![r(rng, &[3, 4])], Box::new(|t, v| t.transpose(v[0]))),
        op("reshape", vec![r(rng, &[2, 6])], Box::new(|t, v| t.reshape(v[0], &[3, 4]))),
        op(
            "concat",
            vec![r(rng, &[2, 3]), r(rng, &[2, 2])],
            Box::new(|t, v| t.concat(&[v[0], v[1]], 1)),
        ),
        op("slice", vec![r(rng, &[3, 5])], Box::new(|t, v| t.slice(v[0], 1, 1, 3))),
        op(
            "split",
            vec![r(rng, &[4, 3])],
            Box::new(|t, v| {
                let parts = t.split(v[0], 0, 2)?;
                let b = t.scale(parts[1], 2.0);
                t.concat(&[b, parts[0]], 0)
            }),
        ),
        op("sum", vec![r(rng, &[2, 3])], Box::new(|t, v| Ok(t.sum(v[0])))),
        op("mean", vec![r(rng, &[2, 3])], Box::new(|t, v| Ok(t.mean(v[0])))),
        op("sum_axis", vec![r(rng, &[2, 3, 4])], Box::new(|t, v| t.sum_axis(v[0], 1))),
        op("max_axis", vec![r(rng, &[3, 4, 2])], Box::new(|t, v| t.max_axis(v[0], 1))),
        op("softmax", vec![r(rng, &[3, 4])], Box::new(|t, v| t.softmax(v[0], 1))),
        op("log_softmax", vec![r(rng, &[3, 4])], Box::new(|t, v| t.log_softmax(v[0], 0))),
        op(
            "conv1d",
            vec![r(rng, &[2, 7]), r(rng, &[3, 2, 3])],
            Box::new(|t, v| t.conv1d(v[0], v[1], 2)),
        ),
    ]
}

/// Wraps a parameterized module: the store's tensors come first, then `data`.
fn module<'a>(
    name: &'static str,
    store: ParamStore,
    data: Vec<Tensor>,
    check_data: bool,
    forward: impl Fn(&mut Tape, &Bound, &[Var]) -> Result<Var> + 'a,
) -> Case<'a> {
    let n = store.len();
    let mut inputs: Vec<Tensor> = store.tensors().to_vec();
    inputs.extend(data);
    let checked = if check_data { (0..inputs.len()).collect() } else { (0..n).collect() };
    Case {
        name,
        kind: CheckKind::Module,
        inputs,
        checked,
        sample: None,
        scalar: false,
        forward: Box::new(move |t, v| {
            let bound = Bound::from_vars(v[..n].to_vec());
            forward(t, &bound, &v[n..])
        }),
    }
}

/// Perturbs freshly initialized parameters so zero-initialized tensors are
/// exercised away from their starting point.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for t in store.tensors_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
}

fn module_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case<'static>>> {
    let mut cases = Vec::new();
    let topo = SkeletonTopology::chain(4)?;
    let graph = SkeletonGraph::build(topo, 2, 0.001, false)?;

    // spatial
    let mut store = ParamStore::new();
    let shape = SpatialShape {
        in_channels: 2,
        mid_channels: 2,
        out_channels: 3,
        joints: 4,
        scales: 2,
    };
    let sp = SpatialParams::new(&mut store, "s", shape, rng);
    jitter(&mut store, rng);
    let x = rand_tensor(rng, &[2, 5, 4], -1.0, 1.0);
    let g = graph.clone();
    cases.push(module("spatial", store, vec![x], true, move |t, b, v| {
        let a = graph_constants(t, &g)?;
        spatial_forward(t, b, &sp, &a, v[0])
    }));

    // transforms
    for (name, mode, axis) in [
        ("transform_conv_channels", TransformMode::Convolution, CollapseAxis::Channels),
        ("transform_conv_joints", TransformMode::Convolution, CollapseAxis::Joints),
        ("transform_avgpool", TransformMode::Avgpool, CollapseAxis::Channels),
        ("transform_maxpool", TransformMode::Maxpool, CollapseAxis::Joints),
    ] {
        let mut store = ParamStore::new();
        let width = if axis == CollapseAxis::Channels { 3 } else { 4 };
        let p = TransformParams::new(&mut store, "tr", mode, width, rng);
        jitter(&mut store, rng);
        let x = rand_tensor(rng, &[3, 5, 4], -1.0, 1.0);
        cases.push(module(name, store, vec![x], true, move |t, b, v| transform(t, b, &p, v[0], axis)));
    }

    // temporal, both residual forms
    for (name, rows, residual) in [
        ("jtm_tcn", 2usize, ResidualKind::Projection),
        ("jtm_tcn_identity", 3, ResidualKind::Identity),
    ] {
        let mut store = ParamStore::new();
        let shape = JtmShape {
            rows,
            channels: 3,
            kernel: 3,
        };
        let layer = JtmLayer::tcn_with(&mut store, "j", shape, residual, true, rng)?;
        let j = rand_tensor(rng, &[rows, 5], -1.0, 1.0);
        cases.push(module(name, store, vec![j], true, move |t, b, v| jtm_forward(t, b, &layer, v[0], 2)));
    }
    for (name, normalized) in [("jtm_transformer", false), ("jtm_transformer_normalized", true)] {
        let mut store = ParamStore::new();
        let shape = JtmShape {
            rows: 2,
            channels: 3,
            kernel: 3,
        };
        let layer = JtmLayer::transformer(&mut store, "j", shape, normalized, rng)?;
        jitter(&mut store, rng);
        let j = rand_tensor(rng, &[2, 4], -1.0, 1.0);
        cases.push(module(name, store, vec![j], true, move |t, b, v| jtm_forward(t, b, &layer, v[0], 1)));
    }
    {
        let mut store = ParamStore::new();
        let shape = JtmShape {
            rows: 3,
            channels: 2,
            kernel: 3,
        };
        let layer = JtmLayer::tcn(&mut store, "w", shape, rng)?;
        let s = rand_tensor(rng, &[3, 6], -1.0, 1.0);
        cases.push(module("jwtm", store, vec![s], true, move |t, b, v| jwtm_forward(t, b, &layer, v[0], 1)));
    }

    // interaction
    for (name, mode) in [
        ("dsti_cross_attention", InteractionMode::CrossAttention),
        ("dsti_summation", InteractionMode::Summation),
    ] {
        let mut store = ParamStore::new();
        let p = DstiParams::new(&mut store, "d", 4, 3, mode, None, rng)?;
        jitter(&mut store, rng);
        let s = rand_tensor(rng, &[4, 4], -1.0, 1.0);
        let h = rand_tensor(rng, &[3, 4], -1.0, 1.0);
        cases.push(module(name, store, vec![s, h], true, move |t, b, v| {
            Ok(dsti_forward(t, b, &p, v[0], v[1])?.r)
        }));
    }

    // refinement stage
    {
        let mut store = ParamStore::new();
        let st = RefineStage::new(&mut store, "r", 2, 3, 2, 2, rng);
        jitter(&mut store, rng);
        let x = rand_tensor(rng, &[2, 6], 0.0, 1.0);
        cases.push(module("refine_stage", store, vec![x], true, move |t, b, v| st.forward(t, b, v[0])));
    }

    // losses, on free log-probabilities
    let labels = vec![0usize, 0, 1, 1, 2, 2];
    {
        let lp = rand_tensor(rng, &[3, 6], -2.0, 0.0);
        let labels = labels.clone();
        let mut c = op("ce_loss", vec![lp], Box::new(move |t, v| ce_loss(t, v[0], &labels)));
        c.kind = CheckKind::Module;
        c.scalar = true;
        cases.push(c);
    }
    {
        // some adjacent differences exceed the truncation, none sit on it
        let lp = Tensor::new(
            vec![2, 5],
            vec![-0.1, -2.5, -0.4, -0.45, -3.0, -1.3, -0.2, -1.9, -0.3, -0.35],
        )?;
        let w = vec![1.0, 0.6, 0.3, 0.9];
        // the t−1 operand is a stop-gradient, so it is held fixed as a second input
        let frozen = lp.clone();
        let mut c = op(
            "gs_tmse_loss",
            vec![lp, frozen],
            Box::new(move |t, v| gs_tmse_against(t, v[0], v[1], &w, 1.0)),
        );
        c.kind = CheckKind::Module;
        c.scalar = true;
        c.checked = vec![0];
        cases.push(c);
    }
    {
        let y = rand_tensor(rng, &[1, 6], 0.05, 0.95);
        let target = BoundaryTarget::from_labels(&labels);
        let mut c = op("brb_loss", vec![y], Box::new(move |t, v| brb_loss(t, v[0], &target)));
        c.kind = CheckKind::Module;
        c.scalar = true;
        cases.push(c);
    }
    Ok(cases)
}

/// End-to-end: micro model, `T = 8`, full training objective.
fn model_case(rng: &mut ChaCha8Rng, samples: usize) -> Result<Case<'static>> {
    let cfg = DestConfig::micro();
    let mut model = DestModel::new(cfg.clone(), SkeletonTopology::chain(cfg.joints)?, rng.gen())?;
    jitter(&mut model.store, rng);
    let t = 8;
    let x = rand_tensor(rng, &[cfg.in_channels, t, cfg.joints], -1.0, 1.0);
    let labels = vec![0, 0, 0, 1, 1, 2, 2, 2];
    let sim: Vec<f64> = (1..t).map(|_| rng.gen_range(0.2..1.0)).collect();
    let loss_cfg = LossConfig::default();
    // smoothing references frozen at the unperturbed parameters
    let references: Vec<Tensor> = {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let xv = tape.leaf(&x);
        let out = model.forward(&mut tape, &bound, xv)?;
        out.class_log_probs.iter().map(|&v| tape.tensor(v)).collect()
    };
    let store = model.store.clone();
    let mut c = module("model_end_to_end", store, vec![x], false, move |tape, b, v| {
        let out = model.forward(tape, b, v[0])?;
        let terms = total_loss_against(
            tape,
            &out.class_log_probs,
            &out.boundary_probs,
            &labels,
            &sim,
            &loss_cfg,
            Some(&references),
        )?;
        Ok(terms.total)
    });
    c.scalar = true;
    c.sample = Some(samples);
    Ok(c)
}

/// Runs every check whose name contains `opts.only`.
pub fn run_gradcheck(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cases = op_cases(&mut rng);
    cases.extend(module_cases(&mut rng)?);
    cases.push(model_case(&mut rng, opts.model_samples)?);
    let mut results = Vec::new();
    for case in cases {
        if let Some(f) = &opts.only {
            if !case.name.contains(f.as_str()) {
                continue;
            }
        }
        results.push(run_case(case, opts, &mut rng)?);
    }
    Ok(GradCheckReport { results })
}

pub fn check_names() -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut names: Vec<String> = op_cases(&mut rng).iter().map(|c| c.name.to_string()).collect();
    names.extend(module_cases(&mut rng)?.iter().map(|c| c.name.to_string()));
    names.push("model_end_to_end".into());
    Ok(names)
}
