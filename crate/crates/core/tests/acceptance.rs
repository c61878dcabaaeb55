//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to
//! see the lines; each test also fails on a FAIL.

mod common;

use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use common::oracles::{naive_edit, naive_f1};
use common::{random, rng};
use dest_core::checkpoint::Checkpoint;
use dest_core::config::{DestConfig, InteractionMode, MotionChannels, RunConfig};
use dest_core::data::{load_raw, save_dataset, synthesize, SequenceSample, SpeedProfile, SynthSpec};
use dest_core::eval::{evaluate, EvalReport};
use dest_core::gradcheck::{run_gradcheck, GradCheckOptions};
use dest_core::graph::SkeletonTopology;
use dest_core::model::DestModel;
use dest_core::tensor::Tape;
use dest_core::train::{evaluate_dataset, train};
use rand::Rng;

fn report(n: usize, name: &str, pass: bool, detail: String) {
    println!("criterion {n} ({name}): {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let opts = GradCheckOptions::default();
    assert_eq!((opts.eps, opts.tol), (1e-5, 1e-4));
    let rep = run_gradcheck(&opts).unwrap();
    let micro = DestConfig::micro();
    assert_eq!((micro.joints, micro.classes, micro.temporal_layers, micro.interaction_layers), (4, 3, 3, 2));
    let secs = start.elapsed().as_secs_f64();
    let worst = rep.results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = rep.failures().map(|r| r.name.as_str()).collect();
    let has_model = rep.results.iter().any(|r| r.name == "model_end_to_end");
    report(
        1,
        "gradient suite",
        rep.passed() && has_model && secs < 120.0,
        format!("{} checks, worst rel err {worst:.2e}, failed {failed:?}, {secs:.1}s", rep.results.len()),
    );
}

#[test]
fn criterion_2_metric_oracles() {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut mismatches = 0;
    for case in 0..1000 {
        let t = r.gen_range(1..=200);
        let classes = r.gen_range(1..=6);
        let runs = |r: &mut rand_chacha::ChaCha8Rng| {
            let mut v = Vec::with_capacity(t);
            while v.len() < t {
                let c = r.gen_range(0..classes);
                let n = r.gen_range(1..=40).min(t - v.len());
                v.extend(std::iter::repeat(c).take(n));
            }
            v
        };
        let gt = runs(&mut r);
        let pred = if case % 3 == 0 {
            gt.iter().map(|&c| if r.gen_bool(0.1) { r.gen_range(0..classes) } else { c }).collect()
        } else {
            runs(&mut r)
        };
        let rep = evaluate(&pred, &gt).unwrap();
        let acc = 100.0 * (0..t).filter(|&i| pred[i] == gt[i]).count() as f64 / t as f64;
        let same = rep.acc == acc
            && rep.edit == naive_edit(&pred, &gt)
            && rep.f1_10 == naive_f1(&pred, &gt, 0.10)
            && rep.f1_25 == naive_f1(&pred, &gt, 0.25)
            && rep.f1_50 == naive_f1(&pred, &gt, 0.50);
        mismatches += usize::from(!same);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "metric oracles",
        mismatches == 0 && secs < 60.0,
        format!("1000 pairs, {mismatches} mismatches, {secs:.1}s"),
    );
}

fn preset_data(sequences: usize) -> Vec<SequenceSample> {
    let profile = SpeedProfile::speed_contrast(4, 25).unwrap();
    synthesize(&profile, &SynthSpec::new(sequences, 400, 7)).unwrap()
}

#[test]
#[ignore = "long training run; use --include-ignored"]
fn criterion_3_overfit_run() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(dir.path(), &preset_data(20)).unwrap();
    let mut run = RunConfig::default();
    run.optim.stop_at_acc = Some(95.0);
    run.optim.stop_at_f1_50 = Some(90.0);
    let data = dest_core::data::load_dataset(&manifest, &run.data).unwrap();
    let mut model = DestModel::new(run.model.clone(), SkeletonTopology::kinect25(), run.optim.seed).unwrap();
    let summary = train(&mut model, &run, &data, |_, _| Ok(())).unwrap();
    let clean = evaluate_dataset(&model, &data, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "overfit run",
        clean.acc >= 95.0 && clean.f1_50 >= 90.0 && summary.logs.len() <= 300,
        format!(
            "{} epochs, train acc {:.2}, F1@50 {:.2}, {secs:.0}s",
            summary.logs.len(),
            clean.acc,
            clean.f1_50
        ),
    );
}

/// Preset sequences 0..20 train, 10 further sequences from the same stream
/// are held out. Reduced model, motion channels appended.
fn holdout(variant: impl Fn(&mut DestConfig), seed: u64) -> EvalReport {
    let mut run = RunConfig::default();
    run.data.motion = MotionChannels::Append;
    let all: Vec<SequenceSample> = preset_data(30)
        .iter()
        .map(|s| s.with_motion(run.data.motion).zscored())
        .collect();
    let (tr, te) = all.split_at(20);
    let m = &mut run.model;
    m.in_channels = 6;
    m.temporal_layers = 6;
    m.interaction_layers = 5;
    m.temporal_channels = 32;
    m.asb_stages = 1;
    m.brb_stages = 1;
    m.stage_layers = 6;
    m.stage_channels = 32;
    variant(m);
    run.optim.lr = 0.001;
    run.optim.epochs = 30;
    run.optim.seed = seed;
    let mut model = DestModel::new(run.model.clone(), SkeletonTopology::kinect25(), seed).unwrap();
    train(&mut model, &run, tr, |_, _| Ok(())).unwrap();
    evaluate_dataset(&model, te, None).unwrap()
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn mean(reports: &[EvalReport], f: impl Fn(&EvalReport) -> f64) -> f64 {
    reports.iter().map(f).sum::<f64>() / reports.len() as f64
}

fn reference_runs() -> &'static [EvalReport] {
    static RUNS: OnceLock<Vec<EvalReport>> = OnceLock::new();
    RUNS.get_or_init(|| SEEDS.iter().map(|&s| holdout(|_| {}, s)).collect())
}

#[test]
#[ignore = "long training run; use --include-ignored"]
fn criterion_4_jtm_beats_jwtm() {
    let jtm = reference_runs();
    let jwtm: Vec<EvalReport> = SEEDS.iter().map(|&s| holdout(|m| m.jwtm_baseline = true, s)).collect();
    let (a, b) = (mean(jtm, |r| r.acc), mean(&jwtm, |r| r.acc));
    let per_seed: Vec<String> = jtm.iter().zip(&jwtm).map(|(x, y)| format!("{:.1}/{:.1}", x.acc, y.acc)).collect();
    report(
        4,
        "JTM vs JWTM held-out acc",
        a - b >= 5.0,
        format!("JTM {a:.2}, JWTM {b:.2}, margin {:.2} (need >= 5); per seed {per_seed:?}", a - b),
    );
}

#[test]
#[ignore = "long training run; use --include-ignored"]
fn criterion_5_cross_attention_vs_summation() {
    let ca = reference_runs();
    let sum: Vec<EvalReport> = SEEDS
        .iter()
        .map(|&s| holdout(|m| m.interaction_mode = InteractionMode::Summation, s))
        .collect();
    let (a, b) = (mean(ca, |r| r.f1_50), mean(&sum, |r| r.f1_50));
    let per_seed: Vec<String> = ca.iter().zip(&sum).map(|(x, y)| format!("{:.1}/{:.1}", x.f1_50, y.f1_50)).collect();
    report(
        5,
        "cross-attention vs summation held-out F1@50",
        a >= b - 1.0,
        format!("cross-attention {a:.2}, summation {b:.2} (regression allowed <= 1); per seed {per_seed:?}"),
    );
}

#[test]
fn criterion_6_structural_invariants() {
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let cfg = DestConfig { joints: 25, in_channels: 3, ..DestConfig::micro() };
    let model = DestModel::new(cfg, SkeletonTopology::kinect25(), 3).unwrap();
    let pred = model.predict(&random(&[3, 30, 25], &mut rng(1))).unwrap();
    let (c, t) = (pred.class_probs.shape()[0], pred.class_probs.shape()[1]);
    let cols = (0..t).all(|ti| ((0..c).map(|ci| pred.class_probs.at(&[ci, ti])).sum::<f64>() - 1.0).abs() <= 1e-9);
    checks.push(("Y_c columns sum to 1", cols));
    let rows = !pred.attention.is_empty()
        && pred.attention.iter().all(|a| {
            a.data().chunks(a.shape()[1]).all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9)
        });
    checks.push(("attention rows sum to 1", rows));

    let x = random(&[12, 7], &mut rng(2));
    let mut tape = Tape::new();
    let v = tape.leaf(&x);
    let parts = tape.split(v, 0, 4).unwrap();
    let back = tape.concat(&parts, 0).unwrap();
    checks.push(("split/concat bitwise", tape.value(back) == x.data()));

    let dir = tempfile::tempdir().unwrap();
    let data = preset_data(2);
    let m = save_dataset(&dir.path().join("d"), &data).unwrap();
    checks.push(("dataset save/load bitwise", load_raw(&m).unwrap() == data));

    let ck = Checkpoint::from_model(&model, &RunConfig::default());
    let p = dir.path().join("m.ckpt");
    ck.save(&p).unwrap();
    let back = Checkpoint::load(&p).unwrap();
    checks.push(("checkpoint round trip bitwise", back == ck && back.encode() == std::fs::read(&p).unwrap()));

    let tiny: Vec<SequenceSample> = synthesize(&SpeedProfile::speed_contrast(2, 6).unwrap(), &SynthSpec::new(2, 24, 1))
        .unwrap()
        .iter()
        .map(SequenceSample::zscored)
        .collect();
    let logs = || {
        let mut run = RunConfig::default();
        run.model = DestConfig { joints: 6, in_channels: 3, classes: 2, ..DestConfig::micro() };
        run.optim.epochs = 3;
        run.optim.seed = 11;
        let mut model = DestModel::new(run.model.clone(), SkeletonTopology::chain(6).unwrap(), 11).unwrap();
        let s = train(&mut model, &run, &tiny, |_, _| Ok(())).unwrap();
        let lines: Vec<String> = s.logs.iter().map(|l| l.to_json()).collect();
        (lines, Checkpoint::from_model(&model, &run).encode())
    };
    checks.push(("identical-seed runs identical", logs() == logs()));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(6, "structural invariants", failed.is_empty(), format!("{} checks, failed {failed:?}", checks.len()));
}

fn print_config(args: &[&str]) -> serde_json::Value {
    let out = Command::new(env!("CARGO_BIN_EXE_dest")).args(args).arg("--print-config").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn criterion_7_constants_fidelity() {
    let d = print_config(&[]);
    let m = &d["model"];
    let mcfs = print_config(&["train", "--preset", "mcfs"]);
    let pku = print_config(&["train", "--preset", "pku-lara"]);
    let clamp = DestConfig { temporal_layers: 5, ..DestConfig::default() };
    let optim = |v: &serde_json::Value| (v["optim"]["lr"].as_f64(), v["optim"]["batch_size"].as_u64(), v["optim"]["epochs"].as_u64());
    let checks = [
        ("beta 0.001", m["beta"] == 0.001),
        ("K 13", m["K"] == 13),
        ("M 10", m["M"] == 10),
        ("L_c 10", m["L_c"] == 10 && m["L_y"] == 11),
        ("L_c clamps to L_y - 1", DestConfig::default().effective_interaction_layers() == 10 && clamp.effective_interaction_layers() == 4),
        ("gamma 0.1", d["loss"]["gamma"] == 0.1),
        ("default schedule", optim(&d) == (Some(0.0005), Some(1), Some(300))),
        ("mcfs preset", optim(&mcfs) == (Some(0.0005), Some(1), Some(300))),
        ("pku-lara preset", optim(&pku) == (Some(0.001), Some(8), Some(150))),
        ("stage counts", m["asb_stages"] == 2 && m["brb_stages"] == 3),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(7, "constants fidelity", failed.is_empty(), format!("{} checks, failed {failed:?}", checks.len()));
}
