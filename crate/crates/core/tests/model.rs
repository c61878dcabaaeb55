mod common;

use common::{random, rng};
use dest_core::config::DestConfig;
use dest_core::eval::{edit_score, to_segments};
use dest_core::graph::SkeletonTopology;
use dest_core::model::{model_summary, refine_with_boundaries, DestModel};
use dest_core::params::ParamStore;
use dest_core::temporal::{JtmLayer, JtmShape};
use dest_core::tensor::{Tape, Tensor};
use rand::Rng;

fn micro(cfg: DestConfig) -> DestModel {
    let v = cfg.joints;
    DestModel::new(cfg, SkeletonTopology::chain(v).unwrap(), 5).unwrap()
}

#[test]
fn every_stage_output_is_normalized_and_full_length() {
    let cfg = DestConfig { asb_stages: 2, brb_stages: 3, ..DestConfig::micro() };
    let m = micro(cfg);
    for t in [1, 8, 13] {
        let x = random(&[2, t, 4], &mut rng(t as u64));
        let mut tape = Tape::new();
        let bound = m.store.bind(&mut tape);
        let xv = tape.leaf(&x);
        let out = m.forward(&mut tape, &bound, xv).unwrap();
        assert_eq!(out.class_probs.len(), 3);
        assert_eq!(out.boundary_probs.len(), 4);
        assert_eq!(tape.shape(out.features), &[4, t]);
        for &p in &out.class_probs {
            assert_eq!(tape.shape(p), &[3, t]);
            let v = tape.value(p);
            for ti in 0..t {
                assert!(((0..3).map(|c| v[c * t + ti]).sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        for &b in &out.boundary_probs {
            assert_eq!(tape.shape(b), &[1, t]);
            assert!(tape.value(b).iter().all(|&y| y > 0.0 && y < 1.0));
        }
    }
}

#[test]
fn without_interaction_only_the_first_group_matters() {
    let cfg = DestConfig { interaction_layers: 0, ..DestConfig::micro() };
    let mut m = micro(cfg);
    let x = random(&[2, 9, 4], &mut rng(1));
    let before = m.predict(&x).unwrap();
    let mut r = rng(2);
    let names: Vec<String> = m.store.iter().map(|(n, _)| n.to_string()).collect();
    let mut touched = 0;
    for name in names.iter().filter(|n| n.starts_with("transform") && !n.starts_with("transform1.")) {
        let id = m.store.id_of(name).unwrap();
        let shape = m.store.get(id).shape().to_vec();
        let n: usize = shape.iter().product();
        m.store.set(name, Tensor::new(shape, (0..n).map(|_| r.gen_range(-5.0..5.0)).collect()).unwrap()).unwrap();
        touched += 1;
    }
    assert_eq!(touched, 4);
    let after = m.predict(&x).unwrap();
    assert_eq!(before.class_probs, after.class_probs);
    assert_eq!(before.boundary_probs, after.boundary_probs);

    let id = m.store.id_of("transform1.w").unwrap();
    m.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += 1.0);
    assert_ne!(m.predict(&x).unwrap().class_probs, before.class_probs);
}

#[test]
fn refine_recovers_spans_from_sixty_percent_majorities() {
    let spans = [(0usize, 20usize), (2, 15), (1, 25), (0, 10), (2, 30)];
    let gt: Vec<usize> = spans.iter().flat_map(|&(c, n)| std::iter::repeat(c).take(n)).collect();
    let t = gt.len();
    let mut r = rng(3);
    let mut noisy = Vec::with_capacity(t);
    let mut y_b = vec![0.0; t];
    let mut start = 0;
    for &(c, n) in &spans {
        if start > 0 {
            y_b[start] = 1.0;
        }
        // 60% of frames keep the true class, the rest are spread over the others.
        let keep = (n * 3).div_ceil(5);
        for i in 0..n {
            noisy.push(if i < keep { c } else { (c + 1 + i % 2) % 3 });
        }
        start += n;
    }
    let mut y_c = vec![0.0; 3 * t];
    for (ti, &l) in noisy.iter().enumerate() {
        for c in 0..3 {
            y_c[c * t + ti] = if c == l { 0.4 + r.gen_range(0.0..0.1) } else { 0.25 };
        }
    }
    let y_c = Tensor::new(vec![3, t], y_c).unwrap();
    let refined = refine_with_boundaries(&y_c, &y_b, 0.5);
    assert_eq!(refined, gt);
    let (ps, gs) = (to_segments(&noisy), to_segments(&gt));
    assert!(edit_score(&to_segments(&refined), &gs) >= edit_score(&ps, &gs));
}

#[test]
fn single_layer_parameter_formula() {
    for (d, ct, cf) in [(25, 64, 3), (64, 64, 3), (7, 5, 5)] {
        let mut store = ParamStore::new();
        JtmLayer::tcn(&mut store, "l", JtmShape { rows: d, channels: ct, kernel: cf }, &mut rng(0)).unwrap();
        let want = d * ct * cf + if d != ct { d * ct } else { 0 };
        assert_eq!(store.element_count(), want);
    }
}

#[test]
fn doubling_temporal_channels_more_than_doubles_parameters() {
    let topo = SkeletonTopology::kinect25();
    let small = DestModel::new(DestConfig::default(), topo.clone(), 0).unwrap();
    let cfg = DestConfig { temporal_channels: 128, ..DestConfig::default() };
    let big = DestModel::new(cfg, topo, 0).unwrap();
    let (a, b) = (model_summary(&small), model_summary(&big));
    assert_eq!(a.params, small.store.element_count());
    assert_eq!(b.params, big.store.element_count());
    let temporal = |s: &dest_core::model::ModelSummary| s.breakdown.iter().find(|(n, _)| n == "temporal").unwrap().1;
    assert!(temporal(&b) > 2 * temporal(&a));
    assert!(b.macs_per_frame > a.macs_per_frame);
}

#[test]
fn empty_model_is_heads_only() {
    let cfg = DestConfig {
        temporal_layers: 0,
        interaction_layers: 0,
        asb_stages: 0,
        brb_stages: 0,
        ..DestConfig::micro()
    };
    let m = micro(cfg);
    let s = model_summary(&m);
    for (name, n) in &s.breakdown {
        match name.as_str() {
            "temporal" | "interaction" | "asb" | "brb" => assert_eq!(*n, 0, "{name}"),
            _ => {}
        }
    }
    let out = m.predict(&random(&[2, 6, 4], &mut rng(4))).unwrap();
    assert_eq!(out.class_probs.shape(), &[3, 6]);
}

#[test]
fn same_seed_same_model() {
    let a = micro(DestConfig::micro());
    let b = micro(DestConfig::micro());
    let x = random(&[2, 7, 4], &mut rng(6));
    assert_eq!(a.predict(&x).unwrap().class_probs, b.predict(&x).unwrap().class_probs);
}
