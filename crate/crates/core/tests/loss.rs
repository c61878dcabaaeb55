mod common;

use common::{random, rng};
use dest_core::config::{DestConfig, LossConfig};
use dest_core::graph::SkeletonTopology;
use dest_core::loss::{brb_loss, ce_loss, gs_tmse_loss, similarity_weights, total_loss, BoundaryTarget};
use dest_core::model::DestModel;
use dest_core::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn log_softmax_cols(z: &Tensor) -> Vec<f64> {
    let (c, t) = (z.shape()[0], z.shape()[1]);
    let mut out = vec![0.0; c * t];
    for ti in 0..t {
        let m = (0..c).map(|ci| z.at(&[ci, ti])).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..c).map(|ci| (z.at(&[ci, ti]) - m).exp()).sum::<f64>().ln();
        for ci in 0..c {
            out[ci * t + ti] = z.at(&[ci, ti]) - lse;
        }
    }
    out
}

#[test]
fn ce_matches_per_frame_loop() {
    let z = random(&[3, 5], &mut rng(1));
    let labels = [2, 0, 0, 1, 2];
    let lp = log_softmax_cols(&z);
    let want = -labels.iter().enumerate().map(|(t, &l)| lp[l * 5 + t]).sum::<f64>() / 5.0;
    let mut tape = Tape::new();
    let v = tape.constant(&[3, 5], lp).unwrap();
    let ce = ce_loss(&mut tape, v, &labels).unwrap();
    assert!((tape.scalar(ce) - want).abs() < 1e-14);
}

#[test]
fn gs_tmse_two_frame_hand_case() {
    let feats = Tensor::new(vec![2, 2], vec![0.3, 0.3, -1.0, -1.0]).unwrap();
    let w = similarity_weights(&feats, 1.0).unwrap();
    assert_eq!(w, vec![1.0]);
    let lp = [-0.1, -2.0, -6.0, -0.2];
    let mut tape = Tape::new();
    let v = tape.constant(&[2, 2], lp.to_vec()).unwrap();
    let g = gs_tmse_loss(&mut tape, v, &w, 4.0).unwrap();
    let d0: f64 = (-2.0f64 - -0.1).abs().min(4.0);
    let d1: f64 = (-0.2f64 - -6.0).abs().min(4.0);
    assert!((tape.scalar(g) - (d0 * d0 + d1 * d1) / 4.0).abs() < 1e-14);
}

#[test]
fn brb_single_boundary_weight() {
    let mut labels = vec![0; 10];
    labels[6..].fill(1);
    let target = BoundaryTarget::from_labels(&labels);
    assert_eq!(target.positive_weight, Some(10.0));
    let mut tape = Tape::new();
    let exact = tape.constant(&[1, 10], target.indicator.clone()).unwrap();
    let b = brb_loss(&mut tape, exact, &target).unwrap();
    assert!(tape.scalar(b) < 1e-10);
}

#[test]
fn perfect_predictions_give_near_zero_total() {
    let t = 6;
    let labels = [0, 0, 0, 1, 1, 1];
    let mut lp = vec![-1e3; 2 * t];
    for (ti, &l) in labels.iter().enumerate() {
        lp[l * t + ti] = 0.0;
    }
    let mut sim = vec![1.0; t - 1];
    sim[2] = 0.0;
    let mut tape = Tape::new();
    let lpv = tape.constant(&[2, t], lp).unwrap();
    let yb = tape.constant(&[1, t], BoundaryTarget::from_labels(&labels).indicator).unwrap();
    let terms = total_loss(&mut tape, &[lpv], &[yb], &labels, &sim, &LossConfig::default()).unwrap();
    assert!(tape.scalar(terms.total) < 1e-10, "{}", tape.scalar(terms.total));
}

fn micro_outputs(gamma: f64) -> (DestModel, Tape, dest_core::params::Bound, dest_core::loss::LossTerms, f64) {
    let cfg = DestConfig { in_channels: 3, ..DestConfig::micro() };
    let model = DestModel::new(cfg, SkeletonTopology::chain(4).unwrap(), 2).unwrap();
    let x = random(&[3, 10, 4], &mut rng(3));
    let labels = [0, 0, 0, 1, 1, 2, 2, 2, 2, 0];
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let xv = tape.leaf(&x);
    let out = model.forward(&mut tape, &bound, xv).unwrap();
    let sim = similarity_weights(&dest_core::loss::frame_features(&x).unwrap(), 1.0).unwrap();
    let cfg = LossConfig { gamma, ..LossConfig::default() };
    let terms = total_loss(&mut tape, &out.class_log_probs, &out.boundary_probs, &labels, &sim, &cfg).unwrap();
    (model, tape, bound, terms, gamma)
}

#[test]
fn total_is_sum_of_components() {
    let (_, tape, _, terms, gamma) = micro_outputs(0.1);
    let want = terms.ce + terms.gs_tmse + gamma * terms.brb;
    assert!((tape.scalar(terms.total) - want).abs() < 1e-12);
    assert!(terms.ce > 0.0 && terms.brb > 0.0);
}

#[test]
fn zero_gamma_silences_boundary_branch() {
    let (mut model, mut tape, bound, terms, _) = micro_outputs(0.0);
    tape.backward(terms.total).unwrap();
    model.store.accumulate_grads(&tape, &bound).unwrap();
    let mut class_head_moved = false;
    for (name, t) in model.store.iter() {
        let g = t.grad().unwrap();
        if name.starts_with("head.boundary") || name.starts_with("brb") {
            assert!(g.iter().all(|&x| x == 0.0), "{name}");
        }
        if name.starts_with("head.class") {
            class_head_moved |= g.iter().any(|&x| x != 0.0);
        }
    }
    assert!(class_head_moved);
}

proptest! {
    #[test]
    fn losses_are_finite_and_non_negative(
        z in prop::collection::vec(-30.0f64..30.0, 12),
        yb in prop::collection::vec(0.0f64..=1.0, 4),
        labels in prop::collection::vec(0usize..3, 4),
        sim in prop::collection::vec(0.0f64..=1.0, 3),
    ) {
        let lp = log_softmax_cols(&Tensor::new(vec![3, 4], z).unwrap());
        let mut tape = Tape::new();
        let lpv = tape.constant(&[3, 4], lp).unwrap();
        let ybv = tape.constant(&[1, 4], yb).unwrap();
        let terms = total_loss(&mut tape, &[lpv], &[ybv], &labels, &sim, &LossConfig::default()).unwrap();
        for x in [terms.ce, terms.gs_tmse, terms.brb, tape.scalar(terms.total)] {
            prop_assert!(x.is_finite() && x >= 0.0);
        }
    }
}
