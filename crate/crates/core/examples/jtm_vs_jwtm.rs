//! Held-out comparison of joint-decoupled and joint-shared temporal modelling
//! on the speed-contrast data, where classes differ only in which joints move
//! fast. Frame-difference channels are appended to the coordinates.
//!
//!     cargo run --release --example jtm_vs_jwtm -- 30

use dest_core::config::{MotionChannels, RunConfig};
use dest_core::data::{synthesize, SequenceSample, SpeedProfile, SynthSpec};
use dest_core::graph::SkeletonTopology;
use dest_core::model::DestModel;
use dest_core::train::{evaluate_dataset, train};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(30), |s| s.parse())?;
    let all: Vec<SequenceSample> = synthesize(&SpeedProfile::speed_contrast(4, 25)?, &SynthSpec::new(30, 400, 7))?
        .iter()
        .map(|s| s.with_motion(MotionChannels::Append).zscored())
        .collect();
    let (train_set, test_set) = all.split_at(20);

    for jwtm in [false, true] {
        let mut run = RunConfig::default();
        let m = &mut run.model;
        m.in_channels = 6;
        m.jwtm_baseline = jwtm;
        m.temporal_layers = 6;
        m.interaction_layers = 5;
        m.temporal_channels = 32;
        m.asb_stages = 1;
        m.brb_stages = 1;
        m.stage_layers = 6;
        m.stage_channels = 32;
        run.optim.lr = 0.001;
        run.optim.epochs = epochs;
        let mut model = DestModel::new(run.model.clone(), SkeletonTopology::kinect25(), 0)?;
        train(&mut model, &run, train_set, |_, _| Ok(()))?;
        let r = evaluate_dataset(&model, test_set, None)?;
        println!("{}\theld-out {}", if jwtm { "jwtm" } else { "jtm" }, r.to_json());
    }
    Ok(())
}
