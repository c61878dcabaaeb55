//! Train a reduced model on the speed-contrast data, checkpoint it, reload
//! it and score the training set with and without boundary refinement.
//!
//!     cargo run --release --example train_and_evaluate -- 40

use dest_core::checkpoint::Checkpoint;
use dest_core::config::RunConfig;
use dest_core::data::{synthesize, SequenceSample, SpeedProfile, SynthSpec};
use dest_core::graph::SkeletonTopology;
use dest_core::model::DestModel;
use dest_core::train::{evaluate_dataset, train};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(40), |s| s.parse())?;
    let profile = SpeedProfile::speed_contrast(4, 25)?;
    let data: Vec<SequenceSample> = synthesize(&profile, &SynthSpec::new(8, 200, 7))?
        .iter()
        .map(SequenceSample::zscored)
        .collect();

    let mut run = RunConfig::default();
    run.model.temporal_layers = 6;
    run.model.interaction_layers = 5;
    run.model.temporal_channels = 32;
    run.model.asb_stages = 1;
    run.model.brb_stages = 1;
    run.model.stage_layers = 6;
    run.model.stage_channels = 32;
    run.optim.lr = 0.001;
    run.optim.epochs = epochs;
    run.optim.stop_at_acc = Some(95.0);

    let mut model = DestModel::new(run.model.clone(), SkeletonTopology::kinect25(), run.optim.seed)?;
    println!("{} parameters", model.store.element_count());
    let summary = train(&mut model, &run, &data, |log, _| {
        if log.epoch % 5 == 0 {
            println!("{}", log.to_json());
        }
        Ok(())
    })?;
    println!("trained {} epochs", summary.logs.len());

    let path = std::env::temp_dir().join("dest-example.ckpt");
    Checkpoint::from_model(&model, &run).save(&path)?;
    let (reloaded, _) = Checkpoint::load(&path)?.into_model(SkeletonTopology::kinect25())?;

    println!("plain   {}", evaluate_dataset(&reloaded, &data, None)?.to_json());
    println!("refined {}", evaluate_dataset(&reloaded, &data, Some(0.5))?.to_json());
    Ok(())
}
