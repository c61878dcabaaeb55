//! Parameter and multiply-add counts for the default model and its variants.

use dest_core::config::{DestConfig, InteractionMode, TemporalVariant};
use dest_core::graph::SkeletonTopology;
use dest_core::model::DestModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let variants = [
        ("default", DestConfig::default()),
        ("jwtm", DestConfig { jwtm_baseline: true, ..DestConfig::default() }),
        ("transformer", DestConfig { temporal_variant: TemporalVariant::LinearTransformer, ..DestConfig::default() }),
        ("summation", DestConfig { interaction_mode: InteractionMode::Summation, ..DestConfig::default() }),
        ("C_t=128", DestConfig { temporal_channels: 128, ..DestConfig::default() }),
    ];
    println!("variant\tparams\tmacs_per_frame");
    for (name, cfg) in variants {
        let s = DestModel::new(cfg, SkeletonTopology::kinect25(), 0)?.summary();
        println!("{name}\t{}\t{}", s.params, s.macs_per_frame);
    }
    println!();
    print!("{}", DestModel::new(DestConfig::default(), SkeletonTopology::kinect25(), 0)?.summary());
    Ok(())
}
