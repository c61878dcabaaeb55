//! Run an untrained model on one sequence and write its channel-to-channel
//! attention maps, one text file per interaction layer.

use dest_core::config::DestConfig;
use dest_core::data::{synthesize, SpeedProfile, SynthSpec};
use dest_core::graph::SkeletonTopology;
use dest_core::interaction::export_attention;
use dest_core::model::DestModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("dest-attention");
    let cfg = DestConfig { temporal_channels: 16, temporal_layers: 4, interaction_layers: 3, ..DestConfig::default() };
    let model = DestModel::new(cfg, SkeletonTopology::kinect25(), 1)?;
    let seq = synthesize(&SpeedProfile::speed_contrast(4, 25)?, &SynthSpec::new(1, 120, 3))?.remove(0).zscored();
    let pred = model.predict(&seq.coords)?;
    for (l, map) in pred.attention.iter().enumerate() {
        let path = export_attention(&dir, l + 1, &seq.id, map)?;
        let diag: f64 = (0..map.shape()[0]).map(|i| map.at(&[i, i])).sum::<f64>() / map.shape()[0] as f64;
        println!("{} ({}x{}, mean self-weight {diag:.3})", path.display(), map.shape()[0], map.shape()[1]);
    }
    Ok(())
}
