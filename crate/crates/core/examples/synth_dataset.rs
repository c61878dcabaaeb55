//! Generate the speed-contrast dataset, write it to disk and rank joints by
//! mean speed.
//!
//!     cargo run --example synth_dataset -- /tmp/dest-synth

use std::path::PathBuf;

use dest_core::data::{joint_speed_stats, load_raw, save_dataset, synthesize, SpeedProfile, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dest-synth"));
    let profile = SpeedProfile::speed_contrast(4, 25)?;
    let data = synthesize(&profile, &SynthSpec::new(20, 400, 7))?;
    let manifest = save_dataset(&dir, &data)?;
    println!("wrote {} sequences, manifest {}", data.len(), manifest.display());

    let back = load_raw(&manifest)?;
    assert_eq!(back, data);

    let stats = joint_speed_stats(&back)?;
    println!("rank\tjoint\tmean_speed");
    for (rank, j) in stats.ranking().into_iter().take(8).enumerate() {
        println!("{}\t{j}\t{:.4}", rank + 1, stats.mean[j]);
    }
    println!("always-fast joints: {:?}", profile.fast_joints);
    Ok(())
}
