//! Multi-scale adjacency of the 25-joint skeleton.

use dest_core::graph::{build_k_adjacency, SkeletonGraph, SkeletonTopology, DEFAULT_BETA, DEFAULT_K};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topo = SkeletonTopology::kinect25();
    println!("joints {}, edges {}, diameter {}", topo.joints(), topo.edges().len(), topo.diameter());

    let scales = build_k_adjacency(&topo, DEFAULT_K)?;
    println!("k\tpairs at distance k");
    for (k, a) in scales.iter().enumerate() {
        let off_diag = a.data().iter().sum::<f64>() as usize - topo.joints();
        println!("{}\t{}", k + 1, off_diag / 2);
    }

    let graph = SkeletonGraph::build(topo, DEFAULT_K, DEFAULT_BETA, false)?;
    let a1 = &graph.normalized[0];
    // Row 0 is the spine base; its neighbours are the hips and the mid spine.
    let row: Vec<String> = (0..25).filter(|&j| a1.at(&[0, j]) != 0.0).map(|j| format!("{j}:{:.3}", a1.at(&[0, j]))).collect();
    println!("normalized scale-1 row of joint 0: {}", row.join(" "));
    Ok(())
}
