//! Frame accuracy, edit score and F1@{10,25,50} on a hand-made prediction.

use dest_core::eval::{evaluate, to_segments, Evaluator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = [0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2];
    // Late boundary, plus a one-frame flicker inside the second action.
    let pred = [0, 0, 0, 0, 0, 1, 1, 2, 1, 2, 2, 2];
    for s in to_segments(&pred).iter() {
        println!("class {} frames {}..={}", s.label, s.start, s.end);
    }
    println!("{}", evaluate(&pred, &gt)?.to_json());

    // Corpus scores pool F1 counts across sequences.
    let mut ev = Evaluator::new();
    ev.add(&pred, &gt)?;
    ev.add(&gt, &gt)?;
    println!("{}", ev.report().to_json());
    Ok(())
}
