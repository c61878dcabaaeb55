//! Relabel noisy framewise predictions span by span, using peaks of the
//! boundary probabilities.

use dest_core::eval::{edit_score, to_segments};
use dest_core::model::{argmax_columns, boundary_peaks, refine_with_boundaries};
use dest_core::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let noisy = [0, 1, 0, 0, 1, 1, 0, 1, 1, 0];
    let t = gt.len();
    let mut y_c = vec![0.3; 2 * t];
    for (ti, &l) in noisy.iter().enumerate() {
        y_c[l * t + ti] = 0.7;
    }
    let y_c = Tensor::new(vec![2, t], y_c)?;
    let y_b = [0.05, 0.1, 0.1, 0.2, 0.6, 0.9, 0.4, 0.1, 0.1, 0.05];

    println!("peaks above 0.5: {:?}", boundary_peaks(&y_b, 0.5));
    let frame = argmax_columns(&y_c);
    let refined = refine_with_boundaries(&y_c, &y_b, 0.5);
    let gs = to_segments(&gt);
    println!("framewise {frame:?} edit {:.1}", edit_score(&to_segments(&frame), &gs));
    println!("refined   {refined:?} edit {:.1}", edit_score(&to_segments(&refined), &gs));
    Ok(())
}
