//! The tape: build a small expression, backpropagate, and fit it with Adam.

use dest_core::tensor::{Adam, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // y = sum(sigmoid(W x)), gradient w.r.t. W.
    let w = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.5, 0.0, -0.4])?.with_grad();
    let x = Tensor::new(vec![3, 1], vec![1.0, 2.0, -1.0])?;
    let mut tape = Tape::new();
    let (wv, xv) = (tape.leaf(&w), tape.leaf(&x));
    let h = tape.matmul(wv, xv)?;
    let s = tape.sigmoid(h);
    let y = tape.sum(s);
    tape.backward(y)?;
    println!("y = {:.6}", tape.scalar(y));
    println!("dy/dW = {:?}", tape.grad(wv).unwrap());

    // Fit a line to three points: [slope, intercept] times a design matrix.
    let design = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 1.0, 1.0, 1.0])?;
    let ys = Tensor::new(vec![1, 3], vec![1.0, 3.0, 5.0])?;
    let mut params = vec![Tensor::zeros(&[1, 2]).with_grad()];
    let mut opt = Adam::new(&params, 0.1);
    for step in 0..300 {
        let mut tape = Tape::new();
        let w = tape.leaf(&params[0]);
        let x = tape.leaf(&design);
        let pred = tape.matmul(w, x)?;
        let target = tape.leaf(&ys);
        let err = tape.sub(pred, target)?;
        let sq = tape.mul(err, err)?;
        let loss = tape.sum(sq);
        tape.backward(loss)?;
        params[0].zero_grad();
        params[0].accumulate_grad(tape.grad(w).unwrap())?;
        opt.step(&mut params)?;
        if step % 100 == 0 {
            println!("step {step}: loss {:.5}", tape.scalar(loss));
        }
    }
    let fit = params[0].data();
    println!("slope {:.3}, intercept {:.3}", fit[0], fit[1]);
    Ok(())
}
