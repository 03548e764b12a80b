//! Reverse-mode gradients on a small network, checked against central differences.
//!
//! cargo run --release --example autodiff

use hwformer::tensor::{finite_diff_check_many, Coords, Tape, Tensor};

fn main() -> hwformer::Result<()> {
    let x = Tensor::from_fn(vec![1, 2, 6, 6], |i| ((i * 7) % 11) as f64 / 11.0 - 0.4);
    let w = Tensor::from_fn(vec![3, 2, 3, 3], |i| ((i * 5) % 13) as f64 / 13.0 - 0.5);
    let b = Tensor::new(vec![3], vec![0.1, -0.2, 0.05])?;

    // loss = mean(relu(conv3x3(x)) ^ 2)
    let loss = |tape: &Tape<f64>, v: &[hwformer::tensor::Var<f64>]| {
        let y = tape.relu(&tape.conv2d(&v[0], &v[1], &v[2], 1)?);
        Ok(tape.mean(&tape.mul(&y, &y)?))
    };

    let tape = Tape::new();
    let vars = [tape.leaf(&x), tape.leaf(&w), tape.leaf(&b)];
    let out = loss(&tape, &vars)?;
    println!("loss            {:.6}", out.value().item());
    println!("tape nodes      {}", tape.len());
    let grads = tape.backward(&out)?;
    println!("d loss / d bias {:?}", grads.wrt(&vars[2])?.data());

    let err = finite_diff_check_many(loss, &[x, w, b], 1e-6, &Coords::All)?;
    println!("max relative error against central differences: {err:.2e}");
    Ok(())
}
