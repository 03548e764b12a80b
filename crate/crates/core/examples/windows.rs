//! Window partition, cyclic shift and patch tokenization on a labelled feature map.
//!
//! cargo run --release --example windows

use hwformer::tensor::Tensor;
use hwformer::window::{dilated_gather, merge_windows, partition_windows, patchify, roll, roll_reverse, unpatchify, Axis};

fn show(label: &str, t: &Tensor<f32>, rows: usize, cols: usize) {
    println!("{label}");
    for r in t.data().chunks(cols).take(rows) {
        println!("  {}", r.iter().map(|v| format!("{v:3}")).collect::<String>());
    }
}

fn main() -> hwformer::Result<()> {
    // One 8x8 single-channel map whose values are their own raster index.
    let x = Tensor::from_fn(vec![1, 1, 8, 8], |i| i as f32);
    show("input", &x, 8, 8);

    let shifted = roll(&x, Axis::Horizontal, 2)?;
    show("rolled 2 columns left", &shifted, 8, 8);
    assert_eq!(roll_reverse(&shifted, Axis::Horizontal, 2)?, x);

    let (wins, layout) = partition_windows(&x, 4)?;
    println!("4x4 windows: shape {:?}", wins.shape());
    show("first window", &wins, 4, 4);
    assert_eq!(merge_windows(&wins, &layout)?, x);

    let tokens = patchify(&wins, 2)?;
    println!("2x2 patch tokens: shape {:?} (windows, tokens, dim)", tokens.shape());
    show("tokens of the first window", &tokens, 4, 4);
    assert_eq!(unpatchify(&tokens, 1, 4, 2)?, wins);

    // Each token gathers a dilated 3x3 neighbourhood of tokens (edges clamp).
    let grid = Tensor::from_fn(vec![1, 16, 1], |i| i as f32);
    let gathered = dilated_gather(&grid, (4, 4), 1)?;
    println!("dilated gather on a 4x4 token grid: shape {:?}", gathered.shape());
    show("neighbours of token 5", &Tensor::new(vec![9], gathered.data()[5 * 9..6 * 9].to_vec())?, 1, 9);
    println!("all round trips exact");
    Ok(())
}
