use super::image::ImageBuffer;
use crate::error::{config_err, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};

/// Tile origins along one axis: stride `tile - overlap`, last tile flush with the end.
pub fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Runs the model on overlapping `tile × tile` crops and averages the overlaps uniformly.
pub fn tile_denoise<T: Scalar>(model: &Model<T>, image: &ImageBuffer, tile: usize, overlap: usize) -> Result<ImageBuffer> {
    if tile == 0 || overlap >= tile {
        return Err(config_err!("tile {tile} must be positive and larger than overlap {overlap}"));
    }
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let unit = image.to_unit();
    let mut mean = vec![0.0f64; unit.len()];
    let mut count = vec![0u32; w * h];
    for &y0 in &tile_starts(h, tile, overlap) {
        for &x0 in &tile_starts(w, tile, overlap) {
            let (tw, th) = (tile.min(w), tile.min(h));
            let input = Tensor::from_fn(vec![1, c, th, tw], |i| {
                let (ch, p) = (i / (th * tw), i % (th * tw));
                T::of(unit[((y0 + p / tw) * w + x0 + p % tw) * c + ch])
            });
            let out = model.forward(&input)?;
            for ty in 0..th {
                for tx in 0..tw {
                    let p = (y0 + ty) * w + x0 + tx;
                    count[p] += 1;
                    let n = f64::from(count[p]);
                    for ch in 0..c {
                        let v = out.data()[(ch * th + ty) * tw + tx].as_f64();
                        let m = &mut mean[p * c + ch];
                        *m += (v - *m) / n;
                    }
                }
            }
        }
    }
    ImageBuffer::from_real(w, h, image.colorspace(), mean)
}

/// Whole-image forward pass.
pub fn denoise<T: Scalar>(model: &Model<T>, image: &ImageBuffer) -> Result<ImageBuffer> {
    let out = model.forward(&image.to_tensor::<T>())?;
    ImageBuffer::from_tensor(&out, 0)
}
