//! Closed-form parameter and FLOP counts.
//!
//! A multiply-add is two FLOPs: a convolution costs `2·H·W·Cout·Cin·k²`, a
//! matrix product `2·m·n·p`. Attention adds `4·T²·d` per window (scores and
//! the weighted sum). Windowed stages are charged on the padded map.
//! Normalization, softmax and elementwise work are not counted.

use super::ModelConfig;
use crate::nn::{conv_param_count, linear_param_count};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopReport {
    pub head: u64,
    pub gte: u64,
    pub tde: u64,
    pub tail: u64,
    /// Score and weighted-sum products alone, summed over every attention layer.
    pub attention: u64,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.head + self.gte + self.tde + self.tail
    }
}

pub fn conv_flops(h: usize, w: usize, cin: usize, cout: usize, k: usize) -> u64 {
    2 * (h * w * cout * cin * k * k) as u64
}

fn padded(extent: usize, window: usize) -> usize {
    extent.div_ceil(window) * window
}

fn attention_core(windows: usize, tokens: usize, dim: usize) -> u64 {
    (windows * 4 * tokens * tokens * dim) as u64
}

/// One global-window block at `window`/`patch`: (total, attention core).
fn gte_block_flops(c: usize, h: usize, w: usize, window: usize, patch: usize) -> (u64, u64) {
    let (hp, wp) = (padded(h, window), padded(w, window));
    let n_windows = (hp / window) * (wp / window);
    let t = (window / patch).pow(2);
    let d = c * patch * patch;
    let core = attention_core(n_windows, t, d);
    let projections = 4 * conv_flops(hp, wp, c, c, 3);
    let ffn = 2 * conv_flops(h, w, c, c, 3);
    (projections + core + ffn, core)
}

/// FLOPs of one forward pass on a single `h × w` image.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> FlopReport {
    let c = cfg.channels;
    let head = conv_flops(h, w, cfg.in_channels, c, 3) + 4 * conv_flops(h, w, c, c, 3);
    let (gte_one, gte_core) = gte_block_flops(c, h, w, cfg.gte_window, cfg.patch);

    let tw = cfg.tde_window;
    let n_windows = (padded(h, tw) / tw) * (padded(w, tw) / tw);
    let t = cfg.tde_grid().pow(2);
    let d = cfg.tde_dim();
    let per_window_dense = 4 * 2 * t * d * d + 2 * t * 9 * d * d + 2 * t * d * d;
    let tde_core = attention_core(n_windows, t, d);
    let tde_one = (n_windows * per_window_dense) as u64 + tde_core;

    FlopReport {
        head,
        gte: 2 * gte_one,
        tde: 8 * tde_one,
        tail: conv_flops(h, w, c, cfg.in_channels, 3),
        attention: 2 * gte_core + 8 * tde_core,
    }
}

/// Parameter count derived from the configuration alone.
pub fn expected_params(cfg: &ModelConfig) -> usize {
    let c = cfg.channels;
    let conv = |cin, cout| conv_param_count(cin, cout, 3, true);
    let head = conv(cfg.in_channels, c) + 4 * conv(c, c);
    let table = |g: usize| cfg.heads * (2 * g - 1).pow(2);

    let gd = cfg.gte_dim();
    let gte = 4 * conv(c, c) + 3 * 2 * gd + 2 * conv(c, c) + if cfg.gte_rel_bias { table(cfg.gte_grid()) } else { 0 };

    let td = cfg.tde_dim();
    let tde = 2 * td
        + 4 * linear_param_count(td, td, true)
        + if cfg.tde_rel_bias { table(cfg.tde_grid()) } else { 0 }
        + 2 * td
        + linear_param_count(9 * td, td, true)
        + linear_param_count(td, td, true);

    head + 2 * gte + 8 * tde + conv(c, cfg.in_channels)
}

/// One row of the window-size sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepRow {
    pub window: usize,
    /// Largest divisor of `window` not above the configured patch.
    pub patch: usize,
    pub windows: usize,
    pub tokens: usize,
    pub dim: usize,
    /// Four 3×3 projections (q, k, v, output), with biases.
    pub conv_projection_params: usize,
    /// Four dense projections on the same tokens, with biases.
    pub fcl_projection_params: usize,
    pub attention_flops: u64,
    /// Whole global-window block at this window.
    pub block_flops: u64,
}

/// Cost of one global-window block on an `image × image` map as the window varies.
pub fn window_sweep(cfg: &ModelConfig, image: usize, windows: &[usize]) -> Vec<SweepRow> {
    let c = cfg.channels;
    windows
        .iter()
        .map(|&window| {
            let patch = (1..=cfg.patch.min(window)).rev().find(|p| window % p == 0).unwrap_or(1);
            let (block, core) = gte_block_flops(c, image, image, window, patch);
            let dim = c * patch * patch;
            SweepRow {
                window,
                patch,
                windows: image.div_ceil(window).pow(2),
                tokens: (window / patch).pow(2),
                dim,
                conv_projection_params: 4 * conv_param_count(c, c, 3, true),
                fcl_projection_params: 4 * linear_param_count(dim, dim, true),
                attention_flops: core,
                block_flops: block,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_closed_form() {
        assert_eq!(conv_flops(96, 96, 64, 64, 3), 679_477_248);
    }

    #[test]
    fn sweep_attention_is_monotone() {
        let rows = window_sweep(&ModelConfig::paper(), 96, &[4, 6, 8, 48, 96]);
        assert!(rows.windows(2).all(|r| r[0].attention_flops <= r[1].attention_flops));
        assert_eq!(rows[0].patch, 4);
        assert_eq!(rows[2].patch, 4);
        assert_eq!(rows[4].tokens, 256);
        assert!(rows.iter().all(|r| r.conv_projection_params == rows[0].conv_projection_params));
    }

    #[test]
    fn head_flops_on_square_input() {
        let cfg = ModelConfig::toy();
        let r = count_flops(&cfg, 16, 16);
        assert_eq!(r.head, 2 * 256 * 8 * 9 + 4 * 2 * 256 * 64 * 9);
        assert!(r.attention < r.total());
    }
}
