//! The denoising network: convolutional head, two global-window blocks, a
//! block of eight directional transformers, convolutional tail and a global
//! skip from input to output.

mod accounting;
mod config;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use accounting::{conv_flops, count_flops, expected_params, window_sweep, FlopReport, SweepRow};
pub use config::{ModelConfig, TdeOrder};

use crate::attention::{conv_output, conv_qkv, conv_ffn, mhsa, sparse_ffn, AttentionWeights, FfnWeights};
use crate::error::{config_err, Result};
use crate::nn::{Bound, Builder, ConvParams, Init, NormParams, ParamStore};
use crate::tensor::{IndexMap, Scalar, Tape, Tensor, Var};
use crate::window::{patchify_map, roll_map, unpatchify_map, Axis, WindowLayout};

/// Shift direction of one transformer in the directional block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Cyclic shift along the width.
    Ho,
    /// Cyclic shift along the height.
    Ve,
    /// No shift.
    Co,
}

impl Direction {
    fn axis(self) -> Option<Axis> {
        match self {
            Direction::Ho => Some(Axis::Horizontal),
            Direction::Ve => Some(Axis::Vertical),
            Direction::Co => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn tde_sequence(order: TdeOrder) -> [Direction; 8] {
    use Direction::*;
    match order {
        TdeOrder::HorizontalFirst => [Ho, Ve, Co, Ho, Ve, Co, Ho, Ve],
        TdeOrder::VerticalFirst => [Ve, Ho, Co, Ve, Ho, Co, Ve, Ho],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GteWeights {
    pub attn: AttentionWeights,
    pub norm_q: NormParams,
    pub norm_k: NormParams,
    pub norm_v: NormParams,
    pub ffn: FfnWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalWeights {
    pub norm: NormParams,
    pub attn: AttentionWeights,
    pub ffn: FfnWeights,
}

/// Where each parameter of the network lives in the [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub head: [ConvParams; 5],
    pub gte: [GteWeights; 2],
    pub tde: [DirectionalWeights; 8],
    pub tail: ConvParams,
}

impl Layout {
    fn build<T: Scalar, R: rand::Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let head = [
            b.conv("head.conv1", cfg.in_channels, c, 3)?,
            b.conv("head.conv2", c, c, 3)?,
            b.conv("head.conv3", c, c, 3)?,
            b.conv("head.conv4", c, c, 3)?,
            b.conv("head.conv5", c, c, 3)?,
        ];
        let mut gte = Vec::with_capacity(2);
        for i in 1..=2 {
            let name = format!("gte{i}");
            let d = cfg.gte_dim();
            let grid = cfg.gte_rel_bias.then_some(cfg.gte_grid());
            gte.push(GteWeights {
                attn: AttentionWeights::conv(b, &format!("{name}.attn"), c, d, cfg.heads, grid)?,
                norm_q: b.norm(&format!("{name}.norm_q"), d)?,
                norm_k: b.norm(&format!("{name}.norm_k"), d)?,
                norm_v: b.norm(&format!("{name}.norm_v"), d)?,
                ffn: FfnWeights::conv(b, &format!("{name}.ffn"), c)?,
            });
        }
        let mut tde = Vec::with_capacity(8);
        for i in 1..=8 {
            let name = format!("tde{i}");
            let d = cfg.tde_dim();
            let grid = cfg.tde_rel_bias.then_some(cfg.tde_grid());
            tde.push(DirectionalWeights {
                norm: b.norm(&format!("{name}.norm"), d)?,
                attn: AttentionWeights::fully_connected(b, &format!("{name}.attn"), d, cfg.heads, grid)?,
                ffn: FfnWeights::sparse(b, &format!("{name}.ffn"), d)?,
            });
        }
        Ok(Layout {
            head,
            gte: gte.try_into().expect("two blocks"),
            tde: tde.try_into().expect("eight layers"),
            tail: b.conv("tail", c, cfg.in_channels, 3)?,
        })
    }
}

/// Five convolutions, ReLU after the first four, conv1 output added to conv5 output.
pub fn head_forward<T: Scalar>(tape: &Tape<T>, p: &Bound<T>, x: &Var<T>, head: &[ConvParams; 5]) -> Result<Var<T>> {
    let first = head[0].forward(tape, p, x)?;
    let mut h = tape.relu(&first);
    for conv in &head[1..4] {
        h = tape.relu(&conv.forward(tape, p, &h)?);
    }
    let last = head[4].forward(tape, p, &h)?;
    tape.add(&last, &first)
}

fn shared(map: IndexMap) -> Arc<IndexMap> {
    Arc::new(map)
}

/// Global-window block: windowed attention with convolutional projections and
/// per-window output convolution, residual, then the convolutional FFN.
pub fn gteblock_forward<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound<T>,
    x: &Var<T>,
    w: &GteWeights,
    cfg: &ModelConfig,
) -> Result<Var<T>> {
    let layout = WindowLayout::new(x.shape(), cfg.gte_window)?;
    let windows = tape.gather(x, &shared(layout.partition_map()))?;
    let (q, k, v) = conv_qkv(tape, p, &windows, &w.attn)?;
    let to_tokens = shared(patchify_map(windows.shape(), cfg.patch)?);
    let q = w.norm_q.forward(tape, p, &tape.gather(&q, &to_tokens)?)?;
    let k = w.norm_k.forward(tape, p, &tape.gather(&k, &to_tokens)?)?;
    let v = w.norm_v.forward(tape, p, &tape.gather(&v, &to_tokens)?)?;
    let a = mhsa(tape, p, &q, &k, &v, &w.attn)?;
    let back = shared(unpatchify_map(a.shape(), cfg.channels, cfg.gte_window, cfg.patch)?);
    let a = conv_output(tape, p, &tape.gather(&a, &back)?, &w.attn)?;
    let merged = tape.gather(&a, &shared(layout.merge_map()))?;
    let y = tape.add(&merged, x)?;
    conv_ffn(tape, p, &y, &w.ffn)
}

/// One directional transformer. `kind` picks the shift; the weights do not depend on it.
pub fn directional_transformer_forward<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound<T>,
    x: &Var<T>,
    kind: Direction,
    w: &DirectionalWeights,
    cfg: &ModelConfig,
) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    let layout = WindowLayout::new(&shape, cfg.tde_window)?;
    let partition = layout.partition_map();
    let tokens_map = patchify_map(partition.out_shape(), cfg.tde_patch)?;
    let mut into = IndexMap::compose(&partition, &tokens_map)?;
    let tokens_shape = tokens_map.out_shape().to_vec();
    let mut out_of = IndexMap::compose(
        &unpatchify_map(&tokens_shape, cfg.channels, cfg.tde_window, cfg.tde_patch)?,
        &layout.merge_map(),
    )?;
    if let (Some(axis), true) = (kind.axis(), cfg.shift > 0) {
        let s = cfg.shift as isize;
        into = IndexMap::compose(&roll_map(&shape, axis, s)?, &into)?;
        out_of = IndexMap::compose(&out_of, &roll_map(&shape, axis, -s)?)?;
    }

    let tokens = tape.gather(x, &shared(into))?;
    let normed = w.norm.forward(tape, p, &tokens)?;
    let a = mhsa(tape, p, &normed, &normed, &normed, &w.attn)?;
    let y = tape.add(&a, &tokens)?;
    let g = cfg.tde_grid();
    let z = sparse_ffn(tape, p, &y, (g, g), &w.ffn, cfg.rate)?;
    tape.gather(&z, &shared(out_of))
}

pub fn tdeblock_forward<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound<T>,
    x: &Var<T>,
    layers: &[DirectionalWeights; 8],
    cfg: &ModelConfig,
) -> Result<Var<T>> {
    let mut h = x.clone();
    for (kind, w) in tde_sequence(cfg.tde_order).into_iter().zip(layers) {
        h = directional_transformer_forward(tape, p, &h, kind, w, cfg)?;
    }
    Ok(h)
}

/// `tail(tde(gte2(gte1(head(x))))) + x`.
pub fn forward<T: Scalar>(tape: &Tape<T>, p: &Bound<T>, x: &Var<T>, layout: &Layout, cfg: &ModelConfig) -> Result<Var<T>> {
    match x.shape() {
        &[_, c, _, _] if c == cfg.in_channels => {}
        s => return Err(config_err!("model expects [N, {}, H, W] input, got {s:?}", cfg.in_channels)),
    }
    let h = head_forward(tape, p, x, &layout.head)?;
    let h = gteblock_forward(tape, p, &h, &layout.gte[0], cfg)?;
    let h = gteblock_forward(tape, p, &h, &layout.gte[1], cfg)?;
    let h = tdeblock_forward(tape, p, &h, &layout.tde, cfg)?;
    let out = layout.tail.forward(tape, p, &h)?;
    tape.add(&out, x)
}

/// Configuration, parameter values and their layout.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub layout: Layout,
}

impl<T: Scalar> Model<T> {
    /// Builds the network; `Init::Standard` draws from a ChaCha8 stream seeded by `seed`.
    pub fn new(config: ModelConfig, init: Init, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::build(
            &mut Builder {
                store: &mut params,
                init,
                rng: &mut rng,
            },
            &config,
        )?;
        Ok(Model { config, params, layout })
    }

    /// Every parameter zero: the identity map.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Model::new(config, Init::Zeros, 0)
    }

    pub fn forward_on(&self, tape: &Tape<T>, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        forward(tape, p, x, &self.layout, &self.config)
    }

    /// Inference without gradient bookkeeping.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let p = self.params.bind_constant(&tape);
        Ok(self.forward_on(&tape, &p, &tape.constant(x))?.into_value())
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Shift kinds of the directional layers, input to output.
    pub fn layer_kinds(&self) -> [Direction; 8] {
        tde_sequence(self.config.tde_order)
    }
}

#[cfg(test)]
mod tests;
