//! Multi-head self-attention and the two feed-forward variants.
//!
//! Tokens are `[M, T, d]`: `M` independent windows of `T` tokens each.

use std::sync::Arc;

use rand::Rng;

use crate::error::{config_err, usage_err, Result};
use crate::nn::{conv_param_count, linear_param_count, Bound, Builder, ConvParams, LinearParams, NormParams, ParamId};
use crate::tensor::{IndexMap, Scalar, Tape, Var};
use crate::window::dilated_gather_map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProjectionKind {
    Conv3x3,
    FullyConnected,
}

/// Q/K/V/output projections.
///
/// The convolutional kind works on `[M, C, w, w]` window maps before
/// tokenization, and its output projection is a convolution on the merged
/// attention result, so no parameter depends on the patch size.
#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Conv { q: ConvParams, k: ConvParams, v: ConvParams, o: ConvParams },
    FullyConnected { q: LinearParams, k: LinearParams, v: LinearParams, o: LinearParams },
}

/// Learned bias per head and relative token offset on a `grid × grid` token layout.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeBias {
    pub table: ParamId,
    pub grid: usize,
    map: Arc<IndexMap>,
}

impl RelativeBias {
    fn register<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        heads: usize,
        grid: Option<usize>,
    ) -> Result<Option<Self>> {
        let Some(g) = grid else { return Ok(None) };
        let span = 2 * g - 1;
        Ok(Some(RelativeBias {
            table: b.zeros(&format!("{name}.rel_bias"), vec![heads, span * span])?,
            grid: g,
            map: Arc::new(RelativeBias::index_map(heads, g)),
        }))
    }

    /// Maps the `[h, (2g-1)²]` table onto `[h, T, T]`.
    pub fn index_map(heads: usize, grid: usize) -> IndexMap {
        let t = grid * grid;
        let span = 2 * grid - 1;
        let mut src = Vec::with_capacity(heads * t * t);
        for h in 0..heads {
            for i in 0..t {
                let (yi, xi) = (i / grid, i % grid);
                for j in 0..t {
                    let (yj, xj) = (j / grid, j % grid);
                    let dy = yi + grid - 1 - yj;
                    let dx = xi + grid - 1 - xj;
                    src.push(h * span * span + dy * span + dx);
                }
            }
        }
        IndexMap::new(vec![heads, span * span], vec![heads, t, t], src).expect("offsets lie inside the table")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub projection: Projection,
    pub heads: usize,
    /// Token dimension `d`.
    pub dim: usize,
    pub bias: Option<RelativeBias>,
}

impl AttentionWeights {
    /// Convolutional projections on `channels`-channel windows; tokens have `dim = channels·p²`.
    pub fn conv<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        channels: usize,
        dim: usize,
        heads: usize,
        bias_grid: Option<usize>,
    ) -> Result<Self> {
        check_heads(dim, heads)?;
        let bias = RelativeBias::register(b, name, heads, bias_grid)?;
        Ok(AttentionWeights {
            projection: Projection::Conv {
                q: b.conv(&format!("{name}.q"), channels, channels, 3)?,
                k: b.conv(&format!("{name}.k"), channels, channels, 3)?,
                v: b.conv(&format!("{name}.v"), channels, channels, 3)?,
                o: b.conv(&format!("{name}.o"), channels, channels, 3)?,
            },
            heads,
            dim,
            bias,
        })
    }

    /// Dense projections; `bias_grid` enables a relative-position table for a square token grid.
    pub fn fully_connected<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        dim: usize,
        heads: usize,
        bias_grid: Option<usize>,
    ) -> Result<Self> {
        check_heads(dim, heads)?;
        let projection = Projection::FullyConnected {
            q: b.linear(&format!("{name}.q"), dim, dim)?,
            k: b.linear(&format!("{name}.k"), dim, dim)?,
            v: b.linear(&format!("{name}.v"), dim, dim)?,
            o: b.linear(&format!("{name}.o"), dim, dim)?,
        };
        let bias = RelativeBias::register(b, name, heads, bias_grid)?;
        Ok(AttentionWeights {
            projection,
            heads,
            dim,
            bias,
        })
    }

    pub fn kind(&self) -> ProjectionKind {
        match self.projection {
            Projection::Conv { .. } => ProjectionKind::Conv3x3,
            Projection::FullyConnected { .. } => ProjectionKind::FullyConnected,
        }
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(config_err!("token dimension {dim} is not divisible by {heads} heads"));
    }
    Ok(())
}

/// Parameters of one convolutional projection on `c` channels.
pub fn conv_projection_params(c: usize, with_bias: bool) -> usize {
    conv_param_count(c, c, 3, with_bias)
}

/// Parameters of one dense projection on `c·p²`-dimensional patch tokens.
pub fn fcl_projection_params(c: usize, p: usize, with_bias: bool) -> usize {
    let d = c * p * p;
    linear_param_count(d, d, with_bias)
}

/// Attention result plus the softmax probabilities `[M, h, T, T]`.
pub struct Attended<T> {
    pub out: Var<T>,
    pub probs: Var<T>,
}

/// Multi-head self-attention.
///
/// Dense projections are applied here, including the output map. With the
/// convolutional kind `q, k, v` arrive already projected and the result is
/// returned in token space; the caller applies the output convolution.
pub fn mhsa<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound<T>,
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
    weights: &AttentionWeights,
) -> Result<Var<T>> {
    Ok(mhsa_with_probs(tape, p, q, k, v, weights)?.out)
}

pub fn mhsa_with_probs<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound<T>,
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
    weights: &AttentionWeights,
) -> Result<Attended<T>> {
    let &[m, t, d] = q.shape() else {
        return Err(config_err!("attention expects [M, T, d] tokens, got {:?}", q.shape()));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(config_err!(
            "q, k, v shapes differ: {:?}, {:?}, {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if d != weights.dim {
        return Err(config_err!("tokens have dimension {d}, weights expect {}", weights.dim));
    }
    let h = weights.heads;
    check_heads(d, h)?;
    let dh = d / h;

    let (q, k, v) = match &weights.projection {
        Projection::FullyConnected { q: wq, k: wk, v: wv, .. } => {
            (wq.forward(tape, p, q)?, wk.forward(tape, p, k)?, wv.forward(tape, p, v)?)
        }
        Projection::Conv { .. } => (q.clone(), k.clone(), v.clone()),
    };
    let split = |x: &Var<T>| -> Result<Var<T>> {
        let x = tape.reshape(x, &[m, t, h, dh])?;
        tape.permute(&x, &[0, 2, 1, 3])
    };
    let (qh, kh, vh) = (split(&q)?, split(&k)?, split(&v)?);

    let scores = tape.matmul_nt(&qh, &kh)?;
    let mut scores = tape.scale(&scores, T::of(1.0 / (dh as f64).sqrt()));
    if let Some(rb) = &weights.bias {
        if rb.grid * rb.grid != t {
            return Err(usage_err!(
                "relative bias built for a {0}x{0} grid, got {t} tokens",
                rb.grid
            ));
        }
        let table = tape.gather(&p[rb.table], &rb.map)?;
        scores = tape.add_broadcast(&scores, &table)?;
    }
    let probs = tape.softmax(&scores, 3)?;
    let ctx = tape.matmul(&probs, &vh)?;
    let ctx = tape.permute(&ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(&ctx, &[m, t, d])?;
    let out = match &weights.projection {
        Projection::FullyConnected { o, .. } => o.forward(tape, p, &ctx)?,
        Projection::Conv { .. } => ctx,
    };
    Ok(Attended { out, probs })
}

/// Three independent same-size 3×3 convolutions on `[M, C, w, w]` windows.
pub fn conv_qkv<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound<T>,
    x: &Var<T>,
    weights: &AttentionWeights,
) -> Result<(Var<T>, Var<T>, Var<T>)> {
    match &weights.projection {
        Projection::Conv { q, k, v, .. } => Ok((q.forward(tape, p, x)?, k.forward(tape, p, x)?, v.forward(tape, p, x)?)),
        Projection::FullyConnected { .. } => Err(usage_err!("conv_qkv called with fully-connected projections")),
    }
}

/// Output convolution of the convolutional kind, applied to re-assembled windows.
pub fn conv_output<T: Scalar>(tape: &Tape<T>, p: &Bound<T>, x: &Var<T>, weights: &AttentionWeights) -> Result<Var<T>> {
    match &weights.projection {
        Projection::Conv { o, .. } => o.forward(tape, p, x),
        Projection::FullyConnected { .. } => Err(usage_err!("conv_output called with fully-connected projections")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FfnKind {
    SparseFcl,
    ConvReluConv,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FfnWeights {
    /// Layer norm, dilated 9-neighbor gather, `9d → d`, ReLU, `d → d`.
    SparseFcl { norm: NormParams, w1: LinearParams, w2: LinearParams },
    ConvReluConv { c1: ConvParams, c2: ConvParams },
}

impl FfnWeights {
    pub fn sparse<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, dim: usize) -> Result<Self> {
        Ok(FfnWeights::SparseFcl {
            norm: b.norm(&format!("{name}.norm"), dim)?,
            w1: b.linear(&format!("{name}.w1"), 9 * dim, dim)?,
            w2: b.linear(&format!("{name}.w2"), dim, dim)?,
        })
    }

    pub fn conv<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize) -> Result<Self> {
        Ok(FfnWeights::ConvReluConv {
            c1: b.conv(&format!("{name}.c1"), channels, channels, 3)?,
            c2: b.conv(&format!("{name}.c2"), channels, channels, 3)?,
        })
    }

    pub fn kind(&self) -> FfnKind {
        match self {
            FfnWeights::SparseFcl { .. } => FfnKind::SparseFcl,
            FfnWeights::ConvReluConv { .. } => FfnKind::ConvReluConv,
        }
    }
}

/// `W2·relu(W1·gather(LN(y))) + y` on a `grid` of tokens.
pub fn sparse_ffn<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound<T>,
    y: &Var<T>,
    grid: (usize, usize),
    weights: &FfnWeights,
    rate: usize,
) -> Result<Var<T>> {
    let FfnWeights::SparseFcl { norm, w1, w2 } = weights else {
        return Err(usage_err!("sparse_ffn called with convolutional weights"));
    };
    let map = Arc::new(dilated_gather_map(y.shape(), grid, rate)?);
    let z = norm.forward(tape, p, y)?;
    let g = tape.gather(&z, &map)?;
    let hidden = tape.relu(&w1.forward(tape, p, &g)?);
    let out = w2.forward(tape, p, &hidden)?;
    tape.add(&out, y)
}

/// `conv(relu(conv(z))) + z`.
pub fn conv_ffn<T: Scalar>(tape: &Tape<T>, p: &Bound<T>, z: &Var<T>, weights: &FfnWeights) -> Result<Var<T>> {
    let FfnWeights::ConvReluConv { c1, c2 } = weights else {
        return Err(usage_err!("conv_ffn called with sparse weights"));
    };
    let hidden = tape.relu(&c1.forward(tape, p, z)?);
    let out = c2.forward(tape, p, &hidden)?;
    tape.add(&out, z)
}
