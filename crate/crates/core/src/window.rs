//! Window algebra over `[N, C, H, W]` feature maps.
//!
//! Every operation here is a pure re-indexing, built as an [`IndexMap`] so the
//! same map drives both the plain-tensor function and its differentiable
//! counterpart on a [`Tape`](crate::tensor::Tape).

use crate::error::{config_err, usage_err, Result};
use crate::tensor::{IndexMap, Scalar, Tensor};

/// Spatial axis of a cyclic shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Along the width (columns move right).
    Horizontal,
    /// Along the height (rows move down).
    Vertical,
}

/// Bookkeeping for one partition so [`merge_windows`] can invert it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowLayout {
    pub window: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub original_h: usize,
    pub original_w: usize,
    pub batch: usize,
    pub channels: usize,
}

fn nchw(shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(config_err!("expected [N, C, H, W], got {shape:?}")),
    }
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        return i;
    }
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

impl WindowLayout {
    pub fn new(shape: &[usize], window: usize) -> Result<Self> {
        let [n, c, h, w] = nchw(shape)?;
        if window < 2 {
            return Err(config_err!("window size must be at least 2, got {window}"));
        }
        let grid_h = h.div_ceil(window);
        let grid_w = w.div_ceil(window);
        Ok(WindowLayout {
            window,
            grid_h,
            grid_w,
            pad_h: grid_h * window - h,
            pad_w: grid_w * window - w,
            original_h: h,
            original_w: w,
            batch: n,
            channels: c,
        })
    }

    pub fn windows_per_image(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn windows_shape(&self) -> [usize; 4] {
        [
            self.batch * self.windows_per_image(),
            self.channels,
            self.window,
            self.window,
        ]
    }

    pub fn map_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.original_h, self.original_w]
    }

    /// Reflection-pad then tile, windows in row-major order per image.
    pub fn partition_map(&self) -> IndexMap {
        let (wn, c, h, w) = (self.window, self.channels, self.original_h, self.original_w);
        let nw = self.windows_per_image();
        let mut src = Vec::with_capacity(self.batch * nw * c * wn * wn);
        for n in 0..self.batch {
            for gy in 0..self.grid_h {
                for gx in 0..self.grid_w {
                    for ch in 0..c {
                        let plane = (n * c + ch) * h * w;
                        for i in 0..wn {
                            let y = reflect(gy * wn + i, h);
                            for j in 0..wn {
                                let x = reflect(gx * wn + j, w);
                                src.push(plane + y * w + x);
                            }
                        }
                    }
                }
            }
        }
        IndexMap::new(self.map_shape().to_vec(), self.windows_shape().to_vec(), src)
            .expect("partition indices are in range")
    }

    /// Stitch windows back and crop the padding.
    pub fn merge_map(&self) -> IndexMap {
        let (wn, c, h, w) = (self.window, self.channels, self.original_h, self.original_w);
        let nw = self.windows_per_image();
        let mut src = Vec::with_capacity(self.batch * c * h * w);
        for n in 0..self.batch {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let b = n * nw + (y / wn) * self.grid_w + x / wn;
                        src.push(((b * c + ch) * wn + y % wn) * wn + x % wn);
                    }
                }
            }
        }
        IndexMap::new(self.windows_shape().to_vec(), self.map_shape().to_vec(), src)
            .expect("merge indices are in range")
    }
}

pub fn partition_windows<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<(Tensor<T>, WindowLayout)> {
    let layout = WindowLayout::new(x.shape(), window)?;
    Ok((x.gather(&layout.partition_map())?, layout))
}

pub fn merge_windows<T: Scalar>(windows: &Tensor<T>, layout: &WindowLayout) -> Result<Tensor<T>> {
    if windows.shape() != layout.windows_shape() {
        return Err(usage_err!(
            "windows {:?} do not match layout {:?}",
            windows.shape(),
            layout.windows_shape()
        ));
    }
    windows.gather(&layout.merge_map())
}

/// Cyclic shift by `shift` positions; `out[.., i] = in[.., (i - shift) mod len]`.
pub fn roll_map(shape: &[usize], axis: Axis, shift: isize) -> Result<IndexMap> {
    let [n, c, h, w] = nchw(shape)?;
    let len = match axis {
        Axis::Horizontal => w,
        Axis::Vertical => h,
    } as isize;
    let s = shift.rem_euclid(len) as usize;
    let mut src = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = match axis {
                    Axis::Horizontal => (y, (x + w - s) % w),
                    Axis::Vertical => ((y + h - s) % h, x),
                };
                src.push((plane * h + sy) * w + sx);
            }
        }
    }
    IndexMap::new(shape.to_vec(), shape.to_vec(), src)
}

fn check_shift(shape: &[usize], axis: Axis, shift: usize) -> Result<()> {
    let [_, _, h, w] = nchw(shape)?;
    let len = if axis == Axis::Horizontal { w } else { h };
    if shift >= len {
        return Err(config_err!("shift {shift} must be smaller than extent {len}"));
    }
    Ok(())
}

pub fn roll<T: Scalar>(x: &Tensor<T>, axis: Axis, shift: usize) -> Result<Tensor<T>> {
    check_shift(x.shape(), axis, shift)?;
    x.gather(&roll_map(x.shape(), axis, shift as isize)?)
}

pub fn roll_reverse<T: Scalar>(y: &Tensor<T>, axis: Axis, shift: usize) -> Result<Tensor<T>> {
    check_shift(y.shape(), axis, shift)?;
    y.gather(&roll_map(y.shape(), axis, -(shift as isize))?)
}

/// `[M, C, w, w]` windows to `[M, (w/p)², C·p²]` tokens, row-major patch order.
pub fn patchify_map(shape: &[usize], patch: usize) -> Result<IndexMap> {
    let [m, c, h, w] = nchw(shape)?;
    if h != w {
        return Err(config_err!("windows must be square, got {h}x{w}"));
    }
    if patch == 0 || w % patch != 0 {
        return Err(config_err!("patch {patch} does not divide window {w}"));
    }
    let g = w / patch;
    let d = c * patch * patch;
    let mut src = Vec::with_capacity(m * g * g * d);
    for b in 0..m {
        for py in 0..g {
            for px in 0..g {
                for ch in 0..c {
                    for i in 0..patch {
                        for j in 0..patch {
                            src.push(((b * c + ch) * w + py * patch + i) * w + px * patch + j);
                        }
                    }
                }
            }
        }
    }
    IndexMap::new(shape.to_vec(), vec![m, g * g, d], src)
}

/// Inverse of [`patchify_map`] back to `[M, C, w, w]`.
pub fn unpatchify_map(token_shape: &[usize], channels: usize, window: usize, patch: usize) -> Result<IndexMap> {
    let &[m, t, d] = token_shape else {
        return Err(config_err!("expected [M, T, d] tokens, got {token_shape:?}"));
    };
    if patch == 0 || !window.is_multiple_of(patch) {
        return Err(config_err!("patch {patch} does not divide window {window}"));
    }
    let g = window / patch;
    if t != g * g || d != channels * patch * patch {
        return Err(usage_err!(
            "tokens {token_shape:?} inconsistent with {channels} channels, window {window}, patch {patch}"
        ));
    }
    let mut src = Vec::with_capacity(m * channels * window * window);
    for b in 0..m {
        for ch in 0..channels {
            for y in 0..window {
                for x in 0..window {
                    let tok = (y / patch) * g + x / patch;
                    let f = (ch * patch + y % patch) * patch + x % patch;
                    src.push((b * t + tok) * d + f);
                }
            }
        }
    }
    IndexMap::new(token_shape.to_vec(), vec![m, channels, window, window], src)
}

pub fn patchify<T: Scalar>(windows: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    windows.gather(&patchify_map(windows.shape(), patch)?)
}

pub fn unpatchify<T: Scalar>(tokens: &Tensor<T>, channels: usize, window: usize, patch: usize) -> Result<Tensor<T>> {
    tokens.gather(&unpatchify_map(tokens.shape(), channels, window, patch)?)
}

/// Offsets of the 3×3 dilated neighborhood, row-major; index 4 is the center.
pub const NEIGHBORHOOD: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Spatial footprint of the dilated neighborhood.
pub fn footprint(rate: usize) -> usize {
    2 * rate + 1
}

/// `[M, T, d]` → `[M, T, 9d]`: each token concatenated with its neighbors at
/// offsets `{-rate, 0, +rate}²` on the `grid`, clamping at the grid edges.
pub fn dilated_gather_map(token_shape: &[usize], grid: (usize, usize), rate: usize) -> Result<IndexMap> {
    let &[m, t, d] = token_shape else {
        return Err(config_err!("expected [M, T, d] tokens, got {token_shape:?}"));
    };
    let (gh, gw) = grid;
    if gh * gw != t {
        return Err(usage_err!("grid {gh}x{gw} does not hold {t} tokens"));
    }
    if rate == 0 {
        return Err(config_err!("dilation rate must be at least 1"));
    }
    let r = rate as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut src = Vec::with_capacity(m * t * 9 * d);
    for b in 0..m {
        for i in 0..gh {
            for j in 0..gw {
                for (di, dj) in NEIGHBORHOOD {
                    let ni = clamp(i as isize + di * r, gh);
                    let nj = clamp(j as isize + dj * r, gw);
                    let base = (b * t + ni * gw + nj) * d;
                    src.extend(base..base + d);
                }
            }
        }
    }
    IndexMap::new(token_shape.to_vec(), vec![m, t, 9 * d], src)
}

pub fn dilated_gather<T: Scalar>(tokens: &Tensor<T>, grid: (usize, usize), rate: usize) -> Result<Tensor<T>> {
    tokens.gather(&dilated_gather_map(tokens.shape(), grid, rate)?)
}
