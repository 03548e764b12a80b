//! Slice-level compute kernels shared by the forward and adjoint passes.

use rayon::prelude::*;

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

/// Unfolds one `[cin, h, w]` image into `[cin*k*k, h*w]` columns with zero padding.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (h, w, k, pad) = (g.h as isize, g.w as isize, g.k, g.pad as isize);
    let hw = g.hw();
    for c in 0..g.cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    let out = &mut row[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for (xo, o) in out.iter_mut().enumerate() {
                        let sx = xo as isize + dx;
                        *o = if sx < 0 || sx >= w { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image gradient.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (h, w, k, pad) = (g.h as isize, g.w as isize, g.k, g.pad as isize);
    let hw = g.hw();
    for c in 0..g.cin {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dxo = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let src = &row[(y * w) as usize..((y + 1) * w) as usize];
                    let dst = &mut plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for (xo, &v) in src.iter().enumerate() {
                        let sx = xo as isize + dxo;
                        if sx >= 0 && sx < w {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let hw = g.hw();
    let kp = g.patch();
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    out.par_chunks_mut(g.cout * hw)
        .zip(x.par_chunks(g.cin * hw))
        .for_each_init(
            || vec![T::zero(); kp * hw],
            |cols, (o, xi)| {
                im2col(g, xi, cols);
                for (co, row) in o.chunks_mut(hw).enumerate() {
                    row.fill(bias[co]);
                }
                T::gemm(
                    g.cout, kp, hw, T::one(), weight, kp as isize, 1, cols, hw as isize, 1, T::one(), o,
                    hw as isize, 1,
                );
            },
        );
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dout: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let hw = g.hw();
    let kp = g.patch();
    let (want_x, want_w, want_b) = want;

    let dx = want_x.then(|| {
        let mut dx = vec![T::zero(); g.n * g.cin * hw];
        dx.par_chunks_mut(g.cin * hw)
            .zip(dout.par_chunks(g.cout * hw))
            .for_each_init(
                || vec![T::zero(); kp * hw],
                |dcols, (dxi, doi)| {
                    // dcols = Wᵀ · dOut
                    T::gemm(
                        kp, g.cout, hw, T::one(), weight, 1, kp as isize, doi, hw as isize, 1, T::zero(),
                        dcols, hw as isize, 1,
                    );
                    col2im(g, dcols, dxi);
                },
            );
        dx
    });

    let dw = want_w.then(|| {
        // Per-image partials summed in image order keep the result independent of thread count.
        let partials: Vec<Vec<T>> = x
            .par_chunks(g.cin * hw)
            .zip(dout.par_chunks(g.cout * hw))
            .map(|(xi, doi)| {
                let mut cols = vec![T::zero(); kp * hw];
                im2col(g, xi, &mut cols);
                let mut part = vec![T::zero(); g.cout * kp];
                T::gemm(
                    g.cout, hw, kp, T::one(), doi, hw as isize, 1, &cols, 1, hw as isize, T::zero(),
                    &mut part, kp as isize, 1,
                );
                part
            })
            .collect();
        sum_in_order(partials, g.cout * kp)
    });

    let db = want_b.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for img in dout.chunks(g.cout * hw) {
            for (co, row) in img.chunks(hw).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
        db
    });

    ConvGrads { dx, dw, db }
}

fn sum_in_order<T: Scalar>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// Logical right-hand operand of a batched product: a `[rows, cols]` matrix
/// stored either as-is or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct MatGeom {
    /// Number of independent products.
    pub batch: usize,
    /// Whether the rhs is shared by every batch entry.
    pub rhs_shared: bool,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    /// rhs stored as `[p, n]` and used transposed.
    pub rhs_transposed: bool,
}

impl MatGeom {
    fn rhs_strides(&self) -> (isize, isize) {
        if self.rhs_transposed {
            (1, self.n as isize)
        } else {
            (self.p as isize, 1)
        }
    }
    fn rhs_len(&self) -> usize {
        self.n * self.p
    }
}

const ROW_BLOCK: usize = 256;

pub(crate) fn matmul_forward<T: Scalar>(g: &MatGeom, a: &[T], b: &[T]) -> Vec<T> {
    let (rsb, csb) = g.rhs_strides();
    let mut out = vec![T::zero(); g.batch * g.m * g.p];
    if g.rhs_shared {
        // Fixed row blocks: each output row depends only on its own lhs row, and the
        // partition does not vary with the thread count.
        let block = ROW_BLOCK;
        out.par_chunks_mut(block * g.p)
            .zip(a.par_chunks(block * g.n))
            .for_each(|(o, ai)| {
                let r = ai.len() / g.n;
                T::gemm(
                    r, g.n, g.p, T::one(), ai, g.n as isize, 1, b, rsb, csb, T::zero(), o,
                    g.p as isize, 1,
                );
            });
    } else {
        out.par_chunks_mut(g.m * g.p)
            .zip(a.par_chunks(g.m * g.n))
            .zip(b.par_chunks(g.rhs_len()))
            .for_each(|((o, ai), bi)| {
                T::gemm(
                    g.m, g.n, g.p, T::one(), ai, g.n as isize, 1, bi, rsb, csb, T::zero(), o,
                    g.p as isize, 1,
                );
            });
    }
    out
}

/// Returns (dA, dB) for `C = A · B` given dC.
pub(crate) fn matmul_backward<T: Scalar>(
    g: &MatGeom,
    a: &[T],
    b: &[T],
    dc: &[T],
    want: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (rsb, csb) = g.rhs_strides();
    let da = want.0.then(|| {
        let mut da = vec![T::zero(); g.batch * g.m * g.n];
        if g.rhs_shared {
            let block = ROW_BLOCK;
            da.par_chunks_mut(block * g.n)
                .zip(dc.par_chunks(block * g.p))
                .for_each(|(o, dci)| {
                    let r = dci.len() / g.p;
                    // dA = dC · Bᵀ
                    T::gemm(
                        r, g.p, g.n, T::one(), dci, g.p as isize, 1, b, csb, rsb, T::zero(), o,
                        g.n as isize, 1,
                    );
                });
        } else {
            da.par_chunks_mut(g.m * g.n)
                .zip(dc.par_chunks(g.m * g.p))
                .zip(b.par_chunks(g.rhs_len()))
                .for_each(|((o, dci), bi)| {
                    T::gemm(
                        g.m, g.p, g.n, T::one(), dci, g.p as isize, 1, bi, csb, rsb, T::zero(), o,
                        g.n as isize, 1,
                    );
                });
        }
        da
    });
    let db = want.1.then(|| {
        if g.rhs_shared {
            // dB = Aᵀ · dC over all rows at once.
            let rows = g.batch * g.m;
            let mut db = vec![T::zero(); g.rhs_len()];
            T::gemm(
                g.n, rows, g.p, T::one(), a, 1, g.n as isize, dc, g.p as isize, 1, T::zero(), &mut db,
                rsb, csb,
            );
            db
        } else {
            let mut db = vec![T::zero(); g.batch * g.rhs_len()];
            db.par_chunks_mut(g.rhs_len())
                .zip(a.par_chunks(g.m * g.n))
                .zip(dc.par_chunks(g.m * g.p))
                .for_each(|((o, ai), dci)| {
                    T::gemm(
                        g.n, g.m, g.p, T::one(), ai, 1, g.n as isize, dci, g.p as isize, 1, T::zero(), o,
                        rsb, csb,
                    );
                });
            db
        }
    });
    (da, db)
}

pub(crate) struct LayerNormSaved<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &[T],
    d: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, LayerNormSaved<T>) {
    let rows = x.len() / d;
    let inv_d = T::one() / T::of(d as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    y.par_chunks_mut(d)
        .zip(xhat.par_chunks_mut(d))
        .zip(rstd.par_iter_mut())
        .zip(x.par_chunks(d))
        .for_each(|(((yr, hr), rs), xr)| {
            let mean = xr.iter().copied().sum::<T>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            *rs = r;
            for i in 0..d {
                let h = (xr[i] - mean) * r;
                hr[i] = h;
                yr[i] = h * gamma[i] + beta[i];
            }
        });
    (y, LayerNormSaved { xhat, rstd })
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn layer_norm_backward<T: Scalar>(
    saved: &LayerNormSaved<T>,
    d: usize,
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv_d = T::one() / T::of(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    dx.par_chunks_mut(d)
        .zip(dy.par_chunks(d))
        .zip(saved.xhat.par_chunks(d))
        .zip(saved.rstd.par_iter())
        .for_each(|(((dxr, dyr), hr), &r)| {
            let mut mean_g = T::zero();
            let mut mean_gh = T::zero();
            for i in 0..d {
                let gi = dyr[i] * gamma[i];
                mean_g += gi;
                mean_gh += gi * hr[i];
            }
            mean_g *= inv_d;
            mean_gh *= inv_d;
            for i in 0..d {
                dxr[i] = r * (dyr[i] * gamma[i] - mean_g - hr[i] * mean_gh);
            }
        });
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    for (dyr, hr) in dy.chunks(d).zip(saved.xhat.chunks(d)) {
        for i in 0..d {
            dgamma[i] += dyr[i] * hr[i];
            dbeta[i] += dyr[i];
        }
    }
    (dx, dgamma, dbeta)
}

/// Softmax over the middle axis of an `[outer, len, inner]` view.
pub(crate) fn softmax_forward<T: Scalar>(x: &[T], len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    y.par_chunks_mut(len * inner)
        .zip(x.par_chunks(len * inner))
        .for_each(|(yo, xo)| {
            for j in 0..inner {
                let mut mx = T::neg_infinity();
                for i in 0..len {
                    mx = mx.max(xo[i * inner + j]);
                }
                let mut total = T::zero();
                for i in 0..len {
                    let e = (xo[i * inner + j] - mx).exp();
                    yo[i * inner + j] = e;
                    total += e;
                }
                let inv = T::one() / total;
                for i in 0..len {
                    yo[i * inner + j] *= inv;
                }
            }
        });
    y
}

pub(crate) fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], len: usize, inner: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    dx.par_chunks_mut(len * inner)
        .zip(y.par_chunks(len * inner))
        .zip(dy.par_chunks(len * inner))
        .for_each(|((dxo, yo), dyo)| {
            for j in 0..inner {
                let mut dot = T::zero();
                for i in 0..len {
                    dot += yo[i * inner + j] * dyo[i * inner + j];
                }
                for i in 0..len {
                    let at = i * inner + j;
                    dxo[at] = yo[at] * (dyo[at] - dot);
                }
            }
        });
    dx
}
