//! Convolutions, transposed convolutions, and max pooling.
//!
//! One im2col/col2im engine backs all four conv ops. The geometry always
//! describes the dense side (conv input / transposed-conv output); 1-d ops
//! are the same engine with a height-1 spatial grid.

use super::linalg::{gemm, gemm_nt, gemm_tn};
use super::{Element, Result, Tape, Tensor, TensorError};

/// Geometry of a stride/pad kernel sweep. `channels, h, w` describe the
/// dense side; `oh, ow` the strided side.
#[derive(Clone, Copy, Debug)]
struct Geom {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn derive(
        channels: usize,
        h: usize,
        w: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Geom> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        let (ph, pw) = pad;
        if sh == 0 || sw == 0 || kh == 0 || kw == 0 {
            return Err(TensorError::Config(format!(
                "kernel {kernel:?} / stride {stride:?} must be positive"
            )));
        }
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(TensorError::Dim(format!(
                "kernel {kernel:?} larger than padded input ({h}+2*{ph}, {w}+2*{pw})"
            )));
        }
        Ok(Geom {
            channels,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            oh: (h + 2 * ph - kh) / sh + 1,
            ow: (w + 2 * pw - kw) / sw + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Columns per tile, sized to keep the scratch matrix around 8 MB.
    fn tile(&self) -> usize {
        self.cols().min(((1 << 21) / self.rows().max(1)).max(256))
    }
}

/// Fills `col` (shape `[rows, len]`) with the patch matrix for strided
/// positions `[c0, c0+len)`.
fn im2col_tile<E: Element>(g: &Geom, x: &[E], c0: usize, len: usize, col: &mut [E]) {
    debug_assert_eq!(col.len(), g.rows() * len);
    let mut r = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut col[r * len..(r + 1) * len];
                let mut oy = c0 / g.ow;
                let mut ox = c0 % g.ow;
                for d in dst.iter_mut() {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                    *d = if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                        plane[iy as usize * g.w + ix as usize]
                    } else {
                        E::zero()
                    };
                    ox += 1;
                    if ox == g.ow {
                        ox = 0;
                        oy += 1;
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatter-adds a patch-matrix tile back onto the dense side.
fn col2im_tile<E: Element>(g: &Geom, col: &[E], c0: usize, len: usize, acc: &mut [E]) {
    let mut r = 0;
    for c in 0..g.channels {
        let plane_base = c * g.h * g.w;
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &col[r * len..(r + 1) * len];
                let mut oy = c0 / g.ow;
                let mut ox = c0 % g.ow;
                for &v in src {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                    if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                        let idx = plane_base + iy as usize * g.w + ix as usize;
                        acc[idx] = acc[idx] + v;
                    }
                    ox += 1;
                    if ox == g.ow {
                        ox = 0;
                        oy += 1;
                    }
                }
                r += 1;
            }
        }
    }
}

/// Forward conv over the dense side: `out[co, n] = sum w[co, r] col[r, n]`.
fn conv_forward<E: Element>(g: &Geom, x: &[E], w: &[E], cout: usize) -> Vec<E> {
    let rows = g.rows();
    let n = g.cols();
    let tile = g.tile();
    let mut out = vec![E::zero(); cout * n];
    let mut col = vec![E::zero(); rows * tile];
    let mut tmp = vec![E::zero(); cout * tile];
    let mut c0 = 0;
    while c0 < n {
        let len = tile.min(n - c0);
        im2col_tile(g, x, c0, len, &mut col[..rows * len]);
        tmp[..cout * len].iter_mut().for_each(|v| *v = E::zero());
        gemm(cout, rows, len, w, &col[..rows * len], &mut tmp[..cout * len]);
        for co in 0..cout {
            out[co * n + c0..co * n + c0 + len]
                .copy_from_slice(&tmp[co * len..(co + 1) * len]);
        }
        c0 += len;
    }
    out
}

/// Accumulates conv gradients: `dx += col2im(w^T g)`, `dw += g col^T`.
fn conv_backward<E: Element>(
    g: &Geom,
    x: &[E],
    w: &[E],
    cout: usize,
    grad_out: &[E],
    dx: Option<&mut Vec<E>>,
    dw: Option<&mut Vec<E>>,
) {
    let rows = g.rows();
    let n = g.cols();
    let tile = g.tile();
    let mut col = vec![E::zero(); rows * tile];
    let mut gtile = vec![E::zero(); cout * tile];
    let mut dcol = vec![E::zero(); rows * tile];
    let mut dx = dx;
    let mut dw = dw;
    let mut c0 = 0;
    while c0 < n {
        let len = tile.min(n - c0);
        for co in 0..cout {
            gtile[co * len..(co + 1) * len]
                .copy_from_slice(&grad_out[co * n + c0..co * n + c0 + len]);
        }
        if let Some(dw) = dw.as_deref_mut() {
            im2col_tile(g, x, c0, len, &mut col[..rows * len]);
            gemm_nt(cout, len, rows, &gtile[..cout * len], &col[..rows * len], dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            dcol[..rows * len].iter_mut().for_each(|v| *v = E::zero());
            gemm_tn(cout, rows, len, w, &gtile[..cout * len], &mut dcol[..rows * len]);
            col2im_tile(g, &dcol[..rows * len], c0, len, dx);
        }
        c0 += len;
    }
}

/// Transposed conv (dense-side reconstruction): `out = col2im(w^T x)`.
fn conv_transpose_forward<E: Element>(g: &Geom, x: &[E], w: &[E], cin: usize) -> Vec<E> {
    // Here `x` lives on the strided side [cin, oh*ow]; w is [cin, rows].
    let rows = g.rows();
    let n = g.cols();
    let tile = g.tile();
    let mut out = vec![E::zero(); g.channels * g.h * g.w];
    let mut xtile = vec![E::zero(); cin * tile];
    let mut col = vec![E::zero(); rows * tile];
    let mut c0 = 0;
    while c0 < n {
        let len = tile.min(n - c0);
        for ci in 0..cin {
            xtile[ci * len..(ci + 1) * len].copy_from_slice(&x[ci * n + c0..ci * n + c0 + len]);
        }
        col[..rows * len].iter_mut().for_each(|v| *v = E::zero());
        gemm_tn(cin, rows, len, w, &xtile[..cin * len], &mut col[..rows * len]);
        col2im_tile(g, &col[..rows * len], c0, len, &mut out);
        c0 += len;
    }
    out
}

fn conv_transpose_backward<E: Element>(
    g: &Geom,
    x: &[E],
    w: &[E],
    cin: usize,
    grad_out: &[E],
    dx: Option<&mut Vec<E>>,
    dw: Option<&mut Vec<E>>,
) {
    let rows = g.rows();
    let n = g.cols();
    let tile = g.tile();
    let mut col = vec![E::zero(); rows * tile];
    let mut dx = dx;
    let mut dw = dw;
    let mut c0 = 0;
    while c0 < n {
        let len = tile.min(n - c0);
        im2col_tile(g, grad_out, c0, len, &mut col[..rows * len]);
        if let Some(dx) = dx.as_deref_mut() {
            // dx[cin, tile] = w[cin, rows] @ col[rows, tile]
            let mut dxt = vec![E::zero(); cin * len];
            gemm(cin, rows, len, w, &col[..rows * len], &mut dxt);
            for ci in 0..cin {
                let dst = &mut dx[ci * n + c0..ci * n + c0 + len];
                for (d, &v) in dst.iter_mut().zip(&dxt[ci * len..(ci + 1) * len]) {
                    *d = *d + v;
                }
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            // dw[cin, rows] += x[cin, tile] @ col[rows, tile]^T
            let mut xtile = vec![E::zero(); cin * len];
            for ci in 0..cin {
                xtile[ci * len..(ci + 1) * len]
                    .copy_from_slice(&x[ci * n + c0..ci * n + c0 + len]);
            }
            gemm_nt(cin, len, rows, &xtile, &col[..rows * len], dw);
        }
        c0 += len;
    }
}

/// `conv2d(x[Cin,H,W], w[Cout,Cin,kH,kW])` with zero padding; output extents
/// follow `floor((in + 2p - k)/s) + 1`.
pub fn conv2d<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 3 || ws.len() != 4 {
        return Err(TensorError::Dim(format!(
            "conv2d expects x[Cin,H,W], w[Cout,Cin,kH,kW]; got {xs:?}, {ws:?}"
        )));
    }
    if xs[0] != ws[1] {
        return Err(TensorError::ShapeMismatch {
            context: "conv2d channels",
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let g = Geom::derive(xs[0], xs[1], xs[2], (ws[2], ws[3]), stride, pad)?;
    let cout = ws[0];
    let data = conv_forward(&g, &x.values(), &w.values(), cout);
    let out = Tensor::from_op(data, vec![cout, g.oh, g.ow], tape.wants_grad(&[x, w]));
    if out.requires_grad() {
        let (x, w) = (x.clone(), w.clone());
        tape.record(&out, move |gout| {
            let mut dx = x.requires_grad().then(|| vec![E::zero(); x.numel()]);
            let mut dw = w.requires_grad().then(|| vec![E::zero(); w.numel()]);
            conv_backward(
                &g,
                &x.values(),
                &w.values(),
                cout,
                gout,
                dx.as_mut(),
                dw.as_mut(),
            );
            if let Some(dx) = dx {
                x.accumulate_grad(&dx);
            }
            if let Some(dw) = dw {
                w.accumulate_grad(&dw);
            }
        });
    }
    Ok(out)
}

/// 1-d analogue of [`conv2d`]: `x[Cin,L]`, `w[Cout,Cin,k]`.
pub fn conv1d<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let xs = x.shape().to_vec();
    let ws = w.shape().to_vec();
    if xs.len() != 2 || ws.len() != 3 {
        return Err(TensorError::Dim(format!(
            "conv1d expects x[Cin,L], w[Cout,Cin,k]; got {xs:?}, {ws:?}"
        )));
    }
    let x3 = super::shape_ops::reshape(tape, x, &[xs[0], 1, xs[1]])?;
    let w4 = super::shape_ops::reshape(tape, w, &[ws[0], ws[1], 1, ws[2]])?;
    let out = conv2d(tape, &x3, &w4, (1, stride), (0, pad))?;
    let os = out.shape().to_vec();
    super::shape_ops::reshape(tape, &out, &[os[0], os[2]])
}

/// `conv_transpose2d(x[Cin,H,W], w[Cin,Cout,kH,kW])`, the adjoint of
/// [`conv2d`]; output extents follow `(in - 1)*s + k - 2p`.
pub fn conv_transpose2d<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 3 || ws.len() != 4 {
        return Err(TensorError::Dim(format!(
            "conv_transpose2d expects x[Cin,H,W], w[Cin,Cout,kH,kW]; got {xs:?}, {ws:?}"
        )));
    }
    if xs[0] != ws[0] {
        return Err(TensorError::ShapeMismatch {
            context: "conv_transpose2d channels",
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let (cin, ih, iw) = (xs[0], xs[1], xs[2]);
    let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
    let oh = (ih - 1) * stride.0 + kh;
    let ow = (iw - 1) * stride.1 + kw;
    if oh <= 2 * pad.0 || ow <= 2 * pad.1 {
        return Err(TensorError::Dim(format!(
            "conv_transpose2d padding {pad:?} swallows the whole output"
        )));
    }
    let g = Geom::derive(cout, oh - 2 * pad.0, ow - 2 * pad.1, (kh, kw), stride, pad)?;
    debug_assert_eq!((g.oh, g.ow), (ih, iw));
    let data = conv_transpose_forward(&g, &x.values(), &w.values(), cin);
    let out = Tensor::from_op(data, vec![cout, g.h, g.w], tape.wants_grad(&[x, w]));
    if out.requires_grad() {
        let (x, w) = (x.clone(), w.clone());
        tape.record(&out, move |gout| {
            let mut dx = x.requires_grad().then(|| vec![E::zero(); x.numel()]);
            let mut dw = w.requires_grad().then(|| vec![E::zero(); w.numel()]);
            conv_transpose_backward(
                &g,
                &x.values(),
                &w.values(),
                cin,
                gout,
                dx.as_mut(),
                dw.as_mut(),
            );
            if let Some(dx) = dx {
                x.accumulate_grad(&dx);
            }
            if let Some(dw) = dw {
                w.accumulate_grad(&dw);
            }
        });
    }
    Ok(out)
}

/// 1-d analogue of [`conv_transpose2d`]: `x[Cin,L]`, `w[Cin,Cout,k]`.
pub fn conv_transpose1d<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let xs = x.shape().to_vec();
    let ws = w.shape().to_vec();
    if xs.len() != 2 || ws.len() != 3 {
        return Err(TensorError::Dim(format!(
            "conv_transpose1d expects x[Cin,L], w[Cin,Cout,k]; got {xs:?}, {ws:?}"
        )));
    }
    let x3 = super::shape_ops::reshape(tape, x, &[xs[0], 1, xs[1]])?;
    let w4 = super::shape_ops::reshape(tape, w, &[ws[0], ws[1], 1, ws[2]])?;
    let out = conv_transpose2d(tape, &x3, &w4, (1, stride), (0, pad))?;
    let os = out.shape().to_vec();
    super::shape_ops::reshape(tape, &out, &[os[0], os[2]])
}

/// Max pooling over `[C,H,W]` with implicit -inf padding; backward routes
/// each output's gradient to its argmax.
pub fn max_pool2d<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<E>> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(TensorError::Dim(format!("max_pool2d expects [C,H,W], got {xs:?}")));
    }
    let g = Geom::derive(xs[0], xs[1], xs[2], kernel, stride, pad)?;
    let values = x.values();
    let mut data = Vec::with_capacity(g.channels * g.cols());
    let mut argmax = Vec::with_capacity(g.channels * g.cols());
    for c in 0..g.channels {
        let plane = &values[c * g.h * g.w..(c + 1) * g.h * g.w];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut best = E::neg_infinity();
                let mut best_idx = 0usize;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                            let idx = iy as usize * g.w + ix as usize;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = c * g.h * g.w + idx;
                            }
                        }
                    }
                }
                data.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    drop(values);
    let out = Tensor::from_op(data, vec![g.channels, g.oh, g.ow], tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |gout| {
            let mut dx = vec![E::zero(); x.numel()];
            for (&idx, &gv) in argmax.iter().zip(gout) {
                dx[idx as usize] = dx[idx as usize] + gv;
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}
