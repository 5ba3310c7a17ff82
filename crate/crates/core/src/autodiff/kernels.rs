//! Raw loops behind the differentiable operators. Everything here works on
//! row-major slices; shape validation happens in the graph layer.

/// `c = a * b + beta * c`, with explicit row/column strides so transposed
/// operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(a.len() as isize >= span(m, k, rsa, csa));
    assert!(b.len() as isize >= span(k, n, rsb, csb));
    assert!(c.len() as isize >= span(m, n, rsc, csc));
    // SAFETY: the asserts above bound every index the kernel touches given
    // non-negative strides, which all callers in this crate use.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Row-major `[rows, cols]` strides.
pub(crate) fn rm(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

/// Strides reading a row-major `[rows, cols]` buffer as its transpose.
pub(crate) fn tr(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output positions `[lo, hi)` along one axis whose input index
/// `o * stride + offset - pad` falls inside `[0, extent)`.
fn valid_range(offset: usize, stride: usize, pad: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > offset {
        ((extent - 1 + pad - offset) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one `[C, H, W]` image into `[C*k*k, out_h*out_w]`.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.k {
            let (h_lo, h_hi) = valid_range(ki, g.stride, g.pad, g.height, g.out_h);
            for kj in 0..g.k {
                let (w_lo, w_hi) = valid_range(kj, g.stride, g.pad, g.width, g.out_w);
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                dst[..h_lo * g.out_w].fill(0.0);
                dst[h_hi * g.out_w..].fill(0.0);
                for oh in h_lo..h_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let line = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    line[..w_lo].fill(0.0);
                    line[w_hi..].fill(0.0);
                    if w_lo >= w_hi {
                        continue;
                    }
                    let base = (c * g.height + ih) * g.width + w_lo * g.stride + kj - g.pad;
                    let line = &mut line[w_lo..w_hi];
                    if g.stride == 1 {
                        line.copy_from_slice(&x[base..base + line.len()]);
                    } else {
                        for (i, v) in line.iter_mut().enumerate() {
                            *v = x[base + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `[C, H, W]`.
pub(crate) fn col2im(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.k {
            let (h_lo, h_hi) = valid_range(ki, g.stride, g.pad, g.height, g.out_h);
            for kj in 0..g.k {
                let (w_lo, w_hi) = valid_range(kj, g.stride, g.pad, g.width, g.out_w);
                if w_lo >= w_hi {
                    continue;
                }
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oh in h_lo..h_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let base = (c * g.height + ih) * g.width + w_lo * g.stride + kj - g.pad;
                    let line = &src[oh * g.out_w + w_lo..oh * g.out_w + w_hi];
                    if g.stride == 1 {
                        for (d, v) in x[base..base + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (i, v) in line.iter().enumerate() {
                            x[base + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. `geom` describes the input side.
pub(crate) fn conv2d_forward(
    x: &[f64],
    kernel: &[f64],
    batch: usize,
    filters: usize,
    geom: &ConvGeom,
) -> Vec<f64> {
    let in_len = geom.channels * geom.height * geom.width;
    let (ckk, hw) = (geom.col_rows(), geom.col_cols());
    let mut out = vec![0.0; batch * filters * hw];
    let mut col = vec![0.0; ckk * hw];
    for n in 0..batch {
        im2col(&x[n * in_len..(n + 1) * in_len], geom, &mut col);
        gemm(
            filters,
            ckk,
            hw,
            kernel,
            rm(ckk),
            &col,
            rm(hw),
            0.0,
            &mut out[n * filters * hw..(n + 1) * filters * hw],
            rm(hw),
        );
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input and kernel.
pub(crate) fn conv2d_backward(
    x: &[f64],
    kernel: &[f64],
    dout: &[f64],
    batch: usize,
    filters: usize,
    geom: &ConvGeom,
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let in_len = geom.channels * geom.height * geom.width;
    let (ckk, hw) = (geom.col_rows(), geom.col_cols());
    let mut dx = want_dx.then(|| vec![0.0; batch * in_len]);
    let mut dk = want_dk.then(|| vec![0.0; filters * ckk]);
    let mut col = vec![0.0; ckk * hw];
    for n in 0..batch {
        let dout_n = &dout[n * filters * hw..(n + 1) * filters * hw];
        if let Some(dk) = dk.as_mut() {
            im2col(&x[n * in_len..(n + 1) * in_len], geom, &mut col);
            gemm(filters, hw, ckk, dout_n, rm(hw), &col, tr(hw), 1.0, dk, rm(ckk));
        }
        if let Some(dx) = dx.as_mut() {
            gemm(ckk, filters, hw, kernel, tr(ckk), dout_n, rm(hw), 0.0, &mut col, rm(hw));
            col2im(&col, geom, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    (dx, dk)
}

/// Transposed convolution forward: the data-gradient of a convolution whose
/// input side is `geom` and whose output side is the `[F, out_h, out_w]` input here.
pub(crate) fn conv_transposed_forward(
    y: &[f64],
    kernel: &[f64],
    batch: usize,
    filters: usize,
    geom: &ConvGeom,
) -> Vec<f64> {
    let out_len = geom.channels * geom.height * geom.width;
    let (ckk, hw) = (geom.col_rows(), geom.col_cols());
    let mut out = vec![0.0; batch * out_len];
    let mut col = vec![0.0; ckk * hw];
    for n in 0..batch {
        let y_n = &y[n * filters * hw..(n + 1) * filters * hw];
        gemm(ckk, filters, hw, kernel, tr(ckk), y_n, rm(hw), 0.0, &mut col, rm(hw));
        col2im(&col, geom, &mut out[n * out_len..(n + 1) * out_len]);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transposed_backward(
    y: &[f64],
    kernel: &[f64],
    dout: &[f64],
    batch: usize,
    filters: usize,
    geom: &ConvGeom,
    want_dy: bool,
    want_dk: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let out_len = geom.channels * geom.height * geom.width;
    let (ckk, hw) = (geom.col_rows(), geom.col_cols());
    let mut dy = want_dy.then(|| vec![0.0; batch * filters * hw]);
    let mut dk = want_dk.then(|| vec![0.0; filters * ckk]);
    let mut col = vec![0.0; ckk * hw];
    for n in 0..batch {
        im2col(&dout[n * out_len..(n + 1) * out_len], geom, &mut col);
        if let Some(dy) = dy.as_mut() {
            gemm(
                filters,
                ckk,
                hw,
                kernel,
                rm(ckk),
                &col,
                rm(hw),
                0.0,
                &mut dy[n * filters * hw..(n + 1) * filters * hw],
                rm(hw),
            );
        }
        if let Some(dk) = dk.as_mut() {
            let y_n = &y[n * filters * hw..(n + 1) * filters * hw];
            gemm(filters, hw, ckk, y_n, rm(hw), &col, tr(hw), 1.0, dk, rm(ckk));
        }
    }
    (dy, dk)
}
