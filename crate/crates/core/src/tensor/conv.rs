//! im2col lowering and the GEMM wrapper behind `conv2d`.

/// Geometry of one 2-D convolution over a single image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Source coordinate of kernel tap `k` for output index `o`, or `None`
    /// when it falls in the zero padding.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, padding: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Lowers `input` (`[c_in, h, w]`) to a `[c_in*kh*kw, h_out*w_out]` matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n_cols = g.cols();
    let mut cols = vec![0.0; g.rows() * n_cols];
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.h_out {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.padding, g.h) else {
                        continue;
                    };
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        if let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.padding, g.w) {
                            *d = src_row[ix];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-adds a column matrix back onto an image gradient (adjoint of `im2col`).
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let n_cols = g.cols();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.h_out {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.padding, g.h) else {
                        continue;
                    };
                    for ox in 0..g.w_out {
                        if let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.padding, g.w) {
                            plane[iy * g.w + ix] += src[oy * g.w_out + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Row-major matrix operand: data plus whether it is read transposed.
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl Mat<'_> {
    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a·b + beta·c` with `c` row-major `[m, n]`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above pin every operand's extent to its strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
