//! Raw slice kernels behind the tape ops. No shape validation happens here;
//! the op layer checks shapes before calling in.

use super::Element;

/// Row-major matrix operand: `rows × cols` as seen by the product, stored
/// either directly or as its transpose.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn plain(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, transposed: false }
    }

    /// `data` holds a `cols × rows` matrix; the product sees its transpose.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, transposed: true }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

fn check_extent<T>(m: &MatRef<'_, T>) {
    assert!(m.data.len() >= m.rows * m.cols, "matrix operand shorter than its extent");
}

/// `out (m×n) = a (m×k) · b (k×n)`, optionally accumulating into `out`.
pub(crate) fn matmul<T: Element>(a: MatRef<'_, T>, b: MatRef<'_, T>, out: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.cols, b.rows);
    check_extent(&a);
    check_extent(&b);
    T::gemm(a.rows, a.cols, b.cols, a.data, a.strides(), b.data, b.strides(), out, accumulate);
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub groups: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.in_ch / self.groups
    }
    fn cout_g(&self) -> usize {
        self.out_ch / self.groups
    }
    fn col_rows(&self) -> usize {
        self.cin_g() * self.k_h * self.k_w
    }
    fn spatial_out(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate sampled by output cell `o` at kernel tap `k`.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Gathers one (image, group) window matrix `[cin_g·kh·kw, oh·ow]`.
    fn im2col<T: Element>(&self, input: &[T], n: usize, g: usize, col: &mut [T]) {
        let plane = self.in_h * self.in_w;
        let so = self.spatial_out();
        for ci in 0..self.cin_g() {
            let chan = n * self.in_ch + g * self.cin_g() + ci;
            let src = &input[chan * plane..(chan + 1) * plane];
            for ky in 0..self.k_h {
                for kx in 0..self.k_w {
                    let row = (ci * self.k_h + ky) * self.k_w + kx;
                    let dst = &mut col[row * so..(row + 1) * so];
                    for oy in 0..self.out_h {
                        let iy = Self::src(oy, ky, self.stride.0, self.pad.0, self.in_h);
                        for ox in 0..self.out_w {
                            let ix = Self::src(ox, kx, self.stride.1, self.pad.1, self.in_w);
                            dst[oy * self.out_w + ox] = match (iy, ix) {
                                (Some(y), Some(x)) => src[y * self.in_w + x],
                                _ => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a window matrix back onto the input gradient.
    fn col2im<T: Element>(&self, col: &[T], n: usize, g: usize, grad_in: &mut [T]) {
        let plane = self.in_h * self.in_w;
        let so = self.spatial_out();
        for ci in 0..self.cin_g() {
            let chan = n * self.in_ch + g * self.cin_g() + ci;
            let dst = &mut grad_in[chan * plane..(chan + 1) * plane];
            for ky in 0..self.k_h {
                for kx in 0..self.k_w {
                    let row = (ci * self.k_h + ky) * self.k_w + kx;
                    let src = &col[row * so..(row + 1) * so];
                    for oy in 0..self.out_h {
                        let Some(y) = Self::src(oy, ky, self.stride.0, self.pad.0, self.in_h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(x) = Self::src(ox, kx, self.stride.1, self.pad.1, self.in_w) {
                                dst[y * self.in_w + x] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(
    geom: &ConvGeom,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let so = geom.spatial_out();
    let (cin_g, cout_g, rows) = (geom.cin_g(), geom.cout_g(), geom.col_rows());
    let mut out = vec![T::zero(); geom.batch * geom.out_ch * so];
    let mut col = vec![T::zero(); rows * so];
    for n in 0..geom.batch {
        for g in 0..geom.groups {
            geom.im2col(input, n, g, &mut col);
            let w = &weight[g * cout_g * rows..(g + 1) * cout_g * rows];
            let o0 = (n * geom.out_ch + g * cout_g) * so;
            matmul(
                MatRef::plain(w, cout_g, rows),
                MatRef::plain(&col, rows, so),
                &mut out[o0..o0 + cout_g * so],
                false,
            );
        }
    }
    debug_assert!(cin_g * geom.groups == geom.in_ch);
    if let Some(bias) = bias {
        for n in 0..geom.batch {
            for (c, &b) in bias.iter().enumerate() {
                let o0 = (n * geom.out_ch + c) * so;
                out[o0..o0 + so].iter_mut().for_each(|v| *v += b);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Element>(
    geom: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
) -> ConvGrads<T> {
    let so = geom.spatial_out();
    let (cout_g, rows) = (geom.cout_g(), geom.col_rows());
    let mut grad_in = vec![T::zero(); input.len()];
    let mut grad_w = vec![T::zero(); weight.len()];
    let mut grad_b = vec![T::zero(); geom.out_ch];
    let mut col = vec![T::zero(); rows * so];
    let mut dcol = vec![T::zero(); rows * so];
    for n in 0..geom.batch {
        for g in 0..geom.groups {
            geom.im2col(input, n, g, &mut col);
            let w = &weight[g * cout_g * rows..(g + 1) * cout_g * rows];
            let o0 = (n * geom.out_ch + g * cout_g) * so;
            let dy = &grad_out[o0..o0 + cout_g * so];
            // dW_g += dY_g · colᵀ
            matmul(
                MatRef::plain(dy, cout_g, so),
                MatRef::transposed(&col, so, rows),
                &mut grad_w[g * cout_g * rows..(g + 1) * cout_g * rows],
                true,
            );
            // dcol = W_gᵀ · dY_g
            matmul(
                MatRef::transposed(w, rows, cout_g),
                MatRef::plain(dy, cout_g, so),
                &mut dcol,
                false,
            );
            geom.col2im(&dcol, n, g, &mut grad_in);
        }
        for (c, gb) in grad_b.iter_mut().enumerate() {
            let o0 = (n * geom.out_ch + c) * so;
            *gb += grad_out[o0..o0 + so].iter().copied().sum::<T>();
        }
    }
    ConvGrads { input: grad_in, weight: grad_w, bias: grad_b }
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub(crate) fn permute<T: Element>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd];
    for _ in 0..data.len() {
        let offset: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(data[offset]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}
