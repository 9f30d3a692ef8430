use super::kernels::{self, ConvGeom, MatRef};
use super::{conv_out_extent, shape_err, Element, GradTape, Result, Tensor, TensorError, Var};

/// Stride, zero padding and channel grouping for [`GradTape::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams { stride: (1, 1), padding: (0, 0), groups: 1 }
    }
}

impl Conv2dParams {
    pub fn square(stride: usize, padding: usize) -> Self {
        Conv2dParams { stride: (stride, stride), padding: (padding, padding), groups: 1 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let d = shape.last().copied().unwrap_or(1);
    let rows = shape.iter().product::<usize>().checked_div(d).unwrap_or(0);
    (rows, d)
}

fn same_shape(op: &'static str, a: &Tensor<impl Element>, b: &Tensor<impl Element>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn gelu_parts<T: Element>(x: T) -> (T, T) {
    // tanh approximation
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dinner = c * (T::one() + T::lit(3.0) * k * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (y, dy)
}

pub(crate) fn softmax_rows<T: Element>(data: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for (src, dst) in data.chunks(d).zip(out.chunks_mut(d)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - max).exp();
            total += *o;
        }
        dst.iter_mut().for_each(|o| *o = *o / total);
    }
    out
}

impl<T: Element> GradTape<T> {
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("add", a.value(), b.value())?;
        let out: Vec<T> = a.value().data().iter().zip(b.value().data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(a.shape().to_vec(), out)?;
        self.push("add", value, &[a, b], |g| Ok(vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", a.value(), b.value())?;
        let (av, bv) = (a.value().clone(), b.value().clone());
        let out: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push("mul", value, &[a, b], move |g| {
            let ga = g.data().iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
            let gb = g.data().iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
            Ok(vec![Some(Tensor::new(g.shape().to_vec(), ga)?), Some(Tensor::new(g.shape().to_vec(), gb)?)])
        })
    }

    pub fn scale(&self, a: &Var<T>, factor: T) -> Result<Var<T>> {
        let value = a.value().map(|v| v * factor);
        self.push("scale", value, &[a], move |g| Ok(vec![Some(g.map(|v| v * factor))]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self, a: &Var<T>) -> Result<Var<T>> {
        let shape = a.shape().to_vec();
        let value = Tensor::scalar(a.value().sum_all());
        self.push("sum", value, &[a], move |g| Ok(vec![Some(Tensor::full(shape.clone(), g.data()[0]))]))
    }

    pub fn mean(&self, a: &Var<T>) -> Result<Var<T>> {
        let n = a.value().numel();
        if n == 0 {
            return Err(TensorError::InvalidArgument { op: "mean", detail: "empty tensor".into() });
        }
        let s = self.sum(a)?;
        self.scale(&s, T::one() / T::from_usize(n).unwrap())
    }

    pub fn reshape(&self, a: &Var<T>, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        let value = a.value().reshape(shape)?;
        let original = a.shape().to_vec();
        self.push("reshape", value, &[a], move |g| Ok(vec![Some(g.reshape(original.clone())?)]))
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, a: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        let shape = a.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(shape_err("permute", format!("axes {axes:?} invalid for {shape:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let value = Tensor::new(out_shape.clone(), kernels::permute(a.value().data(), &shape, axes))?;
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.push("permute", value, &[a], move |g| {
            Ok(vec![Some(Tensor::new(shape.clone(), kernels::permute(g.data(), &out_shape, &inverse))?)])
        })
    }

    /// Batched product over leading axes: `[.., M, K] · [.., K, N]`, or
    /// `[.., M, K] · [.., N, K]ᵀ` when `transpose_b` is set.
    pub fn batched_matmul(&self, a: &Var<T>, b: &Var<T>, transpose_b: bool) -> Result<Var<T>> {
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(shape_err("batched_matmul", format!("{sa:?} vs {sb:?}")));
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if transpose_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(shape_err("batched_matmul", format!("inner extents {k} vs {kb}")));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let (av, bv) = (a.value().clone(), b.value().clone());
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            matmul_slice(
                MatRef::plain(&av.data()[i * m * k..(i + 1) * m * k], m, k),
                b_operand(&bv.data()[i * k * n..(i + 1) * k * n], k, n, transpose_b),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let mut out_shape = sa[..r - 2].to_vec();
        out_shape.extend([m, n]);
        let value = Tensor::new(out_shape, out)?;
        self.push("batched_matmul", value, &[a, b], move |g| {
            let mut ga = vec![T::zero(); batch * m * k];
            let mut gb = vec![T::zero(); batch * k * n];
            for i in 0..batch {
                let gi = &g.data()[i * m * n..(i + 1) * m * n];
                let ai = &av.data()[i * m * k..(i + 1) * m * k];
                let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                // dA = dC · Bᵀ
                let bt = if transpose_b { MatRef::plain(bi, n, k) } else { MatRef::transposed(bi, n, k) };
                matmul_slice(MatRef::plain(gi, m, n), bt, &mut ga[i * m * k..(i + 1) * m * k]);
                if transpose_b {
                    // d(Bᵀ) stored as [N, K]: dCᵀ · A
                    matmul_slice(MatRef::transposed(gi, n, m), MatRef::plain(ai, m, k), &mut gb[i * k * n..(i + 1) * k * n]);
                } else {
                    matmul_slice(MatRef::transposed(ai, k, m), MatRef::plain(gi, m, n), &mut gb[i * k * n..(i + 1) * k * n]);
                }
            }
            Ok(vec![Some(Tensor::new(av.shape().to_vec(), ga)?), Some(Tensor::new(bv.shape().to_vec(), gb)?)])
        })
    }

    /// Affine map over the trailing axis: `x · Wᵀ + b` with `W: [D_out, D_in]`.
    pub fn linear(&self, x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let (rows, d_in) = split_last(x.shape());
        let ws = weight.shape();
        if ws.len() != 2 || ws[1] != d_in || x.shape().is_empty() {
            return Err(shape_err("linear", format!("input {:?} vs weight {:?}", x.shape(), ws)));
        }
        let d_out = ws[0];
        if let Some(b) = bias {
            if b.shape() != [d_out] {
                return Err(shape_err("linear", format!("bias {:?} vs {d_out} outputs", b.shape())));
            }
        }
        let (xv, wv) = (x.value().clone(), weight.value().clone());
        let mut out = vec![T::zero(); rows * d_out];
        matmul_slice(MatRef::plain(xv.data(), rows, d_in), MatRef::transposed(wv.data(), d_in, d_out), &mut out);
        if let Some(b) = bias {
            for row in out.chunks_mut(d_out) {
                row.iter_mut().zip(b.value().data()).for_each(|(o, &bb)| *o += bb);
            }
        }
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = d_out;
        let value = Tensor::new(out_shape, out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        self.push("linear", value, &inputs, move |g| {
            let mut gx = vec![T::zero(); rows * d_in];
            matmul_slice(MatRef::plain(g.data(), rows, d_out), MatRef::plain(wv.data(), d_out, d_in), &mut gx);
            let mut gw = vec![T::zero(); d_out * d_in];
            matmul_slice(MatRef::transposed(g.data(), d_out, rows), MatRef::plain(xv.data(), rows, d_in), &mut gw);
            let mut grads = vec![Some(Tensor::new(xv.shape().to_vec(), gx)?), Some(Tensor::new(vec![d_out, d_in], gw)?)];
            if has_bias {
                let mut gb = vec![T::zero(); d_out];
                for row in g.data().chunks(d_out) {
                    gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                grads.push(Some(Tensor::new(vec![d_out], gb)?));
            }
            Ok(grads)
        })
    }

    /// 2-D convolution over NCHW input with OIHW weights (`I = C / groups`).
    pub fn conv2d(&self, x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>, params: Conv2dParams) -> Result<Var<T>> {
        let (xs, ws) = (x.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err("conv2d", format!("input {xs:?} / weight {ws:?} must be 4-D")));
        }
        let Conv2dParams { stride, padding, groups } = params;
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::InvalidArgument { op: "conv2d", detail: "stride must be positive".into() });
        }
        if groups == 0 || xs[1] % groups != 0 || ws[0] % groups != 0 {
            return Err(shape_err("conv2d", format!("channels {} / outputs {} not divisible by {groups} groups", xs[1], ws[0])));
        }
        if ws[1] != xs[1] / groups {
            return Err(shape_err("conv2d", format!("weight takes {} input channels, expected {}", ws[1], xs[1] / groups)));
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(shape_err("conv2d", format!("bias {:?} vs {} outputs", b.shape(), ws[0])));
            }
        }
        let out_extent = |i: usize, k: usize, s: usize, p: usize| conv_out_extent(i, k, s, p).filter(|&e| e >= 1);
        let (Some(out_h), Some(out_w)) = (out_extent(xs[2], ws[2], stride.0, padding.0), out_extent(xs[3], ws[3], stride.1, padding.1)) else {
            return Err(shape_err("conv2d", format!("output extent < 1 for input {xs:?} kernel {ws:?}")));
        };
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_ch: ws[0],
            k_h: ws[2],
            k_w: ws[3],
            out_h,
            out_w,
            stride,
            pad: padding,
            groups,
        };
        let (xv, wv) = (x.value().clone(), weight.value().clone());
        let out = kernels::conv2d_forward(&geom, xv.data(), wv.data(), bias.map(|b| b.value().data()));
        let value = Tensor::new(vec![geom.batch, geom.out_ch, out_h, out_w], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        self.push("conv2d", value, &inputs, move |g| {
            let grads = kernels::conv2d_backward(&geom, xv.data(), wv.data(), g.data());
            let mut out = vec![Some(Tensor::new(xv.shape().to_vec(), grads.input)?), Some(Tensor::new(wv.shape().to_vec(), grads.weight)?)];
            if has_bias {
                out.push(Some(Tensor::new(vec![geom.out_ch], grads.bias)?));
            }
            Ok(out)
        })
    }

    /// Normalizes the trailing axis to zero mean and unit variance, then
    /// applies `gamma`/`beta`.
    pub fn layer_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let (rows, d) = split_last(x.shape());
        if d == 0 || x.shape().is_empty() || gamma.shape() != [d] || beta.shape() != [d] {
            return Err(shape_err("layer_norm", format!("input {:?} gamma {:?} beta {:?}", x.shape(), gamma.shape(), beta.shape())));
        }
        let dn = T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        for (r, src) in x.value().data().chunks(d).enumerate() {
            let mean = src.iter().copied().sum::<T>() / dn;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (h, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(src) {
                *h = (v - mean) * is;
            }
        }
        let (gv, bv) = (gamma.value().clone(), beta.value().clone());
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for ((o, &gg), &bb) in row.iter_mut().zip(gv.data()).zip(bv.data()) {
                *o = *o * gg + bb;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let shape = x.shape().to_vec();
        self.push("layer_norm", value, &[x, gamma, beta], move |g| {
            let mut gx = vec![T::zero(); rows * d];
            let mut gg = vec![T::zero(); d];
            let mut gb = vec![T::zero(); d];
            for r in 0..rows {
                let gy = &g.data()[r * d..(r + 1) * d];
                let xh = &xhat[r * d..(r + 1) * d];
                let mut mean_dxh = T::zero();
                let mut mean_dxh_xh = T::zero();
                for j in 0..d {
                    let dxh = gy[j] * gv.data()[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[j];
                    gg[j] += gy[j] * xh[j];
                    gb[j] += gy[j];
                }
                mean_dxh = mean_dxh / dn;
                mean_dxh_xh = mean_dxh_xh / dn;
                for j in 0..d {
                    let dxh = gy[j] * gv.data()[j];
                    gx[r * d + j] = inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                }
            }
            Ok(vec![
                Some(Tensor::new(shape.clone(), gx)?),
                Some(Tensor::new(vec![d], gg)?),
                Some(Tensor::new(vec![d], gb)?),
            ])
        })
    }

    /// Softmax over the trailing axis, stabilized by max subtraction.
    pub fn softmax(&self, x: &Var<T>) -> Result<Var<T>> {
        let (_, d) = split_last(x.shape());
        if x.shape().is_empty() || d == 0 {
            return Err(shape_err("softmax", format!("{:?}", x.shape())));
        }
        let value = Tensor::new(x.shape().to_vec(), softmax_rows(x.value().data(), d))?;
        let y = value.clone();
        self.push("softmax", value, &[x], move |g| {
            let mut gx = vec![T::zero(); y.numel()];
            for ((gy, yy), dst) in g.data().chunks(d).zip(y.data().chunks(d)).zip(gx.chunks_mut(d)) {
                let dot: T = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum();
                for ((o, &a), &b) in dst.iter_mut().zip(gy).zip(yy) {
                    *o = b * (a - dot);
                }
            }
            Ok(vec![Some(Tensor::new(y.shape().to_vec(), gx)?)])
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, x: &Var<T>) -> Result<Var<T>> {
        let xv = x.value().clone();
        let value = xv.map(|v| gelu_parts(v).0);
        self.push("gelu", value, &[x], move |g| {
            let gx = g.data().iter().zip(xv.data()).map(|(&gy, &v)| gy * gelu_parts(v).1).collect();
            Ok(vec![Some(Tensor::new(xv.shape().to_vec(), gx)?)])
        })
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        let shape = x.shape().to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(shape_err("mean_axis", format!("axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = T::one() / T::from_usize(len).unwrap();
        let mut out = vec![T::zero(); outer * inner];
        let data = x.value().data();
        for o in 0..outer {
            for l in 0..len {
                let src = &data[(o * len + l) * inner..(o * len + l + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(a, &v)| *a += v);
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        self.push("mean_axis", value, &[x], move |g| {
            let mut gx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for l in 0..len {
                    gx[(o * len + l) * inner..(o * len + l + 1) * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, &v)| *a = v * inv);
                }
            }
            Ok(vec![Some(Tensor::new(shape.clone(), gx)?)])
        })
    }

    /// Batch-mean of `−Σ_k t_k · log softmax(z)_k` for logits `[N, K]`
    /// against constant soft targets of the same shape.
    pub fn soft_cross_entropy(&self, logits: &Var<T>, targets: &Tensor<T>) -> Result<Var<T>> {
        let s = logits.shape();
        if s.len() != 2 || targets.shape() != s || s[0] == 0 || s[1] == 0 {
            return Err(shape_err("soft_cross_entropy", format!("logits {:?} targets {:?}", s, targets.shape())));
        }
        let (n, k) = (s[0], s[1]);
        let nn = T::from_usize(n).unwrap();
        let probs = softmax_rows(logits.value().data(), k);
        let mut loss = T::zero();
        for (z, t) in logits.value().data().chunks(k).zip(targets.data().chunks(k)) {
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += z.iter().zip(t).map(|(&zz, &tt)| tt * (lse - zz)).sum::<T>();
        }
        let value = Tensor::scalar(loss / nn);
        let targets = targets.clone();
        let shape = s.to_vec();
        self.push("soft_cross_entropy", value, &[logits], move |g| {
            let scale = g.data()[0] / nn;
            let mut gz = vec![T::zero(); n * k];
            for ((dst, p), t) in gz.chunks_mut(k).zip(probs.chunks(k)).zip(targets.data().chunks(k)) {
                let mass: T = t.iter().copied().sum();
                for ((o, &pp), &tt) in dst.iter_mut().zip(p).zip(t) {
                    *o = scale * (pp * mass - tt);
                }
            }
            Ok(vec![Some(Tensor::new(shape.clone(), gz)?)])
        })
    }
}

fn b_operand<T>(data: &[T], k: usize, n: usize, transposed: bool) -> MatRef<'_, T> {
    if transposed {
        MatRef::transposed(data, k, n)
    } else {
        MatRef::plain(data, k, n)
    }
}

fn matmul_slice<T: Element>(a: MatRef<'_, T>, b: MatRef<'_, T>, out: &mut [T]) {
    kernels::matmul(a, b, out, false);
}
