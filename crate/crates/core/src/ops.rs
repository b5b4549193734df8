//! Differentiable tensor kernels layered on candle.
//!
//! Convolutions are lowered to a per-sample patch matrix and a gemm call.
//! Each convolution is a single graph node with hand-written gradient
//! kernels, so the patch matrices never enter the autograd graph. The CPU
//! convolution kernels that ship with candle are several times slower for
//! the layer shapes used here.

use candle_core::{CpuStorage, CustomOp2, CustomOp3, DType, Layout, Shape, Tensor, WithDType};

use crate::{Error, Result};

/// Geometry of a 2-D sliding window over a `(channels, height, width)` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PatchGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Output columns `ox` whose input column `ox * stride + kj - padding`
    /// lands inside the map.
    fn valid_range(&self, offset: usize, out_len: usize, in_len: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.padding;
        // smallest ox with ox*s + offset >= p
        let lo = if offset >= p { 0 } else { (p - offset).div_ceil(s) };
        // largest ox with ox*s + offset - p < in_len
        let limit = in_len + p;
        let hi = if offset >= limit {
            0
        } else {
            ((limit - offset - 1) / s + 1).min(out_len)
        };
        (lo.min(hi), hi)
    }
}

/// Gathers the sliding-window patches of one `(C, H, W)` map into a
/// row-major `(C*kh*kw, OH*OW)` matrix. Entries that fall in the padding are
/// never written, so `out` must start zeroed; reusing it for another map of
/// the same geometry is fine.
fn im2col_into<T: WithDType>(src: &[T], g: PatchGeometry, out: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cols = g.cols();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let map = &src[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel_h {
            let (oy0, oy1) = g.valid_range(ki, oh, g.height);
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                let (ox0, ox1) = g.valid_range(kj, ow, g.width);
                if ox0 >= ox1 {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ki - g.padding;
                    let line = &map[iy * g.width..(iy + 1) * g.width];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        let ix0 = ox0 + kj - g.padding;
                        drow[ox0..ox1].copy_from_slice(&line[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            drow[ox] = line[ox * g.stride + kj - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_into`]: scatter-adds a patch matrix onto `out`.
fn col2im_add<T: WithDType>(src: &[T], g: PatchGeometry, out: &mut [T]) {
    let cols = g.cols();
    for row in 0..g.rows() {
        scatter_row(&src[row * cols..(row + 1) * cols], g, row, out);
    }
}

/// Scatter-adds one patch-matrix row onto the `(C, H, W)` map `out`.
fn scatter_row<T: WithDType>(src: &[T], g: PatchGeometry, row: usize, out: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = g.height * g.width;
    let kj = row % g.kernel_w;
    let ki = (row / g.kernel_w) % g.kernel_h;
    let c = row / (g.kernel_w * g.kernel_h);
    let map = &mut out[c * plane..(c + 1) * plane];
    let (oy0, oy1) = g.valid_range(ki, oh, g.height);
    let (ox0, ox1) = g.valid_range(kj, ow, g.width);
    if ox0 >= ox1 {
        return;
    }
    for oy in oy0..oy1 {
        let iy = oy * g.stride + ki - g.padding;
        let line = &mut map[iy * g.width..(iy + 1) * g.width];
        let crow = &src[oy * ow + ox0..oy * ow + ox1];
        if g.stride == 1 {
            let ix0 = ox0 + kj - g.padding;
            for (d, s) in line[ix0..ix0 + crow.len()].iter_mut().zip(crow) {
                *d += *s;
            }
        } else {
            for (i, s) in crow.iter().enumerate() {
                line[(ox0 + i) * g.stride + kj - g.padding] += *s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Major {
    Row,
    Col,
}

impl Major {
    /// (row stride, column stride) of a `rows x cols` matrix.
    fn strides(self, rows: usize, cols: usize) -> (isize, isize) {
        match self {
            Major::Row => (cols as isize, 1),
            Major::Col => (1, rows as isize),
        }
    }
}

/// `dst (m x n) = [dst +] a (m x k) * b (k x n)` on dense buffers in the
/// given storage orders.
fn matmul<T: WithDType>(
    (dst, dst_major): (&mut [T], Major),
    (a, a_major): (&[T], Major),
    (b, b_major): (&[T], Major),
    (m, n, k): (usize, usize, usize),
    accumulate: bool,
) {
    assert!(dst.len() >= m * n && a.len() >= m * k && b.len() >= k * n);
    let (d_rs, d_cs) = dst_major.strides(m, n);
    let (a_rs, a_cs) = a_major.strides(m, k);
    let (b_rs, b_cs) = b_major.strides(k, n);
    // SAFETY: the bounds above cover every element gemm touches.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            d_cs,
            d_rs,
            accumulate,
            a.as_ptr(),
            a_cs,
            a_rs,
            b.as_ptr(),
            b_cs,
            b_rs,
            T::one(),
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        )
    }
}

/// Copies a row-major `rows x cols` matrix into `dst` as its transpose.
fn transpose_into<T: WithDType>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for (c, v) in src[r * cols..(r + 1) * cols].iter().enumerate() {
            dst[c * rows + r] = *v;
        }
    }
}

/// Shapes shared by the convolution kernels: `batch` maps described by `g`
/// and a `(out_channels, g.rows())` kernel matrix.
#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    out_channels: usize,
    g: PatchGeometry,
}

impl ConvDims {
    fn image_len(&self) -> usize {
        self.g.channels * self.g.height * self.g.width
    }

    fn response_len(&self) -> usize {
        self.out_channels * self.g.cols()
    }
}

/// Layers with at most this many output channels are too thin for gemm
/// to pay off in the input gradient, and take a fused scatter loop instead.
const THIN_OUTPUT: usize = 16;

/// `y[b] = W * im2col(x[b])`.
fn conv_forward<T: WithDType>(x: &[T], w: &[T], d: ConvDims) -> Vec<T> {
    let (k, l, o) = (d.g.rows(), d.g.cols(), d.out_channels);
    let (xin, yout) = (d.image_len(), d.response_len());
    let mut out = vec![T::zero(); d.batch * yout];
    let mut patches = vec![T::zero(); k * l];
    let mut staging = vec![T::zero(); if o < THIN_OUTPUT { 0 } else { yout }];
    for b in 0..d.batch {
        im2col_into(&x[b * xin..(b + 1) * xin], d.g, &mut patches);
        let y = &mut out[b * yout..(b + 1) * yout];
        if o < THIN_OUTPUT {
            matmul((y, Major::Row), (w, Major::Row), (&patches, Major::Row), (o, l, k), false);
        } else {
            matmul((&mut staging, Major::Col), (w, Major::Row), (&patches, Major::Row), (o, l, k), false);
            transpose_into(&staging, l, o, y);
        }
    }
    out
}

/// `dx[b] = col2im(W^T * dy[b])`.
fn conv_grad_input<T: WithDType>(dy: &[T], w: &[T], d: ConvDims) -> Vec<T> {
    let (k, l, o) = (d.g.rows(), d.g.cols(), d.out_channels);
    let (xin, yout) = (d.image_len(), d.response_len());
    let mut out = vec![T::zero(); d.batch * xin];
    if o <= THIN_OUTPUT {
        let mut row = vec![T::zero(); l];
        for b in 0..d.batch {
            let dyb = &dy[b * yout..(b + 1) * yout];
            for kk in 0..k {
                row.fill(T::zero());
                for oo in 0..o {
                    let c = w[oo * k + kk];
                    for (r, g) in row.iter_mut().zip(&dyb[oo * l..(oo + 1) * l]) {
                        *r += c * *g;
                    }
                }
                scatter_row(&row, d.g, kk, &mut out[b * xin..(b + 1) * xin]);
            }
        }
        return out;
    }
    let mut cols = vec![T::zero(); k * l];
    for b in 0..d.batch {
        matmul(
            (&mut cols, Major::Row),
            (w, Major::Col),
            (&dy[b * yout..(b + 1) * yout], Major::Row),
            (k, l, o),
            false,
        );
        col2im_add(&cols, d.g, &mut out[b * xin..(b + 1) * xin]);
    }
    out
}

/// `dW = sum_b dy[b] * im2col(x[b])^T`.
fn conv_grad_weight<T: WithDType>(x: &[T], dy: &[T], d: ConvDims) -> Vec<T> {
    let (k, l, o) = (d.g.rows(), d.g.cols(), d.out_channels);
    let (xin, yout) = (d.image_len(), d.response_len());
    let mut dw_t = vec![T::zero(); o * k];
    let mut patches = vec![T::zero(); k * l];
    for b in 0..d.batch {
        im2col_into(&x[b * xin..(b + 1) * xin], d.g, &mut patches);
        matmul(
            (&mut dw_t, Major::Col),
            (&dy[b * yout..(b + 1) * yout], Major::Row),
            (&patches, Major::Col),
            (o, k, l),
            b > 0,
        );
    }
    let mut out = vec![T::zero(); o * k];
    transpose_into(&dw_t, k, o, &mut out);
    out
}

fn contiguous_slice<'a, T: WithDType>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("convolution kernels require contiguous input"),
    }
}

/// Runs a two-operand kernel on matching f32 or f64 storages.
fn dispatch2(
    name: &str,
    (s1, l1): (&CpuStorage, &Layout),
    (s2, l2): (&CpuStorage, &Layout),
    f32_kernel: impl Fn(&[f32], &[f32]) -> Vec<f32>,
    f64_kernel: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> candle_core::Result<CpuStorage> {
    Ok(match (s1, s2) {
        (CpuStorage::F32(a), CpuStorage::F32(b)) => {
            CpuStorage::F32(f32_kernel(contiguous_slice(a, l1)?, contiguous_slice(b, l2)?))
        }
        (CpuStorage::F64(a), CpuStorage::F64(b)) => {
            CpuStorage::F64(f64_kernel(contiguous_slice(a, l1)?, contiguous_slice(b, l2)?))
        }
        (a, b) => candle_core::bail!(
            "{name}: unsupported dtypes {:?} and {:?}",
            candle_core::backend::BackendStorage::dtype(a),
            candle_core::backend::BackendStorage::dtype(b)
        ),
    })
}

/// `(x, W) -> y`, the forward convolution.
struct ConvOp(ConvDims);

/// `(dy, W) -> dx`. Also the forward pass of a transposed convolution.
struct ConvGradInputOp(ConvDims);

/// `(x, dy) -> dW`.
struct ConvGradWeightOp(ConvDims);

/// Transposed convolution `(z, W) -> col2im(W^T z)`, differentiable.
struct ConvTransposeOp(ConvDims);

fn response_shape(d: ConvDims) -> Shape {
    Shape::from((d.batch, d.out_channels, d.g.out_h(), d.g.out_w()))
}

fn image_shape(d: ConvDims) -> Shape {
    Shape::from((d.batch, d.g.channels, d.g.height, d.g.width))
}

impl CustomOp2 for ConvOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.0;
        let out = dispatch2(self.name(), (s1, l1), (s2, l2), |x, w| conv_forward(x, w, d), |x, w| conv_forward(x, w, d))?;
        Ok((out, response_shape(d)))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let dx = match x.track_op() {
            true => Some(grad.apply_op2_no_bwd(w, &ConvGradInputOp(self.0))?),
            false => None,
        };
        let dw = match w.track_op() {
            true => Some(x.apply_op2_no_bwd(&grad, &ConvGradWeightOp(self.0))?.reshape(w.shape())?),
            false => None,
        };
        Ok((dx, dw))
    }
}

impl CustomOp2 for ConvGradInputOp {
    fn name(&self) -> &'static str {
        "conv2d-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.0;
        let out = dispatch2(
            self.name(),
            (s1, l1),
            (s2, l2),
            |dy, w| conv_grad_input(dy, w, d),
            |dy, w| conv_grad_input(dy, w, d),
        )?;
        Ok((out, image_shape(d)))
    }
}

impl CustomOp2 for ConvGradWeightOp {
    fn name(&self) -> &'static str {
        "conv2d-grad-weight"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.0;
        let out = dispatch2(
            self.name(),
            (s1, l1),
            (s2, l2),
            |x, dy| conv_grad_weight(x, dy, d),
            |x, dy| conv_grad_weight(x, dy, d),
        )?;
        Ok((out, Shape::from((d.out_channels, d.g.rows()))))
    }
}

impl CustomOp2 for ConvTransposeOp {
    fn name(&self) -> &'static str {
        "conv-transpose2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        ConvGradInputOp(self.0).cpu_fwd(s1, l1, s2, l2)
    }

    fn bwd(&self, z: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let dz = match z.track_op() {
            true => Some(grad.apply_op2_no_bwd(w, &ConvOp(self.0))?),
            false => None,
        };
        let dw = match w.track_op() {
            true => Some(grad.apply_op2_no_bwd(z, &ConvGradWeightOp(self.0))?.reshape(w.shape())?),
            false => None,
        };
        Ok((dz, dw))
    }
}

/// Cross-correlation of `x: (N, C, H, W)` with `weight: (O, C, kh, kw)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (o, wc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::Shape(format!(
            "conv2d: input has {c} channels, kernel expects {wc}"
        )));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw || stride == 0 {
        return Err(Error::Shape(format!(
            "conv2d: {kh}x{kw} kernel does not fit a {h}x{w} map with padding {padding}"
        )));
    }
    let g = PatchGeometry {
        channels: c,
        height: h,
        width: w,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding,
    };
    let dims = ConvDims {
        batch: n,
        out_channels: o,
        g,
    };
    Ok(x.contiguous()?.apply_op2(&weight.contiguous()?, ConvOp(dims))?)
}

/// Transposed convolution of `x: (N, Cin, H, W)` with `weight: (Cin, O, k, k)`,
/// producing `(N, O, (H-1)*stride + k - 2*padding, ...)`.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, cin, h, w) = x.dims4()?;
    let (wc, o, kh, kw) = weight.dims4()?;
    if wc != cin {
        return Err(Error::Shape(format!(
            "conv_transpose2d: input has {cin} channels, kernel expects {wc}"
        )));
    }
    let out_h = (h - 1) * stride + kh;
    let out_w = (w - 1) * stride + kw;
    if out_h <= 2 * padding || out_w <= 2 * padding {
        return Err(Error::Shape("conv_transpose2d: padding exceeds output".into()));
    }
    let g = PatchGeometry {
        channels: o,
        height: out_h - 2 * padding,
        width: out_w - 2 * padding,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding,
    };
    debug_assert_eq!((g.out_h(), g.out_w()), (h, w));
    let dims = ConvDims {
        batch: n,
        out_channels: cin,
        g,
    };
    Ok(x.contiguous()?.apply_op2(&weight.contiguous()?, ConvTransposeOp(dims))?)
}

/// Mean and reciprocal standard deviation of one plane, accumulated in f64.
fn plane_stats<T: WithDType>(plane: &[T], eps: f64) -> (f64, f64) {
    let n = plane.len() as f64;
    let mean = plane.iter().map(|v| v.to_f64()).sum::<f64>() / n;
    let var = plane.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

#[derive(Debug, Clone, Copy)]
struct NormDims {
    channels: usize,
    plane: usize,
    eps: f64,
}

fn instance_norm_forward<T: WithDType>(x: &[T], scale: &[T], offset: &[T], d: NormDims) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for (k, plane) in x.chunks_exact(d.plane).enumerate() {
        let c = k % d.channels;
        let (mean, inv) = plane_stats(plane, d.eps);
        let (g, b) = (scale[c].to_f64() * inv, offset[c].to_f64());
        out.extend(plane.iter().map(|v| T::from_f64((v.to_f64() - mean) * g + b)));
    }
    out
}

/// Gradients packed as `[dx, dscale, doffset]`.
fn instance_norm_backward<T: WithDType>(x: &[T], scale: &[T], dy: &[T], d: NormDims) -> Vec<T> {
    let mut dx = Vec::with_capacity(x.len() + 2 * d.channels);
    let mut dscale = vec![0.0f64; d.channels];
    let mut doffset = vec![0.0f64; d.channels];
    let n = d.plane as f64;
    for (k, (plane, g)) in x.chunks_exact(d.plane).zip(dy.chunks_exact(d.plane)).enumerate() {
        let c = k % d.channels;
        let (mean, inv) = plane_stats(plane, d.eps);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for (v, gv) in plane.iter().zip(g) {
            let xhat = (v.to_f64() - mean) * inv;
            sum_g += gv.to_f64();
            sum_gx += gv.to_f64() * xhat;
        }
        dscale[c] += sum_gx;
        doffset[c] += sum_g;
        let (mg, mgx) = (sum_g / n, sum_gx / n);
        let factor = scale[c].to_f64() * inv;
        dx.extend(plane.iter().zip(g).map(|(v, gv)| {
            let xhat = (v.to_f64() - mean) * inv;
            T::from_f64(factor * (gv.to_f64() - mg - xhat * mgx))
        }));
    }
    dx.extend(dscale.into_iter().map(T::from_f64));
    dx.extend(doffset.into_iter().map(T::from_f64));
    dx
}

/// `(x, scale, offset) -> y`.
struct InstanceNormOp(NormDims);

/// `(x, scale, dy) -> [dx, dscale, doffset]`.
struct InstanceNormGradOp(NormDims);

fn dispatch3(
    name: &str,
    (s1, l1): (&CpuStorage, &Layout),
    (s2, l2): (&CpuStorage, &Layout),
    (s3, l3): (&CpuStorage, &Layout),
    f32_kernel: impl Fn(&[f32], &[f32], &[f32]) -> Vec<f32>,
    f64_kernel: impl Fn(&[f64], &[f64], &[f64]) -> Vec<f64>,
) -> candle_core::Result<CpuStorage> {
    Ok(match (s1, s2, s3) {
        (CpuStorage::F32(a), CpuStorage::F32(b), CpuStorage::F32(c)) => CpuStorage::F32(f32_kernel(
            contiguous_slice(a, l1)?,
            contiguous_slice(b, l2)?,
            contiguous_slice(c, l3)?,
        )),
        (CpuStorage::F64(a), CpuStorage::F64(b), CpuStorage::F64(c)) => CpuStorage::F64(f64_kernel(
            contiguous_slice(a, l1)?,
            contiguous_slice(b, l2)?,
            contiguous_slice(c, l3)?,
        )),
        _ => candle_core::bail!("{name}: operands must all be f32 or all f64"),
    })
}

impl CustomOp3 for InstanceNormOp {
    fn name(&self) -> &'static str {
        "instance-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.0;
        let out = dispatch3(
            self.name(),
            (s1, l1),
            (s2, l2),
            (s3, l3),
            |x, g, b| instance_norm_forward(x, g, b, d),
            |x, g, b| instance_norm_forward(x, g, b, d),
        )?;
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        scale: &Tensor,
        offset: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let c = self.0.channels;
        let packed = x.apply_op3_no_bwd(scale, &grad.contiguous()?, &InstanceNormGradOp(self.0))?;
        let n = x.elem_count();
        let dx = x.track_op().then(|| packed.narrow(0, 0, n)?.reshape(x.shape())).transpose()?;
        let dscale = scale.track_op().then(|| packed.narrow(0, n, c)).transpose()?;
        let doffset = offset.track_op().then(|| packed.narrow(0, n + c, c)).transpose()?;
        Ok((dx, dscale, doffset))
    }
}

impl CustomOp3 for InstanceNormGradOp {
    fn name(&self) -> &'static str {
        "instance-norm-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.0;
        let out = dispatch3(
            self.name(),
            (s1, l1),
            (s2, l2),
            (s3, l3),
            |x, g, dy| instance_norm_backward(x, g, dy, d),
            |x, g, dy| instance_norm_backward(x, g, dy, d),
        )?;
        let len = l1.shape().elem_count() + 2 * d.channels;
        Ok((out, Shape::from(len)))
    }
}

/// Per-sample, per-channel normalization over the spatial extent with
/// statistics recomputed on every call, followed by an affine map.
pub fn instance_norm(x: &Tensor, scale: &Tensor, offset: &Tensor, eps: f64) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    if scale.dims() != [c] || offset.dims() != [c] {
        return Err(Error::Shape(format!(
            "instance norm over {c} channels got scale {:?} and offset {:?}",
            scale.dims(),
            offset.dims()
        )));
    }
    let dims = NormDims {
        channels: c,
        plane: h * w,
        eps,
    };
    Ok(x.contiguous()?.apply_op3(&scale.contiguous()?, &offset.contiguous()?, InstanceNormOp(dims))?)
}

/// `max(x, slope * x)`.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Non-overlapping 2x2 average pooling.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("cannot pool a {h}x{w} map")));
    }
    Ok(x.avg_pool2d(2)?)
}

/// Builds a tensor from host data with the requested dtype.
pub fn tensor_from_f32(data: Vec<f32>, shape: impl Into<Shape>, dtype: DType) -> Result<Tensor> {
    let t = Tensor::from_vec(data, shape, &candle_core::Device::Cpu)?;
    Ok(if dtype == DType::F32 { t } else { t.to_dtype(dtype)? })
}

/// Reads a scalar tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
