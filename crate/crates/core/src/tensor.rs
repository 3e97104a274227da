//! Dense `f32` tensors and the forward/backward kernels used by the segmenter.
//!
//! All 4-D tensors use NCHW layout in row-major order. Every kernel is a pure
//! function of its arguments and returns freshly allocated tensors.

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return shape_err(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable element access. Used by the optimizer between training steps.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Interprets the tensor as `[N, C, H, W]`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => shape_err(format!("expected a 4-D tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise scaling, returning a new tensor.
    pub fn scale(&self, factor: f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Copies sample `index` of a batched tensor out as a batch of one.
    pub fn sample(&self, index: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if index >= n {
            return shape_err(format!("sample {index} out of range for batch of {n}"));
        }
        let stride = c * h * w;
        Self::new(
            vec![1, c, h, w],
            self.data[index * stride..(index + 1) * stride].to_vec(),
        )
    }

    /// Stacks equally shaped `[1, C, H, W]` or `[C, H, W]` tensors into a batch.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = match items.first() {
            Some(t) => t,
            None => return shape_err("cannot stack an empty list"),
        };
        let inner: Vec<usize> = match first.shape[..] {
            [1, c, h, w] | [c, h, w] => vec![c, h, w],
            _ => return shape_err(format!("cannot stack shape {:?}", first.shape)),
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.len() != first.len() || t.shape.iter().rev().take(3).ne(first.shape.iter().rev().take(3)) {
                return shape_err(format!("stack shape mismatch: {:?} vs {:?}", t.shape, first.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Self::new(shape, data)
    }
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return shape_err(format!(
            "kernel extent {kernel} does not fit padded input extent {padded}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

struct ConvGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return shape_err("stride must be positive");
        }
        let (n, cin, h, w) = input.dims4()?;
        let (cout, kcin, kh, kw) = kernel.dims4()?;
        if kcin != cin {
            return shape_err(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            ));
        }
        let oh = conv_out_dim(h, kh, stride, padding)?;
        let ow = conv_out_dim(w, kw, stride, padding)?;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `[lo, hi)` whose input column `ox·stride + kj − padding` is in bounds.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.w + self.padding > kj {
            ((self.w + self.padding - kj - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unfolds one sample into a `[Cin*kh*kw, OH*OW]` column matrix.
    fn im2col(&self, sample: &[f32], col: &mut [f32]) {
        let pixels = self.out_pixels();
        for ci in 0..self.cin {
            let plane = &sample[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * pixels..(row + 1) * pixels];
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize || lo == hi {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        let first = lo * self.stride + kj - self.padding;
                        if self.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (i, slot) in line[lo..hi].iter_mut().enumerate() {
                                *slot = src[first + i * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, accumulating.
    fn col2im(&self, col: &[f32], sample: &mut [f32]) {
        let pixels = self.out_pixels();
        for ci in 0..self.cin {
            let plane = &mut sample[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &col[row * pixels..(row + 1) * pixels];
                    let (lo, hi) = self.valid_cols(kj);
                    if lo == hi {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let line = &src[oy * self.ow + lo..oy * self.ow + hi];
                        let first = lo * self.stride + kj - self.padding;
                        if self.stride == 1 {
                            for (d, v) in dst[first..first + line.len()].iter_mut().zip(line) {
                                *d += v;
                            }
                        } else {
                            for (i, v) in line.iter().enumerate() {
                                dst[first + i * self.stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n] (+ c if accumulate)` with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every element addressed by the given strides,
    // which callers derive from the same dimensions.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `input` is `[N, Cin, H, W]`, `kernel` is `[Cout, Cin, kh, kw]` and `bias`
/// holds `Cout` values. The output is `[N, Cout, H', W']` with
/// `H' = (H + 2·padding − kh) / stride + 1`.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel, stride, padding)?;
    if bias.len() != g.cout {
        return shape_err(format!("bias has {} entries, expected {}", bias.len(), g.cout));
    }
    let pixels = g.out_pixels();
    let patch = g.patch_len();
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * pixels;
    let mut out = vec![0.0f32; g.n * out_stride];
    let mut col = vec![0.0f32; patch * pixels];
    for s in 0..g.n {
        g.im2col(&input.data[s * in_stride..(s + 1) * in_stride], &mut col);
        let dst = &mut out[s * out_stride..(s + 1) * out_stride];
        for (co, &b) in bias.data.iter().enumerate() {
            dst[co * pixels..(co + 1) * pixels].fill(b);
        }
        // Computed as Yᵀ[P×Cout] = colᵀ · Kᵀ, which keeps the long pixel axis
        // as the gemm row dimension.
        gemm(
            pixels,
            patch,
            g.cout,
            &col,
            (1, pixels),
            &kernel.data,
            (1, patch),
            dst,
            (1, pixels),
            true,
        );
    }
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

/// Gradients of [`conv2d_forward`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_output: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(input, kernel, stride, padding)?;
    let expected = [g.n, g.cout, g.oh, g.ow];
    if grad_output.shape() != expected {
        return shape_err(format!(
            "grad_output shape {:?} does not match forward output {:?}",
            grad_output.shape(),
            expected
        ));
    }
    let pixels = g.out_pixels();
    let patch = g.patch_len();
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * pixels;

    let mut grad_input = vec![0.0f32; input.len()];
    let mut grad_kernel = vec![0.0f32; kernel.len()];
    let mut grad_bias = vec![0.0f32; g.cout];
    let mut col = vec![0.0f32; patch * pixels];
    let mut grad_col = vec![0.0f32; patch * pixels];

    for s in 0..g.n {
        let gout = &grad_output.data[s * out_stride..(s + 1) * out_stride];
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            *gb += gout[co * pixels..(co + 1) * pixels].iter().sum::<f32>();
        }
        g.im2col(&input.data[s * in_stride..(s + 1) * in_stride], &mut col);
        // dK[Cout×patch] += dY[Cout×P] · colᵀ[P×patch]
        gemm(
            g.cout,
            pixels,
            patch,
            gout,
            (pixels, 1),
            &col,
            (1, pixels),
            &mut grad_kernel,
            (patch, 1),
            true,
        );
        // dcol[patch×P] = Kᵀ[patch×Cout] · dY[Cout×P]
        gemm(
            patch,
            g.cout,
            pixels,
            &kernel.data,
            (1, patch),
            gout,
            (pixels, 1),
            &mut grad_col,
            (pixels, 1),
            false,
        );
        g.col2im(&grad_col, &mut grad_input[s * in_stride..(s + 1) * in_stride]);
    }

    Ok(ConvGrads {
        input: Tensor::new(input.shape.clone(), grad_input)?,
        kernel: Tensor::new(kernel.shape.clone(), grad_kernel)?,
        bias: Tensor::new(vec![g.cout], grad_bias)?,
    })
}

/// Softmax over the channel axis of `[N, K, H, W]` logits, per pixel.
pub fn softmax_channels(logits: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = logits.dims4()?;
    let plane = h * w;
    let mut out = vec![0.0f32; logits.len()];
    let mut exps = vec![0.0f64; k];
    for s in 0..n {
        let base = s * k * plane;
        for px in 0..plane {
            let mut max = f32::NEG_INFINITY;
            for c in 0..k {
                max = max.max(logits.data[base + c * plane + px]);
            }
            let mut total = 0.0f64;
            for (c, e) in exps.iter_mut().enumerate() {
                *e = ((logits.data[base + c * plane + px] - max) as f64).exp();
                total += *e;
            }
            for (c, e) in exps.iter().enumerate() {
                out[base + c * plane + px] = (e / total) as f32;
            }
        }
    }
    Tensor::new(logits.shape.clone(), out)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Passes `grad_out` where `x > 0`; the gradient at exactly zero is zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape != grad_out.shape {
        return shape_err(format!(
            "relu grad shape {:?} does not match input {:?}",
            grad_out.shape, x.shape
        ));
    }
    let data = x
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape.clone(), data)
}

/// 2×2 max-pooling with stride 2.
pub fn downsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("downsample needs even spatial dims, got {h}×{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data.chunks_exact(h * w) {
        for oy in 0..oh {
            let top = &plane[2 * oy * w..(2 * oy + 1) * w];
            let bottom = &plane[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..ow {
                let m = top[2 * ox]
                    .max(top[2 * ox + 1])
                    .max(bottom[2 * ox])
                    .max(bottom[2 * ox + 1]);
                out.push(m);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Routes each pooled gradient to the first maximal element of its window
/// (row-major order within the window).
pub fn downsample2x_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("downsample needs even spatial dims, got {h}×{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, oh, ow] {
        return shape_err(format!(
            "downsample grad shape {:?} does not match {:?}",
            grad_out.shape(),
            [n, c, oh, ow]
        ));
    }
    let mut grad = vec![0.0f32; x.len()];
    for (p, (plane, gplane)) in x
        .data
        .chunks_exact(h * w)
        .zip(grad_out.data.chunks_exact(oh * ow))
        .enumerate()
    {
        let dst = &mut grad[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let candidates = [
                    2 * oy * w + 2 * ox,
                    2 * oy * w + 2 * ox + 1,
                    (2 * oy + 1) * w + 2 * ox,
                    (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                dst[best] += gplane[oy * ow + ox];
            }
        }
    }
    Tensor::new(x.shape.clone(), grad)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data.chunks_exact(h * w) {
        for oy in 0..oh {
            let row = &plane[(oy / 2) * w..(oy / 2 + 1) * w];
            for ox in 0..ow {
                out.push(row[ox / 2]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Adjoint of [`upsample2x`]: sums each 2×2 block.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, oh, ow) = grad_out.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return shape_err(format!("upsample grad needs even spatial dims, got {oh}×{ow}"));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut grad = vec![0.0f32; n * c * h * w];
    for (gplane, dst) in grad_out
        .data
        .chunks_exact(oh * ow)
        .zip(grad.chunks_exact_mut(h * w))
    {
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / 2) * w + ox / 2] += gplane[oy * ow + ox];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], grad)
}

/// Concatenates two `[N, C?, H, W]` tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return shape_err(format!(
            "cannot concat {:?} with {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (sa, sb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        out.extend_from_slice(&a.data[s * sa..(s + 1) * sa]);
        out.extend_from_slice(&b.data[s * sb..(s + 1) * sb]);
    }
    Tensor::new(vec![n, ca + cb, h, w], out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(x: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    if first > c {
        return shape_err(format!("cannot split {c} channels at {first}"));
    }
    let plane = h * w;
    let (sa, sb) = (first * plane, (c - first) * plane);
    let mut a = Vec::with_capacity(n * sa);
    let mut b = Vec::with_capacity(n * sb);
    for chunk in x.data.chunks_exact(c * plane) {
        a.extend_from_slice(&chunk[..sa]);
        b.extend_from_slice(&chunk[sa..]);
    }
    Ok((
        Tensor::new(vec![n, first, h, w], a)?,
        Tensor::new(vec![n, c - first, h, w], b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Direct-loop reference convolution in f64.
    fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let (n, cin, h, w) = x.dims4().unwrap();
        let (cout, _, kh, kw) = k.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Vec::new();
        for s in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[co] as f64;
                        for ci in 0..cin {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = x.data()
                                        [((s * cin + ci) * h + iy as usize) * w + ix as usize];
                                    let kv = k.data()[((co * cin + ci) * kh + i) * kw + j];
                                    acc += xv as f64 * kv as f64;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = random(&[2, 1, 5, 4], 1);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d_forward(&x, &k, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = random(&[1, 2, 6, 6], 2);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d_forward(&x, &k, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 6, 6]);
        for (c, chunk) in y.data().chunks(36).enumerate() {
            assert!(chunk.iter().all(|&v| v == b.data()[c]));
        }
    }

    #[test]
    fn hand_dot_product() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 5.0);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = random(&[1, 2, 4, 4], 3);
        let k = random(&[1, 3, 3, 3], 4);
        assert!(matches!(
            conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 1),
            Err(crate::Error::Shape(_))
        ));
        let gy = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(conv2d_backward(&x, &k, &gy, 1, 1).is_err());
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let x = random(&[1, 1, 2, 2], 5);
        let k = random(&[1, 1, 5, 5], 6);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 1).is_err());
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        for &(stride, pad, kh) in &[(1, 1, 3), (2, 0, 3), (1, 2, 5), (2, 1, 2), (3, 0, 1)] {
            let x = random(&[2, 3, 9, 7], 10 + stride as u64);
            let k = random(&[4, 3, kh, kh], 20 + pad as u64);
            let b = random(&[4], 30);
            let fast = conv2d_forward(&x, &k, &b, stride, pad).unwrap();
            let slow = naive_conv(&x, &k, &b, stride, pad);
            assert_eq!(fast.len(), slow.len());
            for (f, s) in fast.data().iter().zip(&slow) {
                assert!((*f as f64 - s).abs() <= 1e-6 * (1.0 + s.abs()), "{f} vs {s}");
            }
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let x = random(&[1, 2, 5, 5], 7);
        let k = random(&[3, 2, 3, 3], 8);
        let gy = Tensor::zeros(&[1, 3, 5, 5]);
        let g = conv2d_backward(&x, &k, &gy, 1, 1).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_gradient() {
        let x = random(&[2, 1, 4, 4], 9);
        let gy = random(&[2, 1, 4, 4], 10);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let g = conv2d_backward(&x, &k, &gy, 1, 0).unwrap();
        assert_eq!(g.input, gy);
    }

    /// Central differences in f64 on `sum(w ⊙ conv(x))` for a random weighting `w`.
    #[test]
    fn conv_gradients_match_finite_differences() {
        let x = random(&[1, 1, 4, 4], 11);
        let k = random(&[1, 1, 3, 3], 12);
        let b = random(&[1], 13);
        let weights = random(&[1, 1, 4, 4], 14);
        let objective = |x: &Tensor, k: &Tensor, b: &Tensor| -> f64 {
            naive_conv(x, k, b, 1, 1)
                .iter()
                .zip(weights.data())
                .map(|(y, w)| y * *w as f64)
                .sum()
        };
        let g = conv2d_backward(&x, &k, &weights, 1, 1).unwrap();
        let h = 1e-3f32;
        let check = |analytic: &[f32], base: &Tensor, eval: &dyn Fn(&Tensor) -> f64| {
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus.data_mut()[i] += h;
                let mut minus = base.clone();
                minus.data_mut()[i] -= h;
                let step = plus.data()[i] as f64 - minus.data()[i] as f64;
                let numeric = (eval(&plus) - eval(&minus)) / step;
                let rel = (analytic[i] as f64 - numeric).abs() / numeric.abs().max(1e-3);
                assert!(rel < 1e-4, "element {i}: analytic {} numeric {numeric}", analytic[i]);
            }
        };
        check(g.input.data(), &x, &|t| objective(t, &k, &b));
        check(g.kernel.data(), &k, &|t| objective(&x, t, &b));
        check(g.bias.data(), &b, &|t| objective(&x, &k, t));
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let x = random(&[1, 2, 6, 6], 15);
        let k = random(&[2, 2, 3, 3], 16);
        let b = Tensor::zeros(&[2]);
        let y = conv2d_forward(&x, &k, &b, 1, 1).unwrap();
        let y_scaled_x = conv2d_forward(&x.scale(2.0), &k, &b, 1, 1).unwrap();
        let y_scaled_k = conv2d_forward(&x, &k.scale(2.0), &b, 1, 1).unwrap();
        for ((a, bx), bk) in y.data().iter().zip(y_scaled_x.data()).zip(y_scaled_k.data()) {
            assert!((2.0 * a - bx).abs() < 1e-5);
            assert!((2.0 * a - bk).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_is_deterministic() {
        let x = random(&[2, 3, 8, 8], 17);
        let k = random(&[4, 3, 3, 3], 18);
        let b = random(&[4], 19);
        let a = conv2d_forward(&x, &k, &b, 1, 1).unwrap();
        let c = conv2d_forward(&x, &k, &b, 1, 1).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let eq = Tensor::full(&[1, 5, 2, 2], 0.7);
        let p = softmax_channels(&eq).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-7));

        let two = Tensor::new(vec![1, 2, 1, 1], vec![0.0, 2f32.ln()]).unwrap();
        let p = softmax_channels(&two).unwrap();
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-7);
        assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn softmax_handles_large_logits() {
        let x = Tensor::new(vec![1, 3, 1, 1], vec![1000.0, 999.0, -1000.0]).unwrap();
        let p = softmax_channels(&x).unwrap();
        assert!(p.is_finite());
        assert!((p.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-20.0f32..20.0, 4 * 3 * 2),
            shift in -50.0f32..50.0,
        ) {
            let x = Tensor::new(vec![1, 4, 3, 2], logits).unwrap();
            let p = softmax_channels(&x).unwrap();
            for px in 0..6 {
                let sum: f64 = (0..4).map(|c| p.data()[c * 6 + px] as f64).sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
            // Shift only one pixel's channels.
            let mut shifted = x.clone();
            for c in 0..4 {
                shifted.data_mut()[c * 6 + 2] += shift;
            }
            let q = softmax_channels(&shifted).unwrap();
            for (a, b) in p.data().iter().zip(q.data()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }

        #[test]
        fn upsample_then_downsample_is_identity(data in prop::collection::vec(-5.0f32..5.0, 2 * 3 * 3)) {
            let x = Tensor::new(vec![1, 2, 3, 3], data).unwrap();
            let back = downsample2x(&upsample2x(&x).unwrap()).unwrap();
            prop_assert_eq!(back, x);
        }
    }

    #[test]
    fn relu_values_and_gradient_convention() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        let mut x = random(&[1, 2, 4, 4], 20);
        // Keep every element out of the kink's neighbourhood.
        for v in x.data_mut() {
            if v.abs() < 0.01 {
                *v += 0.05;
            }
        }
        let w = random(&[1, 2, 4, 4], 21);
        let g = relu_backward(&x, &w).unwrap();
        let h = 1e-3f32;
        for i in 0..x.len() {
            let f = |d: f32| -> f64 { (x.data()[i] + d).max(0.0) as f64 * w.data()[i] as f64 };
            let numeric = (f(h) - f(-h)) / (2.0 * h as f64);
            let rel = (g.data()[i] as f64 - numeric).abs() / numeric.abs().max(1e-3);
            assert!(rel < 1e-4);
        }
    }

    #[test]
    fn pooling_constants_and_max() {
        let c = Tensor::full(&[1, 2, 4, 4], 3.0);
        assert_eq!(downsample2x(&c).unwrap(), Tensor::full(&[1, 2, 2, 2], 3.0));
        assert_eq!(upsample2x(&c).unwrap(), Tensor::full(&[1, 2, 8, 8], 3.0));
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(downsample2x(&x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn odd_dims_rejected_for_downsample() {
        let x = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(downsample2x(&x).is_err());
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = random(&[2, 3, 3, 4], 22);
        let y = random(&[2, 3, 6, 8], 23);
        let lhs: f64 = upsample2x(&x)
            .unwrap()
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(upsample2x_backward(&y).unwrap().data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-5);
    }

    #[test]
    fn downsample_gradient_matches_finite_differences() {
        // Distinct values keep every window's argmax stable under ±h.
        let x = random(&[1, 2, 4, 4], 24);
        let w = random(&[1, 2, 2, 2], 25);
        let g = downsample2x_backward(&x, &w).unwrap();
        let objective = |t: &Tensor| -> f64 {
            downsample2x(t)
                .unwrap()
                .data()
                .iter()
                .zip(w.data())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };
        let h = 1e-3f32;
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let step = plus.data()[i] as f64 - minus.data()[i] as f64;
            let numeric = (objective(&plus) - objective(&minus)) / step;
            assert!((g.data()[i] as f64 - numeric).abs() <= 1e-4 * numeric.abs().max(1.0));
        }
    }

    #[test]
    fn concat_and_split_round_trip() {
        let a = random(&[2, 3, 2, 2], 26);
        let b = random(&[2, 1, 2, 2], 27);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        let (a2, b2) = split_channels(&c, 3).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
