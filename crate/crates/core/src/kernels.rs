//! Forward and backward kernels on plain tensors.
//!
//! Convolutions lower to im2col/col2im plus a single gemm per sample. Every
//! reduction runs in a fixed order, so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stride and zero-padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvGeom { stride, padding }
    }

    /// Output extent of a convolution over `len` input positions.
    pub fn conv_out(&self, len: usize, kernel: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (self.stride > 0 && len > 0 && padded >= kernel)
            .then(|| (padded - kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution over `len` input positions.
    pub fn conv_transpose_out(&self, len: usize, kernel: usize) -> Option<usize> {
        let full = len.checked_sub(1)? * self.stride + kernel;
        (self.stride > 0 && full > 2 * self.padding).then(|| full - 2 * self.padding)
    }
}

/// Geometry shared by im2col and col2im: an image of `channels×height×width`
/// scanned by a `kh×kw` window onto an `out_h×out_w` grid.
#[derive(Clone, Copy, Debug)]
struct Patch {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    geom: ConvGeom,
}

impl Patch {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source column for output column `x` at kernel offset `kj`, if inside the image.
    #[inline]
    fn src(&self, out: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.geom.stride + k) as isize - self.geom.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<T: Scalar>(img: &[T], p: &Patch, cols: &mut [T]) {
    let plane = p.cols();
    for c in 0..p.channels {
        let src = &img[c * p.height * p.width..(c + 1) * p.height * p.width];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for y in 0..p.out_h {
                    let line = &mut dst[y * p.out_w..(y + 1) * p.out_w];
                    match p.src(y, ki, p.height) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src_row = &src[iy * p.width..(iy + 1) * p.width];
                            for (x, v) in line.iter_mut().enumerate() {
                                *v = match p.src(x, kj, p.width) {
                                    Some(ix) => src_row[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto the image, accumulating.
fn col2im<T: Scalar>(cols: &[T], p: &Patch, img: &mut [T]) {
    let plane = p.cols();
    for c in 0..p.channels {
        let dst = &mut img[c * p.height * p.width..(c + 1) * p.height * p.width];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for y in 0..p.out_h {
                    let Some(iy) = p.src(y, ki, p.height) else {
                        continue;
                    };
                    let dst_row = &mut dst[iy * p.width..(iy + 1) * p.width];
                    for (x, &v) in src[y * p.out_w..(y + 1) * p.out_w].iter().enumerate() {
                        if let Some(ix) = p.src(x, kj, p.width) {
                            dst_row[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(
    op: &'static str,
    bias: Option<&Tensor<T>>,
    channels: usize,
) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?}, expected [{channels}]", b.shape()),
            ));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

/// Sum of `dy` over batch and spatial axes, per channel.
fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = dy.dims4("bias").expect("rank checked by caller");
    let plane = h * w;
    let mut g = vec![T::zero(); c];
    for s in 0..n {
        for (ch, acc) in g.iter_mut().enumerate() {
            let off = (s * c + ch) * plane;
            *acc += dy.data()[off..off + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::from_vec(&[c], g).unwrap()
}

struct ConvShapes {
    n: usize,
    patch: Patch,
    out_channels: usize,
}

fn conv_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, geom: ConvGeom) -> Result<ConvShapes> {
    const OP: &str = "conv2d";
    let [n, c, h, wd] = x.dims4(OP)?;
    let [o, wc, kh, kw] = w.dims4(OP)?;
    if wc != c {
        return Err(Error::shape(
            OP,
            format!("input channels (axis 1) = {c}, weight in-channels (axis 1) = {wc}"),
        ));
    }
    let out_h = geom.conv_out(h, kh).ok_or_else(|| {
        Error::shape(
            OP,
            format!(
                "height {h} with padding {} too small for kernel {kh}",
                geom.padding
            ),
        )
    })?;
    let out_w = geom.conv_out(wd, kw).ok_or_else(|| {
        Error::shape(
            OP,
            format!(
                "width {wd} with padding {} too small for kernel {kw}",
                geom.padding
            ),
        )
    })?;
    Ok(ConvShapes {
        n,
        out_channels: o,
        patch: Patch {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            out_h,
            out_w,
            geom,
        },
    })
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let s = conv_shapes(x, w, geom)?;
    check_bias("conv2d", b, s.out_channels)?;
    let p = &s.patch;
    let (k, plane) = (p.rows(), p.cols());
    let in_len = p.channels * p.height * p.width;
    let out_len = s.out_channels * plane;
    let mut cols = vec![T::zero(); k * plane];
    let mut out = vec![T::zero(); s.n * out_len];
    for i in 0..s.n {
        im2col(&x.data()[i * in_len..(i + 1) * in_len], p, &mut cols);
        let dst = &mut out[i * out_len..(i + 1) * out_len];
        T::gemm(
            s.out_channels,
            k,
            plane,
            T::one(),
            w.data(),
            (k as isize, 1),
            &cols,
            (plane as isize, 1),
            T::zero(),
            dst,
            (plane as isize, 1),
        );
        if let Some(b) = b {
            add_bias(dst, b.data(), plane);
        }
    }
    Tensor::from_vec(&[s.n, s.out_channels, p.out_h, p.out_w], out)
}

/// Input, weight and (if present) bias gradients of a convolution.
pub type ConvGrads<T> = (Tensor<T>, Tensor<T>, Option<Tensor<T>>);

/// Gradients of [`conv2d`] w.r.t. input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    dy: &Tensor<T>,
    geom: ConvGeom,
) -> Result<ConvGrads<T>> {
    let s = conv_shapes(x, w, geom)?;
    let p = &s.patch;
    let (k, plane) = (p.rows(), p.cols());
    if dy.shape() != [s.n, s.out_channels, p.out_h, p.out_w] {
        return Err(Error::shape(
            "conv2d backward",
            format!("output grad shape {:?}", dy.shape()),
        ));
    }
    let in_len = p.channels * p.height * p.width;
    let out_len = s.out_channels * plane;
    let mut cols = vec![T::zero(); k * plane];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    for i in 0..s.n {
        let dy_i = &dy.data()[i * out_len..(i + 1) * out_len];
        im2col(&x.data()[i * in_len..(i + 1) * in_len], p, &mut cols);
        // dW += dY · colsᵀ
        T::gemm(
            s.out_channels,
            plane,
            k,
            T::one(),
            dy_i,
            (plane as isize, 1),
            &cols,
            (1, plane as isize),
            T::one(),
            dw.data_mut(),
            (k as isize, 1),
        );
        // dcols = Wᵀ · dY, reusing the buffer
        T::gemm(
            k,
            s.out_channels,
            plane,
            T::one(),
            w.data(),
            (1, k as isize),
            dy_i,
            (plane as isize, 1),
            T::zero(),
            &mut cols,
            (plane as isize, 1),
        );
        col2im(&cols, p, &mut dx.data_mut()[i * in_len..(i + 1) * in_len]);
    }
    let db = with_bias.then(|| bias_grad(dy));
    Ok((dx, dw, db))
}

struct ConvTShapes {
    n: usize,
    in_channels: usize,
    /// Geometry of the output image as seen by the adjoint convolution.
    patch: Patch,
}

fn conv_transpose_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: ConvGeom,
) -> Result<ConvTShapes> {
    const OP: &str = "conv_transpose2d";
    let [n, c, h, wd] = x.dims4(OP)?;
    let [wc, o, kh, kw] = w.dims4(OP)?;
    if wc != c {
        return Err(Error::shape(
            OP,
            format!("input channels (axis 1) = {c}, weight in-channels (axis 0) = {wc}"),
        ));
    }
    let out_h = geom.conv_transpose_out(h, kh).ok_or_else(|| {
        Error::shape(
            OP,
            format!("height {h} yields empty output for kernel {kh}"),
        )
    })?;
    let out_w = geom.conv_transpose_out(wd, kw).ok_or_else(|| {
        Error::shape(
            OP,
            format!("width {wd} yields empty output for kernel {kw}"),
        )
    })?;
    Ok(ConvTShapes {
        n,
        in_channels: c,
        patch: Patch {
            channels: o,
            height: out_h,
            width: out_w,
            kh,
            kw,
            out_h: h,
            out_w: wd,
            geom,
        },
    })
}

/// Transposed convolution: the adjoint of [`conv2d`] for a weight laid out
/// as (in, out, kh, kw) from the transposed operator's point of view.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let s = conv_transpose_shapes(x, w, geom)?;
    let p = &s.patch;
    check_bias("conv_transpose2d", b, p.channels)?;
    let (k, plane) = (p.rows(), p.cols());
    let in_len = s.in_channels * plane;
    let out_plane = p.height * p.width;
    let out_len = p.channels * out_plane;
    let mut cols = vec![T::zero(); k * plane];
    let mut out = vec![T::zero(); s.n * out_len];
    for i in 0..s.n {
        T::gemm(
            k,
            s.in_channels,
            plane,
            T::one(),
            w.data(),
            (1, k as isize),
            &x.data()[i * in_len..(i + 1) * in_len],
            (plane as isize, 1),
            T::zero(),
            &mut cols,
            (plane as isize, 1),
        );
        let dst = &mut out[i * out_len..(i + 1) * out_len];
        col2im(&cols, p, dst);
        if let Some(b) = b {
            add_bias(dst, b.data(), out_plane);
        }
    }
    Tensor::from_vec(&[s.n, p.channels, p.height, p.width], out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    dy: &Tensor<T>,
    geom: ConvGeom,
) -> Result<ConvGrads<T>> {
    let s = conv_transpose_shapes(x, w, geom)?;
    let p = &s.patch;
    if dy.shape() != [s.n, p.channels, p.height, p.width] {
        return Err(Error::shape(
            "conv_transpose2d backward",
            format!("output grad shape {:?}", dy.shape()),
        ));
    }
    let (k, plane) = (p.rows(), p.cols());
    let in_len = s.in_channels * plane;
    let out_len = p.channels * p.height * p.width;
    let mut cols = vec![T::zero(); k * plane];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    for i in 0..s.n {
        im2col(&dy.data()[i * out_len..(i + 1) * out_len], p, &mut cols);
        T::gemm(
            s.in_channels,
            k,
            plane,
            T::one(),
            w.data(),
            (k as isize, 1),
            &cols,
            (plane as isize, 1),
            T::zero(),
            &mut dx.data_mut()[i * in_len..(i + 1) * in_len],
            (plane as isize, 1),
        );
        T::gemm(
            s.in_channels,
            plane,
            k,
            T::one(),
            &x.data()[i * in_len..(i + 1) * in_len],
            (plane as isize, 1),
            &cols,
            (1, plane as isize),
            T::one(),
            dw.data_mut(),
            (k as isize, 1),
        );
    }
    let db = with_bias.then(|| bias_grad(dy));
    Ok((dx, dw, db))
}

/// Per-channel statistics gathered by a train-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    /// Elements per channel, needed for the unbiased running-variance update.
    pub count: usize,
}

/// Where normalization statistics come from.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    Batch,
    Running { mean: &'a [T], var: &'a [T] },
}

pub(crate) struct NormOutput<T> {
    pub y: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub stats: Option<BatchStats<T>>,
}

fn for_channel(shape: [usize; 4], ch: usize, mut f: impl FnMut(std::ops::Range<usize>)) {
    let [n, c, h, w] = shape;
    let plane = h * w;
    for s in 0..n {
        let off = (s * c + ch) * plane;
        f(off..off + plane);
    }
}

pub(crate) fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: NormStats<'_, T>,
    eps: T,
) -> Result<NormOutput<T>> {
    const OP: &str = "batchnorm2d";
    let dims = x.dims4(OP)?;
    let [n, c, h, w] = dims;
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [c] {
            return Err(Error::shape(
                OP,
                format!(
                    "{name} shape {:?}, expected [{c}] (channel axis 1)",
                    t.shape()
                ),
            ));
        }
    }
    let count = n * h * w;
    let data = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match stats {
        NormStats::Batch => {
            if count < 2 {
                return Err(Error::DegenerateBatch { channel: 0, count });
            }
            let cnt = T::from_usize(count).unwrap();
            for ch in 0..c {
                let mut sum = T::zero();
                for_channel(dims, ch, |r| sum += data[r].iter().copied().sum::<T>());
                let mu = sum / cnt;
                let mut sq = T::zero();
                for_channel(dims, ch, |r| {
                    sq += data[r].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>()
                });
                mean[ch] = mu;
                var[ch] = sq / cnt;
            }
        }
        NormStats::Running { mean: rm, var: rv } => {
            if rm.len() != c || rv.len() != c {
                return Err(Error::shape(
                    OP,
                    format!("running statistics have {} entries, expected {c}", rm.len()),
                ));
            }
            mean.copy_from_slice(rm);
            var.copy_from_slice(rv);
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for ch in 0..c {
        let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
        for_channel(dims, ch, |r| {
            for i in r {
                let xh = (data[i] - mu) * is;
                xhat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + b;
            }
        });
    }
    let stats = matches!(stats, NormStats::Batch).then_some(BatchStats { mean, var, count });
    Ok(NormOutput {
        y,
        xhat,
        inv_std,
        stats,
    })
}

/// Gradients of batch normalization w.r.t. input, gamma and beta.
pub(crate) fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    xhat: &Tensor<T>,
    gamma: &Tensor<T>,
    inv_std: &[T],
    batch_stats: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let dims = dy
        .dims4("batchnorm2d backward")
        .expect("rank checked in forward");
    let [n, c, h, w] = dims;
    let cnt = T::from_usize(n * h * w).unwrap();
    let (g, xh) = (dy.data(), xhat.data());
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sdy, mut sdyx) = (T::zero(), T::zero());
        for_channel(dims, ch, |r| {
            for i in r {
                sdy += g[i];
                sdyx += g[i] * xh[i];
            }
        });
        dgamma[ch] = sdyx;
        dbeta[ch] = sdy;
        let scale = gamma.data()[ch] * inv_std[ch];
        for_channel(dims, ch, |r| {
            for i in r {
                dx.data_mut()[i] = if batch_stats {
                    scale / cnt * (cnt * g[i] - sdy - xh[i] * sdyx)
                } else {
                    scale * g[i]
                };
            }
        });
    }
    (
        dx,
        Tensor::from_vec(&[c], dgamma).unwrap(),
        Tensor::from_vec(&[c], dbeta).unwrap(),
    )
}

/// Leak values broadcast over the channel axis: one shared value or one per channel.
fn leak_for<T: Scalar>(leak: &Tensor<T>, channels: usize) -> Result<impl Fn(usize) -> T + '_> {
    let per_channel = match leak.len() {
        1 => false,
        l if l == channels => true,
        l => {
            return Err(Error::shape(
                "prelu",
                format!("leak has {l} values; expected 1 or {channels} (channel axis 1)"),
            ))
        }
    };
    Ok(move |ch: usize| {
        if per_channel {
            leak.data()[ch]
        } else {
            leak.data()[0]
        }
    })
}

fn channel_of(index: usize, shape: &[usize]) -> usize {
    match shape {
        [_, c, h, w] => (index / (h * w)) % c,
        _ => 0,
    }
}

pub(crate) fn prelu<T: Scalar>(x: &Tensor<T>, leak: &Tensor<T>) -> Result<Tensor<T>> {
    let channels = if x.rank() == 4 { x.shape()[1] } else { 1 };
    let lam = leak_for(leak, channels)?;
    let shape = x.shape();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let l = lam(channel_of(i, shape));
            if v < T::zero() {
                l * v
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

pub(crate) fn prelu_backward<T: Scalar>(
    x: &Tensor<T>,
    leak: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let channels = if x.rank() == 4 { x.shape()[1] } else { 1 };
    let lam = leak_for(leak, channels).expect("checked in forward");
    let mut dleak = vec![T::zero(); leak.len()];
    let mut dx = Tensor::zeros(x.shape());
    for (i, (&v, &g)) in x.data().iter().zip(dy.data()).enumerate() {
        let ch = channel_of(i, x.shape());
        if v >= T::zero() {
            dx.data_mut()[i] = g;
        } else {
            dx.data_mut()[i] = g * lam(ch);
            // ∂/∂λ of −λ·max(0,−x) = x for x < 0
            dleak[if leak.len() == 1 { 0 } else { ch }] += g * v;
        }
    }
    (dx, Tensor::from_vec(leak.shape(), dleak).unwrap())
}

/// Fixed elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Leaky rectifier with a fixed negative slope.
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub(crate) fn forward<T: Scalar>(self, x: T) -> T {
        // Saturating branches are pulled back inside the open range so that
        // downstream logs and inverses stay finite.
        let below_one = T::one() - T::epsilon();
        match self {
            Activation::Relu => x.clamp_nan(T::zero(), T::infinity()),
            Activation::LeakyRelu(s) => {
                if x >= T::zero() {
                    x
                } else {
                    T::lit(s) * x
                }
            }
            Activation::Tanh => x.tanh().clamp_nan(-below_one, below_one),
            Activation::Sigmoid => {
                let s = if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                };
                s.clamp_nan(T::min_positive_value(), below_one)
            }
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub(crate) fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(s) => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::lit(s)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub(crate) fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "channel_concat";
    let [n, ca, h, w] = a.dims4(OP)?;
    let [nb, cb, hb, wb] = b.dims4(OP)?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(
            OP,
            format!(
                "batch/height/width (axes 0,2,3) differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            ),
        ));
    }
    let (la, lb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        out.extend_from_slice(&a.data()[s * la..(s + 1) * la]);
        out.extend_from_slice(&b.data()[s * lb..(s + 1) * lb]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], out)
}

pub(crate) fn slice_channels<T: Scalar>(
    x: &Tensor<T>,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("slice_channels")?;
    if start + len > c {
        return Err(Error::shape(
            "slice_channels",
            format!("channels {start}..{} out of 0..{c}", start + len),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for s in 0..n {
        let off = (s * c + start) * plane;
        out.extend_from_slice(&x.data()[off..off + len * plane]);
    }
    Tensor::from_vec(&[n, len, h, w], out)
}

/// Writes `g` (a channel slice gradient) into the matching channels of a zero tensor.
pub(crate) fn unslice_channels<T: Scalar>(
    shape: &[usize],
    start: usize,
    g: &Tensor<T>,
) -> Tensor<T> {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let len = g.shape()[1];
    let mut out = Tensor::zeros(shape);
    for s in 0..n {
        let dst = (s * c + start) * plane;
        let src = s * len * plane;
        out.data_mut()[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
    }
    out
}

pub(crate) fn avg_pool2d<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("avg_pool2d")?;
    if k == 0 || h < k || w < k {
        return Err(Error::shape(
            "avg_pool2d",
            format!("window {k} does not fit {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / k, w / k);
    let norm = T::one() / T::from_usize(k * k).unwrap();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = T::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        acc += plane[(y * k + dy) * w + xo * k + dx];
                    }
                }
                dst[y * ow + xo] = acc * norm;
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub(crate) fn avg_pool2d_backward<T: Scalar>(
    in_shape: &[usize],
    k: usize,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (h / k, w / k);
    let norm = T::one() / T::from_usize(k * k).unwrap();
    let mut dx = Tensor::zeros(in_shape);
    for (plane, src) in dx
        .data_mut()
        .chunks_mut(h * w)
        .zip(dy.data().chunks(oh * ow))
    {
        for y in 0..oh {
            for xo in 0..ow {
                let g = src[y * ow + xo] * norm;
                for dy in 0..k {
                    for dx in 0..k {
                        plane[(y * k + dy) * w + xo * k + dx] = g;
                    }
                }
            }
        }
    }
    dx
}

/// Smooth-L1 (Huber with unit threshold) and its derivative.
#[inline]
pub(crate) fn smooth_l1<T: Scalar>(d: T) -> T {
    if d.abs() < T::one() {
        T::lit(0.5) * d * d
    } else {
        d.abs() - T::lit(0.5)
    }
}

#[inline]
pub(crate) fn smooth_l1_grad<T: Scalar>(d: T) -> T {
    if d.abs() < T::one() {
        d
    } else {
        d.signum()
    }
}
