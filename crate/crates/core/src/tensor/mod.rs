//! Rank-2 `[channels x time]` tensors, the causal convolution kernels the
//! model is built from, a reverse-mode tape and an Adam optimizer.
//!
//! The kernels in this file are shared by the plain forward path and the
//! tape so both routes produce bit-identical values.

mod adam;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use tape::{ConvVars, Gradients, Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn filled(channels: usize, len: usize, value: f64) -> Self {
        Self {
            channels,
            len,
            data: vec![value; channels * len],
        }
    }

    /// Row-major `[channels x len]` data.
    pub fn from_vec(channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || len == 0 {
            return Err(Error::Shape(format!(
                "tensor dims must be >= 1, got [{channels} x {len}]"
            )));
        }
        if data.len() != channels * len {
            return Err(Error::Shape(format!(
                "{} values cannot fill [{channels} x {len}]",
                data.len()
            )));
        }
        Ok(Self { channels, len, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let len = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != len) {
            return Err(Error::Shape("rows have differing lengths".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::from_vec(rows.len(), len, data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            channels: 1,
            len: 1,
            data: vec![value],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.len)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.len + t]
    }

    pub fn set(&mut self, c: usize, t: usize, v: f64) {
        self.data[c * self.len + t] = v;
    }

    /// The single value of a `[1 x 1]` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "expected a scalar, got [{} x {}]",
                self.channels, self.len
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Columns `[start, end)` of every channel.
    pub fn slice_time(&self, start: usize, end: usize) -> Tensor {
        let len = end - start;
        let mut data = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            data.extend_from_slice(&self.row(c)[start..end]);
        }
        Tensor {
            channels: self.channels,
            len,
            data,
        }
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{op}: [{} x {}] vs [{} x {}]",
                self.channels, self.len, other.channels, other.len
            )));
        }
        Ok(())
    }
}

/// Dilated causal 1-D convolution parameters.
///
/// `weight` is stored as `[c_out x (c_in * k)]`, tap `j` of input channel
/// `i` at column `i * k + j`. Tap `k - 1` multiplies the current sample,
/// tap `j` the sample `(k - 1 - j) * dilation` steps back.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weight: Tensor,
    /// `[c_out x 1]`
    pub bias: Tensor,
    pub k: usize,
    pub dilation: usize,
}

impl ConvKernel {
    pub fn zeros(c_in: usize, c_out: usize, k: usize, dilation: usize) -> Self {
        assert!(k >= 1 && dilation >= 1, "kernel size and dilation must be >= 1");
        Self {
            weight: Tensor::zeros(c_out, c_in * k),
            bias: Tensor::zeros(c_out, 1),
            k,
            dilation,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.len() / self.k
    }

    pub fn c_out(&self) -> usize {
        self.weight.channels()
    }

    pub fn weight_at(&self, c_out: usize, c_in: usize, tap: usize) -> f64 {
        self.weight.get(c_out, c_in * self.k + tap)
    }

    pub fn set_weight(&mut self, c_out: usize, c_in: usize, tap: usize, v: f64) {
        let k = self.k;
        self.weight.set(c_out, c_in * k + tap, v);
    }

    /// Number of past samples this layer reads beyond the current one.
    pub fn causal_pad(&self) -> usize {
        (self.k - 1) * self.dilation
    }
}

/// `y[c, t] = bias[c] + sum_{i, j} w[c, i, j] * x[i, t - (k - 1 - j) * d]`,
/// with `x` zero for negative time.
pub fn conv1d_causal(x: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    conv_forward(x, &kernel.weight, &kernel.bias, kernel.k, kernel.dilation)
}

pub(crate) fn conv_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, k: usize, dilation: usize) -> Result<Tensor> {
    let c_in = weight.len() / k;
    if x.channels() != c_in || weight.len() != c_in * k {
        return Err(Error::Shape(format!(
            "conv expects {c_in} input channels, got {}",
            x.channels()
        )));
    }
    if bias.shape() != (weight.channels(), 1) {
        return Err(Error::Shape("conv bias must be [c_out x 1]".into()));
    }
    let padded = Padded::left(x, (k - 1) * dilation);
    let mut y = Tensor::zeros(weight.channels(), x.len());
    conv_core(&padded, weight.data(), bias.data(), k, dilation, &mut y);
    Ok(y)
}

/// Accumulates input, weight and bias gradients of `conv_forward`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &Tensor,
    weight: &Tensor,
    k: usize,
    dilation: usize,
    grad_out: &Tensor,
    grad_x: Option<&mut Tensor>,
    grad_w: Option<&mut Tensor>,
    grad_b: Option<&mut Tensor>,
) {
    let c_in = weight.len() / k;
    let c_out = weight.channels();
    let pad = (k - 1) * dilation;
    if let Some(gx) = grad_x {
        // gx[i][s] = sum_{c, j} w[c][i][k-1-j] * g[c][s + j*d]: the same
        // kernel over a right-padded gradient with a transposed, tap-reversed weight
        let mut flipped = vec![0.0; c_in * c_out * k];
        for c in 0..c_out {
            let w_row = weight.row(c);
            for i in 0..c_in {
                for j in 0..k {
                    flipped[i * c_out * k + c * k + (k - 1 - j)] = w_row[i * k + j];
                }
            }
        }
        let g_padded = Padded::right(grad_out, pad);
        let mut contrib = Tensor::zeros(c_in, x.len());
        conv_core(&g_padded, &flipped, &vec![0.0; c_in], k, dilation, &mut contrib);
        for (a, b) in gx.data_mut().iter_mut().zip(contrib.data()) {
            *a += b;
        }
    }
    if let Some(gw) = grad_w {
        weight_grad(&Padded::left(x, pad), grad_out, k, dilation, gw);
    }
    if let Some(gb) = grad_b {
        for c in 0..c_out {
            gb.data[c] += sum(grad_out.row(c));
        }
    }
}

const ROW_BLOCK: usize = 2;
const TIME_BLOCK: usize = 8;

/// Channel rows copied into zero-padded storage so every kernel tap can
/// read a full time block without bounds juggling.
struct Padded {
    channels: usize,
    stride: usize,
    data: Vec<f64>,
}

impl Padded {
    fn with_offset(x: &Tensor, pad: usize, offset: usize) -> Self {
        let blocks = x.len().div_ceil(TIME_BLOCK);
        let stride = blocks * TIME_BLOCK + pad;
        let mut data = vec![0.0; x.channels() * stride];
        for c in 0..x.channels() {
            data[c * stride + offset..c * stride + offset + x.len()].copy_from_slice(x.row(c));
        }
        Self {
            channels: x.channels(),
            stride,
            data,
        }
    }

    /// `pad` zeros before time 0.
    fn left(x: &Tensor, pad: usize) -> Self {
        Self::with_offset(x, pad, pad)
    }

    /// `pad` zeros after the last sample.
    fn right(x: &Tensor, pad: usize) -> Self {
        Self::with_offset(x, pad, 0)
    }

    /// Start of tap `(i, j)` in `data`, for every input channel and tap.
    fn tap_offsets(&self, k: usize, d: usize) -> Vec<usize> {
        (0..self.channels)
            .flat_map(|i| (0..k).map(move |j| i * self.stride + j * d))
            .collect()
    }
}

/// `y[c][t] = bias[c] + sum_{i, j} w[c][i * k + j] * xp[i][t + j * d]`,
/// accumulated per output in (bias, i, j) order. The AVX2 path uses wider
/// row blocks but the same per-output order, so both paths agree bit for bit.
fn conv_core(xp: &Padded, w: &[f64], bias: &[f64], k: usize, d: usize, y: &mut Tensor) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just checked.
        unsafe { conv_core_avx2(xp, w, bias, k, d, y) };
        return;
    }
    conv_core_impl::<ROW_BLOCK>(xp, w, bias, k, d, y);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn conv_core_avx2(xp: &Padded, w: &[f64], bias: &[f64], k: usize, d: usize, y: &mut Tensor) {
    conv_core_impl::<2>(xp, w, bias, k, d, y);
}

#[inline(always)]
fn conv_core_impl<const RB: usize>(xp: &Padded, w: &[f64], bias: &[f64], k: usize, d: usize, y: &mut Tensor) {
    let c_out = y.channels();
    let taps = xp.channels * k;
    let offsets = xp.tap_offsets(k, d);
    let mut packed = vec![0.0; taps * RB];
    let mut c0 = 0;
    while c0 + RB <= c_out {
        for (tap, chunk) in packed.chunks_exact_mut(RB).enumerate() {
            for (r, v) in chunk.iter_mut().enumerate() {
                *v = w[(c0 + r) * taps + tap];
            }
        }
        conv_rows::<RB>(xp, &offsets, &packed, &bias[c0..c0 + RB], c0, y);
        c0 += RB;
    }
    while c0 < c_out {
        let row = &w[c0 * taps..(c0 + 1) * taps];
        conv_rows::<1>(xp, &offsets, row, &bias[c0..c0 + 1], c0, y);
        c0 += 1;
    }
}

#[inline(always)]
fn conv_rows<const R: usize>(xp: &Padded, offsets: &[usize], packed: &[f64], bias: &[f64], c0: usize, y: &mut Tensor) {
    let t_len = y.len();
    for t0 in (0..t_len).step_by(TIME_BLOCK) {
        let mut acc = [[0.0f64; TIME_BLOCK]; R];
        for r in 0..R {
            acc[r] = [bias[r]; TIME_BLOCK];
        }
        for (wv, &off) in packed.chunks_exact(R).zip(offsets) {
            let xs: &[f64; TIME_BLOCK] = xp.data[off + t0..off + t0 + TIME_BLOCK]
                .try_into()
                .expect("padded block");
            for r in 0..R {
                for q in 0..TIME_BLOCK {
                    acc[r][q] += wv[r] * xs[q];
                }
            }
        }
        let n = TIME_BLOCK.min(t_len - t0);
        for (r, row) in acc.iter().enumerate() {
            y.row_mut(c0 + r)[t0..t0 + n].copy_from_slice(&row[..n]);
        }
    }
}

/// `gw[c][i * k + j] += sum_t g[c][t] * xp[i][t + j * d]`.
fn weight_grad(xp: &Padded, g: &Tensor, k: usize, d: usize, gw: &mut Tensor) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just checked.
        unsafe { weight_grad_avx2(xp, g, k, d, gw) };
        return;
    }
    weight_grad_impl::<ROW_BLOCK>(xp, g, k, d, gw);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn weight_grad_avx2(xp: &Padded, g: &Tensor, k: usize, d: usize, gw: &mut Tensor) {
    weight_grad_impl::<2>(xp, g, k, d, gw);
}

#[inline(always)]
fn weight_grad_impl<const RB: usize>(xp: &Padded, g: &Tensor, k: usize, d: usize, gw: &mut Tensor) {
    let c_out = g.channels();
    let offsets = xp.tap_offsets(k, d);
    let mut c0 = 0;
    while c0 + RB <= c_out {
        weight_grad_rows::<RB>(xp, &offsets, g, c0, gw);
        c0 += RB;
    }
    while c0 < c_out {
        weight_grad_rows::<1>(xp, &offsets, g, c0, gw);
        c0 += 1;
    }
}

#[inline(always)]
fn weight_grad_rows<const R: usize>(xp: &Padded, offsets: &[usize], g: &Tensor, c0: usize, gw: &mut Tensor) {
    let t_len = g.len();
    let full = t_len / TIME_BLOCK * TIME_BLOCK;
    let g_rows: [&[f64]; R] = std::array::from_fn(|r| g.row(c0 + r));
    for (tap, &off) in offsets.iter().enumerate() {
        let xs = &xp.data[off..off + t_len];
        let mut acc = [[0.0f64; TIME_BLOCK]; R];
        for t0 in (0..full).step_by(TIME_BLOCK) {
            let xb: &[f64; TIME_BLOCK] = xs[t0..t0 + TIME_BLOCK].try_into().expect("block");
            for r in 0..R {
                let gb: &[f64; TIME_BLOCK] = g_rows[r][t0..t0 + TIME_BLOCK].try_into().expect("block");
                for q in 0..TIME_BLOCK {
                    acc[r][q] += gb[q] * xb[q];
                }
            }
        }
        for r in 0..R {
            let mut total = lane_sum(&acc[r]);
            for t in full..t_len {
                total += g_rows[r][t] * xs[t];
            }
            gw.row_mut(c0 + r)[tap] += total;
        }
    }
}

#[inline]
fn lane_sum(v: &[f64; TIME_BLOCK]) -> f64 {
    ((v[0] + v[4]) + (v[1] + v[5])) + ((v[2] + v[6]) + (v[3] + v[7]))
}

/// `tanh(x[0..C]) * sigmoid(x[C..2C])`.
pub fn gated_activation(x: &Tensor) -> Result<Tensor> {
    if !x.channels().is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "gated activation needs an even channel count, got {}",
            x.channels()
        )));
    }
    let half = x.channels() / 2;
    let n = half * x.len();
    let (filter, gate) = x.data.split_at(n);
    let data = filter.iter().zip(gate).map(|(&f, &g)| f.tanh() * sigmoid(g)).collect();
    Ok(Tensor {
        channels: half,
        len: x.len(),
        data,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        channels: x.channels,
        len: x.len,
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks = a.chunks_exact(4);
    for x in &mut chunks {
        acc[0] += x[0];
        acc[1] += x[1];
        acc[2] += x[2];
        acc[3] += x[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + chunks.remainder().iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kernel_1ch(taps: &[f64], dilation: usize) -> ConvKernel {
        let mut kern = ConvKernel::zeros(1, 1, taps.len(), dilation);
        for (j, &w) in taps.iter().enumerate() {
            kern.set_weight(0, 0, j, w);
        }
        kern
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::from_rows(&[v]).unwrap()
    }

    #[test]
    fn identity_pointwise_conv() {
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, 4.0]]).unwrap();
        let mut kern = ConvKernel::zeros(2, 2, 1, 1);
        kern.set_weight(0, 0, 0, 1.0);
        kern.set_weight(1, 1, 0, 1.0);
        assert_eq!(conv1d_causal(&x, &kern).unwrap(), x);
    }

    #[test]
    fn two_tap_conv() {
        let y = conv1d_causal(&row(&[1.0, 2.0, 3.0]), &kernel_1ch(&[1.0, 1.0], 1)).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn dilated_two_tap_conv() {
        let y = conv1d_causal(&row(&[1.0, 2.0, 3.0, 4.0]), &kernel_1ch(&[1.0, 1.0], 2)).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn tap_order_is_oldest_first() {
        let y = conv1d_causal(&row(&[1.0, 10.0, 100.0]), &kernel_1ch(&[2.0, 0.0], 1)).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 20.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let kern = ConvKernel::zeros(3, 1, 2, 1);
        assert!(matches!(
            conv1d_causal(&Tensor::zeros(2, 5), &kern),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gated_zero_and_saturation() {
        let z = gated_activation(&Tensor::zeros(4, 3)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let sat = gated_activation(&Tensor::from_rows(&[[1e6], [1e6]]).unwrap()).unwrap();
        assert!((sat.data()[0] - 1.0).abs() < 1e-6);
        assert!(matches!(gated_activation(&Tensor::zeros(3, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn from_vec_validates() {
        assert!(Tensor::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(0, 2, vec![]).is_err());
        assert!(Tensor::scalar(1.0).item().is_ok());
        assert!(Tensor::zeros(1, 2).item().is_err());
    }

    #[test]
    fn lane_sum_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        assert!((sum(&a) - a.iter().sum::<f64>()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gated_output_bounded(v in prop::collection::vec(-50.0f64..50.0, 2..64)) {
            let n = v.len() / 2 * 2;
            let x = Tensor::from_vec(2, n / 2, v[..n].to_vec()).unwrap();
            let y = gated_activation(&x).unwrap();
            prop_assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn conv_is_causal(
            seed in 0u64..1000,
            k in 1usize..4,
            dilation in 1usize..5,
            t_cut in 0usize..40,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut kern = ConvKernel::zeros(2, 3, k, dilation);
            kern.weight.data_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
            kern.bias.data_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
            let data: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::from_vec(2, 40, data).unwrap();
            let mut x2 = x.clone();
            for c in 0..2 {
                for t in t_cut + 1..40 {
                    x2.set(c, t, rng.random_range(-5.0..5.0));
                }
            }
            let (y, y2) = (conv1d_causal(&x, &kern).unwrap(), conv1d_causal(&x2, &kern).unwrap());
            for c in 0..3 {
                prop_assert_eq!(&y.row(c)[..=t_cut], &y2.row(c)[..=t_cut]);
            }
        }

        #[test]
        fn conv_is_shift_equivariant(seed in 0u64..1000, shift in 1usize..10) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut kern = ConvKernel::zeros(1, 1, 3, 2);
            kern.weight.data_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
            let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut delayed = vec![0.0; shift];
            delayed.extend_from_slice(&x);
            let y = conv1d_causal(&row(&x), &kern).unwrap();
            let yd = conv1d_causal(&row(&delayed), &kern).unwrap();
            prop_assert_eq!(&yd.data()[shift..], y.data());
        }
    }
}
