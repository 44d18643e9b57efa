//! The network itself: parameter container, forward pass with cached
//! activations, and the matching backward pass.
//!
//! Convolutions run as im2col + small matrix products with the output
//! channel as the innermost axis, so the hot loops are contiguous
//! multiply-adds over independent outputs — exactly the shape the compiler
//! can turn into SIMD without reassociating any floating-point reduction.
//! Activations use a channel-last layout throughout for the same reason.

use crate::data::ImageU8;
use crate::rng::SeededRng;

/// Float scalar the network can run on. `f32` for training, `f64` for
/// numerical gradient checks.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + 'static
{
}

impl<T> Scalar for T where
    T: num_traits::Float
        + std::ops::AddAssign
        + std::ops::SubAssign
        + std::ops::MulAssign
        + std::fmt::Debug
        + std::fmt::Display
        + Default
        + 'static
{
}

#[inline]
pub(crate) fn t<T: Scalar>(x: f64) -> T {
    T::from(x).expect("f64 converts to any supported scalar")
}

pub const CONV1_OUT: usize = 16;
pub const CONV2_OUT: usize = 32;
pub const KERNEL: usize = 3;
pub const HIDDEN: usize = 64;

/// Derived layer dimensions for a square input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub side: usize,
    pub num_classes: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ShapeError {
    #[error("input side {0} is too small for two conv+pool stages")]
    SideTooSmall(usize),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
}

impl NetShape {
    pub fn new(side: usize, num_classes: usize) -> Result<Self, ShapeError> {
        let s = Self { side, num_classes };
        if num_classes < 2 {
            return Err(ShapeError::TooFewClasses(num_classes));
        }
        if side < 2 * KERNEL || s.pool2_side() == 0 {
            return Err(ShapeError::SideTooSmall(side));
        }
        Ok(s)
    }

    pub fn conv1_side(&self) -> usize {
        self.side - KERNEL + 1
    }

    pub fn pool1_side(&self) -> usize {
        self.conv1_side() / 2
    }

    pub fn conv2_side(&self) -> usize {
        self.pool1_side() - KERNEL + 1
    }

    pub fn pool2_side(&self) -> usize {
        self.conv2_side() / 2
    }

    /// Flattened feature count entering the hidden layer.
    pub fn flat(&self) -> usize {
        CONV2_OUT * self.pool2_side() * self.pool2_side()
    }

    /// Layout identifier stored in checkpoints.
    pub fn arch_id(&self) -> String {
        format!(
            "cnn-s{side}: conv3>{c1}k3/relu/max2 conv{c1}>{c2}k3/relu/max2 fc{flat}>{hid}/relu fc{hid}>{c} (conv w [ky][kx][ic][oc], fc w [in][out])",
            side = self.side,
            c1 = CONV1_OUT,
            c2 = CONV2_OUT,
            flat = self.flat(),
            hid = HIDDEN,
            c = self.num_classes,
        )
    }
}

/// One value per parameter of the network. Also used for gradients and for
/// the optimizer's moment estimates, which all share this shape.
///
/// Weight layouts put the *output* axis last: conv weights are
/// `[ky][kx][in_ch][out_ch]`, fully connected weights `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetTensors<T> {
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    pub fc1_w: Vec<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Vec<T>,
    pub fc2_b: Vec<T>,
}

pub const TENSOR_NAMES: [&str; 8] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b",
];

impl<T: Scalar> NetTensors<T> {
    pub fn zeros(shape: &NetShape) -> Self {
        let z = |n: usize| vec![T::zero(); n];
        Self {
            conv1_w: z(KERNEL * KERNEL * 3 * CONV1_OUT),
            conv1_b: z(CONV1_OUT),
            conv2_w: z(KERNEL * KERNEL * CONV1_OUT * CONV2_OUT),
            conv2_b: z(CONV2_OUT),
            fc1_w: z(shape.flat() * HIDDEN),
            fc1_b: z(HIDDEN),
            fc2_w: z(HIDDEN * shape.num_classes),
            fc2_b: z(shape.num_classes),
        }
    }

    /// Expected length of each tensor for a given shape, in declaration order.
    pub fn expected_lens(shape: &NetShape) -> [usize; 8] {
        [
            KERNEL * KERNEL * 3 * CONV1_OUT,
            CONV1_OUT,
            KERNEL * KERNEL * CONV1_OUT * CONV2_OUT,
            CONV2_OUT,
            shape.flat() * HIDDEN,
            HIDDEN,
            HIDDEN * shape.num_classes,
            shape.num_classes,
        ]
    }

    pub fn fields(&self) -> [&Vec<T>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut Vec<T>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn zero_out(&mut self) {
        for f in self.fields_mut() {
            for v in f.iter_mut() {
                *v = T::zero();
            }
        }
    }

    /// First tensor containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        for (name, field) in TENSOR_NAMES.iter().zip(self.fields()) {
            if field.iter().any(|v| !v.is_finite()) {
                return Some(name);
            }
        }
        None
    }

    pub fn cast<U: Scalar>(&self) -> NetTensors<U> {
        let c = |v: &Vec<T>| v.iter().map(|&x| U::from(x).unwrap()).collect();
        NetTensors {
            conv1_w: c(&self.conv1_w),
            conv1_b: c(&self.conv1_b),
            conv2_w: c(&self.conv2_w),
            conv2_b: c(&self.conv2_b),
            fc1_w: c(&self.fc1_w),
            fc1_b: c(&self.fc1_b),
            fc2_w: c(&self.fc2_w),
            fc2_b: c(&self.fc2_b),
        }
    }
}

/// The classifier: shape plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Net<T> {
    pub shape: NetShape,
    pub params: NetTensors<T>,
}

impl<T: Scalar> Net<T> {
    /// He-uniform weight initialization (`±sqrt(6/fan_in)`), zero biases.
    /// Draw order is fixed, so a seed fully determines the network.
    pub fn init(shape: NetShape, rng: &mut SeededRng) -> Self {
        let mut params = NetTensors::zeros(&shape);
        let fan_ins = [
            KERNEL * KERNEL * 3,
            KERNEL * KERNEL * CONV1_OUT,
            shape.flat(),
            HIDDEN,
        ];
        let weights = [
            &mut params.conv1_w,
            &mut params.conv2_w,
            &mut params.fc1_w,
            &mut params.fc2_w,
        ];
        for (w, fan_in) in weights.into_iter().zip(fan_ins) {
            let limit = (6.0 / fan_in as f64).sqrt();
            for v in w.iter_mut() {
                *v = t(rng.next_f64(-limit, limit));
            }
        }
        Self { shape, params }
    }

    pub fn forward(&self, input: &[T]) -> Trace<T> {
        let s = &self.shape;
        debug_assert_eq!(input.len(), s.side * s.side * 3);
        let col1 = im2col(input, s.side, 3);
        let mut a1 = gemm_bias(&col1, &self.params.conv1_w, &self.params.conv1_b, CONV1_OUT);
        relu(&mut a1);
        let (p1, p1_arg) = maxpool2(&a1, s.conv1_side(), CONV1_OUT);
        let col2 = im2col(&p1, s.pool1_side(), CONV1_OUT);
        let mut a2 = gemm_bias(&col2, &self.params.conv2_w, &self.params.conv2_b, CONV2_OUT);
        relu(&mut a2);
        let (p2, p2_arg) = maxpool2(&a2, s.conv2_side(), CONV2_OUT);
        let mut feat = self.params.fc1_b.clone();
        for (i, &x) in p2.iter().enumerate() {
            if x != T::zero() {
                let row = &self.params.fc1_w[i * HIDDEN..(i + 1) * HIDDEN];
                for (o, &w) in feat.iter_mut().zip(row) {
                    *o += x * w;
                }
            }
        }
        relu(&mut feat);
        let c = s.num_classes;
        let mut logits = self.params.fc2_b.clone();
        for (f, &x) in feat.iter().enumerate() {
            if x != T::zero() {
                let row = &self.params.fc2_w[f * c..(f + 1) * c];
                for (o, &w) in logits.iter_mut().zip(row) {
                    *o += x * w;
                }
            }
        }
        Trace { col1, a1, p1, p1_arg, col2, a2, p2, p2_arg, feat, logits }
    }

    pub fn logits(&self, input: &[T]) -> Vec<T> {
        self.forward(input).logits
    }

    /// Predicted class: argmax over logits, ties to the lowest index.
    pub fn predict_input(&self, input: &[T]) -> usize {
        argmax(&self.logits(input))
    }

    /// Accumulate parameter gradients for one sample into `grads`.
    ///
    /// `dlogits` is the loss gradient at the logits; `dfeat_extra`, when
    /// present, is an additional gradient injected at the hidden feature
    /// layer (the similarity term attaches there).
    pub fn backward(
        &self,
        trace: &Trace<T>,
        dlogits: &[T],
        dfeat_extra: Option<&[T]>,
        grads: &mut NetTensors<T>,
    ) {
        let s = &self.shape;
        let c = s.num_classes;

        // head
        let mut dfeat = vec![T::zero(); HIDDEN];
        for (f, &x) in trace.feat.iter().enumerate() {
            let wrow = &self.params.fc2_w[f * c..(f + 1) * c];
            let grow = &mut grads.fc2_w[f * c..(f + 1) * c];
            let mut acc = T::zero();
            for ((g, &w), &dl) in grow.iter_mut().zip(wrow).zip(dlogits) {
                *g += x * dl;
                acc += w * dl;
            }
            dfeat[f] = acc;
        }
        for (g, &dl) in grads.fc2_b.iter_mut().zip(dlogits) {
            *g += dl;
        }
        if let Some(extra) = dfeat_extra {
            for (d, &e) in dfeat.iter_mut().zip(extra) {
                *d += e;
            }
        }
        for (d, &a) in dfeat.iter_mut().zip(&trace.feat) {
            if a <= T::zero() {
                *d = T::zero();
            }
        }

        // hidden layer
        for (g, &d) in grads.fc1_b.iter_mut().zip(&dfeat) {
            *g += d;
        }
        let flat = s.flat();
        let mut dflat = vec![T::zero(); flat];
        for i in 0..flat {
            let x = trace.p2[i];
            let wrow = &self.params.fc1_w[i * HIDDEN..(i + 1) * HIDDEN];
            let mut acc = T::zero();
            if x != T::zero() {
                let grow = &mut grads.fc1_w[i * HIDDEN..(i + 1) * HIDDEN];
                for ((g, &w), &d) in grow.iter_mut().zip(wrow).zip(&dfeat) {
                    *g += x * d;
                    acc += w * d;
                }
            } else {
                for (&w, &d) in wrow.iter().zip(&dfeat) {
                    acc += w * d;
                }
            }
            dflat[i] = acc;
        }

        // unpool into conv2 activations; ReLU gate rides on the pooled value
        let c2 = s.conv2_side();
        let mut da2 = vec![T::zero(); c2 * c2 * CONV2_OUT];
        for (j, &d) in dflat.iter().enumerate() {
            if trace.p2[j] > T::zero() {
                da2[trace.p2_arg[j] as usize] += d;
            }
        }

        // conv2 weight gradient: col2^T * da2
        let k2 = KERNEL * KERNEL * CONV1_OUT;
        let rows2 = c2 * c2;
        for r in 0..rows2 {
            let drow = &da2[r * CONV2_OUT..(r + 1) * CONV2_OUT];
            let crow = &trace.col2[r * k2..(r + 1) * k2];
            for (k, &x) in crow.iter().enumerate() {
                if x != T::zero() {
                    let grow = &mut grads.conv2_w[k * CONV2_OUT..(k + 1) * CONV2_OUT];
                    for (g, &d) in grow.iter_mut().zip(drow) {
                        *g += x * d;
                    }
                }
            }
            for (g, &d) in grads.conv2_b.iter_mut().zip(drow) {
                *g += d;
            }
        }

        // gradient w.r.t. col2, via the transposed weight matrix
        let w2t = transpose(&self.params.conv2_w, k2, CONV2_OUT);
        let mut dcol2 = vec![T::zero(); rows2 * k2];
        for r in 0..rows2 {
            let drow = &da2[r * CONV2_OUT..(r + 1) * CONV2_OUT];
            let dcrow = &mut dcol2[r * k2..(r + 1) * k2];
            for (oc, &d) in drow.iter().enumerate() {
                if d != T::zero() {
                    let wrow = &w2t[oc * k2..(oc + 1) * k2];
                    for (o, &w) in dcrow.iter_mut().zip(wrow) {
                        *o += d * w;
                    }
                }
            }
        }

        // scatter col2 gradient back onto the pooled plane
        let p1s = s.pool1_side();
        let mut dp1 = vec![T::zero(); p1s * p1s * CONV1_OUT];
        scatter_col(&dcol2, &mut dp1, p1s, CONV1_OUT);

        // unpool into conv1 activations
        let c1 = s.conv1_side();
        let mut da1 = vec![T::zero(); c1 * c1 * CONV1_OUT];
        for (j, &d) in dp1.iter().enumerate() {
            if trace.p1[j] > T::zero() {
                da1[trace.p1_arg[j] as usize] += d;
            }
        }

        // conv1 weight gradient: col1^T * da1
        let k1 = KERNEL * KERNEL * 3;
        let rows1 = c1 * c1;
        for r in 0..rows1 {
            let drow = &da1[r * CONV1_OUT..(r + 1) * CONV1_OUT];
            let crow = &trace.col1[r * k1..(r + 1) * k1];
            for (k, &x) in crow.iter().enumerate() {
                if x != T::zero() {
                    let grow = &mut grads.conv1_w[k * CONV1_OUT..(k + 1) * CONV1_OUT];
                    for (g, &d) in grow.iter_mut().zip(drow) {
                        *g += x * d;
                    }
                }
            }
            for (g, &d) in grads.conv1_b.iter_mut().zip(drow) {
                *g += d;
            }
        }
    }
}

/// Cached activations from one forward pass, everything the backward pass
/// needs. Layouts are channel-last; `colN` are the im2col expansions.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub col1: Vec<T>,
    pub a1: Vec<T>,
    pub p1: Vec<T>,
    pub p1_arg: Vec<u32>,
    pub col2: Vec<T>,
    pub a2: Vec<T>,
    pub p2: Vec<T>,
    pub p2_arg: Vec<u32>,
    pub feat: Vec<T>,
    pub logits: Vec<T>,
}

/// Standardize an image into the channel-last input layout. Pixels are
/// decorrelated into an opponent color basis (luminance plus two color
/// difference channels, the same split the compression pipeline uses),
/// then each channel is standardized against its own per-image mean and
/// spread: brightness and overall tint carry no class or provenance
/// information, so removing them per image keeps the network's operating
/// point stable across capture conditions. The spread divisor is floored
/// per channel; the color-difference floors sit above the typical scene
/// spread, so color channels are effectively rescaled by a constant and
/// fine color texture keeps the same input magnitude whether or not the
/// scene is noisy or strongly tinted.
pub fn image_to_input<T: Scalar>(image: &ImageU8) -> Vec<T> {
    let data = image.data();
    let mut opponent = Vec::with_capacity(data.len());
    for px in data.chunks_exact(3) {
        let r = f64::from(px[0]);
        let g = f64::from(px[1]);
        let b = f64::from(px[2]);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        opponent.push(y);
        opponent.push(0.564 * (b - y));
        opponent.push(0.713 * (r - y));
    }
    let mut mean = [0.0f64; 3];
    let mut var = [0.0f64; 3];
    for px in opponent.chunks_exact(3) {
        for c in 0..3 {
            mean[c] += px[c];
            var[c] += px[c] * px[c];
        }
    }
    let n = (data.len() / 3).max(1) as f64;
    let mut scale = [0.0f64; 3];
    for c in 0..3 {
        mean[c] /= n;
        var[c] = (var[c] / n - mean[c] * mean[c]).max(0.0);
        scale[c] = var[c].sqrt().max(CHANNEL_FLOOR[c]);
    }
    opponent
        .iter()
        .enumerate()
        .map(|(i, &v)| t((v - mean[i % 3]) / scale[i % 3]))
        .collect()
}

/// Smallest per-image standard deviation the standardization divides by
/// (color difference channels spread far less than luminance).
const CHANNEL_FLOOR: [f64; 3] = [8.0, 7.0, 7.0];

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn relu<T: Scalar>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Unfold 3×3 valid-convolution windows of a channel-last plane into rows of
/// `(ky, kx, channel)` patches.
fn im2col<T: Scalar>(input: &[T], side: usize, channels: usize) -> Vec<T> {
    let out_side = side - KERNEL + 1;
    let k = KERNEL * KERNEL * channels;
    let mut col = vec![T::zero(); out_side * out_side * k];
    let seg = KERNEL * channels;
    for oy in 0..out_side {
        for ox in 0..out_side {
            let row = (oy * out_side + ox) * k;
            for ky in 0..KERNEL {
                let src = ((oy + ky) * side + ox) * channels;
                col[row + ky * seg..row + (ky + 1) * seg]
                    .copy_from_slice(&input[src..src + seg]);
            }
        }
    }
    col
}

/// Inverse of the [`im2col`] copy pattern: accumulate col-space gradients
/// back onto the channel-last plane.
fn scatter_col<T: Scalar>(dcol: &[T], dplane: &mut [T], side: usize, channels: usize) {
    let out_side = side - KERNEL + 1;
    let k = KERNEL * KERNEL * channels;
    let seg = KERNEL * channels;
    for oy in 0..out_side {
        for ox in 0..out_side {
            let row = (oy * out_side + ox) * k;
            for ky in 0..KERNEL {
                let dst = ((oy + ky) * side + ox) * channels;
                let src = &dcol[row + ky * seg..row + (ky + 1) * seg];
                for (o, &v) in dplane[dst..dst + seg].iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
    }
}

/// `out[r] = col[r] · w + b`, with `w` stored `[k][out_ch]` so the inner
/// loop runs over independent output channels.
fn gemm_bias<T: Scalar>(col: &[T], w: &[T], b: &[T], out_ch: usize) -> Vec<T> {
    let k = w.len() / out_ch;
    let rows = col.len() / k;
    let mut out = vec![T::zero(); rows * out_ch];
    for r in 0..rows {
        let orow = &mut out[r * out_ch..(r + 1) * out_ch];
        orow.copy_from_slice(b);
        let crow = &col[r * k..(r + 1) * k];
        for (ki, &x) in crow.iter().enumerate() {
            if x != T::zero() {
                let wrow = &w[ki * out_ch..(ki + 1) * out_ch];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += x * wv;
                }
            }
        }
    }
    out
}

/// 2×2 max pooling with stride 2 over a channel-last plane; any odd trailing
/// row/column is dropped. Returns pooled values and the flat source index of
/// each maximum (ties go to the first cell in scan order).
fn maxpool2<T: Scalar>(input: &[T], side: usize, channels: usize) -> (Vec<T>, Vec<u32>) {
    let out_side = side / 2;
    let mut out = vec![T::zero(); out_side * out_side * channels];
    let mut arg = vec![0u32; out_side * out_side * channels];
    for py in 0..out_side {
        for px in 0..out_side {
            for c in 0..channels {
                let mut best_idx = ((2 * py) * side + 2 * px) * channels + c;
                let mut best = input[best_idx];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = ((2 * py + dy) * side + 2 * px + dx) * channels + c;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = (py * out_side + px) * channels + c;
                out[o] = best;
                arg[o] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain quadruple-loop convolution over channel-last data with the
    /// `[ky][kx][ic][oc]` weight layout — the independent reference.
    fn conv_reference(
        input: &[f64],
        side: usize,
        in_ch: usize,
        w: &[f64],
        b: &[f64],
        out_ch: usize,
    ) -> Vec<f64> {
        let os = side - KERNEL + 1;
        let mut out = vec![0.0f64; os * os * out_ch];
        for oy in 0..os {
            for ox in 0..os {
                for oc in 0..out_ch {
                    let mut acc = b[oc];
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            for ic in 0..in_ch {
                                let iv = input[((oy + ky) * side + ox + kx) * in_ch + ic];
                                let wv = w[((ky * KERNEL + kx) * in_ch + ic) * out_ch + oc];
                                acc += iv * wv;
                            }
                        }
                    }
                    out[(oy * os + ox) * out_ch + oc] = acc;
                }
            }
        }
        out
    }

    fn random_net(side: usize, classes: usize, seed: u64) -> Net<f64> {
        let shape = NetShape::new(side, classes).unwrap();
        let mut rng = SeededRng::new(seed);
        Net::init(shape, &mut rng)
    }

    fn random_input(n: usize, rng: &mut SeededRng) -> Vec<f64> {
        (0..n).map(|_| rng.next_f64(0.0, 1.0)).collect()
    }

    #[test]
    fn shape_arithmetic() {
        let s = NetShape::new(32, 10).unwrap();
        assert_eq!(s.conv1_side(), 30);
        assert_eq!(s.pool1_side(), 15);
        assert_eq!(s.conv2_side(), 13);
        assert_eq!(s.pool2_side(), 6);
        assert_eq!(s.flat(), 1152);
        let s16 = NetShape::new(16, 4).unwrap();
        assert_eq!(s16.flat(), 32 * 2 * 2);
        assert!(NetShape::new(8, 4).is_err());
        assert!(NetShape::new(32, 1).is_err());
    }

    #[test]
    fn conv_layers_match_reference() {
        let net = random_net(16, 4, 3);
        let mut rng = SeededRng::new(4);
        let input = random_input(16 * 16 * 3, &mut rng);
        let trace = net.forward(&input);

        let ref1 = conv_reference(&input, 16, 3, &net.params.conv1_w, &net.params.conv1_b, CONV1_OUT);
        let relu1: Vec<f64> = ref1.iter().map(|&v| v.max(0.0)).collect();
        for (a, b) in trace.a1.iter().zip(&relu1) {
            assert!((a - b).abs() < 1e-9);
        }

        let ref2 = conv_reference(
            &trace.p1,
            net.shape.pool1_side(),
            CONV1_OUT,
            &net.params.conv2_w,
            &net.params.conv2_b,
            CONV2_OUT,
        );
        for (a, b) in trace.a2.iter().zip(ref2.iter().map(|&v| v.max(0.0))) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn head_matches_reference() {
        let net = random_net(16, 5, 9);
        let mut rng = SeededRng::new(10);
        let input = random_input(16 * 16 * 3, &mut rng);
        let trace = net.forward(&input);
        // hidden layer by hand
        let flat = net.shape.flat();
        for f in 0..HIDDEN {
            let mut acc = net.params.fc1_b[f];
            for i in 0..flat {
                acc += trace.p2[i] * net.params.fc1_w[i * HIDDEN + f];
            }
            assert!((trace.feat[f] - acc.max(0.0)).abs() < 1e-9);
        }
        for cls in 0..5 {
            let mut acc = net.params.fc2_b[cls];
            for f in 0..HIDDEN {
                acc += trace.feat[f] * net.params.fc2_w[f * 5 + cls];
            }
            assert!((trace.logits[cls] - acc).abs() < 1e-9);
        }
    }

    #[test]
    fn maxpool_ties_take_first() {
        let plane = vec![2.0f64, 2.0, 2.0, 2.0]; // 2x2, 1 channel, all equal
        let (out, arg) = maxpool2(&plane, 2, 1);
        assert_eq!(out, vec![2.0]);
        assert_eq!(arg, vec![0]);
        let plane = vec![1.0f64, 5.0, 5.0, 0.0];
        let (out, arg) = maxpool2(&plane, 2, 1);
        assert_eq!(out, vec![5.0]);
        assert_eq!(arg, vec![1]); // scan order (0,0),(0,1),(1,0),(1,1)
    }

    #[test]
    fn maxpool_drops_odd_edge() {
        // 3x3 single channel: only the top-left 2x2 participates
        let plane: Vec<f64> = (0..9).map(f64::from).collect();
        let (out, arg) = maxpool2(&plane, 3, 1);
        assert_eq!(out, vec![4.0]);
        assert_eq!(arg, vec![4]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0f64]), 0);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = random_net(16, 4, 7);
        let b = random_net(16, 4, 7);
        assert_eq!(a.params, b.params);
        let c = random_net(16, 4, 8);
        assert_ne!(a.params, c.params);
        let limit = (6.0f64 / 27.0).sqrt();
        assert!(a.params.conv1_w.iter().all(|&w| w.abs() <= limit));
        assert!(a.params.conv1_b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences_on_logit_loss() {
        // scalar probe loss: sum of logits weighted by fixed coefficients
        let net = random_net(16, 3, 21);
        let mut rng = SeededRng::new(22);
        let input = random_input(16 * 16 * 3, &mut rng);
        let coef: Vec<f64> = (0..3).map(|_| rng.next_f64(-1.0, 1.0)).collect();
        let loss = |n: &Net<f64>| -> f64 {
            n.logits(&input).iter().zip(&coef).map(|(l, c)| l * c).sum()
        };
        let trace = net.forward(&input);
        let mut grads = NetTensors::zeros(&net.shape);
        net.backward(&trace, &coef, None, &mut grads);

        let mut check_rng = SeededRng::new(23);
        let h = 1e-6;
        let mut checked = 0;
        for field_idx in 0..8 {
            for _ in 0..6 {
                let len = net.params.fields()[field_idx].len();
                let j = check_rng.next_index(len);
                let mut plus = net.clone();
                *plus.params.fields_mut()[field_idx].get_mut(j).unwrap() += h;
                let mut minus = net.clone();
                *minus.params.fields_mut()[field_idx].get_mut(j).unwrap() -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grads.fields()[field_idx][j];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < 1e-3,
                    "tensor {} index {j}: fd {fd} vs analytic {an}",
                    TENSOR_NAMES[field_idx]
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 48);
    }
}
