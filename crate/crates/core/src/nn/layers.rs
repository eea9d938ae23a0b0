use rand::Rng;

use super::resnet::Bottleneck;
use super::{gemm, StateTensor, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn zeros(len: usize) -> Self {
        Param { value: vec![0.0; len], grad: vec![0.0; len] }
    }

    pub fn filled(len: usize, v: f32) -> Self {
        Param { value: vec![v; len], grad: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    fn uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, limit: f32) {
        for v in &mut self.value {
            *v = rng.random_range(-limit..limit);
        }
    }
}

/// 2-D convolution with square kernels, zero padding and optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in·k·k]`
    pub weight: Param,
    pub bias: Option<Param>,
    /// False for the first layer, whose input gradient nobody consumes.
    pub input_grad: bool,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        assert!(kernel > 0 && stride > 0);
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::zeros(out_channels * in_channels * kernel * kernel),
            bias: bias.then(|| Param::zeros(out_channels)),
            input_grad: true,
            cache: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        (
            (h + 2 * self.padding).saturating_sub(k) / self.stride + 1,
            (w + 2 * self.padding).saturating_sub(k) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// He-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let limit = (6.0 / self.patch_len() as f32).sqrt();
        self.weight.uniform(rng, limit);
        if let Some(b) = &mut self.bias {
            b.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Unfolds one sample into `[in·k·k][ho·wo]`.
    fn im2col(&self, x: &[f32], h: usize, w: usize, col: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (ho, wo) = self.output_size(h, w);
        for ci in 0..self.in_channels {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * ho * wo;
                    for oy in 0..ho {
                        let dst = &mut col[row + oy * wo..row + (oy + 1) * wo];
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            // ix = ox + kx - p must lie in [0, w).
                            let lo = p.saturating_sub(kx).min(wo);
                            let hi = (w + p).saturating_sub(kx).min(wo).max(lo);
                            dst[..lo].fill(0.0);
                            dst[hi..].fill(0.0);
                            if hi > lo {
                                let start = lo + kx - p;
                                dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - p as isize;
                                *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Folds `[in·k·k][ho·wo]` columns back, accumulating into `dx`.
    fn col2im(&self, col: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (ho, wo) = self.output_size(h, w);
        for ci in 0..self.in_channels {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &col[row + oy * wo..row + (oy + 1) * wo];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_size(x.h, x.w);
        let hw = ho * wo;
        let mut out = Tensor::zeros(x.n, self.out_channels, ho, wo);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0f32; self.patch_len() * hw] };
        for i in 0..x.n {
            let input = x.sample(i);
            let cols: &[f32] = if self.is_pointwise() {
                input
            } else {
                self.im2col(input, x.h, x.w, &mut col);
                &col
            };
            let o = out.sample_mut(i);
            gemm(self.out_channels, self.patch_len(), hw, &self.weight.value, false, cols, false, 0.0, o);
            if let Some(b) = &self.bias {
                for (oc, bv) in b.value.iter().enumerate() {
                    o[oc * hw..(oc + 1) * hw].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        out
    }

    pub fn forward_train(&mut self, x: Tensor) -> Tensor {
        let out = self.infer(&x);
        self.cache = Some(x);
        out
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.cache.take().expect("conv backward without forward");
        let hw = grad.h * grad.w;
        let pl = self.patch_len();
        let mut dx = if self.input_grad { Tensor::zeros(x.n, x.c, x.h, x.w) } else { Tensor::zeros(0, x.c, x.h, x.w) };
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0f32; pl * hw] };
        let mut dcol = if self.input_grad && !self.is_pointwise() { vec![0f32; pl * hw] } else { Vec::new() };
        for i in 0..x.n {
            let g = grad.sample(i);
            let input = x.sample(i);
            let cols: &[f32] = if self.is_pointwise() {
                input
            } else {
                self.im2col(input, x.h, x.w, &mut col);
                &col
            };
            gemm(self.out_channels, hw, pl, g, false, cols, true, 1.0, &mut self.weight.grad);
            if let Some(b) = &mut self.bias {
                for (oc, bg) in b.grad.iter_mut().enumerate() {
                    *bg += g[oc * hw..(oc + 1) * hw].iter().sum::<f32>();
                }
            }
            if self.input_grad {
                if self.is_pointwise() {
                    gemm(pl, self.out_channels, hw, &self.weight.value, true, g, false, 0.0, dx.sample_mut(i));
                } else {
                    gemm(pl, self.out_channels, hw, &self.weight.value, true, g, false, 0.0, &mut dcol);
                    self.col2im(&dcol, x.h, x.w, dx.sample_mut(i));
                }
            }
        }
        dx
    }
}

/// Batch normalisation over N·H·W per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(channels, 1.0),
            beta: Param::zeros(channels),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.99,
            eps: 1.001e-5,
            cache: None,
        }
    }

    pub fn infer(&self, mut x: Tensor) -> Tensor {
        let hw = x.h * x.w;
        for i in 0..x.n {
            let s = x.sample_mut(i);
            for c in 0..self.channels {
                let scale = self.gamma.value[c] / (self.running_var[c] + self.eps).sqrt();
                let shift = self.beta.value[c] - self.running_mean[c] * scale;
                s[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        x
    }

    pub fn forward_train(&mut self, mut x: Tensor) -> Tensor {
        let hw = x.h * x.w;
        let m = (x.n * hw) as f64;
        let mut xhat = x.clone();
        let mut inv_std = vec![0f32; self.channels];
        for c in 0..self.channels {
            let (mut sum, mut sq) = (0f64, 0f64);
            for i in 0..x.n {
                for &v in &x.sample(i)[c * hw..(c + 1) * hw] {
                    sum += v as f64;
                    sq += (v as f64) * (v as f64);
                }
            }
            let mean = sum / m;
            let var = (sq / m - mean * mean).max(0.0);
            let istd = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[c] = istd as f32;
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[c] = self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean as f32;
            self.running_var[c] = self.momentum * self.running_var[c] + (1.0 - self.momentum) * unbiased as f32;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in 0..x.n {
                let xs = &mut x.sample_mut(i)[c * hw..(c + 1) * hw];
                let hs = &mut xhat.sample_mut(i)[c * hw..(c + 1) * hw];
                for (v, h) in xs.iter_mut().zip(hs.iter_mut()) {
                    let n = ((*v as f64 - mean) * istd) as f32;
                    *h = n;
                    *v = n * g + b;
                }
            }
        }
        self.cache = Some((xhat, inv_std));
        x
    }

    pub fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("batchnorm backward without forward");
        let hw = grad.h * grad.w;
        let m = (grad.n * hw) as f64;
        for c in 0..self.channels {
            let (mut sum_g, mut sum_gx) = (0f64, 0f64);
            for i in 0..grad.n {
                let gs = &grad.sample(i)[c * hw..(c + 1) * hw];
                let hs = &xhat.sample(i)[c * hw..(c + 1) * hw];
                for (g, h) in gs.iter().zip(hs) {
                    sum_g += *g as f64;
                    sum_gx += (*g as f64) * (*h as f64);
                }
            }
            self.gamma.grad[c] += sum_gx as f32;
            self.beta.grad[c] += sum_g as f32;
            let k = self.gamma.value[c] as f64 * inv_std[c] as f64 / m;
            for i in 0..grad.n {
                let hs = &xhat.sample(i)[c * hw..(c + 1) * hw];
                let gs = &mut grad.sample_mut(i)[c * hw..(c + 1) * hw];
                for (g, h) in gs.iter_mut().zip(hs) {
                    *g = (k * (m * *g as f64 - sum_g - *h as f64 * sum_gx)) as f32;
                }
            }
        }
        grad
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn infer(mut x: Tensor) -> Tensor {
        x.data.iter_mut().for_each(|v| *v = v.max(0.0));
        x
    }

    pub fn forward_train(&mut self, mut x: Tensor) -> Tensor {
        self.mask.clear();
        self.mask.extend(x.data.iter().map(|&v| v > 0.0));
        x.data.iter_mut().for_each(|v| *v = v.max(0.0));
        x
    }

    pub fn backward(&mut self, mut grad: Tensor) -> Tensor {
        assert_eq!(grad.data.len(), self.mask.len(), "relu backward without forward");
        for (g, &m) in grad.data.iter_mut().zip(&self.mask) {
            if !m {
                *g = 0.0;
            }
        }
        grad
    }
}

/// Max pooling; padded positions never win.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<((usize, usize, usize, usize), Vec<u32>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d { kernel, stride, padding, cache: None }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn pool(&self, x: &Tensor, mut argmax: Option<&mut Vec<u32>>) -> Tensor {
        let (ho, wo) = self.output_size(x.h, x.w);
        let mut out = Tensor::zeros(x.n, x.c, ho, wo);
        if let Some(a) = argmax.as_deref_mut() {
            a.clear();
            a.reserve(out.data.len());
        }
        let (k, s, p) = (self.kernel as isize, self.stride as isize, self.padding as isize);
        let mut o = 0;
        for plane in x.data.chunks(x.h * x.w) {
            for oy in 0..ho as isize {
                for ox in 0..wo as isize {
                    let (mut best, mut best_i) = (f32::NEG_INFINITY, 0u32);
                    for ky in 0..k {
                        let iy = oy * s + ky - p;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox * s + kx - p;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let idx = iy as usize * x.w + ix as usize;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_i = idx as u32;
                            }
                        }
                    }
                    out.data[o] = best;
                    if let Some(a) = argmax.as_deref_mut() {
                        a.push(best_i);
                    }
                    o += 1;
                }
            }
        }
        out
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.pool(x, None)
    }

    pub fn forward_train(&mut self, x: Tensor) -> Tensor {
        let mut argmax = Vec::new();
        let out = self.pool(&x, Some(&mut argmax));
        self.cache = Some((x.shape(), argmax));
        out
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        let ((n, c, h, w), argmax) = self.cache.take().expect("maxpool backward without forward");
        let mut dx = Tensor::zeros(n, c, h, w);
        let out_plane = grad.h * grad.w;
        for (p, (gs, dst)) in grad.data.chunks(out_plane).zip(dx.data.chunks_mut(h * w)).enumerate() {
            for (j, g) in gs.iter().enumerate() {
                dst[argmax[p * out_plane + j] as usize] += g;
            }
        }
        dx
    }
}

/// Fully connected layer on a batch of vectors stored row-major `[n][in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Param,
    pub bias: Param,
    cache: Option<Vec<f32>>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weight: Param::zeros(inputs * outputs), bias: Param::zeros(outputs), cache: None }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let limit = (6.0 / (self.inputs + self.outputs) as f32).sqrt();
        self.weight.uniform(rng, limit);
        self.bias.value.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn infer(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(n * self.outputs);
        for _ in 0..n {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(n, self.inputs, self.outputs, x, false, &self.weight.value, true, 1.0, &mut out);
        out
    }

    pub fn forward_train(&mut self, x: Vec<f32>, n: usize) -> Vec<f32> {
        let out = self.infer(&x, n);
        self.cache = Some(x);
        out
    }

    pub fn backward(&mut self, grad: &[f32], n: usize) -> Vec<f32> {
        let x = self.cache.take().expect("dense backward without forward");
        gemm(self.outputs, n, self.inputs, grad, true, &x, false, 1.0, &mut self.weight.grad);
        for row in grad.chunks(self.outputs) {
            for (b, g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = vec![0f32; n * self.inputs];
        gemm(n, self.outputs, self.inputs, grad, false, &self.weight.value, false, 0.0, &mut dx);
        dx
    }
}

/// One stage of the feature extractor.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu(Relu),
    MaxPool(MaxPool2d),
    Bottleneck(Box<Bottleneck>),
}

impl Layer {
    pub fn infer(&self, x: Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.infer(&x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Relu(_) => Relu::infer(x),
            Layer::MaxPool(l) => l.infer(&x),
            Layer::Bottleneck(b) => b.infer(x),
        }
    }

    pub fn forward_train(&mut self, x: Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::Relu(l) => l.forward_train(x),
            Layer::MaxPool(l) => l.forward_train(x),
            Layer::Bottleneck(b) => b.forward_train(x),
        }
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::Bottleneck(b) => b.backward(grad),
        }
    }

    /// Output `(channels, height, width)` for a given input geometry.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> (usize, usize, usize) {
        match self {
            Layer::Conv(l) => {
                let (ho, wo) = l.output_size(h, w);
                (l.out_channels, ho, wo)
            }
            Layer::BatchNorm(_) | Layer::Relu(_) => (c, h, w),
            Layer::MaxPool(l) => {
                let (ho, wo) = l.output_size(h, w);
                (c, ho, wo)
            }
            Layer::Bottleneck(b) => b.output_shape((c, h, w)),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self {
            Layer::Conv(l) => l.init(rng),
            Layer::Bottleneck(b) => b.init(rng),
            Layer::BatchNorm(_) | Layer::Relu(_) | Layer::MaxPool(_) => {}
        }
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Layer::Conv(l) => {
                out.push(&mut l.weight);
                if let Some(b) = &mut l.bias {
                    out.push(b);
                }
            }
            Layer::BatchNorm(l) => {
                out.push(&mut l.gamma);
                out.push(&mut l.beta);
            }
            Layer::Bottleneck(b) => b.collect_params(out),
            Layer::Relu(_) | Layer::MaxPool(_) => {}
        }
    }

    /// Every persistent tensor: parameters plus batch-norm running statistics.
    pub fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<StateTensor<'a>>) {
        match self {
            Layer::Conv(l) => conv_state(l, prefix, out),
            Layer::BatchNorm(l) => bn_state(l, prefix, out),
            Layer::Bottleneck(b) => b.collect_state(prefix, out),
            Layer::Relu(_) | Layer::MaxPool(_) => {}
        }
    }
}

pub(crate) fn conv_state<'a>(l: &'a mut Conv2d, prefix: &str, out: &mut Vec<StateTensor<'a>>) {
    out.push(StateTensor { name: format!("{prefix}.weight"), values: &mut l.weight.value });
    if let Some(b) = &mut l.bias {
        out.push(StateTensor { name: format!("{prefix}.bias"), values: &mut b.value });
    }
}

pub(crate) fn bn_state<'a>(l: &'a mut BatchNorm2d, prefix: &str, out: &mut Vec<StateTensor<'a>>) {
    out.push(StateTensor { name: format!("{prefix}.gamma"), values: &mut l.gamma.value });
    out.push(StateTensor { name: format!("{prefix}.beta"), values: &mut l.beta.value });
    out.push(StateTensor { name: format!("{prefix}.running_mean"), values: &mut l.running_mean });
    out.push(StateTensor { name: format!("{prefix}.running_var"), values: &mut l.running_var });
}
