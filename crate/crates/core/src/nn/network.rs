use super::layers::{Dense, Layer, Param};
use super::Tensor;

/// A named persistent tensor, borrowed for checkpoint I/O.
pub struct StateTensor<'a> {
    pub name: String,
    pub values: &'a mut Vec<f32>,
}

/// Convolutional feature extractor, global average pooling and an affine head.
///
/// The output of the last feature layer is the designated Grad-CAM stage.
#[derive(Debug, Clone)]
pub struct Network {
    pub input_channels: usize,
    pub features: Vec<Layer>,
    pub head: Dense,
    feature_geometry: Option<(usize, usize)>,
}

impl Network {
    pub fn new(input_channels: usize, features: Vec<Layer>, head: Dense) -> Self {
        Network { input_channels, features, head, feature_geometry: None }
    }

    pub fn num_classes(&self) -> usize {
        self.head.outputs
    }

    /// `(channels, height, width)` of the last feature stage for an input size.
    pub fn feature_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        self.features.iter().fold((self.input_channels, h, w), |s, l| l.output_shape(s))
    }

    pub fn infer_features(&self, x: Tensor) -> Tensor {
        assert_eq!(x.c, self.input_channels, "network input channels");
        self.features.iter().fold(x, |t, l| l.infer(t))
    }

    fn pool(f: &Tensor) -> Vec<f32> {
        let hw = f.h * f.w;
        f.data
            .chunks(hw)
            .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
            .collect()
    }

    pub fn logits_from_features(&self, f: &Tensor) -> Vec<f32> {
        self.head.infer(&Self::pool(f), f.n)
    }

    /// Logits `[n][classes]`.
    pub fn infer(&self, x: Tensor) -> Vec<f32> {
        self.logits_from_features(&self.infer_features(x))
    }

    pub fn forward_train(&mut self, x: Tensor) -> Vec<f32> {
        assert_eq!(x.c, self.input_channels, "network input channels");
        let n = x.n;
        let f = self.features.iter_mut().fold(x, |t, l| l.forward_train(t));
        self.feature_geometry = Some((f.h, f.w));
        let pooled = Self::pool(&f);
        self.head.forward_train(pooled, n)
    }

    /// Accumulates parameter gradients for `dlogits` `[n][classes]`.
    pub fn backward(&mut self, dlogits: &[f32]) {
        let (h, w) = self.feature_geometry.take().expect("network backward without forward");
        let n = dlogits.len() / self.head.outputs;
        let dpooled = self.head.backward(dlogits, n);
        let c = self.head.inputs;
        let scale = 1.0 / (h * w) as f32;
        let mut grad = Tensor::zeros(n, c, h, w);
        for (plane, g) in grad.data.chunks_mut(h * w).zip(&dpooled) {
            plane.fill(g * scale);
        }
        for layer in self.features.iter_mut().rev() {
            grad = layer.backward(grad);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.features {
            l.collect_params(&mut out);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn state_mut(&mut self) -> Vec<StateTensor<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.features.iter_mut().enumerate() {
            l.collect_state(&format!("features.{i}"), &mut out);
        }
        out.push(StateTensor { name: "head.weight".into(), values: &mut self.head.weight.value });
        out.push(StateTensor { name: "head.bias".into(), values: &mut self.head.bias.value });
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    /// Pre-softmax score of `class` from channel-major features, in `f64`.
    pub fn class_score_from_features(&self, features: &[f64], hw: usize, class: usize) -> f64 {
        let c = self.head.inputs;
        assert_eq!(features.len(), c * hw);
        let row = &self.head.weight.value[class * c..(class + 1) * c];
        let mut score = self.head.bias.value[class] as f64;
        for (k, plane) in features.chunks(hw).enumerate() {
            score += row[k] as f64 * plane.iter().sum::<f64>() / hw as f64;
        }
        score
    }

    /// Gradient of the `class` score with respect to every feature entry.
    ///
    /// Through average pooling and the affine head this is `W[class, k] / (h·w)`
    /// for every position of channel `k`.
    pub fn class_score_gradient(&self, hw: usize, class: usize) -> Vec<f64> {
        let c = self.head.inputs;
        let row = &self.head.weight.value[class * c..(class + 1) * c];
        let mut grad = Vec::with_capacity(c * hw);
        for &w in row {
            grad.extend(std::iter::repeat_n(w as f64 / hw as f64, hw));
        }
        grad
    }
}
