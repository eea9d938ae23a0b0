//! Pre-activation bottleneck residual networks (ResNet v2 layout).

use rand::Rng;

use super::layers::{bn_state, conv_state, BatchNorm2d, Conv2d, Layer, MaxPool2d, Param, Relu};
use super::{StateTensor, Tensor};

/// How the block input reaches the residual sum.
#[derive(Debug, Clone)]
pub enum Shortcut {
    Identity,
    /// Keeps every `stride`-th pixel of the raw input (a 1×1 max pool).
    Subsample(usize),
    /// 1×1 convolution of the pre-activated input.
    Projection(Conv2d),
}

/// `x + conv1x1(relu(bn(conv3x3(relu(bn(conv1x1(relu(bn(x)))))))))`
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub preact_bn: BatchNorm2d,
    preact_relu: Relu,
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    relu1: Relu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    relu2: Relu,
    pub conv3: Conv2d,
    pub shortcut: Shortcut,
    input_shape: Option<(usize, usize, usize, usize)>,
}

impl Bottleneck {
    pub fn new(in_channels: usize, width: usize, stride: usize, project: bool) -> Self {
        let out = 4 * width;
        let shortcut = if project {
            Shortcut::Projection(Conv2d::new(in_channels, out, 1, stride, 0, true))
        } else if stride > 1 {
            Shortcut::Subsample(stride)
        } else {
            assert_eq!(in_channels, out, "identity shortcut needs matching channels");
            Shortcut::Identity
        };
        Bottleneck {
            preact_bn: BatchNorm2d::new(in_channels),
            preact_relu: Relu::default(),
            conv1: Conv2d::new(in_channels, width, 1, 1, 0, false),
            bn1: BatchNorm2d::new(width),
            relu1: Relu::default(),
            conv2: Conv2d::new(width, width, 3, stride, 1, false),
            bn2: BatchNorm2d::new(width),
            relu2: Relu::default(),
            conv3: Conv2d::new(width, out, 1, 1, 0, true),
            shortcut,
            input_shape: None,
        }
    }

    pub fn output_shape(&self, (_, h, w): (usize, usize, usize)) -> (usize, usize, usize) {
        let (ho, wo) = self.conv2.output_size(h, w);
        (self.conv3.out_channels, ho, wo)
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.conv1.init(rng);
        self.conv2.init(rng);
        self.conv3.init(rng);
        if let Shortcut::Projection(p) = &mut self.shortcut {
            p.init(rng);
        }
    }

    fn subsample(x: &Tensor, stride: usize) -> Tensor {
        let (ho, wo) = ((x.h - 1) / stride + 1, (x.w - 1) / stride + 1);
        let mut out = Tensor::zeros(x.n, x.c, ho, wo);
        for (src, dst) in x.data.chunks(x.h * x.w).zip(out.data.chunks_mut(ho * wo)) {
            for oy in 0..ho {
                for ox in 0..wo {
                    dst[oy * wo + ox] = src[oy * stride * x.w + ox * stride];
                }
            }
        }
        out
    }

    pub fn infer(&self, x: Tensor) -> Tensor {
        let pre = Relu::infer(self.preact_bn.infer(x.clone()));
        let skip = match &self.shortcut {
            Shortcut::Identity => x,
            Shortcut::Subsample(s) => Self::subsample(&x, *s),
            Shortcut::Projection(p) => p.infer(&pre),
        };
        let y = Relu::infer(self.bn1.infer(self.conv1.infer(&pre)));
        let y = Relu::infer(self.bn2.infer(self.conv2.infer(&y)));
        let mut y = self.conv3.infer(&y);
        y.add_assign(&skip);
        y
    }

    pub fn forward_train(&mut self, x: Tensor) -> Tensor {
        self.input_shape = Some(x.shape());
        let pre = self.preact_relu.forward_train(self.preact_bn.forward_train(x.clone()));
        let skip = match &mut self.shortcut {
            Shortcut::Identity => x,
            Shortcut::Subsample(s) => Self::subsample(&x, *s),
            Shortcut::Projection(p) => p.forward_train(pre.clone()),
        };
        let y = self.conv1.forward_train(pre);
        let y = self.relu1.forward_train(self.bn1.forward_train(y));
        let y = self.conv2.forward_train(y);
        let y = self.relu2.forward_train(self.bn2.forward_train(y));
        let mut y = self.conv3.forward_train(y);
        y.add_assign(&skip);
        y
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        let (n, c, h, w) = self.input_shape.take().expect("bottleneck backward without forward");
        let g = self.conv3.backward(grad.clone());
        let g = self.bn2.backward(self.relu2.backward(g));
        let g = self.conv2.backward(g);
        let g = self.bn1.backward(self.relu1.backward(g));
        let mut g_pre = self.conv1.backward(g);
        let mut g_skip = None;
        match &mut self.shortcut {
            Shortcut::Identity => g_skip = Some(grad),
            Shortcut::Subsample(s) => {
                let mut dx = Tensor::zeros(n, c, h, w);
                let (ho, wo) = (grad.h, grad.w);
                for (src, dst) in grad.data.chunks(ho * wo).zip(dx.data.chunks_mut(h * w)) {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            dst[oy * *s * w + ox * *s] += src[oy * wo + ox];
                        }
                    }
                }
                g_skip = Some(dx);
            }
            Shortcut::Projection(p) => g_pre.add_assign(&p.backward(grad)),
        }
        let mut dx = self.preact_bn.backward(self.preact_relu.backward(g_pre));
        if let Some(s) = g_skip {
            dx.add_assign(&s);
        }
        dx
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.preact_bn.gamma);
        out.push(&mut self.preact_bn.beta);
        out.push(&mut self.conv1.weight);
        out.push(&mut self.bn1.gamma);
        out.push(&mut self.bn1.beta);
        out.push(&mut self.conv2.weight);
        out.push(&mut self.bn2.gamma);
        out.push(&mut self.bn2.beta);
        out.push(&mut self.conv3.weight);
        out.extend(self.conv3.bias.as_mut());
        if let Shortcut::Projection(p) = &mut self.shortcut {
            out.push(&mut p.weight);
            out.extend(p.bias.as_mut());
        }
    }

    pub fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<StateTensor<'a>>) {
        bn_state(&mut self.preact_bn, &format!("{prefix}.preact_bn"), out);
        conv_state(&mut self.conv1, &format!("{prefix}.conv1"), out);
        bn_state(&mut self.bn1, &format!("{prefix}.bn1"), out);
        conv_state(&mut self.conv2, &format!("{prefix}.conv2"), out);
        bn_state(&mut self.bn2, &format!("{prefix}.bn2"), out);
        conv_state(&mut self.conv3, &format!("{prefix}.conv3"), out);
        if let Shortcut::Projection(p) = &mut self.shortcut {
            conv_state(p, &format!("{prefix}.shortcut"), out);
        }
    }
}

/// Blocks and bottleneck width of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResNetStage {
    pub blocks: usize,
    pub width: usize,
    /// Applied in the last block of the stage.
    pub stride: usize,
}

/// Builds a ResNet v2 feature extractor.
///
/// Stem: 7×7/2 convolution with `stem_width` channels and a 3×3/2 max pool.
/// Each stage opens with a projection block and downsamples in its last
/// block. A final batch norm + ReLU produces the Grad-CAM target maps.
pub fn resnet_v2(in_channels: usize, stem_width: usize, stages: &[ResNetStage]) -> Vec<Layer> {
    let mut stem = Conv2d::new(in_channels, stem_width, 7, 2, 3, true);
    stem.input_grad = false;
    let mut layers = vec![Layer::Conv(stem), Layer::MaxPool(MaxPool2d::new(3, 2, 1))];
    let mut channels = stem_width;
    for stage in stages {
        for b in 0..stage.blocks {
            let stride = if b + 1 == stage.blocks { stage.stride } else { 1 };
            let block = Bottleneck::new(channels, stage.width, stride, b == 0);
            channels = 4 * stage.width;
            layers.push(Layer::Bottleneck(Box::new(block)));
        }
    }
    layers.push(Layer::BatchNorm(BatchNorm2d::new(channels)));
    layers.push(Layer::Relu(Relu::default()));
    layers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn bottleneck_input_gradient_matches_finite_differences() {
        for (project, stride, cin) in [(true, 2, 3), (false, 2, 8), (false, 1, 8)] {
            let mut block = Bottleneck::new(cin, 2, stride, project);
            let mut rng = seed::rng(17);
            block.init(&mut rng);
            let x = Tensor::from_vec(2, cin, 5, 5, (0..2 * cin * 25).map(|_| rng.random_range(-1.0..1.0)).collect());
            let y = block.forward_train(x.clone());
            let r: Vec<f32> = (0..y.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dx = block.backward(Tensor::from_vec(y.n, y.c, y.h, y.w, r.clone()));
            let mut loss = |x: &Tensor| -> f64 {
                let y = block.forward_train(x.clone());
                y.data.iter().zip(&r).map(|(a, b)| *a as f64 * *b as f64).sum()
            };
            let mut bad = 0;
            let mut checked = 0;
            for i in (0..x.data.len()).step_by(2) {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data[i] += 1e-2;
                xm.data[i] -= 1e-2;
                let fd = ((loss(&xp) - loss(&xm)) / 2e-2) as f32;
                checked += 1;
                if (fd - dx.data[i]).abs() > 2e-2 * (1.0 + fd.abs()) {
                    bad += 1;
                }
            }
            // ReLU kinks can spoil an occasional difference quotient.
            assert!(bad * 20 <= checked, "project={project} stride={stride}: {bad}/{checked} mismatches");
        }
    }

    #[test]
    fn stage_geometry() {
        let stages = [
            ResNetStage { blocks: 2, width: 4, stride: 2 },
            ResNetStage { blocks: 1, width: 8, stride: 1 },
        ];
        let layers = resnet_v2(3, 8, &stages);
        let shape = layers.iter().fold((3, 64, 64), |s, l| l.output_shape(s));
        // 64 -> stem 32 -> pool 16 -> stage one 8 -> stage two 8.
        assert_eq!(shape, (32, 8, 8));
    }
}
