//! ResNet-50 feature extractor with torchvision parameter names, so an
//! exported torchvision state dict loads without renaming.

use marsdust_nn::layer::join;
use marsdust_nn::{
    Activation, ActivationLayer, BatchNorm2d, Conv2d, Init, Layer, MaxPool2d, Param, Pass, Tensor,
};
use rand::Rng;

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

fn conv(cin: usize, cout: usize, k: usize, s: usize, p: usize, rng: &mut impl Rng) -> Conv2d {
    Conv2d::new(cin, cout, k, s, p, false, Init::HeNormal, rng)
}

fn bn(c: usize) -> BatchNorm2d {
    BatchNorm2d::new(c, BN_EPS, BN_MOMENTUM)
}

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
    relu1: ActivationLayer,
    relu2: ActivationLayer,
    relu3: ActivationLayer,
}

impl Bottleneck {
    fn new(cin: usize, width: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let cout = width * 4;
        let downsample =
            (stride != 1 || cin != cout).then(|| (conv(cin, cout, 1, stride, 0, rng), bn(cout)));
        Self {
            conv1: conv(cin, width, 1, 1, 0, rng),
            bn1: bn(width),
            conv2: conv(width, width, 3, stride, 1, rng),
            bn2: bn(width),
            conv3: conv(width, cout, 1, 1, 0, rng),
            bn3: bn(cout),
            downsample,
            relu1: ActivationLayer::new(Activation::Relu),
            relu2: ActivationLayer::new(Activation::Relu),
            relu3: ActivationLayer::new(Activation::Relu),
        }
    }
}

impl Layer for Bottleneck {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let h = self
            .relu1
            .forward(&self.bn1.forward(&self.conv1.forward(x, pass), pass), pass);
        let h = self
            .relu2
            .forward(&self.bn2.forward(&self.conv2.forward(&h, pass), pass), pass);
        let mut h = self.bn3.forward(&self.conv3.forward(&h, pass), pass);
        match &mut self.downsample {
            Some((c, b)) => h.add_assign(&b.forward(&c.forward(x, pass), pass)),
            None => h.add_assign(x),
        }
        self.relu3.forward(&h, pass)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let g = self.relu3.backward(grad_out);
        let mut gx = match &mut self.downsample {
            Some((c, b)) => c.backward(&b.backward(&g)),
            None => g.clone(),
        };
        let h = self.conv3.backward(&self.bn3.backward(&g));
        let h = self
            .conv2
            .backward(&self.bn2.backward(&self.relu2.backward(&h)));
        let h = self
            .conv1
            .backward(&self.bn1.backward(&self.relu1.backward(&h)));
        gx.add_assign(&h);
        gx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.conv3.visit_params(&join(prefix, "conv3"), f);
        self.bn3.visit_params(&join(prefix, "bn3"), f);
        if let Some((c, b)) = &mut self.downsample {
            c.visit_params(&join(prefix, "downsample.0"), f);
            b.visit_params(&join(prefix, "downsample.1"), f);
        }
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        let s = self.conv1.output_shape(input);
        let s = self.conv2.output_shape(&s);
        self.conv3.output_shape(&s)
    }

    fn kind(&self) -> &'static str {
        "bottleneck"
    }
}

/// ResNet-50 up to the last residual stage (no pooling or classifier):
/// `3 x 224 x 224` maps to `2048 x 7 x 7`.
pub struct ResNet50 {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu: ActivationLayer,
    maxpool: MaxPool2d,
    stages: Vec<Vec<Bottleneck>>,
}

pub const RESNET50_BLOCKS: [usize; 4] = [3, 4, 6, 3];
pub const RESNET50_FEATURES: usize = 2048;

impl ResNet50 {
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut stages = Vec::new();
        let mut cin = 64;
        for (i, &blocks) in RESNET50_BLOCKS.iter().enumerate() {
            let width = 64 << i;
            let stride = if i == 0 { 1 } else { 2 };
            let mut stage = Vec::new();
            for b in 0..blocks {
                stage.push(Bottleneck::new(
                    cin,
                    width,
                    if b == 0 { stride } else { 1 },
                    rng,
                ));
                cin = width * 4;
            }
            stages.push(stage);
        }
        Self {
            conv1: conv(3, 64, 7, 2, 3, rng),
            bn1: bn(64),
            relu: ActivationLayer::new(Activation::Relu),
            maxpool: MaxPool2d::new(3, 2, 1),
            stages,
        }
    }
}

impl Layer for ResNet50 {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let h = self.conv1.forward(x, pass);
        let h = self.relu.forward(&self.bn1.forward(&h, pass), pass);
        let mut h = self.maxpool.forward(&h, pass);
        for stage in &mut self.stages {
            for block in stage {
                h = block.forward(&h, pass);
            }
        }
        h
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                g = block.backward(&g);
            }
        }
        let g = self.maxpool.backward(&g);
        let g = self.bn1.backward(&self.relu.backward(&g));
        self.conv1.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_params(&join(prefix, &format!("layer{}.{b}", i + 1)), f);
            }
        }
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        let mut s = self.maxpool.output_shape(&self.conv1.output_shape(input));
        for stage in &self.stages {
            for block in stage {
                s = block.output_shape(&s);
            }
        }
        s
    }

    fn kind(&self) -> &'static str {
        "resnet50"
    }
}
