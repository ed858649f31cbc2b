use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DecayOperator, ModelError, NetConfig};
use crate::autodiff::{Tape, Tensor, Var};

/// Kernel and bias of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv {
    /// Kernel and bias uniform on `±1/√fan_in`. The He-normal scale is about
    /// 2.4 times wider and makes Adam at lr 0.01 blow the body up within a
    /// handful of steps on noisy inputs.
    fn fan_in_uniform(cout: usize, cin: usize, size: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((cin * size * size) as f64).sqrt();
        let kernel = Tensor::uniform(&[cout, cin, size, size], -bound, bound, rng);
        Conv {
            kernel,
            bias: Tensor::uniform(&[cout], -bound, bound, rng),
        }
    }
}

/// Every learned tensor of a model plus the configuration it was built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    pub enc1: [Conv; 2],
    pub enc2: [Conv; 2],
    pub bottleneck: [Conv; 2],
    pub dec2: [Conv; 2],
    pub dec1: [Conv; 2],
    /// 1×1 conv emitting the `d`-channel state proposal.
    pub out: Conv,
    /// Segmentation head `G`: 1×1 conv from `l` channels to `k` class logits.
    pub head: Conv,
    pub decay: DecayOperator,
}

impl ModelParams {
    /// Fan-in-scaled uniform convolutions, a zero proposal layer, and `Q`,
    /// `Q⁻¹` drawn independently from a scaled normal.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w1, w2, w3] = config.widths;
        let cin = config.in_channels();
        let d = config.state_channels();
        let pair = |a: usize, b: usize, rng: &mut ChaCha8Rng| {
            [
                Conv::fan_in_uniform(b, a, 3, rng),
                Conv::fan_in_uniform(b, b, 3, rng),
            ]
        };
        let enc1 = pair(cin, w1, &mut rng);
        let enc2 = pair(w1, w2, &mut rng);
        let bottleneck = pair(w2, w3, &mut rng);
        let dec2 = pair(w3 + w2, w2, &mut rng);
        let dec1 = pair(w2 + w1, w1, &mut rng);
        // The proposal layer starts at zero so h(t) begins near the origin;
        // a random start saturates the head and the clamped loss goes flat.
        let out = Conv {
            kernel: Tensor::zeros(&[d, w1, 1, 1]),
            bias: Tensor::zeros(&[d]),
        };
        let head = Conv::fan_in_uniform(config.classes, config.seg_channels, 1, &mut rng);
        let std = (2.0 / d as f64).sqrt();
        let decay = DecayOperator {
            q: Tensor::randn(&[d, d], std, &mut rng),
            q_inv: Tensor::randn(&[d, d], std, &mut rng),
            tau: config.tau,
        };
        Ok(ModelParams {
            config: config.clone(),
            enc1,
            enc2,
            bottleneck,
            dec2,
            dec1,
            out,
            head,
            decay,
        })
    }

    fn convs(&self) -> Vec<(&'static str, &Conv)> {
        vec![
            ("enc1.0", &self.enc1[0]),
            ("enc1.1", &self.enc1[1]),
            ("enc2.0", &self.enc2[0]),
            ("enc2.1", &self.enc2[1]),
            ("bottleneck.0", &self.bottleneck[0]),
            ("bottleneck.1", &self.bottleneck[1]),
            ("dec2.0", &self.dec2[0]),
            ("dec2.1", &self.dec2[1]),
            ("dec1.0", &self.dec1[0]),
            ("dec1.1", &self.dec1[1]),
            ("out", &self.out),
            ("head", &self.head),
        ]
    }

    /// Parameter tensors in declaration order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (name, c) in self.convs() {
            v.push((format!("{name}.kernel"), &c.kernel));
            v.push((format!("{name}.bias"), &c.bias));
        }
        v.push(("decay.q".into(), &self.decay.q));
        v.push(("decay.q_inv".into(), &self.decay.q_inv));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        let convs = self
            .enc1
            .iter_mut()
            .chain(self.enc2.iter_mut())
            .chain(self.bottleneck.iter_mut())
            .chain(self.dec2.iter_mut())
            .chain(self.dec1.iter_mut())
            .chain([&mut self.out, &mut self.head]);
        for c in convs {
            v.push(&mut c.kernel);
            v.push(&mut c.bias);
        }
        v.push(&mut self.decay.q);
        v.push(&mut self.decay.q_inv);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundParams {
        let vars: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect();
        let conv = |i: usize| BoundConv {
            kernel: vars[2 * i],
            bias: vars[2 * i + 1],
        };
        BoundParams {
            enc1: [conv(0), conv(1)],
            enc2: [conv(2), conv(3)],
            bottleneck: [conv(4), conv(5)],
            dec2: [conv(6), conv(7)],
            dec1: [conv(8), conv(9)],
            out: conv(10),
            head: conv(11),
            q: vars[24],
            q_inv: vars[25],
            tau: self.decay.tau,
            config: self.config.clone(),
            all: vars,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundConv {
    pub kernel: Var,
    pub bias: Var,
}

/// Tape handles for every parameter of a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub enc1: [BoundConv; 2],
    pub enc2: [BoundConv; 2],
    pub bottleneck: [BoundConv; 2],
    pub dec2: [BoundConv; 2],
    pub dec1: [BoundConv; 2],
    pub out: BoundConv,
    pub head: BoundConv,
    pub q: Var,
    pub q_inv: Var,
    pub tau: f64,
    pub config: NetConfig,
    /// Same order as [`ModelParams::named_tensors`].
    pub all: Vec<Var>,
}

impl BoundParams {
    /// Gradients in declaration order; parameters the loss never reached get
    /// zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.all
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
            })
            .collect()
    }
}
