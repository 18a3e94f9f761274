//! Conditional U-Net denoiser eps_theta(Y, X_t, alpha_bar): downsampling
//! conv stages with skip connections, two KAN blocks in the bottleneck
//! (conv-only variant available for ablations), sinusoidal conditioning
//! on alpha_bar, and twin heads for predicted noise and per-pixel
//! log-variance.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::{KanBlock, SplineGrid};
use crate::rng::normal_vec;
use crate::tensor::conv::PadMode;
use crate::tensor::param::Param;
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckKind {
    /// Two KAN blocks replacing the middle layers.
    Kan,
    /// Conv residual blocks of roughly the same parameter budget.
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KanPlacement {
    /// Both KAN blocks back to back at the lowest resolution.
    Adjacent,
    /// A conv residual block sandwiched between the two KAN blocks.
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub image_channels: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub num_kan_blocks: usize,
    pub kan_layers_per_block: usize,
    pub time_embed_dim: usize,
    pub kan_grid_size: usize,
    pub kan_order: usize,
    pub groups: usize,
    pub bottleneck: BottleneckKind,
    pub kan_placement: KanPlacement,
    /// Residual blocks in the conv-only bottleneck ablation.
    pub conv_bottleneck_blocks: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            image_channels: 3,
            base_channels: 32,
            channel_mults: vec![1, 2, 4],
            num_kan_blocks: 2,
            kan_layers_per_block: 3,
            time_embed_dim: 32,
            kan_grid_size: 5,
            kan_order: 3,
            groups: 8,
            bottleneck: BottleneckKind::Kan,
            kan_placement: KanPlacement::Adjacent,
            conv_bottleneck_blocks: 3,
        }
    }
}

impl DenoiserConfig {
    /// Noisy image concatenated channel-wise with the condition.
    pub fn in_channels(&self) -> usize {
        2 * self.image_channels
    }

    pub fn depth(&self) -> usize {
        self.channel_mults.len()
    }

    /// Spatial dims must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth() - 1)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels * self.channel_mults.last().copied().unwrap_or(1)
    }

    fn channels(&self, stage: usize) -> usize {
        self.base_channels * self.channel_mults[stage]
    }

    fn grid(&self) -> SplineGrid {
        SplineGrid::new(-1.0, 1.0, self.kan_grid_size, self.kan_order).expect("valid grid")
    }
}

fn group_count(groups: usize, channels: usize) -> usize {
    let mut g = groups.min(channels);
    while channels % g != 0 {
        g -= 1;
    }
    g
}

struct Conv2dLayer<T: Scalar> {
    weight: Param<T>,
    bias: Param<T>,
    stride: usize,
    padding: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    fn init(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        zero_init: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let w: Vec<T> = if zero_init {
            vec![T::zero(); cout * fan_in]
        } else {
            normal_vec::<T>(rng, cout * fan_in)
                .into_iter()
                .map(|v| v * T::fl(std))
                .collect()
        };
        Conv2dLayer {
            weight: Param::new(format!("{name}.weight"), w, &[cout, cin, k, k]),
            bias: Param::zeros(format!("{name}.bias"), &[cout]),
            stride,
            padding: k / 2,
        }
    }

    fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let cout = self.bias.len();
        let y = x.conv2d(
            &self.weight.on(tape),
            self.stride,
            self.padding,
            PadMode::Replicate,
        )?;
        y.add(&self.bias.on(tape).reshape(&[cout, 1, 1])?)
    }

    fn params(&self, out: &mut Vec<Param<T>>) {
        out.push(self.weight.clone());
        out.push(self.bias.clone());
    }
}

struct Linear<T: Scalar> {
    weight: Param<T>, // [in, out]
    bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    fn init(name: &str, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / n_in as f64).sqrt();
        let w: Vec<T> = normal_vec::<T>(rng, n_in * n_out)
            .into_iter()
            .map(|v| v * T::fl(std))
            .collect();
        Linear {
            weight: Param::new(format!("{name}.weight"), w, &[n_in, n_out]),
            bias: Param::zeros(format!("{name}.bias"), &[n_out]),
        }
    }

    /// [1, in] -> [1, out]
    fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        x.matmul(&self.weight.on(tape))?.add(&self.bias.on(tape))
    }

    fn params(&self, out: &mut Vec<Param<T>>) {
        out.push(self.weight.clone());
        out.push(self.bias.clone());
    }
}

struct NormLayer<T: Scalar> {
    gamma: Param<T>,
    beta: Param<T>,
    groups: usize,
}

impl<T: Scalar> NormLayer<T> {
    fn init(name: &str, channels: usize, groups: usize) -> Self {
        NormLayer {
            gamma: Param::new(format!("{name}.gamma"), vec![T::one(); channels], &[channels]),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            groups: group_count(groups, channels),
        }
    }

    fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        x.group_norm(self.groups, &self.gamma.on(tape), &self.beta.on(tape), 1e-5)
    }

    fn params(&self, out: &mut Vec<Param<T>>) {
        out.push(self.gamma.clone());
        out.push(self.beta.clone());
    }
}

/// GN -> SiLU -> conv -> +time bias -> GN -> SiLU -> conv(zero-init),
/// residual with a 1x1 projection when channel counts differ.
struct ResBlock<T: Scalar> {
    norm1: NormLayer<T>,
    conv1: Conv2dLayer<T>,
    time_proj: Linear<T>,
    norm2: NormLayer<T>,
    conv2: Conv2dLayer<T>,
    skip: Option<Conv2dLayer<T>>,
}

impl<T: Scalar> ResBlock<T> {
    fn init(
        name: &str,
        cin: usize,
        cout: usize,
        time_dim: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ResBlock {
            norm1: NormLayer::init(&format!("{name}.norm1"), cin, groups),
            conv1: Conv2dLayer::init(&format!("{name}.conv1"), cin, cout, 3, 1, false, rng),
            time_proj: Linear::init(&format!("{name}.time_proj"), time_dim, cout, rng),
            norm2: NormLayer::init(&format!("{name}.norm2"), cout, groups),
            conv2: Conv2dLayer::init(&format!("{name}.conv2"), cout, cout, 3, 1, true, rng),
            skip: if cin != cout {
                Some(Conv2dLayer::init(
                    &format!("{name}.skip"),
                    cin,
                    cout,
                    1,
                    1,
                    false,
                    rng,
                ))
            } else {
                None
            },
        }
    }

    fn forward(&self, x: &Tensor<T>, temb: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let cout = self.conv1.bias.len();
        let mut h = self.conv1.forward(&self.norm1.forward(x, tape)?.silu(), tape)?;
        let tb = self.time_proj.forward(temb, tape)?.reshape(&[cout, 1, 1])?;
        h = h.add(&tb)?;
        h = self.conv2.forward(&self.norm2.forward(&h, tape)?.silu(), tape)?;
        let sk = match &self.skip {
            Some(conv) => conv.forward(x, tape)?,
            None => x.clone(),
        };
        h.add(&sk)
    }

    fn params(&self, out: &mut Vec<Param<T>>) {
        self.norm1.params(out);
        self.conv1.params(out);
        self.time_proj.params(out);
        self.norm2.params(out);
        self.conv2.params(out);
        if let Some(s) = &self.skip {
            s.params(out);
        }
    }
}

struct Head<T: Scalar> {
    norm: NormLayer<T>,
    conv1: Conv2dLayer<T>,
    conv2: Conv2dLayer<T>, // zero-init: head outputs 0 at init
}

impl<T: Scalar> Head<T> {
    fn init(name: &str, cin: usize, cout: usize, groups: usize, rng: &mut ChaCha8Rng) -> Self {
        Head {
            norm: NormLayer::init(&format!("{name}.norm"), cin, groups),
            conv1: Conv2dLayer::init(&format!("{name}.conv1"), cin, cin, 3, 1, false, rng),
            conv2: Conv2dLayer::init(&format!("{name}.conv2"), cin, cout, 3, 1, true, rng),
        }
    }

    fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let h = self.conv1.forward(&self.norm.forward(x, tape)?.silu(), tape)?;
        self.conv2.forward(&h.silu(), tape)
    }

    fn params(&self, out: &mut Vec<Param<T>>) {
        self.norm.params(out);
        self.conv1.params(out);
        self.conv2.params(out);
    }
}

enum Bottleneck<T: Scalar> {
    Kan {
        blocks: Vec<KanBlock<T>>,
        mid: Option<ResBlock<T>>,
    },
    Conv {
        blocks: Vec<ResBlock<T>>,
    },
}

pub struct DenoiserNet<T: Scalar> {
    pub cfg: DenoiserConfig,
    time_lin1: Linear<T>,
    time_lin2: Linear<T>,
    stem: Conv2dLayer<T>,
    down_blocks: Vec<ResBlock<T>>,
    downsamples: Vec<Conv2dLayer<T>>,
    bottleneck: Bottleneck<T>,
    up_blocks: Vec<ResBlock<T>>,      // index i consumes skip i (2*ch_i -> ch_i)
    upsamples: Vec<Conv2dLayer<T>>,   // index i maps ch_i -> ch_{i-1}, i >= 1
    noise_head: Head<T>,
    uncertainty_head: Head<T>,
}

impl<T: Scalar> DenoiserNet<T> {
    pub fn init(cfg: &DenoiserConfig, rng: &mut ChaCha8Rng) -> Self {
        let depth = cfg.depth();
        let td = cfg.time_embed_dim;
        let g = cfg.groups;

        let time_lin1 = Linear::init("time.lin1", td, td, rng);
        let time_lin2 = Linear::init("time.lin2", td, td, rng);
        let stem = Conv2dLayer::init("stem", cfg.in_channels(), cfg.channels(0), 3, 1, false, rng);

        let mut down_blocks = Vec::new();
        let mut downsamples = Vec::new();
        for i in 0..depth {
            down_blocks.push(ResBlock::init(
                &format!("down{i}"),
                cfg.channels(i),
                cfg.channels(i),
                td,
                g,
                rng,
            ));
            if i + 1 < depth {
                downsamples.push(Conv2dLayer::init(
                    &format!("downsample{i}"),
                    cfg.channels(i),
                    cfg.channels(i + 1),
                    3,
                    2,
                    false,
                    rng,
                ));
            }
        }

        let bc = cfg.bottleneck_channels();
        let bottleneck = match cfg.bottleneck {
            BottleneckKind::Kan => {
                let blocks = (0..cfg.num_kan_blocks)
                    .map(|i| {
                        KanBlock::init(
                            &format!("kan.block{i}"),
                            bc,
                            cfg.kan_layers_per_block,
                            cfg.grid(),
                            rng,
                        )
                    })
                    .collect();
                let mid = match cfg.kan_placement {
                    KanPlacement::Adjacent => None,
                    KanPlacement::Sandwich => {
                        Some(ResBlock::init("kan.mid", bc, bc, td, g, rng))
                    }
                };
                Bottleneck::Kan { blocks, mid }
            }
            BottleneckKind::Conv => Bottleneck::Conv {
                blocks: (0..cfg.conv_bottleneck_blocks)
                    .map(|i| ResBlock::init(&format!("mid{i}"), bc, bc, td, g, rng))
                    .collect(),
            },
        };

        let mut up_blocks = Vec::new();
        let mut upsamples = Vec::new();
        for i in 0..depth {
            up_blocks.push(ResBlock::init(
                &format!("up{i}"),
                2 * cfg.channels(i),
                cfg.channels(i),
                td,
                g,
                rng,
            ));
            if i >= 1 {
                upsamples.push(Conv2dLayer::init(
                    &format!("upsample{i}"),
                    cfg.channels(i),
                    cfg.channels(i - 1),
                    3,
                    1,
                    false,
                    rng,
                ));
            }
        }

        let noise_head = Head::init("noise_head", cfg.channels(0), cfg.image_channels, g, rng);
        let uncertainty_head = Head::init(
            "uncertainty_head",
            cfg.channels(0),
            cfg.image_channels,
            g,
            rng,
        );

        DenoiserNet {
            cfg: cfg.clone(),
            time_lin1,
            time_lin2,
            stem,
            down_blocks,
            downsamples,
            bottleneck,
            up_blocks,
            upsamples,
            noise_head,
            uncertainty_head,
        }
    }

    /// Sinusoidal embedding of alpha_bar fed through a two-layer SiLU MLP.
    fn time_embedding(&self, alpha_bar: f64, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let d = self.cfg.time_embed_dim;
        let half = d / 2;
        let mut raw = vec![T::zero(); d];
        let s = alpha_bar * 1000.0;
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / (half.max(2) - 1) as f64).exp();
            raw[i] = T::fl((s * freq).sin());
            raw[half + i] = T::fl((s * freq).cos());
        }
        let emb = Tensor::from_vec(raw, &[1, d]);
        let h = self.time_lin1.forward(&emb, tape)?.silu();
        self.time_lin2.forward(&h, tape)
    }

    /// Predict (noise, per-pixel log-variance) for a noisy image and its
    /// low-light condition at signal level alpha_bar.
    pub fn forward(
        &self,
        x_t: &Tensor<T>,
        y: &Tensor<T>,
        alpha_bar: f64,
        tape: Option<&Tape<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if x_t.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "denoise_forward",
                lhs: x_t.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let (_, h, w) = match x_t.shape() {
            [c, h, w] if *c == self.cfg.image_channels => (*c, *h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "denoise_forward",
                    lhs: other.to_vec(),
                    rhs: vec![self.cfg.image_channels],
                })
            }
        };
        let divisor = self.cfg.divisor();
        if h % divisor != 0 || w % divisor != 0 {
            return Err(Error::Indivisible {
                h,
                w,
                divisor,
                depth: self.cfg.depth(),
            });
        }

        let temb = self.time_embedding(alpha_bar, tape)?;
        let mut x = self.stem.forward(&x_t.concat_channels(y)?, tape)?;

        let depth = self.cfg.depth();
        let mut skips = Vec::with_capacity(depth);
        for i in 0..depth {
            x = self.down_blocks[i].forward(&x, &temb, tape)?;
            skips.push(x.clone());
            if i + 1 < depth {
                x = self.downsamples[i].forward(&x, tape)?;
            }
        }

        match &self.bottleneck {
            Bottleneck::Kan { blocks, mid } => {
                for (i, b) in blocks.iter().enumerate() {
                    x = b.forward(&x, tape)?;
                    if i + 1 < blocks.len() {
                        if let Some(m) = mid {
                            x = m.forward(&x, &temb, tape)?;
                        }
                    }
                }
            }
            Bottleneck::Conv { blocks } => {
                for b in blocks {
                    x = b.forward(&x, &temb, tape)?;
                }
            }
        }

        for i in (0..depth).rev() {
            x = x.concat_channels(&skips[i])?;
            x = self.up_blocks[i].forward(&x, &temb, tape)?;
            if i >= 1 {
                x = x.upsample_nearest2x()?;
                x = self.upsamples[i - 1].forward(&x, tape)?;
            }
        }

        let eps_hat = self.noise_head.forward(&x, tape)?;
        let u = self.uncertainty_head.forward(&x, tape)?;
        Ok((eps_hat, u))
    }

    /// All learnable parameters in a stable order.
    pub fn params(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        self.time_lin1.params(&mut out);
        self.time_lin2.params(&mut out);
        self.stem.params(&mut out);
        for b in &self.down_blocks {
            b.params(&mut out);
        }
        for d in &self.downsamples {
            d.params(&mut out);
        }
        match &self.bottleneck {
            Bottleneck::Kan { blocks, mid } => {
                for b in blocks {
                    b.params(&mut out);
                }
                if let Some(m) = mid {
                    m.params(&mut out);
                }
            }
            Bottleneck::Conv { blocks } => {
                for b in blocks {
                    b.params(&mut out);
                }
            }
        }
        for b in &self.up_blocks {
            b.params(&mut out);
        }
        for u in &self.upsamples {
            u.params(&mut out);
        }
        self.noise_head.params(&mut out);
        self.uncertainty_head.params(&mut out);
        out
    }

    /// Parameters of the uncertainty head only.
    pub fn uncertainty_params(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        self.uncertainty_head.params(&mut out);
        out
    }

    /// Spline coefficient parameters of all KAN blocks (gradient-flow
    /// audits).
    pub fn spline_coefficient_params(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        if let Bottleneck::Kan { blocks, .. } = &self.bottleneck {
            for b in blocks {
                for l in &b.layers {
                    out.push(l.coefficients.clone());
                }
            }
        }
        out
    }

    /// Mark the uncertainty head frozen: forward still produces u, the
    /// optimizer and gradient writes skip its parameters.
    pub fn freeze_uncertainty(&self) {
        for p in self.uncertainty_params() {
            p.set_frozen(true);
        }
    }

    pub fn uncertainty_frozen(&self) -> bool {
        let ps = self.uncertainty_params();
        !ps.is_empty() && ps.iter().all(|p| p.frozen())
    }

    /// Total learnable scalar count plus a per-submodule breakdown keyed
    /// by the first path segment of each parameter name.
    pub fn count_parameters(&self) -> (usize, Vec<(String, usize)>) {
        let mut total = 0usize;
        let mut by_module: Vec<(String, usize)> = Vec::new();
        for p in self.params() {
            let name = p.name();
            let prefix = name.split('.').next().unwrap_or("").to_string();
            total += p.len();
            match by_module.iter_mut().find(|(k, _)| *k == prefix) {
                Some((_, n)) => *n += p.len(),
                None => by_module.push((prefix, p.len())),
            }
        }
        (total, by_module)
    }
}
