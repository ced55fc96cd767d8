//! Layer blocks assembled from graph ops: conv, dense, MLP, the strided
//! encoder and the U-Net style decoder that mirrors it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Graph, ParamId, ParamStore, Result, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        zero_init: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let shape = [out_channels, in_channels, kernel, kernel];
        let weight = if zero_init {
            store.add(format!("{name}.weight"), Tensor::zeros(&shape))?
        } else {
            store.add_kaiming(format!("{name}.weight"), &shape, in_channels * kernel * kernel, rng)?
        };
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
        Ok(Self {
            weight,
            bias,
            stride,
            pad: kernel / 2,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        zero_init: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = if zero_init {
            store.add(format!("{name}.weight"), Tensor::zeros(&[outputs, inputs]))?
        } else {
            store.add_kaiming(format!("{name}.weight"), &[outputs, inputs], inputs, rng)?
        };
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]))?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }
}

/// Dense layers with ReLU between them; the last layer is linear and zero-initialized.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let last = i + 2 == widths.len();
            layers.push(Linear::new(store, &format!("{name}.{i}"), pair[0], pair[1], last, rng)?);
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// Widths of the strided backbone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    /// Output channels of each stride-2 stage.
    pub stages: Vec<usize>,
    /// Width of the pooled global feature.
    pub feature: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stages: vec![16, 32, 64, 64],
            feature: 64,
        }
    }
}

pub struct EncoderOutput {
    /// Stage activations; stage `i` has stride `2^(i+1)`.
    pub stages: Vec<Var>,
    /// Globally pooled feature `[N, feature]`.
    pub global: Var,
}

/// Stack of stride-2 3x3 conv stages followed by global pooling and a dense layer.
#[derive(Clone, Debug)]
pub struct Encoder {
    stages: Vec<Conv2d>,
    fc: Linear,
    config: BackboneConfig,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        config: &BackboneConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut stages = Vec::new();
        let mut prev = in_channels;
        for (i, &c) in config.stages.iter().enumerate() {
            stages.push(Conv2d::new(store, &format!("{name}.stage{i}"), prev, c, 3, 2, false, rng)?);
            prev = c;
        }
        let fc = Linear::new(store, &format!("{name}.fc"), prev, config.feature, false, rng)?;
        Ok(Self {
            stages,
            fc,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<EncoderOutput> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let c = stage.forward(g, store, h)?;
            h = g.relu(c);
            outs.push(h);
        }
        let pooled = g.global_avg_pool(h)?;
        let f = self.fc.forward(g, store, pooled)?;
        let global = g.relu(f);
        Ok(EncoderOutput { stages: outs, global })
    }
}

/// Decoder mirroring an [`Encoder`]: upsample, concatenate the matching
/// encoder stage, conv. Stops at stride `2^out_level`; level 0 also
/// concatenates the raw input before a 1x1 head.
#[derive(Clone, Debug)]
pub struct UNetDecoder {
    ups: Vec<Conv2d>,
    head: Conv2d,
    out_level: usize,
}

impl UNetDecoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        config: &BackboneConfig,
        out_level: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let s = config.stages.len();
        assert!(s >= 1 && out_level < s, "decoder level {out_level} for {s} stages");
        let mut ups = Vec::new();
        let mut prev = config.stages[s - 1];
        let first = out_level.saturating_sub(1);
        for i in (first..s - 1).rev() {
            let c = config.stages[i];
            ups.push(Conv2d::new(store, &format!("{name}.up{i}"), prev + c, c, 3, 1, false, rng)?);
            prev = c;
        }
        let (head_in, kernel) = if out_level == 0 {
            (prev + in_channels, 1)
        } else {
            (prev, 3)
        };
        let head = Conv2d::new(store, &format!("{name}.head"), head_in, out_channels, kernel, 1, true, rng)?;
        Ok(Self {
            ups,
            head,
            out_level,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: Var,
        enc: &EncoderOutput,
    ) -> Result<Var> {
        let s = enc.stages.len();
        let mut d = enc.stages[s - 1];
        let first = self.out_level.saturating_sub(1);
        for (conv, i) in self.ups.iter().zip((first..s - 1).rev()) {
            let up = g.upsample2x(d)?;
            let cat = g.concat(&[up, enc.stages[i]])?;
            let c = conv.forward(g, store, cat)?;
            d = g.relu(c);
        }
        if self.out_level == 0 {
            let up = g.upsample2x(d)?;
            d = g.concat(&[up, input])?;
        }
        self.head.forward(g, store, d)
    }
}
