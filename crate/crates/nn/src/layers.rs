//! Network architectures: an encoder–decoder U-Net and a convolutional GRU cell.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{conv, init_conv, Bound, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    UNet,
    ConvGru,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub kind: Architecture,
    pub base_filters: usize,
    /// Ignored for [`Architecture::ConvGru`].
    pub pooling_levels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl NetworkConfig {
    pub fn unet(in_channels: usize, out_channels: usize, base_filters: usize, pooling_levels: usize) -> Self {
        Self { kind: Architecture::UNet, base_filters, pooling_levels, in_channels, out_channels }
    }

    pub fn conv_gru(in_channels: usize, out_channels: usize, hidden: usize) -> Self {
        Self { kind: Architecture::ConvGru, base_filters: hidden, pooling_levels: 0, in_channels, out_channels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(NnError::InvalidArgument(format!("filters and channel counts must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Rejects spatial sizes that do not survive `pooling_levels` halvings.
    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let d = 1usize << self.pooling_levels;
        if h % d != 0 || w % d != 0 {
            return Err(NnError::Shape(format!("spatial dims {h}×{w} not divisible by 2^{}", self.pooling_levels)));
        }
        Ok(())
    }
}

/// U-Net with two 3×3 conv + ReLU blocks per level, average pooling on the way
/// down, nearest upsampling and skip concatenation on the way up, and a linear
/// 1×1 output conv.
#[derive(Clone, Debug)]
pub struct UNet {
    pub cfg: NetworkConfig,
    pub prefix: String,
}

impl UNet {
    pub fn new(cfg: NetworkConfig, prefix: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind != Architecture::UNet {
            return Err(NnError::InvalidArgument("UNet built from a non-UNet config".into()));
        }
        Ok(Self { cfg, prefix: prefix.into() })
    }

    fn filters(&self, level: usize) -> usize {
        self.cfg.base_filters << level
    }

    /// Every conv layer as `(name, c_in, c_out, kernel)`, in forward order.
    pub fn layers(&self) -> Vec<(String, usize, usize, usize)> {
        let p = &self.prefix;
        let levels = self.cfg.pooling_levels;
        let mut out = Vec::new();
        for l in 0..=levels {
            let c_in = if l == 0 { self.cfg.in_channels } else { self.filters(l - 1) };
            out.push((format!("{p}.enc{l}.0"), c_in, self.filters(l), 3));
            out.push((format!("{p}.enc{l}.1"), self.filters(l), self.filters(l), 3));
        }
        for l in (0..levels).rev() {
            let c_in = self.filters(l + 1) + self.filters(l);
            out.push((format!("{p}.dec{l}.0"), c_in, self.filters(l), 3));
            out.push((format!("{p}.dec{l}.1"), self.filters(l), self.filters(l), 3));
        }
        out.push((format!("{p}.out"), self.filters(0), self.cfg.out_channels, 1));
        out
    }

    /// Glorot-initialized weights, zero biases. With `zero_output` the final
    /// 1×1 conv starts at zero so the network initially outputs 0.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, zero_output: bool) {
        let out_name = format!("{}.out", self.prefix);
        for (name, c_in, c_out, k) in self.layers() {
            let zero = zero_output && name == out_name;
            init_conv(store, &name, c_in, c_out, k, zero, rng);
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &Bound, x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).dims4()?;
        if c != self.cfg.in_channels {
            return Err(NnError::Shape(format!("UNet expects {} input channels, got {c}", self.cfg.in_channels)));
        }
        self.cfg.check_spatial(h, w)?;
        let p = &self.prefix;
        let levels = self.cfg.pooling_levels;

        let mut skips = Vec::with_capacity(levels);
        let mut hcur = x;
        for l in 0..=levels {
            if l > 0 {
                hcur = g.pool2(hcur)?;
            }
            hcur = conv(g, params, &format!("{p}.enc{l}.0"), hcur)?;
            hcur = g.relu(hcur);
            hcur = conv(g, params, &format!("{p}.enc{l}.1"), hcur)?;
            hcur = g.relu(hcur);
            if l < levels {
                skips.push(hcur);
            }
        }
        for l in (0..levels).rev() {
            let up = g.upsample2(hcur)?;
            hcur = g.concat_channels(&[skips[l], up])?;
            hcur = conv(g, params, &format!("{p}.dec{l}.0"), hcur)?;
            hcur = g.relu(hcur);
            hcur = conv(g, params, &format!("{p}.dec{l}.1"), hcur)?;
            hcur = g.relu(hcur);
        }
        conv(g, params, &format!("{p}.out"), hcur)
    }
}

/// Convolutional GRU cell followed by a 1×1 output projection.
///
/// `z = σ(Wz*x + Uz*h)`, `r = σ(Wr*x + Ur*h)`, `ĥ = tanh(W*x + U*(r⊙h))`,
/// `h' = (1 − z)⊙h + z⊙ĥ`, output `= Wo*h'`.
#[derive(Clone, Debug)]
pub struct ConvGru {
    pub cfg: NetworkConfig,
    pub prefix: String,
}

impl ConvGru {
    pub fn new(cfg: NetworkConfig, prefix: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind != Architecture::ConvGru {
            return Err(NnError::InvalidArgument("ConvGru built from a non-GRU config".into()));
        }
        Ok(Self { cfg, prefix: prefix.into() })
    }

    pub fn hidden_channels(&self) -> usize {
        self.cfg.base_filters
    }

    pub fn layers(&self) -> Vec<(String, usize, usize, usize)> {
        let p = &self.prefix;
        let (ci, hc) = (self.cfg.in_channels, self.hidden_channels());
        let mut out = Vec::new();
        for gate in ["z", "r", "h"] {
            out.push((format!("{p}.x{gate}"), ci, hc, 3));
            out.push((format!("{p}.h{gate}"), hc, hc, 3));
        }
        out.push((format!("{p}.out"), hc, self.cfg.out_channels, 1));
        out
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, zero_output: bool) {
        let out_name = format!("{}.out", self.prefix);
        for (name, c_in, c_out, k) in self.layers() {
            init_conv(store, &name, c_in, c_out, k, zero_output && name == out_name, rng);
        }
    }

    /// One recurrent step: returns `(output, next_hidden)`.
    pub fn step(&self, g: &mut Graph, params: &Bound, x: Var, h: Var) -> Result<(Var, Var)> {
        let [n, c, hh, ww] = g.value(x).dims4()?;
        let hs = g.value(h).dims4()?;
        if c != self.cfg.in_channels || hs != [n, self.hidden_channels(), hh, ww] {
            return Err(NnError::Shape(format!("ConvGru step: input {:?}, hidden {:?}", g.shape(x), hs)));
        }
        let p = &self.prefix;
        let gate = |g: &mut Graph, name: &str, hin: Var| -> Result<Var> {
            let a = conv(g, params, &format!("{p}.x{name}"), x)?;
            let b = conv(g, params, &format!("{p}.h{name}"), hin)?;
            g.add(a, b)
        };
        let z = gate(g, "z", h)?;
        let z = g.sigmoid(z);
        let r = gate(g, "r", h)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let cand = gate(g, "h", rh)?;
        let cand = g.tanh(cand);
        // h' = h + z ⊙ (ĥ − h)
        let diff = g.sub(cand, h)?;
        let upd = g.mul(z, diff)?;
        let h_next = g.add(h, upd)?;
        let out = conv(g, params, &format!("{p}.out"), h_next)?;
        Ok((out, h_next))
    }
}
