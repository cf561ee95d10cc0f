use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::NUM_CLASSES;
use crate::error::{Error, Result};

/// The four architectures of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "cres")]
    CRes,
    #[serde(rename = "cres+nres")]
    CResNRes,
    #[serde(rename = "dsres")]
    DSRes,
    #[serde(rename = "dsres+nres")]
    DSResNRes,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::CRes,
        Variant::CResNRes,
        Variant::DSRes,
        Variant::DSResNRes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CRes => "CRes",
            Variant::CResNRes => "CRes+NRes",
            Variant::DSRes => "DSRes",
            Variant::DSResNRes => "DSRes+NRes",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown network variant {s:?}")))
    }
}

/// Input convolution block: `d x d` convolution, batchnorm, relu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Residual block geometry, shared by the separable and standard forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DSResBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl DSResBlockConfig {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        DSResBlockConfig {
            in_channels,
            out_channels,
            kernel: 3,
            stride,
        }
    }

    /// Whether the skip path needs a 1x1 projection.
    pub fn projects(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NResBlockConfig {
    pub channels: usize,
    /// Width of the phi, psi and g projections.
    pub embed_channels: usize,
}

impl NResBlockConfig {
    pub fn new(channels: usize) -> Self {
        NResBlockConfig {
            channels,
            embed_channels: (channels / 2).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BlockConfig {
    /// Residual block of two standard convolutions.
    CRes(DSResBlockConfig),
    /// Residual block of two depthwise-separable convolutions.
    DSRes(DSResBlockConfig),
    NRes(NResBlockConfig),
}

impl BlockConfig {
    pub fn out_channels(&self) -> usize {
        match self {
            BlockConfig::CRes(b) | BlockConfig::DSRes(b) => b.out_channels,
            BlockConfig::NRes(b) => b.channels,
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            BlockConfig::CRes(b) | BlockConfig::DSRes(b) => b.stride,
            BlockConfig::NRes(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NRNetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    /// Side of the square input canvas.
    pub input_size: usize,
    pub input_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<ConvBlockConfig>,
    #[serde(default)]
    pub blocks: Vec<BlockConfig>,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Output extent of a `d x d` convolution with "same" padding.
pub(crate) fn conv_out(size: usize, d: usize, stride: usize) -> usize {
    (size + 2 * (d / 2) - d) / stride + 1
}

impl NRNetConfig {
    fn base(input_size: usize, stem: Option<ConvBlockConfig>, blocks: Vec<BlockConfig>) -> Self {
        NRNetConfig {
            variant: None,
            input_size,
            input_channels: 1,
            stem,
            blocks,
            num_classes: NUM_CLASSES,
            bn_eps: BN_EPS,
            bn_momentum: BN_MOMENTUM,
        }
    }

    /// Desk-scale network: 8-channel stem, separable stages at 16 and 32
    /// channels, one nonlocal block at 32.
    pub fn tiny(input_size: usize) -> Self {
        Self::base(
            input_size,
            Some(ConvBlockConfig {
                out_channels: 8,
                kernel: 3,
                stride: 2,
            }),
            vec![
                BlockConfig::DSRes(DSResBlockConfig::new(8, 16, 2)),
                BlockConfig::DSRes(DSResBlockConfig::new(16, 32, 2)),
                BlockConfig::NRes(NResBlockConfig::new(32)),
            ],
        )
    }

    /// Classifier only; no stem and no residual blocks.
    pub fn empty(input_size: usize) -> Self {
        Self::base(input_size, None, Vec::new())
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    /// Channels entering the classifier.
    pub fn final_channels(&self) -> usize {
        self.blocks
            .last()
            .map(BlockConfig::out_channels)
            .or(self.stem.map(|s| s.out_channels))
            .unwrap_or(self.input_channels)
    }

    pub fn max_channels(&self) -> usize {
        self.blocks
            .iter()
            .map(BlockConfig::out_channels)
            .chain(self.stem.map(|s| s.out_channels))
            .max()
            .unwrap_or(self.input_channels)
    }

    pub fn nres_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| matches!(b, BlockConfig::NRes(_)))
            .count()
    }

    /// Spatial side of the feature map after the stem and every block.
    pub fn final_size(&self) -> usize {
        let mut s = self.input_size;
        if let Some(stem) = self.stem {
            s = conv_out(s, stem.kernel, stem.stride);
        }
        for b in &self.blocks {
            if let BlockConfig::CRes(r) | BlockConfig::DSRes(r) = b {
                s = conv_out(s, r.kernel, r.stride);
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || self.input_channels == 0 {
            return bad("input size and channels must be positive".into());
        }
        if self.num_classes != NUM_CLASSES {
            return bad(format!("classifier must have {NUM_CLASSES} outputs"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("batchnorm eps must be positive and momentum in [0,1)".into());
        }
        let mut channels = self.input_channels;
        let mut size = self.input_size;
        if let Some(stem) = self.stem {
            if stem.kernel % 2 == 0 || stem.stride == 0 || stem.out_channels == 0 {
                return bad(format!("invalid stem {stem:?}"));
            }
            channels = stem.out_channels;
            size = conv_out(size, stem.kernel, stem.stride);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                BlockConfig::CRes(r) | BlockConfig::DSRes(r) => {
                    if r.kernel % 2 == 0 || r.stride == 0 {
                        return bad(format!("block {i}: kernel must be odd and stride positive"));
                    }
                    if r.in_channels != channels {
                        return bad(format!(
                            "block {i}: expects {} input channels, previous layer gives {channels}",
                            r.in_channels
                        ));
                    }
                    if r.out_channels < r.in_channels {
                        return bad(format!("block {i}: output channels below input channels"));
                    }
                    channels = r.out_channels;
                    size = conv_out(size, r.kernel, r.stride);
                }
                BlockConfig::NRes(n) => {
                    if n.channels != channels {
                        return bad(format!(
                            "block {i}: nonlocal block on {} channels, previous layer gives {channels}",
                            n.channels
                        ));
                    }
                    if n.embed_channels == 0 || n.embed_channels > n.channels {
                        return bad(format!(
                            "block {i}: embedding width must be in 1..={}",
                            n.channels
                        ));
                    }
                }
            }
            if size == 0 {
                return bad(format!("block {i}: feature map vanished"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NRNetConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ablation architecture at the given canvas size: a 64-channel stride-2 stem
/// followed by stages at 128 and 256 channels (stride 2), then either a
/// 512-channel residual stage or a nonlocal block at 256.
pub fn build_variant(variant: Variant, input_size: usize) -> NRNetConfig {
    let res = |c_in, c_out, stride| {
        let b = DSResBlockConfig::new(c_in, c_out, stride);
        match variant {
            Variant::CRes | Variant::CResNRes => BlockConfig::CRes(b),
            Variant::DSRes | Variant::DSResNRes => BlockConfig::DSRes(b),
        }
    };
    let mut blocks = vec![res(64, 128, 2), res(128, 256, 2)];
    match variant {
        Variant::CRes | Variant::DSRes => blocks.push(res(256, 512, 1)),
        Variant::CResNRes | Variant::DSResNRes => {
            blocks.push(BlockConfig::NRes(NResBlockConfig::new(256)))
        }
    }
    let mut cfg = NRNetConfig::base(
        input_size,
        Some(ConvBlockConfig {
            out_channels: 64,
            kernel: 3,
            stride: 2,
        }),
        blocks,
    );
    cfg.variant = Some(variant);
    cfg
}
