use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// Number of encoder blocks (the last one is the bottleneck).
pub const ENCODER_BLOCKS: usize = 5;
/// Number of decoder (upsampling) blocks.
pub const DECODER_BLOCKS: usize = 4;
/// Spatial extents must be divisible by this (four 2x2 poolings).
pub const SPATIAL_MULTIPLE: usize = 1 << (ENCODER_BLOCKS - 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Baseline U-Net: batch norm, nearest upsampling, dropout 0.5 at the
    /// bottleneck only.
    UNet,
    /// Dropout after every block except the first encoder and last decoder
    /// block; 0.1 everywhere, 0.5 at the bottleneck.
    U2Net,
    /// U2-Net with an extra log-variance output trained with noisy logits.
    BUNet,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::UNet => "unet",
            Variant::U2Net => "u2net",
            Variant::BUNet => "bunet",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unet" | "u-net" => Ok(Variant::UNet),
            "u2net" | "u2-net" => Ok(Variant::U2Net),
            "bunet" | "bu-net" => Ok(Variant::BUNet),
            other => Err(Error::invalid(format!(
                "unknown architecture {other:?} (expected unet, u2net or bunet)"
            ))),
        }
    }
}

/// Full description of a network: enough to rebuild it from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    /// Dropout rate per block, encoder blocks first then decoder blocks;
    /// 0 means no dropout site.
    pub dropout_plan: Vec<f32>,
    pub input_channels: usize,
    pub output_channels: usize,
    pub leaky_slope: f32,
    pub bn_eps: f32,
    pub bn_momentum: f32,
}

impl ArchitectureSpec {
    /// Full-width network: encoder 64..1024, decoder 512..64.
    pub fn new(variant: Variant) -> Self {
        Self::with_base_width(variant, 64)
    }

    /// Same topology with every channel count scaled so the first encoder
    /// block has `base` channels.
    pub fn with_base_width(variant: Variant, base: usize) -> Self {
        let encoder_channels: Vec<usize> = (0..ENCODER_BLOCKS).map(|i| base << i).collect();
        let decoder_channels: Vec<usize> = (0..DECODER_BLOCKS).rev().map(|i| base << i).collect();
        let dropout_plan = match variant {
            Variant::UNet => {
                let mut plan = vec![0.0; ENCODER_BLOCKS + DECODER_BLOCKS];
                plan[ENCODER_BLOCKS - 1] = 0.5;
                plan
            }
            Variant::U2Net | Variant::BUNet => (0..ENCODER_BLOCKS + DECODER_BLOCKS)
                .map(|b| {
                    if b == 0 || b == ENCODER_BLOCKS + DECODER_BLOCKS - 1 {
                        0.0
                    } else if b == ENCODER_BLOCKS - 1 {
                        0.5
                    } else {
                        0.1
                    }
                })
                .collect(),
        };
        ArchitectureSpec {
            variant,
            encoder_channels,
            decoder_channels,
            dropout_plan,
            input_channels: 1,
            output_channels: if variant == Variant::BUNet { 3 } else { 2 },
            // The baseline keeps the plain ReLU of the original U-Net.
            leaky_slope: if variant == Variant::UNet { 0.0 } else { 0.01 },
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Copy of this spec with every dropout site removed.
    pub fn without_dropout(&self) -> Self {
        ArchitectureSpec {
            dropout_plan: vec![0.0; self.dropout_plan.len()],
            ..self.clone()
        }
    }

    /// `(block index, rate)` for every block that applies dropout.
    pub fn dropout_sites(&self) -> Vec<(usize, f32)> {
        self.dropout_plan
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (i, p))
            .collect()
    }

    /// Number of segmentation classes (the BU-Net's extra channel is a
    /// log-variance, not a class).
    pub fn classes(&self) -> usize {
        if self.variant == Variant::BUNet {
            self.output_channels - 1
        } else {
            self.output_channels
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != ENCODER_BLOCKS
            || self.decoder_channels.len() != DECODER_BLOCKS
        {
            return Err(Error::invalid(format!(
                "need {ENCODER_BLOCKS} encoder and {DECODER_BLOCKS} decoder blocks"
            )));
        }
        if self.dropout_plan.len() != ENCODER_BLOCKS + DECODER_BLOCKS {
            return Err(Error::invalid("dropout plan needs one rate per block"));
        }
        if let Some(p) = self.dropout_plan.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        let all = self.encoder_channels.iter().chain(&self.decoder_channels);
        if all.clone().any(|&c| c == 0) || self.input_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        let want_out = if self.variant == Variant::BUNet { 3 } else { 2 };
        if self.output_channels != want_out {
            return Err(Error::invalid(format!(
                "{} needs {want_out} output channels, got {}",
                self.variant, self.output_channels
            )));
        }
        if self.leaky_slope < 0.0 || self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("invalid activation or batch-norm constants"));
        }
        Ok(())
    }
}
