use serde::{Deserialize, Serialize};

use crate::error::{Result, TarError};

/// Which pieces of the block structure are present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Residual shortcuts and a leaky final encoder activation.
    #[default]
    Full,
    /// No shortcut additions; leaky final encoder activation.
    LeakyNoResidual,
    /// No shortcut additions; plain rectifier at the end of the encoder.
    ReluNoResidual,
}

impl Variant {
    pub fn residual(self) -> bool {
        matches!(self, Variant::Full)
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::LeakyNoResidual => 1,
            Variant::ReluNoResidual => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Variant::Full),
            1 => Some(Variant::LeakyNoResidual),
            2 => Some(Variant::ReluNoResidual),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LeakyNoResidual => "leaky-no-residual",
            Variant::ReluNoResidual => "relu-no-residual",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = TarError;

    fn from_str(s: &str) -> Result<Self> {
        [Variant::Full, Variant::LeakyNoResidual, Variant::ReluNoResidual]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                TarError::config(format!(
                    "unknown variant {s:?} (expected full, leaky-no-residual or relu-no-residual)"
                ))
            })
    }
}

/// Network shape.
///
/// Each encoder stage halves the spatial size (stride 2 on its first
/// repeat) and the final encoder convolution halves it once more, so the
/// latent extent is `input_size / 2^(stages + 1)`. The decoder doubles the
/// size before each of its stages and must restore `input_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub repeats: usize,
    /// Channels per latent half; the latent depth is twice this.
    pub latent_half: usize,
    pub leaky_slope: f64,
    pub kernel: usize,
}

impl ArchConfig {
    /// Full-scale network: 240×240 input, 15×15×128 latent.
    pub fn paper() -> Self {
        ArchConfig {
            input_size: 240,
            in_channels: 3,
            encoder_channels: vec![16, 32, 64],
            decoder_channels: vec![64, 32, 16, 8],
            repeats: 3,
            latent_half: 64,
            leaky_slope: 1e-7,
            kernel: 3,
        }
    }

    /// Same topology at 48×48, tractable on a CPU.
    pub fn desk() -> Self {
        ArchConfig {
            input_size: 48,
            in_channels: 3,
            encoder_channels: vec![8, 16, 32],
            decoder_channels: vec![32, 16, 8, 4],
            repeats: 3,
            latent_half: 32,
            leaky_slope: 1e-7,
            kernel: 3,
        }
    }

    /// 16×16 toy used by the finite-difference checks.
    pub fn micro() -> Self {
        ArchConfig {
            input_size: 16,
            in_channels: 3,
            encoder_channels: vec![2, 3, 4],
            decoder_channels: vec![4, 3, 2, 2],
            repeats: 1,
            latent_half: 2,
            leaky_slope: 1e-7,
            kernel: 3,
        }
    }

    pub fn latent_size(&self) -> usize {
        self.input_size >> (self.encoder_channels.len() + 1)
    }

    pub fn latent_depth(&self) -> usize {
        2 * self.latent_half
    }

    /// Spatial size after encoder stage `s`.
    pub fn encoder_size(&self, s: usize) -> usize {
        self.input_size >> (s + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let stages = self.encoder_channels.len();
        if stages == 0 {
            bad.push("at least one encoder stage is required".to_string());
        }
        let factor = 1usize << (stages + 1);
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            bad.push(format!(
                "input_size {} must be a positive multiple of {factor} for {stages} encoder stages",
                self.input_size
            ));
        }
        if self.decoder_channels.len() != stages + 1 {
            bad.push(format!(
                "decoder needs {} stages to undo {stages} encoder stages plus the final halving, got {}",
                stages + 1,
                self.decoder_channels.len()
            ));
        }
        if self.repeats == 0 {
            bad.push("repeats must be at least 1".to_string());
        }
        if self.latent_half == 0 {
            bad.push("latent_half must be at least 1".to_string());
        }
        if self.in_channels == 0 {
            bad.push("in_channels must be at least 1".to_string());
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            bad.push("channel counts must be positive".to_string());
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            bad.push(format!("kernel {} must be odd", self.kernel));
        }
        if !(self.leaky_slope >= 0.0) {
            bad.push(format!("leaky_slope {} must be non-negative", self.leaky_slope));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(TarError::config(bad.join("; ")))
        }
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Number of convolution layers, counting shortcut projections. A repeat
/// has a projection when it changes channel count or stride and the
/// variant keeps shortcuts.
pub fn count_conv_layers(config: &ArchConfig, variant: Variant) -> usize {
    let r = config.repeats;
    let proj = |cin: usize, cout: usize, stride: usize| -> usize {
        usize::from(variant.residual() && (cin != cout || stride != 1))
    };
    let mut count = 0;
    let mut cin = config.in_channels;
    for &c in &config.encoder_channels {
        count += 2 * r + proj(cin, c, 2);
        cin = c;
    }
    count += 1;
    cin = config.latent_depth();
    for &c in &config.decoder_channels {
        count += 2 * r + proj(cin, c, 1);
        cin = c;
    }
    count + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [ArchConfig::paper(), ArchConfig::desk(), ArchConfig::micro()] {
            c.validate().unwrap();
        }
        assert_eq!(ArchConfig::paper().latent_size(), 15);
        assert_eq!(ArchConfig::paper().latent_depth(), 128);
        assert_eq!(ArchConfig::desk().latent_size(), 3);
        assert_eq!(ArchConfig::desk().latent_depth(), 64);
        assert_eq!(ArchConfig::micro().latent_size(), 1);
    }

    #[test]
    fn paper_encoder_sizes() {
        let c = ArchConfig::paper();
        let sizes: Vec<_> = (0..3).map(|s| c.encoder_size(s)).collect();
        assert_eq!(sizes, vec![120, 60, 30]);
    }

    #[test]
    fn invalid_config_lists_every_violation() {
        let c = ArchConfig {
            input_size: 50,
            repeats: 0,
            latent_half: 0,
            ..ArchConfig::desk()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("input_size 50"), "{msg}");
        assert!(msg.contains("repeats"), "{msg}");
        assert!(msg.contains("latent_half"), "{msg}");
    }

    #[test]
    fn conv_count_small_enumeration() {
        // one encoder stage, r=1: conv1, conv2, projection, final = 4;
        // decoder of two stages from 2N=4 channels:
        // stage (4->4): 2 convs, no projection; stage (4->2): 2 + projection; final 1
        let c = ArchConfig {
            input_size: 8,
            in_channels: 3,
            encoder_channels: vec![4],
            decoder_channels: vec![4, 2],
            repeats: 1,
            latent_half: 2,
            leaky_slope: 1e-7,
            kernel: 3,
        };
        c.validate().unwrap();
        assert_eq!(count_conv_layers(&c, Variant::Full), 4 + 2 + 3 + 1);
        assert_eq!(count_conv_layers(&c, Variant::ReluNoResidual), 3 + 2 + 2 + 1);
    }

    #[test]
    fn conv_count_paper_defaults() {
        let c = ArchConfig::paper();
        assert_eq!(count_conv_layers(&c, Variant::Full), 51);
        assert_eq!(count_conv_layers(&c, Variant::LeakyNoResidual), 44);
    }

    #[test]
    fn doubling_repeats_doubles_block_convs() {
        // projections (3 + 4) and the two final convs do not scale with r
        let fixed = 7 + 2;
        let mut c = ArchConfig::paper();
        let before = count_conv_layers(&c, Variant::Full) - fixed;
        c.repeats *= 2;
        let after = count_conv_layers(&c, Variant::Full) - fixed;
        assert_eq!(after, 2 * before);
    }
}
