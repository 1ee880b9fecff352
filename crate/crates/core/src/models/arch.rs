use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// Fully connected ReLU layers on the flattened input.
    Mlp,
    /// conv3x3 → pool → conv3x3 → pool → dense.
    SmallCnn,
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ArchKind::Mlp),
            "smallcnn" => Ok(ArchKind::SmallCnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture kind `{other}` (expected mlp or smallcnn)"
            ))),
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Mlp => "mlp",
            ArchKind::SmallCnn => "smallcnn",
        })
    }
}

/// Backbone layout, tap configuration and head width.
///
/// `hidden` lists the hidden widths for `mlp`; for `smallcnn` it is
/// `[conv1 channels, conv2 channels, dense width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// `[C, H, W]` for images or `[D]` for flat inputs.
    pub input: Vec<usize>,
    pub hidden: Vec<usize>,
    pub taps: Vec<String>,
    pub head_width: usize,
}

/// One backbone layer as seen by the tap machinery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    /// Per-sample width after flattening.
    pub width: usize,
}

impl ArchSpec {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, head_width: usize) -> Self {
        let mut spec = Self {
            kind: ArchKind::Mlp,
            input: vec![input_dim],
            hidden,
            taps: Vec::new(),
            head_width,
        };
        spec.taps = vec![spec.penultimate()];
        spec
    }

    pub fn smallcnn(input: [usize; 3], channels: [usize; 2], dense: usize, head_width: usize) -> Self {
        Self {
            kind: ArchKind::SmallCnn,
            input: input.to_vec(),
            hidden: vec![channels[0], channels[1], dense],
            taps: vec!["fc".into()],
            head_width,
        }
    }

    pub fn with_taps(mut self, taps: &[&str]) -> Self {
        self.taps = taps.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn input_numel(&self) -> usize {
        self.input.iter().product()
    }

    /// Input as `[C, H, W]`, padding missing leading axes with 1.
    pub fn image_shape(&self) -> [usize; 3] {
        match self.input[..] {
            [c, h, w] => [c, h, w],
            [h, w] => [1, h, w],
            _ => [1, 1, self.input_numel()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.head_width == 0 {
            return bad("head width must be positive".into());
        }
        if self.input.is_empty() || self.input.contains(&0) {
            return bad(format!("invalid input shape {:?}", self.input));
        }
        if self.hidden.contains(&0) {
            return bad(format!("zero-width layer in {:?}", self.hidden));
        }
        match self.kind {
            ArchKind::Mlp => {
                if self.hidden.is_empty() {
                    return bad("mlp needs at least one hidden layer".into());
                }
            }
            ArchKind::SmallCnn => {
                if self.input.len() != 3 {
                    return bad(format!("smallcnn expects [C, H, W] input, got {:?}", self.input));
                }
                if self.hidden.len() != 3 {
                    return bad(format!(
                        "smallcnn expects hidden = [conv1, conv2, dense], got {:?}",
                        self.hidden
                    ));
                }
                if self.input[1] < 4 || self.input[2] < 4 {
                    return bad(format!("smallcnn input {:?} is smaller than 4x4", self.input));
                }
            }
        }
        let layers = self.layers();
        for tap in &self.taps {
            if !layers.iter().any(|l| &l.name == tap) {
                return bad(format!(
                    "tap `{tap}` is not a layer of this {} (layers: {})",
                    self.kind,
                    layers.iter().map(|l| l.name.as_str()).collect::<Vec<_>>().join(", ")
                ));
            }
        }
        Ok(())
    }

    /// Backbone layers in forward order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        match self.kind {
            ArchKind::Mlp => self
                .hidden
                .iter()
                .enumerate()
                .map(|(i, &w)| LayerInfo {
                    name: format!("hidden{}", i + 1),
                    width: w,
                })
                .collect(),
            ArchKind::SmallCnn => {
                let (h, w) = (self.input.get(1).copied().unwrap_or(0), self.input.get(2).copied().unwrap_or(0));
                let c1 = self.hidden.first().copied().unwrap_or(0);
                let c2 = self.hidden.get(1).copied().unwrap_or(0);
                let d = self.hidden.get(2).copied().unwrap_or(0);
                vec![
                    LayerInfo {
                        name: "conv1".into(),
                        width: c1 * (h / 2) * (w / 2),
                    },
                    LayerInfo {
                        name: "conv2".into(),
                        width: c2 * (h / 4) * (w / 4),
                    },
                    LayerInfo {
                        name: "fc".into(),
                        width: d,
                    },
                ]
            }
        }
    }

    pub fn layer_width(&self, name: &str) -> Option<usize> {
        self.layers().into_iter().find(|l| l.name == name).map(|l| l.width)
    }

    /// Name of the representation feeding the heads.
    pub fn penultimate(&self) -> String {
        self.layers().last().map(|l| l.name.clone()).unwrap_or_default()
    }

    pub fn feature_width(&self) -> usize {
        self.layers().last().map_or(0, |l| l.width)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("ArchSpec serializes");
        hex(&Sha256::digest(canonical))
    }
}

/// Lowercase hex encoding.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
