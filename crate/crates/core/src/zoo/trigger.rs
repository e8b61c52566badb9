//! Input triggers: a small checkerboard patch (few pixels, large change) and
//! a full-image watermark blend (every pixel, small change).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Checkerboard,
    Watermark,
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriggerKind::Checkerboard => "checkerboard",
            TriggerKind::Watermark => "watermark",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TriggerPattern {
    Checkerboard { patch_side: usize, corner: Corner },
    /// `x' = (1 - alpha) * x + alpha * pattern`
    Watermark { pattern: Vec<f32>, alpha: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub pattern: TriggerPattern,
    pub target_class: u8,
    pub poison_fraction: f64,
}

impl TriggerSpec {
    pub fn kind(&self) -> TriggerKind {
        match self.pattern {
            TriggerPattern::Checkerboard { .. } => TriggerKind::Checkerboard,
            TriggerPattern::Watermark { .. } => TriggerKind::Watermark,
        }
    }
}

/// Returns the triggered copy of a `side x side` image.
pub fn apply_trigger(image: &[f32], side: usize, pattern: &TriggerPattern) -> Result<Vec<f32>> {
    if image.len() != side * side {
        return Err(Error::InvalidArgument(format!(
            "image has {} pixels, expected {}",
            image.len(),
            side * side
        )));
    }
    let mut out = image.to_vec();
    match pattern {
        TriggerPattern::Checkerboard { patch_side, corner } => {
            let k = *patch_side;
            if k == 0 || k > side {
                return Err(Error::InvalidArgument(format!(
                    "checkerboard patch {k} does not fit a {side}x{side} image"
                )));
            }
            let (r0, c0) = match corner {
                Corner::TopLeft => (0, 0),
                Corner::TopRight => (0, side - k),
                Corner::BottomLeft => (side - k, 0),
                Corner::BottomRight => (side - k, side - k),
            };
            for r in 0..k {
                for c in 0..k {
                    out[(r0 + r) * side + c0 + c] = ((r + c) % 2) as f32;
                }
            }
        }
        TriggerPattern::Watermark { pattern, alpha } => {
            if pattern.len() != out.len() {
                return Err(Error::InvalidArgument("watermark size differs from image".into()));
            }
            for (x, &w) in out.iter_mut().zip(pattern) {
                *x = ((1.0 - alpha) * *x + alpha * w).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}
