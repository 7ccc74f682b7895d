//! Ground-truth encoding, logistic squashing, and the head-logit decoders.
//!
//! Coded boxes live in the feature domain of one anchor: centers are
//! offsets from the anchor's upper-left corner in cell units, sides are
//! in cell units. Decoding maps `sigmoid(z)` through `2s - 0.5` for the
//! center and `d^(2s) / d` for the sides.

use serde::{Deserialize, Serialize};

use crate::boxgeom::PixelBox;
use crate::gridanchor::Anchor;

/// Logit saturation used when inverting a unit-interval value at its bounds.
pub const LOGIT_SATURATION: f64 = 36.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodedBox {
    pub x_c: f64,
    pub y_c: f64,
    pub w_c: f64,
    pub h_c: f64,
}

impl CodedBox {
    /// Whether a decoder output at stride `d` can reach this box: centers in
    /// `(-0.5, 1.5)`, sides in `(1/d, d)`.
    pub fn is_decodable(&self, stride: u32) -> bool {
        let d = stride as f64;
        let center = |v: f64| v > -0.5 && v < 1.5;
        let side = |v: f64| v > 1.0 / d && v < d;
        center(self.x_c) && center(self.y_c) && side(self.w_c) && side(self.h_c)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_c, self.y_c, self.w_c, self.h_c]
    }
}

/// Raw 5-channel head output for one feature point: four box logits then
/// the score logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadLogits(pub [f64; 5]);

impl HeadLogits {
    pub fn score_logit(&self) -> f64 {
        self.0[4]
    }
}

/// Encodes a pixel-domain ground truth relative to an anchor. No clamping.
pub fn encode_gt(gt: &PixelBox, anchor: &Anchor) -> CodedBox {
    let d = anchor.stride as f64;
    CodedBox { x_c: (gt.x - anchor.g_x) / d, y_c: (gt.y - anchor.g_y) / d, w_c: gt.w / d, h_c: gt.h / d }
}

/// Logistic function, evaluated without overflow for either sign.
pub fn squash(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`squash`] expressed through its output.
pub fn squash_slope(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Inverse logistic, saturating at `±LOGIT_SATURATION` at or beyond the
/// unit-interval bounds.
pub fn unsquash(p: f64) -> f64 {
    if p <= 0.0 {
        -LOGIT_SATURATION
    } else if p >= 1.0 {
        LOGIT_SATURATION
    } else {
        (p / (1.0 - p)).ln().clamp(-LOGIT_SATURATION, LOGIT_SATURATION)
    }
}

fn side_from_unit(s: f64, d: f64) -> f64 {
    d.powf(2.0 * s)
}

/// Decodes head logits into a coded box and score at stride `d`.
pub fn decode_coded(z: &HeadLogits, stride: u32) -> (CodedBox, f64) {
    let d = stride as f64;
    let s = z.0.map(squash);
    let coded = CodedBox {
        x_c: 2.0 * s[0] - 0.5,
        y_c: 2.0 * s[1] - 0.5,
        w_c: side_from_unit(s[2], d) / d,
        h_c: side_from_unit(s[3], d) / d,
    };
    (coded, s[4])
}

/// Maps a coded box back to pixels through its anchor.
pub fn coded_to_pixel(coded: &CodedBox, anchor: &Anchor) -> PixelBox {
    let d = anchor.stride as f64;
    PixelBox { x: coded.x_c * d + anchor.g_x, y: coded.y_c * d + anchor.g_y, w: coded.w_c * d, h: coded.h_c * d }
}

/// Decodes head logits straight to a pixel-domain box and score.
pub fn decode_pixel(z: &HeadLogits, anchor: &Anchor) -> (PixelBox, f64) {
    let (coded, score) = decode_coded(z, anchor.stride);
    (coded_to_pixel(&coded, anchor), score)
}

/// Logits whose decode at stride `d` reproduces `coded`, with the given
/// score. Out-of-range targets saturate.
pub fn invert_coded(coded: &CodedBox, stride: u32, score: f64) -> HeadLogits {
    let ln_d = (stride as f64).ln();
    let side = |c: f64| {
        let pixels = c * stride as f64;
        if pixels > 0.0 {
            unsquash(pixels.ln() / (2.0 * ln_d))
        } else {
            -LOGIT_SATURATION
        }
    };
    HeadLogits([
        unsquash((coded.x_c + 0.5) / 2.0),
        unsquash((coded.y_c + 0.5) / 2.0),
        side(coded.w_c),
        side(coded.h_c),
        unsquash(score),
    ])
}

/// Logits for which `decode_pixel(_, anchor)` reproduces `gt`.
pub fn invert_pixel(gt: &PixelBox, anchor: &Anchor, score: f64) -> HeadLogits {
    invert_coded(&encode_gt(gt, anchor), anchor.stride, score)
}
