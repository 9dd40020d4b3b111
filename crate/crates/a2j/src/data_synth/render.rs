//! Rasterize posed hands as Gaussian joint blobs. Blob intensity encodes
//! normalized depth; left and right hands use distinct channel mixes; pixels
//! compose by per-channel maximum so blob peaks stay at joint centers.

use super::kinematics::HandPose;
use crate::diffmath::NdArray;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy)]
pub struct RenderStyle {
    /// Gaussian sigma in pixels.
    pub blob_sigma: f64,
    /// Depth mapped to intensity over `[-depth_span, depth_span]` mm.
    pub depth_span: f64,
    /// Intensity floor so the shallowest joints stay visible.
    pub min_intensity: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            blob_sigma: 1.1,
            depth_span: 130.0,
            min_intensity: 0.25,
        }
    }
}

/// Channel mix per hand: left leans on channel 0, right on channel 2, both
/// share channel 1 faintly so overlap is visible.
const HAND_MIX: [[f64; CHANNELS]; 2] = [[1.0, 0.35, 0.0], [0.0, 0.35, 1.0]];

fn intensity(depth: f64, style: &RenderStyle) -> f64 {
    let t = ((depth + style.depth_span) / (2.0 * style.depth_span)).clamp(0.0, 1.0);
    style.min_intensity + (1.0 - style.min_intensity) * t
}

/// Render both hands into a `[3, size, size]` unit-range image, quantized to
/// 8-bit levels so the on-disk format is lossless.
pub fn render_hands(
    hands: &[&HandPose],
    size: usize,
    style: &RenderStyle,
) -> NdArray<f64> {
    let mut img = NdArray::zeros(&[CHANNELS, size, size]);
    let inv_two_sigma_sq = 1.0 / (2.0 * style.blob_sigma * style.blob_sigma);
    let radius = (3.0 * style.blob_sigma).ceil() as isize;
    for (h, pose) in hands.iter().enumerate() {
        let mix = HAND_MIX[h.min(1)];
        for &(jx, jy, jd) in &pose.joints {
            let peak = intensity(jd, style);
            let cx = jx.round() as isize;
            let cy = jy.round() as isize;
            for py in cy - radius..=cy + radius {
                if py < 0 || py >= size as isize {
                    continue;
                }
                for px in cx - radius..=cx + radius {
                    if px < 0 || px >= size as isize {
                        continue;
                    }
                    let dx = px as f64 - jx;
                    let dy = py as f64 - jy;
                    let g = peak * (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp();
                    for (c, &m) in mix.iter().enumerate() {
                        let v = g * m;
                        let idx = (c * size + py as usize) * size + px as usize;
                        if v > img.data()[idx] {
                            img.data_mut()[idx] = v;
                        }
                    }
                }
            }
        }
    }
    // quantize to the stored 8-bit precision
    img.map(|v| (v * 255.0).round() / 255.0)
}

/// Integer argmax position of one channel, `(x, y)`.
pub fn channel_argmax(img: &NdArray<f64>, channel: usize) -> (usize, usize) {
    let size = img.dim(1);
    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for y in 0..size {
        for x in 0..size {
            let v = img.at3(channel, y, x);
            if v > best_v {
                best_v = v;
                best = (x, y);
            }
        }
    }
    best
}
