//! Fourier features of the normalized grid coordinates, appended as extra
//! input channels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// `k` dyadic frequencies `2, 4, …, 2^k`; each contributes the channels
/// `sin(2πfx), cos(2πfx), sin(2πfy), cos(2πfy)` in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoordConfig {
    pub k: usize,
}

impl CoordConfig {
    pub fn channels(&self) -> usize {
        4 * self.k
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> {
        (1..=self.k).map(|j| (1u64 << j) as f64)
    }
}

/// Cell-center coordinate `(i + ½) / n`.
pub fn cell_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

/// Feature vector at a point, in channel order.
pub fn features_at(x: f64, y: f64, cfg: CoordConfig) -> Vec<f64> {
    cfg.frequencies()
        .flat_map(|f| {
            let (ax, ay) = (2.0 * PI * f * x, 2.0 * PI * f * y);
            [ax.sin(), ax.cos(), ay.sin(), ay.cos()]
        })
        .collect()
}

/// The `4k × H × W` coordinate channels at cell centers.
pub fn coordinate_channels(cfg: CoordConfig, height: usize, width: usize) -> Vec<f32> {
    let hw = height * width;
    let mut out = vec![0.0f32; cfg.channels() * hw];
    for r in 0..height {
        for c in 0..width {
            let feats = features_at(cell_center(c, width), cell_center(r, height), cfg);
            for (ch, v) in feats.into_iter().enumerate() {
                out[ch * hw + r * width + c] = v as f32;
            }
        }
    }
    out
}

/// Append the coordinate channels to one `C×H×W` snapshot.
pub fn encode_coords(snapshot: &[f32], height: usize, width: usize, cfg: CoordConfig) -> Vec<f32> {
    let mut out = snapshot.to_vec();
    out.extend(coordinate_channels(cfg, height, width));
    out
}
