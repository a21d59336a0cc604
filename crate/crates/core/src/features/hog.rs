//! Histogram of oriented gradients with unsigned orientation bins.

use serde::{Deserialize, Serialize};

use super::{FeatureError, Gray};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogParams {
    pub bins: usize,
    pub cell: usize,
    pub block: usize,
    pub eps: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams {
            bins: 9,
            cell: 8,
            block: 2,
            eps: 1e-6,
        }
    }
}

/// Per-cell orientation histograms, `cells_y x cells_x x bins`, row-major.
pub fn cell_histograms(img: &Gray, p: &HogParams) -> Result<(usize, usize, Vec<f64>), FeatureError> {
    let (w, h) = (img.width, img.height);
    let (cx, cy) = (w / p.cell, h / p.cell);
    if cx < p.block || cy < p.block {
        return Err(FeatureError::TooSmall {
            width: w,
            height: h,
            need: p.cell * p.block,
        });
    }
    let mut hist = vec![0.0; cx * cy * p.bins];
    let bin_width = 180.0 / p.bins as f64;
    for y in 0..cy * p.cell {
        for x in 0..cx * p.cell {
            // Centred differences; zero on the outermost rows and columns.
            let gx = if x == 0 || x + 1 == w {
                0.0
            } else {
                img.at(x + 1, y) - img.at(x - 1, y)
            };
            let gy = if y == 0 || y + 1 == h {
                0.0
            } else {
                img.at(x, y + 1) - img.at(x, y - 1)
            };
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let bin = ((angle / bin_width) as usize).min(p.bins - 1);
            hist[((y / p.cell) * cx + x / p.cell) * p.bins + bin] += mag;
        }
    }
    Ok((cx, cy, hist))
}

/// Block-normalized descriptor entries for one frame.
pub fn descriptor(img: &Gray, p: &HogParams) -> Result<Vec<f64>, FeatureError> {
    let (cx, cy, hist) = cell_histograms(img, p)?;
    let mut out = Vec::with_capacity((cx - p.block + 1) * (cy - p.block + 1) * p.block * p.block * p.bins);
    for by in 0..=cy - p.block {
        for bx in 0..=cx - p.block {
            let start = out.len();
            for y in by..by + p.block {
                for x in bx..bx + p.block {
                    let c = (y * cx + x) * p.bins;
                    out.extend_from_slice(&hist[c..c + p.bins]);
                }
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f64>() + p.eps * p.eps).sqrt();
            for v in &mut out[start..] {
                *v /= norm;
            }
        }
    }
    Ok(out)
}
