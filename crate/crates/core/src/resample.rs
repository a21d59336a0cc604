//! Temporal downsampling by weighted frame averaging.
//!
//! Source and output frames are laid on a common tick grid at the least
//! common multiple of both rates. Each output frame averages the source
//! frames whose display intervals overlap its own, weighted by overlap
//! length. Integer factors reduce to equal weights `1/k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::{Frame, FrameRate, Plane, VideoError, VideoSequence};

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("target rate {dst:?} exceeds source rate {src:?}")]
    Upsampling { src: FrameRate, dst: FrameRate },
    #[error("source of {0} frames yields no complete output frame")]
    TooShort(usize),
    #[error(transparent)]
    Video(#[from] VideoError),
}

/// One output frame: a contiguous run of source frames and their overlap ticks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub source_start: usize,
    /// Overlap in grid ticks per contributing source frame; sums to `period`.
    pub ticks: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightTable {
    /// Output frame period in grid ticks.
    pub period: u64,
    pub entries: Vec<WeightEntry>,
}

impl WeightEntry {
    pub fn weights(&self, period: u64) -> Vec<f64> {
        self.ticks.iter().map(|&t| t as f64 / period as f64).collect()
    }
}

impl WeightTable {
    pub fn weights(&self, output: usize) -> Vec<f64> {
        self.entries[output].weights(self.period)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds the averaging table for `n_src` frames at `src` resampled to `dst`.
///
/// The output count is `floor(n_src * dst / src)`; trailing source frames
/// that cannot fill a whole output interval are dropped.
pub fn generate_weights(src: FrameRate, dst: FrameRate, n_src: usize) -> Result<WeightTable, ResampleError> {
    if dst > src {
        return Err(ResampleError::Upsampling { src, dst });
    }
    let grid = src.lcm(&dst);
    let src_period = src.ticks_per_frame(&grid);
    let dst_period = dst.ticks_per_frame(&grid);
    let n_out = (n_src as u128 * src_period as u128 / dst_period as u128) as usize;

    let entries = (0..n_out as u64)
        .map(|j| {
            let (lo, hi) = (j * dst_period, (j + 1) * dst_period);
            let first = lo / src_period;
            let last = (hi - 1) / src_period;
            let ticks = (first..=last)
                .map(|i| {
                    let (s_lo, s_hi) = (i * src_period, (i + 1) * src_period);
                    s_hi.min(hi) - s_lo.max(lo)
                })
                .collect();
            WeightEntry {
                source_start: first as usize,
                ticks,
            }
        })
        .collect();
    Ok(WeightTable {
        period: dst_period,
        entries,
    })
}

fn blend_plane(sources: &[&Plane], ticks: &[u64], period: u64) -> Plane {
    let (w, h) = (sources[0].width, sources[0].height);
    let mut acc = vec![0u64; w * h];
    for (plane, &t) in sources.iter().zip(ticks) {
        for (a, &s) in acc.iter_mut().zip(&plane.data) {
            *a += s as u64 * t;
        }
    }
    // Nearest integer, halves rounded up (away from zero for nonnegative samples).
    let data = acc.into_iter().map(|a| ((2 * a + period) / (2 * period)) as u16).collect();
    Plane { width: w, height: h, data }
}

/// Downsamples `seq` to `dst` by weighted averaging of every plane.
pub fn downsample(seq: &VideoSequence, dst: FrameRate) -> Result<VideoSequence, ResampleError> {
    let table = generate_weights(seq.frame_rate, dst, seq.len())?;
    if table.is_empty() {
        return Err(ResampleError::TooShort(seq.len()));
    }
    let frames: Vec<Frame> = table
        .entries
        .par_iter()
        .map(|entry| {
            let window = &seq.frames()[entry.source_start..entry.source_start + entry.ticks.len()];
            if let [only] = window {
                return only.clone();
            }
            let planes = [0, 1, 2].map(|p| {
                let sources: Vec<&Plane> = window.iter().map(|f| &f.planes[p]).collect();
                blend_plane(&sources, &entry.ticks, table.period)
            });
            Frame {
                format: window[0].format,
                planes,
            }
        })
        .collect();
    let mut out = VideoSequence::new(seq.name.clone(), dst, frames)?;
    out.y4m_extra_tags = seq.y4m_extra_tags.clone();
    out.y4m_chroma_tag = seq.y4m_chroma_tag.clone();
    Ok(out)
}
