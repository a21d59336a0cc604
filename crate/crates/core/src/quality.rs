//! PSNR and matched PSNR (mPSNR) on the luma plane.
//!
//! mPSNR compares sequences of different frame rates on the tick grid at the
//! least common multiple of both rates: every frame is held for its display
//! interval, squared errors are summed per tick and the PSNR formula is
//! applied to the aggregate MSE.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::{Frame, VideoSequence};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QualityError {
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("frame count mismatch: {0} vs {1}")]
    FrameCount(usize, usize),
    #[error("frame rate mismatch: {0}")]
    FrameRate(String),
    #[error("test frame rate exceeds reference frame rate")]
    TestRateTooHigh,
}

/// Quality in dB. `value_db` is `f64::INFINITY` iff the squared error is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    #[serde(with = "db_serde")]
    pub value_db: f64,
    pub n_compared: u64,
}

impl QualityScore {
    pub fn is_lossless(&self) -> bool {
        self.value_db.is_infinite()
    }
}

/// JSON has no infinity; lossless scores are written as `null`.
mod db_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Sum of squared luma differences of two frames.
pub fn luma_sse(a: &Frame, b: &Frame) -> u64 {
    a.luma()
        .data
        .iter()
        .zip(&b.luma().data)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum()
}

/// `10 log10(MAX^2 / MSE)` with MSE = `sse / samples`.
pub fn psnr_from_sse(sse: u128, samples: u128, bit_depth: u8) -> f64 {
    if sse == 0 {
        return f64::INFINITY;
    }
    let max = ((1u32 << bit_depth) - 1) as f64;
    let mse = sse as f64 / samples as f64;
    10.0 * (max * max / mse).log10()
}

fn check_geometry(a: &VideoSequence, b: &VideoSequence) -> Result<(), QualityError> {
    if a.width() != b.width() || a.height() != b.height() || a.format().bit_depth != b.format().bit_depth {
        return Err(QualityError::Geometry(format!(
            "{}x{}@{}bit vs {}x{}@{}bit",
            a.width(),
            a.height(),
            a.format().bit_depth,
            b.width(),
            b.height(),
            b.format().bit_depth
        )));
    }
    Ok(())
}

/// Plain PSNR over all luma samples of all frames.
pub fn psnr(reference: &VideoSequence, test: &VideoSequence) -> Result<QualityScore, QualityError> {
    check_geometry(reference, test)?;
    if reference.len() != test.len() {
        return Err(QualityError::FrameCount(reference.len(), test.len()));
    }
    if reference.frame_rate != test.frame_rate {
        return Err(QualityError::FrameRate(format!("{} vs {}", reference.frame_rate, test.frame_rate)));
    }
    let sse: u128 = reference
        .frames()
        .iter()
        .zip(test.frames())
        .map(|(a, b)| luma_sse(a, b) as u128)
        .sum();
    let samples = reference.len() as u128 * (reference.width() * reference.height()) as u128;
    Ok(QualityScore {
        value_db: psnr_from_sse(sse, samples, reference.format().bit_depth),
        n_compared: reference.len() as u64,
    })
}

/// Matched PSNR of `test` (at a rate ≤ the reference rate) against `reference`.
///
/// Ticks beyond the shorter of the two durations are ignored.
pub fn mpsnr(reference: &VideoSequence, test: &VideoSequence) -> Result<QualityScore, QualityError> {
    check_geometry(reference, test)?;
    if test.frame_rate > reference.frame_rate {
        return Err(QualityError::TestRateTooHigh);
    }
    let grid = reference.frame_rate.lcm(&test.frame_rate);
    let ref_period = reference.frame_rate.ticks_per_frame(&grid);
    let test_period = test.frame_rate.ticks_per_frame(&grid);
    let total = (reference.len() as u64 * ref_period).min(test.len() as u64 * test_period);

    // Walk maximal runs of ticks that map to the same (reference, test) frame pair.
    let mut sse: u128 = 0;
    let mut tick = 0u64;
    while tick < total {
        let (r, t) = (tick / ref_period, tick / test_period);
        let end = ((r + 1) * ref_period).min((t + 1) * test_period).min(total);
        let run = end - tick;
        sse += luma_sse(&reference.frames()[r as usize], &test.frames()[t as usize]) as u128 * run as u128;
        tick = end;
    }
    let samples = total as u128 * (reference.width() * reference.height()) as u128;
    Ok(QualityScore {
        value_db: psnr_from_sse(sse, samples, reference.format().bit_depth),
        n_compared: total,
    })
}

/// Repeats every frame of `seq` `factor` times and relabels the rate.
pub fn frame_hold_upsample(seq: &VideoSequence, factor: usize) -> VideoSequence {
    let frames = seq
        .frames()
        .iter()
        .flat_map(|f| std::iter::repeat(f.clone()).take(factor))
        .collect();
    let rate = crate::video::FrameRate::new(seq.frame_rate.num() * factor as u64, seq.frame_rate.den()).expect("positive rate");
    VideoSequence::new(seq.name.clone(), rate, frames).expect("non-empty input")
}
