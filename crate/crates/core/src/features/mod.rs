//! Spatio-temporal complexity features of a source sequence.
//!
//! Every feature reads the luma plane. Per-frame and per-pair work runs in
//! parallel; reductions are summed in frame order so results are bit-stable.

mod flow;
mod glcm;
mod hog;
mod texture_energy;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::{Frame, VideoSequence};

pub use flow::{FlowField, FlowParams};
pub use glcm::GlcmStats;
pub use hog::HogParams;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least {need} frames, got {got}")]
    TooFewFrames { need: usize, got: usize },
    #[error("frame {width}x{height} is smaller than the {need}x{need} analysis block")]
    TooSmall { width: usize, height: usize, need: usize },
    #[error("frame geometry mismatch")]
    Geometry,
    #[error("CRF {0} outside [0, 51]")]
    Crf(u8),
    #[error("feature CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("feature CSV: {0}")]
    Format(String),
}

/// Luma plane as floating point samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Gray {
    pub fn from_frame(frame: &Frame) -> Self {
        let l = frame.luma();
        Gray {
            width: l.width,
            height: l.height,
            data: l.data.iter().map(|&s| s as f64).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn bilinear(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub glcm_levels: usize,
    pub flow: FlowParams,
    pub hog: HogParams,
    /// Block side for spatial and temporal energy.
    pub energy_block: usize,
    pub energy_gamma: f64,
    pub nfd_eps: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            glcm_levels: 8,
            flow: FlowParams::default(),
            hog: HogParams::default(),
            energy_block: 32,
            energy_gamma: 1.0,
            nfd_eps: 1e-6,
        }
    }
}

/// Feature statistics of one sequence plus the CRF it is paired with.
///
/// Field order is the canonical CSV column order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    #[serde(rename = "meanFD")]
    pub mean_fd: f64,
    #[serde(rename = "meanSFD")]
    pub mean_sfd: f64,
    #[serde(rename = "meanSTD")]
    pub mean_std: f64,
    #[serde(rename = "maxSI")]
    pub max_si: f64,
    #[serde(rename = "maxTI")]
    pub max_ti: f64,
    #[serde(rename = "meanGLCM_con")]
    pub mean_glcm_con: f64,
    #[serde(rename = "stdGLCM_con")]
    pub std_glcm_con: f64,
    #[serde(rename = "meanGLCM_corr")]
    pub mean_glcm_corr: f64,
    #[serde(rename = "stdGLCM_corr")]
    pub std_glcm_corr: f64,
    #[serde(rename = "meanGLCM_ene")]
    pub mean_glcm_ene: f64,
    #[serde(rename = "stdGLCM_ene")]
    pub std_glcm_ene: f64,
    #[serde(rename = "meanGLCM_hom")]
    pub mean_glcm_hom: f64,
    #[serde(rename = "stdGLCM_hom")]
    pub std_glcm_hom: f64,
    #[serde(rename = "meanGLCM_ent")]
    pub mean_glcm_ent: f64,
    #[serde(rename = "stdGLCM_ent")]
    pub std_glcm_ent: f64,
    #[serde(rename = "meanOF_mag")]
    pub mean_of_mag: f64,
    #[serde(rename = "stdOF_mag")]
    pub std_of_mag: f64,
    #[serde(rename = "meanOF_or")]
    pub mean_of_or: f64,
    #[serde(rename = "stdOF_or")]
    pub std_of_or: f64,
    #[serde(rename = "meanHoG")]
    pub mean_hog: f64,
    #[serde(rename = "stdHoG")]
    pub std_hog: f64,
    #[serde(rename = "meanNFD")]
    pub mean_nfd: f64,
    #[serde(rename = "meanE")]
    pub mean_e: f64,
    #[serde(rename = "meanh")]
    pub mean_h: f64,
    #[serde(rename = "CRF")]
    pub crf: u8,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 25] = [
        "meanFD",
        "meanSFD",
        "meanSTD",
        "maxSI",
        "maxTI",
        "meanGLCM_con",
        "stdGLCM_con",
        "meanGLCM_corr",
        "stdGLCM_corr",
        "meanGLCM_ene",
        "stdGLCM_ene",
        "meanGLCM_hom",
        "stdGLCM_hom",
        "meanGLCM_ent",
        "stdGLCM_ent",
        "meanOF_mag",
        "stdOF_mag",
        "meanOF_or",
        "stdOF_or",
        "meanHoG",
        "stdHoG",
        "meanNFD",
        "meanE",
        "meanh",
        "CRF",
    ];

    /// All 25 entries in column order, CRF last.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.mean_fd,
            self.mean_sfd,
            self.mean_std,
            self.max_si,
            self.max_ti,
            self.mean_glcm_con,
            self.std_glcm_con,
            self.mean_glcm_corr,
            self.std_glcm_corr,
            self.mean_glcm_ene,
            self.std_glcm_ene,
            self.mean_glcm_hom,
            self.std_glcm_hom,
            self.mean_glcm_ent,
            self.std_glcm_ent,
            self.mean_of_mag,
            self.std_of_mag,
            self.mean_of_or,
            self.std_of_or,
            self.mean_hog,
            self.std_hog,
            self.mean_nfd,
            self.mean_e,
            self.mean_h,
            self.crf as f64,
        ]
    }

    pub fn with_crf(mut self, crf: u8) -> Result<Self, FeatureError> {
        if crf > 51 {
            return Err(FeatureError::Crf(crf));
        }
        self.crf = crf;
        Ok(self)
    }
}

/// One row of a features CSV: sequence name plus its vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub sequence: String,
    #[serde(flatten)]
    pub features: FeatureVector,
}

pub fn write_feature_csv<W: Write>(w: W, rows: &[FeatureRow]) -> Result<(), FeatureError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(std::iter::once("sequence").chain(FeatureVector::NAMES))?;
    for row in rows {
        let values = row.features.to_vec();
        let mut rec = vec![row.sequence.clone()];
        rec.extend(values[..24].iter().map(|v| v.to_string()));
        rec.push(row.features.crf.to_string());
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(r: R) -> Result<Vec<FeatureRow>, FeatureError> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("sequence").chain(FeatureVector::NAMES).collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(FeatureError::Format("unexpected column layout".into()));
    }
    rd.records()
        .map(|rec| {
            let rec = rec?;
            let num = |i: usize| -> Result<f64, FeatureError> {
                rec[i]
                    .parse()
                    .map_err(|_| FeatureError::Format(format!("bad number `{}`", &rec[i])))
            };
            let v: Vec<f64> = (1..25).map(num).collect::<Result<_, _>>()?;
            let crf: u8 = rec[25]
                .parse()
                .map_err(|_| FeatureError::Format(format!("bad CRF `{}`", &rec[25])))?;
            Ok(FeatureRow {
                sequence: rec[0].to_string(),
                features: from_values(&v, crf)?,
            })
        })
        .collect()
}

fn from_values(v: &[f64], crf: u8) -> Result<FeatureVector, FeatureError> {
    let fv = FeatureVector {
        mean_fd: v[0],
        mean_sfd: v[1],
        mean_std: v[2],
        max_si: v[3],
        max_ti: v[4],
        mean_glcm_con: v[5],
        std_glcm_con: v[6],
        mean_glcm_corr: v[7],
        std_glcm_corr: v[8],
        mean_glcm_ene: v[9],
        std_glcm_ene: v[10],
        mean_glcm_hom: v[11],
        std_glcm_hom: v[12],
        mean_glcm_ent: v[13],
        std_glcm_ent: v[14],
        mean_of_mag: v[15],
        std_of_mag: v[16],
        mean_of_or: v[17],
        std_of_or: v[18],
        mean_hog: v[19],
        std_hog: v[20],
        mean_nfd: v[21],
        mean_e: v[22],
        mean_h: v[23],
        crf: 0,
    };
    fv.with_crf(crf)
}

fn require_frames(seq: &VideoSequence, need: usize) -> Result<(), FeatureError> {
    if seq.len() < need {
        return Err(FeatureError::TooFewFrames { need, got: seq.len() });
    }
    Ok(())
}

fn grays(seq: &VideoSequence) -> Vec<Gray> {
    seq.frames().par_iter().map(Gray::from_frame).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn pair_map<T: Send>(g: &[Gray], f: impl Fn(&Gray, &Gray) -> T + Sync) -> Vec<T> {
    g.par_windows(2).map(|w| f(&w[0], &w[1])).collect()
}

fn mean_abs_diff(a: &Gray, b: &Gray) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64
}

fn frame_std(g: &Gray) -> f64 {
    std_dev(&g.data)
}

/// Mean absolute difference between co-located luma samples of successive frames.
pub fn frame_difference(seq: &VideoSequence) -> Result<f64, FeatureError> {
    require_frames(seq, 2)?;
    Ok(mean(&pair_map(&grays(seq), mean_abs_diff)))
}

/// Sum of squared successive-frame differences over `(N-1)·W·H`.
pub fn squared_frame_difference(seq: &VideoSequence) -> Result<f64, FeatureError> {
    require_frames(seq, 2)?;
    let g = grays(seq);
    let sums = pair_map(&g, |a, b| a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
    let pixels = (seq.width() * seq.height()) as f64;
    Ok(sums.iter().sum::<f64>() / ((seq.len() - 1) as f64 * pixels))
}

/// Mean over frames of the per-frame luma standard deviation.
pub fn contrast_std(seq: &VideoSequence) -> Result<f64, FeatureError> {
    require_frames(seq, 1)?;
    let per_frame: Vec<f64> = grays(seq).par_iter().map(frame_std).collect();
    Ok(mean(&per_frame))
}

/// Standard deviation of the Sobel gradient magnitude over interior pixels.
pub fn spatial_information(g: &Gray) -> f64 {
    if g.width < 3 || g.height < 3 {
        return 0.0;
    }
    let mut mags = Vec::with_capacity((g.width - 2) * (g.height - 2));
    for y in 1..g.height - 1 {
        for x in 1..g.width - 1 {
            let p = |dx: isize, dy: isize| g.at((x as isize + dx) as usize, (y as isize + dy) as usize);
            let gx = p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1);
            let gy = p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1);
            mags.push(gx.hypot(gy));
        }
    }
    std_dev(&mags)
}

/// `(maxSI, maxTI)`.
pub fn si_ti(seq: &VideoSequence) -> Result<(f64, f64), FeatureError> {
    require_frames(seq, 2)?;
    let g = grays(seq);
    let si: Vec<f64> = g.par_iter().map(spatial_information).collect();
    let ti = pair_map(&g, |a, b| {
        let d: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| y - x).collect();
        std_dev(&d)
    });
    let max = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
    Ok((max(&si), max(&ti)))
}

/// Mean and standard deviation over frames of each GLCM descriptor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlcmSummary {
    pub mean: GlcmStats,
    pub std: GlcmStats,
}

pub fn glcm_stats(seq: &VideoSequence, levels: usize) -> Result<GlcmSummary, FeatureError> {
    require_frames(seq, 1)?;
    let max = seq.format().max_value() as f64;
    let per: Vec<GlcmStats> = grays(seq)
        .par_iter()
        .map(|g| glcm::glcm_stats(&glcm::glcm(g, max, levels), levels))
        .collect();
    let col = |f: fn(&GlcmStats) -> f64| per.iter().map(f).collect::<Vec<_>>();
    let cols = [
        col(|s| s.contrast),
        col(|s| s.correlation),
        col(|s| s.energy),
        col(|s| s.homogeneity),
        col(|s| s.entropy),
    ];
    let pack = |f: fn(&[f64]) -> f64| GlcmStats {
        contrast: f(&cols[0]),
        correlation: f(&cols[1]),
        energy: f(&cols[2]),
        homogeneity: f(&cols[3]),
        entropy: f(&cols[4]),
    };
    Ok(GlcmSummary {
        mean: pack(mean),
        std: pack(std_dev),
    })
}

/// Dense flow from `prev` to `next` on the luma plane.
pub fn optical_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField, FeatureError> {
    flow::farneback(&Gray::from_frame(prev), &Gray::from_frame(next), params)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowStats {
    pub mean_mag: f64,
    pub std_mag: f64,
    pub mean_or: f64,
    pub std_or: f64,
}

/// Magnitude and orientation statistics pooled over all pixels of all pairs.
pub fn flow_stats_from_fields(fields: &[FlowField]) -> FlowStats {
    let mags: Vec<f64> = fields.iter().flat_map(|f| f.magnitudes()).collect();
    let ors: Vec<f64> = fields.iter().flat_map(|f| f.orientations()).collect();
    FlowStats {
        mean_mag: mean(&mags),
        std_mag: std_dev(&mags),
        mean_or: mean(&ors),
        std_or: std_dev(&ors),
    }
}

pub fn flow_stats(seq: &VideoSequence, params: &FlowParams) -> Result<FlowStats, FeatureError> {
    require_frames(seq, 2)?;
    let fields = pair_map(&grays(seq), |a, b| flow::farneback(a, b, params))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(flow_stats_from_fields(&fields))
}

/// `(meanHoG, stdHoG)` over all descriptor entries of all frames.
pub fn hog_stats(seq: &VideoSequence, params: &HogParams) -> Result<(f64, f64), FeatureError> {
    require_frames(seq, 1)?;
    let descs = grays(seq)
        .par_iter()
        .map(|g| hog::descriptor(g, params))
        .collect::<Result<Vec<_>, _>>()?;
    let all: Vec<f64> = descs.into_iter().flatten().collect();
    Ok((mean(&all), std_dev(&all)))
}

/// Frame difference of each pair divided by the pair's mean contrast.
pub fn normalized_frame_difference(seq: &VideoSequence, eps: f64) -> Result<f64, FeatureError> {
    require_frames(seq, 2)?;
    let g = grays(seq);
    let per = pair_map(&g, |a, b| mean_abs_diff(a, b) / (0.5 * (frame_std(a) + frame_std(b)) + eps));
    Ok(mean(&per))
}

pub fn spatial_energy(seq: &VideoSequence, block: usize, gamma: f64) -> Result<f64, FeatureError> {
    require_frames(seq, 1)?;
    let per = grays(seq)
        .par_iter()
        .map(|g| texture_energy::block_energies(g, block, gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let all: Vec<f64> = per.into_iter().flatten().collect();
    Ok(mean(&all))
}

pub fn temporal_energy(seq: &VideoSequence, block: usize) -> Result<f64, FeatureError> {
    require_frames(seq, 2)?;
    let per = pair_map(&grays(seq), |a, b| texture_energy::block_sad(a, b, block))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let all: Vec<f64> = per.into_iter().flatten().collect();
    Ok(mean(&all))
}

/// Computes every statistic for `seq`. The CRF-independent part is what
/// costs time; pair it with CRFs via [`FeatureVector::with_crf`].
pub fn extract_feature_vector(seq: &VideoSequence, crf: u8, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    if crf > 51 {
        return Err(FeatureError::Crf(crf));
    }
    require_frames(seq, 2)?;
    let (max_si, max_ti) = si_ti(seq)?;
    let glcm = glcm_stats(seq, cfg.glcm_levels)?;
    let of = flow_stats(seq, &cfg.flow)?;
    let (mean_hog, std_hog) = hog_stats(seq, &cfg.hog)?;
    Ok(FeatureVector {
        mean_fd: frame_difference(seq)?,
        mean_sfd: squared_frame_difference(seq)?,
        mean_std: contrast_std(seq)?,
        max_si,
        max_ti,
        mean_glcm_con: glcm.mean.contrast,
        std_glcm_con: glcm.std.contrast,
        mean_glcm_corr: glcm.mean.correlation,
        std_glcm_corr: glcm.std.correlation,
        mean_glcm_ene: glcm.mean.energy,
        std_glcm_ene: glcm.std.energy,
        mean_glcm_hom: glcm.mean.homogeneity,
        std_glcm_hom: glcm.std.homogeneity,
        mean_glcm_ent: glcm.mean.entropy,
        std_glcm_ent: glcm.std.entropy,
        mean_of_mag: of.mean_mag,
        std_of_mag: of.std_mag,
        mean_of_or: of.mean_or,
        std_of_or: of.std_or,
        mean_hog,
        std_hog,
        mean_nfd: normalized_frame_difference(seq, cfg.nfd_eps)?,
        mean_e: spatial_energy(seq, cfg.energy_block, cfg.energy_gamma)?,
        mean_h: temporal_energy(seq, cfg.energy_block)?,
        crf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{generate_synthetic, FrameRate, PixelFormat, Plane, SyntheticKind, SyntheticParams};

    fn seq_from(frames: &[Vec<u16>], w: usize) -> VideoSequence {
        let frames = frames
            .iter()
            .map(|d| {
                let luma = Plane {
                    width: w,
                    height: d.len() / w,
                    data: d.clone(),
                };
                Frame::from_luma(luma, PixelFormat::YUV420P8).unwrap()
            })
            .collect();
        VideoSequence::new("f", FrameRate::integer(120), frames).unwrap()
    }

    fn constant(w: usize, h: usize, n: usize) -> VideoSequence {
        generate_synthetic(
            SyntheticKind::Constant,
            &SyntheticParams {
                width: w,
                height: h,
                frames: n,
                value: 90,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn frame_difference_cases() {
        assert_eq!(frame_difference(&constant(4, 4, 3)).unwrap(), 0.0);
        let s = seq_from(&[vec![10], vec![13], vec![10]], 1);
        assert_eq!(frame_difference(&s).unwrap(), 3.0);
        assert!(matches!(
            frame_difference(&seq_from(&[vec![1]], 1)),
            Err(FeatureError::TooFewFrames { .. })
        ));
    }

    #[test]
    fn squared_difference_cases() {
        assert_eq!(squared_frame_difference(&constant(4, 4, 3)).unwrap(), 0.0);
        assert_eq!(squared_frame_difference(&seq_from(&[vec![10], vec![13]], 1)).unwrap(), 9.0);
        assert_eq!(squared_frame_difference(&seq_from(&[vec![0, 0], vec![2, 4]], 2)).unwrap(), 10.0);
    }

    #[test]
    fn contrast_cases() {
        assert_eq!(contrast_std(&constant(4, 4, 2)).unwrap(), 0.0);
        let half = seq_from(&[vec![0, 0, 255, 255]], 2);
        assert_eq!(contrast_std(&half).unwrap(), 127.5);
        let checker = seq_from(&[vec![0, 255, 255, 0], vec![255, 0, 0, 255]], 2);
        assert_eq!(contrast_std(&checker).unwrap(), 127.5);
    }

    /// Direct 3x3 kernel convolution, written independently of `spatial_information`.
    fn sobel_oracle(img: &[Vec<f64>]) -> f64 {
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        let mut mags = vec![];
        for y in 1..img.len() - 1 {
            for x in 1..img[0].len() - 1 {
                let (mut gx, mut gy) = (0.0, 0.0);
                for j in 0..3 {
                    for i in 0..3 {
                        gx += kx[j][i] * img[y + j - 1][x + i - 1];
                        gy += ky[j][i] * img[y + j - 1][x + i - 1];
                    }
                }
                mags.push((gx * gx + gy * gy).sqrt());
            }
        }
        let m = mags.iter().sum::<f64>() / mags.len() as f64;
        (mags.iter().map(|v| (v - m).powi(2)).sum::<f64>() / mags.len() as f64).sqrt()
    }

    #[test]
    fn si_ti_cases() {
        assert_eq!(si_ti(&constant(8, 8, 3)).unwrap(), (0.0, 0.0));
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..8).map(|x| if x < 4 { 20.0 } else { 200.0 }).collect()).collect();
        let flat: Vec<u16> = rows.iter().flatten().map(|&v| v as u16).collect();
        let s = seq_from(&[flat.clone(), flat], 8);
        let (si, ti) = si_ti(&s).unwrap();
        assert!(si > 0.0);
        assert_eq!(ti, 0.0);
        assert!((si - sobel_oracle(&rows)).abs() < 1e-9);
        // the magnitude is nonzero only in columns 3 and 4
        let g = Gray::from_frame(&s.frames()[0]);
        for x in 1..7 {
            let nonzero = {
                let p = |dx: isize| g.at((x as isize + dx) as usize, 3);
                (p(1) - p(-1)).abs() > 0.0
            };
            assert_eq!(nonzero, x == 3 || x == 4);
        }
    }

    #[test]
    fn glcm_sequence_stats() {
        let s = seq_from(&[vec![0, 255, 0, 255], vec![0, 255, 0, 255]], 4);
        let g = glcm_stats(&s, 8).unwrap();
        assert_eq!(g.mean.contrast, 49.0);
        assert_eq!(g.std.contrast, 0.0);
        assert_eq!(g.std.entropy, 0.0);
        assert_eq!(g.std.homogeneity, 0.0);
    }

    #[test]
    fn flow_on_translation() {
        let p = SyntheticParams {
            width: 64,
            height: 64,
            frames: 3,
            dx: 1,
            dy: 0,
            value: 80,
            seed: 3,
            ..Default::default()
        };
        let s = generate_synthetic(SyntheticKind::GlobalTranslation, &p).unwrap();
        let f = optical_flow(&s.frames()[0], &s.frames()[1], &FlowParams::default()).unwrap();
        let m = f.mean_magnitude();
        assert!((0.8..=1.2).contains(&m), "mean |flow| {m}");
        let stats = flow_stats(&s, &FlowParams::default()).unwrap();
        assert!(stats.mean_or.abs() < 0.1, "orientation {}", stats.mean_or);
        assert!(stats.std_or < 0.5, "orientation spread {}", stats.std_or);

        let c = constant(32, 32, 2);
        let z = optical_flow(&c.frames()[0], &c.frames()[1], &FlowParams::default()).unwrap();
        assert!(z.dx.iter().chain(&z.dy).all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn flow_stats_pool_pixels() {
        let a = FlowField {
            width: 2,
            height: 1,
            dx: vec![1.0, 1.0],
            dy: vec![0.0, 0.0],
        };
        let b = FlowField {
            width: 2,
            height: 1,
            dx: vec![0.0, 0.0],
            dy: vec![1.0, 1.0],
        };
        let s = flow_stats_from_fields(&[a, b]);
        assert_eq!(s.mean_mag, 1.0);
        assert_eq!(s.std_mag, 0.0);
        assert!((s.mean_or - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        let back = FlowField {
            width: 1,
            height: 1,
            dx: vec![-1.0],
            dy: vec![-0.0],
        };
        assert_eq!(back.orientations().next().unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn nfd_cases() {
        assert_eq!(normalized_frame_difference(&constant(4, 4, 3), 1e-6).unwrap(), 0.0);
        let p = SyntheticParams {
            width: 32,
            height: 32,
            frames: 4,
            dx: 0,
            value: 60,
            ..Default::default()
        };
        let still = generate_synthetic(SyntheticKind::GlobalTranslation, &p).unwrap();
        assert_eq!(normalized_frame_difference(&still, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn nfd_is_scale_invariant() {
        let ramp = |shift: usize| -> Vec<u16> { (0..64).map(|i| (((i + shift) % 16) * 4 + 10) as u16).collect() };
        let s1 = seq_from(&[ramp(0), ramp(1), ramp(3)], 8);
        let doubled: Vec<Vec<u16>> = [ramp(0), ramp(1), ramp(3)]
            .iter()
            .map(|f| f.iter().map(|v| v * 2).collect())
            .collect();
        let s2 = seq_from(&doubled, 8);
        let (a, b) = (
            normalized_frame_difference(&s1, 1e-6).unwrap(),
            normalized_frame_difference(&s2, 1e-6).unwrap(),
        );
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-6 * a, "{a} vs {b}");
    }

    /// Naive quadruple-sum orthonormal DCT-II, independent of the separable path.
    fn naive_dct(img: &[Vec<f64>], u: usize, v: usize) -> f64 {
        let n = img.len() as f64;
        let a = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        let mut s = 0.0;
        for (y, row) in img.iter().enumerate() {
            for (x, val) in row.iter().enumerate() {
                s += val
                    * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2.0 * n)).cos()
                    * (std::f64::consts::PI * (2 * y + 1) as f64 * v as f64 / (2.0 * n)).cos();
            }
        }
        a(u) * a(v) * s
    }

    fn cosine_texture(amp: f64, u0: usize) -> Vec<Vec<f64>> {
        (0..32)
            .map(|_| {
                (0..32)
                    .map(|x| (128.0 + amp * (std::f64::consts::PI * (2 * x + 1) as f64 * u0 as f64 / 64.0).cos()).round())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn spatial_energy_matches_direct_dct() {
        let img = cosine_texture(40.0, 3);
        let mut oracle = 0.0;
        for v in 0..32 {
            for u in 0..32 {
                if u + v > 0 {
                    oracle += ((u + v) as f64 / 64.0).exp() * naive_dct(&img, u, v).abs();
                }
            }
        }
        oracle /= 1024.0;
        let flat: Vec<u16> = img.iter().flatten().map(|&v| v as u16).collect();
        let s = seq_from(&[flat], 32);
        let got = spatial_energy(&s, 32, 1.0).unwrap();
        assert!((got - oracle).abs() < 1e-9 * oracle, "{got} vs {oracle}");
        assert_eq!(spatial_energy(&constant(32, 32, 1), 32, 1.0).unwrap().abs() < 1e-9, true);
        assert!(spatial_energy(&constant(16, 16, 1), 32, 1.0).is_err());
    }

    #[test]
    fn spatial_energy_is_linear_in_amplitude() {
        // Unrounded amplitudes keep the texture exactly proportional.
        let tex = |amp: f64| -> Vec<u16> {
            (0..32 * 32)
                .map(|k| {
                    let x = k % 32;
                    if (x / 4) % 2 == 0 {
                        (100.0 + amp) as u16
                    } else {
                        (100.0 - amp) as u16
                    }
                })
                .collect()
        };
        let e1 = spatial_energy(&seq_from(&[tex(20.0)], 32), 32, 1.0).unwrap();
        let e2 = spatial_energy(&seq_from(&[tex(40.0)], 32), 32, 1.0).unwrap();
        assert!((e2 - 2.0 * e1).abs() < 1e-9 * e2);
    }

    #[test]
    fn temporal_energy_cases() {
        let p = SyntheticParams {
            width: 32,
            height: 32,
            frames: 3,
            dx: 0,
            ..Default::default()
        };
        let still = generate_synthetic(SyntheticKind::GlobalTranslation, &p).unwrap();
        assert_eq!(temporal_energy(&still, 32).unwrap(), 0.0);
        let toy = seq_from(&[vec![0, 1, 2, 3], vec![2, 3, 4, 5]], 2);
        assert_eq!(temporal_energy(&toy, 1).unwrap(), 2.0);
        let moving = generate_synthetic(SyntheticKind::GlobalTranslation, &SyntheticParams { dx: 2, ..p }).unwrap();
        assert!((temporal_energy(&moving, 32).unwrap() - frame_difference(&moving).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hog_stats_constant_is_zero() {
        let (m, s) = hog_stats(&constant(16, 16, 2), &HogParams::default()).unwrap();
        assert_eq!((m, s), (0.0, 0.0));
    }

    #[test]
    fn feature_vector_basics() {
        let cfg = FeatureConfig::default();
        let c = constant(32, 32, 3);
        let v = extract_feature_vector(&c, 23, &cfg).unwrap();
        assert_eq!(v.crf, 23);
        assert_eq!(v.to_vec().len(), 25);
        for x in [
            v.mean_fd,
            v.mean_sfd,
            v.max_ti,
            v.mean_of_mag,
            v.mean_nfd,
            v.mean_h,
            v.mean_e,
            v.max_si,
            v.mean_std,
        ] {
            assert_eq!(x, 0.0);
        }
        assert!(extract_feature_vector(&c, 52, &cfg).is_err());

        let p = SyntheticParams {
            width: 32,
            height: 32,
            frames: 3,
            seed: 9,
            ..Default::default()
        };
        let m = generate_synthetic(SyntheticKind::LocalMotion, &p).unwrap();
        let a = extract_feature_vector(&m, 18, &cfg).unwrap();
        let b = extract_feature_vector(&m, 18, &cfg).unwrap();
        assert_eq!(
            a.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn csv_round_trip() {
        let cfg = FeatureConfig::default();
        let p = SyntheticParams {
            width: 32,
            height: 32,
            frames: 3,
            ..Default::default()
        };
        let m = generate_synthetic(SyntheticKind::DynamicTexture, &p).unwrap();
        let v = extract_feature_vector(&m, 28, &cfg).unwrap();
        let rows = vec![FeatureRow {
            sequence: "dyn".into(),
            features: v,
        }];
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sequence,meanFD,meanSFD,meanSTD,maxSI,maxTI,meanGLCM_con"));
        assert_eq!(read_feature_csv(buf.as_slice()).unwrap(), rows);
    }
}
