//! Bjøntegaard-delta differences of a metric (bitrate or energy) at equal quality.
//!
//! Each curve is interpolated as `log10(metric) = g(quality)` with a monotone
//! piecewise-cubic Hermite interpolant; the mean of `g_test - g_ref` over the
//! common quality interval gives the relative difference `(10^Δ - 1) · 100`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pareto::{FrameRatePolicy, RdePoint};
use crate::video::FrameRate;

#[derive(Debug, Error, PartialEq)]
pub enum BdError {
    #[error("curve has {0} usable points, need at least 3")]
    TooFewPoints(usize),
    #[error("metric values must be positive and finite")]
    Metric,
    #[error("quality {0} dB appears twice with different metric values")]
    NonMonotone(f64),
    #[error("quality ranges do not overlap")]
    NoOverlap,
    #[error("no measurement for {fps} fps at crf {crf}")]
    Missing { fps: FrameRate, crf: u8 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BdMethod {
    #[default]
    Pchip,
    /// Least-squares cubic polynomial (classic formulation).
    Cubic,
}

/// Quality/metric pairs of one operating curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub points: Vec<(f64, f64)>,
}

impl RdCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        RdCurve { points }
    }

    /// Drops lossless (infinite-quality) points, sorts by quality and merges
    /// exact duplicates; returns `(quality, log10 metric)`.
    fn prepared(&self) -> Result<(Vec<f64>, Vec<f64>), BdError> {
        let mut pts: Vec<(f64, f64)> = self.points.iter().copied().filter(|(q, _)| q.is_finite()).collect();
        if pts.iter().any(|&(_, m)| !(m > 0.0 && m.is_finite())) {
            return Err(BdError::Metric);
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts.dedup();
        if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(BdError::NonMonotone(w[0].0));
        }
        if pts.len() < 3 {
            return Err(BdError::TooFewPoints(pts.len()));
        }
        Ok(pts.into_iter().map(|(q, m)| (q, m.log10())).unzip())
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes with
/// the three-point, shape-preserving end conditions).
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` strictly increasing, at least two points.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && x.len() == y.len());
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d.fill(delta[0]);
            return Pchip { x, y, d };
        }
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Pchip { x, y, d }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[k]
            + (s3 - 2.0 * s2 + s) * h * self.d[k]
            + (-2.0 * s3 + 3.0 * s2) * self.y[k + 1]
            + (s3 - s2) * h * self.d[k + 1]
    }
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() || del0 == 0.0 {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Least-squares polynomial of degree `min(3, n-1)`, coefficients low to high.
fn polyfit(x: &[f64], y: &[f64]) -> Vec<f64> {
    let deg = 3.min(x.len() - 1);
    let m = deg + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for (&xi, &yi) in x.iter().zip(y) {
        let pows: Vec<f64> = (0..m).map(|p| xi.powi(p as i32)).collect();
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pows[r] * pows[c];
            }
            a[r][m] += pows[r] * yi;
        }
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("rows");
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..m).map(|r| a[r][m] / a[r][r]).collect()
}

enum Interp {
    Pchip(Pchip),
    Poly { coef: Vec<f64>, centre: f64, scale: f64 },
}

impl Interp {
    fn fit(q: Vec<f64>, lm: Vec<f64>, method: BdMethod) -> Self {
        match method {
            BdMethod::Pchip => Interp::Pchip(Pchip::new(q, lm)),
            BdMethod::Cubic => {
                let centre = q.iter().sum::<f64>() / q.len() as f64;
                let scale = q.iter().map(|v| (v - centre).abs()).fold(0.0, f64::max).max(1e-12);
                let xs: Vec<f64> = q.iter().map(|v| (v - centre) / scale).collect();
                Interp::Poly {
                    coef: polyfit(&xs, &lm),
                    centre,
                    scale,
                }
            }
        }
    }

    fn eval(&self, t: f64) -> f64 {
        match self {
            Interp::Pchip(p) => p.eval(t),
            Interp::Poly { coef, centre, scale } => {
                let s = (t - centre) / scale;
                coef.iter().rev().fold(0.0, |acc, c| acc * s + c)
            }
        }
    }
}

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

pub const INTEGRATION_INTERVALS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdResult {
    pub bd_percent: f64,
    pub overlap_db: f64,
}

pub fn bd_delta(reference: &RdCurve, test: &RdCurve) -> Result<BdResult, BdError> {
    bd_delta_with(reference, test, BdMethod::Pchip)
}

pub fn bd_delta_with(reference: &RdCurve, test: &RdCurve, method: BdMethod) -> Result<BdResult, BdError> {
    let (qr, lr) = reference.prepared()?;
    let (qt, lt) = test.prepared()?;
    let lo = qr[0].max(qt[0]);
    let hi = qr[qr.len() - 1].min(qt[qt.len() - 1]);
    if !(hi > lo) {
        return Err(BdError::NoOverlap);
    }
    if hi - lo < 2.0 {
        log::warn!("quality overlap of {:.3} dB is below 2 dB; BD value is unreliable", hi - lo);
    }
    if qr == qt && lr == lt {
        return Ok(BdResult {
            bd_percent: 0.0,
            overlap_db: hi - lo,
        });
    }
    let (fr, ft) = (Interp::fit(qr, lr, method), Interp::fit(qt, lt, method));
    let mean = simpson(|q| ft.eval(q) - fr.eval(q), lo, hi, INTEGRATION_INTERVALS) / (hi - lo);
    Ok(BdResult {
        bd_percent: (10f64.powf(mean) - 1.0) * 100.0,
        overlap_db: hi - lo,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdTriplet {
    pub bdr: f64,
    pub bdee: f64,
    pub bdde: f64,
}

/// BD rate, encoding energy and decoding energy of a policy against encoding
/// every CRF of the policy at the native rate.
pub fn bd_triplet(points: &[RdePoint], native: FrameRate, policy: &FrameRatePolicy) -> Result<BdTriplet, BdError> {
    let find = |fps: FrameRate, crf: u8| {
        points
            .iter()
            .find(|p| p.fps == fps && p.crf == crf)
            .ok_or(BdError::Missing { fps, crf })
    };
    let mut reference = Vec::new();
    let mut test = Vec::new();
    for &(crf, fps) in &policy.entries {
        reference.push(find(native, crf)?);
        test.push(find(fps, crf)?);
    }
    let curve = |pts: &[&RdePoint], m: fn(&RdePoint) -> f64| RdCurve::new(pts.iter().map(|p| (p.mpsnr_db, m(p))).collect());
    let delta = |m: fn(&RdePoint) -> f64| bd_delta(&curve(&reference, m), &curve(&test, m)).map(|r| r.bd_percent);
    Ok(BdTriplet {
        bdr: delta(|p| p.bitrate_kbps)?,
        bdee: delta(|p| p.e_enc_j)?,
        bdde: delta(|p| p.e_dec_j)?,
    })
}
