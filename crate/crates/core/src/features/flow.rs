//! Dense two-frame optical flow by polynomial expansion (Farnebäck).
//!
//! Each frame is approximated per pixel by a quadratic `x'Ax + b'x + c`
//! fitted with Gaussian applicability over a `(2n+1)^2` neighbourhood. The
//! displacement follows from how `b` changes between frames, solved in a
//! least-squares sense over a box window, coarse to fine over a pyramid.

use serde::{Deserialize, Serialize};

use super::{FeatureError, Gray};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Extra pyramid layers above the full-resolution image.
    pub levels: usize,
    pub pyr_scale: f64,
    pub win_size: usize,
    pub iterations: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            levels: 3,
            pyr_scale: 0.5,
            win_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

/// Per-pixel displacement in pixels per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FlowField {
    fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.dx.iter().zip(&self.dy).map(|(x, y)| x.hypot(*y))
    }

    /// Orientation `atan2(dy, dx)` mapped to `(-π, π]`.
    pub fn orientations(&self) -> impl Iterator<Item = f64> + '_ {
        self.dx.iter().zip(&self.dy).map(|(x, y)| {
            let a = y.atan2(*x);
            if a <= -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                a
            }
        })
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitudes().sum::<f64>() / self.dx.len() as f64
    }
}

/// Quadratic coefficients per pixel: r1 (x), r2 (y), r3 (xx), r4 (yy), r5 (xy).
struct Expansion {
    width: usize,
    height: usize,
    coef: Vec<[f64; 5]>,
}

impl Expansion {
    /// Bilinear sample with clamped coordinates.
    fn sample(&self, x: f64, y: f64) -> [f64; 5] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize| &self.coef[yy * self.width + xx];
        let mut out = [0.0; 5];
        for (k, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0)[k] * (1.0 - fx) + at(x1, y0)[k] * fx;
            let bottom = at(x0, y1)[k] * (1.0 - fx) + at(x1, y1)[k] * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

fn invert6(m: [[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut a = m;
    let mut inv = [[0.0; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let pivot = (col..6)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for k in 0..6 {
            a[col][k] /= p;
            inv[col][k] /= p;
        }
        for row in 0..6 {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in 0..6 {
                        a[row][k] -= f * a[col][k];
                        inv[row][k] -= f * inv[col][k];
                    }
                }
            }
        }
    }
    inv
}

fn poly_expand(img: &Gray, n: usize, sigma: f64) -> Expansion {
    let (w, h) = (img.width, img.height);
    let n_i = n as isize;
    let g: Vec<f64> = (-n_i..=n_i).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();

    // Gram matrix of the basis {1, x, y, xx, yy, xy} under the applicability.
    let mut gram = [[0.0; 6]; 6];
    for (j, gy) in (-n_i..=n_i).zip(&g) {
        for (i, gx) in (-n_i..=n_i).zip(&g) {
            let (x, y) = (i as f64, j as f64);
            let basis = [1.0, x, y, x * x, y * y, x * y];
            for a in 0..6 {
                for b in 0..6 {
                    gram[a][b] += gx * gy * basis[a] * basis[b];
                }
            }
        }
    }
    let ginv = invert6(gram);

    // Horizontal pass: sums of g(x) x^p f for p = 0, 1, 2.
    let mut horiz = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = [0.0; 3];
            for (k, gk) in g.iter().enumerate() {
                let off = k as isize - n_i;
                let xx = (x as isize + off).clamp(0, w as isize - 1) as usize;
                let v = gk * img.data[y * w + xx];
                let o = off as f64;
                s[0] += v;
                s[1] += v * o;
                s[2] += v * o * o;
            }
            horiz[y * w + x] = s;
        }
    }

    let mut coef = vec![[0.0; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut m = [0.0; 6];
            for (k, gk) in g.iter().enumerate() {
                let off = k as isize - n_i;
                let yy = (y as isize + off).clamp(0, h as isize - 1) as usize;
                let s = horiz[yy * w + x];
                let o = off as f64;
                m[0] += gk * s[0];
                m[1] += gk * s[1];
                m[2] += gk * o * s[0];
                m[3] += gk * s[2];
                m[4] += gk * o * o * s[0];
                m[5] += gk * o * s[1];
            }
            let mut r = [0.0; 5];
            for (k, rk) in r.iter_mut().enumerate() {
                *rk = (0..6).map(|c| ginv[k + 1][c] * m[c]).sum();
            }
            coef[y * w + x] = r;
        }
    }
    Expansion { width: w, height: h, coef }
}

fn box_blur(data: &[[f64; 5]], w: usize, h: usize, win: usize) -> Vec<[f64; 5]> {
    let r = (win / 2) as isize;
    let norm = 1.0 / ((2 * r + 1) * (2 * r + 1)) as f64;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![[0.0; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = [0.0; 5];
            for d in -r..=r {
                let v = &data[y * w + clamp(x as isize + d, w)];
                for k in 0..5 {
                    s[k] += v[k];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![[0.0; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = [0.0; 5];
            for d in -r..=r {
                let v = &tmp[clamp(y as isize + d, h) * w + x];
                for k in 0..5 {
                    s[k] += v[k];
                }
            }
            for v in s.iter_mut() {
                *v *= norm;
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Confidence of constraints within five pixels of the frame edge, where the
/// expansion sees replicated border samples.
fn border_weight(pos: usize, len: usize) -> f64 {
    const BORDER: [f64; 5] = [0.14, 0.14, 0.4472, 0.4472, 0.4472];
    let d = pos.min(len - 1 - pos);
    BORDER.get(d).copied().unwrap_or(1.0)
}

/// One solve of the displacement given the current estimate `flow`.
fn update_flow(e1: &Expansion, e2: &Expansion, flow: &mut FlowField, win: usize) {
    let (w, h) = (e1.width, e1.height);
    let mut mats = vec![[0.0; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (flow.dx[i], flow.dy[i]);
            let r1 = &e1.coef[i];
            let r2 = e2.sample(x as f64 + dx, y as f64 + dy);
            let a11 = (r1[2] + r2[2]) * 0.5;
            let a22 = (r1[3] + r2[3]) * 0.5;
            let a12 = (r1[4] + r2[4]) * 0.25;
            let b1 = -0.5 * (r2[0] - r1[0]) + a11 * dx + a12 * dy;
            let b2 = -0.5 * (r2[1] - r1[1]) + a12 * dx + a22 * dy;
            let s = border_weight(x, w) * border_weight(y, h);
            let (a11, a12, a22, b1, b2) = (a11 * s, a12 * s, a22 * s, b1 * s, b2 * s);
            mats[i] = [
                a11 * a11 + a12 * a12,
                a12 * (a11 + a22),
                a22 * a22 + a12 * a12,
                a11 * b1 + a12 * b2,
                a12 * b1 + a22 * b2,
            ];
        }
    }
    let blurred = box_blur(&mats, w, h, win);
    for (i, m) in blurred.iter().enumerate() {
        let idet = 1.0 / (m[0] * m[2] - m[1] * m[1] + 1e-3);
        flow.dx[i] = (m[2] * m[3] - m[1] * m[4]) * idet;
        flow.dy[i] = (m[0] * m[4] - m[1] * m[3]) * idet;
    }
}

fn gaussian_blur(img: &Gray, sigma: f64) -> Gray {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (sigma * 3.0).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let (w, h) = (img.width, img.height);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .zip(&k)
                .map(|(d, kk)| kk * img.data[y * w + clamp(x as isize + d, w)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = (-r..=r)
                .zip(&k)
                .map(|(d, kk)| kk * tmp[clamp(y as isize + d, h) * w + x])
                .sum::<f64>()
                / norm;
        }
    }
    Gray { width: w, height: h, data }
}

/// Bilinear resize with pixel-centre alignment.
fn resize(img: &Gray, w: usize, h: usize) -> Gray {
    let (sx, sy) = (img.width as f64 / w as f64, img.height as f64 / h as f64);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
            data.push(img.bilinear(fx, fy));
        }
    }
    Gray { width: w, height: h, data }
}

fn resize_flow(flow: &FlowField, w: usize, h: usize, gain: f64) -> FlowField {
    let as_gray = |v: &Vec<f64>| Gray {
        width: flow.width,
        height: flow.height,
        data: v.clone(),
    };
    let dx = resize(&as_gray(&flow.dx), w, h);
    let dy = resize(&as_gray(&flow.dy), w, h);
    FlowField {
        width: w,
        height: h,
        dx: dx.data.into_iter().map(|v| v * gain).collect(),
        dy: dy.data.into_iter().map(|v| v * gain).collect(),
    }
}

/// Dense flow from `prev` to `next` (luma as `Gray`).
pub(crate) fn farneback(prev: &Gray, next: &Gray, p: &FlowParams) -> Result<FlowField, FeatureError> {
    if prev.width != next.width || prev.height != next.height {
        return Err(FeatureError::Geometry);
    }
    let min_side = 2 * p.poly_n + 1;
    let mut sizes = vec![(prev.width, prev.height)];
    let mut scale = 1.0;
    for _ in 0..p.levels {
        scale *= p.pyr_scale;
        let (w, h) = (
            (prev.width as f64 * scale).round() as usize,
            (prev.height as f64 * scale).round() as usize,
        );
        if w < min_side || h < min_side {
            break;
        }
        sizes.push((w, h));
    }

    let mut flow: Option<FlowField> = None;
    for (level, &(w, h)) in sizes.iter().enumerate().rev() {
        let sigma = if level == 0 {
            0.0
        } else {
            (1.0 / p.pyr_scale.powi(level as i32) - 1.0) * 0.5
        };
        let (i1, i2) = if level == 0 {
            (prev.clone(), next.clone())
        } else {
            (resize(&gaussian_blur(prev, sigma), w, h), resize(&gaussian_blur(next, sigma), w, h))
        };
        let mut f = match flow.take() {
            Some(coarse) => resize_flow(&coarse, w, h, 1.0 / p.pyr_scale),
            None => FlowField::zeros(w, h),
        };
        let e1 = poly_expand(&i1, p.poly_n, p.poly_sigma);
        let e2 = poly_expand(&i2, p.poly_n, p.poly_sigma);
        for _ in 0..p.iterations {
            update_flow(&e1, &e2, &mut f, p.win_size);
        }
        flow = Some(f);
    }
    Ok(flow.expect("at least one level"))
}
