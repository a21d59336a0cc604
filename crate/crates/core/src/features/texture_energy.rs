//! Block-wise DCT spatial energy and block SAD temporal energy.

use super::{FeatureError, Gray};

/// Orthonormal 1-D DCT-II basis, `basis[u][x]`.
pub(crate) fn dct_basis(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|u| {
            let alpha = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|x| alpha * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// 2-D DCT-II of the `w x w` block at `(bx, by)`; returns `coef[v][u]`.
fn block_dct(img: &Gray, bx: usize, by: usize, basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w = basis.len();
    // Removing the block mean only alters the DC term and keeps flat blocks exactly zero.
    let dc = (0..w)
        .map(|y| {
            img.data[(by + y) * img.width + bx..(by + y) * img.width + bx + w]
                .iter()
                .sum::<f64>()
        })
        .sum::<f64>()
        / (w * w) as f64;
    // rows first
    let rows: Vec<Vec<f64>> = (0..w)
        .map(|y| {
            let row = &img.data[(by + y) * img.width + bx..(by + y) * img.width + bx + w];
            basis.iter().map(|b| b.iter().zip(row).map(|(c, v)| c * (v - dc)).sum()).collect()
        })
        .collect();
    basis
        .iter()
        .map(|b| (0..w).map(|u| (0..w).map(|y| b[y] * rows[y][u]).sum()).collect())
        .collect()
}

fn check_blocks(img: &Gray, w: usize) -> Result<(usize, usize), FeatureError> {
    if w == 0 || img.width < w || img.height < w {
        return Err(FeatureError::TooSmall {
            width: img.width,
            height: img.height,
            need: w,
        });
    }
    Ok((img.width / w, img.height / w))
}

/// Weighted sum of absolute non-DC DCT coefficients per block, divided by `w²`.
pub fn block_energies(img: &Gray, w: usize, gamma: f64) -> Result<Vec<f64>, FeatureError> {
    let (nx, ny) = check_blocks(img, w)?;
    let basis = dct_basis(w);
    let weight: Vec<f64> = (0..2 * w).map(|s| (gamma * s as f64 / (2 * w) as f64).exp()).collect();
    let mut out = Vec::with_capacity(nx * ny);
    for by in 0..ny {
        for bx in 0..nx {
            let coef = block_dct(img, bx * w, by * w, &basis);
            let mut e = 0.0;
            for (v, row) in coef.iter().enumerate() {
                for (u, c) in row.iter().enumerate() {
                    if u + v > 0 {
                        e += weight[u + v] * c.abs();
                    }
                }
            }
            out.push(e / (w * w) as f64);
        }
    }
    Ok(out)
}

/// Per-block sum of absolute differences between co-located blocks, divided by `w²`.
pub fn block_sad(a: &Gray, b: &Gray, w: usize) -> Result<Vec<f64>, FeatureError> {
    if a.width != b.width || a.height != b.height {
        return Err(FeatureError::Geometry);
    }
    let (nx, ny) = check_blocks(a, w)?;
    let mut out = Vec::with_capacity(nx * ny);
    for by in 0..ny {
        for bx in 0..nx {
            let mut sad = 0.0;
            for y in by * w..(by + 1) * w {
                let r = y * a.width;
                for x in bx * w..(bx + 1) * w {
                    sad += (a.data[r + x] - b.data[r + x]).abs();
                }
            }
            out.push(sad / (w * w) as f64);
        }
    }
    Ok(out)
}
