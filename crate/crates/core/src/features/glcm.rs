//! Gray-level co-occurrence statistics.

use super::Gray;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlcmStats {
    pub contrast: f64,
    pub correlation: f64,
    pub energy: f64,
    pub homogeneity: f64,
    pub entropy: f64,
}

/// Symmetric co-occurrence probabilities for the horizontal neighbour at
/// distance 1, after quantizing `[0, max]` to `levels` gray levels.
pub fn glcm(img: &Gray, max_value: f64, levels: usize) -> Vec<f64> {
    let q = |v: f64| ((v * levels as f64 / (max_value + 1.0)) as usize).min(levels - 1);
    let mut counts = vec![0u64; levels * levels];
    for y in 0..img.height {
        let row = &img.data[y * img.width..(y + 1) * img.width];
        for pair in row.windows(2) {
            let (i, j) = (q(pair[0]), q(pair[1]));
            counts[i * levels + j] += 1;
            counts[j * levels + i] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        // Single-column frame: no neighbour pairs, treat as one flat cell.
        let mut p = vec![0.0; levels * levels];
        p[0] = 1.0;
        return p;
    }
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}

pub fn glcm_stats(p: &[f64], levels: usize) -> GlcmStats {
    let cell = |k: usize| ((k / levels) as f64, (k % levels) as f64);
    let mut mu_i = 0.0;
    let mut mu_j = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        let (i, j) = cell(k);
        mu_i += i * pk;
        mu_j += j * pk;
    }
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    let (mut contrast, mut homogeneity, mut energy, mut entropy) = (0.0, 0.0, 0.0, 0.0);
    for (k, &pk) in p.iter().enumerate() {
        if pk == 0.0 {
            continue;
        }
        let (i, j) = cell(k);
        var_i += (i - mu_i).powi(2) * pk;
        var_j += (j - mu_j).powi(2) * pk;
        cov += (i - mu_i) * (j - mu_j) * pk;
        contrast += (i - j).powi(2) * pk;
        homogeneity += pk / (1.0 + (i - j).abs());
        energy += pk * pk;
        entropy -= pk * pk.log2();
    }
    let denom = (var_i * var_j).sqrt();
    // A flat frame has zero variance; it is perfectly predictable.
    let correlation = if denom > 0.0 { cov / denom } else { 1.0 };
    GlcmStats {
        contrast,
        correlation,
        energy,
        homogeneity,
        entropy,
    }
}
