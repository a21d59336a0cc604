//! Energy-distortion points, Pareto fronts and CRF-wise frame-rate policies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::FrameRate;

#[derive(Debug, Error, PartialEq)]
pub enum ParetoError {
    #[error("no measurement for {fps} fps at crf {crf}")]
    Missing { fps: FrameRate, crf: u8 },
    #[error("duplicate measurement for {fps} fps at crf {crf}")]
    Duplicate { fps: FrameRate, crf: u8 },
    #[error("empty point set")]
    Empty,
    #[error("malformed policy `{0}`")]
    Policy(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyAxis {
    #[default]
    Enc,
    Dec,
}

impl FromStr for EnergyAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "enc" => Ok(EnergyAxis::Enc),
            "dec" => Ok(EnergyAxis::Dec),
            other => Err(format!("unknown energy axis `{other}` (expected enc or dec)")),
        }
    }
}

/// One measured operating point of a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdePoint {
    pub fps: FrameRate,
    pub crf: u8,
    pub mpsnr_db: f64,
    pub bitrate_kbps: f64,
    pub e_enc_j: f64,
    pub e_dec_j: f64,
}

impl RdePoint {
    pub fn energy(&self, axis: EnergyAxis) -> f64 {
        match axis {
            EnergyAxis::Enc => self.e_enc_j,
            EnergyAxis::Dec => self.e_dec_j,
        }
    }
}

/// Weak Pareto dominance: no worse on both axes, strictly better on one.
pub fn dominates(p: &RdePoint, q: &RdePoint, axis: EnergyAxis) -> bool {
    let (ep, eq) = (p.energy(axis), q.energy(axis));
    p.mpsnr_db >= q.mpsnr_db && ep <= eq && (p.mpsnr_db > q.mpsnr_db || ep < eq)
}

/// Indices of the non-dominated points, in input order.
pub fn pareto_front_indices(points: &[RdePoint], axis: EnergyAxis) -> Vec<usize> {
    // Sweep by energy ascending, quality descending; a point survives iff its
    // quality beats every strictly cheaper point and matches the best at equal energy.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.energy(axis)
            .total_cmp(&pb.energy(axis))
            .then(pb.mpsnr_db.total_cmp(&pa.mpsnr_db))
    });
    let mut keep = Vec::new();
    let mut best_cheaper = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let e = points[order[i]].energy(axis);
        let mut j = i;
        while j < order.len() && points[order[j]].energy(axis) == e {
            j += 1;
        }
        let top = points[order[i]].mpsnr_db;
        if top > best_cheaper {
            keep.extend(order[i..j].iter().copied().filter(|&k| points[k].mpsnr_db == top));
            best_cheaper = top;
        }
        i = j;
    }
    keep.sort_unstable();
    keep
}

pub fn pareto_front(points: &[RdePoint], axis: EnergyAxis) -> Vec<RdePoint> {
    pareto_front_indices(points, axis).into_iter().map(|i| points[i].clone()).collect()
}

/// Energy-aware frame rate per CRF, in ascending CRF order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRatePolicy {
    pub entries: Vec<(u8, FrameRate)>,
}

impl FrameRatePolicy {
    pub fn rate_at(&self, crf: u8) -> Option<FrameRate> {
        self.entries.iter().find(|(c, _)| *c == crf).map(|(_, f)| *f)
    }

    pub fn rates(&self) -> Vec<FrameRate> {
        self.entries.iter().map(|(_, f)| *f).collect()
    }

    pub fn crfs(&self) -> Vec<u8> {
        self.entries.iter().map(|(c, _)| *c).collect()
    }

    /// True when the selected rate never increases with CRF.
    pub fn is_non_increasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].1 <= w[0].1)
    }

    /// Parses `{120,30,15,15}` for the given CRFs.
    pub fn parse(text: &str, crfs: &[u8]) -> Result<Self, ParetoError> {
        let bad = || ParetoError::Policy(text.to_string());
        let inner = text.trim().strip_prefix('{').and_then(|t| t.strip_suffix('}')).ok_or_else(bad)?;
        let rates = inner
            .split(',')
            .map(|s| s.trim().parse::<FrameRate>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        if rates.len() != crfs.len() {
            return Err(bad());
        }
        Ok(FrameRatePolicy {
            entries: crfs.iter().copied().zip(rates).collect(),
        })
    }
}

impl fmt::Display for FrameRatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rates: Vec<String> = self.entries.iter().map(|(_, r)| r.to_string()).collect();
        write!(f, "{{{}}}", rates.join(","))
    }
}

fn lookup(points: &[RdePoint]) -> Result<BTreeMap<(FrameRate, u8), &RdePoint>, ParetoError> {
    let mut map = BTreeMap::new();
    for p in points {
        if map.insert((p.fps, p.crf), p).is_some() {
            return Err(ParetoError::Duplicate { fps: p.fps, crf: p.crf });
        }
    }
    Ok(map)
}

/// Three-step selection. At the first CRF the highest-quality frame rate is
/// taken. At each later CRF the candidates are the Pareto-efficient points
/// of that CRF (front over all points; if none lies at this CRF, the front
/// of the CRF slice), and the one closest in quality to the previously
/// selected frame rate's point at this CRF wins. Ties go to the higher rate.
pub fn select_policy(points: &[RdePoint], crf_subset: &[u8], axis: EnergyAxis) -> Result<FrameRatePolicy, ParetoError> {
    let map = lookup(points)?;
    let ladder: BTreeSet<FrameRate> = points.iter().map(|p| p.fps).collect();
    if ladder.is_empty() || crf_subset.is_empty() {
        return Err(ParetoError::Empty);
    }
    for &crf in crf_subset {
        for &fps in &ladder {
            if !map.contains_key(&(fps, crf)) {
                return Err(ParetoError::Missing { fps, crf });
            }
        }
    }
    let front = pareto_front(points, axis);

    // Highest rate first so that strict comparisons keep the higher rate on ties.
    let first = crf_subset[0];
    let mut current = *ladder.iter().next_back().expect("non-empty");
    for &fps in ladder.iter().rev() {
        if map[&(fps, first)].mpsnr_db > map[&(current, first)].mpsnr_db {
            current = fps;
        }
    }
    let mut entries = vec![(first, current)];

    for &crf in &crf_subset[1..] {
        let mut candidates: Vec<&RdePoint> = front.iter().filter(|p| p.crf == crf).collect();
        let slice_front;
        if candidates.is_empty() {
            let slice: Vec<RdePoint> = ladder.iter().map(|f| map[&(*f, crf)].clone()).collect();
            slice_front = pareto_front(&slice, axis);
            candidates = slice_front.iter().collect();
        }
        candidates.sort_by(|a, b| b.fps.cmp(&a.fps));
        let anchor = map[&(current, crf)].mpsnr_db;
        let mut best = candidates[0];
        for &c in &candidates[1..] {
            if (c.mpsnr_db - anchor).abs() < (best.mpsnr_db - anchor).abs() {
                best = c;
            }
        }
        current = best.fps;
        entries.push((crf, current));
    }
    Ok(FrameRatePolicy { entries })
}

/// Points grouped per frame rate (descending) and ordered by ascending CRF.
pub fn build_curves(points: &[RdePoint]) -> Result<Vec<(FrameRate, Vec<RdePoint>)>, ParetoError> {
    lookup(points)?;
    let mut groups: BTreeMap<FrameRate, Vec<RdePoint>> = BTreeMap::new();
    for p in points {
        groups.entry(p.fps).or_default().push(p.clone());
    }
    Ok(groups
        .into_iter()
        .rev()
        .map(|(f, mut v)| {
            v.sort_by_key(|p| p.crf);
            (f, v)
        })
        .collect())
}
