//! Append-only CSV of measured operating points, keyed by (sequence, rate, CRF).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::pareto::RdePoint;
use crate::video::FrameRate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreRow {
    pub sequence: String,
    pub f: FrameRate,
    pub crf: u8,
    pub mpsnr_db: f64,
    pub bitrate_kbps: f64,
    pub e_enc_j: f64,
    pub e_dec_j: f64,
    pub config_hash: String,
}

impl StoreRow {
    pub fn point(&self) -> RdePoint {
        RdePoint {
            fps: self.f,
            crf: self.crf,
            mpsnr_db: self.mpsnr_db,
            bitrate_kbps: self.bitrate_kbps,
            e_enc_j: self.e_enc_j,
            e_dec_j: self.e_dec_j,
        }
    }
}

/// A cell that could not be measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub sequence: String,
    pub f: FrameRate,
    pub crf: u8,
    pub error: String,
}

#[derive(Debug)]
pub struct MeasurementStore {
    path: PathBuf,
    rows: Vec<StoreRow>,
    keys: BTreeSet<(String, FrameRate, u8)>,
}

impl MeasurementStore {
    /// Opens (or starts) the store at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref().to_path_buf();
        let mut store = MeasurementStore {
            path,
            rows: Vec::new(),
            keys: BTreeSet::new(),
        };
        if store.path.exists() {
            let mut rd = csv::Reader::from_path(&store.path)?;
            for row in rd.deserialize::<StoreRow>() {
                let row = row?;
                let key = (row.sequence.clone(), row.f, row.crf);
                if !store.keys.insert(key) {
                    return Err(PipelineError::Data(format!(
                        "duplicate store row for {} at {} fps, crf {}",
                        row.sequence, row.f, row.crf
                    )));
                }
                store.rows.push(row);
            }
        }
        Ok(store)
    }

    /// An in-memory store that is never written to disk.
    pub fn from_rows(rows: Vec<StoreRow>) -> Result<Self, PipelineError> {
        let mut store = MeasurementStore {
            path: PathBuf::new(),
            rows: Vec::new(),
            keys: BTreeSet::new(),
        };
        for row in rows {
            if !store.keys.insert((row.sequence.clone(), row.f, row.crf)) {
                return Err(PipelineError::Data(format!(
                    "duplicate row for {} at {} fps, crf {}",
                    row.sequence, row.f, row.crf
                )));
            }
            store.rows.push(row);
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> &[StoreRow] {
        &self.rows
    }

    pub fn contains(&self, sequence: &str, f: FrameRate, crf: u8) -> bool {
        self.keys.contains(&(sequence.to_string(), f, crf))
    }

    /// Sequence names in sorted order.
    pub fn sequences(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.sequence.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn points(&self, sequence: &str) -> Vec<RdePoint> {
        self.rows.iter().filter(|r| r.sequence == sequence).map(StoreRow::point).collect()
    }

    pub fn get(&self, sequence: &str, f: FrameRate, crf: u8) -> Option<&StoreRow> {
        self.rows.iter().find(|r| r.sequence == sequence && r.f == f && r.crf == crf)
    }

    /// Appends rows whose keys are new; returns how many were written.
    pub fn append(&mut self, rows: Vec<StoreRow>) -> Result<usize, PipelineError> {
        let fresh: Vec<StoreRow> = rows.into_iter().filter(|r| !self.contains(&r.sequence, r.f, r.crf)).collect();
        if fresh.is_empty() {
            return Ok(0);
        }
        if !self.path.as_os_str().is_empty() {
            let exists = self.path.exists() && fs::metadata(&self.path)?.len() > 0;
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let file = fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
            let mut wr = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
            for row in &fresh {
                wr.serialize(row)?;
            }
            wr.flush()?;
        }
        let n = fresh.len();
        for row in fresh {
            self.keys.insert((row.sequence.clone(), row.f, row.crf));
            self.rows.push(row);
        }
        Ok(n)
    }

    /// Fails if any row was produced under a different configuration.
    pub fn check_hash(&self, hash: &str) -> Result<(), PipelineError> {
        match self.rows.iter().find(|r| r.config_hash != hash) {
            Some(r) => Err(PipelineError::Data(format!(
                "store {} holds rows from configuration {} but the current configuration is {hash}",
                self.path.display(),
                r.config_hash
            ))),
            None => Ok(()),
        }
    }
}

pub fn append_failures(path: &Path, failures: &[CellFailure]) -> Result<(), PipelineError> {
    if failures.is_empty() {
        return Ok(());
    }
    let exists = path.exists() && fs::metadata(path)?.len() > 0;
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut wr = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for f in failures {
        wr.serialize(f)?;
    }
    wr.flush()?;
    Ok(())
}
