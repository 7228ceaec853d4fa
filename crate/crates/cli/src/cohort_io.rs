//! Cohorts on disk: one `timeseries` container per (subject, session) plus
//! the manifest written by `synth`.

use std::path::Path;

use connfp::synth::TimeSeriesSet;

use crate::container::{Header, MatrixContainer};
use crate::error::{CliError, CliResult};
use crate::output::{sha256_hex, Manifest, OutputDir};

pub fn series_path(subject: &str, session: &str) -> String {
    format!("series/{subject}_{session}.cfm")
}

pub fn write_cohort(out: &mut OutputDir, set: &TimeSeriesSet, seed: u64) -> CliResult<()> {
    for (i, sid) in set.subject_ids().iter().enumerate() {
        for (s, label) in set.session_labels().iter().enumerate() {
            let mut h = Header::new((0, 0), "timeseries", seed);
            h.subject = Some(sid.clone());
            h.session = Some(label.clone());
            out.write_container(&series_path(sid, label), &MatrixContainer::new(h, set.get(i, s).clone()))?;
        }
    }
    Ok(())
}

/// Load a cohort written by `synth`, verifying every checksum.
pub fn read_cohort(dir: &Path) -> CliResult<TimeSeriesSet> {
    let manifest = Manifest::read(dir)?;
    let mut series = Vec::with_capacity(manifest.subjects.len() * manifest.sessions.len());
    for sid in &manifest.subjects {
        for label in &manifest.sessions {
            let rel = series_path(sid, label);
            let entry = manifest
                .entry(&rel)
                .ok_or_else(|| CliError::Runtime(format!("{}: manifest does not list {rel}", dir.display())))?;
            let path = dir.join(&rel);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(CliError::Runtime(format!("{}: checksum mismatch", path.display())));
            }
            let c = MatrixContainer::from_bytes(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            if c.header.role != "timeseries" {
                return Err(CliError::Runtime(format!("{}: role {:?}, expected timeseries", path.display(), c.header.role)));
            }
            series.push(c.data);
        }
    }
    Ok(TimeSeriesSet::new(manifest.subjects, manifest.sessions, series)?)
}
