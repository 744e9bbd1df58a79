//! CSV and JSON persistence for cohorts and ledgers.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use crate::cohort::{
    format_time, grid_index, parse_time, step_time, Channel, Cohort, DiabetesStatus, RawFrame,
    StaticInfo,
};
use crate::error::{DataError, Result};
use crate::generate::Ledger;

pub const TIMESTAMP_COLUMN: &str = "timestamp_iso8601";
pub const STATIC_COLUMNS: [&str; 4] = ["participant_id", "age", "diabetes_status", "site"];

pub fn cohort_header() -> Vec<&'static str> {
    let mut h = vec!["participant_id", TIMESTAMP_COLUMN];
    h.extend(Channel::ALL.iter().map(|c| c.column()));
    h
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_frames_csv(path: impl AsRef<Path>, frames: &[RawFrame]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(cohort_header())?;
    for f in frames {
        for i in 0..f.len() {
            let mut rec = vec![f.participant_id.clone(), format_time(step_time(f.start, i))];
            rec.extend(Channel::ALL.iter().map(|&c| fmt_opt(f.channel(c)[i])));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the time-series CSV. Rows of a participant must be in strictly
/// increasing time order on the 5-minute grid; absent grid points become gaps.
pub fn read_frames_csv(path: impl AsRef<Path>) -> Result<Vec<RawFrame>> {
    let path_str = path.as_ref().display().to_string();
    let mut rdr = csv::Reader::from_reader(File::open(&path)?);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let expected = cohort_header();
    if header != expected {
        return Err(DataError::Schema(format!(
            "{path_str}: header {header:?}, expected {expected:?}"
        )));
    }
    let mut frames: Vec<RawFrame> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec?;
        let perr = |detail: String| DataError::Parse {
            path: path_str.clone(),
            line,
            detail,
        };
        let pid = rec[0].to_string();
        let t = parse_time(&rec[1]).map_err(|e| perr(e.to_string()))?;
        let mut vals = Vec::with_capacity(Channel::COUNT);
        for (k, c) in Channel::ALL.iter().enumerate() {
            let s = rec[k + 2].trim();
            if s.is_empty() {
                vals.push(None);
            } else {
                let v: f64 = s
                    .parse()
                    .map_err(|_| perr(format!("{}: not a number: {s:?}", c.column())))?;
                if !v.is_finite() {
                    return Err(perr(format!("{}: non-finite value", c.column())));
                }
                vals.push(Some(v));
            }
        }
        let idx = *by_id.entry(pid.clone()).or_insert_with(|| {
            frames.push(RawFrame {
                participant_id: pid.clone(),
                start: t,
                columns: vec![Vec::new(); Channel::COUNT],
            });
            frames.len() - 1
        });
        let f = &mut frames[idx];
        let pos = grid_index(f.start, t)
            .ok_or_else(|| perr(format!("timestamp {} is off the 5-minute grid", &rec[1])))?;
        if !f.is_empty() && pos < f.len() {
            return Err(perr(format!("timestamp {} is not increasing", &rec[1])));
        }
        while f.len() < pos {
            for col in f.columns.iter_mut() {
                col.push(None);
            }
        }
        for (col, v) in f.columns.iter_mut().zip(vals) {
            col.push(v);
        }
    }
    Ok(frames)
}

pub fn write_statics_csv(path: impl AsRef<Path>, statics: &[StaticInfo]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STATIC_COLUMNS)?;
    for s in statics {
        w.write_record([
            s.participant_id.as_str(),
            &s.age.to_string(),
            s.status.as_str(),
            &s.site,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_statics_csv(path: impl AsRef<Path>) -> Result<Vec<StaticInfo>> {
    let path_str = path.as_ref().display().to_string();
    let mut rdr = csv::Reader::from_reader(File::open(&path)?);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    if header != STATIC_COLUMNS {
        return Err(DataError::Schema(format!(
            "{path_str}: header {header:?}, expected {STATIC_COLUMNS:?}"
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let perr = |detail: String| DataError::Parse {
            path: path_str.clone(),
            line: row + 2,
            detail,
        };
        let age: f64 = rec[1]
            .parse()
            .map_err(|_| perr(format!("age: not a number: {:?}", &rec[1])))?;
        let status: DiabetesStatus = rec[2].parse().map_err(|e: DataError| perr(e.to_string()))?;
        out.push(StaticInfo {
            participant_id: rec[0].to_string(),
            age,
            status,
            site: rec[3].to_string(),
        });
    }
    Ok(out)
}

/// Writes `cohort.csv` and `statics.csv` into `dir`.
pub fn write_cohort(dir: impl AsRef<Path>, cohort: &Cohort) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_frames_csv(dir.join("cohort.csv"), &cohort.frames)?;
    write_statics_csv(dir.join("statics.csv"), &cohort.statics)
}

/// Reads a cohort and orders statics to match the frames.
pub fn read_cohort(dir: impl AsRef<Path>) -> Result<Cohort> {
    let dir = dir.as_ref();
    let frames = read_frames_csv(dir.join("cohort.csv"))?;
    let statics = read_statics_csv(dir.join("statics.csv"))?;
    let mut ordered = Vec::with_capacity(frames.len());
    for f in &frames {
        let s = statics
            .iter()
            .find(|s| s.participant_id == f.participant_id)
            .ok_or_else(|| {
                DataError::Schema(format!("no statics row for {}", f.participant_id))
            })?;
        ordered.push(s.clone());
    }
    Ok(Cohort {
        statics: ordered,
        frames,
    })
}

pub fn write_ledger(path: impl AsRef<Path>, ledger: &Ledger) -> Result<()> {
    let f = File::create(path)?;
    serde_json::to_writer_pretty(f, ledger)?;
    Ok(())
}

pub fn read_ledger(path: impl AsRef<Path>) -> Result<Ledger> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}
