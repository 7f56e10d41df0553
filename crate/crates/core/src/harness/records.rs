//! Run artifacts: per-episode and per-update CSV records.
//!
//! Formatting goes through Rust's shortest-round-trip float printing, so a
//! run with the same seed reproduces its logs byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::physics::TerminationReason;
use crate::ppo::UpdateDiagnostics;
use crate::Result;

pub const EPISODE_CSV_HEADER: &str = "global_step,episode,return,length,reason,curriculum_d";
pub const UPDATE_CSV_HEADER: &str = "update,global_step,lr,policy_loss,value_loss,entropy,approx_kl,old_approx_kl,clip_fraction,explained_variance,grad_norm,smoothed_return";

/// One finished episode as logged to `episodes.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Total environment steps taken across all envs when the episode ended.
    pub global_step: u64,
    /// Episode completion index (0-based, across all envs).
    pub episode: u64,
    /// Undiscounted return: swimmers absorbed.
    pub ret: u32,
    pub length: u32,
    pub reason: TerminationReason,
    /// Curriculum distance bound for this episode, when active.
    pub curriculum_d: Option<f64>,
}

impl EpisodeRecord {
    pub fn to_csv_line(&self) -> String {
        let d = self.curriculum_d.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.global_step,
            self.episode,
            self.ret,
            self.length,
            self.reason.as_str(),
            d
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(crate::CoreError::config(format!(
                "episode record needs 6 fields, got {}",
                fields.len()
            )));
        }
        Ok(EpisodeRecord {
            global_step: fields[0].parse().map_err(|_| bad("global_step"))?,
            episode: fields[1].parse().map_err(|_| bad("episode"))?,
            ret: fields[2].parse().map_err(|_| bad("return"))?,
            length: fields[3].parse().map_err(|_| bad("length"))?,
            reason: fields[4].parse()?,
            curriculum_d: if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].parse().map_err(|_| bad("curriculum_d"))?)
            },
        })
    }
}

fn bad(field: &str) -> crate::CoreError {
    crate::CoreError::config(format!("unparseable episode field '{field}'"))
}

/// One optimizer update as logged to `updates.csv`.
#[derive(Debug, Clone)]
pub struct UpdateRecord {
    pub update: u64,
    pub global_step: u64,
    pub diag: UpdateDiagnostics,
    pub smoothed_return: f64,
}

impl UpdateRecord {
    pub fn to_csv_line(&self) -> String {
        let d = &self.diag;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.global_step,
            d.learning_rate,
            d.policy_loss,
            d.value_loss,
            d.entropy,
            d.approx_kl,
            d.old_approx_kl,
            d.clip_fraction,
            d.explained_variance,
            d.grad_norm,
            self.smoothed_return
        )
    }
}

/// Trailing moving average of the last `window` returns; shorter histories
/// average whatever exists.
pub fn smoothed_return(returns: &[u32], window: usize) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    let take = window.min(returns.len()).max(1);
    let tail = &returns[returns.len() - take..];
    tail.iter().map(|&r| r as f64).sum::<f64>() / take as f64
}

/// Line-buffered CSV file with a fixed header.
pub struct CsvFile {
    writer: BufWriter<File>,
}

impl CsvFile {
    /// Creates (or truncates) the file and writes the header.
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{header}")?;
        Ok(CsvFile { writer })
    }

    /// Opens for appending without rewriting the header.
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(CsvFile { writer: BufWriter::new(file) })
    }

    pub fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.writer, "{line}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}
