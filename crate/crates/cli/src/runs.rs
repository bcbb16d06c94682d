//! Per-run output directories and the files that go into them: the run
//! manifest, training history, metrics tables, and multi-seed aggregates.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use hinormer_core::{EpochRecord, Metrics};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.txt";

/// What a run was: together with the dataset this is enough to reproduce
/// it. Written exactly once, next to the run's other files.
pub struct RunManifest<'a> {
    pub command: String,
    pub version: &'a str,
    pub config: Option<&'a Path>,
    pub dataset_dir: Option<&'a Path>,
    pub dataset_sha256: &'a str,
    pub seed: u64,
    pub seeds: usize,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub status: &'a str,
}

pub fn write_manifest(dir: &Path, m: &RunManifest) -> io::Result<()> {
    let opt = |p: Option<&Path>| p.map_or("-".to_string(), |p| p.display().to_string());
    let mut out = String::new();
    out.push_str(&format!("command={}\n", m.command));
    out.push_str(&format!("version={}\n", m.version));
    out.push_str(&format!("config={}\n", opt(m.config)));
    out.push_str(&format!("dataset_dir={}\n", opt(m.dataset_dir)));
    out.push_str(&format!("dataset_sha256={}\n", m.dataset_sha256));
    out.push_str(&format!("seed={}\n", m.seed));
    out.push_str(&format!("seeds={}\n", m.seeds));
    let stamp = |t: &DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Micros, true);
    out.push_str(&format!("started={}\n", stamp(&m.started)));
    out.push_str(&format!("finished={}\n", stamp(&m.finished)));
    out.push_str(&format!("status={}\n", m.status));
    fs::write(dir.join(MANIFEST_FILE), out)
}

/// The invoking command line with the binary reduced to its file name.
/// Arguments containing whitespace are quoted so the line stays readable.
pub fn command_line() -> String {
    let mut args = std::env::args();
    let bin = args
        .next()
        .map(|a| {
            Path::new(&a)
                .file_name()
                .map_or_else(|| a.clone(), |n| n.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "hinormer".to_string());
    std::iter::once(bin)
        .chain(args.map(|a| {
            if a.contains(char::is_whitespace) {
                format!("\"{a}\"")
            } else {
                a
            }
        }))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `<command>-<timestamp>-seed<k>`, or a seed range for sweeps.
pub fn run_name(command: &str, started: DateTime<Utc>, seed: u64, seeds: usize) -> String {
    let ts = started.format("%Y%m%d-%H%M%S");
    if seeds > 1 {
        format!("{command}-{ts}-seeds{}-{}", seed, seed + seeds as u64 - 1)
    } else {
        format!("{command}-{ts}-seed{seed}")
    }
}

/// Create `parent/name`, appending `-2`, `-3`, ... while the name is
/// taken. Existing run directories are never reused or overwritten.
pub fn create_run_dir(parent: &Path, name: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(parent)?;
    let first = parent.join(name);
    match fs::create_dir(&first) {
        Ok(()) => return Ok(first),
        Err(e) if e.kind() != io::ErrorKind::AlreadyExists => return Err(e),
        Err(_) => {}
    }
    for n in 2u64.. {
        let dir = parent.join(format!("{name}-{n}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() != io::ErrorKind::AlreadyExists => return Err(e),
            Err(_) => continue,
        }
    }
    unreachable!("run directory names are unbounded")
}

/// Hex digest over the five dataset files, each prefixed with its name and
/// length so file boundaries cannot alias.
pub fn dataset_sha256(dir: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    for name in ["manifest.txt", "nodes.tsv", "edges.tsv", "labels.tsv", "split.tsv"] {
        let bytes = fs::read(dir.join(name))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Epoch records split into `history.tsv` (losses, scores, learning rate)
/// and `timing.tsv` (wall-clock seconds), so everything in the history is
/// reproducible bit for bit across identical runs.
pub fn write_history(dir: &Path, history: &[EpochRecord]) -> io::Result<()> {
    let mut hist = String::from("epoch\ttrain_loss\tval_loss\tval_micro_f1\tval_macro_f1\tlr\n");
    let mut timing = String::from("epoch\tseconds\n");
    for r in history {
        hist.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_micro, r.val_macro, r.lr
        ));
        timing.push_str(&format!("{}\t{}\n", r.epoch, r.seconds));
    }
    fs::write(dir.join("history.tsv"), hist)?;
    fs::write(dir.join("timing.tsv"), timing)
}

pub fn write_metrics(dir: &Path, rows: &[(&str, Metrics)]) -> io::Result<()> {
    let mut out = String::from("split\tloss\tmicro_f1\tmacro_f1\n");
    for (split, m) in rows {
        out.push_str(&format!(
            "{split}\t{}\t{}\t{}\n",
            m.loss, m.micro_f1, m.macro_f1
        ));
    }
    fs::write(dir.join("metrics.tsv"), out)
}

pub fn write_eval_metrics(dir: &Path, split: &str, rows: &[(u64, Metrics)]) -> io::Result<()> {
    let mut out = String::from("seed\tsplit\tloss\tmicro_f1\tmacro_f1\n");
    for (seed, m) in rows {
        out.push_str(&format!(
            "{seed}\t{split}\t{}\t{}\t{}\n",
            m.loss, m.micro_f1, m.macro_f1
        ));
    }
    fs::write(dir.join("metrics.tsv"), out)
}

/// Outcome of one seed of a training sweep.
pub struct SeedSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val: Metrics,
    pub test: Metrics,
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let vs: Vec<f64> = values.collect();
    let n = vs.len() as f64;
    let mean = vs.iter().sum::<f64>() / n;
    let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn write_aggregate(dir: &Path, summaries: &[SeedSummary]) -> io::Result<()> {
    let cols: [(&str, fn(&SeedSummary) -> f64); 6] = [
        ("val_loss", |s| s.val.loss),
        ("val_micro_f1", |s| s.val.micro_f1),
        ("val_macro_f1", |s| s.val.macro_f1),
        ("test_loss", |s| s.test.loss),
        ("test_micro_f1", |s| s.test.micro_f1),
        ("test_macro_f1", |s| s.test.macro_f1),
    ];
    let mut out = String::from("metric\tmean\tstd\n");
    for (name, get) in cols {
        let (mean, std) = mean_std(summaries.iter().map(get));
        out.push_str(&format!("{name}\t{mean}\t{std}\n"));
    }
    fs::write(dir.join("aggregate.tsv"), out)
}
