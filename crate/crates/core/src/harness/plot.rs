use std::fs;
use std::path::{Path, PathBuf};

use crate::evallab::read_metrics;
use crate::par::Exec;
use crate::rng::{normal_mat, stream};
use crate::{Error, Result};

use super::config::read_config;
use super::stages::{sample_stored, GEN_FILE, METRICS_FILE, TEACHER_FILE};
use super::store::{read_meta, write_csv, Header, MANIFEST};

pub const PLOTS_DIR: &str = "plots";

/// Writes `plots/<stage>_<metric>.csv` (`iter,value`) for every metric of
/// every stage directory of `run_dir`, and `plots/scatter_<stage>.csv`
/// with `scatter` samples of the teacher and of each stored generator.
pub fn emit_plot_data(run_dir: &Path, scatter: usize, teacher_steps: usize, seed: u64, exec: Exec) -> Result<Vec<PathBuf>> {
    let manifest = run_dir.join(MANIFEST);
    if !manifest.exists() {
        return Err(Error::Rejected(format!("{} is not a run directory", run_dir.display())));
    }
    let header: Header = read_config(&manifest)?;
    let mut stages: Vec<PathBuf> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n != PLOTS_DIR))
        .collect();
    stages.sort();
    let plots = run_dir.join(PLOTS_DIR);
    fs::create_dir_all(&plots)?;
    let mut written = Vec::new();
    let mut any_metrics = false;
    for dir in &stages {
        let stage = dir.file_name().unwrap().to_string_lossy().to_string();
        let metrics = dir.join(METRICS_FILE);
        if metrics.exists() {
            any_metrics = true;
            let rows = read_metrics(&metrics)?;
            let mut names: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            for name in names {
                let lines: Vec<String> = rows
                    .iter()
                    .filter(|r| r.metric == name)
                    .map(|r| format!("{},{:e}", r.iter, r.value))
                    .collect();
                let path = plots.join(format!("{stage}_{name}.csv"));
                write_csv(&path, &header, "iter,value", &lines)?;
                written.push(path);
            }
        }
        for file in [TEACHER_FILE, GEN_FILE] {
            let ckpt = dir.join(file);
            if !ckpt.exists() || scatter == 0 {
                continue;
            }
            let d = read_meta(&ckpt)?
                .net
                .map(|n| n.data_dim)
                .ok_or_else(|| Error::Format(format!("{}: sidecar lacks the network", ckpt.display())))?;
            let z = normal_mat(&mut stream(seed, "scatter"), scatter, d);
            let x = sample_stored(&ckpt, &z, teacher_steps, exec)?;
            let cols: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
            let lines: Vec<String> = x
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","))
                .collect();
            let path = plots.join(format!("scatter_{stage}.csv"));
            write_csv(&path, &header, &cols.join(","), &lines)?;
            written.push(path);
        }
    }
    if !any_metrics {
        return Err(Error::Rejected(format!("no {METRICS_FILE} under {}", run_dir.display())));
    }
    Ok(written)
}
