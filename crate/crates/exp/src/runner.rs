//! Runs a scenario and writes its CSV, JSON mirror and metadata sidecar.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use aoii_core::sim::{self, SimError, SimReport, Summary};
use aoii_core::{PolicyKind, PolicyOptions, SimConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Metric, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{variable}={value}, {policy}: {source}")]
    Sim {
        variable: &'static str,
        value: usize,
        policy: PolicyKind,
        source: SimError,
    },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep: String,
    pub value: usize,
    pub policy: PolicyKind,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
    pub replications: usize,
    pub seed: u64,
}

/// Full simulation output of one (sweep cell, policy).
#[derive(Clone, Debug)]
pub struct Cell {
    pub value: usize,
    pub report: SimReport,
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub cells: Vec<Cell>,
    pub rows: Vec<ResultRow>,
}

impl ScenarioResult {
    pub fn row(&self, value: usize, policy: PolicyKind, metric: Metric) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.policy == policy && r.metric == metric)
    }

    pub fn report(&self, value: usize, policy: PolicyKind) -> Option<&SimReport> {
        self.cells
            .iter()
            .find(|c| c.value == value && c.report.policy == policy)
            .map(|c| &c.report)
    }

    pub fn values(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.cells.iter().map(|c| c.value).collect();
        v.dedup();
        v
    }
}

pub fn summary_for(report: &SimReport, metric: Metric) -> Summary {
    match metric {
        Metric::Aoii => report.aoii,
        Metric::AoiiSum => report.aoii_sum,
        Metric::Qaoii => report.qaoii,
    }
}

/// Simulates every (sweep cell, policy) pair of `scenario`.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult, RunError> {
    scenario.validate()?;
    let variable = scenario.sweep.variable();
    let jobs: Vec<(usize, SimConfig)> = scenario
        .sweep
        .points()
        .into_iter()
        .map(|(value, point)| {
            let users = scenario.users_at(&point)?;
            Ok(scenario.policies.iter().map(move |&policy| {
                (
                    value,
                    SimConfig {
                        users: users.clone(),
                        m: point.m,
                        frames: scenario.frames,
                        replications: scenario.replications,
                        seed: scenario.seed,
                        policy,
                        options: PolicyOptions {
                            greedy_query_aware: scenario.greedy_query_aware,
                        },
                    },
                )
            }))
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?
        .into_iter()
        .flatten()
        .collect();

    let cells = jobs
        .par_iter()
        .map(|(value, config)| {
            log::info!("{}: {variable}={value} {}", scenario.name, config.policy);
            sim::run(config)
                .map(|report| Cell { value: *value, report })
                .map_err(|source| RunError::Sim {
                    variable,
                    value: *value,
                    policy: config.policy,
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for &metric in &scenario.metrics {
        for cell in &cells {
            if !metric.reports(cell.report.policy) {
                continue;
            }
            let s = summary_for(&cell.report, metric);
            rows.push(ResultRow {
                sweep: variable.to_string(),
                value: cell.value,
                policy: cell.report.policy,
                metric,
                mean: s.mean,
                std: s.std_dev,
                ci95: s.ci95,
                replications: s.n,
                seed: scenario.seed,
            });
        }
    }
    Ok(ScenarioResult {
        scenario: scenario.clone(),
        cells,
        rows,
    })
}

pub fn csv_bytes(rows: &[ResultRow]) -> Result<Vec<u8>, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| RunError::Io(e.into_error()))
}

pub fn read_csv(bytes: &[u8]) -> Result<Vec<ResultRow>, RunError> {
    let mut r = csv::Reader::from_reader(bytes);
    Ok(r.deserialize().collect::<Result<Vec<_>, _>>()?)
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    scenario: &'a Scenario,
    git_describe: Option<String>,
    timestamp_unix: u64,
    csv: String,
}

fn git_describe() -> Option<String> {
    let out = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Files written by [`write_outputs`].
#[derive(Clone, Debug)]
pub struct Written {
    pub csv: PathBuf,
    pub metadata: PathBuf,
    pub json: Option<PathBuf>,
}

/// Writes `<name>.csv`, `<name>.meta.json` and, if asked, `<name>.json`
/// under `dir`.
pub fn write_outputs(result: &ScenarioResult, dir: &Path, json: bool) -> Result<Written, RunError> {
    fs::create_dir_all(dir)?;
    let name = &result.scenario.name;
    let csv = dir.join(format!("{name}.csv"));
    fs::write(&csv, csv_bytes(&result.rows)?)?;
    let metadata = dir.join(format!("{name}.meta.json"));
    let meta = Metadata {
        scenario: &result.scenario,
        git_describe: git_describe(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        csv: csv.file_name().unwrap_or_default().to_string_lossy().into_owned(),
    };
    fs::write(&metadata, serde_json::to_vec_pretty(&meta)?)?;
    let json = if json {
        let p = dir.join(format!("{name}.json"));
        fs::write(&p, serde_json::to_vec_pretty(&result.rows)?)?;
        Some(p)
    } else {
        None
    };
    Ok(Written { csv, metadata, json })
}
