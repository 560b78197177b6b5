//! Merging completed runs into per-step mean ± std series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{DataConfig, RunConfig};
use crate::driver::{Method, StepReport};
use crate::error::{Error, Result};
use crate::runner::{read_reports, CONFIG_FILE, STEPS_FILE};
use crate::stream::Scenario;

pub struct RunRecord {
    pub dir: PathBuf,
    pub method: Method,
    pub seed: u64,
    pub scenario: Scenario,
    pub data: DataConfig,
    pub reports: Vec<StepReport>,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let reports = read_reports(dir)?;
        if reports.is_empty() {
            return Err(Error::Merge(format!("{} has no completed steps", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            method: cfg.method,
            seed: cfg.seed,
            scenario: cfg.scenario,
            data: cfg.data,
            reports,
        })
    }
}

/// Run directories under `path`: the path itself if it holds a run,
/// otherwise its immediate subdirectories that do, sorted by name.
pub fn discover_runs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join(STEPS_FILE).exists() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut runs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(STEPS_FILE).exists())
        .collect();
    runs.sort();
    Ok(runs)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergedStep {
    pub step: usize,
    pub runs: usize,
    pub classes_seen: f64,
    pub aia: (f64, f64),
    pub params: (f64, f64),
    /// Fraction of runs that expanded at this step.
    pub expanded: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSeries {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub steps: Vec<MergedStep>,
}

/// Groups runs by method and merges each group step by step, truncating to
/// the shortest run. All runs must share the scenario and data settings.
pub fn merge(runs: &[RunRecord]) -> Result<Vec<MethodSeries>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Merge("no runs to merge".into()))?;
    for r in &runs[1..] {
        if r.scenario != first.scenario || r.data != first.data {
            return Err(Error::Merge(format!(
                "{} and {} use different scenarios or data",
                first.dir.display(),
                r.dir.display()
            )));
        }
    }
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.method.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for group in groups.values() {
        let len = group.iter().map(|r| r.reports.len()).min().unwrap();
        let steps = (0..len)
            .map(|i| {
                let col = |f: &dyn Fn(&StepReport) -> f64| -> Vec<f64> {
                    group.iter().map(|r| f(&r.reports[i])).collect()
                };
                MergedStep {
                    step: group[0].reports[i].step,
                    runs: group.len(),
                    classes_seen: mean_std(&col(&|r| r.classes_seen as f64)).0,
                    aia: mean_std(&col(&|r| r.aia)),
                    params: mean_std(&col(&|r| r.params as f64)),
                    expanded: mean_std(&col(&|r| r.expanded as u8 as f64)).0,
                }
            })
            .collect();
        out.push(MethodSeries {
            method: group[0].method,
            seeds: group.iter().map(|r| r.seed).collect(),
            steps,
        });
    }
    Ok(out)
}

pub fn merged_csv(series: &[MethodSeries]) -> String {
    let mut out = String::from(
        "method,step,runs,classes_seen,aia_mean,aia_std,params_mean,params_std,expanded_frac\n",
    );
    for s in series {
        for m in &s.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.method, m.step, m.runs, m.classes_seen, m.aia.0, m.aia.1, m.params.0, m.params.1, m.expanded
            );
        }
    }
    out
}

fn versus_classes(series: &[MethodSeries], metric: &str, pick: impl Fn(&MergedStep) -> (f64, f64)) -> String {
    let mut out = format!("method,classes_seen,{metric}_mean,{metric}_std\n");
    for s in series {
        for m in &s.steps {
            let (mean, std) = pick(m);
            let _ = writeln!(out, "{},{},{},{}", s.method, m.classes_seen, mean, std);
        }
    }
    out
}

pub fn aia_vs_classes_csv(series: &[MethodSeries]) -> String {
    versus_classes(series, "aia", |m| m.aia)
}

pub fn params_vs_classes_csv(series: &[MethodSeries]) -> String {
    versus_classes(series, "params", |m| m.params)
}

/// Final-step comparison table in Markdown.
pub fn comparison_table(series: &[MethodSeries]) -> String {
    let mut out = String::from("| method | runs | step | classes | final AIA | final params |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for s in series {
        if let Some(m) = s.steps.last() {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.4} ± {:.4} | {:.0} ± {:.0} |",
                s.method, m.runs, m.step, m.classes_seen, m.aia.0, m.aia.1, m.params.0, m.params.1
            );
        }
    }
    out
}

/// Loads every run under `inputs`, merges them, and writes `merged.csv`,
/// `aia_vs_classes.csv`, `params_vs_classes.csv` and `comparison.md` into
/// `out`. Returns the comparison table.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<String> {
    let mut runs = Vec::new();
    for input in inputs {
        for dir in discover_runs(input)? {
            runs.push(RunRecord::load(&dir)?);
        }
    }
    let series = merge(&runs)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = comparison_table(&series);
    for (name, body) in [
        ("merged.csv", merged_csv(&series)),
        ("aia_vs_classes.csv", aia_vs_classes_csv(&series)),
        ("params_vs_classes.csv", params_vs_classes_csv(&series)),
        ("comparison.md", table.clone()),
    ] {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}
