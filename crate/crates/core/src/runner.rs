//! Batch runs: stream execution, report files, checkpoints and resume.
//!
//! Output directory layout:
//!
//! ```text
//! config.toml          effective configuration
//! steps.jsonl          one StepReport per line
//! candidates.jsonl     one line per sampled candidate
//! series.csv           step,classes_seen,aia,params,expanded,wall_s
//! summary.json         run summary (rewritten after every step)
//! checkpoints/latest   name of the newest step directory
//! checkpoints/step_NNNN/{network.bin,wider.bin,deeper.bin,state.json}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::driver::{incremental_learn, initial_state, LearnerState, Method, StepReport};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::rl::{Actor, Controller};
use crate::search::{CandidateLog, Decision, Policy};
use crate::seed;
use crate::stream::{make_stream, Stream};

pub const CONFIG_FILE: &str = "config.toml";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const SERIES_FILE: &str = "series.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
const LATEST: &str = "latest";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from the newest checkpoint in the output directory.
    pub resume: bool,
    /// Stop after completing this step (used to simulate interruptions).
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<StepReport>,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointState {
    step: usize,
    classes_seen: usize,
    train_examples: usize,
    val_examples: usize,
    actor_updates: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub seed: u64,
    pub completed: bool,
    pub steps_completed: usize,
    pub total_steps: usize,
    pub classes_seen: usize,
    pub final_aia: f64,
    pub final_params: usize,
    pub expansions: usize,
    pub keeps: usize,
    pub initial_architecture: String,
    pub final_architecture: String,
    /// Original label of each class, in arrival order.
    pub class_order: Vec<usize>,
    pub preprocessing: String,
    pub wall_s: f64,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_file(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// `series.csv` contents. `wall_s` stays empty unless requested so that the
/// file is a pure function of configuration and seed.
pub fn series_csv(reports: &[StepReport], wall_time: bool) -> String {
    let mut out = String::from("step,classes_seen,aia,params,expanded,wall_s\n");
    for r in reports {
        let wall = if wall_time {
            format!("{:.3}", r.wall_s)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.classes_seen, r.aia, r.params, r.expanded as u8, wall
        );
    }
    out
}

fn step_dir(root: &Path, step: usize) -> PathBuf {
    root.join(CHECKPOINT_DIR).join(format!("step_{step:04}"))
}

fn save_checkpoint(root: &Path, state: &LearnerState) -> Result<()> {
    let dir = step_dir(root, state.step);
    create_dir(&dir)?;
    checkpoint::save(&state.network, &dir.join("network.bin"))?;
    let actor_updates = match &state.policy {
        Policy::Learned(c) => {
            checkpoint::save(c.wider.network(), &dir.join("wider.bin"))?;
            checkpoint::save(c.deeper.network(), &dir.join("deeper.bin"))?;
            Some((c.wider.updates(), c.deeper.updates()))
        }
        Policy::Uniform => None,
    };
    let meta = CheckpointState {
        step: state.step,
        classes_seen: state.classes_seen,
        train_examples: state.train.len(),
        val_examples: state.val.len(),
        actor_updates,
    };
    write_file(&dir.join("state.json"), serde_json::to_string_pretty(&meta)?)?;
    let name = dir.file_name().unwrap().to_string_lossy().into_owned();
    write_file(&root.join(CHECKPOINT_DIR).join(LATEST), name)
}

fn load_checkpoint(root: &Path, cfg: &RunConfig, stream: &Stream) -> Result<Option<LearnerState>> {
    let latest = root.join(CHECKPOINT_DIR).join(LATEST);
    if !latest.exists() {
        return Ok(None);
    }
    let dir = root.join(CHECKPOINT_DIR).join(read_file(&latest)?.trim());
    let meta: CheckpointState = serde_json::from_str(&read_file(&dir.join("state.json"))?)?;
    if meta.step >= stream.steps.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint step {} is beyond the {}-step stream",
            meta.step,
            stream.steps.len()
        )));
    }
    let replay = &stream.steps[..=meta.step];
    let train: Vec<usize> = replay.iter().flat_map(|s| s.train.iter().copied()).collect();
    let val: Vec<usize> = replay.iter().flat_map(|s| s.val.iter().copied()).collect();
    if train.len() != meta.train_examples || val.len() != meta.val_examples {
        return Err(Error::Checkpoint(
            "checkpoint does not match the configured stream".into(),
        ));
    }
    let policy = match (cfg.method, meta.actor_updates) {
        (Method::Cnas, Some((wu, du))) => Policy::Learned(Controller {
            wider: Actor::restore(
                checkpoint::load(&dir.join("wider.bin"))?,
                cfg.agent.learning_rate,
                wu,
            )?,
            deeper: Actor::restore(
                checkpoint::load(&dir.join("deeper.bin"))?,
                cfg.agent.learning_rate,
                du,
            )?,
            entropy_coef: cfg.agent.entropy_coef,
        }),
        (Method::Cnas, None) => {
            return Err(Error::Checkpoint("checkpoint has no actor parameters".into()))
        }
        _ => Policy::Uniform,
    };
    Ok(Some(LearnerState {
        step: meta.step,
        network: checkpoint::load(&dir.join("network.bin"))?,
        policy,
        train,
        val,
        classes_seen: meta.classes_seen,
    }))
}

/// Fields that must agree between the stored and the current
/// configuration when resuming.
fn resume_key(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        out: PathBuf::new(),
        workers: 1,
        record_wall_time: false,
        ..cfg.clone()
    }
}

fn preprocessing(cfg: &RunConfig) -> String {
    match cfg.data.source {
        DataSource::Cifar100 => {
            "pixels scaled by 1/255; no mean subtraction; no augmentation".into()
        }
        DataSource::Synthetic => "synthetic Gaussian clusters rendered to [0, 1]".into(),
    }
}

struct Writer<'a> {
    root: &'a Path,
    cfg: &'a RunConfig,
    stream_len: usize,
    class_order: Vec<usize>,
    initial_architecture: String,
    started: Instant,
    wall_before: f64,
}

impl Writer<'_> {
    fn write(&self, reports: &[StepReport], candidates: &[CandidateLog], completed: bool) -> Result<()> {
        write_file(&self.root.join(STEPS_FILE), to_jsonl(reports)?)?;
        write_file(&self.root.join(CANDIDATES_FILE), to_jsonl(candidates)?)?;
        write_file(
            &self.root.join(SERIES_FILE),
            series_csv(reports, self.cfg.record_wall_time),
        )?;
        let last = reports.last().expect("at least the base step");
        let summary = Summary {
            method: self.cfg.method,
            seed: self.cfg.seed,
            completed,
            steps_completed: reports.len(),
            total_steps: self.stream_len,
            classes_seen: last.classes_seen,
            final_aia: last.aia,
            final_params: last.params,
            expansions: reports.iter().filter(|r| r.decision == Some(Decision::Expand)).count(),
            keeps: reports.iter().filter(|r| r.decision == Some(Decision::Keep)).count(),
            initial_architecture: self.initial_architecture.clone(),
            final_architecture: last.descriptor.clone(),
            class_order: self.class_order.clone(),
            preprocessing: preprocessing(self.cfg),
            wall_s: self.wall_before + self.started.elapsed().as_secs_f64(),
        };
        write_file(
            &self.root.join(SUMMARY_FILE),
            serde_json::to_string_pretty(&summary)?,
        )
    }
}

/// Executes the configured stream, writing reports and a checkpoint after
/// every step.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let root = cfg.out.as_path();
    create_dir(root)?;
    let config_path = root.join(CONFIG_FILE);
    if opts.resume && config_path.exists() {
        let stored = RunConfig::from_toml(&read_file(&config_path)?, root)?;
        if resume_key(&stored) != resume_key(cfg) {
            return Err(Error::Config(format!(
                "cannot resume: {} was produced by a different configuration",
                root.display()
            )));
        }
    }
    write_file(&config_path, cfg.to_toml())?;

    let (ds, order) = cfg.data.load(cfg.seed)?;
    let stream = make_stream(
        &cfg.scenario,
        &ds,
        &order,
        seed::derive(cfg.seed, &[seed::STREAM]),
    )?;
    let (ds, stream, map) = stream.relabel(&ds)?;
    let base = cfg.architecture()?;
    let driver = cfg.driver();

    let resumed = if opts.resume {
        load_checkpoint(root, cfg, &stream)?
    } else {
        None
    };
    let mut writer = Writer {
        root,
        cfg,
        stream_len: stream.steps.len(),
        class_order: map.to_original.clone(),
        initial_architecture: base.with_classes(cfg.scenario.base).summary(),
        started: Instant::now(),
        wall_before: 0.0,
    };
    let (mut state, mut reports, mut candidates) = match resumed {
        Some(state) => {
            let reports: Vec<StepReport> = read_jsonl::<StepReport>(&root.join(STEPS_FILE))?
                .into_iter()
                .filter(|r| r.step <= state.step)
                .collect();
            if reports.len() != state.step + 1 {
                return Err(Error::Checkpoint(format!(
                    "{STEPS_FILE} holds {} reports up to step {}",
                    reports.len(),
                    state.step
                )));
            }
            let candidates: Vec<CandidateLog> = read_jsonl::<CandidateLog>(&root.join(CANDIDATES_FILE))?
                .into_iter()
                .filter(|c| c.step <= state.step)
                .collect();
            writer.wall_before = reports.iter().map(|r| r.wall_s).sum();
            log::info!("resuming {} after step {}", root.display(), state.step);
            (state, reports, candidates)
        }
        None => {
            let _ = fs::remove_dir_all(root.join(CHECKPOINT_DIR));
            let (state, report) = initial_state(&base, &stream.steps[0], &ds, &driver)?;
            log::info!("step 0: aia {:.4} params {}", report.aia, report.params);
            save_checkpoint(root, &state)?;
            let reports = vec![report];
            writer.write(&reports, &[], false)?;
            (state, reports, Vec::new())
        }
    };

    let mut completed = true;
    for step in &stream.steps[state.step + 1..] {
        if opts.stop_after.is_some_and(|s| state.step >= s) {
            completed = false;
            break;
        }
        let (next, report) = incremental_learn(state, step, &ds, &driver)?;
        log::info!(
            "step {}: classes {} aia {:.4} params {} decision {:?}",
            report.step,
            report.classes_seen,
            report.aia,
            report.params,
            report.decision
        );
        state = next;
        candidates.extend(report.candidates.iter().map(|c| c.log(report.step)));
        reports.push(report);
        save_checkpoint(root, &state)?;
        writer.write(&reports, &candidates, false)?;
    }
    writer.write(&reports, &candidates, completed)?;
    Ok(RunOutcome { reports, completed })
}

pub fn read_reports(run_dir: &Path) -> Result<Vec<StepReport>> {
    read_jsonl(&run_dir.join(STEPS_FILE))
}

pub fn read_summary(run_dir: &Path) -> Result<Summary> {
    Ok(serde_json::from_str(&read_file(&run_dir.join(SUMMARY_FILE))?)?)
}
