//! Acceptance criteria. Runs without the test harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on failure.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use cnas_core::config::RunConfig;
use cnas_core::data::{load_cifar100, to_cifar_bytes, Split, CIFAR_RECORD};
use cnas_core::driver::{Method, StepReport};
use cnas_core::report::mean_std;
use cnas_core::rl::{ActorConfig, Controller};
use cnas_core::runner::{run, RunOptions, SERIES_FILE};
use cnas_core::search::Decision;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn function_preservation() -> Outcome {
    let start = Instant::now();
    let worst = (0..200u64).map(|s| preservation_trial(s, 64)).fold(0.0, f64::max);
    let t = start.elapsed();
    outcome(
        worst <= 1e-4 && within(t, 120),
        format!("200 triples x 64 probes, max |dp| = {worst:.2e} (<= 1e-4), {:.1}s (< 120s)", t.as_secs_f64()),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut note = |name: String, err: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(err);
    };
    for kind in LAYER_KINDS {
        for s in 0..20 {
            let (net, x) = isolate_smooth(kind, 1000 + s);
            let (p, i) = network_gradient_error(&net, &x, s);
            note(format!("{kind:?}"), p.max(i));
        }
    }
    let cfg = ActorConfig {
        hidden: 8,
        ..ActorConfig::default()
    };
    for s in 0..20 {
        let c = Controller::new(3, 3, &cfg, s);
        note("wider actor".into(), actor_gradient_error(&c.wider, s));
        note("deeper actor".into(), actor_gradient_error(&c.deeper, s + 500));
    }
    let t = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(
        max <= 1e-4 && within(t, 60),
        format!("20 instances each, max rel err {max:.2e} (<= 1e-4) [{}], {:.1}s (< 60s)", parts.join(", "), t.as_secs_f64()),
    )
}

fn heuristic_oracle_check() -> Outcome {
    let mut r = rng(7);
    let mut disagreements = 0;
    let mut boundary = 0;
    let mut boundary_expanded = 0;
    for _ in 0..10_000 {
        let (v_prev, v) = heuristic_instance(&mut r);
        if !heuristic_agrees(v_prev, &v) {
            disagreements += 1;
        }
        let n_neg = v.iter().filter(|&&x| x < v_prev).count();
        if 2 * n_neg == v.len() {
            boundary += 1;
            if cnas_core::search::heuristic_func(v_prev, &v).unwrap() == Decision::Expand {
                boundary_expanded += 1;
            }
        }
    }
    outcome(
        disagreements == 0 && boundary > 0 && boundary_expanded == 0,
        format!("10000 instances, {disagreements} disagreements, {boundary} at N_neg = |V|/2 all Keep: {}", boundary_expanded == 0),
    )
}

fn aia_oracle() -> Outcome {
    let worst = (0..100u64)
        .map(|s| {
            let (aia, overall) = aia_case(s);
            (aia - overall).abs()
        })
        .fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("100 balanced cases, max |AIA - overall| = {worst:.1e} (<= 1e-12)"))
}

fn controller_sanity() -> Outcome {
    let start = Instant::now();
    let best = (2, 1);
    let mut lows = Vec::new();
    let mut ok = true;
    for seed in 0..5 {
        let (w, d) = bandit(seed, best, 500, 20);
        ok &= modal(&w) == best.0 && modal(&d) == best.1 && w[best.0] >= 0.9 && d[best.1] >= 0.9;
        lows.push(w[best.0].min(d[best.1]));
    }
    let t = start.elapsed();
    let min = lows.iter().copied().fold(1.0, f64::min);
    outcome(
        ok && within(t, 60),
        format!("5 seeds x 500 updates (batch 20), modal = best, min p(best) = {min:.3} (>= 0.9), {:.1}s (< 60s)", t.as_secs_f64()),
    )
}

fn desk_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = RunConfig::load(&path).expect("configs/desk.toml");
    cfg.validate().expect("desk config is valid");
    cfg
}

const DESK_SEEDS: [u64; 3] = [0, 1, 2];

fn desk_run(method: Method, seed: u64, root: &Path) -> Vec<StepReport> {
    let mut cfg = desk_config();
    cfg.method = method;
    cfg.seed = seed;
    cfg.workers = 1;
    cfg.out = root.join(format!("{method}_{seed}"));
    run(&cfg, &RunOptions::default()).expect("desk run").reports
}

struct Desk {
    runs: BTreeMap<Method, Vec<Vec<StepReport>>>,
    elapsed: BTreeMap<Method, Duration>,
}

impl Desk {
    fn new(root: &Path, methods: &[Method]) -> Self {
        let mut runs = BTreeMap::new();
        let mut elapsed = BTreeMap::new();
        for &m in methods {
            let start = Instant::now();
            runs.insert(m, DESK_SEEDS.iter().map(|&s| desk_run(m, s, root)).collect());
            elapsed.insert(m, start.elapsed());
        }
        Self { runs, elapsed }
    }

    fn finals(&self, m: Method, f: impl Fn(&StepReport) -> f64) -> Vec<f64> {
        self.runs[&m].iter().map(|r| f(r.last().unwrap())).collect()
    }
}

fn end_to_end(desk: &Desk) -> Outcome {
    let (cnas, _) = mean_std(&desk.finals(Method::Cnas, |r| r.aia));
    let (sa, _) = mean_std(&desk.finals(Method::Sa, |r| r.aia));
    let gap = (cnas - sa) * 100.0;
    let monotone = desk.runs[&Method::Cnas]
        .iter()
        .all(|r| r.windows(2).all(|w| w[1].params >= w[0].params));
    let keeps = desk.runs[&Method::Cnas]
        .iter()
        .flatten()
        .filter(|r| r.decision == Some(Decision::Keep))
        .count();
    let t = desk.elapsed[&Method::Cnas] + desk.elapsed[&Method::Sa];
    outcome(
        gap >= 3.0 && monotone && keeps >= 1 && within(t, 600),
        format!(
            "final AIA CNAS {cnas:.4} vs SA {sa:.4} (+{gap:.1} pts, >= 3), params non-decreasing {monotone}, {keeps} Keep decisions, {:.1}s (< 600s)",
            t.as_secs_f64()
        ),
    )
}

fn ablation(desk: &Desk) -> Outcome {
    let (cnas, cnas_sd) = mean_std(&desk.finals(Method::Cnas, |r| r.aia));
    let (hf, hf_sd) = mean_std(&desk.finals(Method::RasHf, |r| r.aia));
    let pooled = ((cnas_sd.powi(2) + hf_sd.powi(2)) / 2.0).sqrt();
    let (ras_p, _) = mean_std(&desk.finals(Method::Ras, |r| r.params as f64));
    let (cnas_p, _) = mean_std(&desk.finals(Method::Cnas, |r| r.params as f64));
    outcome(
        cnas >= hf - pooled && ras_p > cnas_p,
        format!(
            "final AIA CNAS {cnas:.4} vs RAS-HF {hf:.4} (pooled std {pooled:.4}); final params RAS {ras_p:.0} > CNAS {cnas_p:.0}"
        ),
    )
}

fn reproducibility(root: &Path) -> Outcome {
    let mut cfg = desk_config();
    cfg.seed = 11;
    let series = |dir: &str| -> Vec<u8> {
        let mut c = cfg.clone();
        c.out = root.join(dir);
        run(&c, &RunOptions::default()).expect("desk run");
        std::fs::read(c.out.join(SERIES_FILE)).unwrap()
    };
    let a = series("repro_a");
    let b = series("repro_b");
    outcome(a == b && !a.is_empty(), format!("two serial CNAS runs, series.csv {} bytes, identical {}", a.len(), a == b))
}

/// Writes CIFAR-100-format files with 500 train and 100 test records per
/// class in shuffled order and random pixels.
fn fake_cifar(dir: &Path) -> (PathBuf, PathBuf, Vec<u8>, Vec<u8>) {
    let mut r = rng(100);
    let mut make = |per_class: usize| -> Vec<u8> {
        let mut labels: Vec<u8> = (0..100u8).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        use rand::seq::SliceRandom;
        labels.shuffle(&mut r);
        let mut out = Vec::with_capacity(labels.len() * CIFAR_RECORD);
        for l in labels {
            out.push(l / 5);
            out.push(l);
            out.extend((0..CIFAR_RECORD - 2).map(|_| r.gen::<u8>()));
        }
        out
    };
    let train = make(500);
    let test = make(100);
    let (tp, sp) = (dir.join("train.bin"), dir.join("test.bin"));
    std::fs::write(&tp, &train).unwrap();
    std::fs::write(&sp, &test).unwrap();
    (tp, sp, train, test)
}

fn cifar_parsing(root: &Path) -> Outcome {
    let (tp, sp, train, test) = fake_cifar(root);
    let ds = load_cifar100(&tp, &sp).expect("parse");
    let mut counts: BTreeMap<usize, [usize; 3]> = BTreeMap::new();
    for (l, s) in ds.labels.iter().zip(&ds.splits) {
        let slot = match s {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        counts.entry(*l).or_default()[slot] += 1;
    }
    let splits_ok = counts.len() == 100 && counts.values().all(|c| *c == [450, 50, 100]);
    let (rt, rs) = to_cifar_bytes(&ds).expect("serialise");
    let bytes_ok = rt == train && rs == test;
    outcome(
        splits_ok && bytes_ok,
        format!("{} classes, 450/50/100 per class {splits_ok}, byte round trip {bytes_ok}", counts.len()),
    )
}

fn cifar_long_run() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("CNAS_CIFAR100_DIR")?);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/cifar20.toml");
    let mut base = RunConfig::load(&path).expect("configs/cifar20.toml");
    base.data.train = Some(dir.join("train.bin"));
    base.data.test = Some(dir.join("test.bin"));
    let root = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut finals = BTreeMap::new();
    let mut expanded = false;
    for m in [Method::Cnas, Method::Sa] {
        let mut cfg = base.clone();
        cfg.method = m;
        cfg.out = root.path().join(m.as_str());
        let reports = run(&cfg, &RunOptions::default()).expect("cifar run").reports;
        if m == Method::Cnas {
            expanded = reports.iter().any(|r| r.expanded);
        }
        finals.insert(m, reports.last().unwrap().aia);
    }
    let t = start.elapsed();
    let (c, s) = (finals[&Method::Cnas], finals[&Method::Sa]);
    Some(outcome(
        c >= s && expanded && within(t, 12 * 3600),
        format!("CNAS {c:.4} vs SA {s:.4}, expansion {expanded}, {:.0}s (< 12h)", t.as_secs_f64()),
    ))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {id:>2} {tag} {name}: {}", o.detail);
    };
    report(1, "function preservation", function_preservation());
    report(2, "gradient correctness", gradient_correctness());
    report(3, "heuristic oracle", heuristic_oracle_check());
    report(4, "AIA oracle", aia_oracle());
    report(5, "controller sanity", controller_sanity());
    let desk = Desk::new(tmp.path(), &Method::ALL);
    report(6, "end-to-end desk run", end_to_end(&desk));
    report(7, "ablation ordering", ablation(&desk));
    match cifar_long_run() {
        Some(o) => report(8, "CIFAR-100 long run", o),
        None => println!("criterion  8 SKIP CIFAR-100 long run: not CI-gated; set CNAS_CIFAR100_DIR to run it"),
    }
    report(9, "reproducibility", reproducibility(tmp.path()));
    report(10, "CIFAR parsing", cifar_parsing(tmp.path()));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
