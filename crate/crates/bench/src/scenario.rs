//! One training run of a scenario with all of its artifacts on disk.

use std::fs::File;
use std::path::{Path, PathBuf};

use rlbus_core::backup::BackupSuite;
use rlbus_core::barrier::SamplingMargin;
use rlbus_core::dynamics::{SystemModel, Vector};
use rlbus_core::nn::{Mlp, OutputScale};
use rlbus_core::pendulum::X_OPT;
use rlbus_hj::ValueGrid;
use rlbus_rl::sac::SacAgent;
use rlbus_rl::train::{train_performance_agent, EpisodeRecord, Snapshot, TrainObserver};
use rlbus_rl::RlError;
use serde::Serialize;

use crate::artifacts::{hash_files, ArtifactEntry};
use crate::benchmark::Benchmark;
use crate::config::RunConfig;
use crate::export::{export_set_grid, SetSummary};
use crate::{BenchError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sets_file(episode: usize) -> String {
    format!("sets_ep{episode:04}.csv")
}

pub fn backup_weights_file(episode: usize) -> String {
    format!("backup_ep{episode:04}.mlp")
}

fn observer_err(e: impl Into<BenchError>) -> RlError {
    RlError::Observer(Box::new(e.into()))
}

/// Writes the per-episode metrics row by row and the set exports at each
/// snapshot, so an interrupted run still leaves usable files.
struct ArtifactObserver<'a> {
    bench: &'a Benchmark,
    dir: &'a Path,
    oracle: Option<&'a ValueGrid>,
    metrics: csv::Writer<File>,
    files: Vec<PathBuf>,
    summaries: Vec<(usize, SetSummary)>,
}

impl ArtifactObserver<'_> {
    fn snapshot(&mut self, episode: usize, suite: &BackupSuite<2, 1>) -> Result<()> {
        if self.bench.cfg.snapshots.export {
            let name = sets_file(episode);
            let file = File::create(self.dir.join(&name))?;
            let summary = export_set_grid(self.bench, suite, self.oracle, self.bench.cfg.snapshots.per_dim, file)?;
            self.summaries.push((episode, summary));
            self.files.push(name.into());
        }
        if let Some(n) = suite.neural() {
            let name = backup_weights_file(episode);
            write_policy(n.policy.net(), n.policy.offset(), n.policy.scale(), &self.dir.join(&name))?;
            self.files.push(name.into());
        }
        Ok(())
    }

    fn episode(&mut self, r: &EpisodeRecord) -> Result<()> {
        self.metrics.write_record([
            r.episode.to_string(),
            format!("{:e}", r.ret),
            r.violations.to_string(),
            format!("{:.6}", r.wall_time_s),
            r.h3_area.map(|a| format!("{a:e}")).unwrap_or_default(),
        ])?;
        self.metrics.flush()?;
        Ok(())
    }
}

impl TrainObserver<2, 1> for ArtifactObserver<'_> {
    fn on_snapshot(&mut self, episode: usize, suite: &BackupSuite<2, 1>, _area: f64) -> rlbus_rl::Result<()> {
        self.snapshot(episode, suite).map_err(observer_err)
    }

    fn on_episode(&mut self, record: &EpisodeRecord) -> rlbus_rl::Result<()> {
        self.episode(record).map_err(observer_err)
    }
}

fn write_policy(net: &Mlp, offset: &Vector<1>, scale: &Vector<1>, path: &Path) -> Result<()> {
    let meta = OutputScale { offset: offset.as_slice().to_vec(), scale: scale.as_slice().to_vec() };
    net.write_to(std::io::BufWriter::new(File::create(path)?), Some(meta))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub scenario: &'static str,
    pub seed: u64,
    pub episodes: usize,
    pub deterministic: bool,
    pub epsilon: f64,
    pub sampling_margin: MarginRecord,
    /// Largest per-backup certified value at the task optimum after training.
    pub optimum_value: f64,
    pub snapshots: Vec<SnapshotRecord>,
    pub config: RunConfig,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarginRecord {
    pub flow_speed: f64,
    pub safe_lipschitz: f64,
    pub epsilon_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotRecord {
    pub episode: usize,
    pub neural_area: f64,
    pub sets: Option<SetSummary>,
}

/// Everything a run produced, in memory.
pub struct ScenarioRun {
    pub dir: PathBuf,
    pub bench: Benchmark,
    pub records: Vec<EpisodeRecord>,
    pub snapshots: Vec<Snapshot>,
    pub suite: BackupSuite<2, 1>,
    pub desired: Option<SacAgent<2, 1>>,
    pub backup_agent: Option<SacAgent<2, 1>>,
    pub backup_transitions: usize,
    pub manifest: Manifest,
}

impl ScenarioRun {
    pub fn margin(&self) -> SamplingMargin {
        self.bench.margin
    }

    pub fn total_violations(&self) -> usize {
        self.records.iter().map(|r| r.violations).sum()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ret).collect()
    }
}

/// Trains one scenario and writes metrics, set exports, weights and the
/// manifest into `dir`. `oracle` adds the reach-avoid column to set exports.
pub fn run_scenario(cfg: RunConfig, dir: &Path, oracle: Option<&ValueGrid>) -> Result<ScenarioRun> {
    std::fs::create_dir_all(dir)?;
    let bench = Benchmark::new(cfg)?;
    let suite = bench.initial_suite()?;
    let env = bench.environment();
    let tcfg = bench.train_config();

    let mut metrics = csv::Writer::from_path(dir.join(METRICS_FILE))?;
    metrics.write_record(["episode", "return", "violations", "wall_time_s", "h3_area"])?;
    metrics.flush()?;
    let mut observer =
        ArtifactObserver { bench: &bench, dir, oracle, metrics, files: vec![METRICS_FILE.into()], summaries: Vec::new() };
    let outcome = train_performance_agent(&env, suite, &tcfg, &mut observer).map_err(|e| match e {
        RlError::Observer(inner) => match inner.downcast::<BenchError>() {
            Ok(b) => *b,
            Err(other) => BenchError::Rl(RlError::Observer(other)),
        },
        e => BenchError::Rl(e),
    })?;
    let mut files = std::mem::take(&mut observer.files);
    let summaries = std::mem::take(&mut observer.summaries);
    drop(observer);

    if let Some(agent) = &outcome.desired {
        let b = bench.sys.control_box();
        write_policy(agent.actor(), &b.midpoint(), &b.half_width(), &dir.join("desired_policy.mlp"))?;
        files.push("desired_policy.mlp".into());
    }
    if let Some(n) = outcome.suite.neural() {
        write_policy(n.policy.net(), n.policy.offset(), n.policy.scale(), &dir.join("backup_policy.mlp"))?;
        files.push("backup_policy.mlp".into());
    }
    let optimum_value = {
        let barrier = bench.barrier(&outcome.suite)?;
        let eval = barrier.h_value(&Vector::<2>::from(X_OPT))?;
        eval.h_j.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let snapshots = outcome
        .snapshots
        .iter()
        .map(|s| SnapshotRecord {
            episode: s.episode,
            neural_area: s.area,
            sets: summaries.iter().find(|(k, _)| *k == s.episode).map(|(_, v)| v.clone()),
        })
        .collect();
    let manifest = Manifest {
        scenario: bench.cfg.scenario.name(),
        seed: bench.cfg.seed,
        episodes: bench.cfg.episodes,
        deterministic: bench.cfg.deterministic,
        epsilon: bench.epsilon,
        sampling_margin: MarginRecord {
            flow_speed: bench.margin.flow_speed,
            safe_lipschitz: bench.margin.safe_lipschitz,
            epsilon_s: bench.margin.epsilon_s,
        },
        optimum_value,
        snapshots,
        config: bench.cfg.clone(),
        artifacts: hash_files(dir, &files)?,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(ScenarioRun {
        dir: dir.to_path_buf(),
        bench,
        records: outcome.records,
        snapshots: outcome.snapshots,
        suite: outcome.suite,
        desired: outcome.desired,
        backup_agent: outcome.backup,
        backup_transitions: outcome.backup_transitions,
        manifest,
    })
}
