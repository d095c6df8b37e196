//! Training and evaluation runs.

use std::fs;
use std::path::{Path, PathBuf};

use objsup_core::algos::{EvalSummary, IterationMetrics, Trainer};
use objsup_core::approx::{Checkpoint, CriticSet, MlpCategorical, MlpQ, SquashedGaussian, TabularQ, TabularSoftmax};
use objsup_core::envs::{heading_table, DiscreteActions, HazardGrid, PointNav2D};
use objsup_core::seed::{derive_seed, labeled_rng};
use serde::{Deserialize, Serialize};

use crate::config::{EnvironmentConfig, ExperimentConfig};
use crate::error::HarnessError;

/// Environment variable that replaces `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "OBJSUP_OUTPUT_DIR";

/// Trainer for whichever environment and approximator family a config selects.
pub enum AnyTrainer {
    Grid(Trainer<HazardGrid, TabularSoftmax, TabularQ>),
    NavDiscrete(Trainer<DiscreteActions<PointNav2D>, MlpCategorical, MlpQ<usize>>),
    NavContinuous(Trainer<PointNav2D, SquashedGaussian, MlpQ<Vec<f64>>>),
}

macro_rules! each {
    ($self:expr, $t:ident => $body:expr) => {
        match $self {
            AnyTrainer::Grid($t) => $body,
            AnyTrainer::NavDiscrete($t) => $body,
            AnyTrainer::NavContinuous($t) => $body,
        }
    };
}

impl AnyTrainer {
    /// Builds fresh policies and critics; initial weights derive from `seed`.
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self, HarnessError> {
        let tc = cfg.trainer_config();
        let mut rng = labeled_rng(seed, "init");
        Ok(match &cfg.environment {
            EnvironmentConfig::Grid(g) => {
                let env = HazardGrid::new(g.clone())?;
                let ns = env.state_count();
                let critics = CriticSet::new(TabularQ::new(ns, 4), vec![TabularQ::new(ns, 4); 2]);
                let (task, rec) = (TabularSoftmax::new(ns, 4), TabularSoftmax::new(ns, 4));
                Self::Grid(Trainer::new(env, task, rec, critics, tc, seed)?)
            }
            EnvironmentConfig::Nav(n) => {
                let nav = PointNav2D::new(n.config.clone())?;
                let od = nav.obs_dim();
                let (ph, ch) = (&cfg.policy.hidden, &cfg.critic.hidden);
                match n.headings {
                    Some(h) => {
                        let env = DiscreteActions::new(nav, heading_table(h, n.config.max_speed))?;
                        let na = env.action_count();
                        let task = MlpCategorical::new(od, ph, na, &mut rng);
                        let rec = MlpCategorical::new(od, ph, na, &mut rng);
                        let mut q = || MlpQ::<usize>::new(od, na, ch, &mut rng);
                        let critics = CriticSet::new(q(), vec![q(), q()]);
                        Self::NavDiscrete(Trainer::new(env, task, rec, critics, tc, seed)?)
                    }
                    None => {
                        let bounds = vec![n.config.max_speed; 2];
                        let ls = cfg.policy.init_log_std;
                        let task = SquashedGaussian::new(od, ph, bounds.clone(), ls, &mut rng);
                        let rec = SquashedGaussian::new(od, ph, bounds, ls, &mut rng);
                        let scale = 1.0 / n.config.max_speed;
                        let mut q = || MlpQ::<Vec<f64>>::new(od, 2, ch, &mut rng).with_action_scale(scale);
                        let critics = CriticSet::new(q(), vec![q(), q()]);
                        Self::NavContinuous(Trainer::new(nav, task, rec, critics, tc, seed)?)
                    }
                }
            }
        })
    }

    pub fn train_step(&mut self) -> Result<IterationMetrics, HarnessError> {
        Ok(each!(self, t => t.train_step())?)
    }

    pub fn evaluate(&mut self, episodes: usize, seed: u64) -> Result<EvalSummary, HarnessError> {
        Ok(each!(self, t => t.evaluate(episodes, seed))?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        each!(self, t => t.checkpoint())
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), HarnessError> {
        Ok(each!(self, t => t.restore(ck))?)
    }
}

/// Where a config's outputs go: the override, then the environment variable,
/// then `output.dir`; always inside a subdirectory named after the config.
pub fn output_dir(cfg: &ExperimentConfig, dir_override: Option<&Path>) -> PathBuf {
    let base = dir_override
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.dir.clone());
    base.join(&cfg.name)
}

pub fn csv_header(constraints: usize) -> Vec<String> {
    let mut h = vec!["iter".to_string(), "task_return_mean".to_string()];
    h.extend((0..constraints).map(|i| format!("violations_c{i}")));
    h.extend(
        [
            "p_minus_mean",
            "recovery_fraction",
            "grad_norm_task",
            "grad_norm_recovery",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

fn csv_row(m: &IterationMetrics) -> Vec<String> {
    let mut r = vec![m.iter.to_string(), m.task_return_mean.to_string()];
    r.extend(m.violations.iter().map(f64::to_string));
    r.extend(
        [
            m.p_minus_mean,
            m.recovery_fraction,
            m.grad_norm_task,
            m.grad_norm_recovery,
        ]
        .iter()
        .map(f64::to_string),
    );
    r
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub iterations_completed: usize,
    /// Set when training or evaluation failed; the CSV then holds the rows
    /// completed before the failure.
    pub error: Option<String>,
    pub eval: Option<EvalSummary>,
    pub csv: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    fn table_cell(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task_return: MeanStd,
    pub violations: Vec<MeanStd>,
    pub recovery_fraction: MeanStd,
    /// `return | c0 | c1 | ...` with `mean ± std` cells.
    pub table_row: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub name: String,
    pub method: String,
    /// `complete` or `partial`.
    pub status: String,
    /// Over the seeds that finished.
    pub aggregate: Option<Aggregate>,
    pub seeds: Vec<SeedResult>,
    pub config: ExperimentConfig,
}

impl TrainSummary {
    pub fn is_complete(&self) -> bool {
        self.status == "complete"
    }
}

fn aggregate(results: &[SeedResult], constraints: usize) -> Option<Aggregate> {
    let evals: Vec<&EvalSummary> = results.iter().filter_map(|r| r.eval.as_ref()).collect();
    if evals.is_empty() {
        return None;
    }
    let col = |f: &dyn Fn(&EvalSummary) -> f64| MeanStd::of(&evals.iter().map(|e| f(e)).collect::<Vec<_>>());
    let task_return = col(&|e| e.return_mean);
    let violations: Vec<MeanStd> = (0..constraints).map(|i| col(&|e| e.violations[i])).collect();
    let table_row = std::iter::once(&task_return)
        .chain(&violations)
        .map(MeanStd::table_cell)
        .collect::<Vec<_>>()
        .join(" | ");
    Some(Aggregate {
        task_return,
        violations,
        recovery_fraction: col(&|e| e.recovery_fraction),
        table_row,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn train_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedResult, HarnessError> {
    let csv_path = dir.join(format!("seed_{seed}.csv"));
    let mut result = SeedResult {
        seed,
        iterations_completed: 0,
        error: None,
        eval: None,
        csv: csv_path.clone(),
        checkpoint: None,
    };
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(csv_header(cfg.environment.constraint_count()))?;
    writer.flush().map_err(|e| HarnessError::io(&csv_path, e))?;
    let mut trainer = match AnyTrainer::build(cfg, seed) {
        Ok(t) => t,
        Err(e) => {
            result.error = Some(e.to_string());
            return Ok(result);
        }
    };
    for _ in 0..cfg.run.iterations {
        match trainer.train_step() {
            Ok(m) => {
                writer.write_record(csv_row(&m))?;
                result.iterations_completed += 1;
            }
            Err(e) => {
                result.error = Some(e.to_string());
                break;
            }
        }
    }
    writer.flush().map_err(|e| HarnessError::io(&csv_path, e))?;
    if result.error.is_none() {
        let ck_path = dir.join(format!("seed_{seed}.checkpoint.json"));
        write_file(&ck_path, &trainer.checkpoint().to_json())?;
        result.checkpoint = Some(ck_path);
        match trainer.evaluate(cfg.run.eval_episodes, derive_seed(seed, "final-eval")) {
            Ok(e) => result.eval = Some(e),
            Err(e) => result.error = Some(e.to_string()),
        }
    }
    Ok(result)
}

/// Trains every seed (concurrently), writing `seed_<s>.csv`,
/// `seed_<s>.checkpoint.json` and `summary.json` under [`output_dir`].
///
/// A seed that fails mid-run keeps its partial CSV and marks the summary
/// `partial`; I/O failures abort.
pub fn run_train(
    cfg: &ExperimentConfig,
    seed_override: Option<u64>,
    dir_override: Option<&Path>,
) -> Result<TrainSummary, HarnessError> {
    let dir = output_dir(cfg, dir_override);
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let seeds = cfg.seeds(seed_override);
    let results: Vec<Result<SeedResult, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let dir = &dir;
                s.spawn(move || train_seed(cfg, seed, dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let complete = results.iter().all(|r| r.error.is_none());
    let summary = TrainSummary {
        name: cfg.name.clone(),
        method: cfg.method.name().to_string(),
        status: if complete { "complete" } else { "partial" }.to_string(),
        aggregate: aggregate(&results, cfg.environment.constraint_count()),
        seeds: results,
        config: cfg.clone(),
    };
    let path = dir.join("summary.json");
    write_file(
        &path,
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub seed: u64,
    pub episodes: usize,
    pub return_mean: f64,
    /// Mean flagged steps per episode, per constraint.
    pub violations: Vec<f64>,
    pub recovery_fraction: f64,
}

/// Restores a checkpoint into the config's architecture and rolls it out.
/// Uses the first configured seed unless overridden.
pub fn run_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    episodes: usize,
    seed_override: Option<u64>,
) -> Result<EvalReport, HarnessError> {
    let seed = cfg.seeds(seed_override)[0];
    let text = fs::read_to_string(checkpoint).map_err(|e| HarnessError::io(checkpoint, e))?;
    let ck = Checkpoint::from_json(&text)?;
    let mut trainer = AnyTrainer::build(cfg, seed)?;
    trainer.restore(&ck)?;
    let e = trainer.evaluate(episodes, derive_seed(seed, "eval"))?;
    Ok(EvalReport {
        name: cfg.name.clone(),
        seed,
        episodes: e.episodes,
        return_mean: e.return_mean,
        violations: e.violations,
        recovery_fraction: e.recovery_fraction,
    })
}
