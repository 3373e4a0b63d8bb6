//! The work behind each subcommand, kept free of argument parsing so tests
//! can call it directly.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clickcast_core::evaluation::{evaluate, AccuracyReport, LabeledSession};
use clickcast_core::simulator::{generate_dataset, generate_session, study_task, study_user, TaskKind};
use clickcast_core::{
    load_clicklog, load_markspace, run_session, save_clicklog, save_markspace, ClickEvent, FilterError,
    FilterParams, MarkId, MarkSpace,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("bad spec {path}: {message}")]
    Spec { path: PathBuf, message: String },
    #[error("bad click log {path}: {message}")]
    Log { path: PathBuf, message: String },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec { .. } => 2,
            CliError::Log { .. } => 3,
            CliError::Params(_) => 4,
            CliError::Io { .. } | CliError::Other(_) => 1,
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::InvalidParams(_) | FilterError::Model(_) => CliError::Params(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        context: format!("writing {}", path.display()),
        source: std::io::Error::other(e),
    }
}

pub fn load_space(path: &Path) -> Result<MarkSpace<f64>, CliError> {
    let spec_error = |message: String| CliError::Spec {
        path: path.to_owned(),
        message,
    };
    let file = File::open(path).map_err(|e| spec_error(e.to_string()))?;
    load_markspace(BufReader::new(file)).map_err(|e| spec_error(e.to_string()))
}

pub fn load_log(path: &Path, space: &MarkSpace<f64>) -> Result<Vec<ClickEvent<f64>>, CliError> {
    let log_error = |message: String| CliError::Log {
        path: path.to_owned(),
        message,
    };
    let file = File::open(path).map_err(|e| log_error(e.to_string()))?;
    load_clicklog(BufReader::new(file), space).map_err(|e| log_error(e.to_string()))
}

/// Outcome of the prediction made after click `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayStep {
    pub t: usize,
    pub next_mark: MarkId,
    pub hit: bool,
    /// 1-based position of the next mark in the prediction set.
    pub rank: Option<usize>,
    pub top_mark: Option<MarkId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub clicks: usize,
    pub steps: Vec<ReplayStep>,
    pub degenerate_steps: Vec<usize>,
}

impl ReplayReport {
    pub fn hits(&self) -> usize {
        self.steps.iter().filter(|s| s.hit).count()
    }

    pub fn accuracy(&self) -> Option<f64> {
        (!self.steps.is_empty()).then(|| self.hits() as f64 / self.steps.len() as f64)
    }

    /// Human-readable report: one line per prediction, then the totals.
    pub fn render<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.steps {
            let rank = s.rank.map_or_else(|| "-".to_owned(), |r| r.to_string());
            writeln!(
                out,
                "t={:<4} next={:<8} {} rank={}",
                s.t,
                s.next_mark,
                if s.hit { "hit " } else { "miss" },
                rank
            )?;
        }
        writeln!(out, "clicks: {}", self.clicks)?;
        writeln!(out, "predictions: {}", self.steps.len())?;
        writeln!(out, "hits: {}", self.hits())?;
        match self.accuracy() {
            Some(a) => writeln!(out, "accuracy: {a:.4}")?,
            None => writeln!(out, "accuracy: n/a (no predictions evaluated)")?,
        }
        if !self.degenerate_steps.is_empty() {
            writeln!(out, "degenerate updates at t = {:?}", self.degenerate_steps)?;
        }
        Ok(())
    }

    /// `t,next_mark_id,hit,rank,top_mark_id`.
    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["t", "next_mark_id", "hit", "rank", "top_mark_id"])?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.next_mark.to_string(),
                (s.hit as u8).to_string(),
                s.rank.map(|r| r.to_string()).unwrap_or_default(),
                s.top_mark.map(|r| r.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn replay(
    space: &MarkSpace<f64>,
    clicks: &[ClickEvent<f64>],
    params: &FilterParams<f64>,
) -> Result<ReplayReport, CliError> {
    let run = run_session(space, clicks, params)?;
    let steps = run
        .records
        .iter()
        .map(|r| ReplayStep {
            t: r.prediction.t,
            next_mark: r.next_mark,
            hit: r.hit,
            rank: r
                .prediction
                .entries
                .iter()
                .position(|e| e.mark_id == r.next_mark)
                .map(|i| i + 1),
            top_mark: r.prediction.top(),
        })
        .collect();
    Ok(ReplayReport {
        clicks: clicks.len(),
        steps,
        degenerate_steps: run.degenerate_steps,
    })
}

pub fn write_replay_csv(report: &ReplayReport, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?;
    report.write_csv(BufWriter::new(file)).map_err(csv_error(path))
}

/// Synthetic dataset and per-kind session counts.
#[derive(Clone, Debug)]
pub struct SimulateConfig {
    pub marks: usize,
    pub colors: u32,
    /// Seeds the dataset, the tasks and the simulated users.
    pub data_seed: u64,
    pub sessions: Vec<(TaskKind, usize)>,
}

pub struct Simulation {
    pub space: MarkSpace<f64>,
    pub sessions: Vec<LabeledSession<f64>>,
}

/// Builds the dataset and the synthetic sessions, session ids numbered in
/// generation order across kinds.
pub fn simulate_sessions(cfg: &SimulateConfig) -> Result<Simulation, CliError> {
    let space = generate_dataset::<f64>(cfg.marks, cfg.colors, cfg.data_seed)
        .map_err(|e| CliError::Params(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let mut sessions = Vec::new();
    for &(kind, n) in &cfg.sessions {
        for _ in 0..n {
            let id = sessions.len();
            let task = study_task(kind, &space, &mut rng);
            let user = study_user::<f64>(&task);
            let seed = cfg.data_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id as u64);
            let s = generate_session(&space, &task, &user, seed).map_err(|e| CliError::Other(e.to_string()))?;
            sessions.push(LabeledSession {
                task_kind: kind.to_string(),
                session_id: id,
                clicks: s.clicks,
            });
        }
    }
    Ok(Simulation { space, sessions })
}

pub fn evaluate_sessions(
    space: &MarkSpace<f64>,
    sessions: &[LabeledSession<f64>],
    params: &FilterParams<f64>,
) -> Result<AccuracyReport, CliError> {
    Ok(evaluate(space, sessions, params)?)
}

/// Writes the space as `spec.json` and each session as
/// `logs/<kind>_<id>.jsonl`, the layout [`load_sessions`] reads back.
pub fn export_sessions(dir: &Path, space: &MarkSpace<f64>, sessions: &[LabeledSession<f64>]) -> Result<(), CliError> {
    let logs = dir.join("logs");
    fs::create_dir_all(&logs).map_err(CliError::io(format!("creating {}", logs.display())))?;
    let spec_path = dir.join("spec.json");
    let spec = File::create(&spec_path).map_err(CliError::io(format!("creating {}", spec_path.display())))?;
    save_markspace(space, BufWriter::new(spec)).map_err(CliError::io(format!("writing {}", spec_path.display())))?;
    for s in sessions {
        let path = logs.join(format!("{}_{:03}.jsonl", s.task_kind, s.session_id));
        let file = File::create(&path).map_err(CliError::io(format!("creating {}", path.display())))?;
        let mut w = BufWriter::new(file);
        save_clicklog(&s.clicks, &mut w)
            .and_then(|_| w.flush())
            .map_err(CliError::io(format!("writing {}", path.display())))?;
    }
    Ok(())
}

/// Reads every `<kind>_<id>.jsonl` in `dir`, sorted by kind then id.
pub fn load_sessions(dir: &Path, space: &MarkSpace<f64>) -> Result<Vec<LabeledSession<f64>>, CliError> {
    let entries = fs::read_dir(dir).map_err(CliError::io(format!("reading {}", dir.display())))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(CliError::io(format!("reading {}", dir.display())))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let parsed = stem
            .split_once('_')
            .and_then(|(kind, id)| Some((kind.to_owned(), id.parse::<usize>().ok()?)));
        let Some((kind, id)) = parsed else {
            return Err(CliError::Log {
                path,
                message: "file name must look like <kind>_<number>.jsonl".into(),
            });
        };
        found.push((kind, id, path));
    }
    if found.is_empty() {
        return Err(CliError::Log {
            path: dir.to_owned(),
            message: "no .jsonl click logs found".into(),
        });
    }
    found.sort();
    found
        .into_iter()
        .map(|(task_kind, session_id, path)| {
            Ok(LabeledSession {
                clicks: load_log(&path, space)?,
                task_kind,
                session_id,
            })
        })
        .collect()
}

/// Writes `summary.csv`, `steps.csv` and `curve.csv` into `dir`.
pub fn write_report(dir: &Path, report: &AccuracyReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    let open = |name: &str| -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(CliError::io(format!("creating {}", path.display())))?;
        Ok((path, BufWriter::new(file)))
    };
    let (path, w) = open("summary.csv")?;
    report.write_summary_csv(w).map_err(csv_error(&path))?;
    let (path, w) = open("steps.csv")?;
    report.write_steps_csv(w).map_err(csv_error(&path))?;
    let (path, w) = open("curve.csv")?;
    report.write_curve_csv(w).map_err(csv_error(&path))?;
    Ok(())
}

/// Per-kind table with pooled, mean and standard deviation of accuracy.
pub fn render_summary<W: Write>(report: &AccuracyReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{:<8} {:>8} {:>11} {:>8} {:>8} {:>8}", "kind", "sessions", "predictions", "pooled", "mean", "std")?;
    for s in &report.summaries {
        writeln!(
            out,
            "{:<8} {:>8} {:>11} {:>8.4} {:>8.4} {:>8.4}",
            s.task_kind, s.sessions, s.predictions, s.pooled_accuracy, s.mean_accuracy, s.std_accuracy
        )?;
    }
    if let Some(all) = report.overall_accuracy() {
        writeln!(out, "overall accuracy: {all:.4}")?;
    }
    Ok(())
}
