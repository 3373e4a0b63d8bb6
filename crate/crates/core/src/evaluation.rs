//! Accuracy of prediction sets over collections of sessions.
//!
//! A prediction made after click `t` is a hit when click `t + 1` is in the
//! set. Accuracy per task kind is pooled over all predictions; per-session
//! accuracies give the mean and sample standard deviation; the curve gives
//! pooled accuracy at each `t` from warmup to the horizon.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::filter::{run_session, FilterError, FilterParams};
use crate::markspace::{ClickEvent, MarkSpace};
use crate::scalar::Scalar;

/// Last `t` of the accuracy-over-time curve.
pub const CURVE_HORIZON: usize = 20;

/// Click stream with a task label.
#[derive(Clone, Debug)]
pub struct LabeledSession<T> {
    pub task_kind: String,
    pub session_id: usize,
    pub clicks: Vec<ClickEvent<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub task_kind: String,
    pub session_id: usize,
    pub t: usize,
    pub hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KindSummary {
    pub task_kind: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub pooled_accuracy: f64,
    pub sessions: usize,
    pub predictions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub warmup: usize,
    pub horizon: usize,
    pub steps: Vec<StepRecord>,
    /// Sorted by task kind.
    pub summaries: Vec<KindSummary>,
    /// Pooled accuracy at `t = warmup..=horizon`, per task kind; `None` where
    /// no session reached `t`.
    pub curves: BTreeMap<String, Vec<Option<f64>>>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl AccuracyReport {
    /// Folds step records into summaries and curves.
    pub fn from_steps(steps: Vec<StepRecord>, warmup: usize, horizon: usize) -> Self {
        // kind -> session -> (hits, predictions)
        let mut per_session: BTreeMap<&str, BTreeMap<usize, (usize, usize)>> = BTreeMap::new();
        let mut per_t: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
        let width = (horizon + 1).saturating_sub(warmup);
        for s in &steps {
            let e = per_session
                .entry(&s.task_kind)
                .or_default()
                .entry(s.session_id)
                .or_default();
            e.0 += s.hit as usize;
            e.1 += 1;
            let curve = per_t.entry(&s.task_kind).or_insert_with(|| vec![(0, 0); width]);
            if s.t >= warmup && s.t <= horizon {
                let c = &mut curve[s.t - warmup];
                c.0 += s.hit as usize;
                c.1 += 1;
            }
        }
        let summaries = per_session
            .iter()
            .map(|(kind, sessions)| {
                let accs: Vec<f64> = sessions.values().map(|&(h, n)| h as f64 / n as f64).collect();
                let (mean, std) = mean_std(&accs);
                let hits: usize = sessions.values().map(|v| v.0).sum();
                let predictions: usize = sessions.values().map(|v| v.1).sum();
                KindSummary {
                    task_kind: kind.to_string(),
                    mean_accuracy: mean,
                    std_accuracy: std,
                    pooled_accuracy: hits as f64 / predictions as f64,
                    sessions: sessions.len(),
                    predictions,
                }
            })
            .collect();
        let curves = per_t
            .into_iter()
            .map(|(kind, c)| {
                let acc = c
                    .into_iter()
                    .map(|(h, n)| (n > 0).then(|| h as f64 / n as f64))
                    .collect();
                (kind.to_string(), acc)
            })
            .collect();
        Self {
            warmup,
            horizon,
            steps,
            summaries,
            curves,
        }
    }

    pub fn summary(&self, kind: &str) -> Option<&KindSummary> {
        self.summaries.iter().find(|s| s.task_kind == kind)
    }

    pub fn curve(&self, kind: &str) -> Option<&[Option<f64>]> {
        self.curves.get(kind).map(Vec::as_slice)
    }

    /// Hit fraction over every step of every session.
    pub fn overall_accuracy(&self) -> Option<f64> {
        match self.steps.len() {
            0 => None,
            n => Some(self.steps.iter().filter(|s| s.hit).count() as f64 / n as f64),
        }
    }

    /// `task_kind,session_id,t,hit` with `hit` as 0/1.
    pub fn write_steps_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["task_kind", "session_id", "t", "hit"])?;
        for s in &self.steps {
            w.write_record([
                s.task_kind.as_str(),
                &s.session_id.to_string(),
                &s.t.to_string(),
                if s.hit { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `task_kind,mean_accuracy,std_accuracy,pooled_accuracy,sessions,predictions`.
    pub fn write_summary_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "task_kind",
            "mean_accuracy",
            "std_accuracy",
            "pooled_accuracy",
            "sessions",
            "predictions",
        ])?;
        for s in &self.summaries {
            w.write_record([
                s.task_kind.clone(),
                format!("{:.6}", s.mean_accuracy),
                format!("{:.6}", s.std_accuracy),
                format!("{:.6}", s.pooled_accuracy),
                s.sessions.to_string(),
                s.predictions.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `task_kind,t,accuracy`, empty accuracy where no data.
    pub fn write_curve_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["task_kind", "t", "accuracy"])?;
        for (kind, curve) in &self.curves {
            for (i, acc) in curve.iter().enumerate() {
                w.write_record([
                    kind.clone(),
                    (self.warmup + i).to_string(),
                    acc.map(|a| format!("{a:.6}")).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Replays every session through the filter and folds the hits into a report.
/// Sessions run independently; the step order follows the input order.
pub fn evaluate<T: Scalar>(
    space: &MarkSpace<T>,
    sessions: &[LabeledSession<T>],
    params: &FilterParams<T>,
) -> Result<AccuracyReport, FilterError> {
    params.validate()?;
    let runs: Vec<_> = sessions
        .par_iter()
        .map(|s| run_session(space, &s.clicks, params).map(|run| (s, run)))
        .collect::<Result<_, _>>()?;
    let steps = runs
        .iter()
        .flat_map(|(s, run)| {
            run.records.iter().map(move |r| StepRecord {
                task_kind: s.task_kind.clone(),
                session_id: s.session_id,
                t: r.prediction.t,
                hit: r.hit,
            })
        })
        .collect();
    Ok(AccuracyReport::from_steps(steps, params.warmup, CURVE_HORIZON))
}
