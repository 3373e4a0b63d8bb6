//! Synthetic mark spaces and users for offline evaluation.
//!
//! Users are sampled from the same attention model the filter assumes: a
//! ground-truth state drifts by the model dynamics and each click is drawn
//! from the observation model (position branch with probability `bias`,
//! otherwise a uniform pick among the marks of the attended color).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::markspace::{ClickEvent, Color, Mark, MarkSpace};
use crate::model::{transition_sample, AttentionState, ModelParams};
use crate::scalar::{clamp_unit, Scalar};

pub const STUDY_MARKS: usize = 1951;
pub const STUDY_COLORS: Color = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("need at least as many marks ({marks}) as colors ({colors})")]
    TooFewMarks { marks: usize, colors: Color },
    #[error("task needs a region")]
    MissingRegion,
    #[error("task needs a target color")]
    MissingColor,
    #[error("target color {0} has no marks")]
    EmptyColor(Color),
    #[error("region {0:?} is empty or outside the unit square")]
    BadRegion(Region),
}

/// Generates a study-sized space shaped like a crime map: half the marks are
/// spread uniformly with colors from a steep Zipf categorical (a few common
/// categories everywhere), the rest fall in Gaussian hot spots, each
/// dominated by one of the rarer categories. The first `K` marks take colors
/// `1..=K` so no color is empty.
pub fn generate_dataset<T: Scalar>(
    n_marks: usize,
    colors: Color,
    seed: u64,
) -> Result<MarkSpace<T>, SimError> {
    if colors < 1 || n_marks < colors as usize {
        return Err(SimError::TooFewMarks {
            marks: n_marks,
            colors,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Colors by decreasing background frequency.
    let mut rank: Vec<Color> = (1..=colors).collect();
    for i in (1..rank.len()).rev() {
        rank.swap(i, rng.random_range(0..=i));
    }
    let mut freq = vec![0.0; colors as usize];
    for (r, &c) in rank.iter().enumerate() {
        freq[c as usize - 1] = 1.0 / ((r + 1) as f64).powi(2);
    }
    let background_color = WeightedIndex::new(&freq).expect("positive weights");
    let n_clusters = 6;
    // Cluster i has weight i + 1; the smallest spots get the rarest colors.
    let clusters: Vec<(f64, f64, f64, Color)> = (0..n_clusters)
        .map(|i| {
            let dominant = rank[rank.len() - 1 - i % rank.len()];
            (
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.03..0.07),
                dominant,
            )
        })
        .collect();
    let cluster_pick = WeightedIndex::new((0..n_clusters).map(|i| 1.0 + i as f64)).expect("positive weights");
    let background = 0.5;
    let purity = 0.85;
    let marks = (0..n_marks)
        .map(|i| {
            let (x, y, mut color) = if rng.random::<f64>() < background {
                let c = background_color.sample(&mut rng) as Color + 1;
                (rng.random::<f64>(), rng.random::<f64>(), c)
            } else {
                let (cx, cy, s, dominant) = clusters[cluster_pick.sample(&mut rng)];
                let c = if rng.random::<f64>() < purity {
                    dominant
                } else {
                    background_color.sample(&mut rng) as Color + 1
                };
                (
                    clamp_unit(cx + s * f64::standard_normal(&mut rng)),
                    clamp_unit(cy + s * f64::standard_normal(&mut rng)),
                    c,
                )
            };
            if i < colors as usize {
                color = i as Color + 1;
            }
            Mark {
                id: i as u64 + 1,
                x: T::of(x),
                y: T::of(y),
                color,
            }
        })
        .collect();
    Ok(MarkSpace::new(marks, colors).expect("generated marks are valid"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    /// Any category inside a region.
    Geo,
    /// One category across the whole canvas.
    Type,
    /// One category inside a region.
    Mixed,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Geo, TaskKind::Type, TaskKind::Mixed];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Geo => "geo",
            TaskKind::Type => "type",
            TaskKind::Mixed => "mixed",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geo" => Ok(TaskKind::Geo),
            "type" => Ok(TaskKind::Type),
            "mixed" => Ok(TaskKind::Mixed),
            other => Err(format!("unknown task kind {other:?} (expected geo, type or mixed)")),
        }
    }
}

/// Axis-aligned rectangle in the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn centered(cx: f64, cy: f64, half: f64) -> Self {
        Self {
            x0: (cx - half).max(0.0),
            y0: (cy - half).max(0.0),
            x1: (cx + half).min(1.0),
            y1: (cy + half).min(1.0),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Half of the longer side.
    pub fn half_extent(&self) -> f64 {
        0.5 * (self.x1 - self.x0).max(self.y1 - self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    fn is_valid(&self) -> bool {
        0.0 <= self.x0 && self.x0 < self.x1 && self.x1 <= 1.0 && 0.0 <= self.y0 && self.y0 < self.y1 && self.y1 <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub region: Option<Region>,
    pub target_color: Option<Color>,
    pub n_clicks: usize,
}

impl SyntheticTask {
    fn check<T: Scalar>(&self, space: &MarkSpace<T>) -> Result<(), SimError> {
        if matches!(self.kind, TaskKind::Geo | TaskKind::Mixed) {
            let region = self.region.ok_or(SimError::MissingRegion)?;
            if !region.is_valid() {
                return Err(SimError::BadRegion(region));
            }
        }
        if matches!(self.kind, TaskKind::Type | TaskKind::Mixed) {
            let c = self.target_color.ok_or(SimError::MissingColor)?;
            if space.color_size(c) == 0 {
                return Err(SimError::EmptyColor(c));
            }
        }
        Ok(())
    }

    /// Ground-truth attention at the first click.
    pub fn initial_state<T: Scalar>(&self, space: &MarkSpace<T>, rng: &mut ChaCha8Rng) -> AttentionState<T> {
        let k = space.color_count();
        let color = self.target_color.unwrap_or_else(|| rng.random_range(1..=k));
        let (x, y) = match self.region {
            Some(r) if self.kind != TaskKind::Type => r.center(),
            _ => (rng.random(), rng.random()),
        };
        let bias = match self.kind {
            TaskKind::Geo => 0.95,
            TaskKind::Type => 0.05,
            TaskKind::Mixed => 0.5,
        };
        AttentionState::new(T::of(x), T::of(y), color, T::of(bias))
    }
}

/// A generated session and the attention that produced it.
#[derive(Clone, Debug)]
pub struct SyntheticSession<T> {
    pub clicks: Vec<ClickEvent<T>>,
    pub truth: Vec<AttentionState<T>>,
}

/// Draws one click from the observation model for `state`.
pub fn sample_click<T: Scalar>(
    space: &MarkSpace<T>,
    state: &AttentionState<T>,
    params: &ModelParams<T>,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> ClickEvent<T> {
    let by_color = space.indices_of_color(state.color);
    let index = if by_color.is_empty() || T::unit(rng) < state.bias {
        positional_pick(space, state, params, rng)
    } else {
        by_color[rng.random_range(0..by_color.len())]
    };
    ClickEvent::on(t, &space.marks()[index])
}

/// Mark index drawn with probability proportional to the positional Gaussian.
fn positional_pick<T: Scalar>(
    space: &MarkSpace<T>,
    state: &AttentionState<T>,
    params: &ModelParams<T>,
    rng: &mut ChaCha8Rng,
) -> usize {
    let sx = params.sigma_x.as_f64();
    let sy = params.sigma_y.as_f64();
    let (fx, fy) = (state.x.as_f64(), state.y.as_f64());
    let log_w: Vec<f64> = space
        .marks()
        .iter()
        .map(|m| {
            let dx = (m.x.as_f64() - fx) / sx;
            let dy = (m.y.as_f64() - fy) / sy;
            -0.5 * (dx * dx + dy * dy)
        })
        .collect();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = log_w.iter().map(|&l| (l - top).exp());
    WeightedIndex::new(w).expect("the closest mark has weight one").sample(rng)
}

/// Simulates a user working on `task`, with `model` as the user's own
/// attention dynamics and click spread.
pub fn generate_session<T: Scalar>(
    space: &MarkSpace<T>,
    task: &SyntheticTask,
    model: &ModelParams<T>,
    seed: u64,
) -> Result<SyntheticSession<T>, SimError> {
    task.check(space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = space.color_count();
    let mut state = task.initial_state(space, &mut rng);
    let mut clicks = Vec::with_capacity(task.n_clicks);
    let mut truth = Vec::with_capacity(task.n_clicks);
    for t in 1..=task.n_clicks {
        if t > 1 {
            state = transition_sample(&state, model, k, &mut rng);
        }
        clicks.push(sample_click(space, &state, model, t, &mut rng));
        truth.push(state);
    }
    Ok(SyntheticSession { clicks, truth })
}

/// User dynamics for study-like sessions. Location-driven clicks spread over
/// a fraction of the task region (the whole canvas scale for type tasks) and
/// the color of interest rarely changes.
pub fn study_user<T: Scalar>(task: &SyntheticTask) -> ModelParams<T> {
    let spread = |fraction: f64| task.region.map_or(0.05, |r| fraction * r.half_extent());
    let (sxy, sbias, rho) = match task.kind {
        TaskKind::Geo => (spread(1.0 / 3.0), 0.02, 0.9),
        TaskKind::Type => (0.05, 0.02, 0.995),
        TaskKind::Mixed => (spread(0.25), 0.02, 0.995),
    };
    let sxy = sxy.max(1e-3);
    ModelParams::new(T::of(sxy), T::of(sxy), T::of(sbias), T::of(rho)).expect("valid constants")
}

/// Chebyshev radius around `(ax, ay)` that holds `count` of `points`.
fn radius_holding(points: impl Iterator<Item = (f64, f64)>, ax: f64, ay: f64, count: usize) -> f64 {
    let mut d: Vec<f64> = points.map(|(x, y)| (x - ax).abs().max((y - ay).abs())).collect();
    let nth = count.clamp(1, d.len()) - 1;
    d.select_nth_unstable_by(nth, |a, b| a.total_cmp(b));
    d[nth].max(1e-3)
}

/// Task shaped like the crime-map study's. Geo: a region around a random
/// mark holding 43 marks. Type: the rarest category. Mixed: the category and
/// region where that category is most concentrated, with the region holding
/// up to 85 of its marks. Session lengths follow the study's 43, 14 and 85
/// target marks.
pub fn study_task<T: Scalar>(kind: TaskKind, space: &MarkSpace<T>, rng: &mut ChaCha8Rng) -> SyntheticTask {
    let xy = |m: &Mark<T>| (m.x.as_f64(), m.y.as_f64());
    match kind {
        TaskKind::Geo => {
            let (ax, ay) = xy(&space.marks()[rng.random_range(0..space.len())]);
            let half = radius_holding(space.marks().iter().map(xy), ax, ay, 43);
            SyntheticTask {
                kind,
                region: Some(Region::centered(ax, ay, half)),
                target_color: None,
                n_clicks: 43,
            }
        }
        TaskKind::Type => {
            let rarest = (1..=space.color_count())
                .filter(|&c| space.color_size(c) > 0)
                .min_by_key(|&c| space.color_size(c))
                .expect("space has marks");
            SyntheticTask {
                kind,
                region: None,
                target_color: Some(rarest),
                n_clicks: 14,
            }
        }
        TaskKind::Mixed => {
            // Score = share of the region that is the color times share of the
            // color inside the region.
            let mut best: Option<(f64, Region, Color)> = None;
            for c in 1..=space.color_count() {
                let own: Vec<(f64, f64)> = space
                    .indices_of_color(c)
                    .iter()
                    .map(|&i| xy(&space.marks()[i]))
                    .collect();
                if own.is_empty() {
                    continue;
                }
                let want = 85.min((own.len() * 4).div_ceil(5)).max(1);
                for &(ax, ay) in &own {
                    let region = Region::centered(ax, ay, radius_holding(own.iter().copied(), ax, ay, want));
                    let (mut inside, mut same) = (0usize, 0usize);
                    for m in space.marks() {
                        let (x, y) = xy(m);
                        if region.contains(x, y) {
                            inside += 1;
                            same += (m.color == c) as usize;
                        }
                    }
                    let score = same as f64 / inside as f64 * same as f64 / own.len() as f64;
                    if best.as_ref().is_none_or(|b| score > b.0) {
                        best = Some((score, region, c));
                    }
                }
            }
            let (_, region, color) = best.expect("space has marks");
            SyntheticTask {
                kind,
                region: Some(region),
                target_color: Some(color),
                n_clicks: 85,
            }
        }
    }
}
