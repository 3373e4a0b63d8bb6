//! Particle filter over attention states and top-α click prediction.
//!
//! Each click runs the bootstrap loop: push every particle through the
//! dynamics, weight it by the likelihood of the observed click, then draw `m`
//! particles with replacement in proportion to the weights. Resampling happens
//! on every step.
//!
//! A prediction advances a copy of the particles by one sampled transition
//! (the next click is generated from the next state) and ranks every mark by
//! the summed likelihood the particles assign to it. The copy uses a forked
//! random stream, so predicting never perturbs the session.

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::markspace::{ClickEvent, Color, MarkId, MarkSpace};
use crate::model::{
    score_candidates, transition_sample, AttentionState, ModelError, ModelParams,
    ObservationModel,
};
use crate::scalar::Scalar;

/// Stream of the session generator used for prediction forks.
const PREDICTION_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Resampling {
    /// Independent draws with replacement.
    #[default]
    Multinomial,
    /// One uniform offset, `m` evenly spaced pointers. Lower variance.
    Systematic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterParams<T> {
    /// Number of particles `m`.
    pub particles: usize,
    /// Size of the prediction set.
    pub alpha: usize,
    pub model: ModelParams<T>,
    pub seed: u64,
    /// First time index at which predictions are emitted.
    pub warmup: usize,
    pub resampling: Resampling,
}

impl<T: Scalar> Default for FilterParams<T> {
    /// Study configuration: 1000 particles, 100-mark prediction sets,
    /// predictions from the third click on.
    fn default() -> Self {
        Self {
            particles: 1000,
            alpha: 100,
            model: ModelParams::default(),
            seed: 0,
            warmup: 3,
            resampling: Resampling::Multinomial,
        }
    }
}

impl<T: Scalar> FilterParams<T> {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.particles == 0 {
            return Err(FilterError::InvalidParams("particle count must be at least 1"));
        }
        if self.alpha == 0 {
            return Err(FilterError::InvalidParams("alpha must be at least 1"));
        }
        if self.warmup == 0 {
            return Err(FilterError::InvalidParams("warmup must be at least 1"));
        }
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("invalid filter parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("click at t = {got} does not follow t = {current}")]
    OutOfOrder { current: usize, got: usize },
    #[error("click references unknown mark {0}")]
    UnknownMark(MarkId),
    #[error("no clicks to replay")]
    NoClicks,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T> {
    pub mark_id: MarkId,
    pub score: T,
}

/// Ranked candidates for the click following time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet<T> {
    pub t: usize,
    /// Descending score, ties broken by ascending mark id.
    pub entries: Vec<Prediction<T>>,
}

impl<T: Scalar> PredictionSet<T> {
    pub fn contains(&self, mark_id: MarkId) -> bool {
        self.entries.iter().any(|e| e.mark_id == mark_id)
    }

    pub fn top(&self) -> Option<MarkId> {
        self.entries.first().map(|e| e.mark_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Picks the `alpha` best marks given one score per mark (in mark order).
pub fn rank_top<T: Scalar>(space: &MarkSpace<T>, scores: &[T], alpha: usize) -> Vec<Prediction<T>> {
    debug_assert_eq!(scores.len(), space.len());
    let mut ranked: Vec<Prediction<T>> = space
        .marks()
        .iter()
        .zip(scores)
        .map(|(m, &score)| Prediction {
            mark_id: m.id,
            score,
        })
        .collect();
    let order = |a: &Prediction<T>, b: &Prediction<T>| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.mark_id.cmp(&b.mark_id))
    };
    let keep = alpha.min(ranked.len());
    if keep < ranked.len() {
        ranked.select_nth_unstable_by(keep, order);
        ranked.truncate(keep);
    }
    ranked.sort_unstable_by(order);
    ranked
}

/// Draws `n` indices with replacement, index `i` with probability
/// `weights[i] / sum`. `None` when the weights carry no mass.
pub fn resample_multinomial<T: Scalar>(
    weights: &[T],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let (cumulative, last) = cumulative_weights(weights)?;
    let total = cumulative[cumulative.len() - 1];
    Some(
        (0..n)
            .map(|_| {
                let u = T::unit(rng) * total;
                cumulative.partition_point(|&c| c <= u).min(last)
            })
            .collect(),
    )
}

/// Systematic resampling: a single offset `u ~ U[0, 1/n)` and pointers
/// `u + j/n`.
pub fn resample_systematic<T: Scalar>(
    weights: &[T],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let (cumulative, last) = cumulative_weights(weights)?;
    let total = cumulative[cumulative.len() - 1];
    let step = total / T::of_usize(n);
    let offset = T::unit(rng) * step;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    for j in 0..n {
        let u = offset + T::of_usize(j) * step;
        while i < last && cumulative[i] <= u {
            i += 1;
        }
        out.push(i);
    }
    Some(out)
}

/// Running sums and the index of the last positive weight.
fn cumulative_weights<T: Scalar>(weights: &[T]) -> Option<(Vec<T>, usize)> {
    let mut acc = T::zero();
    let mut last = None;
    let cumulative: Vec<T> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if w > T::zero() {
                acc = acc + w;
                last = Some(i);
            }
            acc
        })
        .collect();
    if !(acc > T::zero() && acc.is_finite()) {
        return None;
    }
    last.map(|l| (cumulative, l))
}

/// What happened during one filter update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub t: usize,
    /// Every particle gave the click zero likelihood; the propagated
    /// particles were resampled uniformly.
    pub degenerate: bool,
}

/// Posterior sample over attention for one session.
#[derive(Clone, Debug)]
pub struct ParticleSet<T> {
    particles: Vec<AttentionState<T>>,
    t: usize,
    rng: ChaCha8Rng,
    color_count: Color,
    degenerate_steps: Vec<usize>,
}

impl<T: Scalar> ParticleSet<T> {
    /// Draws `m` particles from the uniform prior over the latent space.
    pub fn init(space: &MarkSpace<T>, params: &FilterParams<T>) -> Result<Self, FilterError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let k = space.color_count();
        let particles = (0..params.particles)
            .map(|_| {
                let x = T::unit(&mut rng);
                let y = T::unit(&mut rng);
                let color = rand::Rng::random_range(&mut rng, 1..=k);
                let bias = T::unit(&mut rng);
                AttentionState { x, y, color, bias }
            })
            .collect();
        Ok(Self {
            particles,
            t: 0,
            rng,
            color_count: k,
            degenerate_steps: Vec::new(),
        })
    }

    /// Starts from explicit particles, e.g. a known attention state.
    pub fn from_particles(
        particles: Vec<AttentionState<T>>,
        t: usize,
        color_count: Color,
        seed: u64,
    ) -> Self {
        assert!(!particles.is_empty(), "a particle set needs at least one particle");
        Self {
            particles,
            t,
            rng: ChaCha8Rng::seed_from_u64(seed),
            color_count,
            degenerate_steps: Vec::new(),
        }
    }

    pub fn particles(&self) -> &[AttentionState<T>] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Number of clicks absorbed so far.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Time indices whose update had all-zero weights.
    pub fn degenerate_steps(&self) -> &[usize] {
        &self.degenerate_steps
    }

    /// Fraction of particles on each color; entry `j` is color `j + 1`.
    pub fn color_marginal(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.color_count as usize];
        for p in &self.particles {
            counts[p.color as usize - 1] += 1;
        }
        let m = self.particles.len() as f64;
        counts.into_iter().map(|c| c as f64 / m).collect()
    }

    /// Absorbs the next click: propagate, weight, resample.
    pub fn step(
        &mut self,
        click: &ClickEvent<T>,
        space: &MarkSpace<T>,
        params: &FilterParams<T>,
    ) -> Result<StepOutcome, FilterError> {
        if click.t != self.t + 1 {
            return Err(FilterError::OutOfOrder {
                current: self.t,
                got: click.t,
            });
        }
        if space.index_of(click.mark_id).is_none() {
            return Err(FilterError::UnknownMark(click.mark_id));
        }
        let model = &params.model;
        let k = self.color_count;
        for p in self.particles.iter_mut() {
            *p = transition_sample(p, model, k, &mut self.rng);
        }
        let obs = ObservationModel::new(model, space);
        let weights: Vec<T> = self
            .particles
            .par_iter()
            .with_min_len(32)
            .map(|p| obs.eval_click(click, p))
            .collect();
        let m = params.particles;
        let picked = match params.resampling {
            Resampling::Multinomial => resample_multinomial(&weights, m, &mut self.rng),
            Resampling::Systematic => resample_systematic(&weights, m, &mut self.rng),
        };
        let degenerate = picked.is_none();
        let picked = picked.unwrap_or_else(|| {
            let uniform = vec![T::one(); self.particles.len()];
            resample_multinomial(&uniform, m, &mut self.rng).expect("uniform weights have mass")
        });
        self.particles = picked.into_iter().map(|i| self.particles[i]).collect();
        self.t = click.t;
        if degenerate {
            self.degenerate_steps.push(self.t);
        }
        Ok(StepOutcome {
            t: self.t,
            degenerate,
        })
    }

    /// Ranks marks for the click at `t + 1`.
    pub fn predict(&self, space: &MarkSpace<T>, params: &FilterParams<T>) -> PredictionSet<T> {
        let mut fork = self.rng.clone();
        fork.set_stream(PREDICTION_STREAM);
        let advanced: Vec<AttentionState<T>> = self
            .particles
            .iter()
            .map(|p| transition_sample(p, &params.model, self.color_count, &mut fork))
            .collect();
        let scores = score_candidates(space, &advanced, &params.model);
        PredictionSet {
            t: self.t,
            entries: rank_top(space, &scores, params.alpha),
        }
    }
}

/// A prediction scored against the click that followed it.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord<T> {
    pub prediction: PredictionSet<T>,
    pub next_mark: MarkId,
    pub hit: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionRun<T> {
    /// One record per `t` in `warmup..n`.
    pub records: Vec<PredictionRecord<T>>,
    pub degenerate_steps: Vec<usize>,
}

impl<T> SessionRun<T> {
    pub fn hits(&self) -> usize {
        self.records.iter().filter(|r| r.hit).count()
    }

    /// Hit fraction, `None` without predictions.
    pub fn accuracy(&self) -> Option<f64> {
        match self.records.len() {
            0 => None,
            n => Some(self.hits() as f64 / n as f64),
        }
    }
}

/// Replays a click stream, predicting after each click from `warmup` on and
/// checking the prediction against the next click.
pub fn run_session<T: Scalar>(
    space: &MarkSpace<T>,
    clicks: &[ClickEvent<T>],
    params: &FilterParams<T>,
) -> Result<SessionRun<T>, FilterError> {
    if clicks.is_empty() {
        return Err(FilterError::NoClicks);
    }
    let mut ps = ParticleSet::init(space, params)?;
    let mut records = Vec::new();
    for (i, click) in clicks.iter().enumerate() {
        ps.step(click, space, params)?;
        if ps.t() >= params.warmup {
            if let Some(next) = clicks.get(i + 1) {
                let prediction = ps.predict(space, params);
                let hit = prediction.contains(next.mark_id);
                records.push(PredictionRecord {
                    prediction,
                    next_mark: next.mark_id,
                    hit,
                });
            }
        }
    }
    Ok(SessionRun {
        records,
        degenerate_steps: ps.degenerate_steps().to_vec(),
    })
}
