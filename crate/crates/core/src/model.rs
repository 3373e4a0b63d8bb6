//! Hidden Markov model of a user's attention over a mark space.
//!
//! The latent state is a focus position `(x, y)`, a color of interest and a
//! bias in `[0, 1]` weighting location (bias 1) against color (bias 0). Each
//! component evolves independently between clicks: the continuous ones by
//! Gaussian drift projected back onto their domains, the color by a biased
//! coin that keeps it with probability `rho` and otherwise jumps uniformly to
//! one of the other colors.
//!
//! A click on mark `(x', y', k')` has the likelihood
//!
//! ```text
//! bias * P(x', y'; x, y) + (1 - bias) * U(k'; k)
//! ```
//!
//! where `U(k'; k)` is `1 / |marks of color k|` when `k' == k` and zero
//! otherwise. The positional term `P` is chosen by [`PositionalTerm`]; by
//! default it is the product of normal densities `N(x'; x, sx^2) * N(y'; y, sy^2)`
//! and the expression is an unnormalized weight. Only relative values matter
//! to the filter and the ranking.

use rand::Rng;
use rayon::prelude::*;

use crate::markspace::{ClickEvent, Color, Mark, MarkSpace};
use crate::scalar::{clamp_unit, Scalar};

/// One point of the latent attention space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionState<T> {
    pub x: T,
    pub y: T,
    /// Color of interest, `1..=K`.
    pub color: Color,
    /// Location-vs-color bias in `[0, 1]`.
    pub bias: T,
}

impl<T: Scalar> AttentionState<T> {
    /// Builds a state, projecting the continuous components onto `[0, 1]`.
    pub fn new(x: T, y: T, color: Color, bias: T) -> Self {
        Self {
            x: clamp_unit(x),
            y: clamp_unit(y),
            color,
            bias: clamp_unit(bias),
        }
    }

    pub fn is_valid(&self, color_count: Color) -> bool {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        unit(self.x) && unit(self.y) && unit(self.bias) && (1..=color_count).contains(&self.color)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositiveSigma { name: &'static str, value: f64 },
    #[error("rho must lie in [0, 1], got {0}")]
    RhoOutOfRange(f64),
    #[error("color {color} outside 1..={color_count}")]
    ColorOutOfRange { color: Color, color_count: Color },
}

/// How the location branch of the observation model scores a mark.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PositionalTerm {
    /// Product of the two normal densities, constants included. The result is
    /// a density, so it is not on the same scale as the color term and
    /// location usually outweighs color.
    #[default]
    Density,
    /// Gaussian weight of the mark divided by the total weight of all marks:
    /// the probability that a location-driven click lands on that mark. This
    /// is the exact likelihood of the synthetic users' click process. Costs a
    /// pass over the marks per state.
    Marks,
    /// The normal density divided by the number of marks: the per-mark
    /// probability if the marks covered the canvas evenly.
    Scaled,
}

impl PositionalTerm {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Marks => "marks",
            Self::Density => "density",
            Self::Scaled => "scaled",
        }
    }
}

impl std::str::FromStr for PositionalTerm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "marks" => Ok(Self::Marks),
            "density" => Ok(Self::Density),
            "scaled" => Ok(Self::Scaled),
            other => Err(format!("unknown positional term `{other}` (expected marks or density)")),
        }
    }
}

impl std::fmt::Display for PositionalTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Drift and persistence constants of the attention model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// Drift and observation spread in x, as a fraction of the canvas width.
    pub sigma_x: T,
    /// Drift and observation spread in y, as a fraction of the canvas height.
    pub sigma_y: T,
    /// Drift of the location-vs-color bias.
    pub sigma_bias: T,
    /// Probability that the color of interest persists between clicks.
    pub rho: T,
    pub positional: PositionalTerm,
}

impl<T: Scalar> ModelParams<T> {
    pub const STUDY_SIGMA_XY: f64 = 0.1;
    pub const STUDY_SIGMA_BIAS: f64 = 0.45;
    pub const STUDY_RHO: f64 = 0.96;

    pub fn new(sigma_x: T, sigma_y: T, sigma_bias: T, rho: T) -> Result<Self, ModelError> {
        let params = Self {
            sigma_x,
            sigma_y,
            sigma_bias,
            rho,
            positional: PositionalTerm::default(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_positional(self, positional: PositionalTerm) -> Self {
        Self { positional, ..self }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("sigma_bias", self.sigma_bias),
        ] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(ModelError::NonPositiveSigma {
                    name,
                    value: v.as_f64(),
                });
            }
        }
        if !(self.rho >= T::zero() && self.rho <= T::one()) {
            return Err(ModelError::RhoOutOfRange(self.rho.as_f64()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            sigma_x: U::of(self.sigma_x.as_f64()),
            sigma_y: U::of(self.sigma_y.as_f64()),
            sigma_bias: U::of(self.sigma_bias.as_f64()),
            rho: U::of(self.rho.as_f64()),
            positional: self.positional,
        }
    }
}

impl<T: Scalar> Default for ModelParams<T> {
    /// The constants used in the crime-map user study.
    fn default() -> Self {
        Self {
            sigma_x: T::of(Self::STUDY_SIGMA_XY),
            sigma_y: T::of(Self::STUDY_SIGMA_XY),
            sigma_bias: T::of(Self::STUDY_SIGMA_BIAS),
            rho: T::of(Self::STUDY_RHO),
            positional: PositionalTerm::default(),
        }
    }
}

/// Draws the next attention state.
///
/// Single-task stationary diffusion. A multi-task variant (a mixture of this
/// drift with a broad restart distribution) would replace this function.
///
/// With `K = 1` the color never changes since there is no other color to
/// jump to.
pub fn transition_sample<T: Scalar, R: Rng + ?Sized>(
    state: &AttentionState<T>,
    params: &ModelParams<T>,
    color_count: Color,
    rng: &mut R,
) -> AttentionState<T> {
    let x = clamp_unit(state.x + params.sigma_x * T::standard_normal(rng));
    let y = clamp_unit(state.y + params.sigma_y * T::standard_normal(rng));
    let bias = clamp_unit(state.bias + params.sigma_bias * T::standard_normal(rng));
    let color = if color_count < 2 || T::unit(rng) < params.rho {
        state.color
    } else {
        let other = rng.random_range(1..color_count);
        if other >= state.color {
            other + 1
        } else {
            other
        }
    };
    AttentionState { x, y, color, bias }
}

/// Distribution of the next color of interest given the current one.
/// Entry `j` is the probability of color `j + 1`.
pub fn transition_color_pmf<T: Scalar>(
    from: Color,
    params: &ModelParams<T>,
    color_count: Color,
) -> Result<Vec<T>, ModelError> {
    if from < 1 || from > color_count {
        return Err(ModelError::ColorOutOfRange {
            color: from,
            color_count,
        });
    }
    // With a single color there is nothing to switch to; it is kept.
    if color_count < 2 {
        return Ok(vec![T::one()]);
    }
    let other = (T::one() - params.rho) / T::of_usize(color_count as usize - 1);
    Ok((1..=color_count)
        .map(|c| if c == from { params.rho } else { other })
        .collect())
}

/// Turns a Gaussian kernel value into the positional term for one focus:
/// `scale * exp(exponent + shift)`. The shift is nonzero only when the plain
/// normalizing sum would underflow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocusNorm<T> {
    pub scale: T,
    pub shift: T,
}

/// Observation model with its constants and per-color uniform masses
/// precomputed for one mark space.
#[derive(Clone, Debug)]
pub struct ObservationModel<T> {
    positional: PositionalTerm,
    inv_two_var_x: T,
    inv_two_var_y: T,
    gauss_norm: T,
    /// `1 / |marks of color c|` at index `c - 1`, zero for empty colors.
    color_mass: Vec<T>,
    xs: Vec<T>,
    ys: Vec<T>,
}

impl<T: Scalar> ObservationModel<T> {
    pub fn new(params: &ModelParams<T>, space: &MarkSpace<T>) -> Self {
        let two = T::of(2.0);
        let color_mass = (1..=space.color_count())
            .map(|c| match space.color_size(c) {
                0 => T::zero(),
                n => T::one() / T::of_usize(n),
            })
            .collect();
        Self {
            positional: params.positional,
            inv_two_var_x: T::one() / (two * params.sigma_x * params.sigma_x),
            inv_two_var_y: T::one() / (two * params.sigma_y * params.sigma_y),
            gauss_norm: T::one()
                / (T::of(std::f64::consts::TAU) * params.sigma_x * params.sigma_y),
            color_mass,
            xs: space.marks().iter().map(|m| m.x).collect(),
            ys: space.marks().iter().map(|m| m.y).collect(),
        }
    }

    /// Log of the unnormalized Gaussian kernel.
    #[inline]
    fn exponent(&self, x: T, y: T, focus_x: T, focus_y: T) -> T {
        let dx = x - focus_x;
        let dy = y - focus_y;
        -(dx * dx * self.inv_two_var_x + dy * dy * self.inv_two_var_y)
    }

    /// Normalization of the positional term for a focus at `(focus_x, focus_y)`.
    /// Costs one pass over the marks in [`PositionalTerm::Marks`] mode.
    pub fn focus_norm(&self, focus_x: T, focus_y: T) -> FocusNorm<T> {
        match self.positional {
            PositionalTerm::Density => {
                return FocusNorm {
                    scale: self.gauss_norm,
                    shift: T::zero(),
                }
            }
            PositionalTerm::Scaled => {
                return FocusNorm {
                    scale: self.gauss_norm / T::of_usize(self.xs.len()),
                    shift: T::zero(),
                }
            }
            PositionalTerm::Marks => {}
        }
        let exps = || {
            self.xs
                .iter()
                .zip(&self.ys)
                .map(move |(&x, &y)| self.exponent(x, y, focus_x, focus_y))
        };
        let total: T = exps().map(T::exp).sum();
        // Below this, subnormal terms would carry visible rounding error.
        if total > T::min_positive_value() * T::of(1048576.0) {
            return FocusNorm {
                scale: T::one() / total,
                shift: T::zero(),
            };
        }
        let top = exps().fold(T::neg_infinity(), T::max);
        let total: T = exps().map(|e| (e - top).exp()).sum();
        FocusNorm {
            scale: T::one() / total,
            shift: -top,
        }
    }

    /// Positional term of a mark at `(x, y)` given a precomputed focus norm.
    #[inline]
    pub fn positional_with(&self, x: T, y: T, focus_x: T, focus_y: T, norm: FocusNorm<T>) -> T {
        norm.scale * (self.exponent(x, y, focus_x, focus_y) + norm.shift).exp()
    }

    pub fn positional(&self, x: T, y: T, focus_x: T, focus_y: T) -> T {
        self.positional_with(x, y, focus_x, focus_y, self.focus_norm(focus_x, focus_y))
    }

    /// Uniform probability of a specific mark of `color` among its class.
    #[inline]
    pub fn color_mass(&self, color: Color) -> T {
        self.color_mass
            .get(color as usize - 1)
            .copied()
            .unwrap_or_else(T::zero)
    }

    #[inline]
    fn uniform(&self, color: Color, state: &AttentionState<T>) -> T {
        if color == state.color {
            self.color_mass(color)
        } else {
            T::zero()
        }
    }

    /// Likelihood of a click on a mark at `(x, y)` with `color`, reusing the
    /// focus norm of `state`.
    #[inline]
    pub fn eval_with(&self, x: T, y: T, color: Color, state: &AttentionState<T>, norm: FocusNorm<T>) -> T {
        state.bias * self.positional_with(x, y, state.x, state.y, norm)
            + (T::one() - state.bias) * self.uniform(color, state)
    }

    /// Likelihood of a click on a mark at `(x, y)` with `color`.
    pub fn eval(&self, x: T, y: T, color: Color, state: &AttentionState<T>) -> T {
        let colored = (T::one() - state.bias) * self.uniform(color, state);
        if state.bias == T::zero() {
            return colored;
        }
        state.bias * self.positional(x, y, state.x, state.y) + colored
    }

    pub fn eval_mark(&self, mark: &Mark<T>, state: &AttentionState<T>) -> T {
        self.eval(mark.x, mark.y, mark.color, state)
    }

    pub fn eval_click(&self, click: &ClickEvent<T>, state: &AttentionState<T>) -> T {
        self.eval(click.x, click.y, click.color, state)
    }
}

/// Likelihood of `click` under `state`.
pub fn observation_likelihood<T: Scalar>(
    click: &ClickEvent<T>,
    state: &AttentionState<T>,
    params: &ModelParams<T>,
    space: &MarkSpace<T>,
) -> T {
    ObservationModel::new(params, space).eval_click(click, state)
}

/// Sums, for every mark, the likelihood each state assigns to a click on it.
///
/// The color term only depends on the mark's color, so it is accumulated once
/// per color; the positional term is summed per mark in state order. Work is
/// split across threads but every sum has a fixed order, so the result does
/// not depend on scheduling.
pub fn score_candidates<T: Scalar>(
    space: &MarkSpace<T>,
    states: &[AttentionState<T>],
    params: &ModelParams<T>,
) -> Vec<T> {
    let obs = ObservationModel::new(params, space);
    let mut color_term = vec![T::zero(); space.color_count() as usize];
    for s in states {
        color_term[s.color as usize - 1] =
            color_term[s.color as usize - 1] + (T::one() - s.bias) * obs.color_mass(s.color);
    }
    // (weight, shift, x, y) for states that put any mass on position.
    let focus: Vec<(T, T, T, T)> = states
        .par_iter()
        .with_min_len(16)
        .filter(|s| s.bias > T::zero())
        .map(|s| {
            let norm = obs.focus_norm(s.x, s.y);
            (s.bias * norm.scale, norm.shift, s.x, s.y)
        })
        .collect();
    space
        .marks()
        .par_iter()
        .with_min_len(64)
        .map(|m| {
            let mut positional = T::zero();
            for &(w, shift, fx, fy) in &focus {
                positional = positional + w * (obs.exponent(m.x, m.y, fx, fy) + shift).exp();
            }
            positional + color_term[m.color as usize - 1]
        })
        .collect()
}
