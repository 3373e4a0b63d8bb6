//! Exact forward filtering of the attention model on a discretized latent
//! space. Slow and small; it exists to check the particle filter.
//!
//! Each continuous axis (`x`, `y`, bias) is represented by `n` evenly spaced
//! nodes on `[0, 1]` including both endpoints. A node owns the interval
//! between the midpoints to its neighbours, and the two end nodes also own
//! everything beyond the boundary, so clamped drift mass lands on the
//! boundary nodes just as projected particles land on the boundary. Drift
//! probabilities are integrated over those intervals (differences of normal
//! CDFs), which makes every kernel row sum to one.

use statrs::function::erf::erfc;

use crate::filter::{rank_top, PredictionSet};
use crate::markspace::{ClickEvent, Color, MarkSpace};
use crate::model::{transition_color_pmf, AttentionState, ModelError, ModelParams, ObservationModel};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nbias: usize,
    pub colors: Color,
}

impl GridSpec {
    pub const MAX_STATES: usize = 1_000_000;

    pub fn new(nx: usize, ny: usize, nbias: usize, colors: Color) -> Result<Self, OracleError> {
        let grid = Self { nx, ny, nbias, colors };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.nx < 2 || self.ny < 2 || self.nbias < 2 || self.colors < 1 {
            return Err(OracleError::GridTooSmall(*self));
        }
        let states = self
            .nx
            .checked_mul(self.ny)
            .and_then(|v| v.checked_mul(self.nbias))
            .and_then(|v| v.checked_mul(self.colors as usize));
        match states {
            Some(n) if n <= Self::MAX_STATES => Ok(()),
            _ => Err(OracleError::GridTooLarge(*self)),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nbias * self.colors as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of `(x node, y node, bias node, color)`.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, ib: usize, color: Color) -> usize {
        (((color as usize - 1) * self.nbias + ib) * self.ny + iy) * self.nx + ix
    }

    /// The attention state a flat index stands for.
    pub fn state(&self, index: usize) -> AttentionState<f64> {
        let ix = index % self.nx;
        let rest = index / self.nx;
        let iy = rest % self.ny;
        let rest = rest / self.ny;
        let ib = rest % self.nbias;
        let color = (rest / self.nbias) as Color + 1;
        AttentionState {
            x: node(ix, self.nx),
            y: node(iy, self.ny),
            color,
            bias: node(ib, self.nbias),
        }
    }
}

#[inline]
fn node(i: usize, n: usize) -> f64 {
    i as f64 / (n - 1) as f64
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("grid {0:?} needs at least two nodes per continuous axis and one color")]
    GridTooSmall(GridSpec),
    #[error("grid {0:?} exceeds {max} states", max = GridSpec::MAX_STATES)]
    GridTooLarge(GridSpec),
    #[error("grid has {grid} colors but the mark space has {space}")]
    ColorMismatch { grid: Color, space: Color },
    #[error("prior has {got} entries, grid has {expected} states")]
    PriorShape { expected: usize, got: usize },
    #[error("click at t = {0} has zero likelihood under every grid state")]
    ImpossibleClick(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Row-stochastic kernel of clamped Gaussian drift between the `n` nodes of
/// one axis, row-major `n x n`.
pub fn drift_kernel(n: usize, sigma: f64) -> Vec<f64> {
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        let from = node(i, n);
        let mut below = 0.0;
        for j in 0..n {
            let above = if j + 1 == n {
                1.0
            } else {
                let edge = 0.5 * (node(j, n) + node(j + 1, n));
                std_normal_cdf((edge - from) / sigma)
            };
            kernel[i * n + j] = above - below;
            below = above;
        }
    }
    kernel
}

/// Forward filter on a fixed grid for one mark space and model.
#[derive(Clone, Debug)]
pub struct ExactFilter {
    grid: GridSpec,
    kx: Vec<f64>,
    ky: Vec<f64>,
    kbias: Vec<f64>,
    kcolor: Vec<f64>,
    states: Vec<AttentionState<f64>>,
    model: ModelParams<f64>,
    space: MarkSpace<f64>,
}

impl ExactFilter {
    pub fn new<T: Scalar>(
        space: &MarkSpace<T>,
        model: &ModelParams<T>,
        grid: GridSpec,
    ) -> Result<Self, OracleError> {
        grid.validate()?;
        model.validate()?;
        if grid.colors != space.color_count() {
            return Err(OracleError::ColorMismatch {
                grid: grid.colors,
                space: space.color_count(),
            });
        }
        let model = model.cast::<f64>();
        let k = grid.colors;
        let kcolor = if k == 1 {
            // The filter never changes color when there is only one.
            vec![1.0]
        } else {
            let mut rows = Vec::with_capacity((k * k) as usize);
            for c in 1..=k {
                rows.extend(transition_color_pmf(c, &model, k)?);
            }
            rows
        };
        Ok(Self {
            grid,
            kx: drift_kernel(grid.nx, model.sigma_x),
            ky: drift_kernel(grid.ny, model.sigma_y),
            kbias: drift_kernel(grid.nbias, model.sigma_bias),
            kcolor,
            states: (0..grid.len()).map(|i| grid.state(i)).collect(),
            model,
            space: space.cast(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Uniform over all grid states.
    pub fn prior(&self) -> Vec<f64> {
        vec![1.0 / self.grid.len() as f64; self.grid.len()]
    }

    /// One step of the dynamics: `out[s'] = sum_s table[s] p(s' | s)`.
    pub fn propagate(&self, table: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let dims = [g.nx, g.ny, g.nbias, g.colors as usize];
        let mut out = apply_axis(table, dims, 0, &self.kx);
        out = apply_axis(&out, dims, 1, &self.ky);
        out = apply_axis(&out, dims, 2, &self.kbias);
        apply_axis(&out, dims, 3, &self.kcolor)
    }

    /// Bayes update on a click, without moving the state. Normalized.
    pub fn update<T: Scalar>(&self, table: &[f64], click: &ClickEvent<T>) -> Result<Vec<f64>, OracleError> {
        let obs = ObservationModel::new(&self.model, &self.space);
        let (x, y) = (click.x.as_f64(), click.y.as_f64());
        let mut out: Vec<f64> = table
            .iter()
            .zip(&self.states)
            .map(|(&p, s)| p * obs.eval(x, y, click.color, s))
            .collect();
        let total: f64 = out.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(OracleError::ImpossibleClick(click.t));
        }
        out.iter_mut().for_each(|p| *p /= total);
        Ok(out)
    }

    /// Propagate then update.
    pub fn step<T: Scalar>(&self, table: &[f64], click: &ClickEvent<T>) -> Result<Vec<f64>, OracleError> {
        self.update(&self.propagate(table), click)
    }

    /// Expected likelihood of a click on each mark after one more transition.
    pub fn mark_scores(&self, table: &[f64]) -> Vec<f64> {
        let next = self.propagate(table);
        let obs = ObservationModel::new(&self.model, &self.space);
        let live: Vec<_> = next
            .iter()
            .zip(&self.states)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, s)| (p, s, obs.focus_norm(s.x, s.y)))
            .collect();
        self.space
            .marks()
            .iter()
            .map(|m| {
                live.iter()
                    .map(|&(p, s, norm)| p * obs.eval_with(m.x, m.y, m.color, s, norm))
                    .sum()
            })
            .collect()
    }

    pub fn predict(&self, table: &[f64], t: usize, alpha: usize) -> PredictionSet<f64> {
        let scores = self.mark_scores(table);
        PredictionSet {
            t,
            entries: rank_top(&self.space, &scores, alpha),
        }
    }

    /// Marginal over colors; entry `j` is color `j + 1`.
    pub fn color_marginal(&self, table: &[f64]) -> Vec<f64> {
        let per_color = self.grid.len() / self.grid.colors as usize;
        table.chunks(per_color).map(|c| c.iter().sum()).collect()
    }

    /// Marginal over bias nodes.
    pub fn bias_marginal(&self, table: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.nbias];
        for (p, s) in table.iter().zip(&self.states) {
            let ib = (s.bias * (self.grid.nbias - 1) as f64).round() as usize;
            out[ib] += p;
        }
        out
    }
}

/// Contracts a row-major `n x n` kernel along one axis of a 4-d table laid out
/// with axis 0 fastest.
fn apply_axis(table: &[f64], dims: [usize; 4], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let n = dims[axis];
    let stride: usize = dims[..axis].iter().product();
    let block = stride * n;
    let mut out = vec![0.0; table.len()];
    for (src, dst) in table.chunks(block).zip(out.chunks_mut(block)) {
        for inner in 0..stride {
            for i in 0..n {
                let p = src[i * stride + inner];
                if p == 0.0 {
                    continue;
                }
                let row = &kernel[i * n..(i + 1) * n];
                for (j, &k) in row.iter().enumerate() {
                    dst[j * stride + inner] += p * k;
                }
            }
        }
    }
    out
}

/// Filtering distributions after each click; `tables[0]` is the prior and
/// `tables[t]` conditions on clicks `1..=t`.
#[derive(Clone, Debug)]
pub struct ExactPosterior {
    pub filter: ExactFilter,
    pub tables: Vec<Vec<f64>>,
}

impl ExactPosterior {
    pub fn color_marginal(&self, t: usize) -> Vec<f64> {
        self.filter.color_marginal(&self.tables[t])
    }

    /// Ranked prediction for the click after `t`.
    pub fn prediction(&self, t: usize, alpha: usize) -> PredictionSet<f64> {
        self.filter.predict(&self.tables[t], t, alpha)
    }
}

/// Runs the forward recursion from the uniform grid prior.
pub fn exact_posterior<T: Scalar>(
    space: &MarkSpace<T>,
    clicks: &[ClickEvent<T>],
    model: &ModelParams<T>,
    grid: GridSpec,
) -> Result<ExactPosterior, OracleError> {
    let filter = ExactFilter::new(space, model, grid)?;
    let prior = filter.prior();
    exact_posterior_from(filter, prior, clicks)
}

/// Runs the forward recursion from an explicit prior table.
pub fn exact_posterior_from<T: Scalar>(
    filter: ExactFilter,
    prior: Vec<f64>,
    clicks: &[ClickEvent<T>],
) -> Result<ExactPosterior, OracleError> {
    if prior.len() != filter.grid.len() {
        return Err(OracleError::PriorShape {
            expected: filter.grid.len(),
            got: prior.len(),
        });
    }
    let mut tables = Vec::with_capacity(clicks.len() + 1);
    tables.push(prior);
    for click in clicks {
        let next = filter.step(tables.last().expect("prior present"), click)?;
        tables.push(next);
    }
    Ok(ExactPosterior { filter, tables })
}

/// Prediction set from a posterior table, ranked like the particle filter's.
pub fn exact_prediction<T: Scalar>(
    table: &[f64],
    t: usize,
    space: &MarkSpace<T>,
    model: &ModelParams<T>,
    grid: GridSpec,
    alpha: usize,
) -> Result<PredictionSet<f64>, OracleError> {
    Ok(ExactFilter::new(space, model, grid)?.predict(table, t, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markspace::Mark;
    use crate::model::PositionalTerm;
    use approx::assert_relative_eq;

    fn space(marks: &[(u64, f64, f64, Color)], k: Color) -> MarkSpace<f64> {
        MarkSpace::new(marks.iter().map(|&(id, x, y, color)| Mark { id, x, y, color }).collect(), k).unwrap()
    }

    fn three_marks() -> MarkSpace<f64> {
        space(&[(1, 0.2, 0.3, 1), (2, 0.7, 0.6, 2), (3, 0.4, 0.9, 2)], 2)
    }

    #[test]
    fn grid_limits() {
        assert!(GridSpec::new(20, 20, 5, 2).is_ok());
        assert!(matches!(GridSpec::new(1, 20, 5, 2), Err(OracleError::GridTooSmall(_))));
        assert!(matches!(GridSpec::new(200, 200, 10, 8), Err(OracleError::GridTooLarge(_))));
    }

    #[test]
    fn index_round_trip() {
        let g = GridSpec::new(4, 3, 5, 2).unwrap();
        let s = g.state(g.index(3, 1, 4, 2));
        assert_eq!((s.x, s.y, s.bias, s.color), (1.0, 0.5, 1.0, 2));
        for i in 0..g.len() {
            let s = g.state(i);
            let ix = (s.x * 3.0).round() as usize;
            let iy = (s.y * 2.0).round() as usize;
            let ib = (s.bias * 4.0).round() as usize;
            assert_eq!(g.index(ix, iy, ib, s.color), i);
        }
    }

    #[test]
    fn kernel_rows_sum_to_one() {
        for (n, sigma) in [(2, 0.1), (5, 0.45), (20, 0.1), (20, 3.0), (7, 1e-4)] {
            let k = drift_kernel(n, sigma);
            for row in k.chunks(n) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn kernel_boundary_mass_matches_clamp() {
        // From the upper node, half the drift mass steps past the boundary and
        // is clamped back onto it.
        let k = drift_kernel(5, 0.45);
        let from_top = &k[20..25];
        let edge = (0.75 + 1.0) / 2.0;
        assert_relative_eq!(from_top[4], 1.0 - std_normal_cdf((edge - 1.0) / 0.45), epsilon = 1e-15);
        assert!(from_top[4] > 0.5);
    }

    #[test]
    fn kernel_two_node_hand_check() {
        // Nodes 0 and 1, cell edge at 0.5.
        let k = drift_kernel(2, 0.5);
        let stay = std_normal_cdf(1.0);
        assert_relative_eq!(k[0], stay, epsilon = 1e-15);
        assert_relative_eq!(k[1], 1.0 - stay, epsilon = 1e-15);
        assert_relative_eq!(k[3], stay, epsilon = 1e-15);
        // statrs' erfc is good to about 1e-11 here.
        assert_relative_eq!(stay, 0.8413447460685429, epsilon = 1e-10);
    }

    #[test]
    fn zero_clicks_leaves_uniform_prior() {
        let sp = three_marks();
        let grid = GridSpec::new(4, 4, 3, 2).unwrap();
        let post = exact_posterior::<f64>(&sp, &[], &ModelParams::default(), grid).unwrap();
        assert_eq!(post.tables.len(), 1);
        assert!(post.tables[0].iter().all(|&p| p == 1.0 / grid.len() as f64));
    }

    #[test]
    fn uniform_is_stationary_for_color_and_tables_normalized() {
        let sp = three_marks();
        let grid = GridSpec::new(6, 5, 4, 2).unwrap();
        let f = ExactFilter::new(&sp, &ModelParams::default(), grid).unwrap();
        let moved = f.propagate(&f.prior());
        assert!((moved.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let cm = f.color_marginal(&moved);
        assert_relative_eq!(cm[0], 0.5, epsilon = 1e-12);
        let clicks: Vec<_> = [1, 2, 2, 3, 1].iter().enumerate().map(|(i, &id)| sp.click(i + 1, id).unwrap()).collect();
        let post = exact_posterior(&sp, &clicks, &ModelParams::default(), grid).unwrap();
        for table in &post.tables {
            assert!((table.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn location_only_update_is_gaussian_at_nodes() {
        let sp = three_marks();
        let grid = GridSpec::new(5, 4, 3, 2).unwrap();
        let params = ModelParams::new(0.2, 0.3, 0.45, 0.96).unwrap();
        let f = ExactFilter::new(&sp, &params, grid).unwrap();
        let mut prior = vec![0.0; grid.len()];
        for ix in 0..5 {
            for iy in 0..4 {
                prior[grid.index(ix, iy, 2, 1)] = 1.0 / 20.0;
            }
        }
        let click = sp.click(1, 2).unwrap();
        let post = f.update(&prior, &click).unwrap();
        let gauss = |ix: usize, iy: usize| {
            let (x, y) = (ix as f64 / 4.0, iy as f64 / 3.0);
            (-(0.7 - x).powi(2) / (2.0 * 0.04) - (0.6 - y).powi(2) / (2.0 * 0.09)).exp()
        };
        let z: f64 = (0..5).flat_map(|ix| (0..4).map(move |iy| (ix, iy))).map(|(ix, iy)| gauss(ix, iy)).sum();
        for ix in 0..5 {
            for iy in 0..4 {
                assert_relative_eq!(post[grid.index(ix, iy, 2, 1)], gauss(ix, iy) / z, max_relative = 1e-12);
            }
        }
    }

    /// At nx = ny = nbias = 2 every quantity can be written out by hand.
    #[test]
    fn two_node_grid_hand_computation() {
        let sp = space(&[(1, 0.0, 0.0, 1), (2, 1.0, 1.0, 2)], 2);
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        // Unnormalized Gaussian kernel of the click at the origin from a node.
        let g = |x: f64, y: f64| (-(x * x + y * y) / 0.5).exp();
        let density = 1.0 / (0.25 * std::f64::consts::TAU);
        for mode in [PositionalTerm::Density, PositionalTerm::Marks, PositionalTerm::Scaled] {
            let params = ModelParams::new(0.5, 0.5, 0.5, 0.9).unwrap().with_positional(mode);
            let post = exact_posterior(&sp, &[sp.click(1, 1).unwrap()], &params, grid).unwrap();
            // Propagation keeps the uniform prior uniform (symmetric kernels),
            // so the posterior is the normalized likelihood over 16 states.
            let mut lik = Vec::new();
            for c in 1..=2u32 {
                for b in [0.0, 1.0] {
                    for y in [0.0, 1.0] {
                        for x in [0.0, 1.0] {
                            let u = if c == 1 { 1.0 } else { 0.0 };
                            let pos = match mode {
                                PositionalTerm::Density => density * g(x, y),
                                PositionalTerm::Marks => g(x, y) / (g(x, y) + g(1.0 - x, 1.0 - y)),
                                PositionalTerm::Scaled => density * g(x, y) / 2.0,
                            };
                            lik.push(b * pos + (1.0 - b) * u);
                        }
                    }
                }
            }
            let z: f64 = lik.iter().sum();
            for (i, l) in lik.iter().enumerate() {
                assert_relative_eq!(post.tables[1][i], l / z, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_marks_tie_and_order_by_id() {
        let sp = space(&[(4, 0.25, 0.5, 1), (9, 0.75, 0.5, 2)], 2);
        let grid = GridSpec::new(5, 5, 3, 2).unwrap();
        let f = ExactFilter::new(&sp, &ModelParams::default(), grid).unwrap();
        let pred = f.predict(&f.prior(), 0, 10);
        assert_eq!(pred.entries.len(), 2);
        assert_relative_eq!(pred.entries[0].score, pred.entries[1].score, max_relative = 1e-12);
        // Exact ties only up to rounding; equal scores resolve by id.
        let scores = vec![1.0, 1.0];
        let ranked = rank_top(&sp, &scores, 2);
        assert_eq!(ranked.iter().map(|p| p.mark_id).collect::<Vec<_>>(), vec![4, 9]);
    }

    #[test]
    fn concentrated_location_posterior_ranks_nearest_mark() {
        let sp = space(&[(1, 0.1, 0.1, 1), (2, 0.55, 0.45, 2), (3, 0.9, 0.8, 1)], 2);
        let grid = GridSpec::new(11, 11, 3, 2).unwrap();
        let f = ExactFilter::new(&sp, &ModelParams::default(), grid).unwrap();
        let mut table = vec![0.0; grid.len()];
        table[grid.index(5, 5, 2, 1)] = 1.0;
        assert_eq!(f.predict(&table, 1, 3).top(), Some(2));
    }

    #[test]
    fn color_mismatch_rejected() {
        let grid = GridSpec::new(3, 3, 3, 5).unwrap();
        assert!(matches!(
            ExactFilter::new(&three_marks(), &ModelParams::default(), grid),
            Err(OracleError::ColorMismatch { .. })
        ));
    }
}
