//! Filter parameters as they arrive from the command line or a JSON body.

use clap::Args;
use clickcast_core::{FilterError, FilterParams, ModelParams, PositionalTerm, Resampling};
use serde::{Deserialize, Serialize};

/// Model and filter flags shared by every subcommand that runs the filter.
#[derive(Args, Clone, Debug)]
pub struct ParamArgs {
    /// Number of particles.
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    /// Size of each prediction set.
    #[arg(long, default_value_t = 100)]
    pub alpha: usize,
    /// Drift and click spread in x, as a fraction of the canvas width.
    #[arg(long, default_value_t = 0.1)]
    pub sigma_x: f64,
    /// Drift and click spread in y, as a fraction of the canvas height.
    #[arg(long, default_value_t = 0.1)]
    pub sigma_y: f64,
    /// Drift of the location-vs-color bias.
    #[arg(long = "sigma-pi", default_value_t = 0.45)]
    pub sigma_pi: f64,
    /// Probability that the color of interest persists between clicks.
    #[arg(long, default_value_t = 0.96)]
    pub rho: f64,
    /// Number of clicks before the first prediction.
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Location term of the click likelihood: density, marks or scaled.
    #[arg(long, default_value_t = PositionalTerm::Density)]
    pub positional: PositionalTerm,
    /// Use systematic instead of multinomial resampling.
    #[arg(long)]
    pub systematic: bool,
}

impl ParamArgs {
    pub fn to_params(&self) -> Result<FilterParams<f64>, FilterError> {
        ParamsBody::from(self).to_params()
    }
}

/// JSON form of the filter parameters; missing fields take the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsBody {
    pub particles: Option<usize>,
    pub alpha: Option<usize>,
    pub sigma_x: Option<f64>,
    pub sigma_y: Option<f64>,
    pub sigma_pi: Option<f64>,
    pub rho: Option<f64>,
    pub warmup: Option<usize>,
    pub seed: Option<u64>,
    pub positional: Option<String>,
    pub resampling: Option<String>,
}

impl From<&ParamArgs> for ParamsBody {
    fn from(a: &ParamArgs) -> Self {
        Self {
            particles: Some(a.particles),
            alpha: Some(a.alpha),
            sigma_x: Some(a.sigma_x),
            sigma_y: Some(a.sigma_y),
            sigma_pi: Some(a.sigma_pi),
            rho: Some(a.rho),
            warmup: Some(a.warmup),
            seed: Some(a.seed),
            positional: Some(a.positional.to_string()),
            resampling: Some(if a.systematic { "systematic" } else { "multinomial" }.into()),
        }
    }
}

impl ParamsBody {
    pub fn to_params(&self) -> Result<FilterParams<f64>, FilterError> {
        let d = FilterParams::<f64>::default();
        let positional = match self.positional.as_deref() {
            None => PositionalTerm::default(),
            Some(s) => s
                .parse()
                .map_err(|_| FilterError::InvalidParams("positional must be density, marks or scaled"))?,
        };
        let resampling = match self.resampling.as_deref() {
            None | Some("multinomial") => Resampling::Multinomial,
            Some("systematic") => Resampling::Systematic,
            Some(_) => {
                return Err(FilterError::InvalidParams(
                    "resampling must be multinomial or systematic",
                ))
            }
        };
        let model = ModelParams::new(
            self.sigma_x.unwrap_or(d.model.sigma_x),
            self.sigma_y.unwrap_or(d.model.sigma_y),
            self.sigma_pi.unwrap_or(d.model.sigma_bias),
            self.rho.unwrap_or(d.model.rho),
        )?
        .with_positional(positional);
        let params = FilterParams {
            particles: self.particles.unwrap_or(d.particles),
            alpha: self.alpha.unwrap_or(d.alpha),
            model,
            seed: self.seed.unwrap_or(d.seed),
            warmup: self.warmup.unwrap_or(d.warmup),
            resampling,
        };
        params.validate()?;
        Ok(params)
    }

    /// The effective parameters, every field filled in.
    pub fn describe(params: &FilterParams<f64>) -> Self {
        Self {
            particles: Some(params.particles),
            alpha: Some(params.alpha),
            sigma_x: Some(params.model.sigma_x),
            sigma_y: Some(params.model.sigma_y),
            sigma_pi: Some(params.model.sigma_bias),
            rho: Some(params.model.rho),
            warmup: Some(params.warmup),
            seed: Some(params.seed),
            positional: Some(params.model.positional.to_string()),
            resampling: Some(
                match params.resampling {
                    Resampling::Multinomial => "multinomial",
                    Resampling::Systematic => "systematic",
                }
                .into(),
            ),
        }
    }
}
