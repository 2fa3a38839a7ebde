use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BilevelProblem, SmoothnessConstants, Vector};

use super::{
    make_quartic_ramp, random_minimax, random_quadratic, FiniteSumBilevel, MinimaxQuadratic, MinimaxSpec,
    PlantedConfig, PlantedSaddleProblem, QuadraticCoupledBilevel, QuadraticSpec, QuarticRamp, RampConfig,
};

/// JSON problem description. Matrices are row-major nested arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    QuadraticCoupled(QuadraticSpec),
    MinimaxQuadratic(MinimaxSpec),
    RandomQuadratic {
        d: usize,
        n: usize,
        kappa: f64,
        #[serde(default)]
        quartic: f64,
        seed: u64,
    },
    RandomMinimax {
        d: usize,
        n: usize,
        #[serde(default)]
        quartic: f64,
        seed: u64,
    },
    PlantedSaddle(PlantedConfig),
    QuarticRamp(RampConfig),
    FiniteSum(FiniteSumSpec),
    /// Bare constants, for `verify-constants` only.
    Constants(SmoothnessConstants),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSumSpec {
    pub planted: PlantedConfig,
    pub num_components: usize,
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A constructed testbed problem. Built once per run, so variant sizes do not matter.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum TestProblem {
    Quadratic(QuadraticCoupledBilevel),
    Minimax(MinimaxQuadratic),
    Planted(PlantedSaddleProblem),
    Ramp(QuarticRamp),
    FiniteSum(FiniteSumBilevel, PlantedSaddleProblem),
}

impl ProblemSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Constants of the described problem, building it if necessary.
    pub fn constants(&self) -> Result<SmoothnessConstants> {
        match self {
            ProblemSpec::Constants(c) => Ok(*c),
            other => Ok(*other.build()?.as_problem().constants()),
        }
    }

    pub fn build(&self) -> Result<TestProblem> {
        Ok(match self {
            ProblemSpec::QuadraticCoupled(s) => TestProblem::Quadratic(QuadraticCoupledBilevel::from_spec(s)?),
            ProblemSpec::MinimaxQuadratic(s) => TestProblem::Minimax(MinimaxQuadratic::from_spec(s)?),
            ProblemSpec::RandomQuadratic {
                d,
                n,
                kappa,
                quartic,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                TestProblem::Quadratic(random_quadratic(*d, *n, *kappa, *quartic, &mut rng)?)
            }
            ProblemSpec::RandomMinimax { d, n, quartic, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                TestProblem::Minimax(random_minimax(*d, *n, *quartic, &mut rng)?)
            }
            ProblemSpec::PlantedSaddle(cfg) => TestProblem::Planted(PlantedSaddleProblem::build(cfg)?),
            ProblemSpec::QuarticRamp(cfg) => TestProblem::Ramp(make_quartic_ramp(cfg)?),
            ProblemSpec::FiniteSum(s) => {
                let planted = PlantedSaddleProblem::build(&s.planted)?;
                let fs = FiniteSumBilevel::new(planted.problem().clone(), s.num_components, s.noise, s.seed)?;
                TestProblem::FiniteSum(fs, planted)
            }
            ProblemSpec::Constants(_) => {
                return Err(Error::InvalidConfig(
                    "a bare constants spec describes no runnable problem".into(),
                ))
            }
        })
    }

    /// Same description with the ε-dependent knob replaced, for sweeps.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        match self {
            ProblemSpec::QuarticRamp(cfg) => ProblemSpec::QuarticRamp(RampConfig { epsilon, ..cfg.clone() }),
            other => other.clone(),
        }
    }

    /// Same description with the lower-level condition number replaced, for sweeps.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Ok(match self {
            ProblemSpec::RandomQuadratic {
                d, n, quartic, seed, ..
            } => ProblemSpec::RandomQuadratic {
                d: *d,
                n: *n,
                kappa,
                quartic: *quartic,
                seed: *seed,
            },
            ProblemSpec::PlantedSaddle(cfg) => {
                let lo = cfg.lower_spectrum.0;
                ProblemSpec::PlantedSaddle(PlantedConfig {
                    lower_spectrum: (lo, lo * kappa),
                    ..cfg.clone()
                })
            }
            ProblemSpec::QuarticRamp(cfg) => {
                let lo = cfg.lower_spectrum.0;
                ProblemSpec::QuarticRamp(RampConfig {
                    lower_spectrum: (lo, lo * kappa),
                    ..cfg.clone()
                })
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "kappa sweeps need a random_quadratic, planted_saddle or quartic_ramp problem".into(),
                ))
            }
        })
    }
}

impl TestProblem {
    pub fn as_problem(&self) -> &dyn BilevelProblem {
        match self {
            TestProblem::Quadratic(p) => p,
            TestProblem::Minimax(p) => p,
            TestProblem::Planted(p) => p.problem(),
            TestProblem::Ramp(p) => p.problem(),
            TestProblem::FiniteSum(fs, _) => fs,
        }
    }

    /// Default starting point: the planted saddle, the ramp origin, or zero.
    pub fn default_start(&self) -> Vector {
        match self {
            TestProblem::Planted(p) | TestProblem::FiniteSum(_, p) => p.x_saddle.clone(),
            TestProblem::Ramp(r) => r.x_start.clone(),
            other => Vector::zeros(other.as_problem().dim_x()),
        }
    }

    /// Planted minimum, where one exists.
    pub fn planted_minimum(&self) -> Option<&Vector> {
        match self {
            TestProblem::Planted(p) | TestProblem::FiniteSum(_, p) => Some(&p.x_min),
            TestProblem::Ramp(r) => Some(&r.x_min),
            _ => None,
        }
    }

    pub fn planted(&self) -> Option<&PlantedSaddleProblem> {
        match self {
            TestProblem::Planted(p) | TestProblem::FiniteSum(_, p) => Some(p),
            _ => None,
        }
    }
}
