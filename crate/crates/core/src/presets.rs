//! Reference models: logistic-source growth, identity responses and
//! discrete delays `τ1 = 5`, `τ2 = 10`, no delay on the CTL term.
//!
//! The infected-cell death rate is not listed with the other constants
//! in the published examples; `a = 0.8` is the value that reproduces the
//! published `R0/β = 105.10841176...` coefficient.

use crate::kernels::DelayKernel;
use crate::model::{
    GrowthFunction, IncidenceFunction, ModelSpec, Parameters, ResponseFunction, State,
};

/// Constant history used for all reference simulations.
pub const REFERENCE_HISTORY: State = State::new(25.0, 50.0, 10.0, 5.0);

pub const REFERENCE_PARAMS: Parameters = Parameters {
    a: 0.8,
    p: 1.0,
    k: 0.8,
    u: 3.5,
    c: 0.03,
    b: 0.75,
    alpha1: 0.1,
    alpha2: 0.05,
};

pub fn reference_growth() -> GrowthFunction {
    GrowthFunction::LogisticSource {
        lambda: 200.0,
        d: 0.1,
        r: 0.6,
        capacity: 500.0,
    }
}

fn with_incidence(incidence: IncidenceFunction) -> ModelSpec {
    ModelSpec {
        growth: reference_growth(),
        incidence,
        phi1: ResponseFunction::Identity,
        phi2: ResponseFunction::Identity,
        params: REFERENCE_PARAMS,
        kernel1: DelayKernel::Dirac { tau: 5.0 },
        kernel2: DelayKernel::Dirac { tau: 10.0 },
        kernel3: DelayKernel::Dirac { tau: 0.0 },
    }
}

/// Ratio-dependent incidence `βx/(0.001 y + 0.001 x)`.
pub fn example1(beta: f64) -> ModelSpec {
    with_incidence(IncidenceFunction::RatioDependent {
        beta,
        alpha: 0.001,
        gamma: 0.001,
    })
}

/// Saturating incidence `βx/((1 + 0.001 y)(1 + 0.001 v))`.
pub fn example3(beta: f64) -> ModelSpec {
    with_incidence(IncidenceFunction::Saturating {
        beta,
        alpha: 0.001,
        gamma: 0.001,
    })
}
