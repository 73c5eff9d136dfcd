//! Reduction machinery: conjugate exponents, the density/primitive pairs
//! built from v^{1-p'}, and the substitution maps that turn cone-restricted
//! inequalities into unrestricted ones.
//!
//! For p in (1, infinity) and a weight v, write R(x) = int_{x0}^x v^{1-p'}
//! (or the mirror from above). The pair is
//!
//!   density   phi(x) = R(x)^{-p'/(p'+1)} v(x)^{1-p'}
//!   primitive Phi(x) = R(x)^{1/(p'+1)}
//!
//! and int_{x0}^x phi = (p'+1) Phi(x) exactly, a factor the downstream
//! equivalence checks absorb into their pass windows. The substitution maps
//! send h to V^{-(alpha+1)} int_{x0}^x h V^alpha (and the mirror with
//! V_* = int_x^{xn} v), the change of variables that converts a monotone
//! candidate into a free one.

use std::sync::Arc;

use thiserror::Error;

use crate::discrete::{CellWeights, DiscreteError, GridFunction, LogGrid, Pipeline, Stage};
use crate::weights::{
    lower_cumulative, upper_cumulative, CumulativeFn, PiecewisePowerWeight, WeightError,
};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("hypothesis fails: {condition}")]
    ConditionViolated { condition: String },
    #[error("exponent {name} out of range, got {value}")]
    BadExponent { name: &'static str, value: f64 },
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Discrete(#[from] DiscreteError),
}

/// p' with the half-line conventions: p/(p-1) above 1, p/(1-p) below 1,
/// infinity at p = 1.
pub fn conjugate(p: f64) -> f64 {
    debug_assert!(p > 0.0);
    if p == 1.0 {
        f64::INFINITY
    } else if p < 1.0 {
        p / (1.0 - p)
    } else {
        p / (p - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    /// primitive built from below, non-decreasing
    Hardy,
    /// primitive built from above, non-increasing
    Copson,
}

/// The (phi, Phi) pair for Hardy kind, (psi, Psi) for Copson kind.
#[derive(Debug, Clone)]
pub struct ReductionPair {
    pub kind: PairKind,
    pub p: f64,
    pub v: PiecewisePowerWeight,
    p_conj: f64,
    cum: CumulativeFn,
}

pub fn make_reduction_pair(
    v: &PiecewisePowerWeight,
    p: f64,
    kind: PairKind,
) -> Result<ReductionPair, TransformError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(TransformError::BadExponent { name: "p", value: p });
    }
    let p_conj = conjugate(p);
    let vp = v.pow(1.0 - p_conj);
    let cum = match kind {
        PairKind::Hardy => lower_cumulative(&vp),
        PairKind::Copson => upper_cumulative(&vp),
    };
    if cum.diverges {
        let condition = match kind {
            PairKind::Hardy => "v^(1-p') is not integrable near 0",
            PairKind::Copson => "v^(1-p') is not integrable near infinity",
        };
        return Err(TransformError::ConditionViolated { condition: condition.to_string() });
    }
    Ok(ReductionPair { kind, p, v: v.clone(), p_conj, cum })
}

impl ReductionPair {
    pub fn p_conj(&self) -> f64 {
        self.p_conj
    }

    /// The running integral R of v^{1-p'} this pair is built on.
    pub fn primitive_cum(&self) -> &CumulativeFn {
        &self.cum
    }

    /// Phi(x) = R(x)^{1/(p'+1)}.
    pub fn primitive(&self, x: f64) -> Result<f64, WeightError> {
        Ok(self.cum.eval(x)?.powf(1.0 / (self.p_conj + 1.0)))
    }

    /// phi(x) = R(x)^{-p'/(p'+1)} v(x)^{1-p'}.
    pub fn density(&self, x: f64) -> Result<f64, WeightError> {
        let r = self.cum.eval(x)?;
        let vp = self.v.eval(x)?.powf(1.0 - self.p_conj);
        Ok(r.powf(-self.p_conj / (self.p_conj + 1.0)) * vp)
    }

    /// Exact integral of the density over [a, b]; the antiderivative is
    /// (p'+1) Phi.
    pub fn density_integral(&self, a: f64, b: f64) -> Result<f64, WeightError> {
        self.cum.integrate_pow(-self.p_conj / (self.p_conj + 1.0), a, b)
    }
}

/// Stages of h -> V^{-(alpha+1)} int_{x0}^x h V^alpha dt (Lower) or the
/// mirror from above (Upper). The V^alpha cell masses are sampled; V itself
/// and the outer multiplier are closed-form.
pub fn reduction_stages(
    grid: &LogGrid,
    v: &PiecewisePowerWeight,
    alpha: f64,
    kind: PairKind,
) -> Result<Vec<Stage>, TransformError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TransformError::BadExponent { name: "alpha", value: alpha });
    }
    let cum = match kind {
        PairKind::Hardy => lower_cumulative(v),
        PairKind::Copson => upper_cumulative(v),
    };
    let masses = CellWeights::from_fn(grid, |t| cum.eval(t).unwrap().powf(alpha));
    let mul: Vec<f64> = grid
        .points()
        .iter()
        .map(|x| cum.eval(*x).unwrap().powf(-(alpha + 1.0)))
        .collect();
    let cum_stage = match kind {
        PairKind::Hardy => Stage::cum_lower(&masses),
        PairKind::Copson => Stage::cum_upper(&masses),
    };
    Ok(vec![cum_stage, Stage::Mul(mul)])
}

fn apply_reduction(
    h: &GridFunction,
    v: &PiecewisePowerWeight,
    alpha: f64,
    kind: PairKind,
) -> Result<GridFunction, TransformError> {
    let stages = reduction_stages(h.grid(), v, alpha, kind)?;
    let out = Pipeline::new(stages).apply(h.values());
    Ok(GridFunction::new(Arc::clone(h.grid()), out)?)
}

/// g(x) = V(x)^{-(alpha+1)} int_{x0}^x h V^alpha dt with V = int_{x0}^x v.
pub fn reduce_down(
    h: &GridFunction,
    v: &PiecewisePowerWeight,
    alpha: f64,
) -> Result<GridFunction, TransformError> {
    apply_reduction(h, v, alpha, PairKind::Hardy)
}

/// g(x) = V_*(x)^{-(alpha+1)} int_x^{xn} h V_*^alpha dt with V_* = int_x^{xn} v.
pub fn reduce_up(
    h: &GridFunction,
    v: &PiecewisePowerWeight,
    alpha: f64,
) -> Result<GridFunction, TransformError> {
    apply_reduction(h, v, alpha, PairKind::Copson)
}
