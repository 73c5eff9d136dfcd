//! Equivalence verification between an inequality and its reduced companion.
//!
//! An [`InequalitySpec`] fixes one kernel kind, exponents, weights, and a
//! grid. [`reduce_spec`] rewrites it under one of the supported rewrite ids:
//! the main family trades the right-hand L^p norm for an L^1 norm against a
//! sampled primitive power of v while dividing the outer (and any inner)
//! exponent by p, the sup-norm ids do the same at q = infinity with w raised
//! to the p-th power, and the corollary ids keep the outer norm but splice an
//! inner p-th root and a primitive-power multiplier into the operator. The
//! best constants of the two sides are then comparable: C_red ~ C^(1/theta)
//! with theta recorded per id, so [`verify_equivalence`] estimates both via
//! the solver and checks C_orig / C_red^theta against a window [1/K, K].
//!
//! [`verify_characterization`] instead compares a solver estimate against the
//! closed-form functional that characterizes the same instance.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::discrete::{
    CellWeights, DiscreteError, LogGrid, OperatorKind, Pipeline, RatioProblem, Stage,
};
use crate::functionals::{
    bradley_l1_copson_n, bradley_l1_hardy_n, copson_constant_n, hardy_constant_n,
    iterated_copson_copson_l1_n, iterated_copson_copson_n, iterated_hardy_copson_l1_n,
    iterated_hardy_copson_n, FunctionalError, FunctionalValue,
};
use crate::solver::{best_constant, BestConstantEstimate, SolverError, SolverOpts};
use crate::transforms::{make_reduction_pair, PairKind, ReductionPair, TransformError};
use crate::weights::{PiecewisePowerWeight, Segment, WeightError};

/// Default comparison window K for equivalence verdicts.
pub const DEFAULT_WINDOW: f64 = 16.0;

/// Estimates below this are treated as degenerate rather than compared.
pub const DEGENERATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("hypothesis of {theorem} fails: {condition}")]
    HypothesisViolated { theorem: String, condition: String },
    #[error("RegimeMismatch: no characterization covers {detail}")]
    RegimeMismatch { detail: String },
    #[error("degenerate instance: best constant estimate {value:e} below 1e-12")]
    DegenerateInstance { value: f64 },
    #[error("unknown theorem id {0:?}")]
    UnknownTheorem(String),
    #[error("sampled weight has {got} cells but the grid has {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("{name} must cover the grid domain")]
    DomainMismatch { name: &'static str },
    #[error("exponent {name} out of range, got {value}")]
    BadExponent { name: &'static str, value: f64 },
    #[error("solver: {0}")]
    Solver(Box<SolverError>),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Discrete(#[from] DiscreteError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

impl From<SolverError> for VerifyError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Spec(v) => v,
            other => VerifyError::Solver(Box::new(other)),
        }
    }
}

impl From<TransformError> for VerifyError {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::ConditionViolated { condition } => VerifyError::HypothesisViolated {
                theorem: String::new(),
                condition,
            },
            TransformError::BadExponent { name, value } => {
                VerifyError::BadExponent { name, value }
            }
            TransformError::Weight(w) => VerifyError::Weight(w),
            TransformError::Discrete(d) => VerifyError::Discrete(d),
        }
    }
}

/// Identifies which equivalence rewrite applies to a spec. The string forms
/// ("4.1", "1.7", "cor1.3", "identity") appear in instance files and output
/// records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TheoremId {
    T15,
    T16,
    T17,
    T18,
    Cor13,
    Cor14,
    T41,
    T42,
    T48,
    T49,
    Identity,
}

impl TheoremId {
    /// The ten verifiable rewrite ids, in suite order.
    pub fn suite() -> [TheoremId; 10] {
        use TheoremId::*;
        [T15, T16, T17, T18, Cor13, Cor14, T41, T42, T48, T49]
    }

    pub fn as_str(&self) -> &'static str {
        use TheoremId::*;
        match self {
            T15 => "1.5",
            T16 => "1.6",
            T17 => "1.7",
            T18 => "1.8",
            Cor13 => "cor1.3",
            Cor14 => "cor1.4",
            T41 => "4.1",
            T42 => "4.2",
            T48 => "4.8",
            T49 => "4.9",
            Identity => "identity",
        }
    }

    fn ord(&self) -> u64 {
        use TheoremId::*;
        match self {
            T15 => 0,
            T16 => 1,
            T17 => 2,
            T18 => 3,
            Cor13 => 4,
            Cor14 => 5,
            T41 => 6,
            T42 => 7,
            T48 => 8,
            T49 => 9,
            Identity => 10,
        }
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TheoremId {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, VerifyError> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
        use TheoremId::*;
        Ok(match key.as_str() {
            "1.5" => T15,
            "1.6" => T16,
            "1.7" => T17,
            "1.8" => T18,
            "cor1.3" => Cor13,
            "cor1.4" => Cor14,
            "4.1" => T41,
            "4.2" => T42,
            "4.8" => T48,
            "4.9" => T49,
            "identity" => Identity,
            _ => return Err(VerifyError::UnknownTheorem(s.to_string())),
        })
    }
}

/// A weight in a spec: either a closed-form piecewise power, or point values
/// with precomputed cell masses (as produced for the sampled reduced
/// weights, which have no piecewise-power form).
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Power(PiecewisePowerWeight),
    Sampled(CellWeights),
}

impl WeightSpec {
    pub fn cells(&self, grid: &LogGrid) -> Result<CellWeights, VerifyError> {
        match self {
            WeightSpec::Power(w) => Ok(CellWeights::from_weight(grid, w)?),
            WeightSpec::Sampled(cw) => {
                if cw.masses.len() != grid.n() {
                    return Err(VerifyError::GridMismatch {
                        expected: grid.n(),
                        got: cw.masses.len(),
                    });
                }
                Ok(cw.clone())
            }
        }
    }

    pub fn as_power(&self) -> Option<&PiecewisePowerWeight> {
        match self {
            WeightSpec::Power(w) => Some(w),
            WeightSpec::Sampled(_) => None,
        }
    }
}

/// One inequality instance: || T h ||_{q,w} <= C || h ||_{p,v} over
/// non-negative grid functions h, with the operator kind carrying any inner
/// exponent r and weight u. `inner_pow`, `multiplier`, and `rhs_root` are
/// identity for specs built by [`InequalitySpec::new`]; the corollary
/// rewrites set them (the ratio then reads lhs / rhs^rhs_root, which keeps
/// it invariant under scaling of h).
#[derive(Debug, Clone, PartialEq)]
pub struct InequalitySpec {
    pub kind: OperatorKind,
    pub p: f64,
    pub q: f64,
    pub w: WeightSpec,
    pub v: WeightSpec,
    pub grid: Arc<LogGrid>,
    pub seed: u64,
    pub inner_pow: f64,
    pub multiplier: Option<Vec<f64>>,
    pub rhs_root: f64,
}

impl InequalitySpec {
    pub fn new(
        kind: OperatorKind,
        p: f64,
        q: f64,
        w: WeightSpec,
        v: WeightSpec,
        grid: Arc<LogGrid>,
        seed: u64,
    ) -> Result<Self, VerifyError> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(VerifyError::BadExponent { name: "p", value: p });
        }
        if !(q > 0.0) {
            return Err(VerifyError::BadExponent { name: "q", value: q });
        }
        let spec = Self {
            kind,
            p,
            q,
            w,
            v,
            grid,
            seed,
            inner_pow: 1.0,
            multiplier: None,
            rhs_root: 1.0,
        };
        spec.check_weight(&spec.w, "w")?;
        spec.check_weight(&spec.v, "v")?;
        if let Some((_, u)) = spec.kind.inner() {
            if u.domain() != spec.grid.domain() {
                return Err(VerifyError::DomainMismatch { name: "u" });
            }
        }
        Ok(spec)
    }

    fn check_weight(&self, w: &WeightSpec, name: &'static str) -> Result<(), VerifyError> {
        match w {
            WeightSpec::Power(pw) => {
                if pw.domain() != self.grid.domain() {
                    return Err(VerifyError::DomainMismatch { name });
                }
            }
            WeightSpec::Sampled(cw) => {
                if cw.masses.len() != self.grid.n() {
                    return Err(VerifyError::GridMismatch {
                        expected: self.grid.n(),
                        got: cw.masses.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Ratio evaluator for this spec: the kind's stage chain with any inner
    /// power and multiplier spliced in after the inner integral.
    pub fn compile(&self) -> Result<CompiledSpec, VerifyError> {
        let w_cells = self.w.cells(&self.grid)?;
        let v_cells = self.v.cells(&self.grid)?;
        let base = Pipeline::for_kind(&self.kind, &self.grid)?;
        let pipeline = if self.inner_pow != 1.0 || self.multiplier.is_some() {
            let mut stages = base.into_stages();
            let mut extra = Vec::new();
            if self.inner_pow != 1.0 {
                extra.push(Stage::Pow(self.inner_pow));
            }
            if let Some(m) = &self.multiplier {
                if m.len() != self.grid.n() {
                    return Err(VerifyError::GridMismatch {
                        expected: self.grid.n(),
                        got: m.len(),
                    });
                }
                extra.push(Stage::Mul(m.clone()));
            }
            stages.splice(1..1, extra);
            Pipeline::new(stages)
        } else {
            base
        };
        Ok(CompiledSpec {
            problem: RatioProblem::from_parts(
                self.grid.clone(),
                pipeline,
                self.p,
                self.q,
                w_cells,
                v_cells,
            ),
            rhs_root: self.rhs_root,
        })
    }
}

/// A spec compiled to cell weights and a stage chain, ready for repeated
/// ratio evaluations.
#[derive(Debug, Clone)]
pub struct CompiledSpec {
    pub problem: RatioProblem,
    pub rhs_root: f64,
}

impl CompiledSpec {
    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn ratio(&self, h: &[f64]) -> f64 {
        let rhs = self.problem.rhs(h);
        if rhs == 0.0 {
            return 0.0;
        }
        let denom = if self.rhs_root == 1.0 { rhs } else { rhs.powf(self.rhs_root) };
        if denom.is_infinite() {
            return 0.0;
        }
        self.problem.lhs(h) / denom
    }
}

/// Output of [`reduce_spec`]: the rewritten spec and the exponent theta with
/// C_orig comparable to C_red^theta.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub spec: InequalitySpec,
    pub theta: f64,
}

fn inner_is_lower(kind: &OperatorKind) -> bool {
    matches!(
        kind,
        OperatorKind::Hardy
            | OperatorKind::HardyThenCopson { .. }
            | OperatorKind::HardyThenHardy { .. }
    )
}

fn scale_inner(kind: &OperatorKind, p: f64) -> OperatorKind {
    match kind {
        OperatorKind::Hardy => OperatorKind::Hardy,
        OperatorKind::Copson => OperatorKind::Copson,
        OperatorKind::HardyThenCopson { r, u } => {
            OperatorKind::HardyThenCopson { r: r / p, u: u.clone() }
        }
        OperatorKind::CopsonThenCopson { r, u } => {
            OperatorKind::CopsonThenCopson { r: r / p, u: u.clone() }
        }
        OperatorKind::CopsonThenHardy { r, u } => {
            OperatorKind::CopsonThenHardy { r: r / p, u: u.clone() }
        }
        OperatorKind::HardyThenHardy { r, u } => {
            OperatorKind::HardyThenHardy { r: r / p, u: u.clone() }
        }
    }
}

fn violated(theorem: TheoremId, condition: impl Into<String>) -> VerifyError {
    VerifyError::HypothesisViolated {
        theorem: theorem.as_str().to_string(),
        condition: condition.into(),
    }
}

/// Builds the reduction pair for the spec's v on the side the rewrite needs,
/// tagging condition failures with the rewrite id.
fn pair_for(
    spec: &InequalitySpec,
    theorem: TheoremId,
    side: PairKind,
) -> Result<ReductionPair, VerifyError> {
    let v = spec
        .v
        .as_power()
        .ok_or_else(|| violated(theorem, "v has no closed form to reduce against"))?;
    make_reduction_pair(v, spec.p, side).map_err(|e| match e {
        TransformError::ConditionViolated { condition } => violated(theorem, condition),
        other => other.into(),
    })
}

/// Point values and masses of primitive(x)^s on the grid. The primitive
/// vanishes at one domain end (the lower end for the Hardy pair, the upper
/// for Copson), so for negative s the integrand has a power singularity
/// there; that edge piece is integrated on panels clustered geometrically
/// toward the end plus a closed-form stub for the remainder, which also
/// yields an infinite edge mass exactly when the singularity is
/// non-integrable (s <= -(p'+1) in primitive powers, i.e. p >= 2 for the
/// main rewrites). All other pieces use plain geometric midpoint panels.
fn primitive_power_cells(grid: &LogGrid, pair: &ReductionPair, s: f64) -> CellWeights {
    let n = grid.n();
    let g = |x: f64| pair.primitive(x).map_or(f64::NAN, |t| t.powf(s));
    let panel = |l: f64, r: f64, k: usize| -> f64 {
        let step = (r / l).powf(1.0 / k as f64);
        let mut acc = 0.0;
        let mut lo = l;
        for _ in 0..k {
            let hi = lo * step;
            acc += g((lo * hi).sqrt()) * (hi - lo);
            lo = hi;
        }
        acc
    };
    // Local exponent of the integrand in the distance t to the singular end:
    // the primitive's argument grows linearly in t there.
    let e_local = s / (pair.p_conj() + 1.0);
    let singular_piece = |edge: f64, far: f64| -> f64 {
        let span = (far - edge).abs();
        let t_min = span * 1e-10;
        let x_at = |t: f64| if far > edge { edge + t } else { edge - t };
        let stub = if e_local > -1.0 {
            let k_loc = g(x_at(t_min)) / t_min.powf(e_local);
            k_loc * t_min.powf(e_local + 1.0) / (e_local + 1.0)
        } else {
            f64::INFINITY
        };
        let mut acc = stub;
        let panels = 96;
        let step = (span / t_min).powf(1.0 / panels as f64);
        let mut lo = t_min;
        for _ in 0..panels {
            let hi = lo * step;
            acc += g(x_at((lo * hi).sqrt())) * (hi - lo);
            lo = hi;
        }
        acc
    };
    let (x0, xn) = grid.domain();
    let mut point_values = Vec::with_capacity(n);
    let mut masses = Vec::with_capacity(n);
    let mut lower_partials = Vec::with_capacity(n);
    let mut upper_partials = Vec::with_capacity(n);
    for i in 0..n {
        let (l, r) = grid.cell(i);
        let x = grid.points()[i];
        let lo = if i == 0 && pair.kind == PairKind::Hardy {
            singular_piece(x0, x)
        } else {
            panel(l, x, 24)
        };
        let hi = if i == n - 1 && pair.kind == PairKind::Copson {
            singular_piece(xn, x)
        } else {
            panel(x, r, 24)
        };
        point_values.push(g(x));
        masses.push(lo + hi);
        lower_partials.push(lo);
        upper_partials.push(hi);
    }
    CellWeights { point_values, masses, lower_partials, upper_partials }
}

/// Rewrites a spec under the given id. Checks the id's hypotheses (operator
/// kind with the matching inner integral, p > 1, the right q range, and
/// local integrability of v^(1-p') at the relevant end) and returns the
/// reduced spec together with theta.
pub fn reduce_spec(spec: &InequalitySpec, theorem: TheoremId) -> Result<Reduction, VerifyError> {
    use TheoremId::*;
    if theorem == Identity {
        return Ok(Reduction { spec: spec.clone(), theta: 1.0 });
    }
    if spec.inner_pow != 1.0 || spec.multiplier.is_some() || spec.rhs_root != 1.0 {
        return Err(violated(theorem, "spec is already in reduced form"));
    }
    if !(spec.p > 1.0 && spec.p.is_finite()) {
        return Err(violated(theorem, format!("needs p > 1, got p = {}", spec.p)));
    }
    let wants_lower = matches!(theorem, T15 | T17 | Cor13 | T41 | T48);
    if wants_lower != inner_is_lower(&spec.kind) {
        return Err(violated(
            theorem,
            format!(
                "kind {} integrates from the wrong end for this rewrite",
                spec.kind.tag()
            ),
        ));
    }
    let kind_ok = match theorem {
        T41 => matches!(spec.kind, OperatorKind::Hardy),
        T42 => matches!(spec.kind, OperatorKind::Copson),
        T48 => matches!(spec.kind, OperatorKind::HardyThenCopson { .. }),
        T49 => matches!(spec.kind, OperatorKind::CopsonThenCopson { .. }),
        _ => true,
    };
    if !kind_ok {
        return Err(violated(
            theorem,
            format!("rewrite {} does not cover kind {}", theorem, spec.kind.tag()),
        ));
    }
    match theorem {
        T17 | T18 => {
            if !spec.q.is_infinite() {
                return Err(violated(theorem, format!("needs q = inf, got q = {}", spec.q)));
            }
        }
        Cor13 | Cor14 => {}
        _ => {
            if !spec.q.is_finite() {
                return Err(violated(theorem, "needs finite q"));
            }
        }
    }
    let side = if wants_lower { PairKind::Hardy } else { PairKind::Copson };
    let pair = pair_for(spec, theorem, side)?;
    let p = spec.p;
    let reduced = match theorem {
        T41 | T42 | T48 | T49 | T15 | T16 => InequalitySpec {
            kind: scale_inner(&spec.kind, p),
            p: 1.0,
            q: spec.q / p,
            w: spec.w.clone(),
            v: WeightSpec::Sampled(primitive_power_cells(&spec.grid, &pair, 1.0 - 2.0 * p)),
            grid: spec.grid.clone(),
            seed: spec.seed,
            inner_pow: 1.0,
            multiplier: None,
            rhs_root: 1.0,
        },
        T17 | T18 => {
            let w = spec
                .w
                .as_power()
                .ok_or_else(|| violated(theorem, "w has no closed form to raise to p"))?;
            InequalitySpec {
                kind: scale_inner(&spec.kind, p),
                p: 1.0,
                q: f64::INFINITY,
                w: WeightSpec::Power(w.pow(p)),
                v: WeightSpec::Sampled(primitive_power_cells(&spec.grid, &pair, 1.0 - 2.0 * p)),
                grid: spec.grid.clone(),
                seed: spec.seed,
                inner_pow: 1.0,
                multiplier: None,
                rhs_root: 1.0,
            }
        }
        Cor13 | Cor14 => {
            let m_exp = 2.0 * (1.0 - 1.0 / p);
            let multiplier = spec
                .grid
                .points()
                .iter()
                .map(|&x| pair.primitive(x).map(|t| t.powf(m_exp)))
                .collect::<Result<Vec<f64>, WeightError>>()?;
            InequalitySpec {
                kind: spec.kind.clone(),
                p: 1.0,
                q: spec.q,
                w: spec.w.clone(),
                v: WeightSpec::Sampled(primitive_power_cells(&spec.grid, &pair, -1.0)),
                grid: spec.grid.clone(),
                seed: spec.seed,
                inner_pow: 1.0 / p,
                multiplier: Some(multiplier),
                rhs_root: 1.0 / p,
            }
        }
        Identity => unreachable!(),
    };
    let theta = match theorem {
        Cor13 | Cor14 => 1.0,
        _ => 1.0 / p,
    };
    Ok(Reduction { spec: reduced, theta })
}

/// Result of one equivalence check: both specs, both solver estimates, and
/// the ratio C_orig / C_red^theta judged against [1/window, window].
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub theorem: TheoremId,
    pub theta: f64,
    pub window: f64,
    pub original: InequalitySpec,
    pub reduced: InequalitySpec,
    pub original_estimate: BestConstantEstimate,
    pub reduced_estimate: BestConstantEstimate,
    pub ratio: f64,
    pub pass: bool,
}

pub fn verify_equivalence(
    spec: &InequalitySpec,
    theorem: TheoremId,
    window: f64,
) -> Result<EquivalenceReport, VerifyError> {
    verify_equivalence_with(spec, theorem, window, &SolverOpts::default())
}

pub fn verify_equivalence_with(
    spec: &InequalitySpec,
    theorem: TheoremId,
    window: f64,
    opts: &SolverOpts,
) -> Result<EquivalenceReport, VerifyError> {
    if !(window > 1.0) {
        return Err(VerifyError::BadExponent { name: "window", value: window });
    }
    let reduction = reduce_spec(spec, theorem)?;
    let original_estimate = best_constant(spec, opts)?;
    let reduced_estimate = best_constant(&reduction.spec, opts)?;
    let small = original_estimate.value.min(reduced_estimate.value);
    if small < DEGENERATE_FLOOR {
        return Err(VerifyError::DegenerateInstance { value: small });
    }
    let denom = if reduction.theta == 1.0 {
        reduced_estimate.value
    } else {
        reduced_estimate.value.powf(reduction.theta)
    };
    let ratio = original_estimate.value / denom;
    let pass = ratio.is_finite() && ratio >= 1.0 / window && ratio <= window;
    Ok(EquivalenceReport {
        theorem,
        theta: reduction.theta,
        window,
        original: spec.clone(),
        reduced: reduction.spec,
        original_estimate,
        reduced_estimate,
        ratio,
        pass,
    })
}

/// Result of checking a solver estimate against the closed-form functional:
/// pass means F / lower_factor <= estimate <= upper_factor * F.
#[derive(Debug, Clone)]
pub struct CharacterizationReport {
    pub functional: FunctionalValue,
    pub estimate: BestConstantEstimate,
    pub upper_factor: f64,
    pub lower_factor: f64,
    pub pass: bool,
}

pub fn verify_characterization(
    spec: &InequalitySpec,
) -> Result<CharacterizationReport, VerifyError> {
    verify_characterization_with(spec, &SolverOpts::default())
}

pub fn verify_characterization_with(
    spec: &InequalitySpec,
    opts: &SolverOpts,
) -> Result<CharacterizationReport, VerifyError> {
    let mismatch = |detail: String| VerifyError::RegimeMismatch { detail };
    let w = spec.w.as_power().ok_or_else(|| mismatch("a sampled w".into()))?;
    let v = spec.v.as_power().ok_or_else(|| mismatch("a sampled v".into()))?;
    if spec.inner_pow != 1.0 || spec.multiplier.is_some() {
        return Err(mismatch("a rewritten operator".into()));
    }
    let n = spec.grid.n();
    let (p, q) = (spec.p, spec.q);
    let describe = || format!("kind {} at p = {}, q = {}", spec.kind.tag(), p, q);
    if q.is_infinite() || (p != 1.0 && p < 1.0) {
        return Err(mismatch(describe()));
    }
    // The exact-sup L^1 cases tolerate only discretization; the rest carry
    // the equivalence constants of their characterizations.
    let (functional, upper, lower) = match &spec.kind {
        OperatorKind::Hardy | OperatorKind::Copson => {
            let f = if p == 1.0 {
                let fv = if matches!(spec.kind, OperatorKind::Hardy) {
                    bradley_l1_hardy_n(w, v, q, n)?
                } else {
                    bradley_l1_copson_n(w, v, q, n)?
                };
                let tight = q >= 1.0;
                (fv, 1.05, if tight { 1.05 } else { 8.0 })
            } else {
                let fv = if matches!(spec.kind, OperatorKind::Hardy) {
                    hardy_constant_n(w, v, p, q, n)?
                } else {
                    copson_constant_n(w, v, p, q, n)?
                };
                (fv, 8.0, 8.0)
            };
            f
        }
        OperatorKind::HardyThenCopson { r, u } => {
            let fv = if p == 1.0 {
                iterated_hardy_copson_l1_n(u, v, w, q, *r, n)?
            } else {
                iterated_hardy_copson_n(u, v, w, p, q, *r, n)?
            };
            (fv, 8.0, 8.0)
        }
        OperatorKind::CopsonThenCopson { r, u } => {
            let fv = if p == 1.0 {
                iterated_copson_copson_l1_n(u, v, w, q, *r, n)?
            } else {
                iterated_copson_copson_n(u, v, w, p, q, *r, n)?
            };
            (fv, 8.0, 8.0)
        }
        OperatorKind::CopsonThenHardy { .. } | OperatorKind::HardyThenHardy { .. } => {
            return Err(mismatch(describe()));
        }
    };
    let estimate = best_constant(spec, opts)?;
    let pass = functional.value.is_finite()
        && estimate.value <= upper * functional.value
        && estimate.value >= functional.value / lower;
    Ok(CharacterizationReport {
        functional,
        estimate,
        upper_factor: upper,
        lower_factor: lower,
        pass,
    })
}

/// Draws a random admissible instance for the given rewrite id. Exponents:
/// p uniform in [1.25, 3], q and r within a factor 2.5 of p (q = infinity
/// for the sup-norm ids). Weights are two-segment powers with coefficients
/// log-uniform in [1/e, e] and exponents in [-2.5, 1.5], except that the
/// v segment at the end the rewrite integrates from is constrained so that
/// v^(1-p') stays locally integrable there. Deterministic in
/// (theorem, index, seed).
pub fn sample_instance(
    theorem: TheoremId,
    index: u64,
    n: usize,
    domain: (f64, f64),
    seed: u64,
) -> Result<InequalitySpec, VerifyError> {
    use TheoremId::*;
    let grid = Arc::new(LogGrid::new(n, domain.0, domain.1)?);
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ theorem.ord().wrapping_mul(0xa24b_aed4_963e_e407),
    );
    let p = 1.25 + 1.75 * rng.gen::<f64>();
    let mut near = |base: f64| -> f64 {
        let f = (rng.gen::<f64>() * 2.0 - 1.0) * 2.5f64.ln();
        (base * f.exp()).clamp(0.35, 7.5)
    };
    let q = match theorem {
        T17 | T18 => f64::INFINITY,
        _ => near(p),
    };
    let r = near(p);
    let coeff = |rng: &mut ChaCha8Rng| (rng.gen::<f64>() * 2.0 - 1.0).exp();
    let exponent = |rng: &mut ChaCha8Rng| -2.5 + 4.0 * rng.gen::<f64>();
    let breakpoint = |rng: &mut ChaCha8Rng| {
        let mid = (domain.0 * domain.1).sqrt();
        let swing = (domain.1 / domain.0).ln() / 6.0;
        mid * ((rng.gen::<f64>() * 2.0 - 1.0) * swing).exp()
    };
    let two_segment = |rng: &mut ChaCha8Rng, a_first: f64, a_last: f64| {
        PiecewisePowerWeight::new(
            vec![domain.0, breakpoint(rng), domain.1],
            vec![
                Segment { c: coeff(rng), a: a_first },
                Segment { c: coeff(rng), a: a_last },
            ],
        )
        .map_err(VerifyError::from)
    };
    let lower_side = matches!(theorem, T15 | T17 | Cor13 | T41 | T48 | Identity);
    // v^(1-p') must stay integrable toward the end the rewrite uses, which
    // bounds that segment's exponent by p - 1 (from below on the upper side,
    // from above on the lower side).
    let v = if lower_side {
        let cap = (p - 1.0 - 0.05).min(1.5);
        let a0 = -2.5 + (cap + 2.5) * rng.gen::<f64>();
        let a1 = exponent(&mut rng);
        two_segment(&mut rng, a0, a1)?
    } else {
        let floor = p - 1.0 + 0.05;
        let a1 = floor + 1.5 * rng.gen::<f64>();
        let a0 = exponent(&mut rng);
        two_segment(&mut rng, a0, a1)?
    };
    let w = {
        let a0 = exponent(&mut rng);
        let a1 = exponent(&mut rng);
        two_segment(&mut rng, a0, a1)?
    };
    let kind = match theorem {
        T41 | T17 | Cor13 | Identity => OperatorKind::Hardy,
        T42 | T18 | Cor14 => OperatorKind::Copson,
        T48 => OperatorKind::HardyThenCopson {
            r,
            u: PiecewisePowerWeight::power_on(domain, coeff(&mut rng), exponent(&mut rng)),
        },
        T49 => OperatorKind::CopsonThenCopson {
            r,
            u: PiecewisePowerWeight::power_on(domain, coeff(&mut rng), exponent(&mut rng)),
        },
        T15 => OperatorKind::HardyThenHardy {
            r,
            u: PiecewisePowerWeight::power_on(domain, coeff(&mut rng), exponent(&mut rng)),
        },
        T16 => OperatorKind::CopsonThenHardy {
            r,
            u: PiecewisePowerWeight::power_on(domain, coeff(&mut rng), exponent(&mut rng)),
        },
    };
    let solver_seed = rng.gen::<u64>();
    InequalitySpec::new(kind, p, q, WeightSpec::Power(w), WeightSpec::Power(v), grid, solver_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{atom_search, SolverOpts};
    use crate::weights::Segment;

    fn grid_on(n: usize, domain: (f64, f64)) -> Arc<LogGrid> {
        Arc::new(LogGrid::new(n, domain.0, domain.1).unwrap())
    }

    fn plain_spec(
        kind: OperatorKind,
        p: f64,
        q: f64,
        w: PiecewisePowerWeight,
        v: PiecewisePowerWeight,
        n: usize,
    ) -> InequalitySpec {
        let domain = w.domain();
        InequalitySpec::new(
            kind,
            p,
            q,
            WeightSpec::Power(w),
            WeightSpec::Power(v),
            grid_on(n, domain),
            7,
        )
        .unwrap()
    }

    fn classical_hardy(n: usize) -> InequalitySpec {
        let domain = (1e-4, 1e4);
        plain_spec(
            OperatorKind::Hardy,
            2.0,
            2.0,
            PiecewisePowerWeight::power_on(domain, 1.0, -2.0),
            PiecewisePowerWeight::one_on(domain),
            n,
        )
    }

    #[test]
    fn theorem_ids_round_trip_through_strings() {
        let mut all = TheoremId::suite().to_vec();
        all.push(TheoremId::Identity);
        for id in all {
            assert_eq!(id.as_str().parse::<TheoremId>().unwrap(), id);
        }
        assert_eq!(" Cor 1.3 ".parse::<TheoremId>().unwrap(), TheoremId::Cor13);
        match "4.7".parse::<TheoremId>() {
            Err(VerifyError::UnknownTheorem(s)) => assert_eq!(s, "4.7"),
            other => panic!("expected UnknownTheorem, got {other:?}"),
        }
    }

    #[test]
    fn reduce_hardy_pair_to_l1_form() {
        let spec = classical_hardy(128);
        let red = reduce_spec(&spec, TheoremId::T41).unwrap();
        assert_eq!(red.theta, 0.5);
        let r = &red.spec;
        assert_eq!(r.p, 1.0);
        assert_eq!(r.q, 1.0);
        assert!(matches!(r.kind, OperatorKind::Hardy));
        assert_eq!(r.w, spec.w);
        // with v = 1 and p = 2 the primitive is (x - x0)^(1/3), so the
        // reduced right weight is its inverse cube
        let x0 = spec.grid.domain().0;
        let cells = match &r.v {
            WeightSpec::Sampled(cw) => cw,
            WeightSpec::Power(_) => panic!("reduced v should be sampled"),
        };
        for (i, &x) in spec.grid.points().iter().enumerate() {
            let want = 1.0 / (x - x0);
            assert!(
                (cells.point_values[i] - want).abs() <= 1e-10 * want,
                "cell {i}: {} vs {}",
                cells.point_values[i],
                want
            );
        }
        // v^(1-2p) is non-integrable at the lower end exactly when p >= 2
        assert!(cells.masses[0].is_infinite());
        assert!(cells.masses[1..].iter().all(|m| m.is_finite()));
    }

    #[test]
    fn reduce_sup_norm_variant_squares_the_outer_weight() {
        let domain = (1e-2, 1e2);
        let w = PiecewisePowerWeight::new(
            vec![domain.0, 1.0, domain.1],
            vec![Segment { c: 2.0, a: -0.5 }, Segment { c: 0.5, a: -2.0 }],
        )
        .unwrap();
        let spec = plain_spec(
            OperatorKind::Hardy,
            2.0,
            f64::INFINITY,
            w,
            PiecewisePowerWeight::one_on(domain),
            64,
        );
        let red = reduce_spec(&spec, TheoremId::T17).unwrap();
        assert_eq!(red.theta, 0.5);
        assert!(red.spec.q.is_infinite());
        assert_eq!(red.spec.p, 1.0);
        let rw = red.spec.w.as_power().expect("outer weight keeps its closed form");
        for (seg, orig) in rw.segments().iter().zip(spec.w.as_power().unwrap().segments()) {
            assert!((seg.c - orig.c * orig.c).abs() <= 1e-12 * seg.c);
            assert_eq!(seg.a, 2.0 * orig.a);
        }
        assert!(matches!(red.spec.v, WeightSpec::Sampled(_)));
    }

    #[test]
    fn reduce_corollary_keeps_q_and_splices_the_inner_power() {
        let spec = classical_hardy(128);
        let red = reduce_spec(&spec, TheoremId::Cor13).unwrap();
        assert_eq!(red.theta, 1.0);
        let r = &red.spec;
        assert_eq!(r.p, 1.0);
        assert_eq!(r.q, 2.0);
        assert_eq!(r.inner_pow, 0.5);
        assert_eq!(r.rhs_root, 0.5);
        let x0 = spec.grid.domain().0;
        let mult = r.multiplier.as_ref().expect("corollary rewrite multiplies the inner integral");
        for (i, &x) in spec.grid.points().iter().enumerate() {
            // at p = 2 the multiplier is the primitive itself, (x - x0)^(1/3)
            let want = (x - x0).powf(1.0 / 3.0);
            assert!((mult[i] - want).abs() <= 1e-10 * want);
        }
        let cells = match &r.v {
            WeightSpec::Sampled(cw) => cw,
            WeightSpec::Power(_) => panic!("reduced v should be sampled"),
        };
        // the corollary weight is primitive^(-1), integrable at the edge for
        // every p > 1, so no cell mass is infinite
        assert!(cells.masses.iter().all(|m| m.is_finite()));
        for (i, &x) in spec.grid.points().iter().enumerate() {
            let want = (x - x0).powf(-1.0 / 3.0);
            assert!((cells.point_values[i] - want).abs() <= 1e-10 * want);
        }
    }

    #[test]
    fn sampled_masses_match_dense_quadrature() {
        let domain = (1e-4, 1e4);
        let n = 512;
        let grid = grid_on(n, domain);
        for (side, s, p, a1) in
            [(PairKind::Hardy, -2.0, 1.5, 0.3), (PairKind::Copson, -1.0, 2.0, 1.5)]
        {
            let v = PiecewisePowerWeight::new(
                vec![domain.0, 3.0, domain.1],
                vec![Segment { c: 1.3, a: -0.4 }, Segment { c: 0.8, a: a1 }],
            )
            .unwrap();
            let pair = make_reduction_pair(&v, p, side).unwrap();
            let cells = primitive_power_cells(&grid, &pair, s);
            let g = |x: f64| pair.primitive(x).unwrap().powf(s);
            let dense = |l: f64, r: f64| {
                let k = 4096;
                let step = (r / l).powf(1.0 / k as f64);
                let mut acc = 0.0;
                let mut lo = l;
                for _ in 0..k {
                    let hi = lo * step;
                    acc += g((lo * hi).sqrt()) * (hi - lo);
                    lo = hi;
                }
                acc
            };
            for i in (1..n - 1).step_by(37).chain([1, n - 2]) {
                let (l, r) = grid.cell(i);
                let want = dense(l, r);
                let got = cells.masses[i];
                assert!(
                    (got - want).abs() <= 1e-4 * want,
                    "{side:?} cell {i}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn copson_side_edge_mass_diverges_for_large_p() {
        let domain = (1e-2, 1e2);
        let n = 64;
        let grid = grid_on(n, domain);
        let v = PiecewisePowerWeight::power_on(domain, 1.0, 3.0);
        let pair = make_reduction_pair(&v, 2.5, PairKind::Copson).unwrap();
        let cells = primitive_power_cells(&grid, &pair, 1.0 - 2.0 * 2.5);
        assert!(cells.masses[n - 1].is_infinite());
        assert!(cells.masses[..n - 1].iter().all(|m| m.is_finite()));
    }

    #[test]
    fn reduction_guards_reject_mismatched_specs() {
        let domain = (1e-2, 1e2);
        let one = PiecewisePowerWeight::one_on(domain);
        let copson = plain_spec(OperatorKind::Copson, 2.0, 2.0, one.clone(), one.clone(), 64);
        assert!(matches!(
            reduce_spec(&copson, TheoremId::T41),
            Err(VerifyError::HypothesisViolated { .. })
        ));

        // v^(1-p') must be locally integrable at the lower end: at p = 2
        // that needs the first exponent below p - 1 = 1
        let steep = plain_spec(
            OperatorKind::Hardy,
            2.0,
            2.0,
            one.clone(),
            PiecewisePowerWeight::power_on(domain, 1.0, 1.5),
            64,
        );
        assert!(matches!(
            reduce_spec(&steep, TheoremId::T41),
            Err(VerifyError::HypothesisViolated { .. })
        ));

        let finite_q = plain_spec(OperatorKind::Hardy, 2.0, 2.0, one.clone(), one.clone(), 64);
        assert!(matches!(
            reduce_spec(&finite_q, TheoremId::T17),
            Err(VerifyError::HypothesisViolated { .. })
        ));

        let l1 = plain_spec(OperatorKind::Hardy, 1.0, 2.0, one.clone(), one.clone(), 64);
        assert!(matches!(
            reduce_spec(&l1, TheoremId::T41),
            Err(VerifyError::HypothesisViolated { .. })
        ));

        let hardy = plain_spec(OperatorKind::Hardy, 2.0, 2.0, one.clone(), one, 64);
        let reduced = reduce_spec(&hardy, TheoremId::Cor13).unwrap().spec;
        assert!(matches!(
            reduce_spec(&reduced, TheoremId::Cor13),
            Err(VerifyError::HypothesisViolated { .. })
        ));
    }

    #[test]
    fn identity_rewrite_returns_the_spec_unchanged() {
        let spec = classical_hardy(64);
        let red = reduce_spec(&spec, TheoremId::Identity).unwrap();
        assert_eq!(red.theta, 1.0);
        assert_eq!(red.spec, spec);
    }

    #[test]
    fn identity_equivalence_ratio_is_exactly_one() {
        let spec = classical_hardy(64);
        let rep = verify_equivalence(&spec, TheoremId::Identity, 16.0).unwrap();
        assert_eq!(rep.ratio.to_bits(), 1.0f64.to_bits());
        assert!(rep.pass);
    }

    #[test]
    fn equivalence_window_holds_for_the_hardy_example() {
        let spec = classical_hardy(512);
        let rep = verify_equivalence(&spec, TheoremId::T41, 4.0).unwrap();
        assert!(rep.pass, "ratio {}", rep.ratio);
        assert!(rep.ratio >= 0.25 && rep.ratio <= 4.0, "ratio {}", rep.ratio);
    }

    #[test]
    fn spliced_inner_power_composes_with_the_outer_norm() {
        // || (I h)^(1/2) ||_{2,w}^2 must equal || I h ||_{1,w}: the reduced
        // q = q/p substitution and the explicit inner power are the same
        // rewrite read two ways
        let domain = (1e-2, 1e2);
        let w = PiecewisePowerWeight::power_on(domain, 1.0, -2.0);
        let one = PiecewisePowerWeight::one_on(domain);
        let base = plain_spec(OperatorKind::Hardy, 2.0, 2.0, w.clone(), one.clone(), 128);
        let mut rooted = base.clone();
        rooted.inner_pow = 0.5;
        let mut substituted = base;
        substituted.q = 1.0;
        let a = rooted.compile().unwrap();
        let b = substituted.compile().unwrap();
        let h: Vec<f64> =
            (0..128).map(|i| ((i as f64 * 0.37).sin().abs() + 0.1) * (i as f64 + 1.0)).collect();
        let lhs_rooted = a.problem.lhs(&h);
        let lhs_substituted = b.problem.lhs(&h);
        assert!(
            (lhs_rooted * lhs_rooted - lhs_substituted).abs() <= 1e-12 * lhs_substituted,
            "{} vs {}",
            lhs_rooted * lhs_rooted,
            lhs_substituted
        );
    }

    #[test]
    fn theta_bookkeeping_round_trips() {
        for (theorem, index) in [(TheoremId::T41, 0u64), (TheoremId::T16, 1), (TheoremId::Cor14, 2)]
        {
            let spec = sample_instance(theorem, index, 128, (1e-3, 1e3), 5).unwrap();
            let rep = verify_equivalence(&spec, theorem, 16.0).unwrap();
            let again = rep.original_estimate.value / rep.reduced_estimate.value.powf(rep.theta);
            assert!((again - rep.ratio).abs() <= 1e-12 * rep.ratio.abs());
            let back = rep.reduced_estimate.value.powf(rep.theta).powf(1.0 / rep.theta);
            assert!(
                (back - rep.reduced_estimate.value).abs() <= 1e-12 * rep.reduced_estimate.value
            );
        }
    }

    #[test]
    fn characterization_is_tight_in_the_exact_case() {
        let domain = (0.5, 2.0);
        let spec = plain_spec(
            OperatorKind::Copson,
            1.0,
            2.0,
            PiecewisePowerWeight::one_on(domain),
            PiecewisePowerWeight::power_on(domain, 1.0, 2.0),
            512,
        );
        let rep = verify_characterization(&spec).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.upper_factor, 1.05);
        assert_eq!(rep.lower_factor, 1.05);
        let f = rep.functional.value;
        assert!((rep.estimate.value - f).abs() <= 0.05 * f, "est {} F {f}", rep.estimate.value);
    }

    #[test]
    fn characterization_brackets_the_sharp_hardy_constant() {
        let spec = classical_hardy(512);
        let rep = verify_characterization(&spec).unwrap();
        assert!(rep.pass);
        let quotient = rep.estimate.value / rep.functional.value;
        // the classical bound C <= p^(1/p) p'^(1/p') A reads C/F <= 2 at
        // p = 2, with a little slack for the discretization
        assert!((1.0..=2.1).contains(&quotient), "C/F = {quotient}");
    }

    #[test]
    fn characterization_rejects_uncovered_regimes() {
        let domain = (1e-2, 1e2);
        let one = PiecewisePowerWeight::one_on(domain);
        let u = PiecewisePowerWeight::power_on(domain, 1.0, -1.0);
        let uncovered = plain_spec(
            OperatorKind::HardyThenHardy { r: 2.0, u },
            2.0,
            2.0,
            one.clone(),
            one.clone(),
            64,
        );
        assert!(matches!(
            verify_characterization(&uncovered),
            Err(VerifyError::RegimeMismatch { .. })
        ));

        let sup_norm =
            plain_spec(OperatorKind::Hardy, 2.0, f64::INFINITY, one.clone(), one.clone(), 64);
        assert!(matches!(
            verify_characterization(&sup_norm),
            Err(VerifyError::RegimeMismatch { .. })
        ));

        let sub_one = plain_spec(OperatorKind::Hardy, 0.5, 2.0, one.clone(), one, 64);
        assert!(matches!(
            verify_characterization(&sub_one),
            Err(VerifyError::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn characterization_scales_with_doubled_outer_weight() {
        let domain = (1e-2, 1e2);
        let v = PiecewisePowerWeight::one_on(domain);
        let w1 = PiecewisePowerWeight::power_on(domain, 1.0, -2.0);
        let w2 = PiecewisePowerWeight::power_on(domain, 2.0, -2.0);
        let s1 = plain_spec(OperatorKind::Hardy, 2.0, 2.0, w1, v.clone(), 128);
        let s2 = plain_spec(OperatorKind::Hardy, 2.0, 2.0, w2, v, 128);
        let r1 = verify_characterization(&s1).unwrap();
        let r2 = verify_characterization(&s2).unwrap();
        let scale = 2.0f64.sqrt();
        assert!(
            (r2.estimate.value - scale * r1.estimate.value).abs()
                <= 1e-8 * r2.estimate.value
        );
        assert!(
            (r2.functional.value - scale * r1.functional.value).abs()
                <= 1e-8 * r2.functional.value
        );
        assert_eq!(r1.pass, r2.pass);
    }

    #[test]
    fn sampler_output_is_admissible_for_every_id() {
        for theorem in TheoremId::suite() {
            for index in 0..3u64 {
                let spec = sample_instance(theorem, index, 64, (1e-3, 1e3), 11).unwrap();
                assert!(spec.p > 1.0 && spec.p <= 3.0, "{theorem} p {}", spec.p);
                match theorem {
                    TheoremId::T17 | TheoremId::T18 => assert!(spec.q.is_infinite()),
                    _ => assert!(spec.q.is_finite()),
                }
                reduce_spec(&spec, theorem)
                    .unwrap_or_else(|e| panic!("{theorem} #{index} not reducible: {e}"));
            }
        }
    }

    #[test]
    fn equivalence_suite_smoke() {
        for theorem in [TheoremId::T41, TheoremId::T16, TheoremId::Cor14] {
            for index in 0..2u64 {
                let spec = sample_instance(theorem, index, 128, (1e-4, 1e4), 42).unwrap();
                let rep = verify_equivalence(&spec, theorem, 16.0).unwrap();
                assert!(rep.pass, "{theorem} #{index}: ratio {}", rep.ratio);
            }
        }
    }

    #[test]
    fn vacuous_instances_are_reported_degenerate() {
        let domain = (1e-2, 1e2);
        let spec = plain_spec(
            OperatorKind::Hardy,
            2.0,
            2.0,
            PiecewisePowerWeight::power_on(domain, 1.0, -2.0),
            PiecewisePowerWeight::power_on(domain, 1e30, 0.0),
            64,
        );
        assert!(matches!(
            verify_equivalence(&spec, TheoremId::T41, 16.0),
            Err(VerifyError::DegenerateInstance { .. })
        ));
    }

    #[test]
    fn window_must_exceed_one() {
        let spec = classical_hardy(64);
        assert!(matches!(
            verify_equivalence(&spec, TheoremId::T41, 1.0),
            Err(VerifyError::BadExponent { name: "window", .. })
        ));
    }

    #[test]
    fn atom_lower_bound_respects_reduced_infinite_masses() {
        // on a reduced spec with an infinite edge mass the solver must treat
        // functions touching that cell as contributing nothing
        let spec = classical_hardy(128);
        let red = reduce_spec(&spec, TheoremId::T41).unwrap().spec;
        let est = atom_search(&red).unwrap();
        assert!(est.value > 0.0 && est.value.is_finite());
        let cs = red.compile().unwrap();
        let mut h = vec![0.0; 128];
        h[0] = 1.0;
        assert_eq!(cs.ratio(&h), 0.0);
    }

    #[test]
    fn equivalence_reports_are_deterministic() {
        let spec = sample_instance(TheoremId::T48, 3, 128, (1e-3, 1e3), 9).unwrap();
        let opts = SolverOpts::default();
        let a = verify_equivalence_with(&spec, TheoremId::T48, 16.0, &opts).unwrap();
        let b = verify_equivalence_with(&spec, TheoremId::T48, 16.0, &opts).unwrap();
        assert_eq!(a.ratio.to_bits(), b.ratio.to_bits());
        assert_eq!(
            a.original_estimate.value.to_bits(),
            b.original_estimate.value.to_bits()
        );
        assert_eq!(a.reduced_estimate.value.to_bits(), b.reduced_estimate.value.to_bits());
    }
}
