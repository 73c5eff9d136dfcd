//! Log grids, grid functions, weighted quasi-norms, and the Hardy/Copson
//! operator kernels (plain and iterated).
//!
//! Candidate functions h live on a geometric grid over the truncated domain
//! and are read as piecewise constant per cell. Every integral of h against a
//! closed-form weight is then a finite sum of h values times exact cell
//! masses, so the only discretization error left in plain kernels is the
//! piecewise-constant reading of h itself. Iterated kernels sample the inner
//! integral at the grid points before the outer pass, a midpoint-style
//! approximation with second-order error in the cell width.
//!
//! Operators are assembled as short stage pipelines (cumulative sum, power,
//! pointwise multiplier). One forward sweep evaluates T h; one reverse sweep
//! yields the exact gradient of the discrete output norm, which is what the
//! fixed-point solver iterates on.

use std::sync::Arc;

use thiserror::Error;

use crate::weights::{PiecewisePowerWeight, WeightError};

/// Smallest admissible grid.
pub const MIN_GRID: usize = 16;

#[derive(Debug, Error)]
pub enum DiscreteError {
    #[error("grid needs at least {MIN_GRID} points, got {n}")]
    TooSmall { n: usize },
    #[error("domain must satisfy 0 < x0 < xn, got ({x0}, {xn})")]
    BadDomain { x0: f64, xn: f64 },
    #[error("function length {got} does not match grid size {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("grid function values must be non-negative and finite (index {index})")]
    BadValue { index: usize },
    #[error("exponent {name} must be positive, got {value}")]
    BadExponent { name: &'static str, value: f64 },
    #[error("witness is identically zero")]
    ZeroWitness,
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Geometric grid on [x0, xn]: n cell-centered points
/// x_i = x0 rho^{i+1/2} between boundaries b_i = x0 rho^i, so each boundary
/// is the geometric midpoint of its neighbouring points. The outermost
/// boundaries are pinned to x0 and xn exactly; keeping the sample points off
/// the endpoints means lower cumulatives are already positive at the first
/// point and upper cumulatives at the last.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGrid {
    points: Vec<f64>,
    boundaries: Vec<f64>,
}

impl LogGrid {
    pub fn new(n: usize, x0: f64, xn: f64) -> Result<Self, DiscreteError> {
        if n < MIN_GRID {
            return Err(DiscreteError::TooSmall { n });
        }
        if !(x0.is_finite() && xn.is_finite() && 0.0 < x0 && x0 < xn) {
            return Err(DiscreteError::BadDomain { x0, xn });
        }
        let step = (xn / x0).ln() / n as f64;
        let mut boundaries = Vec::with_capacity(n + 1);
        let mut points = Vec::with_capacity(n);
        for i in 0..=n {
            boundaries.push(x0 * (i as f64 * step).exp());
        }
        boundaries[0] = x0;
        boundaries[n] = xn;
        for i in 0..n {
            points.push(x0 * ((i as f64 + 0.5) * step).exp());
        }
        Ok(Self { points, boundaries })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.boundaries[0], *self.boundaries.last().unwrap())
    }

    /// Lower and upper boundary of cell i.
    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    /// Index of the cell containing x (clamped to the edge cells).
    pub fn cell_index(&self, x: f64) -> usize {
        match self.boundaries.partition_point(|b| *b <= x) {
            0 => 0,
            i => (i - 1).min(self.points.len() - 1),
        }
    }
}

/// Non-negative samples per grid point, read as piecewise constant per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<LogGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<LogGrid>, values: Vec<f64>) -> Result<Self, DiscreteError> {
        if values.len() != grid.n() {
            return Err(DiscreteError::LengthMismatch { got: values.len(), want: grid.n() });
        }
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(DiscreteError::BadValue { index });
            }
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<LogGrid>, c: f64) -> Self {
        let n = grid.n();
        Self::new(grid, vec![c; n]).expect("constant grid function")
    }

    /// Indicator of a single cell, height 1.
    pub fn atom(grid: Arc<LogGrid>, i: usize) -> Self {
        let mut values = vec![0.0; grid.n()];
        values[i] = 1.0;
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<LogGrid>, f: impl Fn(f64) -> f64) -> Result<Self, DiscreteError> {
        let values: Vec<f64> = grid.points().iter().map(|x| f(*x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<LogGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// The operator T of the inequality's left side. Plain kinds are the bare
/// inner integral; iterated kinds wrap it in a second weighted integral of
/// its r-th power and take the 1/r-th root at the end, so the q-norm of the
/// output matches the inequality display.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    /// h -> int_{x0}^x h
    Hardy,
    /// h -> int_x^{xn} h
    Copson,
    /// h -> (int_x^{xn} (int_{x0}^t h)^r u dt)^{1/r}
    HardyThenCopson { r: f64, u: PiecewisePowerWeight },
    /// h -> (int_x^{xn} (int_t^{xn} h)^r u dt)^{1/r}
    CopsonThenCopson { r: f64, u: PiecewisePowerWeight },
    /// h -> (int_{x0}^x (int_t^{xn} h)^r u dt)^{1/r}
    CopsonThenHardy { r: f64, u: PiecewisePowerWeight },
    /// h -> (int_{x0}^x (int_{x0}^t h)^r u dt)^{1/r}
    HardyThenHardy { r: f64, u: PiecewisePowerWeight },
}

impl OperatorKind {
    pub fn tag(&self) -> &'static str {
        match self {
            OperatorKind::Hardy => "hardy",
            OperatorKind::Copson => "copson",
            OperatorKind::HardyThenCopson { .. } => "hardy_then_copson",
            OperatorKind::CopsonThenCopson { .. } => "copson_then_copson",
            OperatorKind::CopsonThenHardy { .. } => "copson_then_hardy",
            OperatorKind::HardyThenHardy { .. } => "hardy_then_hardy",
        }
    }

    pub fn inner(&self) -> Option<(f64, &PiecewisePowerWeight)> {
        match self {
            OperatorKind::Hardy | OperatorKind::Copson => None,
            OperatorKind::HardyThenCopson { r, u }
            | OperatorKind::CopsonThenCopson { r, u }
            | OperatorKind::CopsonThenHardy { r, u }
            | OperatorKind::HardyThenHardy { r, u } => Some((*r, u)),
        }
    }
}

/// Point values and exact cell masses of a weight on a grid: masses[i] is
/// the integral over cell i, split at the sample point into lower_partials[i]
/// (boundary to point) and the remainder. Cumulative stages use the partials
/// so that, for example, the Hardy image of h at x_i carries exactly the mass
/// of [x0, x_i] and not of whole cells only.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub point_values: Vec<f64>,
    pub masses: Vec<f64>,
    pub lower_partials: Vec<f64>,
    pub upper_partials: Vec<f64>,
}

impl CellWeights {
    pub fn from_weight(grid: &LogGrid, w: &PiecewisePowerWeight) -> Result<Self, DiscreteError> {
        let n = grid.n();
        let mut point_values = Vec::with_capacity(n);
        let mut masses = Vec::with_capacity(n);
        let mut lower_partials = Vec::with_capacity(n);
        let mut upper_partials = Vec::with_capacity(n);
        for i in 0..n {
            let (l, r) = grid.cell(i);
            let x = grid.points()[i];
            let lo = w.integrate(l, x)?;
            let hi = w.integrate(x, r)?;
            point_values.push(w.eval(x)?);
            masses.push(lo + hi);
            lower_partials.push(lo);
            upper_partials.push(hi);
        }
        Ok(Self { point_values, masses, lower_partials, upper_partials })
    }

    /// Sampled weight: masses by midpoint evaluation on sixteen geometric
    /// sub-panels per half-cell. Used for integrands with no closed-form
    /// antiderivative (roots of primitives, cumulative powers against dt).
    pub fn from_fn(grid: &LogGrid, f: impl Fn(f64) -> f64) -> Self {
        let n = grid.n();
        let panel = |l: f64, r: f64| -> f64 {
            let mut acc = 0.0;
            let step = (r / l).powf(1.0 / 16.0);
            let mut lo = l;
            for _ in 0..16 {
                let hi = lo * step;
                acc += f((lo * hi).sqrt()) * (hi - lo);
                lo = hi;
            }
            acc
        };
        let mut point_values = Vec::with_capacity(n);
        let mut masses = Vec::with_capacity(n);
        let mut lower_partials = Vec::with_capacity(n);
        let mut upper_partials = Vec::with_capacity(n);
        for i in 0..n {
            let (l, r) = grid.cell(i);
            let x = grid.points()[i];
            let lo = panel(l, x);
            let hi = panel(x, r);
            point_values.push(f(x));
            masses.push(lo + hi);
            lower_partials.push(lo);
            upper_partials.push(hi);
        }
        Self { point_values, masses, lower_partials, upper_partials }
    }

    pub fn lebesgue(grid: &LogGrid) -> Self {
        let n = grid.n();
        let mut point_values = Vec::with_capacity(n);
        let mut masses = Vec::with_capacity(n);
        let mut lower_partials = Vec::with_capacity(n);
        let mut upper_partials = Vec::with_capacity(n);
        for i in 0..n {
            let (l, r) = grid.cell(i);
            let x = grid.points()[i];
            point_values.push(1.0);
            masses.push(r - l);
            lower_partials.push(x - l);
            upper_partials.push(r - x);
        }
        Self { point_values, masses, lower_partials, upper_partials }
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// ( sum_i f_i^p mass_i )^{1/p}, or max_i f_i w(x_i) at p = infinity.
pub fn norm_cells(f: &[f64], p: f64, cw: &CellWeights) -> f64 {
    if p.is_infinite() {
        f.iter()
            .zip(&cw.point_values)
            .map(|(fi, wi)| fi * wi)
            .fold(0.0, f64::max)
    } else {
        let s: f64 = f
            .iter()
            .zip(&cw.masses)
            .map(|(fi, mi)| if *fi == 0.0 { 0.0 } else { fi.powf(p) * mi })
            .sum();
        s.powf(1.0 / p)
    }
}

/// Weighted L^p quasi-norm of a grid function, p in (0, infinity].
pub fn weighted_norm(
    f: &GridFunction,
    p: f64,
    w: &PiecewisePowerWeight,
) -> Result<f64, DiscreteError> {
    if !(p > 0.0) {
        return Err(DiscreteError::BadExponent { name: "p", value: p });
    }
    let cw = CellWeights::from_weight(f.grid(), w)?;
    Ok(norm_cells(f.values(), p, &cw))
}

/// One step of an operator pipeline acting on point-value vectors.
#[derive(Debug, Clone)]
pub enum Stage {
    /// y_i = sum_{j<i} x_j masses_j + x_i lower_partials_i
    CumLower { masses: Vec<f64>, partials: Vec<f64> },
    /// y_i = sum_{j>i} x_j masses_j + x_i upper_partials_i
    CumUpper { masses: Vec<f64>, partials: Vec<f64> },
    /// y_i = x_i^s
    Pow(f64),
    /// y_i = m_i x_i
    Mul(Vec<f64>),
}

impl Stage {
    pub fn cum_lower(cw: &CellWeights) -> Self {
        Stage::CumLower { masses: cw.masses.clone(), partials: cw.lower_partials.clone() }
    }

    pub fn cum_upper(cw: &CellWeights) -> Self {
        Stage::CumUpper { masses: cw.masses.clone(), partials: cw.upper_partials.clone() }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        match self {
            Stage::CumLower { masses, partials } => {
                let mut out = Vec::with_capacity(n);
                let mut acc = 0.0;
                for i in 0..n {
                    out.push(acc + x[i] * partials[i]);
                    acc += x[i] * masses[i];
                }
                out
            }
            Stage::CumUpper { masses, partials } => {
                let mut out = vec![0.0; n];
                let mut acc = 0.0;
                for i in (0..n).rev() {
                    out[i] = acc + x[i] * partials[i];
                    acc += x[i] * masses[i];
                }
                out
            }
            Stage::Pow(s) => x.iter().map(|t| t.powf(*s)).collect(),
            Stage::Mul(m) => x.iter().zip(m).map(|(t, mi)| t * mi).collect(),
        }
    }

    /// Pulls a gradient g = dL/dy back to dL/dx; `x` is the stage input seen
    /// in the forward pass.
    fn backward(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let n = x.len();
        match self {
            Stage::CumLower { masses, partials } => {
                // dy_i/dx_j = masses_j for j<i, partials_j at j=i
                let mut out = vec![0.0; n];
                let mut suffix = 0.0;
                for j in (0..n).rev() {
                    out[j] = masses[j] * suffix + partials[j] * g[j];
                    suffix += g[j];
                }
                out
            }
            Stage::CumUpper { masses, partials } => {
                let mut out = vec![0.0; n];
                let mut prefix = 0.0;
                for j in 0..n {
                    out[j] = masses[j] * prefix + partials[j] * g[j];
                    prefix += g[j];
                }
                out
            }
            Stage::Pow(s) => x
                .iter()
                .zip(g)
                .map(|(t, gi)| if *t == 0.0 { 0.0 } else { s * t.powf(s - 1.0) * gi })
                .collect(),
            Stage::Mul(m) => g.iter().zip(m).map(|(gi, mi)| gi * mi).collect(),
        }
    }
}

/// An operator as a stage chain. Covers the six kernel kinds and the extra
/// shapes the equivalence rewrites produce (inner roots, pointwise
/// multipliers) with one forward/gradient code path.
#[derive(Debug, Clone)]
pub struct Pipeline {
    stages: Vec<Stage>,
}

impl Pipeline {
    pub fn new(stages: Vec<Stage>) -> Self {
        Self { stages }
    }

    pub fn into_stages(self) -> Vec<Stage> {
        self.stages
    }

    pub fn for_kind(kind: &OperatorKind, grid: &LogGrid) -> Result<Self, DiscreteError> {
        let leb = CellWeights::lebesgue(grid);
        let stages = match kind {
            OperatorKind::Hardy => vec![Stage::cum_lower(&leb)],
            OperatorKind::Copson => vec![Stage::cum_upper(&leb)],
            OperatorKind::HardyThenCopson { r, u } => {
                let uc = CellWeights::from_weight(grid, u)?;
                vec![
                    Stage::cum_lower(&leb),
                    Stage::Pow(*r),
                    Stage::cum_upper(&uc),
                    Stage::Pow(1.0 / r),
                ]
            }
            OperatorKind::CopsonThenCopson { r, u } => {
                let uc = CellWeights::from_weight(grid, u)?;
                vec![
                    Stage::cum_upper(&leb),
                    Stage::Pow(*r),
                    Stage::cum_upper(&uc),
                    Stage::Pow(1.0 / r),
                ]
            }
            OperatorKind::CopsonThenHardy { r, u } => {
                let uc = CellWeights::from_weight(grid, u)?;
                vec![
                    Stage::cum_upper(&leb),
                    Stage::Pow(*r),
                    Stage::cum_lower(&uc),
                    Stage::Pow(1.0 / r),
                ]
            }
            OperatorKind::HardyThenHardy { r, u } => {
                let uc = CellWeights::from_weight(grid, u)?;
                vec![
                    Stage::cum_lower(&leb),
                    Stage::Pow(*r),
                    Stage::cum_lower(&uc),
                    Stage::Pow(1.0 / r),
                ]
            }
        };
        if let Some((r, _)) = kind.inner() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(DiscreteError::BadExponent { name: "r", value: r });
            }
        }
        Ok(Self { stages })
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let mut cur = h.to_vec();
        for st in &self.stages {
            cur = st.forward(&cur);
        }
        cur
    }

    /// All intermediate vectors, input first, output last.
    fn trace(&self, h: &[f64]) -> Vec<Vec<f64>> {
        let mut tr = Vec::with_capacity(self.stages.len() + 1);
        tr.push(h.to_vec());
        for st in &self.stages {
            let next = st.forward(tr.last().unwrap());
            tr.push(next);
        }
        tr
    }

    /// Output norm N(h) = || apply(h) ||_{q, w-cells} and its gradient in h.
    /// At q = infinity the max is not smooth; the returned vector is the
    /// subgradient concentrated at the argmax.
    pub fn norm_and_grad(&self, h: &[f64], q: f64, w: &CellWeights) -> (f64, Vec<f64>) {
        let tr = self.trace(h);
        let out = tr.last().unwrap();
        let n = out.len();
        let value = norm_cells(out, q, w);
        let mut g = vec![0.0; n];
        if value == 0.0 || !value.is_finite() {
            return (value, g);
        }
        if q.is_infinite() {
            let mut best = 0usize;
            let mut bestv = f64::NEG_INFINITY;
            for i in 0..n {
                let t = out[i] * w.point_values[i];
                if t > bestv {
                    bestv = t;
                    best = i;
                }
            }
            g[best] = w.point_values[best];
        } else {
            let scale = value.powf(1.0 - q);
            for i in 0..n {
                if out[i] > 0.0 {
                    g[i] = scale * out[i].powf(q - 1.0) * w.masses[i];
                }
            }
        }
        for (k, st) in self.stages.iter().enumerate().rev() {
            g = st.backward(&tr[k], &g);
        }
        (value, g)
    }
}

/// T h on the grid.
pub fn apply_operator(kind: &OperatorKind, h: &GridFunction) -> Result<GridFunction, DiscreteError> {
    let pipeline = Pipeline::for_kind(kind, h.grid())?;
    GridFunction::new(h.grid().clone(), pipeline.apply(h.values()))
}

/// ||T h||_{q,w} / ||h||_{p,v} for one candidate h.
pub fn ratio(
    kind: &OperatorKind,
    h: &GridFunction,
    p: f64,
    q: f64,
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
) -> Result<f64, DiscreteError> {
    if h.is_zero() {
        return Err(DiscreteError::ZeroWitness);
    }
    let lhs = weighted_norm(&apply_operator(kind, h)?, q, w)?;
    let rhs = weighted_norm(h, p, v)?;
    Ok(lhs / rhs)
}

/// Precompiled ratio evaluator: pipeline plus cell weights, shared by every
/// candidate the solver tries against one inequality instance.
#[derive(Debug, Clone)]
pub struct RatioProblem {
    pub grid: Arc<LogGrid>,
    pub pipeline: Pipeline,
    pub p: f64,
    pub q: f64,
    pub w_cells: CellWeights,
    pub v_cells: CellWeights,
}

impl RatioProblem {
    pub fn new(
        kind: &OperatorKind,
        grid: Arc<LogGrid>,
        p: f64,
        q: f64,
        w: &PiecewisePowerWeight,
        v: &PiecewisePowerWeight,
    ) -> Result<Self, DiscreteError> {
        if !(p > 0.0) {
            return Err(DiscreteError::BadExponent { name: "p", value: p });
        }
        if !(q > 0.0) {
            return Err(DiscreteError::BadExponent { name: "q", value: q });
        }
        let pipeline = Pipeline::for_kind(kind, &grid)?;
        let w_cells = CellWeights::from_weight(&grid, w)?;
        let v_cells = CellWeights::from_weight(&grid, v)?;
        Ok(Self { grid, pipeline, p, q, w_cells, v_cells })
    }

    pub fn from_parts(
        grid: Arc<LogGrid>,
        pipeline: Pipeline,
        p: f64,
        q: f64,
        w_cells: CellWeights,
        v_cells: CellWeights,
    ) -> Self {
        Self { grid, pipeline, p, q, w_cells, v_cells }
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn lhs(&self, h: &[f64]) -> f64 {
        norm_cells(&self.pipeline.apply(h), self.q, &self.w_cells)
    }

    pub fn rhs(&self, h: &[f64]) -> f64 {
        norm_cells(h, self.p, &self.v_cells)
    }

    pub fn ratio(&self, h: &[f64]) -> f64 {
        let denom = self.rhs(h);
        if denom == 0.0 {
            return 0.0;
        }
        self.lhs(h) / denom
    }
}
