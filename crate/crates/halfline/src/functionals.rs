//! Closed-form characterization constants for the plain and iterated
//! inequalities: two-weight sup conditions where the exponents are ordered
//! favourably, integral conditions otherwise.
//!
//! All families share one exponent algebra. With
//!
//!   A_q = q/(p-q),  S_q = pq/(p-q)   (used when q < p)
//!   A_r = r/(p-r),  S_r = pr/(p-r)   (used when r < p)
//!
//! the L^p and L^1 versions of every formula coincide: at p = 1 both A and S
//! collapse to the conjugate q/(1-q), and the v-dependent factor degrades
//! from (int v^{1-p'})^{1/p'} to the one-sided essential sup of 1/v. The
//! engines below are therefore written once against an abstract v-factor and
//! shared by all eight public operations.
//!
//! Numerics: every single integral of a closed-form weight is exact; outer
//! integrals run midpoint panels in log scale (16 per grid cell) with the
//! weight mass exact per panel and only the smooth cofactor sampled; sups
//! scan panel nodes plus every breakpoint and envelope switch point, then
//! polish the best bracket by golden section.

use thiserror::Error;

use crate::transforms::conjugate;
use crate::weights::{
    lower_cumulative, upper_cumulative, CumulativeFn, PiecewisePowerWeight, WeightError,
};

/// Grid cells used when no explicit resolution is given.
pub const DEFAULT_FUNCTIONAL_GRID: usize = 512;

const PANELS_PER_CELL: usize = 16;
const GOLDEN_ITERS: usize = 60;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("hypothesis fails: {condition}")]
    ConditionViolated { condition: String },
    #[error("exponent {name} out of range, got {value}")]
    BadExponent { name: &'static str, value: f64 },
    #[error("grid must have at least 16 cells, got {0}")]
    BadGrid(usize),
    #[error("weights must share a domain")]
    DomainMismatch,
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Value of one characterization constant: the case used, the named parts,
/// and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalValue {
    pub value: f64,
    pub regime: String,
    pub parts: Vec<(String, f64)>,
    pub finite: bool,
}

impl FunctionalValue {
    fn from_parts(regime: &str, parts: Vec<(String, f64)>) -> Self {
        let value = parts.iter().map(|(_, v)| *v).sum();
        FunctionalValue { value, regime: regime.to_string(), parts, finite: value.is_finite() }
    }

    pub fn part(&self, name: &str) -> Option<f64> {
        self.parts.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Which side the one-sided constructions are taken from. Hardy-side
/// formulas accumulate v-information from the origin and u-information from
/// infinity; Copson-side formulas mirror this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Hardy,
    Copson,
}

/// The v-dependent factor of a characterization formula.
#[derive(Debug, Clone)]
pub enum VFactor {
    /// (int v^{1-p'})^{1/p'}, integral taken from the side's direction; p > 1.
    Lp { v: PiecewisePowerWeight, p: f64 },
    /// esssup of 1/v over the side's interval.
    L1 { v: PiecewisePowerWeight },
    /// x -> cum(x)^s for a monotone running integral; covers right-hand
    /// weights that are powers of primitives.
    CumPower { cum: CumulativeFn, s: f64 },
}

/// One-sided running essential sup of 1/v for piecewise-power v, exact.
/// On each stretch the value is max(k, c x^e); switch points where the live
/// power overtakes the constant are recorded as candidate nodes.
#[derive(Debug, Clone)]
pub struct Envelope {
    bounds: Vec<f64>,
    consts: Vec<f64>,
    live_c: Vec<f64>,
    live_e: Vec<f64>,
    nodes: Vec<f64>,
}

impl Envelope {
    pub fn eval(&self, x: f64) -> f64 {
        let i = match self.bounds.partition_point(|b| *b <= x) {
            0 => 0,
            i => (i - 1).min(self.consts.len() - 1),
        };
        let live = if self.live_c[i] > 0.0 { self.live_c[i] * x.powf(self.live_e[i]) } else { 0.0 };
        self.consts[i].max(live)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// esssup over (x0, x] of 1/v.
pub fn inv_envelope_below(v: &PiecewisePowerWeight) -> Envelope {
    let mut bounds = vec![v.breakpoints()[0]];
    let mut consts = Vec::new();
    let mut live_c = Vec::new();
    let mut live_e = Vec::new();
    let mut nodes = v.breakpoints().to_vec();
    let mut running = 0.0f64;
    for (i, seg) in v.segments().iter().enumerate() {
        let (l, r) = (v.breakpoints()[i], v.breakpoints()[i + 1]);
        let inv_l = l.powf(-seg.a) / seg.c;
        let inv_r = r.powf(-seg.a) / seg.c;
        if seg.a >= 0.0 {
            // 1/v non-increasing here: sup over (l, x] is frozen at l
            running = running.max(inv_l);
            consts.push(running);
            live_c.push(0.0);
            live_e.push(0.0);
        } else {
            // 1/v increasing: the live power takes over once it beats the
            // running constant
            consts.push(running);
            live_c.push(1.0 / seg.c);
            live_e.push(-seg.a);
            if inv_l < running && running < inv_r {
                nodes.push((running * seg.c).powf(-1.0 / seg.a));
            }
            running = running.max(inv_r);
        }
        bounds.push(r);
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Envelope { bounds, consts, live_c, live_e, nodes }
}

/// esssup over [x, xn) of 1/v.
pub fn inv_envelope_above(v: &PiecewisePowerWeight) -> Envelope {
    let nseg = v.segments().len();
    let mut consts = vec![0.0; nseg];
    let mut live_c = vec![0.0; nseg];
    let mut live_e = vec![0.0; nseg];
    let mut nodes = v.breakpoints().to_vec();
    let mut running = 0.0f64;
    for (i, seg) in v.segments().iter().enumerate().rev() {
        let (l, r) = (v.breakpoints()[i], v.breakpoints()[i + 1]);
        let inv_l = l.powf(-seg.a) / seg.c;
        let inv_r = r.powf(-seg.a) / seg.c;
        if seg.a <= 0.0 {
            // 1/v non-decreasing here: sup over [x, r) is frozen at r
            running = running.max(inv_r);
            consts[i] = running;
        } else {
            // 1/v decreasing: live at x until the tail constant wins
            consts[i] = running;
            live_c[i] = 1.0 / seg.c;
            live_e[i] = -seg.a;
            if inv_r < running && running < inv_l {
                nodes.push((running * seg.c).powf(-1.0 / seg.a));
            }
            running = running.max(inv_l);
        }
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Envelope { bounds: v.breakpoints().to_vec(), consts, live_c, live_e, nodes }
}

/// Compiled v-factor: exact pointwise evaluation plus candidate nodes.
enum PTab {
    Cum { cum: CumulativeFn, e: f64 },
    Env(Envelope),
}

impl PTab {
    fn eval(&self, x: f64) -> f64 {
        match self {
            PTab::Cum { cum, e } => cum.eval(x).unwrap().powf(*e),
            PTab::Env(env) => env.eval(x),
        }
    }

    fn nodes(&self) -> Vec<f64> {
        match self {
            PTab::Cum { cum, .. } => cum.weight().breakpoints().to_vec(),
            PTab::Env(env) => env.nodes().to_vec(),
        }
    }
}

fn compile_vfactor(vf: &VFactor, side: Side) -> Result<PTab, FunctionalError> {
    match vf {
        VFactor::Lp { v, p } => {
            if !(*p > 1.0 && p.is_finite()) {
                return Err(FunctionalError::BadExponent { name: "p", value: *p });
            }
            let pc = conjugate(*p);
            let vp = v.pow(1.0 - pc);
            let cum = match side {
                Side::Hardy => lower_cumulative(&vp),
                Side::Copson => upper_cumulative(&vp),
            };
            if cum.diverges {
                let condition = match side {
                    Side::Hardy => "v^(1-p') is not integrable near 0",
                    Side::Copson => "v^(1-p') is not integrable near infinity",
                };
                return Err(FunctionalError::ConditionViolated {
                    condition: condition.to_string(),
                });
            }
            Ok(PTab::Cum { cum, e: 1.0 / pc })
        }
        VFactor::L1 { v } => Ok(PTab::Env(match side {
            Side::Hardy => inv_envelope_below(v),
            Side::Copson => inv_envelope_above(v),
        })),
        VFactor::CumPower { cum, s } => Ok(PTab::Cum { cum: cum.clone(), e: *s }),
    }
}

/// Geometric panel mesh: n cells split 16 ways each, endpoints pinned.
struct Panels {
    nodes: Vec<f64>,
    mids: Vec<f64>,
}

fn make_panels(domain: (f64, f64), n: usize) -> Panels {
    let count = n * PANELS_PER_CELL;
    let (x0, xn) = domain;
    let step = (xn / x0).ln() / count as f64;
    let mut nodes = Vec::with_capacity(count + 1);
    let mut mids = Vec::with_capacity(count);
    for k in 0..=count {
        nodes.push(x0 * (k as f64 * step).exp());
    }
    nodes[0] = x0;
    nodes[count] = xn;
    for k in 0..count {
        mids.push(x0 * ((k as f64 + 0.5) * step).exp());
    }
    Panels { nodes, mids }
}

impl Panels {
    fn count(&self) -> usize {
        self.mids.len()
    }

    /// Index of the panel containing x.
    fn locate(&self, x: f64) -> usize {
        match self.nodes.partition_point(|b| *b <= x) {
            0 => 0,
            i => (i - 1).min(self.mids.len() - 1),
        }
    }

    fn exact_masses(&self, w: &PiecewisePowerWeight) -> Result<Vec<f64>, WeightError> {
        let mut out = Vec::with_capacity(self.count());
        for k in 0..self.count() {
            out.push(w.integrate(self.nodes[k], self.nodes[k + 1])?);
        }
        Ok(out)
    }
}

/// Max of g over the candidate set (panel nodes plus extras), polished by
/// golden section around the best candidate. Always returns the max of every
/// point actually evaluated, so refinement can only improve the answer.
fn sup_refined(panels: &Panels, extras: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = (panels.nodes[0], *panels.nodes.last().unwrap());
    let mut best = f64::NEG_INFINITY;
    let mut best_x = lo;
    let consider = |x: f64, best: &mut f64, best_x: &mut f64| {
        let val = g(x);
        if val > *best {
            *best = val;
            *best_x = x;
        }
    };
    for x in &panels.nodes {
        consider(*x, &mut best, &mut best_x);
    }
    for x in extras {
        if *x >= lo && *x <= hi {
            consider(*x, &mut best, &mut best_x);
        }
    }
    // bracket one panel either side of the best point, search in log x
    let k = panels.locate(best_x);
    let mut a = panels.nodes[k.saturating_sub(1)].ln();
    let mut b = panels.nodes[(k + 2).min(panels.count())].ln();
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = g(x1.exp());
    let mut f2 = g(x2.exp());
    best = best.max(f1).max(f2);
    for _ in 0..GOLDEN_ITERS {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = g(x2.exp());
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = g(x1.exp());
        }
        best = best.max(f1).max(f2);
    }
    best
}

fn geo_mid(a: f64, b: f64) -> f64 {
    (a * b).sqrt()
}

fn check_exponent(name: &'static str, value: f64) -> Result<(), FunctionalError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(FunctionalError::BadExponent { name, value })
    }
}

fn check_common_domain(weights: &[&PiecewisePowerWeight]) -> Result<(f64, f64), FunctionalError> {
    let d0 = weights[0].domain();
    for w in &weights[1..] {
        let d = w.domain();
        if (d.0 - d0.0).abs() > 1e-9 * d0.0 || (d.1 - d0.1).abs() > 1e-9 * d0.1 {
            return Err(FunctionalError::DomainMismatch);
        }
    }
    Ok(d0)
}

fn l1_marker(p: f64) -> &'static str {
    if p == 1.0 { "^1" } else { "" }
}

/// Best-constant condition for the plain inequality on one side: the sup
/// form when p <= q, the integral form when q < p. p = 1 gives the two
/// one-weight forms (where the sup case is an exact equality).
pub fn plain_value(
    side: Side,
    w: &PiecewisePowerWeight,
    vf: &VFactor,
    p: f64,
    q: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    if n < 16 {
        return Err(FunctionalError::BadGrid(n));
    }
    let domain = w.domain();
    let p_tab = compile_vfactor(vf, side)?;
    let big = match side {
        Side::Hardy => upper_cumulative(w),
        Side::Copson => lower_cumulative(w),
    };
    let panels = make_panels(domain, n);
    let regime_name = |case: &str| -> String {
        match (side, p == 1.0) {
            (Side::Hardy, true) => format!("Thm4.3({})", if case == "a" { "i" } else { "ii" }),
            (Side::Copson, true) => format!("Thm4.4({})", if case == "a" { "i" } else { "ii" }),
            (Side::Hardy, false) => format!("Thm4.5({case})"),
            (Side::Copson, false) => format!("Thm4.6({case})"),
        }
    };
    if p <= q {
        let g = |x: f64| big.eval(x).unwrap().powf(1.0 / q) * p_tab.eval(x);
        let mut extras = p_tab.nodes();
        extras.extend_from_slice(w.breakpoints());
        let value = sup_refined(&panels, &extras, g);
        Ok(FunctionalValue::from_parts(&regime_name("a"), vec![("sup".to_string(), value)]))
    } else {
        let a_q = q / (p - q);
        let s_q = p * q / (p - q);
        let wmass = panels.exact_masses(w)?;
        let mut acc = 0.0;
        for k in 0..panels.count() {
            let m = panels.mids[k];
            acc += wmass[k] * big.eval(m).unwrap().powf(a_q) * p_tab.eval(m).powf(s_q);
        }
        let value = acc.powf(1.0 / s_q);
        Ok(FunctionalValue::from_parts(&regime_name("b"), vec![("int".to_string(), value)]))
    }
}

/// Case split shared by both iterated families.
fn family_case(p: f64, q: f64, r: f64) -> &'static str {
    if p <= q.min(r) {
        "a"
    } else if q < p && p <= r {
        "b"
    } else if r < p && p <= q {
        "c"
    } else {
        "d"
    }
}

/// Characterization constant of the inequality whose operator integrates h
/// from the origin, raises to r, and integrates against u from above
/// (outer norm exponent q, weight w). p = 1 selects the one-weight family.
pub fn f_family_value(
    u: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    vf: &VFactor,
    p: f64,
    q: f64,
    r: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    check_exponent("r", r)?;
    if n < 16 {
        return Err(FunctionalError::BadGrid(n));
    }
    let domain = w.domain();
    let p_tab = compile_vfactor(vf, Side::Hardy)?;
    let w_lo = lower_cumulative(w);
    let u_up = upper_cumulative(u);
    let panels = make_panels(domain, n);
    let np = panels.count();
    let wmass = panels.exact_masses(w)?;
    let umass = panels.exact_masses(u)?;
    let mark = l1_marker(p);
    let case = family_case(p, q, r);
    let regime = if p == 1.0 { format!("Thm4.7({case})") } else { format!("Thm4.8'({case})") };
    let mut extras = p_tab.nodes();
    extras.extend_from_slice(w.breakpoints());
    extras.extend_from_slice(u.breakpoints());

    // suffix table of Y(x) = int_x^xn (int_t^xn u)^{q/r} w(t) dt at nodes
    let qr = q / r;
    let mut y_suffix = vec![0.0; np + 1];
    for k in (0..np).rev() {
        y_suffix[k] =
            y_suffix[k + 1] + wmass[k] * u_up.eval(panels.mids[k]).unwrap().powf(qr);
    }
    let y_at = |x: f64| -> f64 {
        let k = panels.locate(x);
        let hi = panels.nodes[k + 1];
        let partial = if hi > x {
            w.integrate(x, hi).unwrap() * u_up.eval(geo_mid(x, hi)).unwrap().powf(qr)
        } else {
            0.0
        };
        partial + y_suffix[k + 1]
    };

    let f_sup_1 = || -> f64 {
        sup_refined(&panels, &extras, |x| {
            w_lo.eval(x).unwrap().powf(1.0 / q) * u_up.eval(x).unwrap().powf(1.0 / r) * p_tab.eval(x)
        })
    };
    let f_sup_2 = || -> f64 {
        sup_refined(&panels, &extras, |x| y_at(x).powf(1.0 / q) * p_tab.eval(x))
    };

    let parts = match case {
        "a" => vec![
            (format!("F1{mark}"), f_sup_1()),
            (format!("F2{mark}"), f_sup_2()),
        ],
        "b" => {
            let a_q = q / (p - q);
            let s_q = p * q / (p - q);
            // M(x) = sup over t >= x of (int_t u)^{1/r} P(t), as a suffix max
            // over interleaved nodes and mids
            let g3 = |t: f64| u_up.eval(t).unwrap().powf(1.0 / r) * p_tab.eval(t);
            let mut m_at_mid = vec![0.0; np];
            let mut run = g3(panels.nodes[np]);
            for k in (0..np).rev() {
                run = run.max(g3(panels.nodes[k + 1]));
                run = run.max(g3(panels.mids[k]));
                m_at_mid[k] = run;
            }
            let mut acc3 = 0.0;
            let mut acc4 = 0.0;
            for k in 0..np {
                let m = panels.mids[k];
                acc3 += wmass[k] * w_lo.eval(m).unwrap().powf(a_q) * m_at_mid[k].powf(s_q);
                acc4 += wmass[k]
                    * y_at(m).powf(a_q)
                    * u_up.eval(m).unwrap().powf(qr)
                    * p_tab.eval(m).powf(s_q);
            }
            vec![
                (format!("F3{mark}"), acc3.powf(1.0 / s_q)),
                (format!("F4{mark}"), acc4.powf(1.0 / s_q)),
            ]
        }
        "c" => {
            let a_r = r / (p - r);
            let s_r = p * r / (p - r);
            // suffix table of J(t) = int_t^xn (int_x u)^{A_r} u(x) P(x)^{S_r} dx
            let mut j_suffix = vec![0.0; np + 1];
            for k in (0..np).rev() {
                let m = panels.mids[k];
                j_suffix[k] = j_suffix[k + 1]
                    + umass[k] * u_up.eval(m).unwrap().powf(a_r) * p_tab.eval(m).powf(s_r);
            }
            let j_at = |t: f64| -> f64 {
                let k = panels.locate(t);
                let hi = panels.nodes[k + 1];
                let partial = if hi > t {
                    let g = geo_mid(t, hi);
                    u.integrate(t, hi).unwrap()
                        * u_up.eval(g).unwrap().powf(a_r)
                        * p_tab.eval(g).powf(s_r)
                } else {
                    0.0
                };
                partial + j_suffix[k + 1]
            };
            let f5 = sup_refined(&panels, &extras, |t| {
                w_lo.eval(t).unwrap().powf(1.0 / q) * j_at(t).powf(1.0 / s_r)
            });
            vec![(format!("F2{mark}"), f_sup_2()), (format!("F5{mark}"), f5)]
        }
        _ => {
            let a_q = q / (p - q);
            let s_q = p * q / (p - q);
            let a_r = r / (p - r);
            let s_r = p * r / (p - r);
            let mut j_suffix = vec![0.0; np + 1];
            for k in (0..np).rev() {
                let m = panels.mids[k];
                j_suffix[k] = j_suffix[k + 1]
                    + umass[k] * u_up.eval(m).unwrap().powf(a_r) * p_tab.eval(m).powf(s_r);
            }
            let j_mid = |k: usize| -> f64 {
                let m = panels.mids[k];
                let hi = panels.nodes[k + 1];
                let g = geo_mid(m, hi);
                u.integrate(m, hi).unwrap()
                    * u_up.eval(g).unwrap().powf(a_r)
                    * p_tab.eval(g).powf(s_r)
                    + j_suffix[k + 1]
            };
            let mut acc4 = 0.0;
            let mut acc6 = 0.0;
            for k in 0..np {
                let m = panels.mids[k];
                acc4 += wmass[k]
                    * y_at(m).powf(a_q)
                    * u_up.eval(m).unwrap().powf(qr)
                    * p_tab.eval(m).powf(s_q);
                acc6 += wmass[k] * w_lo.eval(m).unwrap().powf(a_q) * j_mid(k).powf(s_q / s_r);
            }
            vec![
                (format!("F4{mark}"), acc4.powf(1.0 / s_q)),
                (format!("F6{mark}"), acc6.powf(1.0 / s_q)),
            ]
        }
    };
    Ok(FunctionalValue::from_parts(&regime, parts))
}

/// Characterization constant of the inequality whose operator integrates h
/// from above, raises to r, integrates against u from above again, under an
/// outer q-norm in w. p = 1 selects the one-weight family.
pub fn e_family_value(
    u: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    vf: &VFactor,
    p: f64,
    q: f64,
    r: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    check_exponent("r", r)?;
    if n < 16 {
        return Err(FunctionalError::BadGrid(n));
    }
    let domain = w.domain();
    let p_tab = compile_vfactor(vf, Side::Copson)?;
    let w_lo = lower_cumulative(w);
    let u_lo = lower_cumulative(u);
    let panels = make_panels(domain, n);
    let np = panels.count();
    let wmass = panels.exact_masses(w)?;
    let umass = panels.exact_masses(u)?;
    let mark = l1_marker(p);
    let case = family_case(p, q, r);
    let regime = if p == 1.0 { format!("Thm4.10({case})") } else { format!("Thm4.10'({case})") };
    let qr = q / r;

    // precomputed panel data for the inner scans
    let u_at_mid: Vec<f64> = panels.mids.iter().map(|m| u_lo.eval(*m).unwrap()).collect();
    let p_at_mid: Vec<f64> = panels.mids.iter().map(|m| p_tab.eval(*m)).collect();
    let w_half_lo: Vec<f64> = (0..np)
        .map(|k| w.integrate(panels.nodes[k], panels.mids[k]).unwrap())
        .collect();
    let u_half_glo: Vec<f64> = (0..np)
        .map(|k| u_lo.eval(geo_mid(panels.nodes[k], panels.mids[k])).unwrap())
        .collect();

    // Z(t) = int_{x0}^t w(s) (int_s^t u)^{q/r} ds; O(panels left of t)
    let z_at = |t: f64| -> f64 {
        let ut = u_lo.eval(t).unwrap();
        let k = panels.locate(t);
        let mut acc = 0.0;
        for j in 0..k {
            acc += wmass[j] * (ut - u_at_mid[j]).max(0.0).powf(qr);
        }
        let lo = panels.nodes[k];
        if t > lo {
            acc += w.integrate(lo, t).unwrap()
                * (ut - u_lo.eval(geo_mid(lo, t)).unwrap()).max(0.0).powf(qr);
        }
        acc
    };
    // same thing with the partial half-panel tables when t is a mid
    let z_at_mid = |k: usize| -> f64 {
        let ut = u_at_mid[k];
        let mut acc = 0.0;
        for j in 0..k {
            acc += wmass[j] * (ut - u_at_mid[j]).max(0.0).powf(qr);
        }
        acc + w_half_lo[k] * (ut - u_half_glo[k]).max(0.0).powf(qr)
    };
    // I(t) = int_t^xn (int_t^x u)^{A_r} u(x) P(x)^{S_r} dx
    let i_at = |t: f64, a_r: f64, s_r: f64| -> f64 {
        let ut = u_lo.eval(t).unwrap();
        let k = panels.locate(t);
        let mut acc = 0.0;
        let hi = panels.nodes[k + 1];
        if hi > t {
            let g = geo_mid(t, hi);
            acc += u.integrate(t, hi).unwrap()
                * (u_lo.eval(g).unwrap() - ut).max(0.0).powf(a_r)
                * p_tab.eval(g).powf(s_r);
        }
        for j in (k + 1)..np {
            acc += umass[j] * (u_at_mid[j] - ut).max(0.0).powf(a_r) * p_at_mid[j].powf(s_r);
        }
        acc
    };

    // coarse sup candidates: cell-level nodes plus breakpoints and envelope
    // switch points (inner evaluations cost a panel scan each)
    let coarse: Vec<f64> = {
        let (lo, hi) = domain;
        let mut c: Vec<f64> = panels.nodes.iter().step_by(PANELS_PER_CELL).copied().collect();
        c.push(*panels.nodes.last().unwrap());
        c.extend(p_tab.nodes());
        c.extend_from_slice(w.breakpoints());
        c.extend_from_slice(u.breakpoints());
        c.retain(|x| *x >= lo && *x <= hi);
        c
    };
    let sup_coarse = |g: &dyn Fn(f64) -> f64| -> f64 {
        // coarse scan, then the same golden polish as sup_refined but with a
        // cell-wide bracket
        let mut best = f64::NEG_INFINITY;
        let mut best_x = panels.nodes[0];
        for x in &coarse {
            let val = g(*x);
            if val > best {
                best = val;
                best_x = *x;
            }
        }
        let k = panels.locate(best_x);
        let lo = panels.nodes[k.saturating_sub(PANELS_PER_CELL)];
        let hi = panels.nodes[(k + 1 + PANELS_PER_CELL).min(np)];
        let (mut a, mut b) = (lo.ln(), hi.ln());
        let phi = 0.5 * (5.0f64.sqrt() - 1.0);
        let mut x1 = b - phi * (b - a);
        let mut x2 = a + phi * (b - a);
        let mut f1 = g(x1.exp());
        let mut f2 = g(x2.exp());
        best = best.max(f1).max(f2);
        for _ in 0..GOLDEN_ITERS {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = g(x2.exp());
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = g(x1.exp());
            }
            best = best.max(f1).max(f2);
        }
        best
    };

    // inner sup over x > t of (U(x) - U(t))^{eu} P(x)^{ep}, scanned over
    // panel mids right of t with a ceiling prune; the argmax only moves
    // right as t grows, so the scan start is carried along
    struct InnerSup {
        ceil_suffix: Vec<f64>,
        vals: Vec<f64>, // P(mid)^{ep}
        eu: f64,
    }
    let make_inner = |eu: f64, ep: f64| -> InnerSup {
        let vals: Vec<f64> = p_at_mid.iter().map(|p| p.powf(ep)).collect();
        let mut ceil_suffix = vec![0.0f64; np + 1];
        for j in (0..np).rev() {
            let ceiling = u_at_mid[j].powf(eu) * vals[j];
            ceil_suffix[j] = ceil_suffix[j + 1].max(ceiling);
        }
        InnerSup { ceil_suffix, vals, eu }
    };
    let inner_sup = |is: &InnerSup, ut: f64, start: &mut usize| -> f64 {
        let mut best = 0.0f64;
        let mut j = *start;
        let mut best_j = *start;
        while j < np {
            if is.ceil_suffix[j] <= best {
                break;
            }
            let cand = (u_at_mid[j] - ut).max(0.0).powf(is.eu) * is.vals[j];
            if cand > best {
                best = cand;
                best_j = j;
            }
            j += 1;
        }
        *start = best_j;
        best
    };

    let parts = match case {
        "a" => {
            let e1 = sup_coarse(&|t: f64| z_at(t).powf(1.0 / q) * p_tab.eval(t));
            vec![(format!("E1{mark}"), e1)]
        }
        "b" => {
            let a_q = q / (p - q);
            let s_q = p * q / (p - q);
            let is2 = make_inner(1.0 / r, 1.0);
            let is3 = make_inner(qr, s_q);
            let mut start2 = 0usize;
            let mut start3 = 0usize;
            let mut acc2 = 0.0;
            let mut acc3 = 0.0;
            for k in 0..np {
                let ut = u_at_mid[k];
                if start2 < k {
                    start2 = k;
                }
                if start3 < k {
                    start3 = k;
                }
                let s2 = inner_sup(&is2, ut, &mut start2);
                let s3 = inner_sup(&is3, ut, &mut start3);
                let m = panels.mids[k];
                acc2 += wmass[k] * w_lo.eval(m).unwrap().powf(a_q) * s2.powf(s_q);
                acc3 += wmass[k] * z_at_mid(k).powf(a_q) * s3;
            }
            vec![
                (format!("E2{mark}"), acc2.powf(1.0 / s_q)),
                (format!("E3{mark}"), acc3.powf(1.0 / s_q)),
            ]
        }
        "c" => {
            let a_r = r / (p - r);
            let s_r = p * r / (p - r);
            let e1 = sup_coarse(&|t: f64| z_at(t).powf(1.0 / q) * p_tab.eval(t));
            let e4 = sup_coarse(&|t: f64| {
                w_lo.eval(t).unwrap().powf(1.0 / q) * i_at(t, a_r, s_r).powf(1.0 / s_r)
            });
            vec![(format!("E1{mark}"), e1), (format!("E4{mark}"), e4)]
        }
        _ => {
            let a_q = q / (p - q);
            let s_q = p * q / (p - q);
            let a_r = r / (p - r);
            let s_r = p * r / (p - r);
            let is3 = make_inner(qr, s_q);
            let mut start3 = 0usize;
            let mut acc3 = 0.0;
            let mut acc5 = 0.0;
            for k in 0..np {
                let ut = u_at_mid[k];
                if start3 < k {
                    start3 = k;
                }
                let s3 = inner_sup(&is3, ut, &mut start3);
                let m = panels.mids[k];
                acc3 += wmass[k] * z_at_mid(k).powf(a_q) * s3;
                acc5 += wmass[k]
                    * w_lo.eval(m).unwrap().powf(a_q)
                    * i_at(m, a_r, s_r).powf(s_q / s_r);
            }
            vec![
                (format!("E3{mark}"), acc3.powf(1.0 / s_q)),
                (format!("E5{mark}"), acc5.powf(1.0 / s_q)),
            ]
        }
    };
    Ok(FunctionalValue::from_parts(&regime, parts))
}

pub fn bradley_l1_hardy_n(
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    q: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_common_domain(&[w, v])?;
    plain_value(Side::Hardy, w, &VFactor::L1 { v: v.clone() }, 1.0, q, n)
}

pub fn bradley_l1_hardy(
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    q: f64,
) -> Result<FunctionalValue, FunctionalError> {
    bradley_l1_hardy_n(w, v, q, DEFAULT_FUNCTIONAL_GRID)
}

pub fn bradley_l1_copson_n(
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    q: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_common_domain(&[w, v])?;
    plain_value(Side::Copson, w, &VFactor::L1 { v: v.clone() }, 1.0, q, n)
}

pub fn bradley_l1_copson(
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    q: f64,
) -> Result<FunctionalValue, FunctionalError> {
    bradley_l1_copson_n(w, v, q, DEFAULT_FUNCTIONAL_GRID)
}

pub fn hardy_constant_n(
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    p: f64,
    q: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_common_domain(&[w, v])?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(FunctionalError::BadExponent { name: "p", value: p });
    }
    plain_value(Side::Hardy, w, &VFactor::Lp { v: v.clone(), p }, p, q, n)
}

pub fn hardy_constant(
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    p: f64,
    q: f64,
) -> Result<FunctionalValue, FunctionalError> {
    hardy_constant_n(w, v, p, q, DEFAULT_FUNCTIONAL_GRID)
}

pub fn copson_constant_n(
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    p: f64,
    q: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_common_domain(&[w, v])?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(FunctionalError::BadExponent { name: "p", value: p });
    }
    plain_value(Side::Copson, w, &VFactor::Lp { v: v.clone(), p }, p, q, n)
}

pub fn copson_constant(
    w: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    p: f64,
    q: f64,
) -> Result<FunctionalValue, FunctionalError> {
    copson_constant_n(w, v, p, q, DEFAULT_FUNCTIONAL_GRID)
}

pub fn iterated_hardy_copson_l1_n(
    u: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    q: f64,
    r: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_common_domain(&[u, v, w])?;
    f_family_value(u, w, &VFactor::L1 { v: v.clone() }, 1.0, q, r, n)
}

pub fn iterated_hardy_copson_l1(
    u: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    q: f64,
    r: f64,
) -> Result<FunctionalValue, FunctionalError> {
    iterated_hardy_copson_l1_n(u, v, w, q, r, DEFAULT_FUNCTIONAL_GRID)
}

pub fn iterated_hardy_copson_n(
    u: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    p: f64,
    q: f64,
    r: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_common_domain(&[u, v, w])?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(FunctionalError::BadExponent { name: "p", value: p });
    }
    f_family_value(u, w, &VFactor::Lp { v: v.clone(), p }, p, q, r, n)
}

pub fn iterated_hardy_copson(
    u: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    p: f64,
    q: f64,
    r: f64,
) -> Result<FunctionalValue, FunctionalError> {
    iterated_hardy_copson_n(u, v, w, p, q, r, DEFAULT_FUNCTIONAL_GRID)
}

pub fn iterated_copson_copson_l1_n(
    u: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    q: f64,
    r: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_common_domain(&[u, v, w])?;
    e_family_value(u, w, &VFactor::L1 { v: v.clone() }, 1.0, q, r, n)
}

pub fn iterated_copson_copson_l1(
    u: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    q: f64,
    r: f64,
) -> Result<FunctionalValue, FunctionalError> {
    iterated_copson_copson_l1_n(u, v, w, q, r, DEFAULT_FUNCTIONAL_GRID)
}

pub fn iterated_copson_copson_n(
    u: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    p: f64,
    q: f64,
    r: f64,
    n: usize,
) -> Result<FunctionalValue, FunctionalError> {
    check_common_domain(&[u, v, w])?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(FunctionalError::BadExponent { name: "p", value: p });
    }
    e_family_value(u, w, &VFactor::Lp { v: v.clone(), p }, p, q, r, n)
}

pub fn iterated_copson_copson(
    u: &PiecewisePowerWeight,
    v: &PiecewisePowerWeight,
    w: &PiecewisePowerWeight,
    p: f64,
    q: f64,
    r: f64,
) -> Result<FunctionalValue, FunctionalError> {
    iterated_copson_copson_n(u, v, w, p, q, r, DEFAULT_FUNCTIONAL_GRID)
}
