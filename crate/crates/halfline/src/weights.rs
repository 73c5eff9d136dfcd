//! Piecewise-power weights and their exact integrals.
//!
//! A weight is w(x) = c_i · x^{a_i} on each segment [x_i, x_{i+1}) of a
//! partition x_0 < x_1 < ... < x_n of the working domain. The class is closed
//! under real powers and admits closed-form antiderivatives
//! c·x^{a+1}/(a+1) (c·log x when a = -1), so every single-level integral here
//! is exact to floating-point rounding. Cumulative functions V(x) = int_{x0}^x w
//! and V_*(x) = int_x^{xn} w are evaluated from per-breakpoint prefix values,
//! and integrals of V^s·w have the exact antiderivative ±V^{s+1}/(s+1).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Working interval used by the shorthand constructors.
pub const DEFAULT_DOMAIN: (f64, f64) = (1e-3, 1e3);

/// Exponents within this distance of -1 are snapped to the logarithmic
/// antiderivative; c·x^{a+1}/(a+1) is catastrophically cancelled there.
pub const EXPONENT_SNAP: f64 = 1e-12;

/// Relative slack when checking domain membership; points produced by
/// repeated powf on grid construction may land a few ulps outside.
const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("weight needs at least one segment")]
    Empty,
    #[error("breakpoint count must be segment count + 1")]
    Mismatched,
    #[error("breakpoints must be finite, positive and strictly increasing (index {index})")]
    BadBreakpoints { index: usize },
    #[error("segment {index} has a non-positive or non-finite coefficient")]
    BadCoefficient { index: usize },
    #[error("segment {index} has a non-finite exponent")]
    BadExponent { index: usize },
    #[error("x = {x} outside the weight domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("inverted integration range [{a}, {b}]")]
    BadRange { a: f64, b: f64 },
}

/// One power piece: c · x^a with c > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub c: f64,
    pub a: f64,
}

/// Weight on (x_0, x_n), piecewise c_i·x^{a_i}. At a breakpoint the right
/// segment's value is used (a measure-zero choice that never affects
/// integrals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePowerWeight {
    breakpoints: Vec<f64>,
    segments: Vec<Segment>,
}

fn seg_antideriv(seg: Segment, x: f64) -> f64 {
    let e = seg.a + 1.0;
    if e.abs() <= EXPONENT_SNAP {
        seg.c * x.ln()
    } else {
        seg.c * x.powf(e) / e
    }
}

fn seg_integral(seg: Segment, l: f64, r: f64) -> f64 {
    seg_antideriv(seg, r) - seg_antideriv(seg, l)
}

impl PiecewisePowerWeight {
    pub fn new(breakpoints: Vec<f64>, segments: Vec<Segment>) -> Result<Self, WeightError> {
        if segments.is_empty() {
            return Err(WeightError::Empty);
        }
        if breakpoints.len() != segments.len() + 1 {
            return Err(WeightError::Mismatched);
        }
        for (i, x) in breakpoints.iter().enumerate() {
            if !x.is_finite() || *x <= 0.0 || (i > 0 && *x <= breakpoints[i - 1]) {
                return Err(WeightError::BadBreakpoints { index: i });
            }
        }
        for (i, s) in segments.iter().enumerate() {
            if !s.c.is_finite() || s.c <= 0.0 {
                return Err(WeightError::BadCoefficient { index: i });
            }
            if !s.a.is_finite() {
                return Err(WeightError::BadExponent { index: i });
            }
        }
        Ok(Self { breakpoints, segments })
    }

    /// Single segment c·x^a on the default domain.
    pub fn power(c: f64, a: f64) -> Self {
        Self::power_on(DEFAULT_DOMAIN, c, a)
    }

    /// Single segment c·x^a on the given domain. Panics on invalid input;
    /// intended for literals.
    pub fn power_on(domain: (f64, f64), c: f64, a: f64) -> Self {
        Self::new(vec![domain.0, domain.1], vec![Segment { c, a }]).expect("invalid power weight")
    }

    pub fn one_on(domain: (f64, f64)) -> Self {
        Self::power_on(domain, 1.0, 0.0)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Clamps x into the domain, tolerating DOMAIN_SLACK relative overshoot.
    fn admit(&self, x: f64) -> Result<f64, WeightError> {
        let (lo, hi) = self.domain();
        if x >= lo && x <= hi {
            return Ok(x);
        }
        if x >= lo * (1.0 - DOMAIN_SLACK) && x <= hi * (1.0 + DOMAIN_SLACK) {
            return Ok(x.clamp(lo, hi));
        }
        Err(WeightError::OutOfDomain { x, lo, hi })
    }

    /// Index of the segment whose half-open interval [x_i, x_{i+1}) contains x;
    /// the last segment also owns x_n.
    pub fn segment_index(&self, x: f64) -> usize {
        match self.breakpoints.partition_point(|b| *b <= x) {
            0 => 0,
            i => (i - 1).min(self.segments.len() - 1),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, WeightError> {
        let x = self.admit(x)?;
        let s = self.segments[self.segment_index(x)];
        Ok(s.c * x.powf(s.a))
    }

    /// Exact int_a^b w via per-segment antiderivatives.
    pub fn integrate(&self, a: f64, b: f64) -> Result<f64, WeightError> {
        let a = self.admit(a)?;
        let b = self.admit(b)?;
        if a > b {
            return Err(WeightError::BadRange { a, b });
        }
        let mut total = 0.0;
        let mut lo = a;
        for (i, seg) in self.segments.iter().enumerate() {
            let hi = self.breakpoints[i + 1];
            if lo >= hi && i + 1 < self.segments.len() {
                continue;
            }
            let r = b.min(hi);
            if r > lo {
                total += seg_integral(*seg, lo, r);
                lo = r;
            }
            if lo >= b {
                break;
            }
        }
        Ok(total)
    }

    /// Pointwise s-th power: each segment (c, a) becomes (c^s, a·s).
    pub fn pow(&self, s: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            segments: self
                .segments
                .iter()
                .map(|seg| Segment { c: seg.c.powf(s), a: seg.a * s })
                .collect(),
        }
    }

    /// Pointwise product; domains must agree. Breakpoints are merged.
    pub fn mul(&self, other: &Self) -> Result<Self, WeightError> {
        let (lo, hi) = self.domain();
        let (olo, ohi) = other.domain();
        if (lo - olo).abs() > DOMAIN_SLACK * lo || (hi - ohi).abs() > DOMAIN_SLACK * hi {
            return Err(WeightError::OutOfDomain { x: olo, lo, hi });
        }
        let mut bps: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(other.breakpoints.iter())
            .copied()
            .collect();
        bps.sort_by(|x, y| x.partial_cmp(y).unwrap());
        bps.dedup();
        let mut segments = Vec::with_capacity(bps.len() - 1);
        for win in bps.windows(2) {
            let mid = (win[0] * win[1]).sqrt();
            let s = self.segments[self.segment_index(mid)];
            let o = other.segments[other.segment_index(mid)];
            segments.push(Segment { c: s.c * o.c, a: s.a + o.a });
        }
        Self::new(bps, segments)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// V(x) = int_{x0}^x w, non-decreasing, V(x0) = 0.
    Lower,
    /// V_*(x) = int_x^{xn} w, non-increasing, V_*(xn) = 0.
    Upper,
}

/// Closed-form cumulative of a piecewise-power weight.
///
/// `diverges` is set when the corresponding untruncated integral is infinite:
/// toward 0 the first segment has exponent <= -1 (Lower), toward infinity the
/// last segment has exponent >= -1 (Upper). The flag feeds the theorem
/// hypothesis checks; values on the truncated domain are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeFn {
    weight: PiecewisePowerWeight,
    direction: Direction,
    at_breakpoints: Vec<f64>,
    pub diverges: bool,
}

pub fn lower_cumulative(w: &PiecewisePowerWeight) -> CumulativeFn {
    let n = w.segments.len();
    let mut at = vec![0.0; n + 1];
    for i in 0..n {
        at[i + 1] = at[i] + seg_integral(w.segments[i], w.breakpoints[i], w.breakpoints[i + 1]);
    }
    CumulativeFn {
        weight: w.clone(),
        direction: Direction::Lower,
        at_breakpoints: at,
        diverges: w.segments[0].a <= -1.0,
    }
}

pub fn upper_cumulative(w: &PiecewisePowerWeight) -> CumulativeFn {
    let n = w.segments.len();
    let mut at = vec![0.0; n + 1];
    for i in (0..n).rev() {
        at[i] = at[i + 1] + seg_integral(w.segments[i], w.breakpoints[i], w.breakpoints[i + 1]);
    }
    CumulativeFn {
        weight: w.clone(),
        direction: Direction::Upper,
        at_breakpoints: at,
        diverges: w.segments[n - 1].a >= -1.0,
    }
}

impl CumulativeFn {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn weight(&self) -> &PiecewisePowerWeight {
        &self.weight
    }

    /// int over the whole domain.
    pub fn total(&self) -> f64 {
        match self.direction {
            Direction::Lower => *self.at_breakpoints.last().unwrap(),
            Direction::Upper => self.at_breakpoints[0],
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, WeightError> {
        let x = self.weight.admit(x)?;
        let i = self.weight.segment_index(x);
        let seg = self.weight.segments[i];
        Ok(match self.direction {
            Direction::Lower => {
                self.at_breakpoints[i] + seg_integral(seg, self.weight.breakpoints[i], x)
            }
            Direction::Upper => {
                self.at_breakpoints[i + 1] + seg_integral(seg, x, self.weight.breakpoints[i + 1])
            }
        })
    }

    /// Exact int_a^b V(t)^s · w(t) dt, where V is this cumulative and w its
    /// source weight: the antiderivative is V^{s+1}/(s+1) (Lower) or
    /// -V_*^{s+1}/(s+1) (Upper), log V at s = -1. Evaluated per segment so
    /// that breakpoint continuity of the representation is exercised.
    pub fn integrate_pow(&self, s: f64, a: f64, b: f64) -> Result<f64, WeightError> {
        let a = self.weight.admit(a)?;
        let b = self.weight.admit(b)?;
        if a > b {
            return Err(WeightError::BadRange { a, b });
        }
        let e = s + 1.0;
        let log_case = e.abs() <= EXPONENT_SNAP;
        let piece = |vl: f64, vr: f64| -> f64 {
            // vl, vr are cumulative values at the piece's endpoints, ordered
            // so the piece contributes (vr-part) - (vl-part) with the sign of
            // the direction already absorbed.
            if log_case {
                if vl == 0.0 || vr == 0.0 {
                    return f64::INFINITY;
                }
                return vr.ln() - vl.ln();
            }
            if e < 0.0 && (vl == 0.0 || vr == 0.0) {
                return f64::INFINITY;
            }
            (vr.powf(e) - vl.powf(e)) / e
        };
        let mut total = 0.0;
        let mut lo = a;
        let nseg = self.weight.segments.len();
        for i in 0..nseg {
            let hi = self.weight.breakpoints[i + 1];
            if lo >= hi && i + 1 < nseg {
                continue;
            }
            let r = b.min(hi);
            if r > lo {
                let vl = self.eval(lo)?;
                let vr = self.eval(r)?;
                total += match self.direction {
                    Direction::Lower => piece(vl, vr),
                    Direction::Upper => piece(vr, vl),
                };
                lo = r;
            }
            if lo >= b {
                break;
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn eval_constant() {
        let w = PiecewisePowerWeight::power(1.0, 0.0);
        assert_eq!(w.eval(7.0).unwrap(), 1.0);
    }

    #[test]
    fn eval_inverse() {
        let w = PiecewisePowerWeight::power(2.0, -1.0);
        assert_eq!(w.eval(4.0).unwrap(), 0.5);
    }

    #[test]
    fn eval_two_segments_right_rule() {
        let w = PiecewisePowerWeight::new(
            vec![0.001, 1.0, 1000.0],
            vec![Segment { c: 1.0, a: 0.0 }, Segment { c: 1.0, a: -3.0 }],
        )
        .unwrap();
        assert_eq!(w.eval(2.0).unwrap(), 0.125);
        // at the breakpoint the right segment wins
        assert_eq!(w.eval(1.0).unwrap(), 1.0);
        assert_eq!(w.eval(0.5).unwrap(), 1.0);
    }

    #[test]
    fn eval_out_of_domain() {
        let w = PiecewisePowerWeight::power(1.0, 0.0);
        assert!(matches!(w.eval(2e3), Err(WeightError::OutOfDomain { .. })));
        assert!(matches!(w.eval(1e-5), Err(WeightError::OutOfDomain { .. })));
    }

    #[test]
    fn integrate_constant() {
        let w = PiecewisePowerWeight::power(1.0, 0.0);
        assert!(rel_close(w.integrate(0.001, 1.0).unwrap(), 0.999, 1e-14));
    }

    #[test]
    fn integrate_inverse_square() {
        let w = PiecewisePowerWeight::power_on((1.0, 1000.0), 1.0, -2.0);
        assert!(rel_close(w.integrate(1.0, 1000.0).unwrap(), 0.999, 1e-14));
    }

    #[test]
    fn integrate_log_case() {
        let w = PiecewisePowerWeight::power_on((1.0, 1000.0), 1.0, -1.0);
        assert!(rel_close(w.integrate(1.0, std::f64::consts::E).unwrap(), 1.0, 1e-14));
    }

    #[test]
    fn integrate_exponent_snap() {
        // an exponent within 1e-12 of -1 must take the log branch
        let w = PiecewisePowerWeight::power_on((1.0, 1000.0), 1.0, -1.0 + 1e-13);
        let exact = PiecewisePowerWeight::power_on((1.0, 1000.0), 1.0, -1.0);
        assert!(rel_close(
            w.integrate(1.0, 100.0).unwrap(),
            exact.integrate(1.0, 100.0).unwrap(),
            1e-10
        ));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert_eq!(
            PiecewisePowerWeight::new(vec![1.0, 2.0], vec![]),
            Err(WeightError::Empty)
        );
        assert!(matches!(
            PiecewisePowerWeight::new(
                vec![2.0, 1.0],
                vec![Segment { c: 1.0, a: 0.0 }]
            ),
            Err(WeightError::BadBreakpoints { index: 1 })
        ));
        assert!(matches!(
            PiecewisePowerWeight::new(
                vec![-1.0, 1.0],
                vec![Segment { c: 1.0, a: 0.0 }]
            ),
            Err(WeightError::BadBreakpoints { index: 0 })
        ));
        assert!(matches!(
            PiecewisePowerWeight::new(
                vec![1.0, 2.0],
                vec![Segment { c: 0.0, a: 0.0 }]
            ),
            Err(WeightError::BadCoefficient { index: 0 })
        ));
    }

    #[test]
    fn cumulative_examples() {
        let v = PiecewisePowerWeight::power(1.0, 0.0);
        let cum = lower_cumulative(&v);
        assert!(rel_close(cum.eval(2.0).unwrap(), 2.0 - 0.001, 1e-14));

        let v = PiecewisePowerWeight::power_on((0.5, 1000.0), 1.0, -2.0);
        let cum = upper_cumulative(&v);
        assert!(rel_close(cum.eval(2.0).unwrap(), 0.5 - 0.001, 1e-13));

        let v = PiecewisePowerWeight::power_on((0.001, 10.0), 1.0, 1.0);
        let cum = lower_cumulative(&v);
        assert!(rel_close(cum.eval(2.0).unwrap(), (4.0 - 1e-6) / 2.0, 1e-14));
    }

    #[test]
    fn divergence_flags() {
        let v = PiecewisePowerWeight::power(1.0, -1.0);
        assert!(lower_cumulative(&v).diverges); // int_0 x^-1 diverges
        assert!(upper_cumulative(&v).diverges); // int^inf x^-1 diverges
        let v = PiecewisePowerWeight::power(1.0, -0.5);
        assert!(!lower_cumulative(&v).diverges);
        assert!(upper_cumulative(&v).diverges);
        let v = PiecewisePowerWeight::power(1.0, -1.5);
        assert!(lower_cumulative(&v).diverges);
        assert!(!upper_cumulative(&v).diverges);
    }

    #[test]
    fn integrate_pow_against_direct_eval() {
        // int_a^b V^s w dt = (V(b)^{s+1} - V(a)^{s+1})/(s+1) and the mirror
        let v = PiecewisePowerWeight::new(
            vec![0.001, 1.0, 1000.0],
            vec![Segment { c: 2.0, a: 0.5 }, Segment { c: 2.0, a: -2.0 }],
        )
        .unwrap();
        let (a, b, s) = (0.01, 30.0, 1.7);
        let lo = lower_cumulative(&v);
        let direct = (lo.eval(b).unwrap().powf(s + 1.0) - lo.eval(a).unwrap().powf(s + 1.0))
            / (s + 1.0);
        assert!(rel_close(lo.integrate_pow(s, a, b).unwrap(), direct, 1e-12));
        let up = upper_cumulative(&v);
        let direct = (up.eval(a).unwrap().powf(s + 1.0) - up.eval(b).unwrap().powf(s + 1.0))
            / (s + 1.0);
        assert!(rel_close(up.integrate_pow(s, a, b).unwrap(), direct, 1e-12));
    }

    #[test]
    fn mul_merges_breakpoints() {
        let w1 = PiecewisePowerWeight::new(
            vec![0.001, 1.0, 1000.0],
            vec![Segment { c: 1.0, a: 0.0 }, Segment { c: 1.0, a: -3.0 }],
        )
        .unwrap();
        let w2 = PiecewisePowerWeight::new(
            vec![0.001, 5.0, 1000.0],
            vec![Segment { c: 2.0, a: 1.0 }, Segment { c: 10.0, a: 1.0 }],
        )
        .unwrap();
        let prod = w1.mul(&w2).unwrap();
        for x in [0.01, 0.9, 2.0, 4.9, 5.1, 700.0] {
            assert!(rel_close(
                prod.eval(x).unwrap(),
                w1.eval(x).unwrap() * w2.eval(x).unwrap(),
                1e-12
            ));
        }
    }

    fn arb_weight() -> impl Strategy<Value = PiecewisePowerWeight> {
        // 1..=3 segments, breakpoints log-uniform in the default domain
        (1usize..=3).prop_flat_map(|nseg| {
            let bps = proptest::collection::vec(-2.9f64..2.9, nseg - 1);
            let segs = proptest::collection::vec((0.1f64..10.0, -2.5f64..2.5), nseg);
            (bps, segs).prop_map(|(mut mid, segs)| {
                mid.sort_by(|a, b| a.partial_cmp(b).unwrap());
                mid.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
                let mut bps = vec![DEFAULT_DOMAIN.0];
                bps.extend(mid.iter().map(|t| 10f64.powf(*t)));
                bps.push(DEFAULT_DOMAIN.1);
                let segs: Vec<Segment> = segs
                    .into_iter()
                    .take(bps.len() - 1)
                    .map(|(c, a)| Segment { c, a })
                    .collect();
                let bps = bps[..segs.len() + 1].to_vec();
                let mut bps = bps;
                *bps.last_mut().unwrap() = DEFAULT_DOMAIN.1;
                PiecewisePowerWeight::new(bps, segs).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn integrate_additive(w in arb_weight(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0, t3 in 0.0f64..1.0) {
            let (lo, hi) = w.domain();
            let mut ts = [t1, t2, t3];
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let map = |t: f64| lo * (hi / lo).powf(t);
            let (a, c, b) = (map(ts[0]), map(ts[1]), map(ts[2]));
            let whole = w.integrate(a, b).unwrap();
            let split = w.integrate(a, c).unwrap() + w.integrate(c, b).unwrap();
            prop_assert!(rel_close(whole, split, 1e-12));
        }

        #[test]
        fn cumulative_split(w in arb_weight(), t in 0.0f64..1.0) {
            let (lo, hi) = w.domain();
            let x = lo * (hi / lo).powf(t);
            let total = w.integrate(lo, hi).unwrap();
            let sum = lower_cumulative(&w).eval(x).unwrap() + upper_cumulative(&w).eval(x).unwrap();
            prop_assert!(rel_close(sum, total, 1e-12));
        }

        #[test]
        fn pow_round_trip(w in arb_weight(), s in prop::sample::select(vec![-2.0, -0.5, 0.3, 1.0, 2.5])) {
            let back = w.pow(s).pow(1.0 / s);
            for (orig, rt) in w.segments().iter().zip(back.segments()) {
                prop_assert!(rel_close(orig.c, rt.c, 1e-12));
                prop_assert!((orig.a - rt.a).abs() <= 1e-12 * orig.a.abs().max(1.0));
            }
        }

        #[test]
        fn integrate_matches_quadrature(w in arb_weight()) {
            // trapezoid in log coordinates (dt = x d(log x)), panels aligned
            // to segments so the jump at a breakpoint is never straddled
            let (lo, hi) = w.domain();
            let mut acc = 0.0;
            for (i, seg) in w.segments().iter().enumerate() {
                let (l, r) = (w.breakpoints()[i], w.breakpoints()[i + 1]);
                let nn = 20_000usize;
                let h = (r / l).ln() / nn as f64;
                let f = |x: f64| seg.c * x.powf(seg.a) * x;
                let mut sum = 0.5 * (f(l) + f(r));
                for j in 1..nn {
                    sum += f(l * (j as f64 * h).exp());
                }
                acc += sum * h;
            }
            let exact = w.integrate(lo, hi).unwrap();
            prop_assert!(rel_close(acc, exact, 1e-5));
        }
    }
}
