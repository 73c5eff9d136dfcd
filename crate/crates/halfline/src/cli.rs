//! Batch front end: declarative instance files in, line-delimited records out.
//!
//! An instance file is a JSON list of `{weights, exponents, kind, theorem?}`
//! objects; weights are literal span lists `{"from", "to", "c", "a"}` so a new
//! weight family needs no rebuild. Three commands share the format: `eval`
//! prints characterization functionals, `best` runs the solver and summarizes
//! the witness, `verify` checks an equivalence rewrite per instance. Every
//! output record is one line of JSON or CSV and parses back losslessly via
//! [`parse_record_line`].
//!
//! Exit codes: 0 all records pass, 1 some record failed or errored, 2 the
//! configuration or an input file did not parse.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::mpsc;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::{Error as DeError, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::discrete::{LogGrid, OperatorKind};
use crate::functionals::{
    bradley_l1_copson_n, bradley_l1_hardy_n, copson_constant_n, hardy_constant_n,
    iterated_copson_copson_l1_n, iterated_copson_copson_n, iterated_hardy_copson_l1_n,
    iterated_hardy_copson_n, FunctionalValue,
};
use crate::solver::{best_constant, BestConstantEstimate, SolverOpts};
use crate::verify::{
    verify_equivalence_with, InequalitySpec, TheoremId, VerifyError, WeightSpec,
};
use crate::weights::{PiecewisePowerWeight, Segment};

/// Witness cells listed per best-constant record before truncation.
const WITNESS_SUMMARY_CELLS: usize = 12;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {detail}")]
    Parse { detail: String },
    #[error("bad configuration: {detail}")]
    Config { detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A float that serializes as a JSON number when finite and as a token
/// ("inf", "-inf", "NaN") otherwise, so records survive q = inf and
/// divergent functional values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flex(pub f64);

impl fmt::Display for Flex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl FromStr for Flex {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(Flex)
    }
}

impl Serialize for Flex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.collect_str(&self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Flex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct FlexVisitor;
        impl Visitor<'_> for FlexVisitor {
            type Value = Flex;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or a float token like \"inf\"")
            }

            fn visit_f64<E: DeError>(self, x: f64) -> Result<Flex, E> {
                Ok(Flex(x))
            }

            fn visit_u64<E: DeError>(self, x: u64) -> Result<Flex, E> {
                Ok(Flex(x as f64))
            }

            fn visit_i64<E: DeError>(self, x: i64) -> Result<Flex, E> {
                Ok(Flex(x as f64))
            }

            fn visit_str<E: DeError>(self, s: &str) -> Result<Flex, E> {
                s.parse().map_err(|_| E::custom(format!("bad float token {s:?}")))
            }
        }
        d.deserialize_any(FlexVisitor)
    }
}

/// One span of a weight literal: c·x^a on [from, to).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanDecl {
    pub from: f64,
    pub to: f64,
    pub c: f64,
    pub a: f64,
}

/// Builds the weight a span list describes. Spans must be contiguous and
/// positive; the piecewise type revalidates ranges on construction.
pub fn weight_from_spans(spans: &[SpanDecl]) -> Result<PiecewisePowerWeight, String> {
    if spans.is_empty() {
        return Err("weight literal has no spans".to_string());
    }
    for (i, s) in spans.iter().enumerate() {
        if !(s.from > 0.0 && s.from < s.to && s.to.is_finite()) {
            return Err(format!("span {i} has bad range [{}, {}]", s.from, s.to));
        }
        if !(s.c > 0.0 && s.c.is_finite()) {
            return Err(format!("span {i} has non-positive coefficient {}", s.c));
        }
        if !s.a.is_finite() {
            return Err(format!("span {i} has bad exponent {}", s.a));
        }
        if i > 0 && spans[i - 1].to != s.from {
            return Err(format!(
                "span {i} starts at {} but the previous span ends at {}",
                s.from,
                spans[i - 1].to
            ));
        }
    }
    let mut breakpoints: Vec<f64> = spans.iter().map(|s| s.from).collect();
    breakpoints.push(spans.last().unwrap().to);
    let segments = spans.iter().map(|s| Segment { c: s.c, a: s.a }).collect();
    PiecewisePowerWeight::new(breakpoints, segments).map_err(|e| e.to_string())
}

/// Renders a weight back into the span list that reproduces it.
pub fn spans_of(w: &PiecewisePowerWeight) -> Vec<SpanDecl> {
    let bps = w.breakpoints();
    w.segments()
        .iter()
        .enumerate()
        .map(|(i, seg)| SpanDecl { from: bps[i], to: bps[i + 1], c: seg.c, a: seg.a })
        .collect()
}

/// Parses one weight literal: a JSON list of spans.
pub fn parse_weight_literal(text: &str) -> Result<PiecewisePowerWeight, CliError> {
    let spans: Vec<SpanDecl> = serde_json::from_str(text)
        .map_err(|e| CliError::Parse { detail: format!("weight literal: {e}") })?;
    weight_from_spans(&spans).map_err(|d| CliError::Parse { detail: format!("weight literal: {d}") })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<SpanDecl>>,
    pub v: Vec<SpanDecl>,
    pub w: Vec<SpanDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentsDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub q: Flex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

/// One declared inequality instance. `p` defaults to 1, `r` and `u` are
/// required exactly for the iterated kinds, `theorem` defaults to the
/// identity rewrite under `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDecl {
    pub weights: WeightsDecl,
    pub exponents: ExponentsDecl,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<String>,
}

impl InstanceDecl {
    pub fn p(&self) -> f64 {
        self.exponents.p.unwrap_or(1.0)
    }

    /// Assembles the operator kind, pulling in `r` and `u` where the kind
    /// needs them and rejecting them where it does not.
    pub fn kind(&self) -> Result<OperatorKind, String> {
        let plain = |kind: OperatorKind| -> Result<OperatorKind, String> {
            if self.exponents.r.is_some() {
                return Err(format!("kind {} takes no exponent r", self.kind));
            }
            if self.weights.u.is_some() {
                return Err(format!("kind {} takes no weight u", self.kind));
            }
            Ok(kind)
        };
        let iterated = |mk: fn(f64, PiecewisePowerWeight) -> OperatorKind| {
            let r = self.exponents.r.ok_or("iterated kind needs exponent r")?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(format!("exponent r out of range, got {r}"));
            }
            let spans =
                self.weights.u.as_ref().ok_or_else(|| "iterated kind needs weight u".to_string())?;
            let u = weight_from_spans(spans).map_err(|e| format!("weight u: {e}"))?;
            Ok(mk(r, u))
        };
        match self.kind.as_str() {
            "hardy" => plain(OperatorKind::Hardy),
            "copson" => plain(OperatorKind::Copson),
            "hardy_then_copson" => iterated(|r, u| OperatorKind::HardyThenCopson { r, u }),
            "copson_then_copson" => iterated(|r, u| OperatorKind::CopsonThenCopson { r, u }),
            "copson_then_hardy" => iterated(|r, u| OperatorKind::CopsonThenHardy { r, u }),
            "hardy_then_hardy" => iterated(|r, u| OperatorKind::HardyThenHardy { r, u }),
            other => Err(format!("unknown kind {other:?}")),
        }
    }

    fn validate(&self) -> Result<(), String> {
        weight_from_spans(&self.weights.v).map_err(|e| format!("weight v: {e}"))?;
        weight_from_spans(&self.weights.w).map_err(|e| format!("weight w: {e}"))?;
        self.kind()?;
        let p = self.p();
        if !(p > 0.0 && p.is_finite()) {
            return Err(format!("exponent p out of range, got {p}"));
        }
        if !(self.exponents.q.0 > 0.0) {
            return Err(format!("exponent q out of range, got {}", self.exponents.q));
        }
        if let Some(t) = &self.theorem {
            t.parse::<TheoremId>().map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

/// Parses an instance file: a JSON list of declarations. JSON errors carry
/// line and column, semantic errors carry the instance index.
pub fn parse_instance_file(text: &str) -> Result<Vec<InstanceDecl>, CliError> {
    let decls: Vec<InstanceDecl> = serde_json::from_str(text)
        .map_err(|e| CliError::Parse { detail: format!("instance file: {e}") })?;
    for (i, d) in decls.iter().enumerate() {
        d.validate().map_err(|detail| CliError::Parse { detail: format!("instance {i}: {detail}") })?;
    }
    Ok(decls)
}

/// Renders a spec whose weights still have closed form back into a
/// declaration, e.g. to freeze sampled instances into a file.
pub fn decl_of_spec(spec: &InequalitySpec, theorem: Option<TheoremId>) -> Result<InstanceDecl, CliError> {
    let power = |ws: &WeightSpec, name: &str| -> Result<Vec<SpanDecl>, CliError> {
        ws.as_power().map(spans_of).ok_or_else(|| CliError::Config {
            detail: format!("weight {name} has no closed form to declare"),
        })
    };
    let (r, u) = match spec.kind.inner() {
        Some((r, u)) => (Some(r), Some(spans_of(u))),
        None => (None, None),
    };
    Ok(InstanceDecl {
        weights: WeightsDecl { u, v: power(&spec.v, "v")?, w: power(&spec.w, "w")? },
        exponents: ExponentsDecl {
            p: Some(spec.p),
            q: Flex(spec.q),
            r,
        },
        kind: spec.kind.tag().to_string(),
        theorem: theorem.map(|t| t.as_str().to_string()),
    })
}

/// One output line. Which fields are set depends on the command: `eval`
/// fills regime/value/parts, `best` fills value/parts (witness summary) and
/// puts the winning method in `regime`, `verify` fills theorem/c_orig/c_red/
/// ratio. `verdict` is "ok" or "pass" on success, "skipped: …" for instances
/// a rewrite does not cover, "fail" or "error: …" otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub instance_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Flex>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<(String, Flex)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_orig: Option<Flex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_red: Option<Flex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<Flex>,
    pub verdict: String,
}

impl Record {
    fn blank(instance_id: usize) -> Self {
        Record {
            instance_id,
            theorem: None,
            regime: None,
            value: None,
            parts: Vec::new(),
            c_orig: None,
            c_red: None,
            ratio: None,
            verdict: String::new(),
        }
    }

    /// True when the record should not flip the exit code to 1.
    pub fn is_good(&self) -> bool {
        self.verdict == "ok" || self.verdict == "pass" || self.verdict.starts_with("skipped")
    }
}

fn one_line(msg: String) -> String {
    msg.replace(['\n', '\r'], " ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Column order of the CSV format. `parts` holds `name=value` pairs joined
/// by semicolons; empty cells stand for absent fields.
pub const CSV_COLUMNS: [&str; 9] =
    ["instance_id", "theorem", "regime", "value", "parts", "c_orig", "c_red", "ratio", "verdict"];

fn record_to_csv(r: &Record) -> String {
    let opt_f = |x: &Option<Flex>| x.map(|f| f.to_string()).unwrap_or_default();
    let opt_s = |x: &Option<String>| x.clone().unwrap_or_default();
    let parts =
        r.parts.iter().map(|(k, x)| format!("{k}={x}")).collect::<Vec<_>>().join(";");
    let fields = [
        r.instance_id.to_string(),
        opt_s(&r.theorem),
        opt_s(&r.regime),
        opt_f(&r.value),
        parts,
        opt_f(&r.c_orig),
        opt_f(&r.c_red),
        opt_f(&r.ratio),
        r.verdict.clone(),
    ];
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    wtr.write_record(&fields).expect("csv write into a Vec");
    let bytes = wtr.into_inner().expect("csv flush into a Vec");
    String::from_utf8(bytes).expect("csv output is utf-8").trim_end().to_string()
}

fn record_from_csv(line: &str) -> Result<Record, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(line.as_bytes());
    let mut rec = csv::StringRecord::new();
    if !rdr.read_record(&mut rec).map_err(|e| e.to_string())? {
        return Err("empty record line".to_string());
    }
    if rec.len() != CSV_COLUMNS.len() {
        return Err(format!("expected {} csv fields, got {}", CSV_COLUMNS.len(), rec.len()));
    }
    let opt_s = |s: &str| if s.is_empty() { None } else { Some(s.to_string()) };
    let opt_f = |s: &str| -> Result<Option<Flex>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| format!("bad float token {s:?}"))
        }
    };
    let parts = if rec[4].is_empty() {
        Vec::new()
    } else {
        rec[4]
            .split(';')
            .map(|tok| {
                let (k, x) = tok.split_once('=').ok_or_else(|| format!("bad part {tok:?}"))?;
                let x: Flex = x.parse().map_err(|_| format!("bad part value in {tok:?}"))?;
                Ok((k.to_string(), x))
            })
            .collect::<Result<Vec<_>, String>>()?
    };
    Ok(Record {
        instance_id: rec[0].parse().map_err(|_| format!("bad instance id {:?}", &rec[0]))?,
        theorem: opt_s(&rec[1]),
        regime: opt_s(&rec[2]),
        value: opt_f(&rec[3])?,
        parts,
        c_orig: opt_f(&rec[5])?,
        c_red: opt_f(&rec[6])?,
        ratio: opt_f(&rec[7])?,
        verdict: rec[8].to_string(),
    })
}

/// Renders one record as a single output line in the given format.
pub fn render_record(r: &Record, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => serde_json::to_string(r).expect("record serializes"),
        OutputFormat::Csv => record_to_csv(r),
    }
}

/// Parses one output line back into a record; JSON when it opens a brace,
/// CSV otherwise.
pub fn parse_record_line(line: &str) -> Result<Record, CliError> {
    let t = line.trim();
    if t.is_empty() {
        return Err(CliError::Parse { detail: "record line: empty".to_string() });
    }
    if t.starts_with('{') {
        serde_json::from_str(t).map_err(|e| CliError::Parse { detail: format!("record line: {e}") })
    } else {
        record_from_csv(t).map_err(|d| CliError::Parse { detail: format!("record line: {d}") })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Eval,
    Best,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodFlag {
    /// Single-cell exhaustive search; always runs
    Atom,
    /// Few-atom search over cell tuples
    Kat,
    /// Power iteration, needs 1 <= p <= q
    Power,
    /// Seeded multistart coordinate ascent
    Ascent,
}

/// Fully validated run parameters shared by the three commands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub instances: PathBuf,
    pub n: usize,
    pub domain: Option<(f64, f64)>,
    pub seed: u64,
    pub window: f64,
    pub format: OutputFormat,
    pub methods: Vec<MethodFlag>,
    pub budget: usize,
}

impl RunConfig {
    pub fn solver_opts(&self) -> SolverOpts {
        SolverOpts {
            use_power: self.methods.contains(&MethodFlag::Power),
            use_k_atom: self.methods.contains(&MethodFlag::Kat),
            use_ascent: self.methods.contains(&MethodFlag::Ascent),
            budget: self.budget,
            ..SolverOpts::default()
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.n < 16 {
            return Err(CliError::Config { detail: format!("n must be at least 16, got {}", self.n) });
        }
        if let Some((x0, xn)) = self.domain {
            if !(x0 > 0.0 && x0 < xn && xn.is_finite()) {
                return Err(CliError::Config { detail: format!("domain must satisfy 0 < x0 < xn, got {x0}:{xn}") });
            }
        }
        if !(self.window > 1.0) {
            return Err(CliError::Config { detail: format!("window must exceed 1, got {}", self.window) });
        }
        Ok(())
    }
}

fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected x0:xn")?;
    let x0: f64 = a.trim().parse().map_err(|_| format!("bad x0 {a:?}"))?;
    let xn: f64 = b.trim().parse().map_err(|_| format!("bad xn {b:?}"))?;
    if !(x0 > 0.0 && x0 < xn && xn.is_finite()) {
        return Err(format!("domain must satisfy 0 < x0 < xn, got {x0}:{xn}"));
    }
    Ok((x0, xn))
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Instance file: a JSON list of {weights, exponents, kind, theorem?}
    pub instances: PathBuf,
    /// Grid cells per instance
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    /// Grid domain x0:xn; defaults to each instance's weight domain
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<(f64, f64)>,
    /// Base seed; each instance mixes in its index
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Equivalence pass window K; verdicts need the ratio inside [1/K, K]
    #[arg(long, default_value_t = 16.0)]
    pub window: f64,
    /// Output format, one record per line
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Search methods; atom always runs
    #[arg(long, value_enum, value_delimiter = ',', default_value = "atom,power,ascent")]
    pub methods: Vec<MethodFlag>,
    /// Ratio-evaluation budget for the few-atom search
    #[arg(long, default_value_t = crate::solver::DEFAULT_EVAL_BUDGET)]
    pub budget: usize,
}

#[derive(Debug, Parser)]
#[command(name = "halfline", version, about = "Weighted Hardy and Copson inequalities on truncated half-lines: characterization functionals, best-constant search, and reduction equivalence checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Evaluate the characterization functional of each instance
    Eval(CommonArgs),
    /// Estimate best constants and summarize the witnesses
    Best(CommonArgs),
    /// Check the declared equivalence rewrite of each instance
    Verify(CommonArgs),
}

impl Cli {
    pub fn into_config(self) -> Result<RunConfig, CliError> {
        let (command, a) = match self.command {
            CliCommand::Eval(a) => (Command::Eval, a),
            CliCommand::Best(a) => (Command::Best, a),
            CliCommand::Verify(a) => (Command::Verify, a),
        };
        let config = RunConfig {
            command,
            instances: a.instances,
            n: a.n,
            domain: a.domain,
            seed: a.seed,
            window: a.window,
            format: a.format,
            methods: a.methods,
            budget: a.budget,
        };
        config.validate()?;
        Ok(config)
    }
}

fn instance_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn eval_record(config: &RunConfig, index: usize, decl: &InstanceDecl) -> Record {
    let mut rec = Record::blank(index);
    rec.theorem = decl.theorem.clone();
    let outcome = eval_functional(config, decl);
    match outcome {
        Ok(f) => {
            rec.regime = Some(f.regime);
            rec.value = Some(Flex(f.value));
            rec.parts = f.parts.into_iter().map(|(k, x)| (k, Flex(x))).collect();
            rec.verdict = "ok".to_string();
        }
        Err(e) => rec.verdict = one_line(format!("error: {e}")),
    }
    rec
}

fn eval_functional(config: &RunConfig, decl: &InstanceDecl) -> Result<FunctionalValue, VerifyError> {
    let bad = |m: String| VerifyError::RegimeMismatch { detail: m };
    let v = weight_from_spans(&decl.weights.v).map_err(bad)?;
    let w = weight_from_spans(&decl.weights.w).map_err(bad)?;
    let kind = decl.kind().map_err(bad)?;
    let p = decl.p();
    let q = decl.exponents.q.0;
    let n = config.n;
    let f = match kind {
        OperatorKind::Hardy => {
            if p == 1.0 {
                bradley_l1_hardy_n(&w, &v, q, n)?
            } else {
                hardy_constant_n(&w, &v, p, q, n)?
            }
        }
        OperatorKind::Copson => {
            if p == 1.0 {
                bradley_l1_copson_n(&w, &v, q, n)?
            } else {
                copson_constant_n(&w, &v, p, q, n)?
            }
        }
        OperatorKind::HardyThenCopson { r, ref u } => {
            if p == 1.0 {
                iterated_hardy_copson_l1_n(u, &v, &w, q, r, n)?
            } else {
                iterated_hardy_copson_n(u, &v, &w, p, q, r, n)?
            }
        }
        OperatorKind::CopsonThenCopson { r, ref u } => {
            if p == 1.0 {
                iterated_copson_copson_l1_n(u, &v, &w, q, r, n)?
            } else {
                iterated_copson_copson_n(u, &v, &w, p, q, r, n)?
            }
        }
        OperatorKind::CopsonThenHardy { .. } | OperatorKind::HardyThenHardy { .. } => {
            return Err(VerifyError::RegimeMismatch { detail: format!("kind {}", kind.tag()) })
        }
    };
    Ok(f)
}

fn spec_of_decl(
    config: &RunConfig,
    index: usize,
    decl: &InstanceDecl,
) -> Result<InequalitySpec, String> {
    let v = weight_from_spans(&decl.weights.v).map_err(|e| format!("weight v: {e}"))?;
    let w = weight_from_spans(&decl.weights.w).map_err(|e| format!("weight w: {e}"))?;
    let kind = decl.kind()?;
    let domain = config.domain.unwrap_or_else(|| w.domain());
    let grid = LogGrid::new(config.n, domain.0, domain.1).map_err(|e| e.to_string())?;
    InequalitySpec::new(
        kind,
        decl.p(),
        decl.exponents.q.0,
        WeightSpec::Power(w),
        WeightSpec::Power(v),
        Arc::new(grid),
        instance_seed(config.seed, index),
    )
    .map_err(|e| e.to_string())
}

fn witness_parts(est: &BestConstantEstimate) -> Vec<(String, Flex)> {
    let values = est.witness.values();
    let mut support: Vec<(usize, f64)> =
        values.iter().copied().enumerate().filter(|&(_, h)| h > 0.0).collect();
    support.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut parts = vec![
        ("support".to_string(), Flex(support.len() as f64)),
        ("iterations".to_string(), Flex(est.iterations as f64)),
        ("converged".to_string(), Flex(if est.converged { 1.0 } else { 0.0 })),
    ];
    for &(i, h) in support.iter().take(WITNESS_SUMMARY_CELLS) {
        parts.push((format!("h{i}"), Flex(h)));
    }
    parts
}

fn best_record(config: &RunConfig, index: usize, decl: &InstanceDecl) -> Record {
    let mut rec = Record::blank(index);
    rec.theorem = decl.theorem.clone();
    let spec = match spec_of_decl(config, index, decl) {
        Ok(s) => s,
        Err(detail) => {
            rec.verdict = one_line(format!("error: {detail}"));
            return rec;
        }
    };
    match best_constant(&spec, &config.solver_opts()) {
        Ok(est) => {
            rec.regime = Some(est.method.tag().to_string());
            rec.value = Some(Flex(est.value));
            rec.parts = witness_parts(&est);
            rec.verdict = "ok".to_string();
        }
        Err(e) => rec.verdict = one_line(format!("error: {e}")),
    }
    rec
}

fn verify_record(config: &RunConfig, index: usize, decl: &InstanceDecl) -> Record {
    let mut rec = Record::blank(index);
    let theorem = match &decl.theorem {
        Some(t) => match t.parse::<TheoremId>() {
            Ok(id) => id,
            Err(e) => {
                rec.verdict = one_line(format!("error: {e}"));
                return rec;
            }
        },
        None => TheoremId::Identity,
    };
    rec.theorem = Some(theorem.as_str().to_string());
    let spec = match spec_of_decl(config, index, decl) {
        Ok(s) => s,
        Err(detail) => {
            rec.verdict = one_line(format!("error: {detail}"));
            return rec;
        }
    };
    match verify_equivalence_with(&spec, theorem, config.window, &config.solver_opts()) {
        Ok(rep) => {
            rec.c_orig = Some(Flex(rep.original_estimate.value));
            rec.c_red = Some(Flex(rep.reduced_estimate.value));
            rec.ratio = Some(Flex(rep.ratio));
            rec.verdict = if rep.pass { "pass".to_string() } else { "fail".to_string() };
        }
        Err(e @ (VerifyError::HypothesisViolated { .. } | VerifyError::DegenerateInstance { .. })) => {
            rec.verdict = one_line(format!("skipped: {e}"));
        }
        Err(e) => rec.verdict = one_line(format!("error: {e}")),
    }
    rec
}

fn record_for(config: &RunConfig, index: usize, decl: &InstanceDecl) -> Record {
    match config.command {
        Command::Eval => eval_record(config, index, decl),
        Command::Best => best_record(config, index, decl),
        Command::Verify => verify_record(config, index, decl),
    }
}

/// Runs the configured command over an already-parsed instance list,
/// writing one record line per instance to `out` in instance order while
/// the instances are solved in parallel. Returns the exit code.
pub fn run_decls<W: Write + Send>(
    config: &RunConfig,
    decls: &[InstanceDecl],
    out: &mut W,
) -> Result<i32, CliError> {
    let (tx, rx) = mpsc::channel::<(usize, Record)>();
    let format = config.format;
    let written = std::thread::scope(|scope| -> Result<bool, CliError> {
        let sink = scope.spawn(move || -> Result<bool, CliError> {
            let mut pending = std::collections::BTreeMap::new();
            let mut next = 0usize;
            let mut all_good = true;
            for (i, rec) in rx {
                pending.insert(i, rec);
                while let Some(rec) = pending.remove(&next) {
                    all_good &= rec.is_good();
                    writeln!(out, "{}", render_record(&rec, format))?;
                    next += 1;
                }
            }
            Ok(all_good)
        });
        decls.par_iter().enumerate().for_each_with(tx, |tx, (i, d)| {
            let _ = tx.send((i, record_for(config, i, d)));
        });
        sink.join().expect("record sink panicked")
    })?;
    Ok(if written { 0 } else { 1 })
}

/// Reads the instance file and runs the command; the entry point behind
/// `main`. Parse and configuration problems surface as errors (exit 2),
/// per-instance failures as records and exit code 1.
pub fn run_config<W: Write + Send>(config: &RunConfig, out: &mut W) -> Result<i32, CliError> {
    let text = fs::read_to_string(&config.instances)?;
    let decls = parse_instance_file(&text)?;
    run_decls(config, &decls, out)
}
