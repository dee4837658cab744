//! Run configuration: a line-oriented `key = value` text file.
//!
//! ```text
//! # MMPP(2) with exponential service
//! mmpp.rates = [10, 1/2]
//! mmpp.p     = [8/9, 3/100]        # self probabilities, or a full matrix
//! service    = exp(3)
//! heavy      = abate_whitt(2)
//! eps        = 0.01
//! grid       = geometric(200, 121)
//! variant    = both
//! ```
//!
//! Values are numbers (decimal or rational `p/q`), lists `[a, b]`, matrices
//! as lists of rows, calls `name(args)` or bare words. A value may continue
//! over several lines while brackets are open. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use heavyq_core::base_solver::RationalLST;
use heavyq_core::correction::geometric_grid;
use heavyq_core::heavytail::{abate_whitt, custom_heavytail, SharedTail};
use heavyq_core::model::{build_marp, build_mmpp, MarpModel, MmppSpec};
use heavyq_core::perturbation::Variant;
use heavyq_core::polyalg::C;
use heavyq_core::quad::{integrate_half_line, QuadOptions};
use nalgebra::DMatrix;

const KEYS: &[&str] = &[
    "d1",
    "d2",
    "mmpp.rates",
    "mmpp.p",
    "service",
    "service.q",
    "service.p",
    "heavy",
    "heavy.mean",
    "heavy.t",
    "heavy.survival",
    "heavy.tail_index",
    "eps",
    "grid",
    "variant",
    "simplified",
    "seed",
    "reference",
    "sim.customers",
    "sim.replications",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.path.display(), l, self.msg),
            None => write!(f, "{}: {}", self.path.display(), self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    List(Vec<Value>),
    Call(String, Vec<Value>),
    Word(String),
}

impl Value {
    fn kind(&self) -> &'static str {
        match self {
            Value::Num(_) => "a number",
            Value::List(_) => "a list",
            Value::Call(..) => "a call",
            Value::Word(_) => "a word",
        }
    }
}

/// Parses `p/q`, a decimal, or an exponent form. Integer ratios are divided
/// once so 8/9 is the nearest double to the exact fraction.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b) = (a.trim(), b.trim());
        if let (Ok(p), Ok(q)) = (a.parse::<i64>(), b.parse::<i64>()) {
            return (q != 0).then(|| p as f64 / q as f64);
        }
        let (p, q) = (a.parse::<f64>().ok()?, b.parse::<f64>().ok()?);
        return (q != 0.0 && p.is_finite() && q.is_finite()).then(|| p / q);
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

struct ValueParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> ValueParser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn items(&mut self, close: u8) -> Result<Vec<Value>, String> {
        let mut out = Vec::new();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.value()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(format!("expected ',' or '{}' at column {}", close as char, self.pos + 1)),
            }
        }
    }

    fn value(&mut self) -> Result<Value, String> {
        match self.peek() {
            None => Err("missing value".into()),
            Some(b'[') => {
                self.pos += 1;
                Ok(Value::List(self.items(b']')?))
            }
            Some(_) => {
                let start = self.pos;
                while self.pos < self.src.len() && !b",[]()".contains(&self.src[self.pos]) {
                    self.pos += 1;
                }
                let tok = std::str::from_utf8(&self.src[start..self.pos]).unwrap().trim().to_string();
                if tok.is_empty() {
                    return Err(format!("unexpected '{}' at column {}", self.src[start] as char, start + 1));
                }
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    return Ok(Value::Call(tok, self.items(b')')?));
                }
                if let Some(x) = parse_number(&tok) {
                    Ok(Value::Num(x))
                } else if tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                    Ok(Value::Word(tok))
                } else {
                    Err(format!("cannot read '{tok}' as a number or word"))
                }
            }
        }
    }
}

pub fn parse_value(s: &str) -> Result<Value, String> {
    let mut p = ValueParser { src: s.as_bytes(), pos: 0 };
    let v = p.value()?;
    if p.peek().is_some() {
        return Err(format!("trailing text at column {}", p.pos + 1));
    }
    Ok(v)
}

fn bracket_depth(s: &str) -> i64 {
    s.bytes()
        .map(|c| match c {
            b'[' | b'(' => 1,
            b']' | b')' => -1,
            _ => 0,
        })
        .sum()
}

/// Raw entries, each with the line it starts on.
#[derive(Debug, Clone)]
pub struct Entries {
    pub path: PathBuf,
    map: BTreeMap<String, (usize, Value)>,
}

impl Entries {
    pub fn parse(path: &Path, text: &str) -> Result<Entries, ConfigError> {
        let err = |line: usize, msg: String| ConfigError { path: path.to_path_buf(), line: Some(line), msg };
        let mut map = BTreeMap::new();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("")));
        while let Some((no, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, rest) = line.split_once('=').ok_or_else(|| err(no, "expected 'key = value'".into()))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(err(no, format!("unknown key '{key}'")));
            }
            if map.contains_key(key) {
                return Err(err(no, format!("duplicate key '{key}'")));
            }
            let mut value = rest.to_string();
            while bracket_depth(&value) > 0 {
                match lines.next() {
                    Some((_, more)) => {
                        value.push(' ');
                        value.push_str(more);
                    }
                    None => return Err(err(no, format!("unclosed bracket in '{key}'"))),
                }
            }
            let v = parse_value(&value).map_err(|m| err(no, format!("{key}: {m}")))?;
            map.insert(key.to_string(), (no, v));
        }
        Ok(Entries { path: path.to_path_buf(), map })
    }

    pub fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(l, _)| *l)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.map.get(key).map(|(_, v)| v)
    }

    pub fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn error(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError { path: self.path.clone(), line: self.line(key), msg: msg.into() }
    }

    fn require(&self, key: &str) -> Result<&Value, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError { path: self.path.clone(), line: None, msg: format!("missing key '{key}'") })
    }

    fn num(&self, key: &str, v: &Value) -> Result<f64, ConfigError> {
        match v {
            Value::Num(x) => Ok(*x),
            other => Err(self.error(key, format!("{key}: expected a number, found {}", other.kind()))),
        }
    }

    fn vector(&self, key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
        match v {
            Value::List(xs) => xs.iter().map(|x| self.num(key, x)).collect(),
            Value::Num(x) => Ok(vec![*x]),
            other => Err(self.error(key, format!("{key}: expected a list of numbers, found {}", other.kind()))),
        }
    }

    fn matrix(&self, key: &str, v: &Value) -> Result<DMatrix<f64>, ConfigError> {
        let rows = match v {
            Value::List(rows) if !rows.is_empty() => rows,
            _ => return Err(self.error(key, format!("{key}: expected a matrix as a list of rows"))),
        };
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| self.vector(key, r)).collect::<Result<_, _>>()?;
        let n = rows[0].len();
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(self.error(key, format!("{key}: row {} has {} entries, row 1 has {n}", i + 1, rows[i].len())));
        }
        Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
    }

    fn call_args(&self, key: &str, args: &[Value], n: usize, name: &str) -> Result<Vec<f64>, ConfigError> {
        if args.len() != n {
            return Err(self.error(key, format!("{name} takes {n} argument(s), got {}", args.len())));
        }
        args.iter().map(|a| self.num(key, a)).collect()
    }
}

#[derive(Debug, Clone)]
pub enum ModelSpec {
    Marp { d1: DMatrix<f64>, d2: DMatrix<f64> },
    Mmpp { rates: Vec<f64>, p: MmppSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceSpec {
    Erlang { shape: usize, rate: f64 },
    Hyper { probs: Vec<f64>, rates: Vec<f64> },
    Coeffs { q: Vec<f64>, p: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeavySpec {
    AbateWhitt(f64),
    /// Lomax law with shape α and the given mean.
    Pareto { alpha: f64, mean: f64 },
    /// Excess survival given on knots, linear in between, with a power tail
    /// of the given index after the last knot.
    Table { mean: f64, t: Vec<f64>, survival: Vec<f64>, tail_index: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// The mixture model solved by transform inversion.
    Exact,
    /// The corrected approximation itself; gives an all-zero table.
    Corrected,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Auto,
    Points(Vec<f64>),
    Linear { from: f64, to: f64, n: usize },
    Geometric { t_max: f64, n: usize },
}

impl GridSpec {
    pub fn resolve(&self, auto: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
        match self {
            GridSpec::Auto => auto(),
            GridSpec::Points(p) => p.clone(),
            GridSpec::Linear { from, to, n } => {
                if *n == 1 {
                    return vec![*from];
                }
                (0..*n).map(|i| from + (to - from) * i as f64 / (*n - 1) as f64).collect()
            }
            GridSpec::Geometric { t_max, n } => geometric_grid(*t_max, *n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub entries: Entries,
    pub model: ModelSpec,
    pub service: ServiceSpec,
    pub heavy: Option<HeavySpec>,
    pub eps: f64,
    pub grid: GridSpec,
    pub variants: Vec<Variant>,
    pub simplified: bool,
    pub seed: u64,
    pub reference: Reference,
    pub sim_customers: usize,
    pub sim_replications: usize,
}

pub fn parse_variants(s: &str) -> Option<Vec<Variant>> {
    match s {
        "both" => Some(vec![Variant::Replace, Variant::Discard]),
        other => other.parse::<Variant>().ok().map(|v| vec![v]),
    }
}

fn count(e: &Entries, key: &str, x: f64) -> Result<usize, ConfigError> {
    if x >= 1.0 && x.fract() == 0.0 && x < 1e12 {
        Ok(x as usize)
    } else {
        Err(e.error(key, format!("{key}: expected a positive integer, got {x}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { path: path.to_path_buf(), line: None, msg: format!("cannot read: {e}") })?;
        RunConfig::from_text(path, &text)
    }

    pub fn from_text(path: &Path, text: &str) -> Result<RunConfig, ConfigError> {
        let e = Entries::parse(path, text)?;
        let model = Self::model(&e)?;
        let service = Self::service(&e)?;
        let heavy = if e.has("heavy") { Some(Self::heavy(&e)?) } else { None };
        for k in ["heavy.mean", "heavy.t", "heavy.survival", "heavy.tail_index"] {
            if e.has(k) && heavy.is_none() {
                return Err(e.error(k, format!("'{k}' given without 'heavy'")));
            }
        }
        let eps = match e.get("eps") {
            Some(v) => e.num("eps", v)?,
            None => 0.0,
        };
        let grid = match e.get("grid") {
            None => GridSpec::Auto,
            Some(Value::Word(w)) if w == "auto" => GridSpec::Auto,
            Some(Value::List(_)) => GridSpec::Points(e.vector("grid", e.get("grid").unwrap())?),
            Some(Value::Call(name, args)) if name == "linear" => {
                let a = e.call_args("grid", args, 3, name)?;
                GridSpec::Linear { from: a[0], to: a[1], n: count(&e, "grid", a[2])? }
            }
            Some(Value::Call(name, args)) if name == "geometric" => {
                let a = e.call_args("grid", args, 2, name)?;
                GridSpec::Geometric { t_max: a[0], n: count(&e, "grid", a[1])? }
            }
            Some(_) => {
                return Err(e.error("grid", "grid: expected auto, a list, linear(from, to, n) or geometric(t_max, n)"))
            }
        };
        let variants = match e.get("variant") {
            None => vec![Variant::Replace, Variant::Discard],
            Some(Value::Word(w)) => {
                parse_variants(w).ok_or_else(|| e.error("variant", format!("variant: expected replace, discard or both, got '{w}'")))?
            }
            Some(v) => return Err(e.error("variant", format!("variant: expected a word, found {}", v.kind()))),
        };
        let simplified = Self::flag(&e, "simplified")?.unwrap_or(false);
        let seed = match e.get("seed") {
            Some(v) => {
                let x = e.num("seed", v)?;
                if !(x >= 0.0 && x.fract() == 0.0 && x < 9.0e15) {
                    return Err(e.error("seed", format!("seed: expected a nonnegative integer, got {x}")));
                }
                x as u64
            }
            None => 1,
        };
        let reference = match e.get("reference") {
            None => Reference::Exact,
            Some(Value::Word(w)) if w == "exact" => Reference::Exact,
            Some(Value::Word(w)) if w == "corrected" => Reference::Corrected,
            Some(_) => return Err(e.error("reference", "reference: expected exact or corrected")),
        };
        let sim_customers = match e.get("sim.customers") {
            Some(v) => count(&e, "sim.customers", e.num("sim.customers", v)?)?,
            None => 1_000_000,
        };
        let sim_replications = match e.get("sim.replications") {
            Some(v) => count(&e, "sim.replications", e.num("sim.replications", v)?)?,
            None => 10,
        };
        let cfg = RunConfig {
            entries: e,
            model,
            service,
            heavy,
            eps,
            grid,
            variants,
            simplified,
            seed,
            reference,
            sim_customers,
            sim_replications,
        };
        cfg.check_grid()?;
        Ok(cfg)
    }

    fn check_grid(&self) -> Result<(), ConfigError> {
        let bad = match &self.grid {
            GridSpec::Auto => false,
            GridSpec::Points(p) => p.is_empty() || p.iter().any(|&t| t < 0.0),
            GridSpec::Linear { from, to, .. } => *from < 0.0 || to < from,
            GridSpec::Geometric { t_max, .. } => *t_max <= 0.0,
        };
        if bad {
            return Err(self.entries.error("grid", "grid: points must be nonnegative and nonempty"));
        }
        Ok(())
    }

    fn flag(e: &Entries, key: &str) -> Result<Option<bool>, ConfigError> {
        match e.get(key) {
            None => Ok(None),
            Some(Value::Word(w)) if w == "true" => Ok(Some(true)),
            Some(Value::Word(w)) if w == "false" => Ok(Some(false)),
            Some(_) => Err(e.error(key, format!("{key}: expected true or false"))),
        }
    }

    fn model(e: &Entries) -> Result<ModelSpec, ConfigError> {
        let marp = e.has("d1") || e.has("d2");
        let mmpp = e.has("mmpp.rates") || e.has("mmpp.p");
        if marp && mmpp {
            let key = if e.has("mmpp.rates") { "mmpp.rates" } else { "mmpp.p" };
            return Err(e.error(key, "give either d1/d2 or mmpp.rates/mmpp.p, not both"));
        }
        if marp {
            let d1 = e.matrix("d1", e.require("d1")?)?;
            let d2 = e.matrix("d2", e.require("d2")?)?;
            return Ok(ModelSpec::Marp { d1, d2 });
        }
        if mmpp {
            let rates = e.vector("mmpp.rates", e.require("mmpp.rates")?)?;
            let pv = e.require("mmpp.p")?;
            let p = match pv {
                Value::List(xs) if xs.iter().all(|x| matches!(x, Value::List(_))) => {
                    MmppSpec::Full(e.matrix("mmpp.p", pv)?)
                }
                _ => MmppSpec::SelfProbs(e.vector("mmpp.p", pv)?),
            };
            return Ok(ModelSpec::Mmpp { rates, p });
        }
        Err(ConfigError { path: e.path.clone(), line: None, msg: "no model: give d1/d2 or mmpp.rates/mmpp.p".into() })
    }

    fn service(e: &Entries) -> Result<ServiceSpec, ConfigError> {
        let coeffs = e.has("service.q") || e.has("service.p");
        if coeffs {
            if e.has("service") {
                return Err(e.error("service", "give either service or service.q/service.p, not both"));
            }
            let q = e.vector("service.q", e.require("service.q")?)?;
            let p = e.vector("service.p", e.require("service.p")?)?;
            return Ok(ServiceSpec::Coeffs { q, p });
        }
        match e.require("service")? {
            Value::Call(name, args) if name == "exp" => {
                let a = e.call_args("service", args, 1, name)?;
                Ok(ServiceSpec::Erlang { shape: 1, rate: a[0] })
            }
            Value::Call(name, args) if name == "erlang" => {
                let a = e.call_args("service", args, 2, name)?;
                Ok(ServiceSpec::Erlang { shape: count(e, "service", a[0])?, rate: a[1] })
            }
            Value::Call(name, args) if name == "hyperexp" => {
                if args.len() != 2 {
                    return Err(e.error("service", "hyperexp takes a probability list and a rate list"));
                }
                Ok(ServiceSpec::Hyper { probs: e.vector("service", &args[0])?, rates: e.vector("service", &args[1])? })
            }
            _ => Err(e.error("service", "service: expected exp(rate), erlang(k, rate) or hyperexp([p..], [rate..])")),
        }
    }

    fn heavy(e: &Entries) -> Result<HeavySpec, ConfigError> {
        match e.require("heavy")? {
            Value::Call(name, args) if name == "abate_whitt" => {
                Ok(HeavySpec::AbateWhitt(e.call_args("heavy", args, 1, name)?[0]))
            }
            Value::Call(name, args) if name == "pareto" => {
                let a = e.call_args("heavy", args, 2, name)?;
                if !(a[0] > 1.0) {
                    return Err(e.error("heavy", "pareto: shape must exceed 1 for a finite mean"));
                }
                Ok(HeavySpec::Pareto { alpha: a[0], mean: a[1] })
            }
            Value::Word(w) if w == "table" => {
                let mean = e.num("heavy.mean", e.require("heavy.mean")?)?;
                let t = e.vector("heavy.t", e.require("heavy.t")?)?;
                let survival = e.vector("heavy.survival", e.require("heavy.survival")?)?;
                let tail_index = e.num("heavy.tail_index", e.require("heavy.tail_index")?)?;
                if t.len() != survival.len() || t.len() < 2 {
                    return Err(e.error("heavy.survival", "heavy.t and heavy.survival need the same length, at least 2"));
                }
                if t[0] != 0.0 || survival[0] != 1.0 {
                    return Err(e.error("heavy.t", "the table must start at t = 0 with survival 1"));
                }
                if t.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(e.error("heavy.t", "heavy.t must be strictly increasing"));
                }
                if survival.windows(2).any(|w| w[1] > w[0]) || survival.iter().any(|&s| s <= 0.0) {
                    return Err(e.error("heavy.survival", "heavy.survival must be positive and nonincreasing"));
                }
                if !(tail_index > 0.0) {
                    return Err(e.error("heavy.tail_index", "heavy.tail_index must be positive"));
                }
                Ok(HeavySpec::Table { mean, t, survival, tail_index })
            }
            _ => Err(e.error("heavy", "heavy: expected abate_whitt(kappa), pareto(alpha, mean) or table")),
        }
    }

    pub fn build_model(&self) -> Result<MarpModel, ConfigError> {
        let (res, key) = match &self.model {
            ModelSpec::Marp { d1, d2 } => (build_marp(d1.clone(), d2.clone()), "d1"),
            ModelSpec::Mmpp { rates, p } => (build_mmpp(rates, p), "mmpp.p"),
        };
        res.map_err(|err| {
            let key = match (&err, &self.model) {
                (heavyq_core::Error::ZeroExitRate(_), ModelSpec::Mmpp { .. }) => "mmpp.rates",
                (heavyq_core::Error::NegativeIntensity { row, col, .. }, ModelSpec::Marp { d1, .. })
                    if row == col || d1[(*row, *col)] >= 0.0 =>
                {
                    "d2"
                }
                _ => key,
            };
            self.entries.error(key, err.to_string())
        })
    }

    pub fn build_service(&self) -> Result<RationalLST, ConfigError> {
        let key = if self.entries.has("service") { "service" } else { "service.p" };
        match &self.service {
            ServiceSpec::Erlang { shape, rate } => RationalLST::erlang(*shape, *rate),
            ServiceSpec::Hyper { probs, rates } => RationalLST::hyperexponential(probs, rates),
            ServiceSpec::Coeffs { q, p } => RationalLST::from_coeffs(q, p),
        }
        .map_err(|err| self.entries.error(key, err.to_string()))
    }

    pub fn build_heavy(&self) -> Result<SharedTail, ConfigError> {
        let spec = self.heavy.as_ref().ok_or_else(|| ConfigError {
            path: self.entries.path.clone(),
            line: None,
            msg: "missing key 'heavy'".into(),
        })?;
        let res = match spec {
            HeavySpec::AbateWhitt(k) => abate_whitt(*k),
            HeavySpec::Pareto { alpha, mean } => pareto_tail(*alpha, *mean),
            HeavySpec::Table { mean, t, survival, tail_index } => table_tail(*mean, t, survival, *tail_index),
        };
        res.map_err(|err| self.entries.error("heavy", err.to_string()))
    }
}

fn quad_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-12, rel_tol: 1e-11, max_intervals: 4000 }
}

/// Lomax law: survival (1 + t/σ)^{−α}, σ = mean·(α − 1). Its excess law is
/// Lomax with shape α − 1.
fn pareto_tail(alpha: f64, mean: f64) -> heavyq_core::Result<SharedTail> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(heavyq_core::Error::InvalidParameter(format!("pareto mean {mean} must be positive")));
    }
    let sigma = mean * (alpha - 1.0);
    let b = alpha - 1.0;
    let dens = move |t: f64| b / sigma * (1.0 + t / sigma).powf(-b - 1.0);
    let lst = move |s: C| {
        integrate_half_line(|t| (-s * t).exp() * dens(t), quad_opts()).unwrap_or(C::new(f64::NAN, f64::NAN))
    };
    custom_heavytail(&format!("pareto({alpha}, {mean})"), mean, lst, move |t| (1.0 + t / sigma).powf(-b))
}

/// Piecewise-linear excess survival with a power tail after the last knot.
fn table_tail(mean: f64, t: &[f64], surv: &[f64], beta: f64) -> heavyq_core::Result<SharedTail> {
    let (t, surv) = (t.to_vec(), surv.to_vec());
    let (tl, sl) = (*t.last().unwrap(), *surv.last().unwrap());
    let survival = {
        let (t, surv) = (t.clone(), surv.clone());
        move |x: f64| {
            if x >= tl {
                return sl * (x / tl).powf(-beta);
            }
            let k = t.partition_point(|&k| k <= x) - 1;
            let w = (x - t[k]) / (t[k + 1] - t[k]);
            surv[k] + w * (surv[k + 1] - surv[k])
        }
    };
    let lst = move |s: C| {
        // piecewise-constant density on the knots, exact
        let mut acc = C::new(0.0, 0.0);
        for k in 0..t.len() - 1 {
            let f = (surv[k] - surv[k + 1]) / (t[k + 1] - t[k]);
            let piece = if s.norm() < 1e-12 {
                C::new(t[k + 1] - t[k], 0.0)
            } else {
                ((-s * t[k]).exp() - (-s * t[k + 1]).exp()) / s
            };
            acc += piece * f;
        }
        let tail = integrate_half_line(
            |y| (-s * (tl + y)).exp() * (sl * beta / tl) * (1.0 + y / tl).powf(-beta - 1.0),
            quad_opts(),
        )
        .unwrap_or(C::new(f64::NAN, f64::NAN));
        acc + tail
    };
    custom_heavytail("table", mean, lst, survival)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_text(Path::new("t.cfg"), text)
    }

    #[test]
    fn rationals_are_read_exactly() {
        assert_eq!(parse_number("8/9"), Some(8.0 / 9.0));
        assert_eq!(parse_number(" -3/100 "), Some(-0.03));
        assert_eq!(parse_number("1e-3"), Some(1e-3));
        assert_eq!(parse_number("1/0"), None);
        assert_eq!(parse_number("0.5/2"), Some(0.25));
    }

    #[test]
    fn values_parse() {
        assert_eq!(
            parse_value("[[1, -1/2], [0, 2]]").unwrap(),
            Value::List(vec![
                Value::List(vec![Value::Num(1.0), Value::Num(-0.5)]),
                Value::List(vec![Value::Num(0.0), Value::Num(2.0)])
            ])
        );
        assert_eq!(parse_value("exp(3)").unwrap(), Value::Call("exp".into(), vec![Value::Num(3.0)]));
        assert!(parse_value("[1, 2").is_err());
        assert!(parse_value("1 2").is_err());
    }

    #[test]
    fn multi_line_matrix_and_comments() {
        let c = cfg("# model\nd1 = [[-2, 1],\n      [0, -1]]  # rows\nd2 = [[1, 0], [1, 0]]\nservice = exp(3)\n").unwrap();
        match &c.model {
            ModelSpec::Marp { d1, .. } => assert_eq!(d1[(1, 1)], -1.0),
            _ => panic!(),
        }
        assert_eq!(c.variants.len(), 2);
        assert!(c.build_model().is_ok());
    }

    #[test]
    fn unknown_key_is_anchored() {
        let e = cfg("service = exp(3)\n\nrates = [1]\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().starts_with("t.cfg:3: unknown key"));
    }

    #[test]
    fn row_sum_error_points_at_the_matrix() {
        let c = cfg("service = exp(3)\nd1 = [[-1, 1], [0, -1]]\nd2 = [[0, 0], [1, 1]]\n").unwrap();
        let e = c.build_model().unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.msg.contains("sums to"));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert_eq!(cfg("service = exp(3)\nmmpp.rates = [1]\nmmpp.p = [1]\neps = x/y\n").unwrap_err().line, Some(4));
        assert_eq!(cfg("service = gamma(2)\nmmpp.rates = [1]\nmmpp.p = [1]\n").unwrap_err().line, Some(1));
        assert!(cfg("service = exp(3)\nmmpp.rates = [1]\nmmpp.p = [1]\nvariant = all\n").is_err());
        assert!(cfg("service = exp(3)\nmmpp.rates = [1]\nmmpp.p = [1]\nservice = exp(2)\n").is_err());
        assert!(cfg("service = exp(3)\n").is_err());
    }

    #[test]
    fn grid_forms() {
        assert_eq!(GridSpec::Linear { from: 0.0, to: 1.0, n: 3 }.resolve(Vec::new), vec![0.0, 0.5, 1.0]);
        let g = GridSpec::Geometric { t_max: 10.0, n: 5 }.resolve(Vec::new);
        assert_eq!((g.len(), g[0], *g.last().unwrap()), (5, 0.0, 10.0));
    }

    #[test]
    fn tails_from_config() {
        let base = "service = exp(3)\nmmpp.rates = [1]\nmmpp.p = [1]\n";
        let c = cfg(&format!("{base}heavy = pareto(2.5, 1/2)\n")).unwrap();
        assert!((c.build_heavy().unwrap().mean() - 0.5).abs() < 1e-15);
        let c = cfg(&format!(
            "{base}heavy = table\nheavy.mean = 1/2\nheavy.t = [0, 1, 2]\nheavy.survival = [1, 1/2, 1/4]\nheavy.tail_index = 3/2\n"
        ))
        .unwrap();
        let h = c.build_heavy().unwrap();
        assert!((h.excess_survival(1.5) - 0.375).abs() < 1e-15);
        assert!((h.excess_survival(8.0) - 0.25 * 4f64.powf(-1.5)).abs() < 1e-15);
        let bad = cfg(&format!("{base}heavy = table\nheavy.mean = 1\nheavy.t = [0, 1]\nheavy.survival = [1, 2]\nheavy.tail_index = 1\n"));
        assert!(bad.is_err());
    }
}
