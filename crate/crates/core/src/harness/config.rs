//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; keys are dotted
//! (`model.kappa`). Every key has a type and a default in [`SCHEMA`]; each
//! subcommand accepts a subset. Validation is total: all problems are
//! collected and returned together before anything runs.

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::model::{Field1, Link, MeasureRef, ModelCoefficients, MomentFunctional};
use crate::policy::Policy;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Float,
    Positive,
    NonNegative,
    Count,
    Choice(&'static [&'static str]),
    Floats,
    Counts,
    Words,
    Bool,
    Text,
}

struct KeySpec {
    key: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn k(key: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec { key, kind, default }
}

const SCHEMA: &[KeySpec] = &[
    k("model.name", Kind::Choice(&["ou-common", "var-a"]), "ou-common"),
    k("model.kappa", Kind::NonNegative, "1.0"),
    k("model.a", Kind::NonNegative, "0.5"),
    k("model.a0", Kind::Positive, "0.5"),
    k("model.a1", Kind::Float, "0.2"),
    k("model.sigma_ind", Kind::Positive, "1.0"),
    k("model.variance_drift", Kind::Float, "0.0"),
    k("model.quartic", Kind::NonNegative, "0.0"),
    k("model.u_min", Kind::Float, "-10.0"),
    k("model.u_max", Kind::Float, "10.0"),
    k("grid.x_min", Kind::Float, "-10.0"),
    k("grid.x_max", Kind::Float, "10.0"),
    k("grid.h", Kind::Positive, "0.05"),
    k("time.T", Kind::Positive, "0.5"),
    k("time.dt", Kind::Positive, "0.002"),
    k("init.mean", Kind::Float, "0.0"),
    k("init.std", Kind::Positive, "1.5"),
    k("seeds.start", Kind::Count, "0"),
    k("seeds.count", Kind::Count, "20"),
    k("workers", Kind::Count, "0"),
    k("policy", Kind::Text, "constant:0"),
    k("particles.n_list", Kind::Counts, "50,100,200,400,800"),
    k("smoothing.bandwidth", Kind::Positive, "0.2"),
    k("spde.method", Kind::Choice(&["ito", "characteristics"]), "ito"),
    k("spde.milstein", Kind::Bool, "true"),
    k("spde.compare", Kind::Bool, "false"),
    k("spde.refine", Kind::Bool, "false"),
    k("output.every", Kind::Count, "10"),
    k("chaos.functionals", Kind::Words, "pair-cos,variance,mean"),
    k("chaos.omega", Kind::Positive, "3.0"),
    k("tagged.u_ind", Kind::Float, "1.0"),
    k("tagged.functionals", Kind::Words, "x,x-mean"),
    k("tagged.antithetic", Kind::Bool, "true"),
    k("generator.n_list", Kind::Counts, "2,5,8,16"),
    k("generator.configs", Kind::Count, "50"),
    k("generator.spread", Kind::Positive, "1.5"),
    k("sensitivity.x1", Kind::Float, "0.6"),
    k("sensitivity.x2", Kind::Float, "-0.5"),
    k("sensitivity.bandwidth", Kind::Positive, "0.2"),
    k("sensitivity.h_bump", Kind::Floats, "0.001"),
    k("sensitivity.h_mixed", Kind::Floats, "0.01,0.005"),
    k("mfg.n_iter", Kind::Count, "30"),
    k("mfg.damping", Kind::NonNegative, "0.5"),
    k("mfg.tol", Kind::NonNegative, "1e-4"),
    k("mfg.refine", Kind::Bool, "false"),
    k("nash.n_list", Kind::Counts, "50,100,200,400"),
    k("nash.deviations", Kind::Words, "shift:0.1,shift:-0.1,shift:0.2,shift:-0.2,scale:0.5,scale:1.5,time-shift:0.2"),
    k("nash.bootstrap", Kind::Count, "1000"),
];

const MODEL: &[&str] = &[
    "model.name",
    "model.kappa",
    "model.a",
    "model.a0",
    "model.a1",
    "model.sigma_ind",
    "model.variance_drift",
    "model.quartic",
    "model.u_min",
    "model.u_max",
];
const SPACE_TIME: &[&str] = &["grid.x_min", "grid.x_max", "grid.h", "time.T", "time.dt", "init.mean", "init.std"];
const SEEDS: &[&str] = &["seeds.start", "seeds.count", "workers"];

/// CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Chaos,
    TaggedChaos,
    GeneratorCheck,
    Sensitivity,
    SpdeSolve,
    MfgFixedPoint,
    Nash,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Chaos => "chaos",
            Command::TaggedChaos => "tagged-chaos",
            Command::GeneratorCheck => "generator-check",
            Command::Sensitivity => "sensitivity",
            Command::SpdeSolve => "spde-solve",
            Command::MfgFixedPoint => "mfg-fixed-point",
            Command::Nash => "nash",
        }
    }

    fn keys(self) -> Vec<&'static str> {
        let mut keys: Vec<&str> = MODEL.to_vec();
        let own: &[&str] = match self {
            Command::Chaos => &["policy", "particles.n_list", "smoothing.bandwidth", "spde.method", "spde.milstein", "chaos.functionals", "chaos.omega"],
            Command::TaggedChaos => &[
                "policy",
                "particles.n_list",
                "smoothing.bandwidth",
                "spde.method",
                "spde.milstein",
                "chaos.omega",
                "tagged.u_ind",
                "tagged.functionals",
                "tagged.antithetic",
            ],
            Command::GeneratorCheck => &["policy", "generator.n_list", "generator.configs", "generator.spread", "seeds.start", "workers"],
            Command::Sensitivity => &["policy", "sensitivity.x1", "sensitivity.x2", "sensitivity.bandwidth", "sensitivity.h_bump", "sensitivity.h_mixed"],
            Command::SpdeSolve => &["policy", "spde.method", "spde.milstein", "spde.compare", "spde.refine", "output.every"],
            Command::MfgFixedPoint => &["mfg.n_iter", "mfg.damping", "mfg.tol", "mfg.refine", "output.every"],
            Command::Nash => &["mfg.n_iter", "mfg.damping", "mfg.tol", "nash.n_list", "nash.deviations", "nash.bootstrap"],
        };
        if self != Command::GeneratorCheck {
            keys.extend_from_slice(SPACE_TIME);
            keys.extend_from_slice(SEEDS);
        }
        keys.extend_from_slice(own);
        keys
    }
}

impl std::str::FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Command::Chaos,
            Command::TaggedChaos,
            Command::GeneratorCheck,
            Command::Sensitivity,
            Command::SpdeSolve,
            Command::MfgFixedPoint,
            Command::Nash,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| Error::Argument(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    F(f64),
    C(usize),
    S(String),
    Fs(Vec<f64>),
    Cs(Vec<usize>),
    Ws(Vec<String>),
    B(bool),
}

impl Value {
    fn canonical(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        match self {
            Value::F(x) => format!("{x:?}"),
            Value::C(n) => n.to_string(),
            Value::S(s) => s.clone(),
            Value::Fs(v) => v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","),
            Value::Cs(v) => join(v),
            Value::Ws(v) => v.join(","),
            Value::B(b) => b.to_string(),
        }
    }
}

fn parse_value(kind: Kind, raw: &str) -> std::result::Result<Value, String> {
    let float = |s: &str| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("{s:?} is not a finite number"));
    let count = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("{s:?} is not a nonnegative integer"));
    let list = |s: &str| s.split(',').map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect::<Vec<_>>();
    match kind {
        Kind::Float => float(raw).map(Value::F),
        Kind::Positive => float(raw).and_then(|x| if x > 0.0 { Ok(Value::F(x)) } else { Err(format!("{x} must be > 0")) }),
        Kind::NonNegative => float(raw).and_then(|x| if x >= 0.0 { Ok(Value::F(x)) } else { Err(format!("{x} must be ≥ 0")) }),
        Kind::Count => count(raw).map(Value::C),
        Kind::Choice(opts) => {
            if opts.contains(&raw) {
                Ok(Value::S(raw.to_string()))
            } else {
                Err(format!("{raw:?} is not one of {}", opts.join(", ")))
            }
        }
        Kind::Floats => {
            let v = list(raw).iter().map(|s| float(s)).collect::<std::result::Result<Vec<_>, _>>()?;
            if v.is_empty() {
                Err("empty list".into())
            } else {
                Ok(Value::Fs(v))
            }
        }
        Kind::Counts => {
            let v = list(raw).iter().map(|s| count(s)).collect::<std::result::Result<Vec<_>, _>>()?;
            if v.is_empty() || v.contains(&0) {
                Err("need a nonempty list of positive integers".into())
            } else {
                Ok(Value::Cs(v))
            }
        }
        Kind::Words => {
            let v = list(raw);
            if v.is_empty() {
                Err("empty list".into())
            } else {
                Ok(Value::Ws(v))
            }
        }
        Kind::Bool => match raw {
            "true" => Ok(Value::B(true)),
            "false" => Ok(Value::B(false)),
            _ => Err(format!("{raw:?} is not true or false")),
        },
        Kind::Text => Ok(Value::S(raw.to_string())),
    }
}

/// Built-in feedback rules selectable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    /// u ≡ c.
    Constant(f64),
    /// u = −k x.
    Linear(f64),
    /// u = −k (x − m₁(μ)).
    MeanReverting(f64),
}

impl PolicySpec {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let (name, param) = s.split_once(':').ok_or_else(|| format!("policy {s:?} is not name:parameter"))?;
        let p: f64 = param.trim().parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| format!("policy parameter {param:?} is not a number"))?;
        match name.trim() {
            "constant" => Ok(PolicySpec::Constant(p)),
            "linear" => Ok(PolicySpec::Linear(p)),
            "mean-reverting" => Ok(PolicySpec::MeanReverting(p)),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

impl Policy for PolicySpec {
    fn control(&self, _t: f64, x: f64, mu: &MeasureRef) -> f64 {
        match *self {
            PolicySpec::Constant(c) => c,
            PolicySpec::Linear(k) => -k * x,
            PolicySpec::MeanReverting(k) => -k * (x - mu.integrate(|y| y)),
        }
    }
    fn measure_dependent(&self) -> bool {
        matches!(self, PolicySpec::MeanReverting(_))
    }
}

/// A validated configuration for one subcommand.
#[derive(Debug, Clone)]
pub struct Config {
    pub command: Command,
    values: BTreeMap<&'static str, Value>,
}

impl Config {
    /// Parses and validates `text` for `command`, applying `overrides`
    /// (`key`, `value`) after the file.
    pub fn parse(command: Command, text: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut errors = Vec::new();
        let allowed = command.keys();
        let mut raw: BTreeMap<&'static str, String> = BTreeMap::new();
        let mut set = |key: &str, value: &str, origin: String, errors: &mut Vec<String>, allow_repeat: bool| {
            let Some(entry) = SCHEMA.iter().find(|s| s.key == key) else {
                errors.push(format!("{origin}: unknown key {key:?}"));
                return;
            };
            if !allowed.contains(&entry.key) {
                errors.push(format!("{origin}: key {key:?} is not used by {}", command.name()));
                return;
            }
            if raw.insert(entry.key, value.to_string()).is_some() && !allow_repeat {
                errors.push(format!("{origin}: duplicate key {key:?}"));
            }
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => set(key.trim(), value.trim(), format!("line {}", i + 1), &mut errors, false),
                None => errors.push(format!("line {}: expected key = value", i + 1)),
            }
        }
        for (key, value) in overrides {
            set(key, value, "command line".into(), &mut errors, true);
        }
        let mut values = BTreeMap::new();
        for key in &allowed {
            let entry = SCHEMA.iter().find(|s| s.key == *key).expect("command keys are in the schema");
            let text = raw.get(key).map(String::as_str).unwrap_or(entry.default);
            match parse_value(entry.kind, text) {
                Ok(v) => {
                    values.insert(entry.key, v);
                }
                Err(e) => errors.push(format!("{key}: {e}")),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let cfg = Config { command, values };
        let semantic = cfg.semantic_errors();
        if semantic.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(semantic))
        }
    }

    /// All defaults for `command`.
    pub fn defaults(command: Command) -> Result<Self> {
        Self::parse(command, "", &[])
    }

    /// Returns a copy with `key` replaced; validation is rerun.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let text = self.canonical_lines();
        Self::parse(self.command, &text, &[(key, value.to_string())])
    }

    fn get(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("{key} is not a key of {}", self.command.name()))
    }

    pub fn f64(&self, key: &str) -> f64 {
        match self.get(key) {
            Value::F(x) => *x,
            v => panic!("{key} is not a number: {v:?}"),
        }
    }
    pub fn usize(&self, key: &str) -> usize {
        match self.get(key) {
            Value::C(n) => *n,
            v => panic!("{key} is not a count: {v:?}"),
        }
    }
    pub fn text(&self, key: &str) -> &str {
        match self.get(key) {
            Value::S(s) => s,
            v => panic!("{key} is not text: {v:?}"),
        }
    }
    pub fn bool(&self, key: &str) -> bool {
        match self.get(key) {
            Value::B(b) => *b,
            v => panic!("{key} is not a flag: {v:?}"),
        }
    }
    pub fn floats(&self, key: &str) -> &[f64] {
        match self.get(key) {
            Value::Fs(v) => v,
            v => panic!("{key} is not a list of numbers: {v:?}"),
        }
    }
    pub fn counts(&self, key: &str) -> &[usize] {
        match self.get(key) {
            Value::Cs(v) => v,
            v => panic!("{key} is not a list of counts: {v:?}"),
        }
    }
    pub fn words(&self, key: &str) -> &[String] {
        match self.get(key) {
            Value::Ws(v) => v,
            v => panic!("{key} is not a list of names: {v:?}"),
        }
    }

    /// Resolved values, excluding `workers`, which never affects results.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.values.iter().filter(|(k, _)| **k != "workers").map(|(k, v)| (k.to_string(), v.canonical())).collect()
    }

    fn canonical_lines(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {}\n", v.canonical())).collect()
    }

    /// SHA-256 over the command name and the sorted resolved lines.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.name().as_bytes());
        h.update(b"\n");
        for (k, v) in self.resolved() {
            h.update(format!("{k} = {v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn workers(&self) -> usize {
        self.usize("workers")
    }

    pub fn model(&self) -> ModelCoefficients {
        let kappa = self.f64("model.kappa");
        let mut c = match self.text("model.name") {
            "var-a" => ModelCoefficients::var_a(kappa, self.f64("model.a0"), self.f64("model.a1")),
            _ => ModelCoefficients::ou_common(kappa, self.f64("model.a")),
        };
        c = c.with_sigma_ind(self.f64("model.sigma_ind")).with_u_box(self.f64("model.u_min"), self.f64("model.u_max"));
        let vd = self.f64("model.variance_drift");
        if vd != 0.0 {
            c.b1 = c.b1.plus(Field1::constant(vd), Some(MomentFunctional::pair_half_sq_diff()), Link::Identity);
        }
        c.running_cost.q = self.f64("model.quartic");
        c
    }

    pub fn grid(&self) -> Grid1D {
        Grid1D::with_spacing(self.f64("grid.x_min"), self.f64("grid.x_max"), self.f64("grid.h")).expect("validated grid")
    }

    pub fn n_steps(&self) -> usize {
        (self.f64("time.T") / self.f64("time.dt")).round() as usize
    }

    pub fn policy(&self) -> PolicySpec {
        PolicySpec::parse(self.text("policy")).expect("validated policy")
    }

    pub fn seeds(&self) -> Vec<u64> {
        let start = self.usize("seeds.start") as u64;
        (0..self.usize("seeds.count") as u64).map(|s| start + s).collect()
    }

    fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn semantic_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        let c = self.command;
        if self.f64("model.u_min") >= self.f64("model.u_max") {
            e.push("model.u_min must be below model.u_max".into());
        }
        if self.text("model.name") == "var-a" && self.f64("model.a0") <= self.f64("model.a1").abs() {
            e.push("var-a needs model.a0 > |model.a1| so that σ_com stays positive".into());
        }
        if self.has("policy") {
            match PolicySpec::parse(self.text("policy")) {
                Err(msg) => e.push(format!("policy: {msg}")),
                Ok(p) => {
                    if let PolicySpec::Constant(u) = p {
                        if u < self.f64("model.u_min") || u > self.f64("model.u_max") {
                            e.push(format!("policy: constant {u} outside the control box"));
                        }
                    }
                    if matches!(c, Command::Sensitivity) && p.measure_dependent() {
                        e.push("policy: the sensitivity equations need a measure-free policy".into());
                    }
                }
            }
        }
        if self.has("grid.h") {
            let (lo, hi, h) = (self.f64("grid.x_min"), self.f64("grid.x_max"), self.f64("grid.h"));
            if lo >= hi {
                e.push("grid.x_min must be below grid.x_max".into());
            } else if ((hi - lo) / h).round() < 4.0 {
                e.push("grid needs at least 5 nodes".into());
            } else if let Ok(grid) = Grid1D::with_spacing(lo, hi, h) {
                let dt = self.f64("time.dt");
                let steps = self.f64("time.T") / dt;
                if (steps - steps.round()).abs() > 1e-6 || steps.round() < 1.0 {
                    e.push(format!("time.T must be a positive multiple of time.dt (T/dt = {steps})"));
                }
                let model = self.model();
                let d_max = grid.points().iter().map(|x| model.sigma_tot2(*x)).fold(0.0, f64::max);
                // Worst-case diffusive limit; the advective limit is checked per step.
                let mut limit = grid.h() * grid.h() / d_max;
                if c == Command::SpdeSolve && self.bool("spde.refine") {
                    limit /= 2.0;
                }
                if dt > limit * (1.0 + 1e-12) {
                    e.push(format!("time.dt = {dt} violates the diffusive CFL bound h²/max σ² = {limit}"));
                }
                if let Err(err) = model.validate(&grid) {
                    e.push(format!("model: {err}"));
                }
            }
        }
        if self.has("seeds.count") && self.usize("seeds.count") == 0 {
            e.push("seeds.count must be positive".into());
        }
        match c {
            Command::Chaos => {
                for f in self.words("chaos.functionals") {
                    if super::chaos::chaos_functional(f, 1.0).is_none() {
                        e.push(format!("chaos.functionals: unknown functional {f:?}"));
                    }
                }
                if self.usize("seeds.count") < 2 {
                    e.push("chaos needs at least 2 seeds".into());
                }
            }
            Command::TaggedChaos => {
                for f in self.words("tagged.functionals") {
                    if super::chaos::TaggedFunctional::parse(f, 1.0).is_none() {
                        e.push(format!("tagged.functionals: unknown functional {f:?}"));
                    }
                }
                let u = self.f64("tagged.u_ind");
                if u < self.f64("model.u_min") || u > self.f64("model.u_max") {
                    e.push("tagged.u_ind outside the control box".into());
                }
                if self.usize("seeds.count") < 2 {
                    e.push("tagged-chaos needs at least 2 seeds".into());
                }
            }
            Command::GeneratorCheck => {
                if let Some(n) = self.counts("generator.n_list").iter().find(|n| **n > crate::generators::MAX_FD_PARTICLES) {
                    e.push(format!("generator.n_list: N = {n} exceeds {}", crate::generators::MAX_FD_PARTICLES));
                }
                if self.usize("generator.configs") == 0 {
                    e.push("generator.configs must be positive".into());
                }
            }
            Command::Sensitivity => {
                if self.floats("sensitivity.h_bump").iter().chain(self.floats("sensitivity.h_mixed")).any(|h| *h <= 0.0) {
                    e.push("sensitivity bump sizes must be positive".into());
                }
            }
            Command::MfgFixedPoint | Command::Nash => {
                if self.f64("mfg.damping") > 1.0 {
                    e.push("mfg.damping must lie in [0, 1]".into());
                }
                if self.usize("mfg.n_iter") == 0 {
                    e.push("mfg.n_iter must be positive".into());
                }
                if c == Command::Nash {
                    if self.model().has_common_noise() {
                        e.push("nash needs a model without common noise (model.a = 0 with ou-common)".into());
                    }
                    for d in self.words("nash.deviations") {
                        if super::games::parse_deviation(d).is_none() {
                            e.push(format!("nash.deviations: cannot parse {d:?}"));
                        }
                    }
                    if self.usize("seeds.count") < 2 {
                        e.push("nash needs at least 2 seeds".into());
                    }
                    if self.usize("nash.bootstrap") == 0 {
                        e.push("nash.bootstrap must be positive".into());
                    }
                }
            }
            Command::SpdeSolve => {}
        }
        if self.has("output.every") && self.usize("output.every") == 0 {
            e.push("output.every must be positive".into());
        }
        e
    }
}
