//! Run configuration: a line-oriented `key = value` format with `[section]`
//! headers and `#` / `;` comments.
//!
//! ```text
//! command = solve
//! seed = 0
//!
//! [spec]
//! kind = power        # power | exp | quadform
//! p = 2
//!
//! [space]
//! kind = spectral1d   # fem1d | fem2d | spectral1d
//! m = 16
//!
//! [time]
//! T = 1
//! N = 100
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use nlwave::harness::builtin_case;
use nlwave::{NFunctionSpec, SpaceKind};

use crate::expr::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    ConvergeTime,
    ConvergeSpace,
    VerifyOrlicz,
    VerifyNfun,
    ProbeUnique,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Solve,
        Command::ConvergeTime,
        Command::ConvergeSpace,
        Command::VerifyOrlicz,
        Command::VerifyNfun,
        Command::ProbeUnique,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::ConvergeTime => "converge-time",
            Command::ConvergeSpace => "converge-space",
            Command::VerifyOrlicz => "verify-orlicz",
            Command::VerifyNfun => "verify-nfun",
            Command::ProbeUnique => "probe-unique",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One problem found in a config, with its 1-based line when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TimeBlock {
    pub final_time: f64,
    pub steps: Option<usize>,
    pub tau: Option<f64>,
    pub taus: Vec<f64>,
}

impl TimeBlock {
    /// `(τ, N)` for single runs.
    pub fn single(&self) -> Option<(f64, usize)> {
        match (self.tau, self.steps) {
            (Some(t), Some(n)) => Some((t, n)),
            (None, Some(n)) => Some((self.final_time / n as f64, n)),
            (Some(t), None) => Some((t, (self.final_time / t).round() as usize)),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverBlock {
    pub newton_rel_tol: f64,
    pub newton_abs_tol: Option<f64>,
    pub newton_max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct CheckBlock {
    pub rate_min: Option<f64>,
    pub rate_max: Option<f64>,
    pub estimate_two_max_variation: Option<f64>,
    pub probe_scale: f64,
    pub samples: usize,
    pub radius: Option<f64>,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Given directly or implied by the case.
    pub spec: Option<NFunctionSpec>,
    pub space: Option<SpaceKind>,
    pub resolutions: Vec<usize>,
    pub time: TimeBlock,
    pub case: Option<String>,
    pub u0: Expr,
    pub v0: Expr,
    pub source: Expr,
    pub solver: SolverBlock,
    pub check: CheckBlock,
    entries: Entries,
}

type Entries = BTreeMap<(String, String), (String, usize)>;

const KEYS: &[(&str, &[&str])] = &[
    ("", &["command", "seed", "out"]),
    ("spec", &["kind", "p", "dim", "matrix"]),
    ("space", &["kind", "resolution", "m", "modes", "cells", "nx", "ny", "resolutions"]),
    ("time", &["T", "N", "tau", "taus"]),
    ("case", &["name", "u0", "v0", "source"]),
    ("solver", &["newton_rel_tol", "newton_abs_tol", "newton_max_iter"]),
    (
        "check",
        &["rate_min", "rate_max", "estimate_two_max_variation", "probe_scale", "samples", "radius"],
    ),
];

struct Reader {
    entries: Entries,
    issues: Vec<ConfigIssue>,
}

impl Reader {
    fn issue(&mut self, line: Option<usize>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            line,
            message: message.into(),
        });
    }

    fn raw(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|(v, l)| (v.as_str(), *l))
    }

    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.raw(section, key).map(|(_, l)| l)
    }

    fn has_section(&self, section: &str) -> bool {
        self.entries.keys().any(|(s, _)| s == section)
    }

    fn parsed<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<T> {
        let (v, line) = self.raw(section, key)?;
        let v = v.to_string();
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.issue(Some(line), format!("{} expects {what}, got '{v}'", qualified(section, key)));
                None
            }
        }
    }

    fn float(&mut self, section: &str, key: &str) -> Option<f64> {
        let x: f64 = self.parsed(section, key, "a number")?;
        if x.is_finite() {
            Some(x)
        } else {
            let line = self.line_of(section, key);
            self.issue(line, format!("{} must be finite", qualified(section, key)));
            None
        }
    }

    fn positive(&mut self, section: &str, key: &str) -> Option<f64> {
        let x = self.float(section, key)?;
        if x > 0.0 {
            Some(x)
        } else {
            let line = self.line_of(section, key);
            self.issue(line, format!("{} must be positive, got {x}", qualified(section, key)));
            None
        }
    }

    fn count(&mut self, section: &str, key: &str) -> Option<usize> {
        let n: usize = self.parsed(section, key, "a non-negative integer")?;
        if n == 0 {
            let line = self.line_of(section, key);
            self.issue(line, format!("{} must be at least 1", qualified(section, key)));
            return None;
        }
        Some(n)
    }

    fn list<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<Vec<T>> {
        let (v, line) = self.raw(section, key)?;
        let v = v.to_string();
        let mut out = Vec::new();
        for item in v.split([',', ' ', '\t']).filter(|s| !s.is_empty()) {
            match item.parse::<T>() {
                Ok(x) => out.push(x),
                Err(_) => {
                    self.issue(Some(line), format!("{} expects a list of {what}, got '{item}'", qualified(section, key)));
                    return None;
                }
            }
        }
        if out.is_empty() {
            self.issue(Some(line), format!("{} is empty", qualified(section, key)));
            return None;
        }
        Some(out)
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        format!("'{key}'")
    } else {
        format!("'{section}.{key}'")
    }
}

fn lex(text: &str) -> (Entries, Vec<ConfigIssue>) {
    let mut entries = Entries::new();
    let mut issues = Vec::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find(['#', ';']) {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(n) if KEYS.iter().any(|(s, _)| !s.is_empty() && *s == n.trim()) => section = n.trim().to_string(),
                Some(n) => {
                    issues.push(ConfigIssue {
                        line: Some(line),
                        message: format!("unknown section '[{}]'", n.trim()),
                    });
                    section = format!("?{}", n.trim());
                }
                None => issues.push(ConfigIssue {
                    line: Some(line),
                    message: format!("malformed section header '{content}'"),
                }),
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            issues.push(ConfigIssue {
                line: Some(line),
                message: format!("expected 'key = value', got '{content}'"),
            });
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if section.starts_with('?') {
            continue;
        }
        let allowed = KEYS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key.as_str()) {
            let place = if section.is_empty() {
                "at top level".to_string()
            } else {
                format!("in [{section}]")
            };
            issues.push(ConfigIssue {
                line: Some(line),
                message: format!("unknown key '{key}' {place}"),
            });
            continue;
        }
        if let Some((_, first)) = entries.get(&(section.clone(), key.clone())) {
            issues.push(ConfigIssue {
                line: Some(line),
                message: format!("duplicate key {} (first set on line {first})", qualified(&section, &key)),
            });
            continue;
        }
        entries.insert((section.clone(), key), (value, line));
    }
    (entries, issues)
}

/// Parses and validates a config. Every problem found is reported, each with
/// its line number when it has one.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let (entries, issues) = lex(text);
    let mut r = Reader { entries, issues };

    let command = match r.raw("", "command") {
        Some((v, line)) => {
            let v = v.to_string();
            let c = Command::from_name(&v);
            if c.is_none() {
                r.issue(Some(line), format!("unknown command '{v}'"));
            }
            c
        }
        None => None,
    };
    let seed = r.parsed::<u64>("", "seed", "a non-negative integer").unwrap_or(0);
    let out = r.raw("", "out").map(|(v, _)| PathBuf::from(v));

    let space = read_space(&mut r);
    let resolutions = r.list::<usize>("space", "resolutions", "positive integers").unwrap_or_default();
    if let Some(line) = r.line_of("space", "resolutions") {
        if resolutions.contains(&0) {
            r.issue(Some(line), "'space.resolutions' entries must be at least 1");
        }
    }

    let case = r.raw("case", "name").map(|(v, l)| (v.to_string(), l));
    let mut case_dim_time = None;
    if let Some((name, line)) = &case {
        match builtin_case(name) {
            Ok(c) => case_dim_time = Some((c.spec.clone(), c.final_time)),
            Err(e) => r.issue(Some(*line), format!("'case.name': {e} (built-in cases: c1, c2, c3, nonmonotone)")),
        }
        for key in ["u0", "v0", "source"] {
            if let Some(l) = r.line_of("case", key) {
                r.issue(Some(l), format!("'case.{key}' cannot be combined with a built-in case"));
            }
        }
        if r.has_section("spec") {
            let l = r.entries.iter().find(|((s, _), _)| s == "spec").map(|(_, (_, l))| *l);
            r.issue(l, format!("case '{name}' fixes its own N-function; remove the [spec] block"));
        }
    }

    let spec_dim_hint = space.map(|k| if matches!(k, SpaceKind::FemP1_2D { .. }) { 2 } else { 1 });
    let spec = match &case_dim_time {
        Some((s, _)) => Some(s.clone()),
        None if r.has_section("spec") => read_spec(&mut r, spec_dim_hint),
        None => None,
    };

    if let (Some(s), Some(k)) = (&spec, space) {
        let sd = if matches!(k, SpaceKind::FemP1_2D { .. }) { 2 } else { 1 };
        if s.dim() != sd {
            let line = r.line_of("space", "kind");
            let from = if case.is_some() { "case" } else { "spec" };
            r.issue(
                line,
                format!("{from} N-function has dimension {} but space '{}' is {sd}-dimensional", s.dim(), k.label()),
            );
        }
    }

    let time = read_time(&mut r, case_dim_time.as_ref().map(|(_, t)| *t));

    let expr = |r: &mut Reader, key: &str| -> Expr {
        match r.raw("case", key) {
            Some((v, line)) => {
                let v = v.to_string();
                Expr::parse(&v).unwrap_or_else(|e| {
                    r.issue(Some(line), format!("'case.{key}': {e}"));
                    Expr::zero()
                })
            }
            None => Expr::zero(),
        }
    };
    let (u0, v0, source) = (expr(&mut r, "u0"), expr(&mut r, "v0"), expr(&mut r, "source"));

    let solver = SolverBlock {
        newton_rel_tol: r.positive("solver", "newton_rel_tol").unwrap_or(1e-11),
        newton_abs_tol: r.positive("solver", "newton_abs_tol"),
        newton_max_iter: r.count("solver", "newton_max_iter").unwrap_or(50),
    };
    let check = CheckBlock {
        rate_min: r.float("check", "rate_min"),
        rate_max: r.float("check", "rate_max"),
        estimate_two_max_variation: r.positive("check", "estimate_two_max_variation"),
        probe_scale: r.positive("check", "probe_scale").unwrap_or(1.0),
        samples: r.count("check", "samples").unwrap_or(100),
        radius: r.positive("check", "radius"),
    };
    if let (Some(lo), Some(hi)) = (check.rate_min, check.rate_max) {
        if lo > hi {
            let line = r.line_of("check", "rate_min");
            r.issue(line, format!("'check.rate_min' ({lo}) exceeds 'check.rate_max' ({hi})"));
        }
    }

    if !r.issues.is_empty() {
        r.issues.sort_by_key(|i| i.line.unwrap_or(usize::MAX));
        return Err(ConfigError { issues: r.issues });
    }
    Ok(RunConfig {
        command,
        seed,
        out,
        spec,
        space,
        resolutions,
        time,
        case: case.map(|c| c.0),
        u0,
        v0,
        source,
        solver,
        check,
        entries: r.entries,
    })
}

fn read_space(r: &mut Reader) -> Option<SpaceKind> {
    let (kind, kind_line) = match r.raw("space", "kind") {
        Some((k, l)) => (k.to_ascii_lowercase(), l),
        None => {
            if r.has_section("space") {
                r.issue(None, "[space] block needs 'kind'");
            }
            return None;
        }
    };
    let resolution = |r: &mut Reader, keys: &[&str]| -> Option<Option<usize>> {
        let given: Vec<&str> = keys.iter().copied().filter(|k| r.raw("space", k).is_some()).collect();
        match given.as_slice() {
            [] => Some(None),
            [k] => r.count("space", k).map(Some),
            [a, b, ..] => {
                let line = r.line_of("space", b);
                r.issue(line, format!("'space.{a}' and 'space.{b}' both set the resolution"));
                None
            }
        }
    };
    let misplaced = |r: &mut Reader, keys: &[&str], label: &str| {
        for k in keys {
            if let Some(l) = r.line_of("space", k) {
                r.issue(Some(l), format!("'space.{k}' does not apply to {label}"));
            }
        }
    };
    let need = |r: &mut Reader, n: Option<usize>, what: &str| -> Option<usize> {
        if n.is_none() && r.raw("space", "resolutions").is_none() {
            r.issue(Some(kind_line), format!("space '{what}' needs a resolution"));
        }
        Some(n.unwrap_or(1))
    };
    match kind.as_str() {
        "fem1d" => {
            misplaced(r, &["m", "modes", "nx", "ny"], "fem1d");
            let n = resolution(r, &["resolution", "cells"])?;
            Some(SpaceKind::FemP1_1D { cells: need(r, n, "fem1d")? })
        }
        "spectral1d" => {
            misplaced(r, &["cells", "nx", "ny"], "spectral1d");
            let n = resolution(r, &["resolution", "m", "modes"])?;
            Some(SpaceKind::Spectral1D { modes: need(r, n, "spectral1d")? })
        }
        "fem2d" => {
            misplaced(r, &["m", "modes", "cells"], "fem2d");
            let n = resolution(r, &["resolution"])?;
            let nx = r.count("space", "nx");
            let ny = r.count("space", "ny");
            let base = n.or(nx).or(ny);
            let base = need(r, base, "fem2d")?;
            Some(SpaceKind::FemP1_2D {
                nx: nx.or(n).unwrap_or(base),
                ny: ny.or(n).unwrap_or(base),
            })
        }
        other => {
            r.issue(
                Some(kind_line),
                format!("unknown space kind '{other}' (expected fem1d, fem2d or spectral1d)"),
            );
            None
        }
    }
}

fn read_spec(r: &mut Reader, dim_hint: Option<usize>) -> Option<NFunctionSpec> {
    let (kind, kind_line) = match r.raw("spec", "kind") {
        Some((k, l)) => (k.to_ascii_lowercase(), l),
        None => {
            r.issue(None, "[spec] block needs 'kind'");
            return None;
        }
    };
    let dim = match r.raw("spec", "dim") {
        Some(_) => r.count("spec", "dim")?,
        None => dim_hint.unwrap_or(1),
    };
    let forbid = |r: &mut Reader, key: &str, label: &str| {
        if let Some(l) = r.line_of("spec", key) {
            r.issue(Some(l), format!("'spec.{key}' does not apply to {label}"));
        }
    };
    let built = match kind.as_str() {
        "power" => {
            forbid(r, "matrix", "power");
            let Some(p) = r.float("spec", "p") else {
                if r.raw("spec", "p").is_none() {
                    r.issue(Some(kind_line), "power N-function needs 'p'");
                }
                return None;
            };
            NFunctionSpec::power(p, dim).map_err(|e| (r.line_of("spec", "p"), e))
        }
        "exp" => {
            forbid(r, "matrix", "exp");
            forbid(r, "p", "exp");
            NFunctionSpec::exp(dim).map_err(|e| (Some(kind_line), e))
        }
        "quadform" => {
            forbid(r, "p", "quadform");
            let Some(rows) = r.list::<f64>("spec", "matrix", "numbers") else {
                if r.raw("spec", "matrix").is_none() {
                    r.issue(Some(kind_line), "quadform N-function needs 'matrix' (row-major)");
                }
                return None;
            };
            let n = (rows.len() as f64).sqrt().round() as usize;
            let line = r.line_of("spec", "matrix");
            if n * n != rows.len() {
                r.issue(line, format!("'spec.matrix' has {} entries, not a square matrix", rows.len()));
                return None;
            }
            if r.raw("spec", "dim").is_some() && n != dim {
                let l = r.line_of("spec", "dim");
                r.issue(l, format!("'spec.dim' = {dim} but 'spec.matrix' is {n}x{n}"));
                return None;
            }
            NFunctionSpec::quad_form(n, &rows).map_err(|e| (line, e))
        }
        other => {
            r.issue(
                Some(kind_line),
                format!("unknown N-function kind '{other}' (expected power, exp or quadform)"),
            );
            return None;
        }
    };
    match built {
        Ok(s) => Some(s),
        Err((line, e)) => {
            r.issue(line, format!("[spec]: {e}"));
            None
        }
    }
}

fn read_time(r: &mut Reader, case_time: Option<f64>) -> TimeBlock {
    let t_given = r.positive("time", "T");
    let final_time = match (t_given, case_time) {
        (Some(t), Some(ct)) if (t - ct).abs() > 1e-12 => {
            let line = r.line_of("time", "T");
            r.issue(line, format!("'time.T' = {t} but the case is posed up to T = {ct}"));
            t
        }
        (Some(t), _) => t,
        (None, Some(ct)) => ct,
        (None, None) => 1.0,
    };
    let steps = r.count("time", "N");
    let tau = r.positive("time", "tau");
    if let (Some(tau), Some(n)) = (tau, steps) {
        let product = tau * n as f64;
        if (product - final_time).abs() > 1e-12 * final_time.max(1.0) {
            let (lt, ln) = (r.line_of("time", "tau"), r.line_of("time", "N"));
            let t_src = match r.line_of("time", "T") {
                Some(l) => format!("'time.T' (line {l})"),
                None => "the final time".into(),
            };
            r.issue(
                lt.min(ln),
                format!(
                    "'time.tau' (line {}) times 'time.N' (line {}) is {product}, which does not equal {t_src} = {final_time}",
                    lt.unwrap_or(0),
                    ln.unwrap_or(0)
                ),
            );
        }
    } else if let Some(tau) = tau {
        check_divides(r, "tau", tau, final_time);
    }
    let taus = r.list::<f64>("time", "taus", "numbers").unwrap_or_default();
    for &t in &taus {
        if t <= 0.0 || !t.is_finite() {
            let line = r.line_of("time", "taus");
            r.issue(line, format!("'time.taus' entries must be positive and finite, got {t}"));
        } else {
            check_divides(r, "taus", t, final_time);
        }
    }
    TimeBlock {
        final_time,
        steps,
        tau,
        taus,
    }
}

fn check_divides(r: &mut Reader, key: &str, tau: f64, final_time: f64) {
    let n = (final_time / tau).round();
    if n < 1.0 || (n * tau - final_time).abs() > 1e-12 * final_time.max(1.0) {
        let line = r.line_of("time", key);
        r.issue(
            line,
            format!("'time.{key}' entry {tau} does not divide the final time {final_time} into whole steps"),
        );
    }
}

impl RunConfig {
    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.entries.get(&(section.to_string(), key.to_string())).map(|(_, l)| *l)
    }

    /// Checks that the blocks `command` needs are present.
    pub fn require(&self, command: Command) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        if let Some(c) = self.command {
            if c != command {
                issues.push(ConfigIssue {
                    line: self.line("", "command"),
                    message: format!("config is for '{c}' but '{command}' was requested"),
                });
            }
        }
        let mut need = |ok: bool, msg: String| {
            if !ok {
                issues.push(ConfigIssue { line: None, message: msg });
            }
        };
        match command {
            Command::Solve => {
                need(self.spec.is_some(), format!("{command} needs a [spec] block or a built-in case"));
                need(self.space.is_some(), format!("{command} needs a [space] block"));
                need(self.time.single().is_some(), format!("{command} needs 'time.N' or 'time.tau'"));
            }
            Command::ConvergeTime => {
                need(self.case.is_some(), format!("{command} needs 'case.name'"));
                need(self.space.is_some(), format!("{command} needs a [space] block"));
                need(self.time.taus.len() >= 2, format!("{command} needs at least two entries in 'time.taus'"));
            }
            Command::ConvergeSpace => {
                need(self.case.is_some(), format!("{command} needs 'case.name'"));
                need(self.space.is_some(), format!("{command} needs 'space.kind'"));
                need(self.resolutions.len() >= 2, format!("{command} needs at least two entries in 'space.resolutions'"));
                need(self.time.single().is_some(), format!("{command} needs 'time.N' or 'time.tau'"));
            }
            Command::VerifyOrlicz | Command::VerifyNfun => {
                need(self.spec.is_some(), format!("{command} needs a [spec] block"));
            }
            Command::ProbeUnique => {
                need(self.case.is_some(), format!("{command} needs 'case.name'"));
                need(self.space.is_some(), format!("{command} needs a [space] block"));
                need(self.time.single().is_some(), format!("{command} needs 'time.N' or 'time.tau'"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// The base space with its resolution replaced.
    pub fn space_at(&self, resolution: usize) -> Option<SpaceKind> {
        self.space.map(|k| match k {
            SpaceKind::FemP1_1D { .. } => SpaceKind::FemP1_1D { cells: resolution },
            SpaceKind::FemP1_2D { .. } => SpaceKind::FemP1_2D {
                nx: resolution,
                ny: resolution,
            },
            SpaceKind::Spectral1D { .. } => SpaceKind::Spectral1D { modes: resolution },
        })
    }
}
