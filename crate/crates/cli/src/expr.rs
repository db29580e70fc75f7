//! Tiny expression language for initial data and time-independent sources.
//!
//! An expression is a `+`-separated sum of terms `[a*]atom`, where `atom` is
//! one of `zero`, `one`, `bump` (`∏ xᵢ(1−xᵢ)`) or `sine(k)` (`∏ sin(kπxᵢ)`).
//! A leading `-` negates a term.

use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Atom {
    One,
    Bump,
    Sine(u32),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expr {
    terms: Vec<(f64, Atom)>,
    text: String,
}

impl Expr {
    pub fn zero() -> Self {
        Self {
            terms: Vec::new(),
            text: "zero".into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let src = text.trim();
        if src.is_empty() {
            return Err("empty expression".into());
        }
        let mut terms = Vec::new();
        for raw in split_terms(src) {
            let (neg, body) = match raw.strip_prefix('-') {
                Some(rest) => (true, rest.trim()),
                None => (false, raw.trim_start_matches('+').trim()),
            };
            let (coef, atom) = match body.split_once('*') {
                Some((c, a)) => (
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("bad coefficient '{}' in '{src}'", c.trim()))?,
                    a.trim(),
                ),
                None => (1.0, body),
            };
            if !coef.is_finite() {
                return Err(format!("non-finite coefficient in '{src}'"));
            }
            let coef = if neg { -coef } else { coef };
            if let Some(a) = parse_atom(atom)? {
                terms.push((coef, a));
            }
        }
        Ok(Self {
            terms,
            text: src.to_string(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(c, _)| *c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, a)| {
                c * match a {
                    Atom::One => 1.0,
                    Atom::Bump => x.iter().map(|s| s * (1.0 - s)).product(),
                    Atom::Sine(k) => x.iter().map(|s| (*k as f64 * PI * s).sin()).product(),
                }
            })
            .sum()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn split_terms(src: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = src.as_bytes();
    let mut depth = 0;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'+' | b'-' if depth == 0 && i > start && !is_exponent(bytes, i) => {
                out.push(&src[start..i]);
                start = i;
            }
            _ => {}
        }
    }
    out.push(&src[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

// `1e-3`: the sign belongs to the number.
fn is_exponent(bytes: &[u8], i: usize) -> bool {
    i >= 2 && matches!(bytes[i - 1], b'e' | b'E') && bytes[i - 2].is_ascii_digit()
}

fn parse_atom(atom: &str) -> Result<Option<Atom>, String> {
    let a = atom.to_ascii_lowercase();
    match a.as_str() {
        "zero" | "0" => return Ok(None),
        "one" | "1" => return Ok(Some(Atom::One)),
        "bump" => return Ok(Some(Atom::Bump)),
        _ => {}
    }
    if let Some(inner) = a.strip_prefix("sine(").and_then(|r| r.strip_suffix(')')) {
        let k: u32 = inner
            .trim()
            .parse()
            .map_err(|_| format!("sine wavenumber must be a positive integer, got '{inner}'"))?;
        if k == 0 {
            return Err("sine wavenumber must be positive".into());
        }
        return Ok(Some(Atom::Sine(k)));
    }
    Err(format!("unknown expression '{atom}' (expected zero, one, bump or sine(k))"))
}
