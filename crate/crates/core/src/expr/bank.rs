//! The shipped bank of twenty published normalized-space equations.
//!
//! Transcription choices are listed in `data/TRANSCRIPTION.md`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{parse_expression, Expr};
use crate::error::{Error, Result};

pub const BANK_TEXT: &str = include_str!("../../data/bank.txt");

/// SHA-256 of [`BANK_TEXT`]; loading fails if the file drifts.
pub const BANK_SHA256: &str = "b48e7e8e040cb16d1552e5c48d5b0f45083fb576004cf820fc5e644362a925ab";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqSet {
    Simple,
    Complex,
}

impl EqSet {
    pub fn name(self) -> &'static str {
        match self {
            EqSet::Simple => "simple",
            EqSet::Complex => "complex",
        }
    }
}

impl fmt::Display for EqSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EqSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(EqSet::Simple),
            "complex" => Ok(EqSet::Complex),
            other => Err(Error::InvalidParam(format!("unknown equation set '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub set: EqSet,
    pub n_inputs: usize,
    /// Published test R², kept as printed.
    pub r2_text: String,
    pub expression: Expr,
    /// The expression line exactly as stored.
    pub source: String,
}

impl BankEntry {
    pub fn r2(&self) -> f64 {
        self.r2_text.parse().unwrap_or(f64::NAN)
    }

    /// Human-readable origin label, e.g. "simple set, 3 inputs".
    pub fn anchor(&self) -> String {
        let plural = if self.n_inputs == 1 { "" } else { "s" };
        format!("{} set, {} input{plural}", self.set, self.n_inputs)
    }
}

#[derive(Clone, Debug)]
pub struct EquationBank {
    entries: Vec<BankEntry>,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl EquationBank {
    /// Parses and verifies the embedded bank.
    pub fn load() -> Result<Self> {
        let digest = sha256_hex(BANK_TEXT);
        if digest != BANK_SHA256 {
            return Err(Error::SchemaMismatch(format!("equation bank checksum {digest} does not match {BANK_SHA256}")));
        }
        Self::parse(BANK_TEXT)
    }

    /// Parses bank text without the checksum test. Requires one entry for
    /// every (set, 1..=10) pair.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::SchemaMismatch(format!("bank line {}: {m}", lineno + 1));
            let fields: Vec<&str> = line.splitn(4, ',').collect();
            let [set, n, r2, expr] = fields[..] else {
                return Err(bad("expected set,n_inputs,r2,expression"));
            };
            let set: EqSet = set.parse()?;
            let n_inputs: usize = n.parse().map_err(|_| bad("bad n_inputs"))?;
            r2.parse::<f64>().map_err(|_| bad("bad r2"))?;
            let expression = parse_expression(expr)?;
            if expression.max_variable() > n_inputs {
                return Err(bad("expression references more inputs than declared"));
            }
            entries.push(BankEntry { set, n_inputs, r2_text: r2.to_string(), expression, source: expr.to_string() });
        }
        for set in [EqSet::Simple, EqSet::Complex] {
            for n in 1..=10 {
                let count = entries.iter().filter(|e| e.set == set && e.n_inputs == n).count();
                if count != 1 {
                    return Err(Error::SchemaMismatch(format!("{set} set has {count} entries for {n} inputs")));
                }
            }
        }
        entries.sort_by_key(|e| (e.set, e.n_inputs));
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn lookup(&self, set: EqSet, n_inputs: usize) -> Result<&BankEntry> {
        self.entries
            .iter()
            .find(|e| e.set == set && e.n_inputs == n_inputs)
            .ok_or_else(|| Error::NotFound(format!("{set} equation with {n_inputs} inputs")))
    }
}

/// Looks an entry up in the embedded bank.
pub fn bank_lookup(set: EqSet, n_inputs: usize) -> Result<BankEntry> {
    EquationBank::load()?.lookup(set, n_inputs).cloned()
}
