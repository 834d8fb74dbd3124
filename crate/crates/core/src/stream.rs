//! Stream data model and the line-oriented stream file format.
//!
//! ```text
//! H n=<n> m=<m>          optional header
//! # comment
//! I <i>                  insert
//! F <i>                  forget
//! G <i> <op>[:<c>]       contraction: zero | halve | sub:<c> | cap:<c> | sqrtf
//! PD <t> <i>             delete insertions of i at time <= t
//! SD <t> <i>             delete insertions of i at time >= t
//! ```
//!
//! An update's time is its 1-based line number unless the line carries an
//! explicit `@<t>` suffix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-coordinate function with `g(0) = 0` and `|g(x) - g(y)| <= |x - y|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContractionOp {
    Zero,
    Halve,
    Subtract(u64),
    Cap(u64),
    SqrtFloor,
}

impl ContractionOp {
    pub fn apply(self, x: u64) -> u64 {
        match self {
            ContractionOp::Zero => 0,
            ContractionOp::Halve => x / 2,
            ContractionOp::Subtract(c) => x.saturating_sub(c),
            ContractionOp::Cap(c) => x.min(c),
            ContractionOp::SqrtFloor => x.isqrt(),
        }
    }
}

impl fmt::Display for ContractionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContractionOp::Zero => write!(f, "zero"),
            ContractionOp::Halve => write!(f, "halve"),
            ContractionOp::Subtract(c) => write!(f, "sub:{c}"),
            ContractionOp::Cap(c) => write!(f, "cap:{c}"),
            ContractionOp::SqrtFloor => write!(f, "sqrtf"),
        }
    }
}

impl FromStr for ContractionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let param = |arg: Option<&str>| -> Result<u64> {
            arg.ok_or_else(|| Error::UnsupportedOp(format!("{name} needs a parameter")))?
                .parse()
                .map_err(|_| Error::UnsupportedOp(s.to_string()))
        };
        match (name, arg) {
            ("zero", None) => Ok(ContractionOp::Zero),
            ("halve", None) => Ok(ContractionOp::Halve),
            ("sqrtf", None) => Ok(ContractionOp::SqrtFloor),
            ("sub", a) => Ok(ContractionOp::Subtract(param(a)?)),
            ("cap", a) => Ok(ContractionOp::Cap(param(a)?)),
            _ => Err(Error::UnsupportedOp(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpdateKind {
    Insert,
    Forget,
    Apply(ContractionOp),
    PrefixDelete { cutoff: u64 },
    SuffixDelete { cutoff: u64 },
}

/// One stream event on coordinate `index` at logical time `time`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Update {
    pub kind: UpdateKind,
    pub index: u64,
    pub time: u64,
}

impl Update {
    pub fn insert(index: u64, time: u64) -> Self {
        Self { kind: UpdateKind::Insert, index, time }
    }

    pub fn forget(index: u64, time: u64) -> Self {
        Self { kind: UpdateKind::Forget, index, time }
    }

    pub fn apply(index: u64, op: ContractionOp, time: u64) -> Self {
        Self { kind: UpdateKind::Apply(op), index, time }
    }

    pub fn prefix_delete(index: u64, cutoff: u64, time: u64) -> Self {
        Self { kind: UpdateKind::PrefixDelete { cutoff }, index, time }
    }

    pub fn suffix_delete(index: u64, cutoff: u64, time: u64) -> Self {
        Self { kind: UpdateKind::SuffixDelete { cutoff }, index, time }
    }

    fn body(&self) -> String {
        match self.kind {
            UpdateKind::Insert => format!("I {}", self.index),
            UpdateKind::Forget => format!("F {}", self.index),
            UpdateKind::Apply(op) => format!("G {} {op}", self.index),
            UpdateKind::PrefixDelete { cutoff } => format!("PD {cutoff} {}", self.index),
            UpdateKind::SuffixDelete { cutoff } => format!("SD {cutoff} {}", self.index),
        }
    }
}

/// Optional `H` line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub n: u64,
    pub m: u64,
}

/// A parsed stream file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stream {
    pub header: Option<Header>,
    pub updates: Vec<Update>,
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse { line, reason: reason.into() }
}

fn parse_num(tok: Option<&str>, what: &str, line: usize) -> Result<u64> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("bad {what} `{tok}`")))
}

/// Decodes one update line. `line_no` (1-based) becomes the time unless the
/// line ends in `@<t>`.
pub fn parse_update(line: &str, line_no: usize) -> Result<Update> {
    let (body, time) = match line.rsplit_once('@') {
        Some((b, t)) => {
            let t = t
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad time `{}`", t.trim())))?;
            (b, t)
        }
        None => (line, line_no as u64),
    };
    let mut toks = body.split_whitespace();
    let tag = toks.next().ok_or_else(|| parse_err(line_no, "empty update"))?;
    let update = match tag {
        "I" => Update::insert(parse_num(toks.next(), "index", line_no)?, time),
        "F" => Update::forget(parse_num(toks.next(), "index", line_no)?, time),
        "G" => {
            let index = parse_num(toks.next(), "index", line_no)?;
            let op = toks
                .next()
                .ok_or_else(|| parse_err(line_no, "missing operation"))?
                .parse()?;
            Update::apply(index, op, time)
        }
        "PD" | "SD" => {
            let cutoff = parse_num(toks.next(), "cutoff", line_no)?;
            let index = parse_num(toks.next(), "index", line_no)?;
            if tag == "PD" {
                Update::prefix_delete(index, cutoff, time)
            } else {
                Update::suffix_delete(index, cutoff, time)
            }
        }
        other => return Err(parse_err(line_no, format!("unknown update tag `{other}`"))),
    };
    if let Some(extra) = toks.next() {
        return Err(parse_err(line_no, format!("trailing token `{extra}`")));
    }
    if update.index == 0 {
        return Err(parse_err(line_no, "indices start at 1"));
    }
    Ok(update)
}

fn parse_header(line: &str, line_no: usize) -> Result<Header> {
    let (mut n, mut m) = (None, None);
    for tok in line.split_whitespace().skip(1) {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("bad header field `{tok}`")))?;
        let val = parse_num(Some(val), key, line_no)?;
        match key {
            "n" => n = Some(val),
            "m" => m = Some(val),
            _ => return Err(parse_err(line_no, format!("unknown header field `{key}`"))),
        }
    }
    match (n, m) {
        (Some(n), Some(m)) => Ok(Header { n, m }),
        _ => Err(parse_err(line_no, "header needs n= and m=")),
    }
}

impl Stream {
    pub fn new(updates: Vec<Update>) -> Self {
        Self { header: None, updates }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut stream = Stream::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with("H ") || line == "H" {
                if stream.header.is_some() || !stream.updates.is_empty() {
                    return Err(parse_err(line_no, "header must precede all updates"));
                }
                stream.header = Some(parse_header(line, line_no)?);
                continue;
            }
            stream.updates.push(parse_update(line, line_no)?);
        }
        stream.validate()?;
        Ok(stream)
    }

    /// Checks the ordering rules: strictly increasing times, indices within
    /// the header's universe, prefix cutoffs not in the future, and suffix
    /// deletions only at the tail.
    pub fn validate(&self) -> Result<()> {
        let mut last = 0u64;
        let mut suffix_seen = false;
        for u in &self.updates {
            if u.time <= last {
                return Err(Error::Semantic(format!("time {} does not increase", u.time)));
            }
            last = u.time;
            if let Some(h) = self.header {
                if u.index > h.n {
                    return Err(Error::Semantic(format!("index {} exceeds n = {}", u.index, h.n)));
                }
            }
            match u.kind {
                UpdateKind::PrefixDelete { cutoff } if cutoff > u.time => {
                    return Err(Error::Semantic(format!(
                        "prefix cutoff {cutoff} is after its request time {}",
                        u.time
                    )));
                }
                UpdateKind::SuffixDelete { .. } => suffix_seen = true,
                _ if suffix_seen => {
                    return Err(Error::Semantic(format!(
                        "update at time {} follows a suffix deletion",
                        u.time
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Serializes back to the file format. Times equal to the line number are
    /// left implicit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line_no = 0u64;
        if let Some(h) = self.header {
            out.push_str(&format!("H n={} m={}\n", h.n, h.m));
            line_no += 1;
        }
        for u in &self.updates {
            line_no += 1;
            out.push_str(&u.body());
            if u.time != line_no {
                out.push_str(&format!(" @{}", u.time));
            }
            out.push('\n');
        }
        out
    }

    /// Universe size: the header's `n`, or the largest index present.
    pub fn universe(&self) -> u64 {
        match self.header {
            Some(h) => h.n,
            None => self.updates.iter().map(|u| u.index).max().unwrap_or(1),
        }
    }

    pub fn insert_count(&self) -> u64 {
        self.updates
            .iter()
            .filter(|u| u.kind == UpdateKind::Insert)
            .count() as u64
    }
}

/// Builds a stream from `(index, kind)` pairs with times `1, 2, ...`.
pub fn sequential(events: impl IntoIterator<Item = (u64, UpdateKind)>) -> Vec<Update> {
    events
        .into_iter()
        .enumerate()
        .map(|(t, (index, kind))| Update { kind, index, time: t as u64 + 1 })
        .collect()
}

/// Consecutive inserts of one coordinate, processed as a weighted update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InsertRun {
    pub index: u64,
    pub count: u64,
    /// Time of the first insert in the run.
    pub start: u64,
}

/// A stream step after run-length coalescing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Inserts(InsertRun),
    Other(Update),
}

/// Merges maximal blocks of consecutive inserts on the same coordinate.
pub fn coalesce(updates: &[Update]) -> Vec<Step> {
    let mut steps: Vec<Step> = Vec::new();
    for u in updates {
        match (u.kind, steps.last_mut()) {
            (UpdateKind::Insert, Some(Step::Inserts(run))) if run.index == u.index => {
                run.count += 1;
            }
            (UpdateKind::Insert, _) => steps.push(Step::Inserts(InsertRun {
                index: u.index,
                count: 1,
                start: u.time,
            })),
            _ => steps.push(Step::Other(*u)),
        }
    }
    steps
}

/// The global parameters shared by every estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamParams {
    pub n: u64,
    pub m_bound: u64,
    pub p: f64,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for StreamParams {
    fn default() -> Self {
        Self { n: 16, m_bound: 1 << 16, p: 1.0, eps: 0.25, delta: 0.1, alpha: 0.0, seed: 0 }
    }
}

impl StreamParams {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if self.n == 0 || self.m_bound == 0 {
            return Err(Error::Config("n and m_bound must be positive".into()));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("p = {} must be positive", self.p)));
        }
        if !open_unit(self.eps) || !open_unit(self.delta) {
            return Err(Error::Config("eps and delta must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha = {} must lie in [0, 1)", self.alpha)));
        }
        Ok(())
    }
}
