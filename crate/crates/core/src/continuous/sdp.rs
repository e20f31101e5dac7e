//! Semidefinite form of the canonical program and its text format.
//!
//! Variables are `x = (c'_0, ..., c'_{pH-1}, theta)`. Every constraint is a
//! symmetric block `A_0 + sum_k x_k A_k ⪰ 0`:
//!
//! - `eq_upper t r`, `eq_lower t r`: `diag(1, ∓(c'_{pt+r-1} - c'_{pt+r}))`
//!   for `1 <= r < p`, together forcing the copies of `c_t` to agree;
//! - `box_upper t`, `box_lower t`: `diag(1, 1 - c'_{pt})`, `diag(1, c'_{pt})`;
//! - `schur`: `[[I, M c'], [c'ᵀMᵀ, theta - k - lin c']]` with `Ψ' = MᵀM`.
//!
//! Text layout, one item per line, numbers in `{:.16e}` (17 significant
//! digits, enough to round-trip any `f64`):
//!
//! ```text
//! sdp 1
//! variables <count>
//! blocks <count>
//! block <kind> <t> <r> <size>
//! const <nnz>
//! <i> <j> <value>          (upper triangle, i <= j)
//! coef <variable> <nnz>
//! <i> <j> <value>
//! end
//! point <value> ...        (optional)
//! ```

use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, SymmetricEigen};

use super::CanonicalQP;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    EqUpper,
    EqLower,
    BoxUpper,
    BoxLower,
    Schur,
}

impl BlockKind {
    fn name(self) -> &'static str {
        match self {
            BlockKind::EqUpper => "eq_upper",
            BlockKind::EqLower => "eq_lower",
            BlockKind::BoxUpper => "box_upper",
            BlockKind::BoxLower => "box_lower",
            BlockKind::Schur => "schur",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "eq_upper" => BlockKind::EqUpper,
            "eq_lower" => BlockKind::EqLower,
            "box_upper" => BlockKind::BoxUpper,
            "box_lower" => BlockKind::BoxLower,
            "schur" => BlockKind::Schur,
            _ => return None,
        })
    }
}

/// Sparse upper-triangular entries `(row, col, value)`.
pub type Entries = Vec<(usize, usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SdpBlock {
    pub kind: BlockKind,
    pub t: usize,
    pub r: usize,
    pub size: usize,
    pub constant: Entries,
    pub terms: Vec<(usize, Entries)>,
}

impl SdpBlock {
    fn diag2(kind: BlockKind, t: usize, r: usize, offset: f64, terms: Vec<(usize, f64)>) -> Self {
        let mut constant = vec![(0, 0, 1.0)];
        if offset != 0.0 {
            constant.push((1, 1, offset));
        }
        SdpBlock {
            kind,
            t,
            r,
            size: 2,
            constant,
            terms: terms.into_iter().map(|(v, a)| (v, vec![(1, 1, a)])).collect(),
        }
    }

    /// Dense block at the point `x`.
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        let mut add = |entries: &Entries, scale: f64| {
            for &(i, j, v) in entries {
                m[(i, j)] += scale * v;
                if i != j {
                    m[(j, i)] += scale * v;
                }
            }
        };
        add(&self.constant, 1.0);
        for (var, entries) in &self.terms {
            add(entries, x[*var]);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub variables: usize,
    pub blocks: Vec<SdpBlock>,
    /// Candidate point `(c', theta)` stored with the problem, if any.
    pub point: Option<Vec<f64>>,
}

/// Builds every constraint block. `Ψ'` is factored through its
/// eigendecomposition; eigenvalues down to `-1e-12 * max(1, ‖Ψ'‖)` count as
/// zero, anything more negative is rejected.
pub fn export_sdp(qp: &CanonicalQP) -> Result<SdpProblem> {
    let (h, p) = (qp.horizon, qp.p);
    let k = h * p;
    let theta = k;
    let mut blocks = Vec::with_capacity(2 * h * p + 1);
    for t in 0..h {
        for r in 1..p {
            let (a, b) = (p * t + r - 1, p * t + r);
            blocks.push(SdpBlock::diag2(BlockKind::EqUpper, t, r, 0.0, vec![(a, -1.0), (b, 1.0)]));
            blocks.push(SdpBlock::diag2(BlockKind::EqLower, t, r, 0.0, vec![(a, 1.0), (b, -1.0)]));
        }
    }
    for t in 0..h {
        blocks.push(SdpBlock::diag2(BlockKind::BoxUpper, t, 0, 1.0, vec![(p * t, -1.0)]));
        blocks.push(SdpBlock::diag2(BlockKind::BoxLower, t, 0, 0.0, vec![(p * t, 1.0)]));
    }

    let eig = SymmetricEigen::new(qp.psi_prime.clone());
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if k > 0 && min_eigenvalue < -1e-12 * norm.max(1.0) {
        return Err(Error::NotConvex { min_eigenvalue });
    }
    // M = diag(sqrt(lambda)) Vᵀ
    let m = DMatrix::from_fn(k, k, |i, j| eig.eigenvalues[i].max(0.0).sqrt() * eig.eigenvectors[(j, i)]);
    let lin = qp.linear();
    let mut constant: Entries = (0..k).map(|i| (i, i, 1.0)).collect();
    let corner = -qp.constant();
    if corner != 0.0 {
        constant.push((k, k, corner));
    }
    let mut terms = Vec::with_capacity(k + 1);
    for j in 0..k {
        let mut entries: Entries = (0..k).filter(|&i| m[(i, j)] != 0.0).map(|i| (i, k, m[(i, j)])).collect();
        if lin[j] != 0.0 {
            entries.push((k, k, -lin[j]));
        }
        if !entries.is_empty() {
            terms.push((j, entries));
        }
    }
    terms.push((theta, vec![(k, k, 1.0)]));
    blocks.push(SdpBlock {
        kind: BlockKind::Schur,
        t: 0,
        r: 0,
        size: k + 1,
        constant,
        terms,
    });
    Ok(SdpProblem {
        variables: k + 1,
        blocks,
        point: None,
    })
}

impl SdpProblem {
    /// Point `(c', theta)` for per-step qualities `c`.
    pub fn point_for(qp: &CanonicalQP, c: &[f64], theta: f64) -> Vec<f64> {
        let mut x: Vec<f64> = qp.expand(c).iter().copied().collect();
        x.push(theta);
        x
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.variables {
            return Err(crate::error::dims(format!("point has {} entries, expected {}", x.len(), self.variables)));
        }
        Ok(())
    }

    /// Smallest eigenvalue of every block at `x`.
    pub fn min_eigenvalues(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self
            .blocks
            .iter()
            .map(|b| {
                let m = b.evaluate(x);
                m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
            })
            .collect())
    }

    /// Whether every block is PSD at `x` within `tol`.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> Result<bool> {
        Ok(self.min_eigenvalues(x)?.iter().all(|&v| v >= -tol))
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).problem()
    }
}

fn write_entries(f: &mut fmt::Formatter<'_>, entries: &Entries) -> fmt::Result {
    for (i, j, v) in entries {
        writeln!(f, "{i} {j} {v:.16e}")?;
    }
    Ok(())
}

impl fmt::Display for SdpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sdp 1")?;
        writeln!(f, "variables {}", self.variables)?;
        writeln!(f, "blocks {}", self.blocks.len())?;
        for b in &self.blocks {
            writeln!(f, "block {} {} {} {}", b.kind.name(), b.t, b.r, b.size)?;
            writeln!(f, "const {}", b.constant.len())?;
            write_entries(f, &b.constant)?;
            for (var, entries) in &b.terms {
                writeln!(f, "coef {var} {}", entries.len())?;
                write_entries(f, entries)?;
            }
            writeln!(f, "end")?;
        }
        if let Some(x) = &self.point {
            let mut line = String::from("point");
            for v in x {
                let _ = write!(line, " {v:.16e}");
            }
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            lines: text.lines().enumerate().peekable(),
            line: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column: 1,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<Vec<&'a str>> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.split_whitespace().collect())
            }
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn num<T: std::str::FromStr>(&self, tok: Option<&&str>, what: &str) -> Result<T> {
        tok.and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("expected {what}")))
    }

    fn keyed(&mut self, key: &str, arity: usize) -> Result<Vec<&'a str>> {
        let toks = self.next_line()?;
        if toks.first() != Some(&key) || toks.len() != arity + 1 {
            return Err(self.err(format!("expected `{key}` with {arity} field(s)")));
        }
        Ok(toks)
    }

    fn entries(&mut self, count: usize, size: usize) -> Result<Entries> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let toks = self.next_line()?;
            if toks.len() != 3 {
                return Err(self.err("expected `<i> <j> <value>`"));
            }
            let i: usize = self.num(toks.first(), "row index")?;
            let j: usize = self.num(toks.get(1), "column index")?;
            let v: f64 = self.num(toks.get(2), "value")?;
            if i > j || j >= size {
                return Err(self.err(format!("entry ({i}, {j}) outside the upper triangle of a {size}x{size} block")));
            }
            out.push((i, j, v));
        }
        Ok(out)
    }

    fn problem(mut self) -> Result<SdpProblem> {
        let head = self.next_line()?;
        if head != ["sdp", "1"] {
            return Err(self.err("expected header `sdp 1`"));
        }
        let toks = self.keyed("variables", 1)?;
        let variables: usize = self.num(toks.get(1), "variable count")?;
        let toks = self.keyed("blocks", 1)?;
        let count: usize = self.num(toks.get(1), "block count")?;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let toks = self.keyed("block", 4)?;
            let kind = BlockKind::parse(toks[1]).ok_or_else(|| self.err(format!("unknown block kind `{}`", toks[1])))?;
            let t = self.num(toks.get(2), "t")?;
            let r = self.num(toks.get(3), "r")?;
            let size = self.num(toks.get(4), "size")?;
            let toks = self.keyed("const", 1)?;
            let nnz = self.num(toks.get(1), "entry count")?;
            let constant = self.entries(nnz, size)?;
            let mut terms = Vec::new();
            loop {
                let toks = self.next_line()?;
                match toks.first() {
                    Some(&"end") if toks.len() == 1 => break,
                    Some(&"coef") if toks.len() == 3 => {
                        let var: usize = self.num(toks.get(1), "variable index")?;
                        if var >= variables {
                            return Err(self.err(format!("variable {var} out of range")));
                        }
                        let nnz = self.num(toks.get(2), "entry count")?;
                        terms.push((var, self.entries(nnz, size)?));
                    }
                    _ => return Err(self.err("expected `coef` or `end`")),
                }
            }
            blocks.push(SdpBlock {
                kind,
                t,
                r,
                size,
                constant,
                terms,
            });
        }
        let mut point = None;
        if self.lines.peek().is_some() {
            let toks = self.next_line()?;
            if toks.first() != Some(&"point") || toks.len() != variables + 1 {
                return Err(self.err(format!("expected `point` with {variables} values")));
            }
            let values = toks[1..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| self.err(format!("bad number `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            point = Some(values);
            if self.lines.peek().is_some() {
                self.next_line()?;
                return Err(self.err("trailing content"));
            }
        }
        Ok(SdpProblem {
            variables,
            blocks,
            point,
        })
    }
}
