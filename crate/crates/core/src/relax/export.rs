//! Text formats for [`ConicProgram`]: SDPA sparse (`.dat-s`) and a JSON dump.
//!
//! SDPA export treats every scalar variable of the program as a free SDPA
//! variable `x_i`. Linear rows go into one diagonal (LP) block: an equality
//! `a'v = b` becomes the pair `a'v - b >= 0`, `b - a'v >= 0`; an inequality
//! `a'v <= b` becomes `b - a'v >= 0`. Each PSD constraint becomes one dense
//! block `F(x) = sum_i F_i x_i - F_0`. The objective constant, which SDPA
//! cannot express, is written in a `* objective constant:` comment line.

use super::program::{AffineExpr, ConicProgram, Layout, ProgramMeta, PsdConstraint, Var};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;

const CONSTANT_TAG: &str = "objective constant:";

/// Serialize to SDPA sparse format.
pub fn to_sdpa(program: &ConicProgram) -> String {
    let m = program.var_count();
    let lp_rows = 2 * program.equalities.len() + program.inequalities.len();
    let mut out = String::new();
    let kind = program.meta.kind.map(|k| k.name()).unwrap_or("generic");
    let _ = writeln!(out, "\"{kind} N={} K={}", program.meta.n, program.meta.k);
    let _ = writeln!(out, "* {CONSTANT_TAG} {:e}", program.objective.constant);
    let _ = writeln!(out, "{m}");

    let mut blocks: Vec<i64> = Vec::new();
    if lp_rows > 0 {
        blocks.push(-(lp_rows as i64));
    }
    blocks.extend(program.psd.iter().map(|p| p.order as i64));
    let _ = writeln!(out, "{}", blocks.len());
    let sizes: Vec<String> = blocks.iter().map(|b| b.to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));

    let mut c = vec![0.0; m];
    for (v, coef) in &program.objective.terms {
        c[program.var_index(*v)] += coef;
    }
    let cs: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(out, "{}", cs.join(" "));

    // (matno, blkno, i, j) -> value, merged and ordered for stable output.
    let mut entries: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    let mut put = |mat: usize, blk: usize, i: usize, j: usize, v: f64| {
        if v != 0.0 {
            *entries.entry((mat, blk, i, j)).or_insert(0.0) += v;
        }
    };

    if lp_rows > 0 {
        let mut row = 1;
        for con in &program.equalities {
            for sign in [1.0, -1.0] {
                put(0, 1, row, row, sign * con.rhs);
                for (v, coef) in &con.terms {
                    put(program.var_index(*v) + 1, 1, row, row, sign * coef);
                }
                row += 1;
            }
        }
        for con in &program.inequalities {
            put(0, 1, row, row, -con.rhs);
            for (v, coef) in &con.terms {
                put(program.var_index(*v) + 1, 1, row, row, -coef);
            }
            row += 1;
        }
    }
    let offset = usize::from(lp_rows > 0);
    for (b, psd) in program.psd.iter().enumerate() {
        let blk = b + 1 + offset;
        for (i, j, expr) in &psd.entries {
            let (i, j) = if i <= j { (*i, *j) } else { (*j, *i) };
            put(0, blk, i + 1, j + 1, -expr.constant);
            for (v, coef) in &expr.terms {
                put(program.var_index(*v) + 1, blk, i + 1, j + 1, *coef);
            }
        }
    }
    for ((mat, blk, i, j), v) in entries {
        if v != 0.0 {
            let _ = writeln!(out, "{mat} {blk} {i} {j} {v:e}");
        }
    }
    out
}

/// Parse SDPA sparse format into a generic program over one vector block
/// `x` of free variables. LP blocks become inequalities, dense blocks PSD
/// constraints.
pub fn from_sdpa(text: &str) -> Result<ConicProgram> {
    let mut constant = 0.0;
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('*').or_else(|| t.strip_prefix('"')) {
            if let Some(pos) = rest.find(CONSTANT_TAG) {
                let v = rest[pos + CONSTANT_TAG.len()..].trim();
                constant = v.parse().map_err(|_| fmt_err(lineno, "bad objective constant"))?;
            }
            continue;
        }
        for tok in t.split(|c: char| c.is_whitespace() || ",{}()".contains(c)) {
            if !tok.is_empty() {
                tokens.push((lineno, tok.to_string()));
            }
        }
    }
    let mut it = tokens.into_iter();
    let mut next = |what: &str| -> Result<(usize, String)> {
        it.next().ok_or_else(|| Error::Format(format!("SDPA: unexpected end of input, expected {what}")))
    };
    let m: usize = parse(next("variable count")?)?;
    let nblocks: usize = parse(next("block count")?)?;
    let mut sizes = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let s: i64 = parse(next("block size")?)?;
        if s == 0 {
            return Err(Error::Format("SDPA: zero block size".into()));
        }
        sizes.push(s);
    }
    let mut c = Vec::with_capacity(m);
    for _ in 0..m {
        c.push(parse::<f64>(next("objective coefficient")?)?);
    }

    // Per block: (i, j) -> affine expression of F(x).
    let mut cells: Vec<BTreeMap<(usize, usize), AffineExpr>> = vec![BTreeMap::new(); nblocks];
    while let Ok(first) = next("entry") {
        let line = first.0;
        let mat: usize = parse(first)?;
        let blk: usize = parse(next("block index")?)?;
        let i: usize = parse(next("row")?)?;
        let j: usize = parse(next("column")?)?;
        let v: f64 = parse(next("value")?)?;
        if mat > m || blk == 0 || blk > nblocks {
            return Err(fmt_err(line, "entry index out of range"));
        }
        let size = sizes[blk - 1].unsigned_abs() as usize;
        if i == 0 || j == 0 || i > size || j > size || (sizes[blk - 1] < 0 && i != j) {
            return Err(fmt_err(line, "entry position out of range"));
        }
        let key = if i <= j { (i - 1, j - 1) } else { (j - 1, i - 1) };
        let cell = cells[blk - 1].entry(key).or_default();
        if mat == 0 {
            cell.constant -= v;
        } else {
            cell.add(Var::vec(0, mat - 1), v);
        }
    }

    let meta = ProgramMeta { kind: None, layout: Layout::Generic, n: 0, k: 0, spec: None };
    let mut p = ConicProgram::new(meta);
    p.add_vector_block("x", m);
    p.objective = AffineExpr {
        constant,
        terms: c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (Var::vec(0, i), *v)).collect(),
    };
    for (b, (size, cell)) in sizes.iter().zip(cells).enumerate() {
        if *size < 0 {
            for (_, expr) in cell {
                // expr >= 0  <=>  -terms <= constant
                p.add_le(expr.terms.iter().map(|(v, c)| (*v, -c)).collect(), expr.constant);
            }
        } else {
            p.psd.push(PsdConstraint {
                name: format!("F{}", b + 1),
                order: *size as usize,
                entries: cell.into_iter().map(|((i, j), e)| (i, j, e)).collect(),
            });
        }
    }
    Ok(p)
}

/// Pretty-printed JSON with block names, constraints and metadata.
pub fn to_json(program: &ConicProgram) -> Result<String> {
    serde_json::to_string_pretty(program).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_json(text: &str) -> Result<ConicProgram> {
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

fn fmt_err(line: usize, msg: &str) -> Error {
    Error::Format(format!("SDPA line {}: {msg}", line + 1))
}

fn parse<T: std::str::FromStr>(tok: (usize, String)) -> Result<T> {
    tok.1.parse().map_err(|_| fmt_err(tok.0, &format!("cannot parse '{}'", tok.1)))
}
