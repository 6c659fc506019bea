//! Plain-text dump and load of problems in a CPLEX-LP-like layout.
//!
//! Grammar (one item per line, `\` starts a comment line, blank lines ignored):
//!
//! ```text
//! minimize
//!  obj: <terms>
//! subject to
//!  <name>: <terms> (<= | = | >=) <number>
//!  ...
//! bounds
//!  <number> <= x<j> <= <number>
//!  x<j> >= <number>
//!  x<j> <= <number>
//!  x<j> = <number>
//!  x<j> free
//! binary
//!  x<j> x<k> ...
//! end
//! ```
//!
//! `<terms>` is a whitespace separated sequence of `[+|-] [<number>] x<j>`
//! items; the objective may also contain one bare constant. Numbers accept
//! `inf`/`-inf`. Variables absent from `bounds` default to `[0, +inf)`, and
//! the variable count is one past the largest index that appears. The writer
//! emits every variable in `bounds` and prints numbers in shortest
//! round-trip form, so `parse(write(p)) == p`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::lp::{Bounds, Constraint, LpProblem, Relation};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError {
        line,
        message: message.into(),
    }
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (usize, f64)>) {
    let mut any = false;
    for (j, a) in terms {
        let sign = if a.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} x{j}", num(a.abs()));
        any = true;
    }
    if !any {
        out.push_str(" 0");
    }
}

/// Serializes `problem`; `binaries` lists variables for the `binary` section.
pub fn write_problem(problem: &LpProblem, binaries: &[usize]) -> String {
    let mut out = String::from("minimize\n obj:");
    write_terms(
        &mut out,
        problem
            .objective
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, c)| *c != 0.0),
    );
    if problem.objective_offset != 0.0 {
        let c = problem.objective_offset;
        let _ = write!(out, " {} {}", if c < 0.0 { '-' } else { '+' }, num(c.abs()));
    }
    out.push_str("\nsubject to\n");
    for (i, row) in problem.constraints.iter().enumerate() {
        let _ = write!(out, " c{i}:");
        write_terms(&mut out, row.coeffs.iter().copied());
        let _ = writeln!(out, " {} {}", row.relation, num(row.rhs));
    }
    out.push_str("bounds\n");
    for (j, b) in problem.bounds.iter().enumerate() {
        let line = match (b.lower.is_finite(), b.upper.is_finite()) {
            _ if b.lower == b.upper => format!("x{j} = {}", num(b.lower)),
            (true, true) => format!("{} <= x{j} <= {}", num(b.lower), num(b.upper)),
            (true, false) => format!("x{j} >= {}", num(b.lower)),
            (false, true) => format!("x{j} <= {}", num(b.upper)),
            (false, false) => format!("x{j} free"),
        };
        let _ = writeln!(out, " {line}");
    }
    if !binaries.is_empty() {
        out.push_str("binary\n");
        for chunk in binaries.chunks(16) {
            let names: Vec<String> = chunk.iter().map(|j| format!("x{j}")).collect();
            let _ = writeln!(out, " {}", names.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Start,
    Objective,
    Rows,
    Bounds,
    Binary,
    End,
}

fn parse_num(tok: &str, line: usize) -> Result<f64, FormatError> {
    match tok {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| err(line, format!("bad number '{tok}'"))),
    }
}

fn parse_var(tok: &str, line: usize) -> Result<usize, FormatError> {
    tok.strip_prefix('x')
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| err(line, format!("bad variable '{tok}'")))
}

fn parse_relation(tok: &str) -> Option<Relation> {
    match tok {
        "<=" => Some(Relation::Le),
        ">=" => Some(Relation::Ge),
        "=" => Some(Relation::Eq),
        _ => None,
    }
}

/// Parses terms; returns the linear part and the constant part.
fn parse_terms(tokens: &[&str], line: usize) -> Result<(Vec<(usize, f64)>, f64), FormatError> {
    let mut coeffs = Vec::new();
    let mut constant = 0.0;
    let mut i = 0;
    while i < tokens.len() {
        let mut sign = 1.0;
        if tokens[i] == "+" || tokens[i] == "-" {
            if tokens[i] == "-" {
                sign = -1.0;
            }
            i += 1;
        }
        let tok = *tokens.get(i).ok_or_else(|| err(line, "dangling sign"))?;
        if tok.starts_with('x') {
            coeffs.push((parse_var(tok, line)?, sign));
            i += 1;
            continue;
        }
        let value = sign * parse_num(tok, line)?;
        i += 1;
        match tokens.get(i) {
            Some(next) if next.starts_with('x') => {
                coeffs.push((parse_var(next, line)?, value));
                i += 1;
            }
            _ => constant += value,
        }
    }
    Ok((coeffs, constant))
}

/// Parses the text produced by [`write_problem`]; returns the problem and
/// the `binary` section.
pub fn parse_problem(text: &str) -> Result<(LpProblem, Vec<usize>), FormatError> {
    let mut section = Section::Start;
    let mut objective: Vec<(usize, f64)> = Vec::new();
    let mut offset = 0.0;
    let mut rows: Vec<Constraint> = Vec::new();
    let mut bounds: Vec<(usize, Bounds)> = Vec::new();
    let mut binaries = Vec::new();
    let mut max_var: Option<usize> = None;
    let mut see = |j: usize| max_var = Some(max_var.map_or(j, |m: usize| m.max(j)));

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line.to_ascii_lowercase().as_str() {
            "minimize" | "minimise" | "min" => {
                section = Section::Objective;
                continue;
            }
            "subject to" | "st" | "s.t." => {
                section = Section::Rows;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "binary" | "binaries" => {
                section = Section::Binary;
                continue;
            }
            "end" => {
                section = Section::End;
                continue;
            }
            _ => {}
        }
        let body = match line.split_once(':') {
            Some((_, rest)) if matches!(section, Section::Objective | Section::Rows) => rest,
            _ => line,
        };
        let tokens: Vec<&str> = body.split_whitespace().collect();
        match section {
            Section::Start | Section::End => return Err(err(line_no, "content outside a section")),
            Section::Objective => {
                let (terms, c) = parse_terms(&tokens, line_no)?;
                terms.iter().for_each(|&(j, _)| see(j));
                objective.extend(terms);
                offset += c;
            }
            Section::Rows => {
                let rel_at = tokens
                    .iter()
                    .position(|t| parse_relation(t).is_some())
                    .ok_or_else(|| err(line_no, "row without relation"))?;
                if rel_at + 2 != tokens.len() {
                    return Err(err(line_no, "expected a single number after the relation"));
                }
                let (coeffs, c) = parse_terms(&tokens[..rel_at], line_no)?;
                if c != 0.0 {
                    return Err(err(line_no, "constant term on the left of a row"));
                }
                coeffs.iter().for_each(|&(j, _)| see(j));
                let relation = parse_relation(tokens[rel_at]).unwrap();
                let rhs = parse_num(tokens[rel_at + 1], line_no)?;
                rows.push(Constraint::new(coeffs, relation, rhs));
            }
            Section::Bounds => {
                let b = match tokens.as_slice() {
                    [v, "free"] => (parse_var(v, line_no)?, Bounds::FREE),
                    [lo, "<=", v, "<=", hi] => (
                        parse_var(v, line_no)?,
                        Bounds::new(parse_num(lo, line_no)?, parse_num(hi, line_no)?),
                    ),
                    [v, ">=", lo] => (
                        parse_var(v, line_no)?,
                        Bounds::new(parse_num(lo, line_no)?, f64::INFINITY),
                    ),
                    [v, "<=", hi] => (
                        parse_var(v, line_no)?,
                        Bounds::new(f64::NEG_INFINITY, parse_num(hi, line_no)?),
                    ),
                    [v, "=", val] => (
                        parse_var(v, line_no)?,
                        Bounds::fixed(parse_num(val, line_no)?),
                    ),
                    _ => return Err(err(line_no, "unrecognized bound")),
                };
                see(b.0);
                bounds.push(b);
            }
            Section::Binary => {
                for tok in tokens {
                    let j = parse_var(tok, line_no)?;
                    see(j);
                    binaries.push(j);
                }
            }
        }
    }
    if section != Section::End {
        return Err(err(text.lines().count(), "missing 'end'"));
    }
    let num_vars = max_var.map_or(0, |m| m + 1);
    let mut problem = LpProblem::new(num_vars);
    problem.objective_offset = offset;
    for (j, c) in objective {
        problem.objective[j] += c;
    }
    problem.constraints = rows;
    for (j, b) in bounds {
        problem.bounds[j] = b;
    }
    Ok((problem, binaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_handwritten_problem() {
        let text = "\\ tiny\nminimize\n obj: - 1 x0 + 2 x1 + 3\nsubject to\n c0: x0 + 2.5 x1 <= 4\n c1: -1 x0 >= -9\nbounds\n x1 free\n 0 <= x0 <= 1\nbinary\n x0\nend\n";
        let (p, bin) = parse_problem(text).unwrap();
        assert_eq!(p.num_vars, 2);
        assert_eq!(p.objective, vec![-1.0, 2.0]);
        assert_eq!(p.objective_offset, 3.0);
        assert_eq!(p.constraints[0].coeffs, vec![(0, 1.0), (1, 2.5)]);
        assert_eq!(p.constraints[1].relation, Relation::Ge);
        assert_eq!(p.bounds[1], Bounds::FREE);
        assert_eq!(bin, vec![0]);
    }

    #[test]
    fn reports_line_of_error() {
        let e = parse_problem("minimize\n obj: x0\nsubject to\n c0: x0 4\nend\n").unwrap_err();
        assert_eq!(e.line, 4);
    }

    fn arb_value() -> impl Strategy<Value = f64> {
        prop_oneof![(-1e6f64..1e6), Just(0.0), Just(1.0), Just(-0.1)]
    }

    fn arb_problem() -> impl Strategy<Value = (LpProblem, Vec<usize>)> {
        (1usize..6).prop_flat_map(|n| {
            let rows = prop::collection::vec(
                (
                    prop::collection::vec((0..n, arb_value()), 1..4),
                    prop_oneof![Just(Relation::Le), Just(Relation::Eq), Just(Relation::Ge)],
                    arb_value(),
                ),
                0..4,
            );
            let bounds = prop::collection::vec(
                prop_oneof![
                    Just(Bounds::NON_NEGATIVE),
                    Just(Bounds::FREE),
                    Just(Bounds::BINARY),
                    (-10.0f64..0.0).prop_map(|u| Bounds::new(f64::NEG_INFINITY, u)),
                    (0.0f64..5.0).prop_map(Bounds::fixed),
                ],
                n,
            );
            (
                prop::collection::vec(arb_value(), n),
                arb_value(),
                rows,
                bounds,
                prop::collection::vec(0..n, 0..3),
            )
                .prop_map(move |(objective, offset, rows, bounds, bin)| {
                    let mut p = LpProblem::new(n);
                    p.objective = objective;
                    p.objective_offset = offset;
                    p.bounds = bounds;
                    for (coeffs, rel, rhs) in rows {
                        p.add_constraint(coeffs, rel, rhs);
                    }
                    (p, bin)
                })
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity((p, bin) in arb_problem()) {
            let text = write_problem(&p, &bin);
            let (back, back_bin) = parse_problem(&text).unwrap();
            prop_assert_eq!(back, p);
            prop_assert_eq!(back_bin, bin);
        }
    }
}
