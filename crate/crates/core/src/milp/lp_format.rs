//! Writer for the widely used CPLEX-style "LP file" text format.

use std::fmt::Write as _;

use super::{MilpModel, VarKind};

const TERMS_PER_LINE: usize = 8;

fn fmt_num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (f64, String)>) {
    let mut first = true;
    for (k, (coef, name)) in terms.enumerate() {
        if k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if coef < 0.0 { "-" } else { "+" };
        let mag = coef.abs();
        if first {
            if coef < 0.0 {
                out.push_str(" -");
            }
        } else {
            let _ = write!(out, " {sign}");
        }
        if mag == 1.0 {
            let _ = write!(out, " {name}");
        } else {
            let _ = write!(out, " {} {name}", fmt_num(mag));
        }
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
}

/// Deterministic LP-format text: objective, constraints, bounds, binaries.
pub fn export_lp_text(model: &MilpModel) -> String {
    let vars = model.variables();
    let mut out = String::new();
    out.push_str("\\ rauc model\n");
    out.push_str("Minimize\n obj:");
    write_terms(
        &mut out,
        vars.iter()
            .filter(|v| v.objective != 0.0)
            .map(|v| (v.objective, v.name.clone())),
    );
    out.push_str("\nSubject To\n");
    for row in model.constraints() {
        let _ = write!(out, " {}:", row.name);
        write_terms(
            &mut out,
            row.terms
                .iter()
                .map(|(v, a)| (*a, vars[v.0].name.clone())),
        );
        let _ = writeln!(out, " {} {}", row.sense.symbol(), fmt_num(row.rhs));
    }
    out.push_str("Bounds\n");
    for v in vars.iter().filter(|v| v.kind != VarKind::Binary) {
        let lo_default = v.lower == 0.0;
        let hi_default = v.upper == f64::INFINITY;
        match (v.lower.is_finite(), v.upper.is_finite()) {
            _ if lo_default && hi_default => {}
            (false, false) => {
                let _ = writeln!(out, " {} free", v.name);
            }
            (true, false) => {
                let _ = writeln!(out, " {} >= {}", v.name, fmt_num(v.lower));
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {} <= {}", v.name, fmt_num(v.upper));
            }
            (true, true) if v.lower == v.upper => {
                let _ = writeln!(out, " {} = {}", v.name, fmt_num(v.lower));
            }
            (true, true) => {
                let _ = writeln!(
                    out,
                    " {} <= {} <= {}",
                    fmt_num(v.lower),
                    v.name,
                    fmt_num(v.upper)
                );
            }
        }
    }
    let binaries: Vec<&str> = vars
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in binaries.chunks(TERMS_PER_LINE) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}
