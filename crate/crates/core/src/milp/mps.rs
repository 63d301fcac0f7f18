//! Free-format MPS export and import.
//!
//! Binary columns sit between `INTORG`/`INTEND` markers and carry explicit
//! `[0, 1]` bounds. The objective constant is stored as the objective row's
//! right-hand side with the usual sign (`rhs = -offset`). Leading `*` comment
//! lines may describe the instance; they are ignored on import.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Constraint, LinExpr, MilpError, MilpInstance, Relation, VarId, Variable};

const OBJ_ROW: &str = "COST";

/// Render `instance` as free MPS. `comments` become leading `*` lines.
pub fn write_mps(instance: &MilpInstance, comments: &[String]) -> Result<String, MilpError> {
    instance.validate()?;
    for c in &instance.constraints {
        if c.name.is_empty() || c.name.chars().any(char::is_whitespace) || c.name == OBJ_ROW {
            return Err(MilpError::InvalidInstance(format!("unusable row name `{}`", c.name)));
        }
    }
    let mut out = String::new();
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "* {line}");
        }
    }
    let name = if instance.name.is_empty() { "MILP" } else { instance.name.as_str() };
    let _ = writeln!(out, "NAME {}", name.replace(char::is_whitespace, "_"));
    out.push_str("ROWS\n");
    let _ = writeln!(out, " N {OBJ_ROW}");
    for c in &instance.constraints {
        let tag = match c.relation {
            Relation::Le => "L",
            Relation::Ge => "G",
            Relation::Eq => "E",
        };
        let _ = writeln!(out, " {tag} {}", c.name);
    }

    let n = instance.variables.len();
    let mut columns: Vec<Vec<(&str, f64)>> = vec![Vec::new(); n];
    for (v, c) in instance.objective.normalized().terms {
        columns[v.0].push((OBJ_ROW, c));
    }
    for row in &instance.constraints {
        let merged = LinExpr {
            terms: row.terms.clone(),
            constant: 0.0,
        }
        .normalized();
        for (v, c) in merged.terms {
            columns[v.0].push((row.name.as_str(), c));
        }
    }

    out.push_str("COLUMNS\n");
    let mut in_int = false;
    let mut marker = 0;
    for (i, var) in instance.variables.iter().enumerate() {
        if var.binary != in_int {
            let kind = if var.binary { "INTORG" } else { "INTEND" };
            let _ = writeln!(out, " M{marker} 'MARKER' '{kind}'");
            marker += 1;
            in_int = var.binary;
        }
        if columns[i].is_empty() {
            let _ = writeln!(out, " {} {OBJ_ROW} 0", var.name);
        }
        for (row, c) in &columns[i] {
            let _ = writeln!(out, " {} {row} {c}", var.name);
        }
    }
    if in_int {
        let _ = writeln!(out, " M{marker} 'MARKER' 'INTEND'");
    }

    out.push_str("RHS\n");
    if instance.objective.constant != 0.0 {
        let _ = writeln!(out, " RHS {OBJ_ROW} {}", -instance.objective.constant);
    }
    for c in instance.constraints.iter().filter(|c| c.rhs != 0.0) {
        let _ = writeln!(out, " RHS {} {}", c.name, c.rhs);
    }

    out.push_str("BOUNDS\n");
    for var in &instance.variables {
        if var.lower == var.upper {
            let _ = writeln!(out, " FX BND {} {}", var.name, var.lower);
        } else {
            let _ = writeln!(out, " LO BND {} {}", var.name, var.lower);
            let _ = writeln!(out, " UP BND {} {}", var.name, var.upper);
        }
    }
    out.push_str("ENDATA\n");
    Ok(out)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Rows,
    Columns,
    Rhs,
    Bounds,
    Done,
}

fn parse_num(tok: &str, line: usize) -> Result<f64, MilpError> {
    tok.parse()
        .map_err(|_| MilpError::Parse(format!("line {line}: bad number `{tok}`")))
}

/// Parse free MPS as written by [`write_mps`]. Columns without bounds default
/// to `[0, 1]` when marked integer and must otherwise be bounded explicitly.
pub fn read_mps(text: &str) -> Result<MilpInstance, MilpError> {
    let mut inst = MilpInstance::new("");
    let mut section = Section::None;
    let mut obj_row: Option<String> = None;
    let mut rows: HashMap<String, usize> = HashMap::new();
    let mut cols: HashMap<String, usize> = HashMap::new();
    let mut in_int = false;
    let mut upper_set = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() || line.starts_with('*') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if !raw.starts_with(char::is_whitespace) {
            section = match toks[0] {
                "NAME" => {
                    inst.name = toks.get(1).unwrap_or(&"").to_string();
                    Section::None
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "ENDATA" => Section::Done,
                other => return Err(MilpError::Parse(format!("line {ln}: unsupported section `{other}`"))),
            };
            continue;
        }
        let bad = |what: &str| MilpError::Parse(format!("line {ln}: {what}"));
        match section {
            Section::Rows => {
                let [kind, name] = toks[..] else { return Err(bad("expected `<type> <row>`")) };
                let relation = match kind {
                    "N" => {
                        if obj_row.is_some() {
                            return Err(bad("multiple objective rows"));
                        }
                        obj_row = Some(name.to_string());
                        continue;
                    }
                    "L" => Relation::Le,
                    "G" => Relation::Ge,
                    "E" => Relation::Eq,
                    _ => return Err(bad("unknown row type")),
                };
                rows.insert(name.to_string(), inst.constraints.len());
                inst.constraints.push(Constraint {
                    name: name.to_string(),
                    terms: Vec::new(),
                    relation,
                    rhs: 0.0,
                });
            }
            Section::Columns => {
                if toks.len() == 3 && toks[1] == "'MARKER'" {
                    in_int = match toks[2] {
                        "'INTORG'" => true,
                        "'INTEND'" => false,
                        _ => return Err(bad("unknown marker")),
                    };
                    continue;
                }
                if toks.len() != 3 && toks.len() != 5 {
                    return Err(bad("expected `<col> <row> <value> [<row> <value>]`"));
                }
                let col = toks[0];
                let id = match cols.get(col) {
                    Some(&i) => i,
                    None => {
                        inst.variables.push(Variable {
                            name: col.to_string(),
                            lower: 0.0,
                            upper: if in_int { 1.0 } else { f64::INFINITY },
                            binary: in_int,
                            priority: 0,
                        });
                        upper_set.push(in_int);
                        cols.insert(col.to_string(), inst.variables.len() - 1);
                        inst.variables.len() - 1
                    }
                };
                for pair in toks[1..].chunks(2) {
                    let coef = parse_num(pair[1], ln)?;
                    if coef == 0.0 {
                        continue;
                    }
                    if Some(pair[0]) == obj_row.as_deref() {
                        inst.objective.terms.push((VarId(id), coef));
                    } else {
                        let r = *rows.get(pair[0]).ok_or_else(|| bad("unknown row"))?;
                        inst.constraints[r].terms.push((VarId(id), coef));
                    }
                }
            }
            Section::Rhs => {
                if toks.len() != 3 && toks.len() != 5 {
                    return Err(bad("expected `<set> <row> <value>`"));
                }
                for pair in toks[1..].chunks(2) {
                    let v = parse_num(pair[1], ln)?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        inst.objective.constant = -v;
                    } else {
                        let r = *rows.get(pair[0]).ok_or_else(|| bad("unknown row"))?;
                        inst.constraints[r].rhs = v;
                    }
                }
            }
            Section::Bounds => {
                let (kind, col) = match toks[..] {
                    [k, _, c] | [k, _, c, _] => (k, c),
                    _ => return Err(bad("expected `<type> <set> <col> [<value>]`")),
                };
                let i = *cols.get(col).ok_or_else(|| bad("unknown column"))?;
                let value = toks.get(3).map(|t| parse_num(t, ln)).transpose()?;
                let need = || value.ok_or_else(|| bad("missing bound value"));
                let var = &mut inst.variables[i];
                match kind {
                    "LO" => {
                        var.lower = need()?;
                    }
                    "UP" => {
                        var.upper = need()?;
                        upper_set[i] = true;
                    }
                    "FX" => {
                        var.lower = need()?;
                        var.upper = var.lower;
                        upper_set[i] = true;
                    }
                    "BV" => {
                        var.lower = 0.0;
                        var.upper = 1.0;
                        var.binary = true;
                        upper_set[i] = true;
                    }
                    _ => return Err(bad("unsupported bound type")),
                }
            }
            Section::None | Section::Done => return Err(bad("data outside a section")),
        }
    }
    if section != Section::Done {
        return Err(MilpError::Parse("missing ENDATA".into()));
    }
    if let Some(v) = inst.variables.iter().zip(&upper_set).find(|(_, set)| !**set) {
        return Err(MilpError::Parse(format!("column {} has no upper bound", v.0.name)));
    }
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> MilpInstance {
        let mut m = MilpInstance::new("sample");
        let x = m.add_continuous("x", -2.5, 3.0);
        let z = m.add_binary("z");
        let f = m.add_continuous("fixed", 1.0, 1.0);
        let _unused = m.add_continuous("free", 0.0, 4.0);
        m.add_constraint("c1", LinExpr::from(x) + LinExpr::term(z, 12.1), Relation::Le, 3.0);
        m.add_constraint("c2", LinExpr::from(x) - LinExpr::from(f), Relation::Ge, -1.0);
        m.add_constraint("c3", LinExpr::from(z) + LinExpr::from(f), Relation::Eq, 1.0);
        m.objective = LinExpr::term(x, 0.9) + LinExpr::term(z, 0.2) + LinExpr::constant(0.5);
        m
    }

    #[test]
    fn round_trip_sample() {
        let m = sample();
        let text = write_mps(&m, &["roles: x power".into()]).unwrap();
        assert!(text.starts_with("* roles"));
        assert!(text.contains("'INTORG'"));
        let back = read_mps(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_mps("ROWS\n N COST\n").is_err());
        assert!(read_mps("ROWS\n Q r\nENDATA\n").is_err());
        let no_upper = "ROWS\n N COST\nCOLUMNS\n x COST 1\nENDATA\n";
        assert!(read_mps(no_upper).is_err());
    }

    fn arb_instance() -> impl Strategy<Value = MilpInstance> {
        let vars = prop::collection::vec((any::<bool>(), -5.0..0.0f64, 0.0..5.0f64, -3.0..3.0f64), 1..6);
        vars.prop_flat_map(|vars| {
            let n = vars.len();
            let rows = prop::collection::vec(
                (prop::collection::vec((0..n, -4.0..4.0f64), 1..4), 0..3usize, -5.0..5.0f64),
                0..5,
            );
            (Just(vars), rows, -2.0..2.0f64)
        })
        .prop_map(|(vars, rows, offset)| {
            let mut m = MilpInstance::new("rand");
            let mut obj = LinExpr::constant(offset);
            for (i, (bin, lo, hi, c)) in vars.iter().enumerate() {
                let v = if *bin {
                    m.add_binary(format!("b{i}"))
                } else {
                    m.add_continuous(format!("x{i}"), *lo, *hi)
                };
                obj = obj + LinExpr::term(v, *c);
            }
            for (k, (terms, rel, rhs)) in rows.into_iter().enumerate() {
                let e: LinExpr = terms.into_iter().map(|(i, c)| LinExpr::term(VarId(i), c)).sum();
                let rel = [Relation::Le, Relation::Ge, Relation::Eq][rel];
                m.add_constraint(format!("r{k}"), e, rel, rhs);
            }
            m.objective = obj.normalized();
            m
        })
    }

    proptest! {
        #[test]
        fn round_trip(m in arb_instance()) {
            let text = write_mps(&m, &[]).unwrap();
            let back = read_mps(&text).unwrap();
            prop_assert_eq!(back.variables, m.variables.clone());
            prop_assert_eq!(back.objective, m.objective.clone());
            // Rows that cancelled to no terms still round-trip with their rhs.
            prop_assert_eq!(back.constraints, m.constraints.clone());
        }
    }
}
