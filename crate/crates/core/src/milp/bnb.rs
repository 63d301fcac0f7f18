//! Best-first branch-and-bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use crate::clock::Stopwatch;

use super::lp::{node_from, verify, LpFailure, Node, Relaxation};
use super::{BranchingRule, MilpError, MilpInstance, MilpSolution, MilpStatus, SolveOptions, SolveStats};

struct Open {
    bound: f64,
    /// `bound` on a grid far finer than the gap, so that float noise does
    /// not separate equal bounds.
    key: i64,
    depth: usize,
    seq: u64,
    lp: Node,
    /// Binaries fixed on the path from the root.
    fixed: Vec<(usize, f64)>,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    // Max-heap: smaller bound first; among equal bounds the deeper, then
    // newer node, so plateaus are searched depth-first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .cmp(&self.key)
            .then_with(|| self.depth.cmp(&other.depth))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

struct Incumbent {
    objective: f64,
    values: Vec<f64>,
}

fn branch_candidate(instance: &MilpInstance, values: &[f64], options: &SolveOptions) -> Option<usize> {
    let class = |i: usize| match options.branching {
        BranchingRule::MostFractional => 0,
        BranchingRule::Priority => instance.variables[i].priority,
    };
    let mut best: Option<(usize, u32, f64)> = None;
    for (i, var) in instance.variables.iter().enumerate() {
        if !var.binary {
            continue;
        }
        let v = values[i];
        let frac = (v - v.floor()).min(v.ceil() - v);
        if frac <= options.integrality_tol {
            continue;
        }
        let c = class(i);
        if best.is_none_or(|(_, bc, bf)| c > bc || (c == bc && frac > bf)) {
            best = Some((i, c, frac));
        }
    }
    best.map(|(i, _, _)| i)
}

/// Cold solve with `fixed` applied. The simplex can hit a singular basis
/// when many bounds collapse, so that failure is retried with the fixings
/// as rows.
fn solve_fixed(instance: &MilpInstance, fixed: &[(usize, f64)]) -> Result<Node, LpFailure> {
    match Relaxation::with_fixed(instance, fixed).solve() {
        Err(LpFailure::Error(e)) => match Relaxation::with_fixing_rows(instance, fixed).solve() {
            Err(LpFailure::Error(_)) => Err(LpFailure::Error(e)),
            other => other,
        },
        other => other,
    }
}

/// Whether `lp` satisfies the instance and the path fixings.
fn consistent(instance: &MilpInstance, relax: &Relaxation, lp: &Node, fixed: &[(usize, f64)], tol: f64) -> bool {
    let values = relax.values(lp);
    fixed.iter().all(|(i, v)| (values[*i] - v).abs() <= tol) && verify(instance, &values, tol).is_ok()
}

/// Fix binary `j` to `val` in a copy of `lp`, whose path fixings are
/// `fixed` (already including `j`). The warm start can misreport a fixing
/// either way, so failures and inconsistent points are redone cold.
fn fix_binary(
    instance: &MilpInstance,
    relax: &Relaxation,
    lp: Node,
    fixed: &[(usize, f64)],
    options: &SolveOptions,
    stats: &mut SolveStats,
) -> Result<Option<Node>, MilpError> {
    let (j, val) = *fixed.last().expect("fixing path is never empty here");
    stats.lp_solves += 1;
    match node_from(lp.fix_var(relax.vars[j], val)) {
        Ok(n) if consistent(instance, relax, &n, fixed, options.feasibility_tol) => return Ok(Some(n)),
        Ok(_) | Err(LpFailure::Infeasible | LpFailure::Error(_)) => {}
        Err(LpFailure::Unbounded) => return Err(MilpError::Numerical("unbounded relaxation".into())),
    }
    stats.lp_solves += 1;
    match solve_fixed(instance, fixed) {
        Ok(n) => Ok(Some(n)),
        Err(LpFailure::Infeasible) => Ok(None),
        Err(LpFailure::Unbounded) => Err(MilpError::Numerical("unbounded relaxation".into())),
        Err(LpFailure::Error(e)) => Err(e),
    }
}

/// Re-solve with every binary fixed to its rounded value, so continuous
/// values are consistent with exact 0/1 switches. If that fails, returns
/// the binary farthest from integral so the node can be branched on it.
fn polish(
    instance: &MilpInstance,
    relax: &Relaxation,
    lp: Node,
    options: &SolveOptions,
    stats: &mut SolveStats,
) -> Result<Result<Node, usize>, MilpError> {
    let values = relax.values(&lp);
    let binaries = || instance.variables.iter().enumerate().filter(|(_, v)| v.binary).map(|(i, _)| i);
    let Some(worst) = binaries()
        .filter(|i| values[*i] != values[*i].round())
        .max_by(|a, b| {
            let d = |i: usize| (values[i] - values[i].round()).abs();
            d(*a).total_cmp(&d(*b)).then(b.cmp(a))
        })
    else {
        return Ok(Ok(lp));
    };
    let fixed: Vec<(usize, f64)> = binaries().map(|i| (i, values[i].round())).collect();
    stats.lp_solves += 1;
    match solve_fixed(instance, &fixed) {
        Ok(n) if consistent(instance, relax, &n, &fixed, options.feasibility_tol) => Ok(Ok(n)),
        Ok(_) | Err(LpFailure::Infeasible) => Ok(Err(worst)),
        Err(LpFailure::Unbounded) => Err(MilpError::Numerical("unbounded relaxation".into())),
        Err(LpFailure::Error(e)) => Err(e),
    }
}

/// Solve `instance` to the configured absolute gap.
///
/// Nodes are explored best-bound first with ties broken by creation order, so
/// identical inputs always yield identical node sequences and results.
pub fn solve_milp(instance: &MilpInstance, options: &SolveOptions) -> Result<MilpSolution, MilpError> {
    instance.validate()?;
    options.validate()?;
    let started = Stopwatch::start();
    let relax = Relaxation::new(instance);
    let mut stats = SolveStats {
        nodes: 0,
        lp_solves: 1,
        min_bound_step: f64::INFINITY,
    };
    let root = match relax.solve() {
        Ok(lp) => lp,
        Err(LpFailure::Infeasible) => return Ok(MilpSolution::infeasible(stats)),
        Err(LpFailure::Unbounded) => return Err(MilpError::Numerical("unbounded relaxation".into())),
        Err(LpFailure::Error(e)) => return Err(e),
    };

    let quantum = options.gap_abs * 1e-2;
    let key = |b: f64| (b / quantum).round() as i64;
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Open {
        bound: root.objective(),
        key: key(root.objective()),
        depth: 0,
        seq,
        lp: root,
        fixed: Vec::new(),
    });
    let mut incumbent: Option<Incumbent> = None;
    let mut limited = false;

    while let Some(node) = heap.pop() {
        if let Some(inc) = &incumbent {
            if node.bound >= inc.objective - options.gap_abs {
                heap.clear();
                break;
            }
        }
        let node_cap = options.node_limit.is_some_and(|n| stats.nodes >= n);
        let time_cap = options.time_limit.is_some_and(|t| started.elapsed() >= t);
        if node_cap || time_cap {
            heap.push(node);
            limited = true;
            break;
        }
        stats.nodes += 1;

        let values = relax.values(&node.lp);
        let j = match branch_candidate(instance, &values, options) {
            Some(j) => j,
            None => match polish(instance, &relax, node.lp.clone(), options, &mut stats)? {
                Ok(lp) => {
                    let mut values = relax.values(&lp);
                    for (i, var) in instance.variables.iter().enumerate() {
                        if var.binary {
                            values[i] = values[i].round();
                        }
                    }
                    verify(instance, &values, options.feasibility_tol)?;
                    let objective = lp.objective();
                    if incumbent.as_ref().is_none_or(|inc| objective < inc.objective) {
                        incumbent = Some(Incumbent { objective, values });
                    }
                    continue;
                }
                Err(j) => j,
            },
        };

        let parent_bound = node.bound;
        let depth = node.depth + 1;
        let up = node.lp.clone();
        for (lp, val) in [(node.lp, 0.0), (up, 1.0)] {
            let mut fixed = node.fixed.clone();
            fixed.push((j, val));
            let Some(child) = fix_binary(instance, &relax, lp, &fixed, options, &mut stats)? else {
                continue;
            };
            let bound = child.objective();
            stats.min_bound_step = stats.min_bound_step.min(bound - parent_bound);
            if incumbent
                .as_ref()
                .is_some_and(|inc| bound >= inc.objective - options.gap_abs)
            {
                continue;
            }
            seq += 1;
            heap.push(Open {
                bound,
                key: key(bound),
                depth,
                seq,
                lp: child,
                fixed,
            });
        }
    }

    if !stats.min_bound_step.is_finite() {
        stats.min_bound_step = 0.0;
    }
    let offset = relax.offset();
    match incumbent {
        Some(inc) => {
            let open_bound = heap.peek().map_or(inc.objective, |n| n.bound.min(inc.objective));
            let proven = !limited || open_bound >= inc.objective - options.gap_abs;
            Ok(MilpSolution {
                status: if proven { MilpStatus::Optimal } else { MilpStatus::GapLimit },
                objective: Some(inc.objective + offset),
                values: inc.values,
                best_bound: open_bound + offset,
                stats,
            })
        }
        None if limited => Err(MilpError::ResourceLimit { nodes: stats.nodes }),
        None => Ok(MilpSolution::infeasible(stats)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{LinExpr, Relation};

    fn knapsack() -> MilpInstance {
        // max 5a + 4b + 3c  s.t. 2a + 3b + c <= 5, 4a + b + 2c <= 11, 3a + 4b + 2c <= 8
        let mut m = MilpInstance::new("knap");
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        let c = m.add_binary("c");
        let row = |x: f64, y: f64, z: f64| LinExpr::term(a, x) + LinExpr::term(b, y) + LinExpr::term(c, z);
        m.add_constraint("r1", row(2.0, 3.0, 1.0), Relation::Le, 5.0);
        m.add_constraint("r2", row(4.0, 1.0, 2.0), Relation::Le, 11.0);
        m.add_constraint("r3", row(3.0, 4.0, 2.0), Relation::Le, 8.0);
        m.objective = -row(5.0, 4.0, 3.0);
        m
    }

    fn brute_force(m: &MilpInstance) -> Option<f64> {
        let n = m.variables.len();
        (0..1u32 << n)
            .map(|mask| (0..n).map(|i| f64::from((mask >> i) & 1)).collect::<Vec<_>>())
            .filter(|v| m.max_violation(v) <= 1e-12)
            .map(|v| m.objective_value(&v))
            .min_by(f64::total_cmp)
    }

    #[test]
    fn knapsack_matches_enumeration() {
        let m = knapsack();
        let s = solve_milp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective.unwrap() - brute_force(&m).unwrap()).abs() < 1e-9);
        assert!(s.stats.min_bound_step >= -1e-9);
    }

    #[test]
    fn infeasible_milp() {
        let mut m = MilpInstance::new("inf");
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        m.add_constraint("r", LinExpr::from(a) + LinExpr::from(b), Relation::Eq, 1.0);
        m.add_constraint("s", LinExpr::from(a) - LinExpr::from(b), Relation::Eq, 0.5);
        let s = solve_milp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, MilpStatus::Infeasible);
        assert!(s.objective.is_none());
    }

    #[test]
    fn node_limit_without_incumbent_is_resource_error() {
        let mut m = knapsack();
        // Parity constraint keeps the root fractional.
        let a = m.var("a").unwrap();
        m.add_constraint("p", LinExpr::term(a, 2.0), Relation::Le, 1.0);
        let opts = SolveOptions {
            node_limit: Some(0),
            ..SolveOptions::default()
        };
        assert!(matches!(solve_milp(&m, &opts), Err(MilpError::ResourceLimit { .. })));
    }

    #[test]
    fn deterministic_repeat() {
        let m = knapsack();
        let a = solve_milp(&m, &SolveOptions::default()).unwrap();
        let b = solve_milp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    /// Minimum over all binary assignments of the LP with binaries fixed.
    fn leaf_enumeration(m: &MilpInstance) -> Option<f64> {
        let bins: Vec<usize> = (0..m.variables.len()).filter(|i| m.variables[*i].binary).collect();
        (0..1u32 << bins.len())
            .filter_map(|mask| {
                let mut f = m.clone();
                for (k, i) in bins.iter().enumerate() {
                    let b = f64::from((mask >> k) & 1);
                    f.variables[*i].lower = b;
                    f.variables[*i].upper = b;
                }
                let r = crate::milp::solve_lp(&f, &SolveOptions::default()).unwrap();
                (r.status == crate::milp::LpStatus::Optimal).then_some(r.objective)
            })
            .min_by(f64::total_cmp)
    }

    #[test]
    fn integral_root_takes_one_node() {
        let mut m = MilpInstance::new("root");
        let x = m.add_continuous("x", 0.0, 4.0);
        let z = m.add_binary("z");
        m.add_constraint("c", LinExpr::from(x) + LinExpr::from(z), Relation::Ge, 2.0);
        m.objective = LinExpr::from(x) + LinExpr::term(z, 3.0);
        let s = solve_milp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.stats.nodes, 1);
        assert!((s.objective.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn priority_rule_branches_high_class_first() {
        let mut m = knapsack();
        let c = m.var("c").unwrap();
        m.variables[c.0].priority = 3;
        let opts = SolveOptions {
            branching: BranchingRule::Priority,
            ..SolveOptions::default()
        };
        let s = solve_milp(&m, &opts).unwrap();
        assert!((s.objective.unwrap() - brute_force(&m).unwrap()).abs() < 1e-9);
        assert_eq!("priority".parse::<BranchingRule>().unwrap(), BranchingRule::Priority);
        assert!("random".parse::<BranchingRule>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn random_binary_programs(
                obj in prop::collection::vec(-5.0..5.0f64, 5),
                rows in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 5), 0.0..4.0f64), 1..4),
            ) {
                let mut m = MilpInstance::new("rand");
                let vars: Vec<_> = (0..5).map(|i| m.add_binary(format!("z{i}"))).collect();
                for (k, (coefs, rhs)) in rows.iter().enumerate() {
                    let e: LinExpr = vars.iter().zip(coefs).map(|(v, c)| LinExpr::term(*v, *c)).sum();
                    m.add_constraint(format!("r{k}"), e, Relation::Le, *rhs);
                }
                m.objective = vars.iter().zip(&obj).map(|(v, c)| LinExpr::term(*v, *c)).sum();
                let s = solve_milp(&m, &SolveOptions::default()).unwrap();
                // The all-zero point is always feasible since rhs >= 0.
                let want = brute_force(&m).unwrap();
                prop_assert_eq!(s.status, MilpStatus::Optimal);
                prop_assert!((s.objective.unwrap() - want).abs() <= 1e-6);
                prop_assert!(s.stats.min_bound_step >= -1e-7);
            }

            #[test]
            fn mixed_programs_match_leaf_enumeration(
                obj in prop::collection::vec(-5.0..5.0f64, 6),
                rows in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 6), -1.0..4.0f64), 1..5),
                prio in prop::collection::vec(0u32..3, 4),
                priority_rule in any::<bool>(),
            ) {
                let mut m = MilpInstance::new("mixed");
                let mut vars: Vec<_> = (0..4).map(|i| m.add_binary(format!("z{i}"))).collect();
                for (v, p) in vars.iter().zip(&prio) {
                    m.variables[v.0].priority = *p;
                }
                vars.push(m.add_continuous("x0", -2.0, 2.0));
                vars.push(m.add_continuous("x1", 0.0, 3.0));
                for (k, (coefs, rhs)) in rows.iter().enumerate() {
                    let e: LinExpr = vars.iter().zip(coefs).map(|(v, c)| LinExpr::term(*v, *c)).sum();
                    m.add_constraint(format!("r{k}"), e, Relation::Le, *rhs);
                }
                m.objective = vars.iter().zip(&obj).map(|(v, c)| LinExpr::term(*v, *c)).sum();
                let opts = SolveOptions {
                    branching: if priority_rule { BranchingRule::Priority } else { BranchingRule::MostFractional },
                    ..SolveOptions::default()
                };
                let s = solve_milp(&m, &opts).unwrap();
                match leaf_enumeration(&m) {
                    Some(want) => {
                        prop_assert_eq!(s.status, MilpStatus::Optimal);
                        prop_assert!((s.objective.unwrap() - want).abs() <= 1e-6);
                        prop_assert!(m.max_violation(&s.values) <= 1e-6);
                    }
                    None => prop_assert_eq!(s.status, MilpStatus::Infeasible),
                }
            }
        }
    }
}
