//! Pluggable MILP solvers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use super::mps::write_mps;
use super::{solve_milp, MilpError, MilpInstance, MilpSolution, MilpStatus, SolveOptions, SolveStats};

/// Name under which the built-in branch-and-bound is always registered.
pub const REFERENCE_BACKEND: &str = "reference";

pub trait MilpBackend: Send + Sync {
    fn solve(&self, instance: &MilpInstance, options: &SolveOptions) -> Result<MilpSolution, MilpError>;
}

/// The built-in branch-and-bound.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceBackend;

impl MilpBackend for ReferenceBackend {
    fn solve(&self, instance: &MilpInstance, options: &SolveOptions) -> Result<MilpSolution, MilpError> {
        solve_milp(instance, options)
    }
}

/// Runs an external program as `program args... <instance.mps> <solution.txt>`.
///
/// The program reads the MPS file and writes a solution file in the format of
/// [`write_solution_file`]. Returned points are re-checked against the
/// instance before being accepted.
#[derive(Debug, Clone)]
pub struct ProcessBackend {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ProcessBackend {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl MilpBackend for ProcessBackend {
    fn solve(&self, instance: &MilpInstance, options: &SolveOptions) -> Result<MilpSolution, MilpError> {
        let dir = scratch_dir()?;
        let mps_path = dir.join("instance.mps");
        let sol_path = dir.join("solution.txt");
        let result = (|| {
            std::fs::write(&mps_path, write_mps(instance, &[])?)?;
            let status = Command::new(&self.program)
                .args(&self.args)
                .arg(&mps_path)
                .arg(&sol_path)
                .status()?;
            if !status.success() {
                return Err(MilpError::Backend(format!(
                    "{} exited with {status}",
                    self.program.display()
                )));
            }
            let text = std::fs::read_to_string(&sol_path)?;
            let sol = read_solution_file(&text, instance)?;
            if !sol.values.is_empty() {
                let viol = instance.max_violation(&sol.values);
                if viol > options.feasibility_tol * 10.0 {
                    return Err(MilpError::Backend(format!(
                        "returned point violates the instance by {viol:e}"
                    )));
                }
            }
            Ok(sol)
        })();
        let _ = std::fs::remove_dir_all(&dir);
        result
    }
}

fn scratch_dir() -> Result<PathBuf, MilpError> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!("satdroop-milp-{}-{n}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Plain-text solution format shared with external backends:
///
/// ```text
/// status optimal
/// objective 1.25
/// x[0] 0.5
/// ```
///
/// Infeasible solutions omit the objective and values.
pub fn write_solution_file(solution: &MilpSolution, instance: &MilpInstance) -> String {
    let mut out = format!("status {}\n", solution.status);
    if let Some(obj) = solution.objective {
        let _ = writeln!(out, "objective {obj}");
        for (var, v) in instance.variables.iter().zip(&solution.values) {
            let _ = writeln!(out, "{} {v}", var.name);
        }
    }
    out
}

pub fn read_solution_file(text: &str, instance: &MilpInstance) -> Result<MilpSolution, MilpError> {
    let mut status = None;
    let mut objective = None;
    let mut values = vec![f64::NAN; instance.variables.len()];
    let index: BTreeMap<&str, usize> = instance
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();
    for (ln, line) in text.lines().enumerate() {
        let bad = |m: &str| MilpError::Parse(format!("solution line {}: {m}", ln + 1));
        let mut toks = line.split_whitespace();
        let (Some(key), Some(val), None) = (toks.next(), toks.next(), toks.next()) else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(bad("expected `<key> <value>`"));
        };
        match key {
            "status" => {
                status = Some(match val {
                    "optimal" => MilpStatus::Optimal,
                    "infeasible" => MilpStatus::Infeasible,
                    "gap_limit" => MilpStatus::GapLimit,
                    _ => return Err(bad("unknown status")),
                })
            }
            "objective" => objective = Some(val.parse().map_err(|_| bad("bad objective"))?),
            name => {
                let i = *index.get(name).ok_or_else(|| bad("unknown variable"))?;
                values[i] = val.parse().map_err(|_| bad("bad value"))?;
            }
        }
    }
    let status = status.ok_or_else(|| MilpError::Parse("solution has no status".into()))?;
    if status == MilpStatus::Infeasible {
        return Ok(MilpSolution::infeasible(SolveStats::default()));
    }
    let objective: f64 = objective.ok_or_else(|| MilpError::Parse("solution has no objective".into()))?;
    if let Some(v) = instance.variables.iter().zip(&values).find(|(_, x)| x.is_nan()) {
        return Err(MilpError::Parse(format!("solution misses variable {}", v.0.name)));
    }
    Ok(MilpSolution {
        status,
        objective: Some(objective),
        values,
        best_bound: objective,
        stats: SolveStats::default(),
    })
}

/// Token returned by [`BackendRegistry::register`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendHandle {
    pub name: String,
}

/// Named solver backends; `"reference"` is always present.
#[derive(Clone)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn MilpBackend>>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        let mut backends: BTreeMap<String, Arc<dyn MilpBackend>> = BTreeMap::new();
        backends.insert(REFERENCE_BACKEND.to_string(), Arc::new(ReferenceBackend));
        Self { backends }
    }

    pub fn register(&mut self, name: &str, backend: Arc<dyn MilpBackend>) -> Result<BackendHandle, MilpError> {
        if self.backends.contains_key(name) {
            return Err(MilpError::DuplicateBackend(name.to_string()));
        }
        self.backends.insert(name.to_string(), backend);
        Ok(BackendHandle { name: name.to_string() })
    }

    pub fn names(&self) -> Vec<&str> {
        self.backends.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn MilpBackend>, MilpError> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| MilpError::UnknownBackend(name.to_string()))
    }

    pub fn solve(&self, name: &str, instance: &MilpInstance, options: &SolveOptions) -> Result<MilpSolution, MilpError> {
        self.get(name)?.solve(instance, options)
    }
}

/// Write a solution file for `instance` read from `mps_path`, solving with
/// the reference backend. This is the entry point used when the crate's own
/// binary acts as an external backend.
pub fn solve_mps_file(mps_path: &Path, solution_path: &Path, options: &SolveOptions) -> Result<MilpSolution, MilpError> {
    let text = std::fs::read_to_string(mps_path)?;
    let instance = super::mps::read_mps(&text)?;
    let sol = solve_milp(&instance, options)?;
    std::fs::write(solution_path, write_solution_file(&sol, &instance))?;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{LinExpr, Relation};

    fn tiny() -> MilpInstance {
        let mut m = MilpInstance::new("tiny");
        let x = m.add_continuous("x", 0.0, 2.0);
        let z = m.add_binary("z");
        m.add_constraint("c", LinExpr::from(x) + LinExpr::from(z), Relation::Ge, 1.5);
        m.objective = LinExpr::from(x) + LinExpr::term(z, 0.7);
        m
    }

    struct Fixed(MilpSolution);

    impl MilpBackend for Fixed {
        fn solve(&self, _: &MilpInstance, _: &SolveOptions) -> Result<MilpSolution, MilpError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn registry_rules() {
        let mut reg = BackendRegistry::new();
        assert_eq!(reg.names(), vec!["reference"]);
        assert!(matches!(
            reg.register("reference", Arc::new(ReferenceBackend)),
            Err(MilpError::DuplicateBackend(_))
        ));
        let canned = MilpSolution::infeasible(SolveStats::default());
        let h = reg.register("canned", Arc::new(Fixed(canned.clone()))).unwrap();
        assert_eq!(h.name, "canned");
        let m = tiny();
        assert_eq!(reg.solve("canned", &m, &SolveOptions::default()).unwrap(), canned);
        assert!(matches!(
            reg.solve("missing", &m, &SolveOptions::default()),
            Err(MilpError::UnknownBackend(_))
        ));
        let r = reg.solve("reference", &m, &SolveOptions::default()).unwrap();
        assert!((r.objective.unwrap() - 1.2).abs() < 1e-9);
    }

    #[test]
    fn solution_file_round_trip() {
        let m = tiny();
        let s = solve_milp(&m, &SolveOptions::default()).unwrap();
        let text = write_solution_file(&s, &m);
        let back = read_solution_file(&text, &m).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.objective, s.objective);
        let inf = write_solution_file(&MilpSolution::infeasible(SolveStats::default()), &m);
        assert_eq!(read_solution_file(&inf, &m).unwrap().status, MilpStatus::Infeasible);
        assert!(read_solution_file("status optimal\nobjective 1\n", &m).is_err());
        assert!(read_solution_file("status maybe\n", &m).is_err());
    }

    #[test]
    fn mps_file_entry_point() {
        let dir = scratch_dir().unwrap();
        let m = tiny();
        std::fs::write(dir.join("in.mps"), write_mps(&m, &[]).unwrap()).unwrap();
        let s = solve_mps_file(&dir.join("in.mps"), &dir.join("out.txt"), &SolveOptions::default()).unwrap();
        let text = std::fs::read_to_string(dir.join("out.txt")).unwrap();
        assert_eq!(read_solution_file(&text, &m).unwrap().values, s.values);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
