//! Linear programs in row form and the public simplex entry point.
//!
//! Problems are always minimizations of `c·x + offset` over linear rows and
//! per-variable bounds. Bounds are handled by the solver directly rather than
//! being expanded into rows.

use std::fmt;

use thiserror::Error;

use crate::simplex::{Simplex, SimplexStatus};

/// Absolute primal feasibility tolerance (scaled by `1 + |rhs|` per row).
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Reduced-cost optimality tolerance.
pub const OPTIMALITY_TOL: f64 = 1e-9;
/// Pivots smaller than this after a fresh factorization are a breakdown.
pub const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

/// One linear row `Σ coeff·x[var] (rel) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        Self {
            coeffs,
            relation,
            rhs,
        }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const NON_NEGATIVE: Bounds = Bounds {
        lower: 0.0,
        upper: f64::INFINITY,
    };
    pub const FREE: Bounds = Bounds {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
    pub const BINARY: Bounds = Bounds {
        lower: 0.0,
        upper: 1.0,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn fixed(value: f64) -> Self {
        Self {
            lower: value,
            upper: value,
        }
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::NON_NEGATIVE
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("variable index {index} out of range (num_vars = {num_vars})")]
    VariableOutOfRange { index: usize, num_vars: usize },
    #[error("objective has {got} entries but problem has {num_vars} variables")]
    ObjectiveLength { got: usize, num_vars: usize },
    #[error("bounds has {got} entries but problem has {num_vars} variables")]
    BoundsLength { got: usize, num_vars: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("variable {index} has lower bound {lower} above upper bound {upper}")]
    InvertedBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
}

/// A linear program: minimize `objective·x + objective_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<Bounds>,
}

impl LpProblem {
    /// An empty problem over `num_vars` non-negative variables with zero cost.
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            objective_offset: 0.0,
            constraints: Vec::new(),
            bounds: vec![Bounds::NON_NEGATIVE; num_vars],
        }
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, bounds: Bounds) -> usize {
        self.objective.push(cost);
        self.bounds.push(bounds);
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_constraint(
        &mut self,
        coeffs: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        self.constraints
            .push(Constraint::new(coeffs, relation, rhs));
        self.constraints.len() - 1
    }

    pub fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.num_vars {
            return Err(LpError::ObjectiveLength {
                got: self.objective.len(),
                num_vars: self.num_vars,
            });
        }
        if self.bounds.len() != self.num_vars {
            return Err(LpError::BoundsLength {
                got: self.bounds.len(),
                num_vars: self.num_vars,
            });
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(LpError::NonFinite(format!("objective entry {j}")));
        }
        if !self.objective_offset.is_finite() {
            return Err(LpError::NonFinite("objective offset".into()));
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite(format!("rhs of row {i}")));
            }
            for &(j, a) in &row.coeffs {
                if j >= self.num_vars {
                    return Err(LpError::VariableOutOfRange {
                        index: j,
                        num_vars: self.num_vars,
                    });
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite(format!("row {i}, variable {j}")));
                }
            }
        }
        for (j, b) in self.bounds.iter().enumerate() {
            if b.lower.is_nan()
                || b.upper.is_nan()
                || b.lower == f64::INFINITY
                || b.upper == f64::NEG_INFINITY
            {
                return Err(LpError::NonFinite(format!("bounds of variable {j}")));
            }
            if b.lower > b.upper {
                return Err(LpError::InvertedBounds {
                    index: j,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective_offset
            + self
                .objective
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    /// Largest scaled violation of any row or bound by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|r| r.violation(x) / (1.0 + r.rhs.abs()))
            .fold(0.0, f64::max);
        let bounds = self
            .bounds
            .iter()
            .zip(x)
            .map(|(b, &v)| {
                let below = (b.lower - v).max(0.0) / (1.0 + b.lower.abs().min(1e300));
                let above = (v - b.upper).max(0.0) / (1.0 + b.upper.abs().min(1e300));
                below.max(above)
            })
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        x.len() == self.num_vars && self.max_violation(x) <= FEASIBILITY_TOL
    }

    /// Lagrangian lower bound implied by row multipliers `duals`.
    ///
    /// Valid for any multiplier vector; returns `-inf` when a multiplier has
    /// the wrong sign for its row or a reduced cost pushes against an
    /// infinite bound.
    pub fn dual_objective(&self, duals: &[f64]) -> f64 {
        const SIGN_TOL: f64 = 1e-9;
        let mut reduced = self.objective.clone();
        let mut value = self.objective_offset;
        for (row, &y) in self.constraints.iter().zip(duals) {
            match row.relation {
                Relation::Le if y > SIGN_TOL => return f64::NEG_INFINITY,
                Relation::Ge if y < -SIGN_TOL => return f64::NEG_INFINITY,
                _ => {}
            }
            value += y * row.rhs;
            for &(j, a) in &row.coeffs {
                reduced[j] -= y * a;
            }
        }
        for (d, b) in reduced.iter().zip(&self.bounds) {
            if d.abs() <= SIGN_TOL {
                continue;
            }
            let bound = if *d > 0.0 { b.lower } else { b.upper };
            if !bound.is_finite() {
                return f64::NEG_INFINITY;
            }
            value += d * bound;
        }
        value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    pub objective_value: f64,
    pub solution: Vec<f64>,
    /// Row multipliers (`d objective / d rhs`), present for optimal results.
    pub dual_values: Option<Vec<f64>>,
}

impl LpResult {
    fn without_solution(status: LpStatus) -> Self {
        let objective_value = match status {
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        };
        Self {
            status,
            objective_value,
            solution: Vec::new(),
            dual_values: None,
        }
    }
}

/// Solves `problem` to a proven-optimal basic solution.
///
/// The result is re-checked against the original rows; an optimal status
/// is never returned for a point outside [`FEASIBILITY_TOL`].
pub fn solve_lp(problem: &LpProblem) -> Result<LpResult, LpError> {
    problem.validate()?;
    let mut simplex = Simplex::new(problem);
    let outcome = simplex.solve()?;
    match outcome.status {
        SimplexStatus::Optimal => {
            let solution = outcome.primal;
            let violation = problem.max_violation(&solution);
            if violation > FEASIBILITY_TOL {
                return Err(LpError::NumericalBreakdown(format!(
                    "optimal basis violates original rows by {violation:e}"
                )));
            }
            Ok(LpResult {
                status: LpStatus::Optimal,
                objective_value: problem.evaluate(&solution),
                solution,
                dual_values: Some(outcome.duals),
            })
        }
        SimplexStatus::Infeasible => Ok(LpResult::without_solution(LpStatus::Infeasible)),
        SimplexStatus::Unbounded => Ok(LpResult::without_solution(LpStatus::Unbounded)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-7, "{a} != {b}");
    }

    #[test]
    fn single_variable_upper_row() {
        let mut lp = LpProblem::new(1);
        lp.objective[0] = -1.0;
        lp.add_constraint(vec![(0, 1.0)], Relation::Le, 5.0);
        let res = solve_lp(&lp).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert_close(res.solution[0], 5.0);
        assert_close(res.objective_value, -5.0);
    }

    #[test]
    fn symmetric_covering_row() {
        let mut lp = LpProblem::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.add_constraint(vec![(0, 1.0), (1, 1.0)], Relation::Ge, 2.0);
        let res = solve_lp(&lp).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert_close(res.objective_value, 2.0);
        assert!(lp.is_feasible(&res.solution));
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LpProblem::new(1);
        lp.add_constraint(vec![(0, 1.0)], Relation::Le, 1.0);
        lp.add_constraint(vec![(0, 1.0)], Relation::Ge, 2.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = LpProblem::new(2);
        lp.objective = vec![-1.0, 0.0];
        lp.add_constraint(vec![(0, 1.0), (1, -1.0)], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_and_negative_bounds() {
        // min x + 2y with x free, y in [-3, 4], x + y >= -10, x - y <= 2
        let mut lp = LpProblem::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.bounds = vec![Bounds::FREE, Bounds::new(-3.0, 4.0)];
        lp.add_constraint(vec![(0, 1.0), (1, 1.0)], Relation::Ge, -10.0);
        lp.add_constraint(vec![(0, 1.0), (1, -1.0)], Relation::Le, 2.0);
        let res = solve_lp(&lp).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        // y = -3, x = -7 gives -13
        assert_close(res.objective_value, -13.0);
    }

    #[test]
    fn empty_row_with_impossible_rhs() {
        let mut lp = LpProblem::new(1);
        lp.add_constraint(vec![], Relation::Ge, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
        let mut lp = LpProblem::new(1);
        lp.add_constraint(vec![], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Optimal);
    }

    #[test]
    fn fixed_variable_and_offset() {
        let mut lp = LpProblem::new(2);
        lp.objective = vec![3.0, 1.0];
        lp.objective_offset = 10.0;
        lp.bounds[0] = Bounds::fixed(2.0);
        lp.add_constraint(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 5.0);
        let res = solve_lp(&lp).unwrap();
        assert_close(res.objective_value, 10.0 + 6.0 + 3.0);
    }

    #[test]
    fn rejects_bad_index_and_inverted_bounds() {
        let mut lp = LpProblem::new(1);
        lp.add_constraint(vec![(3, 1.0)], Relation::Le, 1.0);
        assert!(matches!(
            solve_lp(&lp),
            Err(LpError::VariableOutOfRange { .. })
        ));
        let mut lp = LpProblem::new(1);
        lp.bounds[0] = Bounds::new(2.0, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::InvertedBounds { .. })));
    }

    #[test]
    fn duals_match_primal_on_transportation_lp() {
        // two supplies, three demands
        let cost = [[4.0, 6.0, 9.0], [5.0, 3.0, 8.0]];
        let supply = [30.0, 40.0];
        let demand = [20.0, 25.0, 15.0];
        let mut lp = LpProblem::new(6);
        for i in 0..2 {
            for j in 0..3 {
                lp.objective[i * 3 + j] = cost[i][j];
            }
            lp.add_constraint(
                (0..3).map(|j| (i * 3 + j, 1.0)).collect(),
                Relation::Le,
                supply[i],
            );
        }
        for j in 0..3 {
            lp.add_constraint(
                (0..2).map(|i| (i * 3 + j, 1.0)).collect(),
                Relation::Ge,
                demand[j],
            );
        }
        let res = solve_lp(&lp).unwrap();
        let duals = res.dual_values.as_ref().unwrap();
        let dual = lp.dual_objective(duals);
        assert!(dual <= res.objective_value + 1e-6);
        assert!(
            (dual - res.objective_value).abs() < 1e-6,
            "strong duality {dual} vs {}",
            res.objective_value
        );
    }
}
