//! Bounded-variable primal simplex over an explicit dense basis inverse.
//!
//! Every row `a·x (rel) b` is turned into `a·x - s = 0` with a logical
//! variable `s` carrying the row bounds, so the all-logical basis is always
//! available as a start and any basis can be warm-started after bound
//! changes. Primal infeasibility is removed by minimizing the sum of bound
//! violations of basic variables (composite phase one); phase two then runs
//! with the real costs. Pricing is Dantzig's rule with a fallback to Bland's
//! rule once degenerate pivots pile up.

use crate::lp::{LpError, LpProblem, Relation, FEASIBILITY_TOL, OPTIMALITY_TOL, PIVOT_TOL};

const HARRIS_TOL: f64 = 1e-9;
const RATIO_ALPHA_TOL: f64 = 1e-9;
const SUSPICIOUS_PIVOT: f64 = 1e-7;
const REFACTOR_INTERVAL: usize = 100;
const DEGENERATE_STEP: f64 = 1e-12;
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable resting at zero.
    Free,
}

/// Snapshot of a simplex basis, used to warm-start related problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    head: Vec<usize>,
    states: Vec<VarState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub status: SimplexStatus,
    pub objective: f64,
    /// Structural variable values (empty unless optimal).
    pub primal: Vec<f64>,
    /// Row multipliers in original row order (empty unless optimal).
    pub duals: Vec<f64>,
}

enum Step {
    Flip {
        theta: f64,
    },
    Pivot {
        pos: usize,
        theta: f64,
        to_upper: bool,
    },
    Unbounded,
}

#[derive(Clone)]
pub struct Simplex {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    offset: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    root_lower: Vec<f64>,
    root_upper: Vec<f64>,
    row_of: Vec<Option<usize>>,
    trivially_infeasible: bool,
    state: Vec<VarState>,
    head: Vec<usize>,
    x: Vec<f64>,
    /// Column-major: entry (position p, row i) lives at `i * m + p`.
    binv: Vec<f64>,
    since_refactor: usize,
    factored: bool,
}

impl Simplex {
    /// Prepares `problem` (assumed validated). Empty rows are dropped here.
    pub fn new(problem: &LpProblem) -> Self {
        let n = problem.num_vars;
        let mut row_of = vec![None; problem.constraints.len()];
        let mut trivially_infeasible = false;
        let mut merged_rows = Vec::new();
        for (orig, row) in problem.constraints.iter().enumerate() {
            let mut coeffs: Vec<(usize, f64)> = row
                .coeffs
                .iter()
                .copied()
                .filter(|&(_, a)| a != 0.0)
                .collect();
            coeffs.sort_by_key(|&(j, _)| j);
            coeffs.dedup_by(|later, kept| {
                if later.0 == kept.0 {
                    kept.1 += later.1;
                    true
                } else {
                    false
                }
            });
            coeffs.retain(|&(_, a)| a != 0.0);
            if coeffs.is_empty() {
                let ok = match row.relation {
                    Relation::Le => row.rhs >= -FEASIBILITY_TOL,
                    Relation::Ge => row.rhs <= FEASIBILITY_TOL,
                    Relation::Eq => row.rhs.abs() <= FEASIBILITY_TOL,
                };
                trivially_infeasible |= !ok;
                continue;
            }
            row_of[orig] = Some(merged_rows.len());
            merged_rows.push((coeffs, row.relation, row.rhs));
        }
        let m = merged_rows.len();
        let mut cols = vec![Vec::new(); n];
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for b in &problem.bounds {
            lower.push(b.lower);
            upper.push(b.upper);
        }
        for (r, (coeffs, relation, rhs)) in merged_rows.iter().enumerate() {
            for &(j, a) in coeffs {
                cols[j].push((r, a));
            }
            let (lo, hi) = match relation {
                Relation::Le => (f64::NEG_INFINITY, *rhs),
                Relation::Ge => (*rhs, f64::INFINITY),
                Relation::Eq => (*rhs, *rhs),
            };
            lower.push(lo);
            upper.push(hi);
        }
        let mut cost = problem.objective.clone();
        cost.resize(n + m, 0.0);

        let mut state = Vec::with_capacity(n + m);
        for j in 0..n {
            state.push(resting_state(lower[j], upper[j]));
        }
        state.extend(std::iter::repeat_n(VarState::Basic, m));
        let head = (n..n + m).collect();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = -1.0;
        }

        Self {
            n,
            m,
            cols,
            cost,
            offset: problem.objective_offset,
            root_lower: lower[..n].to_vec(),
            root_upper: upper[..n].to_vec(),
            lower,
            upper,
            row_of,
            trivially_infeasible,
            state,
            head,
            x: vec![0.0; n + m],
            binv,
            since_refactor: 0,
            factored: true,
        }
    }

    /// Overrides the bounds of structural variable `j`.
    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        assert!(j < self.n, "structural index out of range");
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    /// Restores every structural bound to the value in the original problem.
    pub fn reset_bounds(&mut self) {
        self.lower[..self.n].copy_from_slice(&self.root_lower);
        self.upper[..self.n].copy_from_slice(&self.root_upper);
    }

    pub fn basis(&self) -> Basis {
        Basis {
            head: self.head.clone(),
            states: self.state.clone(),
        }
    }

    /// Installs a basis taken from a problem with the same rows.
    pub fn load_basis(&mut self, basis: &Basis) {
        assert_eq!(basis.head.len(), self.m, "basis from a different problem");
        assert_eq!(
            basis.states.len(),
            self.n + self.m,
            "basis from a different problem"
        );
        // a child usually starts from the basis its parent just finished
        // with; the current inverse is still valid then
        if self.head != basis.head {
            self.head.clone_from(&basis.head);
            self.factored = false;
        }
        self.state.clone_from(&basis.states);
    }

    fn col_for_each(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            for &(i, a) in &self.cols[j] {
                f(i, a);
            }
        } else {
            f(j - self.n, -1.0);
        }
    }

    /// Puts every nonbasic variable on the bound named by its state,
    /// repairing states that no longer match the current bounds.
    fn place_nonbasics(&mut self) {
        for j in 0..self.n + self.m {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            match self.state[j] {
                VarState::Basic => continue,
                VarState::AtLower if lo.is_finite() => {}
                VarState::AtUpper if hi.is_finite() => {}
                VarState::Free if !lo.is_finite() && !hi.is_finite() => {}
                _ => self.state[j] = resting_state(lo, hi),
            }
            self.x[j] = match self.state[j] {
                VarState::AtLower => lo,
                VarState::AtUpper => hi,
                _ => 0.0,
            };
        }
    }

    /// Rebuilds the explicit inverse of the basis matrix: start from the
    /// all-logical basis (inverse -I) and pivot in each structural basic
    /// column, choosing the largest pivot among rows whose logical leaves.
    /// Basis positions are reassigned along the way.
    fn refactor(&mut self) -> Result<(), LpError> {
        let (n, m) = (self.n, self.m);
        let target = std::mem::replace(&mut self.head, (n..n + m).collect());
        self.binv.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            self.binv[i * m + i] = -1.0;
        }
        let mut keeps_logical = vec![false; m];
        for &j in &target {
            if j >= n {
                keeps_logical[j - n] = true;
            }
        }
        let mut alpha = vec![0.0; m];
        for &j in target.iter().filter(|&&j| j < n) {
            self.ftran(j, &mut alpha);
            let mut best: Option<(usize, f64)> = None;
            for (p, &h) in self.head.iter().enumerate() {
                if h >= n && !keeps_logical[h - n] && best.is_none_or(|(_, b)| alpha[p].abs() > b) {
                    best = Some((p, alpha[p].abs()));
                }
            }
            match best {
                Some((p, a)) if a >= SINGULAR_TOL => {
                    self.pivot_update(p, &alpha);
                    self.head[p] = j;
                }
                _ => {
                    self.head = target;
                    self.factored = false;
                    return Err(LpError::NumericalBreakdown(format!(
                        "singular basis at column {j}"
                    )));
                }
            }
        }
        self.since_refactor = 0;
        self.factored = true;
        Ok(())
    }

    fn compute_basics(&mut self) {
        let m = self.m;
        let mut rhs = vec![0.0; m];
        for j in 0..self.n + self.m {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let xj = self.x[j];
            if xj != 0.0 {
                self.col_for_each(j, |i, v| rhs[i] -= v * xj);
            }
        }
        let mut xb = vec![0.0; m];
        for (i, &r) in rhs.iter().enumerate() {
            if r != 0.0 {
                let col = &self.binv[i * m..(i + 1) * m];
                for (dst, &b) in xb.iter_mut().zip(col) {
                    *dst += b * r;
                }
            }
        }
        for (p, &j) in self.head.iter().enumerate() {
            self.x[j] = xb[p];
        }
    }

    fn ftran(&self, j: usize, alpha: &mut [f64]) {
        let m = self.m;
        alpha.iter_mut().for_each(|a| *a = 0.0);
        self.col_for_each(j, |i, v| {
            let col = &self.binv[i * m..(i + 1) * m];
            for (dst, &b) in alpha.iter_mut().zip(col) {
                *dst += b * v;
            }
        });
    }

    fn btran(&self, cb: &[f64], y: &mut [f64]) {
        let m = self.m;
        for (i, yi) in y.iter_mut().enumerate() {
            let col = &self.binv[i * m..(i + 1) * m];
            *yi = col.iter().zip(cb).map(|(b, c)| b * c).sum();
        }
    }

    fn pivot_update(&mut self, pos: usize, alpha: &[f64]) {
        let m = self.m;
        let ar = alpha[pos];
        for i in 0..m {
            let col = &mut self.binv[i * m..(i + 1) * m];
            let v = col[pos] / ar;
            if v != 0.0 {
                for (dst, &a) in col.iter_mut().zip(alpha) {
                    *dst -= a * v;
                }
            }
            col[pos] = v;
        }
        self.since_refactor += 1;
    }

    fn is_below(&self, j: usize) -> bool {
        self.x[j] < self.lower[j] - FEASIBILITY_TOL * (1.0 + self.lower[j].abs())
    }

    fn is_above(&self, j: usize) -> bool {
        self.x[j] > self.upper[j] + FEASIBILITY_TOL * (1.0 + self.upper[j].abs())
    }

    pub fn solve(&mut self) -> Result<SimplexOutcome, LpError> {
        let infeasible = || SimplexOutcome {
            status: SimplexStatus::Infeasible,
            objective: f64::INFINITY,
            primal: Vec::new(),
            duals: Vec::new(),
        };
        if self.trivially_infeasible || (0..self.n).any(|j| self.lower[j] > self.upper[j]) {
            return Ok(infeasible());
        }
        let (n, m) = (self.n, self.m);
        self.place_nonbasics();
        if !self.factored || self.since_refactor >= REFACTOR_INTERVAL {
            self.refactor()?;
        }
        self.compute_basics();

        let max_iter = 50 * (n + m) + 10_000;
        let mut cb = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let mut fresh = true;

        for _ in 0..max_iter {
            if self.since_refactor >= REFACTOR_INTERVAL {
                self.refactor()?;
                self.compute_basics();
                fresh = true;
            }
            let mut phase_one = false;
            for (p, &j) in self.head.iter().enumerate() {
                cb[p] = if self.is_below(j) {
                    phase_one = true;
                    -1.0
                } else if self.is_above(j) {
                    phase_one = true;
                    1.0
                } else {
                    0.0
                };
            }
            if !phase_one {
                for (p, &j) in self.head.iter().enumerate() {
                    cb[p] = self.cost[j];
                }
            }
            self.btran(&cb, &mut y);

            let entering = self.price(&y, phase_one, bland);
            let Some((j, dir)) = entering else {
                if !fresh {
                    // re-price against a fresh factorization before concluding
                    self.refactor()?;
                    self.compute_basics();
                    fresh = true;
                    continue;
                }
                if phase_one {
                    return Ok(infeasible());
                }
                return Ok(self.optimal_outcome(&y));
            };

            self.ftran(j, &mut alpha);
            let step = self.ratio_test(j, dir, &alpha, phase_one, bland);
            let theta = match step {
                Step::Unbounded => {
                    if phase_one {
                        return Err(LpError::NumericalBreakdown(
                            "phase-one ray without a blocking variable".into(),
                        ));
                    }
                    if !fresh {
                        self.refactor()?;
                        self.compute_basics();
                        fresh = true;
                        continue;
                    }
                    return Ok(SimplexOutcome {
                        status: SimplexStatus::Unbounded,
                        objective: f64::NEG_INFINITY,
                        primal: Vec::new(),
                        duals: Vec::new(),
                    });
                }
                Step::Pivot { pos, .. } if alpha[pos].abs() < SUSPICIOUS_PIVOT && !fresh => {
                    self.refactor()?;
                    self.compute_basics();
                    fresh = true;
                    continue;
                }
                Step::Pivot { pos, .. } if alpha[pos].abs() < PIVOT_TOL => {
                    return Err(LpError::NumericalBreakdown(format!(
                        "pivot magnitude {:e} on variable {j}",
                        alpha[pos].abs()
                    )));
                }
                Step::Flip { theta } | Step::Pivot { theta, .. } => theta,
            };

            let delta = dir * theta;
            if delta != 0.0 {
                self.x[j] += delta;
                for (p, &b) in self.head.iter().enumerate() {
                    self.x[b] -= delta * alpha[p];
                }
            }
            match step {
                Step::Flip { .. } => {
                    let to_upper = dir > 0.0;
                    self.state[j] = if to_upper {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.x[j] = if to_upper {
                        self.upper[j]
                    } else {
                        self.lower[j]
                    };
                }
                Step::Pivot { pos, to_upper, .. } => {
                    let leaving = self.head[pos];
                    self.pivot_update(pos, &alpha);
                    self.head[pos] = j;
                    self.state[j] = VarState::Basic;
                    let (lo, hi) = (self.lower[leaving], self.upper[leaving]);
                    if to_upper {
                        self.state[leaving] = VarState::AtUpper;
                        self.x[leaving] = hi;
                    } else {
                        self.state[leaving] = VarState::AtLower;
                        self.x[leaving] = lo;
                    }
                    fresh = false;
                }
                Step::Unbounded => unreachable!(),
            }

            if theta <= DEGENERATE_STEP {
                degenerate_run += 1;
                if degenerate_run > 3 * n.max(1) {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
        }
        Err(LpError::IterationLimit(max_iter))
    }

    /// Picks the entering variable and its direction (+1 increase, -1 decrease).
    fn price(&self, y: &[f64], phase_one: bool, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.n + self.m {
            let state = self.state[j];
            if state == VarState::Basic || self.lower[j] == self.upper[j] {
                continue;
            }
            let d = if j < self.n {
                let base = if phase_one { 0.0 } else { self.cost[j] };
                self.cols[j]
                    .iter()
                    .fold(base, |acc, &(i, a)| acc - y[i] * a)
            } else {
                y[j - self.n]
            };
            let dir = match state {
                VarState::AtLower if d < -OPTIMALITY_TOL => 1.0,
                VarState::AtUpper if d > OPTIMALITY_TOL => -1.0,
                VarState::Free if d < -OPTIMALITY_TOL => 1.0,
                VarState::Free if d > OPTIMALITY_TOL => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if d.abs() > best_score {
                best_score = d.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn ratio_test(&self, j: usize, dir: f64, alpha: &[f64], phase_one: bool, bland: bool) -> Step {
        // (position, exact step, relaxed step, leaves at upper)
        let mut candidates: Vec<(usize, f64, f64, bool)> = Vec::new();
        for (p, &a) in alpha.iter().enumerate() {
            if a.abs() <= RATIO_ALPHA_TOL {
                continue;
            }
            let b = self.head[p];
            let rate = -dir * a;
            let xb = self.x[b];
            let (lo, hi) = (self.lower[b], self.upper[b]);
            let limit = if rate < 0.0 {
                if phase_one && self.is_above(b) {
                    Some((xb - hi, true))
                } else if phase_one && self.is_below(b) {
                    None
                } else if lo.is_finite() {
                    Some((xb - lo, false))
                } else {
                    None
                }
            } else if phase_one && self.is_below(b) {
                Some((lo - xb, false))
            } else if phase_one && self.is_above(b) {
                None
            } else if hi.is_finite() {
                Some((hi - xb, true))
            } else {
                None
            };
            if let Some((gap, to_upper)) = limit {
                let exact = gap.max(0.0) / rate.abs();
                let relaxed = (gap + HARRIS_TOL).max(0.0) / rate.abs();
                candidates.push((p, exact, relaxed, to_upper));
            }
        }
        let flip = {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_finite() && hi.is_finite() {
                Some(hi - lo)
            } else {
                None
            }
        };

        let chosen = if candidates.is_empty() {
            None
        } else if bland {
            let min = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            candidates
                .iter()
                .filter(|c| c.1 <= min + 1e-12)
                .min_by_key(|c| self.head[c.0])
                .copied()
        } else {
            let bound = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
            candidates
                .iter()
                .filter(|c| c.1 <= bound)
                .max_by(|a, b| {
                    alpha[a.0]
                        .abs()
                        .total_cmp(&alpha[b.0].abs())
                        .then(b.0.cmp(&a.0))
                })
                .copied()
        };

        match (chosen, flip) {
            (None, None) => Step::Unbounded,
            (None, Some(theta)) => Step::Flip { theta },
            (Some((_, exact, _, _)), Some(theta)) if theta <= exact => Step::Flip { theta },
            (Some((pos, exact, _, to_upper)), _) => Step::Pivot {
                pos,
                theta: exact,
                to_upper,
            },
        }
    }

    fn optimal_outcome(&self, y: &[f64]) -> SimplexOutcome {
        let primal: Vec<f64> = (0..self.n)
            .map(|j| {
                // snap values that sit within tolerance of a bound
                let v = self.x[j];
                let (lo, hi) = (self.lower[j], self.upper[j]);
                if lo.is_finite() && (v - lo).abs() <= 1e-12 * (1.0 + lo.abs()) {
                    lo
                } else if hi.is_finite() && (v - hi).abs() <= 1e-12 * (1.0 + hi.abs()) {
                    hi
                } else {
                    v.clamp(lo, hi)
                }
            })
            .collect();
        let objective = self.offset
            + primal
                .iter()
                .zip(&self.cost)
                .map(|(v, c)| v * c)
                .sum::<f64>();
        let duals = self
            .row_of
            .iter()
            .map(|r| r.map_or(0.0, |i| y[i]))
            .collect();
        SimplexOutcome {
            status: SimplexStatus::Optimal,
            objective,
            primal,
            duals,
        }
    }
}

fn resting_state(lower: f64, upper: f64) -> VarState {
    if lower.is_finite() {
        VarState::AtLower
    } else if upper.is_finite() {
        VarState::AtUpper
    } else {
        VarState::Free
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{Bounds, LpProblem};

    fn knapsack_lp() -> LpProblem {
        let mut lp = LpProblem::new(3);
        lp.objective = vec![-5.0, -4.0, -3.0];
        lp.bounds = vec![Bounds::BINARY; 3];
        lp.add_constraint(vec![(0, 2.0), (1, 3.0), (2, 1.0)], Relation::Le, 5.0);
        lp.add_constraint(vec![(0, 4.0), (1, 1.0), (2, 2.0)], Relation::Le, 11.0);
        lp
    }

    #[test]
    fn warm_start_after_bound_change_matches_cold_solve() {
        let lp = knapsack_lp();
        let mut warm = Simplex::new(&lp);
        let root = warm.solve().unwrap();
        assert_eq!(root.status, SimplexStatus::Optimal);
        let basis = warm.basis();

        let mut changed = lp.clone();
        changed.bounds[1] = Bounds::fixed(0.0);
        let cold = Simplex::new(&changed).solve().unwrap();

        warm.load_basis(&basis);
        warm.set_bounds(1, 0.0, 0.0);
        let hot = warm.solve().unwrap();
        assert!((hot.objective - cold.objective).abs() < 1e-9);

        warm.reset_bounds();
        warm.load_basis(&basis);
        let again = warm.solve().unwrap();
        assert!((again.objective - root.objective).abs() < 1e-9);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's classic cycling LP
        let mut lp = LpProblem::new(4);
        lp.objective = vec![-0.75, 150.0, -0.02, 6.0];
        lp.add_constraint(
            vec![(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)],
            Relation::Le,
            0.0,
        );
        lp.add_constraint(
            vec![(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)],
            Relation::Le,
            0.0,
        );
        lp.add_constraint(vec![(2, 1.0)], Relation::Le, 1.0);
        let out = Simplex::new(&lp).solve().unwrap();
        assert_eq!(out.status, SimplexStatus::Optimal);
        assert!((out.objective + 0.05).abs() < 1e-9, "{}", out.objective);
    }

    #[test]
    fn duplicate_entries_in_a_row_are_summed() {
        let mut lp = LpProblem::new(1);
        lp.objective = vec![-1.0];
        lp.add_constraint(vec![(0, 1.0), (0, 1.0)], Relation::Le, 4.0);
        let out = Simplex::new(&lp).solve().unwrap();
        assert!((out.primal[0] - 2.0).abs() < 1e-12);
    }
}
