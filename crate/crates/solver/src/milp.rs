//! Best-first branch and bound for problems with 0/1 variables.
//!
//! Each node stores the fixings on its path and the parent's final basis;
//! the fixings form a chain shared with the ancestors.
//! The node LP is warm-started from that basis. Choice groups (ordered sets
//! of binaries summing to one) are branched on by splitting the set in two
//! where the LP mass crosses one half; remaining fractional binaries are
//! branched on one at a time. Nodes are ordered by the
//! bound inherited from their parent (lowest first, then deepest, then
//! oldest), so with a single worker the search is fully deterministic.
//! Several workers share one queue; only the final objective is guaranteed
//! to be independent of the worker count.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::lp::{LpError, LpProblem};
use crate::simplex::{Basis, Simplex, SimplexStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error(transparent)]
    InvalidLp(LpError),
    #[error("integer variable {0} is out of range")]
    IntegerOutOfRange(usize),
    #[error("integer variable {index} has bounds [{lower}, {upper}] outside [0, 1]")]
    NotBinary {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("LP relaxation is unbounded")]
    Unbounded,
    #[error("node {node} (depth {depth}): {source}")]
    Node {
        node: u64,
        depth: usize,
        #[source]
        source: LpError,
    },
    #[error("invalid choice group: {0}")]
    ChoiceGroup(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A linear program in which `integer_vars` must take values in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpProblem {
    pub lp: LpProblem,
    pub integer_vars: Vec<usize>,
    /// Disjoint ordered sets of integer variables whose sum is one in every
    /// feasible point (the rows saying so must be part of `lp`).
    pub choice_groups: Vec<Vec<usize>>,
}

impl MilpProblem {
    pub fn new(lp: LpProblem, mut integer_vars: Vec<usize>) -> Result<Self, MilpError> {
        integer_vars.sort_unstable();
        integer_vars.dedup();
        let problem = Self {
            lp,
            integer_vars,
            choice_groups: Vec::new(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_choice_groups(mut self, groups: Vec<Vec<usize>>) -> Result<Self, MilpError> {
        self.choice_groups = groups;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        self.lp.validate().map_err(MilpError::InvalidLp)?;
        for &j in &self.integer_vars {
            let b = self
                .lp
                .bounds
                .get(j)
                .ok_or(MilpError::IntegerOutOfRange(j))?;
            if b.lower < 0.0 || b.upper > 1.0 {
                return Err(MilpError::NotBinary {
                    index: j,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for group in &self.choice_groups {
            if group.is_empty() {
                return Err(MilpError::ChoiceGroup("empty group".into()));
            }
            for &j in group {
                if self.integer_vars.binary_search(&j).is_err() {
                    return Err(MilpError::ChoiceGroup(format!(
                        "variable {j} is not integer"
                    )));
                }
                if !seen.insert(j) {
                    return Err(MilpError::ChoiceGroup(format!(
                        "variable {j} is in two groups"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The same problem with integrality dropped.
    pub fn relaxation(&self) -> &LpProblem {
        &self.lp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpConfig {
    pub time_limit_s: f64,
    pub gap_tol: f64,
    pub int_tol: f64,
    pub workers: usize,
}

impl Default for MilpConfig {
    fn default() -> Self {
        Self {
            time_limit_s: 600.0,
            gap_tol: 1e-4,
            int_tol: 1e-6,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Feasible,
    Infeasible,
    TimeLimit,
}

/// Incumbent and global bound at one moment of the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSnapshot {
    pub incumbent: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpResult {
    pub status: MilpStatus,
    pub objective_value: f64,
    pub best_bound: f64,
    pub gap: f64,
    pub solution: Vec<f64>,
    pub nodes_explored: u64,
    /// Objective of the root LP relaxation (`+inf` if infeasible).
    pub root_bound: f64,
    pub trace: Vec<SearchSnapshot>,
}

/// Relative gap `(objective - bound) / max(1e-10, |objective|)`.
pub fn relative_gap(objective: f64, bound: f64) -> f64 {
    if !objective.is_finite() {
        return f64::INFINITY;
    }
    ((objective - bound) / objective.abs().max(1e-10)).max(0.0)
}

/// Fixings added at one branching step, linked to the parent's.
struct Fixings {
    vars: Vec<(usize, f64)>,
    parent: Option<Arc<Fixings>>,
}

fn for_each_fixing(mut link: Option<&Arc<Fixings>>, mut f: impl FnMut(usize, f64)) {
    while let Some(fix) = link {
        for &(j, v) in &fix.vars {
            f(j, v);
        }
        link = fix.parent.as_ref();
    }
}

type Child = (Option<Arc<Fixings>>, usize, f64, Option<Arc<Basis>>);

struct Node {
    /// Selection key: the bound, coarsened to the gap tolerance.
    rank: f64,
    bound: f64,
    depth: usize,
    seq: u64,
    fixings: Option<Arc<Fixings>>,
    basis: Option<Arc<Basis>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap pops the greatest: lowest rank, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .rank
            .total_cmp(&self.rank)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Node>,
    in_flight: BTreeMap<u64, f64>,
    next_seq: u64,
    nodes: u64,
    done: bool,
    timed_out: bool,
    error: Option<MilpError>,
    root_bound: Option<f64>,
    bound_seen: f64,
    trace: Vec<SearchSnapshot>,
    rank_width: f64,
}

impl Queue {
    fn open_bound(&self) -> f64 {
        let heap = self
            .heap
            .iter()
            .map(|n| n.bound)
            .fold(f64::INFINITY, f64::min);
        let flying = self
            .in_flight
            .values()
            .copied()
            .fold(f64::INFINITY, f64::min);
        heap.min(flying)
    }
}

struct Incumbent {
    value: AtomicU64,
    solution: Mutex<(f64, Vec<f64>)>,
}

impl Incumbent {
    fn get(&self) -> f64 {
        f64::from_bits(self.value.load(AtomicOrdering::Acquire))
    }

    /// Installs `(objective, x)` if it improves the incumbent.
    fn offer(&self, objective: f64, x: &[f64]) -> bool {
        let mut current = self.value.load(AtomicOrdering::Acquire);
        loop {
            if objective >= f64::from_bits(current) {
                return false;
            }
            match self.value.compare_exchange(
                current,
                objective.to_bits(),
                AtomicOrdering::AcqRel,
                AtomicOrdering::Acquire,
            ) {
                Ok(_) => break,
                Err(seen) => current = seen,
            }
        }
        let mut slot = self.solution.lock().unwrap();
        if objective < slot.0 {
            *slot = (objective, x.to_vec());
        }
        true
    }
}

struct Search<'a> {
    problem: &'a MilpProblem,
    config: &'a MilpConfig,
    deadline: Instant,
    queue: Mutex<Queue>,
    wake: Condvar,
    incumbent: Incumbent,
}

impl Search<'_> {
    fn prunable(&self, bound: f64, incumbent: f64) -> bool {
        if !incumbent.is_finite() {
            return false;
        }
        let slack = (self.config.gap_tol * incumbent.abs().max(1e-10)).max(1e-10);
        bound >= incumbent - slack
    }

    fn next_node(&self) -> Option<Node> {
        let mut q = self.queue.lock().unwrap();
        loop {
            if q.done {
                return None;
            }
            if Instant::now() >= self.deadline {
                q.done = true;
                q.timed_out = true;
                self.wake.notify_all();
                return None;
            }
            let incumbent = self.incumbent.get();
            if incumbent.is_finite()
                && self.prunable(q.open_bound(), incumbent)
                && q.root_bound.is_some()
            {
                q.done = true;
                self.wake.notify_all();
                return None;
            }
            if let Some(node) = q.heap.pop() {
                if self.prunable(node.bound, incumbent) {
                    continue;
                }
                q.in_flight.insert(node.seq, node.bound);
                return Some(node);
            }
            if q.in_flight.is_empty() {
                q.done = true;
                self.wake.notify_all();
                return None;
            }
            let remaining = self.deadline.saturating_duration_since(Instant::now());
            q = self
                .wake
                .wait_timeout(q, remaining.min(Duration::from_millis(200)))
                .unwrap()
                .0;
        }
    }

    fn worker(&self) {
        let mut simplex = Simplex::new(&self.problem.lp);
        let mut plunge: Option<Node> = None;
        loop {
            if let Some(node) = plunge.take() {
                let mut q = self.queue.lock().unwrap();
                if !q.done && Instant::now() < self.deadline {
                    plunge = Some(node);
                } else {
                    q.in_flight.remove(&node.seq);
                    q.heap.push(node);
                }
            }
            let node = match plunge.take().or_else(|| self.next_node()) {
                Some(node) => node,
                None => break,
            };
            let outcome = self.process(&mut simplex, &node);
            let mut q = self.queue.lock().unwrap();
            q.in_flight.remove(&node.seq);
            q.nodes += 1;
            match outcome {
                Ok((root_value, mut children)) => {
                    if node.seq == 0 {
                        q.root_bound = Some(root_value);
                        // bounds closer than the gap tolerance count as ties,
                        // which lets the search dive within that band
                        q.rank_width = self.config.gap_tol * root_value.abs();
                    }
                    // until a first incumbent exists, keep diving into the
                    // preferred (first) child instead of going best-first
                    let dive = !q.done && !self.incumbent.get().is_finite() && !children.is_empty();
                    let first = if dive { Some(children.remove(0)) } else { None };
                    for (fixings, depth, bound, basis) in children {
                        let seq = q.next_seq;
                        q.next_seq += 1;
                        let rank = if q.rank_width > 0.0 {
                            (bound / q.rank_width).floor()
                        } else {
                            bound
                        };
                        q.heap.push(Node {
                            rank,
                            bound,
                            depth,
                            seq,
                            fixings,
                            basis,
                        });
                    }
                    if let Some((fixings, depth, bound, basis)) = first {
                        let seq = q.next_seq;
                        q.next_seq += 1;
                        q.in_flight.insert(seq, bound);
                        let rank = if q.rank_width > 0.0 {
                            (bound / q.rank_width).floor()
                        } else {
                            bound
                        };
                        plunge = Some(Node {
                            rank,
                            bound,
                            depth,
                            seq,
                            fixings,
                            basis,
                        });
                    }
                }
                Err(e) => {
                    q.error.get_or_insert(e);
                    q.done = true;
                }
            }
            let incumbent = self.incumbent.get();
            let open = q.open_bound();
            // min(incumbent, open) never decreases: any later incumbent lies
            // inside a subtree that was open here.
            let bound = open.min(incumbent);
            if bound > q.bound_seen {
                q.bound_seen = bound;
            }
            let snapshot = SearchSnapshot {
                incumbent,
                bound: q.bound_seen,
            };
            if q.trace.last() != Some(&snapshot) {
                q.trace.push(snapshot);
            }
            self.wake.notify_all();
        }
    }

    /// Splits the most ambiguous fractional choice group where its LP mass
    /// crosses one half. Returns (kept-first side, other side) as the
    /// variables each child fixes to zero.
    fn group_split(&self, x: &[f64], node: &Node) -> Option<(Vec<usize>, Vec<usize>)> {
        let int_tol = self.config.int_tol;
        let mut fixed_zero = std::collections::HashSet::new();
        for_each_fixing(node.fixings.as_ref(), |j, v| {
            if v == 0.0 {
                fixed_zero.insert(j);
            }
        });
        let mut best: Option<(f64, Vec<usize>)> = None;
        for group in &self.problem.choice_groups {
            let free: Vec<usize> = group
                .iter()
                .copied()
                .filter(|j| !fixed_zero.contains(j))
                .collect();
            let fractional = free.iter().any(|&j| (x[j] - x[j].round()).abs() > int_tol);
            if !fractional || free.len() < 2 {
                continue;
            }
            let ambiguity = 1.0 - free.iter().map(|&j| x[j]).fold(0.0, f64::max);
            if best.as_ref().is_none_or(|(a, _)| ambiguity > *a) {
                best = Some((ambiguity, free));
            }
        }
        let (_, free) = best?;
        let mut mass = 0.0;
        let mut cut = free.len() - 1;
        for (i, &j) in free.iter().enumerate() {
            mass += x[j];
            if mass >= 0.5 {
                cut = i + 1;
                break;
            }
        }
        let cut = cut.clamp(1, free.len() - 1);
        let (left, right) = free.split_at(cut);
        let left_mass: f64 = left.iter().map(|&j| x[j]).sum();
        let right_mass: f64 = right.iter().map(|&j| x[j]).sum();
        // keeping the heavier side means fixing the lighter one to zero
        if left_mass >= right_mass {
            Some((right.to_vec(), left.to_vec()))
        } else {
            Some((left.to_vec(), right.to_vec()))
        }
    }

    /// Solves one node. Returns the node LP value and the children to enqueue.
    fn process(&self, simplex: &mut Simplex, node: &Node) -> Result<(f64, Vec<Child>), MilpError> {
        simplex.reset_bounds();
        for_each_fixing(node.fixings.as_ref(), |j, v| simplex.set_bounds(j, v, v));
        if let Some(basis) = &node.basis {
            simplex.load_basis(basis);
        }
        let out = simplex.solve().map_err(|source| MilpError::Node {
            node: node.seq,
            depth: node.depth,
            source,
        })?;
        match out.status {
            SimplexStatus::Infeasible => return Ok((f64::INFINITY, Vec::new())),
            SimplexStatus::Unbounded => return Err(MilpError::Unbounded),
            SimplexStatus::Optimal => {}
        }
        let value = out.objective;
        let bound = value.max(node.bound);
        if self.prunable(bound, self.incumbent.get()) {
            return Ok((value, Vec::new()));
        }
        let int_tol = self.config.int_tol;
        let mut branch: Option<(usize, f64, f64)> = None;
        for &j in &self.problem.integer_vars {
            let v = out.primal[j];
            let frac = (v - v.round()).abs();
            if frac <= int_tol {
                continue;
            }
            let distance = (v - 0.5).abs();
            if branch.is_none_or(|(_, best, _)| distance < best) {
                branch = Some((j, distance, v));
            }
        }
        let Some((var, _, v)) = branch else {
            let mut rounded = out.primal.clone();
            for &j in &self.problem.integer_vars {
                rounded[j] = rounded[j].round();
            }
            // rounding moves integers by at most int_tol; fall back to the raw
            // LP point if that alone breaks a row
            if self.problem.lp.is_feasible(&rounded) {
                self.incumbent
                    .offer(self.problem.lp.evaluate(&rounded), &rounded);
            } else {
                self.incumbent.offer(value, &out.primal);
            }
            return Ok((value, Vec::new()));
        };
        let basis = Arc::new(simplex.basis());
        let child = |vars: Vec<(usize, f64)>| {
            let fixings = Some(Arc::new(Fixings {
                vars,
                parent: node.fixings.clone(),
            }));
            (fixings, node.depth + 1, bound, Some(basis.clone()))
        };
        if let Some((first, second)) = self.group_split(&out.primal, node) {
            let zeros = |vars: Vec<usize>| vars.into_iter().map(|j| (j, 0.0)).collect();
            return Ok((value, vec![child(zeros(first)), child(zeros(second))]));
        }
        let up = v.round();
        Ok((
            value,
            vec![child(vec![(var, up)]), child(vec![(var, 1.0 - up)])],
        ))
    }
}

/// Runs branch and bound on `problem`.
pub fn solve_milp(problem: &MilpProblem, config: &MilpConfig) -> Result<MilpResult, MilpError> {
    solve_milp_from(problem, config, None)
}

/// Branch and bound seeded with a known feasible point as the first incumbent.
pub fn solve_milp_from(
    problem: &MilpProblem,
    config: &MilpConfig,
    start: Option<&[f64]>,
) -> Result<MilpResult, MilpError> {
    problem.validate()?;
    if let Some(x) = start {
        let integral = problem.integer_vars.iter().all(|&j| {
            x.get(j)
                .is_some_and(|v| (v - v.round()).abs() <= config.int_tol)
        });
        if x.len() != problem.lp.num_vars || !integral || !problem.lp.is_feasible(x) {
            return Err(MilpError::Config(
                "start point is not a feasible integer point".into(),
            ));
        }
    }
    if config.gap_tol.is_nan() || config.gap_tol < 0.0 {
        return Err(MilpError::Config("gap_tol must be non-negative".into()));
    }
    if !(config.int_tol > 0.0 && config.int_tol < 0.5) {
        return Err(MilpError::Config("int_tol must lie in (0, 0.5)".into()));
    }
    let workers = config.workers.max(1);
    let started = Instant::now();
    let deadline = started + Duration::from_secs_f64(config.time_limit_s.clamp(0.0, 1e9));
    let search = Search {
        problem,
        config,
        deadline,
        queue: Mutex::new(Queue {
            heap: BinaryHeap::from(vec![Node {
                rank: f64::NEG_INFINITY,
                bound: f64::NEG_INFINITY,
                depth: 0,
                seq: 0,
                fixings: None,
                basis: None,
            }]),
            in_flight: BTreeMap::new(),
            next_seq: 1,
            nodes: 0,
            done: false,
            timed_out: false,
            error: None,
            root_bound: None,
            bound_seen: f64::NEG_INFINITY,
            trace: Vec::new(),
            rank_width: 0.0,
        }),
        wake: Condvar::new(),
        incumbent: Incumbent {
            value: AtomicU64::new(f64::INFINITY.to_bits()),
            solution: Mutex::new((f64::INFINITY, Vec::new())),
        },
    };

    if let Some(x) = start {
        search.incumbent.offer(problem.lp.evaluate(x), x);
    }
    if workers == 1 {
        search.worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| search.worker());
            }
        });
    }

    let q = search.queue.into_inner().unwrap();
    if let Some(e) = q.error {
        return Err(e);
    }
    let (objective, solution) = search.incumbent.solution.into_inner().unwrap();
    let root_bound = q.root_bound.unwrap_or(f64::INFINITY);
    let exhausted = q.heap.is_empty() && q.in_flight.is_empty();
    let has_incumbent = objective.is_finite();
    let best_bound = if exhausted && !q.timed_out {
        objective
    } else {
        q.open_bound().max(q.bound_seen).min(objective)
    };
    let gap = relative_gap(objective, best_bound);
    let status = match (has_incumbent, q.timed_out) {
        (true, _) if gap <= config.gap_tol => MilpStatus::Optimal,
        (true, _) => MilpStatus::Feasible,
        (false, true) => MilpStatus::TimeLimit,
        (false, false) => MilpStatus::Infeasible,
    };
    if has_incumbent && q.root_bound.is_some() {
        debug_assert!(root_bound <= objective + 1e-7 * (1.0 + objective.abs()));
    }
    let mut trace = q.trace;
    if has_incumbent {
        let last = SearchSnapshot {
            incumbent: objective,
            bound: best_bound,
        };
        if trace.last() != Some(&last) {
            trace.push(last);
        }
    }
    Ok(MilpResult {
        status,
        objective_value: objective,
        best_bound,
        gap,
        solution,
        nodes_explored: q.nodes,
        root_bound,
        trace,
    })
}
