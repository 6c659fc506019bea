//! Two-stage scheduling: a peak-minimizing model bounds the demand, then a
//! cost-minimizing model schedules activities and batteries under a cap of
//! `beta_mul` times that peak.
//!
//! Modelling choices:
//! - Start binaries exist only for first-week slots where the whole activity
//!   fits inside one weekday's office hours; every other start is simply
//!   absent rather than forced to zero.
//! - "Active" indicators are not separate variables: activity `a` is active
//!   at `t` when one of the starts covering `t` is chosen, so the activity
//!   load at `t` is a sum of start binaries.
//! - The first-week schedule repeats in every later complete week by reusing
//!   the same binaries.
//! - Net demand variables exist only where something is schedulable; other
//!   intervals are constants that feed the peak bound or the cost offset.
//! - Battery decisions exist on unlocked slots (all slots by default); a
//!   locked slot is idle and carries the state of charge unchanged.
//! - Branch and bound starts from a greedy schedule (batteries idle) when that
//!   schedule is feasible, and branches on each activity's start set.

use crate::instance::{Instance, TimeGrid, DELTA_HOURS, SLOTS_PER_WEEK};
use crate::series::{SeriesError, SeriesFrame};
use peakshave_solver::{
    solve_lp, solve_milp_from, Bounds, LpError, LpProblem, LpStatus, MilpConfig, MilpError,
    MilpProblem, MilpResult, MilpStatus, Relation,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Converts kW × $/MWh per interval into dollars.
pub const ENERGY_COST_FACTOR: f64 = DELTA_HOURS / 1000.0;
pub const BETA_SMALL: f64 = 1.10;
pub const BETA_LARGE: f64 = 1.15;
/// Instances with more activities than this count as large.
pub const LARGE_INSTANCE_ACTIVITIES: usize = 100;

pub fn default_beta(instance: &Instance) -> f64 {
    if instance.activities.len() > LARGE_INSTANCE_ACTIVITIES {
        BETA_LARGE
    } else {
        BETA_SMALL
    }
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("bad input: {0}")]
    Input(String),
    #[error("infeasible by construction: {0}")]
    InfeasibleByConstruction(String),
    #[error("peak model is infeasible")]
    Infeasible,
    #[error(
        "cost model is infeasible under cap {beta_mul} x {stage1_peak_kw:.6} kW; try a larger beta_mul"
    )]
    Stage2Infeasible { stage1_peak_kw: f64, beta_mul: f64 },
    #[error("{stage} model: time limit reached before any schedule was found")]
    NoIncumbent { stage: &'static str },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

impl From<SeriesError> for ScheduleError {
    fn from(e: SeriesError) -> Self {
        ScheduleError::Input(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTag {
    /// Net demand between zero and the peak variable.
    PeakLink,
    SocBounds,
    ChargeExclusivity,
    BatteryPower,
    InitialSoc,
    SocBalance,
    ScheduledLoad,
    NetDemand,
    RoomCapacity,
    OfficeHours,
    SingleStart,
    Duration,
    Precedence,
    WeeklyRecurrence,
    /// Net demand between zero and `beta_mul` times the stage-one peak.
    PeakCap,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    Rows(Vec<usize>),
    VariableBounds,
    /// Folded into other rows or variables.
    Substitution,
    /// Enforced by not creating the variables at all.
    Omission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Peak,
    Cost,
}

#[derive(Debug, Clone, Default)]
pub struct BatteryVars {
    pub slots: Vec<usize>,
    pub charge: Vec<usize>,
    pub discharge: Vec<usize>,
    pub soc: Vec<usize>,
    pub power: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SchedulerModel {
    pub stage: Stage,
    pub milp: MilpProblem,
    pub registry: BTreeMap<ConstraintTag, Encoding>,
    pub row_tags: Vec<ConstraintTag>,
    /// Per activity: (first-week start slot, binary variable).
    pub starts: Vec<Vec<(usize, usize)>>,
    pub batteries: Vec<BatteryVars>,
    /// Net demand variable per interval, if the interval is not constant.
    pub power: Vec<Option<usize>>,
    /// Baseload minus solar per interval.
    pub fixed_net: Vec<f64>,
    pub peak: Option<usize>,
    pub copies: usize,
}

impl SchedulerModel {
    pub fn num_binaries(&self) -> usize {
        self.milp.integer_vars.len()
    }

    /// Largest net demand implied by a solution vector.
    pub fn peak_of(&self, x: &[f64]) -> f64 {
        self.power
            .iter()
            .zip(&self.fixed_net)
            .map(|(p, &c)| p.map_or(c, |j| x[j]))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn extract(
        &self,
        instance: &Instance,
        x: &[f64],
    ) -> (BTreeMap<String, usize>, BTreeMap<String, Vec<BatteryOp>>) {
        let starts = instance
            .activities
            .iter()
            .zip(&self.starts)
            .map(|(a, vars)| {
                let &(slot, _) = vars
                    .iter()
                    .max_by(|p, q| x[p.1].total_cmp(&x[q.1]))
                    .expect("activity has starts");
                (a.id.clone(), slot)
            })
            .collect();
        let horizon = self.fixed_net.len();
        let ops = instance
            .batteries
            .iter()
            .zip(&self.batteries)
            .map(|(b, vars)| {
                let mut ops = vec![BatteryOp::Idle; horizon];
                for (k, &t) in vars.slots.iter().enumerate() {
                    if x[vars.charge[k]] > 0.5 {
                        ops[t] = BatteryOp::Charge;
                    } else if x[vars.discharge[k]] > 0.5 {
                        ops[t] = BatteryOp::Discharge;
                    }
                }
                (b.id.clone(), ops)
            })
            .collect();
        (starts, ops)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatteryOp {
    #[serde(rename = "c")]
    Charge,
    #[serde(rename = "d")]
    Discharge,
    #[serde(rename = "i")]
    Idle,
}

#[derive(Debug, Clone, Default)]
pub struct ModelOptions {
    /// Slots where batteries may act; `None` unlocks the whole horizon.
    pub battery_slots: Option<Vec<usize>>,
}

/// First-week start slots where an activity of `duration` fits inside one
/// weekday's office hours.
pub fn allowed_starts(grid: &TimeGrid, duration: usize) -> Vec<usize> {
    grid.first_week()
        .filter(|&s| {
            let tod = s % crate::instance::SLOTS_PER_DAY;
            grid.is_active_slot(s)
                && tod + duration <= grid.office_end_slot
                && s + duration <= grid.horizon_len
        })
        .collect()
}

struct Inputs {
    fixed_net: Vec<f64>,
    prices: Option<Vec<f64>>,
}

fn check_series(
    instance: &Instance,
    s: &SeriesFrame,
    what: &str,
) -> Result<Vec<f64>, ScheduleError> {
    let h = instance.grid.horizon_len;
    if s.len() != h {
        return Err(ScheduleError::Input(format!(
            "{what} has {} values, horizon is {h}",
            s.len()
        )));
    }
    if s.start_timestamp != instance.grid.start_timestamp {
        return Err(ScheduleError::Input(format!(
            "{what} starts at {}, instance at {}",
            s.start_timestamp, instance.grid.start_timestamp
        )));
    }
    Ok(s.dense()?)
}

fn inputs(
    instance: &Instance,
    baseload: &SeriesFrame,
    solar: &SeriesFrame,
    prices: Option<&SeriesFrame>,
) -> Result<Inputs, ScheduleError> {
    instance
        .validate()
        .map_err(|e| ScheduleError::Input(e.to_string()))?;
    let base = check_series(instance, baseload, "baseload")?;
    let sol = check_series(instance, solar, "solar")?;
    let prices = prices
        .map(|p| check_series(instance, p, "prices"))
        .transpose()?;
    Ok(Inputs {
        fixed_net: base.iter().zip(&sol).map(|(b, s)| b - s).collect(),
        prices,
    })
}

fn prechecks(instance: &Instance, starts: &[Vec<usize>]) -> Result<(), ScheduleError> {
    let grid = &instance.grid;
    let infeasible = |m: String| Err(ScheduleError::InfeasibleByConstruction(m));
    for (a, s) in instance.activities.iter().zip(starts) {
        if a.rooms_small > instance.rooms_small_total || a.rooms_large > instance.rooms_large_total
        {
            return infeasible(format!(
                "activity {} needs {} small / {} large rooms, only {} / {} exist",
                a.id,
                a.rooms_small,
                a.rooms_large,
                instance.rooms_small_total,
                instance.rooms_large_total
            ));
        }
        if s.is_empty() {
            return infeasible(format!("activity {} has no admissible start", a.id));
        }
    }
    let office_slots = grid
        .first_week()
        .filter(|&t| grid.is_active_slot(t))
        .count();
    let small: usize = instance
        .activities
        .iter()
        .map(|a| a.rooms_small * a.duration_slots)
        .sum();
    let large: usize = instance
        .activities
        .iter()
        .map(|a| a.rooms_large * a.duration_slots)
        .sum();
    if small > instance.rooms_small_total * office_slots
        || large > instance.rooms_large_total * office_slots
    {
        return infeasible("room-time demand exceeds weekly office capacity".into());
    }
    let order = instance
        .topological_order()
        .map_err(|id| ScheduleError::Input(format!("cycle through {id}")))?;
    let preds = instance.predecessor_indices();
    let mut earliest = vec![0usize; instance.activities.len()];
    for a in order {
        let need = preds[a].iter().map(|&k| earliest[k] + 1).max().unwrap_or(0);
        match starts[a]
            .iter()
            .map(|&s| TimeGrid::day_of(s))
            .find(|&d| d >= need)
        {
            Some(d) => earliest[a] = d,
            None => {
                return infeasible(format!(
                    "precedence chain ending at {} does not fit in a week",
                    instance.activities[a].id
                ))
            }
        }
    }
    Ok(())
}

enum Objective<'a> {
    Peak,
    Cost { prices: &'a [f64], cap: f64 },
}

fn build(
    instance: &Instance,
    inputs: &Inputs,
    objective: Objective,
    options: &ModelOptions,
) -> Result<SchedulerModel, ScheduleError> {
    let grid = &instance.grid;
    let h = grid.horizon_len;
    let starts_by_activity: Vec<Vec<usize>> = instance
        .activities
        .iter()
        .map(|a| allowed_starts(grid, a.duration_slots))
        .collect();
    prechecks(instance, &starts_by_activity)?;
    let copies = grid.weekly_copies();

    let mut lp = LpProblem::new(0);
    let mut integer_vars = Vec::new();
    let mut row_tags = Vec::new();
    let mut add_row = |lp: &mut LpProblem,
                       tag: ConstraintTag,
                       coeffs: Vec<(usize, f64)>,
                       rel: Relation,
                       rhs: f64| {
        row_tags.push(tag);
        lp.add_constraint(coeffs, rel, rhs)
    };

    // start binaries and the load they place on each interval
    let mut load_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); h];
    let mut starts = Vec::with_capacity(instance.activities.len());
    for (a, slots) in instance.activities.iter().zip(&starts_by_activity) {
        let mut vars = Vec::with_capacity(slots.len());
        for &s in slots {
            let j = lp.add_var(0.0, Bounds::BINARY);
            integer_vars.push(j);
            vars.push((s, j));
            for w in 0..copies {
                for t in (s + w * SLOTS_PER_WEEK..s + w * SLOTS_PER_WEEK + a.duration_slots)
                    .filter(|&t| t < h)
                {
                    load_terms[t].push((j, a.power_kw()));
                }
            }
        }
        starts.push(vars);
    }

    let unlocked: Vec<usize> = match &options.battery_slots {
        None => (0..h).collect(),
        Some(s) => {
            let mut s: Vec<usize> = s.iter().copied().filter(|&t| t < h).collect();
            s.sort_unstable();
            s.dedup();
            s
        }
    };
    let mut battery_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); h];
    let mut batteries = Vec::with_capacity(instance.batteries.len());
    for b in &instance.batteries {
        let mut v = BatteryVars {
            slots: unlocked.clone(),
            ..Default::default()
        };
        let mut prev_soc: Option<usize> = None;
        for &t in &unlocked {
            let c = lp.add_var(0.0, Bounds::BINARY);
            let d = lp.add_var(0.0, Bounds::BINARY);
            integer_vars.extend([c, d]);
            let e = lp.add_var(0.0, Bounds::new(0.0, b.capacity_kwh));
            let p = lp.add_var(0.0, Bounds::new(-b.discharge_grid_kw(), b.charge_grid_kw()));
            add_row(
                &mut lp,
                ConstraintTag::ChargeExclusivity,
                vec![(c, 1.0), (d, 1.0)],
                Relation::Le,
                1.0,
            );
            add_row(
                &mut lp,
                ConstraintTag::BatteryPower,
                vec![
                    (p, 1.0),
                    (c, -b.charge_grid_kw()),
                    (d, b.discharge_grid_kw()),
                ],
                Relation::Eq,
                0.0,
            );
            let step = vec![
                (e, 1.0),
                (c, -DELTA_HOURS * b.charge_kw),
                (d, DELTA_HOURS * b.discharge_kw),
            ];
            match prev_soc {
                Some(prev) => {
                    let mut coeffs = step;
                    coeffs.push((prev, -1.0));
                    add_row(
                        &mut lp,
                        ConstraintTag::SocBalance,
                        coeffs,
                        Relation::Eq,
                        0.0,
                    )
                }
                None => add_row(
                    &mut lp,
                    ConstraintTag::SocBalance,
                    step,
                    Relation::Eq,
                    b.capacity_kwh,
                ),
            };
            prev_soc = Some(e);
            battery_terms[t].push((p, 1.0));
            v.charge.push(c);
            v.discharge.push(d);
            v.soc.push(e);
            v.power.push(p);
        }
        batteries.push(v);
    }

    let fixed_net = inputs.fixed_net.clone();
    let mut power = vec![None; h];
    let peak = match objective {
        Objective::Peak => {
            let floor = (0..h)
                .filter(|&t| load_terms[t].is_empty() && battery_terms[t].is_empty())
                .map(|t| fixed_net[t])
                .fold(0.0, f64::max);
            Some(lp.add_var(1.0, Bounds::new(floor, f64::INFINITY)))
        }
        Objective::Cost { .. } => None,
    };
    for t in 0..h {
        let constant = load_terms[t].is_empty() && battery_terms[t].is_empty();
        if constant {
            if fixed_net[t] < -1e-9 {
                return Err(ScheduleError::InfeasibleByConstruction(format!(
                    "net demand {:.6} kW at interval {t} exports to the grid and nothing can absorb it",
                    fixed_net[t]
                )));
            }
            if let Objective::Cost { prices, cap } = objective {
                if fixed_net[t] > cap + 1e-9 * (1.0 + cap.abs()) {
                    return Err(ScheduleError::Stage2Infeasible {
                        stage1_peak_kw: f64::NAN,
                        beta_mul: f64::NAN,
                    });
                }
                lp.objective_offset += ENERGY_COST_FACTOR * prices[t] * fixed_net[t];
            }
            continue;
        }
        let (cost, upper) = match objective {
            Objective::Peak => (0.0, f64::INFINITY),
            Objective::Cost { prices, cap } => (ENERGY_COST_FACTOR * prices[t], cap),
        };
        let p = lp.add_var(cost, Bounds::new(0.0, upper));
        power[t] = Some(p);
        let mut coeffs = vec![(p, 1.0)];
        coeffs.extend(load_terms[t].iter().map(|&(j, kw)| (j, -kw)));
        coeffs.extend(battery_terms[t].iter().map(|&(j, s)| (j, -s)));
        add_row(
            &mut lp,
            ConstraintTag::NetDemand,
            coeffs,
            Relation::Eq,
            fixed_net[t],
        );
        if let Some(pm) = peak {
            add_row(
                &mut lp,
                ConstraintTag::PeakLink,
                vec![(p, 1.0), (pm, -1.0)],
                Relation::Le,
                0.0,
            );
        }
    }

    // rooms: the weekly copies repeat the first week, so first-week rows suffice
    for t in grid.first_week() {
        for large in [false, true] {
            let total = if large {
                instance.rooms_large_total
            } else {
                instance.rooms_small_total
            };
            let mut coeffs = Vec::new();
            let mut worst = 0;
            for (a, vars) in instance.activities.iter().zip(&starts) {
                let r = if large { a.rooms_large } else { a.rooms_small };
                if r == 0 {
                    continue;
                }
                let covering: Vec<usize> = vars
                    .iter()
                    .filter(|&&(s, _)| s <= t && t < s + a.duration_slots)
                    .map(|&(_, j)| j)
                    .collect();
                if !covering.is_empty() {
                    worst += r;
                    coeffs.extend(covering.into_iter().map(|j| (j, r as f64)));
                }
            }
            // skip rows no schedule could violate
            if worst > total {
                add_row(
                    &mut lp,
                    ConstraintTag::RoomCapacity,
                    coeffs,
                    Relation::Le,
                    total as f64,
                );
            }
        }
    }

    for vars in &starts {
        add_row(
            &mut lp,
            ConstraintTag::SingleStart,
            vars.iter().map(|&(_, j)| (j, 1.0)).collect(),
            Relation::Eq,
            1.0,
        );
    }

    for (a, preds) in instance.predecessor_indices().iter().enumerate() {
        for &k in preds {
            let mut coeffs: Vec<(usize, f64)> = starts[a]
                .iter()
                .map(|&(s, j)| (j, TimeGrid::day_of(s) as f64))
                .collect();
            coeffs.extend(
                starts[k]
                    .iter()
                    .map(|&(s, j)| (j, -(TimeGrid::day_of(s) as f64))),
            );
            add_row(
                &mut lp,
                ConstraintTag::Precedence,
                coeffs,
                Relation::Ge,
                1.0,
            );
        }
    }

    let mut registry: BTreeMap<ConstraintTag, Encoding> = BTreeMap::new();
    for (i, tag) in row_tags.iter().enumerate() {
        if let Encoding::Rows(r) = registry
            .entry(*tag)
            .or_insert_with(|| Encoding::Rows(Vec::new()))
        {
            r.push(i);
        }
    }
    let row_kinds = [
        ConstraintTag::ChargeExclusivity,
        ConstraintTag::BatteryPower,
        ConstraintTag::SocBalance,
        ConstraintTag::NetDemand,
        ConstraintTag::RoomCapacity,
        ConstraintTag::SingleStart,
        ConstraintTag::Precedence,
    ];
    for tag in row_kinds {
        registry
            .entry(tag)
            .or_insert_with(|| Encoding::Rows(Vec::new()));
    }
    registry.insert(ConstraintTag::SocBounds, Encoding::VariableBounds);
    registry.insert(ConstraintTag::InitialSoc, Encoding::Substitution);
    registry.insert(ConstraintTag::ScheduledLoad, Encoding::Substitution);
    registry.insert(ConstraintTag::OfficeHours, Encoding::Omission);
    registry.insert(ConstraintTag::Duration, Encoding::Substitution);
    registry.insert(ConstraintTag::WeeklyRecurrence, Encoding::Substitution);
    let stage = match objective {
        Objective::Peak => {
            registry
                .entry(ConstraintTag::PeakLink)
                .or_insert_with(|| Encoding::Rows(Vec::new()));
            Stage::Peak
        }
        Objective::Cost { .. } => {
            registry.insert(ConstraintTag::PeakCap, Encoding::VariableBounds);
            Stage::Cost
        }
    };

    let groups = starts
        .iter()
        .map(|vars| vars.iter().map(|&(_, j)| j).collect())
        .collect();
    let milp = MilpProblem::new(lp, integer_vars)?.with_choice_groups(groups)?;
    Ok(SchedulerModel {
        stage,
        milp,
        registry,
        row_tags,
        starts,
        batteries,
        power,
        fixed_net,
        peak,
        copies,
    })
}

/// Peak-minimization model.
pub fn build_sp1(
    instance: &Instance,
    baseload: &SeriesFrame,
    solar: &SeriesFrame,
    options: &ModelOptions,
) -> Result<SchedulerModel, ScheduleError> {
    let inputs = inputs(instance, baseload, solar, None)?;
    build(instance, &inputs, Objective::Peak, options)
}

/// Energy-cost model with net demand capped at `beta_mul * p_max1`.
#[allow(clippy::too_many_arguments)]
pub fn build_sp2(
    instance: &Instance,
    baseload: &SeriesFrame,
    solar: &SeriesFrame,
    prices: &SeriesFrame,
    p_max1: f64,
    beta_mul: f64,
    options: &ModelOptions,
) -> Result<SchedulerModel, ScheduleError> {
    if !(beta_mul.is_finite() && beta_mul >= 1.0) {
        return Err(ScheduleError::Input(format!(
            "beta_mul {beta_mul} must be at least 1"
        )));
    }
    if !(p_max1.is_finite() && p_max1 >= 0.0) {
        return Err(ScheduleError::Input(format!(
            "stage-one peak {p_max1} must be finite and nonnegative"
        )));
    }
    let inputs = inputs(instance, baseload, solar, Some(prices))?;
    let prices = inputs.prices.clone().unwrap();
    build(
        instance,
        &inputs,
        Objective::Cost {
            prices: &prices,
            cap: beta_mul * p_max1,
        },
        options,
    )
    .map_err(|e| match e {
        ScheduleError::Stage2Infeasible { .. } => ScheduleError::Stage2Infeasible {
            stage1_peak_kw: p_max1,
            beta_mul,
        },
        e => e,
    })
}

/// A feasible point with batteries idle: activities placed one at a time where
/// they raise the peak least, then moved one at a time while that lowers the
/// peak of their own window. `None` if the greedy pass gets stuck or the point
/// breaks a row of `model` (e.g. a stage-two cap).
pub fn greedy_start(instance: &Instance, model: &SchedulerModel) -> Option<Vec<f64>> {
    let acts = &instance.activities;
    let n = acts.len();
    let h = model.fixed_net.len();
    let preds = instance.predecessor_indices();
    let mut succs = vec![Vec::new(); n];
    for (a, ps) in preds.iter().enumerate() {
        for &k in ps {
            succs[k].push(a);
        }
    }
    let order = instance.topological_order().ok()?;
    // longest chain of successors, so early placements leave them a day
    let mut height = vec![0usize; n];
    for &a in order.iter().rev() {
        height[a] = succs[a].iter().map(|&b| height[b] + 1).max().unwrap_or(0);
    }
    let last_day = model
        .starts
        .iter()
        .flatten()
        .map(|&(s, _)| TimeGrid::day_of(s))
        .max()
        .unwrap_or(0);

    let mut load = vec![0.0; h];
    let mut rooms = vec![[0usize; 2]; h];
    let mut placed: Vec<Option<usize>> = vec![None; n];
    let span = |a: usize, s: usize| {
        (0..model.copies).flat_map(move |w| {
            (s + w * SLOTS_PER_WEEK..s + w * SLOTS_PER_WEEK + acts[a].duration_slots)
                .filter(move |&t| t < h)
        })
    };
    let apply = |load: &mut [f64], rooms: &mut [[usize; 2]], a: usize, s: usize, sign: f64| {
        for t in span(a, s) {
            load[t] += sign * acts[a].power_kw();
        }
        for r in &mut rooms[s..s + acts[a].duration_slots] {
            if sign > 0.0 {
                r[0] += acts[a].rooms_small;
                r[1] += acts[a].rooms_large;
            } else {
                r[0] -= acts[a].rooms_small;
                r[1] -= acts[a].rooms_large;
            }
        }
    };
    // (window peak, window energy) of placing `a` at `s`, if admissible
    let score = |load: &[f64],
                 rooms: &[[usize; 2]],
                 placed: &[Option<usize>],
                 a: usize,
                 s: usize|
     -> Option<(f64, f64)> {
        let day = TimeGrid::day_of(s);
        let lo = preds[a]
            .iter()
            .filter_map(|&k| placed[k])
            .map(|p| TimeGrid::day_of(p) + 1)
            .max()
            .unwrap_or(0);
        let hi = if succs[a].iter().any(|&k| placed[k].is_none()) {
            last_day.saturating_sub(height[a])
        } else {
            last_day
        };
        let fits = day >= lo
            && day <= hi
            && succs[a]
                .iter()
                .all(|&k| placed[k].is_none_or(|p| TimeGrid::day_of(p) > day))
            && rooms[s..s + acts[a].duration_slots].iter().all(|r| {
                r[0] + acts[a].rooms_small <= instance.rooms_small_total
                    && r[1] + acts[a].rooms_large <= instance.rooms_large_total
            });
        fits.then(|| {
            span(a, s).fold((f64::NEG_INFINITY, 0.0), |(m, e), t| {
                let v = model.fixed_net[t] + load[t] + acts[a].power_kw();
                (m.max(v), e + v)
            })
        })
    };
    let better =
        |x: (f64, f64), y: (f64, f64)| x.0 < y.0 - 1e-9 || (x.0 <= y.0 + 1e-9 && x.1 < y.1 - 1e-9);
    let best_slot = |load: &[f64], rooms: &[[usize; 2]], placed: &[Option<usize>], a: usize| {
        let mut best: Option<(usize, (f64, f64))> = None;
        for &(s, _) in &model.starts[a] {
            if let Some(v) = score(load, rooms, placed, a, s) {
                if best.is_none_or(|(_, b)| better(v, b)) {
                    best = Some((s, v));
                }
            }
        }
        best
    };

    for &a in &order {
        let (s, _) = best_slot(&load, &rooms, &placed, a)?;
        apply(&mut load, &mut rooms, a, s, 1.0);
        placed[a] = Some(s);
    }
    for _ in 0..20 {
        let mut moved = false;
        for &a in &order {
            let current = placed[a].expect("placed above");
            apply(&mut load, &mut rooms, a, current, -1.0);
            placed[a] = None;
            let here =
                score(&load, &rooms, &placed, a, current).expect("current slot stays admissible");
            let s = match best_slot(&load, &rooms, &placed, a) {
                Some((s, v)) if better(v, here) => {
                    moved = true;
                    s
                }
                _ => current,
            };
            apply(&mut load, &mut rooms, a, s, 1.0);
            placed[a] = Some(s);
        }
        if !moved {
            break;
        }
    }

    let mut x = vec![0.0; model.milp.lp.num_vars];
    for (a, vars) in model.starts.iter().enumerate() {
        let &(_, j) = vars.iter().find(|&&(s, _)| Some(s) == placed[a])?;
        x[j] = 1.0;
    }
    for (b, vars) in instance.batteries.iter().zip(&model.batteries) {
        for &e in &vars.soc {
            x[e] = b.capacity_kwh;
        }
    }
    let mut peak = f64::NEG_INFINITY;
    for (t, p) in model.power.iter().enumerate() {
        if let Some(j) = *p {
            x[j] = model.fixed_net[t] + load[t];
            peak = peak.max(x[j]);
        }
    }
    if let Some(pm) = model.peak {
        x[pm] = peak.max(model.milp.lp.bounds[pm].lower);
    }
    model.milp.lp.is_feasible(&x).then_some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stage1Mode {
    /// Root LP relaxation: a lower bound on the peak.
    #[default]
    LpRelaxation,
    FullMilp,
}

#[derive(Debug, Clone)]
pub struct Stage1Outcome {
    /// The peak handed to the cost model.
    pub peak_kw: f64,
    /// Optimal value of the LP relaxation.
    pub lp_value: f64,
    pub milp: Option<MilpResult>,
}

pub fn solve_stage1(
    instance: &Instance,
    model: &SchedulerModel,
    mode: Stage1Mode,
    config: &MilpConfig,
) -> Result<Stage1Outcome, ScheduleError> {
    assert_eq!(
        model.stage,
        Stage::Peak,
        "stage-one solve needs the peak model"
    );
    match mode {
        Stage1Mode::LpRelaxation => {
            let r = solve_lp(model.milp.relaxation())?;
            match r.status {
                LpStatus::Optimal => Ok(Stage1Outcome {
                    peak_kw: r.objective_value,
                    lp_value: r.objective_value,
                    milp: None,
                }),
                LpStatus::Infeasible => Err(ScheduleError::Infeasible),
                LpStatus::Unbounded => unreachable!("peak objective is bounded below by zero"),
            }
        }
        Stage1Mode::FullMilp => {
            let start = greedy_start(instance, model);
            let r = solve_milp_from(&model.milp, config, start.as_deref())?;
            match r.status {
                MilpStatus::Infeasible => Err(ScheduleError::Infeasible),
                MilpStatus::TimeLimit => Err(ScheduleError::NoIncumbent { stage: "peak" }),
                MilpStatus::Optimal | MilpStatus::Feasible => {
                    // the realized peak, so a cap of exactly this value stays feasible
                    let peak_kw = model.peak_of(&r.solution).max(r.objective_value);
                    Ok(Stage1Outcome {
                        peak_kw,
                        lp_value: r.root_bound,
                        milp: Some(r),
                    })
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub stage1_mode: Stage1Mode,
    pub milp: MilpConfig,
    pub model: ModelOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            stage1_mode: Stage1Mode::LpRelaxation,
            milp: MilpConfig::default(),
            model: ModelOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverStats {
    pub stage1: Stage1Outcome,
    pub stage2: MilpResult,
    pub stage2_binaries: usize,
    pub stage2_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSolution {
    pub starts: BTreeMap<String, usize>,
    pub battery_ops: BTreeMap<String, Vec<BatteryOp>>,
    #[serde(rename = "net_demand_kw")]
    pub net_demand: Vec<f64>,
    pub peak_kw: f64,
    pub energy_cost: f64,
    pub stage1_peak_kw: f64,
    pub beta_mul: f64,
    #[serde(skip)]
    pub solver_stats: Option<SolverStats>,
}

impl ScheduleSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Net demand implied by a schedule, computed directly from the inputs.
pub fn net_demand(
    instance: &Instance,
    fixed_net: &[f64],
    starts: &BTreeMap<String, usize>,
    ops: &BTreeMap<String, Vec<BatteryOp>>,
) -> Vec<f64> {
    let grid = &instance.grid;
    let mut net = fixed_net.to_vec();
    for a in &instance.activities {
        let Some(&s) = starts.get(&a.id) else {
            continue;
        };
        for w in 0..grid.weekly_copies() {
            for t in
                s + w * SLOTS_PER_WEEK..(s + w * SLOTS_PER_WEEK + a.duration_slots).min(net.len())
            {
                net[t] += a.power_kw();
            }
        }
    }
    for b in &instance.batteries {
        let Some(ops) = ops.get(&b.id) else { continue };
        for (t, op) in ops.iter().enumerate().take(net.len()) {
            match op {
                BatteryOp::Charge => net[t] += b.charge_grid_kw(),
                BatteryOp::Discharge => net[t] -= b.discharge_grid_kw(),
                BatteryOp::Idle => {}
            }
        }
    }
    net
}

pub fn energy_cost(net: &[f64], prices: &[f64]) -> f64 {
    ENERGY_COST_FACTOR * net.iter().zip(prices).map(|(p, l)| p * l).sum::<f64>()
}

/// Stage one (peak bound), then stage two (energy cost under the cap).
pub fn two_stage_solve(
    instance: &Instance,
    baseload: &SeriesFrame,
    solar: &SeriesFrame,
    prices: &SeriesFrame,
    beta_mul: f64,
    config: &SolveConfig,
) -> Result<ScheduleSolution, ScheduleError> {
    let sp1 = build_sp1(instance, baseload, solar, &config.model)?;
    let stage1 = solve_stage1(instance, &sp1, config.stage1_mode, &config.milp)?;
    let p1 = stage1.peak_kw;
    let sp2 = build_sp2(
        instance,
        baseload,
        solar,
        prices,
        p1,
        beta_mul,
        &config.model,
    )?;
    let start = greedy_start(instance, &sp2);
    let r = solve_milp_from(&sp2.milp, &config.milp, start.as_deref())?;
    match r.status {
        MilpStatus::Infeasible => {
            return Err(ScheduleError::Stage2Infeasible {
                stage1_peak_kw: p1,
                beta_mul,
            })
        }
        MilpStatus::TimeLimit => return Err(ScheduleError::NoIncumbent { stage: "cost" }),
        MilpStatus::Optimal | MilpStatus::Feasible => {}
    }
    let (starts, battery_ops) = sp2.extract(instance, &r.solution);
    let net = net_demand(instance, &sp2.fixed_net, &starts, &battery_ops);
    debug_assert!(sp2
        .power
        .iter()
        .zip(&net)
        .all(|(p, n)| p.is_none_or(|j| (r.solution[j] - n).abs() <= 1e-6 * (1.0 + n.abs()))));
    let price_values = prices.dense()?;
    let peak_kw = net.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ScheduleSolution {
        starts,
        battery_ops,
        energy_cost: energy_cost(&net, &price_values),
        net_demand: net,
        peak_kw,
        stage1_peak_kw: p1,
        beta_mul,
        solver_stats: Some(SolverStats {
            stage1,
            stage2_binaries: sp2.num_binaries(),
            stage2_rows: sp2.milp.lp.constraints.len(),
            stage2: r,
        }),
    })
}
