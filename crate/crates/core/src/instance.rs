//! Problem data: time grid, activities, batteries, and the JSON instance format.

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use thiserror::Error;

pub const SLOTS_PER_DAY: usize = 96;
pub const SLOTS_PER_WEEK: usize = 7 * SLOTS_PER_DAY;
pub const DELTA_MINUTES: u32 = 15;
/// Interval length in hours.
pub const DELTA_HOURS: f64 = 0.25;
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid {entity}: {message}")]
    Validation { entity: String, message: String },
}

fn invalid(entity: impl Into<String>, message: impl Into<String>) -> InstanceError {
    InstanceError::Validation {
        entity: entity.into(),
        message: message.into(),
    }
}

pub fn parse_timestamp(text: &str) -> Result<NaiveDateTime, chrono::ParseError> {
    NaiveDateTime::parse_from_str(text, TIMESTAMP_FORMAT)
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub start_timestamp: NaiveDateTime,
    pub delta_minutes: u32,
    pub horizon_len: usize,
    /// Interval index of 00:00 on the first Monday.
    pub first_monday_offset: usize,
    pub office_start_slot: usize,
    /// Exclusive.
    pub office_end_slot: usize,
}

impl TimeGrid {
    pub fn new(
        start_timestamp: NaiveDateTime,
        horizon_len: usize,
        first_monday_offset: usize,
        office_start_slot: usize,
        office_end_slot: usize,
    ) -> Result<Self, InstanceError> {
        let grid = TimeGrid {
            start_timestamp,
            delta_minutes: DELTA_MINUTES,
            horizon_len,
            first_monday_offset,
            office_start_slot,
            office_end_slot,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.delta_minutes != DELTA_MINUTES {
            return Err(invalid(
                "grid",
                format!("delta_minutes must be {DELTA_MINUTES}"),
            ));
        }
        if self.horizon_len == 0 || !self.horizon_len.is_multiple_of(SLOTS_PER_DAY) {
            return Err(invalid(
                "grid",
                format!(
                    "horizon_len {} is not a positive number of days",
                    self.horizon_len
                ),
            ));
        }
        if self.first_monday_offset >= SLOTS_PER_WEEK
            || !self.first_monday_offset.is_multiple_of(SLOTS_PER_DAY)
        {
            return Err(invalid(
                "grid",
                format!(
                    "first_monday_offset {} must be a day boundary within the first week",
                    self.first_monday_offset
                ),
            ));
        }
        if self.first_monday_offset >= self.horizon_len {
            return Err(invalid("grid", "first Monday lies outside the horizon"));
        }
        if !(self.office_start_slot < self.office_end_slot && self.office_end_slot <= SLOTS_PER_DAY)
        {
            return Err(invalid(
                "grid",
                format!(
                    "office hours {}..{} are not a window within a day",
                    self.office_start_slot, self.office_end_slot
                ),
            ));
        }
        if self.start_timestamp.hour() != 0 || self.start_timestamp.minute() != 0 {
            return Err(invalid("grid", "start_timestamp must be at 00:00"));
        }
        let monday =
            self.start_timestamp + chrono::Duration::minutes(15 * self.first_monday_offset as i64);
        if monday.weekday() != Weekday::Mon {
            return Err(invalid(
                "grid",
                format!(
                    "first_monday_offset {} lands on a {:?}",
                    self.first_monday_offset,
                    monday.weekday()
                ),
            ));
        }
        Ok(())
    }

    pub fn office_len(&self) -> usize {
        self.office_end_slot - self.office_start_slot
    }

    /// Whether an activity may occupy interval `t`: office hours on a weekday
    /// on or after the first Monday.
    pub fn is_active_slot(&self, t: usize) -> bool {
        if t < self.first_monday_offset || t >= self.horizon_len {
            return false;
        }
        let tod = t % SLOTS_PER_DAY;
        let weekday = ((t - self.first_monday_offset) / SLOTS_PER_DAY) % 7;
        tod >= self.office_start_slot && tod < self.office_end_slot && weekday < 5
    }

    /// Intervals of the first scheduling week that lie inside the horizon.
    pub fn first_week(&self) -> Range<usize> {
        self.first_monday_offset..(self.first_monday_offset + SLOTS_PER_WEEK).min(self.horizon_len)
    }

    /// Number of weekly copies of the first-week schedule: complete weeks
    /// after the first Monday, and at least the (possibly partial) first one.
    pub fn weekly_copies(&self) -> usize {
        ((self.horizon_len - self.first_monday_offset) / SLOTS_PER_WEEK).max(1)
    }

    /// Day index of interval `t` counted from the start of the horizon.
    pub fn day_of(t: usize) -> usize {
        t / SLOTS_PER_DAY
    }

    pub fn timestamp_of(&self, t: usize) -> NaiveDateTime {
        self.start_timestamp + chrono::Duration::minutes(self.delta_minutes as i64 * t as i64)
    }
}

/// Intervals in which no activity may be active.
pub fn non_active_set(grid: &TimeGrid) -> BTreeSet<usize> {
    (0..grid.horizon_len)
        .filter(|&t| !grid.is_active_slot(t))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activity {
    pub id: String,
    pub duration_slots: usize,
    pub power_per_room_kw: f64,
    pub rooms_small: usize,
    pub rooms_large: usize,
    pub predecessors: Vec<String>,
}

impl Activity {
    /// Load drawn while the activity is running.
    pub fn power_kw(&self) -> f64 {
        self.power_per_room_kw * (self.rooms_small + self.rooms_large) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Battery {
    pub id: String,
    pub capacity_kwh: f64,
    pub charge_kw: f64,
    pub discharge_kw: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
}

impl Battery {
    /// Grid-side power while charging.
    pub fn charge_grid_kw(&self) -> f64 {
        self.charge_kw / self.eff_charge.sqrt()
    }

    /// Grid-side power delivered while discharging (positive number).
    pub fn discharge_grid_kw(&self) -> f64 {
        self.discharge_kw * self.eff_discharge.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub grid: TimeGrid,
    pub activities: Vec<Activity>,
    pub batteries: Vec<Battery>,
    pub rooms_small_total: usize,
    pub rooms_large_total: usize,
}

impl Instance {
    /// Checks everything except room availability, which is a feasibility
    /// question left to the model builder.
    pub fn validate(&self) -> Result<(), InstanceError> {
        self.grid.validate()?;
        let mut ids = HashMap::new();
        for (i, a) in self.activities.iter().enumerate() {
            if ids.insert(a.id.as_str(), i).is_some() {
                return Err(invalid(format!("activity {}", a.id), "duplicate id"));
            }
        }
        for a in &self.activities {
            let entity = format!("activity {}", a.id);
            if a.duration_slots == 0 {
                return Err(invalid(entity, "duration_slots must be at least 1"));
            }
            if a.duration_slots > self.grid.office_len() {
                return Err(invalid(
                    entity,
                    format!(
                        "duration {} does not fit the {}-slot office window",
                        a.duration_slots,
                        self.grid.office_len()
                    ),
                ));
            }
            if !(a.power_per_room_kw.is_finite() && a.power_per_room_kw >= 0.0) {
                return Err(invalid(
                    entity,
                    "power_per_room_kw must be finite and nonnegative",
                ));
            }
            if a.rooms_small + a.rooms_large == 0 {
                return Err(invalid(entity, "needs at least one room"));
            }
            for p in &a.predecessors {
                if p == &a.id {
                    return Err(invalid(entity, "lists itself as predecessor"));
                }
                if !ids.contains_key(p.as_str()) {
                    return Err(invalid(entity, format!("unknown predecessor {p}")));
                }
            }
        }
        if let Err(id) = self.topological_order() {
            return Err(invalid(
                format!("activity {id}"),
                "lies on a precedence cycle",
            ));
        }
        let mut bids = BTreeSet::new();
        for b in &self.batteries {
            let entity = format!("battery {}", b.id);
            if !bids.insert(b.id.as_str()) {
                return Err(invalid(entity, "duplicate id"));
            }
            for (name, v) in [
                ("capacity_kwh", b.capacity_kwh),
                ("charge_kw", b.charge_kw),
                ("discharge_kw", b.discharge_kw),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid(entity, format!("{name} must be positive")));
                }
            }
            for (name, v) in [
                ("eff_charge", b.eff_charge),
                ("eff_discharge", b.eff_discharge),
            ] {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(invalid(entity, format!("{name} must lie in (0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn activity_index(&self) -> HashMap<&str, usize> {
        self.activities
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.as_str(), i))
            .collect()
    }

    /// Predecessor indices per activity; unknown ids are skipped.
    pub fn predecessor_indices(&self) -> Vec<Vec<usize>> {
        let index = self.activity_index();
        self.activities
            .iter()
            .map(|a| {
                a.predecessors
                    .iter()
                    .filter_map(|p| index.get(p.as_str()).copied())
                    .collect()
            })
            .collect()
    }

    /// Activities ordered so that predecessors come first; `Err` names an
    /// activity on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>, String> {
        let preds = self.predecessor_indices();
        let n = self.activities.len();
        let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut succs = vec![Vec::new(); n];
        for (a, ps) in preds.iter().enumerate() {
            for &p in ps {
                succs[p].push(a);
            }
        }
        let mut ready: Vec<usize> = (0..n).rev().filter(|&a| indegree[a] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(a) = ready.pop() {
            order.push(a);
            for &s in &succs[a] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push(s);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&a| indegree[a] > 0).unwrap();
            return Err(self.activities[stuck].id.clone());
        }
        Ok(order)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceDoc::from(self)).expect("instance serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    horizon_len: usize,
    start_timestamp: String,
    first_monday_offset: usize,
    office_hours: OfficeHoursDoc,
    rooms: RoomsDoc,
    batteries: Vec<BatteryDoc>,
    activities: Vec<ActivityDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OfficeHoursDoc {
    start_slot: usize,
    end_slot: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomsDoc {
    small: usize,
    large: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatteryDoc {
    id: String,
    capacity_kwh: f64,
    charge_kw: f64,
    discharge_kw: f64,
    eff_charge: f64,
    eff_discharge: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivityDoc {
    id: String,
    duration_slots: usize,
    power_per_room_kw: f64,
    rooms_small: usize,
    rooms_large: usize,
    predecessors: Vec<String>,
}

impl From<&Instance> for InstanceDoc {
    fn from(inst: &Instance) -> Self {
        InstanceDoc {
            horizon_len: inst.grid.horizon_len,
            start_timestamp: format_timestamp(&inst.grid.start_timestamp),
            first_monday_offset: inst.grid.first_monday_offset,
            office_hours: OfficeHoursDoc {
                start_slot: inst.grid.office_start_slot,
                end_slot: inst.grid.office_end_slot,
            },
            rooms: RoomsDoc {
                small: inst.rooms_small_total,
                large: inst.rooms_large_total,
            },
            batteries: inst
                .batteries
                .iter()
                .map(|b| BatteryDoc {
                    id: b.id.clone(),
                    capacity_kwh: b.capacity_kwh,
                    charge_kw: b.charge_kw,
                    discharge_kw: b.discharge_kw,
                    eff_charge: b.eff_charge,
                    eff_discharge: b.eff_discharge,
                })
                .collect(),
            activities: inst
                .activities
                .iter()
                .map(|a| ActivityDoc {
                    id: a.id.clone(),
                    duration_slots: a.duration_slots,
                    power_per_room_kw: a.power_per_room_kw,
                    rooms_small: a.rooms_small,
                    rooms_large: a.rooms_large,
                    predecessors: a.predecessors.clone(),
                })
                .collect(),
        }
    }
}

pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let doc: InstanceDoc =
        serde_json::from_str(text).map_err(|e| InstanceError::Schema(e.to_string()))?;
    let start = parse_timestamp(&doc.start_timestamp).map_err(|e| {
        InstanceError::Schema(format!("start_timestamp {:?}: {e}", doc.start_timestamp))
    })?;
    let inst = Instance {
        grid: TimeGrid {
            start_timestamp: start,
            delta_minutes: DELTA_MINUTES,
            horizon_len: doc.horizon_len,
            first_monday_offset: doc.first_monday_offset,
            office_start_slot: doc.office_hours.start_slot,
            office_end_slot: doc.office_hours.end_slot,
        },
        activities: doc
            .activities
            .into_iter()
            .map(|a| Activity {
                id: a.id,
                duration_slots: a.duration_slots,
                power_per_room_kw: a.power_per_room_kw,
                rooms_small: a.rooms_small,
                rooms_large: a.rooms_large,
                predecessors: a.predecessors,
            })
            .collect(),
        batteries: doc
            .batteries
            .into_iter()
            .map(|b| Battery {
                id: b.id,
                capacity_kwh: b.capacity_kwh,
                charge_kw: b.charge_kw,
                discharge_kw: b.discharge_kw,
                eff_charge: b.eff_charge,
                eff_discharge: b.eff_discharge,
            })
            .collect(),
        rooms_small_total: doc.rooms.small,
        rooms_large_total: doc.rooms.large,
    };
    inst.validate()?;
    Ok(inst)
}
