//! Schedule validator and cost evaluator.
//!
//! The validator re-derives every scheduling rule from calendar timestamps and
//! the raw instance fields; it shares no code with the model builder, so a
//! model bug shows up here as a violation.

use crate::instance::Instance;
use crate::scheduler::{BatteryOp, ScheduleSolution};
use chrono::{Datelike, Duration, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

const ENERGY_FACTOR: f64 = 0.25 / 1000.0;
const PEAK_RATE: f64 = 0.005;
const NET_TOL: f64 = 1e-6;
const SOC_TOL: f64 = 1e-9;
const WEEK: usize = 7 * 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    #[serde(rename = "UnknownActivity")]
    UnknownActivity,
    #[serde(rename = "MissingStart")]
    MissingStart,
    #[serde(rename = "OfficeHoursViolation")]
    OfficeHours,
    #[serde(rename = "FirstWeekViolation")]
    FirstWeek,
    #[serde(rename = "HorizonViolation")]
    Horizon,
    #[serde(rename = "RoomViolation")]
    Rooms,
    #[serde(rename = "PrecedenceViolation")]
    Precedence,
    #[serde(rename = "BatteryOpsViolation")]
    BatteryOps,
    #[serde(rename = "SocViolation")]
    Soc,
    #[serde(rename = "ExportViolation")]
    Export,
    #[serde(rename = "NetDemandMismatch")]
    NetDemand,
    #[serde(rename = "PeakMismatch")]
    Peak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub entity: String,
    /// Interval index, or -1 when the violation is not tied to one.
    pub t: i64,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, entity: &str, t: Option<usize>, detail: String) -> Self {
        Violation {
            kind,
            entity: entity.to_string(),
            t: t.map_or(-1, |t| t as i64),
            detail,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("violation serializes")
    }
}

fn timestamp(instance: &Instance, t: usize) -> NaiveDateTime {
    instance.grid.start_timestamp + Duration::minutes(instance.grid.delta_minutes as i64 * t as i64)
}

/// Complete weeks after the first Monday; at least the first one.
fn recurrences(instance: &Instance) -> usize {
    let g = &instance.grid;
    (g.horizon_len.saturating_sub(g.first_monday_offset) / WEEK).max(1)
}

/// Checks `solution` against the instance rules. With `inputs` (baseload and
/// solar, dense), the reported net demand is also recomputed and compared.
pub fn validate(
    instance: &Instance,
    solution: &ScheduleSolution,
    inputs: Option<(&[f64], &[f64])>,
) -> Vec<Violation> {
    use ViolationKind as K;
    let mut out = Vec::new();
    let g = &instance.grid;
    let h = g.horizon_len;
    let minutes = g.delta_minutes as i64;
    let office_start = g.office_start_slot as i64 * minutes;
    let office_end = g.office_end_slot as i64 * minutes;

    for id in solution.starts.keys() {
        if !instance.activities.iter().any(|a| &a.id == id) {
            out.push(Violation::new(
                K::UnknownActivity,
                id,
                None,
                "start given for an activity not in the instance".into(),
            ));
        }
    }

    // per-interval occupancy of every weekly copy
    let mut small = vec![0usize; h];
    let mut large = vec![0usize; h];
    let mut scheduled = vec![0.0; h];
    for a in &instance.activities {
        let Some(&s) = solution.starts.get(&a.id) else {
            out.push(Violation::new(
                K::MissingStart,
                &a.id,
                None,
                "activity has no start".into(),
            ));
            continue;
        };
        if s < g.first_monday_offset || s >= g.first_monday_offset + WEEK {
            out.push(Violation::new(
                K::FirstWeek,
                &a.id,
                Some(s),
                format!(
                    "start must lie in [{}, {})",
                    g.first_monday_offset,
                    g.first_monday_offset + WEEK
                ),
            ));
        }
        let begin = timestamp(instance, s);
        let from = begin.hour() as i64 * 60 + begin.minute() as i64;
        let to = from + a.duration_slots as i64 * minutes;
        if matches!(begin.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(Violation::new(
                K::OfficeHours,
                &a.id,
                Some(s),
                format!("starts on a {}", begin.weekday()),
            ));
        }
        if from < office_start || to > office_end {
            out.push(Violation::new(
                K::OfficeHours,
                &a.id,
                Some(s),
                format!(
                    "runs {}..{} min past midnight, office is {office_start}..{office_end}",
                    from, to
                ),
            ));
        }
        let kw = a.power_per_room_kw * (a.rooms_small + a.rooms_large) as f64;
        for w in 0..recurrences(instance) {
            let first = s + w * WEEK;
            if first + a.duration_slots > h {
                out.push(Violation::new(
                    K::Horizon,
                    &a.id,
                    Some(first),
                    format!("week {w} copy runs past the horizon"),
                ));
                continue;
            }
            for t in first..first + a.duration_slots {
                small[t] += a.rooms_small;
                large[t] += a.rooms_large;
                scheduled[t] += kw;
            }
        }
    }
    for t in 0..h {
        if small[t] > instance.rooms_small_total {
            out.push(Violation::new(
                K::Rooms,
                "small",
                Some(t),
                format!(
                    "{} of {} rooms in use",
                    small[t], instance.rooms_small_total
                ),
            ));
        }
        if large[t] > instance.rooms_large_total {
            out.push(Violation::new(
                K::Rooms,
                "large",
                Some(t),
                format!(
                    "{} of {} rooms in use",
                    large[t], instance.rooms_large_total
                ),
            ));
        }
    }

    for a in &instance.activities {
        let Some(&s) = solution.starts.get(&a.id) else {
            continue;
        };
        for p in &a.predecessors {
            let Some(&sp) = solution.starts.get(p) else {
                continue;
            };
            let gap = (timestamp(instance, s).date() - timestamp(instance, sp).date()).num_days();
            if gap < 1 {
                out.push(Violation::new(
                    K::Precedence,
                    &a.id,
                    Some(s),
                    format!("starts {gap} day(s) after predecessor {p}, needs at least 1"),
                ));
            }
        }
    }

    for id in solution.battery_ops.keys() {
        if !instance.batteries.iter().any(|b| &b.id == id) {
            out.push(Violation::new(
                K::BatteryOps,
                id,
                None,
                "operations given for a battery not in the instance".into(),
            ));
        }
    }
    let mut battery = vec![0.0; h];
    for b in &instance.batteries {
        let Some(ops) = solution.battery_ops.get(&b.id) else {
            out.push(Violation::new(
                K::BatteryOps,
                &b.id,
                None,
                "battery has no operations".into(),
            ));
            continue;
        };
        if ops.len() != h {
            out.push(Violation::new(
                K::BatteryOps,
                &b.id,
                None,
                format!("{} operations for {h} intervals", ops.len()),
            ));
        }
        let hours = minutes as f64 / 60.0;
        let mut soc = b.capacity_kwh;
        let mut reported = false;
        for (t, op) in ops.iter().enumerate().take(h) {
            match op {
                BatteryOp::Charge => {
                    soc += b.charge_kw * hours;
                    battery[t] += b.charge_kw / b.eff_charge.sqrt();
                }
                BatteryOp::Discharge => {
                    soc -= b.discharge_kw * hours;
                    battery[t] -= b.discharge_kw * b.eff_discharge.sqrt();
                }
                BatteryOp::Idle => {}
            }
            if !reported && (soc < -SOC_TOL || soc > b.capacity_kwh + SOC_TOL) {
                reported = true;
                out.push(Violation::new(
                    K::Soc,
                    &b.id,
                    Some(t),
                    format!("state of charge {soc} kWh outside [0, {}]", b.capacity_kwh),
                ));
            }
        }
    }

    let net = &solution.net_demand;
    for (t, &p) in net.iter().enumerate() {
        if p < -NET_TOL {
            out.push(Violation::new(
                K::Export,
                "grid",
                Some(t),
                format!("net demand {p} kW exports"),
            ));
        }
    }
    let peak = net.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !net.is_empty() && (peak - solution.peak_kw).abs() > NET_TOL * (1.0 + peak.abs()) {
        out.push(Violation::new(
            K::Peak,
            "grid",
            None,
            format!(
                "reported peak {} kW, net demand peaks at {peak} kW",
                solution.peak_kw
            ),
        ));
    }
    if let Some((base, solar)) = inputs {
        if net.len() != h || base.len() != h || solar.len() != h {
            out.push(Violation::new(
                K::NetDemand,
                "grid",
                None,
                format!(
                    "lengths: net {}, baseload {}, solar {}, horizon {h}",
                    net.len(),
                    base.len(),
                    solar.len()
                ),
            ));
        } else {
            for t in 0..h {
                let expected = base[t] - solar[t] + scheduled[t] + battery[t];
                if (net[t] - expected).abs() > NET_TOL {
                    out.push(Violation::new(
                        K::NetDemand,
                        "grid",
                        Some(t),
                        format!("reported {} kW, recomputed {expected} kW", net[t]),
                    ));
                }
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum EvaluateError {
    #[error("net demand has {net} values, prices have {prices}")]
    LengthMismatch { net: usize, prices: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub energy_cost: f64,
    pub peak_charge: f64,
    pub total: f64,
}

/// Energy cost plus the quadratic peak charge.
pub fn total_cost(net: &[f64], prices: &[f64]) -> Result<CostBreakdown, EvaluateError> {
    if net.len() != prices.len() {
        return Err(EvaluateError::LengthMismatch {
            net: net.len(),
            prices: prices.len(),
        });
    }
    let energy_cost = ENERGY_FACTOR * net.iter().zip(prices).map(|(p, l)| p * l).sum::<f64>();
    let peak = net.iter().copied().reduce(f64::max).unwrap_or(0.0);
    let peak_charge = PEAK_RATE * peak * peak;
    Ok(CostBreakdown {
        energy_cost,
        peak_charge,
        total: energy_cost + peak_charge,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub costs: BTreeMap<String, CostBreakdown>,
    /// Label with the lowest total; ties go to the first label in order.
    pub preferred: String,
}

/// Costs several labelled net-demand profiles and names the cheapest.
pub fn compare(
    candidates: &[(String, &[f64])],
    prices: &[f64],
) -> Result<Comparison, EvaluateError> {
    let mut costs = BTreeMap::new();
    let mut preferred: Option<(String, f64)> = None;
    for (label, net) in candidates {
        let c = total_cost(net, prices)?;
        if preferred.as_ref().is_none_or(|(_, best)| c.total < *best) {
            preferred = Some((label.clone(), c.total));
        }
        costs.insert(label.clone(), c);
    }
    Ok(Comparison {
        costs,
        preferred: preferred.map(|p| p.0).unwrap_or_default(),
    })
}
