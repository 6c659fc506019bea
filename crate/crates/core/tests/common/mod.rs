//! Instance generators and brute-force oracles shared by integration tests.
#![allow(dead_code)]

use chrono::NaiveDateTime;
use peakshave_core::instance::{parse_timestamp, Activity, Battery, Instance, TimeGrid};
use peakshave_core::series::{Role, SeriesFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// A Monday, so the first Monday sits at interval 0.
pub fn monday() -> NaiveDateTime {
    parse_timestamp("2020-11-02T00:00").unwrap()
}

pub struct Case {
    pub instance: Instance,
    pub baseload: SeriesFrame,
    pub solar: SeriesFrame,
    pub prices: SeriesFrame,
    pub battery_slots: Vec<usize>,
}

impl Case {
    pub fn fixed_net(&self) -> Vec<f64> {
        let b = self.baseload.dense().unwrap();
        let s = self.solar.dense().unwrap();
        b.iter().zip(&s).map(|(b, s)| b - s).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.prices.dense().unwrap()
    }
}

fn series(role: Role, values: Vec<f64>) -> SeriesFrame {
    SeriesFrame::from_values(monday(), role, &values)
}

/// Baseload peaking at `peak_slot` each day, a midday solar bell scaled by
/// `solar_frac` of the base level, and a noisy price that either oscillates
/// freely or, with `cheap_peak`, dips when the baseload peaks.
fn profiles(
    rng: &mut ChaCha8Rng,
    h: usize,
    base_level: f64,
    peak_slot: f64,
    solar_frac: f64,
    cheap_peak: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut base = Vec::with_capacity(h);
    let mut solar = Vec::with_capacity(h);
    let mut price = Vec::with_capacity(h);
    for t in 0..h {
        let s = (t % 96) as f64;
        let day = ((s - peak_slot) / 96.0 * std::f64::consts::TAU).cos();
        let sun = if (28.0..72.0).contains(&s) {
            solar_frac * base_level * (1.0 - ((s - 50.0) / 22.0).powi(2))
        } else {
            0.0
        };
        let sun = sun * rng.random_range(0.6..1.0);
        let b = base_level * (1.0 + 0.3 * day) + rng.random_range(0.0..0.1 * base_level);
        base.push((b.max(sun + 0.05 * base_level) * 100.0).round() / 100.0);
        solar.push((sun * 100.0).round() / 100.0);
        let swing = if cheap_peak {
            -day
        } else {
            (t as f64 * 0.05 + phase).sin()
        };
        let p = 45.0 + 30.0 * swing + rng.random_range(-15.0..15.0);
        price.push((p * 100.0).round() / 100.0);
    }
    (base, solar, price)
}

/// One-week instance with a short office window so exhaustive search stays
/// small: 2-3 activities, optionally one battery with up to 8 unlocked slots.
pub fn tiny_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 672;
    let grid = TimeGrid::new(monday(), h, 0, 36, 46).unwrap();
    let n = rng.random_range(2..=3);
    let activities = (0..n)
        .map(|i| {
            let large = rng.random_bool(0.3);
            Activity {
                id: format!("act{i}"),
                duration_slots: rng.random_range(2..=5),
                power_per_room_kw: rng.random_range(2.0..12.0f64).round(),
                rooms_small: if large { 0 } else { rng.random_range(1..=2) },
                rooms_large: usize::from(large),
                predecessors: if i > 0 && rng.random_bool(0.35) {
                    vec![format!("act{}", i - 1)]
                } else {
                    vec![]
                },
            }
        })
        .collect();
    let with_battery = rng.random_bool(0.7);
    let batteries = if with_battery {
        vec![Battery {
            id: "bat".into(),
            capacity_kwh: rng.random_range(2.0..8.0f64).round(),
            charge_kw: rng.random_range(8.0..20.0f64).round(),
            discharge_kw: rng.random_range(8.0..20.0f64).round(),
            eff_charge: rng.random_range(0.85..1.0),
            eff_discharge: rng.random_range(0.85..1.0),
        }]
    } else {
        vec![]
    };
    let instance = Instance {
        grid,
        activities,
        batteries,
        rooms_small_total: 2,
        rooms_large_total: 1,
    };
    let (base, solar, price) = profiles(&mut rng, h, 20.0, 24.0, 0.25, false);
    let day = rng.random_range(0..5);
    let first = day * 96 + rng.random_range(34..40);
    let count = rng.random_range(4..=8);
    Case {
        instance,
        baseload: series(Role::Baseload, base),
        solar: series(Role::Solar, solar),
        prices: series(Role::Price, price),
        battery_slots: if with_battery {
            (first..first + count).collect()
        } else {
            vec![]
        },
    }
}

/// Shape of a one-week generated instance with one battery.
pub struct Medium {
    pub seed: u64,
    pub activities: usize,
    /// Unlocked battery slots, starting Tuesday 11:00.
    pub battery_window: usize,
    pub base_level: f64,
    pub peak_slot: f64,
    pub cheap_peak: bool,
    pub office: (usize, usize),
}

impl Default for Medium {
    fn default() -> Self {
        Medium {
            seed: 1,
            activities: 10,
            battery_window: 12,
            base_level: 150.0,
            peak_slot: 24.0,
            cheap_peak: false,
            office: (36, 68),
        }
    }
}

pub fn medium_case(m: &Medium) -> Case {
    let Medium {
        seed,
        activities,
        battery_window,
        base_level,
        peak_slot,
        cheap_peak,
        office,
    } = *m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 672;
    let grid = TimeGrid::new(monday(), h, 0, office.0, office.1).unwrap();
    let acts = (0..activities)
        .map(|i| {
            let large = rng.random_bool(0.25);
            Activity {
                id: format!("act{i:02}"),
                duration_slots: rng.random_range(4..=8),
                power_per_room_kw: rng.random_range(3.0..8.0f64).round(),
                rooms_small: if large { 0 } else { rng.random_range(1..=2) },
                rooms_large: usize::from(large),
                predecessors: if i > 0 && rng.random_bool(0.2) {
                    vec![format!("act{:02}", rng.random_range(0..i))]
                } else {
                    vec![]
                },
            }
        })
        .collect();
    let batteries = vec![Battery {
        id: "bat".into(),
        capacity_kwh: 20.0,
        charge_kw: 15.0,
        discharge_kw: 15.0,
        eff_charge: 0.95,
        eff_discharge: 0.95,
    }];
    let rooms_small = (activities / 3).max(2);
    let rooms_large = (activities / 8).max(1);
    let instance = Instance {
        grid,
        activities: acts,
        batteries,
        rooms_small_total: rooms_small,
        rooms_large_total: rooms_large,
    };
    let (base, solar, price) = profiles(&mut rng, h, base_level, peak_slot, 0.1, cheap_peak);
    let start = 96 + 44; // Tuesday 11:00
    Case {
        instance,
        baseload: series(Role::Baseload, base),
        solar: series(Role::Solar, solar),
        prices: series(Role::Price, price),
        battery_slots: (start..start + battery_window).collect(),
    }
}

fn allowed(grid: &TimeGrid, dur: usize) -> Vec<usize> {
    // Monday-based week: weekday = day index.
    (0..672.min(grid.horizon_len))
        .filter(|&s| {
            let (day, tod) = (s / 96, s % 96);
            day < 5 && tod >= grid.office_start_slot && tod + dur <= grid.office_end_slot
        })
        .collect()
}

/// Minimum energy cost over every start tuple and every battery policy on
/// the unlocked slots, ignoring any peak cap. `None` if nothing is feasible.
pub fn brute_force(case: &Case) -> Option<f64> {
    let inst = &case.instance;
    assert_eq!(inst.grid.first_monday_offset, 0);
    assert!(inst.grid.horizon_len == 672);
    let net = case.fixed_net();
    let price = case.prices();
    let factor = 0.25 / 1000.0;
    let base_cost: f64 = factor * net.iter().zip(&price).map(|(n, p)| n * p).sum::<f64>();
    let acts = &inst.activities;
    let starts: Vec<Vec<usize>> = acts
        .iter()
        .map(|a| allowed(&inst.grid, a.duration_slots))
        .collect();
    let index: HashMap<&str, usize> = acts
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), i))
        .collect();
    let preds: Vec<Vec<usize>> = acts
        .iter()
        .map(|a| a.predecessors.iter().map(|p| index[p.as_str()]).collect())
        .collect();
    let slots = &case.battery_slots;
    let mut memo: HashMap<Vec<u64>, Option<f64>> = HashMap::new();
    let mut best: Option<f64> = None;
    let mut choice = vec![0usize; acts.len()];
    loop {
        let tuple: Vec<usize> = choice
            .iter()
            .enumerate()
            .map(|(a, &i)| starts[a][i])
            .collect();
        if let Some(cost) = evaluate_tuple(case, &tuple, &preds, &net, &price, slots, &mut memo) {
            let total = base_cost + cost;
            best = Some(best.map_or(total, |b: f64| b.min(total)));
        }
        // odometer
        let mut k = 0;
        loop {
            if k == acts.len() {
                return best;
            }
            choice[k] += 1;
            if choice[k] < starts[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

fn evaluate_tuple(
    case: &Case,
    tuple: &[usize],
    preds: &[Vec<usize>],
    net: &[f64],
    price: &[f64],
    slots: &[usize],
    memo: &mut HashMap<Vec<u64>, Option<f64>>,
) -> Option<f64> {
    let inst = &case.instance;
    let factor = 0.25 / 1000.0;
    for (a, ps) in preds.iter().enumerate() {
        for &k in ps {
            if tuple[a] / 96 < tuple[k] / 96 + 1 {
                return None;
            }
        }
    }
    let mut small = [0usize; 672];
    let mut large = [0usize; 672];
    let mut load = vec![0.0; 672];
    let mut cost = 0.0;
    for (a, &s) in inst.activities.iter().zip(tuple) {
        let kw = a.power_per_room_kw * (a.rooms_small + a.rooms_large) as f64;
        for t in s..s + a.duration_slots {
            small[t] += a.rooms_small;
            large[t] += a.rooms_large;
            load[t] += kw;
            cost += factor * kw * price[t];
        }
    }
    if small.iter().any(|&r| r > inst.rooms_small_total)
        || large.iter().any(|&r| r > inst.rooms_large_total)
    {
        return None;
    }
    let Some(b) = inst.batteries.first() else {
        return Some(cost);
    };
    let key: Vec<u64> = slots.iter().map(|&t| load[t].to_bits()).collect();
    let battery = *memo.entry(key).or_insert_with(|| {
        let mut best: Option<f64> = None;
        let n = slots.len();
        'policy: for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let mut soc = b.capacity_kwh;
            let mut extra = 0.0;
            for &t in slots {
                let op = c % 3;
                c /= 3;
                let (p_bat, de) = match op {
                    0 => (0.0, 0.0),
                    1 => (b.charge_kw / b.eff_charge.sqrt(), 0.25 * b.charge_kw),
                    _ => (
                        -b.discharge_kw * b.eff_discharge.sqrt(),
                        -0.25 * b.discharge_kw,
                    ),
                };
                soc += de;
                if soc < -1e-9 || soc > b.capacity_kwh + 1e-9 {
                    continue 'policy;
                }
                if net[t] + load[t] + p_bat < -1e-9 {
                    continue 'policy;
                }
                extra += factor * p_bat * price[t];
            }
            best = Some(best.map_or(extra, |x: f64| x.min(extra)));
        }
        best
    });
    battery.map(|x| cost + x)
}
