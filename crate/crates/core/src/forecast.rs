//! Baseline forecasters: motif-plus-weather-delta solar, median and
//! seasonal-naive baseload.

use crate::instance::{SLOTS_PER_DAY, SLOTS_PER_WEEK};
use crate::motif::{extract_rm, motif_weather, Distance, MotifError, RefinedMotif};
use crate::series::{Role, SeriesError, SeriesFrame};
use chrono::NaiveDateTime;
use std::collections::BTreeMap;
use thiserror::Error;

/// Default training window: the last 61 days.
pub const TRAINING_WINDOW: usize = 61 * SLOTS_PER_DAY;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("history has {0} points, seasonal-naive needs at least {SLOTS_PER_WEEK}")]
    HistoryTooShort(usize),
    #[error("weather series {name} does not cover the requested span")]
    Coverage { name: String },
    #[error("weather series {name} has length {len}, history has {expected}")]
    WeatherLength {
        name: String,
        len: usize,
        expected: usize,
    },
    #[error("horizon {0} is not a positive whole number of days")]
    Horizon(usize),
    #[error(transparent)]
    Motif(#[from] MotifError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolarForecastModel {
    pub rm: RefinedMotif,
    pub rm_weather: BTreeMap<String, Vec<f64>>,
    pub coefficients: BTreeMap<String, f64>,
    pub intercept: f64,
    /// Features left at zero because they were collinear with earlier ones.
    pub dropped: Vec<String>,
}

/// Least squares via modified Gram-Schmidt. Columns whose remaining norm is
/// negligible are dropped (coefficient 0); returns coefficients and the
/// dropped column indices.
fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut r: Vec<Vec<f64>> = Vec::new(); // r[k] = row k of R over kept columns
    for (j, col) in columns.iter().enumerate() {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.clone();
        let mut coeffs = Vec::with_capacity(q.len());
        for qk in &q {
            let d: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(qk) {
                *vi -= d * qi;
            }
            coeffs.push(d);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-10 * (1.0 + norm0) {
            dropped.push(j);
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        for (k, c) in coeffs.into_iter().enumerate() {
            r[k].push(c);
        }
        r.push(vec![0.0; kept.len()]);
        r.last_mut().unwrap().push(norm);
        q.push(v);
        kept.push(j);
    }
    let mut rhs = y.to_vec();
    let mut qty = Vec::with_capacity(q.len());
    for qk in &q {
        let d: f64 = qk.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        for (ri, qi) in rhs.iter_mut().zip(qk) {
            *ri -= d * qi;
        }
        qty.push(d);
    }
    let k = kept.len();
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = qty[i];
        for c in i + 1..k {
            s -= r[i][c] * beta[c];
        }
        beta[i] = s / r[i][i];
    }
    let mut full = vec![0.0; columns.len()];
    for (i, &j) in kept.iter().enumerate() {
        full[j] = beta[i];
    }
    (full, dropped)
}

/// Fits per-slot residuals against the motif to weather deltas. Weather
/// features are given in priority order: when two are collinear the later
/// one is dropped.
pub fn fit_solar(
    history: &SeriesFrame,
    weather_history: &[(String, SeriesFrame)],
    distance: Distance,
) -> Result<SolarForecastModel, ForecastError> {
    let history = history.tail(TRAINING_WINDOW);
    let n = history.len();
    let mut weather = BTreeMap::new();
    for (name, w) in weather_history {
        if w.len() < n {
            return Err(ForecastError::WeatherLength {
                name: name.clone(),
                len: w.len(),
                expected: n,
            });
        }
        weather.insert(name.clone(), w.tail(n));
    }
    let rm = extract_rm(&history, distance)?;
    let rm_weather = motif_weather(&rm, &weather)?;
    let actual = history.dense()?;
    let rows: Vec<usize> = (0..n)
        .filter(|t| rm.profile[t % SLOTS_PER_DAY] != 0.0)
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|&t| actual[t] - rm.profile[t % SLOTS_PER_DAY])
        .collect();
    let mut columns = vec![vec![1.0; rows.len()]];
    for (name, _) in weather_history {
        let w = weather[name].dense()?;
        let base = &rm_weather[name];
        columns.push(
            rows.iter()
                .map(|&t| w[t] - base[t % SLOTS_PER_DAY])
                .collect(),
        );
    }
    let (beta, dropped_idx) = least_squares(&columns, &y);
    let coefficients = weather_history
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.clone(), beta[i + 1]))
        .collect();
    let dropped = dropped_idx
        .iter()
        .filter(|&&j| j > 0)
        .map(|&j| weather_history[j - 1].0.clone())
        .collect();
    Ok(SolarForecastModel {
        rm,
        rm_weather,
        coefficients,
        intercept: beta[0],
        dropped,
    })
}

impl SolarForecastModel {
    /// Motif tiled without weather adjustment.
    pub fn motif_only(rm: RefinedMotif) -> Self {
        SolarForecastModel {
            rm,
            rm_weather: BTreeMap::new(),
            coefficients: BTreeMap::new(),
            intercept: 0.0,
            dropped: Vec::new(),
        }
    }
}

pub fn predict_solar(
    model: &SolarForecastModel,
    weather_forecast: &BTreeMap<String, SeriesFrame>,
    horizon: usize,
    start: NaiveDateTime,
) -> Result<SeriesFrame, ForecastError> {
    if horizon == 0 || !horizon.is_multiple_of(SLOTS_PER_DAY) {
        return Err(ForecastError::Horizon(horizon));
    }
    let mut features = Vec::new();
    for (name, &coef) in &model.coefficients {
        if coef == 0.0 {
            continue;
        }
        let series = weather_forecast
            .get(name)
            .ok_or_else(|| ForecastError::Coverage { name: name.clone() })?;
        if series.len() < horizon {
            return Err(ForecastError::Coverage { name: name.clone() });
        }
        let values = series.dense()?;
        features.push((coef, values, &model.rm_weather[name]));
    }
    let values: Vec<f64> = (0..horizon)
        .map(|t| {
            let s = t % SLOTS_PER_DAY;
            let base = model.rm.profile[s];
            if base == 0.0 {
                return 0.0;
            }
            let delta: f64 = features.iter().map(|(c, w, rmw)| c * (w[t] - rmw[s])).sum();
            (base + model.intercept + delta).max(0.0)
        })
        .collect();
    Ok(SeriesFrame::from_values(start, Role::Solar, &values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseloadMode {
    SeasonalNaive,
    Median,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseloadForecastModel {
    pub mode: BaseloadMode,
    pub history: SeriesFrame,
    pub median_value: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn fit_baseload(
    history: &SeriesFrame,
    mode: BaseloadMode,
) -> Result<BaseloadForecastModel, ForecastError> {
    let history = history.tail(TRAINING_WINDOW);
    let values = history.dense()?;
    if values.is_empty() {
        return Err(ForecastError::HistoryTooShort(0));
    }
    if mode == BaseloadMode::SeasonalNaive && values.len() < SLOTS_PER_WEEK {
        return Err(ForecastError::HistoryTooShort(values.len()));
    }
    Ok(BaseloadForecastModel {
        mode,
        median_value: median(&values),
        history,
    })
}

/// Forecast starting right after the history.
pub fn predict_baseload(
    model: &BaseloadForecastModel,
    horizon: usize,
) -> Result<SeriesFrame, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::Horizon(0));
    }
    let values = match model.mode {
        BaseloadMode::Median => vec![model.median_value; horizon],
        BaseloadMode::SeasonalNaive => {
            let h = model.history.dense()?;
            if h.len() < SLOTS_PER_WEEK {
                return Err(ForecastError::HistoryTooShort(h.len()));
            }
            let week = &h[h.len() - SLOTS_PER_WEEK..];
            (0..horizon).map(|t| week[t % SLOTS_PER_WEEK]).collect()
        }
    };
    Ok(SeriesFrame::from_values(
        model.history.end_timestamp(),
        Role::Baseload,
        &values,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::parse_timestamp;
    use crate::series::nrmse_values;
    use proptest::prelude::*;

    fn ts() -> NaiveDateTime {
        parse_timestamp("2020-11-01T00:00").unwrap()
    }

    fn frame(role: Role, values: &[f64]) -> SeriesFrame {
        SeriesFrame::from_values(ts(), role, values)
    }

    fn bell() -> Vec<f64> {
        (0..96)
            .map(|s| {
                if (24..72).contains(&s) {
                    20.0 + (s as f64 - 24.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn temperature(days: usize) -> Vec<f64> {
        (0..days * 96)
            .map(|t| 15.0 + 5.0 * ((t as f64) * 0.37).sin() + (t / 96) as f64)
            .collect()
    }

    #[test]
    fn tiled_motif_fits_zero_model() {
        let history = frame(Role::Solar, &bell().repeat(5));
        let temp = frame(Role::Price, &[20.0; 480]);
        let m = fit_solar(&history, &[("temp".into(), temp)], Distance::Euclidean).unwrap();
        assert_eq!(m.intercept, 0.0);
        assert_eq!(m.coefficients["temp"], 0.0);
    }

    #[test]
    fn recovers_linear_sensitivity() {
        let temp = temperature(5);
        let values: Vec<f64> = (0..480)
            .map(|t| {
                let b = bell()[t % 96];
                if b == 0.0 {
                    0.0
                } else {
                    b + 2.0 * temp[t]
                }
            })
            .collect();
        let m = fit_solar(
            &frame(Role::Solar, &values),
            &[("temp".into(), frame(Role::Price, &temp))],
            Distance::Euclidean,
        )
        .unwrap();
        assert!(
            (m.coefficients["temp"] - 2.0).abs() < 1e-9,
            "{}",
            m.coefficients["temp"]
        );
        assert!(m.intercept.abs() < 1e-9);
    }

    #[test]
    fn duplicate_feature_is_dropped() {
        let temp = temperature(5);
        let values: Vec<f64> = (0..480)
            .map(|t| {
                let b = bell()[t % 96];
                if b == 0.0 {
                    0.0
                } else {
                    b + 0.5 * temp[t]
                }
            })
            .collect();
        let w = frame(Role::Price, &temp);
        let m = fit_solar(
            &frame(Role::Solar, &values),
            &[("a".into(), w.clone()), ("b".into(), w)],
            Distance::Euclidean,
        )
        .unwrap();
        assert_eq!(m.dropped, vec!["b".to_string()]);
        assert_eq!(m.coefficients["b"], 0.0);
        assert!((m.coefficients["a"] - 0.5).abs() < 1e-9);
    }

    fn one_feature_model(coef: f64) -> SolarForecastModel {
        let mut profile = vec![0.0; 96];
        profile[40] = 10.0;
        profile[41] = 4.0;
        SolarForecastModel {
            rm: RefinedMotif {
                day_index: 0,
                mean_distance: 0.0,
                profile,
            },
            rm_weather: [("temp".to_string(), vec![20.0; 96])].into(),
            coefficients: [("temp".to_string(), coef)].into(),
            intercept: 0.0,
            dropped: vec![],
        }
    }

    #[test]
    fn predict_hand_case_and_clamp() {
        let model = one_feature_model(-1.0);
        let fc: BTreeMap<_, _> = [("temp".to_string(), frame(Role::Price, &[23.0; 96]))].into();
        let y = predict_solar(&model, &fc, 96, ts())
            .unwrap()
            .dense()
            .unwrap();
        assert_eq!(y[40], 7.0);
        assert_eq!(y[41], 1.0);
        assert_eq!(y[0], 0.0);
        let hot: BTreeMap<_, _> = [("temp".to_string(), frame(Role::Price, &[30.0; 96]))].into();
        let y = predict_solar(&model, &hot, 96, ts())
            .unwrap()
            .dense()
            .unwrap();
        assert_eq!(y[40], 0.0);
        assert!(predict_solar(&model, &BTreeMap::new(), 96, ts()).is_err());
        assert!(predict_solar(&model, &fc, 192, ts()).is_err());
    }

    #[test]
    fn zero_delta_tiles_the_motif() {
        let model = one_feature_model(-3.0);
        let fc: BTreeMap<_, _> = [("temp".to_string(), frame(Role::Price, &[20.0; 192]))].into();
        let y = predict_solar(&model, &fc, 192, ts())
            .unwrap()
            .dense()
            .unwrap();
        assert_eq!(y, model.rm.profile.repeat(2));
    }

    #[test]
    fn baseload_modes() {
        let m = BaseloadForecastModel {
            mode: BaseloadMode::Median,
            history: frame(Role::Baseload, &[1.0]),
            median_value: 42.0,
        };
        assert_eq!(
            predict_baseload(&m, 4).unwrap().dense().unwrap(),
            vec![42.0; 4]
        );
        let week: Vec<f64> = (0..672).map(|i| i as f64).collect();
        let mut hist = vec![-1.0; 100];
        hist.extend(&week);
        let m = fit_baseload(&frame(Role::Baseload, &hist), BaseloadMode::SeasonalNaive).unwrap();
        assert_eq!(
            predict_baseload(&m, 1344).unwrap().dense().unwrap(),
            week.repeat(2)
        );
        assert!(matches!(
            fit_baseload(
                &frame(Role::Baseload, &[1.0; 100]),
                BaseloadMode::SeasonalNaive
            ),
            Err(ForecastError::HistoryTooShort(100))
        ));
        let m = fit_baseload(
            &frame(Role::Baseload, &[3.0, 1.0, 2.0, 10.0]),
            BaseloadMode::Median,
        )
        .unwrap();
        assert_eq!(m.median_value, 2.5);
    }

    proptest! {
        #[test]
        fn predictions_nonnegative(coef in -5.0f64..5.0, temps in prop::collection::vec(-20.0f64..50.0, 96)) {
            let model = one_feature_model(coef);
            let fc: BTreeMap<_, _> = [("temp".to_string(), frame(Role::Price, &temps))].into();
            let y = predict_solar(&model, &fc, 96, ts()).unwrap().dense().unwrap();
            prop_assert!(y.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn hotter_means_less_solar(coef in -5.0f64..-0.01, t0 in 15.0f64..25.0, bump in 0.01f64..3.0) {
            let model = one_feature_model(coef);
            let predict = |temp: f64| {
                let fc: BTreeMap<_, _> = [("temp".to_string(), frame(Role::Price, &[temp; 96]))].into();
                predict_solar(&model, &fc, 96, ts()).unwrap().dense().unwrap()[40]
            };
            let (a, b) = (predict(t0), predict(t0 + bump));
            if a > 0.0 {
                prop_assert!(b < a);
            } else {
                prop_assert_eq!(b, 0.0);
            }
        }

        #[test]
        fn seasonal_naive_exact_on_periodic(week in prop::collection::vec(1.0f64..100.0, 672), weeks in 1usize..4) {
            let hist = frame(Role::Baseload, &week.repeat(weeks));
            let m = fit_baseload(&hist, BaseloadMode::SeasonalNaive).unwrap();
            let fc = predict_baseload(&m, 1344).unwrap().dense().unwrap();
            prop_assert_eq!(nrmse_values(&week.repeat(2), &fc).unwrap(), 0.0);
        }
    }
}
