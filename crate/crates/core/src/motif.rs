//! Refined motif: the daily medoid of a series, i.e. its most repetitive day.

use crate::instance::SLOTS_PER_DAY;
use crate::series::{SeriesError, SeriesFrame};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    Euclidean,
    /// Euclidean distance between per-day z-normalized profiles.
    ZnormEuclidean,
}

#[derive(Debug, Error)]
pub enum MotifError {
    #[error("series length {0} is not a whole number of days")]
    NotDailyAligned(usize),
    #[error("need at least 2 days, found {0}")]
    TooShort(usize),
    #[error("weather series {name} does not cover day {day}")]
    Coverage { name: String, day: usize },
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedMotif {
    pub day_index: usize,
    pub mean_distance: f64,
    pub profile: Vec<f64>,
}

fn znorm(day: &[f64]) -> Vec<f64> {
    let n = day.len() as f64;
    let mean = day.iter().sum::<f64>() / n;
    let sd = (day.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        vec![0.0; day.len()]
    } else {
        day.iter().map(|v| (v - mean) / sd).collect()
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Sum of distances from each day to every other day.
pub fn distance_sums(days: &[Vec<f64>], distance: Distance) -> Vec<f64> {
    let points: Vec<Vec<f64>> = match distance {
        Distance::Euclidean => days.to_vec(),
        Distance::ZnormEuclidean => days.iter().map(|d| znorm(d)).collect(),
    };
    points
        .par_iter()
        .map(|p| points.iter().map(|q| euclid(p, q)).sum())
        .collect()
}

pub fn extract_rm(series: &SeriesFrame, distance: Distance) -> Result<RefinedMotif, MotifError> {
    let values = series.dense()?;
    if values.len() % SLOTS_PER_DAY != 0 {
        return Err(MotifError::NotDailyAligned(values.len()));
    }
    let days: Vec<Vec<f64>> = values.chunks(SLOTS_PER_DAY).map(<[f64]>::to_vec).collect();
    if days.len() < 2 {
        return Err(MotifError::TooShort(days.len()));
    }
    let sums = distance_sums(&days, distance);
    // first index wins ties
    let (day_index, &best) =
        sums.iter().enumerate().fold(
            (0, &sums[0]),
            |acc, (i, s)| if *s < *acc.1 { (i, s) } else { acc },
        );
    Ok(RefinedMotif {
        day_index,
        mean_distance: best / (days.len() - 1) as f64,
        profile: days[day_index].clone(),
    })
}

/// The motif day's slice of every weather series.
pub fn motif_weather(
    rm: &RefinedMotif,
    weather: &BTreeMap<String, SeriesFrame>,
) -> Result<BTreeMap<String, Vec<f64>>, MotifError> {
    let mut out = BTreeMap::new();
    let range = rm.day_index * SLOTS_PER_DAY..(rm.day_index + 1) * SLOTS_PER_DAY;
    for (name, series) in weather {
        if series.len() % SLOTS_PER_DAY != 0 {
            return Err(MotifError::NotDailyAligned(series.len()));
        }
        if series.len() < range.end {
            return Err(MotifError::Coverage {
                name: name.clone(),
                day: rm.day_index,
            });
        }
        let slice = series.values[range.clone()]
            .iter()
            .enumerate()
            .map(|(i, v)| v.ok_or(SeriesError::Missing(range.start + i)))
            .collect::<Result<Vec<f64>, _>>()?;
        out.insert(name.clone(), slice);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::parse_timestamp;
    use crate::series::Role;
    use proptest::prelude::*;

    fn frame(values: &[f64]) -> SeriesFrame {
        SeriesFrame::from_values(
            parse_timestamp("2020-11-01T00:00").unwrap(),
            Role::Solar,
            values,
        )
    }

    fn bell(peak: f64) -> Vec<f64> {
        (0..96)
            .map(|s| {
                if (24..72).contains(&s) {
                    peak * (1.0 - ((s as f64 - 48.0) / 24.0).powi(2))
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Independent quadratic-time medoid for cross-checking.
    fn brute_medoid(days: &[Vec<f64>]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, a) in days.iter().enumerate() {
            let mut s = 0.0;
            for b in days {
                let mut d = 0.0;
                for k in 0..a.len() {
                    d += (a[k] - b[k]).powi(2);
                }
                s += d.sqrt();
            }
            if s < best.1 {
                best = (i, s);
            }
        }
        best
    }

    #[test]
    fn identical_days_pick_first() {
        let rm = extract_rm(&frame(&bell(10.0).repeat(5)), Distance::Euclidean).unwrap();
        assert_eq!(rm.day_index, 0);
        assert_eq!(rm.mean_distance, 0.0);
    }

    #[test]
    fn outlier_day_is_never_the_medoid() {
        let mut values = bell(10.0).repeat(4);
        values.extend(bell(80.0));
        let rm = extract_rm(&frame(&values), Distance::Euclidean).unwrap();
        assert_eq!(rm.day_index, 0);
        let days: Vec<Vec<f64>> = values.chunks(96).map(<[f64]>::to_vec).collect();
        assert_eq!(brute_medoid(&days).0, 0);
    }

    #[test]
    fn alignment_and_length_errors() {
        assert!(matches!(
            extract_rm(&frame(&[1.0; 100]), Distance::Euclidean),
            Err(MotifError::NotDailyAligned(100))
        ));
        assert!(matches!(
            extract_rm(&frame(&[1.0; 96]), Distance::Euclidean),
            Err(MotifError::TooShort(1))
        ));
    }

    #[test]
    fn znorm_maps_constant_day_to_zero() {
        assert_eq!(znorm(&[3.0; 4]), vec![0.0; 4]);
        // scaled copies are identical after z-normalization
        let mut values = bell(10.0);
        values.extend(bell(50.0));
        values.extend((0..96).map(|s| (s % 7) as f64));
        let rm = extract_rm(&frame(&values), Distance::ZnormEuclidean).unwrap();
        assert!(rm.day_index < 2);
    }

    #[test]
    fn weather_slices() {
        let rm = RefinedMotif {
            day_index: 2,
            mean_distance: 0.0,
            profile: vec![0.0; 96],
        };
        let temp: Vec<f64> = (0..5 * 96).map(|i| i as f64).collect();
        let mut w = BTreeMap::new();
        w.insert("temp".to_string(), frame(&temp));
        let out = motif_weather(&rm, &w).unwrap();
        assert_eq!(out["temp"], temp[192..288].to_vec());
        assert!(motif_weather(&rm, &BTreeMap::new()).unwrap().is_empty());
        w.insert("short".to_string(), frame(&temp[..96]));
        assert!(matches!(
            motif_weather(&rm, &w),
            Err(MotifError::Coverage { .. })
        ));
    }

    proptest! {
        #[test]
        fn medoid_matches_brute_force(days in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 96), 2..8)) {
            let values: Vec<f64> = days.concat();
            let rm = extract_rm(&frame(&values), Distance::Euclidean).unwrap();
            let sums = distance_sums(&days, Distance::Euclidean);
            for s in &sums {
                prop_assert!(sums[rm.day_index] <= *s);
            }
            let (_, best) = brute_medoid(&days);
            prop_assert!((rm.mean_distance * (days.len() - 1) as f64 - best).abs() < 1e-9 * (1.0 + best));
        }

        #[test]
        fn appending_the_motif_day_keeps_it(days in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 96), 2..8)) {
            let values: Vec<f64> = days.concat();
            let rm = extract_rm(&frame(&values), Distance::Euclidean).unwrap();
            let mut more = values.clone();
            more.extend(&rm.profile);
            let rm2 = extract_rm(&frame(&more), Distance::Euclidean).unwrap();
            prop_assert_eq!(&rm2.profile, &rm.profile);
            let old_sum = rm.mean_distance * (days.len() - 1) as f64;
            let new_sum = rm2.mean_distance * days.len() as f64;
            prop_assert!(new_sum <= old_sum + 1e-9 * (1.0 + old_sum));
        }
    }
}
