//! 15-minute time series: CSV ingestion, gap filling, and the NRMSE metric.

use crate::instance::{
    format_timestamp, parse_timestamp, DELTA_MINUTES, SLOTS_PER_DAY, SLOTS_PER_WEEK,
};
use chrono::NaiveDateTime;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Baseload,
    Solar,
    Price,
}

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("series has no known value")]
    AllMissing,
    #[error("value at index {0} is missing")]
    Missing(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("actual series has zero mean")]
    ZeroMean,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    pub start_timestamp: NaiveDateTime,
    pub delta_minutes: u32,
    pub values: Vec<Option<f64>>,
    pub role: Role,
}

impl SeriesFrame {
    pub fn new(start_timestamp: NaiveDateTime, role: Role, values: Vec<Option<f64>>) -> Self {
        SeriesFrame {
            start_timestamp,
            delta_minutes: DELTA_MINUTES,
            values,
            role,
        }
    }

    pub fn from_values(start_timestamp: NaiveDateTime, role: Role, values: &[f64]) -> Self {
        Self::new(
            start_timestamp,
            role,
            values.iter().map(|&v| Some(v)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp_of(&self, i: usize) -> NaiveDateTime {
        self.start_timestamp + chrono::Duration::minutes(self.delta_minutes as i64 * i as i64)
    }

    /// Timestamp one interval past the last value.
    pub fn end_timestamp(&self) -> NaiveDateTime {
        self.timestamp_of(self.len())
    }

    /// All values, failing on the first missing one.
    pub fn dense(&self) -> Result<Vec<f64>, SeriesError> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v.ok_or(SeriesError::Missing(i)))
            .collect()
    }

    /// The trailing `len` intervals (or the whole series if shorter).
    pub fn tail(&self, len: usize) -> SeriesFrame {
        let skip = self.len().saturating_sub(len);
        SeriesFrame {
            start_timestamp: self.timestamp_of(skip),
            delta_minutes: self.delta_minutes,
            values: self.values[skip..].to_vec(),
            role: self.role,
        }
    }
}

pub fn read_csv<R: Read>(reader: R, role: Role) -> Result<SeriesFrame, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records.next().ok_or(SeriesError::Csv {
        line: 1,
        message: "empty file".into(),
    })?;
    let header = header.map_err(|e| SeriesError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    if header.len() != 2 || &header[0] != "timestamp" || &header[1] != "value" {
        return Err(SeriesError::Csv {
            line: 1,
            message: "header must be `timestamp,value`".into(),
        });
    }
    let mut start = None;
    let mut values = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| SeriesError::Csv {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 2 {
            return Err(SeriesError::Csv {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let ts = parse_timestamp(&rec[0]).map_err(|e| SeriesError::Csv {
            line,
            message: format!("timestamp: {e}"),
        })?;
        let start_ts = *start.get_or_insert(ts);
        let expected =
            start_ts + chrono::Duration::minutes(DELTA_MINUTES as i64 * values.len() as i64);
        if ts != expected {
            return Err(SeriesError::Csv {
                line,
                message: format!(
                    "expected timestamp {}, found {}",
                    format_timestamp(&expected),
                    &rec[0]
                ),
            });
        }
        let value = if rec[1].is_empty() {
            None
        } else {
            let v: f64 = rec[1].parse().map_err(|e| SeriesError::Csv {
                line,
                message: format!("value: {e}"),
            })?;
            if !v.is_finite() {
                return Err(SeriesError::Csv {
                    line,
                    message: "value is not finite".into(),
                });
            }
            Some(v)
        };
        values.push(value);
    }
    let start = start.ok_or(SeriesError::Csv {
        line: 2,
        message: "no data rows".into(),
    })?;
    Ok(SeriesFrame::new(start, role, values))
}

pub fn write_csv<W: Write>(series: &SeriesFrame, writer: W) -> Result<(), SeriesError> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| SeriesError::Csv {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(["timestamp", "value"]).map_err(csv_err)?;
    for (i, v) in series.values.iter().enumerate() {
        let value = v.map(|v| format!("{v:?}")).unwrap_or_default();
        w.write_record([format_timestamp(&series.timestamp_of(i)), value])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Gaps shorter than this are interpolated; longer ones copy the previous week.
pub const LONG_GAP: usize = SLOTS_PER_DAY;

/// Fills every missing value. Short interior gaps are interpolated linearly;
/// long gaps and trailing gaps copy the value one week earlier (falling back
/// to the short-gap rule inside the first week); leading gaps take the first
/// known value. Solar output is clamped at zero.
pub fn clean(series: &SeriesFrame) -> Result<SeriesFrame, SeriesError> {
    let first = series
        .values
        .iter()
        .position(Option::is_some)
        .ok_or(SeriesError::AllMissing)?;
    let n = series.len();
    let mut out: Vec<f64> = Vec::with_capacity(n);
    let mut t = 0;
    while t < n {
        if let Some(v) = series.values[t] {
            out.push(v);
            t += 1;
            continue;
        }
        let end = (t..n).find(|&i| series.values[i].is_some()).unwrap_or(n);
        let len = end - t;
        for i in t..end {
            let v = if t == 0 {
                series.values[first].unwrap()
            } else if (len >= LONG_GAP || end == n) && i >= SLOTS_PER_WEEK {
                out[i - SLOTS_PER_WEEK]
            } else if end == n {
                out[t - 1]
            } else {
                let (a, b) = (out[t - 1], series.values[end].unwrap());
                let frac = (i - t + 1) as f64 / (len + 1) as f64;
                a + (b - a) * frac
            };
            out.push(v);
        }
        t = end;
    }
    if series.role == Role::Solar {
        for v in &mut out {
            *v = v.max(0.0);
        }
    }
    Ok(SeriesFrame::from_values(
        series.start_timestamp,
        series.role,
        &out,
    ))
}

/// Root-mean-square error divided by the mean of `actual`.
pub fn nrmse(actual: &SeriesFrame, predicted: &SeriesFrame) -> Result<f64, SeriesError> {
    nrmse_values(&actual.dense()?, &predicted.dense()?)
}

pub fn nrmse_values(actual: &[f64], predicted: &[f64]) -> Result<f64, SeriesError> {
    if actual.len() != predicted.len() {
        return Err(SeriesError::LengthMismatch(actual.len(), predicted.len()));
    }
    if actual.is_empty() {
        return Err(SeriesError::ZeroMean);
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(SeriesError::ZeroMean);
    }
    let sse: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (p - y) * (p - y))
        .sum();
    Ok((sse / n).sqrt() / mean.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts() -> NaiveDateTime {
        parse_timestamp("2020-11-01T00:00").unwrap()
    }

    fn frame(values: Vec<Option<f64>>) -> SeriesFrame {
        SeriesFrame::new(ts(), Role::Baseload, values)
    }

    #[test]
    fn midpoint_interpolation() {
        let c = clean(&frame(vec![Some(1.0), None, Some(3.0)])).unwrap();
        assert_eq!(c.dense().unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn long_gap_copies_previous_week() {
        let n = 3 * SLOTS_PER_WEEK;
        let mut values: Vec<Option<f64>> = (0..n)
            .map(|i| Some((i % 97) as f64 + 0.5 * (i / 672) as f64))
            .collect();
        let s = SLOTS_PER_WEEK + 200;
        for v in &mut values[s..s + 96] {
            *v = None;
        }
        let original: Vec<f64> = values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let c = clean(&frame(values)).unwrap().dense().unwrap();
        for i in s..s + 96 {
            assert_eq!(c[i], original[i - SLOTS_PER_WEEK]);
        }
    }

    #[test]
    fn gap_longer_than_a_week_fills_recursively() {
        let n = 3 * SLOTS_PER_WEEK;
        let mut values: Vec<Option<f64>> = (0..n).map(|i| Some(i as f64)).collect();
        for v in &mut values[SLOTS_PER_WEEK..n - 10] {
            *v = None;
        }
        let c = clean(&frame(values)).unwrap().dense().unwrap();
        for i in SLOTS_PER_WEEK..n - 10 {
            assert_eq!(c[i], ((i - SLOTS_PER_WEEK) % SLOTS_PER_WEEK) as f64);
        }
    }

    #[test]
    fn leading_and_trailing_gaps() {
        let c = clean(&frame(vec![None, None, Some(4.0), Some(6.0), None])).unwrap();
        assert_eq!(c.dense().unwrap(), vec![4.0, 4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn all_missing_is_an_error() {
        assert!(matches!(
            clean(&frame(vec![None, None])),
            Err(SeriesError::AllMissing)
        ));
    }

    #[test]
    fn solar_is_clamped() {
        let s = SeriesFrame::new(ts(), Role::Solar, vec![Some(-1.0), None, Some(2.0)]);
        assert_eq!(clean(&s).unwrap().dense().unwrap(), vec![0.0, 0.5, 2.0]);
    }

    #[test]
    fn nrmse_hand_cases() {
        assert_eq!(nrmse_values(&[10.0; 4], &[12.0; 4]).unwrap(), 0.2);
        assert_eq!(nrmse_values(&[1.0, 3.0], &[3.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            nrmse_values(&[1.0, -1.0], &[0.0, 0.0]),
            Err(SeriesError::ZeroMean)
        ));
        assert!(matches!(
            nrmse_values(&[1.0], &[1.0, 2.0]),
            Err(SeriesError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn csv_round_trip_with_missing() {
        let s = frame(vec![Some(1.5), None, Some(-2.0)]);
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("timestamp,value\n2020-11-01T00:00,1.5\n2020-11-01T00:15,\n"));
        assert_eq!(read_csv(text.as_bytes(), Role::Baseload).unwrap(), s);
    }

    #[test]
    fn csv_rejects_bad_header_and_skipped_timestamp() {
        assert!(read_csv("time,value\n".as_bytes(), Role::Price).is_err());
        let err = read_csv(
            "timestamp,value\n2020-11-01T00:00,1\n2020-11-01T00:30,2\n".as_bytes(),
            Role::Price,
        )
        .unwrap_err();
        assert!(matches!(err, SeriesError::Csv { line: 3, .. }), "{err}");
    }

    fn gappy() -> impl Strategy<Value = Vec<Option<f64>>> {
        prop::collection::vec(prop::option::weighted(0.7, -50.0f64..50.0), 1..2000)
    }

    proptest! {
        #[test]
        fn clean_is_idempotent_and_complete(values in gappy()) {
            prop_assume!(values.iter().any(Option::is_some));
            let once = clean(&frame(values)).unwrap();
            prop_assert!(once.values.iter().all(Option::is_some));
            prop_assert_eq!(clean(&once).unwrap(), once);
        }

        #[test]
        fn known_values_are_untouched(values in gappy()) {
            prop_assume!(values.iter().any(Option::is_some));
            let c = clean(&frame(values.clone())).unwrap();
            for (orig, new) in values.iter().zip(&c.values) {
                if let Some(v) = orig {
                    prop_assert_eq!(Some(*v), *new);
                }
            }
        }

        #[test]
        fn nrmse_self_is_zero_and_scale_free(
            pairs in prop::collection::vec((1.0f64..100.0, 0.0f64..100.0), 1..200),
            c in 0.01f64..100.0,
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert_eq!(nrmse_values(&a, &a).unwrap(), 0.0);
            let base = nrmse_values(&a, &p).unwrap();
            let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
            let sp: Vec<f64> = p.iter().map(|v| v * c).collect();
            let scaled = nrmse_values(&sa, &sp).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * (1.0 + base));
        }
    }
}
