//! Load forecasting: seasonal-naive hour-of-week means plus peak-hour detection.

use serde::Serialize;
use thiserror::Error;

use crate::fixed::{Fixed, FixedError};

pub const HOURS_PER_WEEK: usize = 168;
pub const DEFAULT_PEAK_K: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForecastError {
    #[error("history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Arithmetic(#[from] FixedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Method {
    HourOfWeekMean,
    /// History shorter than one week.
    SimpleMean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Forecast {
    pub method: Method,
    pub values: Vec<Fixed>,
    /// Hours of day, highest mean load first.
    pub peak_hours: Vec<u8>,
}

/// History index `i` is hour `i` since the scenario epoch, so its hour of week
/// is `i % 168` and the first forecast slot follows the last history hour.
pub trait Forecaster {
    fn forecast(&self, history: &[Fixed], horizon: usize) -> Result<Forecast, ForecastError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeasonalNaive {
    pub peak_k: usize,
}

impl Default for SeasonalNaive {
    fn default() -> Self {
        SeasonalNaive { peak_k: DEFAULT_PEAK_K }
    }
}

fn mean_where(history: &[Fixed], keep: impl Fn(usize) -> bool) -> Result<Option<Fixed>, FixedError> {
    let (sum, count) = history
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .fold((0i128, 0usize), |(s, c), (_, v)| (s + v.raw() as i128, c + 1));
    if count == 0 {
        Ok(None)
    } else {
        Fixed::mean(sum, count).map(Some)
    }
}

/// The `k` hours of day with the highest mean load; ties go to the earlier
/// hour. Means are compared exactly (as fractions), not after rounding.
pub fn peak_hours(history: &[Fixed], k: usize) -> Vec<u8> {
    let mut totals = [(0i128, 0i128); 24];
    for (i, v) in history.iter().enumerate() {
        let t = &mut totals[i % 24];
        t.0 += v.raw() as i128;
        t.1 += 1;
    }
    let mut hours: Vec<(u8, i128, i128)> =
        (0..24u8).zip(totals).filter(|(_, (_, n))| *n > 0).map(|(h, (s, n))| (h, s, n)).collect();
    // s_a / n_a > s_b / n_b  <=>  s_a * n_b > s_b * n_a  (counts are positive)
    hours.sort_by(|a, b| (b.1 * a.2).cmp(&(a.1 * b.2)).then(a.0.cmp(&b.0)));
    hours.into_iter().take(k).map(|(h, _, _)| h).collect()
}

impl Forecaster for SeasonalNaive {
    fn forecast(&self, history: &[Fixed], horizon: usize) -> Result<Forecast, ForecastError> {
        if history.is_empty() {
            return Err(ForecastError::EmptyHistory);
        }
        let peak_hours = peak_hours(history, self.peak_k);
        if history.len() < HOURS_PER_WEEK {
            let mean = mean_where(history, |_| true)?.expect("non-empty");
            return Ok(Forecast { method: Method::SimpleMean, values: vec![mean; horizon], peak_hours });
        }
        let mut by_slot = Vec::with_capacity(HOURS_PER_WEEK);
        for slot in 0..HOURS_PER_WEEK {
            by_slot.push(mean_where(history, |i| i % HOURS_PER_WEEK == slot)?.expect("full week present"));
        }
        let values = (0..horizon).map(|h| by_slot[(history.len() + h) % HOURS_PER_WEEK]).collect();
        Ok(Forecast { method: Method::HourOfWeekMean, values, peak_hours })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fx(s: &str) -> Fixed {
        s.parse().unwrap()
    }

    #[test]
    fn constant_history() {
        let h = vec![fx("2.5"); 200];
        let f = SeasonalNaive::default().forecast(&h, 30).unwrap();
        assert_eq!(f.method, Method::HourOfWeekMean);
        assert!(f.values.iter().all(|v| *v == fx("2.5")));
        assert_eq!(f.peak_hours, vec![0, 1, 2]);
    }

    #[test]
    fn doubled_hour_is_top_peak() {
        let h: Vec<Fixed> = (0..24 * 14).map(|i| if i % 24 == 18 { fx("2") } else { fx("1") }).collect();
        let f = SeasonalNaive { peak_k: 1 }.forecast(&h, 1).unwrap();
        assert_eq!(f.peak_hours, vec![18]);
    }

    #[test]
    fn peaks_compare_unrounded_means() {
        // hour 1 averages 1.00005, which rounds to hour 0's 1.0000
        let mut h = vec![fx("0"); 48];
        h[0] = fx("1");
        h[24] = fx("1");
        h[1] = fx("1.0001");
        h[25] = fx("1");
        assert_eq!(peak_hours(&h, 2), vec![1, 0]);
    }

    #[test]
    fn short_history_falls_back_to_mean() {
        let f = SeasonalNaive::default().forecast(&[fx("1"), fx("2"), fx("4")], 2).unwrap();
        assert_eq!(f.method, Method::SimpleMean);
        // 7 / 3 = 2.33333.. -> 2.3333
        assert_eq!(f.values, vec![fx("2.3333"); 2]);
        assert_eq!(f.peak_hours, vec![2, 1, 0]);
    }

    #[test]
    fn empty_history_is_an_error() {
        assert_eq!(SeasonalNaive::default().forecast(&[], 3), Err(ForecastError::EmptyHistory));
    }

    #[test]
    fn slots_continue_after_history() {
        let h: Vec<Fixed> = (0..HOURS_PER_WEEK as i64 + 5).map(|i| Fixed::from_int(i % 168)).collect();
        let f = SeasonalNaive::default().forecast(&h, 3).unwrap();
        // history hour 168..172 repeat slots 0..4 with values 0..4, so slot 5 is 5
        assert_eq!(f.values, vec![Fixed::from_int(5), Fixed::from_int(6), Fixed::from_int(7)]);
    }
}
