use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};

/// Number of calendar covariates per timestep.
pub const MARK_WIDTH: usize = 7;

const YEAR_DAYS: f64 = 365.25;

/// Seven deterministic encodings of a day:
/// `[sin, cos](2π·doy/365.25)`, `[sin, cos](2π·month/12)`, `[sin, cos](2π·weekday/7)`, `doy/365.25`,
/// with `doy ∈ [1, 366]`, zero-based month and Monday = 0.
pub fn encode_calendar(date: NaiveDate) -> [f64; MARK_WIDTH] {
    let doy = date.ordinal() as f64;
    let month = date.month0() as f64;
    let weekday = date.weekday().num_days_from_monday() as f64;
    encode_parts(doy, month, weekday)
}

/// Encoding from raw components; validates them as a calendar would.
pub fn encode_components(year: i32, month: u32, day: u32) -> Result<[f64; MARK_WIDTH]> {
    NaiveDate::from_ymd_opt(year, month, day)
        .map(encode_calendar)
        .ok_or_else(|| Error::Date(format!("{year:04}-{month:02}-{day:02}")))
}

pub(crate) fn encode_parts(doy: f64, month: f64, weekday: f64) -> [f64; MARK_WIDTH] {
    let a = 2.0 * PI * doy / YEAR_DAYS;
    let m = 2.0 * PI * month / 12.0;
    let w = 2.0 * PI * weekday / 7.0;
    [a.sin(), a.cos(), m.sin(), m.cos(), w.sin(), w.cos(), doy / YEAR_DAYS]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_period_month_and_zero_weekday() {
        let e = encode_parts(10.0, 6.0, 0.0);
        assert!(e[2].abs() < 1e-12);
        assert!((e[3] + 1.0).abs() < 1e-12);
        assert_eq!(e[4], 0.0);
        assert_eq!(e[5], 1.0);
    }

    #[test]
    fn real_dates() {
        // 2024-07-01 is a Monday in July (month index 6).
        let e = encode_components(2024, 7, 1).unwrap();
        assert!(e[2].abs() < 1e-12 && (e[3] + 1.0).abs() < 1e-12);
        assert_eq!((e[4], e[5]), (0.0, 1.0));
        assert_eq!(e, encode_components(2024, 7, 1).unwrap());
        let leap_end = encode_components(2024, 12, 31).unwrap();
        assert!((leap_end[6] - 366.0 / 365.25).abs() < 1e-15);
    }

    #[test]
    fn invalid_date_is_rejected() {
        assert!(matches!(encode_components(2023, 2, 29), Err(Error::Date(_))));
    }
}
