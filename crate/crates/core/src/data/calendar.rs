//! Calendar cycle indices derived from epoch-second timestamps (UTC).

use chrono::{DateTime, Datelike, Timelike};

/// A discrete calendar cycle with a fixed cardinality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CalendarCycle {
    MinuteOfHour,
    TimeOfDay,
    DayOfWeek,
    WeekOfMonth,
    MonthOfYear,
}

impl CalendarCycle {
    pub const ALL: [CalendarCycle; 5] = [
        CalendarCycle::MinuteOfHour,
        CalendarCycle::TimeOfDay,
        CalendarCycle::DayOfWeek,
        CalendarCycle::WeekOfMonth,
        CalendarCycle::MonthOfYear,
    ];

    pub fn cardinality(self) -> usize {
        match self {
            CalendarCycle::MinuteOfHour => 60,
            CalendarCycle::TimeOfDay => 24,
            CalendarCycle::DayOfWeek => 7,
            CalendarCycle::WeekOfMonth => 4,
            CalendarCycle::MonthOfYear => 12,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CalendarCycle::MinuteOfHour => "minute_of_hour",
            CalendarCycle::TimeOfDay => "time_of_day",
            CalendarCycle::DayOfWeek => "day_of_week",
            CalendarCycle::WeekOfMonth => "week_of_month",
            CalendarCycle::MonthOfYear => "month_of_year",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Index of `timestamp` (epoch seconds, UTC) within this cycle.
    pub fn index(self, timestamp: i64) -> usize {
        let t = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono range");
        match self {
            CalendarCycle::MinuteOfHour => t.minute() as usize,
            CalendarCycle::TimeOfDay => t.hour() as usize,
            CalendarCycle::DayOfWeek => t.weekday().num_days_from_monday() as usize,
            CalendarCycle::WeekOfMonth => (((t.day() - 1) / 7) as usize).min(3),
            CalendarCycle::MonthOfYear => t.month0() as usize,
        }
    }
}

/// One index per declared cycle, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CalendarIndex(pub Vec<usize>);

pub fn calendar_features(timestamp: i64, cycles: &[CalendarCycle]) -> CalendarIndex {
    CalendarIndex(cycles.iter().map(|c| c.index(timestamp)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    #[test]
    fn epoch_anchor() {
        let idx = calendar_features(
            300,
            &[CalendarCycle::MinuteOfHour, CalendarCycle::TimeOfDay, CalendarCycle::DayOfWeek],
        );
        assert_eq!(idx.0, vec![5, 0, 3]);
    }

    #[test]
    fn week_of_month_clamps() {
        let t = Utc.with_ymd_and_hms(2024, 1, 29, 12, 0, 0).unwrap().timestamp();
        assert_eq!(CalendarCycle::WeekOfMonth.index(t), 3);
        let t = Utc.with_ymd_and_hms(2024, 1, 8, 0, 0, 0).unwrap().timestamp();
        assert_eq!(CalendarCycle::WeekOfMonth.index(t), 1);
        assert_eq!(CalendarCycle::MonthOfYear.index(t), 0);
    }

    #[test]
    fn indices_stay_within_cardinality() {
        for k in 0..5000i64 {
            let ts = k * 7919 * 61;
            for c in CalendarCycle::ALL {
                assert!(c.index(ts) < c.cardinality());
            }
            if ts % 3600 == 0 {
                assert_eq!(CalendarCycle::MinuteOfHour.index(ts), 0);
            }
        }
    }
}
