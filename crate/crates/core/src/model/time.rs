use std::collections::BTreeSet;

use chrono::{DateTime, Datelike, Timelike};

use super::ModelError;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Day-of-week (Monday = 0), time slot of the day and holiday flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeContext {
    pub day_of_week: usize,
    pub slot: usize,
    pub is_holiday: bool,
}

impl TimeContext {
    pub fn new(day_of_week: usize, slot: usize, is_holiday: bool, slots_per_day: usize) -> Result<Self, ModelError> {
        if day_of_week > 6 {
            return Err(ModelError::InvalidContext(format!("day_of_week {day_of_week} > 6")));
        }
        if slot >= slots_per_day {
            return Err(ModelError::InvalidContext(format!("slot {slot} >= K = {slots_per_day}")));
        }
        Ok(Self {
            day_of_week,
            slot,
            is_holiday,
        })
    }
}

/// Maps unix timestamps (UTC) onto [`TimeContext`]s for a `K`-slot day.
#[derive(Clone, Debug, PartialEq)]
pub struct Calendar {
    pub slots_per_day: usize,
    /// Holidays as days since the unix epoch.
    pub holidays: BTreeSet<i64>,
}

impl Calendar {
    pub fn new(slots_per_day: usize) -> Self {
        Self {
            slots_per_day,
            holidays: BTreeSet::new(),
        }
    }

    pub fn slot_seconds(&self) -> f64 {
        SECONDS_PER_DAY as f64 / self.slots_per_day as f64
    }

    /// Slot containing `seconds_of_day`.
    pub fn slot_of_seconds(&self, seconds_of_day: i64) -> usize {
        let s = seconds_of_day.rem_euclid(SECONDS_PER_DAY) as u128;
        ((s * self.slots_per_day as u128) / SECONDS_PER_DAY as u128) as usize
    }

    pub fn context(&self, timestamp: i64) -> TimeContext {
        let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono range");
        let day = timestamp.div_euclid(SECONDS_PER_DAY);
        TimeContext {
            day_of_week: dt.weekday().num_days_from_monday() as usize,
            slot: self.slot_of_seconds(dt.num_seconds_from_midnight() as i64),
            is_holiday: self.holidays.contains(&day),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_hour_slots() {
        let cal = Calendar::new(48);
        assert_eq!(cal.slot_of_seconds(0), 0);
        assert_eq!(cal.slot_of_seconds(7 * 3600 + 1799), 14);
        assert_eq!(cal.slot_of_seconds(7 * 3600 + 1800), 15);
        assert_eq!(cal.slot_of_seconds(SECONDS_PER_DAY - 1), 47);
    }

    #[test]
    fn context_from_timestamp() {
        // 2023-01-02 was a Monday
        let monday_0730 = 1_672_617_600 + 7 * 3600 + 1800;
        let mut cal = Calendar::new(48);
        let ctx = cal.context(monday_0730);
        assert_eq!((ctx.day_of_week, ctx.slot, ctx.is_holiday), (0, 15, false));
        cal.holidays.insert(1_672_617_600 / SECONDS_PER_DAY);
        assert!(cal.context(monday_0730).is_holiday);
        assert_eq!(cal.context(monday_0730 + 6 * SECONDS_PER_DAY).day_of_week, 6);
    }

    #[test]
    fn slot_bounds_checked() {
        assert!(TimeContext::new(0, 4, false, 4).is_err());
        assert!(TimeContext::new(7, 0, false, 4).is_err());
        assert!(TimeContext::new(6, 3, true, 4).is_ok());
    }
}
