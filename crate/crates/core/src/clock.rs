//! Local-time arithmetic at a fixed UTC offset.
//!
//! Timestamps are unix seconds (UTC). All calendar questions (hour of day,
//! weekday, week boundaries) are answered after shifting by the offset.

pub const SECONDS_PER_HOUR: i64 = 3_600;
pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_WEEK: i64 = 604_800;

/// 1970-01-01 was a Thursday; the first Monday is four days later.
const EPOCH_MONDAY_OFFSET: i64 = 4 * SECONDS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TzOffset(pub i64);

impl TzOffset {
    pub const BEIJING: TzOffset = TzOffset(8 * SECONDS_PER_HOUR);

    pub fn local(self, ts: i64) -> i64 {
        ts + self.0
    }

    /// Days since the epoch in local time.
    pub fn day_number(self, ts: i64) -> i64 {
        self.local(ts).div_euclid(SECONDS_PER_DAY)
    }

    pub fn hour(self, ts: i64) -> u32 {
        (self.local(ts).rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR) as u32
    }

    /// Monday = 0 .. Sunday = 6.
    pub fn weekday(self, ts: i64) -> u32 {
        (self.day_number(ts) + 3).rem_euclid(7) as u32
    }

    pub fn is_weekend(self, ts: i64) -> bool {
        self.weekday(ts) >= 5
    }

    /// UTC timestamp of the local Monday 00:00 that starts `ts`'s week.
    pub fn week_start(self, ts: i64) -> i64 {
        let local = self.local(ts) - EPOCH_MONDAY_OFFSET;
        local.div_euclid(SECONDS_PER_WEEK) * SECONDS_PER_WEEK + EPOCH_MONDAY_OFFSET - self.0
    }

    /// UTC timestamp of local midnight starting day number `day`.
    pub fn midnight_of_day(self, day: i64) -> i64 {
        day * SECONDS_PER_DAY - self.0
    }
}

impl Default for TzOffset {
    fn default() -> Self {
        TzOffset::BEIJING
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // 2008-10-06 00:00 +08:00, a Monday.
    const MONDAY: i64 = 1_223_222_400;

    #[test]
    fn calendar_fields() {
        let tz = TzOffset::BEIJING;
        assert_eq!(tz.weekday(MONDAY), 0);
        assert_eq!(tz.hour(MONDAY + 9 * 3600 + 59), 9);
        assert_eq!(tz.weekday(MONDAY + 5 * SECONDS_PER_DAY), 5);
        assert!(tz.is_weekend(MONDAY + 6 * SECONDS_PER_DAY + 23 * 3600));
        assert_eq!(tz.week_start(MONDAY), MONDAY);
        assert_eq!(tz.week_start(MONDAY + SECONDS_PER_WEEK - 1), MONDAY);
        assert_eq!(tz.week_start(MONDAY - 1), MONDAY - SECONDS_PER_WEEK);
        assert_eq!(tz.midnight_of_day(tz.day_number(MONDAY + 100)), MONDAY);
    }

    #[test]
    fn utc_offset_zero() {
        let tz = TzOffset(0);
        // 1970-01-05 00:00 UTC was a Monday.
        assert_eq!(tz.week_start(4 * SECONDS_PER_DAY + 5), 4 * SECONDS_PER_DAY);
        assert_eq!(tz.weekday(0), 3);
    }
}
