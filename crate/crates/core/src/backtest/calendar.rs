//! Weekday business-day calendar (Monday to Friday, no holidays) and the
//! monthly review schedule built on it.

use chrono::{Datelike, Months, NaiveDate, Weekday};

pub fn is_business_day(d: NaiveDate) -> bool {
    !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Moves `k` business days back from `d`. `d` itself need not be a
/// business day.
pub fn sub_business_days(d: NaiveDate, k: u32) -> NaiveDate {
    let mut out = d;
    let mut left = k;
    while left > 0 {
        out = out.pred_opt().expect("date underflow");
        if is_business_day(out) {
            left -= 1;
        }
    }
    out
}

pub fn last_business_day(year: i32, month: u32) -> NaiveDate {
    let first_next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid month");
    let mut d = first_next.pred_opt().expect("date underflow");
    while !is_business_day(d) {
        d = d.pred_opt().expect("date underflow");
    }
    d
}

pub fn is_last_business_day(d: NaiveDate) -> bool {
    d == last_business_day(d.year(), d.month())
}

/// Business days in `(from, to]`, ascending.
pub fn business_days_between(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    from.iter_days()
        .skip(1)
        .take_while(|d| *d <= to)
        .filter(|d| is_business_day(*d))
        .collect()
}

/// Date on which a forward return observed at `date` over `months` months is
/// realized. Month-end observations resolve at the month-end `months` later;
/// other dates move by calendar months.
pub fn resolution_date(date: NaiveDate, months: u32) -> NaiveDate {
    let moved = date
        .checked_add_months(Months::new(months))
        .expect("date overflow");
    if is_last_business_day(date) {
        last_business_day(moved.year(), moved.month())
    } else {
        moved
    }
}

/// One portfolio review: the target weights take effect at the close of
/// `review_date` and use information available at `score_date`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Review {
    pub review_date: NaiveDate,
    pub score_date: NaiveDate,
}

impl Review {
    pub fn month_end(year: i32, month: u32, lag_days: u32) -> Self {
        let review_date = last_business_day(year, month);
        Review {
            review_date,
            score_date: sub_business_days(review_date, lag_days),
        }
    }
}

/// Month-end reviews from the month of `first` through the last month-end
/// strictly before `end`.
pub fn monthly_reviews(first: NaiveDate, end: NaiveDate, lag_days: u32) -> Vec<Review> {
    let mut out = Vec::new();
    let (mut y, mut m) = (first.year(), first.month());
    loop {
        let r = Review::month_end(y, m, lag_days);
        if r.review_date >= end {
            break;
        }
        if r.review_date >= first {
            out.push(r);
        }
        if m == 12 {
            y += 1;
            m = 1;
        } else {
            m += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn month_end_and_lag() {
        // 2012-12-31 is a Monday
        assert_eq!(last_business_day(2012, 12), date(2012, 12, 31));
        // 2013-03-31 is a Sunday
        assert_eq!(last_business_day(2013, 3), date(2013, 3, 29));
        let r = Review::month_end(2012, 12, 4);
        assert_eq!(r.score_date, date(2012, 12, 25));
        assert_eq!(sub_business_days(date(2013, 1, 7), 1), date(2013, 1, 4));
    }

    #[test]
    fn resolution_rolls_month_ends() {
        assert_eq!(resolution_date(date(2013, 2, 28), 3), date(2013, 5, 31));
        assert_eq!(resolution_date(date(2013, 2, 15), 3), date(2013, 5, 15));
        assert_eq!(resolution_date(date(2012, 11, 30), 3), date(2013, 2, 28));
    }

    #[test]
    fn schedule_bounds() {
        let rs = monthly_reviews(date(2012, 12, 31), date(2013, 3, 29), 4);
        let dates: Vec<_> = rs.iter().map(|r| r.review_date).collect();
        assert_eq!(dates, vec![date(2012, 12, 31), date(2013, 1, 31), date(2013, 2, 28)]);
        assert_eq!(business_days_between(date(2013, 1, 4), date(2013, 1, 8)).len(), 2);
    }
}
