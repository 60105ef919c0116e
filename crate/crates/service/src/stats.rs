// SPDX-License-Identifier: Apache-2.0

//! Usage reports derived from the ledger. Reports are never stored; they
//! are recomputed from commit events on demand.

use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use relay_core::Category;
use serde::{Deserialize, Serialize};

use crate::ledger::UsageEvent;

/// Half-open interval `[from, to)`; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsPeriod {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl StatsPeriod {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn until(to: DateTime<Utc>) -> Self {
        Self { from: None, to: Some(to) }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.from.is_none_or(|from| t >= from) && self.to.is_none_or(|to| t < to)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub experimental: u64,
    pub theoretical: u64,
    pub uncategorized: u64,
}

impl CategoryBreakdown {
    pub fn get(&self, category: Category) -> u64 {
        match category {
            Category::Experimental => self.experimental,
            Category::Theoretical => self.theoretical,
            Category::Uncategorized => self.uncategorized,
        }
    }

    fn add(&mut self, category: Category, amount: u64) {
        let slot = match category {
            Category::Experimental => &mut self.experimental,
            Category::Theoretical => &mut self.theoretical,
            Category::Uncategorized => &mut self.uncategorized,
        };
        *slot += amount;
    }

    pub fn sum(&self) -> u64 {
        self.experimental + self.theoretical + self.uncategorized
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageReport {
    pub period: StatsPeriod,
    pub user_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub org_count: Option<u64>,
    pub total_volume: u64,
    pub volume_by_category: CategoryBreakdown,
    pub file_count_total: u64,
    pub file_count_by_category: CategoryBreakdown,
}

impl UsageReport {
    /// Category breakdowns sum to the totals.
    pub fn is_additive(&self) -> bool {
        self.volume_by_category.sum() == self.total_volume
            && self.file_count_by_category.sum() == self.file_count_total
    }
}

/// Optional static user -> organization table.
pub type OrgMap = HashMap<String, String>;

pub fn aggregate_stats(events: &[UsageEvent], period: StatsPeriod, orgs: Option<&OrgMap>) -> UsageReport {
    let mut report = UsageReport {
        period,
        ..UsageReport::default()
    };
    let mut users = BTreeSet::new();
    for event in events.iter().filter(|e| period.contains(e.committed_at)) {
        users.insert(event.owner.as_str());
        report.total_volume += event.size;
        report.volume_by_category.add(event.category, event.size);
        report.file_count_total += 1;
        report.file_count_by_category.add(event.category, 1);
    }
    report.user_count = users.len() as u64;
    report.org_count = orgs.map(|orgs| {
        users
            .iter()
            .filter_map(|u| orgs.get(*u))
            .collect::<BTreeSet<_>>()
            .len() as u64
    });
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthlyPoint {
    /// `YYYY-MM`
    pub month: String,
    pub report: UsageReport,
}

fn month_start(year: i32, month: u32) -> DateTime<Utc> {
    let date = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
}

fn next_month(year: i32, month: u32) -> (i32, u32) {
    if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    }
}

/// Cumulative report at the end of every calendar month from the first to
/// the last event (inclusive). Empty ledger gives an empty series.
pub fn cumulative_by_month(events: &[UsageEvent], orgs: Option<&OrgMap>) -> Vec<MonthlyPoint> {
    let (Some(first), Some(last)) = (
        events.iter().map(|e| e.committed_at).min(),
        events.iter().map(|e| e.committed_at).max(),
    ) else {
        return Vec::new();
    };
    let mut series = Vec::new();
    let (mut year, mut month) = (first.year(), first.month());
    let end = (last.year(), last.month());
    loop {
        let (ny, nm) = next_month(year, month);
        let report = aggregate_stats(events, StatsPeriod::until(month_start(ny, nm)), orgs);
        series.push(MonthlyPoint {
            month: format!("{year:04}-{month:02}"),
            report,
        });
        if (year, month) == end {
            break;
        }
        (year, month) = (ny, nm);
    }
    series
}

#[cfg(test)]
mod tests {
    use super::*;
    use relay_core::ContentDigest;

    fn ev(owner: &str, category: Category, size: u64, at: &str) -> UsageEvent {
        UsageEvent {
            object_id: "0".repeat(32),
            owner: owner.into(),
            relative_path: "f".into(),
            category,
            size,
            whole_digest: ContentDigest::empty(),
            committed_at: at.parse().unwrap(),
        }
    }

    #[test]
    fn empty_ledger_is_all_zero() {
        let r = aggregate_stats(&[], StatsPeriod::all(), None);
        assert_eq!(r.total_volume, 0);
        assert_eq!(r.file_count_total, 0);
        assert_eq!(r.user_count, 0);
        assert_eq!(r.org_count, None);
        assert!(r.is_additive());
        assert!(cumulative_by_month(&[], None).is_empty());
    }

    #[test]
    fn period_is_half_open() {
        let events = vec![
            ev("a", Category::Experimental, 10, "2024-01-01T00:00:00Z"),
            ev("b", Category::Theoretical, 20, "2024-02-01T00:00:00Z"),
        ];
        let r = aggregate_stats(
            &events,
            StatsPeriod {
                from: Some("2024-01-01T00:00:00Z".parse().unwrap()),
                to: Some("2024-02-01T00:00:00Z".parse().unwrap()),
            },
            None,
        );
        assert_eq!(r.total_volume, 10);
        assert_eq!(r.user_count, 1);
    }

    #[test]
    fn org_count_from_map() {
        let events = vec![
            ev("a", Category::Experimental, 1, "2024-01-01T00:00:00Z"),
            ev("b", Category::Experimental, 1, "2024-01-01T00:00:00Z"),
            ev("c", Category::Experimental, 1, "2024-01-01T00:00:00Z"),
        ];
        let orgs: OrgMap = [("a", "univ-x"), ("b", "univ-x"), ("c", "corp-y")]
            .into_iter()
            .map(|(u, o)| (u.to_owned(), o.to_owned()))
            .collect();
        let r = aggregate_stats(&events, StatsPeriod::all(), Some(&orgs));
        assert_eq!(r.user_count, 3);
        assert_eq!(r.org_count, Some(2));
    }

    #[test]
    fn monthly_series_spans_gaps_and_year_end() {
        let events = vec![
            ev("a", Category::Experimental, 5, "2023-11-15T00:00:00Z"),
            ev("a", Category::Theoretical, 7, "2024-02-29T23:59:59Z"),
        ];
        let series = cumulative_by_month(&events, None);
        let months: Vec<&str> = series.iter().map(|p| p.month.as_str()).collect();
        assert_eq!(months, ["2023-11", "2023-12", "2024-01", "2024-02"]);
        let volumes: Vec<u64> = series.iter().map(|p| p.report.total_volume).collect();
        assert_eq!(volumes, [5, 5, 5, 12]);
    }
}
