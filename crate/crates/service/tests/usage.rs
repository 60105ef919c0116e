// SPDX-License-Identifier: Apache-2.0

//! Usage aggregation against brute-force folds, and quota safety under
//! concurrent reservations.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Barrier};

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use relay_core::manifest::build_manifest_from_reader;
use relay_core::{Category, ContentDigest, DeviceCredential};
use relay_service::{
    aggregate_stats, cumulative_by_month, QuotaPolicy, ServiceConfig, StatsPeriod, StorageService,
    UsageEvent,
};

fn event(owner: String, category: Category, size: u64, at: DateTime<Utc>) -> UsageEvent {
    UsageEvent {
        object_id: format!("{:032x}", rand::random::<u128>()),
        owner,
        relative_path: "f".into(),
        category,
        size,
        whole_digest: ContentDigest::empty(),
        committed_at: at,
    }
}

fn random_ledger(seed: u64, n: usize) -> Vec<UsageEvent> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let start = Utc.with_ymd_and_hms(2023, 4, 1, 0, 0, 0).unwrap();
    (0..n)
        .map(|_| {
            let category = Category::ALL[rng.random_range(0..3)];
            let at = start + Duration::seconds(rng.random_range(0..365 * 86_400));
            event(
                format!("user{}", rng.random_range(0..40)),
                category,
                rng.random_range(0..10_000_000),
                at,
            )
        })
        .collect()
}

#[test]
fn thousand_random_events_match_brute_force_fold() {
    let events = random_ledger(2024, 1000);
    let report = aggregate_stats(&events, StatsPeriod::all(), None);

    let mut volume: BTreeMap<&str, u64> = BTreeMap::new();
    let mut count: BTreeMap<&str, u64> = BTreeMap::new();
    let mut users = BTreeSet::new();
    for e in &events {
        *volume.entry(e.category.as_str()).or_default() += e.size;
        *count.entry(e.category.as_str()).or_default() += 1;
        users.insert(&e.owner);
    }
    assert_eq!(report.total_volume, volume.values().sum::<u64>());
    assert_eq!(report.file_count_total, 1000);
    for c in Category::ALL {
        assert_eq!(report.volume_by_category.get(c), volume.get(c.as_str()).copied().unwrap_or(0));
        assert_eq!(report.file_count_by_category.get(c), count.get(c.as_str()).copied().unwrap_or(0));
    }
    assert_eq!(report.user_count, users.len() as u64);
    assert!(report.is_additive());

    // per-user volumes also sum to the total
    let mut per_user: BTreeMap<&str, u64> = BTreeMap::new();
    for e in &events {
        *per_user.entry(&e.owner).or_default() += e.size;
    }
    assert_eq!(per_user.values().sum::<u64>(), report.total_volume);
}

#[test]
fn monthly_series_is_monotone_and_equals_fold() {
    let events = random_ledger(7, 500);
    let series = cumulative_by_month(&events, None);
    assert!(series.len() >= 12);
    for w in series.windows(2) {
        assert!(w[0].report.total_volume <= w[1].report.total_volume);
        assert!(w[0].report.file_count_total <= w[1].report.file_count_total);
        assert!(w[0].report.user_count <= w[1].report.user_count);
    }
    for point in &series {
        let (y, m) = point.month.split_once('-').unwrap();
        let (y, m): (i32, u32) = (y.parse().unwrap(), m.parse().unwrap());
        let (ny, nm) = if m == 12 { (y + 1, 1) } else { (y, m + 1) };
        let end = Utc.with_ymd_and_hms(ny, nm, 1, 0, 0, 0).unwrap();
        let fold: u64 = events.iter().filter(|e| e.committed_at < end).map(|e| e.size).sum();
        assert_eq!(point.report.total_volume, fold, "{}", point.month);
    }
    assert_eq!(series.last().unwrap().report.file_count_total, 500);
}

fn devices() -> Vec<DeviceCredential> {
    vec![DeviceCredential {
        device_id: "dev".into(),
        device_secret: "s".into(),
        registered_users: vec!["u0".into(), "u1".into(), "u2".into()],
    }]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn concurrent_reservations_respect_hard_quota(
        limit in 1u64..20_000,
        sizes in proptest::collection::vec((0usize..3, 1usize..6_000), 4..24),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ServiceConfig::new(dir.path(), devices());
        cfg.quota = QuotaPolicy { per_user_limit: limit, hard: true };
        let svc = Arc::new(StorageService::open(cfg).unwrap());
        let token = svc.issue_token("dev", "s").unwrap().token;
        let barrier = Arc::new(Barrier::new(sizes.len()));

        let handles: Vec<_> = sizes
            .iter()
            .enumerate()
            .map(|(i, &(user, size))| {
                let svc = svc.clone();
                let token = token.clone();
                let barrier = barrier.clone();
                std::thread::spawn(move || {
                    let p = svc.authorize(Some(&token)).unwrap();
                    let data = vec![i as u8; size];
                    let owner = format!("u{user}");
                    let m = build_manifest_from_reader(&data[..], &owner, &format!("f{i}"), Category::Experimental, 1024).unwrap();
                    barrier.wait();
                    let Ok(init) = svc.init_upload(&p, m.clone()) else { return };
                    for c in &m.chunks {
                        let s = c.offset as usize;
                        svc.put_chunk(&p, &init.upload_id, c.index, None, &data[s..s + c.length as usize]).unwrap();
                    }
                    if i % 2 == 0 {
                        svc.complete_upload(&p, &init.upload_id).unwrap();
                    }
                    let usage = svc.usage(&owner);
                    assert!(usage.total() <= limit);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        for user in ["u0", "u1", "u2"] {
            prop_assert!(svc.usage(user).total() <= limit);
        }
    }
}
