// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, ValueEnum};
use relay_service::http::parse_timestamp;
use relay_service::{aggregate_stats, cumulative_by_month, read_ledger, MonthlyPoint, StatsPeriod, UsageReport};

use crate::config::GlobalConfig;
use crate::serve_cmd::load_orgs;
use crate::{print_json, CmdResult, Failure};

const LEDGER_FILE: &str = ".ledger";

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Bucket {
    Month,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Ledger file to read directly
    #[arg(long, value_name = "FILE", conflicts_with = "server")]
    pub ledger: Option<PathBuf>,
    /// Query a running service instead (also RELAY_SERVER_URL)
    #[arg(long, value_name = "URL")]
    pub server: Option<String>,
    /// Read the ledger under this service data root (also RELAY_DATA_ROOT)
    #[arg(long, value_name = "DIR", conflicts_with_all = ["ledger", "server"])]
    pub data_root: Option<PathBuf>,
    /// Period start, inclusive: RFC 3339, YYYY-MM-DD or Unix seconds
    #[arg(long, value_parser = parse_when)]
    pub from: Option<DateTime<Utc>>,
    /// Period end, exclusive
    #[arg(long, value_parser = parse_when)]
    pub to: Option<DateTime<Utc>>,
    /// Emit a cumulative series instead of a single report
    #[arg(long, value_name = "BUCKET", conflicts_with_all = ["from", "to"])]
    pub cumulative_by: Option<Bucket>,
    /// JSON object mapping user id to organization
    #[arg(long, value_name = "FILE", conflicts_with = "server")]
    pub orgs: Option<PathBuf>,
    /// Tables instead of JSON
    #[arg(long)]
    pub human: bool,
}

fn parse_when(s: &str) -> Result<DateTime<Utc>, String> {
    if let Some(t) = parse_timestamp(s) {
        return Ok(t);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| format!("{s:?} is not RFC 3339, YYYY-MM-DD or Unix seconds"))
}

enum Output {
    Report(UsageReport),
    Series(Vec<MonthlyPoint>),
}

pub async fn run(args: StatsArgs, global: &GlobalConfig) -> CmdResult {
    let period = StatsPeriod {
        from: args.from,
        to: args.to,
    };
    let output = if let Some(ledger) = &args.ledger {
        from_ledger(ledger.clone(), &args, period)?
    } else if let Some(url) = global.server_url.get().filter(|_| args.data_root.is_none()) {
        from_server(url, &args, period).await?
    } else if let Some(root) = global.data_root.get() {
        from_ledger(root.join(LEDGER_FILE), &args, period)?
    } else {
        return Err(Failure::Usage("pass --ledger, --server or --data-root".into()));
    };
    match (output, args.human) {
        (Output::Report(r), false) => print_json(&r),
        (Output::Series(s), false) => print_json(&s),
        (Output::Report(r), true) => print!("{}", human_report(&r)),
        (Output::Series(s), true) => print!("{}", human_series(&s)),
    }
    Ok(())
}

fn from_ledger(path: PathBuf, args: &StatsArgs, period: StatsPeriod) -> Result<Output, Failure> {
    // a missing ledger is an operator mistake here, not an empty history
    std::fs::File::open(&path).map_err(|e| Failure::Runtime(format!("cannot read ledger {}: {e}", path.display())))?;
    let events = read_ledger(&path).map_err(|e| Failure::Runtime(format!("cannot read ledger {}: {e}", path.display())))?;
    let orgs = args.orgs.as_deref().map(load_orgs).transpose()?;
    Ok(match args.cumulative_by {
        Some(Bucket::Month) => Output::Series(cumulative_by_month(&events, orgs.as_ref())),
        None => Output::Report(aggregate_stats(&events, period, orgs.as_ref())),
    })
}

async fn from_server(url: &str, args: &StatsArgs, period: StatsPeriod) -> Result<Output, Failure> {
    let base = url.trim_end_matches('/');
    let client = reqwest::Client::new();
    let fail = |e: reqwest::Error| Failure::Runtime(format!("stats request to {base} failed: {e}"));
    Ok(match args.cumulative_by {
        Some(Bucket::Month) => {
            let resp = client.get(format!("{base}/v1/stats/monthly")).send().await.map_err(fail)?;
            Output::Series(resp.error_for_status().map_err(fail)?.json().await.map_err(fail)?)
        }
        None => {
            let mut endpoint = reqwest::Url::parse(&format!("{base}/v1/stats")).map_err(|e| Failure::Usage(format!("bad server URL {base:?}: {e}")))?;
            if let Some(f) = period.from {
                endpoint.query_pairs_mut().append_pair("from", &f.to_rfc3339());
            }
            if let Some(t) = period.to {
                endpoint.query_pairs_mut().append_pair("to", &t.to_rfc3339());
            }
            let resp = client.get(endpoint).send().await.map_err(fail)?;
            Output::Report(resp.error_for_status().map_err(fail)?.json().await.map_err(fail)?)
        }
    })
}

fn gb(bytes: u64) -> String {
    format!("{:.2} GB", bytes as f64 / 1e9)
}

fn human_report(r: &UsageReport) -> String {
    let when = |t: Option<DateTime<Utc>>| t.map_or("-".to_string(), |t| t.to_rfc3339());
    let mut out = format!("period        {} .. {}\n", when(r.period.from), when(r.period.to));
    out += &format!("users         {}\n", r.user_count);
    if let Some(o) = r.org_count {
        out += &format!("organizations {o}\n");
    }
    out += &format!("{:<14}{:>14}{:>10}\n", "category", "volume", "files");
    let v = &r.volume_by_category;
    let f = &r.file_count_by_category;
    for (name, vol, files) in [
        ("experimental", v.experimental, f.experimental),
        ("theoretical", v.theoretical, f.theoretical),
        ("uncategorized", v.uncategorized, f.uncategorized),
        ("total", r.total_volume, r.file_count_total),
    ] {
        out += &format!("{name:<14}{:>14}{files:>10}\n", gb(vol));
    }
    out
}

fn human_series(series: &[MonthlyPoint]) -> String {
    let mut out = format!("{:<9}{:>14}{:>10}{:>8}\n", "month", "volume", "files", "users");
    for p in series {
        out += &format!(
            "{:<9}{:>14}{:>10}{:>8}\n",
            p.month,
            gb(p.report.total_volume),
            p.report.file_count_total,
            p.report.user_count
        );
    }
    out
}
