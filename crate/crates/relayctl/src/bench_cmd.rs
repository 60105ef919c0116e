// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::Args;
use relay_harness::{
    check_ordering, compare_routes, find_profile, load_profile_catalog, reports_csv, run_suite, BenchSpec, NetworkProfile,
};
use relay_harness::bench::DEFAULT_BENCH_CHUNK;
use serde::Serialize;

use crate::units::parse_size;
use crate::{print_json, CmdResult, Failure, Shutdown};

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Profile to bench; repeat for several
    #[arg(long = "profile", value_name = "NAME")]
    pub profiles: Vec<String>,
    /// Bench every profile in the catalog
    #[arg(long, conflicts_with = "profiles")]
    pub all_profiles: bool,
    /// Profile catalog JSON [default: builtin]
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    /// Multiply every bandwidth cap, to fit a desk-sized machine
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 10)]
    pub files: usize,
    /// Size of each generated file
    #[arg(long, value_name = "SIZE", default_value = "16MiB", value_parser = parse_size)]
    pub size: u64,
    /// Chunk uploads in flight per file
    #[arg(long, default_value_t = relay_agent::DEFAULT_PARALLELISM)]
    pub parallelism: usize,
    /// Repetitions per profile (odd)
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, value_name = "SIZE", default_value_t = DEFAULT_BENCH_CHUNK, value_parser = parse_size)]
    pub chunk_size: u64,
    /// Files uploaded concurrently within a run
    #[arg(long, default_value_t = relay_agent::DEFAULT_MAX_ACTIVE_FILES)]
    pub max_active_files: usize,
    /// Exit 3 unless the expected throughput ranking holds
    #[arg(long)]
    pub assert_ordering: bool,
    /// Print the profile catalog and exit
    #[arg(long)]
    pub dump_profiles: bool,
    /// Also write per-run samples as CSV
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Seed for the generated file contents
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
}

#[derive(Serialize)]
struct Output<'a> {
    scale: f64,
    files: usize,
    file_size_bytes: u64,
    parallelism: usize,
    repetitions: usize,
    reports: &'a [relay_harness::BenchReport],
    ratios: Option<relay_harness::RatioTable>,
    ordering_violations: Vec<relay_harness::OrderingViolation>,
}

pub async fn run(args: BenchArgs, shutdown: Shutdown) -> CmdResult {
    let catalog = load_profile_catalog(args.catalog.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
    if args.dump_profiles {
        print_json(&catalog);
        return Ok(());
    }
    if !(args.scale.is_finite() && args.scale > 0.0) {
        return Err(Failure::Usage("--scale must be positive".into()));
    }
    let chosen: Vec<NetworkProfile> = if args.all_profiles {
        catalog.clone()
    } else if args.profiles.is_empty() {
        return Err(Failure::Usage("pass --profile NAME or --all-profiles".into()));
    } else {
        args.profiles
            .iter()
            .map(|n| find_profile(&catalog, n).cloned())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Usage(e.to_string()))?
    };
    let profiles: Vec<NetworkProfile> = chosen.iter().map(|p| p.scaled(args.scale)).collect();

    let mut template = BenchSpec::new(profiles[0].clone(), args.size);
    template.file_count = args.files;
    template.parallelism = args.parallelism;
    template.repetitions = args.reps;
    template.chunk_size = args.chunk_size;
    template.max_active_files = args.max_active_files;
    template.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    // dropping the suite on interrupt removes its temp dirs
    let reports = tokio::select! {
        r = run_suite(&profiles, &template, args.seed) => r.map_err(|e| Failure::Runtime(e.to_string()))?,
        _ = shutdown.wait() => return Err(Failure::Runtime("interrupted".into())),
    };

    if let Some(path) = &args.csv {
        std::fs::write(path, reports_csv(&reports)).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    let violations = check_ordering(&reports);
    let out = Output {
        scale: args.scale,
        files: args.files,
        file_size_bytes: args.size,
        parallelism: args.parallelism,
        repetitions: args.reps,
        reports: &reports,
        ratios: compare_routes(&reports).ok(),
        ordering_violations: violations.clone(),
    };
    print_json(&out);
    if args.assert_ordering && !violations.is_empty() {
        let list: Vec<String> = violations
            .iter()
            .map(|v| format!("{} ({:.1} MB/s) <= {} ({:.1} MB/s)", v.faster, v.faster_mbps, v.slower, v.slower_mbps))
            .collect();
        return Err(Failure::Assertion(format!("throughput ordering violated: {}", list.join("; "))));
    }
    Ok(())
}
