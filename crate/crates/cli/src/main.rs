//! `blockfuse` command-line driver.

mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use blockfuse::bench::{
    case_trace, run_reorder_experiment, run_sweep, values_match, BenchCase, CaseKind, ReorderSetup, SweepOptions,
};
use blockfuse::cachesim::{simulate, CacheConfig, CacheReport};
use blockfuse::exec::{parse_trace_binary, parse_trace_text, write_trace_binary, write_trace_text, DeviceArena};
use blockfuse::host::{insert_barriers, Backend, KernelSet, RunOptions, ScriptOutcome, ScriptRunner};
use blockfuse::mpmd::{compile_program, render_listing, reorder_grid_stride};
use blockfuse::runtime::{FetchPolicy, LaunchReport, Runtime, RuntimeConfig};
use clap::{Parser, Subcommand};
use serde_json::json;
use table::Table;

#[derive(Parser)]
#[command(name = "blockfuse", version, about = "Block-fusion compiler and CPU runtime for SPMD kernels")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the block-fused form of every kernel in a source file.
    Compile {
        file: PathBuf,
        #[arg(long)]
        warp: bool,
        #[arg(long, default_value_t = 32)]
        warp_size: u32,
        /// Apply grid-stride access reordering where the pattern matches.
        #[arg(long)]
        reorder: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a host script on the worker pool and on the reference interpreter,
    /// and compare every download.
    Run {
        script: PathBuf,
        /// Kernel source; defaults to the script path with a `.kn` extension.
        #[arg(long)]
        kernels: Option<PathBuf>,
        #[arg(long)]
        pool: Option<usize>,
        /// `average`, `fixed:<g>` or `auto`.
        #[arg(long, default_value = "average")]
        policy: FetchPolicy,
        #[arg(long)]
        warp: bool,
        #[arg(long, default_value_t = 32)]
        warp_size: u32,
        /// Write downloads to their sink paths under this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Fetch-count and idle-worker sweep over block-per-fetch grains.
    Sweep {
        case: CaseKind,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        grains: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        pool: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Sleep per block, to emulate heavy blocks.
        #[arg(long, default_value_t = 0)]
        block_delay_us: u64,
        #[arg(long)]
        grid: Option<u32>,
        #[arg(long)]
        block: Option<u32>,
        #[arg(long)]
        json: bool,
    },
    /// Cache behavior of a case before and after access reordering.
    ReorderExp {
        case: CaseKind,
        #[command(flatten)]
        cache: CacheArgs,
        #[arg(long)]
        json: bool,
    },
    /// Simulate a memory trace (text or binary) through an LRU cache.
    Cachesim {
        #[command(flatten)]
        cache: CacheArgs,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Dump the single-worker memory trace of a case.
    Trace {
        case: CaseKind,
        #[arg(long)]
        reordered: bool,
        /// Binary form; requires `--out`.
        #[arg(long, requires = "out")]
        binary: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct CacheArgs {
    /// Capacity in bytes.
    #[arg(long)]
    capacity: Option<usize>,
    /// Line size in bytes.
    #[arg(long)]
    line: Option<usize>,
    #[arg(long)]
    ways: Option<usize>,
}

impl CacheArgs {
    fn resolve(&self, base: CacheConfig) -> Result<CacheConfig, blockfuse::Error> {
        Ok(CacheConfig::new(
            self.capacity.unwrap_or(base.capacity),
            self.line.unwrap_or(base.line_size),
            self.ways.unwrap_or(base.associativity),
        )?)
    }
}

type CmdResult = Result<bool, blockfuse::Error>;

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Compile { file, warp, warp_size, reorder, json } => compile(&file, warp, warp_size, reorder, json),
        Cmd::Run { script, kernels, pool, policy, warp, warp_size, out_dir, json } => {
            let kernels = kernels.unwrap_or_else(|| script.with_extension("kn"));
            let pool = pool.unwrap_or_else(|| RuntimeConfig::default().pool_size);
            run(&script, &kernels, pool, policy, warp, warp_size, out_dir, json)
        }
        Cmd::Sweep { case, grains, pool, repeats, block_delay_us, grid, block, json } => {
            let std = BenchCase::standard(case);
            let case = BenchCase::new(case, grid.unwrap_or(std.grid), block.unwrap_or(std.block));
            let delay = (block_delay_us > 0).then(|| Duration::from_micros(block_delay_us));
            sweep(&case, SweepOptions { pool, grains, repeats, block_delay: delay }, json)
        }
        Cmd::ReorderExp { case, cache, json } => reorder_exp(case, &cache, json),
        Cmd::Cachesim { cache, trace, json } => cachesim(&cache, &trace, json),
        Cmd::Trace { case, reordered, binary, out } => trace(case, reordered, binary, out.as_deref()),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, blockfuse::Error> {
    std::fs::read_to_string(path)
        .map_err(|e| blockfuse::Error::Other(format!("{}: {e}", path.display())))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("reports serialize"));
}

fn compile(file: &Path, warp: bool, warp_size: u32, reorder: bool, json: bool) -> CmdResult {
    let unit = blockfuse::lang::parse_unit(&read(file)?)?;
    let mut kernels = Vec::new();
    for k in &unit {
        let m = compile_program(k, warp, warp_size)?;
        kernels.push(if reorder { reorder_grid_stride(m.clone()).unwrap_or(m) } else { m });
    }
    if json {
        print_json(&kernels);
    } else {
        let listings: Vec<String> = kernels.iter().map(render_listing).collect();
        print!("{}", listings.join("\n"));
    }
    Ok(true)
}

#[derive(serde::Serialize)]
struct DownloadCheck {
    line: u32,
    buf: String,
    len: usize,
    matches_reference: bool,
}

fn compare(rt: &ScriptOutcome, reference: &ScriptOutcome) -> Vec<DownloadCheck> {
    rt.downloads
        .iter()
        .zip(&reference.downloads)
        .map(|(a, b)| DownloadCheck {
            line: a.line,
            buf: a.buf.clone(),
            len: a.values.len(),
            matches_reference: a.values.len() == b.values.len()
                && b.values.iter().zip(&a.values).all(|(&e, &g)| values_match(e, g)),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run(
    script: &Path,
    kernels: &Path,
    pool: usize,
    policy: FetchPolicy,
    warp: bool,
    warp_size: u32,
    out_dir: Option<PathBuf>,
    json: bool,
) -> CmdResult {
    let set = KernelSet::compile(&read(kernels)?, warp, warp_size)?;
    let parsed = set.parse_host(&read(script)?)?;
    let program = insert_barriers(&parsed, set.summaries());
    let base_dir = script.parent().map(Path::to_path_buf);

    let rt = Runtime::new(RuntimeConfig { policy, ..RuntimeConfig::with_pool(pool) }, Arc::new(DeviceArena::new()));
    let opts = RunOptions { base_dir: base_dir.clone(), out_dir };
    let on_rt = ScriptRunner::new(&set, Backend::Runtime(&rt)).with_options(opts).run(&program)?;
    let reports: Vec<LaunchReport> = on_rt.launches.iter().filter_map(|&id| rt.launch_report(id)).collect();
    let counters = rt.counters();
    rt.shutdown();

    let opts = RunOptions { base_dir, out_dir: None };
    let on_ref = ScriptRunner::new(&set, Backend::Reference(Arc::new(DeviceArena::new()))).with_options(opts).run(&program)?;
    let checks = compare(&on_rt, &on_ref);
    let passed = checks.iter().all(|c| c.matches_reference) && on_rt.downloads.len() == on_ref.downloads.len();

    if json {
        print_json(&json!({
            "script": script.display().to_string(),
            "pool": pool,
            "policy": policy.to_string(),
            "inserted_syncs": program.implicit_syncs(),
            "launches": reports,
            "downloads": checks,
            "conflicts": on_rt.conflicts,
            "counters": counters,
            "passed": passed,
        }));
        return Ok(passed);
    }
    println!("pool {pool}, policy {policy}, {} implicit sync(s) inserted", program.implicit_syncs());
    let mut t = Table::new(&["kernel", "blocks", "grain", "fetches", "executed", "idle"]);
    for r in &reports {
        t.row(vec![
            r.kernel.clone(),
            r.total_blocks.to_string(),
            r.block_per_fetch.to_string(),
            r.fetch_count.to_string(),
            r.blocks_executed.to_string(),
            r.idle_workers.to_string(),
        ]);
    }
    print!("\n{}", t.render());
    let mut t = Table::new(&["download", "line", "len", "reference"]);
    for c in &checks {
        t.row(vec![c.buf.clone(), c.line.to_string(), c.len.to_string(), if c.matches_reference { "match" } else { "MISMATCH" }.into()]);
    }
    print!("\n{}", t.render());
    for c in &on_rt.conflicts {
        println!("conflict: line {} `{}` overlaps unfinished launch at line {}", c.line, c.op, c.launch_line);
    }
    println!("\n{}", if passed { "PASS" } else { "FAIL" });
    Ok(passed)
}

fn sweep(case: &BenchCase, opts: SweepOptions, json: bool) -> CmdResult {
    let r = run_sweep(case, &opts)?;
    let passed = r.rows.iter().all(|row| row.oracle_passed);
    if json {
        print_json(&r);
        return Ok(passed);
    }
    println!("{}: {} blocks of {} threads, pool {}, {} repeat(s)", r.case, r.total_blocks, r.block_size, r.pool, r.repeats);
    let mut t = Table::new(&["grain", "fetches", "expected", "blocks", "idle", "modeled_idle", "median_ms", "oracle"]);
    for row in &r.rows {
        t.row(vec![
            row.grain.to_string(),
            row.fetch_count.to_string(),
            row.expected_fetch_count.to_string(),
            row.blocks_executed.to_string(),
            row.idle_workers.to_string(),
            row.modeled_idle_workers.to_string(),
            format!("{:.3}", row.median_wall_ms),
            if row.oracle_passed { "pass" } else { "FAIL" }.into(),
        ]);
    }
    print!("{}", t.render());
    Ok(passed)
}

fn cache_row(t: &mut Table, name: &str, r: &CacheReport) {
    t.row(vec![
        name.into(),
        r.loads.to_string(),
        r.load_misses.to_string(),
        r.stores.to_string(),
        r.store_misses.to_string(),
        r.writebacks.to_string(),
        format!("{:.4}", r.load_miss_rate()),
    ]);
}

fn cache_table() -> Table {
    Table::new(&["variant", "loads", "load_misses", "stores", "store_misses", "writebacks", "load_miss_rate"])
}

fn reorder_exp(kind: CaseKind, cache: &CacheArgs, json: bool) -> CmdResult {
    let mut setup = ReorderSetup::for_case(kind)
        .ok_or_else(|| blockfuse::Error::Other(format!("case `{}` has no grid-stride loop to reorder", kind.name())))?;
    setup.cache = cache.resolve(setup.cache)?;
    let r = run_reorder_experiment(&setup)?;
    let passed = r.original.oracle_passed && r.reordered.oracle_passed;
    if json {
        print_json(&r);
        return Ok(passed);
    }
    let c = r.cache;
    println!(
        "{}: working set {} bytes, cache {} bytes / {} B lines / {}-way",
        r.case, r.working_set_bytes, c.capacity, c.line_size, c.associativity
    );
    let mut t = cache_table();
    cache_row(&mut t, "original", &r.original.cache);
    cache_row(&mut t, "reordered", &r.reordered.cache);
    print!("{}", t.render());
    println!("load miss delta: {}", r.load_miss_delta);
    println!("oracle: {}", if passed { "pass" } else { "FAIL" });
    Ok(passed)
}

fn cachesim(cache: &CacheArgs, path: &Path, json: bool) -> CmdResult {
    let cfg = cache.resolve(CacheConfig::new(32 * 1024, 64, 8)?)?;
    let bytes = std::fs::read(path).map_err(|e| blockfuse::Error::Other(format!("{}: {e}", path.display())))?;
    let trace = match std::str::from_utf8(&bytes).ok().map(parse_trace_text) {
        Some(Ok(t)) => t,
        _ => parse_trace_binary(&bytes).map_err(|e| blockfuse::Error::Other(format!("{}: {e}", path.display())))?,
    };
    let r = simulate(&trace, cfg)?;
    if json {
        print_json(&json!({ "config": cfg, "events": trace.len(), "report": r }));
        return Ok(true);
    }
    println!("{} events, cache {} bytes / {} B lines / {}-way", trace.len(), cfg.capacity, cfg.line_size, cfg.associativity);
    let mut t = cache_table();
    cache_row(&mut t, "trace", &r);
    print!("{}", t.render());
    Ok(true)
}

fn trace(kind: CaseKind, reordered: bool, binary: bool, out: Option<&Path>) -> CmdResult {
    let setup = ReorderSetup::for_case(kind);
    let case = setup.map(|s| s.case).unwrap_or_else(|| BenchCase::standard(kind));
    let t = case_trace(&case, reordered)?;
    let bytes = if binary { write_trace_binary(&t) } else { write_trace_text(&t).into_bytes() };
    match out {
        Some(p) => std::fs::write(p, bytes)?,
        None => print!("{}", String::from_utf8(bytes).expect("text trace")),
    }
    Ok(true)
}
