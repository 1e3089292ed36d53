//! Command-line front end: run single scenarios, sweep the seed x mode x
//! population grid, validate configs, and trace scheduler selections.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime
//! diagnostic.

use clap::{Args, Parser, Subcommand};
use cv2x_sim::engine::{self, EngineError, RunReport, ScenarioConfig, SweepRun, CSV_HEADER};
use cv2x_sim::Mode;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "cv2x-sim",
    version,
    about = "Subframe-granular C-V2X mode 4 sidelink simulator (standard and enhanced SB-SPS)"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its CSV report
    Run(RunArgs),
    /// Run a seed x mode x population grid; write CSV plus plot data
    Sweep(SweepArgs),
    /// Check a scenario config and exit
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one scenario with per-selection trace lines on stderr
    Trace(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Scenario file (TOML); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Vehicle count
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "duration-s")]
    duration_s: Option<f64>,
    /// Distance bounds in metres, comma separated
    #[arg(long = "d-list", value_delimiter = ',')]
    d_list: Option<Vec<f64>>,
    /// AoI thresholds in milliseconds, comma separated
    #[arg(long = "aoi-th-list", value_delimiter = ',')]
    aoi_th_list: Option<Vec<u64>>,
    /// Write per-selection trace lines to stderr
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path; plot data lands next to it. Stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; the sweep uses seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    /// How many seeds to run
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Modes to sweep, comma separated
    #[arg(long = "mode", visible_alias = "modes", value_delimiter = ',')]
    mode: Vec<Mode>,
    /// Populations to sweep, comma separated
    #[arg(long = "n", visible_alias = "ns", value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long = "duration-s")]
    duration_s: Option<f64>,
    #[arg(long = "d-list", value_delimiter = ',')]
    d_list: Option<Vec<f64>>,
    #[arg(long = "aoi-th-list", value_delimiter = ',')]
    aoi_th_list: Option<Vec<u64>>,
    /// Parallel runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.cmd {
        Cmd::Validate { config } => match load_config(config.as_deref()) {
            Ok(_) => {
                println!("config ok");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Cmd::Run(args) => run_cmd(args, false),
        Cmd::Trace(args) => run_cmd(args, true),
        Cmd::Sweep(args) => sweep_cmd(args),
    }
}

fn exit_code(e: &EngineError) -> i32 {
    match e {
        EngineError::Config(_) | EngineError::ConfigFile(_) => 1,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, EngineError> {
    let cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Flags override config-file values; the merged config is re-validated.
fn apply_overrides(
    cfg: &mut ScenarioConfig,
    seed: Option<u64>,
    mode: Option<Mode>,
    n: Option<usize>,
    duration_s: Option<f64>,
    d_list: &Option<Vec<f64>>,
    aoi_th_list: &Option<Vec<u64>>,
) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(n) = n {
        cfg.n_vehicles = n;
    }
    if let Some(d) = duration_s {
        cfg.duration_s = d;
    }
    if let Some(d) = d_list {
        cfg.d_list = d.clone();
    }
    if let Some(a) = aoi_th_list {
        cfg.aoi_th_list = a.clone();
    }
}

fn write_output(path: Option<&Path>, content: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, content),
        None => std::io::stdout().write_all(content.as_bytes()),
    }
}

fn run_cmd(args: RunArgs, force_trace: bool) -> i32 {
    let mut cfg = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    apply_overrides(
        &mut cfg,
        args.seed,
        args.mode,
        args.n,
        args.duration_s,
        &args.d_list,
        &args.aoi_th_list,
    );
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return 1;
    }
    let report = if force_trace || args.trace {
        let stderr = std::io::stderr();
        let mut sink = stderr.lock();
        engine::run_with_trace(&cfg, &mut sink)
    } else {
        engine::run(&cfg)
    };
    match report {
        Ok(report) => {
            if let Err(e) = write_output(args.out.as_deref(), &report.csv()) {
                eprintln!("error: {e}");
                return 2;
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn sweep_cmd(args: SweepArgs) -> i32 {
    let mut base = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    apply_overrides(&mut base, args.seed, None, None, args.duration_s, &args.d_list, &args.aoi_th_list);
    if let Err(e) = base.validate() {
        eprintln!("error: {e}");
        return 1;
    }
    if args.seeds == 0 {
        eprintln!("error: --seeds must be at least 1");
        return 1;
    }
    let seeds: Vec<u64> = (0..args.seeds).map(|k| base.seed + k).collect();
    let modes = if args.mode.is_empty() {
        vec![Mode::Standard, Mode::Enhanced]
    } else {
        args.mode.clone()
    };
    let n_list = if args.n.is_empty() { vec![25, 50, 75] } else { args.n.clone() };

    let runs = engine::run_sweep(&base, &seeds, &modes, &n_list, args.jobs.max(1));

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut failures = 0;
    for r in &runs {
        match &r.result {
            Ok(report) => csv.push_str(&report.csv_rows()),
            Err(e) => {
                failures += 1;
                eprintln!("error: seed {} mode {} n {}: {e}", r.seed, r.mode, r.n);
            }
        }
    }
    if let Err(e) = write_output(args.out.as_deref(), &csv) {
        eprintln!("error: {e}");
        return 2;
    }
    if let Some(out) = args.out.as_deref() {
        if let Err(e) = write_plot_data(out, &runs) {
            eprintln!("error: {e}");
            return 2;
        }
    }
    if failures > 0 {
        2
    } else {
        0
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "nan".into(),
    }
}

/// Seed-averaged curve data next to the CSV: `<stem>_pdr.dat` holds PDR over
/// distance per (mode, n); `<stem>_aois.dat` holds AoIS over threshold per
/// (mode, n, d). Plain whitespace columns with a `#` header.
fn write_plot_data(out: &Path, runs: &[SweepRun]) -> std::io::Result<()> {
    let ok: Vec<(&SweepRun, &RunReport)> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|rep| (r, rep)))
        .collect();
    if ok.is_empty() {
        return Ok(());
    }
    let stem = out.with_extension("");
    let stem = stem.to_string_lossy();
    let mut cells: BTreeSet<(usize, String)> = BTreeSet::new();
    let mut d_values: BTreeSet<u64> = BTreeSet::new();
    let mut th_values: BTreeSet<u64> = BTreeSet::new();
    for (run, rep) in &ok {
        cells.insert((run.n, run.mode.to_string()));
        for row in &rep.rows {
            d_values.insert(row.d.round() as u64);
            th_values.insert(row.aoi_th);
        }
    }

    let pdr_of = |n: usize, mode: &str, d: u64| -> Option<f64> {
        let mut vals = Vec::new();
        for (run, rep) in &ok {
            if run.n != n || run.mode.to_string() != mode {
                continue;
            }
            for row in &rep.rows {
                if row.d.round() as u64 == d {
                    if let Some(p) = row.pdr_pct {
                        vals.push(p);
                    }
                    break; // PDR does not vary with aoi_th
                }
            }
        }
        mean(&vals)
    };
    let aois_of = |n: usize, mode: &str, d: u64, th: u64| -> Option<f64> {
        let mut vals = Vec::new();
        for (run, rep) in &ok {
            if run.n != n || run.mode.to_string() != mode {
                continue;
            }
            for row in &rep.rows {
                if row.d.round() as u64 == d && row.aoi_th == th {
                    if let Some(a) = row.aois_pct {
                        vals.push(a);
                    }
                }
            }
        }
        mean(&vals)
    };

    let mut pdr = String::from("# d");
    for (n, mode) in &cells {
        let _ = write!(pdr, " pdr_{mode}_n{n}");
    }
    pdr.push('\n');
    for &d in &d_values {
        let _ = write!(pdr, "{d}");
        for (n, mode) in &cells {
            let _ = write!(pdr, " {}", fmt_cell(pdr_of(*n, mode, d)));
        }
        pdr.push('\n');
    }
    std::fs::write(format!("{stem}_pdr.dat"), pdr)?;

    let mut aois = String::from("# aoi_th");
    for (n, mode) in &cells {
        for &d in &d_values {
            let _ = write!(aois, " aois_{mode}_n{n}_d{d}");
        }
    }
    aois.push('\n');
    for &th in &th_values {
        let _ = write!(aois, "{th}");
        for (n, mode) in &cells {
            for &d in &d_values {
                let _ = write!(aois, " {}", fmt_cell(aois_of(*n, mode, d, th)));
            }
        }
        aois.push('\n');
    }
    std::fs::write(format!("{stem}_aois.dat"), aois)?;
    Ok(())
}
