//! `archopt` command line: space inspection, cost estimates, Frechet
//! distances, Pareto extraction, search runs and reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 oracle error.

mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};

use archopt::bo::{self, BoError, RunConfig};
use archopt::cost::{rank_consistency, CostTable, ReferenceTable};
use archopt::frechet::{tafid, StatsFile};
use archopt::moo::{self, ObjectivePoint};
use archopt::oracle::Objective;
use archopt::space::SearchSpace;

#[derive(Parser)]
#[command(name = "archopt", version, about = "Multi-objective architecture search engine")]
struct Cli {
    /// Suppress informational output.
    #[arg(long, global = true, action = ArgAction::SetTrue)]
    quiet: bool,
    /// Override the run seed (search run only).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, command-specific.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect and validate space config files.
    Space {
        #[command(subcommand)]
        action: SpaceAction,
    },
    /// Compose per-block profiles into whole-architecture estimates.
    Cost {
        #[command(subcommand)]
        action: CostAction,
    },
    /// Frechet distance between two Gaussian stats files.
    Fid {
        stats_a: PathBuf,
        stats_b: PathBuf,
    },
    /// Extract or merge non-dominated fronts from objective CSVs.
    Pareto {
        #[command(subcommand)]
        action: ParetoAction,
    },
    /// Run, resume or replay an optimization.
    Search {
        #[command(subcommand)]
        action: SearchAction,
    },
    /// Render plots and a text summary from a run directory.
    Report {
        run_dir: PathBuf,
        /// Omit the generation timestamp from the SVG files.
        #[arg(long, action = ArgAction::SetTrue)]
        no_timestamp: bool,
    },
}

#[derive(Subcommand)]
enum SpaceAction {
    /// Check a space file and report problems.
    Validate { config: String },
    /// Print the stages and their variants.
    Show { config: String },
    /// Print the exact number of architectures.
    EnumerateCount { config: String },
}

#[derive(Subcommand)]
enum CostAction {
    /// Estimate latency (and parameters when profiled) per architecture.
    Estimate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "nanosd_default")]
        space: String,
        /// Architecture strings, e.g. R|RA|RA|RARA|RR|RR.
        archs: Vec<String>,
        /// File with one architecture string per line.
        #[arg(long)]
        arch_file: Option<PathBuf>,
    },
    /// Spearman rank agreement of composed estimates against measurements.
    Rank {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "nanosd_default")]
        space: String,
        /// Reference table with measured whole-model values.
        #[arg(long)]
        measured: PathBuf,
        /// Compare this second measured table instead of composed estimates.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Column to rank on.
        #[arg(long, default_value = "latency_ms")]
        objective: String,
        /// Restrict to these model names (repeatable).
        #[arg(long = "model")]
        models: Vec<String>,
    },
}

#[derive(Subcommand)]
enum ParetoAction {
    /// Non-dominated subset of one objective CSV.
    Extract {
        csv: PathBuf,
        #[arg(long, default_value = "f1")]
        f1: String,
        #[arg(long, default_value = "f2")]
        f2: String,
    },
    /// Union several objective CSVs, then extract the joint front.
    Merge {
        csvs: Vec<PathBuf>,
        #[arg(long, default_value = "f1")]
        f1: String,
        #[arg(long, default_value = "f2")]
        f2: String,
    },
}

#[derive(Subcommand)]
enum SearchAction {
    /// Execute a run config, writing the event log and result CSVs.
    Run { config: PathBuf },
    /// Continue an interrupted run directory to completion.
    Resume { run_dir: PathBuf },
    /// Rebuild results from the event log alone; never touches the oracle.
    Replay { run_dir: PathBuf },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn data(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<BoError> for Failure {
    fn from(e: BoError) -> Failure {
        let code = match &e {
            BoError::Oracle { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

macro_rules! impl_data_failure {
    ($($ty:ty),*) => {$(
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Failure {
                Failure::data(e.to_string())
            }
        }
    )*};
}

impl_data_failure!(
    archopt::space::SpaceError,
    archopt::cost::CostError,
    archopt::frechet::FrechetError,
    archopt::moo::MooError,
    archopt::log::LogError
);

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let quiet = cli.quiet;
    match dispatch(cli) {
        Ok(()) => {}
        Err(f) => {
            eprintln!("error: {}", f.message);
            if !quiet && f.code == 2 {
                eprintln!("(data error; see docs/formats.md for file formats)");
            }
            std::process::exit(f.code);
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Space { action } => cmd_space(action, cli.quiet),
        Command::Cost { action } => cmd_cost(action),
        Command::Fid { stats_a, stats_b } => cmd_fid(&stats_a, &stats_b),
        Command::Pareto { action } => cmd_pareto(action, cli.out.as_deref()),
        Command::Search { action } => cmd_search(action, cli.out.as_deref(), cli.seed, cli.quiet),
        Command::Report {
            run_dir,
            no_timestamp,
        } => cmd_report(&run_dir, cli.out.as_deref(), no_timestamp, cli.quiet),
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

fn load_space_arg(spec: &str) -> Result<SearchSpace, Failure> {
    if spec == "nanosd_default" {
        return Ok(SearchSpace::nanosd_default());
    }
    Ok(SearchSpace::parse(&read_file(Path::new(spec))?)?)
}

fn cmd_space(action: SpaceAction, quiet: bool) -> Result<(), Failure> {
    match action {
        SpaceAction::Validate { config } => {
            let space = load_space_arg(&config)?;
            if !quiet {
                println!(
                    "ok: space `{}` with {} architectures",
                    space.name(),
                    space.cardinality()
                );
            }
            Ok(())
        }
        SpaceAction::Show { config } => {
            let space = load_space_arg(&config)?;
            println!("space: {}", space.name());
            for stage in archopt::space::StageId::ALL {
                let labels: Vec<String> = space
                    .variants(stage)
                    .iter()
                    .map(|v| {
                        if v.is_teacher() {
                            format!("{}*", v.label())
                        } else {
                            v.label().to_owned()
                        }
                    })
                    .collect();
                println!(
                    "  {} ({} variants): {}",
                    stage,
                    space.count(stage),
                    labels.join(", ")
                );
            }
            println!("cardinality: {}", space.cardinality());
            println!("(* marks teacher blocks)");
            Ok(())
        }
        SpaceAction::EnumerateCount { config } => {
            let space = load_space_arg(&config)?;
            println!("{}", space.cardinality());
            Ok(())
        }
    }
}

fn cmd_cost(action: CostAction) -> Result<(), Failure> {
    match action {
        CostAction::Estimate {
            profile,
            space,
            mut archs,
            arch_file,
        } => {
            let space = load_space_arg(&space)?;
            let table = CostTable::parse(&read_file(&profile)?)?;
            if let Some(path) = arch_file {
                for line in read_file(&path)?.lines() {
                    let line = line.trim();
                    if !line.is_empty() && !line.starts_with('#') {
                        archs.push(line.to_owned());
                    }
                }
            }
            if archs.is_empty() {
                return Err(Failure {
                    code: 1,
                    message: "no architectures given (positional or --arch-file)".into(),
                });
            }
            let has_params = archs.iter().all(|a| {
                space
                    .decode_arch(a)
                    .ok()
                    .map(|z| table.estimate_params(&z, &space).is_ok())
                    .unwrap_or(false)
            });
            if has_params {
                println!("arch,latency_ms,params_m");
            } else {
                println!("arch,latency_ms");
            }
            for arch in &archs {
                let z = space.decode_arch(arch)?;
                let latency = table.estimate_latency(&z, &space)?;
                if has_params {
                    let params = table.estimate_params(&z, &space)?;
                    println!("{arch},{latency},{params}");
                } else {
                    println!("{arch},{latency}");
                }
            }
            Ok(())
        }
        CostAction::Rank {
            profile,
            space,
            measured,
            baseline,
            objective,
            models,
        } => {
            let space = load_space_arg(&space)?;
            let measured_table = ReferenceTable::parse(&read_file(&measured)?)?;
            let keep = |id: &str| models.is_empty() || models.iter().any(|m| m == id);
            let mut measured_col: BTreeMap<String, f64> = BTreeMap::new();
            let mut estimate_col: BTreeMap<String, f64> = BTreeMap::new();
            match &baseline {
                Some(path) => {
                    let baseline_table = ReferenceTable::parse(&read_file(path)?)?;
                    for r in &measured_table.records {
                        if keep(r.id()) {
                            measured_col.insert(r.id().to_owned(), value_of(r, &objective)?);
                        }
                    }
                    for r in &baseline_table.records {
                        if keep(r.id()) {
                            estimate_col.insert(r.id().to_owned(), value_of(r, &objective)?);
                        }
                    }
                }
                None => {
                    let cost_table = CostTable::parse(&read_file(&profile)?)?;
                    for r in &measured_table.records {
                        if !keep(r.id()) {
                            continue;
                        }
                        measured_col.insert(r.id().to_owned(), value_of(r, &objective)?);
                        let z = space.decode_arch(&r.arch)?;
                        let est = match objective.as_str() {
                            "params_m" => cost_table.estimate_params(&z, &space)?,
                            _ => cost_table.estimate_latency(&z, &space)?,
                        };
                        estimate_col.insert(r.id().to_owned(), est);
                    }
                }
            }
            println!("model,estimate,measured");
            for (id, est) in &estimate_col {
                if let Some(m) = measured_col.get(id) {
                    println!("{id},{est},{m}");
                }
            }
            let rho = rank_consistency(&estimate_col, &measured_col)?;
            println!("spearman_rho: {rho}");
            Ok(())
        }
    }
}

fn value_of(record: &archopt::cost::ModelRecord, column: &str) -> Result<f64, Failure> {
    record
        .values
        .get(column)
        .copied()
        .ok_or_else(|| Failure::data(format!("record `{}` has no column `{column}`", record.id())))
}

fn cmd_fid(a: &Path, b: &Path) -> Result<(), Failure> {
    let file_a = StatsFile::parse(&read_file(a)?)?;
    let file_b = StatsFile::parse(&read_file(b)?)?;
    let stats_a = file_a.to_stats()?;
    let stats_b = file_b.to_stats()?;
    let d = tafid(&stats_a, &stats_b)?;
    println!("tafid: {d}");
    for (tag, path, f) in [("a", a, &file_a), ("b", b, &file_b)] {
        println!(
            "{tag}: {} (dim={}, n={}, extractor={}, prompts={}, seeds={})",
            path.display(),
            f.dim,
            f.n_samples,
            f.feature_extractor,
            f.prompt_set,
            f.seed_set
        );
    }
    Ok(())
}

/// Reads an objective CSV: mandatory `arch` column, optional `model` column
/// used as the id when present, and the two named objective columns. Other
/// columns are ignored.
fn parse_objective_csv(
    document: &str,
    f1_col: &str,
    f2_col: &str,
) -> Result<Vec<ObjectivePoint<f64>>, Failure> {
    let mut header: Option<Vec<String>> = None;
    let mut points = Vec::new();
    for (idx, raw) in document.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => {
                let cols: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
                for needed in ["arch", f1_col, f2_col] {
                    if !cols.iter().any(|c| c == needed) {
                        return Err(Failure::data(format!(
                            "line {line_no}: header lacks required column `{needed}`"
                        )));
                    }
                }
                header = Some(cols);
            }
            Some(cols) => {
                if fields.len() != cols.len() {
                    return Err(Failure::data(format!(
                        "line {line_no}: expected {} fields, got {}",
                        cols.len(),
                        fields.len()
                    )));
                }
                let get = |name: &str| -> Option<&str> {
                    cols.iter().position(|c| c == name).map(|i| fields[i])
                };
                let id = get("model")
                    .filter(|m| !m.is_empty())
                    .unwrap_or_else(|| get("arch").expect("checked"));
                let parse_num = |name: &str| -> Result<f64, Failure> {
                    let raw = get(name).expect("checked");
                    let v: f64 = raw.parse().map_err(|_| {
                        Failure::data(format!(
                            "line {line_no}: `{raw}` in column `{name}` is not a number"
                        ))
                    })?;
                    if !v.is_finite() {
                        return Err(Failure::data(format!(
                            "line {line_no}: non-finite value in column `{name}`"
                        )));
                    }
                    Ok(v)
                };
                points.push(ObjectivePoint::new(
                    parse_num(f1_col)?,
                    parse_num(f2_col)?,
                    id,
                ));
            }
        }
    }
    Ok(points)
}

fn front_to_csv(front: &[ObjectivePoint<f64>]) -> String {
    let mut out = String::from("arch,f1,f2\n");
    for p in front {
        out.push_str(&format!("{},{},{}\n", p.id, p.f1, p.f2));
    }
    out
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_pareto(action: ParetoAction, out: Option<&Path>) -> Result<(), Failure> {
    let (paths, f1, f2) = match action {
        ParetoAction::Extract { csv, f1, f2 } => (vec![csv], f1, f2),
        ParetoAction::Merge { csvs, f1, f2 } => {
            if csvs.is_empty() {
                return Err(Failure {
                    code: 1,
                    message: "merge needs at least one CSV".into(),
                });
            }
            (csvs, f1, f2)
        }
    };
    let mut points = Vec::new();
    for path in &paths {
        points.extend(parse_objective_csv(&read_file(path)?, &f1, &f2)?);
    }
    let front = moo::pareto_front(&points)?;
    emit(out, &front_to_csv(&front))
}

fn cmd_search(
    action: SearchAction,
    out: Option<&Path>,
    seed: Option<u64>,
    quiet: bool,
) -> Result<(), Failure> {
    match action {
        SearchAction::Run { config } => {
            let out_dir = out.ok_or(Failure {
                code: 1,
                message: "search run needs --out <dir>".into(),
            })?;
            let text = read_file(&config)?;
            let mut run_config = RunConfig::parse(&text)?;
            let base = config
                .canonicalize()
                .map_err(|e| Failure::data(format!("cannot resolve {}: {e}", config.display())))?
                .parent()
                .map(Path::to_owned)
                .unwrap_or_else(|| PathBuf::from("."));
            run_config = run_config.resolve_paths(&base);
            if let Some(seed) = seed {
                run_config.seed = seed;
            }
            let report = bo::run(run_config, out_dir)?;
            if !quiet {
                print_report_summary(&report);
            }
            Ok(())
        }
        SearchAction::Resume { run_dir } => {
            let report = bo::resume(&run_dir)?;
            if !quiet {
                print_report_summary(&report);
            }
            Ok(())
        }
        SearchAction::Replay { run_dir } => {
            let report = bo::replay(&run_dir)?;
            emit(out, &report.front_csv())?;
            if !quiet {
                eprintln!(
                    "replayed {} evaluations, {} front members, status {}",
                    report.history.len(),
                    report.archive.len(),
                    report.status
                );
            }
            Ok(())
        }
    }
}

fn eval_timing(report: &bo::RunReport) -> (f64, f64) {
    let total: f64 = report.history.iter().map(|h| h.record.wall_time_s).sum();
    let mean = total / report.history.len().max(1) as f64;
    (total, mean)
}

fn print_report_summary(report: &bo::RunReport) {
    let archive = &report.archive;
    println!(
        "status: {} ({} evaluations, {} front members)",
        report.status,
        report.history.len(),
        archive.len()
    );
    println!(
        "reference point: ({}, {})",
        report.ref_point.0, report.ref_point.1
    );
    if let Some((_, hv)) = report.hv_trace.last() {
        println!("final hypervolume: {hv}");
    }
    let (total, mean) = eval_timing(report);
    println!("oracle time: {total:.3} s total, {mean:.4} s per evaluation");
    for p in archive.points() {
        println!("  {}  f1={} f2={}", p.id, p.f1, p.f2);
    }
}

fn cmd_report(
    run_dir: &Path,
    out: Option<&Path>,
    no_timestamp: bool,
    quiet: bool,
) -> Result<(), Failure> {
    let report = bo::replay(run_dir)?;
    let out_dir = out
        .map(Path::to_owned)
        .unwrap_or_else(|| run_dir.join("report"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", out_dir.display())))?;
    let timestamp = if no_timestamp {
        None
    } else {
        Some(format!(
            "{}",
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        ))
    };

    let pair: Vec<Objective> = report.config.objectives.into();
    let (f1_name, f2_name) = (pair[0].wire_name(), pair[1].wire_name());
    let front_ids: std::collections::HashSet<&str> =
        report.archive.ids().into_iter().collect();
    let mut evaluated = Vec::new();
    let mut front_pts = Vec::new();
    for h in &report.history {
        let p = (
            h.record.values[&pair[0]],
            h.record.values[&pair[1]],
        );
        if front_ids.contains(h.record.request.arch.as_str()) {
            front_pts.push(p);
        } else {
            evaluated.push(p);
        }
    }
    let mut staircase: Vec<(f64, f64)> = report
        .archive
        .points()
        .iter()
        .map(|p| (p.f1, p.f2))
        .collect();
    staircase.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let scatter = svg::Plot {
        title: format!("front: {f1_name} vs {f2_name}"),
        x_label: f1_name.to_owned(),
        y_label: f2_name.to_owned(),
        series: vec![
            svg::Series {
                points: evaluated,
                color: "#9aa0a6",
                radius: 3.0,
            },
            svg::Series {
                points: front_pts,
                color: "#188038",
                radius: 4.5,
            },
        ],
        line: Some((staircase, "#188038")),
        timestamp: timestamp.clone(),
    };
    let front_svg = out_dir.join("front.svg");
    std::fs::write(&front_svg, scatter.render())
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", front_svg.display())))?;

    let curve = svg::Plot {
        title: "hypervolume vs evaluations".into(),
        x_label: "evaluations".into(),
        y_label: "dominated hypervolume".into(),
        series: vec![],
        line: Some((
            report
                .hv_trace
                .iter()
                .map(|(k, hv)| (*k as f64, *hv))
                .collect(),
            "#1a73e8",
        )),
        timestamp,
    };
    let hv_svg = out_dir.join("hypervolume.svg");
    std::fs::write(&hv_svg, curve.render())
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", hv_svg.display())))?;

    let mut summary = String::new();
    summary.push_str(&format!("status: {}\n", report.status));
    summary.push_str(&format!("space: {}\n", report.space_name));
    summary.push_str(&format!("evaluations: {}\n", report.history.len()));
    summary.push_str(&format!(
        "reference point: ({}, {})\n",
        report.ref_point.0, report.ref_point.1
    ));
    if let Some((_, hv)) = report.hv_trace.last() {
        summary.push_str(&format!("final hypervolume: {hv}\n"));
    }
    let (total, mean) = eval_timing(&report);
    summary.push_str(&format!(
        "oracle time: {total:.3} s total, {mean:.4} s per evaluation\n"
    ));
    summary.push_str(&format!(
        "environment: {} {} (archopt {})\n",
        std::env::consts::OS,
        std::env::consts::ARCH,
        env!("CARGO_PKG_VERSION")
    ));
    summary.push_str("config:\n");
    summary.push_str(&serde_json::to_string_pretty(&report.config).expect("config serializes"));
    summary.push_str("\nfront (arch, f1, f2, source):\n");
    for line in report.front_csv().lines().skip(1) {
        summary.push_str(&format!("  {line}\n"));
    }
    let summary_path = out_dir.join("summary.txt");
    std::fs::write(&summary_path, summary)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", summary_path.display())))?;

    if !quiet {
        println!(
            "report written to {} (front.svg, hypervolume.svg, summary.txt)",
            out_dir.display()
        );
    }
    Ok(())
}
