//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code.
//!
//! Exit codes: 0 success, 1 usage, 2 infeasible or invalid input,
//! 3 search budget exhausted without a schedule, 4 file or format error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    critical_gap, rc_worst_case_delay, resolve_virtual_links, validate, AnalysisError, RcDelayReport,
    ValidationReport,
};
use crate::generator::{generate_instance, industrial_like, GeneratorConfig, GeneratorError, TopologyKind};
use crate::icap::{IcapBudget, IcapMode};
use crate::io::{
    gantt_csv, parse_bench_manifest, parse_instance, read_file, read_schedule, serialize_bench_manifest,
    serialize_instance_stamped, write_file, write_report, write_schedule, BenchManifest, BenchSet, FirstCycle,
    IoError, ScheduleMetrics,
};
use crate::model::{ConfigOverrides, Instance, Nanos};
use crate::pipeline::{
    prepare, route, schedule, schedule_porosity_relaxed, ObjectiveChoice, PipelineError, PipelineOptions, Prepared,
};
use crate::scheduler::{GapPolicy, SchedulerError, SolverBudget, TtSchedule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Variable read for the default `--workers` value.
pub const WORKERS_ENV: &str = "TTSCHED_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: IoError },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(IoError::Semantic(_)) | CliError::Input { source: IoError::Semantic(_), .. } => {
                EXIT_INFEASIBLE
            }
            CliError::Input { .. } => EXIT_IO,
            CliError::Io(_) => EXIT_IO,
            CliError::Pipeline(PipelineError::Scheduling(SchedulerError::NoFeasibleSchedule { .. })) => EXIT_BUDGET,
            CliError::Pipeline(_) | CliError::Analysis(_) | CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Generator(GeneratorError::Config(_)) | CliError::Usage(_) => EXIT_USAGE,
            CliError::Generator(GeneratorError::Model(_)) => EXIT_INFEASIBLE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ttsched", version, about = "Offline Time-Triggered schedule synthesis for TTEthernet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate random benchmark instances and a bench manifest.
    Generate(GenerateArgs),
    /// Print the shortest-path route of every message as link ids.
    Route(RouteArgs),
    /// Assign every message to its first integration cycle.
    Assign(AssignArgs),
    /// Route, assign and schedule an instance.
    Schedule(ScheduleArgs),
    /// Check a schedule against every constraint class.
    Validate(CheckArgs),
    /// Report critical gap and Rate-Constrained delay bounds of a schedule.
    Analyze(CheckArgs),
    /// Schedule every instance of a bench manifest and tabulate the results.
    Bench(BenchArgs),
    /// Write a schedule as comma-separated timeline rows.
    ExportGantt(GanttArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum IcapModeArg {
    /// Exact up to --exact-threshold messages, heuristic above.
    Auto,
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ObjectiveArg {
    /// Minimize the makespan inside the integration cycle.
    Makespan,
    /// Keep reserved gaps free, then minimize the makespan.
    Porosity,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SolverArgs {
    /// Seed of the randomized search.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Schedule decodings per run; this cap decides the result.
    #[arg(long, default_value_t = 2_000)]
    iterations: u64,
    /// Wall-clock guard per run in seconds, 0 for none.
    #[arg(long, default_value_t = 300.0)]
    time_limit_s: f64,
    /// Unschedule-and-retry steps per decoding.
    #[arg(long, default_value_t = 64)]
    backtrack_limit: usize,
    /// Worker threads, 0 for one per core. Does not change results.
    #[arg(long, env = WORKERS_ENV, default_value_t = 0)]
    #[serde(skip)]
    workers: usize,
    /// Cycle assignment solver.
    #[arg(long, value_enum, default_value_t = IcapModeArg::Auto)]
    icap_mode: IcapModeArg,
    /// Message count up to which auto mode solves the assignment exactly.
    #[arg(long, default_value_t = crate::icap::DEFAULT_EXACT_THRESHOLD)]
    exact_threshold: usize,
    /// Branch-and-bound node cap of the exact assignment.
    #[arg(long, default_value_t = 2_000_000)]
    icap_nodes: u64,
}

impl SolverArgs {
    fn options(&self, objective: ObjectiveChoice) -> PipelineOptions {
        let guard = (self.time_limit_s > 0.0).then(|| Duration::from_secs_f64(self.time_limit_s));
        PipelineOptions {
            icap_mode: match self.icap_mode {
                IcapModeArg::Auto => None,
                IcapModeArg::Exact => Some(IcapMode::Exact),
                IcapModeArg::Heuristic => Some(IcapMode::Heuristic),
            },
            exact_threshold: self.exact_threshold,
            icap_budget: IcapBudget { max_nodes: self.icap_nodes, ..IcapBudget::default() },
            solver: SolverBudget {
                iterations: self.iterations,
                wall_clock: guard,
                backtrack_limit: self.backtrack_limit,
                workers: self.workers,
            },
            seed: self.seed,
            objective,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct PorosityArgs {
    /// Length of each TT-allowed block in ns; defaults to an eighth of the integration cycle.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    block_ns: Option<Nanos>,
    /// Length of each reserved gap in ns; defaults to an eighth of the integration cycle.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_ns: Option<Nanos>,
    /// Halve the reserved gap up to three times when the blocks cannot hold the traffic.
    #[arg(long)]
    relax_gap: bool,
}

impl PorosityArgs {
    fn policy(&self, ic: Nanos) -> GapPolicy {
        let base = GapPolicy::default_for(ic);
        GapPolicy { block_ns: self.block_ns.unwrap_or(base.block_ns), gap_ns: self.gap_ns.unwrap_or(base.gap_ns) }
    }
}

#[derive(Debug, Clone, Default, Args)]
struct OverrideArgs {
    /// Integration cycle in ns; must divide every period.
    #[arg(long)]
    integration_cycle_ns: Option<Nanos>,
    /// Per-hop switch delay in ns.
    #[arg(long)]
    switch_delay_ns: Option<Nanos>,
    /// Synchronization window at the start of each integration cycle in ns.
    #[arg(long)]
    sync_window_ns: Option<Nanos>,
}

impl OverrideArgs {
    /// Applies the flags on top of the instance's own overrides.
    fn apply(&self, instance: Instance) -> Result<Instance, CliError> {
        if self.integration_cycle_ns.is_none() && self.switch_delay_ns.is_none() && self.sync_window_ns.is_none() {
            return Ok(instance);
        }
        let mut o = instance.overrides.clone();
        o.integration_cycle_ns = self.integration_cycle_ns.or(o.integration_cycle_ns);
        o.switch_delay_ns = self.switch_delay_ns.or(o.switch_delay_ns);
        o.sync_window_ns = self.sync_window_ns.or(o.sync_window_ns);
        Instance::new(instance.topology, instance.messages, o, instance.virtual_links)
            .map_err(|e| CliError::Io(IoError::Semantic(e)))
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Directory receiving the instance files and bench.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Messages per instance.
    #[arg(long, default_value_t = 20)]
    messages: usize,
    /// End systems per instance.
    #[arg(long, default_value_t = 20)]
    endpoints: usize,
    /// star, snowflake, barabasi-albert-tree or random-with-redundant-links; random per instance if omitted.
    #[arg(long)]
    topology: Option<String>,
    /// Instances to generate; instance k uses seed + k.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rate-Constrained virtual links per instance.
    #[arg(long, default_value_t = 0)]
    virtual_links: usize,
    /// Link bandwidth in bit/s.
    #[arg(long, default_value_t = 1_000_000_000)]
    bandwidth_bps: u64,
    /// Largest power-of-two exponent of a period, in integration cycles.
    #[arg(long, default_value_t = 0)]
    max_period_exponent: u32,
    /// Integration cycle in ns; defaults to 1000 ns per message.
    #[arg(long)]
    integration_cycle_ns: Option<Nanos>,
    /// Generate the fixed industrial-like network instead (ignores the size flags).
    #[arg(long)]
    industrial: bool,
    /// Set name; defaults to Set_<messages>TT.
    #[arg(long)]
    set_name: Option<String>,
}

#[derive(Debug, Args)]
struct RouteArgs {
    instance: PathBuf,
    /// Also write the routes as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AssignArgs {
    instance: PathBuf,
    /// Also write the assignment as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    instance: PathBuf,
    /// Schedule file to write.
    #[arg(long)]
    out: PathBuf,
    /// Report file to write.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Makespan)]
    objective: ObjectiveArg,
    #[command(flatten)]
    porosity: PorosityArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Debug, Args)]
struct CheckArgs {
    instance: PathBuf,
    schedule: PathBuf,
    /// Report file to write.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    manifest: PathBuf,
    /// Comma-separated objectives to run on every instance.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "makespan")]
    objectives: Vec<ObjectiveArg>,
    /// Machine-readable result file.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Aligned-text result file; the table is printed either way.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    porosity: PorosityArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct GanttArgs {
    instance: PathBuf,
    schedule: PathBuf,
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Everything that determines the outputs of a run. Worker counts are left
/// out because they do not change results.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub subcommand: &'static str,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budgets: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_overrides: Option<ConfigOverrides>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

impl RunManifest {
    fn new(subcommand: &'static str, inputs: &[&Path], outputs: &[Option<&Path>]) -> Self {
        let show = |p: &Path| p.display().to_string();
        Self {
            tool: format!("ttsched {}", env!("CARGO_PKG_VERSION")),
            subcommand,
            inputs: inputs.iter().map(|p| show(p)).collect(),
            outputs: outputs.iter().flatten().map(|p| show(p)).collect(),
            seed: None,
            budgets: None,
            objective: None,
            config_overrides: None,
            generator: None,
        }
    }

    fn with_solver(mut self, solver: &SolverArgs) -> Self {
        self.seed = Some(solver.seed);
        self.budgets = Some(serde_json::to_value(solver).expect("plain data"));
        self
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("plain data");
        format!("{:x}", Sha256::digest(bytes))
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Route(a) => cmd_route(a),
        Command::Assign(a) => cmd_assign(a),
        Command::Schedule(a) => cmd_schedule(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ExportGantt(a) => cmd_export_gantt(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ttsched: error: {e}");
            e.exit_code()
        }
    }
}

fn load_instance(path: &Path) -> Result<Instance, CliError> {
    let bytes = read_file(path)?;
    parse_instance(&bytes).map_err(|source| CliError::Input { path: path.to_path_buf(), source })
}

fn cmd_generate(a: GenerateArgs) -> Result<i32, CliError> {
    let topology = a.topology.as_deref().map(TopologyKind::parse).transpose()?;
    let config = GeneratorConfig {
        topology,
        endpoints: a.endpoints,
        messages: a.messages,
        bandwidth_bps: a.bandwidth_bps,
        max_period_exponent: a.max_period_exponent,
        integration_cycle_ns: a.integration_cycle_ns,
        virtual_links: a.virtual_links,
        seed: a.seed,
        ..GeneratorConfig::default()
    };
    let set = a.set_name.clone().unwrap_or_else(|| {
        if a.industrial {
            "Set_industrial".to_string()
        } else {
            format!("Set_{}TT", a.messages)
        }
    });
    let bench_path = a.out_dir.join("bench.json");
    let names: Vec<PathBuf> =
        (0..a.count).map(|k| PathBuf::from(&set).join(format!("{set}_{k:03}.json"))).collect();
    let mut manifest = RunManifest::new("generate", &[], &[Some(&bench_path)]);
    manifest.outputs.extend(names.iter().map(|n| a.out_dir.join(n).display().to_string()));
    manifest.seed = Some(a.seed);
    manifest.generator = Some(config.clone());
    if a.industrial {
        manifest.objective = Some(serde_json::json!({ "preset": "industrial" }));
    }
    let hash = manifest.hash();
    for (k, name) in names.iter().enumerate() {
        let seed = a.seed.wrapping_add(k as u64);
        let instance = if a.industrial {
            industrial_like(seed)?
        } else {
            generate_instance(&GeneratorConfig { seed, ..config.clone() })?
        };
        write_file(&a.out_dir.join(name), &serialize_instance_stamped(&instance, &hash))?;
    }
    let mut bench = match std::fs::read(&bench_path) {
        Ok(bytes) => parse_bench_manifest(&bytes)?,
        Err(_) => BenchManifest::new(vec![]),
    };
    let entry = BenchSet { name: set.clone(), instances: names };
    match bench.sets.iter_mut().find(|s| s.name == set) {
        Some(s) => *s = entry,
        None => bench.sets.push(entry),
    }
    bench.manifest_hash = Some(hash);
    write_file(&bench_path, &serialize_bench_manifest(&bench))?;
    println!("wrote {} instances of {set} to {}", a.count, a.out_dir.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct RouteRow {
    message: u32,
    sender: u32,
    receiver: u32,
    links: Vec<usize>,
}

fn cmd_route(a: RouteArgs) -> Result<i32, CliError> {
    let instance = load_instance(&a.instance)?;
    let manifest = RunManifest::new("route", &[&a.instance], &[a.out.as_deref()]);
    let (table, _) = route(&instance)?;
    let mut rows = Vec::new();
    for m in &instance.messages {
        for &r in &m.receivers {
            let links = table.path(&instance.topology, m.sender, r).expect("routing succeeded");
            let ids: Vec<String> = links.iter().map(|l| l.to_string()).collect();
            println!("message {} {} -> {}: {}", m.id, m.sender, r, ids.join(" "));
            rows.push(RouteRow { message: m.id, sender: m.sender, receiver: r, links });
        }
    }
    if let Some(out) = &a.out {
        let hash = manifest.hash();
        write_file(out, &write_report(&manifest, &hash, &serde_json::json!({ "routes": rows })))?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct AssignmentSummary {
    optimal: bool,
    assignment_objective_ns: Nanos,
    lower_bound_ns: Nanos,
    first_cycles: Vec<FirstCycle>,
}

fn assignment_summary(instance: &Instance, prepared: &Prepared) -> AssignmentSummary {
    let mut first_cycles: Vec<FirstCycle> = prepared
        .problem
        .items
        .iter()
        .zip(&prepared.assignment.cycles)
        .map(|(item, &cycle)| FirstCycle { message: item.message, cycle })
        .collect();
    first_cycles.sort_by_key(|f| f.message);
    AssignmentSummary {
        optimal: prepared.assignment.optimal,
        assignment_objective_ns: prepared.assignment.objective_ns,
        lower_bound_ns: prepared.lower_bound(instance),
        first_cycles,
    }
}

fn cmd_assign(a: AssignArgs) -> Result<i32, CliError> {
    let instance = a.overrides.apply(load_instance(&a.instance)?)?;
    let mut manifest = RunManifest::new("assign", &[&a.instance], &[a.out.as_deref()]).with_solver(&a.solver);
    manifest.config_overrides = Some(instance.overrides.clone());
    let prepared = prepare(&instance, &a.solver.options(ObjectiveChoice::Makespan))?;
    let summary = assignment_summary(&instance, &prepared);
    for f in &summary.first_cycles {
        println!("message {} cycle {}", f.message, f.cycle);
    }
    println!(
        "max load {} ns, lower bound {} ns, {}",
        summary.assignment_objective_ns,
        summary.lower_bound_ns,
        if summary.optimal { "optimal" } else { "not proven optimal" }
    );
    if let Some(out) = &a.out {
        let hash = manifest.hash();
        write_file(out, &write_report(&manifest, &hash, &serde_json::json!({ "assignment": summary })))?;
    }
    Ok(EXIT_OK)
}

fn objective_choice(objective: ObjectiveArg, porosity: &PorosityArgs, ic: Nanos) -> ObjectiveChoice {
    match objective {
        ObjectiveArg::Makespan => ObjectiveChoice::Makespan,
        ObjectiveArg::Porosity => ObjectiveChoice::Porosity { policy: Some(porosity.policy(ic)) },
    }
}

fn solve(
    instance: &Instance,
    prepared: &Prepared,
    opts: &PipelineOptions,
    relax: bool,
) -> Result<TtSchedule, PipelineError> {
    match opts.objective {
        ObjectiveChoice::Porosity { policy } if relax => {
            let base = policy.unwrap_or_else(|| GapPolicy::default_for(instance.config.integration_cycle_ns));
            schedule_porosity_relaxed(prepared, base, opts).map(|(s, _)| s)
        }
        _ => schedule(instance, prepared, opts),
    }
}

fn metrics(schedule: &TtSchedule, instance: &Instance, prepared: Option<&Prepared>) -> ScheduleMetrics {
    ScheduleMetrics {
        makespan_ns: schedule.makespan_ns,
        critical_gap_ns: critical_gap(schedule, instance),
        lower_bound_ns: prepared.map(|p| p.lower_bound(instance)),
        assignment_objective_ns: prepared.map(|p| p.assignment.objective_ns),
        min_preserved_gap_ns: schedule.min_preserved_gap_ns,
    }
}

/// RC bounds when the instance has virtual links.
fn rc_report(
    schedule: &TtSchedule,
    instance: &Instance,
    prepared_table: &crate::routing::RoutingTable,
) -> Option<Result<RcDelayReport, AnalysisError>> {
    if instance.virtual_links.is_empty() {
        return None;
    }
    Some(
        resolve_virtual_links(instance, prepared_table, &instance.virtual_links)
            .and_then(|vls| rc_worst_case_delay(schedule, instance, &vls)),
    )
}

#[derive(Serialize)]
struct InstanceSummary {
    messages: usize,
    message_instances: usize,
    links: usize,
    integration_cycle_ns: Nanos,
    cluster_cycle_ns: Nanos,
    switch_delay_ns: Nanos,
    sync_window_ns: Nanos,
}

fn instance_summary(instance: &Instance, instances: usize) -> InstanceSummary {
    InstanceSummary {
        messages: instance.messages.len(),
        message_instances: instances,
        links: instance.topology.links().len(),
        integration_cycle_ns: instance.config.integration_cycle_ns,
        cluster_cycle_ns: instance.config.cluster_cycle_ns,
        switch_delay_ns: instance.config.switch_delay_ns,
        sync_window_ns: instance.config.sync_window_ns,
    }
}

#[derive(Serialize)]
struct AnalysisBody<'a> {
    instance: InstanceSummary,
    metrics: ScheduleMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_to_lower_bound_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    assignment: Option<AssignmentSummary>,
    validation: &'a ValidationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    rc_delay: Option<RcDelayReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rc_delay_error: Option<String>,
}

fn print_summary(m: &ScheduleMetrics) {
    print!("makespan {} ns, critical gap {} ns", m.makespan_ns, m.critical_gap_ns);
    if let Some(lb) = m.lower_bound_ns {
        print!(", lower bound {lb} ns");
    }
    if let Some(g) = m.gap_to_lower_bound_percent() {
        print!(", gap to lower bound {g:.2}%");
    }
    println!();
}

fn print_validation(report: &ValidationReport) {
    for c in &report.classes {
        println!("{:<20} {} ({} violations)", c.class.name(), if c.passed { "pass" } else { "FAIL" }, c.violations);
    }
}

fn print_rc(report: &RcDelayReport) {
    println!("rate-constrained delay ({}):", report.method);
    for v in &report.virtual_links {
        println!("  vl {:>4}  bound {:>10} ns  over {} hops", v.id, v.bound_ns, v.hops.len());
    }
}

fn cmd_schedule(a: ScheduleArgs) -> Result<i32, CliError> {
    let instance = a.overrides.apply(load_instance(&a.instance)?)?;
    let objective = objective_choice(a.objective, &a.porosity, instance.config.integration_cycle_ns);
    let mut manifest =
        RunManifest::new("schedule", &[&a.instance], &[Some(&a.out), a.report.as_deref()]).with_solver(&a.solver);
    manifest.objective = Some(serde_json::json!({ "objective": a.objective, "porosity": a.porosity }));
    manifest.config_overrides = Some(instance.overrides.clone());
    let hash = manifest.hash();
    let opts = a.solver.options(objective);
    let prepared = prepare(&instance, &opts)?;
    let mut tt = solve(&instance, &prepared, &opts, a.porosity.relax_gap)?;
    let validation = validate(&tt, &instance, &prepared.trees);
    tt.valid = validation.passed();
    let m = metrics(&tt, &instance, Some(&prepared));
    write_file(&a.out, &write_schedule(&tt, &instance, m, &hash)?)?;
    let rc = rc_report(&tt, &instance, &prepared.table);
    if let Some(path) = &a.report {
        let (rc_delay, rc_delay_error) = split_rc(rc.clone());
        let body = AnalysisBody {
            instance: instance_summary(&instance, prepared.instance_count()),
            metrics: m,
            gap_to_lower_bound_percent: m.gap_to_lower_bound_percent(),
            assignment: Some(assignment_summary(&instance, &prepared)),
            validation: &validation,
            rc_delay,
            rc_delay_error,
        };
        write_file(path, &write_report(&manifest, &hash, &body))?;
    }
    print_summary(&m);
    if !validation.passed() {
        print_validation(&validation);
        return Err(CliError::Infeasible("emitted schedule fails validation".into()));
    }
    Ok(EXIT_OK)
}

fn split_rc(rc: Option<Result<RcDelayReport, AnalysisError>>) -> (Option<RcDelayReport>, Option<String>) {
    match rc {
        None => (None, None),
        Some(Ok(r)) => (Some(r), None),
        Some(Err(e)) => (None, Some(e.to_string())),
    }
}

fn load_pair(a: &CheckArgs) -> Result<(Instance, TtSchedule, ScheduleMetrics), CliError> {
    let instance = load_instance(&a.instance)?;
    let bytes = read_file(&a.schedule)?;
    let (tt, file) = read_schedule(&bytes, &instance)?;
    Ok((instance, tt, file.metrics))
}

fn cmd_validate(a: CheckArgs) -> Result<i32, CliError> {
    let (instance, tt, stored) = load_pair(&a)?;
    let manifest = RunManifest::new("validate", &[&a.instance, &a.schedule], &[a.report.as_deref()]);
    let (_, trees) = route(&instance)?;
    let validation = validate(&tt, &instance, &trees);
    let instances = trees.iter().map(|t| t.len()).sum();
    if let Some(path) = &a.report {
        let hash = manifest.hash();
        let body = AnalysisBody {
            instance: instance_summary(&instance, instances),
            metrics: ScheduleMetrics { critical_gap_ns: critical_gap(&tt, &instance), ..stored },
            gap_to_lower_bound_percent: stored.gap_to_lower_bound_percent(),
            assignment: None,
            validation: &validation,
            rc_delay: None,
            rc_delay_error: None,
        };
        write_file(path, &write_report(&manifest, &hash, &body))?;
    }
    print_validation(&validation);
    for v in validation.violations.iter().take(20) {
        println!("  {v}");
    }
    Ok(if validation.passed() { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn cmd_analyze(a: CheckArgs) -> Result<i32, CliError> {
    let (instance, tt, stored) = load_pair(&a)?;
    let manifest = RunManifest::new("analyze", &[&a.instance, &a.schedule], &[a.report.as_deref()]);
    let (table, trees) = route(&instance)?;
    let validation = validate(&tt, &instance, &trees);
    let m = ScheduleMetrics { critical_gap_ns: critical_gap(&tt, &instance), ..stored };
    let rc = rc_report(&tt, &instance, &table);
    if let Some(path) = &a.report {
        let hash = manifest.hash();
        let (rc_delay, rc_delay_error) = split_rc(rc.clone());
        let body = AnalysisBody {
            instance: instance_summary(&instance, trees.iter().map(|t| t.len()).sum()),
            metrics: m,
            gap_to_lower_bound_percent: m.gap_to_lower_bound_percent(),
            assignment: None,
            validation: &validation,
            rc_delay,
            rc_delay_error,
        };
        write_file(path, &write_report(&manifest, &hash, &body))?;
    }
    print_summary(&m);
    if !validation.passed() {
        print_validation(&validation);
    }
    match rc {
        Some(Ok(r)) => print_rc(&r),
        Some(Err(e)) => return Err(e.into()),
        None => {}
    }
    Ok(if validation.passed() { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn cmd_export_gantt(a: GanttArgs) -> Result<i32, CliError> {
    let check = CheckArgs { instance: a.instance.clone(), schedule: a.schedule.clone(), report: None };
    let (instance, tt, _) = load_pair(&check)?;
    let manifest = RunManifest::new("export-gantt", &[&a.instance, &a.schedule], &[a.out.as_deref()]);
    let text = format!("# ttsched-gantt/1 manifest {}\n{}", manifest.hash(), gantt_csv(&tt, &instance));
    match &a.out {
        Some(path) => write_file(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

/// Result of one objective on one bench instance.
#[derive(Debug, Clone, Serialize)]
pub struct BenchCell {
    pub objective: &'static str,
    /// Missing when this objective found no schedule.
    pub makespan_ns: Option<Nanos>,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rc_mean_bound_ns: Option<f64>,
    /// Why the RC bound is missing although the instance has virtual links.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rc_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub set: String,
    pub instance: String,
    pub message_instances: usize,
    pub lower_bound_ns: Nanos,
    pub cells: Vec<BenchCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchFailure {
    pub set: String,
    pub instance: String,
    pub error: String,
}

/// Per-set means over the successful rows.
#[derive(Debug, Clone, Serialize)]
pub struct BenchAverage {
    pub set: String,
    pub rows: usize,
    pub message_instances: f64,
    pub lower_bound_ns: f64,
    /// Objective, solved instances, mean makespan over them.
    pub makespan_ns: Vec<(String, usize, f64)>,
    /// Mean and standard deviation of the per-instance mean RC bound.
    pub rc_mean_bound_ns: Vec<(String, f64, f64)>,
}

fn objective_name(o: ObjectiveArg) -> &'static str {
    match o {
        ObjectiveArg::Makespan => "makespan",
        ObjectiveArg::Porosity => "porosity",
    }
}

fn bench_instance(
    path: &Path,
    objectives: &[ObjectiveArg],
    a: &BenchArgs,
) -> Result<(usize, Nanos, Vec<BenchCell>), CliError> {
    let instance = load_instance(path)?;
    let mut solver = a.solver.clone();
    solver.workers = 1;
    let prepared = prepare(&instance, &solver.options(ObjectiveChoice::Makespan))?;
    let mut cells = Vec::new();
    for &o in objectives {
        let opts = solver.options(objective_choice(o, &a.porosity, instance.config.integration_cycle_ns));
        let tt = match solve(&instance, &prepared, &opts, a.porosity.relax_gap) {
            Ok(tt) => tt,
            Err(e) => {
                cells.push(BenchCell {
                    objective: objective_name(o),
                    makespan_ns: None,
                    valid: false,
                    error: Some(e.to_string()),
                    rc_mean_bound_ns: None,
                    rc_error: None,
                });
                continue;
            }
        };
        let valid = validate(&tt, &instance, &prepared.trees).passed();
        let (rc, rc_error) = match rc_report(&tt, &instance, &prepared.table) {
            None => (None, None),
            Some(Ok(r)) => (Some(r.mean_bound_ns()), None),
            Some(Err(e)) => (None, Some(e.to_string())),
        };
        cells.push(BenchCell {
            objective: objective_name(o),
            makespan_ns: Some(tt.makespan_ns),
            valid,
            error: None,
            rc_mean_bound_ns: rc,
            rc_error,
        });
    }
    Ok((prepared.instance_count(), prepared.lower_bound(&instance), cells))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn averages(set: &str, rows: &[&BenchRow], objectives: &[ObjectiveArg]) -> BenchAverage {
    let n = rows.len().max(1) as f64;
    // fold from +0.0 so an empty set averages to 0 rather than -0
    let mean = |xs: &mut dyn Iterator<Item = f64>| xs.fold(0.0, |a, b| a + b) / n;
    let mut makespan = Vec::new();
    let mut rc = Vec::new();
    for (k, &o) in objectives.iter().enumerate() {
        let name = objective_name(o).to_string();
        let solved: Vec<f64> = rows.iter().filter_map(|r| r.cells[k].makespan_ns).map(|c| c as f64).collect();
        makespan.push((name.clone(), solved.len(), mean_std(&solved).0));
        let bounds: Vec<f64> = rows.iter().filter_map(|r| r.cells[k].rc_mean_bound_ns).collect();
        if !bounds.is_empty() {
            let (m, s) = mean_std(&bounds);
            rc.push((name, m, s));
        }
    }
    BenchAverage {
        set: set.to_string(),
        rows: rows.len(),
        message_instances: mean(&mut rows.iter().map(|r| r.message_instances as f64)),
        lower_bound_ns: mean(&mut rows.iter().map(|r| r.lower_bound_ns as f64)),
        makespan_ns: makespan,
        rc_mean_bound_ns: rc,
    }
}

fn bench_table(rows: &[BenchRow], avgs: &[BenchAverage], objectives: &[ObjectiveArg], with_rc: bool) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = write!(out, "{:<16} {:<28} {:>8} {:>12}", "set", "instance", "N", "LB_ns");
    for &o in objectives {
        let _ = write!(out, " {:>16}", format!("Cmax_{}_ns", objective_name(o)));
    }
    if with_rc {
        for &o in objectives {
            let _ = write!(out, " {:>22}", format!("RC_{}_ns", objective_name(o)));
        }
    }
    out.push('\n');
    for avg in avgs {
        for r in rows.iter().filter(|r| r.set == avg.set) {
            let _ = write!(out, "{:<16} {:<28} {:>8} {:>12}", r.set, r.instance, r.message_instances, r.lower_bound_ns);
            for c in &r.cells {
                let cell = c.makespan_ns.map(|m| m.to_string()).unwrap_or_else(|| "failed".to_string());
                let _ = write!(out, " {cell:>16}");
            }
            if with_rc {
                for c in &r.cells {
                    let _ = write!(out, " {:>22}", match (c.rc_mean_bound_ns, &c.rc_error) {
                        (Some(v), _) => format!("{v:.0}"),
                        (None, Some(_)) => "unbounded".to_string(),
                        (None, None) => String::new(),
                    });
                }
            }
            out.push('\n');
        }
        let _ = write!(
            out,
            "{:<16} {:<28} {:>8.1} {:>12.1}",
            avg.set,
            format!("average of {}", avg.rows),
            avg.message_instances,
            avg.lower_bound_ns
        );
        for (_, _, m) in &avg.makespan_ns {
            let _ = write!(out, " {m:>16.1}");
        }
        if with_rc {
            for name in objectives.iter().map(|&o| objective_name(o)) {
                let cell = avg
                    .rc_mean_bound_ns
                    .iter()
                    .find(|(n, _, _)| n == name)
                    .map(|(_, m, s)| format!("{m:.0} +- {s:.0}"))
                    .unwrap_or_default();
                let _ = write!(out, " {cell:>22}");
            }
        }
        out.push('\n');
    }
    out
}

fn cmd_bench(a: BenchArgs) -> Result<i32, CliError> {
    let manifest_bytes = read_file(&a.manifest)?;
    let bench = parse_bench_manifest(&manifest_bytes)?;
    let base = a.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut objectives = a.objectives.clone();
    objectives.dedup();
    let mut run_manifest =
        RunManifest::new("bench", &[&a.manifest], &[a.json.as_deref(), a.out.as_deref()]).with_solver(&a.solver);
    run_manifest.objective = Some(serde_json::json!({ "objectives": objectives, "porosity": a.porosity }));
    let hash = run_manifest.hash();

    let jobs: Vec<(String, PathBuf)> = bench
        .sets
        .iter()
        .flat_map(|s| s.instances.iter().map(move |p| (s.name.clone(), p.clone())))
        .collect();
    let work = || {
        jobs.par_iter()
            .map(|(_, p)| bench_instance(&base.join(p), &objectives, &a).map_err(|e| e.to_string()))
            .collect::<Vec<_>>()
    };
    let results = if a.solver.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(a.solver.workers)
            .build()
            .map(|pool| pool.install(work))
            .unwrap_or_else(|_| work())
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((set, p), r) in jobs.iter().zip(results) {
        let instance = p.display().to_string();
        match r {
            Ok((n, lb, cells)) => {
                for c in &cells {
                    if let Some(e) = &c.error {
                        failures.push(BenchFailure {
                            set: set.clone(),
                            instance: instance.clone(),
                            error: format!("{}: {e}", c.objective),
                        });
                    }
                }
                rows.push(BenchRow { set: set.clone(), instance, message_instances: n, lower_bound_ns: lb, cells })
            }
            Err(error) => failures.push(BenchFailure { set: set.clone(), instance, error }),
        }
    }
    let avgs: Vec<BenchAverage> = bench
        .sets
        .iter()
        .map(|s| {
            let members: Vec<&BenchRow> = rows.iter().filter(|r| r.set == s.name).collect();
            averages(&s.name, &members, &objectives)
        })
        .collect();
    let with_rc = rows.iter().any(|r| r.cells.iter().any(|c| c.rc_mean_bound_ns.is_some() || c.rc_error.is_some()));
    let table = bench_table(&rows, &avgs, &objectives, with_rc);
    print!("{table}");
    for f in &failures {
        eprintln!("ttsched: {} {}: {}", f.set, f.instance, f.error);
    }
    if let Some(path) = &a.out {
        write_file(path, format!("# manifest {hash}\n{table}").as_bytes())?;
    }
    if let Some(path) = &a.json {
        let body = serde_json::json!({ "rows": rows, "averages": avgs, "failures": failures });
        write_file(path, &write_report(&run_manifest, &hash, &body))?;
    }
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_INFEASIBLE })
}
