use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use gridsync::modal::{default_scenarios, eigen_analysis, loci_csv, sensitivity_sweep, ScalingScenario, Verdict};
use gridsync::model::matpower::parse_matpower;
use gridsync::model::{case_to_json, load_case_with_warnings, validate_case, CaseFormat, Severity, TechPreset};
use gridsync::oracles::verify_study;
use gridsync::powerflow::{build_admittance, solve_power_flow, PowerFlowOptions};
use gridsync::reduce::reduce_network;
use gridsync::report::fmt12;
use gridsync::simulate::{
    compute_metrics, default_perturbation, simulate_with_options, Perturbation, PerturbationKind, SimulationOptions,
};
use gridsync::study::{run_study, StudyOptions};
use gridsync::sweep::{emit_heatmap, records_csv, run_sweep, summarize, LoadScaling, SweepConfig, TechMix, RECORDS_SCHEMA_VERSION};
use gridsync::{Error, NetworkCase};

#[derive(Parser)]
#[command(name = "gridsync", version, about = "Small-signal synchronization analysis of power networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Network case: MATPOWER `.m` (needs --dyn) or JSON.
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    /// Dynamic-data sidecar (JSON).
    #[arg(long = "dyn", global = true)]
    dyn_path: Option<PathBuf>,
    /// Directory for output files and the run manifest.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Check a case and report every issue.
    Validate,
    /// Solve the AC power flow.
    Powerflow,
    /// Kron-reduce the network onto the dynamic generator buses.
    Reduce,
    /// Eigenvalues, mode classification and stability verdict.
    Analyze(AnalyzeArgs),
    /// Time-domain response to a small disturbance.
    Simulate(SimulateArgs),
    /// Seeded Monte Carlo screening.
    Sweep(SweepArgs),
    /// Run the independent cross-checks on a case.
    Verify,
    /// Generate a deterministic dynamic-data sidecar for a MATPOWER case.
    SynthDyn {
        #[arg(long, default_value_t = 60.0)]
        base_freq: f64,
    },
    /// Write the case in canonical JSON form.
    Convert,
}

#[derive(Args)]
struct StudyArgs {
    /// Technology preset applied to every generator: sg, gfm-vsm, gfm-droop, all-gfl, gfl-share:<x>.
    #[arg(long)]
    preset: Option<String>,
    /// Generator whose machine is the angle reference.
    #[arg(long)]
    reference_gen: Option<u32>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Add the built-in inertia/damping scaling scenarios to the loci table.
    #[arg(long)]
    sensitivity: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    PowerStep,
    SpeedImpulse,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, value_enum, default_value_t = Kind::PowerStep)]
    kind: Kind,
    /// Target generator id; defaults to the largest non-reference machine.
    #[arg(long)]
    target_gen: Option<u32>,
    /// pu for a power step, rad/s for a speed impulse.
    #[arg(long, default_value_t = -0.05, allow_hyphen_values = true)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    #[arg(long, default_value_t = 30.0)]
    horizon: f64,
    /// Step size in seconds; chosen from the spectrum when omitted.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    small_signal_bound: f64,
    /// Simulate even when the model is unstable.
    #[arg(long)]
    allow_unstable: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Records CSV path; defaults to <out-dir>/records.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// all-sg, all-gfm-vsm, all-gfm-droop or gfl:<fraction>.
    #[arg(long, default_value = "all-sg")]
    tech_mix: String,
    /// Inertia constant range in seconds, lo:hi.
    #[arg(long)]
    h_range: Option<String>,
    /// Machine-base damping range, lo:hi.
    #[arg(long)]
    d_range: Option<String>,
    /// Load multiplier range, lo:hi.
    #[arg(long)]
    load_range: Option<String>,
    /// Rating as a multiple of dispatch, lo:hi.
    #[arg(long)]
    rating_range: Option<String>,
    /// Draw one factor per load instead of one for the whole system.
    #[arg(long)]
    per_load: bool,
    #[arg(long, default_value_t = 30.0)]
    horizon: f64,
    #[arg(long, default_value_t = -0.05, allow_hyphen_values = true)]
    magnitude: f64,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<Error>() {
            Some(Error::NoEvent) => 3,
            _ => 1,
        };
        Failure { code, error }
    }
}

struct Run {
    global: Global,
    argv: Vec<String>,
    started: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn parse_range(flag: &str, text: &str) -> anyhow::Result<(f64, f64)> {
    let (lo, hi) = text.split_once(':').ok_or_else(|| anyhow!("{flag} expects lo:hi, got '{text}'"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("{flag}: bad lower bound '{lo}'"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("{flag}: bad upper bound '{hi}'"))?;
    if !(lo >= 0.0 && lo <= hi) {
        bail!("{flag}: range {lo}:{hi} must satisfy 0 <= lo <= hi");
    }
    Ok((lo, hi))
}

impl Run {
    fn case_path(&self) -> anyhow::Result<&Path> {
        self.global.case.as_deref().ok_or_else(|| anyhow!("--case is required"))
    }

    fn load(&mut self) -> anyhow::Result<(NetworkCase, Vec<String>)> {
        let path = self.case_path()?.to_path_buf();
        let format = CaseFormat::from_path(&path)
            .ok_or_else(|| anyhow!("{}: unknown case format (use .m or .json)", path.display()))?;
        if format == CaseFormat::MatpowerM && self.global.dyn_path.is_none() {
            bail!("MATPOWER cases need a dynamic-data sidecar (--dyn)");
        }
        self.inputs.push(path.clone());
        if let Some(d) = &self.global.dyn_path {
            self.inputs.push(d.clone());
        }
        Ok(load_case_with_warnings(&path, format, self.global.dyn_path.as_deref())?)
    }

    fn load_with(&mut self, args: &StudyArgs) -> anyhow::Result<NetworkCase> {
        let (case, warnings) = self.load()?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        Ok(match &args.preset {
            Some(p) => case.with_preset(p.parse::<TechPreset>()?),
            None => case,
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        if let Some(dir) = &self.global.out_dir {
            let path = dir.join(name);
            self.write_path(&path, contents)?;
        }
        Ok(())
    }

    fn write_path(&mut self, path: &Path, contents: &str) -> anyhow::Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn manifest(&mut self, dir: Option<PathBuf>) -> anyhow::Result<()> {
        let Some(dir) = dir.or_else(|| self.global.out_dir.clone()) else { return Ok(()) };
        let digest = |paths: &[PathBuf]| -> anyhow::Result<Vec<Value>> {
            paths.iter().map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? }))).collect()
        };
        let manifest = json!({
            "tool": "gridsync",
            "tool_version": env!("CARGO_PKG_VERSION"),
            "command_line": self.argv,
            "inputs": digest(&self.inputs)?,
            "outputs": digest(&self.outputs)?,
            "seed": self.global.seed,
            "records_schema_version": RECORDS_SCHEMA_VERSION,
            "started_unix": self.started,
            "finished_unix": unix_now(),
        });
        let path = dir.join("manifest.json");
        fs::create_dir_all(&dir)?;
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn emit(payload: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(payload.as_bytes())?;
    if !payload.ends_with('\n') {
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}

fn reduced_csv(red: &gridsync::reduce::ReducedNetwork) -> String {
    let mut out = String::from("row_bus,col_bus,g,b\n");
    for (i, &r) in red.boundary_buses.iter().enumerate() {
        for (j, &c) in red.boundary_buses.iter().enumerate() {
            let y = red.y_red[(i, j)];
            out.push_str(&format!("{r},{c},{},{}\n", fmt12(y.re), fmt12(y.im)));
        }
    }
    out
}

fn cmd_validate(run: &mut Run) -> Result<u8, Failure> {
    let path = run.case_path()?.to_path_buf();
    let outcome = run.load();
    let (report, warnings, ok) = match outcome {
        Ok((case, warnings)) => (validate_case(&case), warnings, true),
        Err(e) => match e.downcast::<Error>() {
            Ok(Error::Validation(report)) => (report, Vec::new(), false),
            Ok(other) => return Err(other.into()),
            Err(other) => return Err(other.into()),
        },
    };
    let issues: Vec<Value> = report
        .issues
        .iter()
        .map(|i| {
            json!({
                "severity": match i.severity { Severity::Error => "error", Severity::Precondition => "precondition" },
                "location": i.location,
                "message": i.message,
            })
        })
        .collect();
    let payload = pretty(&json!({
        "case": path.display().to_string(),
        "valid": ok,
        "issues": issues,
        "warnings": warnings,
    }));
    run.write("validation.json", &payload)?;
    emit(&payload)?;
    run.manifest(None)?;
    Ok(if ok { 0 } else { 1 })
}

fn cmd_powerflow(run: &mut Run) -> Result<u8, Failure> {
    let (case, _) = run.load()?;
    let y = build_admittance(&case)?;
    let sol = solve_power_flow(&case, &y, PowerFlowOptions::default())?;
    if !sol.converged {
        return Err(Error::NotConverged { iterations: sol.iterations, max_mismatch: sol.max_mismatch }.into());
    }
    let (name, payload) = match run.global.format {
        Format::Json => ("powerflow.json", pretty(&sol.to_json())),
        Format::Csv => ("powerflow.csv", sol.to_csv()),
    };
    run.write(name, &payload)?;
    emit(&payload)?;
    run.manifest(None)?;
    Ok(0)
}

fn cmd_reduce(run: &mut Run) -> Result<u8, Failure> {
    let (case, _) = run.load()?;
    let y = build_admittance(&case)?;
    let sol = solve_power_flow(&case, &y, PowerFlowOptions::default())?;
    if !sol.converged {
        return Err(Error::NotConverged { iterations: sol.iterations, max_mismatch: sol.max_mismatch }.into());
    }
    let red = reduce_network(&case, &y, &sol)?;
    let (name, payload) = match run.global.format {
        Format::Json => ("reduced.json", pretty(&red.to_json())),
        Format::Csv => ("reduced.csv", reduced_csv(&red)),
    };
    run.write(name, &payload)?;
    emit(&payload)?;
    run.manifest(None)?;
    Ok(0)
}

fn study_options(args: &StudyArgs) -> StudyOptions {
    StudyOptions { reference_generator: args.reference_gen, ..StudyOptions::default() }
}

fn cmd_analyze(run: &mut Run, args: &AnalyzeArgs) -> Result<u8, Failure> {
    let case = run.load_with(&args.study)?;
    let study = run_study(&case, study_options(&args.study))?;
    let modal = eigen_analysis(&study.model)?;
    let scenarios: Vec<ScalingScenario> =
        if args.sensitivity { default_scenarios() } else { vec![ScalingScenario::uniform("base", 1.0, 1.0)] };
    let loci = sensitivity_sweep(&study.model, &scenarios)?;
    let mut report = modal.to_json(&study.model);
    report["n_machines"] = study.model.n().into();
    report["powerflow_iterations"] = study.solution.iterations.into();
    let report = pretty(&report);
    let loci = loci_csv(&loci);
    run.write("analysis.json", &report)?;
    run.write("loci.csv", &loci)?;
    run.write("state_matrix.csv", &study.model.to_csv())?;
    emit(match run.global.format {
        Format::Json => &report,
        Format::Csv => &loci,
    })?;
    run.manifest(None)?;
    Ok(if modal.verdict == Verdict::Unstable { 2 } else { 0 })
}

fn cmd_simulate(run: &mut Run, args: &SimulateArgs) -> Result<u8, Failure> {
    let case = run.load_with(&args.study)?;
    let study = run_study(&case, study_options(&args.study))?;
    let modal = eigen_analysis(&study.model)?;
    if modal.verdict == Verdict::Unstable {
        if !args.allow_unstable {
            eprintln!("error: model is unstable (max Re λ = {}); pass --allow-unstable to simulate anyway", modal.max_real);
            return Ok(2);
        }
        eprintln!("warning: simulating an unstable model");
    }
    let target = match args.target_gen {
        Some(id) => id,
        None => default_perturbation(&case, &study.model)?.target_gen,
    };
    let pert = Perturbation {
        kind: match args.kind {
            Kind::PowerStep => PerturbationKind::PowerStep,
            Kind::SpeedImpulse => PerturbationKind::SpeedImpulse,
        },
        target_gen: target,
        magnitude: args.magnitude,
        start_time: args.start,
    };
    let opts = SimulationOptions { horizon: args.horizon, dt: args.dt, small_signal_bound: args.small_signal_bound };
    let trace = simulate_with_options(&study.model, &[pert], &opts)?;
    let csv = trace.to_csv();
    run.write("trace.csv", &csv)?;
    let metrics = compute_metrics(&trace, case.base_freq);
    let metrics = match metrics {
        Ok(m) => m,
        Err(e) => {
            run.manifest(None)?;
            return Err(e.into());
        }
    };
    let mut payload = metrics.to_json();
    payload["perturbation"] = serde_json::to_value(pert).map_err(anyhow::Error::from)?;
    payload["samples"] = trace.len().into();
    payload["dt"] = gridsync::report::sig12(trace.times.get(1).copied().unwrap_or(0.0)).into();
    let payload = pretty(&payload);
    run.write("metrics.json", &payload)?;
    emit(match run.global.format {
        Format::Json => &payload,
        Format::Csv => &csv,
    })?;
    run.manifest(None)?;
    Ok(0)
}

fn cmd_sweep(run: &mut Run, args: &SweepArgs) -> Result<u8, Failure> {
    let mut cfg = SweepConfig {
        n_scenarios: args.n,
        seed: run.global.seed,
        tech_mix: args.tech_mix.parse::<TechMix>()?,
        load_scaling: if args.per_load { LoadScaling::PerLoad } else { LoadScaling::Global },
        horizon: args.horizon,
        perturbation_magnitude: args.magnitude,
        ..SweepConfig::default()
    };
    if let Some(r) = &args.h_range {
        cfg.inertia_range = parse_range("--h-range", r)?;
    }
    if let Some(r) = &args.d_range {
        cfg.damping_range = parse_range("--d-range", r)?;
    }
    if let Some(r) = &args.load_range {
        cfg.load_scale_range = parse_range("--load-range", r)?;
    }
    if let Some(r) = &args.rating_range {
        cfg.rating_range = parse_range("--rating-range", r)?;
    }
    cfg.validate()?;
    let (case, _) = run.load()?;
    let records = run_sweep(&case, &cfg)?;
    let dir = run.global.out_dir.clone().unwrap_or_else(|| {
        args.out.as_deref().and_then(Path::parent).filter(|p| !p.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    });
    let records_path = args.out.clone().unwrap_or_else(|| dir.join("records.csv"));
    run.write_path(&records_path, &records_csv(&records))?;
    run.write_path(&dir.join("heatmap.csv"), &emit_heatmap(&records))?;
    let summary = pretty(&json!({ "config": cfg, "summary": summarize(&records) }));
    run.write_path(&dir.join("summary.json"), &summary)?;
    emit(&summary)?;
    run.manifest(Some(dir))?;
    Ok(0)
}

fn cmd_verify(run: &mut Run) -> Result<u8, Failure> {
    let (case, _) = run.load()?;
    let study = run_study(&case, StudyOptions::default())?;
    let modal = eigen_analysis(&study.model)?;
    let reports = verify_study(&study, &modal)?;
    let all_pass = reports.iter().all(|r| r.pass);
    let payload = pretty(&json!({
        "all_pass": all_pass,
        "reports": reports.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
    }));
    run.write("oracles.json", &payload)?;
    emit(&payload)?;
    run.manifest(None)?;
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_synth_dyn(run: &mut Run, base_freq: f64) -> Result<u8, Failure> {
    let path = run.case_path()?.to_path_buf();
    if CaseFormat::from_path(&path) != Some(CaseFormat::MatpowerM) {
        return Err(anyhow!("synth-dyn expects a MATPOWER .m case").into());
    }
    let data = parse_matpower(&fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?, &path)?;
    let payload = pretty(&data.synthetic_dynamics(run.global.seed, base_freq));
    run.inputs.push(path);
    run.write("dyn.json", &payload)?;
    emit(&payload)?;
    run.manifest(None)?;
    Ok(0)
}

fn cmd_convert(run: &mut Run) -> Result<u8, Failure> {
    let (case, _) = run.load()?;
    let payload = case_to_json(&case) + "\n";
    run.write("case.json", &payload)?;
    emit(&payload)?;
    run.manifest(None)?;
    Ok(0)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let mut run = Run { global: cli.global, argv, started: unix_now(), inputs: Vec::new(), outputs: Vec::new() };
    let result = match &cli.command {
        Command::Validate => cmd_validate(&mut run),
        Command::Powerflow => cmd_powerflow(&mut run),
        Command::Reduce => cmd_reduce(&mut run),
        Command::Analyze(a) => cmd_analyze(&mut run, a),
        Command::Simulate(a) => cmd_simulate(&mut run, a),
        Command::Sweep(a) => cmd_sweep(&mut run, a),
        Command::Verify => cmd_verify(&mut run),
        Command::SynthDyn { base_freq } => cmd_synth_dyn(&mut run, *base_freq),
        Command::Convert => cmd_convert(&mut run),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
