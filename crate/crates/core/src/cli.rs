//! Command-line entry points.
//!
//! Exit codes: 0 on success, 2 for bad input (flags, files, scenarios,
//! hex), 1 when output cannot be written.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::alp::{decode_command, encode_command, AlpAction, AlpCommand};
use crate::backend::write_sink_csv;
use crate::energy::{
    analyze_trace, calibrate_r_elec, cross_check, read_trace_csv, AnalysisOptions, HarvesterParams,
    TegParams, CONVEXITY_CAVEAT,
};
use crate::netsim::{ScenarioConfig, Simulation};

const REFERENCE_PARAMS: &str = include_str!("../data/reference_params.json");

/// Yearly mean soil-air gradient (°C) and harvested power (mW) per transect
/// at the grassland site, used as calibration and cross-check references.
pub const REFERENCE_TRANSECTS: [(&str, f64, f64); 6] = [
    ("A", 1.78, 0.572),
    ("B", 4.31, 0.867),
    ("C", 15.29, 7.05),
    ("D", 14.99, 6.93),
    ("E", 29.0, 24.27),
    ("F", 27.3, 21.3),
];

/// Relative error above which a cross-check row is flagged.
pub const CROSS_CHECK_TOLERANCE: f64 = 0.10;

#[derive(Debug, Parser)]
#[command(
    name = "geowsn",
    version,
    about = "Sensor-network simulation, protocol tools and harvesting feasibility"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-transect TEG power from a temperature trace.
    FeasAnalyze(FeasAnalyzeArgs),
    /// Calibrate the TEG electrical resistance and cross-check other transects.
    FeasCalibrate(FeasCalibrateArgs),
    /// Run a network scenario and write its log, sink and summary.
    SimRun(SimRunArgs),
    /// Encode textual actions to hex.
    ProtoEncode(ProtoEncodeArgs),
    /// Decode a hex command into one line per action.
    ProtoDecode(ProtoDecodeArgs),
}

#[derive(Debug, Args)]
struct FeasAnalyzeArgs {
    /// Trace CSV with header timestamp_unix,transect,t_soil_c,t_air_c.
    #[arg(long)]
    trace: PathBuf,
    /// Harvester parameter JSON; defaults to the reference build.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Report CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Zero the power of samples where the air is warmer than the soil.
    #[arg(long)]
    clamp_positive: bool,
    /// Mean node power draw in mW; adds a feasibility verdict per transect.
    #[arg(long)]
    node_power_mw: Option<f64>,
    /// Converter efficiency applied to harvested power in verdicts.
    #[arg(long, default_value_t = 1.0)]
    efficiency: f64,
}

#[derive(Debug, Args)]
struct FeasCalibrateArgs {
    /// Harvester parameter JSON; defaults to the reference build.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Yearly mean soil-air gradient to calibrate at, °C.
    #[arg(long, default_value_t = 29.0)]
    mean_dt: f64,
    /// Harvested mean power at that gradient, mW.
    #[arg(long, default_value_t = 24.27)]
    mean_power_mw: f64,
    /// Cross-check as LABEL:MEAN_DT:POWER_MW; repeatable. Defaults to the reference transects.
    #[arg(long = "check", value_name = "LABEL:DT:MW")]
    checks: Vec<String>,
}

#[derive(Debug, Args)]
struct SimRunArgs {
    /// Scenario JSON; defaults to the bundled three-site deployment.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario duration, seconds.
    #[arg(long)]
    duration_s: Option<u64>,
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProtoEncodeArgs {
    /// Action such as "WriteFileData file=0x41 offset=3 len=1 payload=AA"; repeatable.
    #[arg(long = "action", visible_alias = "describe", required = true)]
    actions: Vec<String>,
}

#[derive(Debug, Args)]
struct ProtoDecodeArgs {
    /// Command bytes in hex; whitespace is ignored.
    #[arg(long)]
    hex: String,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Output(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Output(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Output(m) => m,
        }
    }
}

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

fn output(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Output(format!("cannot write {}: {e}", path.display()))
}

fn io_out(e: std::io::Error) -> Failure {
    Failure::Output(e.to_string())
}

/// Parses `args` (program name first) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::FeasAnalyze(a) => feas_analyze(a, stdout),
        Command::FeasCalibrate(a) => feas_calibrate(a, stdout),
        Command::SimRun(a) => sim_run(a, stdout),
        Command::ProtoEncode(a) => proto_encode(a, stdout),
        Command::ProtoDecode(a) => proto_decode(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}

fn load_params(path: Option<&Path>) -> Result<HarvesterParams, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| input(format!("cannot read {}: {e}", p.display())))?;
            HarvesterParams::from_json(&text).map_err(|e| input(format!("{}: {e}", p.display())))
        }
        None => {
            Ok(HarvesterParams::from_json(REFERENCE_PARAMS).expect("bundled parameters are valid"))
        }
    }
}

fn create_file(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| output(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| output(path, e))
}

fn feas_analyze(a: FeasAnalyzeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let params = load_params(a.params.as_deref())?;
    let teg = params.teg().map_err(|e| input(e.to_string()))?;
    if !(a.efficiency > 0.0 && a.efficiency <= 1.0) {
        return Err(input(format!(
            "--efficiency must be in (0, 1], got {}",
            a.efficiency
        )));
    }
    let file = File::open(&a.trace)
        .map_err(|e| input(format!("cannot read {}: {e}", a.trace.display())))?;
    let samples = read_trace_csv(std::io::BufReader::new(file))
        .map_err(|e| input(format!("{}: {e}", a.trace.display())))?;
    let options = AnalysisOptions {
        clamp_positive: a.clamp_positive,
        node_power_w: a.node_power_mw.map(|mw| mw * 1e-3),
        efficiency: a.efficiency,
    };
    let report =
        analyze_trace(&samples, &params.stack, &teg, options).map_err(|e| input(e.to_string()))?;
    let mut w = create_file(&a.out)?;
    report
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| output(&a.out, e))?;

    for t in &report.transects {
        write!(
            out,
            "transect {}: samples={} mean_dt={:.3} C mean_dt_teg={:.3} K mean_power={:.3} mW power_at_mean_dt={:.3} mW",
            t.transect,
            t.samples,
            t.mean_dt_c,
            t.mean_dt_teg_k,
            t.mean_power_w * 1e3,
            t.power_at_mean_dt_w * 1e3
        )
        .map_err(io_out)?;
        match t.feasible {
            Some(true) => writeln!(out, " feasible"),
            Some(false) => writeln!(out, " infeasible"),
            None => writeln!(out),
        }
        .map_err(io_out)?;
    }
    if a.clamp_positive {
        writeln!(out, "reversed gradients clamped to zero power").map_err(io_out)?;
    }
    writeln!(out, "{CONVEXITY_CAVEAT}").map_err(io_out)?;
    writeln!(out, "report written to {}", a.out.display()).map_err(io_out)?;
    Ok(())
}

fn parse_check(s: &str) -> Result<(String, f64, f64), Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || input(format!("--check expects LABEL:MEAN_DT:POWER_MW, got {s}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let dt: f64 = parts[1].parse().map_err(|_| bad())?;
    let mw: f64 = parts[2].parse().map_err(|_| bad())?;
    Ok((parts[0].to_string(), dt, mw * 1e-3))
}

fn feas_calibrate(a: FeasCalibrateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let params = load_params(a.params.as_deref())?;
    let r_elec = calibrate_r_elec(
        a.mean_dt,
        a.mean_power_mw * 1e-3,
        &params.stack,
        params.alpha,
    )
    .map_err(|e| input(e.to_string()))?;
    let checks = if a.checks.is_empty() {
        REFERENCE_TRANSECTS
            .iter()
            .map(|(l, dt, mw)| (l.to_string(), *dt, mw * 1e-3))
            .collect()
    } else {
        a.checks
            .iter()
            .map(|c| parse_check(c))
            .collect::<Result<Vec<_>, _>>()?
    };
    let teg = TegParams {
        alpha: params.alpha,
        r_elec,
        r_th: params.stack.r_teg_th,
    };
    writeln!(
        out,
        "r_elec_ohm={r_elec:.4} (calibrated at mean gradient {:.2} C, {:.3} mW)",
        a.mean_dt, a.mean_power_mw
    )
    .map_err(io_out)?;
    writeln!(
        out,
        "transect,mean_dt_c,reference_mw,predicted_mw,rel_error_pct,flag"
    )
    .map_err(io_out)?;
    for c in cross_check(&params.stack, &teg, &checks) {
        writeln!(
            out,
            "{},{:.2},{:.3},{:.3},{:+.1},{}",
            c.label,
            c.mean_dt,
            c.reference_power_w * 1e3,
            c.predicted_power_w * 1e3,
            c.relative_error() * 100.0,
            if c.relative_error().abs() > CROSS_CHECK_TOLERANCE {
                "outside_tolerance"
            } else {
                "ok"
            }
        )
        .map_err(io_out)?;
    }
    writeln!(out, "{CONVEXITY_CAVEAT}").map_err(io_out)?;
    Ok(())
}

fn sim_run(a: SimRunArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (mut scenario, base_dir) = match &a.scenario {
        Some(path) => {
            let s = ScenarioConfig::load(path).map_err(|e| input(e.to_string()))?;
            (s, path.parent().map(Path::to_path_buf))
        }
        None => (ScenarioConfig::forhot(), None),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(d) = a.duration_s {
        scenario.duration_s = d;
    }
    let profile = scenario.power_profile;
    let (sites, nodes) = (scenario.sites.len(), scenario.node_count());
    let sim = Simulation::new(scenario, base_dir.as_deref()).map_err(|e| input(e.to_string()))?;
    let (log, records) = sim.run_with_sink();

    std::fs::create_dir_all(&a.out).map_err(|e| output(&a.out, e))?;
    let log_path = a.out.join("run.log");
    let mut w = create_file(&log_path)?;
    w.write_all(log.text().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| output(&log_path, e))?;
    let sink_path = a.out.join("sink.csv");
    let w = create_file(&sink_path)?;
    write_sink_csv(&records, w).map_err(|e| output(&sink_path, e))?;
    let summary_path = a.out.join("summary.json");
    let mut w = create_file(&summary_path)?;
    serde_json::to_writer_pretty(&mut w, &log.summary)
        .map_err(|e| output(&summary_path, e))
        .and_then(|_| w.flush().map_err(|e| output(&summary_path, e)))?;

    let s = &log.summary;
    let t = s.totals();
    writeln!(
        out,
        "scenario: {nodes} nodes, {sites} sites, {} s, seed {}",
        s.duration_ms / 1000,
        s.seed
    )
    .map_err(io_out)?;
    writeln!(out, "run log hash: {}", log.hash()).map_err(io_out)?;
    writeln!(
        out,
        "uplinks: attempted={} delivered={} dropped={} delivery_ratio={:.4}",
        t.uplinks_attempted,
        t.uplinks_delivered,
        t.uplinks_dropped,
        s.delivery_ratio()
    )
    .map_err(io_out)?;
    writeln!(
        out,
        "downlinks: queued={} delivered={} dropped={} expired={}",
        t.downlinks_queued, t.downlinks_delivered, t.downlinks_dropped, t.downlinks_expired
    )
    .map_err(io_out)?;
    writeln!(
        out,
        "readings: produced={} delivered={} sink_records={} quarantined={}",
        s.readings_produced(),
        s.readings_delivered(),
        s.sink_records,
        s.quarantined
    )
    .map_err(io_out)?;
    writeln!(
        out,
        "node,site,transect,charge_c,mean_current_ua,lifetime_years"
    )
    .map_err(io_out)?;
    for n in &s.nodes {
        writeln!(
            out,
            "{},{},{},{:.4},{:.2},{:.1}",
            n.uid, n.site, n.transect, n.charge_c, n.mean_current_ua, n.lifetime_years
        )
        .map_err(io_out)?;
    }
    writeln!(
        out,
        "projected battery lifetime: min {:.1} years",
        s.min_lifetime_years()
    )
    .map_err(io_out)?;
    let violations = s.violations(&profile);
    if violations.is_empty() {
        writeln!(out, "invariants: ok").map_err(io_out)?;
    } else {
        for v in &violations {
            writeln!(out, "invariant violated: {v}").map_err(io_out)?;
        }
        return Err(Failure::Output(format!(
            "{} invariant violations",
            violations.len()
        )));
    }
    writeln!(out, "outputs written to {}", a.out.display()).map_err(io_out)?;
    Ok(())
}

fn proto_encode(a: ProtoEncodeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let actions = a
        .actions
        .iter()
        .map(|s| s.parse::<AlpAction>().map_err(|e| input(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    writeln!(
        out,
        "{}",
        hex::encode_upper(encode_command(&AlpCommand::new(actions)))
    )
    .map_err(io_out)
}

fn proto_decode(a: ProtoDecodeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let compact: String = a.hex.chars().filter(|c| !c.is_whitespace()).collect();
    let bytes = hex::decode(&compact).map_err(|e| input(format!("invalid hex: {e}")))?;
    let cmd = decode_command(&bytes).map_err(|e| input(format!("decode failed: {e}")))?;
    for action in &cmd.actions {
        writeln!(out, "{action}").map_err(io_out)?;
    }
    Ok(())
}
