//! `fnet`: command-line driver for the fluidnet library.
//!
//! Exit codes: 0 when every check passed, 2 when a verifier reported a
//! violation, 3 on malformed input.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fluidnet::analysis::{divergence_estimate, quantile, rate_stability_estimate, run_ensemble, DEFAULT_WINDOW};
use fluidnet::divergence::{build_divergent, gamma_of_witness, verify_linear_divergence, Witness};
use fluidnet::dist::DistSpec;
use fluidnet::fdp::{fdp_bound_check, fdp_decompose};
use fluidnet::fluid::{certify, FluidSolution, DEFAULT_TOL};
use fluidnet::ld::{check_exptail, chernoff_rate, empirical_ld_rate, empirical_ld_time, Direction};
use fluidnet::network::Network;
use fluidnet::sim::{builtin_policy, simulate, verify_trace, PolicyKind, SimConfig, SimState, SimTrace};
use fluidnet::tracker::{supervisor_run, PlanMode, PlanSource, SupervisorConfig, DEFAULT_PRACTICAL_CAP};

const EXIT_VIOLATION: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "fnet", version, about = "Fluid models and adversarial tracking for multiclass queueing networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Discrete-event simulation.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Fluid solution checks.
    #[command(subcommand)]
    Fluid(FluidCmd),
    /// Finite decomposition of two-station fluid solutions.
    #[command(subcommand)]
    Fdp(FdpCmd),
    /// Divergent fluid solutions from a witness.
    #[command(subcommand)]
    Divergent(DivergentCmd),
    /// Tracker plus supervisor ensembles.
    #[command(subcommand)]
    Attack(AttackCmd),
    /// Large-deviation rates and Monte-Carlo checks.
    #[command(subcommand)]
    Ld(LdCmd),
    /// Stability report over saved traces.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum SimCmd {
    /// Simulates one run and verifies the trace.
    Run(SimRunArgs),
}

#[derive(Args)]
struct SimRunArgs {
    net: PathBuf,
    /// fifo, lifo, gfifo, priority or priority:c,c;c,c
    #[arg(long, default_value = "fifo")]
    policy: String,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial queue per class, comma separated.
    #[arg(long)]
    q: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    sample_dt: f64,
    /// Trace output; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Event log output as JSON lines.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FluidCmd {
    /// Validates a fluid solution file and checks non-idling.
    Validate {
        net: PathBuf,
        solution: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
}

#[derive(Subcommand)]
enum FdpCmd {
    /// Decomposes a solution and checks the decomposition bounds.
    Decompose {
        net: PathBuf,
        solution: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DivergentCmd {
    /// Builds the divergent solution from `q` and checks it.
    Build {
        net: PathBuf,
        witness: PathBuf,
        #[arg(long)]
        q: String,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints the divergence rate certificate of a witness.
    Gamma { net: PathBuf, witness: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strict,
    Practical,
}

#[derive(Subcommand)]
enum AttackCmd {
    /// Runs the supervisor from an even split of `n` jobs over seeds `0..k`.
    Run(AttackArgs),
}

#[derive(Args)]
struct AttackArgs {
    net: PathBuf,
    witness: PathBuf,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, value_enum, default_value = "practical")]
    mode: Mode,
    /// Defaults to seven times the first epoch, enough for three doublings.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 50)]
    n0: u64,
    #[arg(long, default_value_t = DEFAULT_PRACTICAL_CAP)]
    cap: usize,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    sample_dt: f64,
    /// Directory for per-seed epoch logs (JSON) and summary tables (CSV).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LdCmd {
    /// Chernoff exponents and the exponential-tail certificate.
    Rate {
        dist: String,
        #[arg(long)]
        eps: f64,
    },
    /// Compares a Monte-Carlo tail frequency with its Chernoff bound.
    Verify {
        dist: String,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        z: f64,
    },
    /// Monte-Carlo frequency of a counting-process deviation.
    Counting {
        dist: String,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        z: f64,
    },
}

#[derive(Args)]
struct ReportArgs {
    net: PathBuf,
    /// Trace files (JSON, or CSV by extension).
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: f64,
    /// Per-seed CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Outcome of a subcommand that ran to completion.
enum Verdict {
    Pass,
    Violation,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.cmd) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Violation) => ExitCode::from(EXIT_VIOLATION),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn run(cmd: Cmd) -> Result<Verdict> {
    match cmd {
        Cmd::Sim(SimCmd::Run(a)) => sim_run(a),
        Cmd::Fluid(FluidCmd::Validate { net, solution, tol }) => {
            let net = load_net(&net)?;
            let sol = FluidSolution::load(&net, &solution).context("loading solution")?;
            let rep = certify(&net, &sol, tol)?;
            print_json(&json!({
                "valid": rep.is_empty(),
                "max_violation": rep.max_violation,
                "violations": rep.violations,
            }));
            Ok(verdict(rep.is_empty()))
        }
        Cmd::Fdp(FdpCmd::Decompose { net, solution, out }) => {
            let net = load_net(&net)?;
            let sol = FluidSolution::load(&net, &solution).context("loading solution")?;
            let dec = fdp_decompose(&net, &sol)?;
            let rep = fdp_bound_check(&net, &sol, &dec)?;
            if let Some(out) = out {
                write(&out, &serde_json::to_string_pretty(&dec)?)?;
            }
            print_json(&json!({
                "pieces": dec.pieces(),
                "cut_times": dec.cut_times,
                "report": rep,
            }));
            Ok(verdict(rep.passed()))
        }
        Cmd::Divergent(DivergentCmd::Build { net, witness, q, horizon, out }) => {
            let net = load_net(&net)?;
            let w = Witness::load(&net, &witness).context("loading witness")?;
            let q = parse_vec(&q, net.classes())?;
            let sol = build_divergent(&net, &w, &q, horizon)?;
            let cert = gamma_of_witness(&net, &w);
            let rep = certify(&net, &sol, DEFAULT_TOL)?;
            let linear = verify_linear_divergence(&sol, cert.gamma, DEFAULT_TOL);
            if let Some(out) = out {
                write(&out, &sol.to_json(&net))?;
            }
            print_json(&json!({
                "segments": sol.segments(),
                "end_norm": fluidnet::network::norm1(sol.q.last().expect("nonempty")),
                "gamma": cert.gamma,
                "valid": rep.is_empty(),
                "linear_divergence": linear,
            }));
            Ok(verdict(rep.is_empty() && linear))
        }
        Cmd::Divergent(DivergentCmd::Gamma { net, witness }) => {
            let net = load_net(&net)?;
            let w = Witness::load(&net, &witness).context("loading witness")?;
            let cert = gamma_of_witness(&net, &w);
            print_json(&json!({
                "certificate": cert,
                "floor_factor": cert.floor_factor(),
            }));
            Ok(Verdict::Pass)
        }
        Cmd::Attack(AttackCmd::Run(a)) => attack_run(a),
        Cmd::Ld(cmd) => ld(cmd),
        Cmd::Report(a) => report(a),
    }
}

fn sim_run(a: SimRunArgs) -> Result<Verdict> {
    let net = load_net(&a.net)?;
    let kind = PolicyKind::parse(&net, &a.policy)?;
    let mut policy = builtin_policy(&net, &kind)?;
    let state = match &a.q {
        Some(q) => SimState::with_queue(parse_vec(q, net.classes())?.iter().map(|&x| x as u64).collect()),
        None => SimState::empty(&net),
    };
    let cfg = SimConfig {
        sample_dt: a.sample_dt,
        log_events: a.events.is_some(),
        ..Default::default()
    };
    let trace = simulate(&net, policy.as_mut(), &state, a.horizon, a.seed, cfg)?;
    let rep = verify_trace(&net, &trace);
    if let Some(out) = &a.out {
        save_trace(&trace, out)?;
    }
    if let Some(ev) = &a.events {
        let f = fs::File::create(ev).with_context(|| format!("creating {}", ev.display()))?;
        trace.write_events(std::io::BufWriter::new(f))?;
    }
    print_json(&json!({
        "policy": trace.policy,
        "seed": trace.seed,
        "horizon": trace.horizon(),
        "events": trace.event_count,
        "final_queue": trace.final_queue(),
        "violations": rep.violations.len(),
        "summary": rep.summary(),
    }));
    Ok(verdict(rep.is_empty()))
}

fn attack_run(a: AttackArgs) -> Result<Verdict> {
    let net = load_net(&a.net)?;
    let w = Witness::load(&net, &a.witness).context("loading witness")?;
    let d = net.classes() as u64;
    if a.n < d {
        bail!("--n must be at least the class count {d}");
    }
    let mut q0 = vec![a.n / d; d as usize];
    q0[0] += a.n % d;
    let mode = match a.mode {
        Mode::Strict => PlanMode::Strict,
        Mode::Practical => PlanMode::Practical,
    };
    let source = PlanSource::Witness { witness: &w, mode };
    let qf: Vec<f64> = q0.iter().map(|&x| x as f64).collect();
    let (plan, _) = source.plan(&net, &qf, a.cap, a.delta)?;
    let horizon = a.horizon.unwrap_or(7.0 * plan.theta0);
    let cfg = SupervisorConfig {
        n0: a.n0,
        practical_cap: a.cap,
        delta_override: a.delta,
        sim: SimConfig {
            sample_dt: a.sample_dt,
            ..Default::default()
        },
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let outs = run_ensemble(&seeds, |s| supervisor_run(&net, &source, &SimState::with_queue(q0.clone()), &cfg, horizon, s))?;
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (s, o) in seeds.iter().zip(&outs) {
            write(&dir.join(format!("epochs_{s}.json")), &serde_json::to_string_pretty(&o.log)?)?;
            write(&dir.join(format!("epochs_{s}.csv")), &o.log.to_csv()?)?;
        }
    }
    let first: Vec<bool> = outs.iter().filter_map(|o| o.log.first_epoch_success()).collect();
    let induction: Vec<_> = outs.iter().map(|o| o.log.induction_check()).collect();
    let div = outs
        .iter()
        .map(|o| divergence_estimate(&o.trace, DEFAULT_WINDOW))
        .collect::<fluidnet::Result<Vec<f64>>>()?;
    let passed = induction.iter().all(|r| r.passed);
    print_json(&json!({
        "n": a.n,
        "seeds": a.seeds,
        "theta": plan.theta,
        "delta": plan.delta,
        "horizon": horizon,
        "first_epoch_success": first.iter().filter(|&&b| b).count() as f64 / first.len().max(1) as f64,
        "induction_passed": passed,
        "divergence_q05": quantile(&div, 0.05),
        "divergence_q50": quantile(&div, 0.5),
    }));
    Ok(verdict(passed))
}

fn ld(cmd: LdCmd) -> Result<Verdict> {
    match cmd {
        LdCmd::Rate { dist, eps } => {
            let d: DistSpec = dist.parse()?;
            let cert = check_exptail(&d)?;
            let up = chernoff_rate(&d, eps, Direction::Upper)?;
            let lo = if eps < d.mean() {
                Some(chernoff_rate(&d, eps, Direction::Lower)?)
            } else {
                None
            };
            let (l, v) = cert.rate_fn(eps)?;
            print_json(&json!({
                "dist": d.to_string(),
                "theta0": cert.theta0,
                "f_bound": cert.f_bound,
                "upper": up,
                "lower": lo,
                "two_sided": { "l": l, "v": v },
            }));
            Ok(Verdict::Pass)
        }
        LdCmd::Verify { dist, eps, n, trials, seed, z } => {
            let d: DistSpec = dist.parse()?;
            let bound = check_exptail(&d)?.time_bound(eps, n as f64)?;
            let f = empirical_ld_time(&d, eps, n, z, trials, seed)?;
            let ok = f.within(bound, 3.0);
            print_json(&json!({
                "bound": bound,
                "frequency": f.frequency,
                "sigma": f.sigma(bound),
                "trials": f.trials,
                "acceptance_rate": f.acceptance_rate,
                "verdict": if ok { "pass" } else { "fail" },
            }));
            Ok(verdict(ok))
        }
        LdCmd::Counting { dist, eps, t, trials, seed, z } => {
            let d: DistSpec = dist.parse()?;
            let f = empirical_ld_rate(&d, eps, t, z, trials, seed)?;
            print_json(&json!({
                "frequency": f.frequency,
                "trials": f.trials,
                "acceptance_rate": f.acceptance_rate,
            }));
            Ok(Verdict::Pass)
        }
    }
}

fn report(a: ReportArgs) -> Result<Verdict> {
    let net = load_net(&a.net)?;
    let traces = a.traces.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>>>()?;
    let rep = rate_stability_estimate(&traces, &net, a.tol)?;
    let div = traces
        .iter()
        .map(|t| divergence_estimate(t, a.window))
        .collect::<fluidnet::Result<Vec<f64>>>()?;
    if let Some(path) = &a.csv {
        let mut out = String::from("seed,throughput_ok,sublinear,divergence\n");
        for (s, d) in rep.seeds.iter().zip(&div) {
            out += &format!("{},{},{},{}\n", s.seed, s.throughput_ok, s.sublinear, d);
        }
        write(path, &out)?;
    }
    print_json(&json!({
        "report": rep,
        "window": a.window,
        "divergence_q05": quantile(&div, 0.05),
    }));
    Ok(Verdict::Pass)
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Violation
    }
}

fn load_net(path: &Path) -> Result<Network> {
    Network::load(path).with_context(|| format!("loading network {}", path.display()))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn save_trace(trace: &SimTrace, path: &Path) -> Result<()> {
    if is_csv(path) {
        trace.save_csv(path)?;
    } else {
        trace.save_json(path)?;
    }
    Ok(())
}

fn load_trace(path: &Path) -> Result<SimTrace> {
    let t = if is_csv(path) {
        SimTrace::load_csv(path)
    } else {
        SimTrace::load_json(path)
    };
    t.with_context(|| format!("loading trace {}", path.display()))
}

fn parse_vec(text: &str, len: usize) -> Result<Vec<f64>> {
    let v = text
        .split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad number `{x}`")))
        .collect::<Result<Vec<_>>>()?;
    if v.len() != len {
        bail!("expected {len} comma-separated values, got {}", v.len());
    }
    if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        bail!("values must be finite and nonnegative");
    }
    Ok(v)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A reader that stops early (`fnet ... | head`) is not an error.
fn print_json(v: &serde_json::Value) {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing output: {e}");
        }
    }
}
