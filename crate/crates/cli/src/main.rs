use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use twostage::fisher::fixed_stage_one;
use twostage::oc::{self, Design, FullSearch, OCReport};
use twostage::optimize::{self, OptimizationResult, Ranked};
use twostage::report::{DesignPayload, DesignReport, Provenance};
use twostage::{Error, RunConfig, TrialConfig, Weights};

#[derive(Parser, Debug)]
#[command(
    name = "twostage",
    version,
    about = "Two-stage multi-arm designs with binary outcomes"
)]
struct Cli {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the machine-readable result here
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configuration seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Format of standard output
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Binomial,
    Fisher,
    /// Fisher design with the fixed stage-one rule of the single-arm baseline
    Baseline,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search for optimal designs, one per weight vector in the config
    Design {
        #[arg(value_enum)]
        method: Method,
    },
    /// Exact operating characteristics of a stored design
    Evaluate {
        design: PathBuf,
        /// Success probabilities, comma separated; one value is broadcast.
        /// Defaults to p_ess from --config.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        p: Option<Vec<f64>>,
        /// Result index when the file holds several designs
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// FWER, FWP and ESS curves along the common-p line
    Curves {
        design: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 1.0)]
        hi: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Treatment effect for the alternative curves; defaults to the config's delta
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Searches the whole parameter space for the largest FWER
    VerifyStrong {
        design: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        budget: usize,
        /// Level to compare against; defaults to the config's alpha, else 0.15
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Monte Carlo replay of the decision rules
    Simulate {
        design: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        p: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100_000)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

/// Output of `design`: one report per weight vector plus search metadata.
#[derive(Debug, Serialize, Deserialize)]
struct DesignRun {
    schema_version: u32,
    method: String,
    config: TrialConfig,
    config_hash: String,
    version: String,
    timestamp: String,
    /// Wall time per weight vector, kept apart from the deterministic payload
    wall_time_s: Vec<f64>,
    results: Vec<RunEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunEntry {
    report: DesignReport,
    alternatives: Vec<Ranked>,
    candidates_evaluated: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Infeasible(_)) => 3,
        Some(Error::Consistency(_)) => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(Error::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    let cfg = match &cli.config {
        Some(path) => Some(load_config(path, cli.seed)?),
        None => None,
    };
    match &cli.cmd {
        Command::Design { method } => {
            let cfg = cfg.ok_or_else(|| Error::Config("design needs --config".into()))?;
            cmd_design(&cli, *method, &cfg)
        }
        Command::Evaluate { design, p, index } => {
            let d = load_design(design, *index)?;
            let p = resolve_p(p.as_deref(), cfg.as_ref(), d.k())?;
            let r = oc::oc_at(&d, &p)?;
            write_out(&cli, &serde_json::to_string_pretty(&r)?)?;
            match cli.format.unwrap_or(Format::Table) {
                Format::Table => print!("{}", oc_table(&d, &r)),
                _ => println!("{}", serde_json::to_string_pretty(&r)?),
            }
            Ok(())
        }
        Command::Curves {
            design,
            lo,
            hi,
            step,
            delta,
            index,
        } => {
            let d = load_design(design, *index)?;
            if !(*step > 0.0 && *step <= 0.05) {
                bail!(Error::Validation(format!(
                    "step must lie in (0, 0.05], got {step}"
                )));
            }
            if !(0.0 <= *lo && lo <= hi && *hi <= 1.0) {
                bail!(Error::Validation(format!(
                    "need 0 <= lo <= hi <= 1, got [{lo}, {hi}]"
                )));
            }
            let delta = match (delta, &cfg) {
                (Some(v), _) => std::iter::once(0.0)
                    .chain(std::iter::repeat_n(*v, d.k()))
                    .collect(),
                (None, Some(c)) if c.k == d.k() => c.delta.clone(),
                (None, _) => bail!(Error::Config(
                    "curves needs --delta or a matching --config".into()
                )),
            };
            let model = cfg.as_ref().map(|c| c.ess_model).unwrap_or_default();
            let rows = oc::curves_scored(&d, &delta, *lo, *hi, *step, model);
            let csv = oc::curves_csv(&rows);
            match cli.format.unwrap_or(Format::Csv) {
                Format::Json => {
                    let json = serde_json::to_string_pretty(&rows)?;
                    write_out(&cli, &json)?;
                    println!("{json}");
                }
                _ => {
                    write_out(&cli, &csv)?;
                    if cli.out.is_none() {
                        print!("{csv}");
                    }
                }
            }
            Ok(())
        }
        Command::VerifyStrong {
            design,
            budget,
            alpha,
            index,
        } => {
            let d = load_design(design, *index)?;
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let alpha = alpha.or(cfg.as_ref().map(|c| c.alpha)).unwrap_or(0.15);
            let r = oc::max_fwer_full(&d, FullSearch::new(*budget, seed))?;
            let dist = oc::distance_to_diagonal(&r.argmax_p);
            let pass = r.max_fwer <= alpha + 1e-12;
            let summary = serde_json::json!({
                "max_fwer": r.max_fwer,
                "argmax_p": r.argmax_p,
                "distance_to_diagonal": dist,
                "alpha": alpha,
                "pass": pass,
                "budget": budget,
                "seed": seed,
                "evaluations": r.search_trace.len(),
            });
            if cli.out.is_some() {
                let mut full = summary.clone();
                full["search_trace"] = serde_json::to_value(&r.search_trace)?;
                write_out(&cli, &serde_json::to_string_pretty(&full)?)?;
            }
            match cli.format.unwrap_or(Format::Table) {
                Format::Table => {
                    println!("max FWER        {:.6}", r.max_fwer);
                    println!("argmax p        {}", fmt_vec(&r.argmax_p));
                    println!("off-diagonal    {dist:.4}");
                    println!("alpha           {alpha}");
                    println!("result          {}", if pass { "PASS" } else { "FAIL" });
                }
                _ => println!("{}", serde_json::to_string_pretty(&summary)?),
            }
            Ok(())
        }
        Command::Simulate {
            design,
            p,
            reps,
            index,
        } => {
            let d = load_design(design, *index)?;
            let p = resolve_p(p.as_deref(), cfg.as_ref(), d.k())?;
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let sim = oc::simulate(&d, &p, *reps, seed)?;
            let exact = oc::oc_at(&d, &p)?;
            let z = |est: f64, se: f64, truth: f64| if se > 0.0 { (est - truth) / se } else { 0.0 };
            let doc = serde_json::json!({
                "simulated": sim,
                "exact": exact,
                "z": {
                    "fwer": z(sim.fwer, sim.fwer_se, exact.fwer),
                    "fwp": z(sim.fwp, sim.fwp_se, exact.fwp),
                    "ess": z(sim.ess, sim.ess_se, exact.ess),
                }
            });
            write_out(&cli, &serde_json::to_string_pretty(&doc)?)?;
            match cli.format.unwrap_or(Format::Table) {
                Format::Table => {
                    println!(
                        "p = {}  reps = {}  seed = {}",
                        fmt_vec(&p),
                        sim.reps,
                        sim.seed
                    );
                    println!(
                        "{:<6}{:>12}{:>10}{:>12}{:>8}",
                        "", "simulated", "se", "exact", "z"
                    );
                    for (name, est, se, truth) in [
                        ("FWER", sim.fwer, sim.fwer_se, exact.fwer),
                        ("FWP", sim.fwp, sim.fwp_se, exact.fwp),
                        ("ESS", sim.ess, sim.ess_se, exact.ess),
                    ] {
                        println!(
                            "{name:<6}{est:>12.4}{se:>10.4}{truth:>12.4}{:>8.2}",
                            z(est, se, truth)
                        );
                    }
                }
                _ => println!("{}", serde_json::to_string_pretty(&doc)?),
            }
            Ok(())
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<TrialConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = RunConfig::from_json(&text)?.resolve()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn config_hash(cfg: &TrialConfig) -> anyhow::Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn cmd_design(cli: &Cli, method: Method, cfg: &TrialConfig) -> anyhow::Result<()> {
    let results: Vec<OptimizationResult> = match method {
        Method::Binomial => optimize::optimize_binomial(cfg)?,
        Method::Fisher => optimize::optimize_fisher(cfg)?,
        Method::Baseline => {
            let start = std::time::Instant::now();
            let d = Design::Fisher(fixed_stage_one(cfg)?);
            let unit = Weights([0.0, 0.0, 0.0]);
            vec![OptimizationResult {
                method: "fisher",
                weights: unit,
                alpha1: None,
                beta1: None,
                objective: optimize::objective(&d, cfg, unit),
                constraints: optimize::check_constraints(&d, cfg, cfg.p_grid_step),
                design: d,
                alternatives: Vec::new(),
                candidates_evaluated: 1,
                wall_time_s: start.elapsed().as_secs_f64(),
            }]
        }
    };
    let hash = config_hash(cfg)?;
    let version = env!("CARGO_PKG_VERSION").to_string();
    let timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let provenance = Provenance {
        config_hash: hash.clone(),
        version: version.clone(),
        timestamp: timestamp.clone(),
    };
    let mut entries = Vec::new();
    for r in &results {
        let mut report = DesignReport::build(&r.design, cfg, provenance.clone())?;
        report.alpha1 = r.alpha1;
        report.beta1 = r.beta1;
        if method != Method::Baseline {
            report.weights = Some(r.weights.0);
            report.objective = Some(r.objective);
        }
        entries.push(RunEntry {
            report,
            alternatives: r.alternatives.clone(),
            candidates_evaluated: r.candidates_evaluated,
        });
    }
    let run = DesignRun {
        schema_version: twostage::report::REPORT_SCHEMA_VERSION,
        method: results.first().map(|r| r.method).unwrap_or("fisher").into(),
        config: cfg.clone(),
        config_hash: hash,
        version,
        timestamp,
        wall_time_s: results.iter().map(|r| r.wall_time_s).collect(),
        results: entries,
    };
    let json = serde_json::to_string_pretty(&run)?;
    write_out(cli, &json)?;
    match cli.format.unwrap_or(Format::Table) {
        Format::Json => println!("{json}"),
        Format::Csv => print!("{}", design_csv(&run)),
        Format::Table => print!("{}", design_table(&run)),
    }
    Ok(())
}

fn write_out(cli: &Cli, text: &str) -> anyhow::Result<()> {
    if let Some(path) = &cli.out {
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Accepts a `design` output file, a single report, or a bare design payload.
fn load_design(path: &Path, index: usize) -> anyhow::Result<Design> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    if value.get("results").is_some() {
        let run: DesignRun = serde_json::from_str(&text).map_err(Error::from)?;
        let n = run.results.len();
        let entry = run.results.get(index).ok_or_else(|| {
            Error::Validation(format!("index {index} out of range ({n} results)"))
        })?;
        return Ok(entry.report.recheck()?);
    }
    if value.get("oc_null").is_some() {
        let report: DesignReport = serde_json::from_str(&text).map_err(Error::from)?;
        return Ok(report.recheck()?);
    }
    let payload: DesignPayload = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(payload.to_design()?)
}

fn resolve_p(p: Option<&[f64]>, cfg: Option<&TrialConfig>, k: usize) -> anyhow::Result<Vec<f64>> {
    match (p, cfg) {
        (Some([v]), _) => Ok(vec![*v; k + 1]),
        (Some(v), _) if v.len() == k + 1 => Ok(v.to_vec()),
        (Some(v), _) => Err(anyhow!(Error::Validation(format!(
            "--p needs 1 or {} values, got {}",
            k + 1,
            v.len()
        )))),
        (None, Some(c)) if c.k == k => Ok(c.p_ess.clone()),
        (None, _) => Err(anyhow!(Error::Config(
            "give --p or a --config with matching K".into()
        ))),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("({})", parts.join(", "))
}

fn boundary_summary(d: &DesignPayload) -> String {
    match d {
        DesignPayload::Binomial(b) => {
            format!("f=({},{}) e=({},{})", b.f[0], b.f[1], b.e[0], b.e[1])
        }
        DesignPayload::Fisher(f) => {
            let e1: Vec<String> = f.e1.iter().map(|v| v.to_string()).collect();
            format!("f1={} e1=[{}]", f.f1, e1.join(","))
        }
    }
}

fn oc_table(d: &Design, r: &OCReport) -> String {
    let mut s = format!("{} design, K={}, n={}\n", d.method(), d.k(), d.n());
    s += &format!("p               {}\n", fmt_vec(&r.p));
    s += &format!("FWER            {:.6}\n", r.fwer);
    s += &format!("FWP             {:.6}\n", r.fwp);
    s += &format!("ESS             {:.4}\n", r.ess);
    for (k, v) in r.per_arm_reject.iter().enumerate() {
        s += &format!("P(reject H0{})   {v:.6}\n", k + 1);
    }
    s
}

fn design_table(run: &DesignRun) -> String {
    let mut s = format!(
        "{:<22}{:>6}{:>6}{:>5}{:>10}{:>10}{:>7}{:>9}{:>8}  boundaries\n",
        "weights", "a1", "b1", "n", "ESS(p)", "ESS(p+d)", "maxN", "maxFWER", "minFWP"
    );
    for e in &run.results {
        let r = &e.report;
        let w = r
            .weights
            .map(|w| format!("({}, {}, {})", w[0], w[1], w[2]))
            .unwrap_or_else(|| "-".into());
        let g = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        s += &format!(
            "{:<22}{:>6}{:>6}{:>5}{:>10.2}{:>10.2}{:>7}{:>9.4}{:>8.4}  {}\n",
            w,
            g(r.alpha1),
            g(r.beta1),
            r.n,
            r.ess_scored.0,
            r.ess_scored.1,
            r.max_n,
            r.constraints.max_fwer,
            r.constraints.min_fwp,
            boundary_summary(&r.design)
        );
    }
    s
}

fn design_csv(run: &DesignRun) -> String {
    let mut s = String::from("w1,w2,w3,alpha1,beta1,n,ess_null,ess_alt,max_n,max_fwer,min_fwp\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in &run.results {
        let r = &e.report;
        let w = r.weights.unwrap_or([0.0; 3]);
        s += &format!(
            "{},{},{},{},{},{},{:.6},{:.6},{},{:.6},{:.6}\n",
            w[0],
            w[1],
            w[2],
            opt(r.alpha1),
            opt(r.beta1),
            r.n,
            r.ess_scored.0,
            r.ess_scored.1,
            r.max_n,
            r.constraints.max_fwer,
            r.constraints.min_fwp
        );
    }
    s
}
