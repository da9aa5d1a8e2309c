mod dataset;
mod report;

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mcdp_core::counting::{CountingQuery, Predicate};
use mcdp_core::field::{FieldModulus, DEFAULT_MODULUS};
use mcdp_core::noise::{amplify_by_sampling, PrivacyBudget};
use mcdp_core::sketch::SketchParams;
use mcdp_core::transport::{
    adversary_view_of, infer_party_counts, messages_from_jsonl, run_protocol, ProtocolKind,
    ProtocolSpec, RunConfig,
};
use mcdp_core::{Error, Rational};
use serde_json::json;

use dataset::{load_dataset, load_queries, Dataset};

/// Exit code 2: bad flags, config or parameters; 3: bad data; 4: protocol failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Protocol(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Protocol(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "config error: {s}"),
            CliError::Data(s) => write!(f, "data error: {s}"),
            CliError::Protocol(s) => write!(f, "protocol error: {s}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let s = e.to_string();
        match e {
            Error::OutOfDomain { .. } | Error::EmptyDataset => CliError::Data(s),
            Error::InvalidModulus(_)
            | Error::ModulusTooSmall { .. }
            | Error::InvalidScale(_)
            | Error::InvalidPrivacyParameter(_)
            | Error::NoQueries
            | Error::NoAggregators
            | Error::DomainTooLarge { .. }
            | Error::Config(_)
            | Error::Parse(_)
            | Error::PartyOutOfRange(_) => CliError::Config(s),
            _ => CliError::Protocol(s),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mcdp", version, about = "Private statistics across several non-colluding aggregators")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Global {
    /// Master seed; every party's randomness derives from it [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Prime modulus of the share field [default: 2^62 - 57]
    #[arg(long, global = true)]
    modulus: Option<u64>,
    /// Accept moduli below the wraparound margin
    #[arg(long, global = true)]
    unchecked_modulus: bool,
    /// Write the message transcript as JSON lines
    #[arg(long, global = true, value_name = "PATH")]
    dump_transcript: Option<PathBuf>,
    /// Write the report here instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Include true values and measured error in the report
    #[arg(long, global = true)]
    reveal_truth: bool,
    /// Include wall-clock time in the report
    #[arg(long, global = true)]
    timing: bool,
}

impl Global {
    fn or(self, outer: Global) -> Global {
        Global {
            seed: self.seed.or(outer.seed),
            modulus: self.modulus.or(outer.modulus),
            unchecked_modulus: self.unchecked_modulus || outer.unchecked_modulus,
            dump_transcript: self.dump_transcript.or(outer.dump_transcript),
            out: self.out.or(outer.out),
            reveal_truth: self.reveal_truth || outer.reveal_truth,
            timing: self.timing || outer.timing,
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn modulus(&self) -> Result<FieldModulus, CliError> {
        Ok(FieldModulus::new(self.modulus.unwrap_or(DEFAULT_MODULUS))?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a noise scale into (ε, δ) guarantees
    Account(AccountArgs),
    /// Estimate the fraction of clients satisfying a predicate
    Count(CountArgs),
    /// Frequency oracle over a linear sketch
    Freq(FreqArgs),
    /// Heavy hitters from the frequency sketch
    Hh(HhArgs),
    /// Threshold counts via distributed point functions (m = 2)
    Threshold(ThresholdArgs),
    /// Answer k queries, each client answering one at random (m = 2)
    Sampled(SampledArgs),
    /// Report-noisy-max over k queries
    Select(SelectArgs),
    /// Run any protocol and report its message census
    Simulate(SimulateArgs),
    /// Extract an adversary's view from a transcript dump
    AuditView(AuditArgs),
}

#[derive(Args, Debug)]
struct DataOpts {
    /// CSV with one client record per row
    #[arg(long)]
    data: PathBuf,
    /// Column holding the value
    #[arg(long, default_value_t = 0)]
    column: usize,
    /// The CSV has a header row
    #[arg(long)]
    header: bool,
    /// Number of aggregators
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
}

#[derive(Args, Debug)]
struct AccountArgs {
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    delta: f64,
    /// Also report ε after sampling one of k queries
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[command(flatten)]
    data: DataOpts,
    /// Predicate such as `all`, `odd`, `lt:10`, `range:3:7`
    #[arg(long, default_value = "all")]
    query: String,
    /// Per-aggregator discrete Gaussian scale
    #[arg(long)]
    sigma: Rational,
}

#[derive(Args, Debug)]
struct SketchOpts {
    #[arg(long, default_value_t = 256)]
    ell: usize,
    #[arg(long, default_value_t = 16)]
    domain_bits: u32,
    /// Public seed of the sketch's hash family
    #[arg(long, default_value_t = 0)]
    sketch_seed: u64,
    /// Per-aggregator noise before the √ℓ sensitivity scaling
    #[arg(long)]
    sigma0: Rational,
}

#[derive(Args, Debug)]
struct FreqArgs {
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    sketch: SketchOpts,
    /// Elements whose frequency is published
    #[arg(long, value_delimiter = ',')]
    points: Vec<u64>,
    /// Measure error across values, e.g. `ell=64,256,1024`; writes CSV
    #[arg(long)]
    sweep: Option<String>,
    /// Runs per sweep value
    #[arg(long, default_value_t = 20)]
    trials: usize,
}

#[derive(Args, Debug)]
struct HhArgs {
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    sketch: SketchOpts,
    /// Frequency threshold
    #[arg(long)]
    tau: f64,
    /// Elements to test; the whole domain when omitted
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<u64>,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[command(flatten)]
    data: DataOpts,
    #[arg(long)]
    domain_bits: u32,
    #[arg(long)]
    sigma: Rational,
    /// Thresholds t answered as #{x ≤ t}; all points for domains up to 2^10
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<u64>,
}

#[derive(Args, Debug)]
struct SampledArgs {
    #[command(flatten)]
    data: DataOpts,
    /// Query file: `id,predicate` per line
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    sigma: Rational,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    data: DataOpts,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    epsilon: Rational,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    protocol: ProtocolKind,
    /// Flags of the chosen protocol's own subcommand
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    rest: Vec<String>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long)]
    transcript: PathBuf,
    /// 1-based index of the aggregator assumed honest
    #[arg(long)]
    honest_agg: usize,
    /// 1-based index of the client being protected
    #[arg(long)]
    protected: usize,
}

/// A protocol subcommand resolved into a run.
struct Prepared {
    kind: &'static str,
    data: Dataset,
    config: RunConfig,
}

fn prepare(global: &Global, command: Command) -> Result<Prepared, CliError> {
    let config = |opts: &DataOpts, spec| -> Result<RunConfig, CliError> {
        Ok(RunConfig {
            m: opts.m,
            modulus: global.modulus()?,
            delta: opts.delta,
            enforce_margin: !global.unchecked_modulus,
            spec,
        })
    };
    let load = |opts: &DataOpts| load_dataset(&opts.data, opts.column, opts.header);
    let sketch = |s: &SketchOpts| SketchParams::new(s.ell, s.domain_bits, s.sketch_seed);
    let (kind, data, config) = match command {
        Command::Count(a) => {
            let query = CountingQuery::new(a.query.clone(), a.query.parse::<Predicate>()?);
            let spec = ProtocolSpec::Count {
                query,
                sigma: Some(a.sigma),
            };
            ("count", load(&a.data)?, config(&a.data, spec)?)
        }
        Command::Freq(a) => {
            let spec = ProtocolSpec::Freq {
                sketch: sketch(&a.sketch)?,
                sigma0: Some(a.sketch.sigma0),
                points: a.points.clone(),
                tau: None,
                candidates: None,
            };
            let d = load(&a.data)?;
            d.check_domain(a.sketch.domain_bits)?;
            ("freq", d, config(&a.data, spec)?)
        }
        Command::Hh(a) => {
            let spec = ProtocolSpec::Freq {
                sketch: sketch(&a.sketch)?,
                sigma0: Some(a.sketch.sigma0),
                points: Vec::new(),
                tau: Some(a.tau),
                candidates: (!a.candidates.is_empty()).then(|| a.candidates.clone()),
            };
            let d = load(&a.data)?;
            d.check_domain(a.sketch.domain_bits)?;
            ("hh", d, config(&a.data, spec)?)
        }
        Command::Threshold(a) => {
            let thresholds = if a.thresholds.is_empty() {
                if a.domain_bits > 10 {
                    return Err(CliError::Config(
                        "pass --thresholds for domains above 2^10".into(),
                    ));
                }
                (0..1u64 << a.domain_bits).collect()
            } else {
                a.thresholds.clone()
            };
            let spec = ProtocolSpec::Threshold {
                domain_bits: a.domain_bits,
                sigma: Some(a.sigma),
                thresholds,
            };
            let d = load(&a.data)?;
            d.check_domain(a.domain_bits)?;
            ("threshold", d, config(&a.data, spec)?)
        }
        Command::Sampled(a) => {
            let spec = ProtocolSpec::Sampled {
                queries: load_queries(&a.queries)?,
                sigma: Some(a.sigma),
            };
            ("sampled", load(&a.data)?, config(&a.data, spec)?)
        }
        Command::Select(a) => {
            let spec = ProtocolSpec::Select {
                queries: load_queries(&a.queries)?,
                epsilon: a.epsilon,
            };
            ("select", load(&a.data)?, config(&a.data, spec)?)
        }
        _ => return Err(CliError::Config("not a protocol subcommand".into())),
    };
    Ok(Prepared { kind, data, config })
}

fn execute(global: &Global, prepared: Prepared, census: bool) -> Result<String, CliError> {
    let Prepared { kind, data, config } = prepared;
    let seed = global.seed();
    let started = Instant::now();
    let run = run_protocol(&config, &data.values, seed)?;
    let elapsed = started.elapsed();
    if let Some(path) = &global.dump_transcript {
        fs::write(path, run.transcript.to_jsonl())
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    let mut value = report::run_report(kind, seed, &config, &data.values, &run, global.reveal_truth);
    if census {
        value["messages"] = report::census(&run.transcript);
    }
    if global.timing {
        value["elapsed_ms"] = json!(elapsed.as_secs_f64() * 1e3);
    }
    Ok(pretty(&value))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn account(a: &AccountArgs) -> Result<String, CliError> {
    let b = PrivacyBudget::from_sigma(a.sigma, a.delta)?;
    let mut v = json!({
        "sigma": a.sigma,
        "delta": a.delta,
        "rho": b.rho,
        "epsilon": b.epsilon,
    });
    if let Some(k) = a.k {
        v["k"] = json!(k);
        v["amplified_epsilon"] = json!(amplify_by_sampling(b.epsilon, k)?);
    }
    Ok(pretty(&v))
}

fn audit(a: &AuditArgs) -> Result<String, CliError> {
    let text = fs::read_to_string(&a.transcript)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.transcript.display())))?;
    let messages = messages_from_jsonl(&text).map_err(|e| CliError::Data(e.to_string()))?;
    let (m, n) = infer_party_counts(&messages);
    let view = adversary_view_of(&messages, m, n, a.honest_agg, a.protected)?;
    Ok(pretty(&json!({
        "m": m,
        "n": n,
        "messages_total": messages.len(),
        "view": view,
    })))
}

fn simulate(outer: Global, a: SimulateArgs) -> Result<Output, CliError> {
    let argv = std::iter::once("mcdp".to_string())
        .chain(std::iter::once(a.protocol.to_string()))
        .chain(a.rest);
    let inner = Cli::try_parse_from(argv).map_err(|e| CliError::Config(e.to_string()))?;
    let global = inner.global.or(outer);
    if matches!(inner.command, Command::Freq(FreqArgs { sweep: Some(_), .. })) {
        return Err(CliError::Config("simulate runs a single protocol; drop --sweep".into()));
    }
    let prepared = prepare(&global, inner.command)?;
    Ok(Output {
        text: execute(&global, prepared, true)?,
        out: global.out,
    })
}

struct Output {
    text: String,
    out: Option<PathBuf>,
}

fn freq_sweep(global: &Global, a: FreqArgs, spec: &str) -> Result<String, CliError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("sweep {spec:?} is not key=v1,v2,...")))?;
    if key != "ell" {
        return Err(CliError::Config(format!("cannot sweep {key:?}; supported: ell")));
    }
    let ells = values
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("sweep values: {e}")))?;
    if a.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let data = load_dataset(&a.data.data, a.data.column, a.data.header)?;
    data.check_domain(a.sketch.domain_bits)?;
    let mut rows = Vec::new();
    for ell in ells {
        let mut alphas = Vec::with_capacity(a.trials);
        let mut predicted = None;
        for t in 0..a.trials as u64 {
            let params = SketchParams::new(ell, a.sketch.domain_bits, a.sketch.sketch_seed + t)?;
            let config = RunConfig {
                m: a.data.m,
                modulus: global.modulus()?,
                delta: a.data.delta,
                enforce_margin: !global.unchecked_modulus,
                spec: ProtocolSpec::Freq {
                    sketch: params,
                    sigma0: Some(a.sketch.sigma0),
                    points: report::sweep_points(&a.points, &data.values),
                    tau: None,
                    candidates: None,
                },
            };
            let run = run_protocol(&config, &data.values, global.seed() + t)?;
            predicted = run.privacy.predicted_std;
            alphas.push(report::max_frequency_error(run.outputs(), &data.values));
        }
        rows.push(report::SweepRow::new(ell, &alphas, predicted));
    }
    report::sweep_csv(&rows)
}

fn dispatch(cli: Cli) -> Result<Output, CliError> {
    let global = cli.global;
    let text = match cli.command {
        Command::Account(a) => account(&a)?,
        Command::AuditView(a) => audit(&a)?,
        Command::Simulate(a) => return simulate(global, a),
        Command::Freq(a) if a.sweep.is_some() => {
            let spec = a.sweep.clone().expect("checked");
            freq_sweep(&global, a, &spec)?
        }
        other => {
            let prepared = prepare(&global, other)?;
            execute(&global, prepared, false)?
        }
    };
    Ok(Output {
        text,
        out: global.out,
    })
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(Output { text, out }) => {
            let written = match &out {
                Some(path) => fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display())),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("mcdp: config error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Err(e) => {
            eprintln!("mcdp: {e}");
            ExitCode::from(e.code())
        }
    }
}
