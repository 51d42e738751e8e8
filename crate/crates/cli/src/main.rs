#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use evflow_core::dot::{bipartite_dot, flow_dot, unipartite_dot};
use evflow_core::electrical::{arm_currents, nodal_currents, resistance_matrix};
use evflow_core::graphs::{bipartite_from_dataset, flow_network, BipartiteMetrics, UnipartiteMetrics};
use evflow_core::hat::{direct_evidence, expand_consistency, HatMatrices};
use evflow_core::linalg::MatrixTable;
use evflow_core::model::{build_contrast_map, build_covariance, build_design_matrix};
use evflow_core::randomwalk::{
    expected_net_crossings, monte_carlo_crossings, renormalize, transition_down, transition_unipartite, transition_up,
    two_step, WalkChain, WalkConfig,
};
use evflow_core::simgen::{run_simulation, SimConfig, SimulationSummary};
use evflow_core::verify::{verify_all, DEFAULT_TOLERANCE};
use evflow_core::{
    load_arm_csv, Error, FlowNetwork, LabeledMatrix, LoadOptions, ModelSpec, NmaDataset, UnipartiteGraph,
};

#[derive(Parser)]
#[command(
    name = "evflow",
    version,
    about = "Evidence flow, random walks and resistor networks for network meta-analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print model, graph, walk and current matrices.
    Matrices {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated matrix names; all of them if omitted.
        #[arg(long, value_delimiter = ',', value_enum)]
        which: Vec<MatrixName>,
        #[arg(long, value_enum, default_value_t = MatrixFormat::Pretty)]
        format: MatrixFormat,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evidence flow network of one comparison.
    Flow {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, value_enum, default_value_t = GraphKind::Bi)]
        graph: GraphKind,
        /// How the flows are obtained.
        #[arg(long, value_enum, default_value_t = FlowMethod::Hat)]
        method: FlowMethod,
        /// Number of random walks for `--method monte-carlo`.
        #[arg(long, default_value_t = 100_000)]
        walks: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = FlowFormat::Json)]
        format: FlowFormat,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run every identity check on a dataset; exit 1 if any fails.
    Verify {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, value_enum, default_value_t = ReportFormat::Pretty)]
        format: ReportFormat,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate random networks and check both identities on each.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        networks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = 3)]
        min_treatments: usize,
        #[arg(long, default_value_t = 50)]
        max_treatments: usize,
        #[arg(long, default_value_t = 2)]
        min_trials: usize,
        #[arg(long, default_value_t = 200)]
        max_trials: usize,
        /// Record wall-clock times; output is then no longer reproducible.
        #[arg(long)]
        timings: bool,
        /// Write per-network graph metrics as CSV to this path.
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
        /// Print only the summary line.
        #[arg(long)]
        summary_only: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Degree, density and distance summaries of both graphs.
    Metrics {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ReportFormat::Pretty)]
        format: ReportFormat,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Validate a dataset and print its shape.
    IngestCheck {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ReportFormat::Pretty)]
        format: ReportFormat,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Graphviz rendering of the bipartite or unipartite graph.
    Graph {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = GraphKind::Bi)]
        graph: GraphKind,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Arm-level CSV: study,treatment,mean,variance or study,treatment,events,total.
    input: PathBuf,
    /// Global baseline treatment; the lexicographically first by default.
    #[arg(long)]
    baseline: Option<String>,
    /// Heterogeneity standard deviation; 0 gives the common-effect model.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Reject binomial trials with zero or all events instead of correcting them.
    #[arg(long)]
    no_continuity_correction: bool,
}

#[derive(Args)]
struct OutArgs {
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MatrixFormat {
    Pretty,
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Pretty,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FlowFormat {
    Json,
    Dot,
    Pretty,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GraphKind {
    Uni,
    Bi,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FlowMethod {
    /// Row of the hat matrix.
    Hat,
    /// Expected net edge crossings of the absorbing random walk.
    Walk,
    /// Simulated random walks with standard errors.
    MonteCarlo,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
#[value(rename_all = "verbatim")]
enum MatrixName {
    C,
    X,
    Sigma,
    W,
    H,
    Harm,
    Hagg,
    Wagg,
    B,
    Bagg,
    Bbi,
    A,
    Aagg,
    R,
    J,
    I,
    T,
    Pup,
    Pdown,
    P,
    Ptilde,
}

impl MatrixName {
    fn all() -> Vec<Self> {
        Self::value_variants().to_vec()
    }

    fn name(self) -> String {
        format!("{self:?}")
    }
}

/// Failures that map to exit code 1 rather than 2.
enum Failure {
    Input(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            let body = serde_json::json!({ "error": error_kind(&e), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("EVFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("EVFLOW_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn error_kind(e: &Error) -> String {
    let debug = format!("{e:?}");
    debug.split(['(', ' ', '{']).next().unwrap_or("Error").to_string()
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Matrices {
            data,
            which,
            format,
            out,
        } => matrices(&data, &which, format, &out),
        Command::Flow {
            data,
            from,
            to,
            graph,
            method,
            walks,
            seed,
            format,
            out,
        } => flow(
            &data,
            &from,
            &to,
            graph,
            method,
            WalkConfig::new(walks, seed),
            format,
            &out,
        ),
        Command::Verify {
            data,
            tolerance,
            format,
            out,
        } => verify(&data, tolerance, format, &out),
        Command::Simulate {
            networks,
            seed,
            tolerance,
            min_treatments,
            max_treatments,
            min_trials,
            max_trials,
            timings,
            metrics_csv,
            summary_only,
            out,
        } => {
            let config = SimConfig {
                n_networks: networks,
                n_treatments: (min_treatments, max_treatments),
                n_trials: (min_trials, max_trials),
                seed,
                tolerance,
                record_timings: timings,
                ..SimConfig::default()
            };
            simulate(&config, metrics_csv.as_deref(), summary_only, &out)
        }
        Command::Metrics { data, format, out } => metrics(&data, format, &out),
        Command::IngestCheck { data, format, out } => ingest_check(&data, format, &out),
        Command::Graph { data, graph, out } => graph_dot(&data, graph, &out),
    }
}

fn load(data: &DataArgs) -> Result<(NmaDataset, ModelSpec), Error> {
    let options = LoadOptions {
        continuity_correction: !data.no_continuity_correction,
    };
    let mut ds = load_arm_csv(&data.input, options)?;
    if let Some(b) = &data.baseline {
        ds = ds.with_baseline(b)?;
    }
    Ok((ds, ModelSpec::from_tau(data.tau)?))
}

fn emit(out: &OutArgs, text: &str) -> Result<(), Error> {
    match &out.output {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn build_matrix(ds: &NmaDataset, spec: &ModelSpec, name: MatrixName) -> Result<LabeledMatrix, Error> {
    let bi = || bipartite_from_dataset(ds, spec);
    let uni = || -> Result<UnipartiteGraph, Error> { Ok(UnipartiteGraph::from_evidence(&direct_evidence(ds, spec)?)) };
    Ok(match name {
        MatrixName::C => build_contrast_map(ds),
        MatrixName::X => build_design_matrix(ds),
        MatrixName::Sigma => build_covariance(ds, spec)?.sigma_matrix(),
        MatrixName::W => build_covariance(ds, spec)?.weight_matrix(),
        MatrixName::H => HatMatrices::compute(ds, spec)?.trial_level,
        MatrixName::Harm => HatMatrices::compute(ds, spec)?.arm_level,
        MatrixName::Hagg => HatMatrices::compute(ds, spec)?.aggregate,
        MatrixName::Wagg => direct_evidence(ds, spec)?.weight_matrix(),
        MatrixName::B => bi().biadjacency(),
        MatrixName::Bagg => direct_evidence(ds, spec)?.incidence(),
        MatrixName::Bbi => bi().incidence(true),
        MatrixName::A => bi().adjacency(),
        MatrixName::Aagg => uni()?.adjacency(),
        MatrixName::R => resistance_matrix(ds, spec).to_labeled(),
        MatrixName::J => nodal_currents(ds),
        MatrixName::I => arm_currents(ds, spec)?,
        MatrixName::T => transition_unipartite(&uni()?)?.matrix,
        MatrixName::Pup => transition_up(&bi())?.matrix,
        MatrixName::Pdown => transition_down(&bi())?.matrix,
        MatrixName::P => two_step(&transition_up(&bi())?, &transition_down(&bi())?)?.matrix,
        MatrixName::Ptilde => renormalize(&two_step(&transition_up(&bi())?, &transition_down(&bi())?)?)?.matrix,
    })
}

#[derive(Serialize)]
struct NamedTable {
    name: String,
    #[serde(flatten)]
    table: MatrixTable,
}

fn matrices(data: &DataArgs, which: &[MatrixName], format: MatrixFormat, out: &OutArgs) -> Outcome {
    let (ds, spec) = load(data)?;
    let names = if which.is_empty() {
        MatrixName::all()
    } else {
        which.to_vec()
    };
    let mut built = Vec::with_capacity(names.len());
    for n in names {
        built.push((n.name(), build_matrix(&ds, &spec, n)?));
    }
    let text = match format {
        MatrixFormat::Json => {
            let tables: Vec<NamedTable> = built
                .iter()
                .map(|(name, m)| NamedTable {
                    name: name.clone(),
                    table: m.table(),
                })
                .collect();
            if tables.len() == 1 {
                to_json(&tables[0])
            } else {
                to_json(&tables)
            }
        }
        MatrixFormat::Pretty | MatrixFormat::Csv => {
            let mut s = String::new();
            let single = built.len() == 1;
            for (name, m) in &built {
                if !single {
                    s.push_str(&format!("# {name}\n"));
                }
                if format == MatrixFormat::Csv {
                    s.push_str(&m.to_csv()?);
                } else {
                    s.push_str(&m.pretty(3));
                }
                if !single {
                    s.push('\n');
                }
            }
            s
        }
    };
    emit(out, &text)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn flow(
    data: &DataArgs,
    from: &str,
    to: &str,
    graph: GraphKind,
    method: FlowMethod,
    walk: WalkConfig,
    format: FlowFormat,
    out: &OutArgs,
) -> Outcome {
    let (ds, spec) = load(data)?;
    ds.treatment_id(from)?;
    ds.treatment_id(to)?;
    let bg = bipartite_from_dataset(&ds, &spec);
    let ug = UnipartiteGraph::from_evidence(&direct_evidence(&ds, &spec)?);
    let chain = || -> Result<WalkChain, Error> {
        match graph {
            GraphKind::Uni => WalkChain::unipartite(&transition_unipartite(&ug)?, &ug),
            GraphKind::Bi => WalkChain::bipartite(&transition_down(&bg)?, &transition_up(&bg)?, &bg),
        }
    };
    let net: FlowNetwork = match method {
        FlowMethod::Hat => {
            let hats = HatMatrices::compute(&ds, &spec)?;
            match graph {
                GraphKind::Uni => flow_network(&expand_consistency(&hats.aggregate, from, to)?, &ug, from, to)?,
                GraphKind::Bi => flow_network(&expand_consistency(&hats.arm_level, from, to)?, &bg, from, to)?,
            }
        }
        FlowMethod::Walk if from == to => zero_flow(&ds, &spec, graph, from)?,
        FlowMethod::MonteCarlo if from == to => zero_flow(&ds, &spec, graph, from)?,
        FlowMethod::Walk => expected_net_crossings(&chain()?, from, to)?,
        FlowMethod::MonteCarlo => monte_carlo_crossings(&chain()?, from, to, walk)?,
    };
    let text = match format {
        FlowFormat::Json => to_json(&net),
        FlowFormat::Dot => flow_dot(&net),
        FlowFormat::Pretty => {
            let mut s = format!("{} -> {}\n", net.source, net.sink);
            for f in &net.flows {
                s.push_str(&format!(
                    "{:<24} {:>7.3}  {} -> {}",
                    f.edge.to_string(),
                    f.value,
                    f.from,
                    f.to
                ));
                if let Some(se) = f.std_error {
                    s.push_str(&format!("  (se {se:.3})"));
                }
                s.push('\n');
            }
            s
        }
    };
    emit(out, &text)?;
    Ok(())
}

/// A comparison of a treatment with itself carries no flow.
fn zero_flow(ds: &NmaDataset, spec: &ModelSpec, graph: GraphKind, node: &str) -> Result<FlowNetwork, Error> {
    let hats = HatMatrices::compute(ds, spec)?;
    let hat = match graph {
        GraphKind::Uni => &hats.aggregate,
        GraphKind::Bi => &hats.arm_level,
    };
    let row = expand_consistency(hat, node, node)?;
    FlowNetwork::from_values(node, node, &row.col_labels, &row.values, None)
}

fn verify(data: &DataArgs, tolerance: f64, format: ReportFormat, out: &OutArgs) -> Outcome {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()).into());
    }
    let (ds, spec) = load(data)?;
    let reports = verify_all(&ds, &spec, tolerance)?;
    let text = match format {
        ReportFormat::Json => to_json(&reports),
        ReportFormat::Pretty => reports
            .iter()
            .map(|r| {
                format!(
                    "{} {:<26} max |diff| {:.3e}  tol {:.3e}  [{}x{}]\n",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_abs_diff,
                    r.tolerance,
                    r.dims[0],
                    r.dims[1]
                )
            })
            .collect(),
    };
    emit(out, &text)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    summary: &'a SimulationSummary,
}

fn simulate(config: &SimConfig, metrics_csv: Option<&Path>, summary_only: bool, out: &OutArgs) -> Outcome {
    let report = run_simulation(config)?;
    let mut text = String::new();
    if !summary_only {
        for r in &report.records {
            text.push_str(&serde_json::to_string(r).expect("serializable"));
            text.push('\n');
        }
    }
    let line = SummaryLine {
        summary: &report.summary,
    };
    text.push_str(&serde_json::to_string(&line).expect("serializable"));
    text.push('\n');
    emit(out, &text)?;
    if let Some(path) = metrics_csv {
        fs::write(path, report.metrics_csv()?).map_err(Error::from)?;
    }
    if report.summary.all_pass {
        Ok(())
    } else {
        let failed = report.records.iter().filter(|r| !r.pass()).count();
        Err(Failure::Check(format!("{failed} of {} networks", report.records.len())))
    }
}

#[derive(Serialize)]
struct GraphMetrics {
    bipartite: BipartiteMetrics,
    unipartite: UnipartiteMetrics,
}

fn metrics(data: &DataArgs, format: ReportFormat, out: &OutArgs) -> Outcome {
    let (ds, spec) = load(data)?;
    let m = GraphMetrics {
        bipartite: bipartite_from_dataset(&ds, &spec).metrics(),
        unipartite: UnipartiteGraph::from_evidence(&direct_evidence(&ds, &spec)?).metrics(),
    };
    let text = match format {
        ReportFormat::Json => to_json(&m),
        ReportFormat::Pretty => {
            let value = serde_json::to_value(&m).expect("serializable");
            let mut s = String::new();
            for (graph, fields) in value.as_object().expect("object") {
                s.push_str(&format!("{graph}\n"));
                flatten_pretty(&mut s, "", fields);
            }
            s
        }
    };
    emit(out, &text)?;
    Ok(())
}

fn flatten_pretty(s: &mut String, prefix: &str, v: &serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_pretty(s, &key, x);
            }
        }
        serde_json::Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => s.push_str(&format!("  {prefix:<28} {x:.3}\n")),
            _ => s.push_str(&format!("  {prefix:<28} {n}\n")),
        },
        other => s.push_str(&format!("  {prefix:<28} {other}\n")),
    }
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    treatments: usize,
    trials: usize,
    arms: usize,
    contrasts: usize,
    multi_arm_trials: usize,
    baseline: &'a str,
    treatment_names: &'a [String],
}

fn ingest_check(data: &DataArgs, format: ReportFormat, out: &OutArgs) -> Outcome {
    let (ds, _) = load(data)?;
    let s = IngestSummary {
        treatments: ds.n_treatments(),
        trials: ds.n_trials(),
        arms: ds.n_arms(),
        contrasts: ds.n_contrasts(),
        multi_arm_trials: ds.trial_ids().filter(|t| ds.trial_arms(*t).len() > 2).count(),
        baseline: ds.treatment_name(ds.baseline()),
        treatment_names: ds.treatments(),
    };
    let text = match format {
        ReportFormat::Json => to_json(&s),
        ReportFormat::Pretty => format!(
            "ok: {} treatments, {} trials ({} multi-arm), {} arms, {} contrasts, baseline {}\n",
            s.treatments, s.trials, s.multi_arm_trials, s.arms, s.contrasts, s.baseline
        ),
    };
    emit(out, &text)?;
    Ok(())
}

fn graph_dot(data: &DataArgs, graph: GraphKind, out: &OutArgs) -> Outcome {
    let (ds, spec) = load(data)?;
    let text = match graph {
        GraphKind::Bi => bipartite_dot(&bipartite_from_dataset(&ds, &spec)),
        GraphKind::Uni => unipartite_dot(&UnipartiteGraph::from_evidence(&direct_evidence(&ds, &spec)?)),
    };
    emit(out, &text)?;
    Ok(())
}
