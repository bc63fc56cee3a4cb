use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use sparsenas::bayes::SearchConfig;
use sparsenas::curvature::HessianMode;
use sparsenas::graph::{export_architecture, import_architecture, ArchExport, SuperGraph};
use sparsenas::io::{
    gen_synthetic_cell_task, gen_synthetic_dag_task, load_mnist_idx, parse_config, read_arch_json, write_dot,
    write_json, write_metrics_csv, MaskExport, Mnist, SyntheticTask,
};
use sparsenas::nn::Activation;
use sparsenas::search::{
    build_network, default_plans, graph_metric, net_metric, param_counts, retrain_graph, retrain_net, run_compression, run_proxy_cells,
    run_proxyless, surviving_widths, GraphOutcome, SearchReport,
};
use sparsenas::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sparsenas", version, about = "Sparse Bayesian architecture search and structured compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON configuration; an empty file selects every default.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Directory holding the four MNIST IDX files (falls back to $MNIST_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides the configured curvature mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Exact,
    ApproxHessian,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Dot,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-edge search on the planted synthetic task.
    Search(Common),
    /// Tied-cell search on the stacked synthetic task.
    ProxySearch(Common),
    /// Structured compression of the configured LeNet on MNIST.
    Compress(Common),
    /// Retrains a searched architecture (arch.json) or compressed network (masks.json).
    Retrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Test metric of an architecture or compressed network.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Re-renders an artifact as JSON or DOT.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
    },
}

/// A loaded configuration with CLI overrides applied.
struct Setup {
    config: SearchConfig,
    hash: String,
    out: PathBuf,
    data: Option<PathBuf>,
}

impl Setup {
    fn new(common: &Common) -> Result<Self> {
        let loaded = parse_config(&common.config)?;
        let mut config = loaded.config;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(mode) = common.mode {
            config.hessian_mode = match mode {
                Mode::Exact => HessianMode::Exact,
                Mode::ApproxHessian => HessianMode::Approx,
            };
        }
        let hash = sparsenas::io::config_hash(&config);
        fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        Ok(Setup {
            config,
            hash,
            out: common.out.clone(),
            data: common.data.clone().or_else(|| std::env::var_os("MNIST_DIR").map(PathBuf::from)),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn mnist(&self) -> Result<Mnist> {
        let dir = self.data.as_ref().ok_or_else(|| Error::Config {
            field: "--data".into(),
            reason: "MNIST directory required (or set MNIST_DIR)".into(),
        })?;
        load_mnist_idx(dir)
    }

    fn task(&self, cells: bool) -> Result<SyntheticTask> {
        let c = &self.config;
        if cells {
            gen_synthetic_cell_task(c.seed, &c.task, Activation::Tanh, c.sigma2)
        } else {
            gen_synthetic_dag_task(c.seed, &c.task, Activation::Tanh, c.sigma2)
        }
    }

    fn arch(&self, graph: &SuperGraph) -> ArchExport {
        let mut arch = export_architecture(graph);
        arch.config_hash = Some(self.hash.clone());
        arch.seed = Some(self.config.seed);
        arch
    }
}

fn search(common: &Common, cells: bool) -> Result<()> {
    let setup = Setup::new(common)?;
    let task = setup.task(cells)?;
    let GraphOutcome { graph, report, .. } = if cells {
        run_proxy_cells(task.graph.clone(), &task.train, &task.test, &setup.config)?
    } else {
        run_proxyless(task.graph.clone(), &task.train, &task.test, &setup.config)?
    };
    write_json(&setup.arch(&graph), &setup.path("arch.json"))?;
    write_dot(&graph, &setup.path("arch.dot"))?;
    write_metrics_csv(&report.rows, &setup.path("metrics.csv"))?;
    let recovered = SyntheticTask::recovered(&graph);
    let summary = json!({
        "config_hash": setup.hash,
        "test_error": graph_metric(&graph, &task.test)?,
        "alive_edges": graph.alive_count(),
        "planted": task.planted,
        "recovered": recovered,
        "exact_recovery": recovered == task.planted,
        "report": report_value(&report)?,
    });
    write_json(&summary, &setup.path("report.json"))?;
    println!(
        "{} iterations, {} edges alive, exact recovery: {}",
        report.iterations_run,
        graph.alive_count(),
        recovered == task.planted
    );
    Ok(())
}

fn report_value(report: &SearchReport) -> Result<Value> {
    Ok(serde_json::to_value(report)?)
}

fn mask_export(setup: &Setup, layers: Vec<sparsenas::nn::Layer>, masks: Vec<Option<sparsenas::bayes::LayerMask>>) -> Result<MaskExport> {
    let network = setup.config.compress.network;
    let widths = surviving_widths(network, &layers)?;
    let (surviving, total) = param_counts(&layers);
    let mut export = MaskExport::new(network, layers, masks, widths, surviving, total);
    export.config_hash = Some(setup.hash.clone());
    export.seed = Some(setup.config.seed);
    Ok(export)
}

fn compress(common: &Common) -> Result<()> {
    let setup = Setup::new(common)?;
    let Mnist { train, test } = setup.mnist()?;
    let c = &setup.config;
    let plans = default_plans(c.compress.network, c.compress.layer_lambdas.as_deref(), c.compress.patterns.as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let layers = build_network(c.compress.network, &mut rng);
    let outcome = run_compression(layers, &train, &test, c, &plans)?;
    write_metrics_csv(&outcome.report.rows, &setup.path("metrics.csv"))?;
    let test_error = net_metric(&outcome.layers, &test)?;
    let export = mask_export(&setup, outcome.layers, outcome.masks)?;
    write_json(&export, &setup.path("masks.json"))?;
    let summary = json!({
        "config_hash": setup.hash,
        "network": export.network,
        "test_error": test_error,
        "widths": export.widths,
        "surviving_params": export.surviving_params,
        "total_params": export.total_params,
        "surviving_ratio": export.surviving_params as f64 / export.total_params as f64,
        "report": report_value(&outcome.report)?,
    });
    write_json(&summary, &setup.path("report.json"))?;
    println!(
        "test error {:.4}, widths {:?}, {}/{} parameters",
        test_error, export.widths, export.surviving_params, export.total_params
    );
    Ok(())
}

/// Either artifact kind, told apart by its fields.
enum Artifact {
    Arch(ArchExport),
    Masks(Box<MaskExport>),
}

fn read_artifact(path: &Path) -> Result<Artifact> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if value.get("masks").is_some() {
        Ok(Artifact::Masks(Box::new(MaskExport::read(path)?)))
    } else {
        Ok(Artifact::Arch(read_arch_json(path)?))
    }
}

fn retrain(common: &Common, input: &Path) -> Result<()> {
    let setup = Setup::new(common)?;
    let report = match read_artifact(input)? {
        Artifact::Arch(arch) => {
            let mut graph = import_architecture(&arch)?;
            let task = setup.task(!arch.cell_inputs.is_empty())?;
            let report = retrain_graph(&mut graph, &task.train, &task.test, &setup.config)?;
            write_json(&setup.arch(&graph), &setup.path("arch.json"))?;
            report
        }
        Artifact::Masks(export) => {
            let Mnist { train, test } = setup.mnist()?;
            let MaskExport { mut layers, masks, .. } = *export;
            let report = retrain_net(&mut layers, &masks, &train, &test, &setup.config)?;
            write_json(&mask_export(&setup, layers, masks)?, &setup.path("masks.json"))?;
            report
        }
    };
    write_json(&report, &setup.path("retrain.json"))?;
    println!("test metric {:.4} -> {:.4} after {} epochs", report.before, report.after, report.epochs);
    Ok(())
}

fn eval(common: &Common, input: &Path) -> Result<()> {
    let setup = Setup::new(common)?;
    let value = match read_artifact(input)? {
        Artifact::Arch(arch) => {
            let graph = import_architecture(&arch)?;
            let task = setup.task(!arch.cell_inputs.is_empty())?;
            json!({ "kind": "architecture", "test_metric": graph_metric(&graph, &task.test)? })
        }
        Artifact::Masks(export) => {
            let Mnist { test, .. } = setup.mnist()?;
            json!({ "kind": "masks", "test_metric": net_metric(&export.layers, &test)? })
        }
    };
    write_json(&value, &setup.path("eval.json"))?;
    println!("{value}");
    Ok(())
}

fn export(common: &Common, input: &Path, format: Format) -> Result<()> {
    let setup = Setup::new(common)?;
    match (read_artifact(input)?, format) {
        (Artifact::Arch(arch), Format::Dot) => write_dot(&import_architecture(&arch)?, &setup.path("arch.dot")),
        (Artifact::Arch(arch), Format::Json) => {
            let graph = import_architecture(&arch)?;
            let mut again = export_architecture(&graph);
            again.config_hash = arch.config_hash;
            again.seed = arch.seed;
            again.searched_edges = arch.searched_edges;
            for (edge, original) in again.edges.iter_mut().zip(&arch.edges) {
                edge.id = original.id;
            }
            write_json(&again, &setup.path("arch.json"))
        }
        (Artifact::Masks(export), Format::Json) => write_json(&*export, &setup.path("masks.json")),
        (Artifact::Masks(_), Format::Dot) => Err(Error::Config {
            field: "--format".into(),
            reason: "compressed networks have no graph rendering; use json".into(),
        }),
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Search(common) => search(common, false),
        Command::ProxySearch(common) => search(common, true),
        Command::Compress(common) => compress(common),
        Command::Retrain { common, input } => retrain(common, input),
        Command::Eval { common, input } => eval(common, input),
        Command::Export { common, input, format } => export(common, input, *format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
