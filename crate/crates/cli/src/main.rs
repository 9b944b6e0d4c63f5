//! `thermoforge`: dataset generation, FDM solving, training, evaluation and
//! ablations for the heat-source layout surrogate.

mod config;
mod experiment;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thermoforge::data::{generate_dataset, Dataset, GenerateOptions, Split, SplitCounts};
use thermoforge::fdm::{solve_fdm, SolverConfig, SolverMethod};
use thermoforge::grid::LayoutSpec;
use thermoforge::loss::{LossVariant, TargetMode};
use thermoforge::metrics::{evaluate_dataset, export_heatmap};
use thermoforge::net::{
    load_checkpoint, save_checkpoint, Activation, NetworkConfig, NormKind, PaddingMode, PredictionHead, UNet, Upsample,
};
use thermoforge::trainer::{predict, TrainConfig, TrainMode};
use thermoforge::{Error, Result};

use config::{default_counts, parse_counts, resolve_case, RunConfig};

#[derive(Parser)]
#[command(name = "thermoforge", version, about = "Physics-informed temperature field surrogate for heat-source layouts")]
struct Cli {
    /// JSON run configuration; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample layouts and write a dataset directory.
    Generate(GenerateArgs),
    /// Solve one layout with the finite-difference solver.
    Solve(SolveArgs),
    /// Train a surrogate and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Run the ablation matrix and write a combined CSV.
    Ablate(AblateArgs),
}

#[derive(Args, Clone)]
struct CaseArgs {
    /// case1, case2, desk, or a path to a case JSON file.
    #[arg(long)]
    case: Option<String>,
    /// Cells per side of the grid.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Residual tolerance of the FDM solver.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Split sizes as train,val,test.
    #[arg(long)]
    counts: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Solve and store the FDM temperature of every layout.
    #[arg(long)]
    labels: bool,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Layout JSON to solve.
    #[arg(long)]
    layout: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output field (.tfpf); the report is written beside it as .json.
    #[arg(long)]
    out: PathBuf,
    /// Also write a PNG heatmap beside the field.
    #[arg(long)]
    heatmap: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Jacobi,
    Sor,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Physics,
    Supervised,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Pohem,
    L1,
    Mse,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Gn,
    Bn,
    In,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpsampleArg {
    Bilinear,
    Transpose,
}

#[derive(Clone, Copy, ValueEnum)]
enum PaddingArg {
    Reflect,
    Zeros,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Gelu,
    Relu,
    Tanh,
}

/// Training flags shared by `train` and `ablate`.
#[derive(Args, Clone)]
struct TrainingArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Per-epoch multiplicative learning-rate decay.
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long, value_enum)]
    upsample: Option<UpsampleArg>,
    #[arg(long, value_enum)]
    padding: Option<PaddingArg>,
    /// Kelvin per unit of raw network output.
    #[arg(long)]
    output_scale: Option<f64>,
    /// Train/val/test sizes sampled in memory when no --dataset is given.
    #[arg(long)]
    counts: Option<String>,
    /// Dataset directory to train on instead of sampling in memory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: TrainingArgs,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Loss: pohem, l1 or mse. Supervised mode accepts l1 and mse.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Keep the target field out of the gradient (false lets it flow).
    #[arg(long, action = clap::ArgAction::Set, value_name = "BOOL")]
    detach_target: Option<bool>,
    /// Number of labelled layouts for supervised training.
    #[arg(long)]
    labels: Option<usize>,
    /// Checkpoint path. The epoch report is written beside it as .csv and
    /// a summary with test metrics as .json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory for metrics.csv, summary.json and heatmaps.
    #[arg(long)]
    out_dir: PathBuf,
    /// Fail on missing labels instead of solving them.
    #[arg(long)]
    no_solve: bool,
    #[command(flatten)]
    solver: SolverArgs,
    /// Export prediction and error heatmaps for the first N samples.
    #[arg(long, default_value_t = 0)]
    heatmaps: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    /// P-OHEM loss, reflect padding, detached target.
    Baseline,
    Mse,
    L1,
    Zeros,
    /// Gradient flows through the target field.
    Attached,
    Bn,
    In,
    Transpose,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: TrainingArgs,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "baseline,mse,zeros,attached")]
    variants: Vec<Variant>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Placement { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::MissingLabel(_) => 5,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = RunConfig::load(cli.config.as_deref()).and_then(|rc| match cli.command {
        Command::Generate(a) => cmd_generate(&rc, a),
        Command::Solve(a) => cmd_solve(&rc, a),
        Command::Train(a) => cmd_train(&rc, a),
        Command::Evaluate(a) => cmd_evaluate(&rc, a),
        Command::Ablate(a) => cmd_ablate(&rc, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("THERMOFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("THERMOFORGE_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Exits with status 2 and usage text when a required value is missing.
fn require<T>(v: Option<T>, flag: &str) -> T {
    v.unwrap_or_else(|| {
        Cli::command()
            .error(clap::error::ErrorKind::MissingRequiredArgument, format!("{flag} is required"))
            .exit()
    })
}

fn case_of(rc: &RunConfig, a: &CaseArgs) -> Result<thermoforge::data::CaseConfig> {
    let name = require(a.case.clone().or(rc.case.clone()), "--case");
    resolve_case(&name, a.grid.or(rc.grid), rc.boundary)
}

fn solver_of(rc: &RunConfig, a: &SolverArgs) -> Result<SolverConfig> {
    let mut s = rc.solver.unwrap_or_default();
    if let Some(t) = a.tol {
        s.tol = t;
    }
    if let Some(m) = a.method {
        s.method = match m {
            MethodArg::Jacobi => SolverMethod::Jacobi,
            MethodArg::Sor => SolverMethod::Sor,
        };
    }
    if let Some(w) = a.omega {
        s.omega = w;
    }
    if let Some(n) = a.max_iters {
        s.max_iters = n;
    }
    s.validate()?;
    Ok(s)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn cmd_generate(rc: &RunConfig, a: GenerateArgs) -> Result<()> {
    let case = case_of(rc, &a.case)?;
    let (train, val, test) = match &a.counts {
        Some(s) => parse_counts(s)?,
        None => default_counts(&case),
    };
    let out = require(a.out.or(rc.out.clone()), "--out");
    let opts = GenerateOptions {
        counts: SplitCounts::new(train, val, test),
        seed: a.seed.or(rc.seed).unwrap_or(0),
        with_labels: a.labels,
        solver: solver_of(rc, &a.solver)?,
    };
    let manifest = generate_dataset(&case, &opts, &out)?;
    for note in &manifest.notes {
        eprintln!("note: {note}");
    }
    println!(
        "wrote {} samples ({} train, {} val, {} test) to {}",
        manifest.samples.len(),
        manifest.counts.train,
        manifest.counts.val,
        manifest.counts.test,
        out.display()
    );
    Ok(())
}

fn cmd_solve(rc: &RunConfig, a: SolveArgs) -> Result<()> {
    let case = case_of(rc, &a.case)?;
    let solver = solver_of(rc, &a.solver)?;
    let layout = LayoutSpec::load(&a.layout)?;
    let (field, report) = solve_fdm(&case.problem(layout)?, &solver)?;
    ensure_parent(&a.out)?;
    field.save(&a.out)?;
    let report_path = a.out.with_extension("json");
    write_json(
        &report_path,
        &json!({
            "iterations": report.iterations,
            "final_residual": report.final_residual,
            "converged": report.converged,
            "solver": solver,
            "max_temperature_k": field.max(),
        }),
    )?;
    if a.heatmap {
        export_heatmap(&field, &a.out.with_extension("png"))?;
    }
    println!(
        "converged={} iterations={} residual={:e} max={:.4} K",
        report.converged,
        report.iterations,
        report.final_residual,
        field.max()
    );
    Ok(())
}

/// Network and training configuration after config file and flags.
struct Resolved {
    case: thermoforge::data::CaseConfig,
    network: NetworkConfig,
    head: PredictionHead,
    training: TrainConfig,
    solver: SolverConfig,
    counts: (usize, usize, usize),
    dataset: Option<PathBuf>,
}

fn resolve_training(rc: &RunConfig, a: &TrainingArgs) -> Result<Resolved> {
    let dataset = a.dataset.clone().or(rc.dataset.clone());
    let case = match (&dataset, a.case.case.as_ref().or(rc.case.as_ref())) {
        (Some(dir), None) => Dataset::open(dir)?.manifest.case,
        _ => case_of(rc, &a.case)?,
    };
    let mut network = rc.network.clone().unwrap_or_default();
    if let Some(n) = a.norm {
        network.norm = match n {
            NormArg::Gn => NormKind::Group,
            NormArg::Bn => NormKind::Batch,
            NormArg::In => NormKind::Instance,
        };
    }
    if let Some(g) = a.groups {
        network.groups = g;
    }
    if let Some(w) = a.base_width {
        network.base_width = w;
    }
    if let Some(d) = a.depth {
        network.depth = d;
    }
    if let Some(act) = a.activation {
        network.activation = match act {
            ActivationArg::Gelu => Activation::Gelu,
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
        };
    }
    if let Some(u) = a.upsample {
        network.upsample = match u {
            UpsampleArg::Bilinear => Upsample::Bilinear,
            UpsampleArg::Transpose => Upsample::Transpose,
        };
    }
    if let Some(p) = a.padding {
        network.conv_padding_mode = match p {
            PaddingArg::Reflect => PaddingMode::Reflect,
            PaddingArg::Zeros => PaddingMode::Zeros,
        };
    }
    network.validate()?;
    let mut head = rc.head.unwrap_or_default();
    if let Some(s) = a.output_scale {
        head.output_scale_k = s;
    }
    head.validate()?;

    let mut t = rc.training();
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr0 = v;
    }
    if let Some(v) = a.lr_decay {
        t.lr_decay = v;
    }
    if let Some(v) = a.eta1 {
        t.loss.eta1 = v;
    }
    if let Some(v) = a.eta2 {
        t.loss.eta2 = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    let counts = match &a.counts {
        Some(s) => parse_counts(s)?,
        None => default_counts(&case),
    };
    Ok(Resolved {
        solver: solver_of(rc, &a.solver)?,
        case,
        network,
        head,
        training: t,
        counts,
        dataset,
    })
}

fn splits_for(r: &Resolved) -> Result<experiment::Splits> {
    match &r.dataset {
        Some(dir) => {
            let ds = Dataset::open(dir)?;
            if ds.case() != &r.case {
                return Err(Error::Config(format!(
                    "dataset {} was generated for a different case than --case",
                    dir.display()
                )));
            }
            experiment::dataset_splits(&ds, &r.solver)
        }
        None => experiment::sample_splits(&r.case, r.counts, r.training.seed, &r.solver),
    }
}

fn progress(quiet: bool, tag: String) -> impl FnMut(&thermoforge::trainer::EpochRecord) {
    move |r| {
        if !quiet {
            let val = r.val_mae.map(|v| format!("{v:.4} K")).unwrap_or_else(|| "-".into());
            eprintln!("{tag}epoch {:>3} lr {:.6} loss {:.6e} val_mae {val}", r.epoch, r.lr, r.train_loss);
        }
    }
}

fn cmd_train(rc: &RunConfig, a: TrainArgs) -> Result<()> {
    let mut r = resolve_training(rc, &a.common)?;
    if let Some(m) = a.mode {
        r.training.mode = match m {
            ModeArg::Physics => TrainMode::Physics,
            ModeArg::Supervised => TrainMode::Supervised,
        };
    }
    if let Some(l) = a.loss {
        let v = match l {
            LossArg::Pohem => LossVariant::Pohem,
            LossArg::L1 => LossVariant::L1,
            LossArg::Mse => LossVariant::Mse,
        };
        match r.training.mode {
            TrainMode::Physics => r.training.loss.variant = v,
            TrainMode::Supervised => r.training.supervised_loss = v,
        }
    }
    if let Some(d) = a.detach_target {
        r.training.target_mode = if d { TargetMode::Detached } else { TargetMode::Attached };
    }
    r.training.validate()?;
    let out = require(a.out.or(rc.out.clone()), "--out");
    let net = UNet::new(r.network.clone(), r.head)?;
    let splits = splits_for(&r)?;
    let mut observer = progress(a.common.quiet, String::new());
    let outcome = experiment::run(&net, &r.case, &splits, &r.training, a.labels, &r.solver, &mut observer)?;

    let labels = (r.training.mode == TrainMode::Supervised).then(|| a.labels.unwrap_or(splits.train.len()));
    let metadata = experiment::run_metadata(&r.case, &r.training, r.counts, r.dataset.as_deref(), labels);
    ensure_parent(&out)?;
    save_checkpoint(&out, &experiment::checkpoint(&r.network, r.head, outcome.params, metadata))?;
    fs::write(out.with_extension("csv"), outcome.report.to_csv())?;
    write_json(
        &out.with_extension("json"),
        &json!({
            "test": outcome.test,
            "val_mae": outcome.report.records.iter().map(|r| r.val_mae).collect::<Vec<_>>(),
            "train_loss": outcome.report.records.iter().map(|r| r.train_loss).collect::<Vec<_>>(),
            "wall_seconds": outcome.report.wall_seconds,
        }),
    )?;
    if let Some(m) = outcome.test {
        println!(
            "test mae {:.4} K cmae {:.4} K maxae {:.4} K mtae {:.4} K",
            m.mae_k, m.cmae_k, m.maxae_k, m.mtae_k
        );
    }
    println!("wrote {} ({:.1} s)", out.display(), outcome.report.wall_seconds);
    Ok(())
}

fn cmd_evaluate(rc: &RunConfig, a: EvaluateArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let net = ck.network()?;
    let ds = Dataset::open(&a.dataset)?;
    let solver = solver_of(rc, &a.solver)?;
    let eval = evaluate_dataset(&net, &ck.params, &ds, split, (!a.no_solve).then_some(&solver))?;
    fs::create_dir_all(&a.out_dir)?;
    eval.write_csv(&a.out_dir.join("metrics.csv"))?;
    write_json(&a.out_dir.join("summary.json"), &json!({ "split": split, "samples": eval.rows.len(), "mean": eval.mean }))?;
    for e in ds.manifest.entries(split).take(a.heatmaps) {
        let layout = ds.layout(e)?;
        let pred = predict(&net, &ck.params, ds.case(), &layout)?;
        export_heatmap(&pred, &a.out_dir.join(format!("{:05}_pred.png", e.id)))?;
        let reference = match e.temperature {
            Some(_) => ds.label(e)?,
            None => solve_fdm(&ds.case().problem(layout)?, &solver)?.0,
        };
        let err = thermoforge::grid::ScalarField::from_values(
            *pred.grid(),
            pred.values().iter().zip(reference.values()).map(|(p, r)| (p - r).abs()).collect(),
        )?;
        export_heatmap(&reference, &a.out_dir.join(format!("{:05}_fdm.png", e.id)))?;
        export_heatmap(&err, &a.out_dir.join(format!("{:05}_abs_error.png", e.id)))?;
    }
    let m = eval.mean;
    println!(
        "{} samples: mae {:.4} K cmae {:.4} K maxae {:.4} K mtae {:.4} K",
        eval.rows.len(),
        m.mae_k,
        m.cmae_k,
        m.maxae_k,
        m.mtae_k
    );
    Ok(())
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Baseline => "baseline",
        Variant::Mse => "mse",
        Variant::L1 => "l1",
        Variant::Zeros => "zeros",
        Variant::Attached => "attached",
        Variant::Bn => "bn",
        Variant::In => "in",
        Variant::Transpose => "transpose",
    }
}

fn apply_variant(v: Variant, network: &mut NetworkConfig, t: &mut TrainConfig) {
    match v {
        Variant::Baseline => {}
        Variant::Mse => t.loss.variant = LossVariant::Mse,
        Variant::L1 => t.loss.variant = LossVariant::L1,
        Variant::Zeros => network.conv_padding_mode = PaddingMode::Zeros,
        Variant::Attached => t.target_mode = TargetMode::Attached,
        Variant::Bn => network.norm = NormKind::Batch,
        Variant::In => network.norm = NormKind::Instance,
        Variant::Transpose => network.upsample = Upsample::Transpose,
    }
}

fn cmd_ablate(rc: &RunConfig, a: AblateArgs) -> Result<()> {
    let base = resolve_training(rc, &a.common)?;
    if a.seeds.is_empty() || a.variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    fs::create_dir_all(&a.out_dir)?;
    let mut rows = String::from("variant,seed,final_val_mae,test_mae,test_cmae,test_maxae,test_mtae,seconds\n");
    let mut summary: Vec<(Variant, Vec<f64>)> = a.variants.iter().map(|&v| (v, Vec::new())).collect();
    for &seed in &a.seeds {
        let mut r = Resolved {
            case: base.case.clone(),
            network: base.network.clone(),
            head: base.head,
            training: base.training,
            solver: base.solver,
            counts: base.counts,
            dataset: base.dataset.clone(),
        };
        r.training.seed = seed;
        r.training.mode = TrainMode::Physics;
        let splits = splits_for(&r)?;
        for (v, maes) in summary.iter_mut() {
            let (mut network, mut training) = (r.network.clone(), r.training);
            apply_variant(*v, &mut network, &mut training);
            training.validate()?;
            let net = UNet::new(network, r.head)?;
            let tag = format!("[{} seed {seed}] ", variant_name(*v));
            let mut observer = progress(a.common.quiet, tag.clone());
            let outcome = match experiment::run(&net, &r.case, &splits, &training, None, &r.solver, &mut observer) {
                Ok(o) => o,
                // A diverged variant ranks below every finite one; the rest of
                // the matrix still runs.
                Err(e @ Error::Divergence { .. }) => {
                    eprintln!("{tag}{e}");
                    rows.push_str(&format!("{},{seed},inf,inf,inf,inf,inf,nan\n", variant_name(*v)));
                    fs::write(a.out_dir.join("ablation.csv"), &rows)?;
                    maes.push(f64::INFINITY);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let m = outcome.test.unwrap_or_default();
            let val = outcome.report.final_val_mae().unwrap_or(f64::NAN);
            rows.push_str(&format!(
                "{},{seed},{val},{},{},{},{},{:.1}\n",
                variant_name(*v),
                m.mae_k,
                m.cmae_k,
                m.maxae_k,
                m.mtae_k,
                outcome.report.wall_seconds
            ));
            fs::write(a.out_dir.join("ablation.csv"), &rows)?;
            fs::write(
                a.out_dir.join(format!("{}_seed{seed}.csv", variant_name(*v))),
                outcome.report.to_csv(),
            )?;
            maes.push(m.mae_k);
        }
    }
    let mut table = String::from("variant,mean_test_mae,runs\n");
    for (v, maes) in &summary {
        let mean = maes.iter().sum::<f64>() / maes.len() as f64;
        table.push_str(&format!("{},{mean},{}\n", variant_name(*v), maes.len()));
        println!("{:<10} mean test MAE {mean:.4} K over {} seeds", variant_name(*v), maes.len());
    }
    fs::write(a.out_dir.join("summary.csv"), table)?;
    Ok(())
}
