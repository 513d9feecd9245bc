//! `codist`: train models, run cooperative distillation, generate scenarios
//! and inspect reports.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codist::features::{build_schema, ColumnDeclarations, Dataset, DatasetSchema, RawTable};
use codist::io::atomic_write;
use codist::learners::{fit, ModelSpec};
use codist::pipeline::{run, write_report, ExperimentConfig, Mode, RunManifest};
use codist::scenario::{gaussian_mixture, holdout_split, random_feature_drop, undersample_split, MixtureParams};
use codist::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "codist",
    version,
    about = "Cooperative knowledge distillation between trained classifiers"
)]
struct Cli {
    /// Overrides every seed the command would otherwise take from its inputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write it as a model file.
    Train(TrainArgs),
    /// Run a distillation experiment from a config or run manifest.
    Distill(DistillArgs),
    /// Generate participant datasets for a controlled experiment.
    MakeScenario {
        #[command(subcommand)]
        kind: ScenarioKind,
    },
    /// Pretty-print a report directory.
    Report { dir: PathBuf },
    /// Infer a schema file from a CSV.
    Schema(SchemaArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Model spec TOML.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Share of rows held out for the validation accuracy.
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
}

#[derive(Args)]
struct DistillArgs {
    config: PathBuf,
    /// Report directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Overrides the mode in the config.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "shared-data" => Ok(Mode::SharedData),
        "multi-site" => Ok(Mode::MultiSite),
        _ => Err(format!("unknown mode {s:?}; expected shared-data or multi-site")),
    }
}

#[derive(Args)]
struct SchemaArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    class_column: String,
    #[arg(long)]
    categorical: Vec<String>,
    #[arg(long)]
    ignore: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TableInput {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    class_column: String,
    /// Columns to treat as categorical when inferring the schema.
    #[arg(long)]
    categorical: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum ScenarioKind {
    /// k disjoint parts, part i with class i undersampled.
    UndersampleSplit {
        #[command(flatten)]
        input: TableInput,
        #[arg(long)]
        parts: usize,
        #[arg(long, default_value_t = 0.95)]
        rate: f64,
        /// Share of rows set aside as test.csv before splitting.
        #[arg(long, default_value_t = 0.0)]
        test_fraction: f64,
    },
    /// Two participants sharing only some feature columns.
    RandomFeatureDrop {
        #[command(flatten)]
        input: TableInput,
        #[arg(long)]
        shared: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// A synthetic Gaussian mixture with a schema.
    GaussianMixture {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        dims: usize,
        #[arg(long, default_value_t = 300)]
        rows_per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => train(args, cli.seed, cli.quiet),
        Command::Distill(args) => distill(args, cli.seed, cli.quiet),
        Command::MakeScenario { kind } => make_scenario(kind, cli.seed.unwrap_or(0), cli.quiet),
        Command::Report { dir } => report(dir),
        Command::Schema(args) => schema(args),
    }
}

fn train(args: &TrainArgs, seed: Option<u64>, quiet: bool) -> Result<()> {
    if !(0.0..1.0).contains(&args.validation_fraction) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction {} must lie in [0, 1)",
            args.validation_fraction
        )));
    }
    let schema = DatasetSchema::load(&args.schema)?;
    let data = Dataset::load(&schema, &args.data)?;
    let mut spec = ModelSpec::load(&args.model)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let samples = data.samples();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let held = (args.validation_fraction * samples.len() as f64).round() as usize;
    let (validation, train) = order.split_at(held);
    let train_set = samples.subset(train);
    let model = fit(&spec, schema.classes(), &train_set)?;
    atomic_write(&args.out, &model.serialize())?;
    if !quiet {
        println!("train accuracy: {:.4}", model.accuracy(&train_set)?);
        if !validation.is_empty() {
            println!(
                "validation accuracy: {:.4}",
                model.accuracy(&samples.subset(validation))?
            );
        }
        println!("wrote {}", args.out.display());
    }
    Ok(())
}

fn distill(args: &DistillArgs, seed: Option<u64>, quiet: bool) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(s) = seed {
        config.distillation.seed = s;
    }
    if let Some(m) = args.mode {
        config.distillation.mode = m;
    }
    let experiment = config.build()?;
    let started = std::time::Instant::now();
    let result = run(&experiment)?;
    let mut timings = result.timings.clone();
    timings.push(("total".into(), started.elapsed().as_secs_f64()));
    write_report(&result, &args.out)?;
    let models = args.out.join("models");
    std::fs::create_dir_all(&models)?;
    for (name, model) in result.models.iter().zip(&result.retrained) {
        atomic_write(&models.join(format!("{name}.model")), &model.serialize())?;
    }
    let manifest = RunManifest::new(&config, &experiment, &timings);
    atomic_write(&args.out.join("manifest.toml"), manifest.to_toml()?.as_bytes())?;
    if !quiet {
        print!("{}", String::from_utf8_lossy(&result.metrics_csv()?));
        println!(
            "{} counterfactuals generated, {:.1}% converged, {} kept",
            result.stats.attempted,
            100.0 * result.stats.convergence_rate(),
            result.stats.kept
        );
        if let Some(p) = &result.privacy {
            println!("{} messages scanned, {} private matches", p.messages, p.matches);
        }
        println!("report written to {}", args.out.display());
    }
    Ok(())
}

fn read_input(input: &TableInput) -> Result<(RawTable, DatasetSchema)> {
    let table = RawTable::read_csv(&input.input)?;
    let mut decl = ColumnDeclarations::new(input.class_column.clone());
    decl.categorical = input.categorical.clone();
    let schema = build_schema(&table, &decl)?;
    std::fs::create_dir_all(&input.out_dir)?;
    Ok((table, schema))
}

fn write_schema(schema: &DatasetSchema, path: &Path) -> Result<()> {
    atomic_write(path, schema.to_toml().as_bytes())
}

fn make_scenario(kind: &ScenarioKind, seed: u64, quiet: bool) -> Result<()> {
    let mut written: Vec<PathBuf> = Vec::new();
    match kind {
        ScenarioKind::UndersampleSplit {
            input,
            parts,
            rate,
            test_fraction,
        } => {
            let (table, schema) = read_input(input)?;
            let (test, rest) = holdout_split(&table, *test_fraction, seed)?;
            for (i, part) in undersample_split(&rest, &input.class_column, *parts, *rate, seed)?
                .iter()
                .enumerate()
            {
                let path = input.out_dir.join(format!("part_{i}.csv"));
                part.write_csv(&path)?;
                written.push(path);
            }
            if !test.is_empty() {
                let path = input.out_dir.join("test.csv");
                test.write_csv(&path)?;
                written.push(path);
            }
            let path = input.out_dir.join("schema.toml");
            write_schema(&schema, &path)?;
            written.push(path);
        }
        ScenarioKind::RandomFeatureDrop {
            input,
            shared,
            test_fraction,
        } => {
            let (table, schema) = read_input(input)?;
            let s = random_feature_drop(&table, &input.class_column, *shared, *test_fraction, seed)?;
            for (name, part, only) in [("a", &s.a, &s.a_only), ("b", &s.b, &s.b_only)] {
                let columns: Vec<&str> = s.shared.iter().chain(only).map(String::as_str).collect();
                let data_path = input.out_dir.join(format!("{name}.csv"));
                let schema_path = input.out_dir.join(format!("{name}.schema.toml"));
                part.write_csv(&data_path)?;
                write_schema(&schema.select(&columns)?, &schema_path)?;
                written.extend([data_path, schema_path]);
            }
            let path = input.out_dir.join("test.csv");
            s.test.write_csv(&path)?;
            written.push(path);
        }
        ScenarioKind::GaussianMixture {
            classes,
            dims,
            rows_per_class,
            separation,
            spread,
            out_dir,
        } => {
            let table = gaussian_mixture(&MixtureParams {
                classes: *classes,
                dims: *dims,
                rows_per_class: *rows_per_class,
                separation: *separation,
                spread: *spread,
                seed,
            })?;
            std::fs::create_dir_all(out_dir)?;
            let data_path = out_dir.join("data.csv");
            let schema_path = out_dir.join("schema.toml");
            table.write_csv(&data_path)?;
            write_schema(&build_schema(&table, &ColumnDeclarations::new("label"))?, &schema_path)?;
            written.extend([data_path, schema_path]);
        }
    }
    if !quiet {
        for p in written {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn format_table(title: &str, path: &Path) -> Result<String> {
    let table = RawTable::read_csv(path)?;
    let mut widths: Vec<usize> = table.header.iter().map(String::len).collect();
    for row in &table.rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = format!("{title}\n{}\n", line(&table.header));
    for row in &table.rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out.push('\n');
    Ok(out)
}

fn report(dir: &Path) -> Result<()> {
    let mut out = format_table("Accuracy", &dir.join("metrics.csv"))?;
    out += &format_table(
        "Kept counterfactuals (rows: students, columns: teachers)",
        &dir.join("count_matrix.csv"),
    )?;
    out += &format_table("Generation", &dir.join("summary.csv"))?;
    let lambdas = dir.join("lambdas.csv");
    if lambdas.exists() {
        out += &format_table("Balance terms", &lambdas)?;
    }
    match std::io::stdout().lock().write_all(out.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn schema(args: &SchemaArgs) -> Result<()> {
    let table = RawTable::read_csv(&args.data)?;
    let mut decl = ColumnDeclarations::new(args.class_column.clone());
    decl.categorical = args.categorical.clone();
    decl.ignore = args.ignore.clone();
    let schema = build_schema(&table, &decl)?;
    write_schema(&schema, &args.out)
}
