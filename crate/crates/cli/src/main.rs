//! `kdhtr`: generate glyph data, train teachers and students, evaluate,
//! and run the two-corpus protocol.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kdhtr_core::distill::{KdMode, KdWeightMode};
use kdhtr_core::harness::{
    emit_report, evaluate_run, gen_teacher_data, generate_toy_corpus, run_protocol, toy_corpus_pair, train_student_run,
    train_teacher_run, write_report, write_split_word_dataset, write_word_dataset, Corpus, OptimizerKind,
    ProtocolReport, ProtocolSettings, ProtocolSpec, ReportDocument, ReportFormat, RunConfig, StudentLayout,
    ToyCorpusSpec,
};
use kdhtr_core::models::TeacherArch;

#[derive(Debug, Parser)]
#[command(
    name = "kdhtr",
    version,
    about = "Character-teacher distillation for CTC word recognition"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative paths are placed under $KDHTR_OUTPUT_ROOT when set.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Repeat for more detail (info, debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the isolated-glyph dataset for the teacher inventory.
    GenTeacherData(GenTeacherData),
    /// Train a character classifier on the glyph dataset.
    TrainTeacher(TrainTeacher),
    /// Train the word recognizer, optionally distilling from a teacher.
    TrainStudent(TrainStudent),
    /// Decode a test manifest with a student checkpoint and score it.
    Evaluate(Evaluate),
    /// Train on each corpus, test on the other, for every configuration.
    RunProtocol(RunProtocol),
    /// Re-emit a protocol or evaluation result in another format.
    Report(Report),
    /// Write a synthetic toy-script word corpus.
    GenToyCorpus(GenToyCorpus),
}

#[derive(Debug, Args)]
struct DataFlags {
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    /// Directory written by gen-teacher-data.
    #[arg(long)]
    teacher_data: Option<PathBuf>,
    #[arg(long)]
    teacher_checkpoint: Option<PathBuf>,
    #[arg(long)]
    teacher_inventory: Option<PathBuf>,
    #[arg(long)]
    student_checkpoint: Option<PathBuf>,
    /// Word images have dark ink on a light background.
    #[arg(long)]
    invert_images: bool,
}

#[derive(Debug, Args)]
struct OptimFlags {
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct GenTeacherData {
    #[command(flatten)]
    data: DataFlags,
    #[arg(long)]
    per_class_count: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// `procedural` or `atlas:<dir>`.
    #[arg(long)]
    renderer: Option<String>,
}

#[derive(Debug, Args)]
struct TrainTeacher {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    optim: OptimFlags,
    #[arg(long)]
    arch: Option<TeacherArch>,
}

#[derive(Debug, Args)]
struct TrainStudent {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    optim: OptimFlags,
    #[arg(long)]
    kd_mode: Option<KdMode>,
    /// Student checkpoint used as the sequence teacher.
    #[arg(long)]
    conventional_teacher: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// `paper` or `hinton`.
    #[arg(long)]
    kd_weight_mode: Option<String>,
    /// `crnn` or `compact`.
    #[arg(long)]
    layout: Option<String>,
}

#[derive(Debug, Args)]
struct Evaluate {
    #[command(flatten)]
    data: DataFlags,
    #[arg(long, default_value = "tsv")]
    format: String,
}

#[derive(Debug, Args)]
struct RunProtocol {
    #[arg(long)]
    a_manifest: Option<PathBuf>,
    #[arg(long)]
    a_name: Option<String>,
    #[arg(long)]
    b_manifest: Option<PathBuf>,
    #[arg(long)]
    b_name: Option<String>,
    /// Run only this configuration (repeatable), e.g. "No KD".
    #[arg(long)]
    only: Vec<String>,
    #[arg(long)]
    invert_images: bool,
}

#[derive(Debug, Args)]
struct Report {
    /// A protocol.json or report.json file.
    #[arg(long)]
    input: PathBuf,
    /// json, tsv or markdown.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Write here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenToyCorpus {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    words: usize,
    #[arg(long, default_value_t = 400)]
    test_words: usize,
    /// Write two related corpora `a/` and `b/` for run-protocol.
    #[arg(long)]
    pair: bool,
}

/// Failure before any work starts: exit code 1.
#[derive(Debug)]
struct UsageError(anyhow::Error);

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_data(cfg: &mut RunConfig, d: &DataFlags) {
    let c = &mut cfg.data;
    set_opt(&mut c.train_manifest, d.train_manifest.clone());
    set_opt(&mut c.test_manifest, d.test_manifest.clone());
    set_opt(&mut c.teacher_data, d.teacher_data.clone());
    set_opt(&mut c.teacher_checkpoint, d.teacher_checkpoint.clone());
    set_opt(&mut c.teacher_inventory, d.teacher_inventory.clone());
    set_opt(&mut c.student_checkpoint, d.student_checkpoint.clone());
    c.invert_images |= d.invert_images;
}

fn apply_optim(settings: &mut kdhtr_core::harness::OptimSettings, o: &OptimFlags) -> Result<()> {
    if let Some(name) = &o.optimizer {
        settings.name = match name.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::Adam,
            other => anyhow::bail!("unknown optimizer {other:?} (expected sgd or adam)"),
        };
    }
    set(&mut settings.lr, o.lr);
    set(&mut settings.batch_size, o.batch_size);
    set(&mut settings.epochs, o.epochs);
    Ok(())
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.output_dir, cli.output_dir.clone());
    match &cli.command {
        Command::GenTeacherData(a) => {
            apply_data(&mut cfg, &a.data);
            set(&mut cfg.render.per_class_count, a.per_class_count);
            set(&mut cfg.render.image_size, a.image_size);
            set(&mut cfg.render.renderer, a.renderer.clone());
        }
        Command::TrainTeacher(a) => {
            apply_data(&mut cfg, &a.data);
            apply_optim(&mut cfg.teacher_optim, &a.optim)?;
            set(&mut cfg.teacher.arch, a.arch);
        }
        Command::TrainStudent(a) => {
            apply_data(&mut cfg, &a.data);
            apply_optim(&mut cfg.student_optim, &a.optim)?;
            set(&mut cfg.distill.kd_mode, a.kd_mode);
            set_opt(&mut cfg.data.conventional_teacher, a.conventional_teacher.clone());
            set(&mut cfg.distill.alpha, a.alpha);
            set(&mut cfg.distill.tau, a.tau);
            if let Some(m) = &a.kd_weight_mode {
                cfg.distill.kd_weight_mode = match m.as_str() {
                    "paper" => KdWeightMode::Paper,
                    "hinton" => KdWeightMode::Hinton,
                    other => anyhow::bail!("unknown kd weight mode {other:?} (expected paper or hinton)"),
                };
            }
            if let Some(l) = &a.layout {
                cfg.student.layout = match l.as_str() {
                    "crnn" => StudentLayout::Crnn,
                    "compact" => StudentLayout::Compact,
                    other => anyhow::bail!("unknown layout {other:?} (expected crnn or compact)"),
                };
            }
        }
        Command::Evaluate(a) => {
            apply_data(&mut cfg, &a.data);
            a.format.parse::<ReportFormat>()?;
        }
        Command::RunProtocol(a) => {
            let mut p = cfg.protocol.clone().unwrap_or(ProtocolSettings {
                a_name: "A".into(),
                a_manifest: PathBuf::new(),
                b_name: "B".into(),
                b_manifest: PathBuf::new(),
                only: Vec::new(),
            });
            set(&mut p.a_manifest, a.a_manifest.clone());
            set(&mut p.b_manifest, a.b_manifest.clone());
            set(&mut p.a_name, a.a_name.clone());
            set(&mut p.b_name, a.b_name.clone());
            if !a.only.is_empty() {
                p.only = a.only.clone();
            }
            if p.a_manifest.as_os_str().is_empty() || p.b_manifest.as_os_str().is_empty() {
                anyhow::bail!("run-protocol needs --a-manifest and --b-manifest (or a [protocol] table)");
            }
            cfg.data.invert_images |= a.invert_images;
            cfg.protocol = Some(p);
        }
        Command::Report(a) => {
            a.format.parse::<ReportFormat>()?;
        }
        Command::GenToyCorpus(_) => {}
    }
    cfg.validate()?;
    cfg.check_paths()?;
    Ok(cfg)
}

fn write_protocol_files(dir: &Path, report: &ProtocolReport) -> Result<()> {
    let doc = ReportDocument::Protocol(report.clone());
    write_report(&doc, "json", &dir.join("protocol.json"))?;
    write_report(&doc, "tsv", &dir.join("protocol.tsv"))?;
    write_report(&doc, "markdown", &dir.join("protocol.md"))?;
    Ok(())
}

fn run(cli: &Cli, cfg: RunConfig) -> Result<()> {
    match &cli.command {
        Command::GenTeacherData(_) => {
            let dir = gen_teacher_data(&cfg)?;
            println!("{}", dir.display());
        }
        Command::TrainTeacher(_) => {
            let (path, log) = train_teacher_run(&cfg)?;
            if let Some(last) = log.epochs.last() {
                println!("held-out accuracy {:.4}", last.val_accuracy);
            }
            println!("{}", path.display());
        }
        Command::TrainStudent(_) => {
            let (path, log) = train_student_run(&cfg)?;
            println!(
                "trained {} words, skipped {} (kd mode {})",
                log.trained,
                log.skipped,
                log.kd_mode.as_str()
            );
            println!("{}", path.display());
        }
        Command::Evaluate(a) => {
            let record = evaluate_run(&cfg)?;
            print!(
                "{}",
                emit_report(&ReportDocument::Evaluation(record), a.format.parse()?)?
            );
        }
        Command::RunProtocol(_) => {
            let settings = cfg.protocol.as_ref().context("protocol settings missing")?;
            let invert = cfg.data.invert_images;
            let a = Corpus::from_manifest(&settings.a_name, &settings.a_manifest, invert)?;
            let b = Corpus::from_manifest(&settings.b_name, &settings.b_manifest, invert)?;
            let spec = ProtocolSpec::from_run_config(&cfg)?;
            let dir = cfg.resolved_output_dir();
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
            let mut save = |r: &ProtocolReport| {
                write_protocol_files(&dir, r)
                    .map_err(|e| kdhtr_core::Error::InvalidConfig(format!("writing protocol table: {e:#}")))
            };
            let report = run_protocol(&spec, &a, &b, &mut save)?;
            print!(
                "{}",
                emit_report(&ReportDocument::Protocol(report), "markdown".parse()?)?
            );
        }
        Command::Report(a) => {
            let doc = ReportDocument::load(&a.input)?;
            match &a.output {
                Some(path) => write_report(&doc, &a.format, path)?,
                None => print!("{}", emit_report(&doc, a.format.parse()?)?),
            }
        }
        Command::GenToyCorpus(a) => {
            if a.pair {
                let (x, y) = toy_corpus_pair(a.words, a.test_words, cfg.seed)?;
                for (name, c) in [("a", x), ("b", y)] {
                    let path = write_split_word_dataset(&a.out.join(name), &c.train, &c.test)?;
                    println!("{}", path.display());
                }
            } else {
                let spec = ToyCorpusSpec {
                    train_words: a.words,
                    test_words: a.test_words,
                    ..ToyCorpusSpec::toy_script(cfg.seed)
                };
                let corpus = generate_toy_corpus(&spec)?;
                println!("{}", write_word_dataset(&a.out.join("train"), &corpus.train)?.display());
                println!("{}", write_word_dataset(&a.out.join("test"), &corpus.test)?.display());
            }
        }
    }
    Ok(())
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = build_config(&cli).map_err(UsageError).map(|cfg| run(&cli, cfg));
    match result {
        Err(UsageError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Ok(Ok(())) => ExitCode::SUCCESS,
    }
}
