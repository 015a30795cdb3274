//! Command-line front end.
//!
//! Exit codes: 0 success, 1 gradient check failed or internal error,
//! 2 configuration error, 3 data error, 4 numeric abort, 5 checkpoint
//! does not match the configured model.

mod cli;

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use engageformer::config::RunConfig;
use engageformer::data::{self, Manifest, SplitRatio};
use engageformer::model::{checkpoint, Model};
use engageformer::tokenizer::Geometry;
use engageformer::training::{self, checkpoint_name, Trainer};
use engageformer::Error;

use cli::{Cli, Command};

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Geometry(_) => 2,
            Error::Data(_)
            | Error::Split(_)
            | Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::PayloadMismatch { .. }
            | Error::Format { .. } => 3,
            Error::NumericAbort(_) | Error::Numeric { .. } => 4,
            Error::CheckpointMismatch { .. } => 5,
            Error::Dimension { .. } | Error::Index { .. } => 1,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::read(p).map_err(|e| Failure::new(2, e.to_string())),
    }
}

fn load_model(cfg: &RunConfig, checkpoint_path: &Path) -> CliResult<Model<f32>> {
    let mut model = Model::<f32>::new(cfg.model.clone(), 0)?;
    let records = checkpoint::read(checkpoint_path)?;
    checkpoint::load_into(model.params_mut(), &records)?;
    Ok(model)
}

fn parse_geometry(s: &str) -> CliResult<Geometry> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse().ok().filter(|&v| v > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| Failure::new(2, format!("bad geometry `{s}`, expected TxHxWxD")))?;
    match dims[..] {
        [t, h, w, d] => Ok(Geometry::new(t, h, w, d)),
        _ => Err(Failure::new(2, format!("bad geometry `{s}`, expected TxHxWxD"))),
    }
}

fn check_labels(cfg: &RunConfig, manifest: &Manifest) -> CliResult {
    if manifest.classes() != cfg.model.classes {
        return Err(Failure::new(
            3,
            format!(
                "manifest has {} classes, model is configured for {}",
                manifest.classes(),
                cfg.model.classes
            ),
        ));
    }
    Ok(())
}

fn train(args: cli::TrainArgs) -> CliResult {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.train.validate()?;
    let manifest = Manifest::read(&args.data)?;
    check_labels(&cfg, &manifest)?;
    let samples = manifest.load_samples(&cfg.model.geometry)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let log_path = args.out.join("train.log");
    let mut log = File::create(&log_path).map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), samples.len())?;
    trainer.fit(&samples, |entry, model| {
        println!("{entry}");
        writeln!(log, "{entry}").map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        checkpoint::save(model.params(), &args.out.join(checkpoint_name(entry.epoch)))
    })?;
    Ok(())
}

fn eval(args: cli::EvalArgs) -> CliResult {
    let cfg = load_config(args.config.as_deref())?;
    let model = load_model(&cfg, &args.checkpoint)?;
    let manifest = Manifest::read(&args.data)?;
    check_labels(&cfg, &manifest)?;
    let samples = manifest.load_samples(&cfg.model.geometry)?;
    print!("{}", data::evaluate(&model, &samples)?);
    Ok(())
}

fn predict(args: cli::PredictArgs) -> CliResult {
    let cfg = load_config(args.config.as_deref())?;
    let model = load_model(&cfg, &args.checkpoint)?;
    let clip = data::read_clip(&args.clip)?;
    if clip.geometry != cfg.model.geometry {
        return Err(Failure::new(
            3,
            format!(
                "{}: clip is {}, model expects {}",
                args.clip.display(),
                clip.geometry,
                cfg.model.geometry
            ),
        ));
    }
    let p = model.predict(&clip.to_tensor())?;
    let probs: Vec<String> = p.probs.iter().map(|v| v.to_string()).collect();
    println!("{} {}", cfg.model.labels[p.class], probs.join(" "));
    Ok(())
}

fn gradcheck(args: cli::GradcheckArgs) -> CliResult {
    let cfg = match &args.toy_config {
        Some(p) => load_config(Some(p))?,
        None => RunConfig::toy(),
    };
    let seed = args.seed.seed.unwrap_or(cfg.train.seed);
    let report = training::gradcheck(&cfg.model, seed)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<_> = report.failures().map(|e| e.name.as_str()).collect();
        Err(Failure::new(1, format!("gradient check failed for {}", names.join(", "))))
    }
}

fn synth(args: cli::SynthArgs) -> CliResult {
    let geometry = parse_geometry(&args.geometry)?;
    let seed = args.seed.seed.unwrap_or(0);
    let manifest = data::synth_dataset(args.n, args.classes, &geometry, seed, &args.out)?;
    println!(
        "wrote {} clips to {}",
        manifest.len(),
        args.out.join(data::MANIFEST_NAME).display()
    );
    Ok(())
}

fn split(args: cli::SplitArgs) -> CliResult {
    let manifest = Manifest::read(&args.data)?;
    let seed = args.seed.seed.unwrap_or(0);
    let (train, test) = data::stratified_split(&manifest, SplitRatio::default(), seed)?;
    for (name, m) in [("train.tsv", &train), ("test.tsv", &test)] {
        let path = manifest.root.join(name);
        m.write(&path)?;
        println!("{} {} clips", path.display(), m.len());
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if cli.threads == 0 {
        return Err(Failure::new(2, "--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Failure::new(1, e.to_string()))?;
    if cli.print_config {
        print!("{}", load_config(cli.config.as_deref())?);
        return Ok(());
    }
    match cli.command {
        Some(Command::Train(a)) => train(a),
        Some(Command::Eval(a)) => eval(a),
        Some(Command::Predict(a)) => predict(a),
        Some(Command::Gradcheck(a)) => gradcheck(a),
        Some(Command::Synth(a)) => synth(a),
        Some(Command::Split(a)) => split(a),
        None => Err(Failure::new(2, "no command given; see --help")),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
