use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use contextguard_annotation::service::predictions_for;
use contextguard_annotation::{router, select_challenging, AnnotationService, JudgmentStore, ModelPredictions};
use contextguard_core::config::RunConfig;
use contextguard_core::corpus::{load_corpus, save_corpus};
use contextguard_core::datagen::World;
use contextguard_core::eval::{evaluate, OraclePredictor, Predictor, ReportKind};
use contextguard_core::experiment::{
    ablation, paradigm_comparison, parallel_map, prepare_corpus, summary_jsonl, summary_table, train_model,
    AblationVariant, Summary,
};
use contextguard_core::fccr::predict;
use contextguard_core::model::{load_checkpoint, save_checkpoint, ModelState};
use contextguard_core::train::Paradigm;
use contextguard_core::types::{Corpus, PairRecord, Split};
use contextguard_core::Error;

#[derive(Parser, Debug)]
#[command(name = "contextguard", version, about = "Cross-modal contextual consistency: data, training, evaluation and annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// `key = value` config file with dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root; each command writes into `<out>/<command>/`.
    #[arg(long, global = true, env = "CONTEXTGUARD_OUT", default_value = "runs")]
    out: PathBuf,

    #[arg(long, global = true, value_parser = parse_paradigm)]
    paradigm: Option<Paradigm>,

    /// Threads for multi-seed commands and model training in `serve`.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Evaluate the label oracle instead of a trained checkpoint.
    #[arg(long, global = true)]
    oracle: bool,

    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Extra `key=value` override, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq)]
enum Command {
    /// Generate, split and perturb a corpus.
    Gen,
    /// Train one model and write its checkpoint and per-epoch stats.
    Train,
    /// Entity and context report tables for a checkpoint (or the oracle).
    Eval,
    /// Standard vs perturbed accuracy of supervised and adversarial training.
    Robustness,
    /// The four-variant component ablation.
    Ablate,
    /// Policy-gradient vs adversarial training.
    Paradigms,
    /// Serve the annotation backend over HTTP.
    Serve,
}

impl Command {
    fn dir_name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Robustness => "robustness",
            Command::Ablate => "ablate",
            Command::Paradigms => "paradigms",
            Command::Serve => "serve",
        }
    }
}

fn parse_paradigm(s: &str) -> Result<Paradigm, String> {
    s.parse::<Paradigm>().map_err(|e| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Divergence(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            Error::Divergence(_) => Failure::Divergence(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Divergence(m) => write!(f, "training diverged: {m}"),
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        config.set(k, v).map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.paradigm {
        config.train.paradigm = p;
    }
    if let Some(e) = cli.epochs {
        config.train.epochs = e;
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

struct Run {
    config: RunConfig,
    out: PathBuf,
    dir: PathBuf,
    workers: usize,
    oracle: bool,
}

impl Run {
    fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        fs::write(self.dir.join(name), contents)?;
        Ok(())
    }

    fn data_path(&self) -> PathBuf {
        self.config
            .paths
            .data
            .clone()
            .unwrap_or_else(|| self.out.join("gen").join("corpus.jsonl"))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.config
            .paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("train").join("checkpoint.jsonl"))
    }

    fn load_data(&self, world: &World) -> Result<Corpus, Failure> {
        let path = self.data_path();
        require(&path, "corpus")?;
        let corpus = load_corpus(&path)?;
        if corpus.vocab_config != world.vocab {
            return Err(Failure::Config(format!(
                "{} was generated with a different vocabulary than data.vocab",
                path.display()
            )));
        }
        Ok(corpus)
    }
}

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Config(format!("{what} `{}` does not exist", path.display())))
    }
}

fn gen(run: &Run) -> Result<(), Failure> {
    let world = run.config.world();
    let corpus = prepare_corpus(&run.config, &world, run.config.seed)?;
    save_corpus(&corpus, &run.dir.join("corpus.jsonl"))?;
    for split in [Split::Train, Split::Val, Split::Test, Split::PerturbedTest] {
        println!("{split:?}: {}", corpus.split(split).count());
    }
    Ok(())
}

fn train_cmd(run: &Run) -> Result<(), Failure> {
    let world = run.config.world();
    let corpus = run.load_data(&world)?;
    let c = &run.config;
    let (model, stats) = train_model(c, &corpus, &world, c.variant(), c.train.paradigm, c.seed)?;
    save_checkpoint(&model.params, &run.dir.join("checkpoint.jsonl"))?;
    let log: String = stats.iter().map(|s| s.to_json_line() + "\n").collect();
    run.write("stats.jsonl", &log)?;
    if let Some(last) = stats.last() {
        println!("{} epochs, final loss {:.6}", stats.len(), last.loss);
    } else {
        println!("0 epochs, checkpoint holds the initialization");
    }
    Ok(())
}

fn load_model(run: &Run, world: &World) -> Result<ModelState, Failure> {
    let path = run.checkpoint_path();
    require(&path, "checkpoint")?;
    let mut model = run.config.init_model(run.config.variant(), world, run.config.seed)?;
    load_checkpoint(&mut model.params, &path)?;
    Ok(model)
}

fn eval_cmd(run: &Run) -> Result<(), Failure> {
    let world = run.config.world();
    let corpus = run.load_data(&world)?;
    let model;
    let predictor: (&str, &dyn Predictor) = if run.oracle {
        ("oracle", &OraclePredictor)
    } else {
        model = load_model(run, &world)?;
        ("model", &model)
    };
    for (kind, name) in [(ReportKind::Entity, "entity"), (ReportKind::Ctxt, "ctxt")] {
        let table = evaluate(&[predictor], &corpus, kind, run.config.eval.threshold)?;
        let text = table.to_text();
        print!("{text}");
        run.write(&format!("{name}.txt"), &text)?;
        run.write(&format!("{name}.jsonl"), &table.to_jsonl())?;
    }
    Ok(())
}

fn write_summary(run: &Run, name: &str, rows: &[Summary]) -> Result<(), Failure> {
    let text = summary_table(rows);
    print!("{text}");
    run.write(&format!("{name}.txt"), &text)?;
    run.write(&format!("{name}.jsonl"), &summary_jsonl(rows))
}

fn serve(run: &Run) -> Result<(), Failure> {
    let c = &run.config;
    let world = c.world();
    let corpus = if run.data_path().exists() {
        run.load_data(&world)?
    } else {
        prepare_corpus(c, &world, c.seed)?
    };
    let test: Vec<&PairRecord> = corpus.split(Split::Test).collect();
    let base = match c.train.paradigm {
        Paradigm::Supervised => Paradigm::Adversarial,
        p => p,
    };
    eprintln!("training {} variants for pair selection", AblationVariant::ALL.len());
    let trained = parallel_map(AblationVariant::ALL.len(), run.workers, |i| {
        let v = AblationVariant::ALL[i];
        train_model(c, &corpus, &world, v.architecture(), v.paradigm(base), c.seed).map(|(m, _)| m)
    });
    let mut predictions: Vec<ModelPredictions> = Vec::new();
    for (v, model) in AblationVariant::ALL.iter().zip(trained) {
        let model = model?;
        let mut verdicts = Vec::with_capacity(test.len());
        for r in &test {
            verdicts.push((r.id.clone(), predict(r, &model)?.overall >= c.eval.threshold));
        }
        let lookup: std::collections::BTreeMap<String, bool> = verdicts.into_iter().collect();
        predictions.push(predictions_for(v.label(), &test, |r| lookup[&r.id]));
    }
    let selection = select_challenging(&test, &predictions[0], &predictions[1..], c.serve.n, &world)
        .map_err(|e| Failure::Data(e.to_string()))?;
    if selection.warning {
        eprintln!("warning: only {} of {} requested pairs qualify", selection.tasks.len(), c.serve.n);
    }
    let store = JudgmentStore::open(run.dir.join("judgments.jsonl")).map_err(|e| Failure::Data(e.to_string()))?;
    let service = AnnotationService::new(selection.tasks, predictions, c.serve.annotators.clone(), store);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&c.serve.addr).await?;
        eprintln!("serving on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(Mutex::new(service)))).await
    })?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = resolve_config(cli)?;
    let dir = cli.out.join(cli.command.dir_name());
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), config.to_text())?;
    let run = Run {
        config,
        out: cli.out.clone(),
        dir,
        workers: cli.workers.max(1),
        oracle: cli.oracle,
    };
    let seeds = run.config.seed_list();
    match cli.command {
        Command::Gen => gen(&run),
        Command::Train => train_cmd(&run),
        Command::Eval => eval_cmd(&run),
        Command::Robustness => {
            let rows = paradigm_comparison(
                &run.config,
                &[Paradigm::Supervised, Paradigm::Adversarial],
                &seeds,
                run.workers,
            )?;
            write_summary(&run, "robustness", &rows)
        }
        Command::Ablate => {
            let rows = ablation(&run.config, &seeds, run.workers)?;
            write_summary(&run, "ablation", &rows)
        }
        Command::Paradigms => {
            let rows = paradigm_comparison(&run.config, &[Paradigm::Rl, Paradigm::Adversarial], &seeds, run.workers)?;
            write_summary(&run, "paradigms", &rows)
        }
        Command::Serve => serve(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("contextguard: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
