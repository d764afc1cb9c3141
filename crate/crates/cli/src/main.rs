use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gitvl::data::{
    read_dataset, read_labels, simulate, synth_dataset_with, write_dataset, SimConfig,
    SynthConfig, TaskMode,
};
use gitvl::decode::{
    constrained_decode, generate_caption, prefix_generate, DecodeParams, ModelScorer, TokenTrie,
};
use gitvl::eval::{evaluate, EvalMode, EvalReport};
use gitvl::run::{evaluate_model, resolve_labels, run_training, RunConfig, TrainedModel};
use gitvl::tasks::{ground_truths, sample_visual};
use gitvl::vocab::BOS;
use gitvl::{Error, Result};

#[derive(Parser)]
#[command(name = "gitvl", version, about = "Generative image-to-text models on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset in trunk format.
    Synth(SynthArgs),
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Generate text for one sample of a dataset.
    Generate(GenerateArgs),
    /// Score a checkpoint on a dataset, or a predictions file.
    Eval(EvalArgs),
    /// Replay the sharded loader in virtual time.
    LoaderSim(SimArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_task)]
    mode: TaskMode,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 256)]
    trunk_size: usize,
    /// Cells per side of the color grid.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskMode>,
    /// Training dataset directory; repeat to interleave several.
    #[arg(long)]
    train_data: Vec<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue from the artifacts of an earlier run.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// VQA: also train on each sample's caption.
    #[arg(long)]
    mix_caption: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup_iters: Option<usize>,
    #[arg(long)]
    decoder_layers: Option<usize>,
}

#[derive(Args, Clone)]
struct DecodeArgs {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Shorthand for --beam 1 --length-penalty 0.
    #[arg(long)]
    greedy: bool,
}

impl DecodeArgs {
    fn apply(&self, mut p: DecodeParams) -> DecodeParams {
        if self.greedy {
            p.beam = 1;
            p.length_penalty = 0.0;
        }
        if let Some(b) = self.beam {
            p.beam = b;
        }
        if let Some(a) = self.length_penalty {
            p.length_penalty = a;
        }
        if let Some(m) = self.max_steps {
            p.max_steps = m;
        }
        p
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenMode {
    /// Unconstrained generation from BOS.
    Free,
    /// Generation restricted to a label set.
    Trie,
    /// Complete a question prefix.
    Prefix,
}

#[derive(Args)]
struct GenerateArgs {
    /// Run directory holding the trained model.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Defaults to prefix for VQA models and free otherwise.
    #[arg(long, value_enum)]
    mode: Option<GenMode>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Question for prefix mode; defaults to the sample's own.
    #[arg(long)]
    question: Option<String>,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Also write the output to prediction.txt here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_parser = parse_eval_mode, default_value = "equal")]
    mode: EvalMode,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// One prediction per line, scored instead of running a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// One ground truth per line; defaults to the dataset's answers.
    #[arg(long)]
    ground_truths: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskMode>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Score only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 1000)]
    total: usize,
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    #[arg(long, default_value_t = 4)]
    ranks: usize,
    #[arg(long, default_value_t = 64)]
    trunk_size: usize,
    #[arg(long, default_value_t = 0.0)]
    fetch_latency: f64,
    #[arg(long, default_value_t = 1.0)]
    consume_time: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

fn parse_task(s: &str) -> std::result::Result<TaskMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_eval_mode(s: &str) -> std::result::Result<EvalMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::LoaderSim(a) => loader_sim(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(g) = a.grid {
        cfg.grid = g;
        cfg.max_text_chars = cfg.max_text_chars.min(g);
    }
    let samples = synth_dataset_with(a.mode, a.n, a.seed, &cfg)?;
    let m = write_dataset(&a.out_dir, &samples, a.trunk_size)?;
    println!(
        "wrote {} {} samples in {} trunks to {}",
        samples.len(),
        a.mode,
        m.trunks.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = a.task {
        cfg.task = t;
    }
    if !a.train_data.is_empty() {
        cfg.train_data = a.train_data;
    }
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    if a.init_checkpoint.is_some() {
        cfg.init_checkpoint = a.init_checkpoint;
    }
    if a.mix_caption {
        cfg.mix_caption = true;
    }
    if a.epochs.is_some() {
        cfg.epochs = a.epochs;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.peak_lr_encoder = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(w) = a.warmup_iters {
        cfg.train.warmup_iters = w;
    }
    if let Some(l) = a.decoder_layers {
        cfg.model.decoder_layers = l;
    }
    let (_, summary) = run_training(&cfg)?;
    for (e, l) in summary.epoch_losses.iter().enumerate() {
        println!("epoch {e:>3}  loss {l:.4}");
    }
    println!("{} steps; artifacts in {}", summary.steps, summary.out_dir.display());
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let trained = TrainedModel::load(&a.checkpoint)?;
    let mode = a.mode.unwrap_or(if trained.task == TaskMode::Vqa {
        GenMode::Prefix
    } else {
        GenMode::Free
    });
    // Checked before any model work.
    let labels = match mode {
        GenMode::Trie => Some(resolve_labels(a.labels.as_deref(), Some(&a.data))?),
        _ => None,
    };
    let params = a.decode.apply(DecodeParams::default());
    params.validate()?;
    let samples = read_dataset(&a.data)?;
    let sample = samples.get(a.index).ok_or_else(|| {
        Error::Input(format!("index {} outside a dataset of {}", a.index, samples.len()))
    })?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let visual = sample_visual(&sample.visual, trained.model.config().max_frames, &mut rng);
    let scorer = ModelScorer::new(&trained.model, &visual)?;
    let text = match mode {
        GenMode::Free => generate_caption(&scorer, &trained.vocab, &params)?,
        GenMode::Prefix => {
            let q = a
                .question
                .as_deref()
                .or(sample.question.as_deref())
                .ok_or_else(|| Error::Input("prefix mode needs a question".into()))?;
            prefix_generate(&scorer, &trained.vocab, q, &params)?
        }
        GenMode::Trie => {
            let trie = TokenTrie::build(labels.as_deref().expect("labels resolved"), &trained.vocab)?;
            constrained_decode(&scorer, &[BOS], &trie, &params)?.to_string()
        }
    };
    println!("{text}");
    if let Some(dir) = a.out_dir {
        write_file(&dir, "prediction.txt", &format!("{text}\n"))?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(String::from).collect())
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

fn eval(a: EvalArgs) -> Result<()> {
    let labels = match (&a.labels, a.mode) {
        (Some(p), _) => Some(read_labels(p)?),
        (None, EvalMode::VocPrior) => Some(resolve_labels(None, a.data.as_deref())?),
        _ => None,
    };
    let truncate = |mut v: Vec<String>| {
        if let Some(n) = a.limit {
            v.truncate(n);
        }
        v
    };
    let report: EvalReport = if let Some(pfile) = &a.predictions {
        let preds = truncate(read_lines(pfile)?);
        let gts = match (&a.ground_truths, &a.data) {
            (Some(g), _) => truncate(read_lines(g)?),
            (None, Some(d)) => {
                let task = a
                    .task
                    .ok_or_else(|| Error::Validation("--task is needed to read answers from --data".into()))?;
                truncate(ground_truths(&read_dataset(d)?, task)?)
            }
            (None, None) => {
                return Err(Error::Validation("need --ground-truths or --data".into()));
            }
        };
        evaluate(&preds, &gts, a.mode, labels.as_deref())?
    } else {
        let (ckpt, data) = match (&a.checkpoint, &a.data) {
            (Some(c), Some(d)) => (c, d),
            _ => {
                return Err(Error::Validation(
                    "need --predictions, or --checkpoint with --data".into(),
                ))
            }
        };
        let trained = TrainedModel::load(ckpt)?;
        let params = a.decode.apply(saved_decode_params(ckpt)?);
        params.validate()?;
        let mut samples = read_dataset(data)?;
        if let Some(n) = a.limit {
            samples.truncate(n);
        }
        evaluate_model(&trained, &samples, a.mode, &params, labels.as_deref(), a.seed)?
    };
    let preds: String = report.samples.iter().map(|s| format!("{}\n", s.prediction)).collect();
    write_file(&a.out_dir, "predictions.txt", &preds)?;
    write_file(&a.out_dir, "report.json", &report.to_json())?;
    print!("{}", report.summary_table());
    Ok(())
}

/// Decoding parameters recorded with a run, else the defaults.
fn saved_decode_params(run_dir: &Path) -> Result<DecodeParams> {
    let p = run_dir.join(gitvl::run::RUN_FILE);
    if p.exists() {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(RunConfig::from_toml(&text)?.decode)
    } else {
        Ok(DecodeParams::default())
    }
}

fn loader_sim(a: SimArgs) -> Result<()> {
    let cfg = SimConfig {
        total: a.total,
        nodes: a.nodes,
        ranks: a.ranks,
        trunk_size: a.trunk_size,
        fetch_latency: a.fetch_latency,
        consume_time: a.consume_time,
        jitter: a.jitter,
        seed: a.seed,
    };
    let r = simulate(&cfg)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
        return Ok(());
    }
    println!("exactly-once        {}", if r.exactly_once { "ok" } else { "FAILED" });
    println!("prefetch high-water {}", r.high_water_prefetch);
    println!("resident high-water {}", r.high_water_resident);
    println!("stall total         {:.3}", r.stall_total);
    println!("stall max           {:.3}", r.stall_max);
    println!("makespan            {:.3}", r.makespan);
    println!("order digest        {:016x}", r.order_digest);
    for n in &r.nodes {
        println!(
            "node {:>2}: {} trunks, {} items, {} fetches, {} evictions, stall {:.3}",
            n.node_id, n.trunks, n.delivered, n.fetches, n.evictions, n.stall_total
        );
    }
    Ok(())
}
