//! The `albert-lab` command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde_json::json;

use crate::data::vocab::{NUM_SPECIAL, PAD};
use crate::data::{
    generate_instances, load_instances, pack_batch, write_instances, Batch, InstanceSpec,
    PairSampler, TrainingInstance, Vocabulary,
};
use crate::diagnostics::{
    cross_objective_eval, intrinsic_eval, layer_io_similarity, measure_throughput,
    write_trace_csv, EvalReport,
};
use crate::error::{Error, Result};
use crate::model::{
    build_model, count_parameters, preset, Checkpoint, ModelConfig, Objective, ParameterCount,
    SharingStrategy,
};
use crate::train::{digest_of, instance_spec, pretrain, seeded_stream, Dataset, PretrainOptions, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "albert-lab", version, about = "Toy-scale ALBERT pretraining laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter breakdown of a preset or config, optionally compared.
    Params(ParamsArgs),
    /// Generate masked sentence-pair instances and print their statistics.
    Data(DataArgs),
    /// Pretrain a model from a run config.
    Pretrain(PretrainArgs),
    /// Per-layer input/output distance and angle of a checkpoint.
    Probe(ProbeArgs),
    /// Intrinsic MLM and sentence-pair accuracy of a checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Run config or bare model config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Override the sharing strategy (all, attention_only, ffn_only, none, grouped).
    #[arg(long)]
    pub sharing: Option<String>,
    /// Override the embedding size E.
    #[arg(long)]
    pub embedding: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Compare two presets and print the ratio of their totals.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Option<Vec<String>>,
    /// Print every known preset.
    #[arg(long)]
    pub list: bool,
    #[arg(long)]
    pub json: bool,
    /// Time this many training steps of the config's model (first discarded).
    #[arg(long, requires = "config")]
    pub throughput: Option<usize>,
    /// Second config to time and compare against.
    #[arg(long, requires = "throughput")]
    pub against: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Instance dump destination (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Override the model objective (mlm_only, mlm_nsp, mlm_sop).
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print statistics as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Initialize from a (shallower) checkpoint.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Train with dropout disabled.
    #[arg(long)]
    pub no_dropout: bool,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary file; defaults to the one saved with the run.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Corpus to draw the probe batch from; defaults to the eval corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub instances: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Corpus to generate eval sets from; defaults to the eval corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Instance dump for intrinsic evaluation.
    #[arg(long)]
    pub set: Option<PathBuf>,
    #[arg(long, requires = "sop_set")]
    pub nsp_set: Option<PathBuf>,
    #[arg(long, requires = "nsp_set")]
    pub sop_set: Option<PathBuf>,
    /// Size of each generated set when no dumps are given.
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Params(a) => cmd_params(&a),
        Command::Data(a) => cmd_data(&a),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Probe(a) => cmd_probe(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

/// Reads either a run config (with a `model` field) or a bare model config.
pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let model = match value.get("model") {
        Some(m) => m.clone(),
        None => value,
    };
    Ok(serde_json::from_value(model)?)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn millions(n: usize) -> String {
    if n < 1_000_000 {
        format!("{:.1}K", n as f64 / 1e3)
    } else {
        format!("{:.1}M", n as f64 / 1e6)
    }
}

fn describe(cfg: &ModelConfig) -> String {
    format!(
        "L={} H={} A={} E={} V={} sharing={:?}",
        cfg.num_layers,
        cfg.hidden_size,
        cfg.num_heads(),
        cfg.embedding_size,
        cfg.vocab_size,
        cfg.sharing
    )
}

fn breakdown(name: &str, cfg: &ModelConfig, c: &ParameterCount) -> String {
    format!(
        "{name} ({})\n  embeddings {:>14}\n  encoder    {:>14}\n  heads      {:>14}\n  total      {:>14}  ({})\n",
        describe(cfg),
        c.embeddings,
        c.encoder,
        c.heads,
        c.total,
        millions(c.total)
    )
}

fn resolve_params_config(a: &ParamsArgs, name: Option<&str>) -> Result<(String, ModelConfig)> {
    let (label, mut cfg) = match (name, &a.config) {
        (Some(n), _) => (n.to_string(), preset(n)?),
        (None, Some(p)) => (p.display().to_string(), load_model_config(p)?),
        (None, None) => {
            return Err(Error::Usage(
                "params needs --preset, --config, --compare or --list".into(),
            ))
        }
    };
    if let Some(s) = &a.sharing {
        cfg.sharing = SharingStrategy::parse(s)?;
    }
    if let Some(e) = a.embedding {
        cfg.embedding_size = e;
        cfg.factorize_embedding = None;
    }
    if let Some(l) = a.layers {
        cfg.num_layers = l;
    }
    if a.group_size.is_some() {
        cfg.group_size = a.group_size;
    }
    Ok((label, cfg.validate()?))
}

pub fn cmd_params(a: &ParamsArgs) -> Result<()> {
    if a.list {
        for name in crate::model::PRESET_NAMES {
            let cfg = preset(name)?;
            let c = count_parameters(&cfg)?;
            println!("{name:<36} {:>8}  {}", millions(c.total), describe(&cfg));
        }
        return Ok(());
    }
    if let Some(pair) = &a.compare {
        let (na, ca) = resolve_params_config(a, Some(&pair[0]))?;
        let (nb, cb) = resolve_params_config(a, Some(&pair[1]))?;
        let (pa, pb) = (count_parameters(&ca)?, count_parameters(&cb)?);
        let ratio = pa.total as f64 / pb.total as f64;
        if a.json {
            let v = json!({ na.clone(): pa, nb.clone(): pb, "ratio": ratio });
            println!("{}", serde_json::to_string_pretty(&v)?);
        } else {
            print!("{}{}", breakdown(&na, &ca, &pa), breakdown(&nb, &cb, &pb));
            println!("ratio {na}/{nb} = {ratio:.2}");
        }
        return Ok(());
    }
    let (label, cfg) = resolve_params_config(a, a.preset.as_deref())?;
    if let Some(steps) = a.throughput {
        return params_throughput(&label, &cfg, a.against.as_deref(), steps);
    }
    let c = count_parameters(&cfg)?;
    if a.json {
        let v = json!({ "name": label, "config_digest": digest_of(&cfg), "count": c });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        print!("{}", breakdown(&label, &cfg, &c));
    }
    Ok(())
}

/// A batch of random tokens with the usual masking rate, for timing only.
pub fn synthetic_batch<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    batch_size: usize,
    seq_len: usize,
    rng: &mut R,
) -> Batch {
    let n = batch_size * seq_len;
    let token_ids = (0..n)
        .map(|_| rng.random_range(NUM_SPECIAL..cfg.vocab_size))
        .collect();
    let segment_ids = (0..n).map(|i| usize::from(i % seq_len >= seq_len / 2)).collect();
    let per_row = (seq_len * 15).div_ceil(100).max(1);
    let masked_positions: Vec<Vec<usize>> = (0..batch_size)
        .map(|_| (0..per_row).map(|k| 1 + k * (seq_len - 1) / per_row).collect())
        .collect();
    let masked_targets = masked_positions
        .iter()
        .map(|p| p.iter().map(|_| rng.random_range(NUM_SPECIAL..cfg.vocab_size)).collect())
        .collect();
    let sp_labels = cfg
        .objective
        .has_sentence_pair()
        .then(|| (0..batch_size).map(|i| i % 2).collect());
    Batch {
        batch_size,
        seq_len,
        token_ids,
        segment_ids,
        padding_mask: vec![true; n],
        masked_positions,
        masked_targets,
        sp_labels,
    }
}

fn params_throughput(label: &str, cfg: &ModelConfig, against: Option<&Path>, steps: usize) -> Result<()> {
    let time = |label: &str, cfg: &ModelConfig| -> Result<serde_json::Value> {
        let store = build_model(cfg, 0)?;
        let mut rng = seeded_stream(0, 0);
        let seq = cfg.max_positions().min(128);
        let batch = synthetic_batch(cfg, 16, seq, &mut rng);
        let r = measure_throughput(&store, cfg, &batch, steps)?;
        Ok(json!({ "name": label, "config_digest": digest_of(cfg), "report": r }))
    };
    let a = time(label, cfg)?;
    let out = match against {
        Some(p) => {
            let other = load_model_config(p)?.validate()?;
            let b = time(&p.display().to_string(), &other)?;
            let ratio = |k: &str| a["report"][k].as_f64().unwrap_or(f64::NAN) / b["report"][k].as_f64().unwrap_or(f64::NAN);
            json!({
                "a": a,
                "b": b,
                "examples_per_sec_ratio": ratio("examples_per_sec"),
                "param_bytes_ratio": ratio("param_bytes"),
            })
        }
        None => a,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn load_run(path: &Path) -> Result<RunConfig> {
    let run = RunConfig::load(path)?;
    run.check_paths()?;
    Ok(run)
}

pub fn cmd_data(a: &DataArgs) -> Result<()> {
    let mut run = load_run(&a.config)?;
    if let Some(o) = &a.objective {
        run.model.objective = Objective::parse(o)?;
    }
    if let Some(s) = a.seed {
        run.seed = s;
    }
    let run = run.validate()?;
    let data = Dataset::for_run(&run)?;
    let spec = instance_spec(&run, data.vocab.len(), run.short_seq_prob);
    let mut rng = seeded_stream(run.seed, 0);
    let (insts, stats) = generate_instances(&data.docs, &spec, a.count, &mut rng)?;
    if let Some(out) = &a.out {
        let file = File::create(out).map_err(|e| Error::io(out, e))?;
        let mut w = BufWriter::new(file);
        write_instances(&mut w, &insts)?;
        w.flush().map_err(|e| Error::io(out, e))?;
    }
    let digest = run.digest();
    if a.json {
        let v = json!({ "config_digest": digest, "stats": stats });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    println!("config digest {digest}");
    println!("instances {}  mean length {:.1}  range [{}, {}]", stats.instances, stats.mean_length, stats.min_length, stats.max_length);
    println!("span length  observed  expected");
    for (i, (f, p)) in stats.span_frequencies.iter().zip(&stats.span_expected).enumerate() {
        println!("{:>11}  {f:>8.4}  {p:>8.4}", i + 1);
    }
    println!(
        "masked {} of {} usable tokens ({:.1}%)",
        stats.masked_tokens,
        stats.usable_tokens,
        100.0 * stats.masked_tokens as f64 / stats.usable_tokens.max(1) as f64
    );
    if stats.positives + stats.negatives > 0 {
        println!(
            "labels positive {} negative {} ({:.1}% positive)",
            stats.positives,
            stats.negatives,
            100.0 * stats.positive_fraction()
        );
    }
    println!("shortened {} ({:.1}%)", stats.shortened, 100.0 * stats.short_fraction());
    Ok(())
}

pub fn cmd_pretrain(a: &PretrainArgs) -> Result<()> {
    let mut run = RunConfig::load(&a.config)?;
    if let Some(v) = a.max_steps {
        run.max_steps = v;
    }
    if let Some(v) = a.seed {
        run.seed = v;
    }
    if let Some(v) = &a.output_dir {
        run.output_dir = v.clone();
    }
    if let Some(v) = a.batch_size {
        run.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        run.learning_rate = v;
    }
    let opts = PretrainOptions {
        warm_start: a.warm_start.clone(),
        no_dropout: a.no_dropout,
        threads: None,
    };
    let summary = pretrain(run, &opts)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Structural fields that must agree between a run config and a checkpoint.
fn config_mismatch(a: &ModelConfig, b: &ModelConfig) -> Option<&'static str> {
    let checks = [
        ("num_layers", a.num_layers == b.num_layers),
        ("hidden_size", a.hidden_size == b.hidden_size),
        ("num_heads", a.num_heads() == b.num_heads()),
        ("embedding_size", a.embedding_size == b.embedding_size),
        ("vocab_size", a.vocab_size == b.vocab_size),
        ("ffn_size", a.ffn_size() == b.ffn_size()),
        ("max_positions", a.max_positions() == b.max_positions()),
        ("sharing", a.sharing == b.sharing && a.group_size() == b.group_size()),
        ("objective", a.objective == b.objective),
    ];
    checks.into_iter().find(|(_, ok)| !ok).map(|(f, _)| f)
}

struct Loaded {
    run: RunConfig,
    ckpt: Checkpoint,
    vocab: Vocabulary,
}

fn find_vocab(explicit: Option<&Path>, ckpt: &Path, run: &RunConfig) -> Result<Option<Vocabulary>> {
    if let Some(p) = explicit {
        return Vocabulary::load(p).map(Some);
    }
    let dir = ckpt.parent().unwrap_or(Path::new("."));
    for cand in [dir.join("vocab.txt"), dir.join("../vocab.txt")] {
        if cand.exists() {
            return Vocabulary::load(&cand).map(Some);
        }
    }
    run.vocab.as_deref().map(Vocabulary::load).transpose()
}

fn load_for_inspection(config: &Path, checkpoint: &Path, vocab: Option<&Path>) -> Result<Loaded> {
    let run = load_run(config)?.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    if let Some(field) = config_mismatch(&run.model, &ckpt.config) {
        return Err(Error::Config(format!(
            "checkpoint {} does not match the run config: {field} differs",
            checkpoint.display()
        )));
    }
    let vocab = match find_vocab(vocab, checkpoint, &run)? {
        Some(v) => v,
        None => {
            log::warn!("no saved vocabulary found; rebuilding from the training corpus");
            Dataset::for_run(&run)?.vocab
        }
    };
    Ok(Loaded { run, ckpt, vocab })
}

fn inspection_docs(l: &Loaded, corpus: Option<&Path>) -> Result<Dataset> {
    let path = corpus
        .or(l.run.eval_corpus.as_deref())
        .unwrap_or(&l.run.corpus);
    Dataset::load(path, Some(l.vocab.clone()), l.ckpt.config.vocab_size)
}

/// Unmasked sentence pairs, for probing.
pub fn probe_batch(
    dataset: &Dataset,
    objective: Objective,
    max_len: usize,
    count: usize,
    seed: u64,
) -> Result<Batch> {
    let sampler = PairSampler::new(&dataset.docs, max_len, 0.0)?;
    let mut rng = seeded_stream(seed, 4);
    let insts = (0..count.max(1))
        .map(|_| sampler.sample(objective, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    pack_batch(&insts, max_len, PAD)
}

pub fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let l = load_for_inspection(&a.config, &a.checkpoint, a.vocab.as_deref())?;
    let data = inspection_docs(&l, a.corpus.as_deref())?;
    let batch = probe_batch(&data, l.ckpt.config.objective, l.run.max_seq_len, a.instances, l.run.seed)?;
    let trace = layer_io_similarity(&l.ckpt.params, &l.ckpt.config, &batch)?;
    let mut buf = Vec::new();
    write_trace_csv(&trace.rows, &mut buf).map_err(|e| Error::Data(e.to_string()))?;
    log::info!("probe config digest {}", l.run.digest());
    write_output(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn generated_set(l: &Loaded, data: &Dataset, objective: Objective, count: usize, stream: u64) -> Result<Vec<TrainingInstance>> {
    let mut run = l.run.clone();
    run.model.objective = objective;
    let spec: InstanceSpec = instance_spec(&run, l.vocab.len(), 0.0);
    let mut rng = seeded_stream(l.run.seed, stream);
    Ok(generate_instances(&data.docs, &spec, count, &mut rng)?.0)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let l = load_for_inspection(&a.config, &a.checkpoint, a.vocab.as_deref())?;
    let cfg = &l.ckpt.config;
    let bs = l.run.batch_size;
    let given = a.set.is_some() || a.nsp_set.is_some();
    let mut report: EvalReport = if given {
        match (&a.set, &a.nsp_set, &a.sop_set) {
            (_, Some(n), Some(s)) => cross_objective_eval(&l.ckpt.params, cfg, &load_instances(n)?, &load_instances(s)?, bs)?,
            (Some(set), _, _) => intrinsic_eval(&l.ckpt.params, cfg, &load_instances(set)?, bs)?,
            _ => unreachable!("clap requires both pair sets"),
        }
    } else {
        let data = inspection_docs(&l, a.corpus.as_deref())?;
        if cfg.objective.has_sentence_pair() {
            let nsp = generated_set(&l, &data, Objective::MlmNsp, a.instances, 5)?;
            let sop = generated_set(&l, &data, Objective::MlmSop, a.instances, 6)?;
            cross_objective_eval(&l.ckpt.params, cfg, &nsp, &sop, bs)?
        } else {
            let set = generated_set(&l, &data, cfg.objective, a.instances, 5)?;
            intrinsic_eval(&l.ckpt.params, cfg, &set, bs)?
        }
    };
    report.config_digest = Some(l.run.digest());
    let text = serde_json::to_string_pretty(&report)? + "\n";
    write_output(a.out.as_deref(), &text)
}
