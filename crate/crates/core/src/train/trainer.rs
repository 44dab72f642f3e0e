use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use crate::data::vocab::PAD;
use crate::data::{
    encode_documents, generate_instances, pack_batch, read_documents, Batch, Document,
    InstanceSpec, TrainingInstance, Vocabulary,
};
use crate::diagnostics::{intrinsic_eval, EvalReport};
use crate::error::{Error, Result};
use crate::model::{
    build_model, compute_gradients, warm_start_expand, Checkpoint, LossValues, ModelConfig,
    ParameterStore,
};
use crate::optim::{lamb_step, OptimizerState, Schedule};

/// Caps the number of threads a command may use.
pub const THREADS_ENV: &str = "ALBERT_LAB_THREADS";

const QUEUE_DEPTH: usize = 4;

// independent ChaCha streams under one seed
const STREAM_DATA: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_EVAL: u64 = 3;

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Thread budget from [`THREADS_ENV`], 2 when unset or unparsable.
pub fn thread_budget() -> usize {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                log::warn!("ignoring {THREADS_ENV}={v:?}; expected a positive integer");
                2
            }
        },
        Err(_) => 2,
    }
}

/// Vocabulary plus tokenized documents.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub docs: Vec<Document>,
}

impl Dataset {
    /// Reads `corpus`, building a vocabulary of at most `max_vocab` entries
    /// unless one is given.
    pub fn load(corpus: &Path, vocab: Option<Vocabulary>, max_vocab: usize) -> Result<Self> {
        let text = read_documents(corpus)?;
        let vocab = match vocab {
            Some(v) => v,
            None => Vocabulary::build(crate::data::corpus::segment_lines(&text), max_vocab)?,
        };
        if vocab.len() > max_vocab {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but the model holds {max_vocab}",
                vocab.len()
            )));
        }
        let docs = encode_documents(&text, &vocab);
        Ok(Self { vocab, docs })
    }

    /// Training data of a run, honoring its vocabulary file if any.
    pub fn for_run(run: &RunConfig) -> Result<Self> {
        let vocab = run.vocab.as_deref().map(Vocabulary::load).transpose()?;
        Self::load(&run.corpus, vocab, run.model.vocab_size)
    }
}

pub fn instance_spec(run: &RunConfig, vocab_len: usize, short_prob: f64) -> InstanceSpec {
    InstanceSpec {
        objective: run.model.objective,
        max_len: run.max_seq_len,
        short_prob,
        masking: run.masking.clone(),
        vocab_size: vocab_len,
    }
}

/// Deterministic stream of training batches.
pub struct BatchSource {
    docs: Vec<Document>,
    spec: InstanceSpec,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSource {
    pub fn new(docs: Vec<Document>, spec: InstanceSpec, batch_size: usize, rng: ChaCha8Rng) -> Self {
        Self {
            docs,
            spec,
            batch_size,
            rng,
        }
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let (insts, _) =
            generate_instances(&self.docs, &self.spec, self.batch_size, &mut self.rng)?;
        pack_batch(&insts, self.spec.max_len, PAD)
    }
}

enum Feed {
    Inline(BatchSource),
    Worker {
        rx: Receiver<Result<Batch>>,
        _handle: JoinHandle<()>,
    },
}

impl Feed {
    fn new(mut source: BatchSource, batches: u64, threads: usize) -> Self {
        if threads < 2 {
            return Feed::Inline(source);
        }
        let (tx, rx) = sync_channel(QUEUE_DEPTH);
        let handle = std::thread::spawn(move || {
            for _ in 0..batches {
                let b = source.next_batch();
                let failed = b.is_err();
                if tx.send(b).is_err() || failed {
                    break;
                }
            }
        });
        Feed::Worker {
            rx,
            _handle: handle,
        }
    }

    fn next(&mut self) -> Result<Batch> {
        match self {
            Feed::Inline(s) => s.next_batch(),
            Feed::Worker { rx, .. } => rx
                .recv()
                .map_err(|_| Error::Usage("data worker stopped early".into()))?,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    pub warm_start: Option<PathBuf>,
    pub no_dropout: bool,
    /// Overrides [`thread_budget`].
    pub threads: Option<usize>,
}

/// Loss measured at the parameters after `step` updates, and the learning
/// rate of the update that followed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: LossValues,
}

pub struct Trainer {
    run: RunConfig,
    model: ModelConfig,
    store: ParameterStore,
    optimizer: OptimizerState,
    schedule: Schedule,
    feed: Feed,
    dropout_rng: ChaCha8Rng,
    vocab: Vocabulary,
    eval_set: Vec<TrainingInstance>,
}

impl Trainer {
    pub fn new(run: RunConfig, opts: &PretrainOptions) -> Result<Self> {
        let mut run = run;
        if opts.no_dropout {
            run.model.dropout_p = 0.0;
        }
        let run = run.validate()?;
        run.check_paths()?;
        let model = run.model.clone();
        let data = Dataset::for_run(&run)?;
        let store = match &opts.warm_start {
            Some(path) => {
                let ckpt = Checkpoint::load(path)?;
                log::info!(
                    "warm start from {} ({} layers -> {})",
                    path.display(),
                    ckpt.config.num_layers,
                    model.num_layers
                );
                warm_start_expand(&ckpt.params, &ckpt.config, &model)?
            }
            None => build_model(&model, run.seed)?,
        };

        let eval_set = if run.eval_every > 0 {
            let eval = match &run.eval_corpus {
                Some(p) => Dataset::load(p, Some(data.vocab.clone()), model.vocab_size)?,
                None => data.clone(),
            };
            let spec = instance_spec(&run, data.vocab.len(), 0.0);
            let mut rng = seeded_stream(run.seed, STREAM_EVAL);
            generate_instances(&eval.docs, &spec, run.eval_instances, &mut rng)?.0
        } else {
            Vec::new()
        };

        let spec = instance_spec(&run, data.vocab.len(), run.short_seq_prob);
        let source = BatchSource::new(
            data.docs,
            spec,
            run.batch_size,
            seeded_stream(run.seed, STREAM_DATA),
        );
        let threads = opts.threads.unwrap_or_else(thread_budget);
        Ok(Self {
            optimizer: OptimizerState::new(run.optimizer)?,
            schedule: run.schedule()?,
            feed: Feed::new(source, run.max_steps, threads),
            dropout_rng: seeded_stream(run.seed, STREAM_DROPOUT),
            vocab: data.vocab,
            eval_set,
            store,
            model,
            run,
        })
    }

    pub fn run_config(&self) -> &RunConfig {
        &self.run
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn steps_done(&self) -> u64 {
        self.optimizer.step()
    }

    pub fn finished(&self) -> bool {
        self.steps_done() >= self.run.max_steps
    }

    /// One batch, one gradient, one LAMB update. On error nothing is updated.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.steps_done();
        let batch = self.feed.next()?;
        let loss = compute_gradients(
            &mut self.store,
            &self.model,
            &batch,
            true,
            &mut self.dropout_rng,
        )?;
        let lr = self.schedule.lr_at_step(step + 1);
        lamb_step(&mut self.store, &mut self.optimizer, lr)?;
        Ok(StepRecord { step, lr, loss })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.clone(),
            params: self.store.clone(),
            optimizer: Some(self.optimizer.moments.clone()),
        }
    }

    /// Held-out intrinsic evaluation, when the run has an eval set.
    pub fn evaluate(&self) -> Option<Result<EvalReport>> {
        (!self.eval_set.is_empty())
            .then(|| intrinsic_eval(&self.store, &self.model, &self.eval_set, self.run.batch_size))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainSummary {
    pub config_digest: String,
    pub steps: u64,
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub first_mlm_loss: f64,
    pub last_mlm_loss: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_digest: &'a str,
    config: &'a RunConfig,
    vocab_entries: usize,
    steps_completed: u64,
    last_checkpoint: Option<&'a Path>,
    status: &'a str,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes to a temporary name first so a crash never leaves a torn file.
fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    ckpt.save(&tmp)?;
    let rename = |from: PathBuf, to: PathBuf| std::fs::rename(&from, &to).map_err(|e| Error::io(&to, e));
    rename(crate::model::checkpoint::config_path(&tmp), crate::model::checkpoint::config_path(path))?;
    rename(tmp, path.to_path_buf())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Full training run: loss log, periodic checkpoints, held-out evals and a
/// final checkpoint under `run.output_dir`.
pub fn pretrain(run: RunConfig, opts: &PretrainOptions) -> Result<PretrainSummary> {
    let mut trainer = Trainer::new(run, opts)?;
    let run = trainer.run_config().clone();
    let digest = run.digest();
    let out = run.output_dir.clone();
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    trainer.vocab().save(&out.join("vocab.txt"))?;
    let vocab_entries = trainer.vocab().len();
    let manifest_path = out.join("manifest.json");
    let manifest = |steps, last: Option<&Path>, status: &str| -> Result<()> {
        let m = Manifest {
            config_digest: &digest,
            config: &run,
            vocab_entries,
            steps_completed: steps,
            last_checkpoint: last,
            status,
        };
        write_json(&manifest_path, &m)
    };
    manifest(0, None, "running")?;

    let log_path = out.join("loss.csv");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let io = |e| Error::io(&log_path, e);
    writeln!(log, "step,lr,total_loss,mlm_loss,sp_loss").map_err(io)?;
    let eval_path = out.join("eval.csv");
    let mut eval_log = if run.eval_every > 0 {
        let mut w = BufWriter::new(File::create(&eval_path).map_err(|e| Error::io(&eval_path, e))?);
        writeln!(w, "step,mlm_accuracy,sp_accuracy").map_err(|e| Error::io(&eval_path, e))?;
        Some(w)
    } else {
        None
    };

    let mut last_good: Option<PathBuf> = None;
    let mut first_mlm = None;
    let mut last_mlm = f64::NAN;
    while !trainer.finished() {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                log.flush().map_err(io)?;
                let steps = trainer.steps_done();
                manifest(steps, last_good.as_deref(), "aborted")?;
                log::error!(
                    "training aborted at step {steps}; last good checkpoint: {}",
                    last_good
                        .as_deref()
                        .map_or("none".to_string(), |p| p.display().to_string())
                );
                return Err(e);
            }
        };
        first_mlm.get_or_insert(rec.loss.mlm);
        last_mlm = rec.loss.mlm;
        writeln!(
            log,
            "{},{},{},{},{}",
            rec.step,
            rec.lr,
            rec.loss.total,
            rec.loss.mlm,
            fmt_opt(rec.loss.sp)
        )
        .map_err(io)?;
        let done = trainer.steps_done();
        if run.checkpoint_every > 0 && done % run.checkpoint_every == 0 {
            let path = ckpt_dir.join(format!("step-{done:06}.albt"));
            save_checkpoint(&trainer.checkpoint(), &path)?;
            last_good = Some(path);
        }
        if let Some(w) = eval_log.as_mut().filter(|_| done % run.eval_every == 0) {
            if let Some(report) = trainer.evaluate() {
                let r = report?;
                writeln!(w, "{done},{},{}", fmt_opt(r.mlm_accuracy), fmt_opt(r.sp_accuracy))
                    .map_err(|e| Error::io(&eval_path, e))?;
            }
        }
        if done % 100 == 0 {
            log::info!("step {done}: loss {:.4} (mlm {:.4})", rec.loss.total, rec.loss.mlm);
        }
    }
    log.flush().map_err(io)?;
    if let Some(w) = eval_log.as_mut() {
        w.flush().map_err(|e| Error::io(&eval_path, e))?;
    }
    let final_path = out.join("final.albt");
    save_checkpoint(&trainer.checkpoint(), &final_path)?;
    let steps = trainer.steps_done();
    manifest(steps, Some(&final_path), "complete")?;
    Ok(PretrainSummary {
        config_digest: digest,
        steps,
        final_checkpoint: final_path,
        loss_log: log_path,
        first_mlm_loss: first_mlm.unwrap_or(f64::NAN),
        last_mlm_loss: last_mlm,
    })
}
