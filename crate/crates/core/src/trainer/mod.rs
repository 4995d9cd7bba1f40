//! Two-phase training: the network alone with a regression loss, then the
//! network, generator and discriminator together.
//!
//! Every random choice (initialization, shuffling, crops, augmentation, GAN
//! noise) is derived from the configured seed and the current epoch, batch or
//! step, so a run resumed from any checkpoint continues exactly as the
//! uninterrupted run would have.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod metrics;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use log::{info, warn};

use crate::augmentation::AugmentCache;
use crate::corpus::{split_corpus, Corpus, Utterance};
use crate::error::{Error, Result};
use crate::model::WavebenderModel;
use crate::nn::gan::gaussian_tensor;
use crate::nn::loss::{composite_objective, lsgan_d_loss, lsgan_g_loss, xsigmoid_loss};
use crate::nn::optim::{cosine_lr, Adam};
use crate::nn::{Discriminator, Generator, ParamStore, WavebenderNet};
use crate::seed::rng_for;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{Precision, TrainingConfig};
pub use data::{Batch, Dataset, Example};
pub use metrics::{EpochRecord, MetricsLog, Phase, StepRecord};

const COLLAPSE_LOSS: f64 = 1e-4;
const COLLAPSE_STEPS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub batch_in_epoch: usize,
    pub best_val: Option<f64>,
    pub disc_collapse_run: u64,
}

pub struct Trainer {
    config: TrainingConfig,
    dtype: DType,
    store: ParamStore,
    net: WavebenderNet,
    generator: Generator,
    discriminator: Discriminator,
    opt_net: Adam,
    opt_gen: Adam,
    opt_disc: Adam,
    data: Dataset,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
    state: TrainState,
    history: Vec<EpochRecord>,
    out_dir: Option<PathBuf>,
    metrics: Option<MetricsLog>,
}

impl Trainer {
    /// Splits `corpus` per the config and prepares features for both sides.
    pub fn new(config: TrainingConfig, corpus: &Corpus, out_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let corpus = match config.max_utterances {
            Some(n) => corpus.truncated(n),
            None => corpus.clone(),
        };
        let (train_ids, test_ids) = split_corpus(&corpus.ids(), config.split_fraction, config.split_seed)?;
        let train = corpus.select(&train_ids)?.into_iter().cloned().collect();
        let test = corpus.select(&test_ids)?.into_iter().cloned().collect();
        Self::with_split(config, train, test, out_dir)
    }

    /// Explicit split; `test` may be empty, in which case no validation
    /// loss is recorded.
    pub fn with_split(
        config: TrainingConfig,
        train: Vec<Utterance>,
        test: Vec<Utterance>,
        out_dir: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        let train_ids = train.iter().map(|u| u.id.clone()).collect();
        let test_ids = test.iter().map(|u| u.id.clone()).collect();
        let cache = config.augment_cache.as_ref().map(AugmentCache::new).transpose()?;
        let data = Dataset::prepare(train, test, &config.mel, cache)?;

        let dtype = config.precision.dtype();
        let mut store = ParamStore::new(dtype, config.seed);
        let net = WavebenderNet::new(config.net.clone(), &mut store, "net")?;
        let generator = Generator::new(&config.gan, &mut store, "gen")?;
        let discriminator = Discriminator::new(&config.gan, &mut store, "disc")?;
        let opt_net = Adam::new(store.vars_with_prefix("net."), config.adam)?;
        let opt_gen = Adam::new(store.vars_with_prefix("gen."), config.adam)?;
        let opt_disc = Adam::new(store.vars_with_prefix("disc."), config.adam)?;

        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            config.save(dir.join("config.toml"))?;
        }
        Ok(Self {
            metrics: out_dir.map(|d| MetricsLog::new(d.join("metrics.jsonl"))),
            out_dir: out_dir.map(Path::to_path_buf),
            config,
            dtype,
            store,
            net,
            generator,
            discriminator,
            opt_net,
            opt_gen,
            opt_disc,
            data,
            train_ids,
            test_ids,
            state: TrainState {
                step: 0,
                epoch: 0,
                batch_in_epoch: 0,
                best_val: None,
                disc_collapse_run: 0,
            },
            history: Vec::new(),
        })
    }

    /// Continues from a checkpoint. The corpus must contain the utterances
    /// the checkpoint was trained on; training settings come from the
    /// checkpoint, with epoch counts optionally overridden.
    pub fn resume(
        corpus: &Corpus,
        checkpoint_dir: impl AsRef<Path>,
        out_dir: Option<&Path>,
        epochs: Option<(u64, u64)>,
    ) -> Result<Self> {
        let ckpt = Checkpoint::load(checkpoint_dir)?;
        let mut config = ckpt.meta.config.clone();
        if let Some((pre, joint)) = epochs {
            config.pretrain_epochs = pre;
            config.joint_epochs = joint;
        }
        let train = corpus.select(&ckpt.meta.train_ids)?.into_iter().cloned().collect();
        let test = corpus.select(&ckpt.meta.test_ids)?.into_iter().cloned().collect();
        let mut trainer = Self::with_split(config, train, test, out_dir)?;
        trainer.restore(&ckpt)?;
        Ok(trainer)
    }

    fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let stats_id = self.data.normalizers.stats.id();
        if stats_id != ckpt.meta.stats_id {
            return Err(Error::FingerprintMismatch {
                expected: ckpt.meta.stats_id.clone(),
                found: stats_id,
            });
        }
        self.store.load_tensors(&ckpt.weights)?;
        let steps = |name: &str| ckpt.meta.optimizer_steps.get(name).copied().unwrap_or(0);
        self.opt_net.load_state(&ckpt.optimizer, steps("net"))?;
        self.opt_gen.load_state(&ckpt.optimizer, steps("gen"))?;
        self.opt_disc.load_state(&ckpt.optimizer, steps("disc"))?;
        self.state = TrainState {
            step: ckpt.meta.step,
            epoch: ckpt.meta.epoch,
            batch_in_epoch: ckpt.meta.batch_in_epoch,
            best_val: ckpt.meta.best_val,
            disc_collapse_run: ckpt.meta.disc_collapse_run,
        };
        self.history = ckpt.meta.history.clone();
        Ok(())
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn state(&self) -> TrainState {
        self.state
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn split(&self) -> (&[String], &[String]) {
        (&self.train_ids, &self.test_ids)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.batches_per_epoch(self.config.batch_size)
    }

    pub fn total_steps(&self) -> u64 {
        self.config.total_epochs() * self.batches_per_epoch() as u64
    }

    pub fn phase(&self) -> Phase {
        if self.state.epoch < self.config.pretrain_epochs {
            Phase::Pretrain
        } else {
            Phase::Joint
        }
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.total_epochs()
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.config.base_lr, self.state.step, self.total_steps())
    }

    /// Batch `batch_in_epoch` of the current epoch.
    pub fn current_batch(&self) -> Result<Batch> {
        let TrainState { epoch, batch_in_epoch, .. } = self.state;
        let idx = self.data.batch_indices(self.config.seed, epoch, batch_in_epoch, self.config.batch_size);
        let examples = idx
            .iter()
            .map(|&i| self.data.train_example(i, epoch, &self.config.augmentation))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = rng_for(self.config.seed, &[&"crop", &epoch, &batch_in_epoch]);
        data::make_batch(&examples, self.config.crop_frames, &mut rng, self.dtype)
    }

    /// One optimization step; finishing the last batch of an epoch also runs
    /// validation and checkpointing.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.is_finished() {
            return Err(Error::InvalidInput("training schedule already complete".into()));
        }
        let batch = self.current_batch()?;
        let lr = self.current_lr();
        let record = match self.phase() {
            Phase::Pretrain => self.pretrain_step(&batch, lr)?,
            Phase::Joint => self.joint_step(&batch, lr)?,
        };
        if let Some(log) = &self.metrics {
            log.step(&record)?;
        }
        self.state.step += 1;
        self.state.batch_in_epoch += 1;
        if self.state.batch_in_epoch == self.batches_per_epoch() {
            self.finish_epoch(record.phase)?;
        }
        Ok(record)
    }

    fn check_finite(&self, what: &str, value: f64, batch: &Batch) -> Result<()> {
        if value.is_finite() {
            return Ok(());
        }
        let mut msg = format!(
            "{what} is {value} at step {} (epoch {}, utterances {:?}, crop starts {:?})",
            self.state.step, self.state.epoch, batch.ids, batch.starts
        );
        if let Some(dir) = &self.out_dir {
            let dump = dir.join("failed_batch");
            std::fs::create_dir_all(&dump)?;
            let tensors = HashMap::from([
                ("input".to_string(), batch.input.clone()),
                ("target".to_string(), batch.target.clone()),
            ]);
            candle_core::safetensors::save(&tensors, dump.join("batch.safetensors"))?;
            std::fs::write(dump.join("batch.txt"), &msg)?;
            msg.push_str(&format!("; batch written to {}", dump.display()));
        }
        Err(Error::NonFiniteLoss(msg))
    }

    fn pretrain_step(&mut self, batch: &Batch, lr: f64) -> Result<StepRecord> {
        let pred = self.net.forward_tensor(&batch.input, true)?;
        let loss = xsigmoid_loss(&pred, &batch.target)?;
        let value = scalar(&loss)?;
        self.check_finite("regression loss", value, batch)?;
        let grads = loss.backward()?;
        self.opt_net.step(&grads, lr)?;
        Ok(StepRecord {
            step: self.state.step,
            epoch: self.state.epoch,
            phase: Phase::Pretrain,
            lr,
            loss_pre: value,
            loss_post: None,
            d_loss: None,
            g_loss: None,
            objective: value,
        })
    }

    fn joint_step(&mut self, batch: &Batch, lr: f64) -> Result<StepRecord> {
        let gan = self.config.gan.clone();
        let pre = self.net.forward_tensor(&batch.input, true)?;
        let noise = if gan.noise_std > 0.0 {
            let mut rng = rng_for(self.config.seed, &[&"gan-noise", &self.state.step]);
            Some(gaussian_tensor(&mut rng, pre.dims3()?, gan.noise_std, self.dtype)?)
        } else {
            None
        };
        let post = self.generator.forward_tensor(&pre, noise.as_ref())?;

        let d_real = self.discriminator.forward_tensor(&batch.target)?;
        let d_fake = self.discriminator.forward_tensor(&post.detach())?;
        let d_loss = lsgan_d_loss(&d_real, &d_fake)?;
        let d_value = scalar(&d_loss)?;
        self.check_finite("discriminator loss", d_value, batch)?;
        self.opt_disc.step(&d_loss.backward()?, lr)?;
        self.track_collapse(d_value);

        let g_loss = lsgan_g_loss(&self.discriminator.forward_tensor(&post)?)?;
        let (total, l_pre, l_post) =
            composite_objective(&pre, &post, &batch.target, &g_loss, gan.objective_weights())?;
        let objective = scalar(&total)?;
        self.check_finite("joint objective", objective, batch)?;
        let grads = total.backward()?;
        self.opt_net.step(&grads, lr)?;
        self.opt_gen.step(&grads, lr)?;
        Ok(StepRecord {
            step: self.state.step,
            epoch: self.state.epoch,
            phase: Phase::Joint,
            lr,
            loss_pre: scalar(&l_pre)?,
            loss_post: Some(scalar(&l_post)?),
            d_loss: Some(d_value),
            g_loss: Some(scalar(&g_loss)?),
            objective,
        })
    }

    fn track_collapse(&mut self, d_loss: f64) {
        if d_loss < COLLAPSE_LOSS {
            self.state.disc_collapse_run += 1;
            if self.state.disc_collapse_run == COLLAPSE_STEPS {
                warn!(
                    "discriminator loss below {COLLAPSE_LOSS} for {COLLAPSE_STEPS} consecutive steps (step {}); it may have collapsed",
                    self.state.step
                );
            }
        } else {
            self.state.disc_collapse_run = 0;
        }
    }

    /// Mean XSigmoid over the validation split before and after the
    /// generator; `None` without a validation split.
    pub fn validate(&self) -> Result<(Option<f64>, Option<f64>)> {
        if self.data.test.is_empty() {
            return Ok((None, None));
        }
        let (mut pre_sum, mut post_sum, mut frames) = (0.0, 0.0, 0usize);
        for ex in &self.data.test {
            let (x, y) = data::example_tensors(ex, 0, ex.n_frames())?;
            let (x, y) = (x.to_dtype(self.dtype)?, y.to_dtype(self.dtype)?);
            let pre = self.net.forward_tensor(&x, true)?;
            let noise = if self.config.gan.noise_std > 0.0 {
                let mut rng = rng_for(self.config.seed, &[&"val-noise", &ex.id]);
                Some(gaussian_tensor(&mut rng, pre.dims3()?, self.config.gan.noise_std, self.dtype)?)
            } else {
                None
            };
            let post = self.generator.forward_tensor(&pre, noise.as_ref())?;
            let n = ex.n_frames();
            pre_sum += scalar(&xsigmoid_loss(&pre, &y)?)? * n as f64;
            post_sum += scalar(&xsigmoid_loss(&post, &y)?)? * n as f64;
            frames += n;
        }
        Ok((Some(pre_sum / frames as f64), Some(post_sum / frames as f64)))
    }

    fn finish_epoch(&mut self, phase: Phase) -> Result<()> {
        let epoch = self.state.epoch;
        let steps = self.batches_per_epoch() as u64;
        let (val_pre, val_post) = self.validate()?;
        let train_loss = self.train_loss()?;
        let record = EpochRecord {
            epoch,
            phase,
            step: self.state.step,
            train_loss,
            val_pre,
            val_post,
        };
        info!(
            "epoch {} ({phase:?}): train {train_loss:.5}, val pre {val_pre:?}, val post {val_post:?}",
            epoch + 1
        );
        if let Some(log) = &self.metrics {
            log.epoch(&record)?;
        }
        self.history.push(record);
        self.state.epoch += 1;
        self.state.batch_in_epoch = 0;
        debug_assert_eq!(self.state.step % steps, 0);

        let improved = match (val_post, self.state.best_val) {
            (Some(v), Some(best)) => v < best,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            self.state.best_val = val_post.or(self.state.best_val);
        }
        if let Some(dir) = self.out_dir.clone() {
            let ckpt = self.checkpoint()?;
            ckpt.save(dir.join("ckpt").join(self.state.step.to_string()))?;
            self.prune_checkpoints(&dir)?;
            if improved {
                let best = dir.join("best");
                if best.exists() {
                    std::fs::remove_dir_all(&best)?;
                }
                ckpt.save(best)?;
            }
        }
        Ok(())
    }

    /// Mean XSigmoid of the network output over the unaugmented training
    /// utterances, full length.
    pub fn train_loss(&self) -> Result<f64> {
        let (mut sum, mut frames) = (0.0, 0usize);
        for ex in &self.data.train {
            let (x, y) = data::example_tensors(ex, 0, ex.n_frames())?;
            let pred = self.net.forward_tensor(&x.to_dtype(self.dtype)?, true)?;
            sum += scalar(&xsigmoid_loss(&pred, &y.to_dtype(self.dtype)?)?)? * ex.n_frames() as f64;
            frames += ex.n_frames();
        }
        Ok(sum / frames as f64)
    }

    fn prune_checkpoints(&self, dir: &Path) -> Result<()> {
        let root = dir.join("ckpt");
        let mut steps: Vec<u64> = std::fs::read_dir(&root)?
            .filter_map(|e| e.ok()?.file_name().to_str()?.parse().ok())
            .collect();
        steps.sort_unstable();
        let keep = self.config.keep_checkpoints.max(1);
        if steps.len() > keep {
            for s in &steps[..steps.len() - keep] {
                std::fs::remove_dir_all(root.join(s.to_string()))?;
            }
        }
        Ok(())
    }

    /// Runs steps until `epoch` epochs are complete (or the schedule ends).
    pub fn run_until_epoch(&mut self, epoch: u64) -> Result<()> {
        while self.state.epoch < epoch.min(self.config.total_epochs()) {
            self.step()?;
        }
        Ok(())
    }

    /// Completes the regression-only phase.
    pub fn pretrain(&mut self) -> Result<()> {
        self.run_until_epoch(self.config.pretrain_epochs)
    }

    /// Completes the joint phase (running any remaining pretraining first).
    pub fn train_joint(&mut self) -> Result<()> {
        self.run_until_epoch(self.config.total_epochs())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut optimizer = HashMap::new();
        let mut optimizer_steps = BTreeMap::new();
        for (name, opt) in [("net", &self.opt_net), ("gen", &self.opt_gen), ("disc", &self.opt_disc)] {
            let (state, steps) = opt.state()?;
            optimizer.extend(state);
            optimizer_steps.insert(name.to_string(), steps);
        }
        let stats = self.data.normalizers.stats.clone();
        Ok(Checkpoint {
            meta: CheckpointMeta {
                format_version: checkpoint::FORMAT_VERSION,
                step: self.state.step,
                epoch: self.state.epoch,
                batch_in_epoch: self.state.batch_in_epoch,
                config: self.config.clone(),
                net_fingerprint: self.config.net.fingerprint(),
                mel_fingerprint: self.config.mel.fingerprint(),
                stats_id: stats.id(),
                mel_norm: self.data.normalizers.mel.clone(),
                fallback_log_f0: self.data.normalizers.fallback_log_f0,
                optimizer_steps,
                train_ids: self.train_ids.clone(),
                test_ids: self.test_ids.clone(),
                best_val: self.state.best_val,
                disc_collapse_run: self.state.disc_collapse_run,
                history: self.history.clone(),
            },
            stats,
            weights: self.store.to_tensors()?,
            optimizer,
        })
    }

    /// Inference copy of the current weights.
    pub fn model(&self) -> Result<WavebenderModel> {
        let n = &self.data.normalizers;
        WavebenderModel::from_tensors(
            &self.config,
            n.stats.clone(),
            n.mel.clone(),
            n.fallback_log_f0,
            &self.store.to_tensors()?,
        )
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Runs the regression-only phase from scratch and returns its final
/// checkpoint.
pub fn pretrain(config: TrainingConfig, corpus: &Corpus, out_dir: Option<&Path>) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(config, corpus, out_dir)?;
    trainer.pretrain()?;
    trainer.checkpoint()
}

/// Joint training initialised from a pretrained checkpoint directory.
pub fn train_joint(corpus: &Corpus, init: impl AsRef<Path>, out_dir: Option<&Path>) -> Result<Checkpoint> {
    let mut trainer = Trainer::resume(corpus, init, out_dir, None)?;
    if trainer.state.epoch < trainer.config.pretrain_epochs {
        return Err(Error::InvalidInput(format!(
            "checkpoint is at epoch {} of {} pretraining epochs",
            trainer.state.epoch, trainer.config.pretrain_epochs
        )));
    }
    trainer.train_joint()?;
    trainer.checkpoint()
}
