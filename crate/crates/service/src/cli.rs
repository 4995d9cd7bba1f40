//! Command-line front end. Exit codes: 0 success, 1 usage, 2 runtime.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use wavebender::corpus::synthetic::{desk_corpus, DeskCorpusConfig};
use wavebender::corpus::{Corpus, Utterance};
use wavebender::dsp::{extract_parameters, ExtractOptions};
use wavebender::eval::report::emit_report;
use wavebender::eval::stimuli::{export_stimuli, Condition};
use wavebender::eval::{Evaluator, FullPipeline, VocoderOnly, DEFAULT_M_SET};
use wavebender::manipulation::{coupling, CouplingPolicy, CouplingTrainConfig, ManipulationSpec, Pipeline};
use wavebender::model::WavebenderModel;
use wavebender::trainer::{checkpoint, Trainer, TrainingConfig};
use wavebender::vocoder::fetch::{fetch_hifigan, HifiGanSource};
use wavebender::vocoder::{create_reference_bundle, verify_bundle, VocoderBundle};
use wavebender::{Feature, Waveform};

use crate::api::{self, AppState, VocoderInfo};
use crate::config::ProjectConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "wavebender", version, about = "Speech parameter manipulation through mel-spectrogram regression")]
pub struct Cli {
    /// Project file with [training], [service] and [paths] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root of all randomness (default 0; `train` defaults to the config seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Checkpoint directory, or a training output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocoder bundle directory (default: $WAVEBENDER_VOCODER).
    #[arg(long)]
    pub vocoder: Option<PathBuf>,
    /// Directory with f1/ and f2/ coupling predictors.
    #[arg(long)]
    pub coupling: Option<PathBuf>,
    /// Render the regression output without the GAN generator.
    #[arg(long)]
    pub no_enhance: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Directory of WAV files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Generate a synthetic corpus of this many utterances instead.
    #[arg(long, conflicts_with = "corpus")]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
    Desk,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Pretrain,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    PredictF2FromF1,
    PredictF1FromF2,
    Independent,
}

impl From<PolicyArg> for CouplingPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::PredictF2FromF1 => CouplingPolicy::PredictF2FromF1,
            PolicyArg::PredictF1FromF2 => CouplingPolicy::PredictF1FromF2,
            PolicyArg::Independent => CouplingPolicy::Independent,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write parameter tracks (and optionally mels) for WAV files.
    Extract {
        /// WAV files or directories of WAV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write log-mel spectrograms.
        #[arg(long)]
        mel: bool,
        /// Use the framing and f0 fallback of this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pretrain and jointly train the model, then fit coupling predictors.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the [training] section of the project file.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        pretrain_epochs: Option<u64>,
        #[arg(long)]
        joint_epochs: Option<u64>,
        #[arg(long)]
        max_utterances: Option<usize>,
        /// Stop after the pretraining phase.
        #[arg(long, value_enum, default_value = "all")]
        phase: PhaseArg,
        /// Continue from a checkpoint (or training output directory).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        no_coupling: bool,
        #[arg(long)]
        coupling_epochs: Option<usize>,
    },
    /// Analyse and resynthesize without modification.
    CopySynth {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Write the analysed track here.
        #[arg(long)]
        track_out: Option<PathBuf>,
    },
    /// Scale or replace speech parameters and render the result.
    #[command(group(ArgGroup::new("what").required(true).args(["feature", "spec"])))]
    Manipulate {
        input: PathBuf,
        output: PathBuf,
        /// Feature to scale; repeat together with --scale.
        #[arg(long, requires = "scale")]
        feature: Vec<Feature>,
        #[arg(long)]
        scale: Vec<f64>,
        /// JSON manipulation spec.
        #[arg(long, conflicts_with = "feature")]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[command(flatten)]
        model: ModelArgs,
        /// Write the desired track here.
        #[arg(long)]
        desired_out: Option<PathBuf>,
    },
    /// Copy-synthesis error and manipulation sweep with report tables.
    Evaluate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Evaluate at most this many utterances.
        #[arg(long)]
        limit: Option<usize>,
        /// Use every utterance rather than the checkpoint's test split.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = wavebender::eval::DEFAULT_BOOTSTRAP)]
        bootstrap: usize,
        #[arg(long, value_delimiter = ',')]
        m_set: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        features: Vec<Feature>,
        #[arg(long)]
        no_sweep: bool,
    },
    /// Package A/B listening-test stimuli with a key and rating sheet.
    ExportStimuli {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        all: bool,
        /// Directory of JSON specs, one condition per file.
        #[arg(long)]
        specs: Option<PathBuf>,
    },
    /// Install or verify a vocoder bundle.
    #[command(group(ArgGroup::new("source").required(true).args(["reference", "url", "verify"])))]
    FetchVocoder {
        #[arg(long, required_unless_present = "verify")]
        out: Option<PathBuf>,
        /// Build the offline Griffin-Lim reference bundle.
        #[arg(long)]
        reference: bool,
        /// HiFi-GAN generator weights (safetensors), http(s) or file URL.
        #[arg(long, requires = "sha256")]
        url: Option<String>,
        #[arg(long)]
        sha256: Option<String>,
        #[arg(long)]
        name: Option<String>,
        /// Check an installed bundle against its golden output.
        #[arg(long)]
        verify: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        host: Option<String>,
        /// 0 binds a free port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        session_dir: Option<PathBuf>,
    },
}

/// Missing-argument errors found after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `args` (including the program name), runs and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("run with --help for usage");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let project = match &cli.config {
        Some(p) => ProjectConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ProjectConfig::default(),
    };
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Extract {
            inputs,
            out,
            mel,
            checkpoint,
        } => extract(&project, &inputs, &out, mel, checkpoint.as_deref()),
        Command::Train {
            corpus,
            out,
            preset,
            pretrain_epochs,
            joint_epochs,
            max_utterances,
            phase,
            resume,
            no_coupling,
            coupling_epochs,
        } => {
            let mut cfg = match preset {
                Some(Preset::Paper) => TrainingConfig::default(),
                Some(Preset::Desk) => TrainingConfig::desk(),
                Some(Preset::Tiny) => TrainingConfig::tiny(),
                None => project.training.clone(),
            };
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cfg.pretrain_epochs = pretrain_epochs.unwrap_or(cfg.pretrain_epochs);
            cfg.joint_epochs = joint_epochs.unwrap_or(cfg.joint_epochs);
            cfg.max_utterances = max_utterances.or(cfg.max_utterances);
            let corpus = load_corpus(&corpus, cfg.corpus_path.as_deref(), cfg.mel.sample_rate)?;
            let coupling = (!no_coupling).then(|| CouplingTrainConfig {
                epochs: coupling_epochs.unwrap_or(CouplingTrainConfig::default().epochs),
                seed: cfg.seed,
                ..CouplingTrainConfig::default()
            });
            let epochs = (pretrain_epochs.is_some() || joint_epochs.is_some()).then_some((cfg.pretrain_epochs, cfg.joint_epochs));
            train(cfg, &corpus, &out, phase, resume.as_deref(), epochs, coupling)
        }
        Command::CopySynth {
            input,
            output,
            model,
            track_out,
        } => {
            let loaded = load_pipeline(&project, &model)?;
            let wave = Waveform::read_wav(&input).with_context(|| format!("reading {}", input.display()))?;
            let out = loaded.pipeline.copy_synthesize(&wave, seed)?;
            out.rendered.wave.write_wav(&output)?;
            if let Some(p) = track_out {
                out.desired.write_csv(p)?;
            }
            println!("wrote {}", output.display());
            Ok(())
        }
        Command::Manipulate {
            input,
            output,
            feature,
            scale,
            spec,
            policy,
            model,
            desired_out,
        } => {
            let mut spec = match spec {
                Some(p) => ManipulationSpec::load(&p).with_context(|| format!("reading {}", p.display()))?,
                None => spec_from_flags(&feature, &scale)?,
            };
            if let Some(p) = policy {
                spec = spec.with_policy(p.into());
            }
            let loaded = load_pipeline(&project, &model)?;
            let wave = Waveform::read_wav(&input).with_context(|| format!("reading {}", input.display()))?;
            let track = loaded.pipeline.analyse(&wave)?;
            let out = loaded.pipeline.manipulate(&track, &spec, seed)?;
            out.rendered.wave.write_wav(&output)?;
            if let Some(p) = desired_out {
                out.desired.write_csv(p)?;
            }
            println!("wrote {}", output.display());
            Ok(())
        }
        Command::Evaluate {
            corpus,
            model,
            out,
            limit,
            all,
            bootstrap,
            m_set,
            features,
            no_sweep,
        } => {
            let loaded = load_pipeline(&project, &model)?;
            let utts = eval_utterances(&project, &corpus, &loaded, limit, all)?;
            let mut evaluator = Evaluator::for_pipeline(&loaded.pipeline, seed);
            evaluator.bootstrap = bootstrap;
            let full = FullPipeline {
                pipeline: &loaded.pipeline,
                seed,
            };
            let voc = VocoderOnly {
                vocoder: loaded.pipeline.vocoder(),
            };
            let recon = evaluator.copy_synthesis_error(&utts, &[&full, &voc])?;
            let manip = if no_sweep {
                wavebender::eval::ManipulationReport::empty(seed)
            } else {
                let m_set = if m_set.is_empty() { DEFAULT_M_SET.to_vec() } else { m_set };
                let features = if features.is_empty() { Feature::ALL.to_vec() } else { features };
                evaluator.manipulation_sweep(&loaded.pipeline, &utts, &features, &m_set)?
            };
            let written = emit_report(&out, &recon, &manip)?;
            std::fs::write(
                out.join("summary.json"),
                serde_json::to_string_pretty(&serde_json::json!({ "reconstruction": recon, "manipulation": manip }))?,
            )?;
            for s in &recon.systems {
                let row: Vec<String> = Feature::ALL.iter().map(|&f| format!("{f} {:.4}", s.feature(f).mean)).collect();
                println!("{:<14} {}", s.name, row.join("  "));
            }
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::ExportStimuli {
            corpus,
            model,
            out,
            limit,
            all,
            specs,
        } => {
            let loaded = load_pipeline(&project, &model)?;
            let utts = eval_utterances(&project, &corpus, &loaded, limit, all)?;
            let mut conditions = vec![Condition::Natural, Condition::VocoderOnly];
            match specs {
                Some(dir) => {
                    for (name, spec) in ManipulationSpec::load_dir(&dir)? {
                        conditions.push(Condition::Manipulation { name, spec });
                    }
                }
                None => {
                    for (name, f) in [("f0_x1.2", Feature::F0), ("f1_x1.2", Feature::F1)] {
                        let mut spec = ManipulationSpec::scale(f, 1.2);
                        if let Some((_, dep)) = spec.coupling_policy.roles() {
                            if loaded.pipeline.predictor(dep).is_none() {
                                spec = spec.with_policy(CouplingPolicy::Independent);
                            }
                        }
                        conditions.push(Condition::Manipulation { name: name.into(), spec });
                    }
                }
            }
            let set = export_stimuli(&loaded.pipeline, &utts, &conditions, &out, seed)?;
            println!("wrote {} trials to {}", set.trials.len(), out.display());
            Ok(())
        }
        Command::FetchVocoder {
            out,
            reference,
            url,
            sha256,
            name,
            verify,
        } => {
            let mel = &project.training.mel;
            if let Some(dir) = verify {
                let report = verify_bundle(&dir, Some(mel))?;
                println!("{}", serde_json::to_string_pretty(&report)?);
                if !report.passed {
                    bail!("bundle {} failed golden verification", dir.display());
                }
                return Ok(());
            }
            let out = out.ok_or_else(|| usage("--out is required"))?;
            let bundle = if reference {
                create_reference_bundle(&out, mel)?
            } else {
                let url = url.ok_or_else(|| usage("--url is required"))?;
                let sha = sha256.ok_or_else(|| usage("--sha256 is required with --url"))?;
                let mut source = HifiGanSource::new(url, sha);
                if let Some(n) = name {
                    source.name = n;
                }
                fetch_hifigan(&out, &source, mel)?
            };
            let m = bundle.manifest();
            println!("installed {} ({}) at {}", m.name, m.version, out.display());
            Ok(())
        }
        Command::Serve {
            model,
            host,
            port,
            session_dir,
        } => {
            let mut service = project.service.clone();
            service.host = host.unwrap_or(service.host);
            service.port = port.unwrap_or(service.port);
            service.session_dir = session_dir.or(service.session_dir);
            let loaded = load_pipeline(&project, &model)?;
            let addr = format!("{}:{}", service.host, service.port);
            let state = Arc::new(AppState::new(loaded.pipeline, loaded.vocoder, service)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
                let bound = listener.local_addr()?;
                println!("listening on http://{bound}");
                println!("port {}", bound.port());
                let _ = std::io::stdout().flush();
                api::serve(state, listener).await?;
                Ok(())
            })
        }
    }
}

fn spec_from_flags(features: &[Feature], scales: &[f64]) -> anyhow::Result<ManipulationSpec> {
    if features.len() != scales.len() {
        return Err(usage(format!("{} --feature values but {} --scale values", features.len(), scales.len())));
    }
    let mut iter = features.iter().zip(scales);
    let (&f, &m) = iter.next().ok_or_else(|| usage("--feature is required"))?;
    let mut spec = ManipulationSpec::scale(f, m);
    for (&f, &m) in iter {
        let extra = ManipulationSpec::scale(f, m);
        spec.actions.extend(extra.actions);
        if f.is_formant() {
            spec.coupling_policy = extra.coupling_policy;
        }
    }
    Ok(spec)
}

pub struct Loaded {
    pub pipeline: Arc<Pipeline>,
    pub vocoder: VocoderInfo,
    pub checkpoint: PathBuf,
}

fn coupling_dir(explicit: Option<&Path>, given: &Path, resolved: &Path) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    [Some(given.to_path_buf()), resolved.parent().map(Path::to_path_buf), resolved.parent().and_then(Path::parent).map(Path::to_path_buf)]
        .into_iter()
        .flatten()
        .map(|d| d.join("coupling"))
        .find(|d| d.is_dir())
}

/// Model, vocoder and coupling predictors from flags, falling back to the
/// project `[paths]`.
pub fn load_pipeline(project: &ProjectConfig, args: &ModelArgs) -> anyhow::Result<Loaded> {
    let given = args
        .checkpoint
        .clone()
        .or_else(|| project.paths.checkpoint.clone())
        .ok_or_else(|| usage("--checkpoint is required (or set paths.checkpoint)"))?;
    let resolved = checkpoint::resolve(&given)?;
    log::info!("loading checkpoint {}", resolved.display());
    let model = WavebenderModel::load(&resolved)?;
    let vocoder_path = args.vocoder.clone().or_else(|| project.paths.vocoder.clone());
    let bundle = VocoderBundle::locate(vocoder_path.as_deref())?;
    let info = VocoderInfo::from_bundle(&bundle);
    let mut pipeline = Pipeline::new(Arc::new(model), Arc::new(bundle))?;
    let explicit = args.coupling.as_deref().or(project.paths.coupling.as_deref());
    if let Some(dir) = coupling_dir(explicit, &given, &resolved) {
        pipeline = pipeline.with_predictors(coupling::load_all(&dir)?)?;
    }
    if args.no_enhance {
        pipeline = pipeline.without_enhancement();
    }
    Ok(Loaded {
        pipeline: Arc::new(pipeline),
        vocoder: info,
        checkpoint: resolved,
    })
}

/// `--synthetic` corpora are fixed by their size, so `train` and `evaluate`
/// see the same utterances.
fn load_corpus(args: &CorpusArgs, fallback: Option<&Path>, sample_rate: u32) -> anyhow::Result<Corpus> {
    if let Some(n) = args.synthetic {
        return Ok(desk_corpus(&DeskCorpusConfig {
            n_utterances: n,
            sample_rate,
            ..DeskCorpusConfig::default()
        })?);
    }
    let dir = args
        .corpus
        .as_deref()
        .or(fallback)
        .ok_or_else(|| usage("--corpus or --synthetic is required"))?;
    Corpus::load_dir(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

/// The checkpoint's held-out utterances when the corpus has them all, else
/// every utterance; then the first `limit`.
fn eval_utterances(
    project: &ProjectConfig,
    args: &CorpusArgs,
    loaded: &Loaded,
    limit: Option<usize>,
    all: bool,
) -> anyhow::Result<Vec<Utterance>> {
    let meta = checkpoint::read_meta(&loaded.checkpoint)?;
    let corpus = load_corpus(args, project.training.corpus_path.as_deref(), meta.config.mel.sample_rate)?;
    let mut utts: Vec<Utterance> = match corpus.select(&meta.test_ids) {
        Ok(test) if !all && !test.is_empty() => test.into_iter().cloned().collect(),
        _ => corpus.utterances().to_vec(),
    };
    if let Some(n) = limit {
        utts.truncate(n);
    }
    if utts.is_empty() {
        bail!("no utterances to evaluate");
    }
    Ok(utts)
}

fn wav_files(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn extract(project: &ProjectConfig, inputs: &[PathBuf], out: &Path, mel: bool, ckpt: Option<&Path>) -> anyhow::Result<()> {
    let (options, mel_config) = match ckpt {
        Some(c) => {
            let model = WavebenderModel::load(checkpoint::resolve(c)?)?;
            (model.extract_options(), model.mel_config.clone())
        }
        None => {
            let m = project.training.mel.clone();
            (ExtractOptions::with_frame(m.frame_config()), m)
        }
    };
    std::fs::create_dir_all(out)?;
    let files = wav_files(inputs)?;
    if files.is_empty() {
        bail!("no WAV files found");
    }
    for f in files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("track").to_string();
        let wave = Waveform::read_wav(&f).with_context(|| format!("reading {}", f.display()))?;
        let track = extract_parameters(&wave, &options).with_context(|| format!("analysing {}", f.display()))?;
        track.write_csv(out.join(format!("{stem}.csv")))?;
        if mel {
            wavebender::mel::compute(&wave, &mel_config)?.save(out.join(format!("{stem}.mel")))?;
        }
        println!("{stem}: {} frames", track.n_frames());
    }
    Ok(())
}

fn train(
    cfg: TrainingConfig,
    corpus: &Corpus,
    out: &Path,
    phase: PhaseArg,
    resume: Option<&Path>,
    epochs: Option<(u64, u64)>,
    coupling_cfg: Option<CouplingTrainConfig>,
) -> anyhow::Result<()> {
    let mut trainer = match resume {
        Some(r) => Trainer::resume(corpus, checkpoint::resolve(r)?, Some(out), epochs)?,
        None => Trainer::new(cfg, corpus, Some(out))?,
    };
    match phase {
        PhaseArg::Pretrain => trainer.pretrain()?,
        PhaseArg::All => trainer.train_joint()?,
    }
    if let Some(last) = trainer.history().last() {
        println!(
            "epoch {}: train {:.5}, validation {}",
            trainer.state().epoch,
            last.train_loss,
            last.val_post.map_or("n/a".to_string(), |v| format!("{v:.5}"))
        );
    }
    if let (Some(ccfg), PhaseArg::All) = (coupling_cfg, phase) {
        let model = trainer.model()?;
        let (train_ids, test_ids) = trainer.split();
        let analyse = |ids: &[String]| -> anyhow::Result<Vec<_>> {
            corpus
                .select(ids)?
                .into_iter()
                .map(|u| Ok(model.analyse(&u.wave)?))
                .collect()
        };
        let (tr, va) = (analyse(train_ids)?, analyse(test_ids)?);
        let predictors = coupling::train_both(&tr, &va, &model.stats, &ccfg)?;
        coupling::save_all(out.join("coupling"), &predictors)?;
        for p in &predictors {
            println!("coupling {}: validation RMSE {:.1} Hz", p.dependent(), p.meta().validation_rmse_hz);
        }
    }
    println!("checkpoints in {}", out.display());
    Ok(())
}
