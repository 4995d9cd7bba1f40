//! Desired trajectories, formant coupling and the parameters-to-audio
//! pipeline.

pub mod coupling;
pub mod spec;

use std::sync::Arc;

pub use coupling::{
    apply_coupling, apply_coupling_relative, project_formants, CouplingPredictor, CouplingTrainConfig,
};
pub use spec::{build_desired, Action, CouplingPolicy, ManipulationSpec, FORMANT_MARGIN};

use crate::audio::Waveform;
use crate::error::{Error, Result, StageExt};
use crate::mel::MelSpectrogram;
use crate::model::WavebenderModel;
use crate::track::{Feature, ParameterTrack};
use crate::vocoder::Vocoder;

#[derive(Debug, Clone)]
pub struct Rendered {
    pub wave: Waveform,
    pub mel: MelSpectrogram,
}

#[derive(Debug, Clone)]
pub struct Manipulated {
    pub desired: ParameterTrack,
    pub rendered: Rendered,
}

/// Model, vocoder and optional coupling predictors with consistent
/// fingerprints. Immutable; share it behind an `Arc`.
#[derive(Clone)]
pub struct Pipeline {
    model: Arc<WavebenderModel>,
    vocoder: Arc<dyn Vocoder>,
    predictors: Vec<Arc<CouplingPredictor>>,
    enhance: bool,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("model", &self.model.fingerprint())
            .field("predictors", &self.predictors.len())
            .field("enhance", &self.enhance)
            .finish()
    }
}

impl Pipeline {
    pub fn new(model: Arc<WavebenderModel>, vocoder: Arc<dyn Vocoder>) -> Result<Self> {
        model.check_mel_config(vocoder.mel_config()).stage("vocoder")?;
        Ok(Self {
            model,
            vocoder,
            predictors: Vec::new(),
            enhance: true,
        })
    }

    pub fn with_predictor(mut self, predictor: CouplingPredictor) -> Result<Self> {
        let (expected, found) = (self.model.stats.id(), predictor.stats_id());
        if expected != found {
            return Err(Error::FingerprintMismatch { expected, found }.at("coupling"));
        }
        self.predictors.retain(|p| p.dependent() != predictor.dependent());
        self.predictors.push(Arc::new(predictor));
        Ok(self)
    }

    pub fn with_predictors(self, predictors: impl IntoIterator<Item = CouplingPredictor>) -> Result<Self> {
        predictors.into_iter().try_fold(self, Self::with_predictor)
    }

    /// Skips the GAN generator, rendering the regression network output.
    pub fn without_enhancement(mut self) -> Self {
        self.enhance = false;
        self
    }

    pub fn model(&self) -> &WavebenderModel {
        &self.model
    }

    pub fn vocoder(&self) -> &dyn Vocoder {
        self.vocoder.as_ref()
    }

    pub fn predictor(&self, dependent: Feature) -> Option<&CouplingPredictor> {
        self.predictors.iter().find(|p| p.dependent() == dependent).map(|p| p.as_ref())
    }

    pub fn predictors(&self) -> impl Iterator<Item = &CouplingPredictor> {
        self.predictors.iter().map(|p| p.as_ref())
    }

    pub fn analyse(&self, wave: &Waveform) -> Result<ParameterTrack> {
        self.model.analyse(wave).stage("analyse")
    }

    /// Desired track for `spec`, with the dependent formant predicted when a
    /// coupling policy is active.
    pub fn desired(&self, track: &ParameterTrack, spec: &ManipulationSpec) -> Result<ParameterTrack> {
        let desired = build_desired(track, spec).stage("build desired")?;
        match spec.coupling_policy.roles() {
            None => Ok(desired),
            Some((_, dependent)) => {
                let predictor = self.predictor(dependent).ok_or_else(|| {
                    Error::Manipulation(format!("{:?} needs a {dependent} coupling predictor", spec.coupling_policy))
                })?;
                apply_coupling_relative(&desired, track, predictor, spec.coupling_policy).stage("coupling")
            }
        }
    }

    /// normalize, regress, enhance, vocode.
    pub fn render(&self, desired: &ParameterTrack, noise_seed: u64) -> Result<Rendered> {
        let mel = self.model.predict_mel(desired, self.enhance, noise_seed)?;
        let wave = self.vocoder.synthesize(&mel).stage("vocoder")?;
        Ok(Rendered { wave, mel })
    }

    pub fn manipulate(&self, track: &ParameterTrack, spec: &ManipulationSpec, noise_seed: u64) -> Result<Manipulated> {
        let desired = self.desired(track, spec)?;
        let rendered = self.render(&desired, noise_seed)?;
        Ok(Manipulated { desired, rendered })
    }

    pub fn copy_synthesize(&self, wave: &Waveform, noise_seed: u64) -> Result<Manipulated> {
        let track = self.analyse(wave)?;
        self.manipulate(&track, &ManipulationSpec::keep(), noise_seed)
    }
}
