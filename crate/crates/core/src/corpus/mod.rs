//! Utterance corpora: loading, saving and train/test splitting.

pub mod synthetic;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub wave: Waveform,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    utterances: Vec<Utterance>,
}

impl Corpus {
    /// Utterances are kept sorted by id.
    pub fn new(mut utterances: Vec<Utterance>) -> Result<Self> {
        utterances.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = utterances.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInput(format!("duplicate utterance id {}", w[0].id)));
        }
        Ok(Self { utterances })
    }

    /// Loads every `*.wav` under `dir` (or `dir/wavs/`, the LJ Speech layout);
    /// the file stem is the utterance id.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let wav_dir = if dir.join("wavs").is_dir() {
            dir.join("wavs")
        } else {
            dir.to_path_buf()
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&wav_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidInput(format!("no .wav files in {}", wav_dir.display())));
        }
        let utterances = paths
            .iter()
            .map(|p| {
                let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                Waveform::read_wav(p)
                    .map(|wave| Utterance { id, wave })
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(utterances)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref().join("wavs");
        std::fs::create_dir_all(&dir)?;
        for u in &self.utterances {
            u.wave.write_wav(dir.join(format!("{}.wav", u.id)))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.utterances.iter().map(|u| u.id.clone()).collect()
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances
            .binary_search_by(|u| u.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.utterances[i])
    }

    /// Subset in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Utterance>> {
        ids.iter()
            .map(|id| self.get(id).ok_or_else(|| Error::InvalidInput(format!("unknown utterance {id}"))))
            .collect()
    }

    /// First `n` utterances by id.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            utterances: self.utterances.iter().take(n).cloned().collect(),
        }
    }
}

/// Seeded random split. The training side holds `round(fraction·N)`
/// utterances, clamped so that both sides are non-empty.
pub fn split_corpus(ids: &[String], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 utterances to split, got {}",
            ids.len()
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.dedup();
    if shuffled.len() != ids.len() {
        return Err(Error::InvalidInput("duplicate utterance ids".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = shuffled.split_off(n_train);
    let mut train = shuffled;
    train.sort();
    let mut test = test;
    test.sort();
    Ok((train, test))
}
