use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{guard_clipping, mix_at_snr, synth_noise, synth_speech, NoiseKind, Utterance};
use crate::dsp::{read_wav, write_wav, SAMPLE_RATE};
use crate::error::{io_err, CoreError, Result};

const MANIFEST: &str = "manifest";
const FORMAT_TAG: &str = "rcunet-corpus-1";
/// Extra noise generated beyond the utterance so the crop offset can vary.
const NOISE_SLACK_SECS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseChoice {
    Babble,
    Factory,
    /// Babble for even utterance indices, factory for odd.
    Mixed,
}

impl NoiseChoice {
    pub fn kind_for(self, index: usize) -> NoiseKind {
        match self {
            NoiseChoice::Babble => NoiseKind::Babble,
            NoiseChoice::Factory => NoiseKind::Factory,
            NoiseChoice::Mixed if index.is_multiple_of(2) => NoiseKind::Babble,
            NoiseChoice::Mixed => NoiseKind::Factory,
        }
    }
}

impl fmt::Display for NoiseChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseChoice::Babble => "babble",
            NoiseChoice::Factory => "factory",
            NoiseChoice::Mixed => "mixed",
        })
    }
}

impl FromStr for NoiseChoice {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "babble" => Ok(NoiseChoice::Babble),
            "factory" => Ok(NoiseChoice::Factory),
            "mixed" => Ok(NoiseChoice::Mixed),
            other => Err(CoreError::Format {
                what: "noise kind",
                detail: format!("unknown noise kind {other:?} (expected babble, factory or mixed)"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn stream_base(self) -> u64 {
        match self {
            Split::Train => 1 << 32,
            Split::Test => 2 << 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    pub min_duration_secs: f64,
    pub max_duration_secs: f64,
    pub snr_db: f64,
    pub noise: NoiseChoice,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            train_count: 64,
            test_count: 16,
            min_duration_secs: 2.0,
            max_duration_secs: 4.0,
            snr_db: 0.0,
            noise: NoiseChoice::Mixed,
        }
    }
}

impl CorpusConfig {
    /// Each utterance draws from its own ChaCha stream keyed by split and
    /// index, so any subset can be regenerated independently.
    pub fn utterance(&self, split: Split, index: usize) -> Result<Utterance> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split.stream_base() + index as u64);
        let duration = if self.max_duration_secs > self.min_duration_secs {
            rng.gen_range(self.min_duration_secs..self.max_duration_secs)
        } else {
            self.min_duration_secs
        };
        let samples = (duration * SAMPLE_RATE as f64).round() as usize;
        let duration = samples as f64 / SAMPLE_RATE as f64;
        let speech_seed: u64 = rng.gen();
        let noise_seed: u64 = rng.gen();
        let kind = self.noise.kind_for(index);
        let mut clean = synth_speech(speech_seed, duration);
        let noise = synth_noise(noise_seed, duration + NOISE_SLACK_SECS, kind);
        let offset = rng.gen_range(0..=noise.len() - clean.len());
        let (mut mixture, mut noise) = mix_at_snr(&clean, &noise, self.snr_db, offset)?;
        guard_clipping(&mut clean, &mut noise, &mut mixture);
        Ok(Utterance {
            id: format!("{}_{index:04}", split.as_str()),
            clean,
            noise,
            mixture,
            snr_db: self.snr_db,
            noise_kind: kind,
        })
    }

    pub fn generate(&self) -> Result<Corpus> {
        let make = |split, count| (0..count).into_par_iter().map(|i| self.utterance(split, i)).collect::<Result<Vec<_>>>();
        Ok(Corpus {
            config: self.clone(),
            train: make(Split::Train, self.train_count)?,
            test: make(Split::Test, self.test_count)?,
        })
    }

    fn header(&self) -> String {
        format!(
            "format={FORMAT_TAG}\nseed={}\ntrain_count={}\ntest_count={}\nmin_duration_s={}\nmax_duration_s={}\nsample_rate={SAMPLE_RATE}\nsnr_db={}\nnoise_kind={}\n",
            self.seed,
            self.train_count,
            self.test_count,
            self.min_duration_secs,
            self.max_duration_secs,
            self.snr_db,
            self.noise
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

fn manifest_err(detail: impl Into<String>) -> CoreError {
    CoreError::Format {
        what: "corpus manifest",
        detail: detail.into(),
    }
}

fn file_stem(dir: &Path, split: &str, id: &str) -> PathBuf {
    dir.join(split).join(id)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(format!("_{suffix}.wav"));
    PathBuf::from(s)
}

impl Corpus {
    /// Writes `{train,test}/{id}_{clean,noise,mix}.wav` and the manifest.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut manifest = self.config.header();
        for (split, utts) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            let sub = dir.join(split.as_str());
            std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
            for u in utts {
                let stem = file_stem(dir, split.as_str(), &u.id);
                write_wav(with_suffix(&stem, "clean"), &u.clean)?;
                write_wav(with_suffix(&stem, "noise"), &u.noise)?;
                write_wav(with_suffix(&stem, "mix"), &u.mixture)?;
                manifest.push_str(&format!(
                    "utterance={}/{},{},{}\n",
                    split.as_str(),
                    u.id,
                    u.noise_kind,
                    u.snr_db
                ));
            }
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, manifest).map_err(io_err(&path))
    }
}

struct Entry {
    split: Split,
    id: String,
    kind: NoiseKind,
    snr_db: f64,
}

fn parse_manifest(text: &str) -> Result<(CorpusConfig, Vec<Entry>)> {
    let mut cfg = CorpusConfig::default();
    let mut entries = Vec::new();
    let mut tagged = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| manifest_err(format!("line {}: expected key=value", lineno + 1)))?;
        let num = |v: &str| v.parse::<f64>().map_err(|e| manifest_err(format!("{key}: {e}")));
        let int = |v: &str| v.parse::<usize>().map_err(|e| manifest_err(format!("{key}: {e}")));
        match key {
            "format" if value == FORMAT_TAG => tagged = true,
            "format" => return Err(manifest_err(format!("unsupported format {value:?}"))),
            "seed" => cfg.seed = value.parse().map_err(|e| manifest_err(format!("seed: {e}")))?,
            "train_count" => cfg.train_count = int(value)?,
            "test_count" => cfg.test_count = int(value)?,
            "min_duration_s" => cfg.min_duration_secs = num(value)?,
            "max_duration_s" => cfg.max_duration_secs = num(value)?,
            "snr_db" => cfg.snr_db = num(value)?,
            "noise_kind" => cfg.noise = value.parse()?,
            "sample_rate" if value == SAMPLE_RATE.to_string() => {}
            "sample_rate" => return Err(manifest_err(format!("sample rate {value} is not {SAMPLE_RATE}"))),
            "utterance" => {
                let parts: Vec<&str> = value.split(',').collect();
                let [path, kind, snr] = parts[..] else {
                    return Err(manifest_err(format!("line {}: bad utterance entry", lineno + 1)));
                };
                let (split, id) = path
                    .split_once('/')
                    .ok_or_else(|| manifest_err(format!("bad utterance path {path:?}")))?;
                let split = match split {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => return Err(manifest_err(format!("unknown split {other:?}"))),
                };
                entries.push(Entry {
                    split,
                    id: id.to_string(),
                    kind: kind.parse()?,
                    snr_db: num(snr)?,
                });
            }
            other => return Err(manifest_err(format!("unknown key {other:?}"))),
        }
    }
    if !tagged {
        return Err(manifest_err("missing format line"));
    }
    Ok((cfg, entries))
}

/// Reads a corpus written by [`Corpus::write`].
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let (config, entries) = parse_manifest(&text)?;
    let mut corpus = Corpus {
        config,
        train: Vec::new(),
        test: Vec::new(),
    };
    for e in entries {
        let stem = file_stem(dir, e.split.as_str(), &e.id);
        let utt = Utterance {
            clean: read_wav(with_suffix(&stem, "clean"))?,
            noise: read_wav(with_suffix(&stem, "noise"))?,
            mixture: read_wav(with_suffix(&stem, "mix"))?,
            id: e.id,
            snr_db: e.snr_db,
            noise_kind: e.kind,
        };
        if utt.clean.len() != utt.mixture.len() || utt.noise.len() != utt.mixture.len() {
            return Err(manifest_err(format!("{}: component lengths differ", utt.id)));
        }
        match e.split {
            Split::Train => corpus.train.push(utt),
            Split::Test => corpus.test.push(utt),
        }
    }
    Ok(corpus)
}

/// Regenerates the corpus described by a manifest file.
pub fn config_from_manifest(path: impl AsRef<Path>) -> Result<CorpusConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(parse_manifest(&text)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            train_count: 2,
            test_count: 1,
            min_duration_secs: 0.5,
            max_duration_secs: 0.8,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn utterances_satisfy_mixing_invariant() {
        let corpus = small().generate().unwrap();
        assert_eq!(corpus.train.len(), 2);
        assert_eq!(corpus.test.len(), 1);
        assert_eq!(corpus.train[0].noise_kind, NoiseKind::Babble);
        assert_eq!(corpus.train[1].noise_kind, NoiseKind::Factory);
        for u in corpus.train.iter().chain(&corpus.test) {
            assert_eq!(u.clean.len(), u.mixture.len());
            for i in 0..u.clean.len() {
                assert_eq!(u.mixture.samples[i], u.clean.samples[i] + u.noise.samples[i]);
            }
            let snr = 10.0 * (u.clean.energy() / u.noise.energy()).log10();
            assert!(snr.abs() < 1e-9);
        }
    }

    #[test]
    fn disk_round_trip_and_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small().generate().unwrap();
        corpus.write(dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.config, corpus.config);
        assert_eq!(loaded.train.len(), 2);
        for (a, b) in loaded.train.iter().zip(&corpus.train) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.noise_kind, b.noise_kind);
            for (x, y) in a.clean.samples.iter().zip(&b.clean.samples) {
                assert!((x - y).abs() < 1e-4);
            }
        }
        let cfg = config_from_manifest(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(cfg.generate().unwrap(), corpus);
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let text = format!("format={FORMAT_TAG}\nbogus=1\n");
        assert!(parse_manifest(&text).is_err());
        assert!(parse_manifest("seed=1\n").is_err());
    }
}
