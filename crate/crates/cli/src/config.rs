//! Run configuration: flags layered over an optional JSON config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use subrank_core::attribution::{IgConfig, LayerRange, Scheme, TargetWeighting};
use subrank_core::data::{PoolMode, SubstitutionInstance};
use subrank_core::encoder::{EncoderConfig, TargetMode};
use subrank_core::scorer::RankOptions;
use subrank_core::tokenizer::Vocabulary;
use subrank_core::Encoder;

pub const REFERENCE_BACKEND: &str = "reference";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgMode {
    Prob,
    L2,
}

impl From<IgMode> for TargetMode {
    fn from(m: IgMode) -> Self {
        match m {
            IgMode::Prob => TargetMode::VocabProb,
            IgMode::L2 => TargetMode::L2Norm,
        }
    }
}

/// Flags shared by every command that runs the encoder.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON file with the same fields as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Seed of the reference encoder weights (and of the synthetic corpus).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Vocabulary file, one piece per line. Derived from the input when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Reference-encoder weight file; replaces seeded initialization.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// target, one, attn or ig.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long, overrides_with = "no_include_target")]
    pub include_target: bool,
    #[arg(long, overrides_with = "include_target")]
    pub no_include_target: bool,
    /// Let the target's own raw score join the softmax instead of fixing it at 1.
    #[arg(long)]
    pub target_in_softmax: bool,
    /// Weight and compare [CLS]/[SEP] like ordinary tokens.
    #[arg(long)]
    pub include_specials: bool,
    /// 1-based inclusive layer range, START:END.
    #[arg(long)]
    pub layers: Option<LayerRange>,
    #[arg(long)]
    pub ig_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub ig_mode: Option<IgMode>,
    /// Re-pool candidates of the input before ranking.
    #[arg(long)]
    pub pool: Option<PoolMode>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_positions: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    seed: Option<u64>,
    vocab: Option<PathBuf>,
    weights: Option<PathBuf>,
    scheme: Option<String>,
    include_target: Option<bool>,
    target_in_softmax: Option<bool>,
    include_specials: Option<bool>,
    layers: Option<String>,
    ig_steps: Option<usize>,
    ig_mode: Option<IgMode>,
    pool: Option<String>,
    jobs: Option<usize>,
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    d_model: Option<usize>,
    n_heads: Option<usize>,
    n_layers: Option<usize>,
    ffn_dim: Option<usize>,
    max_positions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    /// Seeded reference weights; the vocabulary size is filled in later.
    Seeded(EncoderConfig),
    Weights(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backend: String,
    pub seed: u64,
    pub model: ModelSource,
    pub vocab: Option<PathBuf>,
    pub scheme: Scheme,
    pub target: TargetWeighting,
    pub layers: Option<LayerRange>,
    /// Present iff the scheme is integrated gradients.
    pub ig: Option<IgConfig>,
    pub include_specials: bool,
    pub pool: Option<PoolMode>,
    pub jobs: usize,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl RunArgs {
    /// Merge flags over the config file and defaults. `default_scheme` is used
    /// when neither source names a scheme.
    pub fn resolve(&self, default_scheme: Scheme) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                serde_json::from_str::<FileConfig>(&text)
                    .with_context(|| format!("invalid config {}", path.display()))?
            }
            None => FileConfig::default(),
        };

        let scheme = match (self.scheme, &file.scheme) {
            (Some(s), _) => s,
            (None, Some(s)) => s.parse()?,
            (None, None) => default_scheme,
        };
        let layers = match (self.layers, &file.layers) {
            (Some(l), _) => Some(l),
            (None, Some(l)) => Some(l.parse()?),
            (None, None) => None,
        };
        let pool = match (self.pool, &file.pool) {
            (Some(p), _) => Some(p),
            (None, Some(p)) => Some(p.parse()?),
            (None, None) => None,
        };

        let include_target = if self.no_include_target {
            false
        } else if self.include_target {
            true
        } else {
            file.include_target.unwrap_or(true)
        };
        let in_softmax = self.target_in_softmax || file.target_in_softmax.unwrap_or(false);
        let target = match (include_target, in_softmax) {
            (_, false) => TargetWeighting::from_include_target(include_target),
            (true, true) => TargetWeighting::InSoftmax,
            (false, true) => bail!("--target-in-softmax contradicts --no-include-target"),
        };

        let ig_steps = self.ig_steps.or(file.ig_steps);
        let ig_mode = self.ig_mode.or(file.ig_mode);
        let ig = if scheme == Scheme::IntegratedGradients {
            let defaults = IgConfig::default();
            Some(IgConfig {
                steps: ig_steps.unwrap_or(defaults.steps),
                mode: ig_mode.map(TargetMode::from).unwrap_or(defaults.mode),
            })
        } else if ig_steps.is_some() || ig_mode.is_some() {
            bail!("--ig-steps and --ig-mode only apply to --scheme ig");
        } else {
            None
        };

        let seed = self.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let weights = self.weights.clone().or(file.weights);
        let sizes = [
            self.d_model.or(file.d_model),
            self.n_heads.or(file.n_heads),
            self.n_layers.or(file.n_layers),
            self.ffn_dim.or(file.ffn_dim),
            self.max_positions.or(file.max_positions),
        ];
        let model = match weights {
            Some(path) => {
                if sizes.iter().any(Option::is_some) {
                    bail!("encoder size flags cannot be combined with --weights");
                }
                ModelSource::Weights(path)
            }
            None => {
                let base = EncoderConfig::small(0, seed);
                ModelSource::Seeded(EncoderConfig {
                    d_model: sizes[0].unwrap_or(base.d_model),
                    n_heads: sizes[1].unwrap_or(base.n_heads),
                    n_layers: sizes[2].unwrap_or(base.n_layers),
                    ffn_dim: sizes[3].unwrap_or(base.ffn_dim),
                    max_positions: sizes[4].unwrap_or(base.max_positions),
                    ..base
                })
            }
        };

        let config = RunConfig {
            backend: self
                .backend
                .clone()
                .or(file.backend)
                .unwrap_or_else(|| REFERENCE_BACKEND.to_string()),
            seed,
            model,
            vocab: self.vocab.clone().or(file.vocab),
            scheme,
            target,
            layers,
            ig,
            include_specials: self.include_specials || file.include_specials.unwrap_or(false),
            pool,
            jobs: self.jobs.or(file.jobs).unwrap_or(1),
            input: self.input.clone().or(file.input),
            output: self.out.clone().or(file.out),
            report: self.report.clone().or(file.report),
        };
        let mut paths = vec![("--config", self.config.clone())];
        if let ModelSource::Weights(w) = &config.model {
            paths.push(("--weights", Some(w.clone())));
        }
        config.validate(&paths)?;
        Ok(config)
    }
}

impl RunConfig {
    /// Check the invariants; `extra` lists further paths that must not
    /// collide with the configured ones.
    pub fn validate(&self, extra: &[(&str, Option<PathBuf>)]) -> Result<()> {
        if self.backend != REFERENCE_BACKEND {
            bail!(
                "backend {:?} is not available (only {REFERENCE_BACKEND:?} is built in)",
                self.backend
            );
        }
        if (self.scheme == Scheme::IntegratedGradients) != self.ig.is_some() {
            bail!("integrated-gradients settings must be present exactly when the scheme is ig");
        }
        if self.ig.is_some_and(|ig| ig.steps == 0) {
            bail!("--ig-steps must be positive");
        }
        if self.jobs == 0 {
            bail!("--jobs must be positive");
        }
        let mut paths = vec![
            ("--in", self.input.clone()),
            ("--out", self.output.clone()),
            ("--report", self.report.clone()),
            ("--vocab", self.vocab.clone()),
        ];
        paths.extend(extra.iter().cloned());
        ensure_distinct(&paths)
    }

    pub fn rank_options(&self) -> RankOptions {
        let mut options = RankOptions::new(self.scheme);
        options.target = self.target;
        options.layer_range = self.layers;
        options.include_specials = self.include_specials;
        if let Some(ig) = self.ig {
            options.ig = ig;
        }
        options
    }

    pub fn required_input(&self) -> Result<&Path> {
        self.input.as_deref().context("--in is required")
    }

    pub fn required_output(&self) -> Result<&Path> {
        self.output.as_deref().context("--out is required")
    }

    /// Vocabulary from `--vocab`, or built from `texts` (lowercased) when absent.
    pub fn vocabulary<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<Vocabulary> {
        match &self.vocab {
            Some(path) => Vocabulary::load(path, true)
                .with_context(|| format!("cannot load vocabulary {}", path.display())),
            None => Ok(Vocabulary::from_texts(texts, true)),
        }
    }

    pub fn encoder(&self, vocab: &Vocabulary) -> Result<Encoder> {
        match &self.model {
            ModelSource::Seeded(config) => Ok(Encoder::new(EncoderConfig {
                vocab_size: vocab.len(),
                ..*config
            })?),
            ModelSource::Weights(path) => {
                let file = std::fs::File::open(path)
                    .with_context(|| format!("cannot open weights {}", path.display()))?;
                let encoder = Encoder::read_weights(std::io::BufReader::new(file))
                    .with_context(|| format!("cannot read weights {}", path.display()))?;
                if encoder.config().vocab_size != vocab.len() {
                    bail!(
                        "weights expect a vocabulary of {} pieces, got {}",
                        encoder.config().vocab_size,
                        vocab.len()
                    );
                }
                Ok(encoder)
            }
        }
    }

    /// Vocabulary and encoder for a corpus.
    pub fn model_for(&self, corpus: &[SubstitutionInstance]) -> Result<(Vocabulary, Encoder)> {
        let vocab = self.vocabulary(corpus_texts(corpus))?;
        let encoder = self.encoder(&vocab)?;
        Ok((vocab, encoder))
    }
}

/// Every sentence and candidate of a corpus.
pub fn corpus_texts(corpus: &[SubstitutionInstance]) -> impl Iterator<Item = &str> {
    corpus.iter().flat_map(|i| {
        std::iter::once(i.sentence.as_str()).chain(i.candidates.iter().map(String::as_str))
    })
}

/// Refuse two flags naming the same file.
pub fn ensure_distinct(paths: &[(&str, Option<PathBuf>)]) -> Result<()> {
    let resolved: Vec<(&str, PathBuf)> = paths
        .iter()
        .filter_map(|(flag, p)| p.as_ref().map(|p| (*flag, p)))
        .map(|(flag, p)| {
            let full = p
                .canonicalize()
                .or_else(|_| std::path::absolute(p))
                .unwrap_or_else(|_| p.clone());
            (flag, full)
        })
        .collect();
    for (i, (a, pa)) in resolved.iter().enumerate() {
        for (b, pb) in &resolved[i + 1..] {
            if pa == pb {
                bail!("{a} and {b} name the same file {}", pa.display());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults() {
        let c = RunArgs::default()
            .resolve(Scheme::IntegratedGradients)
            .unwrap();
        assert_eq!(c.backend, "reference");
        assert_eq!(c.seed, 42);
        assert_eq!(c.jobs, 1);
        assert_eq!(c.target, TargetWeighting::Fixed);
        assert_eq!(c.ig, Some(IgConfig::default()));
    }

    #[test]
    fn ig_fields_need_the_ig_scheme() {
        let args = RunArgs {
            scheme: Some(Scheme::Attention),
            ig_steps: Some(64),
            ..Default::default()
        };
        assert!(args.resolve(Scheme::Attention).is_err());
        let args = RunArgs {
            scheme: Some(Scheme::Attention),
            ..Default::default()
        };
        assert_eq!(args.resolve(Scheme::Attention).unwrap().ig, None);
    }

    #[test]
    fn flags_override_config_file() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(
            file,
            r#"{{"scheme": "attn", "seed": 7, "layers": "2:3", "include_target": false, "jobs": 4}}"#
        )
        .unwrap();
        let args = RunArgs {
            config: Some(file.path().to_path_buf()),
            seed: Some(9),
            ..Default::default()
        };
        let c = args.resolve(Scheme::IntegratedGradients).unwrap();
        assert_eq!(c.scheme, Scheme::Attention);
        assert_eq!(c.seed, 9);
        assert_eq!(c.layers, Some(LayerRange { start: 2, end: 3 }));
        assert_eq!(c.target, TargetWeighting::Dropped);
        assert_eq!(c.jobs, 4);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, r#"{{"shceme": "attn"}}"#).unwrap();
        let args = RunArgs {
            config: Some(file.path().to_path_buf()),
            ..Default::default()
        };
        assert!(args.resolve(Scheme::Attention).is_err());
    }

    #[test]
    fn colliding_paths_are_refused() {
        let args = RunArgs {
            input: Some("data/x.jsonl".into()),
            out: Some("data/./x.jsonl".into()),
            ..Default::default()
        };
        let err = args.resolve(Scheme::Attention).unwrap_err();
        assert!(err.to_string().contains("--in and --out"), "{err}");
    }

    #[test]
    fn unknown_backend_is_refused() {
        let args = RunArgs {
            backend: Some("deberta".into()),
            ..Default::default()
        };
        assert!(args.resolve(Scheme::Attention).is_err());
    }
}
