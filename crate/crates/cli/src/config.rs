//! Run configuration: command-line flags override the config file, which
//! overrides the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use treesimp::backtranslate::{
    BackTranslator, BtConfig, DictionaryClient, HttpTranslationClient, HttpTranslationConfig, IdentityClient,
    SeparatorPolicy, TranslationClient,
};
use treesimp::decoder::DecoderConfig;
use treesimp::fluency::PosLanguageModel;
use treesimp::similarity::{
    CachedBackend, EmbeddingBackend, HashingBackend, HttpEmbeddingBackend, HttpEmbeddingConfig, WordVectorBackend,
};

pub const EMBED_URL_VAR: &str = "TREESIMP_EMBED_URL";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Hash,
    Wordvec,
    Http,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BtKind {
    Off,
    Identity,
    Dict,
    Http,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Separator {
    Strip,
    Keep,
}

impl From<Separator> for SeparatorPolicy {
    fn from(s: Separator) -> Self {
        match s {
            Separator::Strip => SeparatorPolicy::Strip,
            Separator::Keep => SeparatorPolicy::Keep,
        }
    }
}

/// Embedding backend flags.
#[derive(Args, Clone, Debug, Default)]
pub struct BackendFlags {
    /// Similarity backend
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Word-vector file (text format) for --backend wordvec
    #[arg(long, value_name = "PATH")]
    pub vectors: Option<PathBuf>,
    /// Embedding service base URL for --backend http
    #[arg(long, value_name = "URL")]
    pub embed_url: Option<String>,
    /// Config file (TOML, flat keys)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

/// Decoder, language model and back-translation flags.
#[derive(Args, Clone, Debug, Default)]
pub struct RunFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beam: Option<usize>,
    /// POS language model file; a uniform model is used when absent
    #[arg(long, value_name = "PATH")]
    pub lm: Option<PathBuf>,
    /// Back-translation client
    #[arg(long, value_enum)]
    pub bt: Option<BtKind>,
    /// Pivot language code
    #[arg(long, value_name = "CODE")]
    pub pivot: Option<String>,
    /// Source language code
    #[arg(long, value_name = "CODE")]
    pub source_lang: Option<String>,
    /// How chunk separators are handled before translation
    #[arg(long, value_enum)]
    pub separator: Option<Separator>,
    /// Phrase table (src<TAB>pivot<TAB>back) for --bt dict
    #[arg(long, value_name = "PATH")]
    pub dict: Option<PathBuf>,
    /// Worker threads
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub backend: BackendFlags,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
    pub beam: Option<usize>,
    pub backend: Option<BackendKind>,
    pub vectors: Option<PathBuf>,
    pub embed_url: Option<String>,
    pub lm: Option<PathBuf>,
    pub bt: Option<BtKind>,
    pub pivot: Option<String>,
    pub source_lang: Option<String>,
    pub separator: Option<Separator>,
    pub dict: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(FileConfig::default()), FileConfig::load)
    }
}

#[derive(Clone, Debug)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub vectors: Option<PathBuf>,
    pub embed_url: Option<String>,
}

impl BackendConfig {
    fn resolve(flags: &BackendFlags, file: &FileConfig) -> Result<Self> {
        let cfg = BackendConfig {
            kind: flags.backend.or(file.backend).unwrap_or(BackendKind::Hash),
            vectors: flags.vectors.clone().or_else(|| file.vectors.clone()),
            embed_url: flags
                .embed_url
                .clone()
                .or_else(|| file.embed_url.clone())
                .or_else(|| std::env::var(EMBED_URL_VAR).ok()),
        };
        match cfg.kind {
            BackendKind::Wordvec if cfg.vectors.is_none() => bail!("--backend wordvec needs --vectors"),
            BackendKind::Http if cfg.embed_url.is_none() => {
                bail!("--backend http needs --embed-url or {EMBED_URL_VAR}")
            }
            _ => Ok(cfg),
        }
    }

    pub fn from_flags(flags: &BackendFlags) -> Result<Self> {
        let file = FileConfig::load_opt(flags.config.as_deref())?;
        Self::resolve(flags, &file)
    }

    pub fn build(&self) -> Result<CachedBackend<Box<dyn EmbeddingBackend>>> {
        let inner: Box<dyn EmbeddingBackend> = match self.kind {
            BackendKind::Hash => Box::new(HashingBackend::default()),
            BackendKind::Wordvec => {
                let path = self.vectors.as_ref().unwrap();
                Box::new(
                    WordVectorBackend::from_path(path)
                        .with_context(|| format!("loading vectors {}", path.display()))?,
                )
            }
            BackendKind::Http => {
                let url = self.embed_url.as_ref().unwrap();
                Box::new(
                    HttpEmbeddingBackend::connect(&HttpEmbeddingConfig::new(url.clone()))
                        .with_context(|| format!("connecting to embedding service {url}"))?,
                )
            }
        };
        Ok(CachedBackend::new(inner))
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub decoder: DecoderConfig,
    pub backend: BackendConfig,
    pub lm: Option<PathBuf>,
    pub bt: BtKind,
    pub bt_config: BtConfig,
    pub dict: Option<PathBuf>,
    pub jobs: usize,
}

impl RunConfig {
    pub fn from_flags(flags: &RunFlags) -> Result<Self> {
        let file = FileConfig::load_opt(flags.backend.config.as_deref())?;
        let d = DecoderConfig::default();
        let decoder = DecoderConfig {
            alpha: flags.alpha.or(file.alpha).unwrap_or(d.alpha),
            tau: flags.tau.or(file.tau).unwrap_or(d.tau),
            lambda_ratio: flags.lambda.or(file.lambda).unwrap_or(d.lambda_ratio),
            beam_size: flags.beam.or(file.beam).unwrap_or(d.beam_size),
        };
        decoder.validate()?;

        let source = flags
            .source_lang
            .clone()
            .or_else(|| file.source_lang.clone())
            .unwrap_or_else(|| "en".into());
        let mut bt_config = BtConfig::for_source(&source);
        if let Some(p) = flags.pivot.clone().or_else(|| file.pivot.clone()) {
            bt_config.pivot_language = p;
        }
        if let Some(s) = flags.separator.or(file.separator) {
            bt_config.separator_policy = s.into();
        }
        let bt = flags.bt.or(file.bt).unwrap_or(BtKind::Off);
        if bt != BtKind::Off {
            bt_config.validate()?;
        }
        let dict = flags.dict.clone().or_else(|| file.dict.clone());
        if bt == BtKind::Dict && dict.is_none() {
            bail!("--bt dict needs --dict");
        }

        let jobs = flags
            .jobs
            .or(file.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }

        Ok(RunConfig {
            decoder,
            backend: BackendConfig::resolve(&flags.backend, &file)?,
            lm: flags.lm.clone().or_else(|| file.lm.clone()),
            bt,
            bt_config,
            dict,
            jobs,
        })
    }

    pub fn load_lm(&self) -> Result<PosLanguageModel> {
        match &self.lm {
            Some(path) => {
                PosLanguageModel::load(path).with_context(|| format!("loading language model {}", path.display()))
            }
            None => {
                log::warn!("no --lm given; fluency uses a uniform POS model");
                Ok(PosLanguageModel::uniform(&PosLanguageModel::upos_tagset(), 4)?)
            }
        }
    }

    /// `None` when back-translation is off.
    pub fn back_translator(&self) -> Result<Option<BackTranslator<Box<dyn TranslationClient>>>> {
        let (src, pivot) = (&self.bt_config.source_language, &self.bt_config.pivot_language);
        let client: Box<dyn TranslationClient> = match self.bt {
            BtKind::Off => return Ok(None),
            BtKind::Identity => Box::new(IdentityClient),
            BtKind::Dict => {
                let path = self.dict.as_ref().unwrap();
                let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Box::new(
                    DictionaryClient::from_reader(src, pivot, std::io::BufReader::new(file))
                        .with_context(|| format!("reading phrase table {}", path.display()))?,
                )
            }
            BtKind::Http => Box::new(HttpTranslationClient::new(HttpTranslationConfig::from_env()?)),
        };
        Ok(Some(BackTranslator::new(client, self.bt_config.clone())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_flags() {
        let c = RunConfig::from_flags(&RunFlags::default()).unwrap();
        assert_eq!(
            (c.decoder.alpha, c.decoder.tau, c.decoder.lambda_ratio, c.decoder.beam_size),
            (2.0, 0.95, 0.5, 5)
        );
        assert_eq!(c.backend.kind, BackendKind::Hash);
        assert_eq!(c.bt, BtKind::Off);
        assert_eq!(c.bt_config.pivot_language, "de");
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "tau = 0.8\nbeam = 3\nseparator = \"keep\"\n").unwrap();
        let flags = RunFlags {
            tau: Some(0.7),
            backend: BackendFlags {
                config: Some(path),
                ..Default::default()
            },
            ..Default::default()
        };
        let c = RunConfig::from_flags(&flags).unwrap();
        assert_eq!((c.decoder.tau, c.decoder.beam_size), (0.7, 3));
        assert_eq!(c.bt_config.separator_policy, SeparatorPolicy::Keep);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad = |f: RunFlags| RunConfig::from_flags(&f).is_err();
        assert!(bad(RunFlags { tau: Some(1.5), ..Default::default() }));
        assert!(bad(RunFlags { jobs: Some(0), ..Default::default() }));
        assert!(bad(RunFlags { bt: Some(BtKind::Dict), ..Default::default() }));
        assert!(bad(RunFlags {
            backend: BackendFlags { backend: Some(BackendKind::Wordvec), ..Default::default() },
            ..Default::default()
        }));
    }

    #[test]
    fn unknown_file_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "temperature = 1\n").unwrap();
        assert!(FileConfig::load(&path).is_err());
    }
}
