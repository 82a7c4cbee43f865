//! Named generator and embedding profiles.
//!
//! A profiles file is TOML:
//!
//! ```toml
//! [generators.local]
//! kind = "http"
//! endpoint = "http://localhost:8000/v1"
//! model = "llama-3.1-8b-instruct"
//! api_key_env = "LOCAL_KEY"
//!
//! [generators.always-a]
//! kind = "mock"
//! response = "A"
//!
//! [embeddings.bge]
//! kind = "http"
//! endpoint = "http://localhost:8001/v1"
//! model = "bge-large"
//! ```
//!
//! Built-in names need no file: `mock:<response>`, `script:<path>`,
//! `env` (generator from `GENERATOR_BASE_URL`/`GENERATOR_MODEL`, embedder
//! from `EMBEDDING_BASE_URL`/`EMBEDDING_MODEL`) and `hash:<dim>` for the
//! offline hashing embedder. `GENERATOR_BASE_URL`, `GENERATOR_API_KEY`,
//! `EMBEDDING_BASE_URL` and `EMBEDDING_API_KEY` override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense_index::{EmbeddingClientConfig, Embedder, HashingEmbedder, HttpEmbedder};
use crate::error::{Error, Result};
use crate::generation::{Generator, GeneratorConfig, HttpGenerator, MockGenerator};
use crate::tokenizer::Tokenizer;

pub const CONFIG_ENV: &str = "MUSERAG_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorProfile {
    Http {
        #[serde(flatten)]
        config: GeneratorConfig,
        #[serde(default)]
        api_key_env: Option<String>,
    },
    Mock {
        response: String,
    },
    Script {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingProfile {
    Http {
        #[serde(flatten)]
        config: EmbeddingClientConfig,
        #[serde(default)]
        api_key_env: Option<String>,
    },
    Hashing {
        dim: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    #[serde(default)]
    pub generators: BTreeMap<String, GeneratorProfile>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, EmbeddingProfile>,
}

/// Profiles plus the hash of the file they came from.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub profiles: Profiles,
    pub source: Option<PathBuf>,
    /// First 16 hex digits of SHA-256 over the file, or `"none"`.
    pub config_hash: String,
}

type EnvLookup<'a> = &'a dyn Fn(&str) -> Option<String>;

fn process_env(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

impl RunConfig {
    pub fn empty() -> Self {
        RunConfig {
            config_hash: "none".into(),
            ..Default::default()
        }
    }

    /// Reads `path`, else `$MUSERAG_CONFIG`, else returns an empty set.
    pub fn discover(path: Option<&Path>) -> Result<Self> {
        match path.map(Path::to_path_buf).or_else(|| process_env(CONFIG_ENV).map(PathBuf::from)) {
            Some(p) => Self::load(&p),
            None => Ok(Self::empty()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(raw.clone())
            .map_err(|_| Error::parse(path, 0, "profiles file is not UTF-8"))?;
        let mut profiles: Profiles = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in profiles.generators.values_mut() {
            if let GeneratorProfile::Script { path } = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        Ok(RunConfig {
            profiles,
            source: Some(path.to_path_buf()),
            config_hash: hex::encode(Sha256::digest(&raw))[..16].to_string(),
        })
    }

    pub fn generator(&self, name: &str) -> Result<Box<dyn Generator>> {
        self.generator_with_env(name, &process_env)
    }

    pub fn embedder(&self, name: &str, tokenizer: Tokenizer) -> Result<Box<dyn Embedder>> {
        self.embedder_with_env(name, tokenizer, &process_env)
    }

    pub fn generator_with_env(&self, name: &str, env: EnvLookup<'_>) -> Result<Box<dyn Generator>> {
        Ok(match self.resolve_generator(name, env)? {
            GeneratorProfile::Mock { response } => Box::new(MockGenerator::constant(response)),
            GeneratorProfile::Script { path } => Box::new(MockGenerator::load_script(&path)?),
            GeneratorProfile::Http { config, .. } => Box::new(HttpGenerator::new(config)?),
        })
    }

    /// The named profile with environment overrides applied.
    pub fn resolve_generator(&self, name: &str, env: EnvLookup<'_>) -> Result<GeneratorProfile> {
        let mut profile = self.generator_profile(name, env)?;
        if let GeneratorProfile::Http { config, api_key_env } = &mut profile {
            if let Some(var) = api_key_env {
                config.api_key = env(var).or(config.api_key.take());
            }
            if let Some(url) = env("GENERATOR_BASE_URL") {
                config.endpoint = url;
            }
            if let Some(key) = env("GENERATOR_API_KEY") {
                config.api_key = Some(key);
            }
        }
        Ok(profile)
    }

    pub fn embedder_with_env(
        &self,
        name: &str,
        tokenizer: Tokenizer,
        env: EnvLookup<'_>,
    ) -> Result<Box<dyn Embedder>> {
        Ok(match self.resolve_embedding(name, env)? {
            EmbeddingProfile::Hashing { dim } => Box::new(HashingEmbedder::new(dim, tokenizer)?),
            EmbeddingProfile::Http { config, .. } => Box::new(HttpEmbedder::new(config)?),
        })
    }

    /// The named profile with environment overrides applied.
    pub fn resolve_embedding(&self, name: &str, env: EnvLookup<'_>) -> Result<EmbeddingProfile> {
        let mut profile = self.embedding_profile(name, env)?;
        if let EmbeddingProfile::Http { config, api_key_env } = &mut profile {
            if let Some(var) = api_key_env {
                config.api_key = env(var).or(config.api_key.take());
            }
            if let Some(url) = env("EMBEDDING_BASE_URL") {
                config.endpoint = url;
            }
            if let Some(key) = env("EMBEDDING_API_KEY") {
                config.api_key = Some(key);
            }
        }
        Ok(profile)
    }

    fn generator_profile(&self, name: &str, env: EnvLookup<'_>) -> Result<GeneratorProfile> {
        if let Some(p) = self.profiles.generators.get(name) {
            return Ok(p.clone());
        }
        if let Some(response) = name.strip_prefix("mock:") {
            return Ok(GeneratorProfile::Mock {
                response: response.into(),
            });
        }
        if let Some(path) = name.strip_prefix("script:") {
            return Ok(GeneratorProfile::Script { path: path.into() });
        }
        if name == "env" {
            let endpoint = env("GENERATOR_BASE_URL")
                .ok_or_else(|| Error::Config("profile `env` needs GENERATOR_BASE_URL".into()))?;
            let model = env("GENERATOR_MODEL")
                .ok_or_else(|| Error::Config("profile `env` needs GENERATOR_MODEL".into()))?;
            return Ok(GeneratorProfile::Http {
                config: GeneratorConfig::new(endpoint, model),
                api_key_env: None,
            });
        }
        Err(Error::Config(format!(
            "unknown generator profile {name:?}{}",
            self.known(self.profiles.generators.keys())
        )))
    }

    fn embedding_profile(&self, name: &str, env: EnvLookup<'_>) -> Result<EmbeddingProfile> {
        if let Some(p) = self.profiles.embeddings.get(name) {
            return Ok(p.clone());
        }
        if let Some(dim) = name.strip_prefix("hash:") {
            let dim = dim
                .parse()
                .map_err(|_| Error::Config(format!("bad hashing dimension in {name:?}")))?;
            return Ok(EmbeddingProfile::Hashing { dim });
        }
        if name == "env" {
            let endpoint = env("EMBEDDING_BASE_URL")
                .ok_or_else(|| Error::Config("profile `env` needs EMBEDDING_BASE_URL".into()))?;
            let model = env("EMBEDDING_MODEL")
                .ok_or_else(|| Error::Config("profile `env` needs EMBEDDING_MODEL".into()))?;
            return Ok(EmbeddingProfile::Http {
                config: EmbeddingClientConfig::new(endpoint, model),
                api_key_env: None,
            });
        }
        Err(Error::Config(format!(
            "unknown embedding profile {name:?}{}",
            self.known(self.profiles.embeddings.keys())
        )))
    }

    fn known<'a>(&self, names: impl Iterator<Item = &'a String>) -> String {
        let names: Vec<&str> = names.map(String::as_str).collect();
        match &self.source {
            Some(p) if !names.is_empty() => format!(" (defined in {}: {})", p.display(), names.join(", ")),
            Some(p) => format!(" (none defined in {})", p.display()),
            None => " (no profiles file given)".into(),
        }
    }
}
