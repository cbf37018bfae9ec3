//! The run configuration file (`qlfr.toml` by default).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use qlfr_core::backend::{Backend, Decoding, HttpBackend, HttpConfig, MockBackend};
use qlfr_core::chains::{load_cue_profiles, ChainVariant, CueProfile, InContextMode};
use qlfr_core::classify::Strategy;
use qlfr_core::templates::TemplateRegistry;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub template_registry: Option<PathBuf>,
    /// TOML file of extra cue profiles, merged over `[cues]`.
    #[serde(default)]
    pub cue_file: Option<PathBuf>,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetEntry>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendEntry>,
    #[serde(default)]
    pub cues: BTreeMap<String, CueEntry>,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from(".qlfr/cache")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Defaults {
    pub seed: u64,
    pub per_class: usize,
    pub variant: ChainVariant,
    pub strategy: Strategy,
    pub in_context: InContextMode,
    pub backend: Option<String>,
    pub workers: usize,
    pub train_ratio: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            seed: 0,
            per_class: 40,
            variant: ChainVariant::Full,
            strategy: Strategy::ParseText,
            in_context: InContextMode::ZeroShot,
            backend: None,
            workers: 8,
            train_ratio: 1.0,
            lambda1: qlfr_core::rationales::DEFAULT_LAMBDA,
            lambda2: qlfr_core::rationales::DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub manifest: PathBuf,
    /// Cue profile name for the domain chain; builtin or from `[cues]`.
    #[serde(default)]
    pub cues: Option<String>,
    /// One-shot exemplar file.
    #[serde(default)]
    pub exemplars: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendEntry {
    Mock {
        rules: PathBuf,
        #[serde(default)]
        model: Option<String>,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_concurrency")]
        concurrency: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        temperature: Option<f64>,
    },
}

fn default_concurrency() -> usize {
    8
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueEntry {
    pub identification: String,
    pub synthesis: String,
}

/// A backend ready for use, with the decoding settings it implies.
pub struct ResolvedBackend {
    pub name: String,
    pub backend: Box<dyn Backend>,
    pub decoding: Decoding,
    pub concurrency: usize,
}

impl RunConfigFile {
    /// Parses and validates; relative paths are resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfigFile = toml::from_str(&content)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.cache_dir);
        fix(&mut self.output_dir);
        self.template_registry.as_mut().map(fix);
        self.cue_file.as_mut().map(fix);
        for entry in self.datasets.values_mut() {
            fix(&mut entry.manifest);
            entry.exemplars.as_mut().map(fix);
        }
        for entry in self.backends.values_mut() {
            if let BackendEntry::Mock { rules, .. } = entry {
                fix(rules);
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let exists = |what: String, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "dangling reference: {what} points to missing file {}",
                    p.display()
                )))
            }
        };
        if let Some(p) = &self.template_registry {
            exists("template_registry".into(), p)?;
        }
        if let Some(p) = &self.cue_file {
            exists("cue_file".into(), p)?;
        }
        for (name, entry) in &self.datasets {
            exists(format!("datasets.{name}.manifest"), &entry.manifest)?;
            if let Some(p) = &entry.exemplars {
                exists(format!("datasets.{name}.exemplars"), p)?;
            }
            if let Some(cues) = &entry.cues {
                if !self.cues.contains_key(cues)
                    && CueProfile::builtin(cues).is_none()
                    && self.cue_file.is_none()
                {
                    return Err(CliError::Config(format!(
                        "dangling reference: datasets.{name}.cues names unknown cue profile {cues:?}"
                    )));
                }
            }
        }
        for (name, entry) in &self.backends {
            if let BackendEntry::Mock { rules, .. } = entry {
                exists(format!("backends.{name}.rules"), rules)?;
            }
        }
        if let Some(backend) = &self.defaults.backend {
            if !self.backends.contains_key(backend) {
                return Err(CliError::Config(format!(
                    "dangling reference: defaults.backend names unknown backend {backend:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetEntry, CliError> {
        self.datasets
            .get(name)
            .ok_or_else(|| CliError::Config(format!("unknown dataset {name:?}")))
    }

    pub fn registry(&self) -> Result<TemplateRegistry, CliError> {
        match &self.template_registry {
            Some(p) => Ok(TemplateRegistry::from_file(p)?),
            None => Ok(TemplateRegistry::builtin()),
        }
    }

    pub fn cue_profile(&self, name: &str) -> Result<CueProfile, CliError> {
        if let Some(entry) = self.cues.get(name) {
            return Ok(CueProfile::new(
                name,
                &entry.identification,
                &entry.synthesis,
            )?);
        }
        if let Some(path) = &self.cue_file {
            if let Some(profile) = load_cue_profiles(path)?.remove(name) {
                return Ok(profile);
            }
        }
        CueProfile::builtin(name)
            .ok_or_else(|| CliError::Config(format!("unknown cue profile {name:?}")))
    }

    /// Builds the named backend, or the default one when `name` is `None`.
    pub fn backend(&self, name: Option<&str>) -> Result<ResolvedBackend, CliError> {
        let name = match name.or(self.defaults.backend.as_deref()) {
            Some(n) => n,
            None if self.backends.len() == 1 => self.backends.keys().next().expect("one backend"),
            None => {
                return Err(CliError::Config(
                    "no backend given and no defaults.backend configured".into(),
                ))
            }
        };
        let entry = self
            .backends
            .get(name)
            .ok_or_else(|| CliError::Config(format!("unknown backend {name:?}")))?;
        Ok(match entry {
            BackendEntry::Mock { rules, model } => ResolvedBackend {
                name: name.to_string(),
                backend: Box::new(MockBackend::from_file(rules)?.with_id(name)),
                decoding: Decoding::for_model(model.clone().unwrap_or_else(|| "mock".into())),
                concurrency: self.defaults.workers,
            },
            BackendEntry::Http {
                base_url,
                model,
                api_key_env,
                concurrency,
                timeout_secs,
                temperature,
            } => {
                let backend = HttpBackend::new(HttpConfig {
                    id: name.to_string(),
                    base_url: base_url.clone(),
                    api_key_env: api_key_env.clone(),
                    timeout: Duration::from_secs(*timeout_secs),
                })
                .map_err(|e| CliError::Config(format!("backends.{name}: {e}")))?;
                let mut decoding = Decoding::for_model(model);
                if let Some(t) = temperature {
                    decoding.temperature = *t;
                }
                ResolvedBackend {
                    name: name.to_string(),
                    backend: Box::new(backend),
                    decoding,
                    concurrency: *concurrency,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    fn minimal(dir: &Path) -> String {
        write(
            dir,
            "rules.jsonl",
            "{\"pattern\": \"x\", \"response\": \"y\"}\n",
        );
        write(
            dir,
            "d.toml",
            "name = \"d\"\npath = \"c.jsonl\"\nlabels = [\"a\"]\n",
        );
        "[datasets.d]\nmanifest = \"d.toml\"\n\n[backends.mock]\nkind = \"mock\"\nrules = \"rules.jsonl\"\n"
            .to_string()
    }

    #[test]
    fn minimal_config_parses() {
        let dir = tempfile::tempdir().unwrap();
        let body = minimal(dir.path());
        let path = write(dir.path(), "qlfr.toml", &body);
        let config = RunConfigFile::load(&path).unwrap();
        assert_eq!(config.defaults.per_class, 40);
        assert!(config.dataset("d").unwrap().manifest.is_absolute());
        assert_eq!(config.backend(None).unwrap().name, "mock");
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("lora = 4\n{}", minimal(dir.path()));
        let path = write(dir.path(), "qlfr.toml", &body);
        let err = RunConfigFile::load(&path).unwrap_err().to_string();
        assert!(err.contains("lora"), "{err}");
    }

    #[test]
    fn dangling_references_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("template_registry = \"nope.toml\"\n{}", minimal(dir.path()));
        let path = write(dir.path(), "qlfr.toml", &body);
        let err = RunConfigFile::load(&path).unwrap_err().to_string();
        assert!(
            err.contains("dangling reference: template_registry"),
            "{err}"
        );

        let body = format!("[defaults]\nbackend = \"gpt\"\n{}", minimal(dir.path()));
        let path = write(dir.path(), "qlfr.toml", &body);
        let err = RunConfigFile::load(&path).unwrap_err().to_string();
        assert!(err.contains("defaults.backend"), "{err}");
    }

    #[test]
    fn cue_profiles_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{}\n[cues.legal]\nidentification = \"the parties\"\nsynthesis = \"their obligations\"\n",
            minimal(dir.path())
        );
        let path = write(dir.path(), "qlfr.toml", &body);
        let config = RunConfigFile::load(&path).unwrap();
        assert_eq!(
            config.cue_profile("legal").unwrap().identification_cue,
            "the parties"
        );
        assert_eq!(config.cue_profile("news").unwrap(), CueProfile::news());
        assert!(config.cue_profile("astrology").is_err());
    }
}
