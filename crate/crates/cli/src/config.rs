//! Pipeline configuration: one TOML file plus `INVRANK_` environment
//! overrides.
//!
//! An override names a key path with `__` between levels, e.g.
//! `INVRANK_PROVIDER__KIND=local_hash` or `INVRANK_SEED=3`. Values are read
//! as TOML scalars when they parse as one and as strings otherwise.
//! `INVRANK_SOLVER` is the solver binary, as for the library. Variables
//! whose first component is not a config section are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use invrank::embeddings::ProviderConfig;
use invrank::evalharness::{DEFAULT_KS, DEFAULT_PERMUTATIONS};
use invrank::llm_client::{ChatConfig, GenBudget};
use invrank::ranker::Hyperparams;
use invrank::verifier::{SolverConfig, SOLVER_ENV};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "INVRANK_";

const TOP_LEVEL: [&str; 9] = [
    "paths",
    "solver",
    "provider",
    "hyperparams",
    "budget",
    "chat",
    "ks",
    "permutations",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub problems: PathBuf,
    pub candidates: PathBuf,
    /// Labeled dataset written by `verify`.
    pub dataset: PathBuf,
    pub cache: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
    /// Canned chat responses, `<problem>/<k>.txt`; used by `generate`
    /// instead of a remote model when set.
    pub responses: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            problems: "problems".into(),
            candidates: "candidates".into(),
            dataset: "dataset.jsonl".into(),
            cache: "cache".into(),
            models: "models".into(),
            reports: "reports".into(),
            responses: None,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.problems,
            &mut self.candidates,
            &mut self.dataset,
            &mut self.cache,
            &mut self.models,
            &mut self.reports,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(r) = &mut self.responses {
            if r.is_relative() {
                *r = base.join(&*r);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub solver: SolverConfig,
    pub provider: ProviderConfig,
    pub hyperparams: Hyperparams,
    pub budget: GenBudget,
    pub chat: ChatConfig,
    pub ks: Vec<usize>,
    /// Sampled orderings for the expected-rank strategy.
    pub permutations: usize,
    /// Seeds the hash embedder, training and permutation sampling.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            solver: SolverConfig::default(),
            provider: ProviderConfig::default(),
            hyperparams: Hyperparams::default(),
            budget: GenBudget::default(),
            chat: ChatConfig::default(),
            ks: DEFAULT_KS.to_vec(),
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }
}

/// A TOML scalar if `raw` reads as one, else the string itself.
fn scalar(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, keys: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = keys.split_last().expect("non-empty key path");
    let mut table = root;
    for k in parents {
        let entry = table
            .entry(k.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {}: `{k}` is not a table", keys.join(".")),
        };
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Applies `INVRANK_*` overrides to the raw document.
pub fn apply_env(
    doc: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<()> {
    let mut vars: Vec<_> = vars.into_iter().collect();
    vars.sort();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        if name == SOLVER_ENV {
            set_path(
                doc,
                &["solver".into(), "solver_path".into()],
                toml::Value::String(raw),
            )?;
            continue;
        }
        let keys: Vec<String> = rest.split("__").map(|k| k.to_ascii_lowercase()).collect();
        if !TOP_LEVEL.contains(&keys[0].as_str()) {
            // other tools share the prefix
            log::debug!("ignoring {name}: not a config key");
            continue;
        }
        if keys.iter().any(String::is_empty) {
            bail!("malformed override variable {name}");
        }
        set_path(doc, &keys, scalar(&raw))?;
    }
    Ok(())
}

impl PipelineConfig {
    /// Parses `text`, applies overrides and resolves relative paths against
    /// `base`.
    pub fn from_toml(
        text: &str,
        base: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut doc: toml::Table = text.parse().context("config is not valid TOML")?;
        let seed_given = doc.contains_key("seed");
        apply_env(&mut doc, env)?;
        let seed_given = seed_given || doc.contains_key("seed");
        let mut cfg: PipelineConfig = doc.try_into().context("invalid config")?;
        if seed_given {
            cfg.set_seed(cfg.seed);
        }
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    /// Reads the config file, or uses defaults relative to the working
    /// directory when there is none.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let env = std::env::vars();
        match path {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new("."));
                Self::from_toml(&text, base, env)
            }
            None => Self::from_toml("", Path::new("."), env),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.hyperparams.seed = seed;
        self.provider.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            bail!("ks must be non-empty and positive");
        }
        if self.permutations == 0 {
            bail!("permutations must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn defaults_and_relative_paths() {
        let c = PipelineConfig::from_toml("", Path::new("/base"), env(&[])).unwrap();
        assert_eq!(c.paths.models, PathBuf::from("/base/models"));
        assert_eq!(c.ks, vec![1, 5, 10]);
        assert_eq!(c.hyperparams, Hyperparams::default());
    }

    #[test]
    fn file_values_and_overrides() {
        let text =
            "seed = 5\n[paths]\nreports = \"/abs/out\"\n[provider]\nkind = \"remote\"\ndim = 8\n";
        let c = PipelineConfig::from_toml(
            text,
            Path::new("/b"),
            env(&[
                ("INVRANK_PROVIDER__KIND", "local_hash"),
                ("INVRANK_HYPERPARAMS__EPOCHS", "3"),
                ("INVRANK_SOLVER", "/opt/z3"),
                ("OTHER", "x"),
            ]),
        )
        .unwrap();
        assert_eq!(c.paths.reports, PathBuf::from("/abs/out"));
        assert_eq!(c.provider.dim, 8);
        assert_eq!(
            c.provider.kind,
            invrank::embeddings::ProviderKind::LocalHash
        );
        assert_eq!(c.hyperparams.epochs, 3);
        assert_eq!(c.solver.solver_path, PathBuf::from("/opt/z3"));
        // the top-level seed reaches every seeded component
        assert_eq!((c.hyperparams.seed, c.provider.seed), (5, 5));
    }

    #[test]
    fn bad_overrides_are_errors() {
        assert!(
            PipelineConfig::from_toml("", Path::new("."), env(&[("INVRANK_SEED", "many")]))
                .is_err()
        );
        assert!(PipelineConfig::from_toml(
            "seed = 1",
            Path::new("."),
            env(&[("INVRANK_SEED__X", "1")])
        )
        .is_err());
        assert!(PipelineConfig::from_toml("[paths]\nbogus = 1", Path::new("."), env(&[])).is_err());
        assert!(
            PipelineConfig::from_toml("", Path::new("."), env(&[("INVRANK_BENCH_DIR", "/x")]))
                .is_ok()
        );
        assert!(PipelineConfig::from_toml("ks = \"x\"", Path::new("."), env(&[])).is_err());
    }
}
