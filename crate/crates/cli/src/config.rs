//! Run configuration file and the hash stamped into every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bedflow::objective::Weights;
use bedflow::params::{canonical_space, ParamSpace, ParamVector};
use bedflow::smbo::{Infill, Transform};
use bedflow::surrogate::SurrogateKind;
use bedflow::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XSource {
    #[default]
    Defaults,
    File,
    RecordBest,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub source: XSource,
    /// Parameter values by name (TOML), for `source = "file"`.
    pub params: Option<PathBuf>,
    /// Optimization record JSON, for `source = "record-best"`.
    pub record: Option<PathBuf>,
    pub replicates: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            source: XSource::Defaults,
            params: None,
            record: None,
            replicates: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub budget: usize,
    pub init: Option<usize>,
    pub infill: Infill,
    pub transform: Transform,
    pub replicates: usize,
    pub exclude: Vec<usize>,
    pub restarts: usize,
    pub candidates: usize,
    pub refine: usize,
    pub steps: usize,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        OptimizeSection {
            budget: 100,
            init: None,
            infill: Infill::ExpectedImprovement,
            transform: Transform::default(),
            replicates: 5,
            exclude: Vec::new(),
            restarts: 10,
            candidates: 200,
            refine: 10,
            steps: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridBase {
    #[default]
    Defaults,
    Midpoints,
    RecordBest,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub i: usize,
    pub j: usize,
    pub resolution: usize,
    pub base: GridBase,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            i: 14,
            j: 13,
            resolution: 25,
            base: GridBase::Defaults,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemovalSection {
    /// Nested exclusion sets; an empty baseline set is prepended when missing.
    pub sets: Vec<Vec<usize>>,
    pub repeats: usize,
    /// Budget and initial design size per run (default: the optimize section).
    pub budget: Option<usize>,
    pub init: Option<usize>,
}

impl Default for RemovalSection {
    fn default() -> Self {
        RemovalSection {
            sets: Vec::new(),
            repeats: 5,
            budget: None,
            init: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    /// Replicates per evaluation inside studies.
    pub replicates: usize,
    /// Seeded model refits per family.
    pub repeats: usize,
    pub models: Vec<SurrogateKind>,
    /// Optimization record whose evaluations are reused as the design.
    pub design: Option<PathBuf>,
    /// Size of a fresh LHS design when no record is given.
    pub design_size: Option<usize>,
    pub trees: usize,
    pub configs: usize,
    pub delta: f64,
    /// Parameters to perturb in the delta study (empty = all).
    pub params: Vec<usize>,
    pub grid: GridSection,
    pub removal: RemovalSection,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            replicates: 20,
            repeats: 20,
            models: SurrogateKind::ALL.to_vec(),
            design: None,
            design_size: None,
            trees: 500,
            configs: 33,
            delta: 0.2,
            params: Vec::new(),
            grid: GridSection::default(),
            removal: RemovalSection::default(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub scenario: PathBuf,
    #[serde(default)]
    pub space: Option<PathBuf>,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub optimize: OptimizeSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
        config.weights.check()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn space(&self) -> Result<ParamSpace, Error> {
        match &self.config.space {
            None => Ok(canonical_space()),
            Some(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                ParamSpace::from_toml(&text)
            }
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.resolve(&self.config.scenario)
    }

    /// Files whose bytes feed the config hash.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.manifest_path()];
        if let Some(s) = &self.config.space {
            v.push(self.resolve(s));
        }
        v
    }
}

pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 over the effective configuration and the bytes of the given
/// files. The output directory and worker count are not part of it.
pub fn config_hash(cfg: &RunConfig, extra: &[(&str, &[u8])]) -> String {
    let mut c = cfg.clone();
    c.out = PathBuf::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&c).expect("config serializes"));
    for (name, bytes) in extra {
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Parameter values by name; missing names keep the space defaults.
pub fn read_params(space: &ParamSpace, path: &Path) -> Result<ParamVector, Error> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let values: BTreeMap<String, f64> = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
    let mut x = space.defaults();
    for (name, v) in values {
        let i = space
            .index_of(&name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}` in {}", path.display())))?;
        x.set(i, v);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: RunConfig = toml::from_str("scenario = \"s.toml\"").unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.optimize.budget, 100);
        assert_eq!(c.analyze.configs, 33);
        assert_eq!(c.weights, Weights::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("scenario = \"s\"\nbudget = 3").is_err());
        assert!(toml::from_str::<RunConfig>("scenario = \"s\"\n[optimize]\nbugdet = 3").is_err());
    }

    #[test]
    fn hash_ignores_out_dir_but_not_seed() {
        let a: RunConfig = toml::from_str("scenario = \"s\"\nout = \"a\"").unwrap();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(config_hash(&a, &[]), config_hash(&b, &[]));
        b.seed = 1;
        assert_ne!(config_hash(&a, &[]), config_hash(&b, &[]));
        assert_ne!(config_hash(&a, &[("f", b"1")]), config_hash(&a, &[("f", b"2")]));
        assert_eq!(config_hash(&a, &[]).len(), 16);
    }
}
