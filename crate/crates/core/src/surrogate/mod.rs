//! Surrogate models: Kriging, linear main effects, random forest.

pub mod forest;
pub mod kriging;
pub mod linear;
pub mod optim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use kriging::{fit_kriging, KrigingConfig, KrigingModel, Nugget, Prediction};
pub use linear::{fit_linear, LinearModel};

use crate::{Error, Result};

pub const ARTIFACT_VERSION: u32 = 1;

/// Training data: `n` rows of `d` inputs and one response per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Design {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let d = Design { x, y };
        d.check()?;
        Ok(d)
    }

    /// Maps raw rows into the unit box given per-dimension bounds.
    pub fn normalized(raw: &[Vec<f64>], y: Vec<f64>, lower: &[f64], upper: &[f64]) -> Result<Self> {
        let x = raw.iter().map(|r| normalize(r, lower, upper)).collect();
        Design::new(x, y)
    }

    pub fn check(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::Model("empty design".into()));
        }
        if self.x.len() != self.y.len() {
            return Err(Error::Model(format!(
                "design has {} rows but {} responses",
                self.x.len(),
                self.y.len()
            )));
        }
        let d = self.x[0].len();
        if d == 0 || self.x.iter().any(|r| r.len() != d) {
            return Err(Error::Model("design rows must share a positive dimension".into()));
        }
        if self.x.iter().flatten().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::Model("design contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    pub fn has_duplicates(&self, tol: f64) -> bool {
        (0..self.len())
            .any(|i| (i + 1..self.len()).any(|j| self.x[i].iter().zip(&self.x[j]).all(|(a, b)| (a - b).abs() <= tol)))
    }

    /// Keeps only the listed input columns (0-based).
    pub fn select(&self, cols: &[usize]) -> Design {
        Design {
            x: self.x.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            y: self.y.clone(),
        }
    }
}

pub fn normalize(x: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, u))| if u > l { (v - l) / (u - l) } else { 0.5 })
        .collect()
}

pub fn denormalize(u: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, h))| l + v * (h - l))
        .collect()
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` of a normal prediction.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let diff = best - mean;
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return diff.max(0.0);
    }
    let z = diff / sd;
    (diff * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

/// 1-based parameter indices from most to least important. Ties go to the
/// lower index; NaN counts as least important.
pub fn rank_parameters(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (scores[a], scores[b]);
        match (sa.is_nan(), sb.is_nan()) {
            (true, true) => a.cmp(&b),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            (false, false) => sb.partial_cmp(&sa).expect("not NaN").then(a.cmp(&b)),
        }
    });
    idx.into_iter().map(|i| i + 1).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Kriging,
    Linear,
    Forest,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 3] = [SurrogateKind::Kriging, SurrogateKind::Linear, SurrogateKind::Forest];
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateKind::Kriging => "kriging",
            SurrogateKind::Linear => "linear",
            SurrogateKind::Forest => "forest",
        })
    }
}

impl FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kriging" => Ok(SurrogateKind::Kriging),
            "linear" => Ok(SurrogateKind::Linear),
            "forest" | "randomforest" | "random-forest" => Ok(SurrogateKind::Forest),
            other => Err(Error::Config(format!("unknown surrogate `{other}`"))),
        }
    }
}

/// Fitting options for all three families.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    #[serde(default)]
    pub kriging: KrigingConfig,
    #[serde(default)]
    pub forest: ForestConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Surrogate {
    Kriging(KrigingModel),
    Linear(LinearModel),
    Forest(ForestModel),
}

impl Surrogate {
    pub fn fit(kind: SurrogateKind, design: &Design, cfg: &SurrogateConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            SurrogateKind::Kriging => Surrogate::Kriging(fit_kriging(design, &cfg.kriging, seed)?),
            SurrogateKind::Linear => Surrogate::Linear(fit_linear(design)?),
            SurrogateKind::Forest => Surrogate::Forest(fit_forest(design, &cfg.forest, seed)?),
        })
    }

    pub fn kind(&self) -> SurrogateKind {
        match self {
            Surrogate::Kriging(_) => SurrogateKind::Kriging,
            Surrogate::Linear(_) => SurrogateKind::Linear,
            Surrogate::Forest(_) => SurrogateKind::Forest,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Surrogate::Kriging(m) => m.predict_mean(x),
            Surrogate::Linear(m) => m.predict(x),
            Surrogate::Forest(m) => m.predict(x),
        }
    }

    pub fn importance(&self) -> Vec<f64> {
        match self {
            Surrogate::Kriging(m) => m.importance(),
            Surrogate::Linear(m) => m.importance(),
            Surrogate::Forest(m) => m.importance(),
        }
    }
}

/// Versioned, self-describing model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateArtifact {
    pub version: u32,
    /// 1-based parameter index for each model input.
    pub inputs: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub model: Surrogate,
}

impl SurrogateArtifact {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: SurrogateArtifact =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("bad model artifact: {e}")))?;
        if a.version != ARTIFACT_VERSION {
            return Err(Error::Model(format!(
                "model artifact version {} is not supported (expected {ARTIFACT_VERSION})",
                a.version
            )));
        }
        Ok(a)
    }
}
