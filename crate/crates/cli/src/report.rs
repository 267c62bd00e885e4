//! Machine-readable report types. Numbers are serialized with 17
//! significant digits so the JSON round-trips to the identical f64.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use corrpost_core::{Alpha, Hyperparameters, SufficientStats};

/// f64 wrapper serialized as a 17-significant-digit JSON number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw = RawValue::from_string(format_sig17(self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Num(f64::deserialize(deserializer)?))
    }
}

impl From<f64> for Num {
    fn from(x: f64) -> Self {
        Num(x)
    }
}

/// α echo: a positive number, or the string `"limit"` for the improper
/// reference limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEcho(pub Alpha);

impl Serialize for AlphaEcho {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Alpha::Limit => serializer.serialize_str("limit"),
            Alpha::Value(v) => Num(v).serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaEcho {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        match v {
            serde_json::Value::String(s) if s == "limit" => Ok(AlphaEcho(Alpha::Limit)),
            serde_json::Value::Number(n) => {
                let x = n.as_f64().ok_or_else(|| D::Error::custom("bad alpha"))?;
                Ok(AlphaEcho(Alpha::Value(x)))
            }
            other => Err(D::Error::custom(format!("bad alpha: {other}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatsEcho {
    pub n: u32,
    pub xbar1: Num,
    pub xbar2: Num,
    pub s1: Num,
    pub s2: Num,
    pub r: Num,
}

impl From<&SufficientStats> for StatsEcho {
    fn from(s: &SufficientStats) -> Self {
        StatsEcho {
            n: s.n,
            xbar1: Num(s.xbar1),
            xbar2: Num(s.xbar2),
            s1: Num(s.s1),
            s2: Num(s.s2),
            r: Num(s.r),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PriorEcho {
    pub name: String,
    pub alpha: AlphaEcho,
    pub beta: Num,
    pub gamma: Num,
    pub delta: Num,
}

impl PriorEcho {
    pub fn new(name: &str, eta: &Hyperparameters) -> Self {
        PriorEcho {
            name: name.to_string(),
            alpha: AlphaEcho(eta.alpha()),
            beta: Num(eta.beta()),
            gamma: Num(eta.gamma()),
            delta: Num(eta.delta()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Num,
    pub upper: Num,
    pub mass: Num,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PosteriorSection {
    pub mean: Num,
    pub variance: Num,
    /// E[ρᵏ] for k = 1..=4.
    pub moments: Vec<Num>,
    pub interval: Interval,
    pub norm_constant: Num,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_marginal_likelihood: Option<Num>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MomentDiag {
    pub k: u32,
    pub terms_used: usize,
    pub converged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    pub moment_series: Vec<MomentDiag>,
    pub norm_series_terms: usize,
    pub r_clamped: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub stats: StatsEcho,
    pub prior: PriorEcho,
    pub posterior: PosteriorSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_grid: Option<Vec<(Num, Num)>>,
    pub diagnostics: Diagnostics,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleSummary {
    pub seed: u64,
    pub n_draws: usize,
    pub burn_in: usize,
    pub proposal_mean: Num,
    pub proposal_sd: Num,
    pub acceptance_rate: Num,
    pub mean: Num,
    pub sd: Num,
}
