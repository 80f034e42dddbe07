//! Run configuration: a flat `key = value` file whose keys mirror the CLI
//! flags. Flags given on the command line replace file values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use twosided::integrators::ExposureKind;
use twosided::market::SortKind;
use twosided::realization::LoginMode;

use crate::HarnessError;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "TWOSIDED_OUT_DIR";

pub const KEYS: &[&str] = &[
    "market",
    "capacities",
    "synth",
    "dataset",
    "default_capacity",
    "integrator",
    "sort",
    "exposure",
    "q",
    "expected",
    "monte_carlo",
    "login",
    "events",
    "oracle",
    "decompose",
    "seed",
    "out",
];

/// Raw key/value settings, kept sorted so they hash the same however they
/// were written.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim().replace('-', "_");
            if !KEYS.contains(&k.as_str()) {
                return Err(HarnessError::Config(format!("line {}: unknown key {k:?}", n + 1)));
            }
            map.insert(k, v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    /// Layers `other` on top of `self`.
    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| HarnessError::Config(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<bool, HarnessError> {
        match self.get(key) {
            None => Ok(false),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(HarnessError::Config(format!("{key} = {v:?}: expected a boolean"))),
        }
    }
}

impl fmt::Display for ConfigMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.0 {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MarketSource {
    Pairs { path: PathBuf, capacities: Option<PathBuf>, default_capacity: u32 },
    Synth { spec: PathBuf, dataset: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    OneSided,
    Da,
    Ecda,
}

impl FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one_sided" | "one-sided" => Ok(Self::OneSided),
            "da" => Ok(Self::Da),
            "ecda" => Ok(Self::Ecda),
            _ => Err(format!("unknown integrator {s:?} (one_sided, da, ecda)")),
        }
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OneSided => "one_sided",
            Self::Da => "da",
            Self::Ecda => "ecda",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CapacitySpec {
    Scalar(f64),
    File(PathBuf),
}

/// Integrator choice with everything it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Mechanism {
    pub integrator: Integrator,
    pub sort: SortKind,
    pub exposure: Option<ExposureKind>,
    pub q: Option<CapacitySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub market: MarketSource,
    pub mechanism: Mechanism,
    pub expected: bool,
    pub monte_carlo_days: Option<u64>,
    pub login: LoginMode,
    pub events: bool,
    pub oracle: bool,
    pub decompose: bool,
    pub seed: u64,
    pub out: PathBuf,
    /// The settings the config was built from, used for the run id.
    pub source: ConfigMap,
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, HarnessError> {
        let market = match (map.get("market"), map.get("synth")) {
            (Some(path), None) => MarketSource::Pairs {
                path: path.into(),
                capacities: map.get("capacities").map(PathBuf::from),
                default_capacity: map.parsed("default_capacity")?.unwrap_or(25),
            },
            (None, Some(spec)) => {
                MarketSource::Synth { spec: spec.into(), dataset: map.parsed("dataset")?.unwrap_or(1) }
            }
            (Some(_), Some(_)) => return Err(HarnessError::Config("give either market or synth, not both".into())),
            (None, None) => return Err(HarnessError::Config("no market: set market or synth".into())),
        };
        let integrator: Integrator = map
            .parsed("integrator")?
            .ok_or_else(|| HarnessError::Config("integrator is required".into()))?;
        let q = map.get("q").map(|v| match v.parse::<f64>() {
            Ok(x) => CapacitySpec::Scalar(x),
            Err(_) => CapacitySpec::File(v.into()),
        });
        let mechanism = Mechanism {
            integrator,
            sort: map.parsed("sort")?.unwrap_or(SortKind::DateSort),
            exposure: map.parsed("exposure")?,
            q,
        };
        mechanism.check()?;
        let login = match map.get("login") {
            None | Some("user") => LoginMode::UserLevel,
            Some("pair") => LoginMode::PerPair,
            Some(v) => return Err(HarnessError::Config(format!("login = {v:?}: expected user or pair"))),
        };
        Ok(Self {
            market,
            mechanism,
            expected: map.get("expected").is_none() || map.flag("expected")?,
            monte_carlo_days: map.parsed::<u64>("monte_carlo")?.filter(|&d| d > 0),
            login,
            events: map.flag("events")?,
            oracle: map.flag("oracle")?,
            decompose: map.flag("decompose")?,
            seed: map.parsed("seed")?.unwrap_or(0),
            out: map.get("out").map(PathBuf::from).unwrap_or_else(default_out_root),
            source: map.clone(),
        })
    }
}

impl Mechanism {
    pub fn check(&self) -> Result<(), HarnessError> {
        match self.integrator {
            Integrator::OneSided => Ok(()),
            Integrator::Da => match &self.q {
                None => Err(HarnessError::Config("da needs a receiver capacity q".into())),
                Some(CapacitySpec::Scalar(q)) if q.fract() != 0.0 || *q < 0.0 => {
                    Err(HarnessError::Config(format!("DA requires integer capacity, got q = {q}")))
                }
                Some(_) => Ok(()),
            },
            Integrator::Ecda => {
                if self.exposure.is_none() {
                    return Err(HarnessError::Config("ecda needs an exposure kind".into()));
                }
                match &self.q {
                    None => Err(HarnessError::Config("ecda needs a receiver capacity q".into())),
                    Some(CapacitySpec::Scalar(q)) if !(*q >= 0.0 && q.is_finite()) => {
                        Err(HarnessError::Config(format!("q = {q} must be finite and nonnegative")))
                    }
                    Some(_) => Ok(()),
                }
            }
        }
    }

    /// Short label such as `ecda:date`.
    pub fn label(&self) -> String {
        match (self.integrator, self.exposure) {
            (Integrator::OneSided, _) => format!("one_sided:{}", self.sort),
            (Integrator::Ecda, Some(e)) => format!("ecda:{e}"),
            (i, _) => i.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut map = ConfigMap::parse("# base\nmarket = pairs.csv\nintegrator = da\nq = 3 # headcount\n").unwrap();
        let mut flags = ConfigMap::default();
        flags.set("q", "5");
        map.merge(&flags);
        let cfg = RunConfig::from_map(&map).unwrap();
        assert_eq!(cfg.mechanism.q, Some(CapacitySpec::Scalar(5.0)));
        assert_eq!(cfg.mechanism.sort, SortKind::DateSort);
        assert!(cfg.expected);
    }

    #[test]
    fn fractional_da_capacity_rejected() {
        let map = ConfigMap::parse("market = p.csv\nintegrator = da\nq = 1.5").unwrap();
        let err = RunConfig::from_map(&map).unwrap_err();
        assert!(err.to_string().contains("DA requires integer capacity"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn ecda_needs_exposure() {
        let map = ConfigMap::parse("market = p.csv\nintegrator = ecda\nq = 1.5").unwrap();
        assert!(RunConfig::from_map(&map).is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ConfigMap::parse("capacty = 3").is_err());
        assert!(ConfigMap::parse("just text").is_err());
    }

    #[test]
    fn canonical_text_is_sorted() {
        let a = ConfigMap::parse("seed = 1\nmarket = x").unwrap();
        let b = ConfigMap::parse("market = x\nseed = 1").unwrap();
        assert_eq!(a.to_string(), b.to_string());
    }
}
