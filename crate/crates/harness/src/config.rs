//! Run configuration: a TOML file merged with command-line flags (flags
//! win), validated and clamped before any computation starts.

use clap::Args;
use cylren::effective::{MAX_DEPTH, MAX_ORDER};
use cylren::exact::{fmt_exact, parse_rational, Q};
use cylren::graphs::MAX_GRAPH_EDGES;
use cylren::lattice::MAX_DIMENSION;
use cylren::reference::ReferenceFamily;
use num_traits::Signed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CYLREN_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "cylren-out";

/// Largest level accepted by `verify-compat`.
pub const MAX_COMPAT_LEVEL: i64 = 12;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("bad config {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// A number in the config file, written either as a TOML number or as a
/// string such as `"3/2"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    fn text(&self) -> String {
        match self {
            Scalar::Int(i) => i.to_string(),
            Scalar::Float(f) => f.to_string(),
            Scalar::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub kind: Option<String>,
    pub alpha: Option<Scalar>,
    pub beta: Option<Scalar>,
    pub sigma: Option<Scalar>,
    pub scale: Option<Scalar>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub levels: Option<String>,
    pub m_range: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsSection {
    pub k: Option<usize>,
    pub max_edges: Option<usize>,
    pub m_max: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub z: Option<f64>,
    pub threads: Option<usize>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub family: FamilySection,
    #[serde(default)]
    pub lattice: LatticeSection,
    #[serde(default)]
    pub caps: CapsSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source: Box::new(source),
        })
    }
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reference family: gamma, gaussian or cauchy.
    #[arg(long)]
    pub family: Option<String>,
    /// Gamma shape at level 0 (rational, e.g. 3/2).
    #[arg(long)]
    pub alpha: Option<String>,
    /// Gamma rate at level 0.
    #[arg(long)]
    pub beta: Option<String>,
    /// Gaussian variance at level 0.
    #[arg(long)]
    pub sigma: Option<String>,
    /// Cauchy scale.
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Inclusive level range `a..b` for verify-compat.
    #[arg(long)]
    pub levels: Option<String>,
    /// Inclusive depth range `a..b` for divergence-scan.
    #[arg(long)]
    pub m_range: Option<String>,
    /// Order or degree `k`.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_edges: Option<usize>,
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Pass threshold in standard errors.
    #[arg(long)]
    pub z: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Numerical tolerance for floating-point checks.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyConfig {
    pub kind: String,
    /// Parameters as exact rational strings.
    pub params: BTreeMap<String, String>,
}

/// Fully resolved, validated configuration. Serialized into the manifest
/// and hashed; the output directory is kept out of the hash.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub family: FamilyConfig,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub levels: (i64, i64),
    pub m_range: (usize, usize),
    pub k: usize,
    pub max_edges: usize,
    pub m_max: usize,
    pub seed: u64,
    pub samples: usize,
    pub z: f64,
    pub threads: usize,
    pub tolerance: f64,
    /// Caps that were lowered to the module maxima.
    pub clamped: Vec<String>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

fn parse_range<T: std::str::FromStr>(field: &'static str, s: &str) -> Result<(T, T), ConfigError> {
    let bad = || invalid(field, format!("expected `a..b` or `a..=b`, got {s:?}"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (s, s),
    };
    let a = a.trim().parse().map_err(|_| bad())?;
    let b = b.trim().parse().map_err(|_| bad())?;
    Ok((a, b))
}

fn positive(field: &'static str, s: &str) -> Result<Q, ConfigError> {
    let v = parse_rational(s).ok_or_else(|| invalid(field, format!("not a rational number: {s:?}")))?;
    if !v.is_positive() {
        return Err(invalid(field, format!("must be positive, got {s}")));
    }
    Ok(v)
}

fn clamp(value: usize, max: usize, name: &str, clamped: &mut Vec<String>) -> usize {
    if value > max {
        clamped.push(format!("{name}: {value} -> {max}"));
        max
    } else {
        value
    }
}

impl RunConfig {
    pub fn resolve(command: &str, flags: &Overrides) -> Result<Self, ConfigError> {
        let file = match &flags.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let pick = |flag: &Option<String>, file: &Option<Scalar>, default: &str| {
            flag.clone()
                .or_else(|| file.as_ref().map(Scalar::text))
                .unwrap_or_else(|| default.to_string())
        };

        let kind = flags
            .family
            .clone()
            .or(file.family.kind.clone())
            .unwrap_or_else(|| "gamma".into())
            .to_ascii_lowercase();
        let params = match kind.as_str() {
            "gamma" => vec![
                ("alpha", pick(&flags.alpha, &file.family.alpha, "1")),
                ("beta", pick(&flags.beta, &file.family.beta, "1")),
            ],
            "gaussian" => vec![("sigma", pick(&flags.sigma, &file.family.sigma, "1"))],
            "cauchy" => vec![("scale", pick(&flags.scale, &file.family.scale, "1"))],
            other => return Err(invalid("family", format!("unknown family {other:?}"))),
        };
        let params = params
            .into_iter()
            .map(|(name, text)| {
                let field = match name {
                    "alpha" => "alpha",
                    "beta" => "beta",
                    "sigma" => "sigma",
                    _ => "scale",
                };
                Ok((name.to_string(), fmt_exact(&positive(field, &text)?)))
            })
            .collect::<Result<BTreeMap<_, _>, ConfigError>>()?;

        let d = flags.d.or(file.lattice.d).unwrap_or(1);
        if d == 0 || d > MAX_DIMENSION {
            return Err(invalid("d", format!("must be in 1..={MAX_DIMENSION}, got {d}")));
        }
        let mut clamped = Vec::new();
        let n = flags.n.or(file.lattice.n).unwrap_or(0);
        if n > MAX_DEPTH {
            return Err(invalid("n", format!("must be at most {MAX_DEPTH}, got {n}")));
        }
        let m = clamp(flags.m.or(file.lattice.m).unwrap_or(1), MAX_DEPTH, "m", &mut clamped);

        let levels_text = flags.levels.clone().or(file.lattice.levels).unwrap_or_else(|| "0..4".into());
        let levels: (i64, i64) = parse_range("levels", &levels_text)?;
        if levels.0 > levels.1 || levels.0 < -MAX_COMPAT_LEVEL || levels.1 > MAX_COMPAT_LEVEL {
            return Err(invalid(
                "levels",
                format!("need a <= b within ±{MAX_COMPAT_LEVEL}, got {levels_text}"),
            ));
        }
        let range_text = flags.m_range.clone().or(file.lattice.m_range).unwrap_or_else(|| "3..6".into());
        let (lo, hi): (usize, usize) = parse_range("m_range", &range_text)?;
        let hi = clamp(hi, MAX_DEPTH, "m_range", &mut clamped);
        if lo == 0 || lo + 2 > hi {
            return Err(invalid("m_range", format!("need 1 <= a and at least three depths, got {range_text}")));
        }

        let k = clamp(flags.k.or(file.caps.k).unwrap_or(2), MAX_ORDER, "k", &mut clamped);
        let max_edges = clamp(
            flags.max_edges.or(file.caps.max_edges).unwrap_or(3),
            MAX_GRAPH_EDGES,
            "max_edges",
            &mut clamped,
        );
        let m_max = clamp(flags.m_max.or(file.caps.m_max).unwrap_or(6), MAX_DEPTH, "m_max", &mut clamped);
        if m_max < 2 {
            return Err(invalid("m_max", "must be at least 2"));
        }

        let seed = flags.seed.or(file.run.seed).unwrap_or(1);
        let samples = flags.samples.or(file.run.samples).unwrap_or(100_000);
        if samples < 2 {
            return Err(invalid("samples", "need at least 2 samples"));
        }
        let z = flags.z.or(file.run.z).unwrap_or(5.0);
        if !(z.is_finite() && z > 0.0) {
            return Err(invalid("z", format!("must be positive, got {z}")));
        }
        let threads = flags.threads.or(file.run.threads).unwrap_or(0);
        let tolerance = flags.tolerance.or(file.run.tolerance).unwrap_or(1e-10);
        if !(tolerance.is_finite() && tolerance > 0.0) {
            return Err(invalid("tolerance", format!("must be positive, got {tolerance}")));
        }

        let out_dir = flags
            .out
            .clone()
            .or(file.output.dir)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

        Ok(RunConfig {
            command: command.to_string(),
            family: FamilyConfig { kind, params },
            d,
            n,
            m,
            levels,
            m_range: (lo, hi),
            k,
            max_edges,
            m_max,
            seed,
            samples,
            z,
            threads,
            tolerance,
            clamped,
            out_dir,
        })
    }

    fn param(&self, name: &str) -> Q {
        parse_rational(&self.family.params[name]).expect("validated")
    }

    pub fn family(&self) -> Result<ReferenceFamily, ConfigError> {
        let fam = match self.family.kind.as_str() {
            "gamma" => ReferenceFamily::gamma(self.d, self.param("alpha"), self.param("beta")),
            "gaussian" => ReferenceFamily::gaussian(self.d, self.param("sigma")),
            _ => ReferenceFamily::cauchy(self.d, self.param("scale")),
        };
        fam.map_err(|e| invalid("family", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range::<i64>("levels", "0..4").unwrap(), (0, 4));
        assert_eq!(parse_range::<i64>("levels", "-2..=3").unwrap(), (-2, 3));
        assert_eq!(parse_range::<i64>("levels", "5").unwrap(), (5, 5));
        assert!(parse_range::<i64>("levels", "a..3").is_err());
    }

    #[test]
    fn flags_override_file_and_caps_clamp() {
        let dir = std::env::temp_dir().join(format!("cylren-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(&path, "[family]\nkind = \"gamma\"\nalpha = \"3/2\"\n[caps]\nk = 9\n[lattice]\nn = 2\n").unwrap();
        let flags = Overrides {
            config: Some(path),
            n: Some(1),
            ..Default::default()
        };
        let cfg = RunConfig::resolve("wick", &flags).unwrap();
        assert_eq!(cfg.n, 1);
        assert_eq!(cfg.k, MAX_ORDER);
        assert_eq!(cfg.family.params["alpha"], "3/2");
        assert_eq!(cfg.clamped, vec![format!("k: 9 -> {MAX_ORDER}")]);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn validation_errors() {
        let bad = |f: Overrides| RunConfig::resolve("wick", &f).is_err();
        assert!(bad(Overrides {
            family: Some("poisson".into()),
            ..Default::default()
        }));
        assert!(bad(Overrides {
            alpha: Some("-1".into()),
            ..Default::default()
        }));
        assert!(bad(Overrides {
            d: Some(0),
            ..Default::default()
        }));
        assert!(bad(Overrides {
            levels: Some("4..0".into()),
            ..Default::default()
        }));
        assert!(bad(Overrides {
            samples: Some(0),
            ..Default::default()
        }));
    }
}
