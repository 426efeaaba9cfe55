//! Flat `key = value` scenario files with command-line overrides.

use std::fmt;
use std::path::PathBuf;

use gaussmag_core::{
    derive_couplings, EffectiveCouplings, FilterConfig, ModelError, PhysicalParams, TimeGrid, TrueField, TruthMode,
};
use thiserror::Error;

/// Where a setting came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{origin}: expected `key = value`, got `{text}`")]
    Syntax { origin: Origin, text: String },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: Origin, key: String },
    #[error("{origin}: cannot parse `{value}` as a value for `{key}`")]
    BadValue { origin: Origin, key: String, value: String },
    #[error("{origin}: `{key}` repeated (first set on {first})")]
    Duplicate { origin: Origin, key: String, first: Origin },
    #[error("{origin}: `{key}` is an effective coupling but `{other}` ({other_origin}) is a physical parameter")]
    Conflict {
        origin: Origin,
        key: String,
        other: String,
        other_origin: Origin,
    },
    #[error("invalid parameters: {0}")]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamSource {
    Physical(PhysicalParams),
    Effective { kappa_sq: f64, mu: f64, eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthKind {
    GroundTruth,
    Innovation,
}

/// Fully resolved scenario. Field values in tesla.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: ParamSource,
    pub seed: u64,
    pub tau: f64,
    pub t_final: f64,
    pub t_min: f64,
    pub points: usize,
    pub r: f64,
    pub decay: bool,
    pub sg_time: Option<f64>,
    pub n: usize,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub truth_mode: TruthKind,
    pub b_true: Option<f64>,
    pub prior_mean: f64,
    pub delta_b0: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let p = PhysicalParams::default();
        Self {
            params: ParamSource::Physical(p),
            seed: 0,
            tau: 1e-8,
            t_final: 1e-2,
            t_min: 1e-6,
            points: 200,
            r: p.squeezing,
            decay: true,
            sg_time: None,
            n: 500,
            out: None,
            threads: None,
            truth_mode: TruthKind::GroundTruth,
            b_true: None,
            prior_mean: 0.0,
            delta_b0: p.prior_width,
        }
    }
}

const PHYSICAL_KEYS: [&str; 8] = [
    "wavelength",
    "dipole_moment",
    "decay_width",
    "detuning",
    "beam_area",
    "photon_flux",
    "atom_number",
    "magnetic_moment",
];
const EFFECTIVE_KEYS: [&str; 3] = ["kappa_sq", "mu", "eta"];
const SCENARIO_KEYS: [&str; 15] = [
    "seed",
    "tau",
    "t_final",
    "t_min",
    "points",
    "r",
    "decay",
    "sg_time",
    "n",
    "out",
    "threads",
    "truth_mode",
    "b_true",
    "prior_mean",
    "delta_b0",
];

/// Every key accepted in a scenario file.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    SCENARIO_KEYS.into_iter().chain(PHYSICAL_KEYS).chain(EFFECTIVE_KEYS)
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    origin: Origin,
}

fn read_file(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let origin = Origin::Line(i + 1);
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                origin,
                text: line.to_string(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                origin,
                text: line.to_string(),
            });
        }
        if let Some(first) = entries.iter().find(|e| e.key == key) {
            return Err(ConfigError::Duplicate {
                origin,
                key: key.to_string(),
                first: first.origin,
            });
        }
        entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            origin,
        });
    }
    Ok(entries)
}

fn parse<T: std::str::FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value.parse().map_err(|_| ConfigError::BadValue {
        origin: e.origin,
        key: e.key.clone(),
        value: e.value.clone(),
    })
}

fn parse_bool(e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue {
            origin: e.origin,
            key: e.key.clone(),
            value: e.value.clone(),
        }),
    }
}

/// Resolves a scenario from file text and overrides. Overrides are
/// `(key, value)` pairs using the file's key names and take precedence over
/// the file; defaults fill everything else.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<ScenarioConfig, ConfigError> {
    let mut entries = read_file(text)?;
    for (key, value) in overrides {
        entries.retain(|e| &e.key != key);
        entries.push(Entry {
            key: key.clone(),
            value: value.clone(),
            origin: Origin::Flag,
        });
    }

    for e in &entries {
        if !known_keys().any(|k| k == e.key) {
            return Err(ConfigError::UnknownKey {
                origin: e.origin,
                key: e.key.clone(),
            });
        }
    }
    let physical = entries.iter().find(|e| PHYSICAL_KEYS.contains(&e.key.as_str()));
    let effective = entries.iter().find(|e| EFFECTIVE_KEYS.contains(&e.key.as_str()));
    if let (Some(p), Some(f)) = (physical, effective) {
        // report against whichever appears later
        let later_is_effective = match (p.origin, f.origin) {
            (Origin::Line(a), Origin::Line(b)) => b > a,
            (_, Origin::Flag) => true,
            (Origin::Flag, _) => false,
        };
        let (at, other) = if later_is_effective { (f, p) } else { (p, f) };
        return Err(ConfigError::Conflict {
            origin: at.origin,
            key: at.key.clone(),
            other: other.key.clone(),
            other_origin: other.origin,
        });
    }

    let mut c = ScenarioConfig::default();
    let mut phys = PhysicalParams::default();
    let defaults = derive_couplings(&phys)?;
    let (mut kappa_sq, mut mu, mut eta) = (defaults.kappa_sq(), defaults.mu, defaults.eta);
    for e in &entries {
        match e.key.as_str() {
            "seed" => c.seed = parse(e)?,
            "tau" => c.tau = parse(e)?,
            "t_final" => c.t_final = parse(e)?,
            "t_min" => c.t_min = parse(e)?,
            "points" => c.points = parse(e)?,
            "r" => c.r = parse(e)?,
            "decay" => c.decay = parse_bool(e)?,
            "sg_time" => c.sg_time = Some(parse(e)?),
            "n" => c.n = parse(e)?,
            "out" => c.out = Some(PathBuf::from(&e.value)),
            "threads" => c.threads = Some(parse(e)?),
            "truth_mode" => {
                c.truth_mode = match e.value.as_str() {
                    "ground-truth" => TruthKind::GroundTruth,
                    "innovation" => TruthKind::Innovation,
                    _ => {
                        return Err(ConfigError::BadValue {
                            origin: e.origin,
                            key: e.key.clone(),
                            value: e.value.clone(),
                        })
                    }
                }
            }
            "b_true" => c.b_true = Some(parse(e)?),
            "prior_mean" => c.prior_mean = parse(e)?,
            "delta_b0" => c.delta_b0 = parse(e)?,
            "wavelength" => phys.wavelength = parse(e)?,
            "dipole_moment" => phys.dipole_moment = parse(e)?,
            "decay_width" => phys.decay_width = parse(e)?,
            "detuning" => phys.detuning = parse(e)?,
            "beam_area" => phys.beam_area = parse(e)?,
            "photon_flux" => phys.photon_flux = parse(e)?,
            "atom_number" => phys.atom_number = parse(e)?,
            "magnetic_moment" => phys.magnetic_moment = parse(e)?,
            "kappa_sq" => kappa_sq = parse(e)?,
            "mu" => mu = parse(e)?,
            "eta" => eta = parse(e)?,
            _ => unreachable!("keys checked above"),
        }
    }
    c.params = if effective.is_some() {
        EffectiveCouplings::from_rates(kappa_sq, mu, eta)?;
        ParamSource::Effective { kappa_sq, mu, eta }
    } else {
        phys.prior_width = c.delta_b0;
        phys.squeezing = c.r;
        phys.validate()?;
        ParamSource::Physical(phys)
    };
    Ok(c)
}

impl ScenarioConfig {
    pub fn couplings(&self) -> Result<EffectiveCouplings, ModelError> {
        match self.params {
            ParamSource::Physical(p) => derive_couplings(&p),
            ParamSource::Effective { kappa_sq, mu, eta } => EffectiveCouplings::from_rates(kappa_sq, mu, eta),
        }
    }

    pub fn filter_config(&self) -> Result<FilterConfig, ModelError> {
        let mut f = FilterConfig::new(self.couplings()?, self.delta_b0);
        f.tau = self.tau;
        f.t_final = self.t_final;
        f.decay = self.decay;
        f.squeezing = self.r;
        f.prior_mean = self.prior_mean;
        f.sg_time = self.sg_time;
        f.seed = self.seed;
        f.grid = TimeGrid::LogSpaced {
            t_min: self.t_min,
            points: self.points,
        };
        f.truth = match (self.truth_mode, self.b_true) {
            (TruthKind::Innovation, _) => TruthMode::InnovationDraw,
            (TruthKind::GroundTruth, Some(b)) => TruthMode::GroundTruth(TrueField::Fixed(b)),
            (TruthKind::GroundTruth, None) => TruthMode::GroundTruth(TrueField::FromPrior),
        };
        Ok(f)
    }

    /// Resolved settings as `key = value` pairs for the output header.
    /// Output path and thread count are left out so that they cannot change
    /// the bytes of a result.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("tau", format!("{:e}", self.tau)),
            ("t_final", format!("{:e}", self.t_final)),
            ("t_min", format!("{:e}", self.t_min)),
            ("points", self.points.to_string()),
            ("r", format!("{:e}", self.r)),
            ("decay", self.decay.to_string()),
            ("sg_time", self.sg_time.map_or("none".into(), |t| format!("{t:e}"))),
            ("n", self.n.to_string()),
            (
                "truth_mode",
                match self.truth_mode {
                    TruthKind::GroundTruth => "ground-truth".into(),
                    TruthKind::Innovation => "innovation".into(),
                },
            ),
            ("b_true", self.b_true.map_or("prior".into(), |b| format!("{b:e}"))),
            ("prior_mean", format!("{:e}", self.prior_mean)),
            ("delta_b0", format!("{:e}", self.delta_b0)),
        ];
        match self.params {
            ParamSource::Physical(p) => out.extend([
                ("wavelength", format!("{:e}", p.wavelength)),
                ("dipole_moment", format!("{:e}", p.dipole_moment)),
                ("decay_width", format!("{:e}", p.decay_width)),
                ("detuning", format!("{:e}", p.detuning)),
                ("beam_area", format!("{:e}", p.beam_area)),
                ("photon_flux", format!("{:e}", p.photon_flux)),
                ("atom_number", format!("{:e}", p.atom_number)),
                ("magnetic_moment", format!("{:e}", p.magnetic_moment)),
            ]),
            ParamSource::Effective { kappa_sq, mu, eta } => out.extend([
                ("kappa_sq", format!("{kappa_sq:e}")),
                ("mu", format!("{mu:e}")),
                ("eta", format!("{eta:e}")),
            ]),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flag(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn empty_input_gives_defaults() {
        let c = parse_config("", &[]).unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.tau, 1e-8);
        assert_eq!(c.seed, 0);
        assert_eq!(c.params, ParamSource::Physical(PhysicalParams::default()));
    }

    #[test]
    fn flag_overrides_file() {
        let c = parse_config("kappa_sq = 1.83e6\n", &[flag("kappa_sq", "2e6")]).unwrap();
        let ParamSource::Effective { kappa_sq, .. } = c.params else {
            panic!("expected effective couplings")
        };
        assert_eq!(kappa_sq, 2e6);
    }

    #[test]
    fn missing_effective_keys_take_default_values() {
        let c = parse_config("eta = 0\n", &[]).unwrap();
        let d = derive_couplings(&PhysicalParams::default()).unwrap();
        assert_eq!(
            c.params,
            ParamSource::Effective {
                kappa_sq: d.kappa_sq(),
                mu: d.mu,
                eta: 0.0
            }
        );
    }

    #[test]
    fn mixed_sources_are_rejected_with_line() {
        let err = parse_config("atom_number = 1e12\n# note\nkappa_sq = 2e6\n", &[]).unwrap_err();
        assert_eq!(
            err,
            ConfigError::Conflict {
                origin: Origin::Line(3),
                key: "kappa_sq".into(),
                other: "atom_number".into(),
                other_origin: Origin::Line(1),
            }
        );
        let err = parse_config("atom_number = 1e12\n", &[flag("mu", "1")]).unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Conflict {
                origin: Origin::Flag,
                ..
            }
        ));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_config("\n\nspeed = 3\n", &[]).unwrap_err();
        assert_eq!(err.to_string(), "line 3: unknown key `speed`");
        let err = parse_config("tau = 1e-8\nseed = x\n", &[]).unwrap_err();
        assert_eq!(err.to_string(), "line 2: cannot parse `x` as a value for `seed`");
        let err = parse_config("tau 1e-8\n", &[]).unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Syntax {
                origin: Origin::Line(1),
                ..
            }
        ));
        let err = parse_config("tau = 1\ntau = 2\n", &[]).unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Duplicate {
                origin: Origin::Line(2),
                first: Origin::Line(1),
                ..
            }
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = parse_config("# scenario\n\n  r = 3   # squeezed\ndecay = off\n", &[]).unwrap();
        assert_eq!(c.r, 3.0);
        assert!(!c.decay);
    }

    #[test]
    fn physical_values_are_validated() {
        let err = parse_config("atom_number = -1\n", &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Model(_)));
    }

    #[test]
    fn truth_settings_map_to_filter_modes() {
        let c = parse_config("b_true = 3e-13\n", &[]).unwrap();
        assert_eq!(
            c.filter_config().unwrap().truth,
            TruthMode::GroundTruth(TrueField::Fixed(3e-13))
        );
        let c = parse_config("truth_mode = innovation\n", &[]).unwrap();
        assert_eq!(c.filter_config().unwrap().truth, TruthMode::InnovationDraw);
        assert!(parse_config("truth_mode = oracle\n", &[]).is_err());
    }

    #[test]
    fn echo_omits_output_and_threads() {
        let c = parse_config("threads = 4\nout = x.csv\n", &[]).unwrap();
        let keys: Vec<_> = c.echo().into_iter().map(|(k, _)| k).collect();
        assert!(!keys.contains(&"threads") && !keys.contains(&"out"));
        assert!(keys.contains(&"atom_number"));
    }
}
