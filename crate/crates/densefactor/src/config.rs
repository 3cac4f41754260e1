//! Experiment configuration: a flat `section.key = value` text format plus
//! command-line overrides, merged and validated into a single config struct.
//!
//! Unknown keys are rejected; every range violation names the offending key.
//! The same struct is echoed verbatim into each output file's preamble so any
//! artifact can be reproduced from its own header.

use std::collections::BTreeMap;
use std::path::PathBuf;

use densefactor::channels::{ChannelKind, PriorKind, SpreadingKind};
use densefactor::mp_engine::{Algorithm, InitScheme};
use densefactor::replica::ModelFamily;
use densefactor::state_evolution::rescale_noise;
use densefactor::{Error, Result};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Generate,
    RunRbp,
    RunGamp,
    RunSe,
    SolveEos,
    PhaseDiagram,
    Compare,
}

impl CommandKind {
    pub fn parse(s: &str) -> Result<CommandKind> {
        Ok(match s {
            "generate" => CommandKind::Generate,
            "run-rbp" => CommandKind::RunRbp,
            "run-gamp" => CommandKind::RunGamp,
            "run-se" => CommandKind::RunSe,
            "solve-eos" => CommandKind::SolveEos,
            "phase-diagram" => CommandKind::PhaseDiagram,
            "compare" => CommandKind::Compare,
            other => {
                return Err(Error::Config(format!(
                    "unknown command `{other}` (expected generate, run-rbp, run-gamp, run-se, \
                     solve-eos, phase-diagram, or compare)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Generate => "generate",
            CommandKind::RunRbp => "run-rbp",
            CommandKind::RunGamp => "run-gamp",
            CommandKind::RunSe => "run-se",
            CommandKind::SolveEos => "solve-eos",
            CommandKind::PhaseDiagram => "phase-diagram",
            CommandKind::Compare => "compare",
        }
    }
}

/// Raw, partially-specified settings: file values first, then flag overrides,
/// then `finalize` fills documented defaults and cross-validates.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub command: Option<CommandKind>,
    family: Option<String>,
    p: Option<usize>,
    p1: Option<usize>,
    alpha1: Option<f64>,
    p2: Option<usize>,
    alpha: Option<f64>,
    lambda: Option<f64>,
    delta: Option<f64>,
    n: Option<usize>,
    m: Option<usize>,
    prior: Option<PriorKind>,
    channel: Option<&'static str>,
    spreading: Option<SpreadingKind>,
    algorithm: Option<Algorithm>,
    scheme: Option<&'static str>,
    a: Option<f64>,
    damping: Option<f64>,
    max_t: Option<usize>,
    tol: Option<f64>,
    instances: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    alpha_min: Option<f64>,
    alpha_max: Option<f64>,
    alpha_steps: Option<usize>,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    lambda_steps: Option<usize>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("type mismatch for `{key}`: cannot parse `{value}`")))
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("range violation for `{key}`: must be positive, got {v}")))
    }
}

fn positive_int(key: &str, v: i64) -> Result<usize> {
    if v > 0 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("range violation for `{key}`: must be >= 1, got {v}")))
    }
}

impl Settings {
    /// Apply one `section.key = value` pair. Keys use the file-format names;
    /// command-line flags are routed through the same table.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "run.command" => self.command = Some(CommandKind::parse(value)?),
            "run.instances" => {
                self.instances = Some(positive_int("run.instances (--instances)", parse_num(key, value)?)?)
            }
            "run.seed" => self.seed = Some(parse_num(key, value)?),
            "run.jobs" => self.jobs = Some(parse_num(key, value)?),
            "run.out" => self.out = Some(PathBuf::from(value)),
            "model.family" => {
                match value {
                    "ising-gauss" | "gauss-gauss" | "gauss-sign" | "mixed-gauss-gauss" => {}
                    other => {
                        return Err(Error::Config(format!(
                            "unknown model.family `{other}` (expected ising-gauss, gauss-gauss, \
                             gauss-sign, or mixed-gauss-gauss)"
                        )))
                    }
                }
                self.family = Some(value.to_string());
            }
            "model.p" => self.p = Some(positive_int("model.p (--p)", parse_num(key, value)?)?),
            "model.p1" => self.p1 = Some(positive_int("model.p1", parse_num(key, value)?)?),
            "model.alpha1" => {
                let v: f64 = parse_num(key, value)?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Config(format!(
                        "range violation for `model.alpha1`: must be >= 0, got {v}"
                    )));
                }
                self.alpha1 = Some(v);
            }
            "model.p2" => self.p2 = Some(positive_int("model.p2", parse_num(key, value)?)?),
            "model.alpha" => {
                self.alpha = Some(positive("model.alpha (--alpha)", parse_num(key, value)?)?)
            }
            "model.lambda" => {
                self.lambda = Some(positive("model.lambda (--lambda)", parse_num(key, value)?)?)
            }
            "model.delta" => {
                self.delta = Some(positive("model.delta (--delta)", parse_num(key, value)?)?)
            }
            "model.n" => self.n = Some(positive_int("model.n (--N)", parse_num(key, value)?)?),
            "model.m" => self.m = Some(positive_int("model.m (--M)", parse_num(key, value)?)?),
            "model.prior" => {
                self.prior = Some(match value {
                    "ising" => PriorKind::Ising,
                    "gaussian" => PriorKind::Gaussian,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown model.prior `{other}` (expected ising or gaussian)"
                        )))
                    }
                })
            }
            "model.channel" => {
                self.channel = Some(match value {
                    "additive" => "additive",
                    "sign" => "sign",
                    other => {
                        return Err(Error::Config(format!(
                            "unknown model.channel `{other}` (expected additive or sign)"
                        )))
                    }
                })
            }
            "model.spreading" => {
                self.spreading = Some(match value {
                    "deterministic" => SpreadingKind::Deterministic,
                    "rademacher" => SpreadingKind::Rademacher,
                    "gaussian" => SpreadingKind::GaussianUnit,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown model.spreading `{other}` (expected deterministic, \
                             rademacher, or gaussian)"
                        )))
                    }
                })
            }
            "algo.algorithm" => {
                self.algorithm = Some(match value {
                    "rbp" => Algorithm::Rbp,
                    "gamp" => Algorithm::Gamp,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown algo.algorithm `{other}` (expected rbp or gamp)"
                        )))
                    }
                })
            }
            "algo.scheme" => {
                self.scheme = Some(match value {
                    "informative" => "informative",
                    "uninformative" => "uninformative",
                    "truly-random" => "truly-random",
                    "sign-informative" => "sign-informative",
                    other => {
                        return Err(Error::Config(format!(
                            "unknown algo.scheme `{other}` (expected informative, uninformative, \
                             truly-random, or sign-informative)"
                        )))
                    }
                })
            }
            "algo.a" => {
                let v: f64 = parse_num(key, value)?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::Config(format!(
                        "range violation for `algo.a`: must lie in (0, 1), got {v}"
                    )));
                }
                self.a = Some(v);
            }
            "algo.damping" => {
                let v: f64 = parse_num(key, value)?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::Config(format!(
                        "range violation for `algo.damping` (--damping): must lie in (0, 1], got {v}"
                    )));
                }
                self.damping = Some(v);
            }
            "algo.max_t" => {
                self.max_t = Some(positive_int("algo.max_t (--max-t)", parse_num(key, value)?)?)
            }
            "algo.tol" => self.tol = Some(positive("algo.tol (--tol)", parse_num(key, value)?)?),
            "phase.alpha_min" => self.alpha_min = Some(positive(key, parse_num(key, value)?)?),
            "phase.alpha_max" => self.alpha_max = Some(positive(key, parse_num(key, value)?)?),
            "phase.alpha_steps" => {
                self.alpha_steps = Some(positive_int(key, parse_num(key, value)?)?)
            }
            "phase.lambda_min" => self.lambda_min = Some(positive(key, parse_num(key, value)?)?),
            "phase.lambda_max" => self.lambda_max = Some(positive(key, parse_num(key, value)?)?),
            "phase.lambda_steps" => {
                self.lambda_steps = Some(positive_int(key, parse_num(key, value)?)?)
            }
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a config file: one `section.key = value` per line, `#` comments,
    /// blank lines ignored.
    pub fn parse_file_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `section.key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn finalize(self) -> Result<ExperimentConfig> {
        let command = self
            .command
            .ok_or_else(|| Error::Config("no command given (positional argument or run.command)".into()))?;

        // The model family is the primary selector; bare prior/channel keys
        // either pin it down (when family is omitted) or must agree with it.
        let family_name = match (&self.family, self.prior, self.channel) {
            (Some(f), _, _) => f.clone(),
            (None, Some(PriorKind::Ising), Some("sign")) => {
                return Err(Error::Config(
                    "unsupported combination: ising prior with sign channel".into(),
                ))
            }
            (None, Some(PriorKind::Gaussian), Some("sign")) => "gauss-sign".into(),
            (None, Some(PriorKind::Gaussian), _) => "gauss-gauss".into(),
            (None, _, Some("sign")) => "gauss-sign".into(),
            (None, _, _) => "ising-gauss".into(),
        };

        let p = self.p.unwrap_or(2);
        let family = match family_name.as_str() {
            "ising-gauss" => ModelFamily::IsingGauss { p },
            "gauss-gauss" => ModelFamily::GaussGauss { p },
            "gauss-sign" => ModelFamily::GaussSign { p },
            "mixed-gauss-gauss" => ModelFamily::MixedGaussGauss {
                p1: self.p1.unwrap_or(2),
                alpha1: self.alpha1.unwrap_or(2.0),
                p2: self.p2.unwrap_or(3),
            },
            _ => unreachable!("family names validated in apply"),
        };
        family.validate()?;

        let derived_prior = match family {
            ModelFamily::IsingGauss { .. } => PriorKind::Ising,
            _ => PriorKind::Gaussian,
        };
        if let Some(pr) = self.prior {
            if pr != derived_prior {
                return Err(Error::Config(format!(
                    "model.prior (--prior) contradicts model.family `{family_name}`"
                )));
            }
        }
        let derived_channel = if family.is_sign() { "sign" } else { "additive" };
        if let Some(ch) = self.channel {
            if ch != derived_channel {
                return Err(Error::Config(format!(
                    "model.channel (--channel) contradicts model.family `{family_name}`"
                )));
            }
        }
        if family.is_sign() && self.delta.is_some() {
            return Err(Error::Config(
                "model.delta (--delta) does not apply to the sign channel".into(),
            ));
        }
        let delta = self.delta.unwrap_or(1.0);
        let channel = if family.is_sign() {
            ChannelKind::Sign
        } else {
            ChannelKind::AdditiveGaussian { noise_std: delta }
        };

        // Random spreading signs are needed to decorrelate the components of
        // pair interactions; higher orders decorrelate on their own.
        let spreading = self.spreading.unwrap_or(
            if family.species(1.0).iter().any(|&(ps, _)| ps == 2) {
                SpreadingKind::Rademacher
            } else {
                SpreadingKind::Deterministic
            },
        );

        let algorithm = self.algorithm.unwrap_or(match command {
            CommandKind::RunRbp => Algorithm::Rbp,
            _ => Algorithm::Gamp,
        });
        if command == CommandKind::RunRbp && algorithm != Algorithm::Rbp
            || command == CommandKind::RunGamp && algorithm != Algorithm::Gamp
        {
            return Err(Error::Config(
                "algo.algorithm contradicts the run-rbp/run-gamp command".into(),
            ));
        }

        let scheme_name = self.scheme.unwrap_or("uninformative");
        let scheme = match scheme_name {
            "informative" => InitScheme::Informative,
            "uninformative" => InitScheme::Uninformative { a: self.a.unwrap_or(0.01) },
            "truly-random" => InitScheme::TrulyRandom { a: self.a.unwrap_or(0.01) },
            "sign-informative" => InitScheme::SignInformative { a: self.a.unwrap_or(0.99) },
            _ => unreachable!("scheme names validated in apply"),
        };
        scheme.validate()?;

        let is_se = command == CommandKind::RunSe;
        let config = ExperimentConfig {
            command,
            family,
            alpha: self.alpha.unwrap_or(1.6),
            lambda: self.lambda.unwrap_or(2.0),
            delta,
            n: self.n.unwrap_or(1000),
            m: self.m.unwrap_or(100),
            prior: derived_prior,
            channel,
            spreading,
            algorithm,
            scheme,
            damping: self.damping.unwrap_or(match algorithm {
                Algorithm::Rbp => 0.5,
                Algorithm::Gamp => 1.0,
            }),
            max_t: self.max_t.unwrap_or(if is_se { 10_000 } else { 200 }),
            tol: self.tol.unwrap_or(if is_se { 1e-10 } else { 1e-8 }),
            instances: self.instances.unwrap_or(1),
            seed: self.seed.unwrap_or(1),
            jobs: self.jobs.unwrap_or(0),
            out: self
                .out
                .or_else(|| std::env::var_os("DENSEFACTOR_OUT").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(".")),
            alpha_grid: (
                self.alpha_min.unwrap_or(1.0),
                self.alpha_max.unwrap_or(3.0),
                self.alpha_steps.unwrap_or(21),
            ),
            lambda_grid: (
                self.lambda_min.unwrap_or(0.2),
                self.lambda_max.unwrap_or(3.0),
                self.lambda_steps.unwrap_or(29),
            ),
        };
        config.check_ranges()?;
        Ok(config)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub family: ModelFamily,
    pub alpha: f64,
    pub lambda: f64,
    pub delta: f64,
    pub n: usize,
    pub m: usize,
    pub prior: PriorKind,
    pub channel: ChannelKind,
    pub spreading: SpreadingKind,
    pub algorithm: Algorithm,
    pub scheme: InitScheme,
    pub damping: f64,
    pub max_t: usize,
    pub tol: f64,
    pub instances: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub alpha_grid: (f64, f64, usize),
    pub lambda_grid: (f64, f64, usize),
}

impl ExperimentConfig {
    fn check_ranges(&self) -> Result<()> {
        let p_max = self.family.species(self.alpha).iter().map(|&(p, _)| p).max().unwrap_or(2);
        if self.n < p_max {
            return Err(Error::Config(format!(
                "range violation for `model.n` (--N): need at least p = {p_max} variables, got {}",
                self.n
            )));
        }
        if self.alpha_grid.2 < 2 || self.lambda_grid.2 < 2 {
            return Err(Error::Config(
                "range violation for `phase.alpha_steps`/`phase.lambda_steps`: need >= 2".into(),
            ));
        }
        if self.alpha_grid.0 >= self.alpha_grid.1 {
            return Err(Error::Config(
                "range violation for `phase.alpha_min`: must be below phase.alpha_max".into(),
            ));
        }
        if self.lambda_grid.0 >= self.lambda_grid.1 {
            return Err(Error::Config(
                "range violation for `phase.lambda_min`: must be below phase.lambda_max".into(),
            ));
        }
        Ok(())
    }

    /// λ for the macroscopic layers (state evolution, equation of state),
    /// which absorb a non-unit additive noise level as λ → λ/Δ.
    pub fn lambda_effective(&self) -> Result<f64> {
        if self.family.is_sign() {
            Ok(self.lambda)
        } else {
            rescale_noise(self.lambda, self.delta)
        }
    }

    /// Macroscopic (m, q, Q) start matching the finite-size initialization.
    pub fn se_initial(&self) -> (f64, f64, f64) {
        match self.scheme {
            // The sign-channel overlap integrals need q < 1 strictly, so the
            // informative start sits just inside the boundary there.
            InitScheme::Informative => {
                if self.family.is_sign() {
                    (1.0 - 1e-9, 1.0 - 1e-9, 1.0)
                } else {
                    (1.0, 1.0, 1.0)
                }
            }
            InitScheme::Uninformative { a } | InitScheme::SignInformative { a } => (a, a, 1.0),
            InitScheme::TrulyRandom { a } => (0.0, a, 1.0),
        }
    }

    /// Full key = value echo, ordered, suitable for a `#` preamble. Feeding
    /// these lines back through the parser reproduces the run exactly.
    pub fn preamble(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| kv.push((k.to_string(), v));
        push("artifact_version", ARTIFACT_VERSION.to_string());
        push("run.command", self.command.name().to_string());
        let (family_name, p_fields): (&str, BTreeMap<&str, String>) = match self.family {
            ModelFamily::IsingGauss { p } => ("ising-gauss", [("model.p", p.to_string())].into()),
            ModelFamily::GaussGauss { p } => ("gauss-gauss", [("model.p", p.to_string())].into()),
            ModelFamily::GaussSign { p } => ("gauss-sign", [("model.p", p.to_string())].into()),
            ModelFamily::MixedGaussGauss { p1, alpha1, p2 } => (
                "mixed-gauss-gauss",
                [
                    ("model.p1", p1.to_string()),
                    ("model.alpha1", format!("{alpha1}")),
                    ("model.p2", p2.to_string()),
                ]
                .into(),
            ),
        };
        push("model.family", family_name.to_string());
        for (k, v) in p_fields {
            push(k, v);
        }
        push("model.alpha", format!("{}", self.alpha));
        push("model.lambda", format!("{}", self.lambda));
        if !self.family.is_sign() {
            push("model.delta", format!("{}", self.delta));
        }
        push("model.n", self.n.to_string());
        push("model.m", self.m.to_string());
        push(
            "model.prior",
            match self.prior {
                PriorKind::Ising => "ising",
                PriorKind::Gaussian => "gaussian",
            }
            .to_string(),
        );
        push(
            "model.channel",
            match self.channel {
                ChannelKind::AdditiveGaussian { .. } => "additive",
                ChannelKind::Sign => "sign",
            }
            .to_string(),
        );
        push(
            "model.spreading",
            match self.spreading {
                SpreadingKind::Deterministic => "deterministic",
                SpreadingKind::Rademacher => "rademacher",
                SpreadingKind::GaussianUnit => "gaussian",
            }
            .to_string(),
        );
        push(
            "algo.algorithm",
            match self.algorithm {
                Algorithm::Rbp => "rbp",
                Algorithm::Gamp => "gamp",
            }
            .to_string(),
        );
        let (scheme_name, a) = match self.scheme {
            InitScheme::Informative => ("informative", None),
            InitScheme::Uninformative { a } => ("uninformative", Some(a)),
            InitScheme::TrulyRandom { a } => ("truly-random", Some(a)),
            InitScheme::SignInformative { a } => ("sign-informative", Some(a)),
        };
        push("algo.scheme", scheme_name.to_string());
        if let Some(a) = a {
            push("algo.a", format!("{a}"));
        }
        push("algo.damping", format!("{}", self.damping));
        push("algo.max_t", self.max_t.to_string());
        push("algo.tol", format!("{}", self.tol));
        push("run.instances", self.instances.to_string());
        push("run.seed", self.seed.to_string());
        if matches!(self.command, CommandKind::PhaseDiagram) {
            push("phase.alpha_min", format!("{}", self.alpha_grid.0));
            push("phase.alpha_max", format!("{}", self.alpha_grid.1));
            push("phase.alpha_steps", self.alpha_grid.2.to_string());
            push("phase.lambda_min", format!("{}", self.lambda_grid.0));
            push("phase.lambda_max", format!("{}", self.lambda_grid.1));
            push("phase.lambda_steps", self.lambda_grid.2.to_string());
        }
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_text(text: &str) -> Result<ExperimentConfig> {
        let mut s = Settings::default();
        s.parse_file_text(text)?;
        s.finalize()
    }

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let cfg = from_text("run.command = run-se\n").unwrap();
        assert_eq!(cfg.command, CommandKind::RunSe);
        assert_eq!(cfg.family, ModelFamily::IsingGauss { p: 2 });
        assert_eq!(cfg.alpha, 1.6);
        assert_eq!(cfg.lambda, 2.0);
        assert_eq!((cfg.n, cfg.m), (1000, 100));
        assert_eq!(cfg.spreading, SpreadingKind::Rademacher);
        assert_eq!(cfg.scheme, InitScheme::Uninformative { a: 0.01 });
        assert_eq!((cfg.max_t, cfg.tol), (10_000, 1e-10));
        assert_eq!((cfg.instances, cfg.seed), (1, 1));
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let err = from_text("run.command = run-se\nmodel.gamma = 3\n").unwrap_err();
        assert!(err.to_string().contains("model.gamma"), "{err}");
    }

    #[test]
    fn negative_m_is_a_range_error_naming_the_key() {
        let err = from_text("run.command = run-rbp\nmodel.m = -5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.m") && msg.contains("--M"), "{msg}");
        assert!(msg.contains("range"), "{msg}");
    }

    #[test]
    fn later_values_override_earlier_ones() {
        let mut s = Settings::default();
        s.parse_file_text("run.command = run-se\nmodel.lambda = 1.0\n").unwrap();
        s.apply("model.lambda", "2.0").unwrap(); // flag override path
        assert_eq!(s.finalize().unwrap().lambda, 2.0);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = from_text("# experiment\n\nrun.command = solve-eos # inline\nmodel.p = 3\n").unwrap();
        assert_eq!(cfg.family, ModelFamily::IsingGauss { p: 3 });
        assert_eq!(cfg.spreading, SpreadingKind::Deterministic);
    }

    #[test]
    fn prior_channel_infer_family_or_must_agree() {
        let cfg = from_text("run.command = run-se\nmodel.prior = gaussian\nmodel.channel = sign\n")
            .unwrap();
        assert_eq!(cfg.family, ModelFamily::GaussSign { p: 2 });
        let err = from_text(
            "run.command = run-se\nmodel.family = ising-gauss\nmodel.prior = gaussian\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("contradicts"), "{err}");
    }

    #[test]
    fn sign_channel_rejects_noise_level() {
        let err =
            from_text("run.command = run-se\nmodel.family = gauss-sign\nmodel.delta = 0.5\n")
                .unwrap_err();
        assert!(err.to_string().contains("sign channel"), "{err}");
    }

    #[test]
    fn preamble_round_trips_through_parser() {
        let cfg = from_text(
            "run.command = compare\nmodel.family = gauss-gauss\nmodel.p = 3\nmodel.alpha = 5\n\
             model.lambda = 1.6\nalgo.scheme = informative\nrun.instances = 5\nrun.seed = 42\n",
        )
        .unwrap();
        let mut s = Settings::default();
        for (k, v) in cfg.preamble() {
            if k == "artifact_version" {
                continue;
            }
            s.apply(&k, &v).unwrap();
        }
        let back = s.finalize().unwrap();
        assert_eq!(back.family, cfg.family);
        assert_eq!(back.alpha, cfg.alpha);
        assert_eq!(back.lambda, cfg.lambda);
        assert_eq!(back.scheme, cfg.scheme);
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.instances, cfg.instances);
        assert_eq!(back.damping, cfg.damping);
    }

    #[test]
    fn se_initial_matches_scheme_targets() {
        let cfg = from_text("run.command = run-se\nalgo.scheme = truly-random\n").unwrap();
        assert_eq!(cfg.se_initial(), (0.0, 0.01, 1.0));
        let cfg = from_text(
            "run.command = run-se\nmodel.family = gauss-sign\nalgo.scheme = informative\n",
        )
        .unwrap();
        let (m0, q0, _) = cfg.se_initial();
        assert!(m0 < 1.0 && q0 < 1.0);
    }
}
