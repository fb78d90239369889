//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use ideolens_core::scorer::{AveragingSpace, HttpBackendConfig};
use ideolens_core::stimulus::{
    load_names, load_preambles, load_pronoun_templates, load_pronoun_variants, load_variant_sets,
    Domain, Experiment, StimulusBundle, StimulusSubset,
};
use serde::{Deserialize, Deserializer};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BonferroniM {
    /// Number of distinct models in the analysed results.
    Auto,
    Fixed(usize),
}

impl<'de> Deserialize<'de> for BonferroniM {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Str(s) if s == "auto" => Ok(BonferroniM::Auto),
            Raw::Int(n) if n >= 1 => Ok(BonferroniM::Fixed(n as usize)),
            _ => Err(serde::de::Error::custom(
                "bonferroni_m must be \"auto\" or a positive integer",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockArchitecture {
    #[default]
    Autoregressive,
    EncoderDecoder,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Mock {
        #[serde(default)]
        context_gain: f64,
        #[serde(default)]
        architecture: MockArchitecture,
    },
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusPaths {
    pub role_nouns: Option<PathBuf>,
    pub pronoun_variants: Option<PathBuf>,
    pub pronoun_templates: Option<PathBuf>,
    pub names: Option<PathBuf>,
    pub preambles: Option<PathBuf>,
}

fn default_concurrency() -> usize {
    8
}
fn default_alpha() -> f64 {
    0.05
}
fn default_m() -> BonferroniM {
    BonferroniM::Auto
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    domain: String,
    experiment: u8,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_out")]
    output_dir: PathBuf,
    #[serde(default = "default_concurrency")]
    concurrency_limit: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_m")]
    bonferroni_m: BonferroniM,
    #[serde(default)]
    stimulus_subset: StimulusSubset,
    #[serde(default)]
    averaging: AveragingSpace,
    /// Label written into results; defaults to the backend id.
    model: Option<String>,
    #[serde(default)]
    stimuli: StimulusPaths,
    backend: BackendConfig,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: Domain,
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub concurrency_limit: usize,
    pub alpha: f64,
    pub bonferroni_m: BonferroniM,
    pub stimulus_subset: StimulusSubset,
    pub averaging: AveragingSpace,
    pub model: Option<String>,
    pub stimuli: StimulusPaths,
    pub backend: BackendConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub domain: Option<String>,
    pub experiment: Option<u8>,
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, overrides)
    }

    /// Parse config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let domain_s = overrides.domain.clone().unwrap_or(raw.domain);
        let domain = Domain::parse(&domain_s).ok_or_else(|| {
            CliError::Config(format!(
                "unknown domain `{domain_s}` (expected role-nouns or pronouns)"
            ))
        })?;
        let exp_n = overrides.experiment.unwrap_or(raw.experiment);
        let experiment = Experiment::from_number(exp_n)
            .ok_or_else(|| CliError::Config(format!("unknown experiment {exp_n}")))?;
        if !(raw.alpha > 0.0 && raw.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "alpha must be in (0, 1), got {}",
                raw.alpha
            )));
        }
        let concurrency_limit = overrides.concurrency.unwrap_or(raw.concurrency_limit);
        if concurrency_limit == 0 {
            return Err(CliError::Config(
                "concurrency_limit must be positive".to_string(),
            ));
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let mut stimuli = raw.stimuli;
        for p in [
            &mut stimuli.role_nouns,
            &mut stimuli.pronoun_variants,
            &mut stimuli.pronoun_templates,
            &mut stimuli.names,
            &mut stimuli.preambles,
        ] {
            if let Some(path) = p.take() {
                let path = resolve(path);
                if !path.exists() {
                    return Err(CliError::Config(format!(
                        "stimulus file `{}` does not exist",
                        path.display()
                    )));
                }
                *p = Some(path);
            }
        }
        if let BackendConfig::Mock { context_gain, .. } = &raw.backend {
            if !context_gain.is_finite() {
                return Err(CliError::Config("context_gain must be finite".to_string()));
            }
        }
        Ok(RunConfig {
            domain,
            experiment,
            seed: overrides.seed.unwrap_or(raw.seed),
            output_dir: overrides
                .out
                .clone()
                .unwrap_or_else(|| resolve(raw.output_dir)),
            concurrency_limit,
            alpha: raw.alpha,
            bonferroni_m: raw.bonferroni_m,
            stimulus_subset: raw.stimulus_subset,
            averaging: raw.averaging,
            model: raw.model,
            stimuli,
            backend: raw.backend,
        })
    }

    /// Shipped stimuli, with any configured file replacing its part.
    pub fn bundle(&self) -> Result<StimulusBundle, CliError> {
        let mut b = StimulusBundle::shipped();
        let err = |e: ideolens_core::stimulus::StimulusError| CliError::Config(e.to_string());
        if let Some(p) = &self.stimuli.role_nouns {
            b.role_noun_sets = load_variant_sets(p).map_err(err)?;
        }
        if let Some(p) = &self.stimuli.pronoun_variants {
            b.pronoun_sets = load_pronoun_variants(p).map_err(err)?;
        }
        if let Some(p) = &self.stimuli.pronoun_templates {
            b.pronoun_templates = load_pronoun_templates(p).map_err(err)?;
        }
        if let Some(p) = &self.stimuli.names {
            b.names = load_names(p).map_err(err)?;
        }
        if let Some(p) = &self.stimuli.preambles {
            b.preambles = load_preambles(p).map_err(err)?;
        }
        Ok(b)
    }

    fn stem(&self, experiment: Experiment) -> String {
        format!("exp{}_{}", experiment.number(), self.domain.as_str())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir
            .join("manifests")
            .join(format!("{}.jsonl", self.stem(self.experiment)))
    }

    pub fn results_path_for(&self, experiment: Experiment) -> PathBuf {
        self.output_dir
            .join("results")
            .join(format!("{}.jsonl", self.stem(experiment)))
    }

    pub fn results_path(&self) -> PathBuf {
        self.results_path_for(self.experiment)
    }

    pub fn failures_path(&self) -> PathBuf {
        self.output_dir
            .join("results")
            .join(format!("{}.failures.jsonl", self.stem(self.experiment)))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.output_dir.join("cache").join("scores.jsonl")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.output_dir.join("analysis")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("report")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
domain = "pronouns"
experiment = 2
[backend]
kind = "mock"
"#;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse(MINIMAL, Path::new("/cfg"), &Overrides::default()).unwrap();
        assert_eq!(c.domain, Domain::Pronoun);
        assert_eq!(c.output_dir, PathBuf::from("/cfg/out"));
        assert_eq!(c.bonferroni_m, BonferroniM::Auto);
        let o = Overrides {
            seed: Some(9),
            domain: Some("role-nouns".into()),
            ..Default::default()
        };
        let c = RunConfig::parse(MINIMAL, Path::new("/cfg"), &o).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.domain, Domain::RoleNoun);
    }

    #[test]
    fn rejects_bad_values() {
        let bad_alpha = format!("alpha = 1.5\n{MINIMAL}");
        assert!(matches!(
            RunConfig::parse(&bad_alpha, Path::new("."), &Overrides::default()),
            Err(CliError::Config(_))
        ));
        let bad_m = format!("bonferroni_m = \"some\"\n{MINIMAL}");
        assert!(RunConfig::parse(&bad_m, Path::new("."), &Overrides::default()).is_err());
        let missing = format!("{MINIMAL}\n[stimuli]\nnames = \"nope.csv\"\n");
        let err =
            RunConfig::parse(&missing, Path::new("/nowhere"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("nope.csv"));
    }

    #[test]
    fn fixed_m() {
        let c = RunConfig::parse(
            &format!("bonferroni_m = 9\n{MINIMAL}"),
            Path::new("."),
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(c.bonferroni_m, BonferroniM::Fixed(9));
    }
}
