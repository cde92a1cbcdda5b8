//! Run configuration.
//!
//! Precedence, lowest first: built-in defaults, the TOML file given with
//! `--config` (a plain config or a previous run's `manifest.toml`), then
//! command-line flags. Every field is optional in the file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use temsp_core::measure::{parse_functional, SolverRegistry};
use temsp_core::model::{CubicDelayedNoiseModel, InitialData, ModelRegistry};
use temsp_core::truncation::{parse_growth, Grid, DEFAULT_NU};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    /// Growth function, e.g. `power:16,4`; defaults to the model's own.
    pub growth: Option<String>,
    pub nu: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: CubicDelayedNoiseModel::NAME.into(),
            growth: None,
            nu: DEFAULT_NU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// One simulation leg per step size.
    pub dt: Vec<f64>,
    /// Time horizon; must be a multiple of every `dt`.
    pub horizon: f64,
    /// Horizon in steps; overrides `horizon` and needs a single `dt`.
    pub steps: Option<usize>,
    /// Spacing of the mean observations.
    pub observe_every: f64,
    /// Explicit observation times; replaces `observe_every` when set.
    pub observe_times: Option<Vec<f64>>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dt: vec![1e-3],
            horizon: 10.0,
            steps: None,
            observe_every: 0.1,
            observe_times: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 1,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub name: String,
    /// `constant:..`, `affine:..:..` or `brownian`.
    pub spec: String,
}

impl InitialSpec {
    pub fn new(name: &str, spec: &str) -> Self {
        Self {
            name: name.into(),
            spec: spec.into(),
        }
    }

    /// Parses `NAME=KIND:ARGS`.
    pub fn parse_flag(s: &str) -> Result<Self, String> {
        let (name, spec) = s
            .split_once('=')
            .ok_or_else(|| format!("--initial expects NAME=KIND:ARGS, got '{s}'"))?;
        if name.trim().is_empty() {
            return Err(format!("--initial '{s}' has an empty name"));
        }
        Ok(Self::new(name.trim(), spec.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalSection {
    pub names: Vec<String>,
    /// Time of the ECDF snapshot; defaults to the horizon.
    pub ecdf_time: Option<f64>,
}

impl Default for FunctionalSection {
    fn default() -> Self {
        Self {
            names: vec!["cos-norm".into(), "clip-norm:2".into()],
            ecdf_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSection {
    pub enabled: bool,
    /// `exact-assignment`, `entropic` or `entropic:<epsilon>`.
    pub method: String,
    /// Initial-data leg whose segment measures are compared.
    pub initial: String,
    /// Step size of that leg; defaults to the first `dt`.
    pub dt: Option<f64>,
    /// Each time is compared with the last one.
    pub times: Vec<f64>,
    /// Exact assignment above this many samples needs a subsample.
    pub subsample: usize,
}

impl Default for DistanceSection {
    fn default() -> Self {
        Self {
            enabled: true,
            method: "exact-assignment".into(),
            initial: "xi3".into(),
            dt: None,
            times: vec![1.0, 5.0, 10.0],
            subsample: EXACT_LIMIT,
        }
    }
}

/// Largest sample count handed to the cubic-time exact solver.
pub const EXACT_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub override_admissibility: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            override_admissibility: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub ensemble: EnsembleSection,
    pub functionals: FunctionalSection,
    pub distance: DistanceSection,
    pub output: OutputSection,
    pub initial: Vec<InitialSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            grid: GridSection::default(),
            ensemble: EnsembleSection::default(),
            functionals: FunctionalSection::default(),
            distance: DistanceSection::default(),
            output: OutputSection::default(),
            initial: paper_initials(),
        }
    }
}

pub fn paper_initials() -> Vec<InitialSpec> {
    vec![
        InitialSpec::new("xi1", "brownian"),
        InitialSpec::new("xi2", "affine:2,1:0,1"),
        InitialSpec::new("xi3", "constant:-3,4"),
    ]
}

/// Command-line overrides; `None` leaves the file or default value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub dt: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
    pub model: Option<String>,
    pub initial: Option<Vec<InitialSpec>>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub override_admissibility: bool,
    pub distance_method: Option<String>,
}

#[derive(Deserialize)]
struct ManifestShell {
    config: RunConfig,
}

/// All problems found while validating a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration ({} problem", self.0.len())?;
        if self.0.len() != 1 {
            write!(f, "s")?;
        }
        write!(f, "):")?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parses a config file, or the `[config]` table of a manifest.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let value: toml::Table = toml::from_str(text).map_err(|e| CliError::config(format!("{e}")))?;
        if value.contains_key("manifest") || value.contains_key("files") {
            let m: ManifestShell = toml::from_str(text).map_err(|e| CliError::config(format!("{e}")))?;
            return Ok(m.config);
        }
        toml::from_str(text).map_err(|e| CliError::config(format!("{e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.ensemble.seed = v;
        }
        if let Some(v) = o.samples {
            self.ensemble.samples = v;
        }
        if let Some(v) = &o.dt {
            self.grid.dt = v.clone();
        }
        if let Some(v) = o.horizon {
            self.grid.horizon = v;
            self.grid.steps = None;
        }
        if let Some(v) = o.steps {
            self.grid.steps = Some(v);
        }
        if let Some(v) = &o.model {
            self.model.name = v.clone();
        }
        if let Some(v) = &o.initial {
            self.initial = v.clone();
        }
        if let Some(v) = &o.out_dir {
            self.output.dir = v.clone();
        }
        if let Some(v) = o.workers {
            self.ensemble.workers = v;
        }
        if o.override_admissibility {
            self.output.override_admissibility = true;
        }
        if let Some(v) = &o.distance_method {
            self.distance.method = v.clone();
        }
    }

    /// Checks every field and folds `steps` into `horizon`. Returns all
    /// problems at once.
    pub fn validate(&mut self) -> Result<(), ConfigErrors> {
        let mut errs = Vec::new();
        let models = ModelRegistry::with_builtins();
        let model = match models.get(&self.model.name) {
            Ok(m) => Some(m),
            Err(e) => {
                errs.push(format!("model.name: {e}"));
                None
            }
        };
        if let Some(g) = &self.model.growth {
            if let Err(e) = parse_growth(g) {
                errs.push(format!("model.growth: {e}"));
            }
        } else if let Some(m) = &model {
            if m.growth_function().is_none() {
                errs.push(format!("model.growth: model '{}' has no default growth function", m.name()));
            }
        }
        if !(self.model.nu > 0.0 && self.model.nu <= 1.0 / 3.0) {
            errs.push(format!("model.nu: must lie in (0, 1/3], got {}", self.model.nu));
        }
        let tau = model.as_ref().map(|m| m.delay()).unwrap_or(1.0);

        if self.grid.dt.is_empty() {
            errs.push("grid.dt: at least one step size is required".into());
        }
        let mut sorted = self.grid.dt.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            errs.push("grid.dt: duplicate step sizes".into());
        }
        let grids: Vec<Grid> = self
            .grid
            .dt
            .iter()
            .filter_map(|&dt| match Grid::from_dt(tau, dt, 0) {
                Ok(g) => Some(g),
                Err(e) => {
                    errs.push(format!("grid.dt = {dt}: {e}"));
                    None
                }
            })
            .collect();
        if let Some(steps) = self.grid.steps {
            if self.grid.dt.len() == 1 {
                self.grid.horizon = steps as f64 * self.grid.dt[0];
                self.grid.steps = None;
            } else {
                errs.push("grid.steps: needs exactly one dt (use grid.horizon instead)".into());
            }
        }
        if !(self.grid.horizon >= 0.0 && self.grid.horizon.is_finite()) {
            errs.push(format!("grid.horizon: must be finite and >= 0, got {}", self.grid.horizon));
        }
        let aligned = |what: &str, t: f64, errs: &mut Vec<String>| {
            for g in &grids {
                if let Err(e) = g.step_of(t) {
                    errs.push(format!("{what}: {e}"));
                }
            }
            if t < 0.0 || t > self.grid.horizon * (1.0 + 1e-12) {
                errs.push(format!("{what}: time {t} outside [0, {}]", self.grid.horizon));
            }
        };
        aligned("grid.horizon", self.grid.horizon, &mut errs);
        match &self.grid.observe_times {
            Some(ts) => {
                if ts.is_empty() {
                    errs.push("grid.observe_times: empty list".into());
                }
                for &t in ts {
                    aligned("grid.observe_times", t, &mut errs);
                }
            }
            None => {
                if !(self.grid.observe_every > 0.0) {
                    errs.push(format!("grid.observe_every: must be positive, got {}", self.grid.observe_every));
                } else {
                    aligned("grid.observe_every", self.grid.observe_every.min(self.grid.horizon), &mut errs);
                }
            }
        }

        if self.ensemble.seed > i64::MAX as u64 {
            errs.push(format!("ensemble.seed: must be below 2^63 to round-trip through TOML, got {}", self.ensemble.seed));
        }
        if self.ensemble.samples == 0 {
            errs.push("ensemble.samples: must be >= 1".into());
        }

        if self.initial.is_empty() {
            errs.push("initial: at least one initial-data entry is required".into());
        }
        for (i, spec) in self.initial.iter().enumerate() {
            if self.initial[..i].iter().any(|s| s.name == spec.name) {
                errs.push(format!("initial '{}': duplicate name", spec.name));
            }
            if spec.name.is_empty() || spec.name.contains([',', '"', '\n']) {
                errs.push(format!("initial '{}': names must be nonempty without commas or quotes", spec.name));
            }
            match spec.spec.parse::<InitialData>() {
                Ok(InitialData::Constant(v)) | Ok(InitialData::Affine { slope: v, .. }) => {
                    if let Some(m) = &model {
                        if v.len() != m.state_dim() {
                            errs.push(format!(
                                "initial '{}': dimension {} does not match model dimension {}",
                                spec.name,
                                v.len(),
                                m.state_dim()
                            ));
                        }
                    }
                }
                Ok(_) => {}
                Err(e) => errs.push(format!("initial '{}': {e}", spec.name)),
            }
        }

        if self.functionals.names.is_empty() {
            errs.push("functionals.names: at least one functional is required".into());
        }
        for name in &self.functionals.names {
            if let Err(e) = parse_functional(name) {
                errs.push(format!("functionals.names: {e}"));
            }
        }
        if let Some(t) = self.functionals.ecdf_time {
            aligned("functionals.ecdf_time", t, &mut errs);
        }

        if self.distance.enabled {
            let d = &self.distance;
            if let Err(e) = SolverRegistry::with_builtins().get(&d.method) {
                errs.push(format!("distance.method: {e}"));
            }
            if !self.initial.iter().any(|s| s.name == d.initial) {
                errs.push(format!("distance.initial: no initial named '{}'", d.initial));
            }
            if let Some(dt) = d.dt {
                if !self.grid.dt.contains(&dt) {
                    errs.push(format!("distance.dt: {dt} is not one of grid.dt"));
                }
            }
            if d.times.len() < 2 {
                errs.push("distance.times: needs at least two times".into());
            }
            if d.times.windows(2).any(|w| w[0] >= w[1]) {
                errs.push("distance.times: must be strictly increasing".into());
            }
            for &t in &d.times {
                aligned("distance.times", t, &mut errs);
            }
            if d.subsample == 0 {
                errs.push("distance.subsample: must be >= 1".into());
            }
            if d.method == "exact-assignment" && d.subsample > EXACT_LIMIT {
                errs.push(format!(
                    "distance.subsample: exact assignment is limited to {EXACT_LIMIT} samples; subsample or use 'entropic'"
                ));
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errs))
        }
    }

    /// Observation times for the means, ascending.
    pub fn observation_times(&self) -> Vec<f64> {
        match &self.grid.observe_times {
            Some(ts) => {
                let mut ts = ts.clone();
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                ts
            }
            None => {
                let every = self.grid.observe_every;
                let count = (self.grid.horizon / every + 1e-9).floor() as usize;
                (0..=count).map(|i| i as f64 * every).collect()
            }
        }
    }

    pub fn ecdf_time(&self) -> f64 {
        self.functionals.ecdf_time.unwrap_or(self.grid.horizon)
    }

    pub fn distance_dt(&self) -> f64 {
        self.distance.dt.unwrap_or(self.grid.dt[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.observation_times().len(), 101);
        assert_eq!(c.observation_times()[100], 10.0);
    }

    #[test]
    fn every_problem_is_reported() {
        let mut c = RunConfig::default();
        c.model.nu = 0.5;
        c.grid.dt = vec![0.003];
        c.ensemble.samples = 0;
        c.initial.push(InitialSpec::new("xi1", "wobbly"));
        c.functionals.names.push("nope".into());
        c.distance.method = "sinkhornish".into();
        let errs = c.validate().unwrap_err();
        for key in ["model.nu", "grid.dt", "ensemble.samples", "duplicate", "wobbly", "functionals", "distance.method"] {
            assert!(errs.0.iter().any(|e| e.contains(key)), "{key} missing from {errs}");
        }
    }

    #[test]
    fn non_aligned_times_rejected() {
        let mut c = RunConfig::default();
        c.grid.horizon = 10.0005;
        c.grid.dt = vec![1e-3];
        assert!(c.validate().unwrap_err().0.iter().any(|e| e.contains("grid.horizon")));
    }

    #[test]
    fn steps_fold_into_horizon() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            steps: Some(2000),
            ..Overrides::default()
        });
        c.distance.times = vec![1.0, 2.0];
        c.validate().unwrap();
        assert_eq!((c.grid.horizon, c.grid.steps), (2.0, None));
        let mut c = RunConfig::default();
        c.grid.dt = vec![1e-3, 1e-4];
        c.grid.steps = Some(10);
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_precedence() {
        let text = "[ensemble]\nsamples = 10\nseed = 4\n\n[[initial]]\nname = \"a\"\nspec = \"constant:1,2\"\n";
        let mut c = RunConfig::from_toml(text).unwrap();
        assert_eq!((c.ensemble.samples, c.ensemble.seed), (10, 4));
        assert_eq!(c.initial, vec![InitialSpec::new("a", "constant:1,2")]);
        c.apply(&Overrides {
            seed: Some(9),
            ..Overrides::default()
        });
        assert_eq!((c.ensemble.samples, c.ensemble.seed), (10, 9));
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_toml("[ensemble]\nbogus = 1\n").is_err());
    }

    #[test]
    fn initial_flag() {
        assert_eq!(
            InitialSpec::parse_flag("xi3=constant:-3,4").unwrap(),
            InitialSpec::new("xi3", "constant:-3,4")
        );
        assert!(InitialSpec::parse_flag("constant:1").is_err());
    }
}
