//! Experiment configuration, named presets and the TOML file format.
//!
//! A configuration file has the sections `[data] [model] [training]
//! [weights] [pflp] [itw]`, plus either a top-level `preset = "..."` (for a
//! single run) or a `[grid]` table listing presets. Example:
//!
//! ```toml
//! preset = "itw2"
//!
//! [data]
//! n_total = 3386
//! seed = 7
//!
//! [training]
//! max_epochs = 60
//!
//! [itw]
//! patience_epochs = 8
//! ```
//!
//! A JSON run manifest written by the harness can be used wherever a
//! configuration file is accepted; it replays the resolved experiments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SplitSpec, SynthConfig, DEFAULT_PREVALENCE, TASK_COUNT};
use crate::error::{Error, Result};
use crate::loss::WeightVector;
use crate::model::{AdamHyper, ModelConfig};
use crate::scheduler::{ItwConfig, ItwMode, PflpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Single-task: auxiliary weights forced to zero, no focusing, no lock.
    Stl,
    Mtl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: u64,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to training features.
    pub feature_jitter: f64,
    /// Per-task positive-class weight inside the BCE; `None` means 1.
    pub pos_weight: Option<Vec<f64>>,
    /// Probability threshold used to binarize predictions for McNemar.
    pub threshold: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        TrainingConfig {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 4,
            max_epochs: 120,
            seed: 0,
            feature_jitter: 0.0,
            pos_weight: None,
            threshold: 0.5,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        if !(self.feature_jitter >= 0.0 && self.feature_jitter.is_finite()) {
            return Err(Error::Config("training.feature_jitter must be >= 0".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(
                "training.threshold must lie in (0, 1)".into(),
            ));
        }
        if let Some(p) = &self.pos_weight {
            if p.len() != TASK_COUNT || p.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(Error::Config(format!(
                    "training.pos_weight needs {TASK_COUNT} positive entries"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub split: SplitSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth(SynthConfig::default()),
            split: SplitSpec::default(),
        }
    }
}

/// One fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: TaskMode,
    pub base_weights: WeightVector,
    pub pflp: PflpConfig,
    pub itw: ItwConfig,
    pub training: TrainingConfig,
    pub data: DataConfig,
    /// `input_dim` is overwritten with the dataset's feature width at run time.
    pub model: ModelConfig,
}

impl ExperimentConfig {
    /// Preset with default data, model and training settings.
    pub fn from_preset(name: &str) -> Result<Self> {
        let preset = Preset::lookup(name)?;
        let mut cfg = ExperimentConfig {
            name: preset.name.to_string(),
            mode: preset.mode,
            base_weights: WeightVector::primary_and_aux(3.0, preset.aux_weight, TASK_COUNT)?,
            pflp: PflpConfig {
                enabled: preset.pflp,
                ..PflpConfig::default()
            },
            itw: if preset.itw {
                ItwConfig::auto()
            } else {
                ItwConfig::off()
            },
            training: TrainingConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
        };
        cfg.normalize();
        Ok(cfg)
    }

    /// Applies the single-task rule and syncs derived fields.
    pub fn normalize(&mut self) {
        if self.mode == TaskMode::Stl {
            let primary = self.base_weights.primary();
            self.base_weights =
                WeightVector::primary_and_aux(primary, 0.0, self.base_weights.len())
                    .expect("primary weight is positive");
            self.pflp = PflpConfig::disabled();
            self.itw = ItwConfig::off();
        }
        self.model.task_count = TASK_COUNT;
        if let DataSource::Synth(s) = &self.data.source {
            self.model.input_dim = s.feature_dim;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::Config(format!(
                "experiment name {:?} must be non-empty ASCII letters, digits, '-' or '_'",
                self.name
            )));
        }
        if self.base_weights.len() != TASK_COUNT {
            return Err(Error::Config(format!(
                "{} base weights given, {TASK_COUNT} tasks expected",
                self.base_weights.len()
            )));
        }
        self.pflp.validate(TASK_COUNT)?;
        self.itw.validate()?;
        self.training.validate()?;
        self.model.validate()?;
        if let DataSource::Synth(s) = &self.data.source {
            s.validate()?;
        }
        if self.mode == TaskMode::Stl
            && (self.pflp.enabled
                || self.itw.mode != ItwMode::Off
                || self.base_weights.as_slice()[1..].iter().any(|&w| w != 0.0))
        {
            return Err(Error::Config(
                "single-task experiments must have zero auxiliary weights and no schedule".into(),
            ));
        }
        Ok(())
    }

    /// Sets every seed (data, split, model, training) to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        if let DataSource::Synth(s) = &mut self.data.source {
            s.seed = seed;
            s.label_seed = None;
        }
        self.data.split.seed = seed;
        self.model.seed = seed;
        self.training.seed = seed;
    }
}

/// One row of the experiment table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub mode: TaskMode,
    /// Weight of each auxiliary task; the primary weight is always 3.
    pub aux_weight: f64,
    pub pflp: bool,
    pub itw: bool,
}

const fn mtl(name: &'static str, aux_weight: f64, pflp: bool, itw: bool) -> Preset {
    Preset {
        name,
        mode: TaskMode::Mtl,
        aux_weight,
        pflp,
        itw,
    }
}

pub const PRESETS: [Preset; 10] = [
    Preset {
        name: "stl",
        mode: TaskMode::Stl,
        aux_weight: 0.0,
        pflp: false,
        itw: false,
    },
    mtl("mtl", 3.0, false, false),
    mtl("mtl0", 0.01, true, false),
    mtl("mtl1", 0.1, true, false),
    mtl("mtl2", 1.0, true, false),
    mtl("mtl3", 3.0, true, false),
    mtl("mtl4", 6.0, true, false),
    mtl("itw1", 3.0, false, true),
    mtl("itw2", 1.0, true, true),
    mtl("itw3", 3.0, true, true),
];

impl Preset {
    pub fn lookup(name: &str) -> Result<Preset> {
        let lower = name.to_ascii_lowercase();
        PRESETS
            .iter()
            .find(|p| p.name == lower)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                Error::Config(format!(
                    "unknown preset {name:?}; available: {}",
                    names.join(", ")
                ))
            })
    }
}

// ---- file format --------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    name: Option<String>,
    preset: Option<String>,
    grid: Option<GridSection>,
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    training: TrainingConfig,
    weights: Option<WeightsSection>,
    pflp: Option<PflpSection>,
    itw: Option<ItwSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    experiments: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DataSection {
    csv: Option<PathBuf>,
    n_total: usize,
    cohort_b_fraction: f64,
    feature_dim: usize,
    shared_signal: f64,
    task_signal: f64,
    interference: f64,
    prevalence_targets: [f64; TASK_COUNT],
    label_noise: f64,
    seed: u64,
    label_seed: Option<u64>,
    train: usize,
    val: usize,
    test: usize,
    split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        let split = SplitSpec::default();
        DataSection {
            csv: None,
            n_total: s.n_total,
            cohort_b_fraction: s.cohort_b_fraction,
            feature_dim: s.feature_dim,
            shared_signal: s.shared_signal,
            task_signal: s.task_signal,
            interference: s.interference,
            prevalence_targets: DEFAULT_PREVALENCE,
            label_noise: s.label_noise,
            seed: s.seed,
            label_seed: s.label_seed,
            train: split.train,
            val: split.val,
            test: split.test,
            split_seed: split.seed,
        }
    }
}

impl DataSection {
    fn resolve(self, base_dir: &Path) -> DataConfig {
        let source = match self.csv {
            Some(path) => DataSource::Csv(if path.is_absolute() {
                path
            } else {
                base_dir.join(path)
            }),
            None => DataSource::Synth(SynthConfig {
                n_total: self.n_total,
                cohort_b_fraction: self.cohort_b_fraction,
                feature_dim: self.feature_dim,
                shared_signal: self.shared_signal,
                task_signal: self.task_signal,
                interference: self.interference,
                prevalence_targets: self.prevalence_targets,
                label_noise: self.label_noise,
                seed: self.seed,
                label_seed: self.label_seed,
            }),
        };
        DataConfig {
            source,
            split: SplitSpec {
                train: self.train,
                val: self.val,
                test: self.test,
                seed: self.split_seed,
            },
        }
    }

    fn synth(&self) -> SynthConfig {
        match self.clone().resolve(Path::new("")).source {
            DataSource::Synth(s) => s,
            DataSource::Csv(_) => SynthConfig::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    encoder_layers: Vec<usize>,
    head_layers: Vec<usize>,
    seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            encoder_layers: m.encoder_layers,
            head_layers: m.head_layers,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsSection {
    base: Option<Vec<f64>>,
    mode: Option<TaskMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PflpSection {
    enabled: Option<bool>,
    window_iterations: Option<u64>,
    damping_factor: Option<f64>,
    focus_order: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItwSection {
    mode: Option<ItwMode>,
    aux_weight: Option<f64>,
    patience_epochs: Option<u32>,
    min_delta: Option<f64>,
    fixed_epoch: Option<u64>,
}

impl PflpSection {
    fn apply(&self, pflp: &mut PflpConfig) {
        if let Some(v) = self.enabled {
            pflp.enabled = v;
        }
        if let Some(v) = self.window_iterations {
            pflp.window_iterations = v;
        }
        if let Some(v) = self.damping_factor {
            pflp.damping_factor = v;
        }
        if let Some(v) = &self.focus_order {
            pflp.focus_order = v.clone();
        }
    }
}

impl ItwSection {
    fn apply_parameters(&self, itw: &mut ItwConfig) {
        if let Some(v) = self.aux_weight {
            itw.aux_weight = v;
        }
        if let Some(v) = self.patience_epochs {
            itw.patience_epochs = v;
        }
        if let Some(v) = self.min_delta {
            itw.min_delta = v;
        }
    }
}

/// What a configuration file asks for.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum LoadedConfig {
    Single(ExperimentConfig),
    Grid(Vec<ExperimentConfig>),
}

impl LoadedConfig {
    pub fn into_experiments(self) -> Vec<ExperimentConfig> {
        match self {
            LoadedConfig::Single(c) => vec![c],
            LoadedConfig::Grid(v) => v,
        }
    }
}

/// Run manifest: the resolved experiments of a run or grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub experiments: Vec<ExperimentConfig>,
}

pub const MANIFEST_FORMAT: &str = "mtlw-manifest-1";

impl Manifest {
    pub fn new(experiments: Vec<ExperimentConfig>) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            experiments,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!(
                "unsupported manifest format {:?}",
                m.format
            )));
        }
        for e in &m.experiments {
            e.validate()?;
        }
        Ok(m)
    }
}

/// Loads a TOML configuration or a JSON manifest (by extension).
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    if path.extension().is_some_and(|e| e == "json") {
        let m = Manifest::from_json(&text)?;
        return Ok(if m.experiments.len() == 1 {
            LoadedConfig::Single(m.experiments.into_iter().next().unwrap())
        } else {
            LoadedConfig::Grid(m.experiments)
        });
    }
    parse_config(&text, base_dir)
}

/// Parses TOML configuration text; relative CSV paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<LoadedConfig> {
    let file: FileConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    let synth = file.data.synth();
    let data = file.data.clone().resolve(base_dir);
    let model = ModelConfig {
        input_dim: synth.feature_dim,
        encoder_layers: file.model.encoder_layers.clone(),
        head_layers: file.model.head_layers.clone(),
        task_count: TASK_COUNT,
        seed: file.model.seed,
    };
    let shared = |mut cfg: ExperimentConfig| {
        cfg.data = data.clone();
        cfg.model = model.clone();
        cfg.training = file.training.clone();
        cfg
    };

    if let Some(grid) = &file.grid {
        if file.preset.is_some() || file.name.is_some() {
            return Err(Error::Config(
                "`preset` and `name` cannot be combined with [grid]".into(),
            ));
        }
        if file.weights.is_some() {
            return Err(Error::Config(
                "[weights] cannot be used with [grid]; presets define the weights".into(),
            ));
        }
        if file.pflp.as_ref().is_some_and(|p| p.enabled.is_some()) {
            return Err(Error::Config(
                "pflp.enabled cannot be used with [grid]; presets decide".into(),
            ));
        }
        if file.itw.as_ref().is_some_and(|i| i.mode.is_some()) {
            return Err(Error::Config(
                "itw.mode cannot be used with [grid]; set itw.fixed_epoch to replay a fixed transition".into(),
            ));
        }
        if grid.experiments.is_empty() {
            return Err(Error::Config("[grid] lists no experiments".into()));
        }
        let mut out = Vec::with_capacity(grid.experiments.len());
        for name in &grid.experiments {
            let mut cfg = shared(ExperimentConfig::from_preset(name)?);
            if let Some(p) = &file.pflp {
                p.apply(&mut cfg.pflp);
            }
            if let Some(i) = &file.itw {
                if cfg.itw.mode != ItwMode::Off {
                    i.apply_parameters(&mut cfg.itw);
                    if let Some(e) = i.fixed_epoch {
                        cfg.itw.mode = ItwMode::FixedEpoch;
                        cfg.itw.fixed_epoch = Some(e);
                    }
                }
            }
            cfg.normalize();
            cfg.validate()?;
            out.push(cfg);
        }
        check_unique_names(&out)?;
        return Ok(LoadedConfig::Grid(out));
    }

    let mut cfg = match &file.preset {
        Some(p) => ExperimentConfig::from_preset(p)?,
        None => {
            let mut c = ExperimentConfig::from_preset("mtl3")?;
            c.name = "custom".into();
            c
        }
    };
    cfg = shared(cfg);
    if let Some(name) = &file.name {
        cfg.name = name.clone();
    }
    if let Some(w) = &file.weights {
        if let Some(base) = &w.base {
            cfg.base_weights = WeightVector::new(base.clone())?;
        }
        if let Some(mode) = w.mode {
            cfg.mode = mode;
        }
    }
    if let Some(p) = &file.pflp {
        p.apply(&mut cfg.pflp);
    }
    if let Some(i) = &file.itw {
        if let Some(mode) = i.mode {
            cfg.itw.mode = mode;
        }
        i.apply_parameters(&mut cfg.itw);
        if i.fixed_epoch.is_some() {
            cfg.itw.fixed_epoch = i.fixed_epoch;
        }
    }
    cfg.normalize();
    cfg.validate()?;
    Ok(LoadedConfig::Single(cfg))
}

pub(crate) fn check_unique_names(configs: &[ExperimentConfig]) -> Result<()> {
    let mut names: Vec<&str> = configs.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!(
            "experiment {:?} appears twice",
            w[0]
        )));
    }
    Ok(())
}

/// Default grid: every preset.
pub fn all_presets() -> Vec<ExperimentConfig> {
    PRESETS
        .iter()
        .map(|p| ExperimentConfig::from_preset(p.name).expect("built-in preset"))
        .collect()
}
