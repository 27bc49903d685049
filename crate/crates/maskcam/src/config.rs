//! Experiment configuration: flat INI files with `[section]` headers and
//! `key = value` lines.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use maskcam_core::attack::DEFAULT_ITERATIONS;
use maskcam_core::learn::{Architecture, EncoderMode, OptimizerKind, TrainConfig};
use maskcam_core::optics::{
    crop_aperture, rgb_channels, ColorFilter, MaskGeometry, OpticalSetup, PsfChannel, SimGrid, SENSOR_PIXEL_PITCH,
    SENSOR_SHAPE,
};
use maskcam_core::simcam::SceneConfig;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Problems with the configuration itself; reported with exit code 2.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Parsed `section.key → value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    values: BTreeMap<String, String>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: &str| ConfigError::Syntax {
                line: i + 1,
                message: message.to_string(),
            };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| syntax("unterminated section header"))?.trim();
                if name.is_empty() || name.contains(['.', '[', ']']) {
                    return Err(syntax("bad section name"));
                }
                section = name.to_ascii_lowercase();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(syntax("empty key"));
            }
            if section.is_empty() {
                return Err(syntax("key outside of any section"));
            }
            let full = format!("{section}.{key}");
            if values.insert(full.clone(), value.trim().to_string()).is_some() {
                return Err(syntax(&format!("duplicate key {full}")));
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Canonical text: sorted `section.key=value` lines.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpticsPreset {
    /// Programmable LCD (ST7735R) with per-sub-pixel weights.
    Lcd,
    /// Binary MLS coded aperture.
    CodedAperture,
}

impl fmt::Display for OpticsPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lcd => "st7735r",
            Self::CodedAperture => "coded-aperture",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticsConfig {
    pub preset: OpticsPreset,
    pub setup: OpticalSetup,
    /// Fraction of the sensor height the mask covers.
    pub crop: f64,
}

impl OpticsConfig {
    pub fn geometry(&self) -> MaskGeometry {
        crop_aperture(&MaskGeometry::st7735r(), self.crop).expect("validated crop")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dataset: PathBuf,
    pub scene: SceneConfig,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub iterations: usize,
    pub resolutions: Vec<(usize, usize)>,
    pub n_images: usize,
    pub decoy_seed: u64,
    pub object_height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub optics: OpticsConfig,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    ini: Ini,
}

const REQUIRED: &[&str] = &[
    "experiment.name",
    "optics.preset",
    "optics.d1",
    "optics.d2",
    "optics.grid",
    "sim.dataset",
    "sim.h_obj",
    "sim.downsample",
    "sim.snr_db",
    "sim.seed",
    "train.architecture",
    "train.mode",
    "train.epochs",
    "train.batch_size",
    "train.optimizer",
    "train.lr",
    "attack.iters",
    "attack.resolutions",
];

const OPTIONAL: &[&str] = &[
    "optics.wavelengths",
    "optics.crop",
    "sim.n_train",
    "sim.n_test",
    "train.lr_decay_every",
    "attack.n_images",
    "attack.decoy_seed",
    "attack.h_obj",
    "attack.tv",
];

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.ini.get(key).expect("presence checked")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.raw(key)
            .parse()
            .map_err(|_| invalid(key, format!("cannot parse {:?}", self.raw(key))))
    }

    fn positive(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.parse(key)?;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(invalid(key, "must be a positive number"))
        }
    }

    fn count(&self, key: &str) -> Result<usize, ConfigError> {
        let v: usize = self.parse(key)?;
        if v == 0 {
            return Err(invalid(key, "must be at least 1"));
        }
        Ok(v)
    }

    fn optional<T>(&self, key: &str, f: impl FnOnce(&Self) -> Result<T, ConfigError>) -> Result<Option<T>, ConfigError> {
        if self.ini.get(key).is_some() {
            f(self).map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Parses `ROWSxCOLS`.
pub fn parse_dims(text: &str) -> Option<(usize, usize)> {
    let (r, c) = text.trim().split_once(['x', 'X'])?;
    let dims = (r.trim().parse().ok()?, c.trim().parse().ok()?);
    (dims.0 > 0 && dims.1 > 0).then_some(dims)
}

/// Parses a comma-separated list of `ROWSxCOLS` resolutions.
pub fn parse_resolutions(text: &str) -> Option<Vec<(usize, usize)>> {
    let list: Option<Vec<_>> = text.split(',').filter(|s| !s.trim().is_empty()).map(parse_dims).collect();
    list.filter(|l| !l.is_empty())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_ini(Ini::parse(&text)?)?;
        if cfg.sim.dataset.is_relative() {
            if let Some(parent) = path.parent() {
                let candidate = parent.join(&cfg.sim.dataset);
                if !cfg.sim.dataset.exists() && candidate.exists() {
                    cfg.sim.dataset = candidate;
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_ini(Ini::parse(text)?)
    }

    /// Validates every field; all missing required keys are reported together.
    pub fn from_ini(ini: Ini) -> Result<Self, ConfigError> {
        let missing: Vec<String> = REQUIRED
            .iter()
            .filter(|k| ini.get(k).is_none())
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::MissingKeys(missing));
        }
        if let Some(unknown) = ini.keys().find(|k| !REQUIRED.contains(k) && !OPTIONAL.contains(k)) {
            return Err(invalid(unknown, "unknown key"));
        }
        let r = Reader { ini: &ini };

        let name = r.raw("experiment.name").to_string();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || name.starts_with('.') {
            return Err(invalid("experiment.name", "use letters, digits, '-', '_' or '.'"));
        }

        let preset = match r.raw("optics.preset") {
            "st7735r" => OpticsPreset::Lcd,
            "coded-aperture" => OpticsPreset::CodedAperture,
            other => return Err(invalid("optics.preset", format!("unknown preset {other:?} (st7735r, coded-aperture)"))),
        };
        let (rows, cols) = parse_dims(r.raw("optics.grid")).ok_or_else(|| invalid("optics.grid", "expected ROWSxCOLS"))?;
        let plane = (
            SENSOR_SHAPE.0 as f64 * SENSOR_PIXEL_PITCH,
            SENSOR_SHAPE.1 as f64 * SENSOR_PIXEL_PITCH,
        );
        let grid = SimGrid::covering(rows, cols, plane).map_err(|e| invalid("optics.grid", e.to_string()))?;
        let wavelengths = r.optional("optics.wavelengths", |r| {
            r.raw("optics.wavelengths")
                .split(',')
                .map(|w| match w.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
                    _ => Err(invalid("optics.wavelengths", format!("bad wavelength {w:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        let channels = match (preset, wavelengths) {
            (_, None) => rgb_channels(),
            (OpticsPreset::Lcd, Some(w)) => {
                if w.len() != 3 {
                    return Err(invalid("optics.wavelengths", "the LCD preset needs three wavelengths (R, G, B)"));
                }
                w.iter()
                    .zip(ColorFilter::ALL)
                    .map(|(&wavelength, f)| PsfChannel {
                        wavelength,
                        filter: Some(f),
                    })
                    .collect()
            }
            (OpticsPreset::CodedAperture, Some(w)) => w
                .iter()
                .map(|&wavelength| PsfChannel {
                    wavelength,
                    filter: None,
                })
                .collect(),
        };
        let setup = OpticalSetup {
            d1: r.positive("optics.d1")?,
            d2: r.positive("optics.d2")?,
            grid,
            channels,
        };
        setup.validate().map_err(|e| invalid("optics", e.to_string()))?;
        let crop = r.optional("optics.crop", |r| r.positive("optics.crop"))?.unwrap_or(0.8);
        if crop > 1.0 {
            return Err(invalid("optics.crop", "must not exceed 1"));
        }
        let optics = OpticsConfig { preset, setup, crop };
        if preset == OpticsPreset::Lcd {
            let geometry = crop_aperture(&MaskGeometry::st7735r(), crop).map_err(|e| invalid("optics.crop", e.to_string()))?;
            maskcam_core::optics::MaskLayout::new(&geometry, &optics.setup.grid)
                .map_err(|e| invalid("optics.grid", e.to_string()))?;
        }

        let scene = SceneConfig {
            object_height: r.positive("sim.h_obj")?,
            d1: optics.setup.d1,
            d2: optics.setup.d2,
            downsample: r.count("sim.downsample")?,
            target_snr_db: {
                let v: f64 = r.parse("sim.snr_db")?;
                if v.is_nan() || v == f64::NEG_INFINITY {
                    return Err(invalid("sim.snr_db", "must be a number or inf"));
                }
                v
            },
            shift: (0.0, 0.0),
        };
        scene
            .validate(optics.setup.grid.plane_size().0)
            .map_err(|e| invalid("sim.h_obj", e.to_string()))?;
        maskcam_core::simcam::downsampled_dims(optics.setup.grid.shape(), scene.downsample)
            .map_err(|e| invalid("sim.downsample", e.to_string()))?;
        let sim = SimConfig {
            dataset: PathBuf::from(r.raw("sim.dataset")),
            scene,
            seed: r.parse("sim.seed")?,
            n_train: r.optional("sim.n_train", |r| r.count("sim.n_train"))?.unwrap_or(10_000),
            n_test: r.optional("sim.n_test", |r| r.count("sim.n_test"))?.unwrap_or(2_000),
        };

        let architecture = Architecture::from_tag(r.raw("train.architecture")).map_err(|e| invalid("train.architecture", e.to_string()))?;
        let mode = match r.raw("train.mode") {
            "fixed" => EncoderMode::Fixed,
            "learned" => EncoderMode::Learned,
            other => return Err(invalid("train.mode", format!("unknown mode {other:?} (fixed, learned)"))),
        };
        if mode == EncoderMode::Learned && preset != OpticsPreset::Lcd {
            return Err(invalid("train.mode", "learned masks need the st7735r preset"));
        }
        let mut train = TrainConfig::new(architecture, mode, r.count("train.epochs")?, r.count("train.batch_size")?);
        train.optimizer = OptimizerKind::from_tag(r.raw("train.optimizer")).map_err(|e| invalid("train.optimizer", e.to_string()))?;
        train.lr = r.parse("train.lr")?;
        train.lr_decay_every = r.optional("train.lr_decay_every", |r| r.count("train.lr_decay_every"))?;
        train.seed = sim.seed;
        train.validate().map_err(|e| invalid("train", e.to_string()))?;

        let resolutions = parse_resolutions(r.raw("attack.resolutions"))
            .ok_or_else(|| invalid("attack.resolutions", "expected a list like 24x32,48x64"))?;
        for &res in &resolutions {
            maskcam_core::attack::downsample_for_resolution(optics.setup.grid.shape(), res)
                .map_err(|e| invalid("attack.resolutions", e.to_string()))?;
        }
        if let Some(tv) = ini.get("attack.tv") {
            if !matches!(tv, "off" | "false" | "0") {
                return Err(invalid("attack.tv", "total-variation regularization is not available"));
            }
        }
        let attack = AttackConfig {
            iterations: r.count("attack.iters")?,
            resolutions,
            n_images: r.optional("attack.n_images", |r| r.count("attack.n_images"))?.unwrap_or(10),
            decoy_seed: r.optional("attack.decoy_seed", |r| r.parse("attack.decoy_seed"))?.unwrap_or(1),
            object_height: r.optional("attack.h_obj", |r| r.positive("attack.h_obj"))?.unwrap_or(sim.scene.object_height),
        };
        SceneConfig {
            object_height: attack.object_height,
            ..sim.scene.clone()
        }
        .validate(optics.setup.grid.plane_size().0)
        .map_err(|e| invalid("attack.h_obj", e.to_string()))?;

        Ok(Self {
            name,
            optics,
            sim,
            train,
            attack,
            ini,
        })
    }

    /// Replaces the root seed, keeping the stored text in sync.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.seed = seed;
        self.train.seed = seed;
        self.ini.set("sim.seed", seed.to_string());
        self
    }

    pub fn ini(&self) -> &Ini {
        &self.ini
    }

    /// Hex digest of the canonical configuration text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.ini.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Scene used by the attack: the simulation scene with the attack object height.
    pub fn attack_scene(&self) -> SceneConfig {
        SceneConfig {
            object_height: self.attack.object_height,
            ..self.sim.scene.clone()
        }
    }
}

/// Desk-scale MNIST experiment with the LCD mask.
pub fn mnist_desk_template(name: &str, dataset: &Path) -> String {
    format!(
        "[experiment]\nname = {name}\n\n\
         [optics]\npreset = st7735r\nd1 = 0.40\nd2 = 0.004\ngrid = 96x128\ncrop = 0.8\n\n\
         [sim]\ndataset = {}\nh_obj = 0.12\ndownsample = 4\nsnr_db = 40\nseed = 0\nn_train = 10000\nn_test = 2000\n\n\
         [train]\narchitecture = lr\nmode = fixed\nepochs = 20\nbatch_size = 64\noptimizer = adam\nlr = 0.001\n\n\
         [attack]\niters = {DEFAULT_ITERATIONS}\nresolutions = 24x32,48x64,96x128\nn_images = 10\ndecoy_seed = 1\nh_obj = 0.25\n",
        dataset.display()
    )
}
