//! Subcommand implementations over an experiment directory
//! `out/<name>/{psf,embeddings,checkpoints,attack,manifest.txt}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use maskcam_core::attack::{
    attack_report, attack_rows_csv, decoy_psf, downsample_for_resolution, psnr, ssim, AttackSettings,
};
use maskcam_core::dataset::{LabeledDataset, Split};
use maskcam_core::learn::{
    train_fixed, train_learned, EncoderMode, EpochMetrics, FeatureSet, LearnedEncoder,
};
use maskcam_core::optics::{
    coded_aperture_amplitude, generate_mls_coded_aperture, simulate_psf_from_amplitude, IntensityPsf, MaskWeights,
    PsfSimulator,
};
use maskcam_core::simcam::SensorSimulator;
use maskcam_core::{Rng, Tensor};
use ndarray::{Array2, Array3, Array4, Axis};

use crate::config::{ConfigError, ExperimentConfig, OpticsPreset};
use crate::io::{
    load_mnist, load_psf, normalize_peak, read_png, read_tensor, save_checkpoint, save_psf, write_atomic,
    write_png, write_png_gray, write_tensor,
};

pub const SUBDIRS: [&str; 4] = ["psf", "embeddings", "checkpoints", "attack"];
const LOCK_FILE: &str = ".lock";

/// Exclusive handle on an experiment directory; the lockfile is removed on drop.
#[derive(Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
    lock: PathBuf,
}

impl Experiment {
    /// Creates the directory layout under `out_root/<name>` and takes the lock.
    pub fn open(cfg: ExperimentConfig, out_root: &Path) -> Result<Self> {
        let root = out_root.join(&cfg.name);
        for sub in SUBDIRS {
            fs::create_dir_all(root.join(sub)).with_context(|| format!("creating {}", root.join(sub).display()))?;
        }
        let lock = root.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .with_context(|| format!("{} is in use by another run (remove {} if stale)", root.display(), lock.display()))?;
        Ok(Self { cfg, root, lock })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).display().to_string()
    }

    /// Records this command's artifacts and timing in `manifest.txt`, keeping
    /// entries of other commands that ran with the same configuration.
    pub fn record(&self, command: &str, artifacts: &[PathBuf], seconds: f64) -> Result<()> {
        let path = self.path("manifest.txt");
        let hash = self.cfg.hash();
        let mut sections: BTreeMap<String, Vec<String>> = BTreeMap::new();
        if let Ok(text) = fs::read_to_string(&path) {
            if text.lines().any(|l| l == format!("config_hash={hash}")) {
                let mut current: Option<String> = None;
                for line in text.lines() {
                    if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                        current = Some(name.to_string());
                        sections.entry(name.to_string()).or_default();
                    } else if let Some(name) = &current {
                        sections.get_mut(name).expect("section").push(line.to_string());
                    }
                }
            }
        }
        let mut body = vec![format!("seconds={seconds:.3}")];
        body.extend(artifacts.iter().map(|a| format!("artifact={}", self.relative(a))));
        sections.insert(command.to_string(), body);
        let mut out = format!(
            "config_hash={hash}\ntool_version={}\nseed={}\n",
            env!("CARGO_PKG_VERSION"),
            self.cfg.sim.seed
        );
        for (name, lines) in &sections {
            let _ = writeln!(out, "[{name}]");
            for l in lines.iter().filter(|l| !l.is_empty()) {
                let _ = writeln!(out, "{l}");
            }
        }
        write_atomic(&path, out.as_bytes())
    }
}

impl Drop for Experiment {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Checks inputs a command will need, before any output is created.
pub fn preflight(cfg: &ExperimentConfig, needs_dataset: bool) -> std::result::Result<(), ConfigError> {
    if needs_dataset && !cfg.sim.dataset.is_dir() {
        return Err(ConfigError::Invalid {
            key: "sim.dataset".into(),
            message: format!("{} is not a directory", cfg.sim.dataset.display()),
        });
    }
    Ok(())
}

/// Mask weights of the fixed random mask, drawn from the root seed.
pub fn fixed_mask(sim: &PsfSimulator, seed: u64) -> MaskWeights {
    MaskWeights::uniform(&mut Rng::for_stage(seed, "mask-init"), sim.num_weights())
}

fn lcd_simulator(cfg: &ExperimentConfig) -> Result<PsfSimulator> {
    Ok(PsfSimulator::new(&cfg.optics.geometry(), &cfg.optics.setup)?)
}

fn weights_tensor(w: &MaskWeights) -> Tensor {
    Tensor::new(&[w.len()], w.as_slice().to_vec()).expect("1-D weights")
}

fn psf_preview(psf: &IntensityPsf) -> Array3<f64> {
    let v = normalize_peak(psf.values());
    if v.dim().0 == 3 {
        v
    } else {
        normalize_peak(&psf.grayscale().insert_axis(Axis(0)))
    }
}

/// Simulates the configured PSF; returns the written files.
pub fn simulate_psf(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let cfg = &exp.cfg;
    let mut written = Vec::new();
    let psf = match cfg.optics.preset {
        OpticsPreset::Lcd => {
            let sim = lcd_simulator(cfg)?;
            let weights = fixed_mask(&sim, cfg.sim.seed);
            let w_path = exp.path("psf/weights.tensor");
            write_tensor(&w_path, &weights_tensor(&weights))?;
            written.push(w_path);
            let mask_path = exp.path("psf/mask.png");
            write_png_gray(&mask_path, &sim.layout().amplitude(&weights, None))?;
            written.push(mask_path);
            sim.simulate(&weights)?
        }
        OpticsPreset::CodedAperture => {
            let pattern = generate_mls_coded_aperture();
            let p_path = exp.path("psf/mls.tensor");
            let (r, c) = pattern.dim();
            write_tensor(&p_path, &Tensor::new(&[r, c], pattern.iter().map(|&b| b as f64).collect())?)?;
            written.push(p_path);
            let amplitude = coded_aperture_amplitude(&pattern, &cfg.optics.setup.grid, cfg.optics.crop)?;
            let mask_path = exp.path("psf/mask.png");
            write_png_gray(&mask_path, &amplitude)?;
            written.push(mask_path);
            simulate_psf_from_amplitude(&amplitude, &cfg.optics.setup, "mls63")?
        }
    };
    let psf_path = exp.path("psf/psf.tensor");
    save_psf(&psf_path, &psf)?;
    let png = exp.path("psf/psf.png");
    write_png(&png, &psf_preview(&psf))?;
    written.extend([psf_path.with_extension("meta"), psf_path, png]);
    Ok(written)
}

fn stored_psf(exp: &Experiment) -> Result<IntensityPsf> {
    let path = exp.path("psf/psf.tensor");
    if !path.exists() {
        bail!("{} not found; run simulate-psf first", path.display());
    }
    load_psf(&path)
}

/// The configured number of training and test images.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_mnist(&cfg.sim.dataset, Split::Train)?;
    let test = load_mnist(&cfg.sim.dataset, Split::Test)?;
    for (name, ds, n) in [("n_train", &train, cfg.sim.n_train), ("n_test", &test, cfg.sim.n_test)] {
        if ds.len() < n {
            bail!("sim.{name} = {n} but the dataset has only {} images", ds.len());
        }
    }
    Ok((train.take(cfg.sim.n_train), test.take(cfg.sim.n_test)))
}

fn stack(embeddings: &[Array3<f64>]) -> Array4<f64> {
    let (c, h, w) = embeddings[0].dim();
    let mut out = Array4::zeros((embeddings.len(), c, h, w));
    for (mut slot, e) in out.outer_iter_mut().zip(embeddings) {
        slot.assign(e);
    }
    out
}

/// Simulates sensor embeddings for both splits and writes an item index.
pub fn simulate_dataset(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let cfg = &exp.cfg;
    let psf = stored_psf(exp)?;
    let (train, test) = load_splits(cfg)?;
    let sensor = SensorSimulator::new(&psf, &cfg.sim.scene, true)?;
    let mut index = String::from("index,label,file,seed\n");
    let mut written = Vec::new();
    for (name, ds, stage) in [("train", &train, "train-noise"), ("test", &test, "test-noise")] {
        let images: Vec<Array3<f64>> = (0..ds.len()).map(|i| ds.image_f64(i)).collect();
        let emb = sensor.simulate_batch(&images, &Rng::for_stage(cfg.sim.seed, stage))?;
        let values: Vec<Array3<f64>> = emb.into_iter().map(|e| e.values).collect();
        let file = format!("{name}.tensor");
        let path = exp.path(&format!("embeddings/{file}"));
        write_tensor(&path, &Tensor::from_array(stack(&values).into_dyn())?.to_f32())?;
        written.push(path);
        for (i, label) in ds.labels().iter().enumerate() {
            let _ = writeln!(index, "{i},{label},{file},{}", cfg.sim.seed);
        }
    }
    let idx_path = exp.path("embeddings/index.csv");
    write_atomic(&idx_path, index.as_bytes())?;
    written.push(idx_path);
    Ok(written)
}

fn read_split(exp: &Experiment, name: &str) -> Result<FeatureSet> {
    let path = exp.path(&format!("embeddings/{name}.tensor"));
    if !path.exists() {
        bail!("{} not found; run simulate-dataset first", path.display());
    }
    let t = read_tensor(&path)?;
    let n = t.shape()[0];
    let dim = t.len() / n.max(1);
    let features = Array2::from_shape_vec((n, dim), t.values().collect())?;
    let file = format!("{name}.tensor");
    let text = fs::read_to_string(exp.path("embeddings/index.csv"))?;
    let mut labels = vec![None; n];
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() == 4 && cols[2] == file {
            let i: usize = cols[0].parse()?;
            *labels.get_mut(i).context("index row out of range")? = Some(cols[1].parse::<usize>()?);
        }
    }
    let labels = labels
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .with_context(|| format!("index.csv lacks labels for some rows of {file}"))?;
    Ok(FeatureSet::new(features, labels)?)
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_acc,test_acc,loss\n");
    for m in history {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", m.epoch, m.train_acc, m.test_acc, m.loss);
    }
    out
}

/// Trains the classifier (and, in learned mode, the mask).
pub fn train(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let cfg = &exp.cfg;
    let ckpt = exp.path("checkpoints/classifier.ckpt");
    let mut written = Vec::new();
    let history = match cfg.train.mode {
        EncoderMode::Fixed => {
            let train_set = read_split(exp, "train")?;
            let test_set = read_split(exp, "test")?;
            let out = train_fixed(&cfg.train, &train_set, &test_set, 10)?;
            let mut arrays = out.classifier.named_arrays();
            let n = out.standardizer.features();
            arrays.push(("input.mean".into(), vec![n], out.standardizer.mean.to_vec()));
            arrays.push(("input.std".into(), vec![n], out.standardizer.std.to_vec()));
            save_checkpoint(&ckpt, &arrays)?;
            out.history
        }
        EncoderMode::Learned => {
            let (train_ds, test_ds) = load_splits(cfg)?;
            let encoder = LearnedEncoder::new(&cfg.optics.geometry(), &cfg.optics.setup, &cfg.sim.scene)?;
            let out = train_learned(&cfg.train, &encoder, &train_ds, &test_ds)?;
            let mut arrays = out.classifier.named_arrays();
            let bn = &out.embedding_norm;
            let n = bn.gamma.len();
            for (name, v) in [
                ("embedding_bn.gamma", &bn.gamma),
                ("embedding_bn.beta", &bn.beta),
                ("embedding_bn.running_mean", &bn.running_mean),
                ("embedding_bn.running_var", &bn.running_var),
            ] {
                arrays.push((name.into(), vec![n], v.to_vec()));
            }
            arrays.push(("mask.weights".into(), vec![out.weights.len()], out.weights.as_slice().to_vec()));
            save_checkpoint(&ckpt, &arrays)?;
            let w_path = exp.path("checkpoints/learned_weights.tensor");
            write_tensor(&w_path, &weights_tensor(&out.weights))?;
            let psf_path = exp.path("checkpoints/learned_psf.tensor");
            let psf = encoder.simulator().simulate(&out.weights)?;
            save_psf(&psf_path, &psf)?;
            let png = exp.path("checkpoints/learned_psf.png");
            write_png(&png, &psf_preview(&psf))?;
            written.extend([w_path, psf_path, png]);
            out.history
        }
    };
    let csv = exp.path("checkpoints/metrics.csv");
    write_atomic(&csv, metrics_csv(&history).as_bytes())?;
    written.extend([ckpt, csv]);
    Ok(written)
}

/// Where the attacker's wrong PSF comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DecoySource {
    Seed(u64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOptions {
    pub decoy: DecoySource,
    pub resolutions: Vec<(usize, usize)>,
    pub iterations: usize,
}

impl AttackOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            decoy: DecoySource::Seed(cfg.attack.decoy_seed),
            resolutions: cfg.attack.resolutions.clone(),
            iterations: cfg.attack.iterations,
        }
    }
}

/// Good/decoy PSF recovery over the configured resolutions.
pub fn attack(exp: &Experiment, opts: &AttackOptions) -> Result<Vec<PathBuf>> {
    let cfg = &exp.cfg;
    let psf = stored_psf(exp)?;
    let dims = psf.dims();
    let downsamples = opts
        .resolutions
        .iter()
        .map(|&r| downsample_for_resolution(dims, r))
        .collect::<maskcam_core::Result<Vec<_>>>()?;
    let decoy = match &opts.decoy {
        DecoySource::File(path) => {
            let d = load_psf(path)?;
            if d.dims() != dims {
                bail!("decoy PSF {} is {:?}, expected {:?}", path.display(), d.dims(), dims);
            }
            d.grayscale()
        }
        DecoySource::Seed(seed) => match cfg.optics.preset {
            OpticsPreset::Lcd => decoy_psf(&lcd_simulator(cfg)?, *seed)?,
            OpticsPreset::CodedAperture => bail!("the coded-aperture preset has no mask weights to re-randomize; pass --psf"),
        },
    };
    let test = load_mnist(&cfg.sim.dataset, Split::Test)?;
    if test.len() < cfg.attack.n_images {
        bail!("attack.n_images = {} exceeds the test split", cfg.attack.n_images);
    }
    let images: Vec<Array2<f64>> = (0..cfg.attack.n_images)
        .map(|i| test.image_f64(i).index_axis_move(Axis(0), 0))
        .collect();
    let settings = AttackSettings {
        scene: cfg.attack_scene(),
        downsamples,
        iterations: opts.iterations,
        seed: cfg.sim.seed,
    };
    let report = attack_report(&images, &psf, &decoy, &settings)?;
    let csv = exp.path("attack/attack.csv");
    write_atomic(&csv, attack_rows_csv(&report.rows).as_bytes())?;
    let mut written = vec![csv];
    let per_res = images.len();
    for (k, case) in report.cases.iter().enumerate() {
        let (h, w) = maskcam_core::simcam::downsampled_dims(dims, case.downsample)?;
        let i = k % per_res;
        for (tag, img) in [("truth", &case.truth), ("good", &case.good), ("bad", &case.bad)] {
            let p = exp.path(&format!("attack/gallery/{h}x{w}/{i:03}_{tag}.png"));
            write_png_gray(&p, &img.mapv(|v| v.clamp(0.0, 1.0)))?;
            written.push(p);
        }
    }
    Ok(written)
}

fn png_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn gray(img: &Array3<f64>) -> Array2<f64> {
    img.mean_axis(Axis(0)).expect("at least one channel")
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// PSNR/SSIM between same-named PNGs in two directories, plus a mean row.
pub fn metrics(a_dir: &Path, b_dir: &Path) -> Result<String> {
    let names = png_files(a_dir)?;
    let mut out = String::from("file,psnr,ssim\n");
    let (mut p_sum, mut s_sum, mut n) = (0.0, 0.0, 0usize);
    for name in names {
        let b_path = b_dir.join(&name);
        if !b_path.exists() {
            log::warn!("{} has no counterpart in {}", name, b_dir.display());
            continue;
        }
        let a = gray(&read_png(&a_dir.join(&name))?);
        let b = gray(&read_png(&b_path)?);
        let p = psnr(&a, &b, 1.0)?;
        let s = ssim(&a, &b)?;
        let _ = writeln!(out, "{name},{},{s:.6}", fmt_db(p));
        p_sum += p;
        s_sum += s;
        n += 1;
    }
    if n == 0 {
        bail!("no matching PNG files in {} and {}", a_dir.display(), b_dir.display());
    }
    let _ = writeln!(out, "mean,{},{:.6}", fmt_db(p_sum / n as f64), s_sum / n as f64);
    Ok(out)
}

pub fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}
