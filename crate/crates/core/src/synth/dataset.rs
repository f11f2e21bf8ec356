//! Deterministic datasets: every sample is a pure function of `(config, index)`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::base::{base_image, BaseKind};
use super::forge::*;
use super::image::{Image, Mask};
use crate::error::{CoreError, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Relative task weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskMix {
    pub edd: f64,
    pub idd: f64,
    pub cstd: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        TaskMix { edd: 1.0, idd: 0.0, cstd: 0.0 }
    }
}

impl TaskMix {
    pub fn only(task: Task) -> Self {
        let mut m = TaskMix { edd: 0.0, idd: 0.0, cstd: 0.0 };
        match task {
            Task::Edd => m.edd = 1.0,
            Task::Idd => m.idd = 1.0,
            Task::Cstd => m.cstd = 1.0,
        }
        m
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Task {
        let u = rng.random_range(0.0..self.edd + self.idd + self.cstd);
        if u < self.edd {
            Task::Edd
        } else if u < self.edd + self.idd {
            Task::Idd
        } else {
            Task::Cstd
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    pub count: usize,
    pub seed: u64,
    /// Exactly `floor(count · pristine_fraction)` samples are pristine, spread evenly.
    pub pristine_fraction: f64,
    pub task_mix: TaskMix,
    pub base_kinds: Vec<BaseKind>,
    /// Use the identity augmentation (hard blend) for every paste.
    pub identity_spec: bool,
    pub augment: AugmentRanges,
    pub paste: PasteOptions,
    pub band_width: usize,
    pub split_axis: SplitAxis,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            count: 64,
            seed: 0,
            pristine_fraction: 0.25,
            task_mix: TaskMix::default(),
            base_kinds: BaseKind::ALL.to_vec(),
            identity_spec: false,
            augment: AugmentRanges::default(),
            paste: PasteOptions::default(),
            band_width: 3,
            split_axis: SplitAxis::Vertical,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.image_size < 8 {
            return bad(format!("image_size {} too small", self.image_size));
        }
        if !(0.0..=1.0).contains(&self.pristine_fraction) {
            return bad(format!("pristine_fraction {} outside [0, 1]", self.pristine_fraction));
        }
        let m = self.task_mix;
        if m.edd < 0.0 || m.idd < 0.0 || m.cstd < 0.0 || m.edd + m.idd + m.cstd <= 0.0 {
            return bad(format!("task mix {m:?} must be non-negative with positive total"));
        }
        if self.base_kinds.is_empty() {
            return bad("base_kinds is empty".into());
        }
        let p = self.paste;
        if !(0.0 < p.min_frac && p.min_frac <= p.max_frac && p.max_frac <= 1.0) {
            return bad(format!("paste fractions {p:?} invalid"));
        }
        if self.band_width == 0 || self.band_width * 2 + 4 > self.image_size {
            return bad(format!("band_width {} invalid for image size {}", self.band_width, self.image_size));
        }
        self.augment.validate()
    }

    pub fn is_pristine(&self, index: usize) -> bool {
        let f = self.pristine_fraction;
        ((index + 1) as f64 * f).floor() > (index as f64 * f).floor()
    }
}

/// Per-sample stream derived from `(seed, index)`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<ForgerySample> {
    let mut rng = sample_rng(cfg.seed, index as u64);
    let s = cfg.image_size;
    let task = cfg.task_mix.pick(&mut rng);
    let pristine = cfg.is_pristine(index);
    let kind = |rng: &mut ChaCha8Rng| cfg.base_kinds[rng.random_range(0..cfg.base_kinds.len())];
    let spec = if cfg.identity_spec { AugmentationSpec::identity() } else { AugmentationSpec::sample(&cfg.augment, &mut rng) };
    let (wide_h, wide_w) = match cfg.split_axis {
        SplitAxis::Vertical => (s, 2 * s),
        SplitAxis::Horizontal => (2 * s, s),
    };
    let (mut sample, kinds) = match task {
        Task::Edd => {
            let (k1, k2) = (kind(&mut rng), kind(&mut rng));
            let b1 = base_image(k1, s, s, &mut rng);
            let b2 = base_image(k2, s, s, &mut rng);
            let sample = if pristine { pristine_pair(&b1, &b2, task) } else { synth_edd(&b1, &b2, &spec, &cfg.paste, &mut rng)? };
            (sample, vec![k1, k2])
        }
        Task::Idd => {
            let k = kind(&mut rng);
            let b = base_image(k, wide_h, wide_w, &mut rng);
            let sample = if pristine { pristine_pseudo_pair(&b, task, cfg.split_axis)? } else { synth_idd_pseudo_pair(&b, &spec, &cfg.paste, cfg.split_axis, &mut rng)? };
            (sample, vec![k])
        }
        Task::Cstd => {
            let (k1, k2) = (kind(&mut rng), kind(&mut rng));
            let a = base_image(k1, s, 2 * s, &mut rng);
            if pristine {
                (pristine_pseudo_pair(&a, task, SplitAxis::Vertical)?, vec![k1])
            } else {
                let b = base_image(k2, s, 2 * s, &mut rng);
                (synth_cstd(&a, &b, cfg.band_width, &mut rng)?, vec![k1, k2])
            }
        }
    };
    sample.provenance.seed = cfg.seed;
    sample.provenance.index = index as u64;
    sample.provenance.kinds = kinds;
    Ok(sample)
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<ForgerySample>> {
    cfg.validate()?;
    (0..cfg.count).map(|i| generate_sample(cfg, i)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub img1: String,
    pub img2: String,
    pub mask1: String,
    pub mask2: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub count: usize,
    pub pristine: usize,
    pub manipulated: usize,
    pub config: SynthConfig,
    pub samples: Vec<ManifestEntry>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CoreError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e))
}

/// Writes `samples/` (PPM images, PGM masks), `manifest.json` and `config.json` under `dir`.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, samples: &[ForgerySample]) -> Result<Manifest> {
    let sample_dir = dir.join("samples");
    fs::create_dir_all(&sample_dir).map_err(|e| CoreError::io(&sample_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let stem = format!("{:05}", s.provenance.index);
        let names = [format!("samples/{stem}_img1.ppm"), format!("samples/{stem}_img2.ppm"), format!("samples/{stem}_mask1.pgm"), format!("samples/{stem}_mask2.pgm")];
        s.img1.write_pnm(&dir.join(&names[0]))?;
        s.img2.write_pnm(&dir.join(&names[1]))?;
        s.mask1.write_pgm(&dir.join(&names[2]))?;
        s.mask2.write_pgm(&dir.join(&names[3]))?;
        let [img1, img2, mask1, mask2] = names;
        entries.push(ManifestEntry {
            img1,
            img2,
            mask1,
            mask2,
            provenance: s.provenance.clone(),
        });
    }
    let pristine = samples.iter().filter(|s| s.provenance.pristine).count();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        count: samples.len(),
        pristine,
        manipulated: samples.len() - pristine,
        config: cfg.clone(),
        samples: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(manifest)
}

pub fn build_dataset(dir: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    let samples = generate(cfg)?;
    write_dataset(dir, cfg, &samples)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CoreError::VersionMismatch {
            found: manifest.version,
            expected: MANIFEST_VERSION,
        });
    }
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<ForgerySample>)> {
    let manifest = read_manifest(dir)?;
    let samples = manifest
        .samples
        .iter()
        .map(|e| {
            Ok(ForgerySample {
                img1: Image::read_pnm(&dir.join(&e.img1))?,
                img2: Image::read_pnm(&dir.join(&e.img2))?,
                mask1: Mask::read_pgm(&dir.join(&e.mask1))?,
                mask2: Mask::read_pgm(&dir.join(&e.mask2))?,
                provenance: e.provenance.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| CoreError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walked under root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 over every file under `dir` (relative path and contents, sorted by path).
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel)).map_err(|e| CoreError::io(dir.join(&rel), e))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
