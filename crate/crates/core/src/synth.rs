//! Procedural stick-figure images with known part-level latents.
//!
//! A figure is a filled torso rectangle, optionally with a head disc above it
//! and two leg bars below it. Background images carry only clutter, with
//! clutter area matched to the area of a figure drawn from the same
//! geometry distribution so that mean intensity does not give the class away.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::SeedStream;
use crate::tensor::Tensor;

pub const BACKGROUND: usize = 0;
pub const FIGURE: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub figure_probability: f64,
    pub head_probability: f64,
    pub legs_probability: f64,
    /// Inclusive torso width range in pixels.
    pub torso_width: [usize; 2],
    /// Inclusive torso height range in pixels.
    pub torso_height: [usize; 2],
    pub head_radius: usize,
    pub leg_length: usize,
    /// Inclusive range of clutter items present in every image.
    pub clutter_items: [usize; 2],
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            train_count: 2000,
            test_count: 500,
            figure_probability: 0.5,
            head_probability: 0.6,
            legs_probability: 0.6,
            torso_width: [6, 9],
            torso_height: [8, 11],
            head_radius: 3,
            leg_length: 6,
            clutter_items: [2, 5],
            noise_std: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidArgument(format!(
                "image size {}×{} below the 16×16 minimum",
                self.height, self.width
            )));
        }
        let p = self.figure_probability;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("figure probability {p} not in (0, 1)")));
        }
        for (name, q) in [("head", self.head_probability), ("legs", self.legs_probability)] {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidArgument(format!("{name} probability {q} not in [0, 1]")));
            }
        }
        if self.torso_width[0] == 0 || self.torso_width[0] > self.torso_width[1] {
            return Err(Error::InvalidArgument("torso width range is empty".into()));
        }
        if self.torso_height[0] == 0 || self.torso_height[0] > self.torso_height[1] {
            return Err(Error::InvalidArgument("torso height range is empty".into()));
        }
        if self.clutter_items[0] > self.clutter_items[1] {
            return Err(Error::InvalidArgument("clutter range is empty".into()));
        }
        let tall = 2 * self.head_radius + 1 + self.torso_height[1] + self.leg_length;
        let wide = self.torso_width[1].max(2 * self.head_radius + 1);
        if tall > self.height || wide > self.width {
            return Err(Error::InvalidArgument(format!(
                "figure parts ({wide}×{tall}) do not fit the {}×{} canvas",
                self.width, self.height
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise std must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.train_count + self.test_count
    }
}

/// Generative parameters of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub torso: bool,
    pub head: bool,
    pub legs: bool,
    /// Top-left corner of the torso (or of the phantom figure for background).
    pub torso_x: usize,
    pub torso_y: usize,
    pub torso_w: usize,
    pub torso_h: usize,
    pub intensity: f64,
    pub background_level: f64,
    pub clutter_items: usize,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub id: usize,
    /// `1×H×W`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub latents: Latents,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub instances: Vec<SynthInstance>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn train_instances(&self) -> impl Iterator<Item = &SynthInstance> {
        self.train.iter().map(|&i| &self.instances[i])
    }

    pub fn test_instances(&self) -> impl Iterator<Item = &SynthInstance> {
        self.test.iter().map(|&i| &self.instances[i])
    }
}

/// Generates `config.count()` instances; the first `train_count` form the
/// training split. Each instance depends only on `(seed, index)`.
pub fn generate_dataset(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let streams = SeedStream::new(seed).child("synth");
    let instances = (0..config.count())
        .map(|id| generate_instance(config, &streams, id))
        .collect();
    Ok(Dataset {
        config: config.clone(),
        seed,
        instances,
        train: (0..config.train_count).collect(),
        test: (config.train_count..config.count()).collect(),
    })
}

fn generate_instance(config: &SynthConfig, streams: &SeedStream, id: usize) -> SynthInstance {
    let mut rng = streams.rng_at("instance", &[id as u64]);
    let figure = rng.random_bool(config.figure_probability);
    let head = figure && rng.random_bool(config.head_probability);
    let legs = figure && rng.random_bool(config.legs_probability);
    let torso_w = rng.random_range(config.torso_width[0]..=config.torso_width[1]);
    let torso_h = rng.random_range(config.torso_height[0]..=config.torso_height[1]);
    let r = config.head_radius;
    let top_room = 2 * r + 1;
    // keep the head disc inside the canvas
    let centre = (torso_w as f64 - 1.0) / 2.0;
    let x_lo = (r as f64 - centre).ceil().max(0.0) as usize;
    let x_hi = (config.width - torso_w).min((config.width as f64 - 1.0 - r as f64 - centre).floor() as usize);
    let torso_x = rng.random_range(x_lo..=x_hi.max(x_lo));
    let torso_y = rng.random_range(top_room..=config.height - torso_h - config.leg_length);
    let latents = Latents {
        torso: figure,
        head,
        legs,
        torso_x,
        torso_y,
        torso_w,
        torso_h,
        intensity: rng.random_range(0.6..1.0),
        background_level: rng.random_range(0.0..0.2),
        clutter_items: rng.random_range(config.clutter_items[0]..=config.clutter_items[1]),
        noise_seed: rng.random(),
    };
    let image = render(config, &latents);
    SynthInstance {
        id,
        image,
        label: if figure { FIGURE } else { BACKGROUND },
        latents,
    }
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize, v: f64) -> usize {
        let mut area = 0;
        for yy in y..(y + h).min(self.h) {
            for xx in x..(x + w).min(self.w) {
                self.px[yy * self.w + xx] = v;
                area += 1;
            }
        }
        area
    }

    fn fill_disc(&mut self, cx: f64, cy: f64, r: f64, v: f64) -> usize {
        let mut area = 0;
        for yy in 0..self.h {
            for xx in 0..self.w {
                let (dx, dy) = (xx as f64 - cx, yy as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.px[yy * self.w + xx] = v;
                    area += 1;
                }
            }
        }
        area
    }
}

/// Deterministic rendering of `latents`; clutter placement and pixel noise
/// are driven by `latents.noise_seed`.
pub fn render(config: &SynthConfig, latents: &Latents) -> Tensor {
    let (h, w) = (config.height, config.width);
    let mut canvas = Canvas {
        h,
        w,
        px: vec![latents.background_level; h * w],
    };
    let mut rng = SeedStream::new(latents.noise_seed).rng("render");
    let v = latents.intensity;
    let (tx, ty, tw, th) = (latents.torso_x, latents.torso_y, latents.torso_w, latents.torso_h);
    let r = config.head_radius as f64;
    let head_area = std::f64::consts::PI * r * r;
    let leg_area = 2 * 2 * config.leg_length;

    let mut clutter_budget = 0.0;
    if latents.torso {
        canvas.fill_rect(tx, ty, tw, th, v);
        if latents.head {
            canvas.fill_disc(tx as f64 + (tw as f64 - 1.0) / 2.0, ty as f64 - r - 0.5, r, v);
        }
        if latents.legs {
            let leg_w = 2.min(tw / 2);
            canvas.fill_rect(tx, ty + th, leg_w, config.leg_length, v);
            canvas.fill_rect(tx + tw - leg_w, ty + th, leg_w, config.leg_length, v);
        }
    } else {
        // phantom figure: clutter covers as much area as the figure would have
        clutter_budget = (tw * th) as f64
            + config.head_probability * head_area
            + config.legs_probability * leg_area as f64;
    }

    let mut items = 0;
    let mut covered = 0.0;
    while items < latents.clutter_items || covered < clutter_budget {
        let size = rng.random_range(2..=3usize);
        let horizontal_bar = rng.random_bool(0.5);
        let (cw, ch) = if horizontal_bar { (size + 2, 1) } else { (size, size) };
        let x = rng.random_range(0..w - cw);
        let y = rng.random_range(0..h - ch);
        let iv = rng.random_range(0.4..0.9);
        let area = canvas.fill_rect(x, y, cw, ch, iv);
        if items >= latents.clutter_items {
            covered += area as f64;
        }
        items += 1;
    }

    if config.noise_std > 0.0 {
        let noise = Normal::new(0.0, config.noise_std).expect("finite std");
        for p in &mut canvas.px {
            *p += noise.sample(&mut rng);
        }
    }
    let data = canvas
        .px
        .into_iter()
        .map(|p| f64::from(p.clamp(0.0, 1.0) as f32))
        .collect();
    Tensor::new(vec![1, h, w], data).expect("canvas shape")
}

const DATASET_FORMAT: &str = "conceptcause-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub config: SynthConfig,
    pub seed: u64,
    pub count: usize,
    pub image_shape: Vec<usize>,
    pub images_file: String,
    pub latents_file: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LatentRecord {
    id: usize,
    label: usize,
    latents: Latents,
}

/// Writes `manifest.json`, `images.f32` (row-major little-endian `f32`,
/// instance-major) and `latents.jsonl` into `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    io::ensure_dir(dir)?;
    let shape = vec![1, dataset.config.height, dataset.config.width];
    let mut blob = Vec::with_capacity(dataset.instances.len() * shape.iter().product::<usize>() * 4);
    let mut lines = String::new();
    for inst in &dataset.instances {
        blob.extend(io::f32_le_bytes(inst.image.data()));
        let rec = LatentRecord {
            id: inst.id,
            label: inst.label,
            latents: inst.latents.clone(),
        };
        lines.push_str(&serde_json::to_string(&rec)?);
        lines.push('\n');
    }
    io::write_bytes(&dir.join("images.f32"), &blob)?;
    io::write_bytes(&dir.join("latents.jsonl"), lines.as_bytes())?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        config: dataset.config.clone(),
        seed: dataset.seed,
        count: dataset.instances.len(),
        image_shape: shape,
        images_file: "images.f32".into(),
        latents_file: "latents.jsonl".into(),
        train: dataset.train.clone(),
        test: dataset.test.clone(),
    };
    io::write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = io::read_json(&dir.join("manifest.json"))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Validation(format!("unsupported dataset format `{}`", manifest.format)));
    }
    let pixels = io::f32_le_values(&io::read_bytes(&dir.join(&manifest.images_file))?)?;
    let per: usize = manifest.image_shape.iter().product();
    if pixels.len() != per * manifest.count {
        return Err(Error::Validation(format!(
            "image blob holds {} values, expected {}",
            pixels.len(),
            per * manifest.count
        )));
    }
    let text = String::from_utf8(io::read_bytes(&dir.join(&manifest.latents_file))?)
        .map_err(|e| Error::Validation(format!("latents file is not UTF-8: {e}")))?;
    let records: Vec<LatentRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    if records.len() != manifest.count {
        return Err(Error::Validation(format!(
            "{} latent records for {} images",
            records.len(),
            manifest.count
        )));
    }
    let instances = records
        .into_iter()
        .zip(pixels.chunks_exact(per))
        .map(|(rec, px)| {
            Ok(SynthInstance {
                id: rec.id,
                image: Tensor::new(manifest.image_shape.clone(), px.to_vec())?,
                label: rec.label,
                latents: rec.latents,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: manifest.config,
        seed: manifest.seed,
        instances,
        train: manifest.train,
        test: manifest.test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> SynthConfig {
        SynthConfig {
            train_count: count,
            test_count: 0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = small(40);
        let a = generate_dataset(&cfg, 11).unwrap();
        let b = generate_dataset(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&cfg, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_head_probability_means_no_heads() {
        let cfg = SynthConfig {
            head_probability: 0.0,
            ..small(200)
        };
        let ds = generate_dataset(&cfg, 5).unwrap();
        assert!(ds.instances.iter().all(|i| !i.latents.head));
    }

    #[test]
    fn figure_count_within_three_sigma() {
        let ds = generate_dataset(&small(400), 2024).unwrap();
        let figures = ds.instances.iter().filter(|i| i.label == FIGURE).count() as f64;
        let sigma = (400.0f64 * 0.5 * 0.5).sqrt();
        assert!((figures - 200.0).abs() <= 3.0 * sigma, "figures = {figures}");
    }

    #[test]
    fn label_iff_torso_and_pixels_in_range() {
        let ds = generate_dataset(&small(100), 9).unwrap();
        for inst in &ds.instances {
            assert_eq!(inst.label == FIGURE, inst.latents.torso);
            assert!(!inst.latents.head || inst.latents.torso);
            assert!(inst.image.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert_eq!(render(&ds.config, &inst.latents), inst.image);
        }
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let cfg = SynthConfig {
            torso_height: [8, 30],
            ..SynthConfig::default()
        };
        assert!(generate_dataset(&cfg, 1).is_err());
        let tiny = SynthConfig {
            height: 12,
            ..SynthConfig::default()
        };
        assert!(generate_dataset(&tiny, 1).is_err());
        let bad_balance = SynthConfig {
            figure_probability: 1.0,
            ..SynthConfig::default()
        };
        assert!(generate_dataset(&bad_balance, 1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = generate_dataset(
            &SynthConfig {
                train_count: 12,
                test_count: 5,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }
}
