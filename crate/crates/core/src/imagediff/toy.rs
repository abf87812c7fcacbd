//! Synthetic scene model: label maps plus class-conditional Gaussian pixels.
//!
//! A spec fixes the geometry (H, W, CH), the class palette (per-class channel
//! means), the within-class spread `sigma0`, a sampling prior over classes,
//! and the map layout. Everything downstream — training batches, oracle
//! denoisers, the ablation harness — consumes the same spec file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsx::atomic_write;
use crate::imagediff::ToyImage;
use crate::labelmap::SemanticMap;
use crate::rng::Stream;

/// How generated label maps are laid out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapLayout {
    /// Every cell drawn independently from the class prior.
    #[default]
    Iid,
    /// Class-0 background with `count` random axis-aligned rectangles of
    /// other classes painted over it, later rectangles on top.
    Rects { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: u16,
    /// Row per class, `channels` entries each.
    pub class_means: Vec<Vec<f64>>,
    /// Within-class per-channel standard deviation; zero is allowed and
    /// makes class pixels deterministic.
    pub sigma0: f64,
    /// Sampling weights per class; empty means uniform.
    #[serde(default)]
    pub class_prior: Vec<f64>,
    #[serde(default)]
    pub layout: MapLayout,
}

impl ToyDataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::argument("spec dimensions must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::argument("spec needs at least one class"));
        }
        if self.class_means.len() != self.num_classes as usize {
            return Err(Error::argument(format!(
                "class_means has {} rows for {} classes",
                self.class_means.len(),
                self.num_classes
            )));
        }
        for (c, row) in self.class_means.iter().enumerate() {
            if row.len() != self.channels {
                return Err(Error::argument(format!(
                    "class {c} mean has {} entries for {} channels",
                    row.len(),
                    self.channels
                )));
            }
            if row.iter().any(|m| !m.is_finite()) {
                return Err(Error::argument(format!("class {c} mean is not finite")));
            }
        }
        if !self.sigma0.is_finite() || self.sigma0 < 0.0 {
            return Err(Error::argument(format!("bad sigma0 {}", self.sigma0)));
        }
        if !self.class_prior.is_empty() {
            if self.class_prior.len() != self.num_classes as usize {
                return Err(Error::argument(format!(
                    "class_prior has {} entries for {} classes",
                    self.class_prior.len(),
                    self.num_classes
                )));
            }
            if self
                .class_prior
                .iter()
                .any(|w| !w.is_finite() || *w < 0.0)
            {
                return Err(Error::argument("class_prior weights must be >= 0"));
            }
            if self.class_prior.iter().sum::<f64>() <= 0.0 {
                return Err(Error::argument("class_prior must have positive mass"));
            }
        }
        if let MapLayout::Rects { .. } = self.layout {
            if self.num_classes < 2 {
                return Err(Error::argument(
                    "rects layout needs a background class plus at least one foreground class",
                ));
            }
        }
        Ok(())
    }

    /// Normalized class prior (uniform when the spec leaves it empty).
    pub fn prior(&self) -> Vec<f64> {
        let c = self.num_classes as usize;
        if self.class_prior.is_empty() {
            return vec![1.0 / c as f64; c];
        }
        let total: f64 = self.class_prior.iter().sum();
        self.class_prior.iter().map(|w| w / total).collect()
    }

    /// Draw a label map. Layout `Iid` consumes per-cell forks of `stream`
    /// (keyed by `[i, j]`); `Rects` consumes `stream` sequentially.
    pub fn sample_map(&self, stream: &Stream) -> Result<SemanticMap> {
        self.validate()?;
        match self.layout {
            MapLayout::Iid => {
                let prior = self.prior();
                let mut map = SemanticMap::filled(self.height, self.width, self.num_classes, 0)?;
                for i in 0..self.height {
                    for j in 0..self.width {
                        let mut cell = stream.fork(&[i as u64, j as u64]);
                        map.set(i, j, cell.categorical(&prior) as u16);
                    }
                }
                Ok(map)
            }
            MapLayout::Rects { count } => {
                let mut s = stream.fork_named("rects");
                let mut map = SemanticMap::filled(self.height, self.width, self.num_classes, 0)?;
                for _ in 0..count {
                    let class = 1 + s.below((self.num_classes - 1) as u64) as u16;
                    let top = s.below(self.height as u64) as usize;
                    let left = s.below(self.width as u64) as usize;
                    let h = 1 + s.below((self.height - top) as u64) as usize;
                    let w = 1 + s.below((self.width - left) as u64) as usize;
                    for i in top..top + h {
                        for j in left..left + w {
                            map.set(i, j, class);
                        }
                    }
                }
                Ok(map)
            }
        }
    }

    /// Render a clean image for `map`: per-pixel class mean plus
    /// `sigma0`-scaled Gaussian noise, drawn sequentially from `stream`.
    pub fn sample_image(&self, map: &SemanticMap, stream: &mut Stream) -> Result<ToyImage> {
        self.validate()?;
        if map.height() != self.height
            || map.width() != self.width
            || map.num_classes() != self.num_classes
        {
            return Err(Error::argument("map does not match the data spec"));
        }
        if map.contains_mask() {
            return Err(Error::argument("cannot render an image for MASK cells"));
        }
        let mut img = ToyImage::zeros(self.height, self.width, self.channels)?;
        for i in 0..self.height {
            for j in 0..self.width {
                let mean = &self.class_means[map.get(i, j) as usize];
                for ch in 0..self.channels {
                    let noise = if self.sigma0 > 0.0 { stream.normal() } else { 0.0 };
                    img.set(i, j, ch, mean[ch] + self.sigma0 * noise);
                }
            }
        }
        Ok(img)
    }

    /// Draw a `(map, image)` pair from child streams `"map"` and `"image"`.
    pub fn sample_pair(&self, stream: &Stream) -> Result<(SemanticMap, ToyImage)> {
        let map = self.sample_map(&stream.fork_named("map"))?;
        let mut img_stream = stream.fork_named("image");
        let img = self.sample_image(&map, &mut img_stream)?;
        Ok((map, img))
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let wire = SpecFile {
            version: 1,
            flavor: "oracle".to_string(),
            spec: self.clone(),
        };
        serde_json::to_string_pretty(&wire).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: SpecFile =
            serde_json::from_str(text).map_err(|e| Error::format(format!("bad spec JSON: {e}")))?;
        if wire.version != 1 {
            return Err(Error::format(format!(
                "unsupported spec version {}",
                wire.version
            )));
        }
        if wire.flavor != "oracle" {
            return Err(Error::format(format!(
                "unexpected spec flavor {:?}",
                wire.flavor
            )));
        }
        wire.spec.validate()?;
        Ok(wire.spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }
}

/// Two well-separated classes on a small grid; the workhorse configuration
/// for tests and the bundled demos.
pub fn two_class_demo_spec(height: usize, width: usize, sigma0: f64) -> ToyDataSpec {
    ToyDataSpec {
        height,
        width,
        channels: 1,
        num_classes: 2,
        class_means: vec![vec![-0.6], vec![0.6]],
        sigma0,
        class_prior: Vec::new(),
        layout: MapLayout::Iid,
    }
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    version: u32,
    flavor: String,
    spec: ToyDataSpec,
}
