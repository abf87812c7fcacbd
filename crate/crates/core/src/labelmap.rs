//! Semantic label maps, the `SLM1` on-disk format, corpus statistics, and
//! intersection-over-union scoring.
//!
//! A map stores one class id per cell plus a reserved MASK sentinel equal to
//! `num_classes` (ids are 0-based, so a map with C classes uses values
//! `0..=C` where `C` means "masked"). MASK never appears in clean data; it is
//! produced by the label forward process.
//!
//! `SLM1` layout:
//!
//! ```text
//! SLM1\n
//! <height> <width> <num_classes>\n
//! <height*width little-endian u16 cells, row-major>
//! ```

use std::path::Path;

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsx::atomic_write;

/// Refuse headers that declare more cells than this (2^28 ≈ 268M); protects
/// against allocating on a garbage header.
pub const MAX_CELLS: usize = 1 << 28;

// ---------------------------------------------------------------------------
// SemanticMap
// ---------------------------------------------------------------------------

/// A dense per-cell class assignment with a MASK sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    height: usize,
    width: usize,
    num_classes: u16,
    cells: Vec<u16>,
}

impl SemanticMap {
    /// Map filled with a single value (may be the MASK sentinel).
    pub fn filled(height: usize, width: usize, num_classes: u16, value: u16) -> Result<Self> {
        Self::from_cells(height, width, num_classes, vec![value; height * width])
    }

    /// Build from raw cells; validates shape and value range.
    pub fn from_cells(
        height: usize,
        width: usize,
        num_classes: u16,
        cells: Vec<u16>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::argument("map dimensions must be positive"));
        }
        if num_classes == 0 {
            return Err(Error::argument("num_classes must be at least 1"));
        }
        let n = height
            .checked_mul(width)
            .filter(|&n| n <= MAX_CELLS)
            .ok_or_else(|| Error::argument("map size overflows the cell limit"))?;
        if cells.len() != n {
            return Err(Error::argument(format!(
                "cell buffer has {} entries, expected {}",
                cells.len(),
                n
            )));
        }
        if let Some(&bad) = cells.iter().find(|&&v| v > num_classes) {
            return Err(Error::argument(format!(
                "cell value {bad} exceeds MASK sentinel {num_classes}"
            )));
        }
        Ok(SemanticMap {
            height,
            width,
            num_classes,
            cells,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }
    /// The MASK sentinel value for this map (`== num_classes`).
    pub fn mask_value(&self) -> u16 {
        self.num_classes
    }
    pub fn cells(&self) -> &[u16] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.cells[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: u16) {
        debug_assert!(value <= self.num_classes);
        self.cells[i * self.width + j] = value;
    }

    pub fn contains_mask(&self) -> bool {
        let mask = self.mask_value();
        self.cells.contains(&mask)
    }

    pub fn same_shape(&self, other: &SemanticMap) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.num_classes == other.num_classes
    }

    /// Parse a map from `SLM1` bytes.
    pub fn from_slm1(data: &[u8]) -> Result<Self> {
        let (line1, rest) = split_line(data)
            .ok_or_else(|| Error::truncation("missing SLM1 magic line"))?;
        if line1 != b"SLM1" {
            return Err(Error::format("bad magic, expected SLM1"));
        }
        let (line2, payload) =
            split_line(rest).ok_or_else(|| Error::truncation("missing SLM1 header line"))?;
        let (height, width, classes) = parse_dims(line2)?;
        if classes == 0 || classes > u32::from(u16::MAX) {
            return Err(Error::format(format!("num_classes {classes} out of range")));
        }
        let num_classes = classes as u16;
        if height == 0 || width == 0 {
            return Err(Error::format("zero map dimension"));
        }
        let n = height
            .checked_mul(width)
            .filter(|&n| n <= MAX_CELLS)
            .ok_or_else(|| Error::format("declared size exceeds the cell limit"))?;
        let want = n * 2;
        if payload.len() < want {
            return Err(Error::truncation(format!(
                "payload has {} bytes, header declares {want}",
                payload.len()
            )));
        }
        if payload.len() > want {
            return Err(Error::corruption(format!(
                "{} trailing bytes after declared payload",
                payload.len() - want
            )));
        }
        let mut cells = Vec::with_capacity(n);
        for chunk in payload.chunks_exact(2) {
            let v = u16::from_le_bytes([chunk[0], chunk[1]]);
            if v > num_classes {
                return Err(Error::corruption(format!(
                    "cell value {v} exceeds MASK sentinel {num_classes}"
                )));
            }
            cells.push(v);
        }
        Ok(SemanticMap {
            height,
            width,
            num_classes,
            cells,
        })
    }

    /// Serialize to `SLM1` bytes. Deterministic: equal maps give equal bytes.
    pub fn to_slm1(&self) -> Vec<u8> {
        let header = format!(
            "SLM1\n{} {} {}\n",
            self.height, self.width, self.num_classes
        );
        let mut out = Vec::with_capacity(header.len() + self.cells.len() * 2);
        out.extend_from_slice(header.as_bytes());
        for &v in &self.cells {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_slm1(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_slm1())
    }
}

fn split_line(data: &[u8]) -> Option<(&[u8], &[u8])> {
    let pos = data.iter().position(|&b| b == b'\n')?;
    Some((&data[..pos], &data[pos + 1..]))
}

fn parse_dims(line: &[u8]) -> Result<(usize, usize, u32)> {
    let text = std::str::from_utf8(line)
        .map_err(|_| Error::format("header line is not UTF-8"))?;
    let mut it = text.split(' ');
    let mut field = |name: &str| -> Result<u64> {
        it.next()
            .ok_or_else(|| Error::format(format!("missing {name} field")))?
            .parse::<u64>()
            .map_err(|_| Error::format(format!("unparseable {name} field")))
    };
    let h = field("height")?;
    let w = field("width")?;
    let c = field("num_classes")?;
    if it.next().is_some() {
        return Err(Error::format("extra fields in header line"));
    }
    if h > MAX_CELLS as u64 || w > MAX_CELLS as u64 || c > u64::from(u32::MAX) {
        return Err(Error::format("header field out of range"));
    }
    Ok((h as usize, w as usize, c as u32))
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

/// Per-class corpus statistics feeding the class-wise schedule.
///
/// `psi[c]` is the inverse mean area fraction of class `c` over the maps that
/// contain it; `phi[c]` is `ln(1 / fraction of maps containing c)`, optionally
/// clamped to at least 1. Their product (times `scale_factor`, when set)
/// orders classes from frequent (small) to rare (large).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub num_classes: u16,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_clamped: bool,
    pub scale_factor: Option<f64>,
    pub unlabeled_class: Option<u16>,
}

impl ClassStats {
    /// The scaled ψ·φ product for one class.
    pub fn product(&self, class: u16) -> f64 {
        let c = class as usize;
        self.psi[c] * self.phi[c] * self.scale_factor.unwrap_or(1.0)
    }

    /// Scaled ψ·φ products for all classes.
    pub fn products(&self) -> Vec<f64> {
        (0..self.num_classes).map(|c| self.product(c)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes as usize;
        if c == 0 {
            return Err(Error::argument("num_classes must be at least 1"));
        }
        if self.psi.len() != c || self.phi.len() != c {
            return Err(Error::argument("psi/phi length must equal num_classes"));
        }
        if self.psi.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::argument("psi values must be finite and positive"));
        }
        if self.phi.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::argument("phi values must be finite and non-negative"));
        }
        if self.phi_clamped && self.phi.iter().any(|&v| v < 1.0) {
            return Err(Error::argument("phi_clamped is set but phi < 1 present"));
        }
        if let Some(s) = self.scale_factor {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::argument("scale_factor must be finite and positive"));
            }
        }
        if let Some(u) = self.unlabeled_class {
            if u >= self.num_classes {
                return Err(Error::argument("unlabeled_class out of range"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = StatsFile::from_stats(self, None);
        serde_json::to_string_pretty(&file)
            .map_err(|e| Error::format(format!("stats serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StatsFile = serde_json::from_str(text)
            .map_err(|e| Error::format(format!("stats parse failed: {e}")))?;
        file.into_stats()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }
}

/// Wire form of the stats file. `log_base` is recorded so downstream
/// consumers agree on the φ convention; this crate always writes `"e"`.
#[derive(Debug, Serialize, Deserialize)]
pub struct StatsFile {
    pub version: u32,
    pub num_classes: u16,
    pub log_base: String,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_clamped: bool,
    pub scale_factor: Option<f64>,
    pub unlabeled_class: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code_version: Option<String>,
}

impl StatsFile {
    pub fn from_stats(stats: &ClassStats, config: Option<serde_json::Value>) -> Self {
        StatsFile {
            version: 1,
            num_classes: stats.num_classes,
            log_base: "e".to_string(),
            psi: stats.psi.clone(),
            phi: stats.phi.clone(),
            phi_clamped: stats.phi_clamped,
            scale_factor: stats.scale_factor,
            unlabeled_class: stats.unlabeled_class,
            config,
            code_version: Some(env!("CARGO_PKG_VERSION").to_string()),
        }
    }

    pub fn into_stats(self) -> Result<ClassStats> {
        if self.version != 1 {
            return Err(Error::format(format!(
                "unsupported stats version {}",
                self.version
            )));
        }
        if self.log_base != "e" {
            return Err(Error::format(format!(
                "unsupported log base {:?}",
                self.log_base
            )));
        }
        let stats = ClassStats {
            num_classes: self.num_classes,
            psi: self.psi,
            phi: self.phi,
            phi_clamped: self.phi_clamped,
            scale_factor: self.scale_factor,
            unlabeled_class: self.unlabeled_class,
        };
        stats.validate()?;
        Ok(stats)
    }
}

/// Options for [`estimate_stats`].
#[derive(Debug, Clone)]
pub struct StatsOptions {
    /// Clamp φ to at least 1 (keeps near-ubiquitous classes inside the
    /// class-wise schedule's domain).
    pub clamp_phi: bool,
    /// Class to record as unlabeled. It still gets ψ/φ estimates but is
    /// excluded when locating the smallest product for scaling.
    pub unlabeled_class: Option<u16>,
    /// When set, record `scale_factor` so the smallest ψ·φ product among
    /// eligible classes equals this target.
    pub target_min_product: Option<f64>,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            clamp_phi: true,
            unlabeled_class: None,
            target_min_product: None,
        }
    }
}

/// Estimate per-class ψ and φ over a corpus of clean maps.
///
/// Area fractions are accumulated as exact rationals, so the result does not
/// depend on map order and partitions of the corpus merge losslessly.
/// Classes absent from the corpus get the maximum finite product observed
/// (`psi := max_product, phi := 1`), keeping them rare-but-usable downstream.
pub fn estimate_stats(corpus: &[SemanticMap], opts: &StatsOptions) -> Result<ClassStats> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::argument("corpus is empty"))?;
    let num_classes = first.num_classes();
    if let Some(u) = opts.unlabeled_class {
        if u >= num_classes {
            return Err(Error::argument("unlabeled_class out of range"));
        }
    }
    if let Some(t) = opts.target_min_product {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::argument("target_min_product must be positive"));
        }
    }

    let c = num_classes as usize;
    let mut present = vec![0u64; c];
    let mut fraction_sum = vec![BigRational::zero(); c];
    for (idx, map) in corpus.iter().enumerate() {
        if map.num_classes() != num_classes {
            return Err(Error::argument(format!(
                "map {idx} has {} classes, expected {num_classes}",
                map.num_classes()
            )));
        }
        if map.contains_mask() {
            return Err(Error::argument(format!(
                "map {idx} contains MASK cells; statistics require clean maps"
            )));
        }
        let mut counts = vec![0u64; c];
        for &v in map.cells() {
            counts[v as usize] += 1;
        }
        let total = BigRational::from_integer((map.cells().len() as u64).into());
        for (class, &n) in counts.iter().enumerate() {
            if n > 0 {
                present[class] += 1;
                fraction_sum[class] += BigRational::from_integer(n.into()) / total.clone();
            }
        }
    }

    let n_maps = corpus.len() as f64;
    let mut psi = vec![0.0f64; c];
    let mut phi = vec![0.0f64; c];
    for class in 0..c {
        if present[class] == 0 {
            continue;
        }
        // mean fraction = fraction_sum / present; psi = 1 / mean.
        let mean = &fraction_sum[class] / BigRational::from_integer(present[class].into());
        let inv = mean.recip();
        psi[class] = inv
            .to_f64()
            .ok_or_else(|| Error::numeric("psi does not fit in f64"))?;
        let raw = (n_maps / present[class] as f64).ln();
        phi[class] = if opts.clamp_phi { raw.max(1.0) } else { raw };
    }

    let max_product = (0..c)
        .filter(|&cl| present[cl] > 0)
        .map(|cl| psi[cl] * phi[cl])
        .fold(f64::NEG_INFINITY, f64::max);
    for class in 0..c {
        if present[class] == 0 {
            psi[class] = max_product.max(f64::MIN_POSITIVE);
            phi[class] = 1.0;
        }
    }

    let scale_factor = match opts.target_min_product {
        None => None,
        Some(target) => {
            let min_product = (0..c)
                .filter(|&cl| present[cl] > 0 && Some(cl as u16) != opts.unlabeled_class)
                .map(|cl| psi[cl] * phi[cl])
                .fold(f64::INFINITY, f64::min);
            if !min_product.is_finite() {
                return Err(Error::degenerate(
                    "no class eligible for product scaling",
                ));
            }
            if min_product <= 0.0 {
                return Err(Error::argument(
                    "cannot scale: smallest psi*phi product is zero (phi unclamped?)",
                ));
            }
            Some(target / min_product)
        }
    };

    let stats = ClassStats {
        num_classes,
        psi,
        phi,
        phi_clamped: opts.clamp_phi,
        scale_factor,
        unlabeled_class: opts.unlabeled_class,
    };
    stats.validate()?;
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Intersection over union
// ---------------------------------------------------------------------------

/// Per-class IoU between a prediction and a reference map.
///
/// Cells whose *truth* value equals `ignore` are dropped from all counts.
/// Returns one entry per class (`ignore` and classes with an empty union are
/// `None`).
pub fn class_ious(
    pred: &SemanticMap,
    truth: &SemanticMap,
    ignore: Option<u16>,
) -> Result<Vec<Option<f64>>> {
    if !pred.same_shape(truth) {
        return Err(Error::argument("pred/truth shape or class count mismatch"));
    }
    let mask = pred.mask_value();
    if ignore != Some(mask) && (pred.contains_mask() || truth.contains_mask()) {
        return Err(Error::argument(
            "maps contain MASK cells not covered by the ignore class",
        ));
    }
    if let Some(ig) = ignore {
        if ig > mask {
            return Err(Error::argument("ignore class out of range"));
        }
    }

    let c = pred.num_classes() as usize;
    let mut inter = vec![0u64; c + 1];
    let mut pred_count = vec![0u64; c + 1];
    let mut truth_count = vec![0u64; c + 1];
    for (&p, &t) in pred.cells().iter().zip(truth.cells()) {
        if Some(t) == ignore {
            continue;
        }
        pred_count[p as usize] += 1;
        truth_count[t as usize] += 1;
        if p == t {
            inter[p as usize] += 1;
        }
    }

    Ok((0..c as u16)
        .map(|class| {
            if Some(class) == ignore {
                return None;
            }
            let k = class as usize;
            let union = pred_count[k] + truth_count[k] - inter[k];
            if union == 0 {
                None
            } else {
                Some(inter[k] as f64 / union as f64)
            }
        })
        .collect())
}

/// Mean IoU over classes with a nonempty union, excluding `ignore`.
pub fn miou(pred: &SemanticMap, truth: &SemanticMap, ignore: Option<u16>) -> Result<f64> {
    let ious = class_ious(pred, truth, ignore)?;
    let scored: Vec<f64> = ious.into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(Error::degenerate("no class has a nonempty union"));
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, c: u16, cells: &[u16]) -> SemanticMap {
        SemanticMap::from_cells(h, w, c, cells.to_vec()).unwrap()
    }

    #[test]
    fn slm1_round_trip_is_byte_identical() {
        let m = map(2, 3, 4, &[0, 1, 2, 3, 4, 0]);
        let bytes = m.to_slm1();
        let back = SemanticMap::from_slm1(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_slm1(), bytes);
    }

    #[test]
    fn slm1_rejects_bad_magic() {
        let mut bytes = map(1, 1, 1, &[0]).to_slm1();
        bytes[0] = b'X';
        assert!(matches!(
            SemanticMap::from_slm1(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn slm1_rejects_truncation_and_trailing_bytes() {
        let bytes = map(2, 2, 2, &[0, 1, 2, 0]).to_slm1();
        assert!(matches!(
            SemanticMap::from_slm1(&bytes[..bytes.len() - 1]),
            Err(Error::Truncation(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            SemanticMap::from_slm1(&long),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn slm1_rejects_out_of_range_cell() {
        let mut bytes = map(1, 2, 2, &[0, 1]).to_slm1();
        let n = bytes.len();
        bytes[n - 2..].copy_from_slice(&5u16.to_le_bytes());
        assert!(matches!(
            SemanticMap::from_slm1(&bytes),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn constructor_validates() {
        assert!(SemanticMap::from_cells(0, 1, 1, vec![]).is_err());
        assert!(SemanticMap::from_cells(1, 1, 0, vec![0]).is_err());
        assert!(SemanticMap::from_cells(1, 1, 2, vec![3]).is_err());
        assert!(SemanticMap::from_cells(1, 2, 2, vec![0]).is_err());
    }

    // Two-map corpus: class 0 fills map A entirely and half of map B; class 1
    // fills the other half of B. Hand-computed: psi0 = 1/mean(1, 0.5) = 4/3,
    // psi1 = 2, phi0 = ln(2/2) = 0, phi1 = ln(2/1) = ln 2.
    #[test]
    fn estimate_stats_matches_hand_computation() {
        let a = map(2, 2, 2, &[0, 0, 0, 0]);
        let b = map(2, 2, 2, &[0, 0, 1, 1]);
        let opts = StatsOptions {
            clamp_phi: false,
            ..Default::default()
        };
        let stats = estimate_stats(&[a, b], &opts).unwrap();
        assert!((stats.psi[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((stats.psi[1] - 2.0).abs() < 1e-15);
        assert!(stats.phi[0].abs() < 1e-15);
        assert!((stats.phi[1] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn estimate_stats_is_order_independent() {
        let a = map(2, 2, 3, &[0, 0, 1, 2]);
        let b = map(1, 3, 3, &[1, 1, 2]);
        let c = map(3, 1, 3, &[0, 2, 2]);
        let opts = StatsOptions::default();
        let s1 = estimate_stats(&[a.clone(), b.clone(), c.clone()], &opts).unwrap();
        let s2 = estimate_stats(&[c, a, b], &opts).unwrap();
        assert_eq!(s1.psi, s2.psi);
        assert_eq!(s1.phi, s2.phi);
    }

    #[test]
    fn clamp_lifts_phi_to_one() {
        let a = map(2, 2, 2, &[0, 0, 1, 1]);
        let b = map(2, 2, 2, &[0, 1, 1, 1]);
        let stats = estimate_stats(&[a, b], &StatsOptions::default()).unwrap();
        assert_eq!(stats.phi, vec![1.0, 1.0]);
        assert!(stats.phi_clamped);
    }

    #[test]
    fn absent_class_gets_max_finite_product() {
        let a = map(2, 2, 3, &[0, 0, 0, 1]);
        let b = map(2, 2, 3, &[0, 0, 1, 1]);
        let stats = estimate_stats(&[a, b], &StatsOptions::default()).unwrap();
        let max_present = (stats.psi[0] * stats.phi[0]).max(stats.psi[1] * stats.phi[1]);
        assert!((stats.product(2) - max_present).abs() < 1e-12);
        assert_eq!(stats.phi[2], 1.0);
    }

    #[test]
    fn scale_factor_hits_target() {
        let a = map(2, 2, 2, &[0, 0, 0, 1]);
        let b = map(2, 2, 2, &[0, 0, 1, 1]);
        let opts = StatsOptions {
            target_min_product: Some(1.0),
            ..Default::default()
        };
        let stats = estimate_stats(&[a, b], &opts).unwrap();
        let min = stats.product(0).min(stats.product(1));
        assert!((min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_stats_rejects_bad_corpora() {
        assert!(matches!(
            estimate_stats(&[], &StatsOptions::default()),
            Err(Error::Argument(_))
        ));
        let masked = map(1, 2, 2, &[0, 2]);
        assert!(matches!(
            estimate_stats(&[masked], &StatsOptions::default()),
            Err(Error::Argument(_))
        ));
        let a = map(1, 2, 2, &[0, 1]);
        let b = map(1, 2, 3, &[0, 1]);
        assert!(matches!(
            estimate_stats(&[a, b], &StatsOptions::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn stats_json_round_trip() {
        let a = map(2, 2, 2, &[0, 0, 1, 1]);
        let stats = estimate_stats(
            &[a],
            &StatsOptions {
                unlabeled_class: Some(0),
                target_min_product: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let text = stats.to_json().unwrap();
        assert!(text.contains("\"log_base\": \"e\""));
        let back = ClassStats::from_json(&text).unwrap();
        assert_eq!(back, stats);
    }

    #[test]
    fn miou_identical_disjoint_and_mixed() {
        let a = map(2, 2, 2, &[0, 1, 1, 0]);
        assert_eq!(miou(&a, &a, None).unwrap(), 1.0);

        let pred = map(2, 2, 2, &[0, 0, 0, 0]);
        let truth = map(2, 2, 2, &[1, 1, 1, 1]);
        assert_eq!(miou(&pred, &truth, None).unwrap(), 0.0);

        // IoU(class 0) = 1/2, IoU(class 1) = 2/3, mean = 7/12.
        let pred = map(1, 4, 2, &[0, 0, 1, 1]);
        let truth = map(1, 4, 2, &[0, 1, 1, 1]);
        let got = miou(&pred, &truth, None).unwrap();
        assert!((got - 7.0 / 12.0).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn miou_ignore_drops_class_and_cells() {
        // Truth cell 1 is the ignore class; only class 0 is scored and the
        // disagreement at that cell is not held against class 0's union.
        let pred = map(1, 3, 3, &[0, 0, 0]);
        let truth = map(1, 3, 3, &[0, 2, 0]);
        let got = miou(&pred, &truth, Some(2)).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn miou_shape_mismatch_and_mask_rejected() {
        let a = map(1, 2, 2, &[0, 1]);
        let b = map(2, 1, 2, &[0, 1]);
        assert!(miou(&a, &b, None).is_err());
        let masked = map(1, 2, 2, &[0, 2]);
        assert!(miou(&masked, &a, None).is_err());
        assert!(miou(&masked, &masked, Some(2)).is_ok());
    }
}
