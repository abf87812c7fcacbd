//! Benchmark corruptions for conditioning maps: blocky downsample/upsample
//! (DS), unlabeled bands around class boundaries (Edge), and iid unlabeled
//! flips (Random). "Unlabeled" is an ordinary class id chosen by the
//! caller — these never introduce MASK.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::SemanticMap;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Ds,
    Edge,
    Random,
}

/// Distance metric for the Edge band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Chebyshev,
    Manhattan,
    Euclidean,
}

impl Metric {
    fn within(self, di: i64, dj: i64, d: i64) -> bool {
        match self {
            Metric::Chebyshev => di.abs().max(dj.abs()) <= d,
            Metric::Manhattan => di.abs() + dj.abs() <= d,
            Metric::Euclidean => di * di + dj * dj <= d * d,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub mode: CorruptionMode,
    #[serde(default = "default_ds_factor")]
    pub ds_factor: usize,
    #[serde(default = "default_edge_distance")]
    pub edge_distance: usize,
    #[serde(default = "default_random_rate")]
    pub random_rate: f64,
    pub unlabeled_class: u16,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub ignore_unlabeled_edges: bool,
}

fn default_ds_factor() -> usize {
    4
}

fn default_edge_distance() -> usize {
    2
}

fn default_random_rate() -> f64 {
    0.10
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            CorruptionMode::Ds => {
                if self.ds_factor < 2 {
                    return Err(Error::argument("ds factor must be at least 2"));
                }
            }
            CorruptionMode::Random => {
                if !self.random_rate.is_finite() || !(0.0..=1.0).contains(&self.random_rate) {
                    return Err(Error::argument(format!(
                        "rate {} outside [0, 1]",
                        self.random_rate
                    )));
                }
            }
            CorruptionMode::Edge => {}
        }
        Ok(())
    }

    pub fn apply(&self, y0: &SemanticMap, stream: &Stream) -> Result<SemanticMap> {
        self.validate()?;
        match self.mode {
            CorruptionMode::Ds => corrupt_ds(y0, self.ds_factor),
            CorruptionMode::Edge => corrupt_edge_opts(
                y0,
                self.edge_distance,
                self.unlabeled_class,
                self.metric,
                self.ignore_unlabeled_edges,
            ),
            CorruptionMode::Random => {
                corrupt_random(y0, self.random_rate, self.unlabeled_class, stream)
            }
        }
    }
}

fn check_clean(y0: &SemanticMap) -> Result<()> {
    if y0.contains_mask() {
        return Err(Error::argument("corruptions expect a MASK-free map"));
    }
    Ok(())
}

fn check_unlabeled(y0: &SemanticMap, unlabeled: u16) -> Result<()> {
    if unlabeled >= y0.num_classes() {
        return Err(Error::argument(format!(
            "unlabeled class {unlabeled} outside 0..{}",
            y0.num_classes()
        )));
    }
    Ok(())
}

/// Blocky resampling: each `factor`-sized block is replaced by its top-left
/// cell. Non-divisible dimensions behave as replicate-pad then crop, which
/// the anchored indexing gives for free.
pub fn corrupt_ds(y0: &SemanticMap, factor: usize) -> Result<SemanticMap> {
    check_clean(y0)?;
    if factor == 0 {
        return Err(Error::argument("ds factor must be positive"));
    }
    if factor == 1 {
        return Ok(y0.clone());
    }
    let mut out = y0.clone();
    for i in 0..y0.height() {
        for j in 0..y0.width() {
            out.set(i, j, y0.get(i / factor * factor, j / factor * factor));
        }
    }
    Ok(out)
}

/// Turn every cell within Chebyshev distance `distance` of a class boundary
/// into `unlabeled`. A boundary cell is one with a 4-neighbor of a
/// different class.
pub fn corrupt_edge(y0: &SemanticMap, distance: usize, unlabeled: u16) -> Result<SemanticMap> {
    corrupt_edge_opts(y0, distance, unlabeled, Metric::Chebyshev, false)
}

/// [`corrupt_edge`] with the metric spelled out and, optionally, boundaries
/// against `unlabeled` itself excluded from detection (which makes the
/// operation idempotent; with them included, re-running widens the band).
pub fn corrupt_edge_opts(
    y0: &SemanticMap,
    distance: usize,
    unlabeled: u16,
    metric: Metric,
    ignore_unlabeled_edges: bool,
) -> Result<SemanticMap> {
    check_clean(y0)?;
    check_unlabeled(y0, unlabeled)?;
    let (h, w) = (y0.height() as i64, y0.width() as i64);
    let mut band = vec![false; y0.cells().len()];
    let d = distance as i64;
    for i in 0..h {
        for j in 0..w {
            let c = y0.get(i as usize, j as usize);
            let is_edge = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)]
                .iter()
                .any(|&(di, dj)| {
                    let (ni, nj) = (i + di, j + dj);
                    if ni < 0 || nj < 0 || ni >= h || nj >= w {
                        return false;
                    }
                    let n = y0.get(ni as usize, nj as usize);
                    n != c && !(ignore_unlabeled_edges && (c == unlabeled || n == unlabeled))
                });
            if !is_edge {
                continue;
            }
            for di in -d..=d {
                for dj in -d..=d {
                    if !metric.within(di, dj, d) {
                        continue;
                    }
                    let (ni, nj) = (i + di, j + dj);
                    if ni >= 0 && nj >= 0 && ni < h && nj < w {
                        band[(ni * w + nj) as usize] = true;
                    }
                }
            }
        }
    }
    let mut out = y0.clone();
    for i in 0..y0.height() {
        for j in 0..y0.width() {
            if band[i * y0.width() + j] {
                out.set(i, j, unlabeled);
            }
        }
    }
    Ok(out)
}

/// Independently relabel each cell as `unlabeled` with probability `rate`.
/// Draws are keyed per cell (`stream.fork(&[i, j])`), so the result is
/// independent of traversal order.
pub fn corrupt_random(
    y0: &SemanticMap,
    rate: f64,
    unlabeled: u16,
    stream: &Stream,
) -> Result<SemanticMap> {
    check_clean(y0)?;
    check_unlabeled(y0, unlabeled)?;
    if !rate.is_finite() || !(0.0..=1.0).contains(&rate) {
        return Err(Error::argument(format!("rate {rate} outside [0, 1]")));
    }
    let mut out = y0.clone();
    for i in 0..y0.height() {
        for j in 0..y0.width() {
            if stream.fork(&[i as u64, j as u64]).uniform() < rate {
                out.set(i, j, unlabeled);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn columns_map(h: usize, w: usize, c: u16, split: usize) -> SemanticMap {
        let mut m = SemanticMap::filled(h, w, c, 1).unwrap();
        for i in 0..h {
            for j in split..w {
                m.set(i, j, 2);
            }
        }
        m
    }

    #[test]
    fn ds_basics() {
        let constant = SemanticMap::filled(6, 6, 3, 2).unwrap();
        assert_eq!(corrupt_ds(&constant, 3).unwrap().cells(), constant.cells());

        let m = columns_map(4, 4, 3, 2);
        assert_eq!(corrupt_ds(&m, 1).unwrap().cells(), m.cells());
        // block boundary aligns with the class boundary: unchanged
        assert_eq!(corrupt_ds(&m, 2).unwrap().cells(), m.cells());
    }

    #[test]
    fn ds_anchors_top_left() {
        let m = SemanticMap::from_cells(3, 3, 9, vec![0, 1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let out = corrupt_ds(&m, 2).unwrap();
        // anchors: (0,0)=0 for the top-left block, (0,2)=2, (2,0)=6, (2,2)=8
        assert_eq!(out.cells(), &[0, 0, 2, 0, 0, 2, 6, 6, 8]);
    }

    #[test]
    fn ds_is_idempotent() {
        let mut m = SemanticMap::filled(7, 5, 4, 0).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                m.set(i, j, ((i * 5 + j) % 4) as u16);
            }
        }
        let once = corrupt_ds(&m, 2).unwrap();
        let twice = corrupt_ds(&once, 2).unwrap();
        assert_eq!(once.cells(), twice.cells());
    }

    #[test]
    fn edge_band_covers_the_two_column_example() {
        let m = columns_map(5, 5, 3, 2);
        let out = corrupt_edge(&m, 2, 0).unwrap();
        assert!(out.cells().iter().all(|&c| c == 0), "{:?}", out.cells());
    }

    #[test]
    fn edge_distance_zero_marks_only_boundary_cells() {
        let m = columns_map(3, 4, 3, 2);
        let out = corrupt_edge(&m, 0, 0).unwrap();
        for i in 0..3 {
            assert_eq!(out.get(i, 0), 1);
            assert_eq!(out.get(i, 1), 0);
            assert_eq!(out.get(i, 2), 0);
            assert_eq!(out.get(i, 3), 2);
        }
    }

    #[test]
    fn edge_on_constant_map_is_identity() {
        let m = SemanticMap::filled(4, 4, 2, 1).unwrap();
        assert_eq!(corrupt_edge(&m, 2, 0).unwrap().cells(), m.cells());
    }

    #[test]
    fn edge_metrics_disagree_beyond_the_axes() {
        // single class-change cell in the middle of the left edge column
        let mut m = SemanticMap::filled(5, 5, 3, 1).unwrap();
        m.set(2, 2, 2);
        let cheb = corrupt_edge_opts(&m, 1, 0, Metric::Chebyshev, false).unwrap();
        let manh = corrupt_edge_opts(&m, 1, 0, Metric::Manhattan, false).unwrap();
        // the diagonal neighbor of a boundary cell is inside the Chebyshev
        // band but outside the Manhattan band at the map corner
        assert_ne!(cheb.cells(), manh.cells());
        let eucl = corrupt_edge_opts(&m, 1, 0, Metric::Euclidean, false).unwrap();
        assert_eq!(eucl.cells(), manh.cells(), "radius 1 disk == diamond");
    }

    #[test]
    fn edge_idempotence_requires_ignoring_unlabeled_boundaries() {
        let m = columns_map(7, 7, 3, 3); // classes 1 | 2, unlabeled will be 0
        let once = corrupt_edge_opts(&m, 1, 0, Metric::Chebyshev, true).unwrap();
        let twice = corrupt_edge_opts(&once, 1, 0, Metric::Chebyshev, true).unwrap();
        assert_eq!(once.cells(), twice.cells());

        let grown = corrupt_edge_opts(
            &corrupt_edge_opts(&m, 1, 0, Metric::Chebyshev, false).unwrap(),
            1,
            0,
            Metric::Chebyshev,
            false,
        )
        .unwrap();
        let band = |m: &SemanticMap| m.cells().iter().filter(|&&c| c == 0).count();
        assert!(band(&grown) > band(&once), "default semantics widen the band");
    }

    #[test]
    fn random_rate_extremes_and_frequency() {
        let m = SemanticMap::filled(64, 64, 3, 1).unwrap();
        let s = Stream::named(21, "corrupt");
        assert_eq!(corrupt_random(&m, 0.0, 0, &s).unwrap().cells(), m.cells());
        assert!(corrupt_random(&m, 1.0, 0, &s)
            .unwrap()
            .cells()
            .iter()
            .all(|&c| c == 0));

        let out = corrupt_random(&m, 0.10, 0, &s).unwrap();
        let flipped = out.cells().iter().filter(|&&c| c == 0).count() as f64;
        let n = (64 * 64) as f64;
        let bound = 4.0 * (0.10f64 * 0.90 * n).sqrt();
        assert!(
            (flipped - 0.10 * n).abs() < bound,
            "flipped {flipped} of {n}"
        );
    }

    #[test]
    fn random_is_reproducible_and_seed_sensitive() {
        let m = SemanticMap::filled(16, 16, 3, 1).unwrap();
        let a = corrupt_random(&m, 0.3, 0, &Stream::named(5, "r")).unwrap();
        let b = corrupt_random(&m, 0.3, 0, &Stream::named(5, "r")).unwrap();
        let c = corrupt_random(&m, 0.3, 0, &Stream::named(6, "r")).unwrap();
        assert_eq!(a.cells(), b.cells());
        assert_ne!(a.cells(), c.cells());
    }

    #[test]
    fn inputs_are_validated() {
        let masked = SemanticMap::from_cells(1, 2, 2, vec![0, 2]).unwrap();
        assert!(corrupt_ds(&masked, 2).is_err());
        let m = SemanticMap::filled(4, 4, 2, 0).unwrap();
        assert!(corrupt_edge(&m, 1, 2).is_err());
        assert!(corrupt_random(&m, 1.5, 0, &Stream::named(0, "x")).is_err());
        assert!(corrupt_ds(&m, 0).is_err());

        let cfg = CorruptionConfig {
            mode: CorruptionMode::Ds,
            ds_factor: 1,
            edge_distance: 2,
            random_rate: 0.1,
            unlabeled_class: 0,
            metric: Metric::Chebyshev,
            ignore_unlabeled_edges: false,
        };
        assert!(cfg.apply(&m, &Stream::named(0, "x")).is_err());
    }

    #[test]
    fn config_dispatch_matches_direct_calls() {
        let m = columns_map(6, 6, 3, 3);
        let s = Stream::named(3, "cfg");
        let cfg = CorruptionConfig {
            mode: CorruptionMode::Random,
            ds_factor: 4,
            edge_distance: 2,
            random_rate: 0.25,
            unlabeled_class: 0,
            metric: Metric::Chebyshev,
            ignore_unlabeled_edges: false,
        };
        let via_cfg = cfg.apply(&m, &s).unwrap();
        let direct = corrupt_random(&m, 0.25, 0, &s).unwrap();
        assert_eq!(via_cfg.cells(), direct.cells());
    }
}
