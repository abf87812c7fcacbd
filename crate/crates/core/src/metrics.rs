//! Desk-scale evaluation: grouped mIoU over label maps, PSNR/SSIM over toy
//! images, and the closed-form Fréchet (2-Wasserstein) distance between
//! Gaussian fits of feature sets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagediff::ToyImage;
use crate::labelmap::{class_ious, ClassStats, SemanticMap};

/// PSNR is unbounded for identical images; reports serialize the sentinel
/// as this many dB.
pub const PSNR_SERIALIZATION_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Frequent,
    Common,
    Rare,
}

const GROUP_ORDER: [Group; 3] = [Group::Frequent, Group::Common, Group::Rare];

/// Per-class frequency group. Built from the psi*phi products: classes are
/// ranked ascending (frequent classes have small products) and split into
/// terciles; rank `i` of `C` lands in tercile `3i / C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    groups: Vec<Group>,
}

impl GroupAssignment {
    pub fn from_products(products: &[f64]) -> Result<Self> {
        if products.is_empty() {
            return Err(Error::argument("no classes to group"));
        }
        if products.iter().any(|p| !p.is_finite()) {
            return Err(Error::argument("products must be finite"));
        }
        let mut order: Vec<usize> = (0..products.len()).collect();
        order.sort_by(|&a, &b| {
            products[a]
                .partial_cmp(&products[b])
                .expect("finite products")
                .then(a.cmp(&b))
        });
        let mut groups = vec![Group::Frequent; products.len()];
        for (rank, &class) in order.iter().enumerate() {
            groups[class] = GROUP_ORDER[3 * rank / products.len()];
        }
        Ok(Self { groups })
    }

    pub fn from_stats(stats: &ClassStats) -> Result<Self> {
        stats.validate()?;
        Self::from_products(&stats.products())
    }

    /// Explicit per-class assignment, for corpora where the tercile split
    /// is not the right cut.
    pub fn from_groups(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::argument("no classes to group"));
        }
        Ok(Self { groups })
    }

    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, class: u16) -> Option<Group> {
        self.groups.get(class as usize).copied()
    }
}

/// Group-restricted mIoU; a group with no scorable class is absent, not 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupedMiou {
    pub all: f64,
    pub frequent: Option<f64>,
    pub common: Option<f64>,
    pub rare: Option<f64>,
}

pub fn grouped_miou(
    pred: &SemanticMap,
    truth: &SemanticMap,
    groups: &GroupAssignment,
    ignore: Option<u16>,
) -> Result<GroupedMiou> {
    if groups.num_classes() != truth.num_classes() as usize {
        return Err(Error::argument(format!(
            "assignment covers {} classes, maps have {}",
            groups.num_classes(),
            truth.num_classes()
        )));
    }
    let ious = class_ious(pred, truth, ignore)?;
    let mut sums = [(0.0, 0usize); 3];
    for (class, iou) in ious.iter().enumerate() {
        if let Some(v) = iou {
            let g = groups.groups[class] as usize;
            sums[g].0 += v;
            sums[g].1 += 1;
        }
    }
    let per_group: Vec<Option<f64>> = sums
        .iter()
        .map(|&(s, n)| if n > 0 { Some(s / n as f64) } else { None })
        .collect();
    let (total, count) = sums
        .iter()
        .fold((0.0, 0usize), |(s, n), &(gs, gn)| (s + gs, n + gn));
    if count == 0 {
        return Err(Error::degenerate(
            "no class has any presence in either map",
        ));
    }
    Ok(GroupedMiou {
        all: total / count as f64,
        frequent: per_group[0],
        common: per_group[1],
        rare: per_group[2],
    })
}

/// Peak signal-to-noise ratio in dB; identical inputs give +infinity.
pub fn psnr(a: &ToyImage, b: &ToyImage, data_range: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::argument("image shapes differ"));
    }
    if !data_range.is_finite() || data_range <= 0.0 {
        return Err(Error::argument(format!("bad data range {data_range}")));
    }
    let mse: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.values().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

#[derive(Debug, Clone, Copy)]
pub struct SsimOptions {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
    /// Gaussian window weighting; `None` keeps the uniform window.
    pub gaussian_sigma: Option<f64>,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            gaussian_sigma: None,
        }
    }
}

/// Mean windowed SSIM over all window positions and channels.
pub fn ssim(a: &ToyImage, b: &ToyImage, opts: &SsimOptions) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::argument("image shapes differ"));
    }
    let w = opts.window;
    if w == 0 || w > a.height().min(a.width()) {
        return Err(Error::argument(format!(
            "window {w} does not fit a {}x{} image",
            a.height(),
            a.width()
        )));
    }
    if !opts.data_range.is_finite() || opts.data_range <= 0.0 {
        return Err(Error::argument(format!(
            "bad data range {}",
            opts.data_range
        )));
    }
    if let Some(s) = opts.gaussian_sigma {
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::argument(format!("bad window sigma {s}")));
        }
    }
    let weights = {
        let mut grid = vec![0.0; w * w];
        match opts.gaussian_sigma {
            None => grid.iter_mut().for_each(|g| *g = 1.0 / (w * w) as f64),
            Some(sigma) => {
                let c = (w as f64 - 1.0) / 2.0;
                let mut total = 0.0;
                for di in 0..w {
                    for dj in 0..w {
                        let (x, y) = (di as f64 - c, dj as f64 - c);
                        let g = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
                        grid[di * w + dj] = g;
                        total += g;
                    }
                }
                grid.iter_mut().for_each(|g| *g /= total);
            }
        }
        grid
    };
    let c1 = (opts.k1 * opts.data_range).powi(2);
    let c2 = (opts.k2 * opts.data_range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..a.channels() {
        for i0 in 0..=(a.height() - w) {
            for j0 in 0..=(a.width() - w) {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..w {
                    for dj in 0..w {
                        let wt = weights[di * w + dj];
                        let x = a.get(i0 + di, j0 + dj, ch);
                        let y = b.get(i0 + di, j0 + dj, ch);
                        mx += wt * x;
                        my += wt * y;
                        sxx += wt * x * x;
                        syy += wt * y * y;
                        sxy += wt * x * y;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Squared 2-Wasserstein distance between Gaussian fits of two feature
/// sets: |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
/// Covariances are unbiased; when a set is no larger than the feature
/// dimension its covariance gets tr-scaled diagonal shrinkage.
pub fn frechet_gaussian(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = gaussian_fit(set_a)?;
    let (mu_b, cov_b) = gaussian_fit(set_b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::argument("feature dimensions differ between sets"));
    }
    let mean_term: f64 = mu_a
        .iter()
        .zip(mu_b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sqrt_a = psd_sqrt(&cov_a)?;
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let cross = psd_sqrt(&inner)?;
    let trace_term = cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    let d2 = mean_term + trace_term;
    if !d2.is_finite() {
        return Err(Error::numeric("distance computation overflowed"));
    }
    if d2 < -1e-6 {
        return Err(Error::numeric(format!(
            "distance came out negative ({d2}); covariances are ill-conditioned"
        )));
    }
    Ok(d2.max(0.0))
}

fn gaussian_fit(set: &[Vec<f64>]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if set.len() < 2 {
        return Err(Error::argument("need at least two feature vectors"));
    }
    let dim = set[0].len();
    if dim == 0 {
        return Err(Error::argument("feature vectors are empty"));
    }
    if set.iter().any(|v| v.len() != dim) {
        return Err(Error::argument("feature vectors have mixed dimensions"));
    }
    if set.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::argument("features must be finite"));
    }
    let n = set.len() as f64;
    let mut mu = vec![0.0; dim];
    for v in set {
        for (m, x) in mu.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        for r in 0..dim {
            let dr = v[r] - mu[r];
            for c in 0..dim {
                cov[(r, c)] += dr * (v[c] - mu[c]) / (n - 1.0);
            }
        }
    }
    if set.len() <= dim {
        let eps = 1e-6 * cov.trace() / dim as f64;
        for d in 0..dim {
            cov[(d, d)] += eps;
        }
    }
    Ok((mu, cov))
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues only
/// slightly negative (roundoff) are clamped, genuinely negative ones are an
/// error.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
        .max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-8 * scale {
            return Err(Error::numeric(format!(
                "matrix is not positive semidefinite (eigenvalue {v})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn group_assignment_terciles() {
        let g = GroupAssignment::from_products(&[5.0, 1.0, 3.0, 9.0, 2.0, 7.0]).unwrap();
        // ascending: classes 1,4,2,0,5,3 -> f,f,c,c,r,r
        assert_eq!(g.group(1), Some(Group::Frequent));
        assert_eq!(g.group(4), Some(Group::Frequent));
        assert_eq!(g.group(2), Some(Group::Common));
        assert_eq!(g.group(0), Some(Group::Common));
        assert_eq!(g.group(5), Some(Group::Rare));
        assert_eq!(g.group(3), Some(Group::Rare));

        let g2 = GroupAssignment::from_products(&[2.0, 1.0]).unwrap();
        assert_eq!(g2.group(1), Some(Group::Frequent));
        assert_eq!(g2.group(0), Some(Group::Common));
    }

    #[test]
    fn grouped_miou_hand_case() {
        let truth = SemanticMap::from_cells(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        let pred = SemanticMap::from_cells(2, 2, 2, vec![0, 1, 1, 1]).unwrap();
        // both classes placed in one group: reuse of the 7/12 oracle
        let g = GroupAssignment::from_groups(vec![Group::Frequent, Group::Frequent]).unwrap();
        let r = grouped_miou(&pred, &truth, &g, None).unwrap();
        assert!((r.all - 7.0 / 12.0).abs() < 1e-12);
        assert!((r.frequent.unwrap() - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(r.common, None);
        assert_eq!(r.rare, None);
    }

    #[test]
    fn grouped_miou_identity_and_bounds() {
        let mut m = SemanticMap::filled(4, 4, 3, 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                m.set(i, j, ((i + j) % 3) as u16);
            }
        }
        let g = GroupAssignment::from_products(&[1.0, 2.0, 3.0]).unwrap();
        let r = grouped_miou(&m, &m, &g, None).unwrap();
        assert_eq!(r.all, 1.0);
        assert_eq!(r.frequent, Some(1.0));
        assert_eq!(r.common, Some(1.0));
        assert_eq!(r.rare, Some(1.0));

        // `all` sits inside the span of the per-group values
        let mut pred = m.clone();
        pred.set(0, 0, 1);
        pred.set(1, 1, 0);
        let r = grouped_miou(&pred, &m, &g, None).unwrap();
        let present: Vec<f64> = [r.frequent, r.common, r.rare]
            .iter()
            .flatten()
            .copied()
            .collect();
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(r.all >= lo - 1e-12 && r.all <= hi + 1e-12);
    }

    #[test]
    fn grouped_miou_validates_class_count() {
        let m = SemanticMap::filled(2, 2, 3, 0).unwrap();
        let g = GroupAssignment::from_products(&[1.0, 2.0]).unwrap();
        assert!(grouped_miou(&m, &m, &g, None).is_err());
    }

    #[test]
    fn psnr_oracles() {
        let a = ToyImage::from_values(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);

        let b = ToyImage::from_values(2, 2, 1, vec![1.1, 1.2, 1.3, 1.4]).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 0.0).abs() < 1e-12);

        let c = ToyImage::from_values(2, 2, 1, vec![0.6, 0.7, 0.8, 0.9]).unwrap();
        // constant difference 0.5, range 1: 10 log10(4)
        assert!((psnr(&a, &c, 1.0).unwrap() - 6.020599913279624).abs() < 1e-12);

        let d = ToyImage::zeros(2, 3, 1).unwrap();
        assert!(psnr(&a, &d, 1.0).is_err());
        assert!(psnr(&a, &c, 0.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let mut s = Stream::named(5, "psnr");
        let base = ToyImage::zeros(8, 8, 1).unwrap();
        let noise: Vec<f64> = (0..64).map(|_| s.normal()).collect();
        let at = |amp: f64| {
            let img = ToyImage::from_values(8, 8, 1, noise.iter().map(|n| amp * n).collect())
                .unwrap();
            psnr(&base, &img, 1.0).unwrap()
        };
        let (p1, p2, p3) = (at(0.01), at(0.1), at(1.0));
        assert!(p1 > p2 && p2 > p3, "{p1} {p2} {p3}");
    }

    #[test]
    fn ssim_basics() {
        let mut s = Stream::named(6, "ssim");
        let vals: Vec<f64> = (0..100).map(|_| 0.5 + 0.2 * s.normal()).collect();
        let a = ToyImage::from_values(10, 10, 1, vals.clone()).unwrap();
        let opts = SsimOptions::default();
        assert!((ssim(&a, &a, &opts).unwrap() - 1.0).abs() < 1e-12);

        let shifted: Vec<f64> = vals.iter().map(|v| v + 0.1 * s.normal()).collect();
        let b = ToyImage::from_values(10, 10, 1, shifted).unwrap();
        let ab = ssim(&a, &b, &opts).unwrap();
        let ba = ssim(&b, &a, &opts).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_single_window_matches_direct_formula() {
        let a = ToyImage::from_values(
            4,
            4,
            1,
            vec![
                0.1, 0.3, 0.5, 0.2, 0.7, 0.4, 0.6, 0.1, 0.2, 0.9, 0.3, 0.5, 0.8, 0.6, 0.4, 0.2,
            ],
        )
        .unwrap();
        let b = ToyImage::from_values(
            4,
            4,
            1,
            vec![
                0.2, 0.2, 0.6, 0.1, 0.6, 0.5, 0.5, 0.2, 0.3, 0.8, 0.4, 0.4, 0.7, 0.7, 0.3, 0.3,
            ],
        )
        .unwrap();
        let opts = SsimOptions {
            window: 4,
            ..SsimOptions::default()
        };
        let got = ssim(&a, &b, &opts).unwrap();

        let n = 16.0;
        let mx: f64 = a.values().iter().sum::<f64>() / n;
        let my: f64 = b.values().iter().sum::<f64>() / n;
        let vx: f64 = a.values().iter().map(|x| x * x).sum::<f64>() / n - mx * mx;
        let vy: f64 = b.values().iter().map(|y| y * y).sum::<f64>() / n - my * my;
        let cov: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / n
            - mx * my;
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let want = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn ssim_window_and_options_validation() {
        let a = ToyImage::zeros(4, 4, 1).unwrap();
        let too_big = SsimOptions {
            window: 5,
            ..SsimOptions::default()
        };
        assert!(ssim(&a, &a, &too_big).is_err());
        let gaussian = SsimOptions {
            window: 3,
            gaussian_sigma: Some(1.5),
            ..SsimOptions::default()
        };
        assert!((ssim(&a, &a, &gaussian).unwrap() - 1.0).abs() < 1e-12);
        let bad_sigma = SsimOptions {
            window: 3,
            gaussian_sigma: Some(0.0),
            ..SsimOptions::default()
        };
        assert!(ssim(&a, &a, &bad_sigma).is_err());
    }

    fn random_set(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut s = Stream::named(seed, "frechet");
        (0..n)
            .map(|_| (0..dim).map(|_| s.normal()).collect())
            .collect()
    }

    #[test]
    fn frechet_identical_sets_vanish() {
        let a = random_set(40, 3, 1);
        assert!(frechet_gaussian(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn frechet_mean_shift_equals_squared_norm() {
        let a = random_set(60, 3, 2);
        let d = [0.5, -1.0, 2.0];
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|v| v.iter().zip(&d).map(|(x, s)| x + s).collect())
            .collect();
        let want: f64 = d.iter().map(|x| x * x).sum();
        let got = frechet_gaussian(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        // sample stats exactly mean 0/var 1 and mean 1/var 4
        let s = 0.5f64.sqrt();
        let a = vec![vec![-s], vec![s]];
        let r = 2.0f64.sqrt();
        let b = vec![vec![1.0 - r], vec![1.0 + r]];
        // (0-1)^2 + (1 + 4 - 2*2) = 2, modulo the small-set shrinkage
        let got = frechet_gaussian(&a, &b).unwrap();
        assert!((got - 2.0).abs() < 1e-4, "{got}");
    }

    #[test]
    fn frechet_symmetry_and_rotation_invariance() {
        let a = random_set(50, 3, 3);
        let b: Vec<Vec<f64>> = random_set(50, 3, 4)
            .into_iter()
            .map(|v| v.iter().map(|x| 0.8 * x + 0.3).collect())
            .collect();
        let ab = frechet_gaussian(&a, &b).unwrap();
        let ba = frechet_gaussian(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8);

        // rotate both sets by a common orthogonal map (Givens on axes 0,2)
        let (c, s) = (0.6f64, 0.8f64);
        let rot = |v: &Vec<f64>| vec![c * v[0] - s * v[2], v[1], s * v[0] + c * v[2]];
        let ra: Vec<Vec<f64>> = a.iter().map(rot).collect();
        let rb: Vec<Vec<f64>> = b.iter().map(rot).collect();
        let rotated = frechet_gaussian(&ra, &rb).unwrap();
        assert!((rotated - ab).abs() < 1e-6, "{rotated} vs {ab}");
    }

    #[test]
    fn frechet_input_validation() {
        assert!(frechet_gaussian(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(frechet_gaussian(
            &[vec![1.0, 2.0], vec![2.0, 1.0]],
            &[vec![1.0], vec![2.0]]
        )
        .is_err());
        assert!(frechet_gaussian(
            &[vec![f64::NAN], vec![1.0]],
            &[vec![0.0], vec![1.0]]
        )
        .is_err());
        // tiny sets still work thanks to shrinkage
        let small = frechet_gaussian(
            &[vec![0.0, 0.0], vec![1.0, 1.0]],
            &[vec![0.5, 0.0], vec![0.0, 0.5]],
        );
        assert!(small.is_ok());
    }
}
