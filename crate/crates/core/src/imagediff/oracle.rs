use crate::error::{Error, Result};
use crate::imagediff::toy::ToyDataSpec;
use crate::imagediff::{Denoiser, DenoiserOutput, ToyImage};
use crate::labelmap::SemanticMap;
use crate::schedule::ImageSchedule;

/// Exact conditional denoiser for the toy data model.
///
/// Under the spec's generative model the posterior over `x_0` given
/// `(x_t, class c)` is Gaussian, so `E[x_0 | x_t, c]` has a closed form; a
/// MASK cell marginalizes that over classes with evidence-reweighted prior
/// mass. The noise estimate is then read off the forward identity. No
/// training, no parameters — this is the reference implementation the
/// learned models are judged against.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    spec: ToyDataSpec,
    prior: Vec<f64>,
}

impl OracleDenoiser {
    pub fn new(spec: ToyDataSpec) -> Result<Self> {
        spec.validate()?;
        let prior = spec.prior();
        Ok(Self { spec, prior })
    }

    /// Override the MASK-cell mixture prior (e.g. with corpus frequencies)
    /// while keeping the spec's geometry and palette.
    pub fn with_prior(spec: ToyDataSpec, prior: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if prior.len() != spec.num_classes as usize {
            return Err(Error::argument(format!(
                "prior has {} entries for {} classes",
                prior.len(),
                spec.num_classes
            )));
        }
        if prior.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::argument("prior weights must be >= 0"));
        }
        let total: f64 = prior.iter().sum();
        if total <= 0.0 {
            return Err(Error::argument("prior must have positive mass"));
        }
        let prior = prior.iter().map(|w| w / total).collect();
        Ok(Self { spec, prior })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(ToyDataSpec::from_json(text)?)
    }

    pub fn spec(&self) -> &ToyDataSpec {
        &self.spec
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// `E[x_0 | x_t, class]` for one pixel, written into `out`.
    fn conditional_mean(&self, x: &[f64], class: usize, sa: f64, kappa: f64, out: &mut [f64]) {
        let mean = &self.spec.class_means[class];
        if self.spec.sigma0 == 0.0 {
            out.copy_from_slice(mean);
            return;
        }
        let s2 = self.spec.sigma0 * self.spec.sigma0;
        let var_t = kappa - sa * sa * s2;
        for ch in 0..x.len() {
            out[ch] = (sa * s2 * x[ch] + var_t * mean[ch]) / kappa;
        }
    }

    /// Posterior class weights for a MASK pixel: prior times Gaussian
    /// evidence `N(x_t; sqrt(ab) m_c, kappa I)`, normalized in log space.
    fn mask_weights(&self, x: &[f64], sa: f64, kappa: f64) -> Vec<f64> {
        let c = self.spec.num_classes as usize;
        let mut logw = Vec::with_capacity(c);
        for class in 0..c {
            let mean = &self.spec.class_means[class];
            let mut sq = 0.0;
            for ch in 0..x.len() {
                let d = x[ch] - sa * mean[ch];
                sq += d * d;
            }
            logw.push(self.prior[class].ln() - sq / (2.0 * kappa));
        }
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut weights: Vec<f64> = logw
            .iter()
            .map(|lw| {
                let w = (lw - top).exp();
                total += w;
                w
            })
            .collect();
        for w in &mut weights {
            *w /= total;
        }
        weights
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(
        &self,
        x_t: &ToyImage,
        y: &SemanticMap,
        t: usize,
        sched: &ImageSchedule,
    ) -> Result<DenoiserOutput> {
        if x_t.height() != self.spec.height
            || x_t.width() != self.spec.width
            || x_t.channels() != self.spec.channels
        {
            return Err(Error::argument("x_t does not match the data spec"));
        }
        if y.height() != self.spec.height
            || y.width() != self.spec.width
            || y.num_classes() != self.spec.num_classes
        {
            return Err(Error::argument("label map does not match the data spec"));
        }
        if t == 0 || t > sched.num_steps() {
            return Err(Error::argument(format!(
                "t = {t} outside 1..={}",
                sched.num_steps()
            )));
        }
        let ab = sched.alpha_bar(t);
        let sa = ab.sqrt();
        let var_t = 1.0 - ab;
        if var_t <= 0.0 {
            return Err(Error::degenerate(format!(
                "alpha_bar({t}) = {ab} leaves no noise to estimate"
            )));
        }
        let sv = var_t.sqrt();
        let kappa = ab * self.spec.sigma0 * self.spec.sigma0 + var_t;
        let (h, w, chs) = (x_t.height(), x_t.width(), x_t.channels());
        let mut eps = ToyImage::zeros(h, w, chs)?;
        let mut x0_mean = vec![0.0; chs];
        let mut cond = vec![0.0; chs];
        let mask = y.mask_value();
        for i in 0..h {
            for j in 0..w {
                let base = x_t.index(i, j, 0);
                let x = &x_t.values()[base..base + chs];
                let label = y.get(i, j);
                if label == mask {
                    let weights = self.mask_weights(x, sa, kappa);
                    x0_mean.iter_mut().for_each(|v| *v = 0.0);
                    for (class, &wt) in weights.iter().enumerate() {
                        if wt == 0.0 {
                            continue;
                        }
                        self.conditional_mean(x, class, sa, kappa, &mut cond);
                        for ch in 0..chs {
                            x0_mean[ch] += wt * cond[ch];
                        }
                    }
                } else {
                    self.conditional_mean(x, label as usize, sa, kappa, &mut x0_mean);
                }
                for ch in 0..chs {
                    eps.values_mut()[base + ch] = (x[ch] - sa * x0_mean[ch]) / sv;
                }
            }
        }
        Ok(DenoiserOutput {
            eps,
            var_logit: None,
        })
    }

    fn channels(&self) -> usize {
        self.spec.channels
    }

    fn num_classes(&self) -> u16 {
        self.spec.num_classes
    }
}
