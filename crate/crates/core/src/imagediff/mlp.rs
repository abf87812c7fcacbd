use std::path::Path;

use crate::error::{Error, Result};
use crate::fsx::atomic_write;
use crate::imagediff::{Denoiser, DenoiserOutput, ToyImage};
use crate::labelmap::SemanticMap;
use crate::rng::Stream;
use crate::schedule::ImageSchedule;

/// Per-pixel MLP denoiser.
///
/// Each pixel is handled independently from the features
/// `[x_t, emb(label), t/T, sqrt(alpha_bar_t)]` through one tanh hidden layer.
/// The label embedding table has a row for every class plus one for MASK.
/// With `learned_variance` the head doubles: the second half goes through a
/// final tanh so the variance logit stays inside (-1, 1).
///
/// Deliberately tiny; the point is an end-to-end trainable model whose
/// gradients can be checked against finite differences, not capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    channels: usize,
    num_classes: u16,
    emb_dim: usize,
    hidden: usize,
    learned_variance: bool,
    emb: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Gradient accumulator with the same shapes as [`MlpDenoiser`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub emb: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub(crate) struct PixelCache {
    z: Vec<f64>,
    h: Vec<f64>,
    pub eps: Vec<f64>,
    pub var_logit: Option<Vec<f64>>,
    label: u16,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    version: u32,
    flavor: String,
    channels: usize,
    num_classes: u16,
    emb_dim: usize,
    hidden: usize,
    learned_variance: bool,
    param_count: usize,
    dtype: String,
}

impl MlpDenoiser {
    pub fn new(
        channels: usize,
        num_classes: u16,
        emb_dim: usize,
        hidden: usize,
        learned_variance: bool,
        stream: &Stream,
    ) -> Result<Self> {
        if channels == 0 || emb_dim == 0 || hidden == 0 || num_classes == 0 {
            return Err(Error::argument("all model dimensions must be positive"));
        }
        let in_dim = channels + emb_dim + 2;
        let out_dim = channels * if learned_variance { 2 } else { 1 };
        let mut init = stream.fork_named("init");
        let scaled = |s: &mut Stream, n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| scale * s.normal()).collect()
        };
        let emb = scaled(&mut init, (num_classes as usize + 1) * emb_dim, 0.1);
        let w1 = scaled(&mut init, hidden * in_dim, 1.0 / (in_dim as f64).sqrt());
        let b1 = vec![0.0; hidden];
        // small head init: the model starts near eps = 0, var logit = 0
        let w2 = scaled(&mut init, out_dim * hidden, 0.1 / (hidden as f64).sqrt());
        let b2 = vec![0.0; out_dim];
        Ok(Self {
            channels,
            num_classes,
            emb_dim,
            hidden,
            learned_variance,
            emb,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn learned_variance(&self) -> bool {
        self.learned_variance
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    fn in_dim(&self) -> usize {
        self.channels + self.emb_dim + 2
    }

    fn out_dim(&self) -> usize {
        self.channels * if self.learned_variance { 2 } else { 1 }
    }

    fn section_sizes(&self) -> [usize; 5] {
        [
            (self.num_classes as usize + 1) * self.emb_dim,
            self.hidden * self.in_dim(),
            self.hidden,
            self.out_dim() * self.hidden,
            self.out_dim(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.section_sizes().iter().sum()
    }

    fn sections(&self) -> [&[f64]; 5] {
        [&self.emb, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn sections_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.emb,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    /// Flat parameter order: emb, w1, b1, w2, b2.
    pub fn param(&self, mut idx: usize) -> f64 {
        for sec in self.sections() {
            if idx < sec.len() {
                return sec[idx];
            }
            idx -= sec.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for sec in self.sections_mut() {
            if idx < sec.len() {
                sec[idx] = value;
                return;
            }
            idx -= sec.len();
        }
        panic!("parameter index out of range");
    }

    pub fn sgd_step(&mut self, grads: &MlpGrads, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::argument(format!("bad learning rate {lr}")));
        }
        let gs = [&grads.emb, &grads.w1, &grads.b1, &grads.w2, &grads.b2];
        for (sec, g) in self.sections_mut().into_iter().zip(gs) {
            if sec.len() != g.len() {
                return Err(Error::argument("gradient shapes do not match the model"));
            }
            for (p, gi) in sec.iter_mut().zip(g.iter()) {
                *p -= lr * gi;
            }
        }
        Ok(())
    }

    pub(crate) fn pixel_forward(
        &self,
        x: &[f64],
        label: u16,
        t: usize,
        sched: &ImageSchedule,
    ) -> PixelCache {
        let t_max = sched.num_steps();
        let mut z = Vec::with_capacity(self.in_dim());
        z.extend_from_slice(x);
        let e0 = label as usize * self.emb_dim;
        z.extend_from_slice(&self.emb[e0..e0 + self.emb_dim]);
        z.push(t as f64 / t_max as f64);
        z.push(sched.alpha_bar(t).sqrt());

        let mut h = Vec::with_capacity(self.hidden);
        for k in 0..self.hidden {
            let row = &self.w1[k * self.in_dim()..(k + 1) * self.in_dim()];
            let a: f64 = row.iter().zip(&z).map(|(w, zi)| w * zi).sum::<f64>() + self.b1[k];
            h.push(a.tanh());
        }

        let mut o = Vec::with_capacity(self.out_dim());
        for r in 0..self.out_dim() {
            let row = &self.w2[r * self.hidden..(r + 1) * self.hidden];
            o.push(row.iter().zip(&h).map(|(w, hi)| w * hi).sum::<f64>() + self.b2[r]);
        }
        let eps = o[..self.channels].to_vec();
        let var_logit = if self.learned_variance {
            Some(o[self.channels..].iter().map(|v| v.tanh()).collect())
        } else {
            None
        };
        PixelCache {
            z,
            h,
            eps,
            var_logit,
            label,
        }
    }

    /// Accumulate parameter gradients for one pixel given upstream
    /// derivatives with respect to `eps` and (if present) the var logit.
    pub(crate) fn pixel_backward(
        &self,
        cache: &PixelCache,
        d_eps: &[f64],
        d_var: Option<&[f64]>,
        grads: &mut MlpGrads,
    ) {
        let out_dim = self.out_dim();
        let mut d_o = vec![0.0; out_dim];
        d_o[..self.channels].copy_from_slice(d_eps);
        if let (Some(dv), Some(v)) = (d_var, cache.var_logit.as_ref()) {
            for ch in 0..self.channels {
                d_o[self.channels + ch] = dv[ch] * (1.0 - v[ch] * v[ch]);
            }
        }

        let mut d_h = vec![0.0; self.hidden];
        for r in 0..out_dim {
            grads.b2[r] += d_o[r];
            let row = r * self.hidden;
            for k in 0..self.hidden {
                grads.w2[row + k] += d_o[r] * cache.h[k];
                d_h[k] += d_o[r] * self.w2[row + k];
            }
        }

        let in_dim = self.in_dim();
        let mut d_z = vec![0.0; in_dim];
        for k in 0..self.hidden {
            let d_a = d_h[k] * (1.0 - cache.h[k] * cache.h[k]);
            grads.b1[k] += d_a;
            let row = k * in_dim;
            for i in 0..in_dim {
                grads.w1[row + i] += d_a * cache.z[i];
                d_z[i] += d_a * self.w1[row + i];
            }
        }

        let e0 = cache.label as usize * self.emb_dim;
        for e in 0..self.emb_dim {
            grads.emb[e0 + e] += d_z[self.channels + e];
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            version: 1,
            flavor: "mlp".to_string(),
            channels: self.channels,
            num_classes: self.num_classes,
            emb_dim: self.emb_dim,
            hidden: self.hidden,
            learned_variance: self.learned_variance,
            param_count: self.param_count(),
            dtype: "f32-le".to_string(),
        };
        let mut out = serde_json::to_string(&header)
            .map_err(|e| Error::format(e.to_string()))?
            .into_bytes();
        out.push(b'\n');
        for sec in self.sections() {
            for &p in sec {
                let f = p as f32;
                if !f.is_finite() {
                    return Err(Error::argument(format!(
                        "parameter {p} does not fit a finite f32"
                    )));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::truncation("checkpoint header unterminated"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::format(format!("bad checkpoint header: {e}")))?;
        if header.version != 1 {
            return Err(Error::format(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }
        if header.flavor != "mlp" {
            return Err(Error::format(format!(
                "unexpected checkpoint flavor {:?}",
                header.flavor
            )));
        }
        if header.dtype != "f32-le" {
            return Err(Error::format(format!(
                "unsupported checkpoint dtype {:?}",
                header.dtype
            )));
        }
        let mut model = Self {
            channels: header.channels,
            num_classes: header.num_classes,
            emb_dim: header.emb_dim,
            hidden: header.hidden,
            learned_variance: header.learned_variance,
            emb: Vec::new(),
            w1: Vec::new(),
            b1: Vec::new(),
            w2: Vec::new(),
            b2: Vec::new(),
        };
        if header.channels == 0
            || header.emb_dim == 0
            || header.hidden == 0
            || header.num_classes == 0
        {
            return Err(Error::format("checkpoint header has zero dimensions"));
        }
        let count = model.param_count();
        if header.param_count != count {
            return Err(Error::corruption(format!(
                "header declares {} parameters, shapes need {count}",
                header.param_count
            )));
        }
        let payload = &bytes[nl + 1..];
        if payload.len() < count * 4 {
            return Err(Error::truncation(format!(
                "checkpoint payload has {} bytes, expected {}",
                payload.len(),
                count * 4
            )));
        }
        if payload.len() > count * 4 {
            return Err(Error::corruption(format!(
                "checkpoint payload has {} trailing bytes",
                payload.len() - count * 4
            )));
        }
        let mut values = Vec::with_capacity(count);
        for (k, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::corruption(format!(
                    "non-finite parameter at index {k}"
                )));
            }
            values.push(v as f64);
        }
        let sizes = model.section_sizes();
        let mut off = 0;
        let mut take = |n: usize| {
            let s = values[off..off + n].to_vec();
            off += n;
            s
        };
        model.emb = take(sizes[0]);
        model.w1 = take(sizes[1]);
        model.b1 = take(sizes[2]);
        model.w2 = take(sizes[3]);
        model.b2 = take(sizes[4]);
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }
}

impl MlpGrads {
    pub fn zeros_like(model: &MlpDenoiser) -> Self {
        let s = model.section_sizes();
        Self {
            emb: vec![0.0; s[0]],
            w1: vec![0.0; s[1]],
            b1: vec![0.0; s[2]],
            w2: vec![0.0; s[3]],
            b2: vec![0.0; s[4]],
        }
    }

    fn sections(&self) -> [&[f64]; 5] {
        [&self.emb, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Same flat order as [`MlpDenoiser::param`].
    pub fn get(&self, mut idx: usize) -> f64 {
        for sec in self.sections() {
            if idx < sec.len() {
                return sec[idx];
            }
            idx -= sec.len();
        }
        panic!("gradient index out of range");
    }

    pub fn scale(&mut self, s: f64) {
        for sec in [
            &mut self.emb,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ] {
            for g in sec.iter_mut() {
                *g *= s;
            }
        }
    }
}

impl Denoiser for MlpDenoiser {
    fn predict(
        &self,
        x_t: &ToyImage,
        y: &SemanticMap,
        t: usize,
        sched: &ImageSchedule,
    ) -> Result<DenoiserOutput> {
        if x_t.channels() != self.channels {
            return Err(Error::argument(format!(
                "model expects {} channels, image has {}",
                self.channels,
                x_t.channels()
            )));
        }
        if y.height() != x_t.height() || y.width() != x_t.width() {
            return Err(Error::argument("label map and image shapes differ"));
        }
        if y.num_classes() != self.num_classes {
            return Err(Error::argument(format!(
                "model expects {} classes, map has {}",
                self.num_classes,
                y.num_classes()
            )));
        }
        if t == 0 || t > sched.num_steps() {
            return Err(Error::argument(format!(
                "t = {t} outside 1..={}",
                sched.num_steps()
            )));
        }
        let (h, w, chs) = (x_t.height(), x_t.width(), x_t.channels());
        let mut eps = ToyImage::zeros(h, w, chs)?;
        let mut var = if self.learned_variance {
            Some(ToyImage::zeros(h, w, chs)?)
        } else {
            None
        };
        for i in 0..h {
            for j in 0..w {
                let base = x_t.index(i, j, 0);
                let cache = self.pixel_forward(
                    &x_t.values()[base..base + chs],
                    y.get(i, j),
                    t,
                    sched,
                );
                eps.values_mut()[base..base + chs].copy_from_slice(&cache.eps);
                if let (Some(v), Some(cv)) = (var.as_mut(), cache.var_logit.as_ref()) {
                    v.values_mut()[base..base + chs].copy_from_slice(cv);
                }
            }
        }
        Ok(DenoiserOutput {
            eps,
            var_logit: var,
        })
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn num_classes(&self) -> u16 {
        self.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_image_schedule, ImageScheduleKind};

    fn sched() -> ImageSchedule {
        build_image_schedule(
            8,
            ImageScheduleKind::LinearBeta {
                beta_start: 0.02,
                beta_end: 0.35,
            },
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let model = MlpDenoiser::new(2, 3, 4, 5, true, &Stream::named(1, "ckpt")).unwrap();
        let bytes = model.to_bytes().unwrap();
        let back = MlpDenoiser::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.param_count(), model.param_count());
    }

    #[test]
    fn checkpoint_parsing_is_strict() {
        let model = MlpDenoiser::new(1, 2, 2, 3, false, &Stream::named(2, "ckpt")).unwrap();
        let good = model.to_bytes().unwrap();

        let mut short = good.clone();
        short.truncate(good.len() - 2);
        assert!(matches!(
            MlpDenoiser::from_bytes(&short),
            Err(Error::Truncation(_))
        ));

        let mut long = good.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            MlpDenoiser::from_bytes(&long),
            Err(Error::Corruption(_))
        ));

        let mut nan = good;
        let tail = nan.len() - 4;
        nan[tail..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            MlpDenoiser::from_bytes(&nan),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn pixel_gradients_match_finite_differences() {
        let mut model = MlpDenoiser::new(2, 2, 3, 4, true, &Stream::named(3, "grad")).unwrap();
        let sched = sched();
        let x = [0.4, -0.7];
        let label = 2u16; // MASK row of the embedding
        let t = 5;
        // arbitrary fixed upstream derivatives
        let d_eps = [0.8, -0.3];
        let d_var = [0.25, 0.6];

        let loss = |m: &MlpDenoiser| {
            let c = m.pixel_forward(&x, label, t, &sched);
            let v = c.var_logit.as_ref().unwrap();
            c.eps[0] * d_eps[0]
                + c.eps[1] * d_eps[1]
                + v[0] * d_var[0]
                + v[1] * d_var[1]
        };

        let mut grads = MlpGrads::zeros_like(&model);
        let cache = model.pixel_forward(&x, label, t, &sched);
        model.pixel_backward(&cache, &d_eps, Some(&d_var), &mut grads);

        let h = 1e-6;
        for idx in 0..model.param_count() {
            let orig = model.param(idx);
            model.set_param(idx, orig + h);
            let up = loss(&model);
            model.set_param(idx, orig - h);
            let down = loss(&model);
            model.set_param(idx, orig);
            let fd = (up - down) / (2.0 * h);
            let got = grads.get(idx);
            let scale = fd.abs().max(got.abs()).max(1e-8);
            assert!(
                (fd - got).abs() / scale < 1e-5,
                "param {idx}: fd {fd} vs analytic {got}"
            );
        }
    }

    #[test]
    fn unused_embedding_rows_get_no_gradient() {
        let model = MlpDenoiser::new(1, 3, 2, 3, false, &Stream::named(4, "emb")).unwrap();
        let sched = sched();
        let mut grads = MlpGrads::zeros_like(&model);
        let cache = model.pixel_forward(&[0.1], 1, 3, &sched);
        model.pixel_backward(&cache, &[1.0], None, &mut grads);
        // rows 0, 2, 3 untouched
        for row in [0usize, 2, 3] {
            for e in 0..2 {
                assert_eq!(grads.emb[row * 2 + e], 0.0);
            }
        }
        assert!(grads.emb[2..4].iter().any(|g| *g != 0.0));
    }

    #[test]
    fn predict_validates_shapes() {
        let model = MlpDenoiser::new(1, 2, 2, 3, false, &Stream::named(5, "shape")).unwrap();
        let sched = sched();
        let x = ToyImage::zeros(2, 2, 1).unwrap();
        let y = SemanticMap::filled(2, 2, 2, 0).unwrap();
        assert!(model.predict(&x, &y, 3, &sched).is_ok());
        let y_bad = SemanticMap::filled(2, 2, 3, 0).unwrap();
        assert!(model.predict(&x, &y_bad, 3, &sched).is_err());
        let x_bad = ToyImage::zeros(2, 2, 2).unwrap();
        assert!(model.predict(&x_bad, &y, 3, &sched).is_err());
        assert!(model.predict(&x, &y, 0, &sched).is_err());
    }

    #[test]
    fn sgd_moves_parameters() {
        let mut model = MlpDenoiser::new(1, 2, 2, 3, false, &Stream::named(6, "sgd")).unwrap();
        let before = model.param(0);
        let mut grads = MlpGrads::zeros_like(&model);
        grads.emb[0] = 2.0;
        model.sgd_step(&grads, 0.5).unwrap();
        assert!((model.param(0) - (before - 1.0)).abs() < 1e-12);
        assert!(model.sgd_step(&grads, -1.0).is_err());
    }
}
