//! Semantic-intent projection, fusion with the structural intent, and
//! alignment losses between the two.
//!
//! Pooled text vectors are mapped into the backbone space by one shared
//! affine map. The session vector is `[g, ē_explicit, ē_latent] · W`, with
//! learned no-intent vectors standing in for empty buckets. Alignment
//! losses return gradients for every input vector so the trainer can push
//! them back through the backbone and the projection.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::outer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `d_text × d`
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// `3d × d`, acting on `[g, ē_explicit, ē_latent]`.
    pub fuse_w: Array2<f64>,
    pub no_intent_explicit: Array1<f64>,
    pub no_intent_latent: Array1<f64>,
}

crate::impl_param_set!(FusionParams {
    proj_w,
    proj_b,
    fuse_w,
    no_intent_explicit,
    no_intent_latent,
});

impl FusionParams {
    /// The structural block of `fuse_w` starts as the identity so the fused
    /// model initially scores like the backbone alone.
    pub fn init(d_text: usize, d: usize, seed: u64) -> Self {
        let mut rng = crate::seed::rng(seed, "fusion-init");
        let bp = 1.0 / (d_text.max(1) as f64).sqrt();
        let bf = 1.0 / ((3 * d) as f64).sqrt();
        let proj_w = Array2::from_shape_simple_fn((d_text, d), || rng.random_range(-bp..bp));
        let proj_b = Array1::zeros(d);
        let mut fuse_w = Array2::from_shape_simple_fn((3 * d, d), || rng.random_range(-bf..bf));
        fuse_w.slice_mut(s![..d, ..]).assign(&Array2::eye(d));
        Self {
            proj_w,
            proj_b,
            fuse_w,
            no_intent_explicit: Array1::zeros(d),
            no_intent_latent: Array1::zeros(d),
        }
    }

    pub fn d(&self) -> usize {
        self.proj_w.ncols()
    }

    pub fn d_text(&self) -> usize {
        self.proj_w.nrows()
    }

    /// `ē = e · w + b`
    pub fn project(&self, e: ArrayView1<f64>) -> Result<Array1<f64>> {
        if e.len() != self.d_text() {
            return Err(Error::Validation(format!(
                "intent vector has width {}, projection expects {}",
                e.len(),
                self.d_text()
            )));
        }
        Ok(e.dot(&self.proj_w) + &self.proj_b)
    }

    /// `S = [g, e_explicit, e_latent] · W`
    pub fn fuse(&self, g: ArrayView1<f64>, e_explicit: ArrayView1<f64>, e_latent: ArrayView1<f64>) -> Result<Array1<f64>> {
        let d = self.d();
        if g.len() != d || e_explicit.len() != d || e_latent.len() != d {
            return Err(Error::Validation(format!("fuse expects three width-{d} vectors")));
        }
        let w = &self.fuse_w;
        Ok(g.dot(&w.slice(s![..d, ..]))
            + e_explicit.dot(&w.slice(s![d..2 * d, ..]))
            + e_latent.dot(&w.slice(s![2 * d.., ..])))
    }

    /// Input gradients of `fuse` given `∂L/∂S`, accumulating `∂L/∂W`.
    pub fn fuse_backward(
        &self,
        inputs: [ArrayView1<f64>; 3],
        d_s: ArrayView1<f64>,
        grad: &mut FusionParams,
    ) -> [Array1<f64>; 3] {
        let d = self.d();
        let w = &self.fuse_w;
        let mut out: [Array1<f64>; 3] = Default::default();
        for (k, x) in inputs.iter().enumerate() {
            let block = s![k * d..(k + 1) * d, ..];
            let mut gw = grad.fuse_w.slice_mut(block);
            gw += &outer(*x, d_s);
            out[k] = w.slice(block).dot(&d_s);
        }
        out
    }

    /// Accumulates `∂L/∂w`, `∂L/∂b` of the projection for one input.
    pub fn project_backward(e: ArrayView1<f64>, d_proj: ArrayView1<f64>, grad: &mut FusionParams) {
        grad.proj_w += &outer(e, d_proj);
        grad.proj_b += &d_proj;
    }
}

fn log_softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let m = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + x.mapv(|v| (v - m).exp()).sum().ln();
    x.mapv(|v| v - lse)
}

fn check_finite(what: &str, v: &Array1<f64>) -> Result<()> {
    crate::error::ensure_finite(what, v.as_slice().expect("contiguous"))
}

/// `KL(softmax(g) ∥ softmax(e))`.
pub fn kl_alignment(g: ArrayView1<f64>, e: ArrayView1<f64>) -> Result<f64> {
    kl_alignment_grad(g, e).map(|(l, _, _)| l)
}

/// KL loss with gradients with respect to both logit vectors.
pub fn kl_alignment_grad(g: ArrayView1<f64>, e: ArrayView1<f64>) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    if g.len() != e.len() {
        return Err(Error::Validation(format!("kl over widths {} and {}", g.len(), e.len())));
    }
    let lp = log_softmax(g);
    let lq = log_softmax(e);
    check_finite("kl structural log-probabilities", &lp)?;
    check_finite("kl semantic log-probabilities", &lq)?;
    let p = lp.mapv(f64::exp);
    let q = lq.mapv(f64::exp);
    let diff = &lp - &lq;
    let kl = (&p * &diff).sum();
    let d_g = &p * &diff.mapv(|v| v - kl);
    let d_e = &q - &p;
    Ok((kl, d_g, d_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignStrategy {
    Kl,
    Contrastive,
    InfoNce,
    DirectAu,
    None,
}

impl std::str::FromStr for AlignStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "kl" => AlignStrategy::Kl,
            "contrastive" => AlignStrategy::Contrastive,
            "infonce" => AlignStrategy::InfoNce,
            "directau" => AlignStrategy::DirectAu,
            "none" => AlignStrategy::None,
            other => return Err(Error::Config(format!("unknown alignment strategy {other:?}"))),
        })
    }
}

impl std::fmt::Display for AlignStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlignStrategy::Kl => "kl",
            AlignStrategy::Contrastive => "contrastive",
            AlignStrategy::InfoNce => "infonce",
            AlignStrategy::DirectAu => "directau",
            AlignStrategy::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub strategy: AlignStrategy,
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub margin: f64,
    /// Treat the structural intent as a constant in the alignment term.
    pub stop_grad_structural: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            strategy: AlignStrategy::Kl,
            alpha: 0.1,
            beta: 0.1,
            temperature: 0.2,
            margin: 0.5,
            stop_grad_structural: false,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be finite and ≥ 0".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// One session's vectors entering the alignment loss. A `None` bucket does
/// not contribute.
#[derive(Debug, Clone, Copy)]
pub struct AlignSample<'a> {
    pub g: ArrayView1<'a, f64>,
    pub explicit: Option<ArrayView1<'a, f64>>,
    pub latent: Option<ArrayView1<'a, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignGrad {
    pub g: Array1<f64>,
    pub explicit: Array1<f64>,
    pub latent: Array1<f64>,
}

/// Batch alignment loss `α·L_explicit + β·L_latent` and per-sample
/// gradients.
pub fn info_loss(batch: &[AlignSample<'_>], cfg: &AlignmentConfig) -> Result<(f64, Vec<AlignGrad>)> {
    cfg.validate()?;
    let d = batch.first().map_or(0, |s| s.g.len());
    let mut grads: Vec<AlignGrad> = batch
        .iter()
        .map(|_| AlignGrad {
            g: Array1::zeros(d),
            explicit: Array1::zeros(d),
            latent: Array1::zeros(d),
        })
        .collect();
    if batch.is_empty() || cfg.strategy == AlignStrategy::None {
        return Ok((0.0, grads));
    }
    let mut total = 0.0;
    for (weight, latent) in [(cfg.alpha, false), (cfg.beta, true)] {
        if weight == 0.0 {
            continue;
        }
        let idx: Vec<usize> = (0..batch.len())
            .filter(|&i| if latent { batch[i].latent.is_some() } else { batch[i].explicit.is_some() })
            .collect();
        if idx.is_empty() {
            continue;
        }
        let gs: Vec<ArrayView1<f64>> = idx.iter().map(|&i| batch[i].g).collect();
        let es: Vec<ArrayView1<f64>> = idx
            .iter()
            .map(|&i| if latent { batch[i].latent } else { batch[i].explicit }.expect("filtered"))
            .collect();
        let (loss, dg, de) = match cfg.strategy {
            AlignStrategy::Kl => kl_bucket(&gs, &es, batch.len())?,
            AlignStrategy::InfoNce => similarity_bucket(&gs, &es, |s| infonce_from_sims(s, cfg.temperature)),
            AlignStrategy::Contrastive => similarity_bucket(&gs, &es, |s| contrastive_from_sims(s, cfg.margin)),
            AlignStrategy::DirectAu => directau_bucket(&gs, &es),
            AlignStrategy::None => unreachable!(),
        };
        total += weight * loss;
        for (k, &i) in idx.iter().enumerate() {
            grads[i].g.scaled_add(weight, &dg[k]);
            let target = if latent { &mut grads[i].latent } else { &mut grads[i].explicit };
            target.scaled_add(weight, &de[k]);
        }
    }
    if cfg.stop_grad_structural {
        grads.iter_mut().for_each(|g| g.g.fill(0.0));
    }
    Ok((total, grads))
}

type BucketOut = (f64, Vec<Array1<f64>>, Vec<Array1<f64>>);

/// Sum of per-sample KL divided by the full batch size.
fn kl_bucket(gs: &[ArrayView1<f64>], es: &[ArrayView1<f64>], batch: usize) -> Result<BucketOut> {
    let scale = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut dg = Vec::with_capacity(gs.len());
    let mut de = Vec::with_capacity(gs.len());
    for (g, e) in gs.iter().zip(es) {
        let (l, a, b) = kl_alignment_grad(*g, *e)?;
        loss += l * scale;
        dg.push(a * scale);
        de.push(b * scale);
    }
    Ok((loss, dg, de))
}

fn normalize(x: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let n = x.dot(&x).sqrt().max(1e-12);
    (x.mapv(|v| v / n), n)
}

/// Gradient through `x ↦ x/‖x‖` given the gradient at the normalized point.
fn normalize_backward(unit: &Array1<f64>, norm: f64, d_unit: &Array1<f64>) -> Array1<f64> {
    let proj = unit.dot(d_unit);
    (d_unit - &(unit * proj)) / norm
}

/// Losses defined on the cosine-similarity matrix `sims[i][j] = cos(g_i, e_j)`.
fn similarity_bucket(
    gs: &[ArrayView1<f64>],
    es: &[ArrayView1<f64>],
    loss_fn: impl Fn(&Array2<f64>) -> (f64, Array2<f64>),
) -> BucketOut {
    let gn: Vec<(Array1<f64>, f64)> = gs.iter().map(|g| normalize(*g)).collect();
    let en: Vec<(Array1<f64>, f64)> = es.iter().map(|e| normalize(*e)).collect();
    let n = gs.len();
    let sims = Array2::from_shape_fn((n, n), |(i, j)| gn[i].0.dot(&en[j].0));
    let (loss, d_sims) = loss_fn(&sims);
    let dg = (0..n)
        .map(|i| {
            let mut du = Array1::zeros(gn[i].0.len());
            for j in 0..n {
                du.scaled_add(d_sims[[i, j]], &en[j].0);
            }
            normalize_backward(&gn[i].0, gn[i].1, &du)
        })
        .collect();
    let de = (0..n)
        .map(|j| {
            let mut du = Array1::zeros(en[j].0.len());
            for i in 0..n {
                du.scaled_add(d_sims[[i, j]], &gn[i].0);
            }
            normalize_backward(&en[j].0, en[j].1, &du)
        })
        .collect();
    (loss, dg, de)
}

/// Symmetric InfoNCE with in-batch negatives.
fn infonce_from_sims(sims: &Array2<f64>, temperature: f64) -> (f64, Array2<f64>) {
    let n = sims.nrows();
    let logits = sims / temperature;
    let mut d = Array2::zeros((n, n));
    let mut loss = 0.0;
    // rows: g_i against all e; columns: e_j against all g
    for i in 0..n {
        let lp = log_softmax(logits.row(i));
        loss -= lp[i] / (2.0 * n as f64);
        for j in 0..n {
            let y = if i == j { 1.0 } else { 0.0 };
            d[[i, j]] += (lp[j].exp() - y) / (2.0 * n as f64 * temperature);
        }
    }
    for j in 0..n {
        let lp = log_softmax(logits.column(j));
        loss -= lp[j] / (2.0 * n as f64);
        for i in 0..n {
            let y = if i == j { 1.0 } else { 0.0 };
            d[[i, j]] += (lp[i].exp() - y) / (2.0 * n as f64 * temperature);
        }
    }
    (loss, d)
}

/// Cosine-embedding loss: `1 - s_ii` for the positive pair and
/// `max(0, s_ij - margin)` averaged over in-batch negatives.
fn contrastive_from_sims(sims: &Array2<f64>, margin: f64) -> (f64, Array2<f64>) {
    let n = sims.nrows();
    let mut d = Array2::zeros((n, n));
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        loss += (1.0 - sims[[i, i]]) * inv_n;
        d[[i, i]] -= inv_n;
        if n > 1 {
            let inv_neg = inv_n / (n - 1) as f64;
            for j in (0..n).filter(|&j| j != i) {
                let h = sims[[i, j]] - margin;
                if h > 0.0 {
                    loss += h * inv_neg;
                    d[[i, j]] += inv_neg;
                }
            }
        }
    }
    (loss, d)
}

/// Alignment `mean‖ĝ_i − ê_i‖²` plus the mean of both views' uniformity
/// `log mean_{i<j} exp(−2‖x_i − x_j‖²)`.
fn directau_bucket(gs: &[ArrayView1<f64>], es: &[ArrayView1<f64>]) -> BucketOut {
    let n = gs.len();
    let gn: Vec<(Array1<f64>, f64)> = gs.iter().map(|g| normalize(*g)).collect();
    let en: Vec<(Array1<f64>, f64)> = es.iter().map(|e| normalize(*e)).collect();
    let mut dgu: Vec<Array1<f64>> = gn.iter().map(|(u, _)| Array1::zeros(u.len())).collect();
    let mut deu = dgu.clone();
    let mut loss = 0.0;
    for i in 0..n {
        let diff = &gn[i].0 - &en[i].0;
        loss += diff.dot(&diff) / n as f64;
        dgu[i].scaled_add(2.0 / n as f64, &diff);
        deu[i].scaled_add(-2.0 / n as f64, &diff);
    }
    if n >= 2 {
        for (view, grads) in [(&gn, &mut dgu), (&en, &mut deu)] {
            let mut terms = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let diff = &view[i].0 - &view[j].0;
                    terms.push((i, j, (-2.0 * diff.dot(&diff)).exp(), diff));
                }
            }
            let sum: f64 = terms.iter().map(|t| t.2).sum();
            let mean = sum / terms.len() as f64;
            loss += 0.5 * mean.max(1e-300).ln();
            for (i, j, w, diff) in &terms {
                // ∂(0.5·ln(sum/P))/∂x_i = 0.5 · w/sum · (−4 diff)
                let c = -2.0 * w / sum;
                grads[*i].scaled_add(c, diff);
                grads[*j].scaled_add(-c, diff);
            }
        }
    }
    let dg = (0..n).map(|i| normalize_backward(&gn[i].0, gn[i].1, &dgu[i])).collect();
    let de = (0..n).map(|i| normalize_backward(&en[i].0, en[i].1, &deu[i])).collect();
    (loss, dg, de)
}
