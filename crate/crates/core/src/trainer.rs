//! Backbone pretraining and joint training with fused semantic intents.
//!
//! One step: structural intents for the batch, fusion with the projected
//! intent buckets, softmax scores over the catalog, the recommendation
//! loss, the alignment loss, `L = L_r + σ·L_info`, one Adam update.
//! Epochs shuffle with a generator derived from the seed, so a fixed config
//! gives a bitwise-reproducible loss curve in either execution mode.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneParams};
use crate::checkpoint::Checkpoint;
use crate::corpus::{ItemId, Session};
use crate::encoder::IntentEmbedding;
use crate::error::{ensure_finite, Error, Result};
use crate::eval::{evaluate, EvalResult, Scorer, DEFAULT_KS};
use crate::exec::Exec;
use crate::fusion::{info_loss, AlignSample, AlignmentConfig, FusionParams};
use crate::optim::{step_decay, Adam};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoSemantic,
    NoKl,
    NoLatent,
    NoExplicit,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoSemantic,
        Ablation::NoKl,
        Ablation::NoLatent,
        Ablation::NoExplicit,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSemantic => "no_semantic",
            Ablation::NoKl => "no_kl",
            Ablation::NoLatent => "no_latent",
            Ablation::NoExplicit => "no_explicit",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "Full",
            Ablation::NoSemantic => "w/o Semantic",
            Ablation::NoKl => "w/o KL",
            Ablation::NoLatent => "w/o Latent-Intent",
            Ablation::NoExplicit => "w/o Explicit-Intent",
        }
    }

    pub fn semantic(self) -> bool {
        self != Ablation::NoSemantic
    }

    pub fn aligns(self) -> bool {
        !matches!(self, Ablation::NoSemantic | Ablation::NoKl)
    }

    pub fn explicit(self) -> bool {
        self.semantic() && self != Ablation::NoExplicit
    }

    pub fn latent(self) -> bool {
        self.semantic() && self != Ablation::NoLatent
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CeMode {
    /// Binary cross-entropy summed over every item.
    Binary,
    /// `−log ŷ_target`.
    Categorical,
}

impl std::str::FromStr for CeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(CeMode::Binary),
            "categorical" => Ok(CeMode::Categorical),
            other => Err(Error::Config(format!("unknown ce mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub sigma: f64,
    pub align: AlignmentConfig,
    pub ablation: Ablation,
    pub ce: CeMode,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            lr_decay_every: 3,
            weight_decay: 1e-5,
            epochs: 5,
            seed: 0,
            sigma: 0.2,
            align: AlignmentConfig::default(),
            ablation: Ablation::Full,
            ce: CeMode::Binary,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be finite and ≥ 0".into()));
        }
        if !(self.weight_decay >= 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Config("weight_decay must be ≥ 0 and lr_decay > 0".into()));
        }
        self.align.validate()
    }
}

pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// `softmax(table · s)`.
pub fn predict(s: ArrayView1<f64>, table: ndarray::ArrayView2<f64>) -> Array1<f64> {
    softmax(table.dot(&s).view())
}

pub const PROB_EPS: f64 = 1e-8;

fn target_index(target: ItemId, n: usize) -> Result<usize> {
    match (target as usize).checked_sub(1) {
        Some(t) if t < n => Ok(t),
        _ => Err(Error::UnknownItem(target)),
    }
}

/// Recommendation loss of a probability vector for one target.
pub fn rec_loss(y_hat: ArrayView1<f64>, target: ItemId, ce: CeMode) -> Result<f64> {
    let t = target_index(target, y_hat.len())?;
    let clamp = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    Ok(match ce {
        CeMode::Categorical => -clamp(y_hat[t]).ln(),
        CeMode::Binary => y_hat
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == t { -clamp(p).ln() } else { -(1.0 - clamp(p)).ln() })
            .sum(),
    })
}

/// Loss and `∂L/∂logits` for one row of logits.
pub fn rec_loss_grad(logits: ArrayView1<f64>, t: usize, ce: CeMode) -> (f64, Array1<f64>) {
    let p = softmax(logits);
    match ce {
        CeMode::Categorical => {
            let loss = -p[t].clamp(PROB_EPS, 1.0 - PROB_EPS).ln();
            let mut dz = p;
            dz[t] -= 1.0;
            (loss, dz)
        }
        CeMode::Binary => {
            let mut loss = 0.0;
            let dp = Array1::from_shape_fn(p.len(), |i| {
                let pi = p[i];
                let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&pi);
                let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
                if i == t {
                    loss -= pc.ln();
                    if clamped { 0.0 } else { -1.0 / pi }
                } else {
                    loss -= (1.0 - pc).ln();
                    if clamped { 0.0 } else { 1.0 / (1.0 - pi) }
                }
            });
            let inner = p.dot(&dp);
            let dz = &p * &dp.mapv(|v| v - inner);
            (loss, dz)
        }
    }
}

/// Backbone plus the optional fusion head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<B> {
    pub backbone: B,
    pub fusion: Option<FusionParams>,
}

impl<B: Backbone> ParamSet for Model<B> {
    fn visit(&self, f: &mut crate::params::Visitor<'_>) {
        self.backbone.visit(f);
        if let Some(fu) = &self.fusion {
            fu.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut [f64])) {
        self.backbone.visit_mut(f);
        if let Some(fu) = &mut self.fusion {
            fu.visit_mut(f);
        }
    }
    fn zeros_like(&self) -> Self {
        Self {
            backbone: self.backbone.zeros_like(),
            fusion: self.fusion.as_ref().map(ParamSet::zeros_like),
        }
    }
}

pub type IntentTable = HashMap<String, IntentEmbedding>;

pub fn intent_table(rows: Vec<IntentEmbedding>) -> IntentTable {
    rows.into_iter().map(|r| (r.session_id.clone(), r)).collect()
}

/// Intermediate vectors of one fused forward pass.
#[derive(Debug, Clone)]
pub struct Fused {
    pub s: Array1<f64>,
    /// Projected (or no-intent) explicit and latent vectors.
    pub bars: Option<[Array1<f64>; 2]>,
    /// Whether each bucket came from a real intent vector.
    pub real: [bool; 2],
}

impl<B: Backbone> Model<B> {
    fn raw_bucket<'a>(intent: Option<&'a IntentEmbedding>, latent: bool, enabled: bool) -> Option<ArrayView1<'a, f64>> {
        if !enabled {
            return None;
        }
        intent.and_then(|r| if latent { r.latent() } else { r.explicit() })
    }

    /// Session vector from a structural intent under `ablation`.
    pub fn fuse(&self, g: &Array1<f64>, intent: Option<&IntentEmbedding>, ablation: Ablation) -> Result<Fused> {
        let fusion = match &self.fusion {
            Some(f) if ablation.semantic() => f,
            _ => {
                return Ok(Fused {
                    s: g.clone(),
                    bars: None,
                    real: [false, false],
                })
            }
        };
        let mut real = [false, false];
        let mut bars: [Array1<f64>; 2] = Default::default();
        for (k, latent) in [false, true].into_iter().enumerate() {
            let enabled = if latent { ablation.latent() } else { ablation.explicit() };
            bars[k] = match Self::raw_bucket(intent, latent, enabled) {
                Some(e) => {
                    real[k] = true;
                    fusion.project(e)?
                }
                None if latent => fusion.no_intent_latent.clone(),
                None => fusion.no_intent_explicit.clone(),
            };
        }
        let s = fusion.fuse(g.view(), bars[0].view(), bars[1].view())?;
        Ok(Fused {
            s,
            bars: Some(bars),
            real,
        })
    }

    pub fn session_vector(&self, items: &[ItemId], intent: Option<&IntentEmbedding>, ablation: Ablation) -> Result<Array1<f64>> {
        let (g, _) = self.backbone.encode(items)?;
        Ok(self.fuse(&g, intent, ablation)?.s)
    }
}

/// Scores sessions with a trained model.
pub struct FusedScorer<'a, B> {
    pub model: &'a Model<B>,
    pub intents: Option<&'a IntentTable>,
    pub ablation: Ablation,
}

impl<B: Backbone> Scorer for FusedScorer<'_, B> {
    fn scores(&self, session: &Session) -> Result<Array1<f64>> {
        let intent = self.intents.and_then(|t| t.get(&session.session_id));
        let s = self.model.session_vector(&session.items, intent, self.ablation)?;
        Ok(self.model.backbone.item_table().dot(&s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchLoss {
    pub loss: f64,
    pub loss_r: f64,
    pub loss_info: f64,
}

/// Samples per backward work unit; fixed so the reduction order does not
/// depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Loss and full-model gradient of one batch.
pub fn batch_loss_and_grad<B: Backbone>(
    model: &Model<B>,
    batch: &[&Session],
    intents: Option<&IntentTable>,
    cfg: &TrainConfig,
) -> Result<(BatchLoss, Model<B>)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let exec = cfg.exec;
    let bb = &model.backbone;
    let table = bb.item_table();
    let (n_items, d) = table.dim();
    let bsz = batch.len();
    let encoded: Vec<_> = exec
        .map(batch, |s| bb.encode(&s.items))
        .into_iter()
        .collect::<Result<_>>()?;
    let lookups: Vec<Option<&IntentEmbedding>> = batch
        .iter()
        .map(|s| intents.and_then(|t| t.get(&s.session_id)))
        .collect();
    let fused: Vec<Fused> = exec
        .map_indexed(bsz, |i| model.fuse(&encoded[i].0, lookups[i], cfg.ablation))
        .into_iter()
        .collect::<Result<_>>()?;

    let mut s_mat = Array2::<f64>::zeros((bsz, d));
    for (i, f) in fused.iter().enumerate() {
        s_mat.row_mut(i).assign(&f.s);
    }
    let logits = s_mat.dot(&table.t());
    let targets: Vec<usize> = batch
        .iter()
        .map(|s| target_index(s.target, n_items))
        .collect::<Result<_>>()?;
    let rows = exec.map_indexed(bsz, |i| rec_loss_grad(logits.row(i), targets[i], cfg.ce));
    let scale = 1.0 / bsz as f64;
    let mut loss_r = 0.0;
    let mut dz = Array2::<f64>::zeros((bsz, n_items));
    for (i, (l, g)) in rows.into_iter().enumerate() {
        loss_r += l * scale;
        dz.row_mut(i).assign(&(g * scale));
    }

    let mut grad = model.zeros_like();
    grad.backbone.item_table_mut().scaled_add(1.0, &dz.t().dot(&s_mat));
    let d_s = dz.dot(&table);

    let align = match (&model.fusion, cfg.ablation.aligns()) {
        (Some(_), true) => {
            let samples: Vec<AlignSample> = fused
                .iter()
                .zip(&encoded)
                .map(|(f, (g, _))| {
                    let bars = f.bars.as_ref().expect("fused with semantic channels");
                    AlignSample {
                        g: g.view(),
                        explicit: f.real[0].then(|| bars[0].view()),
                        latent: f.real[1].then(|| bars[1].view()),
                    }
                })
                .collect();
            Some(info_loss(&samples, &cfg.align)?)
        }
        _ => None,
    };
    let loss_info = align.as_ref().map_or(0.0, |a| a.0);
    ensure_finite("alignment loss", &[loss_info])?;
    let loss = loss_r + cfg.sigma * loss_info;

    let mut d_g: Vec<Array1<f64>> = Vec::with_capacity(bsz);
    for i in 0..bsz {
        let f = &fused[i];
        let ds = d_s.row(i);
        let (Some(fusion), Some(bars), Some(gf)) = (&model.fusion, &f.bars, grad.fusion.as_mut()) else {
            d_g.push(ds.to_owned());
            continue;
        };
        let g = &encoded[i].0;
        let [mut dg, mut de, mut dl] = fusion.fuse_backward([g.view(), bars[0].view(), bars[1].view()], ds, gf);
        if let Some((_, ag)) = &align {
            dg.scaled_add(cfg.sigma, &ag[i].g);
            de.scaled_add(cfg.sigma, &ag[i].explicit);
            dl.scaled_add(cfg.sigma, &ag[i].latent);
        }
        for (k, d_bar) in [de, dl].into_iter().enumerate() {
            let latent = k == 1;
            let enabled = if latent { cfg.ablation.latent() } else { cfg.ablation.explicit() };
            match Model::<B>::raw_bucket(lookups[i], latent, enabled) {
                Some(e) => FusionParams::project_backward(e, d_bar.view(), gf),
                None if latent => gf.no_intent_latent += &d_bar,
                None => gf.no_intent_explicit += &d_bar,
            }
        }
        d_g.push(dg);
    }

    let n_chunks = bsz.div_ceil(GRAD_CHUNK);
    let partial = exec.map_indexed(n_chunks, |c| {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(bsz);
        let mut acc = bb.backward(&encoded[lo].1, d_g[lo].view());
        for i in lo + 1..hi {
            B::merge_grad(&mut acc, bb.backward(&encoded[i].1, d_g[i].view()));
        }
        acc
    });
    for p in &partial {
        B::apply_grad(p, &mut grad.backbone);
    }
    Ok((BatchLoss { loss, loss_r, loss_info }, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_r: f64,
    pub loss_info: f64,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_r: f64,
    pub loss_info: f64,
    pub p5: f64,
    pub p10: f64,
    pub p20: f64,
    pub mrr5: f64,
    pub mrr10: f64,
    pub mrr20: f64,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Clone)]
pub struct TrainOutcome<B> {
    pub model: Model<B>,
    pub adam: Adam,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// Training sessions without an intent record.
    pub fallbacks: usize,
    pub eval: EvalResult,
}

/// Shuffled sample order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::seed::rng(seed, &format!("shuffle-epoch-{epoch}")));
    order
}

fn fit<B: Backbone>(
    mut model: Model<B>,
    train: &[Session],
    test: &[Session],
    intents: Option<&IntentTable>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<B>> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Validation("training needs non-empty train and test sessions".into()));
    }
    let fallbacks = match intents {
        Some(t) if cfg.ablation.semantic() => train.iter().filter(|s| !t.contains_key(&s.session_id)).count(),
        _ => 0,
    };
    if fallbacks > 0 {
        log::warn!("{fallbacks} training sessions have no intent record; using no-intent embeddings");
    }
    let mut adam = Adam::new(model.n_params(), cfg.weight_decay);
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut last_eval = None;
    for epoch in 0..cfg.epochs {
        let lr = step_decay(cfg.learning_rate, cfg.lr_decay, cfg.lr_decay_every, epoch);
        let order = epoch_order(cfg.seed, epoch, train.len());
        let mut sums = BatchLoss::default();
        let mut n_batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Session> = idx.iter().map(|&i| &train[i]).collect();
            let (bl, grad) = batch_loss_and_grad(&model, &batch, intents, cfg)?;
            if !bl.loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {} step {}", epoch + 1, steps.len()),
                    index: 0,
                });
            }
            adam.update(&mut model, &grad, lr);
            if !model.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("parameters after epoch {} step {}", epoch + 1, steps.len()),
                    index: 0,
                });
            }
            steps.push(StepRecord {
                epoch: epoch + 1,
                step: steps.len(),
                lr,
                loss: bl.loss,
                loss_r: bl.loss_r,
                loss_info: bl.loss_info,
            });
            sums.loss += bl.loss;
            sums.loss_r += bl.loss_r;
            sums.loss_info += bl.loss_info;
            n_batches += 1;
        }
        let scorer = FusedScorer {
            model: &model,
            intents,
            ablation: cfg.ablation,
        };
        let ev = evaluate(&scorer, test, &DEFAULT_KS, cfg.exec)?;
        let nb = n_batches as f64;
        let rec = EpochRecord {
            epoch: epoch + 1,
            lr,
            loss: sums.loss / nb,
            loss_r: sums.loss_r / nb,
            loss_info: sums.loss_info / nb,
            p5: ev.p_at_k[0],
            p10: ev.p_at_k[1],
            p20: ev.p_at_k[2],
            mrr5: ev.mrr_at_k[0],
            mrr10: ev.mrr_at_k[1],
            mrr20: ev.mrr_at_k[2],
        };
        log::info!(
            "epoch {} lr {:.1e} loss {:.5} P@5 {:.2} MRR@5 {:.2}",
            rec.epoch,
            lr,
            rec.loss,
            rec.p5,
            rec.mrr5
        );
        epochs.push(rec);
        last_eval = Some(ev);
    }
    let mut eval = last_eval.expect("at least one epoch");
    eval.variant = cfg.ablation.label().to_string();
    Ok(TrainOutcome {
        model,
        adam,
        epochs,
        steps,
        fallbacks,
        eval,
    })
}

/// Trains the backbone alone on the next-item loss.
pub fn pretrain<B: Backbone>(backbone: B, train: &[Session], test: &[Session], cfg: &TrainConfig) -> Result<TrainOutcome<B>> {
    let cfg = TrainConfig {
        ablation: Ablation::NoSemantic,
        ..cfg.clone()
    };
    let model = Model { backbone, fusion: None };
    let mut out = fit(model, train, test, None, &cfg)?;
    out.eval.variant = "backbone".into();
    Ok(out)
}

/// Joint training with intent embeddings of width `d_text`.
pub fn train<B: Backbone>(
    backbone: B,
    d_text: usize,
    train: &[Session],
    test: &[Session],
    intents: &IntentTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<B>> {
    if d_text == 0 {
        return Err(Error::Config("intent embedding width must be ≥ 1".into()));
    }
    let fusion = FusionParams::init(d_text, backbone.dim(), crate::seed::derive(cfg.seed, "fusion"));
    let model = Model {
        backbone,
        fusion: Some(fusion),
    };
    fit(model, train, test, Some(intents), cfg)
}

/// Writes the model (and optimizer state when given) to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &Model<BackboneParams>,
    adam: Option<&Adam>,
    fingerprint: &str,
    meta: serde_json::Value,
) -> Result<()> {
    let mut ck = Checkpoint::new(model.backbone.config, fingerprint.to_string(), meta);
    ck.push_set("backbone", &model.backbone);
    if let Some(f) = &model.fusion {
        ck.push("fusion.dims".into(), vec![2], vec![f.d_text() as f64, f.d() as f64]);
        ck.push_set("fusion", f);
    }
    if let Some(a) = adam {
        ck.push("adam.step".into(), vec![1], vec![a.step as f64]);
        ck.push("adam.m".into(), vec![a.m.len()], a.m.clone());
        ck.push("adam.v".into(), vec![a.v.len()], a.v.clone());
    }
    crate::encoder::write_atomic(path, &ck.to_bytes()?)
}

pub struct LoadedCheckpoint {
    pub model: Model<BackboneParams>,
    pub adam: Option<Adam>,
    pub fingerprint: String,
    pub meta: serde_json::Value,
}

pub fn load_checkpoint(path: &Path, weight_decay: f64) -> Result<LoadedCheckpoint> {
    let ck = Checkpoint::load(path)?;
    let mut backbone = BackboneParams::init(ck.header.config)?;
    ck.load_set("backbone", &mut backbone)?;
    let fusion = match ck.get("fusion.dims") {
        Some(&[dt, d]) => {
            let mut f = FusionParams::init(dt as usize, d as usize, 0);
            ck.load_set("fusion", &mut f)?;
            Some(f)
        }
        Some(_) => return Err(Error::Checkpoint("bad fusion.dims".into())),
        None => None,
    };
    let model = Model { backbone, fusion };
    let adam = match (ck.get("adam.step"), ck.get("adam.m"), ck.get("adam.v")) {
        (Some(&[step]), Some(m), Some(v)) if m.len() == model.n_params() && v.len() == m.len() => {
            let mut a = Adam::new(m.len(), weight_decay);
            a.step = step as u64;
            a.m = m.to_vec();
            a.v = v.to_vec();
            Some(a)
        }
        (None, None, None) => None,
        _ => return Err(Error::Checkpoint("optimizer state does not match the model".into())),
    };
    Ok(LoadedCheckpoint {
        model,
        adam,
        fingerprint: ck.header.config_fingerprint.clone(),
        meta: ck.header.meta.clone(),
    })
}
