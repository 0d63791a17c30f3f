//! Ablation and hyperparameter-sweep orchestration.

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BackboneParams};
use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::eval::EvalResult;
use crate::trainer::{train, Ablation, EpochRecord, IntentTable, TrainConfig};

/// Everything a train+eval run needs besides the varied knob.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub train: &'a [Session],
    pub test: &'a [Session],
    pub intents: &'a IntentTable,
    pub d_text: usize,
    pub backbone: BackboneConfig,
    pub config: &'a TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub result: EvalResult,
    pub epochs: Vec<EpochRecord>,
}

/// Short content hash of a run's configuration.
pub fn run_id(backbone: &BackboneConfig, cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(&(backbone, cfg)).expect("config serializes");
    crate::seed::sha256_hex(&json)[..12].to_string()
}

impl Experiment<'_> {
    pub fn run(&self, cfg: &TrainConfig, variant: String) -> Result<RunSummary> {
        let out = train(
            BackboneParams::init(self.backbone)?,
            self.d_text,
            self.train,
            self.test,
            self.intents,
            cfg,
        )?;
        let mut result = out.eval;
        result.run_id = run_id(&self.backbone, cfg);
        result.variant = variant;
        Ok(RunSummary {
            result,
            epochs: out.epochs,
        })
    }
}

#[derive(Debug, Default)]
pub struct AblationReport {
    pub rows: Vec<(Ablation, RunSummary)>,
    /// The variant that stopped the table, if any.
    pub failed: Option<(Ablation, Error)>,
}

impl AblationReport {
    pub fn results(&self) -> Vec<EvalResult> {
        self.rows.iter().map(|(_, r)| r.result.clone()).collect()
    }
}

/// Trains and evaluates each variant with the shared seed. Stops at the
/// first failing variant, keeping the rows finished before it.
pub fn run_ablations(exp: &Experiment<'_>, variants: &[Ablation]) -> AblationReport {
    let mut report = AblationReport::default();
    for &ab in variants {
        let cfg = TrainConfig {
            ablation: ab,
            ..exp.config.clone()
        };
        log::info!("ablation {}", ab.label());
        match exp.run(&cfg, ab.label().to_string()) {
            Ok(r) => report.rows.push((ab, r)),
            Err(e) => {
                log::error!("ablation {} failed: {e}", ab.label());
                report.failed = Some((ab, e));
                break;
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Sigma,
    Alpha,
    Beta,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepParam::Sigma),
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::Sigma => "sigma",
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        })
    }
}

impl SweepParam {
    pub fn apply(self, base: &TrainConfig, value: f64) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            SweepParam::Sigma => cfg.sigma = value,
            SweepParam::Alpha => cfg.align.alpha = value,
            SweepParam::Beta => cfg.align.beta = value,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
    pub result: Option<EvalResult>,
    pub error: Option<String>,
}

pub const SWEEP_FILE: &str = "sweep.jsonl";

/// One train+eval per value. A failing point is recorded and the sweep
/// moves on.
pub fn sweep(exp: &Experiment<'_>, param: SweepParam, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = param.apply(exp.config, value);
        log::info!("sweep {param}={value}");
        let outcome = cfg.validate().and_then(|_| exp.run(&cfg, format!("{param}={value}")));
        points.push(match outcome {
            Ok(r) => SweepPoint {
                param,
                value,
                result: Some(r.result),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep point {param}={value} failed: {e}");
                SweepPoint {
                    param,
                    value,
                    result: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_param_applies() {
        let base = TrainConfig::default();
        assert_eq!(SweepParam::Sigma.apply(&base, 0.7).sigma, 0.7);
        assert_eq!(SweepParam::Alpha.apply(&base, 0.3).align.alpha, 0.3);
        assert_eq!(SweepParam::Beta.apply(&base, 0.4).align.beta, 0.4);
        assert!("gamma".parse::<SweepParam>().is_err());
    }

    #[test]
    fn run_id_tracks_config() {
        let b = BackboneConfig {
            d: 4,
            n_items: 3,
            steps: 1,
            seed: 1,
        };
        let c = TrainConfig::default();
        assert_eq!(run_id(&b, &c), run_id(&b, &c));
        assert_ne!(run_id(&b, &c), run_id(&b, &SweepParam::Sigma.apply(&c, 0.0)));
    }
}
