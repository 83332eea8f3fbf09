//! SIMPLE: iterative majority vote that drops annotators scoring well below
//! the cohort against the current estimate.

use serde::{Deserialize, Serialize};

use super::{fuse_vote, require_annotators};
use crate::error::{Error, Result};
use crate::mask::{AnnotationStack, BinaryMask};
use crate::raters::{Confusion, StdForm};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SimpleScore {
    #[default]
    Kappa,
    F1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleConfig {
    pub score: SimpleScore,
    /// Drop threshold below the mean score, in standard deviations.
    pub drop_margin: f64,
    pub max_rounds: usize,
}

impl Default for SimpleConfig {
    fn default() -> Self {
        SimpleConfig {
            score: SimpleScore::Kappa,
            drop_margin: 1.0,
            max_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRater {
    pub id: String,
    pub round: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleResult {
    pub mask: BinaryMask,
    pub retained: Vec<String>,
    pub dropped: Vec<DroppedRater>,
    pub rounds: usize,
    pub warning: Option<String>,
}

fn score(c: &Confusion, kind: SimpleScore) -> Option<f64> {
    match kind {
        SimpleScore::Kappa => c.kappa(),
        SimpleScore::F1 => c.f1(),
    }
}

pub fn fuse_simple(stack: &AnnotationStack, cfg: &SimpleConfig) -> Result<SimpleResult> {
    require_annotators(stack, 2, "SIMPLE")?;
    if !(cfg.drop_margin > 0.0) || !cfg.drop_margin.is_finite() {
        return Err(Error::Argument(format!(
            "drop margin must be positive, got {}",
            cfg.drop_margin
        )));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::Argument("max_rounds must be positive".into()));
    }

    let mut current = stack.clone();
    let mut estimate = fuse_vote(&current, 0.5)?;
    let mut dropped = Vec::new();
    let mut warning = None;
    let mut rounds = 0;
    while rounds < cfg.max_rounds {
        rounds += 1;
        let scores: Vec<Option<f64>> = current
            .annotators()
            .iter()
            .map(|a| {
                Confusion::between(&a.mask, &estimate, current.roi()).map(|c| score(&c, cfg.score))
            })
            .collect::<Result<_>>()?;
        let defined: Vec<f64> = scores.iter().flatten().copied().collect();
        if defined.len() < 2 {
            break;
        }
        let (mean, std) = StdForm::Population.mean_std(&defined);
        let spread = defined.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - defined.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread <= 0.0 {
            break;
        }
        let cut = mean - cfg.drop_margin * std;
        let drop: Vec<(String, f64)> = current
            .annotators()
            .iter()
            .zip(&scores)
            .filter_map(|(a, s)| s.filter(|&v| v < cut).map(|v| (a.id.clone(), v)))
            .collect();
        if drop.is_empty() {
            break;
        }
        if current.len() - drop.len() < 2 {
            warning =
                Some(format!(
                "round {rounds} would leave fewer than 2 annotators; stopped before dropping {}",
                drop.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>().join(", ")
            ));
            break;
        }
        let keep: Vec<&str> = current
            .ids()
            .into_iter()
            .filter(|id| !drop.iter().any(|(d, _)| d == id))
            .collect();
        current = current.retain_ids(&keep)?;
        estimate = fuse_vote(&current, 0.5)?;
        dropped.extend(drop.into_iter().map(|(id, score)| DroppedRater {
            id,
            round: rounds,
            score,
        }));
    }

    Ok(SimpleResult {
        mask: estimate,
        retained: current.ids().into_iter().map(String::from).collect(),
        dropped,
        rounds,
        warning,
    })
}
