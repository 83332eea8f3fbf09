//! STAPLE: expectation-maximisation over a global prior and per-annotator
//! sensitivity/specificity.
//!
//! Pixels are grouped by their decision pattern. The E-step depends only on
//! the pattern, so each iteration costs one pass over the distinct patterns
//! rather than over the image. Annotators are processed in a canonical order
//! (sorted by mask content) and patterns are sorted by key, so every sum runs
//! in the same order however the stack is permuted. Without this, ulp-level
//! differences grow into visible ones on slowly converging stacks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::require_annotators;
use crate::error::{Error, Result};
use crate::mask::{AnnotationStack, BinaryMask, ImageGrid};

/// Global foreground prior. Serialized as a number or `"empirical"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Prior {
    Fixed(f64),
    /// Mean positive fraction of the annotators over the ROI.
    #[default]
    Empirical,
}

impl Serialize for Prior {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Prior::Fixed(v) => s.serialize_f64(*v),
            Prior::Empirical => s.serialize_str("empirical"),
        }
    }
}

impl<'de> Deserialize<'de> for Prior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Prior::Fixed)
                .ok_or_else(|| serde::de::Error::custom("prior is not a finite number")),
            serde_json::Value::String(s) if s == "empirical" => Ok(Prior::Empirical),
            other => Err(serde::de::Error::custom(format!(
                "prior must be a number or \"empirical\", got {other}"
            ))),
        }
    }
}

impl std::str::FromStr for Prior {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "empirical" {
            return Ok(Prior::Empirical);
        }
        s.parse::<f64>()
            .map(Prior::Fixed)
            .map_err(|_| format!("expected a number or `empirical`, got `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StapleConfig {
    pub prior: Prior,
    pub init_p: f64,
    pub init_q: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for StapleConfig {
    fn default() -> Self {
        StapleConfig {
            prior: Prior::Empirical,
            init_p: 0.9,
            init_q: 0.9,
            tol: 1e-7,
            max_iters: 100,
        }
    }
}

impl StapleConfig {
    fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if let Prior::Fixed(p) = self.prior {
            if !open(p) {
                return Err(Error::Argument(format!(
                    "prior must lie in (0, 1), got {p}"
                )));
            }
        }
        if !open(self.init_p) || !open(self.init_q) {
            return Err(Error::Argument(format!(
                "initial sensitivity/specificity must lie in (0, 1), got {}/{}",
                self.init_p, self.init_q
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Per-pixel foreground posterior. Pixels outside the ROI hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMap {
    grid: ImageGrid,
    posterior: Vec<f64>,
}

impl SoftLabelMap {
    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.posterior
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.posterior[self.grid.index(x, y)]
    }

    /// Pixels with posterior at least 0.5.
    pub fn binarize(&self) -> BinaryMask {
        let data = self.posterior.iter().map(|&w| u8::from(w >= 0.5)).collect();
        BinaryMask::from_vec(self.grid, data).expect("grid-sized 0/1 vector")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterPerformance {
    pub ids: Vec<String>,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
}

impl RaterPerformance {
    pub fn get(&self, id: &str) -> Option<(f64, f64)> {
        let k = self.ids.iter().position(|i| i == id)?;
        Some((self.sensitivity[k], self.specificity[k]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StapleResult {
    pub posterior: SoftLabelMap,
    pub performance: RaterPerformance,
    pub prior: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood at the initial parameters and after
    /// every M-step.
    pub log_likelihood: Vec<f64>,
}

impl StapleResult {
    pub fn ground_truth(&self) -> BinaryMask {
        self.posterior.binarize()
    }
}

struct Pattern {
    key: Vec<u64>,
    count: f64,
}

impl Pattern {
    fn bit(&self, j: usize) -> bool {
        self.key[j / 64] >> (j % 64) & 1 == 1
    }
}

struct Patterns {
    list: Vec<Pattern>,
    /// Pattern index per pixel; `usize::MAX` outside the ROI.
    of_pixel: Vec<usize>,
}

/// Annotator indices sorted by mask content.
fn canonical_order(stack: &AnnotationStack) -> Vec<usize> {
    let a = stack.annotators();
    let mut cols: Vec<usize> = (0..a.len()).collect();
    cols.sort_by(|&x, &y| a[x].mask.as_slice().cmp(a[y].mask.as_slice()));
    cols
}

/// Bit `j` of a key is annotator `cols[j]`.
fn group_patterns(stack: &AnnotationStack, cols: &[usize]) -> Patterns {
    let n = stack.len();
    let words = n.div_ceil(64);
    let len = stack.grid().len();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut list: Vec<Pattern> = Vec::new();
    let mut of_pixel = vec![usize::MAX; len];
    let mut key = vec![0u64; words];
    for (i, slot) in of_pixel.iter_mut().enumerate() {
        if !stack.in_roi(i) {
            continue;
        }
        key.iter_mut().for_each(|w| *w = 0);
        for (j, &c) in cols.iter().enumerate() {
            if stack.annotators()[c].mask.at(i) {
                key[j / 64] |= 1 << (j % 64);
            }
        }
        let k = *index.entry(key.clone()).or_insert_with(|| {
            list.push(Pattern {
                key: key.clone(),
                count: 0.0,
            });
            list.len() - 1
        });
        list[k].count += 1.0;
        *slot = k;
    }
    let mut order: Vec<usize> = (0..list.len()).collect();
    order.sort_by(|&a, &b| list[a].key.cmp(&list[b].key));
    let mut rank = vec![0; list.len()];
    for (r, &k) in order.iter().enumerate() {
        rank[k] = r;
    }
    for slot in of_pixel.iter_mut().filter(|s| **s != usize::MAX) {
        *slot = rank[*slot];
    }
    let mut slots: Vec<Option<Pattern>> = list.into_iter().map(Some).collect();
    let list = order
        .iter()
        .map(|&k| slots[k].take().expect("each pattern once"))
        .collect();
    Patterns { list, of_pixel }
}

fn ln(v: f64) -> f64 {
    if v <= 0.0 {
        f64::NEG_INFINITY
    } else {
        v.ln()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Posterior per pattern and the observed-data log-likelihood.
fn e_step(patterns: &[Pattern], prior: f64, p: &[f64], q: &[f64]) -> (Vec<f64>, f64) {
    let (lp, l1p): (Vec<f64>, Vec<f64>) = p.iter().map(|&v| (ln(v), ln(1.0 - v))).unzip();
    let (lq, l1q): (Vec<f64>, Vec<f64>) = q.iter().map(|&v| (ln(v), ln(1.0 - v))).unzip();
    let mut ll = 0.0;
    let w = patterns
        .iter()
        .map(|pat| {
            let mut la = ln(prior);
            let mut lb = ln(1.0 - prior);
            for j in 0..p.len() {
                if pat.bit(j) {
                    la += lp[j];
                    lb += l1q[j];
                } else {
                    la += l1p[j];
                    lb += lq[j];
                }
            }
            let total = log_add(la, lb);
            ll += pat.count * total;
            if total == f64::NEG_INFINITY {
                prior
            } else {
                (la - total).exp().clamp(0.0, 1.0)
            }
        })
        .collect();
    (w, ll)
}

fn m_step(patterns: &[Pattern], w: &[f64], p: &mut [f64], q: &mut [f64]) {
    let mut sw = 0.0;
    let mut sv = 0.0;
    for (pat, &wk) in patterns.iter().zip(w) {
        sw += pat.count * wk;
        sv += pat.count * (1.0 - wk);
    }
    for j in 0..p.len() {
        let mut hit = 0.0;
        let mut rej = 0.0;
        for (pat, &wk) in patterns.iter().zip(w) {
            if pat.bit(j) {
                hit += pat.count * wk;
            } else {
                rej += pat.count * (1.0 - wk);
            }
        }
        if sw > 0.0 {
            p[j] = (hit / sw).clamp(0.0, 1.0);
        }
        if sv > 0.0 {
            q[j] = (rej / sv).clamp(0.0, 1.0);
        }
    }
}

pub fn fuse_staple(stack: &AnnotationStack, cfg: &StapleConfig) -> Result<StapleResult> {
    require_annotators(stack, 2, "STAPLE")?;
    cfg.validate()?;
    let n = stack.len();
    let cols = canonical_order(stack);
    let patterns = group_patterns(stack, &cols);
    let all_zero = patterns.list.iter().all(|p| p.key.iter().all(|&w| w == 0));
    let all_one = patterns.list.iter().all(|p| (0..n).all(|j| p.bit(j)));
    if patterns.list.is_empty() || all_zero || all_one {
        return Err(Error::Argument(
            "STAPLE needs at least one marked and one unmarked decision in the ROI".into(),
        ));
    }

    let roi = stack.roi_pixels() as f64;
    let prior = match cfg.prior {
        Prior::Fixed(v) => v,
        Prior::Empirical => {
            let marked: f64 = stack
                .annotators()
                .iter()
                .map(|a| {
                    (0..stack.grid().len())
                        .filter(|&i| stack.in_roi(i) && a.mask.at(i))
                        .count() as f64
                })
                .sum();
            marked / (n as f64 * roi)
        }
    };

    // A unanimous stack is a fixed point at perfect performance.
    let start = if stack.is_unanimous() {
        (1.0, 1.0)
    } else {
        (cfg.init_p, cfg.init_q)
    };
    let mut p = vec![start.0; n];
    let mut q = vec![start.1; n];
    let mut log_likelihood = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let w;
    loop {
        let (wk, ll) = e_step(&patterns.list, prior, &p, &q);
        log_likelihood.push(ll);
        let (old_p, old_q) = (p.clone(), q.clone());
        m_step(&patterns.list, &wk, &mut p, &mut q);
        iterations += 1;
        let delta = (0..n)
            .map(|j| (p[j] - old_p[j]).abs() + (q[j] - old_q[j]).abs())
            .fold(0.0, f64::max);
        if delta < cfg.tol {
            converged = true;
        }
        if converged || iterations >= cfg.max_iters {
            let (wk, ll) = e_step(&patterns.list, prior, &p, &q);
            log_likelihood.push(ll);
            w = wk;
            break;
        }
    }

    let posterior = patterns
        .of_pixel
        .iter()
        .map(|&k| if k == usize::MAX { 0.0 } else { w[k] })
        .collect();
    let mut sensitivity = vec![0.0; n];
    let mut specificity = vec![0.0; n];
    for (j, &c) in cols.iter().enumerate() {
        sensitivity[c] = p[j];
        specificity[c] = q[j];
    }
    Ok(StapleResult {
        posterior: SoftLabelMap {
            grid: stack.grid(),
            posterior,
        },
        performance: RaterPerformance {
            ids: stack.ids().into_iter().map(String::from).collect(),
            sensitivity,
            specificity,
        },
        prior,
        iterations,
        converged,
        log_likelihood,
    })
}
