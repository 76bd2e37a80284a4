//! Cross-validated convex stacking of base learners.
//!
//! Each learner is fit on every training split and predicts its validation
//! split, giving an `n × L` matrix of out-of-fold predictions. Weights on the
//! simplex are then chosen to minimize the quasibinomial risk of the convex
//! combination of those columns (predictions clipped to `[1e-6, 1 − 1e-6]`).
//! With at most three learners the simplex is searched exhaustively on a 0.01
//! grid; larger libraries use projected gradient descent started at the best
//! single learner. Ties go to the earlier library entry.

use log::warn;
use nalgebra::DMatrix;

use super::{FittedLearner, LearnerSpec};
use crate::error::{Error, Result};
use crate::folds::make_folds;
use crate::math::{clip_prob, nll, PROB_CLIP};

/// Risk differences below this are treated as ties.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selector {
    /// Best convex combination (super learner).
    #[default]
    Convex,
    /// Best single learner (discrete super learner).
    Discrete,
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub folds: usize,
    pub seed: u64,
    pub selector: Selector,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            folds: 10,
            seed: 0,
            selector: Selector::Convex,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleFit {
    /// Library entries that survived fitting, in library order.
    pub specs: Vec<LearnerSpec>,
    pub weights: Vec<f64>,
    /// Cross-validated risk per surviving learner; empty for a single-learner library.
    pub cv_risks: Vec<f64>,
    /// Cross-validated risk of the weighted combination (NaN for a single-learner library).
    pub ensemble_cv_risk: f64,
    pub learners: Vec<FittedLearner>,
    pub dropped: Vec<(LearnerSpec, String)>,
}

impl EnsembleFit {
    /// Convex combination of base predictions, clipped to `[1e-6, 1 − 1e-6]`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.nrows()];
        for (w, learner) in self.weights.iter().zip(&self.learners) {
            if *w == 0.0 {
                continue;
            }
            let pred = learner.predict(x)?;
            for (o, p) in out.iter_mut().zip(pred) {
                *o += w * p;
            }
        }
        Ok(out.into_iter().map(clip_prob).collect())
    }
}

/// Mean quasibinomial loss of `Σ_l weights[l] · cols[l]` against `y`.
fn combo_risk(cols: &[Vec<f64>], weights: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut q = 0.0;
        for (c, w) in cols.iter().zip(weights) {
            q += w * c[i];
        }
        total += nll(y[i], q);
    }
    total / n as f64
}

fn simplex_grid_search(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    const STEPS: usize = 100;
    let l = cols.len();
    let mut best_w = vec![0.0; l];
    best_w[0] = 1.0;
    let mut best = combo_risk(cols, &best_w, y);
    let consider = |w: Vec<f64>, best_w: &mut Vec<f64>, best: &mut f64| {
        let r = combo_risk(cols, &w, y);
        if r < *best - TIE_TOL {
            *best = r;
            *best_w = w;
        }
    };
    match l {
        1 => {}
        2 => {
            for k in (0..=STEPS).rev() {
                let a = k as f64 / STEPS as f64;
                consider(vec![a, 1.0 - a], &mut best_w, &mut best);
            }
        }
        3 => {
            for k1 in (0..=STEPS).rev() {
                for k2 in (0..=(STEPS - k1)).rev() {
                    let k3 = STEPS - k1 - k2;
                    let w = vec![
                        k1 as f64 / STEPS as f64,
                        k2 as f64 / STEPS as f64,
                        k3 as f64 / STEPS as f64,
                    ];
                    consider(w, &mut best_w, &mut best);
                }
            }
        }
        _ => unreachable!("grid search is only used for up to three learners"),
    }
    best_w
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn projected_gradient(cols: &[Vec<f64>], y: &[f64], start: Vec<f64>) -> Vec<f64> {
    let n = y.len() as f64;
    let mut w = start;
    let mut risk = combo_risk(cols, &w, y);
    let mut step = 1.0;
    for _ in 0..1000 {
        let mut grad = vec![0.0; cols.len()];
        for i in 0..y.len() {
            let q: f64 = cols.iter().zip(&w).map(|(c, wl)| wl * c[i]).sum();
            let q = q.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            let d = -(y[i] - q) / (q * (1.0 - q));
            for (g, c) in grad.iter_mut().zip(cols) {
                *g += d * c[i] / n;
            }
        }
        let mut improved = false;
        while step > 1e-12 {
            let cand: Vec<f64> = project_simplex(
                &w.iter().zip(&grad).map(|(wl, g)| wl - step * g).collect::<Vec<_>>(),
            );
            let r = combo_risk(cols, &cand, y);
            if r < risk - TIE_TOL {
                w = cand;
                risk = r;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    w
}

/// Fits the stacking ensemble of `library` for outcome `y` on features `x`.
pub fn fit_ensemble(
    x: &DMatrix<f64>,
    y: &[f64],
    library: &[LearnerSpec],
    opts: &EnsembleOptions,
) -> Result<EnsembleFit> {
    if library.is_empty() {
        return Err(Error::InvalidArgument("learner library is empty".into()));
    }
    for spec in library {
        spec.validate()?;
    }
    if library.len() == 1 {
        let learner = library[0]
            .fit(x, y)
            .map_err(|e| Error::AllLearnersFailed(e.to_string()))?;
        return Ok(EnsembleFit {
            specs: library.to_vec(),
            weights: vec![1.0],
            cv_risks: Vec::new(),
            ensemble_cv_risk: f64::NAN,
            learners: vec![learner],
            dropped: Vec::new(),
        });
    }

    let n = y.len();
    let plan = make_folds(n, opts.folds, opts.seed)?;
    let mut cv_preds: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; n]); library.len()];
    let mut dropped = Vec::new();
    for fold in 0..plan.v {
        let train = plan.training(fold);
        let valid = plan.validation(fold);
        let x_train = x.select_rows(train.iter());
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let x_valid = x.select_rows(valid.iter());
        for (l, spec) in library.iter().enumerate() {
            let Some(slot) = cv_preds[l].as_mut() else { continue };
            match spec.fit(&x_train, &y_train).and_then(|f| f.predict(&x_valid)) {
                Ok(pred) => {
                    for (&i, p) in valid.iter().zip(pred) {
                        slot[i] = p;
                    }
                }
                Err(e) => {
                    warn!("dropping learner {} (fold {fold}): {e}", spec.name());
                    dropped.push((spec.clone(), e.to_string()));
                    cv_preds[l] = None;
                }
            }
        }
    }

    let mut specs = Vec::new();
    let mut cols = Vec::new();
    for (spec, pred) in library.iter().zip(cv_preds) {
        if let Some(p) = pred {
            specs.push(spec.clone());
            cols.push(p);
        }
    }
    if specs.is_empty() {
        let last = dropped.last().map(|(_, e)| e.clone()).unwrap_or_default();
        return Err(Error::AllLearnersFailed(last));
    }

    let cv_risks: Vec<f64> = (0..cols.len())
        .map(|l| {
            let mut w = vec![0.0; cols.len()];
            w[l] = 1.0;
            combo_risk(&cols, &w, y)
        })
        .collect();
    let best_single = cv_risks
        .iter()
        .enumerate()
        .fold(0, |best, (l, &r)| if r < cv_risks[best] - TIE_TOL { l } else { best });
    let vertex = |l: usize| {
        let mut w = vec![0.0; cols.len()];
        w[l] = 1.0;
        w
    };
    let mut weights = match opts.selector {
        Selector::Discrete => vertex(best_single),
        Selector::Convex if cols.len() <= 3 => simplex_grid_search(&cols, y),
        Selector::Convex => projected_gradient(&cols, y, vertex(best_single)),
    };
    if combo_risk(&cols, &weights, y) > cv_risks[best_single] {
        weights = vertex(best_single);
    }
    let ensemble_cv_risk = combo_risk(&cols, &weights, y);

    let mut learners = Vec::with_capacity(specs.len());
    let mut kept_specs = Vec::new();
    let mut kept_weights = Vec::new();
    let mut kept_risks = Vec::new();
    for (l, spec) in specs.iter().enumerate() {
        match spec.fit(x, y) {
            Ok(f) => {
                learners.push(f);
                kept_specs.push(spec.clone());
                kept_weights.push(weights[l]);
                kept_risks.push(cv_risks[l]);
            }
            Err(e) => {
                warn!("dropping learner {} (full-sample refit): {e}", spec.name());
                dropped.push((spec.clone(), e.to_string()));
            }
        }
    }
    let total: f64 = kept_weights.iter().sum();
    if learners.is_empty() || total <= 0.0 {
        let last = dropped.last().map(|(_, e)| e.clone()).unwrap_or_default();
        return Err(Error::AllLearnersFailed(last));
    }
    for w in &mut kept_weights {
        *w /= total;
    }
    Ok(EnsembleFit {
        specs: kept_specs,
        weights: kept_weights,
        cv_risks: kept_risks,
        ensemble_cv_risk,
        learners,
        dropped,
    })
}
