//! Attribute-leakage probe: an L2-regularized linear classifier trained on
//! latent means with k-fold cross-validation; AUC over the pooled held-out
//! scores. 0.5 means the representation carries no attribute information.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, AdamConfig, AdamState, Mat, RngStream};

/// Linear probe weights for one attribute.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

const PROBE_STEPS: usize = 400;
const PROBE_LR: f64 = 0.1;

/// Fits a logistic probe by full-batch gradient descent on standardized
/// features: mean cross-entropy + 0.5*l2*||w||^2/n.
fn fit_probe(features: &Mat, labels: &[u8], l2: f64) -> ProbeModel {
    let (n, d) = (features.rows(), features.cols());
    let mut w = vec![0.0; d + 1]; // bias last
    let mut state = AdamState::new(d + 1);
    let cfg = AdamConfig {
        lr: PROBE_LR,
        ..AdamConfig::default()
    };
    let nf = n as f64;
    for _ in 0..PROBE_STEPS {
        let mut grad = vec![0.0; d + 1];
        for r in 0..n {
            let row = features.row(r);
            let logit: f64 = row.iter().zip(&w[..d]).map(|(x, wi)| x * wi).sum::<f64>() + w[d];
            let err = (sigmoid(logit) - labels[r] as f64) / nf;
            for (g, x) in grad[..d].iter_mut().zip(row) {
                *g += err * x;
            }
            grad[d] += err;
        }
        for (g, wi) in grad[..d].iter_mut().zip(&w[..d]) {
            *g += l2 * wi / nf;
        }
        crate::numerics::adam_step(&mut w, &grad, &mut state, &cfg, "probe").unwrap();
    }
    let bias = w[d];
    w.truncate(d);
    ProbeModel {
        weights: w,
        bias,
        l2,
    }
}

fn probe_scores(model: &ProbeModel, features: &Mat) -> Vec<f64> {
    (0..features.rows())
        .map(|r| {
            features
                .row(r)
                .iter()
                .zip(&model.weights)
                .map(|(x, w)| x * w)
                .sum::<f64>()
                + model.bias
        })
        .collect()
}

/// Mann-Whitney AUC with midrank tie handling.
pub fn auc_from_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(
            "AUC undefined: all users in a single class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over ties
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Standardize columns using the training rows' statistics.
fn standardize(train: &Mat, apply_to: &Mat) -> Mat {
    let d = train.cols();
    let n = train.rows() as f64;
    let mut mean = vec![0.0; d];
    for r in 0..train.rows() {
        for (m, v) in mean.iter_mut().zip(train.row(r)) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for r in 0..train.rows() {
        for (s, (v, m)) in std.iter_mut().zip(train.row(r).iter().zip(&mean)) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut std {
        *s = s.sqrt().max(1e-8);
    }
    let mut out = apply_to.clone();
    for r in 0..out.rows() {
        for (v, (m, s)) in out.row_mut(r).iter_mut().zip(mean.iter().zip(&std)) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Cross-validated probe AUC. Users are dealt into `folds` class-stratified
/// folds; each fold is scored by a probe trained on the remaining folds and
/// the pooled held-out scores give the AUC. Also returns the pooled per-user
/// scores (aligned with the input rows) for bootstrap use.
pub fn probe_auc(
    means: &Mat,
    labels: &[u8],
    folds: usize,
    l2: f64,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let n = means.rows();
    if n != labels.len() {
        return Err(Error::Shape("probe: labels/means length mismatch".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::Metric(
            "AUC undefined: all users in a single class".into(),
        ));
    }
    let folds = folds.max(2).min(n_pos).min(n - n_pos);
    let mut rng = RngStream::new(seed).fork("probe_cv");
    // deal each class round-robin into folds after a shuffle
    let mut fold_of = vec![0usize; n];
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..n).filter(|&u| labels[u] == class).collect();
        rng.shuffle(&mut members);
        for (i, &u) in members.iter().enumerate() {
            fold_of[u] = i % folds;
        }
    }
    let mut pooled = vec![0.0; n];
    for f in 0..folds {
        let train_rows: Vec<usize> = (0..n).filter(|&u| fold_of[u] != f).collect();
        let test_rows: Vec<usize> = (0..n).filter(|&u| fold_of[u] == f).collect();
        let gather = |rows: &[usize]| {
            let mut m = Mat::zeros(rows.len(), means.cols());
            for (i, &r) in rows.iter().enumerate() {
                m.row_mut(i).copy_from_slice(means.row(r));
            }
            m
        };
        let train_x_raw = gather(&train_rows);
        let train_y: Vec<u8> = train_rows.iter().map(|&r| labels[r]).collect();
        let test_x = standardize(&train_x_raw, &gather(&test_rows));
        let train_x = standardize(&train_x_raw, &train_x_raw);
        let model = fit_probe(&train_x, &train_y, l2);
        for (&r, s) in test_rows.iter().zip(probe_scores(&model, &test_x)) {
            pooled[r] = s;
        }
    }
    let auc = auc_from_scores(&pooled, labels)?;
    Ok((auc, pooled))
}
