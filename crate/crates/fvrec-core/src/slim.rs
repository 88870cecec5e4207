//! SLIM baseline: sparse item-to-item weight matrix learned by per-column
//! elastic-net regression with non-negativity and zero-diagonal constraints.
//! Scoring is a linear function of the user's interaction row, so the model
//! recommends for users absent from fitting by construction.

use std::fs;
use std::path::Path;

use crate::dataio::InteractionMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SlimModel {
    pub n_items: usize,
    pub l1: f64,
    pub l2: f64,
    /// Item vocabulary checksum of the training matrix.
    pub vocab_checksum: String,
    /// Per target column j: sorted (source item, weight) pairs, diagonal absent.
    cols: Vec<Vec<(u32, f64)>>,
}

impl SlimModel {
    pub fn column(&self, j: usize) -> &[(u32, f64)] {
        &self.cols[j]
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(|c| c.len()).sum()
    }
}

/// Elastic-net objective for one column, used for the sweep monotonicity
/// checks: 0.5*||y - Xw||^2 + l1*sum(w) + 0.5*l2*||w||^2 (w >= 0).
fn column_objective(residual: &[f64], weights: &[(u32, f64)], l1: f64, l2: f64) -> f64 {
    let rss: f64 = residual.iter().map(|r| r * r).sum();
    let wsum: f64 = weights.iter().map(|(_, w)| w).sum();
    let wsq: f64 = weights.iter().map(|(_, w)| w * w).sum();
    0.5 * rss + l1 * wsum + 0.5 * l2 * wsq
}

/// Fits W column by column with cyclic coordinate descent. Candidate features
/// for column j are the items co-occurring with j in the training rows; all
/// other coordinates provably stay at zero for non-negative data.
pub fn fit_slim(
    matrix: &InteractionMatrix,
    train_users: &[usize],
    l1: f64,
    l2: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SlimModel> {
    fit_slim_traced(matrix, train_users, l1, l2, max_iters, tol, None)
}

/// Same as [`fit_slim`] but records the per-sweep objective of every column
/// into `trace` when given. Test hook for the monotonicity invariant.
pub fn fit_slim_traced(
    matrix: &InteractionMatrix,
    train_users: &[usize],
    l1: f64,
    l2: f64,
    max_iters: usize,
    tol: f64,
    mut trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<SlimModel> {
    if l1 < 0.0 || l2 < 0.0 {
        return Err(Error::Config("slim penalties must be non-negative".into()));
    }
    let n_items = matrix.n_items();
    let n_users = train_users.len();
    // CSC over the training users: per item, the local user indices.
    let mut item_users: Vec<Vec<u32>> = vec![Vec::new(); n_items];
    for (local, &u) in train_users.iter().enumerate() {
        for &it in matrix.user_row(u) {
            item_users[it as usize].push(local as u32);
        }
    }
    let mut cols = Vec::with_capacity(n_items);
    let mut residual = vec![0.0f64; n_users];
    for j in 0..n_items {
        // candidates: items sharing at least one user with j
        let mut seen = vec![false; n_items];
        let mut candidates: Vec<u32> = Vec::new();
        for &local in &item_users[j] {
            let u = train_users[local as usize];
            for &it in matrix.user_row(u) {
                let it = it as usize;
                if it != j && !seen[it] {
                    seen[it] = true;
                    candidates.push(it as u32);
                }
            }
        }
        candidates.sort_unstable();

        // residual starts at y (binary column j)
        for r in residual.iter_mut() {
            *r = 0.0;
        }
        for &local in &item_users[j] {
            residual[local as usize] = 1.0;
        }
        let mut weights: Vec<f64> = vec![0.0; candidates.len()];
        let mut col_trace = Vec::new();
        if trace.is_some() {
            let w0: Vec<(u32, f64)> = Vec::new();
            col_trace.push(column_objective(&residual, &w0, l1, l2));
        }
        for _sweep in 0..max_iters {
            let mut max_delta = 0.0f64;
            for (ci, &k) in candidates.iter().enumerate() {
                let users_k = &item_users[k as usize];
                let norm = users_k.len() as f64;
                if norm == 0.0 {
                    continue;
                }
                let dot: f64 = users_k.iter().map(|&u| residual[u as usize]).sum();
                // a_k^T (r + a_k w_k) with binary a_k
                let g = dot + norm * weights[ci];
                let w_new = ((g - l1) / (norm + l2)).max(0.0);
                let delta = w_new - weights[ci];
                if delta != 0.0 {
                    for &u in users_k {
                        residual[u as usize] -= delta;
                    }
                    weights[ci] = w_new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if trace.is_some() {
                let w: Vec<(u32, f64)> = candidates
                    .iter()
                    .zip(&weights)
                    .map(|(&k, &w)| (k, w))
                    .collect();
                col_trace.push(column_objective(&residual, &w, l1, l2));
            }
            if max_delta < tol {
                break;
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(col_trace);
        }
        cols.push(
            candidates
                .iter()
                .zip(&weights)
                .filter(|(_, &w)| w != 0.0)
                .map(|(&k, &w)| (k, w))
                .collect(),
        );
    }
    Ok(SlimModel {
        n_items,
        l1,
        l2,
        vocab_checksum: matrix.vocab_checksum(),
        cols,
    })
}

/// scores = row * W; the caller masks fold-in items before ranking.
pub fn score_slim(model: &SlimModel, row: &[f64]) -> Result<Vec<f64>> {
    if row.len() != model.n_items {
        return Err(Error::Shape(format!(
            "score_slim: row has {} items, model {}",
            row.len(),
            model.n_items
        )));
    }
    let mut scores = vec![0.0; model.n_items];
    for (j, col) in model.cols.iter().enumerate() {
        let mut s = 0.0;
        for &(k, w) in col {
            let x = row[k as usize];
            if x != 0.0 {
                s += x * w;
            }
        }
        scores[j] = s;
    }
    Ok(scores)
}

pub fn save_slim(model: &SlimModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("FVREC-SLIM v1\n");
    out.push_str(&format!("vocab {}\n", model.vocab_checksum));
    out.push_str(&format!("items {}\n", model.n_items));
    out.push_str(&format!("l1 {}\n", model.l1));
    out.push_str(&format!("l2 {}\n", model.l2));
    for (j, col) in model.cols.iter().enumerate() {
        for &(k, w) in col {
            out.push_str(&format!("{k} {j} {w}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::Data(format!("cannot write slim model: {e}")))
}

pub fn load_slim(path: &Path) -> Result<SlimModel> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read slim model {}: {e}", path.display())))?;
    let mut lines = content.lines().enumerate();
    let perr = |line: usize, msg: String| Error::Parse {
        file: path.display().to_string(),
        line: line + 1,
        msg,
    };
    let (i, magic) = lines
        .next()
        .ok_or_else(|| Error::Data("empty slim model file".into()))?;
    if magic != "FVREC-SLIM v1" {
        return Err(perr(i, format!("bad magic '{magic}'")));
    }
    let mut vocab_checksum = String::new();
    let mut n_items = 0usize;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for _ in 0..4 {
        let (i, line) = lines
            .next()
            .ok_or_else(|| Error::Data("truncated slim header".into()))?;
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| perr(i, "bad header line".into()))?;
        match key {
            "vocab" => vocab_checksum = value.to_string(),
            "items" => {
                n_items = value
                    .parse()
                    .map_err(|_| perr(i, "bad item count".into()))?
            }
            "l1" => l1 = value.parse().map_err(|_| perr(i, "bad l1".into()))?,
            "l2" => l2 = value.parse().map_err(|_| perr(i, "bad l2".into()))?,
            other => return Err(perr(i, format!("unknown header key '{other}'"))),
        }
    }
    let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_items];
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 3 {
            return Err(perr(i, "expected (row, col, weight)".into()));
        }
        let k: u32 = fields[0].parse().map_err(|_| perr(i, "bad row".into()))?;
        let j: usize = fields[1].parse().map_err(|_| perr(i, "bad col".into()))?;
        let w: f64 = fields[2].parse().map_err(|_| perr(i, "bad weight".into()))?;
        if j >= n_items || k as usize >= n_items {
            return Err(perr(i, "index out of range".into()));
        }
        if k as usize == j {
            return Err(perr(i, "diagonal entry in slim model".into()));
        }
        cols[j].push((k, w));
    }
    Ok(SlimModel {
        n_items,
        l1,
        l2,
        vocab_checksum,
        cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn co_occurrence_matrix() -> InteractionMatrix {
        // items 0 and 1 always co-occur; item 2 occurs alone
        let mut positives = BTreeMap::new();
        for u in 0..8 {
            positives.insert(format!("a{u}"), vec!["0".to_string(), "1".to_string()]);
        }
        for u in 0..4 {
            positives.insert(format!("b{u}"), vec!["2".to_string()]);
        }
        InteractionMatrix::from_positives(&positives).unwrap()
    }

    #[test]
    fn co_occurring_items_get_large_mutual_weights() {
        let m = co_occurrence_matrix();
        let users: Vec<usize> = (0..m.n_users()).collect();
        let model = fit_slim(&m, &users, 1e-6, 1e-6, 200, 1e-10).unwrap();
        // closed form for w >= 0: w = (n - l1)/(n + l2) with n = 8 shared users
        let w01 = model
            .column(1)
            .iter()
            .find(|(k, _)| *k == 0)
            .map(|(_, w)| *w)
            .unwrap();
        assert!((w01 - 1.0).abs() < 1e-6, "w01 = {w01}");
        let w10 = model
            .column(0)
            .iter()
            .find(|(k, _)| *k == 1)
            .map(|(_, w)| *w)
            .unwrap();
        assert!((w10 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn huge_l1_zeroes_everything() {
        let m = co_occurrence_matrix();
        let users: Vec<usize> = (0..m.n_users()).collect();
        let model = fit_slim(&m, &users, 1e9, 0.0, 50, 1e-10).unwrap();
        assert_eq!(model.nnz(), 0);
    }

    #[test]
    fn diagonal_is_always_zero() {
        let m = co_occurrence_matrix();
        let users: Vec<usize> = (0..m.n_users()).collect();
        let model = fit_slim(&m, &users, 0.1, 0.1, 100, 1e-9).unwrap();
        for j in 0..m.n_items() {
            assert!(model.column(j).iter().all(|(k, _)| *k as usize != j));
            assert!(model.column(j).iter().all(|(_, w)| *w >= 0.0));
        }
    }

    #[test]
    fn objective_non_increasing_per_sweep() {
        let m = co_occurrence_matrix();
        let users: Vec<usize> = (0..m.n_users()).collect();
        let mut trace = Vec::new();
        fit_slim_traced(&m, &users, 0.5, 0.5, 50, 1e-12, Some(&mut trace)).unwrap();
        for col in &trace {
            for w in col.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-10,
                    "objective increased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn scoring_hand_example_and_linearity() {
        // 3 items, symmetric off-diagonal weights 0.5 between 0-1, 0.2 between 1-2
        let model = SlimModel {
            n_items: 3,
            l1: 0.0,
            l2: 0.0,
            vocab_checksum: "x".into(),
            cols: vec![
                vec![(1, 0.5)],
                vec![(0, 0.5), (2, 0.2)],
                vec![(1, 0.2)],
            ],
        };
        assert_eq!(score_slim(&model, &[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
        let s = score_slim(&model, &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(s, vec![0.0, 0.7, 0.0]);
        let s2 = score_slim(&model, &[2.0, 0.0, 2.0]).unwrap();
        for (a, b) in s.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn model_round_trips_through_file() {
        let m = co_occurrence_matrix();
        let users: Vec<usize> = (0..m.n_users()).collect();
        let model = fit_slim(&m, &users, 0.3, 0.7, 100, 1e-9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slim.model");
        save_slim(&model, &path).unwrap();
        let loaded = load_slim(&path).unwrap();
        assert_eq!(model, loaded);
    }
}
