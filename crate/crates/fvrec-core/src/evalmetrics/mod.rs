//! The four-metric evaluation suite (NDCG@k, leakage AUC probe, chi-square,
//! Kendall-Tau) plus recommendation generation and the bootstrap driver.

pub mod parity;
pub mod probe;
pub mod ranking;

pub use parity::{chi2_at_k, kendall_tau_at_k, kendall_tau_lists, Chi2Result, GroupedLists};
pub use probe::{auc_from_scores, probe_auc, ProbeModel};
pub use ranking::{ndcg_at_k, rank_discount, top_k_from_scores, RecommendationList};

use crate::dataio::{foldin_partition, Dataset, InteractionMatrix};
use crate::error::{Error, Result};
use crate::model::RecModel;
use crate::numerics::{gaussian_sample, Mat, RngStream};
use crate::slim::{score_slim, SlimModel};

/// Latent handling at inference: decode the parameterized mean, or decode one
/// seeded sample per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Deterministic,
    Sampled,
}

impl ScoreMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreMode::Deterministic => "deterministic",
            ScoreMode::Sampled => "sampled",
        }
    }
}

/// A model under evaluation.
#[derive(Clone, Copy)]
pub enum ModelRef<'a> {
    Vae(&'a RecModel),
    Slim(&'a SlimModel),
}

/// Fold-in/holdout partitions for a user set. Users with fewer than two
/// positives cannot be ranked and are counted in `skipped`.
#[derive(Debug, Clone)]
pub struct FoldinData {
    pub users: Vec<usize>,
    pub foldin: Vec<Vec<u32>>,
    pub holdout: Vec<Vec<u32>>,
    pub skipped: usize,
}

/// Partitions every user's positives. The per-user stream is forked from the
/// user's external id, so partitions do not depend on the order or subset of
/// users evaluated.
pub fn build_foldin(
    matrix: &InteractionMatrix,
    users: &[usize],
    fraction: f64,
    seed: u64,
) -> FoldinData {
    let root = RngStream::new(seed).fork("foldin");
    let mut out = FoldinData {
        users: Vec::with_capacity(users.len()),
        foldin: Vec::new(),
        holdout: Vec::new(),
        skipped: 0,
    };
    for &u in users {
        let items = matrix.user_row(u);
        let mut rng = root.fork(&format!("user/{}", matrix.user_ids()[u]));
        match foldin_partition(items, fraction, &mut rng) {
            Ok((fi, ho)) => {
                out.users.push(u);
                out.foldin.push(fi);
                out.holdout.push(ho);
            }
            Err(_) => out.skipped += 1,
        }
    }
    out
}

const SCORE_CHUNK: usize = 256;

fn foldin_rows(matrix: &InteractionMatrix, foldin: &[Vec<u32>], lo: usize, hi: usize) -> Mat {
    let mut rows = Mat::zeros(hi - lo, matrix.n_items());
    for (r, fi) in foldin[lo..hi].iter().enumerate() {
        for &item in fi {
            rows.set(r, item as usize, 1.0);
        }
    }
    rows
}

/// z-part latent means for all fold-in users, in `data.users` order.
pub fn vae_latent_means(
    model: &RecModel,
    matrix: &InteractionMatrix,
    data: &FoldinData,
) -> Result<Mat> {
    vae_latent_for_mode(model, matrix, data, ScoreMode::Deterministic, 0)
}

/// The z-part representation a user is exposed to in the given mode: the
/// parameterized mean, or the same seeded sample the recommendations use.
/// The leakage probe runs on exactly this representation.
pub fn vae_latent_for_mode(
    model: &RecModel,
    matrix: &InteractionMatrix,
    data: &FoldinData,
    mode: ScoreMode,
    seed: u64,
) -> Result<Mat> {
    let n = data.users.len();
    let split = model.cfg.split;
    let mut out = Mat::zeros(n, split);
    let root = RngStream::new(seed).fork("sampled-inference");
    let mut lo = 0;
    while lo < n {
        let hi = (lo + SCORE_CHUNK).min(n);
        let rows = foldin_rows(matrix, &data.foldin, lo, hi);
        let enc = model.encode(&rows)?;
        match mode {
            ScoreMode::Deterministic => {
                let z = enc.latent.z_means();
                for r in lo..hi {
                    out.row_mut(r).copy_from_slice(z.row(r - lo));
                }
            }
            ScoreMode::Sampled => {
                for r in lo..hi {
                    let uid = &matrix.user_ids()[data.users[r]];
                    let mut rng = root.fork(&format!("user/{uid}"));
                    let s = gaussian_sample(
                        &enc.latent.mean.row(r - lo)[..split],
                        &enc.latent.log_var.row(r - lo)[..split],
                        &mut rng,
                    );
                    out.row_mut(r).copy_from_slice(&s);
                }
            }
        }
        lo = hi;
    }
    Ok(out)
}

/// Item scores for the fold-in users. Sampled mode draws one latent sample
/// per user from a stream forked off the user's external id, so results do
/// not depend on chunking.
fn model_scores(
    model: ModelRef<'_>,
    matrix: &InteractionMatrix,
    data: &FoldinData,
    mode: ScoreMode,
    seed: u64,
    lo: usize,
    hi: usize,
) -> Result<Mat> {
    let rows = foldin_rows(matrix, &data.foldin, lo, hi);
    match model {
        ModelRef::Slim(slim) => {
            if mode == ScoreMode::Sampled {
                return Err(Error::Config(
                    "sampled mode is a VAE feature; SLIM scoring is deterministic".into(),
                ));
            }
            let mut out = Mat::zeros(rows.rows(), matrix.n_items());
            for r in 0..rows.rows() {
                let scores = score_slim(slim, rows.row(r))?;
                out.row_mut(r).copy_from_slice(&scores);
            }
            Ok(out)
        }
        ModelRef::Vae(vae) => {
            let enc = vae.encode(&rows)?;
            let z = match mode {
                ScoreMode::Deterministic => enc.latent.z_means(),
                ScoreMode::Sampled => {
                    let root = RngStream::new(seed).fork("sampled-inference");
                    let split = vae.cfg.split;
                    let mut z = Mat::zeros(rows.rows(), split);
                    for r in 0..rows.rows() {
                        let uid = &matrix.user_ids()[data.users[lo + r]];
                        let mut rng = root.fork(&format!("user/{uid}"));
                        let s = gaussian_sample(
                            &enc.latent.mean.row(r)[..split],
                            &enc.latent.log_var.row(r)[..split],
                            &mut rng,
                        );
                        z.row_mut(r).copy_from_slice(&s);
                    }
                    z
                }
            };
            Ok(vae.decode(&z)?.out)
        }
    }
}

/// Top-k recommendation lists for the fold-in users; fold-in items are masked
/// before ranking and ties break by ascending item index.
pub fn recommend_top_k(
    model: ModelRef<'_>,
    matrix: &InteractionMatrix,
    data: &FoldinData,
    k: usize,
    mode: ScoreMode,
    seed: u64,
) -> Result<Vec<RecommendationList>> {
    let n = data.users.len();
    let mut lists = Vec::with_capacity(n);
    let mut lo = 0;
    while lo < n {
        let hi = (lo + SCORE_CHUNK).min(n);
        let scores = model_scores(model, matrix, data, mode, seed, lo, hi)?;
        for r in lo..hi {
            lists.push(RecommendationList {
                user: data.users[r],
                items: top_k_from_scores(scores.row(r - lo), &data.foldin[r], k),
            });
        }
        lo = hi;
    }
    Ok(lists)
}

/// A metric value with its bootstrap spread (standard deviation over user
/// resamples).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricWithSpread {
    pub value: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AttrMetrics {
    pub attribute: String,
    pub auc: Option<MetricWithSpread>,
    pub chi2: MetricWithSpread,
    pub chi2_items_used: usize,
    pub kendall_tau: MetricWithSpread,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalOutcome {
    pub mode: ScoreMode,
    pub ndcg: MetricWithSpread,
    pub attrs: Vec<AttrMetrics>,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub k: usize,
    pub list_k: usize,
    pub foldin_fraction: f64,
    pub bootstrap: usize,
    pub probe_folds: usize,
    pub probe_l2: f64,
    pub mode: ScoreMode,
    pub seed: u64,
}

fn spread(stats: &[f64]) -> f64 {
    if stats.len() < 2 {
        return 0.0;
    }
    let n = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / n;
    (stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Full evaluation of one model on one user set: NDCG@k, per-attribute AUC
/// (VAE only), chi-square@list_k and Kendall-Tau@list_k, each with a
/// bootstrap spread over users.
pub fn evaluate(
    model: ModelRef<'_>,
    dataset: &Dataset,
    users: &[usize],
    cfg: &EvalConfig,
) -> Result<EvalOutcome> {
    let data = build_foldin(&dataset.matrix, users, cfg.foldin_fraction, cfg.seed);
    if data.users.is_empty() {
        return Err(Error::Data("no evaluable users (all skipped)".into()));
    }
    let lists = recommend_top_k(
        model,
        &dataset.matrix,
        &data,
        cfg.list_k,
        cfg.mode,
        cfg.seed,
    )?;
    let n = data.users.len();

    let per_user_ndcg: Vec<f64> = (0..n)
        .map(|i| ndcg_at_k(&lists[i].items, &data.holdout[i], cfg.k))
        .collect::<Result<_>>()?;
    let ndcg_value = per_user_ndcg.iter().sum::<f64>() / n as f64;

    // the probe sees the z-part representation of the evaluated mode (VAE only)
    let probe_scores: Option<Vec<(f64, Vec<f64>)>> = match model {
        ModelRef::Vae(vae) => {
            let means = vae_latent_for_mode(vae, &dataset.matrix, &data, cfg.mode, cfg.seed)?;
            let mut per_attr = Vec::new();
            for attr in 0..2 {
                let labels: Vec<u8> = data
                    .users
                    .iter()
                    .map(|&u| dataset.labels.attribute(attr)[u])
                    .collect();
                let (auc, scores) =
                    probe_auc(&means, &labels, cfg.probe_folds, cfg.probe_l2, cfg.seed)?;
                per_attr.push((auc, scores));
            }
            Some(per_attr)
        }
        ModelRef::Slim(_) => None,
    };

    let mut boot_rng = RngStream::new(cfg.seed).fork("bootstrap");
    let mut ndcg_stats = Vec::with_capacity(cfg.bootstrap);
    let mut auc_stats: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut chi2_stats: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut kt_stats: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let groups: [Vec<u8>; 2] = [
        data.users
            .iter()
            .map(|&u| dataset.labels.attribute(0)[u])
            .collect(),
        data.users
            .iter()
            .map(|&u| dataset.labels.attribute(1)[u])
            .collect(),
    ];
    for _ in 0..cfg.bootstrap {
        let mut weights = vec![0.0f64; n];
        for _ in 0..n {
            weights[boot_rng.below(n)] += 1.0;
        }
        let wsum: f64 = n as f64;
        ndcg_stats.push(
            per_user_ndcg
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                / wsum,
        );
        for attr in 0..2 {
            if let Some(per_attr) = &probe_scores {
                let mut scores = Vec::new();
                let mut labels = Vec::new();
                for i in 0..n {
                    for _ in 0..weights[i] as usize {
                        scores.push(per_attr[attr].1[i]);
                        labels.push(groups[attr][i]);
                    }
                }
                if let Ok(auc) = auc_from_scores(&scores, &labels) {
                    auc_stats[attr].push(auc);
                }
            }
            let grouped = GroupedLists {
                lists: &lists,
                groups: &groups[attr],
                foldin: &data.foldin,
                n_items: dataset.matrix.n_items(),
            };
            if let Ok(r) = chi2_at_k(&grouped, Some(&weights)) {
                chi2_stats[attr].push(r.statistic);
            }
            if let Ok(v) = kendall_tau_at_k(&grouped, cfg.list_k, Some(&weights)) {
                kt_stats[attr].push(v);
            }
        }
    }

    let mut attrs = Vec::new();
    for attr in 0..2 {
        let grouped = GroupedLists {
            lists: &lists,
            groups: &groups[attr],
            foldin: &data.foldin,
            n_items: dataset.matrix.n_items(),
        };
        let chi2 = chi2_at_k(&grouped, None)?;
        let kt = kendall_tau_at_k(&grouped, cfg.list_k, None)?;
        attrs.push(AttrMetrics {
            attribute: crate::dataio::ATTRIBUTES[attr].to_string(),
            auc: probe_scores.as_ref().map(|p| MetricWithSpread {
                value: p[attr].0,
                spread: spread(&auc_stats[attr]),
            }),
            chi2: MetricWithSpread {
                value: chi2.statistic,
                spread: spread(&chi2_stats[attr]),
            },
            chi2_items_used: chi2.items_used,
            kendall_tau: MetricWithSpread {
                value: kt,
                spread: spread(&kt_stats[attr]),
            },
        });
    }
    Ok(EvalOutcome {
        mode: cfg.mode,
        ndcg: MetricWithSpread {
            value: ndcg_value,
            spread: spread(&ndcg_stats),
        },
        attrs,
        users_evaluated: n,
        users_skipped: data.skipped,
    })
}

/// Per-epoch validation: deterministic NDCG@k plus probe AUC per attribute
/// on the z-part latent means.
pub fn quick_validation(
    model: &RecModel,
    dataset: &Dataset,
    data: &FoldinData,
    k: usize,
    probe_folds: usize,
    probe_l2: f64,
    seed: u64,
) -> Result<(f64, [f64; 2])> {
    let lists = recommend_top_k(
        ModelRef::Vae(model),
        &dataset.matrix,
        data,
        k,
        ScoreMode::Deterministic,
        seed,
    )?;
    let n = data.users.len();
    let mut ndcg = 0.0;
    for i in 0..n {
        ndcg += ndcg_at_k(&lists[i].items, &data.holdout[i], k)?;
    }
    ndcg /= n as f64;
    let means = vae_latent_means(model, &dataset.matrix, data)?;
    let mut aucs = [0.5f64; 2];
    for attr in 0..2 {
        let labels: Vec<u8> = data
            .users
            .iter()
            .map(|&u| dataset.labels.attribute(attr)[u])
            .collect();
        let (auc, _) = probe_auc(&means, &labels, probe_folds, probe_l2, seed)?;
        aucs[attr] = auc;
    }
    Ok((ndcg, aucs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{split_users, SensitiveLabels, SplitTag};
    use crate::model::{ModelConfig, Variant};
    use std::collections::BTreeMap;

    fn toy_dataset() -> Dataset {
        let mut positives = BTreeMap::new();
        let mut rng = RngStream::new(99);
        for u in 0..60 {
            let mut items: Vec<String> = Vec::new();
            for i in 0..12 {
                if rng.uniform() < 0.4 {
                    items.push(format!("{i}"));
                }
            }
            if items.len() < 2 {
                items = vec!["0".into(), "1".into()];
            }
            positives.insert(format!("{u}"), items);
        }
        let matrix = InteractionMatrix::from_positives(&positives).unwrap();
        let labels = SensitiveLabels {
            gender: (0..60).map(|u| (u % 2) as u8).collect(),
            age_group: (0..60).map(|u| ((u / 3) % 2) as u8).collect(),
        };
        let split = split_users(&matrix, &labels, (0.6, 0.2, 0.2), 5).unwrap();
        let tags = split.tags(matrix.n_users());
        Dataset {
            matrix,
            labels,
            tags,
        }
    }

    fn toy_model(n_items: usize) -> RecModel {
        RecModel::init(
            ModelConfig {
                variant: Variant::VaeEmp,
                n_items,
                hidden: vec![16],
                latent: 6,
                split: 4,
                adv_hidden: vec![8],
                n_attrs: 2,
            },
            &mut RngStream::new(12),
        )
        .unwrap()
    }

    #[test]
    fn foldin_items_never_recommended() {
        let ds = toy_dataset();
        let model = toy_model(ds.matrix.n_items());
        let users = ds.users_with(SplitTag::Test);
        let data = build_foldin(&ds.matrix, &users, 0.8, 3);
        let lists = recommend_top_k(
            ModelRef::Vae(&model),
            &ds.matrix,
            &data,
            5,
            ScoreMode::Deterministic,
            3,
        )
        .unwrap();
        for (i, list) in lists.iter().enumerate() {
            for item in &list.items {
                assert!(data.foldin[i].binary_search(item).is_err());
            }
            let unique: std::collections::BTreeSet<_> = list.items.iter().collect();
            assert_eq!(unique.len(), list.items.len());
        }
    }

    #[test]
    fn sampled_mode_with_tiny_variance_matches_deterministic() {
        let ds = toy_dataset();
        let mut model = toy_model(ds.matrix.n_items());
        // push log-variance head bias to the clamp floor: std = exp(-5)
        for v in model.enc_z.logvar_head.w.data_mut() {
            *v = 0.0;
        }
        for b in &mut model.enc_z.logvar_head.b {
            *b = -1e9;
        }
        let users = ds.users_with(SplitTag::Test);
        let data = build_foldin(&ds.matrix, &users, 0.8, 3);
        let det = recommend_top_k(
            ModelRef::Vae(&model),
            &ds.matrix,
            &data,
            3,
            ScoreMode::Deterministic,
            3,
        )
        .unwrap();
        let sam = recommend_top_k(
            ModelRef::Vae(&model),
            &ds.matrix,
            &data,
            3,
            ScoreMode::Sampled,
            3,
        )
        .unwrap();
        let mut same = 0;
        for (a, b) in det.iter().zip(&sam) {
            if a.items == b.items {
                same += 1;
            }
        }
        // std ~ 6.7e-3 can flip near-ties on a random init, but almost all
        // lists must agree
        assert!(same * 10 >= det.len() * 9, "{same}/{}", det.len());
    }

    #[test]
    fn sampled_mode_is_reproducible_and_chunk_independent() {
        let ds = toy_dataset();
        let model = toy_model(ds.matrix.n_items());
        let users = ds.users_with(SplitTag::Test);
        let data = build_foldin(&ds.matrix, &users, 0.8, 3);
        let a = recommend_top_k(
            ModelRef::Vae(&model),
            &ds.matrix,
            &data,
            5,
            ScoreMode::Sampled,
            17,
        )
        .unwrap();
        let b = recommend_top_k(
            ModelRef::Vae(&model),
            &ds.matrix,
            &data,
            5,
            ScoreMode::Sampled,
            17,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_runs_end_to_end_and_is_deterministic() {
        let ds = toy_dataset();
        let model = toy_model(ds.matrix.n_items());
        let users = ds.users_with(SplitTag::Test);
        let cfg = EvalConfig {
            k: 3,
            list_k: 5,
            foldin_fraction: 0.8,
            bootstrap: 50,
            probe_folds: 3,
            probe_l2: 1.0,
            mode: ScoreMode::Deterministic,
            seed: 11,
        };
        let a = evaluate(ModelRef::Vae(&model), &ds, &users, &cfg).unwrap();
        let b = evaluate(ModelRef::Vae(&model), &ds, &users, &cfg).unwrap();
        assert_eq!(a.ndcg.value.to_bits(), b.ndcg.value.to_bits());
        assert_eq!(a.attrs[0].chi2.value.to_bits(), b.attrs[0].chi2.value.to_bits());
        assert!(a.ndcg.value >= 0.0 && a.ndcg.value <= 1.0);
        assert!(a.attrs[0].auc.is_some());
        for attr in &a.attrs {
            let auc = attr.auc.unwrap().value;
            assert!((0.0..=1.0).contains(&auc));
            assert!((-1.0..=1.0).contains(&attr.kendall_tau.value));
            assert!(attr.chi2.value >= 0.0);
        }
    }

    #[test]
    fn slim_evaluation_has_no_auc() {
        let ds = toy_dataset();
        let train = ds.users_with(SplitTag::Train);
        let slim = crate::slim::fit_slim(&ds.matrix, &train, 0.1, 0.1, 50, 1e-6).unwrap();
        let users = ds.users_with(SplitTag::Test);
        let cfg = EvalConfig {
            k: 3,
            list_k: 5,
            foldin_fraction: 0.8,
            bootstrap: 20,
            probe_folds: 3,
            probe_l2: 1.0,
            mode: ScoreMode::Deterministic,
            seed: 11,
        };
        let out = evaluate(ModelRef::Slim(&slim), &ds, &users, &cfg).unwrap();
        assert!(out.attrs[0].auc.is_none());
        let err = evaluate(
            ModelRef::Slim(&slim),
            &ds,
            &users,
            &EvalConfig {
                mode: ScoreMode::Sampled,
                ..cfg
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
