// Scratch calibration run for the synthetic fairness experiment.
use std::time::Instant;

use fvrec_core::dataio::{Dataset, SplitTag};
use fvrec_core::evalmetrics::{evaluate, EvalConfig, ModelRef, ScoreMode};
use fvrec_core::model::Variant;
use fvrec_core::objectives::LossWeights;
use fvrec_core::synth::{generate, SynthConfig};
use fvrec_core::training::{train, TrainConfig};
use fvrec_core::RunConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant: Variant = args.get(1).map(|s| s.as_str()).unwrap_or("vaerec").parse().unwrap();
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let hidden: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(50);

    let t0 = Instant::now();
    let synth = generate(&SynthConfig::default()).unwrap();
    let tags = synth.split.tags(synth.matrix.n_users());
    let dataset = Dataset {
        matrix: synth.matrix,
        labels: synth.labels,
        tags,
    };
    eprintln!(
        "synth: {} users, {} items, {} interactions ({:.1}s)",
        dataset.matrix.n_users(),
        dataset.matrix.n_items(),
        dataset.matrix.n_interactions(),
        t0.elapsed().as_secs_f64()
    );

    let run_cfg = RunConfig::default();
    let mut model_cfg = run_cfg.resolve_model(variant, dataset.matrix.n_items()).unwrap();
    model_cfg.hidden = vec![hidden];
    let weights = LossWeights {
        beta: run_cfg.resolve_beta(variant).unwrap(),
        alpha: 10.0,
        gamma: 5.0,
        lambda_adv: 1.0,
    };
    let train_cfg = TrainConfig {
        epochs,
        batch_size: 250,
        seed,
        adv_steps: 5,
        patience: 8,
        lr: 1e-3,
        weights,
        dropout: 0.5,
        foldin_fraction: 0.8,
        k: 10,
        probe_folds: 5,
        probe_l2: 1.0,
        quiet: false,
    };
    let t1 = Instant::now();
    let out = train(&dataset, model_cfg, &train_cfg).unwrap();
    eprintln!(
        "train {variant} seed {seed}: best epoch {} val_ndcg {:.4} ({:.1}s)",
        out.best_epoch,
        out.best_val_ndcg,
        t1.elapsed().as_secs_f64()
    );

    let test_users = dataset.users_with(SplitTag::Test);
    for mode in [ScoreMode::Deterministic, ScoreMode::Sampled] {
        let cfg = EvalConfig {
            k: 10,
            list_k: 100,
            foldin_fraction: 0.8,
            bootstrap: 50,
            probe_folds: 5,
            probe_l2: 1.0,
            mode,
            seed: 7,
        };
        let t2 = Instant::now();
        let res = evaluate(ModelRef::Vae(&out.model), &dataset, &test_users, &cfg).unwrap();
        println!(
            "{variant} seed {seed} {:?}: ndcg {:.4} auc_g {:.4} auc_a {:.4} chi2_g {:.0}({}) kt_g {:.3} ({:.1}s)",
            mode,
            res.ndcg.value,
            res.attrs[0].auc.unwrap().value,
            res.attrs[1].auc.unwrap().value,
            res.attrs[0].chi2.value,
            res.attrs[0].chi2_items_used,
            res.attrs[0].kendall_tau.value,
            t2.elapsed().as_secs_f64()
        );
    }
    eprintln!("total {:.1}s", t0.elapsed().as_secs_f64());
}
