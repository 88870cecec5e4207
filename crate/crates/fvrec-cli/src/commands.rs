//! Subcommand implementations. Every artifact embeds the effective config and
//! seed; nothing volatile (timestamps, wall time) goes into files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fvrec_core::checkpoint::{
    checkpoint_from_model, load_checkpoint, model_from_checkpoint, save_checkpoint,
};
use fvrec_core::dataio::{
    ingest_lastfm, ingest_movielens, load_dataset, split_users, write_dataset, Dataset,
    IngestReport, LastFmValue, SplitTag,
};
use fvrec_core::error::{Error, Result};
use fvrec_core::evalmetrics::{evaluate as eval_model, EvalConfig, ModelRef, ScoreMode};
use fvrec_core::report::{load_report, render_report, render_table, EvaluationReport};
use fvrec_core::runcfg::ModelKind;
use fvrec_core::slim::{fit_slim, load_slim, save_slim};
use fvrec_core::synth::{generate, write_factors, SynthConfig};
use fvrec_core::training::{train as train_model, TrainError, TrainOutput};
use fvrec_core::RunConfig;

fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn ingest_summary(report: &IngestReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "raw_records = {}", report.raw_records);
    let _ = writeln!(out, "users_in_attr_file = {}", report.users_in_attr_file);
    let _ = writeln!(
        out,
        "users_dropped_missing_attrs = {}",
        report.users_dropped_missing_attrs
    );
    let _ = writeln!(out, "users_retained = {}", report.users_retained);
    let _ = writeln!(out, "items_retained = {}", report.items_retained);
    let _ = writeln!(
        out,
        "items_dropped_by_filter = {}",
        report.items_dropped_by_filter
    );
    let _ = writeln!(out, "positives_retained = {}", report.positives_retained);
    let _ = writeln!(out, "female/male = {}/{}", report.n_female, report.n_male);
    let _ = writeln!(out, "senior/young = {}/{}", report.n_senior, report.n_young);
    out
}

pub fn prepare(
    kind: &str,
    ratings: &Path,
    users: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let age_threshold = cfg.get_u64("data.age_threshold")? as u32;
    let (matrix, labels, report) = match kind {
        "movielens" => ingest_movielens(
            ratings,
            users,
            cfg.get_f64("data.min_rating")?,
            age_threshold,
            cfg.get_usize("data.min_item_positives")?,
        )?,
        "lastfm" => {
            let value_mode = match cfg.get("data.lastfm_value") {
                "count" => LastFmValue::Count,
                "timestamp" => LastFmValue::Timestamp,
                other => {
                    return Err(Error::Config(format!(
                        "data.lastfm_value must be count or timestamp, got '{other}'"
                    )))
                }
            };
            ingest_lastfm(
                ratings,
                users,
                cfg.get_u64("data.min_item_events")?,
                age_threshold,
                value_mode,
            )?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown dataset kind '{other}' (expected movielens or lastfm)"
            )))
        }
    };
    let split = split_users(
        &matrix,
        &labels,
        cfg.split_fractions()?,
        cfg.get_u64("seed")?,
    )?;
    write_dataset(out, &matrix, &labels, &split)?;
    let mut text = String::new();
    let _ = writeln!(text, "# fvrec prepare report");
    let _ = writeln!(text, "kind = {kind}");
    let _ = writeln!(
        text,
        "splits train/val/test = {}/{}/{}",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    text.push_str(&ingest_summary(&report));
    text.push_str("\n[config]\n");
    text.push_str(&cfg.echo());
    write_text(&out.join("prepare_report.txt"), &text)?;
    println!(
        "prepared {} users x {} items ({} interactions) into {}",
        matrix.n_users(),
        matrix.n_items(),
        matrix.n_interactions(),
        out.display()
    );
    Ok(())
}

pub fn synth(out: &Path, cfg: &RunConfig) -> Result<()> {
    let synth_cfg = SynthConfig {
        n_users: cfg.get_usize("synth.users")?,
        n_items: cfg.get_usize("synth.items")?,
        n_factors: cfg.get_usize("synth.factors")?,
        rho: cfg.get_f64("synth.rho")?,
        min_items: cfg.get_usize("synth.min_items")?,
        max_items: cfg.get_usize("synth.max_items")?,
        temp: cfg.get_f64("synth.temp")?,
        fractions: cfg.split_fractions()?,
        seed: cfg.get_u64("seed")?,
    };
    let output = generate(&synth_cfg)?;
    write_dataset(out, &output.matrix, &output.labels, &output.split)?;
    write_factors(out, &output)?;
    let mut text = String::new();
    let _ = writeln!(text, "# fvrec synth report");
    let _ = writeln!(text, "users = {}", output.matrix.n_users());
    let _ = writeln!(text, "items = {}", output.matrix.n_items());
    let _ = writeln!(text, "interactions = {}", output.matrix.n_interactions());
    text.push_str("\n[config]\n");
    text.push_str(&cfg.echo());
    write_text(&out.join("synth_report.txt"), &text)?;
    println!(
        "generated {} users x {} items into {}",
        output.matrix.n_users(),
        output.matrix.n_items(),
        out.display()
    );
    Ok(())
}

fn write_train_artifacts(
    out_dir: &Path,
    dataset: &Dataset,
    cfg: &RunConfig,
    output: &TrainOutput,
    note: Option<&str>,
) -> Result<()> {
    let echo = cfg.echo();
    let ckpt = checkpoint_from_model(&output.model, &echo, &dataset.matrix.vocab_checksum());
    save_checkpoint(&ckpt, &out_dir.join("model.ckpt"))?;
    let mut log_text = String::new();
    for entry in &output.log {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::Data(format!("cannot serialize log entry: {e}")))?;
        log_text.push_str(&line);
        log_text.push('\n');
    }
    write_text(&out_dir.join("train_log.jsonl"), &log_text)?;
    let mut text = String::new();
    let _ = writeln!(text, "# fvrec train report");
    if let Some(n) = note {
        let _ = writeln!(text, "note = {n}");
    }
    let _ = writeln!(text, "best_epoch = {}", output.best_epoch);
    let _ = writeln!(text, "best_val_ndcg = {}", output.best_val_ndcg);
    let _ = writeln!(text, "epochs_run = {}", output.log.len());
    text.push_str("\n[config]\n");
    text.push_str(&echo);
    write_text(&out_dir.join("train_report.txt"), &text)
}

pub fn train(data: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let dataset = load_dataset(data)?;
    fs::create_dir_all(out).map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;
    match cfg.model_kind()? {
        ModelKind::Slim => {
            let train_users = dataset.users_with(SplitTag::Train);
            let model = fit_slim(
                &dataset.matrix,
                &train_users,
                cfg.get_f64("slim.l1")?,
                cfg.get_f64("slim.l2")?,
                cfg.get_usize("slim.max_iters")?,
                cfg.get_f64("slim.tol")?,
            )?;
            save_slim(&model, &out.join("slim.model"))?;
            let mut text = String::new();
            let _ = writeln!(text, "# fvrec train report");
            let _ = writeln!(text, "model = slim");
            let _ = writeln!(text, "nnz = {}", model.nnz());
            text.push_str("\n[config]\n");
            text.push_str(&cfg.echo());
            write_text(&out.join("train_report.txt"), &text)?;
            println!(
                "slim fitted: {} weights; model at {}",
                model.nnz(),
                out.join("slim.model").display()
            );
            Ok(())
        }
        ModelKind::Vae(variant) => {
            let model_cfg = cfg.resolve_model(variant, dataset.matrix.n_items())?;
            let train_cfg = cfg.train_config(variant, false)?;
            match train_model(&dataset, model_cfg, &train_cfg) {
                Ok(output) => {
                    write_train_artifacts(out, &dataset, cfg, &output, None)?;
                    println!(
                        "{} trained: best epoch {} (val ndcg {:.4}); checkpoint at {}",
                        variant,
                        output.best_epoch,
                        output.best_val_ndcg,
                        out.join("model.ckpt").display()
                    );
                    Ok(())
                }
                Err(TrainError::Diverged {
                    output,
                    epoch,
                    reason,
                }) => {
                    let note = format!("diverged at epoch {epoch}: {reason}; last good checkpoint saved");
                    write_train_artifacts(out, &dataset, cfg, &output, Some(&note))?;
                    Err(Error::Train(note))
                }
                Err(TrainError::Other(e)) => Err(e),
            }
        }
    }
}

/// A model file is either a SLIM model ("FVREC-SLIM ...") or a checkpoint
/// ("FVREC" + version).
fn sniff_slim(path: &Path) -> Result<bool> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read model {}: {e}", path.display())))?;
    Ok(bytes.starts_with(b"FVREC-SLIM"))
}

pub fn evaluate(model_path: &Path, data: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let dataset = load_dataset(data)?;
    let vocab = dataset.matrix.vocab_checksum();
    let test_users = dataset.users_with(SplitTag::Test);
    let eval_cfg = EvalConfig {
        k: cfg.get_usize("eval.k")?,
        list_k: cfg.get_usize("eval.list_k")?,
        foldin_fraction: cfg.get_f64("data.foldin_fraction")?,
        bootstrap: cfg.get_usize("eval.bootstrap")?,
        probe_folds: cfg.get_usize("eval.probe_folds")?,
        probe_l2: cfg.get_f64("eval.probe_l2")?,
        mode: ScoreMode::Deterministic,
        seed: cfg.get_u64("seed")?,
    };
    let mut outcomes = Vec::new();
    let model_name;
    if sniff_slim(model_path)? {
        let slim = load_slim(model_path)?;
        if slim.vocab_checksum != vocab {
            return Err(Error::Data(format!(
                "vocabulary mismatch: model was fitted on checksum {}, dataset has {}",
                slim.vocab_checksum, vocab
            )));
        }
        model_name = "slim".to_string();
        outcomes.push(eval_model(
            ModelRef::Slim(&slim),
            &dataset,
            &test_users,
            &eval_cfg,
        )?);
        if cfg.get_bool("eval.sampled")? {
            return Err(Error::Config(
                "eval.sampled is a VAE feature; SLIM has no latent state".into(),
            ));
        }
    } else {
        let ckpt = load_checkpoint(model_path)?;
        if ckpt.vocab_checksum != vocab {
            return Err(Error::Data(format!(
                "vocabulary mismatch: checkpoint was trained on checksum {}, dataset has {}",
                ckpt.vocab_checksum, vocab
            )));
        }
        let model = model_from_checkpoint(&ckpt)?;
        model_name = model.cfg.variant.to_string();
        outcomes.push(eval_model(
            ModelRef::Vae(&model),
            &dataset,
            &test_users,
            &eval_cfg,
        )?);
        if cfg.get_bool("eval.sampled")? {
            let sampled_cfg = EvalConfig {
                mode: ScoreMode::Sampled,
                ..eval_cfg
            };
            outcomes.push(eval_model(
                ModelRef::Vae(&model),
                &dataset,
                &test_users,
                &sampled_cfg,
            )?);
        }
    }
    let report = EvaluationReport {
        model: model_name,
        dataset: data.display().to_string(),
        seed: cfg.get_u64("seed")?,
        outcomes,
        config_echo: cfg.echo(),
    };
    write_text(out, &render_report(&report)?)?;
    println!("report written to {}", out.display());
    Ok(())
}

pub fn report(files: &[std::path::PathBuf]) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Config("report needs at least one report file".into()));
    }
    let loaded: Vec<EvaluationReport> = files
        .iter()
        .map(|f| load_report(f))
        .collect::<Result<_>>()?;
    let refs: Vec<&EvaluationReport> = loaded.iter().collect();
    print!("{}", render_table(&refs));
    Ok(())
}
