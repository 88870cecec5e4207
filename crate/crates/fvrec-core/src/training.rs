//! Optimization loops for all variants: the main VAE update, the alternating
//! adversary/discriminator schedules, per-epoch validation, and selection of
//! the best checkpoint by validation NDCG.
//!
//! Sensitive labels are consumed here (and by the evaluation probe) only;
//! the inference path never reads them.

use serde::{Deserialize, Serialize};

use crate::dataio::{make_batches, Batch, Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::evalmetrics::{build_foldin, quick_validation, FoldinData};
use crate::model::{
    init_adversary, init_discriminator, shuffle_b, slice_cols, GradStore, LatentBatch, Mlp,
    ModelConfig, RecModel, Variant,
};
use crate::numerics::{AdamConfig, AdamOpt, Mat, RngStream};
use crate::objectives::{
    bce_with_logits, compose, empiric_kl_grad, gan_kl_estimate, gaussian_prior_kl_batch,
    multinomial_nll_batch, LossBreakdown, LossParts, LossWeights,
};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Adversary/discriminator updates per main update.
    pub adv_steps: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub dropout: f64,
    pub foldin_fraction: f64,
    /// Validation NDCG cutoff.
    pub k: usize,
    pub probe_folds: usize,
    pub probe_l2: f64,
    /// Suppress per-epoch stderr lines.
    pub quiet: bool,
}

impl TrainConfig {
    pub fn validate(&self, variant: Variant) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if matches!(variant, Variant::VaeAdv | Variant::VaeGan) && self.adv_steps == 0 {
            return Err(Error::Config(format!("{variant} needs adv_steps >= 1")));
        }
        Ok(())
    }
}

/// One line of the training log. Wall time is reported on stderr only so the
/// persisted log is bit-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_ndcg: f64,
    pub val_auc_gender: f64,
    pub val_auc_age: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    /// Parameters of the epoch with the best validation NDCG.
    pub model: RecModel,
    /// 0 means the initial parameters were never improved upon.
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    pub log: Vec<TrainLogEntry>,
}

/// Divergence carries the last good state so the caller can persist it.
#[derive(Debug)]
pub enum TrainError {
    Diverged {
        output: TrainOutput,
        epoch: usize,
        reason: String,
    },
    Other(Error),
}

impl From<Error> for TrainError {
    fn from(e: Error) -> Self {
        TrainError::Other(e)
    }
}

impl TrainError {
    pub fn error(&self) -> Error {
        match self {
            TrainError::Diverged { epoch, reason, .. } => {
                Error::Train(format!("training diverged at epoch {epoch}: {reason}"))
            }
            TrainError::Other(e) => Error::Train(e.to_string()),
        }
    }
}

struct Nets {
    model: RecModel,
    adversary: Option<Mlp>,
    discriminator: Option<Mlp>,
}

struct SampleCache {
    sample: Mat,
    eps: Mat,
    std: Mat,
}

fn sample_latent(latent: &LatentBatch, eps: &Mat) -> SampleCache {
    let (n, d) = (latent.mean.rows(), latent.mean.cols());
    let mut sample = Mat::zeros(n, d);
    let mut std = Mat::zeros(n, d);
    for i in 0..n * d {
        let s = (0.5 * latent.log_var.data()[i]).exp();
        std.data_mut()[i] = s;
        sample.data_mut()[i] = latent.mean.data()[i] + s * eps.data()[i];
    }
    SampleCache {
        sample,
        eps: eps.clone(),
        std,
    }
}

/// One forward+backward pass of the composed objective for one batch with
/// fixed reparameterization noise. Returns the loss breakdown and the raw
/// gradients of every main-model parameter. Adversary and discriminator
/// parameters are read (frozen) but receive no gradients.
fn compute_grads(
    nets: &Nets,
    variant: Variant,
    batch: &Batch,
    eps: &Mat,
    w: &LossWeights,
) -> Result<(LossBreakdown, GradStore)> {
    let enc = nets.model.encode(&batch.input)?;
    let cache = sample_latent(&enc.latent, eps);
    let split = nets.model.cfg.split;
    let latent = nets.model.cfg.latent;
    let n = batch.input.rows();
    let z = slice_cols(&cache.sample, 0, split);

    let dec_cache = nets.model.decode(&z)?;
    let (recon, d_logits) = multinomial_nll_batch(&batch.target, &dec_cache.out)?;
    let (dec_grads, d_z_dec) = nets.model.decoder.backward(&dec_cache, &d_logits)?;
    let (kl, d_mean_kl, d_lv_kl) = gaussian_prior_kl_batch(&enc.latent.mean, &enc.latent.log_var);

    let mut grads = GradStore::new();
    grads.add_mlp("dec", &dec_grads);

    let mut d_sample = Mat::zeros(n, latent);
    for r in 0..n {
        d_sample.row_mut(r)[..split].copy_from_slice(d_z_dec.row(r));
    }

    let mut parts = LossParts {
        reconstruction: Some(recon),
        prior_kl: Some(kl),
        ..LossParts::default()
    };
    match variant {
        Variant::VaeRec => {}
        Variant::VaeAdv => {
            let adv = nets.adversary.as_ref().expect("vaeadv adversary");
            let adv_cache = adv.forward(&cache.sample)?;
            let (ce, mut d_adv_logits) = bce_with_logits(&batch.labels, &adv_cache.out)?;
            // fooling term: the total includes -lambda_adv * ce
            d_adv_logits.scale(-w.lambda_adv);
            let (_, d_in) = adv.backward(&adv_cache, &d_adv_logits)?;
            d_sample.add_assign(&d_in)?;
            parts.adversary = Some(ce);
        }
        Variant::VaeGan | Variant::VaeEmp => {
            let b = slice_cols(&cache.sample, split, latent);
            let sens = nets.model.sens_dec.as_ref().expect("sensitive decoder");
            let slogits = sens.forward(&b)?;
            let (ce, mut d_slogits) = bce_with_logits(&batch.labels, &slogits)?;
            d_slogits.scale(w.alpha);
            let (sens_grads, d_b) = sens.backward(&b, &d_slogits)?;
            grads.add_linear("sens", &sens_grads);
            for r in 0..n {
                for (dst, src) in d_sample.row_mut(r)[split..].iter_mut().zip(d_b.row(r)) {
                    *dst += src;
                }
            }
            parts.sensitive_ce = Some(ce);
            if variant == Variant::VaeGan {
                let disc = nets.discriminator.as_ref().expect("vaegan discriminator");
                let disc_cache = disc.forward(&cache.sample)?;
                let est = gan_kl_estimate(disc_cache.out.data());
                let d_out = Mat::from_vec(n, 1, vec![w.gamma / n as f64; n])?;
                let (_, d_in) = disc.backward(&disc_cache, &d_out)?;
                d_sample.add_assign(&d_in)?;
                parts.independence = Some(est);
            } else if n >= 2 {
                let (kl_e, mut d_kl) = empiric_kl_grad(&cache.sample, split)?;
                d_kl.scale(w.gamma);
                d_sample.add_assign(&d_kl)?;
                parts.independence = Some(kl_e);
            } else {
                parts.independence = Some(0.0);
            }
        }
    }

    // through the reparameterization: d_mean += d_sample,
    // d_logvar += d_sample * eps * 0.5 * std, plus the weighted prior term
    let mut d_mean = d_sample.clone();
    d_mean.add_scaled(&d_mean_kl, w.beta)?;
    let mut d_lv = Mat::zeros(n, latent);
    for i in 0..n * latent {
        d_lv.data_mut()[i] = d_sample.data()[i] * cache.eps.data()[i] * 0.5 * cache.std.data()[i]
            + w.beta * d_lv_kl.data()[i];
    }

    let enc_z_grads = nets.model.enc_z.backward(
        &enc.enc_z,
        &slice_cols(&d_mean, 0, split),
        &slice_cols(&d_lv, 0, split),
    )?;
    grads.add_encoder("enc_z", &enc_z_grads);
    if let (Some(enc_b), Some(cache_b)) = (&nets.model.enc_b, &enc.enc_b) {
        let enc_b_grads = enc_b.backward(
            cache_b,
            &slice_cols(&d_mean, split, latent),
            &slice_cols(&d_lv, split, latent),
        )?;
        grads.add_encoder("enc_b", &enc_b_grads);
    }
    let breakdown = compose(variant, &parts, w)?;
    Ok((breakdown, grads))
}

/// Value-only evaluation of the composed objective; the finite-difference
/// tests probe this against the gradients of [`compute_grads`].
#[cfg(test)]
fn forward_loss(
    nets: &Nets,
    variant: Variant,
    batch: &Batch,
    eps: &Mat,
    w: &LossWeights,
) -> Result<f64> {
    compute_grads(nets, variant, batch, eps, w).map(|(b, _)| b.total)
}

fn apply_grads(
    model: &mut RecModel,
    grads: &GradStore,
    opt: &mut AdamOpt,
) -> Result<()> {
    let mut update_err = None;
    model.visit_params_mut(&mut |name, _, data| {
        if update_err.is_some() {
            return;
        }
        if let Some(g) = grads.get(name) {
            if let Err(e) = opt.update(name, data, g) {
                update_err = Some(e);
            }
        }
    });
    match update_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn apply_mlp_grads(mlp: &mut Mlp, prefix: &str, grads: &GradStore, opt: &mut AdamOpt) -> Result<()> {
    let mut update_err = None;
    crate::model::visit_mlp_mut(mlp, prefix, &mut |name, _, data| {
        if update_err.is_some() {
            return;
        }
        if let Some(g) = grads.get(name) {
            if let Err(e) = opt.update(name, data, g) {
                update_err = Some(e);
            }
        }
    });
    match update_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// k adversary updates on the detached latent sample; main-model parameters
/// are never touched.
fn adversary_steps(
    adv: &mut Mlp,
    sample: &Mat,
    labels: &Mat,
    steps: usize,
    opt: &mut AdamOpt,
) -> Result<f64> {
    let mut last = 0.0;
    for _ in 0..steps {
        let cache = adv.forward(sample)?;
        let (loss, d_logits) = bce_with_logits(labels, &cache.out)?;
        let (g, _) = adv.backward(&cache, &d_logits)?;
        let mut grads = GradStore::new();
        grads.add_mlp("adv", &g);
        apply_mlp_grads(adv, "adv", &grads, opt)?;
        last = loss;
    }
    Ok(last)
}

/// k discriminator updates on real-vs-shuffled pairs. Returns the last BCE
/// and the accuracy on the final step's pair.
fn discriminator_steps(
    disc: &mut Mlp,
    sample: &Mat,
    split: usize,
    steps: usize,
    opt: &mut AdamOpt,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    let mut last = (0.0, 0.5);
    for _ in 0..steps {
        let shuffled = shuffle_b(sample, split, rng);
        let cache_r = disc.forward(sample)?;
        let cache_s = disc.forward(&shuffled)?;
        let (loss, d_r, d_s) =
            crate::objectives::discriminator_loss(cache_r.out.data(), cache_s.out.data());
        let n = sample.rows();
        let (gr, _) = disc.backward(&cache_r, &Mat::from_vec(n, 1, d_r)?)?;
        let (gs, _) = disc.backward(&cache_s, &Mat::from_vec(n, 1, d_s)?)?;
        let mut grads = GradStore::new();
        grads.add_mlp("disc", &gr);
        grads.add_mlp("disc", &gs);
        apply_mlp_grads(disc, "disc", &grads, opt)?;
        let correct = cache_r.out.data().iter().filter(|&&l| l > 0.0).count()
            + cache_s.out.data().iter().filter(|&&l| l <= 0.0).count();
        last = (loss, correct as f64 / (2 * n) as f64);
    }
    Ok(last)
}

/// Trains one variant and returns the checkpoint of the epoch with the best
/// validation NDCG@k together with the per-epoch log.
pub fn train(
    dataset: &Dataset,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutput, TrainError> {
    let variant = model_cfg.variant;
    cfg.validate(variant)?;
    model_cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let model = RecModel::init(model_cfg.clone(), &mut root.fork("init/model"))?;
    let adversary = (variant == Variant::VaeAdv).then(|| {
        init_adversary(
            model_cfg.latent,
            &model_cfg.adv_hidden,
            model_cfg.n_attrs,
            &mut root.fork("init/adv"),
        )
    });
    let discriminator = (variant == Variant::VaeGan).then(|| {
        init_discriminator(
            model_cfg.latent,
            &model_cfg.adv_hidden,
            &mut root.fork("init/disc"),
        )
    });
    let mut nets = Nets {
        model,
        adversary,
        discriminator,
    };
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut main_opt = AdamOpt::new(adam);
    let mut aux_opt = AdamOpt::new(adam);

    let train_users = dataset.users_with(SplitTag::Train);
    let val_users = dataset.users_with(SplitTag::Val);
    if train_users.is_empty() || val_users.is_empty() {
        return Err(TrainError::Other(Error::Data(
            "empty train or validation split".into(),
        )));
    }
    let val_foldin: FoldinData =
        build_foldin(&dataset.matrix, &val_users, cfg.foldin_fraction, cfg.seed);

    let mut best = TrainOutput {
        model: nets.model.clone(),
        best_epoch: 0,
        best_val_ndcg: f64::NEG_INFINITY,
        log: Vec::new(),
    };
    let mut log: Vec<TrainLogEntry> = Vec::new();
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let t0 = std::time::Instant::now();
        let batches = match make_batches(
            &dataset.matrix,
            &dataset.labels,
            &train_users,
            cfg.batch_size,
            cfg.dropout,
            root.fork(&format!("batches/e{epoch}")),
        ) {
            Ok(b) => b,
            Err(e) => return Err(TrainError::Other(e)),
        };
        let mut acc: Option<LossBreakdown> = None;
        let mut n_batches = 0usize;
        let mut disc_acc_sum = 0.0;
        for (bi, batch) in batches.enumerate() {
            let mut noise = root.fork(&format!("noise/e{epoch}/b{bi}"));
            let mut eps = Mat::zeros(batch.input.rows(), model_cfg.latent);
            noise.fill_normal(eps.data_mut());

            let result = (|| -> Result<LossBreakdown> {
                // alternate: adversary/discriminator first, then the main step
                if variant == Variant::VaeAdv || variant == Variant::VaeGan {
                    let enc = nets.model.encode(&batch.input)?;
                    let sample = sample_latent(&enc.latent, &eps).sample;
                    match variant {
                        Variant::VaeAdv => {
                            adversary_steps(
                                nets.adversary.as_mut().unwrap(),
                                &sample,
                                &batch.labels,
                                cfg.adv_steps,
                                &mut aux_opt,
                            )?;
                        }
                        Variant::VaeGan if batch.input.rows() >= 2 => {
                            let (_, a) = discriminator_steps(
                                nets.discriminator.as_mut().unwrap(),
                                &sample,
                                model_cfg.split,
                                cfg.adv_steps,
                                &mut aux_opt,
                                &mut noise,
                            )?;
                            disc_acc_sum += a;
                        }
                        _ => {}
                    }
                }
                let (breakdown, grads) = compute_grads(&nets, variant, &batch, &eps, &cfg.weights)?;
                apply_grads(&mut nets.model, &grads, &mut main_opt)?;
                Ok(breakdown)
            })();
            let breakdown = match result {
                Ok(b) if b.total.is_finite() => b,
                Ok(b) => {
                    best.log = log;
                    return Err(TrainError::Diverged {
                        output: best,
                        epoch,
                        reason: format!("non-finite loss {}", b.total),
                    });
                }
                Err(e) => {
                    best.log = log;
                    return Err(TrainError::Diverged {
                        output: best,
                        epoch,
                        reason: e.to_string(),
                    });
                }
            };
            acc = Some(match acc {
                None => breakdown,
                Some(a) => LossBreakdown {
                    reconstruction: a.reconstruction + breakdown.reconstruction,
                    prior_kl: a.prior_kl + breakdown.prior_kl,
                    sensitive_ce: a.sensitive_ce + breakdown.sensitive_ce,
                    independence: a.independence + breakdown.independence,
                    adversary: a.adversary + breakdown.adversary,
                    total: a.total + breakdown.total,
                    ..a
                },
            });
            n_batches += 1;
        }
        let mut epoch_loss = acc.expect("at least one batch");
        let nb = n_batches as f64;
        epoch_loss.reconstruction /= nb;
        epoch_loss.prior_kl /= nb;
        epoch_loss.sensitive_ce /= nb;
        epoch_loss.independence /= nb;
        epoch_loss.adversary /= nb;
        epoch_loss.total /= nb;

        if variant == Variant::VaeGan {
            let mean_acc = disc_acc_sum / nb;
            if !(0.45..=0.95).contains(&mean_acc) && !cfg.quiet {
                eprintln!(
                    "warning: epoch {epoch}: discriminator accuracy {mean_acc:.3} outside [0.45, 0.95]"
                );
            }
        }

        let (val_ndcg, val_auc) = quick_validation(
            &nets.model,
            dataset,
            &val_foldin,
            cfg.k,
            cfg.probe_folds,
            cfg.probe_l2,
            cfg.seed,
        )
        .map_err(TrainError::Other)?;
        log.push(TrainLogEntry {
            epoch,
            loss: epoch_loss,
            val_ndcg,
            val_auc_gender: val_auc[0],
            val_auc_age: val_auc[1],
        });
        if !cfg.quiet {
            eprintln!(
                "epoch {epoch}: total {:.4} recon {:.4} kl {:.4} val_ndcg {:.4} ({:.1}s)",
                epoch_loss.total,
                epoch_loss.reconstruction,
                epoch_loss.prior_kl,
                val_ndcg,
                t0.elapsed().as_secs_f64()
            );
        }
        if val_ndcg > best.best_val_ndcg {
            best.model = nets.model.clone();
            best.best_epoch = epoch;
            best.best_val_ndcg = val_ndcg;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                if !cfg.quiet {
                    eprintln!("early stop at epoch {epoch} (best {})", best.best_epoch);
                }
                break;
            }
        }
    }
    best.log = log;
    Ok(best)
}
