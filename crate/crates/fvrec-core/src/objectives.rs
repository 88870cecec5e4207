//! Loss terms and their composition per model variant.
//!
//! Every term comes with an analytic gradient; the tests check each against
//! central finite differences. Totals are expressed in loss form (minimize),
//! so the likelihood terms enter negated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Variant;
use crate::numerics::{
    cholesky, log_softmax, logdet_from_chol, matmul, sigmoid, softmax, spd_inverse, Mat,
};

/// Ridge added to the empirical covariance before factorization.
pub const COV_RIDGE: f64 = 1e-6;

/// Per-epoch loss components. `total` is the variant's weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub prior_kl: f64,
    pub sensitive_ce: f64,
    pub independence: f64,
    pub adversary: f64,
    pub total: f64,
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_adv: f64,
}

/// Raw component values fed into [`compose`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    /// Negative multinomial log-likelihood, batch mean.
    pub reconstruction: Option<f64>,
    /// Analytic KL to the standard normal prior, batch mean.
    pub prior_kl: Option<f64>,
    /// Sensitive re-classification cross-entropy, batch mean.
    pub sensitive_ce: Option<f64>,
    /// Independence penalty: empiric KL or mean discriminator logit.
    pub independence: Option<f64>,
    /// Adversary cross-entropy (vaeadv) or discriminator BCE (vaegan, logged only).
    pub adversary: Option<f64>,
}

/// Weights for the composed objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_adv: f64,
}

/// Weighted combination for the given variant, in loss form.
///
/// vaerec:  recon + beta*kl
/// vaeadv:  recon + beta*kl - lambda_adv*adversary_ce   (fooling term)
/// vaegan:  recon + beta*kl + alpha*ce + gamma*mean_disc_logit
/// vaeemp:  recon + beta*kl + alpha*ce + gamma*empiric_kl
pub fn compose(variant: Variant, parts: &LossParts, w: &LossWeights) -> Result<LossBreakdown> {
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| Error::Config(format!("{variant} objective missing {name} term")))
    };
    let reconstruction = need(parts.reconstruction, "reconstruction")?;
    let prior_kl = need(parts.prior_kl, "prior_kl")?;
    let mut sensitive_ce = 0.0;
    let mut independence = 0.0;
    let mut adversary = 0.0;
    let total = match variant {
        Variant::VaeRec => reconstruction + w.beta * prior_kl,
        Variant::VaeAdv => {
            adversary = need(parts.adversary, "adversary")?;
            reconstruction + w.beta * prior_kl - w.lambda_adv * adversary
        }
        Variant::VaeGan | Variant::VaeEmp => {
            sensitive_ce = need(parts.sensitive_ce, "sensitive_ce")?;
            independence = need(parts.independence, "independence")?;
            adversary = parts.adversary.unwrap_or(0.0);
            reconstruction + w.beta * prior_kl + w.alpha * sensitive_ce + w.gamma * independence
        }
    };
    Ok(LossBreakdown {
        reconstruction,
        prior_kl,
        sensitive_ce,
        independence,
        adversary,
        total,
        beta: w.beta,
        alpha: w.alpha,
        gamma: w.gamma,
        lambda_adv: w.lambda_adv,
    })
}

/// Multinomial log-likelihood of one interaction row given item logits:
/// sum_i x_i * log softmax(logits)_i.
pub fn multinomial_ll(x: &[f64], logits: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), logits.len());
    let ls = log_softmax(logits);
    x.iter()
        .zip(&ls)
        .filter(|(&xi, _)| xi != 0.0)
        .map(|(&xi, &l)| xi * l)
        .sum()
}

/// Gradient of `multinomial_ll` with respect to the logits:
/// x_j - (sum_i x_i) * softmax(logits)_j.
pub fn multinomial_ll_grad(x: &[f64], logits: &[f64]) -> Vec<f64> {
    let p = softmax(logits);
    let x_sum: f64 = x.iter().sum();
    x.iter().zip(&p).map(|(&xi, &pi)| xi - x_sum * pi).collect()
}

/// Batch-mean negative multinomial log-likelihood and its gradient with
/// respect to the logits.
pub fn multinomial_nll_batch(x: &Mat, logits: &Mat) -> Result<(f64, Mat)> {
    if x.rows() != logits.rows() || x.cols() != logits.cols() {
        return Err(Error::Shape("multinomial batch shape mismatch".into()));
    }
    let n = x.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(logits.rows(), logits.cols());
    for r in 0..x.rows() {
        loss -= multinomial_ll(x.row(r), logits.row(r));
        let g = multinomial_ll_grad(x.row(r), logits.row(r));
        for (o, gv) in grad.row_mut(r).iter_mut().zip(g) {
            *o = -gv / n;
        }
    }
    Ok((loss / n, grad))
}

/// Closed-form KL from a diagonal Gaussian to the standard normal:
/// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
pub fn gaussian_prior_kl(mean: &[f64], log_var: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), log_var.len());
    0.5 * mean
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Batch-mean prior KL plus gradients with respect to mean and log-variance.
pub fn gaussian_prior_kl_batch(mean: &Mat, log_var: &Mat) -> (f64, Mat, Mat) {
    let n = mean.rows() as f64;
    let mut kl = 0.0;
    for r in 0..mean.rows() {
        kl += gaussian_prior_kl(mean.row(r), log_var.row(r));
    }
    let d_mean = mean.map(|m| m / n);
    let d_log_var = log_var.map(|lv| 0.5 * (lv.exp() - 1.0) / n);
    (kl / n, d_mean, d_log_var)
}

/// Cross-entropy between binary labels and predicted probabilities, averaged
/// over attributes and over the batch.
pub fn sensitive_ce(labels: &Mat, probs: &Mat) -> Result<f64> {
    if labels.rows() != probs.rows() || labels.cols() != probs.cols() {
        return Err(Error::Shape("sensitive_ce shape mismatch".into()));
    }
    let n = (labels.rows() * labels.cols()) as f64;
    let mut ce = 0.0;
    for (&s, &p) in labels.data().iter().zip(probs.data()) {
        ce -= s * p.ln() + (1.0 - s) * (1.0 - p).ln();
    }
    Ok(ce / n)
}

/// Numerically stable binary cross-entropy on logits, same averaging as
/// [`sensitive_ce`]. Returns the loss and its gradient with respect to the
/// logits: (sigmoid(l) - s) / count.
pub fn bce_with_logits(labels: &Mat, logits: &Mat) -> Result<(f64, Mat)> {
    if labels.rows() != logits.rows() || labels.cols() != logits.cols() {
        return Err(Error::Shape("bce shape mismatch".into()));
    }
    let n = (labels.rows() * labels.cols()) as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(logits.rows(), logits.cols());
    for i in 0..labels.data().len() {
        let s = labels.data()[i];
        let l = logits.data()[i];
        // softplus(l) - l*s  ==  max(l,0) - l*s + ln(1 + exp(-|l|))
        loss += l.max(0.0) - l * s + (-l.abs()).exp().ln_1p();
        grad.data_mut()[i] = (sigmoid(l) - s) / n;
    }
    Ok((loss / n, grad))
}

/// KL between the batch's empirical Gaussian and the same Gaussian with the
/// z-b cross-covariance zeroed, from the covariance matrix directly.
pub fn empiric_kl_from_cov(cov: &Mat, split: usize) -> Result<f64> {
    let d = cov.rows();
    if cov.cols() != d || split == 0 || split >= d {
        return Err(Error::Shape(format!(
            "empiric_kl: covariance {}x{} with split {}",
            cov.rows(),
            cov.cols(),
            split
        )));
    }
    if cross_blocks_zero(cov, split) {
        return Ok(0.0);
    }
    let l1 = cholesky(cov)?;
    let logdet1 = logdet_from_chol(&l1);
    let (zz, bb) = diag_blocks(cov, split);
    let lz = cholesky(&zz)?;
    let lb = cholesky(&bb)?;
    let logdet2 = logdet_from_chol(&lz) + logdet_from_chol(&lb);
    // tr(S2^-1 S1) block by block; only the diagonal blocks of S1 contribute.
    let zz_inv = spd_inverse(&zz)?;
    let bb_inv = spd_inverse(&bb)?;
    let trace = trace_product(&zz_inv, &zz) + trace_product(&bb_inv, &bb);
    Ok(0.5 * (logdet2 - logdet1 - d as f64 + trace))
}

/// Empiric KL of a batch of latent samples (rows) split at `split`, and the
/// gradient with respect to every sample.
pub fn empiric_kl_grad(batch: &Mat, split: usize) -> Result<(f64, Mat)> {
    let (cov, centered) = batch_covariance(batch)?;
    let d = cov.rows();
    let value = empiric_kl_from_cov(&cov, split)?;
    if cross_blocks_zero(&cov, split) {
        return Ok((0.0, Mat::zeros(batch.rows(), batch.cols())));
    }
    let s1_inv = spd_inverse(&cov)?;
    let (zz, bb) = diag_blocks(&cov, split);
    let zz_inv = spd_inverse(&zz)?;
    let bb_inv = spd_inverse(&bb)?;
    let mut s2_inv = Mat::zeros(d, d);
    paste_block(&mut s2_inv, &zz_inv, 0, 0);
    paste_block(&mut s2_inv, &bb_inv, split, split);
    // dKL/dS1 = 0.5 * (2*S2^-1 - S1^-1 - blockdiag(S2^-1 S1 S2^-1))
    let m = matmul(&matmul(&s2_inv, &cov)?, &s2_inv)?;
    let mut g = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let same_block = (i < split) == (j < split);
            let masked = if same_block { m.get(i, j) } else { 0.0 };
            g.set(
                i,
                j,
                0.5 * (2.0 * s2_inv.get(i, j) - s1_inv.get(i, j) - masked),
            );
        }
    }
    // dKL/dY_k = 2/(n-1) * (y_k - mu)^T G ; the batch-mean term cancels.
    let n = batch.rows() as f64;
    let mut d_batch = matmul(&centered, &g)?;
    d_batch.scale(2.0 / (n - 1.0));
    Ok((value, d_batch))
}

/// Value-only variant of [`empiric_kl_grad`].
pub fn empiric_kl(batch: &Mat, split: usize) -> Result<f64> {
    let (cov, _) = batch_covariance(batch)?;
    empiric_kl_from_cov(&cov, split)
}

/// Empirical covariance (1/(n-1), ridge added) and the centered batch.
pub fn batch_covariance(batch: &Mat) -> Result<(Mat, Mat)> {
    let n = batch.rows();
    if n < 2 {
        return Err(Error::Numeric(
            "covariance needs a batch of at least 2".into(),
        ));
    }
    let d = batch.cols();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(batch.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = batch.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = crate::numerics::matmul_tn(&centered, &centered)?;
    cov.scale(1.0 / (n as f64 - 1.0));
    for i in 0..d {
        cov.set(i, i, cov.get(i, i) + COV_RIDGE);
    }
    Ok((cov, centered))
}

/// Density-ratio estimate of the dependence KL: batch mean of the
/// discriminator logit on unshuffled samples.
pub fn gan_kl_estimate(logits: &[f64]) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    logits.iter().sum::<f64>() / logits.len() as f64
}

/// Binary cross-entropy for the joint-vs-factorized discriminator;
/// unshuffled samples are class 1, shuffled class 0. Returns the loss and
/// the gradients with respect to both logit sets.
pub fn discriminator_loss(
    real_logits: &[f64],
    shuffled_logits: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let nr = real_logits.len().max(1) as f64;
    let ns = shuffled_logits.len().max(1) as f64;
    let mut loss = 0.0;
    let d_real: Vec<f64> = real_logits
        .iter()
        .map(|&l| {
            loss += (l.max(0.0) - l + (-l.abs()).exp().ln_1p()) / (2.0 * nr);
            (sigmoid(l) - 1.0) / (2.0 * nr)
        })
        .collect();
    let d_shuf: Vec<f64> = shuffled_logits
        .iter()
        .map(|&l| {
            loss += (l.max(0.0) + (-l.abs()).exp().ln_1p()) / (2.0 * ns);
            sigmoid(l) / (2.0 * ns)
        })
        .collect();
    (loss, d_real, d_shuf)
}

fn cross_blocks_zero(cov: &Mat, split: usize) -> bool {
    for i in 0..split {
        for j in split..cov.cols() {
            if cov.get(i, j) != 0.0 || cov.get(j, i) != 0.0 {
                return false;
            }
        }
    }
    true
}

fn diag_blocks(cov: &Mat, split: usize) -> (Mat, Mat) {
    let d = cov.rows();
    let mut zz = Mat::zeros(split, split);
    for i in 0..split {
        for j in 0..split {
            zz.set(i, j, cov.get(i, j));
        }
    }
    let bd = d - split;
    let mut bb = Mat::zeros(bd, bd);
    for i in 0..bd {
        for j in 0..bd {
            bb.set(i, j, cov.get(split + i, split + j));
        }
    }
    (zz, bb)
}

fn paste_block(dst: &mut Mat, block: &Mat, r0: usize, c0: usize) {
    for i in 0..block.rows() {
        for j in 0..block.cols() {
            dst.set(r0 + i, c0 + j, block.get(i, j));
        }
    }
}

fn trace_product(a: &Mat, b: &Mat) -> f64 {
    let mut t = 0.0;
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            t += a.get(i, k) * b.get(k, i);
        }
    }
    t
}
