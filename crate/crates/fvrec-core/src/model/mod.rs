//! Network graphs for the four VAE variants and their auxiliary models.
//!
//! The recommendation path only ever sees the z-part of the latent state; the
//! b-part exists so the split variants can corral sensitive information into
//! dimensions that are discarded at inference. No sensitive attributes are
//! consumed anywhere in this module.

mod layers;

pub use layers::{Activation, Linear, LinearGrads, Mlp, MlpCache, MlpGrads};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Mat, RngStream, LOG_VAR_CLAMP};

/// The four VAE model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    VaeRec,
    VaeAdv,
    VaeGan,
    VaeEmp,
}

impl Variant {
    pub fn uses_split_latent(&self) -> bool {
        matches!(self, Variant::VaeGan | Variant::VaeEmp)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::VaeRec => "vaerec",
            Variant::VaeAdv => "vaeadv",
            Variant::VaeGan => "vaegan",
            Variant::VaeEmp => "vaeemp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vaerec" => Ok(Variant::VaeRec),
            "vaeadv" => Ok(Variant::VaeAdv),
            "vaegan" => Ok(Variant::VaeGan),
            "vaeemp" => Ok(Variant::VaeEmp),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected vaerec|vaeadv|vaegan|vaeemp)"
            ))),
        }
    }
}

/// Architecture of a variant instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_items: usize,
    /// Encoder/decoder hidden widths.
    pub hidden: Vec<usize>,
    /// Total latent dimension.
    pub latent: usize,
    /// Dimension of z; equals `latent` for non-split variants.
    pub split: usize,
    /// Adversary / discriminator hidden widths.
    pub adv_hidden: Vec<usize>,
    /// Number of binary sensitive attributes.
    pub n_attrs: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split == 0 || self.split > self.latent {
            return Err(Error::Config(format!(
                "split index {} must be in 1..={}",
                self.split, self.latent
            )));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("hidden widths must be non-empty".into()));
        }
        if !self.variant.uses_split_latent() && self.split != self.latent {
            return Err(Error::Config(format!(
                "{} does not split the latent; split must equal latent",
                self.variant
            )));
        }
        if self.variant.uses_split_latent() && self.split == self.latent {
            return Err(Error::Config(format!(
                "{} needs a non-empty b-part (split < latent)",
                self.variant
            )));
        }
        Ok(())
    }

    pub fn b_dim(&self) -> usize {
        self.latent - self.split
    }
}

/// Variational parameters for a batch of users. Rows [0, split) of each
/// vector are z, the rest b.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    pub mean: Mat,
    pub log_var: Mat,
    pub split: usize,
}

impl LatentBatch {
    pub fn z_means(&self) -> Mat {
        slice_cols(&self.mean, 0, self.split)
    }
}

/// MLP trunk feeding separate mean and log-variance heads. Log-variance is
/// clamped to +-LOG_VAR_CLAMP with gradient gating.
#[derive(Debug, Clone)]
pub struct GaussianEncoder {
    pub trunk: Mlp,
    pub mean_head: Linear,
    pub logvar_head: Linear,
}

#[derive(Debug)]
pub struct EncoderCache {
    trunk: MlpCache,
    logvar_raw: Mat,
    pub mean: Mat,
    pub log_var: Mat,
}

#[derive(Debug)]
pub struct EncoderGrads {
    pub trunk: MlpGrads,
    pub mean: LinearGrads,
    pub logvar: LinearGrads,
}

impl GaussianEncoder {
    pub fn init(input: usize, hidden: &[usize], latent: usize, rng: &mut RngStream) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        let trunk = Mlp::init(&widths, Activation::Selu, true, &mut rng.fork("trunk"));
        let h = *widths.last().unwrap();
        GaussianEncoder {
            trunk,
            mean_head: Linear::init(h, latent, &mut rng.fork("mean")),
            logvar_head: Linear::init(h, latent, &mut rng.fork("logvar")),
        }
    }

    pub fn forward(&self, x_norm: &Mat) -> Result<EncoderCache> {
        let trunk = self.trunk.forward(x_norm)?;
        let mean = self.mean_head.forward(&trunk.out)?;
        let logvar_raw = self.logvar_head.forward(&trunk.out)?;
        if !mean.all_finite() || !logvar_raw.all_finite() {
            return Err(Error::Numeric("non-finite encoder output".into()));
        }
        let log_var = logvar_raw.map(|v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP));
        Ok(EncoderCache {
            trunk,
            logvar_raw,
            mean,
            log_var,
        })
    }

    /// Backward from gradients on the (clamped) mean/log-variance outputs.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        d_mean: &Mat,
        d_log_var: &Mat,
    ) -> Result<EncoderGrads> {
        let mut d_lv = d_log_var.clone();
        for (g, &raw) in d_lv.data_mut().iter_mut().zip(cache.logvar_raw.data()) {
            if raw <= -LOG_VAR_CLAMP || raw >= LOG_VAR_CLAMP {
                *g = 0.0;
            }
        }
        let (mean_grads, dh_mean) = self.mean_head.backward(&cache.trunk.out, d_mean)?;
        let (logvar_grads, dh_lv) = self.logvar_head.backward(&cache.trunk.out, &d_lv)?;
        let mut dh = dh_mean;
        dh.add_assign(&dh_lv)?;
        let (trunk_grads, _dx) = self.trunk.backward(&cache.trunk, &dh)?;
        Ok(EncoderGrads {
            trunk: trunk_grads,
            mean: mean_grads,
            logvar: logvar_grads,
        })
    }
}

/// The recommendation model: one or two encoders, the multinomial decoder,
/// and (for split variants) the linear sensitive decoder.
#[derive(Debug, Clone)]
pub struct RecModel {
    pub cfg: ModelConfig,
    pub enc_z: GaussianEncoder,
    pub enc_b: Option<GaussianEncoder>,
    pub decoder: Mlp,
    pub sens_dec: Option<Linear>,
}

#[derive(Debug)]
pub struct EncodeCache {
    pub x_norm: Mat,
    pub enc_z: EncoderCache,
    pub enc_b: Option<EncoderCache>,
    pub latent: LatentBatch,
}

impl RecModel {
    pub fn init(cfg: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let enc_z = GaussianEncoder::init(cfg.n_items, &cfg.hidden, cfg.split, &mut rng.fork("enc_z"));
        let enc_b = if cfg.variant.uses_split_latent() {
            Some(GaussianEncoder::init(
                cfg.n_items,
                &cfg.hidden,
                cfg.b_dim(),
                &mut rng.fork("enc_b"),
            ))
        } else {
            None
        };
        let mut dec_widths = vec![cfg.split];
        dec_widths.extend_from_slice(&cfg.hidden);
        dec_widths.push(cfg.n_items);
        let decoder = Mlp::init(&dec_widths, Activation::Selu, false, &mut rng.fork("dec"));
        let sens_dec = if cfg.variant.uses_split_latent() {
            Some(Linear::init(cfg.b_dim(), cfg.n_attrs, &mut rng.fork("sens")))
        } else {
            None
        };
        Ok(RecModel {
            cfg,
            enc_z,
            enc_b,
            decoder,
            sens_dec,
        })
    }

    /// Encode a batch of interaction rows. Rows are L2-normalized here; no
    /// sensitive attributes are involved.
    pub fn encode(&self, x: &Mat) -> Result<EncodeCache> {
        if x.cols() != self.cfg.n_items {
            return Err(Error::Shape(format!(
                "encode: {} columns, model expects {}",
                x.cols(),
                self.cfg.n_items
            )));
        }
        let x_norm = l2_normalize_rows(x);
        let enc_z = self.enc_z.forward(&x_norm)?;
        let enc_b = match &self.enc_b {
            Some(enc) => Some(enc.forward(&x_norm)?),
            None => None,
        };
        let latent = match &enc_b {
            Some(b) => LatentBatch {
                mean: concat_cols(&enc_z.mean, &b.mean),
                log_var: concat_cols(&enc_z.log_var, &b.log_var),
                split: self.cfg.split,
            },
            None => LatentBatch {
                mean: enc_z.mean.clone(),
                log_var: enc_z.log_var.clone(),
                split: self.cfg.split,
            },
        };
        Ok(EncodeCache {
            x_norm,
            enc_z,
            enc_b,
            latent,
        })
    }

    /// Item logits from the z-part of the latent.
    pub fn decode(&self, z: &Mat) -> Result<MlpCache> {
        if z.cols() != self.cfg.split {
            return Err(Error::Shape(format!(
                "decode: z has {} dims, expected {}",
                z.cols(),
                self.cfg.split
            )));
        }
        self.decoder.forward(z)
    }

    /// Per-attribute probabilities from the b-part.
    pub fn decode_sensitive(&self, b: &Mat) -> Result<Mat> {
        let sens = self
            .sens_dec
            .as_ref()
            .ok_or_else(|| Error::Config("variant has no sensitive decoder".into()))?;
        let logits = sens.forward(b)?;
        Ok(logits.map(stable_prob))
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
        visit_encoder(&self.enc_z, "enc_z", f);
        if let Some(enc) = &self.enc_b {
            visit_encoder(enc, "enc_b", f);
        }
        visit_mlp(&self.decoder, "dec", f);
        if let Some(s) = &self.sens_dec {
            visit_linear(s, "sens", f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, (usize, usize), &mut [f64])) {
        visit_encoder_mut(&mut self.enc_z, "enc_z", f);
        if let Some(enc) = &mut self.enc_b {
            visit_encoder_mut(enc, "enc_b", f);
        }
        visit_mlp_mut(&mut self.decoder, "dec", f);
        if let Some(s) = &mut self.sens_dec {
            visit_linear_mut(s, "sens", f);
        }
    }
}

/// Attribute classifier probing z (vaeadv): leaky-relu MLP, one sigmoid head
/// per attribute.
pub fn init_adversary(input: usize, hidden: &[usize], n_attrs: usize, rng: &mut RngStream) -> Mlp {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(n_attrs);
    Mlp::init(&widths, Activation::LeakyRelu, false, rng)
}

/// Joint-vs-factorized discriminator (vaegan): one logit per row.
pub fn init_discriminator(input: usize, hidden: &[usize], rng: &mut RngStream) -> Mlp {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(1);
    Mlp::init(&widths, Activation::LeakyRelu, false, rng)
}

/// Sigmoid kept strictly inside (0, 1) so downstream logs are finite.
#[inline]
fn stable_prob(logit: f64) -> f64 {
    sigmoid(logit).clamp(1e-12, 1.0 - 1e-12)
}

/// Per-attribute probabilities from an adversary on latent input.
pub fn adversary_classify(adv: &Mlp, z: &Mat) -> Result<Mat> {
    Ok(adv.forward(z)?.out.map(stable_prob))
}

/// One real-valued logit per row, estimating log q(z,b) / q(z)q(b).
pub fn discriminate(disc: &Mlp, latent: &Mat) -> Result<Vec<f64>> {
    let out = disc.forward(latent)?.out;
    Ok(out.data().to_vec())
}

/// Permute the b-part across the minibatch, z rows untouched. A batch of one
/// cannot be shuffled and is returned as-is.
pub fn shuffle_b(samples: &Mat, split: usize, rng: &mut RngStream) -> Mat {
    if samples.rows() < 2 {
        eprintln!("warning: shuffle_b on a batch of {}; no-op", samples.rows());
        return samples.clone();
    }
    let perm = rng.permutation(samples.rows());
    let mut out = samples.clone();
    for (dst, &src) in perm.iter().enumerate() {
        let src_row = samples.row(src)[split..].to_vec();
        out.row_mut(dst)[split..].copy_from_slice(&src_row);
    }
    out
}

/// Row-wise L2 normalization; zero rows stay zero.
pub fn l2_normalize_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let norm = out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in out.row_mut(r) {
                *v /= norm;
            }
        }
    }
    out
}

pub fn slice_cols(m: &Mat, from: usize, to: usize) -> Mat {
    let mut out = Mat::zeros(m.rows(), to - from);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[from..to]);
    }
    out
}

pub fn concat_cols(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.rows(), b.rows());
    let mut out = Mat::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        out.row_mut(r)[..a.cols()].copy_from_slice(a.row(r));
        out.row_mut(r)[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}

/// Named gradient accumulator keyed by parameter name.
#[derive(Debug, Default)]
pub struct GradStore {
    grads: BTreeMap<String, Vec<f64>>,
}

impl GradStore {
    pub fn new() -> Self {
        GradStore::default()
    }

    pub fn add(&mut self, name: &str, values: &[f64]) {
        match self.grads.get_mut(name) {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(values) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(name.to_string(), values.to_vec());
            }
        }
    }

    pub fn add_linear(&mut self, prefix: &str, lg: &LinearGrads) {
        self.add(&format!("{prefix}.w"), lg.dw.data());
        self.add(&format!("{prefix}.b"), &lg.db);
    }

    pub fn add_mlp(&mut self, prefix: &str, mg: &MlpGrads) {
        for (i, lg) in mg.layers.iter().enumerate() {
            self.add_linear(&format!("{prefix}.l{i}"), lg);
        }
    }

    pub fn add_encoder(&mut self, prefix: &str, eg: &EncoderGrads) {
        self.add_mlp(&format!("{prefix}.trunk"), &eg.trunk);
        self.add_linear(&format!("{prefix}.mean"), &eg.mean);
        self.add_linear(&format!("{prefix}.logvar"), &eg.logvar);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(|v| v.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.grads.keys().map(|s| s.as_str())
    }
}

fn visit_linear(l: &Linear, prefix: &str, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
    f(&format!("{prefix}.w"), (l.w.rows(), l.w.cols()), l.w.data());
    f(&format!("{prefix}.b"), (1, l.b.len()), &l.b);
}

fn visit_linear_mut(
    l: &mut Linear,
    prefix: &str,
    f: &mut dyn FnMut(&str, (usize, usize), &mut [f64]),
) {
    let shape = (l.w.rows(), l.w.cols());
    f(&format!("{prefix}.w"), shape, l.w.data_mut());
    let n = l.b.len();
    f(&format!("{prefix}.b"), (1, n), &mut l.b);
}

pub fn visit_mlp(m: &Mlp, prefix: &str, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
    for (i, l) in m.layers.iter().enumerate() {
        visit_linear(l, &format!("{prefix}.l{i}"), f);
    }
}

pub fn visit_mlp_mut(
    m: &mut Mlp,
    prefix: &str,
    f: &mut dyn FnMut(&str, (usize, usize), &mut [f64]),
) {
    for (i, l) in m.layers.iter_mut().enumerate() {
        visit_linear_mut(l, &format!("{prefix}.l{i}"), f);
    }
}

fn visit_encoder(e: &GaussianEncoder, prefix: &str, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
    visit_mlp(&e.trunk, &format!("{prefix}.trunk"), f);
    visit_linear(&e.mean_head, &format!("{prefix}.mean"), f);
    visit_linear(&e.logvar_head, &format!("{prefix}.logvar"), f);
}

fn visit_encoder_mut(
    e: &mut GaussianEncoder,
    prefix: &str,
    f: &mut dyn FnMut(&str, (usize, usize), &mut [f64]),
) {
    visit_mlp_mut(&mut e.trunk, &format!("{prefix}.trunk"), f);
    visit_linear_mut(&mut e.mean_head, &format!("{prefix}.mean"), f);
    visit_linear_mut(&mut e.logvar_head, &format!("{prefix}.logvar"), f);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg(variant: Variant) -> ModelConfig {
        let (latent, split) = if variant.uses_split_latent() {
            (6, 4)
        } else {
            (6, 6)
        };
        ModelConfig {
            variant,
            n_items: 10,
            hidden: vec![8],
            latent,
            split,
            adv_hidden: vec![8, 8],
            n_attrs: 2,
        }
    }

    #[test]
    fn encode_is_deterministic_and_row_independent() {
        let cfg = test_cfg(Variant::VaeEmp);
        let model = RecModel::init(cfg, &mut RngStream::new(4)).unwrap();
        let mut x = Mat::zeros(5, 10);
        let mut rng = RngStream::new(8);
        for v in x.data_mut() {
            *v = if rng.uniform() < 0.3 { 1.0 } else { 0.0 };
        }
        let a = model.encode(&x).unwrap();
        let b = model.encode(&x).unwrap();
        assert_eq!(a.latent.mean, b.latent.mean);

        // zero rows all map to the same latent
        let zeros = Mat::zeros(3, 10);
        let out = model.encode(&zeros).unwrap();
        for r in 1..3 {
            assert_eq!(out.latent.mean.row(0), out.latent.mean.row(r));
        }

        // permuting the batch permutes the outputs identically
        let rows: Vec<Vec<f64>> = (0..5).map(|r| x.row(r).to_vec()).collect();
        let permuted = Mat::from_rows(&[
            rows[3].clone(),
            rows[0].clone(),
            rows[4].clone(),
            rows[1].clone(),
            rows[2].clone(),
        ])
        .unwrap();
        let p = model.encode(&permuted).unwrap();
        for (dst, src) in [(0usize, 3usize), (1, 0), (2, 4), (3, 1), (4, 2)] {
            assert_eq!(p.latent.mean.row(dst), a.latent.mean.row(src));
        }
    }

    #[test]
    fn zeroing_b_does_not_change_recommendation_logits() {
        let cfg = test_cfg(Variant::VaeEmp);
        let model = RecModel::init(cfg, &mut RngStream::new(4)).unwrap();
        let mut x = Mat::zeros(3, 10);
        x.set(0, 1, 1.0);
        x.set(1, 5, 1.0);
        x.set(2, 8, 1.0);
        let enc = model.encode(&x).unwrap();
        let z = enc.latent.z_means();
        let logits_a = model.decode(&z).unwrap().out;
        // the decoder never sees b, so logits are a function of z alone
        let logits_b = model.decode(&z).unwrap().out;
        assert_eq!(logits_a, logits_b);
        assert_eq!(z.cols(), 4);
    }

    #[test]
    fn sensitive_decoder_zero_weights_give_half() {
        let cfg = test_cfg(Variant::VaeEmp);
        let mut model = RecModel::init(cfg, &mut RngStream::new(4)).unwrap();
        let sens = model.sens_dec.as_mut().unwrap();
        for v in sens.w.data_mut() {
            *v = 0.0;
        }
        let b = Mat::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.3]]).unwrap();
        let p = model.decode_sensitive(&b).unwrap();
        for &v in p.data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn probabilities_strictly_inside_unit_interval() {
        let cfg = test_cfg(Variant::VaeGan);
        let model = RecModel::init(cfg, &mut RngStream::new(14)).unwrap();
        let mut b = Mat::zeros(4, 2);
        let mut rng = RngStream::new(3);
        rng.fill_normal(b.data_mut());
        b.scale(30.0);
        let p = model.decode_sensitive(&b).unwrap();
        for &v in p.data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn discriminator_zero_weights_give_zero_logit() {
        let mut disc = init_discriminator(6, &[8, 8], &mut RngStream::new(2));
        for l in &mut disc.layers {
            for v in l.w.data_mut() {
                *v = 0.0;
            }
        }
        let mut x = Mat::zeros(5, 6);
        RngStream::new(7).fill_normal(x.data_mut());
        let logits = discriminate(&disc, &x).unwrap();
        assert!(logits.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn shuffle_b_preserves_z_and_b_multiset() {
        let mut rng = RngStream::new(21);
        let mut samples = Mat::zeros(7, 5);
        rng.fill_normal(samples.data_mut());
        let split = 3;
        let out = shuffle_b(&samples, split, &mut rng);
        for r in 0..7 {
            assert_eq!(&out.row(r)[..split], &samples.row(r)[..split]);
        }
        let mut before: Vec<Vec<u64>> = (0..7)
            .map(|r| samples.row(r)[split..].iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut after: Vec<Vec<u64>> = (0..7)
            .map(|r| out.row(r)[split..].iter().map(|v| v.to_bits()).collect())
            .collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
    }

    #[test]
    fn shuffle_b_identical_rows_is_identity() {
        let samples = Mat::from_rows(&[vec![1.0, 2.0, 9.0], vec![3.0, 4.0, 9.0]]).unwrap();
        let out = shuffle_b(&samples, 2, &mut RngStream::new(5));
        assert_eq!(out, samples);
    }

    #[test]
    fn l2_normalize_handles_zero_rows() {
        let x = Mat::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let n = l2_normalize_rows(&x);
        assert!((n.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-12);
        assert_eq!(n.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn param_names_are_stable_and_cover_all_tensors() {
        let cfg = test_cfg(Variant::VaeEmp);
        let model = RecModel::init(cfg, &mut RngStream::new(4)).unwrap();
        let mut names = Vec::new();
        model.visit_params(&mut |n, _, _| names.push(n.to_string()));
        assert!(names.contains(&"enc_z.trunk.l0.w".to_string()));
        assert!(names.contains(&"enc_b.mean.b".to_string()));
        assert!(names.contains(&"dec.l1.w".to_string()));
        assert!(names.contains(&"sens.w".to_string()));
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }
}
