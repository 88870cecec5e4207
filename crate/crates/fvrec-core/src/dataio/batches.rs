//! Minibatch assembly with input dropout.

use crate::dataio::{InteractionMatrix, SensitiveLabels};
use crate::error::{Error, Result};
use crate::numerics::{Mat, RngStream};

/// One minibatch: noisy input, clean targets, user rows and their labels.
#[derive(Debug)]
pub struct Batch {
    /// Dropout-corrupted, rescaled inputs (pre-normalization).
    pub input: Mat,
    /// Unmodified binary targets.
    pub target: Mat,
    /// User row indices in batch order.
    pub users: Vec<usize>,
    /// n x 2 binary labels (gender, age).
    pub labels: Mat,
}

/// Lazily yields shuffled batches for one epoch.
pub struct BatchStream<'a> {
    matrix: &'a InteractionMatrix,
    labels: &'a SensitiveLabels,
    order: Vec<usize>,
    batch_size: usize,
    dropout: f64,
    rng: RngStream,
    cursor: usize,
}

/// Shuffles `users` and streams batches. Each positive entry of the input is
/// independently zeroed with probability `dropout` and survivors are scaled
/// by 1/(1-dropout); targets stay binary. `dropout = 0` disables the noise,
/// which is also the evaluation-mode setting.
pub fn make_batches<'a>(
    matrix: &'a InteractionMatrix,
    labels: &'a SensitiveLabels,
    users: &[usize],
    batch_size: usize,
    dropout: f64,
    mut rng: RngStream,
) -> Result<BatchStream<'a>> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::Config(format!(
            "dropout rate {dropout} must be in [0, 1)"
        )));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order = users.to_vec();
    rng.shuffle(&mut order);
    Ok(BatchStream {
        matrix,
        labels,
        order,
        batch_size,
        dropout,
        rng,
        cursor: 0,
    })
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let users = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let n = users.len();
        let d = self.matrix.n_items();
        let mut input = Mat::zeros(n, d);
        let mut target = Mat::zeros(n, d);
        let mut labels = Mat::zeros(n, 2);
        let scale = 1.0 / (1.0 - self.dropout);
        for (r, &u) in users.iter().enumerate() {
            for &col in self.matrix.user_row(u) {
                target.set(r, col as usize, 1.0);
                if self.dropout == 0.0 || self.rng.uniform() >= self.dropout {
                    input.set(r, col as usize, if self.dropout == 0.0 { 1.0 } else { scale });
                }
            }
            labels.set(r, 0, self.labels.gender[u] as f64);
            labels.set(r, 1, self.labels.age_group[u] as f64);
        }
        Some(Batch {
            input,
            target,
            users,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn toy() -> (InteractionMatrix, SensitiveLabels) {
        let mut positives = BTreeMap::new();
        for u in 0..20 {
            positives.insert(
                format!("{u}"),
                vec!["0".into(), "1".into(), "2".into(), "3".into()],
            );
        }
        let m = InteractionMatrix::from_positives(&positives).unwrap();
        let l = SensitiveLabels {
            gender: (0..20).map(|u| (u % 2) as u8).collect(),
            age_group: vec![0; 20],
        };
        (m, l)
    }

    #[test]
    fn zero_dropout_input_equals_target() {
        let (m, l) = toy();
        let users: Vec<usize> = (0..20).collect();
        let stream = make_batches(&m, &l, &users, 7, 0.0, RngStream::new(3)).unwrap();
        for batch in stream {
            assert_eq!(batch.input, batch.target);
        }
    }

    #[test]
    fn dropout_expectation_and_scaling() {
        let (m, l) = toy();
        let users: Vec<usize> = (0..20).collect();
        let mut kept = 0usize;
        let mut total = 0usize;
        for trial in 0..500 {
            let stream =
                make_batches(&m, &l, &users, 20, 0.5, RngStream::new(1000 + trial)).unwrap();
            for batch in stream {
                for &v in batch.input.data() {
                    assert!(v == 0.0 || v == 2.0, "retained entries scaled by 2, got {v}");
                }
                kept += batch.input.data().iter().filter(|&&v| v != 0.0).count();
                total += batch.target.data().iter().filter(|&&v| v != 0.0).count();
            }
        }
        // 10k positives per trial-set: expect half kept, binomial std ~ 0.5%
        let rate = kept as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.02, "keep rate {rate}");
    }

    #[test]
    fn batches_cover_each_user_once_per_epoch() {
        let (m, l) = toy();
        let users: Vec<usize> = (0..20).collect();
        let stream = make_batches(&m, &l, &users, 6, 0.3, RngStream::new(9)).unwrap();
        let mut seen: Vec<usize> = stream.flat_map(|b| b.users).collect();
        seen.sort_unstable();
        assert_eq!(seen, users);
    }

    #[test]
    fn batch_stream_is_deterministic() {
        let (m, l) = toy();
        let users: Vec<usize> = (0..20).collect();
        let a: Vec<Batch> =
            make_batches(&m, &l, &users, 6, 0.4, RngStream::new(11)).unwrap().collect();
        let b: Vec<Batch> =
            make_batches(&m, &l, &users, 6, 0.4, RngStream::new(11)).unwrap().collect();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.input, y.input);
            assert_eq!(x.users, y.users);
        }
    }
}
