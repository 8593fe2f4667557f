//! Gaussian-cluster stand-in for image benchmarks.
//!
//! Each class gets a mean drawn uniformly on a sphere of radius
//! [`SyntheticSpec::radius`]; examples add isotropic noise of standard
//! deviation [`SyntheticSpec::noise`]. Each feature is then mapped to `[0, 1]`
//! by the affine min-max map fitted on the training partition; test values
//! outside the training range are clamped.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng, Substream};
use crate::scenarios::{Corpus, Dataset};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub class_count: usize,
    /// Training examples per class.
    pub per_class: usize,
    pub test_per_class: usize,
    pub feature_dim: usize,
    pub image_shape: Option<(usize, usize)>,
    pub radius: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_count: 10,
            per_class: 2000,
            test_per_class: 200,
            feature_dim: 64,
            image_shape: Some((8, 8)),
            radius: 2.5,
            noise: 0.6,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.per_class == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "synthetic data needs at least one class, example and feature".into(),
            ));
        }
        if let Some((h, w)) = self.image_shape {
            if h * w != self.feature_dim {
                return Err(Error::Config(format!(
                    "image shape {h}x{w} does not match {} features",
                    self.feature_dim
                )));
            }
        }
        if !(self.radius > 0.0 && self.noise >= 0.0) {
            return Err(Error::Config("radius must be > 0 and noise >= 0".into()));
        }
        Ok(())
    }

    fn means(&self, rng: &mut StreamRng) -> Vec<Vec<f64>> {
        (0..self.class_count)
            .map(|_| {
                let v: Vec<f64> = (0..self.feature_dim)
                    .map(|_| StandardNormal.sample(rng))
                    .collect();
                let norm = v
                    .iter()
                    .map(|a| a * a)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                v.into_iter().map(|a| a * self.radius / norm).collect()
            })
            .collect()
    }

    /// Raw class-major rows, before squashing.
    fn draw<R: Rng + ?Sized>(
        &self,
        means: &[Vec<f64>],
        per_class: usize,
        rng: &mut R,
    ) -> (Vec<f64>, Vec<usize>) {
        let mut data = Vec::with_capacity(self.class_count * per_class * self.feature_dim);
        let mut labels = Vec::with_capacity(self.class_count * per_class);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                for &m in mean {
                    let eps: f64 = StandardNormal.sample(rng);
                    data.push(m + self.noise * eps);
                }
                labels.push(c);
            }
        }
        (data, labels)
    }

    fn squash(
        &self,
        (mut data, labels): (Vec<f64>, Vec<usize>),
        lo: &[f64],
        hi: &[f64],
    ) -> Result<Dataset> {
        for row in data.chunks_mut(self.feature_dim) {
            for ((v, &l), &h) in row.iter_mut().zip(lo).zip(hi) {
                let span = h - l;
                *v = if span > 0.0 {
                    ((*v - l) / span).clamp(0.0, 1.0)
                } else {
                    0.5
                };
            }
        }
        let inputs = Tensor2::from_vec(labels.len(), self.feature_dim, data)?;
        Dataset::new(inputs, labels, self.class_count, self.image_shape)
    }

    /// Class means are shared between the train and test partitions.
    pub fn generate(&self) -> Result<Corpus> {
        self.validate()?;
        let mut rng = substream(self.seed, Substream::Synthetic);
        let means = self.means(&mut rng);
        let train = self.draw(&means, self.per_class, &mut rng);
        let test = self.draw(&means, self.test_per_class, &mut rng);
        let mut lo = vec![f64::INFINITY; self.feature_dim];
        let mut hi = vec![f64::NEG_INFINITY; self.feature_dim];
        for row in train.0.chunks(self.feature_dim) {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Ok(Corpus {
            train: self.squash(train, &lo, &hi)?,
            test: self.squash(test, &lo, &hi)?,
        })
    }
}

/// A single labelled set of `class_count x per_class` rows, class-major.
pub fn gen_synthetic(
    class_count: usize,
    per_class: usize,
    feature_dim: usize,
    image_shape: Option<(usize, usize)>,
    seed: u64,
) -> Result<Dataset> {
    let spec = SyntheticSpec {
        class_count,
        per_class,
        test_per_class: 0,
        feature_dim,
        image_shape,
        seed,
        ..SyntheticSpec::default()
    };
    Ok(spec.generate()?.train)
}
