//! 2-D toy distributions.
//!
//! | name             | construction                                                       |
//! |------------------|--------------------------------------------------------------------|
//! | `two_moons`      | moon `(cos θ, sin θ)` or `(1 − cos θ, 0.5 − sin θ)`, `θ ~ U[0, π]`, plus `N(0, 0.1²)` noise, then `2·(p − (0.5, 0.25))` |
//! | `gaussian_ring8` | uniform choice of 8 means `2·(cos kπ/4, sin kπ/4)`, isotropic std 0.1 |
//! | `checkerboard`   | `x ~ U[−2, 2)`, `y ~ U[0, 1) − 2·B + (⌊x⌋ mod 2)`, `B ~ Bernoulli(½)` |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, stream, ChaCha8Rng};
use crate::{Error, Result, TensorBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TwoMoons,
    GaussianRing8,
    Checkerboard,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [
        DatasetKind::TwoMoons,
        DatasetKind::GaussianRing8,
        DatasetKind::Checkerboard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::GaussianRing8 => "gaussian_ring8",
            DatasetKind::Checkerboard => "checkerboard",
        }
    }

    pub fn dim(self) -> usize {
        2
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "dataset",
                name: s.to_string(),
            })
    }
}

pub const RING_RADIUS: f64 = 2.0;
pub const RING_STD: f64 = 0.1;
pub const MOON_NOISE: f64 = 0.1;

/// A set of points plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: TensorBuffer,
    pub provenance: String,
}

impl SampleSet {
    pub fn new(points: TensorBuffer, provenance: impl Into<String>) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::InvalidArgument("a sample set needs at least one point".into()));
        }
        if !points.all_finite() {
            return Err(Error::NonFinite("sample set contains non-finite points".into()));
        }
        Ok(Self {
            points,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }
}

/// Draws `n` points from `kind` using the caller's generator.
pub fn draw(kind: DatasetKind, n: usize, rng: &mut ChaCha8Rng) -> TensorBuffer {
    let mut out = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (x, y) = match kind {
            DatasetKind::TwoMoons => {
                let theta = rng.random::<f64>() * PI;
                let (s, c) = theta.sin_cos();
                let (mx, my) = if rng.random::<bool>() {
                    (c, s)
                } else {
                    (1.0 - c, 0.5 - s)
                };
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                (
                    2.0 * (mx + MOON_NOISE * nx - 0.5),
                    2.0 * (my + MOON_NOISE * ny - 0.25),
                )
            }
            DatasetKind::GaussianRing8 => {
                let k = rng.random_range(0..8u32);
                let angle = f64::from(k) * PI / 4.0;
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                (
                    RING_RADIUS * angle.cos() + RING_STD * nx,
                    RING_RADIUS * angle.sin() + RING_STD * ny,
                )
            }
            DatasetKind::Checkerboard => {
                let x = rng.random::<f64>() * 4.0 - 2.0;
                let flip = if rng.random::<bool>() { 2.0 } else { 0.0 };
                let y = rng.random::<f64>() - flip + x.floor().rem_euclid(2.0);
                (x, y)
            }
        };
        out.push(x);
        out.push(y);
    }
    TensorBuffer::from_rows(2, out)
}

pub fn sample_dataset(kind: DatasetKind, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample zero points".into()));
    }
    let mut rng = rng::seeded(seed, stream::DATA);
    SampleSet::new(draw(kind, n, &mut rng), format!("dataset:{kind}:seed={seed}"))
}
