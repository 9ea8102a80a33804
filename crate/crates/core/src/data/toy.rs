use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Every toy sample lies in `[-TOY_BOX, TOY_BOX]²`.
pub const TOY_BOX: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ToyDatasetId {
    EightGaussians,
    Spiral,
    Checkerboard,
    Rings,
}

impl ToyDatasetId {
    pub const ALL: [ToyDatasetId; 4] = [
        ToyDatasetId::EightGaussians,
        ToyDatasetId::Spiral,
        ToyDatasetId::Checkerboard,
        ToyDatasetId::Rings,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToyDatasetId::EightGaussians => "eight_gaussians",
            ToyDatasetId::Spiral => "spiral",
            ToyDatasetId::Checkerboard => "checkerboard",
            ToyDatasetId::Rings => "rings",
        }
    }
}

impl fmt::Display for ToyDatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToyDatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownDataset(s.to_string()))
    }
}

/// Mixture centers `2·(cos 2πk/8, sin 2πk/8)`.
pub fn eight_gaussian_centers() -> Vec<[f64; 2]> {
    (0..8)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            [2.0 * a.cos(), 2.0 * a.sin()]
        })
        .collect()
}

fn draw(id: ToyDatasetId, rng: &mut Rng) -> [f64; 2] {
    match id {
        ToyDatasetId::EightGaussians => {
            let a = 2.0 * PI * rng.below(8) as f64 / 8.0;
            [
                2.0 * a.cos() + 0.2 * rng.normal(),
                2.0 * a.sin() + 0.2 * rng.normal(),
            ]
        }
        ToyDatasetId::Spiral => {
            let t = 3.0 * PI * rng.uniform().sqrt();
            let sign = if rng.coin() { 1.0 } else { -1.0 };
            [
                sign * t * t.cos() / 3.0 + 0.1 * rng.normal(),
                sign * t * t.sin() / 3.0 + 0.1 * rng.normal(),
            ]
        }
        ToyDatasetId::Checkerboard => loop {
            // Column cell from x1, then one of the four rows whose cell
            // index sum is even.
            let x1 = rng.uniform_range(-4.0, 4.0);
            let c1 = x1.floor() as i64;
            let c2 = -4 + 2 * rng.below(4) as i64 + c1.rem_euclid(2);
            let x2 = c2 as f64 + rng.uniform();
            if x2.floor() as i64 == c2 {
                break [x1, x2];
            }
        },
        ToyDatasetId::Rings => {
            let r = [0.5, 1.0, 1.5, 2.0][rng.below(4)];
            let phi = rng.uniform_range(0.0, 2.0 * PI);
            let rad = r + 0.05 * rng.normal();
            [rad * phi.cos(), rad * phi.sin()]
        }
    }
}

/// `n` i.i.d. samples as an `n × 2` matrix. Samples falling outside the
/// bounding box (a many-sigma event) are redrawn.
pub fn sample_toy(id: ToyDatasetId, n: usize, rng: &mut Rng) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Dimension("sample count must be positive".into()));
    }
    let mut data = Vec::with_capacity(2 * n);
    while data.len() < 2 * n {
        let p = draw(id, rng);
        if p.iter().all(|v| v.abs() <= TOY_BOX) {
            data.extend_from_slice(&p);
        }
    }
    Tensor::matrix(n, 2, data)
}
