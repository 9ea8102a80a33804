//! Sample-based and likelihood-based evaluation metrics.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::losses::BetaWeights;
use crate::nn::VaeModel;
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

/// Smoothing mass added to every bin before the KL divergence.
pub const KL_SMOOTHING: f64 = 1e-10;

/// Counts of 2D points on a regular grid over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub bins: usize,
    /// Row-major over `(x bin, y bin)`.
    pub counts: Vec<u64>,
    /// Points counted inside the box.
    pub total: u64,
    /// Points that fell outside the box and were not counted.
    pub outside: u64,
}

impl Histogram2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, bins: usize) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) || bins == 0 {
            return Err(Error::HistogramMismatch(format!(
                "degenerate histogram box [{x_min}, {x_max}]x[{y_min}, {y_max}] with {bins} bins"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            bins,
            counts: vec![0; bins * bins],
            total: 0,
            outside: 0,
        })
    }

    /// 100×100 bins over `[-5, 5]²`.
    pub fn standard() -> Self {
        Self::new(-5.0, 5.0, -5.0, 5.0, 100).expect("valid box")
    }

    fn bin(v: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
        if !(lo..=hi).contains(&v) {
            return None;
        }
        let i = ((v - lo) / (hi - lo) * n as f64) as usize;
        Some(i.min(n - 1))
    }

    pub fn add(&mut self, x: f64, y: f64) -> bool {
        match (
            Self::bin(x, self.x_min, self.x_max, self.bins),
            Self::bin(y, self.y_min, self.y_max, self.bins),
        ) {
            (Some(i), Some(j)) => {
                self.counts[i * self.bins + j] += 1;
                self.total += 1;
                true
            }
            _ => {
                self.outside += 1;
                false
            }
        }
    }

    pub fn fill(&mut self, samples: &Tensor) -> Result<()> {
        if samples.cols() != 2 {
            return Err(Error::Dimension(format!(
                "histogram needs 2D points, got {} columns",
                samples.cols()
            )));
        }
        for r in 0..samples.rows() {
            let p = samples.row(r);
            self.add(p[0], p[1]);
        }
        Ok(())
    }

    pub fn standard_from(samples: &Tensor) -> Result<Self> {
        let mut h = Self::standard();
        h.fill(samples)?;
        Ok(h)
    }

    pub fn probs(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.bins == other.bins
            && self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.y_min == other.y_min
            && self.y_max == other.y_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Divergences {
    /// `KL(data ‖ model)` on smoothed histograms, nats.
    pub kl: f64,
    /// Jensen–Shannon divergence on the raw normalized histograms, nats.
    pub jsd: f64,
}

fn smoothed(p: &[f64]) -> Vec<f64> {
    let z = 1.0 + KL_SMOOTHING * p.len() as f64;
    p.iter().map(|v| (v + KL_SMOOTHING) / z).collect()
}

fn kl_sum(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

pub fn histogram_divergences(model: &Histogram2D, data: &Histogram2D) -> Result<Divergences> {
    if !model.same_layout(data) {
        return Err(Error::HistogramMismatch("boxes or bin counts differ".into()));
    }
    if model.total == 0 || data.total == 0 {
        return Err(Error::HistogramMismatch("empty histogram".into()));
    }
    let (pm, pd) = (model.probs(), data.probs());
    let kl = kl_sum(&smoothed(&pd), &smoothed(&pm)).max(0.0);
    let mid: Vec<f64> = pm.iter().zip(&pd).map(|(a, b)| 0.5 * (a + b)).collect();
    let jsd = (0.5 * kl_sum(&pm, &mid) + 0.5 * kl_sum(&pd, &mid)).clamp(0.0, 2f64.ln());
    Ok(Divergences { kl, jsd })
}

/// Regular `n × n` lattice of cell centers over `[min, max]²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl GridSpec {
    /// 200×200 over `[-5, 5]²`.
    pub fn standard() -> Self {
        Self {
            min: -5.0,
            max: 5.0,
            n: 200,
        }
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.n as f64
    }

    /// Area of one cell.
    pub fn cell_area(&self) -> f64 {
        self.step() * self.step()
    }

    /// Cell centers, x-major.
    pub fn points(&self) -> Result<Tensor> {
        let h = self.step();
        let mut data = Vec::with_capacity(2 * self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                data.push(self.min + (i as f64 + 0.5) * h);
                data.push(self.min + (j as f64 + 0.5) * h);
            }
        }
        Tensor::matrix(self.n * self.n, 2, data)
    }

    pub fn covers(&self, x: f64, y: f64) -> bool {
        (self.min..=self.max).contains(&x) && (self.min..=self.max).contains(&y)
    }
}

/// Numerically stable `ln Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// gnELBO from an arbitrary energy (ELBO) function evaluated row-wise.
///
/// `ELBÔ(x) = ELBO(x) − ln(Σ_g exp(ELBO(g))·Δ)`; returns the mean of
/// `−ELBÔ` over `data`. The grid is evaluated before the data.
pub fn grid_normalized_elbo_with<F>(mut energy: F, grid: &GridSpec, data: &Tensor) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<Vec<f64>>,
{
    if data.cols() != 2 {
        return Err(Error::Dimension("gnELBO needs 2D data".into()));
    }
    for r in 0..data.rows() {
        let p = data.row(r);
        if !grid.covers(p[0], p[1]) {
            return Err(Error::GridCoverage { x: p[0], y: p[1] });
        }
    }
    let pts = grid.points()?;
    let chunk = 4096;
    let mut grid_e = Vec::with_capacity(pts.rows());
    let mut start = 0;
    while start < pts.rows() {
        let end = (start + chunk).min(pts.rows());
        grid_e.extend(energy(&pts.slice_rows(start, end)?)?);
        start = end;
    }
    let log_z = log_sum_exp(&grid_e) + grid.cell_area().ln();
    let data_e = energy(data)?;
    let per: Vec<f64> = data_e.iter().map(|e| log_z - e).collect();
    let v = crate::tensor::running_mean(per.into_iter());
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain("gnELBO is not finite".into()))
    }
}

/// Per-row β-ELBO `−(β_rec‖x − D(z)‖² + β_kl·KL)` with one reparameterized draw.
pub fn elbo_values(model: &VaeModel, w: &BetaWeights, x: &Tensor, rng: &mut Rng) -> Result<Vec<f64>> {
    let (mu, lv) = model.encode_tensor(x)?;
    let z = reparam(&mu, &lv, rng)?;
    let xr = model.decode_tensor(&z)?;
    Ok((0..x.rows())
        .map(|i| {
            let rec: f64 = x.row(i).iter().zip(xr.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
            let kl: f64 = 0.5
                * mu.row(i)
                    .iter()
                    .zip(lv.row(i))
                    .map(|(m, l)| l.exp() + m * m - 1.0 - l)
                    .sum::<f64>();
            -(w.beta_rec * rec + w.beta_kl * kl)
        })
        .collect())
}

fn reparam(mu: &Tensor, lv: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let data = mu
        .data()
        .iter()
        .zip(lv.data())
        .map(|(m, l)| m + (0.5 * l).exp() * rng.normal())
        .collect();
    Tensor::new(mu.shape().to_vec(), data)
}

/// gnELBO of a trained model with noise from the evaluation substream of `seed`.
pub fn grid_normalized_elbo(
    model: &VaeModel,
    w: &BetaWeights,
    grid: &GridSpec,
    data: &Tensor,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::substream(seed, stream::EVAL);
    grid_normalized_elbo_with(|x| elbo_values(model, w, x, &mut rng), grid, data)
}

/// Gaussian-latent generative model with an amortized Gaussian proposal.
pub trait LatentModel {
    fn z_dim(&self) -> usize;
    /// Proposal parameters `(mu, logvar)` per row of `x`.
    fn posterior(&self, x: &Tensor) -> Result<(Tensor, Tensor)>;
    /// Mean of `p(x|z)` per row of `z`.
    fn decode_mean(&self, z: &Tensor) -> Result<Tensor>;
}

impl LatentModel for VaeModel {
    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn posterior(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.encode_tensor(x)
    }

    fn decode_mean(&self, z: &Tensor) -> Result<Tensor> {
        self.decode_tensor(z)
    }
}

/// Importance-weighted `log p(x)` per row of `x`:
/// `ln (1/M) Σ_j p(x|z_j) p(z_j) / q(z_j|x)`, `z_j ~ q(·|x)`.
///
/// The observation model is Gaussian with variance `1 / (2 β_rec)` per
/// dimension, so `ln p(x|z) = −(d/2)·ln(π/β_rec) − β_rec·‖x − D(z)‖²`.
pub fn iw_log_likelihood<M: LatentModel>(
    model: &M,
    x: &Tensor,
    samples: usize,
    beta_rec: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::config("M", "needs at least one importance sample"));
    }
    if !(beta_rec > 0.0) {
        return Err(Error::config("beta_rec", "must be positive for the likelihood"));
    }
    let (n, d) = (x.rows(), x.cols());
    let (mu, lv) = model.posterior(x)?;
    let log_norm_x = -0.5 * d as f64 * (PI / beta_rec).ln();
    let log_2pi = (2.0 * PI).ln();
    let mut log_w = vec![Vec::with_capacity(samples); n];
    for _ in 0..samples {
        let eps: Vec<f64> = rng.normal_vec(mu.len());
        let zdata: Vec<f64> = mu
            .data()
            .iter()
            .zip(lv.data())
            .zip(&eps)
            .map(|((m, l), e)| m + (0.5 * l).exp() * e)
            .collect();
        let z = Tensor::new(mu.shape().to_vec(), zdata)?;
        let xm = model.decode_mean(&z)?;
        for (i, lw) in log_w.iter_mut().enumerate() {
            let rec: f64 = x.row(i).iter().zip(xm.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
            let log_px_z = log_norm_x - beta_rec * rec;
            let zi = z.row(i);
            let log_pz: f64 = zi.iter().map(|v| -0.5 * (log_2pi + v * v)).sum();
            let k = mu.cols();
            let log_q: f64 = (0..k)
                .map(|j| {
                    let e = eps[i * k + j];
                    -0.5 * (log_2pi + lv.row(i)[j] + e * e)
                })
                .sum();
            lw.push(log_px_z + log_pz - log_q);
        }
    }
    let log_m = (samples as f64).ln();
    Ok(log_w.iter().map(|lw| log_sum_exp(lw) - log_m).collect())
}

/// Area under the ROC curve for "higher score means in-distribution",
/// via the Mann–Whitney statistic with midranks for ties.
pub fn auroc(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::Dimension("AUROC needs both score sets non-empty".into()));
    }
    if scores_in.iter().chain(scores_out).any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = scores_in
        .iter()
        .map(|&s| (s, true))
        .chain(scores_out.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps midranks integral.
    let mut rank2_in: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share the midrank (i + j + 2) / 2.
        let mid2 = (i + j + 2) as u128;
        let n_in = all[i..=j].iter().filter(|p| p.1).count() as u128;
        rank2_in += mid2 * n_in;
        i = j + 1;
    }
    let (n1, n0) = (scores_in.len() as u128, scores_out.len() as u128);
    let u2 = rank2_in - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n1 * n0) as f64)
}

/// Fraction of samples whose nearest center is `k` and lies within `radius`.
pub fn mode_coverage(samples: &Tensor, centers: &[[f64; 2]], radius: f64) -> Result<Vec<f64>> {
    if centers.is_empty() {
        return Err(Error::Dimension("no centers".into()));
    }
    if samples.cols() != 2 {
        return Err(Error::Dimension("mode coverage needs 2D samples".into()));
    }
    let mut counts = vec![0usize; centers.len()];
    for r in 0..samples.rows() {
        let p = samples.row(r);
        let (k, d2) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        if d2 <= radius * radius {
            counts[k] += 1;
        }
    }
    let n = samples.rows() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Samples `n` points from the model's generative path using `rng`.
pub fn model_samples(model: &VaeModel, n: usize, rng: &mut Rng) -> Result<Tensor> {
    let chunk = 8192;
    let mut data = Vec::with_capacity(n * model.data_dim);
    let mut done = 0;
    while done < n {
        let b = chunk.min(n - done);
        data.extend(model.sample(b, rng)?.into_data());
        done += b;
    }
    Tensor::matrix(n, model.data_dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist_of(points: &[(f64, f64)]) -> Histogram2D {
        let mut h = Histogram2D::standard();
        for &(x, y) in points {
            h.add(x, y);
        }
        h
    }

    #[test]
    fn identical_histograms() {
        let h = hist_of(&[(0.1, 0.2), (1.0, -3.0), (4.9, 4.9)]);
        let d = histogram_divergences(&h, &h).unwrap();
        assert_eq!(d.kl, 0.0);
        assert_eq!(d.jsd, 0.0);
    }

    #[test]
    fn disjoint_histograms() {
        let a = hist_of(&[(0.05, 0.05)]);
        let b = hist_of(&[(-3.0, 2.0)]);
        let d = histogram_divergences(&a, &b).unwrap();
        assert!((d.jsd - 2f64.ln()).abs() < 1e-9);
        assert!(d.kl.is_finite() && d.kl > 10.0);
    }

    #[test]
    fn divergences_match_direct_summation() {
        let mut rng = Rng::seed_from_u64(3);
        let mut a = Histogram2D::new(-1.0, 1.0, -1.0, 1.0, 4).unwrap();
        let mut b = a.clone();
        for _ in 0..300 {
            a.add(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 0.5));
            b.add(rng.uniform_range(-0.5, 1.0), rng.uniform_range(-1.0, 1.0));
        }
        let d = histogram_divergences(&a, &b).unwrap();
        let (na, nb) = (a.total as f64, b.total as f64);
        let eps = 1e-10;
        let z = 1.0 + 16.0 * eps;
        let mut kl = 0.0;
        let mut jsd = 0.0;
        for k in 0..16 {
            let p = a.counts[k] as f64 / na;
            let q = b.counts[k] as f64 / nb;
            let (ps, qs) = ((p + eps) / z, (q + eps) / z);
            kl += qs * (qs / ps).ln();
            let m = 0.5 * (p + q);
            if p > 0.0 {
                jsd += 0.5 * p * (p / m).ln();
            }
            if q > 0.0 {
                jsd += 0.5 * q * (q / m).ln();
            }
        }
        assert!((d.kl - kl).abs() < 1e-12);
        assert!((d.jsd - jsd).abs() < 1e-12);
    }

    #[test]
    fn layout_mismatch() {
        let a = Histogram2D::standard();
        let b = Histogram2D::new(-4.0, 4.0, -4.0, 4.0, 100).unwrap();
        assert!(histogram_divergences(&a, &b).is_err());
    }

    #[test]
    fn constant_energy_gives_log_area() {
        let grid = GridSpec::standard();
        let data = Tensor::from_rows(&[&[0.0, 0.0], &[1.0, -2.0]]).unwrap();
        let v = grid_normalized_elbo_with(|x| Ok(vec![-3.7; x.rows()]), &grid, &data).unwrap();
        assert!((v - 100f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn energy_shift_invariance() {
        let grid = GridSpec { min: -5.0, max: 5.0, n: 50 };
        let data = Tensor::from_rows(&[&[0.3, 0.1], &[-1.0, 2.0], &[4.0, -4.0]]).unwrap();
        let f = |x: &Tensor| -> Result<Vec<f64>> {
            Ok((0..x.rows()).map(|i| -x.row(i)[0].powi(2) - 0.5 * x.row(i)[1].abs()).collect())
        };
        let base = grid_normalized_elbo_with(f, &grid, &data).unwrap();
        let shifted = grid_normalized_elbo_with(|x| Ok(f(x)?.iter().map(|v| v + 123.0).collect()), &grid, &data).unwrap();
        assert!((base - shifted).abs() < 1e-9);
    }

    #[test]
    fn gn_elbo_matches_two_pass_oracle() {
        let grid = GridSpec { min: -5.0, max: 5.0, n: 40 };
        let data = Tensor::from_rows(&[&[0.5, 0.5], &[-2.0, 1.0]]).unwrap();
        let f = |x: &Tensor| -> Result<Vec<f64>> {
            Ok((0..x.rows())
                .map(|i| -0.5 * (x.row(i)[0] - 1.0).powi(2) - 0.3 * x.row(i)[1].powi(2))
                .collect())
        };
        let got = grid_normalized_elbo_with(f, &grid, &data).unwrap();
        // Direct exponentiation; ascending sum of positive terms.
        let pts = grid.points().unwrap();
        let mut terms: Vec<f64> = f(&pts).unwrap().iter().map(|e| e.exp()).collect();
        terms.sort_by(f64::total_cmp);
        let z: f64 = terms.iter().sum::<f64>() * grid.cell_area();
        let de = f(&data).unwrap();
        let oracle = de.iter().map(|e| -(e - z.ln())).sum::<f64>() / de.len() as f64;
        assert!((got - oracle).abs() < 1e-8);
    }

    #[test]
    fn coverage_error() {
        let grid = GridSpec::standard();
        let data = Tensor::from_rows(&[&[0.0, 5.5]]).unwrap();
        assert!(matches!(
            grid_normalized_elbo_with(|x| Ok(vec![0.0; x.rows()]), &grid, &data),
            Err(Error::GridCoverage { .. })
        ));
    }

    /// `z ~ N(0, 1)`, `x | z ~ N(w z + b, σ² I)` with σ² = 1 / (2β).
    struct LinearGaussian {
        w: [f64; 2],
        b: [f64; 2],
        beta: f64,
        exact: bool,
    }

    impl LinearGaussian {
        fn sigma2(&self) -> f64 {
            0.5 / self.beta
        }

        fn log_marginal(&self, x: &[f64]) -> f64 {
            // Covariance w wᵀ + σ² I, determinant and inverse in closed form.
            let s2 = self.sigma2();
            let c = [
                [self.w[0] * self.w[0] + s2, self.w[0] * self.w[1]],
                [self.w[0] * self.w[1], self.w[1] * self.w[1] + s2],
            ];
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            let r = [x[0] - self.b[0], x[1] - self.b[1]];
            let quad = (c[1][1] * r[0] * r[0] - 2.0 * c[0][1] * r[0] * r[1] + c[0][0] * r[1] * r[1]) / det;
            -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad
        }
    }

    impl LatentModel for LinearGaussian {
        fn z_dim(&self) -> usize {
            1
        }

        fn posterior(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
            let s2 = self.sigma2();
            let prec = 1.0 + (self.w[0].powi(2) + self.w[1].powi(2)) / s2;
            let mut mu = Vec::new();
            let mut lv = Vec::new();
            for i in 0..x.rows() {
                let r = x.row(i);
                let m = (self.w[0] * (r[0] - self.b[0]) + self.w[1] * (r[1] - self.b[1])) / s2 / prec;
                if self.exact {
                    mu.push(m);
                    lv.push(-prec.ln());
                } else {
                    mu.push(0.8 * m + 0.1);
                    lv.push(-prec.ln() + 0.4);
                }
            }
            Ok((Tensor::matrix(x.rows(), 1, mu)?, Tensor::matrix(x.rows(), 1, lv)?))
        }

        fn decode_mean(&self, z: &Tensor) -> Result<Tensor> {
            let data = z
                .data()
                .iter()
                .flat_map(|&v| [self.w[0] * v + self.b[0], self.w[1] * v + self.b[1]])
                .collect();
            Tensor::matrix(z.rows(), 2, data)
        }
    }

    #[test]
    fn iw_converges_to_analytic_marginal() {
        let m = LinearGaussian { w: [1.2, -0.7], b: [0.3, 0.1], beta: 0.8, exact: false };
        let x = Tensor::from_rows(&[&[0.5, -0.2], &[2.0, -1.0], &[-1.0, 0.9]]).unwrap();
        let est = iw_log_likelihood(&m, &x, 100_000, m.beta, &mut Rng::seed_from_u64(2)).unwrap();
        for (i, e) in est.iter().enumerate() {
            let truth = m.log_marginal(x.row(i));
            assert!((e - truth).abs() < 0.01, "{e} vs {truth}");
        }
    }

    #[test]
    fn exact_posterior_has_equal_weights() {
        let m = LinearGaussian { w: [0.6, 1.5], b: [0.0, -0.4], beta: 1.3, exact: true };
        let x = Tensor::from_rows(&[&[0.7, 0.2], &[-1.5, 2.5]]).unwrap();
        for seed in 0..5 {
            let one = iw_log_likelihood(&m, &x, 1, m.beta, &mut Rng::seed_from_u64(seed)).unwrap();
            for (i, v) in one.iter().enumerate() {
                assert!((v - m.log_marginal(x.row(i))).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn iw_bound_tightens_with_m() {
        let m = LinearGaussian { w: [1.0, 0.5], b: [0.0, 0.0], beta: 0.5, exact: false };
        let mut rng = Rng::seed_from_u64(4);
        let n = 1000;
        let x = Tensor::matrix(n, 2, rng.normal_vec(2 * n)).unwrap();
        let m5 = iw_log_likelihood(&m, &x, 5, m.beta, &mut Rng::seed_from_u64(5)).unwrap();
        let m1 = iw_log_likelihood(&m, &x, 1, m.beta, &mut Rng::seed_from_u64(6)).unwrap();
        let diffs: Vec<f64> = m5.iter().zip(&m1).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean >= -3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn auroc_extremes() {
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(auroc(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    fn pairwise(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for x in a {
            for y in b {
                s += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
            }
        }
        s / (a.len() * b.len()) as f64
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = Rng::seed_from_u64(12);
        let a: Vec<f64> = (0..50).map(|_| (rng.normal() * 4.0).round()).collect();
        let b: Vec<f64> = (0..50).map(|_| (rng.normal() * 4.0 + 1.0).round()).collect();
        assert_eq!(auroc(&a, &b).unwrap(), pairwise(&a, &b));
    }

    #[test]
    fn coverage_cases() {
        let centers = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
        let at = Tensor::from_rows(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 3.0], &[3.0, 3.0]]).unwrap();
        assert_eq!(mode_coverage(&at, &centers, 0.5).unwrap(), vec![0.25; 4]);
        let zero = Tensor::zeros(&[10, 2]);
        assert_eq!(mode_coverage(&zero, &centers, 0.5).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn eight_gaussians_sampler_coverage() {
        use crate::data::{eight_gaussian_centers, sample_toy, ToyDatasetId};
        let s = sample_toy(ToyDatasetId::EightGaussians, 100_000, &mut Rng::seed_from_u64(8)).unwrap();
        for f in mode_coverage(&s, &eight_gaussian_centers(), 1.0).unwrap() {
            assert!((f - 0.125).abs() < 0.01);
        }
    }
}
