//! Training loops for the plain VAE, IntroVAE and Soft-IntroVAE.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::checkpoint;
use crate::data::{DataSource, DatasetSpec};
use crate::error::{Error, Result};
use crate::losses::{
    loss_introvae_decoder, loss_introvae_encoder, loss_sintrovae_decoder,
    loss_sintrovae_encoder, loss_vae, BetaWeights, LossReport,
};
use crate::nn::{AdamState, VaeModel};
use crate::rng::{stream, Rng};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    Vae,
    IntroVae,
    SIntroVae,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Vae, Regime::IntroVae, Regime::SIntroVae];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Vae => "vae",
            Regime::IntroVae => "introvae",
            Regime::SIntroVae => "sintrovae",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::config("regime", format!("unknown regime `{s}`")))
    }
}

/// Full hyperparameter record of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub dataset: DatasetSpec,
    pub seed: u64,
    pub beta_rec: f64,
    pub beta_kl: f64,
    pub beta_neg: f64,
    pub gamma_r: f64,
    pub alpha: f64,
    pub margin: f64,
    /// Overrides the default scale `1 / data_dim`.
    pub scale: Option<f64>,
    /// Ablation switch for the expELBO term.
    pub exp_elbo: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub log_interval: u64,
    /// Checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub z_dim: usize,
    pub hidden: Vec<usize>,
    /// Record real elapsed time in the log. Off by default so logs are
    /// byte-reproducible.
    pub record_wall_clock: bool,
}

impl TrainConfig {
    /// Defaults: lr 2e-4, batch 512, 30k iterations, three hidden layers of
    /// 256 units, 2D latent, `alpha = 2`, `gamma_r = 1e-8`.
    pub fn new(regime: Regime, dataset: DatasetSpec, seed: u64) -> Self {
        Self {
            regime,
            dataset,
            seed,
            beta_rec: 1.0,
            beta_kl: 1.0,
            beta_neg: 1.0,
            gamma_r: 1e-8,
            alpha: 2.0,
            margin: 0.0,
            scale: None,
            exp_elbo: true,
            lr: 2e-4,
            batch_size: 512,
            iterations: 30_000,
            log_interval: 100,
            checkpoint_interval: 0,
            z_dim: 2,
            hidden: vec![256, 256, 256],
            record_wall_clock: false,
        }
    }

    pub fn weights(&self, data_dim: usize) -> BetaWeights {
        let mut w = BetaWeights::new(self.beta_rec, self.beta_kl, self.beta_neg, data_dim);
        w.gamma_r = self.gamma_r;
        w.alpha = self.alpha;
        w.margin = self.margin;
        w.exp_elbo = self.exp_elbo;
        if let Some(s) = self.scale {
            w.s = s;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.weights(1).validate()?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", format!("must be finite and >= 0, got {}", self.lr)));
        }
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("iterations", self.iterations),
            ("log_interval", self.log_interval),
            ("z_dim", self.z_dim as u64),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden", "needs at least one positive width"));
        }
        Ok(())
    }
}

/// Per-step values, before aggregation into a log record.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepRecord {
    pub loss_enc: f64,
    pub loss_dec: f64,
    pub kl_real: f64,
    pub kl_fake: f64,
    pub rec_real: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iter: u64,
    pub loss_enc: f64,
    pub loss_dec: f64,
    pub kl_real: f64,
    pub kl_fake: f64,
    pub rec_real: f64,
    pub wall_ms: u64,
}

/// Interval means of the step values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

pub const LOG_COLUMNS: [&str; 7] = [
    "iter", "loss_enc", "loss_dec", "kl_real", "kl_fake", "rec_real", "wall_ms",
];

impl TrainLog {
    pub fn push(&mut self, rec: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.iter <= last.iter {
                return Err(Error::Contract(format!(
                    "log iterations must increase: {} after {}",
                    rec.iter, last.iter
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = LOG_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter, r.loss_enc, r.loss_dec, r.kl_real, r.kl_fake, r.rec_real, r.wall_ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::report::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Parameter gradients split by network, in [`crate::nn::Mlp::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<Vec<f64>>,
    pub decoder: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn is_zero(grads: &[Vec<f64>]) -> bool {
        grads.iter().flatten().all(|&g| g == 0.0)
    }
}

fn constant(g: &mut Graph, t: &Tensor) -> crate::tensor::Var {
    g.constant(t.clone())
}

/// Gradients of the plain VAE loss for both networks.
pub fn vae_gradients(
    model: &VaeModel,
    w: &BetaWeights,
    x: &Tensor,
    rng: &mut Rng,
) -> Result<(Gradients, LossReport)> {
    let mut g = Graph::new();
    let vae = model.bind(&mut g, true, true);
    let xv = constant(&mut g, x);
    let (obj, _) = loss_vae(&mut g, w, &vae, xv, rng)?;
    g.backward(obj.loss)?;
    let grads = Gradients {
        encoder: vae.encoder.take_grads(&mut g),
        decoder: vae.decoder.take_grads(&mut g),
    };
    Ok((grads, obj.report))
}

/// Encoder-update gradients with the decoder frozen. Returns the real
/// latent sample reused by the decoder update.
pub fn encoder_gradients(
    model: &VaeModel,
    regime: Regime,
    w: &BetaWeights,
    x: &Tensor,
    z_prior: &Tensor,
    rng: &mut Rng,
) -> Result<(Gradients, LossReport, Tensor)> {
    let mut g = Graph::new();
    let vae = model.bind(&mut g, true, false);
    let xv = constant(&mut g, x);
    let zp = constant(&mut g, z_prior);
    let (obj, z) = match regime {
        Regime::SIntroVae => loss_sintrovae_encoder(&mut g, w, &vae, xv, zp, rng)?,
        Regime::IntroVae => loss_introvae_encoder(&mut g, w, &vae, xv, zp, rng)?,
        Regime::Vae => return Err(Error::Contract("the VAE has no separate encoder update".into())),
    };
    g.backward(obj.loss)?;
    let z = g.value(z).clone();
    let grads = Gradients {
        encoder: vae.encoder.take_grads(&mut g),
        decoder: vae.decoder.take_grads(&mut g),
    };
    Ok((grads, obj.report, z))
}

/// Decoder-update gradients with the encoder frozen.
pub fn decoder_gradients(
    model: &VaeModel,
    regime: Regime,
    w: &BetaWeights,
    x: &Tensor,
    z_real: &Tensor,
    z_prior: &Tensor,
    rng: &mut Rng,
) -> Result<(Gradients, LossReport)> {
    let mut g = Graph::new();
    let vae = model.bind(&mut g, false, true);
    let xv = constant(&mut g, x);
    let zr = constant(&mut g, z_real);
    let zp = constant(&mut g, z_prior);
    let obj = match regime {
        Regime::SIntroVae => loss_sintrovae_decoder(&mut g, w, &vae, xv, zr, zp, rng)?,
        Regime::IntroVae => loss_introvae_decoder(&mut g, w, &vae, xv, zr, zp)?,
        Regime::Vae => return Err(Error::Contract("the VAE has no separate decoder update".into())),
    };
    g.backward(obj.loss)?;
    let grads = Gradients {
        encoder: vae.encoder.take_grads(&mut g),
        decoder: vae.decoder.take_grads(&mut g),
    };
    Ok((grads, obj.report))
}

/// Mean posterior KL of `E(D(z))` without recording a graph.
pub fn fake_posterior_kl(model: &VaeModel, z_prior: &Tensor) -> Result<f64> {
    let x_f = model.decode_tensor(z_prior)?;
    let (mu, lv) = model.encode_tensor(&x_f)?;
    Ok(mean_kl(&mu, &lv))
}

/// Mean over rows of `KL(N(mu, exp(lv)) ‖ N(0, I))`.
pub fn mean_kl(mu: &Tensor, lv: &Tensor) -> f64 {
    let per_row: Vec<f64> = (0..mu.rows())
        .map(|i| {
            0.5 * mu
                .row(i)
                .iter()
                .zip(lv.row(i))
                .map(|(m, l)| l.exp() + m * m - 1.0 - l)
                .sum::<f64>()
        })
        .collect();
    crate::tensor::running_mean(per_row.into_iter())
}

fn check_model(model: &VaeModel) -> Result<()> {
    if model.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration: 0,
            reason: "non-finite parameters".into(),
        })
    }
}

/// One joint Adam step on the plain VAE loss.
pub fn train_step_vae(
    model: &mut VaeModel,
    opt: &mut AdamState,
    w: &BetaWeights,
    x: &Tensor,
    z_prior: &Tensor,
    rng: &mut Rng,
) -> Result<StepRecord> {
    let kl_fake = fake_posterior_kl(model, z_prior)?;
    let (grads, rep) = vae_gradients(model, w, x, rng)?;
    let mut all = grads.encoder;
    all.extend(grads.decoder);
    let VaeModel {
        encoder, decoder, ..
    } = model;
    let mut params = encoder.params_mut();
    params.extend(decoder.params_mut());
    opt.step(&mut params, &all)?;
    check_model(model)?;
    Ok(StepRecord {
        loss_enc: rep.loss,
        loss_dec: rep.loss,
        kl_real: rep.kl_real,
        kl_fake,
        rec_real: rep.rec_real,
    })
}

/// Encoder update followed by decoder update, sharing `x`, the real latent
/// sample and the prior sample `z_prior`.
fn adversarial_step(
    regime: Regime,
    model: &mut VaeModel,
    enc_opt: &mut AdamState,
    dec_opt: &mut AdamState,
    w: &BetaWeights,
    x: &Tensor,
    z_prior: &Tensor,
    rng: &mut Rng,
) -> Result<StepRecord> {
    let (grads, rep_e, z) = encoder_gradients(model, regime, w, x, z_prior, rng)?;
    enc_opt.step(&mut model.encoder.params_mut(), &grads.encoder)?;
    check_model(model)?;
    let (grads, rep_d) = decoder_gradients(model, regime, w, x, &z, z_prior, rng)?;
    dec_opt.step(&mut model.decoder.params_mut(), &grads.decoder)?;
    check_model(model)?;
    Ok(StepRecord {
        loss_enc: rep_e.loss,
        loss_dec: rep_d.loss,
        kl_real: rep_e.kl_real,
        kl_fake: rep_e.kl_fake,
        rec_real: rep_e.rec_real,
    })
}

pub fn train_step_introvae(
    model: &mut VaeModel,
    enc_opt: &mut AdamState,
    dec_opt: &mut AdamState,
    w: &BetaWeights,
    x: &Tensor,
    z_prior: &Tensor,
    rng: &mut Rng,
) -> Result<StepRecord> {
    adversarial_step(Regime::IntroVae, model, enc_opt, dec_opt, w, x, z_prior, rng)
}

pub fn train_step_sintrovae(
    model: &mut VaeModel,
    enc_opt: &mut AdamState,
    dec_opt: &mut AdamState,
    w: &BetaWeights,
    x: &Tensor,
    z_prior: &Tensor,
    rng: &mut Rng,
) -> Result<StepRecord> {
    adversarial_step(Regime::SIntroVae, model, enc_opt, dec_opt, w, x, z_prior, rng)
}

/// Training state for one run. Each stochastic component draws from its
/// own substream of the run seed.
pub struct Trainer {
    pub config: TrainConfig,
    pub weights: BetaWeights,
    pub model: VaeModel,
    pub log: TrainLog,
    pub iteration: u64,
    data: DataSource,
    enc_opt: AdamState,
    dec_opt: AdamState,
    data_rng: Rng,
    prior_rng: Rng,
    noise_rng: Rng,
    pending: Vec<StepRecord>,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let data = DataSource::open(&config.dataset)?;
        Self::with_data(config, data)
    }

    pub fn with_data(config: TrainConfig, data: DataSource) -> Result<Self> {
        config.validate()?;
        let dim = data.dim();
        let weights = config.weights(dim);
        weights.validate()?;
        let mut init = Rng::substream(config.seed, stream::INIT);
        let model = VaeModel::new(dim, config.z_dim, &config.hidden, &mut init)?;
        Ok(Self {
            weights,
            model,
            log: TrainLog::default(),
            iteration: 0,
            data,
            enc_opt: AdamState::new(config.lr),
            dec_opt: AdamState::new(config.lr),
            data_rng: Rng::substream(config.seed, stream::DATA),
            prior_rng: Rng::substream(config.seed, stream::PRIOR),
            noise_rng: Rng::substream(config.seed, stream::NOISE),
            pending: Vec::new(),
            started: Instant::now(),
            config,
        })
    }

    pub fn data(&self) -> &DataSource {
        &self.data
    }

    /// Runs one iteration and appends a log record at interval boundaries.
    pub fn step(&mut self) -> Result<StepRecord> {
        let it = self.iteration + 1;
        let res = self.step_inner();
        let rec = res.map_err(|e| match e {
            Error::Diverged { reason, .. } => Error::Diverged {
                iteration: it,
                reason,
            },
            other => other,
        })?;
        self.iteration = it;
        self.pending.push(rec);
        if it % self.config.log_interval == 0 || it == self.config.iterations {
            self.flush()?;
        }
        Ok(rec)
    }

    fn step_inner(&mut self) -> Result<StepRecord> {
        let b = self.config.batch_size;
        let x = self.data.batch(b, &mut self.data_rng)?;
        let z_prior = Tensor::matrix(
            b,
            self.config.z_dim,
            self.prior_rng.normal_vec(b * self.config.z_dim),
        )?;
        let w = self.weights;
        match self.config.regime {
            Regime::Vae => {
                train_step_vae(&mut self.model, &mut self.enc_opt, &w, &x, &z_prior, &mut self.noise_rng)
            }
            regime => adversarial_step(
                regime,
                &mut self.model,
                &mut self.enc_opt,
                &mut self.dec_opt,
                &w,
                &x,
                &z_prior,
                &mut self.noise_rng,
            ),
        }
    }

    fn flush(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let mean = |f: fn(&StepRecord) -> f64| {
            crate::tensor::running_mean(self.pending.iter().map(f))
        };
        let wall_ms = if self.config.record_wall_clock {
            self.started.elapsed().as_millis() as u64
        } else {
            0
        };
        let rec = LogRecord {
            iter: self.iteration,
            loss_enc: mean(|r| r.loss_enc),
            loss_dec: mean(|r| r.loss_dec),
            kl_real: mean(|r| r.kl_real),
            kl_fake: mean(|r| r.kl_fake),
            rec_real: mean(|r| r.rec_real),
            wall_ms,
        };
        self.pending.clear();
        self.log.push(rec)
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }
}

/// File names written by [`run_training`] into its output directory.
pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

/// Runs a full training job. With an output directory, writes periodic
/// checkpoints, the final checkpoint and the log; on divergence the partial
/// log (and the last checkpoint) stay on disk and the error is returned.
pub fn run_training(config: &TrainConfig, out_dir: Option<&Path>) -> Result<(VaeModel, TrainLog)> {
    let mut trainer = Trainer::new(config.clone())?;
    let result = run_loop(&mut trainer, out_dir);
    if let Some(dir) = out_dir {
        trainer.log.write_csv(&dir.join(LOG_FILE))?;
    }
    result?;
    if let Some(dir) = out_dir {
        checkpoint::save(&dir.join(FINAL_CHECKPOINT), &trainer.model, config)?;
    }
    Ok((trainer.model, trainer.log))
}

fn run_loop(trainer: &mut Trainer, out_dir: Option<&Path>) -> Result<()> {
    let every = trainer.config.checkpoint_interval;
    while !trainer.is_done() {
        trainer.step()?;
        if let Some(dir) = out_dir {
            if every > 0 && trainer.iteration % every == 0 {
                let name = format!("checkpoint_{:06}.ckpt", trainer.iteration);
                checkpoint::save(&dir.join(name), &trainer.model, &trainer.config)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ToyDatasetId;

    fn small(regime: Regime, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(regime, DatasetSpec::Toy(ToyDatasetId::EightGaussians), seed);
        c.hidden = vec![16, 16];
        c.batch_size = 32;
        c.iterations = 20;
        c.log_interval = 5;
        c.beta_rec = 0.5;
        c.beta_kl = 0.3;
        c.beta_neg = 0.9;
        c.margin = 1.0;
        c
    }

    #[test]
    fn regime_parsing() {
        for r in Regime::ALL {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
        }
        assert!("gan".parse::<Regime>().is_err());
    }

    #[test]
    fn zero_log_interval_is_rejected() {
        let mut c = small(Regime::Vae, 0);
        c.log_interval = 0;
        match run_training(&c, None) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "log_interval"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        for regime in Regime::ALL {
            let mut c = small(regime, 1);
            c.lr = 0.0;
            let init = Trainer::new(c.clone()).unwrap().model;
            let (model, _) = run_training(&c, None).unwrap();
            assert_eq!(model, init, "{regime}");
        }
    }

    #[test]
    fn same_seed_same_log() {
        for regime in Regime::ALL {
            let c = small(regime, 7);
            let (m1, l1) = run_training(&c, None).unwrap();
            let (m2, l2) = run_training(&c, None).unwrap();
            assert_eq!(l1.to_csv(), l2.to_csv());
            assert_eq!(m1, m2);
            assert_eq!(l1.records.len(), 4);
        }
    }

    #[test]
    fn log_records_interval_means() {
        let c = small(Regime::SIntroVae, 3);
        let mut t = Trainer::new(c).unwrap();
        let mut steps = Vec::new();
        for _ in 0..5 {
            steps.push(t.step().unwrap());
        }
        let rec = t.log.records[0];
        assert_eq!(rec.iter, 5);
        let mean = steps.iter().map(|s| s.kl_fake).sum::<f64>() / 5.0;
        assert!((rec.kl_fake - mean).abs() < 1e-12);
        assert_eq!(rec.wall_ms, 0);
    }

    fn fixture(seed: u64) -> (VaeModel, BetaWeights, Tensor, Tensor) {
        let mut rng = Rng::seed_from_u64(seed);
        let m = VaeModel::new(2, 2, &[8, 8], &mut rng).unwrap();
        let mut w = BetaWeights::new(0.5, 0.3, 0.9, 2);
        w.margin = 50.0;
        let x = Tensor::matrix(6, 2, rng.normal_vec(12)).unwrap();
        let zp = Tensor::matrix(6, 2, rng.normal_vec(12)).unwrap();
        (m, w, x, zp)
    }

    #[test]
    fn freezing_contract() {
        for regime in [Regime::IntroVae, Regime::SIntroVae] {
            let (m, w, x, zp) = fixture(2);
            let (g, _, z) = encoder_gradients(&m, regime, &w, &x, &zp, &mut Rng::seed_from_u64(0)).unwrap();
            assert!(Gradients::is_zero(&g.decoder));
            assert!(!Gradients::is_zero(&g.encoder));
            let (g, _) = decoder_gradients(&m, regime, &w, &x, &z, &zp, &mut Rng::seed_from_u64(0)).unwrap();
            assert!(Gradients::is_zero(&g.encoder));
            assert!(!Gradients::is_zero(&g.decoder));
        }
    }

    #[test]
    fn encoder_update_leaves_decoder_bits_alone() {
        let (mut m, w, x, zp) = fixture(4);
        let dec = m.decoder.clone();
        let mut enc_opt = AdamState::new(1e-2);
        let (g, _, _) = encoder_gradients(&m, Regime::SIntroVae, &w, &x, &zp, &mut Rng::seed_from_u64(1)).unwrap();
        enc_opt.step(&mut m.encoder.params_mut(), &g.encoder).unwrap();
        assert_eq!(m.decoder, dec);
    }

    #[test]
    fn introvae_margin_boundaries() {
        let (m, mut w, x, zp) = fixture(5);
        // m = 0: the hinge is inactive, so only the real ELBO drives the encoder.
        w.margin = 0.0;
        let (g_hinge, _, _) = encoder_gradients(&m, Regime::IntroVae, &w, &x, &zp, &mut Rng::seed_from_u64(2)).unwrap();
        w.beta_neg = 0.0;
        let (g_real, _, _) = encoder_gradients(&m, Regime::IntroVae, &w, &x, &zp, &mut Rng::seed_from_u64(2)).unwrap();
        assert_eq!(g_hinge.encoder, g_real.encoder);

        // A huge margin keeps the hinge active: loss grows exactly with m.
        w.beta_neg = 1.0;
        w.margin = 1e6;
        let (_, r1, _) = encoder_gradients(&m, Regime::IntroVae, &w, &x, &zp, &mut Rng::seed_from_u64(2)).unwrap();
        w.margin = 2e6;
        let (_, r2, _) = encoder_gradients(&m, Regime::IntroVae, &w, &x, &zp, &mut Rng::seed_from_u64(2)).unwrap();
        assert!((r2.loss - r1.loss - 1e6).abs() < 1e-6);
    }

    #[test]
    fn ablated_sintrovae_encoder_matches_vae_encoder() {
        let (m, mut w, x, zp) = fixture(6);
        w.exp_elbo = false;
        w.beta_neg = w.beta_kl;
        w.gamma_r = 0.0;
        w.s = 1.0;
        let (gs, rs, _) = encoder_gradients(&m, Regime::SIntroVae, &w, &x, &zp, &mut Rng::seed_from_u64(3)).unwrap();
        let (gv, rv) = vae_gradients(&m, &w, &x, &mut Rng::seed_from_u64(3)).unwrap();
        assert!((rs.loss - rv.loss).abs() < 1e-12);
        for (a, b) in gs.encoder.iter().flatten().zip(gv.encoder.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Decoder loss with the fakes' reconstruction targets held fixed.
    fn frozen_target_loss(
        m: &VaeModel,
        w: &BetaWeights,
        x: &Tensor,
        z: &Tensor,
        zp: &Tensor,
        targets: &[Tensor],
    ) -> f64 {
        let sq = |a: &Tensor, b: &Tensor| {
            a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.rows() as f64
        };
        let xr = m.decode_tensor(z).unwrap();
        let xf = m.decode_tensor(zp).unwrap();
        let mut fake = 0.0;
        for (gen, t) in [&xr, &xf].into_iter().zip(targets) {
            let (mu, lv) = m.encode_tensor(gen).unwrap();
            fake += 0.5 * (w.gamma_r * w.beta_rec * sq(gen, t) + w.beta_kl * mean_kl(&mu, &lv));
        }
        w.s * (w.beta_rec * sq(x, &xr) + fake)
    }

    #[test]
    fn stop_gradient_contract() {
        let (m, mut w, x, zp) = fixture(8);
        w.gamma_r = 1.0;
        let z = Tensor::matrix(6, 2, Rng::seed_from_u64(11).normal_vec(12)).unwrap();
        let (g, _) = decoder_gradients(&m, Regime::SIntroVae, &w, &x, &z, &zp, &mut Rng::seed_from_u64(9)).unwrap();

        // Recreate the targets at the current parameters with the same noise.
        let mut noise = Rng::seed_from_u64(9);
        let targets: Vec<Tensor> = [m.decode_tensor(&z).unwrap(), m.decode_tensor(&zp).unwrap()]
            .iter()
            .map(|gen| {
                let (mu, lv) = m.encode_tensor(gen).unwrap();
                let eps = noise.normal_vec(mu.len());
                let zz: Vec<f64> = mu
                    .data()
                    .iter()
                    .zip(lv.data())
                    .zip(eps)
                    .map(|((a, l), e)| a + (0.5 * l).exp() * e)
                    .collect();
                m.decode_tensor(&Tensor::matrix(6, 2, zz).unwrap()).unwrap()
            })
            .collect();

        let h = 1e-6;
        let mut checked = 0;
        for (pi, grad) in g.decoder.iter().enumerate() {
            for j in (0..grad.len()).step_by(3) {
                let mut plus = m.clone();
                plus.decoder.params_mut()[pi].data_mut()[j] += h;
                let mut minus = m.clone();
                minus.decoder.params_mut()[pi].data_mut()[j] -= h;
                let fd = (frozen_target_loss(&plus, &w, &x, &z, &zp, &targets)
                    - frozen_target_loss(&minus, &w, &x, &z, &zp, &targets))
                    / (2.0 * h);
                let tol = 1e-4 * fd.abs().max(grad[j].abs()) + 1e-7;
                assert!((fd - grad[j]).abs() <= tol, "param {pi}[{j}]: fd {fd} vs {}", grad[j]);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn training_reduces_vae_loss() {
        let mut c = small(Regime::Vae, 0);
        c.hidden = vec![64, 64];
        c.batch_size = 128;
        c.lr = 1e-3;
        c.iterations = 2000;
        c.log_interval = 100;
        c.beta_rec = 0.8;
        c.beta_kl = 0.05;
        let mut first = 0.0;
        let mut last = 0.0;
        for seed in 0..3 {
            c.seed = seed;
            let (_, log) = run_training(&c, None).unwrap();
            first += log.records[0].loss_enc;
            last += log.last().unwrap().loss_enc;
        }
        assert!(last < first, "{last} vs {first}");
    }
}
