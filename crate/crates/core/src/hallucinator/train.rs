//! Offline adversarial training over quadruplets.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::losses::{
    adv_loss_discriminator, adv_loss_generator, discriminate, dr_loss, gradient_penalty, overall_generator_loss,
};
use super::{HalError, Quadruplet};
use crate::dataio::{build_dt, FeatureStore, PairRef};
use crate::nets::{DiscriminatorModel, HallucinatorModel, CODE_DIM, HIDDEN_WIDTH};
use crate::numgrad::{Adam, AdamConfig, Graph, Mat, NumError};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_def: f64,
    pub lambda_gp: f64,
    pub lr: f64,
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    pub code_dim: usize,
    pub hidden: usize,
    /// Discriminator hidden width; `None` uses `hidden`.
    pub disc_hidden: Option<usize>,
    /// Iterations per report record.
    pub log_interval: usize,
    /// Discriminator learning rate; `None` uses `lr`.
    pub lr_d: Option<f64>,
    /// Discriminator steps per generator step.
    pub d_steps: usize,
    /// Adam first-moment decay for both models.
    pub beta1: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_def: 0.5,
            lambda_gp: 10.0,
            lr: 2e-4,
            iterations: 1000,
            batch: 32,
            seed: 0,
            code_dim: CODE_DIM,
            hidden: HIDDEN_WIDTH,
            disc_hidden: None,
            log_interval: 100,
            lr_d: None,
            d_steps: 1,
            beta1: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HalError> {
        let bad = |m: &str| Err(HalError::InvalidConfig(m.to_string()));
        if !(self.lambda_def >= 0.0) || !(self.lambda_gp >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.disc_hidden == Some(0) {
            return bad("discriminator hidden width must be positive");
        }
        if self.lr_d.is_some_and(|lr| !(lr > 0.0)) {
            return bad("discriminator learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1 must lie in [0, 1)");
        }
        if self.d_steps == 0 || self.batch == 0 || self.log_interval == 0 || self.code_dim == 0 || self.hidden == 0 {
            return bad("batch, log_interval, code_dim and hidden must be positive");
        }
        Ok(())
    }
}

/// Interval means of the training losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainRecord {
    /// Last iteration of the interval, 1-based.
    pub iteration: usize,
    pub l_adv_d: f64,
    pub l_adv_g: f64,
    pub l_def: f64,
    pub gp: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,l_adv_d,l_adv_g,l_def,gp,d_real_mean,d_fake_mean\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration, r.l_adv_d, r.l_adv_g, r.l_def, r.gp, r.d_real_mean, r.d_fake_mean
            );
        }
        out
    }
}

/// Draws quadruplets from same-identity pairs of a feature store.
#[derive(Clone, Debug)]
pub struct QuadrupletSampler {
    features: Vec<Vec<f32>>,
    identities: Vec<u32>,
    pairs: Vec<PairRef>,
}

impl QuadrupletSampler {
    /// `pairs` index into `features` and `identities`.
    pub fn new(features: Vec<Vec<f32>>, identities: Vec<u32>, pairs: Vec<PairRef>) -> Result<Self, HalError> {
        let dim = features.first().map_or(0, Vec::len);
        if dim == 0 || features.iter().any(|f| f.len() != dim) || identities.len() != features.len() {
            return Err(HalError::InvalidConfig("features must be non-empty and share one dimension".into()));
        }
        if pairs.iter().any(|p| p.first.max(p.second) >= features.len()) {
            return Err(HalError::InvalidConfig("pair index out of range".into()));
        }
        let first = pairs.first().ok_or(HalError::SingleIdentity)?;
        if pairs.iter().all(|p| identities[p.first] == identities[first.first]) {
            return Err(HalError::SingleIdentity);
        }
        Ok(Self {
            features,
            identities,
            pairs,
        })
    }

    /// All window-valid pairs of `store`.
    pub fn from_store(store: &FeatureStore, window: u32) -> Result<Self, HalError> {
        let pairs = build_dt(&store.records, window);
        Self::new(
            store.records.iter().map(|r| r.values.clone()).collect(),
            store.records.iter().map(|r| r.identity).collect(),
            pairs,
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn pairs(&self) -> &[PairRef] {
        &self.pairs
    }

    pub fn features(&self) -> &[Vec<f32>] {
        &self.features
    }

    pub fn identities(&self) -> &[u32] {
        &self.identities
    }

    pub fn quadruplet(&self, source: PairRef, target: PairRef) -> Quadruplet {
        Quadruplet {
            xa1: self.features[source.first].clone(),
            xa2: self.features[source.second].clone(),
            xb1: self.features[target.first].clone(),
            xb2: self.features[target.second].clone(),
            identity_a: self.identities[source.first],
            identity_b: self.identities[target.first],
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Quadruplet> {
        (0..n)
            .map(|_| {
                let source = self.pairs[rng.random_range(0..self.pairs.len())];
                let target = loop {
                    let t = self.pairs[rng.random_range(0..self.pairs.len())];
                    if self.identities[t.first] != self.identities[source.first] {
                        break t;
                    }
                };
                self.quadruplet(source, target)
            })
            .collect()
    }
}

/// A quadruplet batch as four `B×D` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadBatch {
    pub xa1: Mat,
    pub xa2: Mat,
    pub xb1: Mat,
    pub xb2: Mat,
}

impl QuadBatch {
    pub fn new(quads: &[Quadruplet]) -> Result<Self, HalError> {
        let stack = |f: fn(&Quadruplet) -> &Vec<f32>| Mat::from_rows(&quads.iter().map(f).collect::<Vec<_>>());
        let b = Self {
            xa1: stack(|q| &q.xa1)?,
            xa2: stack(|q| &q.xa2)?,
            xb1: stack(|q| &q.xb1)?,
            xb2: stack(|q| &q.xb2)?,
        };
        let d = b.xa1.cols;
        for m in [&b.xa2, &b.xb1, &b.xb2] {
            if m.cols != d {
                return Err(HalError::Dimension {
                    what: "quadruplet feature",
                    expected: d,
                    found: m.cols,
                });
            }
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.xa1.rows
    }

    pub fn is_empty(&self) -> bool {
        self.xa1.rows == 0
    }
}

fn concat_rows(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows, a.cols + b.cols);
    for i in 0..a.rows {
        out.data[i * out.cols..i * out.cols + a.cols].copy_from_slice(a.row(i));
        out.data[i * out.cols + a.cols..(i + 1) * out.cols].copy_from_slice(b.row(i));
    }
    out
}

/// Losses of one training iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub l_adv_d: f64,
    pub l_adv_g: f64,
    pub l_def: f64,
    pub gp: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

fn nonfinite(iteration: usize, what: &'static str) -> HalError {
    HalError::NonFinite { iteration, what }
}

/// Optimizer state for one adversarial pair of models.
pub struct AdversarialTrainer {
    pub generator: HallucinatorModel,
    pub discriminator: DiscriminatorModel,
    pub lambda_def: f64,
    pub lambda_gp: f64,
    pub d_steps: usize,
    opt_g: Adam,
    opt_d: Adam,
    eps_rng: Rng,
}

impl AdversarialTrainer {
    pub fn new(
        generator: HallucinatorModel,
        discriminator: DiscriminatorModel,
        config: &TrainConfig,
    ) -> Result<Self, HalError> {
        config.validate()?;
        if generator.feature_dim() != discriminator.feature_dim() {
            return Err(HalError::Dimension {
                what: "discriminator feature",
                expected: generator.feature_dim(),
                found: discriminator.feature_dim(),
            });
        }
        Ok(Self {
            generator,
            discriminator,
            lambda_def: config.lambda_def,
            lambda_gp: config.lambda_gp,
            d_steps: config.d_steps,
            opt_g: Adam::new(AdamConfig {
                beta1: config.beta1,
                ..AdamConfig::with_lr(config.lr)
            }),
            opt_d: Adam::new(AdamConfig {
                beta1: config.beta1,
                ..AdamConfig::with_lr(config.lr_d.unwrap_or(config.lr))
            }),
            eps_rng: rng::stream(config.seed, 21),
        })
    }

    /// One discriminator update on real pairs `(xb1, xb2)` and detached fake
    /// pairs `(xb1, xhat)`; returns the pre-update losses and mean scores.
    pub fn train_discriminator(&mut self, xb1: &Mat, xb2: &Mat, xhat: &Mat, iteration: usize) -> Result<StepLosses, HalError> {
        let mut out = StepLosses::default();
        let mut gd = Graph::new();
        let disc = self.discriminator.net.bind(&mut gd, true);
        let r1 = gd.constant_mat(xb1.clone());
        let r2 = gd.constant_mat(xb2.clone());
        let f2 = gd.constant_mat(xhat.clone());
        let adv_d = adv_loss_discriminator(&mut gd, &disc, (r1, r2), (r1, f2))?;
        let eps: Vec<f64> = (0..xb1.rows).map(|_| self.eps_rng.random::<f64>()).collect();
        let real = concat_rows(xb1, xb2);
        let fake = concat_rows(xb1, xhat);
        let gp = gradient_penalty(&mut gd, &disc, &real, &fake, &eps, self.lambda_gp)?;
        let d_loss = gd.add(adv_d, gp)?;
        out.l_adv_d = gd.scalar(adv_d);
        out.gp = gd.scalar(gp);
        if !out.l_adv_d.is_finite() || !out.gp.is_finite() {
            return Err(nonfinite(iteration, "discriminator loss"));
        }
        let (_, pr) = discriminate(&mut gd, &disc, r1, r2)?;
        let (_, pf) = discriminate(&mut gd, &disc, r1, f2)?;
        let mean = |m: &Mat| m.data.iter().sum::<f64>() / m.data.len().max(1) as f64;
        out.d_real_mean = mean(gd.value(pr));
        out.d_fake_mean = mean(gd.value(pf));
        let grads = gd.backward(d_loss)?;
        let dg = disc.grads(&grads);
        self.opt_d
            .step(&mut self.discriminator.net.params_mut(), &dg)
            .map_err(|e| match e {
                NumError::NonFinite { .. } => nonfinite(iteration, "discriminator update"),
                e => e.into(),
            })?;
        Ok(out)
    }

    /// Discriminator step(s) (adversarial loss plus penalty) followed by one
    /// generator step (overall loss) against the updated discriminator.
    pub fn step(&mut self, batch: &QuadBatch, iteration: usize) -> Result<StepLosses, HalError> {
        let d = self.generator.feature_dim();
        if batch.xa1.cols != d {
            return Err(HalError::Dimension {
                what: "batch feature",
                expected: d,
                found: batch.xa1.cols,
            });
        }
        let mut out = StepLosses::default();

        let mut gg = Graph::new();
        let gen = self.generator.bind(&mut gg, true);
        let xa1 = gg.constant_mat(batch.xa1.clone());
        let xa2 = gg.constant_mat(batch.xa2.clone());
        let xb1 = gg.constant_mat(batch.xb1.clone());
        let pass = dr_loss(&mut gg, &gen, xa1, xa2, xb1)?;
        let xhat = gg.value(pass.xhat_b).clone();

        for k in 0..self.d_steps {
            let s = self.train_discriminator(&batch.xb1, &batch.xb2, &xhat, iteration)?;
            if k == 0 {
                out = s;
            }
        }

        // Generator step against the updated, frozen discriminator.
        let frozen = self.discriminator.net.bind(&mut gg, false);
        let adv_g = adv_loss_generator(&mut gg, &frozen, (xb1, pass.xhat_b))?;
        let total = overall_generator_loss(&mut gg, adv_g, pass.dr, self.lambda_def)?;
        out.l_adv_g = gg.scalar(adv_g);
        out.l_def = gg.scalar(pass.dr);
        if !gg.scalar(total).is_finite() {
            return Err(nonfinite(iteration, "generator loss"));
        }
        let grads = gg.backward(total)?;
        let ggrads = gen.grads(&grads);
        self.opt_g
            .step(&mut self.generator.params_mut(), &ggrads)
            .map_err(|e| match e {
                NumError::NonFinite { .. } => nonfinite(iteration, "generator update"),
                e => e.into(),
            })?;
        Ok(out)
    }
}

/// Trained models and the loss trace.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub generator: HallucinatorModel,
    pub discriminator: DiscriminatorModel,
    pub report: TrainReport,
}

/// Offline adversarial training from freshly initialized models.
pub fn train_offline(sampler: &QuadrupletSampler, config: &TrainConfig) -> Result<TrainOutcome, HalError> {
    config.validate()?;
    let d = sampler.feature_dim();
    let generator = HallucinatorModel::new(d, config.code_dim, config.hidden, config.seed)?;
    let discriminator = DiscriminatorModel::new(d, config.disc_hidden.unwrap_or(config.hidden), config.seed)?;
    train_from(sampler, config, generator, discriminator)
}

/// Offline adversarial training starting from the given models.
pub fn train_from(
    sampler: &QuadrupletSampler,
    config: &TrainConfig,
    generator: HallucinatorModel,
    discriminator: DiscriminatorModel,
) -> Result<TrainOutcome, HalError> {
    let mut trainer = AdversarialTrainer::new(generator, discriminator, config)?;
    let mut sample_rng = rng::stream(config.seed, 20);
    let mut report = TrainReport::default();
    let mut acc = StepLosses::default();
    for it in 1..=config.iterations {
        let quads = sampler.sample(config.batch, &mut sample_rng);
        let batch = QuadBatch::new(&quads)?;
        let s = trainer.step(&batch, it)?;
        acc.l_adv_d += s.l_adv_d;
        acc.l_adv_g += s.l_adv_g;
        acc.l_def += s.l_def;
        acc.gp += s.gp;
        acc.d_real_mean += s.d_real_mean;
        acc.d_fake_mean += s.d_fake_mean;
        if it % config.log_interval == 0 {
            let n = config.log_interval as f64;
            report.records.push(TrainRecord {
                iteration: it,
                l_adv_d: acc.l_adv_d / n,
                l_adv_g: acc.l_adv_g / n,
                l_def: acc.l_def / n,
                gp: acc.gp / n,
                d_real_mean: acc.d_real_mean / n,
                d_fake_mean: acc.d_fake_mean / n,
            });
            acc = StepLosses::default();
        }
    }
    Ok(TrainOutcome {
        generator: trainer.generator,
        discriminator: trainer.discriminator,
        report,
    })
}

/// Mean deformation-reconstruction loss of `generator` over `quads`.
pub fn evaluate_dr(generator: &HallucinatorModel, quads: &[Quadruplet]) -> Result<f64, HalError> {
    let batch = QuadBatch::new(quads)?;
    let mut g = Graph::new();
    let gen = generator.bind(&mut g, false);
    let xa1 = g.constant_mat(batch.xa1);
    let xa2 = g.constant_mat(batch.xa2);
    let xb1 = g.constant_mat(batch.xb1);
    let pass = dr_loss(&mut g, &gen, xa1, xa2, xb1)?;
    Ok(g.scalar(pass.dr))
}
