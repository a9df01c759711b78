//! Joint classifier/hallucinator initialization, detection and update.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::sim::{SamplePool, SimVideo};
use super::TrackError;
use crate::dataio::{PairRef, SyntheticWorld};
use crate::hallucinator::{hallucinate_rows, AdversarialTrainer, QuadBatch, TrainConfig};
use crate::nets::{ClassifierHead, DiscriminatorModel, HallucinatorModel, CLASSIFIER_WIDTH};
use crate::numgrad::{Adam, AdamConfig, Graph, Mat, NodeId, NumError};
use crate::rng::{self, Rng};

/// Positive-to-negative ratio of one training iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Ratio {
    OneThird,
    TwoThirds,
    One,
}

impl Ratio {
    pub const ALL: [Ratio; 3] = [Ratio::OneThird, Ratio::TwoThirds, Ratio::One];

    /// Hallucinated positives added to `positives` real ones so that the
    /// total over `negatives` equals the ratio.
    pub fn hallucinated(self, positives: usize, negatives: usize) -> usize {
        let total = match self {
            Ratio::OneThird => negatives / 3,
            Ratio::TwoThirds => 2 * negatives / 3,
            Ratio::One => negatives,
        };
        total.saturating_sub(positives)
    }

    /// Compact tag used in variant names.
    pub fn tag(self) -> &'static str {
        match self {
            Ratio::OneThird => "r13",
            Ratio::TwoThirds => "r23",
            Ratio::One => "r11",
        }
    }
}

impl TryFrom<String> for Ratio {
    type Error = TrackError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ratio::OneThird => "1/3",
            Ratio::TwoThirds => "2/3",
            Ratio::One => "1/1",
        })
    }
}

impl FromStr for Ratio {
    type Err = TrackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "1/3" | "r13" => Ok(Ratio::OneThird),
            "2/3" | "r23" => Ok(Ratio::TwoThirds),
            "1/1" | "1" | "r11" => Ok(Ratio::One),
            other => Err(TrackError::InvalidConfig(format!("unknown ratio {other:?}; use 1/3, 2/3 or 1/1"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub ratio: Ratio,
    pub positives: usize,
    pub negatives: usize,
    pub init_iterations: usize,
    pub update_iterations: usize,
    /// Learning rate of the online hallucinator update.
    pub lr: f64,
    pub classifier_lr: f64,
    /// Learning rate of the discriminator that the online update trains
    /// against.
    pub discriminator_lr: f64,
    pub classifier_widths: (usize, usize),
    pub sdt: bool,
    pub top: usize,
    pub window: u32,
    pub pair_budget: usize,
    pub update_ah: bool,
    pub lambda_def: f64,
    /// Recent frames whose labeled samples feed the update, in addition to
    /// the first frame's.
    pub memory: usize,
    pub seed: u64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            ratio: Ratio::One,
            positives: 32,
            negatives: 96,
            init_iterations: 35,
            update_iterations: 15,
            lr: 1.2e-4,
            classifier_lr: 1e-3,
            discriminator_lr: 1e-3,
            classifier_widths: (CLASSIFIER_WIDTH, CLASSIFIER_WIDTH),
            sdt: true,
            top: crate::sdt::DEFAULT_TOP,
            window: 20,
            pair_budget: crate::sdt::DEFAULT_PAIR_BUDGET,
            update_ah: true,
            lambda_def: 0.5,
            memory: 5,
            seed: 0,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |m: &str| Err(TrackError::InvalidConfig(m.to_string()));
        if self.positives == 0 || self.negatives == 0 {
            return bad("positive and negative counts must be positive");
        }
        if !(self.lr > 0.0) || !(self.classifier_lr > 0.0) || !(self.discriminator_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.classifier_widths.0 == 0 || self.classifier_widths.1 == 0 {
            return bad("classifier widths must be positive");
        }
        if self.top == 0 || self.window == 0 || self.pair_budget == 0 || self.memory == 0 {
            return bad("top, window, pair_budget and memory must be positive");
        }
        if !(self.lambda_def >= 0.0) {
            return bad("lambda_def must be non-negative");
        }
        Ok(())
    }

    pub fn hallucinated(&self) -> usize {
        self.ratio.hallucinated(self.positives, self.negatives)
    }
}

/// Deformation pairs the online hallucinator draws from: 𝔻_S with SDT on,
/// all of 𝔻_T otherwise.
#[derive(Clone, Copy, Debug)]
pub struct PairSource<'a> {
    pub features: &'a [Vec<f32>],
    pub pairs: &'a [PairRef],
}

/// Everything shared by the online loop of one video.
#[derive(Clone, Copy, Debug)]
pub struct TrackContext<'a> {
    pub world: &'a SyntheticWorld,
    pub discriminator: &'a DiscriminatorModel,
    pub pairs: PairSource<'a>,
}

/// Accounting for one joint iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterationStats {
    pub positives: usize,
    pub hallucinated: usize,
    pub negatives: usize,
    pub classifier_loss: f64,
    /// Overall hallucinator loss when the hallucinator was updated.
    pub generator_loss: Option<f64>,
}

/// Online models with their optimizer state. The hallucinator trains
/// against a per-video copy of the offline discriminator.
pub struct OnlineState {
    pub classifier: ClassifierHead,
    pub adversary: AdversarialTrainer,
    opt_c: Adam,
    /// Total hallucinate calls so far.
    pub hallucinate_calls: usize,
    /// Joint iterations run so far.
    pub iterations: usize,
}

impl OnlineState {
    pub fn new(
        classifier: ClassifierHead,
        generator: HallucinatorModel,
        discriminator: DiscriminatorModel,
        config: &TrackConfig,
    ) -> Result<Self, TrackError> {
        let train = TrainConfig {
            lambda_def: config.lambda_def,
            lr: config.lr,
            lr_d: Some(config.discriminator_lr),
            seed: config.seed,
            ..TrainConfig::default()
        };
        Ok(Self {
            classifier,
            adversary: AdversarialTrainer::new(generator, discriminator, &train)?,
            opt_c: Adam::new(AdamConfig::with_lr(config.classifier_lr)),
            hallucinate_calls: 0,
            iterations: 0,
        })
    }

    pub fn generator(&self) -> &HallucinatorModel {
        &self.adversary.generator
    }
}

/// Index of the highest score; the lowest index wins ties.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Candidate with the highest positive-class probability.
pub fn detect(classifier: &ClassifierHead, candidates: &[Vec<f32>]) -> Result<usize, TrackError> {
    if candidates.is_empty() {
        return Err(TrackError::NoCandidates);
    }
    let scores = classifier.positive_scores(&Mat::from_rows(candidates)?)?;
    Ok(argmax_first(&scores).expect("non-empty"))
}

/// Mean softmax cross-entropy of `logits` (B×2) against `positive` labels.
pub fn classifier_loss(g: &mut Graph, logits: NodeId, positive: &[bool]) -> Result<NodeId, NumError> {
    let mut onehot = Mat::zeros(positive.len(), 2);
    for (i, &p) in positive.iter().enumerate() {
        onehot.data[i * 2 + usize::from(!p)] = 1.0;
    }
    let y = g.constant_mat(onehot);
    let ls = g.log_softmax(logits);
    let picked = g.mul(ls, y)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / positive.len().max(1) as f64))
}

fn draw<'a>(pool: &[&'a [f32]], n: usize, r: &mut Rng) -> Vec<&'a [f32]> {
    if pool.len() >= n {
        index::sample(r, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..n).map(|_| pool[r.random_range(0..pool.len())]).collect()
    }
}

/// One joint iteration: hallucinate, one classifier step on real plus
/// hallucinated positives and negatives, and one hallucinator step on the same
/// quadruplets when the online update is on.
pub fn joint_step(
    state: &mut OnlineState,
    ctx: &TrackContext<'_>,
    exemplar: &[f32],
    memory: &VecDeque<SamplePool>,
    config: &TrackConfig,
    r: &mut Rng,
) -> Result<IterationStats, TrackError> {
    let pos_pool: Vec<&[f32]> = memory.iter().flat_map(|p| p.positives.iter().map(|s| s.feature.as_slice())).collect();
    let neg_pool: Vec<&[f32]> = memory.iter().flat_map(|p| p.negatives.iter().map(|s| s.feature.as_slice())).collect();
    if pos_pool.is_empty() || neg_pool.is_empty() {
        return Err(TrackError::EmptyPool);
    }
    let positives = draw(&pos_pool, config.positives, r);
    let negatives = draw(&neg_pool, config.negatives, r);
    let h = config.hallucinated();
    let mut stats = IterationStats {
        positives: positives.len(),
        hallucinated: h,
        negatives: negatives.len(),
        ..IterationStats::default()
    };

    let mut hallucinated = Mat::zeros(0, exemplar.len());
    if h > 0 {
        let src = ctx.pairs;
        if src.pairs.is_empty() {
            return Err(TrackError::EmptyPairs);
        }
        let chosen: Vec<PairRef> = (0..h).map(|_| src.pairs[r.random_range(0..src.pairs.len())]).collect();
        let batch = QuadBatch {
            xa1: Mat::from_rows(&chosen.iter().map(|p| &src.features[p.first]).collect::<Vec<_>>())?,
            xa2: Mat::from_rows(&chosen.iter().map(|p| &src.features[p.second]).collect::<Vec<_>>())?,
            xb1: Mat::from_rows(&vec![exemplar; h])?,
            // Real deformations of the target: the exemplar against tracked positives.
            xb2: Mat::from_rows(&(0..h).map(|k| positives[k % positives.len()]).collect::<Vec<_>>())?,
        };
        hallucinated = hallucinate_rows(state.generator(), &batch.xa1, &batch.xa2, &batch.xb1)?;
        state.hallucinate_calls += h;
        if config.update_ah {
            let losses = state.adversary.step(&batch, state.iterations)?;
            stats.generator_loss = Some(losses.l_adv_g + config.lambda_def * losses.l_def);
        }
    }

    let d = exemplar.len();
    let rows = positives.len() + h + negatives.len();
    let mut x = Mat::zeros(rows, d);
    let mut labels = Vec::with_capacity(rows);
    let mut fill = |i: usize, v: &mut dyn Iterator<Item = f64>| {
        x.data[i * d..(i + 1) * d].iter_mut().zip(v).for_each(|(o, s)| *o = s);
    };
    let mut i = 0;
    for p in &positives {
        fill(i, &mut p.iter().map(|&v| v as f64));
        labels.push(true);
        i += 1;
    }
    for k in 0..h {
        fill(i, &mut hallucinated.row(k).iter().copied());
        labels.push(true);
        i += 1;
    }
    for n in &negatives {
        fill(i, &mut n.iter().map(|&v| v as f64));
        labels.push(false);
        i += 1;
    }
    let mut g = Graph::new();
    let cls = state.classifier.bind(&mut g, true);
    let xi = g.constant_mat(x);
    let logits = cls.logits(&mut g, xi)?;
    let loss = classifier_loss(&mut g, logits, &labels)?;
    stats.classifier_loss = g.scalar(loss);
    if !stats.classifier_loss.is_finite() {
        return Err(TrackError::NonFinite("classifier loss"));
    }
    let grads = g.backward(loss)?;
    state.opt_c.step(&mut state.classifier.params_mut(), &cls.grads(&grads))?;
    state.iterations += 1;
    Ok(stats)
}

/// `iterations` joint steps; returns the per-iteration accounting.
pub fn joint_train(
    state: &mut OnlineState,
    ctx: &TrackContext<'_>,
    exemplar: &[f32],
    memory: &VecDeque<SamplePool>,
    config: &TrackConfig,
    iterations: usize,
    r: &mut Rng,
) -> Result<Vec<IterationStats>, TrackError> {
    (0..iterations)
        .map(|_| joint_step(state, ctx, exemplar, memory, config, r))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub video_id: u32,
    /// Chosen candidate per frame; the first frame is given, not detected.
    pub chosen: Vec<usize>,
    pub success: Vec<bool>,
    pub success_rate: f64,
    pub hallucinate_calls: usize,
    /// Classifier loss of every initialization iteration.
    pub init_losses: Vec<f64>,
}

/// Runs the online loop on `video`: joint initialization on the first frame,
/// then detection and a joint update on every later frame. Returns the result
/// and the final hallucinator.
pub fn track_video(
    video: &SimVideo,
    ctx: &TrackContext<'_>,
    generator: &HallucinatorModel,
    config: &TrackConfig,
) -> Result<(TrackResult, HallucinatorModel), TrackError> {
    config.validate()?;
    let d = video.exemplar.len();
    if generator.feature_dim() != d || ctx.discriminator.feature_dim() != d {
        return Err(TrackError::Dimension {
            expected: d,
            found: generator.feature_dim(),
        });
    }
    let mut r = rng::stream(config.seed, u64::from(video.id));
    let classifier = ClassifierHead::new(d, config.classifier_widths, rng::derive(config.seed, u64::from(video.id)))?;
    let mut state = OnlineState::new(classifier, generator.clone(), ctx.discriminator.clone(), config)?;
    let world = ctx.world;

    let mut memory: VecDeque<SamplePool> = VecDeque::with_capacity(config.memory + 1);
    memory.push_back(video.training_pool(world, 0, [0.0, 0.0], video.config.init_pool, &mut r));
    let init = joint_train(&mut state, ctx, &video.exemplar, &memory, config, config.init_iterations, &mut r)?;

    let mut chosen = vec![0];
    let mut success = Vec::with_capacity(video.frames.len() - 1);
    for t in 1..video.frames.len() {
        let frame = &video.frames[t];
        let feats: Vec<Vec<f32>> = frame.candidates.iter().map(|c| c.feature.clone()).collect();
        let best = detect(&state.classifier, &feats)?;
        chosen.push(best);
        success.push(frame.candidates[best].distance <= video.config.rho_pos);
        let estimate = frame.candidates[best].position;
        // The first-frame pool is kept for the whole video.
        if memory.len() > config.memory {
            memory.remove(1);
        }
        memory.push_back(video.training_pool(world, t, estimate, video.config.pool, &mut r));
        joint_train(&mut state, ctx, &video.exemplar, &memory, config, config.update_iterations, &mut r)?;
    }
    let success_rate = success.iter().filter(|&&s| s).count() as f64 / success.len() as f64;
    Ok((
        TrackResult {
            video_id: video.id,
            chosen,
            success,
            success_rate,
            hallucinate_calls: state.hallucinate_calls,
            init_losses: init.iter().map(|s| s.classifier_loss).collect(),
        },
        state.adversary.generator,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{build_dt, gen_world, WorldConfig};
    use crate::nets::{model_to_bytes, ModelFile};
    use crate::tracker::{SuiteConfig, VideoConfig};

    struct Fixture {
        world: SyntheticWorld,
        rows: Vec<Vec<f32>>,
        pairs: Vec<PairRef>,
        generator: HallucinatorModel,
        discriminator: DiscriminatorModel,
    }

    impl Fixture {
        fn new() -> Self {
            let (world, features, _) = gen_world(&WorldConfig {
                identities: 40,
                ..SuiteConfig::default().world
            })
            .unwrap();
            Self {
                rows: features.records.iter().map(|r| r.values.clone()).collect(),
                pairs: build_dt(&features.records, 4),
                generator: HallucinatorModel::new(32, 4, 16, 1).unwrap(),
                discriminator: DiscriminatorModel::new(32, 16, 2).unwrap(),
                world,
            }
        }

        fn ctx(&self) -> TrackContext<'_> {
            TrackContext {
                world: &self.world,
                discriminator: &self.discriminator,
                pairs: PairSource {
                    features: &self.rows,
                    pairs: &self.pairs,
                },
            }
        }

        fn video(&self, frames: usize, id: u32) -> SimVideo {
            let cfg = VideoConfig {
                frames,
                pool: (20, 60),
                init_pool: (40, 120),
                ..SuiteConfig::default().video
            };
            SimVideo::generate(&self.world, &cfg, 0, id).unwrap()
        }
    }

    fn config(ratio: Ratio, update_ah: bool) -> TrackConfig {
        TrackConfig {
            ratio,
            update_ah,
            init_iterations: 10,
            update_iterations: 2,
            ..SuiteConfig::default().track
        }
    }

    fn g_bytes(g: &HallucinatorModel) -> Vec<u8> {
        model_to_bytes(&ModelFile::Hallucinator(g.clone()))
    }

    #[test]
    fn ratio_accounting() {
        assert_eq!(Ratio::OneThird.hallucinated(32, 96), 0);
        assert_eq!(Ratio::TwoThirds.hallucinated(32, 96), 32);
        assert_eq!(Ratio::One.hallucinated(32, 96), 64);
        assert_eq!(Ratio::One.hallucinated(200, 96), 0);
        for r in Ratio::ALL {
            assert_eq!(r.to_string().parse::<Ratio>().unwrap(), r);
            assert_eq!(r.tag().parse::<Ratio>().unwrap(), r);
        }
        assert!("3/4".parse::<Ratio>().is_err());
    }

    #[test]
    fn argmax_prefers_the_lowest_index_on_ties() {
        assert_eq!(argmax_first(&[]), None);
        assert_eq!(argmax_first(&[0.2, 0.7, 0.7, 0.1]), Some(1));
        assert_eq!(argmax_first(&[0.5]), Some(0));
    }

    #[test]
    fn classifier_loss_matches_direct_cross_entropy() {
        let logits: [[f64; 2]; 3] = [[1.0, -0.5], [0.3, 0.9], [-2.0, 2.0]];
        let labels = [true, false, true];
        let mut g = Graph::new();
        let x = g.constant_mat(Mat::from_rows(&logits.iter().map(|r| r.map(|v| v as f32).to_vec()).collect::<Vec<_>>()).unwrap());
        let l = classifier_loss(&mut g, x, &labels).unwrap();
        let want: f64 = logits
            .iter()
            .zip(labels)
            .map(|(r, p)| {
                let lse = (r[0].exp() + r[1].exp()).ln();
                lse - if p { r[0] } else { r[1] }
            })
            .sum::<f64>()
            / 3.0;
        assert!((g.scalar(l) - want).abs() < 1e-6);
    }

    #[test]
    fn joint_step_accounting_per_ratio() {
        let fx = Fixture::new();
        let video = fx.video(3, 0);
        let mut r = rng::stream(0, 0);
        let memory: VecDeque<SamplePool> =
            [video.training_pool(&fx.world, 0, [0.0, 0.0], (20, 60), &mut r)].into_iter().collect();
        for (ratio, h) in [(Ratio::OneThird, 0), (Ratio::TwoThirds, 32), (Ratio::One, 64)] {
            let cfg = config(ratio, false);
            let cls = ClassifierHead::new(32, (32, 32), 0).unwrap();
            let mut state = OnlineState::new(cls, fx.generator.clone(), fx.discriminator.clone(), &cfg).unwrap();
            let s = joint_step(&mut state, &fx.ctx(), &video.exemplar, &memory, &cfg, &mut r).unwrap();
            assert_eq!((s.positives, s.hallucinated, s.negatives), (32, h, 96));
            assert_eq!((s.positives + s.hallucinated) * 3, 96 * 3 * (32 + h) / 96);
            assert_eq!(state.hallucinate_calls, h);
            assert!(s.generator_loss.is_none());
        }
    }

    #[test]
    fn empty_pair_source_is_an_error_only_when_hallucinating() {
        let fx = Fixture::new();
        let video = fx.video(3, 0);
        let mut r = rng::stream(0, 0);
        let memory: VecDeque<SamplePool> =
            [video.training_pool(&fx.world, 0, [0.0, 0.0], (20, 60), &mut r)].into_iter().collect();
        let ctx = TrackContext {
            pairs: PairSource {
                features: &fx.rows,
                pairs: &[],
            },
            ..fx.ctx()
        };
        for (ratio, ok) in [(Ratio::OneThird, true), (Ratio::One, false)] {
            let cfg = config(ratio, false);
            let cls = ClassifierHead::new(32, (32, 32), 0).unwrap();
            let mut state = OnlineState::new(cls, fx.generator.clone(), fx.discriminator.clone(), &cfg).unwrap();
            let out = joint_step(&mut state, &ctx, &video.exemplar, &memory, &cfg, &mut r);
            assert_eq!(out.is_ok(), ok);
        }
    }

    #[test]
    fn update_flag_controls_the_hallucinator() {
        let fx = Fixture::new();
        let video = fx.video(6, 1);
        let before = g_bytes(&fx.generator);
        let (off, g_off) = track_video(&video, &fx.ctx(), &fx.generator, &config(Ratio::One, false)).unwrap();
        assert_eq!(g_bytes(&g_off), before);
        assert!(off.hallucinate_calls > 0);
        let (_, g_on) = track_video(&video, &fx.ctx(), &fx.generator, &config(Ratio::One, true)).unwrap();
        assert_ne!(g_bytes(&g_on), before);
        let (base, g_base) = track_video(&video, &fx.ctx(), &fx.generator, &config(Ratio::OneThird, true)).unwrap();
        assert_eq!(g_bytes(&g_base), before);
        assert_eq!(base.hallucinate_calls, 0);
    }

    #[test]
    fn tracking_is_deterministic_and_accounted() {
        let fx = Fixture::new();
        let video = fx.video(8, 2);
        let cfg = config(Ratio::TwoThirds, true);
        let (a, ga) = track_video(&video, &fx.ctx(), &fx.generator, &cfg).unwrap();
        let (b, gb) = track_video(&video, &fx.ctx(), &fx.generator, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(g_bytes(&ga), g_bytes(&gb));
        assert_eq!(a.chosen.len(), 8);
        assert_eq!(a.success.len(), 7);
        assert_eq!(a.init_losses.len(), cfg.init_iterations);
        let iterations = cfg.init_iterations + 7 * cfg.update_iterations;
        assert_eq!(a.hallucinate_calls, iterations * 32);
        let rate = a.success.iter().filter(|&&s| s).count() as f64 / 7.0;
        assert_eq!(a.success_rate, rate);
        for (t, &c) in a.chosen.iter().enumerate().skip(1) {
            assert_eq!(a.success[t - 1], video.frames[t].candidates[c].distance <= video.config.rho_pos);
        }
    }

    #[test]
    fn initialization_lowers_the_classifier_loss_and_beats_chance() {
        let fx = Fixture::new();
        let cfg = TrackConfig {
            init_iterations: 40,
            ..config(Ratio::OneThird, false)
        };
        let mut rates = Vec::new();
        for id in 0..4 {
            let video = fx.video(30, id);
            let (res, _) = track_video(&video, &fx.ctx(), &fx.generator, &cfg).unwrap();
            let l = &res.init_losses;
            let head: f64 = l[..5].iter().sum::<f64>() / 5.0;
            let tail: f64 = l[l.len() - 5..].iter().sum::<f64>() / 5.0;
            assert!(tail < 0.7 * head, "init loss {head} -> {tail}");
            rates.push((res.success_rate, video.chance_rate()));
        }
        let mean = rates.iter().map(|r| r.0).sum::<f64>() / 4.0;
        assert!(mean > 3.0 * rates[0].1, "{rates:?}");
    }

    #[test]
    fn an_oracle_scorer_always_succeeds_and_random_picks_match_chance() {
        let fx = Fixture::new();
        let mut r = rng::stream(3, 3);
        let (mut hits, mut draws, mut chance) = (0usize, 0usize, 0.0);
        for id in 0..5 {
            let video = fx.video(40, id);
            for f in &video.frames[1..] {
                let scores: Vec<f64> = f.candidates.iter().map(|c| -c.distance).collect();
                let best = argmax_first(&scores).unwrap();
                assert!(f.candidates[best].distance <= video.config.rho_pos);
                for _ in 0..20 {
                    let c = &f.candidates[r.random_range(0..f.candidates.len())];
                    hits += usize::from(c.distance <= video.config.rho_pos);
                    draws += 1;
                }
            }
            chance += video.chance_rate() / 5.0;
        }
        let rate = hits as f64 / draws as f64;
        assert!((rate - chance).abs() < 0.02, "{rate} vs {chance}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let fx = Fixture::new();
        let video = fx.video(3, 0);
        let g = HallucinatorModel::new(8, 4, 16, 1).unwrap();
        assert!(matches!(
            track_video(&video, &fx.ctx(), &g, &config(Ratio::One, false)),
            Err(TrackError::Dimension { .. })
        ));
    }
}
