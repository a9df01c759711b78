//! Synthetic videos.
//!
//! Every object has an appearance state in the world's latent space and a
//! 2-D image position. The target's appearance jitters inside its cluster's
//! deformation plane and occasionally jumps to a new in-plane pose offset from
//! its first-frame appearance; distractors are same-cluster objects whose
//! appearance is offset from the target's start outside that plane. A crop at
//! image position `p` sees the nearest object with overlap
//! `o = max(0, 1 − ‖p − pos‖ / object_size)` and has feature
//! `o·φ(object) + (1 − o)·φ(background)`. A crop's distance to the truth is
//! its image distance to the target; positions are target-centered.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TrackError;
use crate::dataio::SyntheticWorld;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub frames: usize,
    pub candidates: usize,
    /// Aligned target crops per frame, all within `rho_pos`.
    pub positives: usize,
    pub distractors: usize,
    /// Aligned crops per distractor per frame.
    pub distractor_views: usize,
    pub rho_pos: f64,
    pub rho_neg: f64,
    /// Misaligned target crops lie between `rho_neg` and `jitter_max`.
    pub jitter_max: f64,
    pub object_size: f64,
    /// Image distance range of distractors from the target.
    pub distractor_distance: (f64, f64),
    /// Largest per-frame in-plane appearance jitter of every object.
    pub drift: f64,
    /// Per-frame probability that the target jumps to a new pose.
    pub jump_prob: f64,
    /// Range of in-plane pose offsets from the first-frame appearance; also
    /// the range of the distractors' in-plane swing.
    pub jump: (f64, f64),
    /// Pose directions are drawn at angles in `[0, spread)` from the plane's
    /// first axis; `2π` makes them isotropic.
    pub motion_spread: f64,
    /// Appearance offset of distractors from the target start, outside the
    /// target's deformation plane.
    pub distractor_offset: (f64, f64),
    /// Standard deviation of background latents around the origin.
    pub background_spread: f64,
    /// Training samples drawn around an estimate: positives, negatives.
    pub pool: (usize, usize),
    /// Pool sizes for the first frame.
    pub init_pool: (usize, usize),
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            frames: 100,
            candidates: 64,
            positives: 8,
            distractors: 4,
            distractor_views: 4,
            rho_pos: 0.1,
            rho_neg: 0.3,
            jitter_max: 0.8,
            object_size: 1.0,
            distractor_distance: (2.5, 4.0),
            drift: 0.02,
            jump_prob: 0.08,
            jump: (0.4, 0.8),
            motion_spread: std::f64::consts::TAU,
            distractor_offset: (0.4, 0.7),
            background_spread: 2.0,
            pool: (50, 150),
            init_pool: (200, 600),
        }
    }
}

impl VideoConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |m: &str| Err(TrackError::InvalidConfig(m.to_string()));
        if self.frames < 2 {
            return bad("videos need at least two frames");
        }
        if self.positives == 0 || self.positives + self.distractors * self.distractor_views > self.candidates {
            return bad("candidates must hold at least one aligned crop plus all distractor crops");
        }
        if !(0.0 < self.rho_pos && self.rho_pos < self.rho_neg && self.rho_neg < self.jitter_max) {
            return bad("need 0 < rho_pos < rho_neg < jitter_max");
        }
        if !(self.object_size > 0.0) || self.distractor_distance.0 < self.rho_neg + self.rho_pos {
            return bad("distractors must sit beyond rho_neg + rho_pos from the target");
        }
        if self.distractor_distance.0 > self.distractor_distance.1 {
            return bad("invalid distractor distance range");
        }
        if !(0.0..=1.0).contains(&self.jump_prob) || self.jump.0 > self.jump.1 || self.drift < 0.0 || self.motion_spread < 0.0 {
            return bad("invalid motion parameters");
        }
        if self.distractor_offset.0 > self.distractor_offset.1 || self.distractor_offset.0 < 0.0 {
            return bad("invalid distractor offset range");
        }
        if self.pool.0 == 0 || self.pool.1 == 0 || self.init_pool.0 == 0 || self.init_pool.1 == 0 {
            return bad("sample pools must be non-empty");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub feature: Vec<f32>,
    pub position: [f64; 2],
    /// Image distance to the target.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimFrame {
    /// Target appearance.
    pub state: Vec<f64>,
    /// Distractor appearances.
    pub distractors: Vec<Vec<f64>>,
    pub candidates: Vec<Candidate>,
}

/// One labeled training sample with its image distance to the estimate it
/// was drawn around.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub feature: Vec<f32>,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplePool {
    pub positives: Vec<LabeledSample>,
    pub negatives: Vec<LabeledSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimVideo {
    pub id: u32,
    pub cluster: usize,
    /// Feature of the aligned first-frame target.
    pub exemplar: Vec<f32>,
    /// Semantic descriptor of the first-frame target.
    pub exemplar_semantic: Vec<f32>,
    /// Distractor image positions, fixed relative to the target.
    pub distractor_positions: Vec<[f64; 2]>,
    pub frames: Vec<SimFrame>,
    pub config: VideoConfig,
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn norm2(p: [f64; 2]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Point at `radius` from `center` in a uniform direction.
fn around(center: [f64; 2], radius: f64, r: &mut Rng) -> [f64; 2] {
    let a = r.random_range(0.0..std::f64::consts::TAU);
    [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
}

/// Unit vector orthogonal to the orthonormal plane `(e1, e2)`.
fn off_plane_direction(plane: &(Vec<f64>, Vec<f64>), rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..plane.0.len()).map(|_| rng.sample(StandardNormal)).collect();
        for e in [&plane.0, &plane.1] {
            let p: f64 = g.iter().zip(e).map(|(a, b)| a * b).sum();
            g.iter_mut().zip(e).for_each(|(a, b)| *a -= p * b);
        }
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            return g.into_iter().map(|v| v / n).collect();
        }
    }
}

fn in_plane(plane: &(Vec<f64>, Vec<f64>), angle: f64, length: f64) -> Vec<f64> {
    plane
        .0
        .iter()
        .zip(&plane.1)
        .map(|(a, b)| length * (angle.cos() * a + angle.sin() * b))
        .collect()
}

fn pick(range: (f64, f64), rng: &mut Rng) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

impl SimVideo {
    /// Generates video `id` of `seed` in `world`. The target and distractors
    /// are fresh anchors of one cluster, never identities of the world.
    pub fn generate(world: &SyntheticWorld, config: &VideoConfig, seed: u64, id: u32) -> Result<Self, TrackError> {
        config.validate()?;
        if world.config.latent_dim < 3 {
            return Err(TrackError::InvalidConfig(
                "videos need a latent dimension of at least 3".into(),
            ));
        }
        let tau = std::f64::consts::TAU;
        let mut r = rng::stream(seed, 10_000 + u64::from(id));
        let cluster = r.random_range(0..world.clusters.len());
        let plane = world.clusters[cluster].plane.clone();
        let anchor = world.sample_anchor(cluster, &mut r);
        let base_distractors: Vec<Vec<f64>> = (0..config.distractors)
            .map(|_| {
                let dir = off_plane_direction(&plane, &mut r);
                let len = pick(config.distractor_offset, &mut r);
                let swing = in_plane(&plane, r.random_range(0.0..tau), pick(config.jump, &mut r));
                let off: Vec<f64> = dir.iter().zip(&swing).map(|(d, s)| d * len + s).collect();
                add(&anchor, &off)
            })
            .collect();
        let distractor_positions: Vec<[f64; 2]> = (0..config.distractors)
            .map(|_| around([0.0, 0.0], pick(config.distractor_distance, &mut r), &mut r))
            .collect();
        let spread = config.motion_spread;
        let direction = |r: &mut Rng| if spread > 0.0 { r.random_range(0.0..spread) } else { 0.0 };

        let mut video = Self {
            id,
            cluster,
            exemplar: world.phi(&anchor),
            exemplar_semantic: world.semantic(&anchor),
            distractor_positions,
            frames: Vec::with_capacity(config.frames),
            config: config.clone(),
        };
        let mut pose = vec![0.0; anchor.len()];
        for t in 0..config.frames {
            let jitter = |r: &mut Rng| {
                if t == 0 || config.drift == 0.0 {
                    vec![0.0; anchor.len()]
                } else {
                    in_plane(&plane, r.random_range(0.0..tau), config.drift * r.random::<f64>())
                }
            };
            if t > 0 && r.random_bool(config.jump_prob) {
                pose = in_plane(&plane, direction(&mut r), pick(config.jump, &mut r));
            }
            let target = add(&add(&anchor, &pose), &jitter(&mut r));
            let distractors: Vec<Vec<f64>> = base_distractors.iter().map(|d| add(d, &jitter(&mut r))).collect();
            video.frames.push(SimFrame {
                state: target,
                distractors,
                candidates: Vec::new(),
            });
            let candidates = video.candidates(world, t, &mut r);
            video.frames[t].candidates = candidates;
        }
        Ok(video)
    }

    /// Object positions of a frame: the target first, then the distractors.
    fn objects(&self, frame: usize) -> impl Iterator<Item = ([f64; 2], &Vec<f64>)> {
        let f = &self.frames[frame];
        std::iter::once(([0.0, 0.0], &f.state)).chain(self.distractor_positions.iter().copied().zip(&f.distractors))
    }

    /// Feature of a crop at image position `p` in `frame`.
    pub fn crop(&self, world: &SyntheticWorld, frame: usize, p: [f64; 2], r: &mut Rng) -> Vec<f32> {
        let (d, appearance) = self
            .objects(frame)
            .map(|(pos, u)| (norm2(sub2(p, pos)), u))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("the target is always present");
        let overlap = (1.0 - d / self.config.object_size).max(0.0);
        let background: Vec<f64> = (0..world.config.latent_dim)
            .map(|_| self.config.background_spread * r.sample::<f64, _>(StandardNormal))
            .collect();
        let obj = world.feature_map.eval(appearance);
        let bg = world.feature_map.eval(&background);
        obj.iter()
            .zip(&bg)
            .map(|(o, b)| (overlap * o + (1.0 - overlap) * b) as f32)
            .collect()
    }

    fn candidates(&self, world: &SyntheticWorld, frame: usize, r: &mut Rng) -> Vec<Candidate> {
        let cfg = &self.config;
        let mut positions = Vec::with_capacity(cfg.candidates);
        for _ in 0..cfg.positives {
            positions.push(around([0.0, 0.0], cfg.rho_pos * r.random::<f64>(), r));
        }
        for &d in &self.distractor_positions {
            for _ in 0..cfg.distractor_views {
                positions.push(around(d, cfg.rho_pos * r.random::<f64>(), r));
            }
        }
        while positions.len() < cfg.candidates {
            // Misaligned crops stay out of the unlabeled gap.
            let radius = cfg.jitter_max - (cfg.jitter_max - cfg.rho_neg) * r.random::<f64>();
            positions.push(around([0.0, 0.0], radius, r));
        }
        positions.shuffle(r);
        positions
            .into_iter()
            .map(|p| Candidate {
                feature: self.crop(world, frame, p, r),
                distance: norm2(p),
                position: p,
            })
            .collect()
    }

    /// Labeled samples around the image position `estimate` in `frame`:
    /// crops within `rho_pos` as positives; crops at least `rho_neg` away,
    /// around the estimate or on other objects, as negatives. Nothing from
    /// the gap is returned.
    pub fn training_pool(
        &self,
        world: &SyntheticWorld,
        frame: usize,
        estimate: [f64; 2],
        sizes: (usize, usize),
        r: &mut Rng,
    ) -> SamplePool {
        let cfg = &self.config;
        let mut pool = SamplePool::default();
        for _ in 0..sizes.0 {
            let p = around(estimate, cfg.rho_pos * r.random::<f64>(), r);
            pool.positives.push(LabeledSample {
                feature: self.crop(world, frame, p, r),
                distance: norm2(sub2(p, estimate)),
            });
        }
        let others: Vec<[f64; 2]> = self
            .objects(frame)
            .map(|(pos, _)| pos)
            .filter(|&pos| norm2(sub2(pos, estimate)) >= cfg.rho_neg + cfg.rho_pos)
            .collect();
        let object_share = sizes.1 / 4;
        for i in 0..sizes.1 {
            let p = if i < object_share && !others.is_empty() {
                around(others[i % others.len()], cfg.rho_pos * r.random::<f64>(), r)
            } else {
                let radius = cfg.jitter_max - (cfg.jitter_max - cfg.rho_neg) * r.random::<f64>();
                around(estimate, radius, r)
            };
            pool.negatives.push(LabeledSample {
                feature: self.crop(world, frame, p, r),
                distance: norm2(sub2(p, estimate)),
            });
        }
        pool
    }

    /// Positives per frame divided by candidates per frame, averaged over the
    /// scored frames.
    pub fn chance_rate(&self) -> f64 {
        let scored = &self.frames[1..];
        scored
            .iter()
            .map(|f| {
                let pos = f.candidates.iter().filter(|c| c.distance <= self.config.rho_pos).count();
                pos as f64 / f.candidates.len() as f64
            })
            .sum::<f64>()
            / scored.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_world, Family, FamilyMix, WorldConfig};

    pub(crate) fn small_world() -> SyntheticWorld {
        gen_world(&WorldConfig {
            feature_dim: 16,
            semantic_dim: 8,
            identities: 24,
            family: FamilyMix::Only(Family::Translation),
            seed: 5,
            ..WorldConfig::default()
        })
        .unwrap()
        .0
    }

    fn short() -> VideoConfig {
        VideoConfig {
            frames: 12,
            ..VideoConfig::default()
        }
    }

    #[test]
    fn candidate_layout_leaves_the_gap_empty() {
        let w = small_world();
        let cfg = short();
        let v = SimVideo::generate(&w, &cfg, 1, 3).unwrap();
        assert_eq!(v.frames.len(), cfg.frames);
        for f in &v.frames {
            assert_eq!(f.candidates.len(), cfg.candidates);
            let pos = f.candidates.iter().filter(|c| c.distance <= cfg.rho_pos).count();
            assert_eq!(pos, cfg.positives);
            for c in &f.candidates {
                assert!((c.distance - norm2(c.position)).abs() < 1e-12);
                assert!(!(c.distance > cfg.rho_pos && c.distance < cfg.rho_neg), "gap candidate at {}", c.distance);
                assert_eq!(c.feature.len(), 16);
            }
        }
    }

    #[test]
    fn chance_rate_is_aligned_share() {
        let w = small_world();
        let cfg = short();
        let v = SimVideo::generate(&w, &cfg, 2, 0).unwrap();
        assert!((v.chance_rate() - cfg.positives as f64 / cfg.candidates as f64).abs() < 1e-12);
    }

    #[test]
    fn pool_labels_respect_radii() {
        let w = small_world();
        let cfg = short();
        let v = SimVideo::generate(&w, &cfg, 4, 1).unwrap();
        let mut r = rng::stream(0, 0);
        for estimate in [[0.0, 0.0], [0.5, -0.2], v.distractor_positions[0]] {
            let pool = v.training_pool(&w, 3, estimate, (40, 120), &mut r);
            assert_eq!((pool.positives.len(), pool.negatives.len()), (40, 120));
            assert!(pool.positives.iter().all(|s| s.distance <= cfg.rho_pos));
            assert!(pool.negatives.iter().all(|s| s.distance >= cfg.rho_neg - 1e-12));
        }
    }

    #[test]
    fn aligned_crop_is_the_object_feature() {
        let w = small_world();
        let v = SimVideo::generate(&w, &short(), 0, 0).unwrap();
        let mut r = rng::stream(1, 1);
        assert_eq!(v.crop(&w, 0, [0.0, 0.0], &mut r), v.exemplar);
        let t = 5;
        assert_eq!(v.crop(&w, t, [0.0, 0.0], &mut r), w.phi(&v.frames[t].state));
        let d = v.distractor_positions[1];
        assert_eq!(v.crop(&w, t, d, &mut r), w.phi(&v.frames[t].distractors[1]));
    }

    #[test]
    fn far_crops_are_pure_background() {
        let w = small_world();
        let v = SimVideo::generate(&w, &short(), 0, 0).unwrap();
        let p = [100.0, 100.0];
        let a = v.crop(&w, 2, p, &mut rng::stream(9, 0));
        let mut r = rng::stream(9, 0);
        let bg: Vec<f64> = (0..w.config.latent_dim)
            .map(|_| v.config.background_spread * r.sample::<f64, _>(StandardNormal))
            .collect();
        assert_eq!(a, w.phi(&bg));
    }

    #[test]
    fn first_frame_pose_is_the_anchor_and_jitter_stays_small() {
        let w = small_world();
        let cfg = VideoConfig {
            jump_prob: 0.0,
            ..short()
        };
        let v = SimVideo::generate(&w, &cfg, 7, 2).unwrap();
        let anchor = &v.frames[0].state;
        assert_eq!(w.phi(anchor), v.exemplar);
        for f in &v.frames[1..] {
            let d = f.state.iter().zip(anchor).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d <= cfg.drift + 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed_and_id() {
        let w = small_world();
        let a = SimVideo::generate(&w, &short(), 3, 4).unwrap();
        assert_eq!(a, SimVideo::generate(&w, &short(), 3, 4).unwrap());
        assert_ne!(a, SimVideo::generate(&w, &short(), 3, 5).unwrap());
        assert_ne!(a, SimVideo::generate(&w, &short(), 4, 4).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let w = small_world();
        let bad = [
            VideoConfig { frames: 1, ..short() },
            VideoConfig { rho_pos: 0.4, ..short() },
            VideoConfig { candidates: 10, ..short() },
            VideoConfig { distractor_distance: (0.2, 4.0), ..short() },
            VideoConfig { jump_prob: 1.5, ..short() },
            VideoConfig { pool: (0, 10), ..short() },
        ];
        for cfg in bad {
            assert!(matches!(SimVideo::generate(&w, &cfg, 0, 0), Err(TrackError::InvalidConfig(_))));
        }
    }
}
