//! Synthetic source domain with exact deformation oracles.
//!
//! Identities live in a latent space as anchors drawn from a Gaussian
//! mixture. Each cluster owns a 2-D deformation plane; a snippet's frames are
//! successive applications of one small deformation of its family to the
//! anchor. Features are `softplus(A·u + b)`, semantic descriptors
//! `tanh(B·u + c)`, both fixed by the seed.

use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::store::{FeatureStore, Record, Space};
use super::DataError;
use crate::numgrad::softplus;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Translation,
    Rotation,
    Scaling,
    Composite,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Translation, Family::Rotation, Family::Scaling, Family::Composite];

    pub fn name(self) -> &'static str {
        match self {
            Family::Translation => "translation",
            Family::Rotation => "rotation",
            Family::Scaling => "scaling",
            Family::Composite => "composite",
        }
    }
}

impl FromStr for Family {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| DataError::UnknownFamily(s.to_string()))
    }
}

/// A latent-space deformation. Planar variants act inside the plane spanned
/// by the orthonormal pair `(e1, e2)` around `pivot`.
#[derive(Clone, Debug, PartialEq)]
pub enum Deformation {
    Translation {
        delta: Vec<f64>,
    },
    Rotation {
        e1: Vec<f64>,
        e2: Vec<f64>,
        pivot: Vec<f64>,
        angle: f64,
    },
    Scaling {
        e1: Vec<f64>,
        e2: Vec<f64>,
        pivot: Vec<f64>,
        log_factor: f64,
    },
    /// Applied left to right.
    Composite(Vec<Deformation>),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Deformation {
    pub fn family(&self) -> Family {
        match self {
            Deformation::Translation { .. } => Family::Translation,
            Deformation::Rotation { .. } => Family::Rotation,
            Deformation::Scaling { .. } => Family::Scaling,
            Deformation::Composite(_) => Family::Composite,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Deformation::Translation { delta } => Some(delta.len()),
            Deformation::Rotation { e1, .. } | Deformation::Scaling { e1, .. } => Some(e1.len()),
            Deformation::Composite(parts) => parts.first().and_then(|p| p.dim()),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Deformation::Translation { delta } => v.iter().zip(delta).map(|(a, d)| a + d).collect(),
            Deformation::Rotation { e1, e2, pivot, angle } => {
                let rel: Vec<f64> = v.iter().zip(pivot).map(|(a, p)| a - p).collect();
                let (p1, p2) = (dot(&rel, e1), dot(&rel, e2));
                let (s, c) = angle.sin_cos();
                let (d1, d2) = (p1 * c - p2 * s - p1, p1 * s + p2 * c - p2);
                v.iter()
                    .enumerate()
                    .map(|(i, a)| a + d1 * e1[i] + d2 * e2[i])
                    .collect()
            }
            Deformation::Scaling {
                e1,
                e2,
                pivot,
                log_factor,
            } => {
                let rel: Vec<f64> = v.iter().zip(pivot).map(|(a, p)| a - p).collect();
                let (p1, p2) = (dot(&rel, e1), dot(&rel, e2));
                let k = log_factor.exp() - 1.0;
                v.iter()
                    .enumerate()
                    .map(|(i, a)| a + k * (p1 * e1[i] + p2 * e2[i]))
                    .collect()
            }
            Deformation::Composite(parts) => parts.iter().fold(v.to_vec(), |acc, p| p.apply(&acc)),
        }
    }

    /// The deformation applied `n` times in succession.
    pub fn repeat(&self, n: u32) -> Deformation {
        let k = n as f64;
        match self {
            Deformation::Translation { delta } => Deformation::Translation {
                delta: delta.iter().map(|d| d * k).collect(),
            },
            Deformation::Rotation { e1, e2, pivot, angle } => Deformation::Rotation {
                e1: e1.clone(),
                e2: e2.clone(),
                pivot: pivot.clone(),
                angle: angle * k,
            },
            Deformation::Scaling {
                e1,
                e2,
                pivot,
                log_factor,
            } => Deformation::Scaling {
                e1: e1.clone(),
                e2: e2.clone(),
                pivot: pivot.clone(),
                log_factor: log_factor * k,
            },
            Deformation::Composite(parts) => {
                Deformation::Composite((0..n).flat_map(|_| parts.iter().cloned()).collect())
            }
        }
    }

    /// Rescales the magnitude of a single-family deformation; zero gives the
    /// identity. Composite deformations scale each part.
    pub fn scaled(&self, t: f64) -> Deformation {
        match self {
            Deformation::Translation { delta } => Deformation::Translation {
                delta: delta.iter().map(|d| d * t).collect(),
            },
            Deformation::Rotation { e1, e2, pivot, angle } => Deformation::Rotation {
                e1: e1.clone(),
                e2: e2.clone(),
                pivot: pivot.clone(),
                angle: angle * t,
            },
            Deformation::Scaling {
                e1,
                e2,
                pivot,
                log_factor,
            } => Deformation::Scaling {
                e1: e1.clone(),
                e2: e2.clone(),
                pivot: pivot.clone(),
                log_factor: log_factor * t,
            },
            Deformation::Composite(parts) => Deformation::Composite(parts.iter().map(|p| p.scaled(t)).collect()),
        }
    }

    pub fn inverse(&self) -> Deformation {
        match self {
            Deformation::Composite(parts) => Deformation::Composite(parts.iter().rev().map(|p| p.inverse()).collect()),
            other => other.scaled(-1.0),
        }
    }
}

/// Fixed dense map `act(W·u + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMap {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: MapActivation,
    /// Multiplies every output.
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapActivation {
    Softplus,
    Tanh,
}

impl LatentMap {
    fn random(in_dim: usize, out_dim: usize, gain: f64, bias_std: f64, activation: MapActivation, rng: &mut Rng) -> Self {
        let scale = gain / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let bias = (0..out_dim).map(|_| bias_std * rng.sample::<f64, _>(StandardNormal)).collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
            scale: 1.0,
        }
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let pre = dot(row, u) + self.bias[o];
                self.scale
                    * match self.activation {
                        MapActivation::Softplus => softplus(pre),
                        MapActivation::Tanh => pre.tanh(),
                    }
            })
            .collect()
    }

    pub fn eval_f32(&self, u: &[f64]) -> Vec<f32> {
        self.eval(u).into_iter().map(|v| v as f32).collect()
    }
}

/// Which families snippets are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FamilyMix {
    Only(Family),
    /// Uniform over all four families per snippet.
    Mixed,
}

impl FromStr for FamilyMix {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mixed" {
            Ok(FamilyMix::Mixed)
        } else {
            Ok(FamilyMix::Only(s.parse()?))
        }
    }
}

impl TryFrom<String> for FamilyMix {
    type Error = DataError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FamilyMix> for String {
    fn from(m: FamilyMix) -> String {
        m.to_string()
    }
}

impl std::fmt::Display for FamilyMix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FamilyMix::Mixed => f.write_str("mixed"),
            FamilyMix::Only(fam) => f.write_str(fam.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub semantic_dim: usize,
    pub identities: usize,
    pub clusters: usize,
    pub frames_per_snippet: usize,
    pub frame_stride: u32,
    pub family: FamilyMix,
    /// Standard deviation of cluster centers per latent coordinate.
    pub cluster_spread: f64,
    /// Standard deviation of identity anchors around their cluster center.
    pub identity_spread: f64,
    /// Per-frame translation length range.
    pub translation_step: (f64, f64),
    /// Per-frame rotation angle range (radians).
    pub rotation_step: (f64, f64),
    /// Per-frame log scale-factor range.
    pub scaling_step: (f64, f64),
    /// Distance from anchor to the pivot of planar rotations and scalings.
    pub pivot_radius: f64,
    /// All clusters deform in one common plane instead of one plane each.
    pub shared_plane: bool,
    /// Deformation directions are drawn at angles in `[0, spread)` from the
    /// plane's first axis; `2π` makes them isotropic.
    pub direction_spread: f64,
    pub feature_gain: f64,
    /// Output multiplier of the feature map.
    pub feature_scale: f64,
    pub semantic_gain: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            feature_dim: 128,
            semantic_dim: 64,
            identities: 200,
            clusters: 8,
            frames_per_snippet: 24,
            frame_stride: 1,
            family: FamilyMix::Mixed,
            cluster_spread: 2.0,
            identity_spread: 0.4,
            translation_step: (0.03, 0.07),
            rotation_step: (0.03, 0.07),
            scaling_step: (0.02, 0.05),
            pivot_radius: 1.0,
            shared_plane: false,
            direction_spread: std::f64::consts::TAU,
            feature_gain: 1.0,
            feature_scale: 1.0,
            semantic_gain: 0.5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.latent_dim < 2 {
            return bad("latent_dim must be at least 2");
        }
        if self.feature_dim < self.latent_dim {
            return bad("feature_dim must be at least latent_dim");
        }
        if self.semantic_dim == 0 || self.identities == 0 || self.clusters == 0 || self.frames_per_snippet == 0 {
            return bad("semantic_dim, identities, clusters and frames_per_snippet must be positive");
        }
        if !(self.feature_scale > 0.0) {
            return bad("feature_scale must be positive");
        }
        if self.frame_stride == 0 {
            return bad("frame_stride must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub center: Vec<f64>,
    /// Orthonormal basis of the cluster's deformation plane.
    pub plane: (Vec<f64>, Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snippet {
    pub identity: u32,
    pub cluster: usize,
    pub anchor: Vec<f64>,
    /// Deformation between consecutive frames.
    pub step: Deformation,
    /// Index of the snippet's first record in the stores.
    pub first_record: usize,
    pub frames: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub clusters: Vec<Cluster>,
    pub snippets: Vec<Snippet>,
    /// Latent state of every record, parallel to the generated stores.
    pub latents: Vec<Vec<f64>>,
    pub feature_map: LatentMap,
    pub semantic_map: LatentMap,
}

fn gaussian(n: usize, std: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Random orthonormal pair by Gram-Schmidt.
fn random_plane(k: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut e1 = gaussian(k, 1.0, rng);
    normalize(&mut e1);
    let mut e2 = gaussian(k, 1.0, rng);
    let p = dot(&e1, &e2);
    e2.iter_mut().zip(&e1).for_each(|(b, a)| *b -= p * a);
    normalize(&mut e2);
    (e1, e2)
}

impl SyntheticWorld {
    /// Feature-space embedding of a latent state.
    pub fn phi(&self, u: &[f64]) -> Vec<f32> {
        self.feature_map.eval_f32(u)
    }

    /// Semantic embedding of a latent state.
    pub fn semantic(&self, u: &[f64]) -> Vec<f32> {
        self.semantic_map.eval_f32(u)
    }

    pub fn cluster_of(&self, identity: u32) -> Option<usize> {
        self.snippets.get(identity as usize).map(|s| s.cluster)
    }

    /// Exact latent deformation carrying record `a` onto record `b` of the
    /// same snippet (`a` earlier than `b`).
    pub fn pair_deformation(&self, a: usize, b: usize) -> Result<Deformation, DataError> {
        let snippet = self
            .snippets
            .iter()
            .find(|s| (s.first_record..s.first_record + s.frames.len()).contains(&a))
            .ok_or(DataError::NotAPair { first: a, second: b })?;
        let range = snippet.first_record..snippet.first_record + snippet.frames.len();
        if !range.contains(&b) || b < a {
            return Err(DataError::NotAPair { first: a, second: b });
        }
        Ok(snippet.step.repeat((b - a) as u32))
    }

    /// Draws a new anchor in `cluster`, independent of the generated identities.
    pub fn sample_anchor(&self, cluster: usize, rng: &mut Rng) -> Vec<f64> {
        let c = &self.clusters[cluster];
        gaussian(self.config.latent_dim, self.config.identity_spread, rng)
            .iter()
            .zip(&c.center)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Draws a per-frame deformation of `family` in the plane of `cluster`.
    pub fn sample_step(&self, cluster: usize, family: Family, anchor: &[f64], rng: &mut Rng) -> Deformation {
        let cfg = &self.config;
        let (e1, e2) = self.clusters[cluster].plane.clone();
        let theta = if cfg.direction_spread > 0.0 {
            rng.random_range(0.0..cfg.direction_spread)
        } else {
            0.0
        };
        let dir: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| theta.cos() * a + theta.sin() * b).collect();
        let pivot: Vec<f64> = anchor.iter().zip(&dir).map(|(a, d)| a - cfg.pivot_radius * d).collect();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let pick = |(lo, hi): (f64, f64), rng: &mut Rng| if hi > lo { rng.random_range(lo..hi) } else { lo };
        match family {
            Family::Translation => {
                let len = pick(cfg.translation_step, rng);
                Deformation::Translation {
                    delta: dir.iter().map(|d| d * len).collect(),
                }
            }
            Family::Rotation => Deformation::Rotation {
                e1,
                e2,
                pivot,
                angle: sign * pick(cfg.rotation_step, rng),
            },
            Family::Scaling => Deformation::Scaling {
                e1,
                e2,
                pivot,
                log_factor: sign * pick(cfg.scaling_step, rng),
            },
            Family::Composite => {
                let parts = [Family::Rotation, Family::Translation, Family::Scaling]
                    .into_iter()
                    .map(|f| self.sample_step(cluster, f, anchor, rng).scaled(0.5))
                    .collect();
                Deformation::Composite(parts)
            }
        }
    }
}

/// `φ(T_θ(v))`: the exact feature of the deformed target.
pub fn oracle_transfer(world: &SyntheticWorld, theta: &Deformation, target: &[f64]) -> Result<Vec<f32>, DataError> {
    let k = world.config.latent_dim;
    if target.len() != k || theta.dim().is_some_and(|d| d != k) {
        return Err(DataError::Dimension {
            what: "oracle latent",
            expected: k,
            found: if target.len() != k { target.len() } else { theta.dim().unwrap() },
        });
    }
    Ok(world.phi(&theta.apply(target)))
}

/// Generates the world and its feature-space and semantic-space stores.
pub fn gen_world(config: &WorldConfig) -> Result<(SyntheticWorld, FeatureStore, FeatureStore), DataError> {
    config.validate()?;
    let k = config.latent_dim;
    let mut maps_rng = rng::stream(config.seed, 100);
    let mut feature_map =
        LatentMap::random(k, config.feature_dim, config.feature_gain, 0.5, MapActivation::Softplus, &mut maps_rng);
    feature_map.scale = config.feature_scale;
    let semantic_map = LatentMap::random(k, config.semantic_dim, config.semantic_gain, 0.2, MapActivation::Tanh, &mut maps_rng);

    let mut cluster_rng = rng::stream(config.seed, 101);
    let mut clusters: Vec<Cluster> = (0..config.clusters)
        .map(|_| Cluster {
            center: gaussian(k, config.cluster_spread, &mut cluster_rng),
            plane: random_plane(k, &mut cluster_rng),
        })
        .collect();
    if config.shared_plane {
        let plane = clusters[0].plane.clone();
        clusters.iter_mut().for_each(|c| c.plane = plane.clone());
    }

    let mut world = SyntheticWorld {
        config: config.clone(),
        clusters,
        snippets: Vec::with_capacity(config.identities),
        latents: Vec::with_capacity(config.identities * config.frames_per_snippet),
        feature_map,
        semantic_map,
    };

    for identity in 0..config.identities {
        let mut r = rng::stream(config.seed, 1_000 + identity as u64);
        let cluster = identity % config.clusters;
        let family = match config.family {
            FamilyMix::Only(f) => f,
            FamilyMix::Mixed => Family::ALL[r.random_range(0..4)],
        };
        let anchor = world.sample_anchor(cluster, &mut r);
        let step = world.sample_step(cluster, family, &anchor, &mut r);
        let first_record = world.latents.len();
        let mut state = anchor.clone();
        let mut frames = Vec::with_capacity(config.frames_per_snippet);
        for j in 0..config.frames_per_snippet {
            if j > 0 {
                state = step.apply(&state);
            }
            frames.push(j as u32 * config.frame_stride);
            world.latents.push(state.clone());
        }
        world.snippets.push(Snippet {
            identity: identity as u32,
            cluster,
            anchor,
            step,
            first_record,
            frames,
        });
    }

    let mut feat = Vec::with_capacity(world.latents.len());
    let mut sem = Vec::with_capacity(world.latents.len());
    for s in &world.snippets {
        for (j, &frame) in s.frames.iter().enumerate() {
            let u = &world.latents[s.first_record + j];
            feat.push(Record {
                identity: s.identity,
                frame,
                values: world.phi(u),
            });
            sem.push(Record {
                identity: s.identity,
                frame,
                values: world.semantic(u),
            });
        }
    }
    let features = FeatureStore::new(Space::Feature, config.feature_dim, feat)?;
    let semantic = FeatureStore::new(Space::Semantic, config.semantic_dim, sem)?;
    Ok((world, features, semantic))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            feature_dim: 32,
            semantic_dim: 16,
            identities: 40,
            frames_per_snippet: 10,
            ..WorldConfig::default()
        }
    }

    fn world() -> SyntheticWorld {
        gen_world(&small()).unwrap().0
    }

    fn max_diff(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn same_seed_same_bytes() {
        let (_, f1, s1) = gen_world(&small()).unwrap();
        let (_, f2, s2) = gen_world(&small()).unwrap();
        assert_eq!(f1.to_bytes(), f2.to_bytes());
        assert_eq!(s1.to_bytes(), s2.to_bytes());
        let (_, f3, _) = gen_world(&WorldConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(f1.to_bytes(), f3.to_bytes());
    }

    #[test]
    fn invalid_dims() {
        assert!(gen_world(&WorldConfig { latent_dim: 1, ..small() }).is_err());
        assert!(gen_world(&WorldConfig { feature_dim: 4, ..small() }).is_err());
    }

    #[test]
    fn unknown_family() {
        assert!(matches!("shear".parse::<Family>(), Err(DataError::UnknownFamily(_))));
        assert_eq!("rotation".parse::<Family>().unwrap(), Family::Rotation);
        assert_eq!("mixed".parse::<FamilyMix>().unwrap(), FamilyMix::Mixed);
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let w = world();
        let mut r = rng::stream(3, 3);
        let v = w.sample_anchor(2, &mut r);
        for fam in Family::ALL {
            let theta = w.sample_step(2, fam, &v, &mut r).scaled(0.0);
            let out = oracle_transfer(&w, &theta, &v).unwrap();
            assert!(max_diff(&out, &w.phi(&v)) < 1e-6, "{fam:?}");
        }
    }

    #[test]
    fn translation_inverse_and_composition() {
        let w = world();
        let mut r = rng::stream(4, 4);
        let v = w.sample_anchor(1, &mut r);
        let t1 = w.sample_step(1, Family::Translation, &v, &mut r);
        let t2 = w.sample_step(1, Family::Translation, &v, &mut r);
        let back = t1.inverse().apply(&t1.apply(&v));
        assert!(max_diff(&w.phi(&back), &w.phi(&v)) < 1e-6);

        let (Deformation::Translation { delta: d1 }, Deformation::Translation { delta: d2 }) = (&t1, &t2) else {
            unreachable!()
        };
        let sum = Deformation::Translation {
            delta: d1.iter().zip(d2).map(|(a, b)| a + b).collect(),
        };
        let chained = t2.apply(&t1.apply(&v));
        let direct = sum.apply(&v);
        assert!(chained.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn full_rotation_is_periodic() {
        let w = world();
        let mut r = rng::stream(5, 5);
        let v = w.sample_anchor(0, &mut r);
        let Deformation::Rotation { e1, e2, pivot, .. } = w.sample_step(0, Family::Rotation, &v, &mut r) else {
            unreachable!()
        };
        let full = Deformation::Rotation {
            e1,
            e2,
            pivot,
            angle: std::f64::consts::TAU,
        };
        let out = oracle_transfer(&w, &full, &v).unwrap();
        assert!(max_diff(&out, &w.phi(&v)) < 1e-6);
    }

    #[test]
    fn pair_deformation_reproduces_later_frame() {
        let w = world();
        for s in w.snippets.iter().take(8) {
            let (a, b) = (s.first_record + 1, s.first_record + 7);
            let theta = w.pair_deformation(a, b).unwrap();
            let moved = theta.apply(&w.latents[a]);
            let err = moved.iter().zip(&w.latents[b]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{:?} err {err}", s.step.family());
        }
        let s = &w.snippets[0];
        assert!(w.pair_deformation(s.first_record, s.first_record + s.frames.len()).is_err());
    }

    #[test]
    fn feature_map_is_injective_on_samples() {
        let w = world();
        let mut r = rng::stream(6, 6);
        let mut min_dist = f64::INFINITY;
        let mut checked = 0;
        while checked < 10_000 {
            let c = r.random_range(0..w.clusters.len());
            let u = w.sample_anchor(c, &mut r);
            let v: Vec<f64> = u.iter().map(|x| x + 0.05 * r.sample::<f64, _>(StandardNormal)).collect();
            let latent_dist = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if latent_dist <= 1e-2 {
                continue;
            }
            let (fu, fv) = (w.feature_map.eval(&u), w.feature_map.eval(&v));
            let d = fu.iter().zip(&fv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            min_dist = min_dist.min(d);
            checked += 1;
        }
        assert!(min_dist > 0.0);
    }

    #[test]
    fn semantic_space_reflects_clusters() {
        let (w, _, sem) = gen_world(&small()).unwrap();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for (i, a) in sem.records.iter().enumerate().step_by(3) {
            for b in sem.records.iter().skip(i + 1).step_by(5) {
                let d = a.values.iter().zip(&b.values).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
                if w.cluster_of(a.identity) == w.cluster_of(b.identity) {
                    within += d;
                    nw += 1;
                } else {
                    across += d;
                    na += 1;
                }
            }
        }
        assert!(within / nw as f64 > 0.0);
        assert!(within / (nw as f64) < across / (na as f64));
    }

    #[test]
    fn frames_follow_deformation_order() {
        let (w, f, _) = gen_world(&small()).unwrap();
        for s in &w.snippets {
            assert!(s.frames.windows(2).all(|p| p[0] < p[1]));
            let rec = &f.records[s.first_record];
            assert_eq!(rec.identity, s.identity);
        }
    }
}
