//! Variant grid over seeded synthetic video suites.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::online::{track_video, PairSource, Ratio, TrackConfig, TrackContext};
use super::sim::{SimVideo, VideoConfig};
use serde::{Deserialize, Serialize};

use super::TrackError;
use crate::dataio::{build_dt, gen_world, Family, FamilyMix, FeatureStore, PairRef, SyntheticWorld, WorldConfig};
use crate::hallucinator::{train_offline, QuadrupletSampler, TrainConfig};
use crate::nets::{DiscriminatorModel, HallucinatorModel};
use crate::rng;
use crate::sdt::{assemble_ds, SnippetIndex};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub name: String,
    pub ratio: Ratio,
    pub sdt: bool,
    pub update_ah: bool,
}

impl Variant {
    pub fn new(ratio: Ratio, sdt: bool, update_ah: bool) -> Self {
        let name = if ratio == Ratio::OneThird {
            format!("base_{}", ratio.tag())
        } else {
            format!(
                "hat_{}_{}_{}",
                ratio.tag(),
                if sdt { "sdt" } else { "nosdt" },
                if update_ah { "up" } else { "noup" }
            )
        };
        Self {
            name,
            ratio,
            sdt,
            update_ah,
        }
    }

    /// The baseline plus every hallucinating ratio crossed with SDT and
    /// online-update flags.
    pub fn grid() -> Vec<Variant> {
        let mut v = vec![Variant::new(Ratio::OneThird, false, false)];
        for ratio in [Ratio::TwoThirds, Ratio::One] {
            for sdt in [true, false] {
                for up in [true, false] {
                    v.push(Variant::new(ratio, sdt, up));
                }
            }
        }
        v
    }
}

impl FromStr for Variant {
    type Err = TrackError;

    /// Parses `base_r13` or `hat_<r23|r11>_<sdt|nosdt>_<up|noup>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TrackError::InvalidConfig(format!("unknown variant {s:?}"));
        let parts: Vec<&str> = s.trim().split('_').collect();
        match parts.as_slice() {
            ["base", r] if r.parse::<Ratio>()? == Ratio::OneThird => Ok(Variant::new(Ratio::OneThird, false, false)),
            ["hat", r, sdt, up] => {
                let ratio: Ratio = r.parse()?;
                if ratio == Ratio::OneThird {
                    return Err(bad());
                }
                let sdt = match *sdt {
                    "sdt" => true,
                    "nosdt" => false,
                    _ => return Err(bad()),
                };
                let up = match *up {
                    "up" => true,
                    "noup" => false,
                    _ => return Err(bad()),
                };
                Ok(Variant::new(ratio, sdt, up))
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Variant {
    type Error = TrackError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub world: WorldConfig,
    pub offline: TrainConfig,
    /// Pairing window for 𝔻_T, 𝔻_S and offline quadruplets.
    pub window: u32,
    pub video: VideoConfig,
    /// Shared online settings; ratio, SDT, update flag and seed come from the
    /// variant and cell.
    pub track: TrackConfig,
    pub seeds: Vec<u64>,
    pub videos: usize,
    pub variants: Vec<Variant>,
}

impl Default for SuiteConfig {
    /// The reference suite: translation world with one deformation axis per
    /// cluster, compact offline models, 5 seeds × 20 videos, full grid.
    fn default() -> Self {
        let window = 4;
        Self {
            world: WorldConfig {
                feature_dim: 32,
                family: FamilyMix::Only(Family::Translation),
                feature_scale: 4.0,
                translation_step: (0.2, 0.2),
                direction_spread: 0.0,
                ..WorldConfig::default()
            },
            offline: TrainConfig {
                iterations: 5000,
                hidden: 128,
                disc_hidden: Some(64),
                code_dim: 16,
                lr_d: Some(1e-3),
                ..TrainConfig::default()
            },
            window,
            video: VideoConfig {
                jump: (0.2, 0.8),
                motion_spread: 0.0,
                distractor_offset: (0.3, 0.5),
                ..VideoConfig::default()
            },
            track: TrackConfig {
                classifier_widths: (32, 32),
                classifier_lr: 3e-3,
                top: 25,
                window,
                lambda_def: 20.0,
                ..TrackConfig::default()
            },
            seeds: (0..5).collect(),
            videos: 20,
            variants: Variant::grid(),
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        self.world.validate()?;
        self.offline.validate()?;
        self.video.validate()?;
        self.track.validate()?;
        if self.seeds.is_empty() || self.videos == 0 || self.variants.is_empty() {
            return Err(TrackError::InvalidConfig("need at least one seed, video and variant".into()));
        }
        Ok(())
    }
}

/// World, offline models and retrieval structures shared by every cell.
pub struct Suite {
    pub world: SyntheticWorld,
    pub features: FeatureStore,
    pub semantic: FeatureStore,
    pub feature_rows: Vec<Vec<f32>>,
    pub generator: HallucinatorModel,
    pub discriminator: DiscriminatorModel,
    pub index: SnippetIndex,
    /// 𝔻_T: every window-valid same-identity pair.
    pub all_pairs: Vec<PairRef>,
}

/// Generates the world, trains the hallucinator offline once and builds the
/// snippet index.
pub fn prepare_suite(config: &SuiteConfig) -> Result<Suite, TrackError> {
    config.validate()?;
    let (world, features, semantic) = gen_world(&config.world)?;
    let sampler = QuadrupletSampler::from_store(&features, config.window)?;
    let trained = train_offline(&sampler, &config.offline)?;
    let index = SnippetIndex::from_store(&semantic)?;
    let all_pairs = build_dt(&features.records, config.window);
    let feature_rows = features.records.iter().map(|r| r.values.clone()).collect();
    Ok(Suite {
        world,
        features,
        semantic,
        feature_rows,
        generator: trained.generator,
        discriminator: trained.discriminator,
        index,
        all_pairs,
    })
}

impl Suite {
    /// 𝔻_S for `video`: pairs of the top-`top` snippets nearest to the
    /// exemplar's semantic descriptor.
    pub fn selected_pairs(&self, video: &SimVideo, track: &TrackConfig, seed: u64) -> Result<Vec<PairRef>, TrackError> {
        let top = track.top.min(self.index.len());
        let ranked = self.index.rank(&video.exemplar_semantic, top)?;
        let ids: Vec<u32> = ranked.iter().map(|r| r.id).collect();
        let pairs = assemble_ds(
            &self.features.records,
            &ids,
            track.window,
            track.pair_budget,
            rng::derive(seed, u64::from(video.id)),
        )?;
        if pairs.is_empty() {
            return Err(TrackError::EmptyPairs);
        }
        Ok(pairs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub ratio: Ratio,
    pub sdt: bool,
    pub update_ah: bool,
    pub seed: u64,
    pub video_id: u32,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub ratio: Ratio,
    pub sdt: bool,
    pub update_ah: bool,
    /// Mean over seeds of the per-seed mean success rate.
    pub mean: f64,
    /// Sample standard deviation of the per-seed means.
    pub std: f64,
    pub seeds: usize,
    pub videos: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

impl AblationTable {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("variant,r,sdt,update_ah,seed,video_id,success_rate\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6}",
                r.variant,
                r.ratio,
                flag(r.sdt),
                flag(r.update_ah),
                r.seed,
                r.video_id,
                r.success_rate
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,r,sdt,update_ah,mean,std,seeds,videos\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{},{}",
                s.variant,
                s.ratio,
                flag(s.sdt),
                flag(s.update_ah),
                s.mean,
                s.std,
                s.seeds,
                s.videos
            );
        }
        out
    }

    pub fn get(&self, variant: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }
}

fn summarize(rows: &[AblationRow], variants: &[Variant], seeds: &[u64]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|v| {
            let per_seed: Vec<f64> = seeds
                .iter()
                .map(|&s| {
                    let rates: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.variant == v.name && r.seed == s)
                        .map(|r| r.success_rate)
                        .collect();
                    rates.iter().sum::<f64>() / rates.len().max(1) as f64
                })
                .collect();
            let n = per_seed.len() as f64;
            let mean = per_seed.iter().sum::<f64>() / n;
            let std = if per_seed.len() > 1 {
                (per_seed.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            VariantSummary {
                variant: v.name.clone(),
                ratio: v.ratio,
                sdt: v.sdt,
                update_ah: v.update_ah,
                mean,
                std,
                seeds: seeds.len(),
                videos: rows.iter().filter(|r| r.variant == v.name).count(),
            }
        })
        .collect()
}

/// Tracks every (seed, video) cell under every variant. Cells run on all
/// available cores; rows are ordered by seed, video, then variant.
pub fn run_ablation(suite: &Suite, config: &SuiteConfig) -> Result<AblationTable, TrackError> {
    config.validate()?;
    let cells: Vec<(u64, u32)> = config
        .seeds
        .iter()
        .flat_map(|&s| (0..config.videos as u32).map(move |v| (s, v)))
        .collect();
    let run_cell = |&(seed, vid): &(u64, u32)| -> Result<Vec<AblationRow>, TrackError> {
        let video = SimVideo::generate(&suite.world, &config.video, seed, vid)?;
        let needs_sdt = config.variants.iter().any(|v| v.sdt && v.ratio != Ratio::OneThird);
        let selected = if needs_sdt {
            suite.selected_pairs(&video, &config.track, seed)?
        } else {
            Vec::new()
        };
        config
            .variants
            .iter()
            .map(|v| {
                let track = TrackConfig {
                    ratio: v.ratio,
                    sdt: v.sdt,
                    update_ah: v.update_ah,
                    seed,
                    ..config.track.clone()
                };
                let pairs = if v.sdt { &selected } else { &suite.all_pairs };
                let ctx = TrackContext {
                    world: &suite.world,
                    discriminator: &suite.discriminator,
                    pairs: PairSource {
                        features: &suite.feature_rows,
                        pairs,
                    },
                };
                let (result, _) = track_video(&video, &ctx, &suite.generator, &track)?;
                Ok(AblationRow {
                    variant: v.name.clone(),
                    ratio: v.ratio,
                    sdt: v.sdt,
                    update_ah: v.update_ah,
                    seed,
                    video_id: vid,
                    success_rate: result.success_rate,
                })
            })
            .collect()
    };

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len());
    let results: Vec<Result<Vec<AblationRow>, TrackError>> = if workers <= 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Vec<AblationRow>, TrackError>>>> =
            Mutex::new((0..cells.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= cells.len() {
                        break;
                    }
                    let out = run_cell(&cells[i]);
                    slots.lock().expect("no panics while holding the lock")[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|o| o.expect("every cell ran"))
            .collect()
    };
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let summary = summarize(&rows, &config.variants, &config.seeds);
    Ok(AblationTable { rows, summary })
}
