//! Replay loading, validation, synthesis, and subsetting.
//!
//! The on-disk replay format is UTF-8 JSON Lines: line 1 is a header object
//! with the match-up and match-level metadata, and each following line is
//! one step object carrying normalized global features, the 13x64x64
//! spatial planes, and the ground-truth next actions.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{MatchUp, RaceCatalogs};
use crate::error::{Error, Result};

pub const SPATIAL_PLANES: usize = 13;
pub const SPATIAL_SIZE: usize = 64;

/// Normalized per-step scalar features, all in [0, 1].
///
/// `progress` is the fraction of the match elapsed; the remaining twelve
/// fields mirror the rows of the compiled prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalFeatures {
    pub progress: f64,
    pub army_count: f64,
    pub minerals_collected: f64,
    pub minerals_used: f64,
    pub vespene_collected: f64,
    pub vespene_used: f64,
    pub food_used: f64,
    pub food_cap: f64,
    pub food_army: f64,
    pub food_workers: f64,
    pub idle_workers: f64,
    pub warp_gates: f64,
    pub larva: f64,
}

impl GlobalFeatures {
    /// Field name / value pairs in prompt order, excluding `progress`.
    pub fn named_values(&self) -> [(&'static str, f64); 12] {
        [
            ("army_count", self.army_count),
            ("minerals_collected", self.minerals_collected),
            ("minerals_used", self.minerals_used),
            ("vespene_collected", self.vespene_collected),
            ("vespene_used", self.vespene_used),
            ("food_used", self.food_used),
            ("food_cap", self.food_cap),
            ("food_army", self.food_army),
            ("food_workers", self.food_workers),
            ("idle_workers", self.idle_workers),
            ("warp_gates", self.warp_gates),
            ("larva", self.larva),
        ]
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in std::iter::once(("progress", self.progress))
            .chain(self.named_values())
        {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvariantViolation(format!(
                    "global feature {name} = {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// The 13 spatial planes of one step, each 64x64.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeatures {
    planes: Array3<f32>,
}

impl SpatialFeatures {
    pub fn new(planes: Array3<f32>) -> Result<Self> {
        let shape = planes.shape();
        if shape != [SPATIAL_PLANES, SPATIAL_SIZE, SPATIAL_SIZE] {
            return Err(Error::ShapeMismatch {
                expected: format!("{SPATIAL_PLANES}x{SPATIAL_SIZE}x{SPATIAL_SIZE}"),
                got: format!("{}x{}x{}", shape[0], shape[1], shape[2]),
            });
        }
        if planes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(
                "non-finite value in spatial planes".into(),
            ));
        }
        Ok(Self { planes })
    }

    pub fn zeros() -> Self {
        Self {
            planes: Array3::zeros((SPATIAL_PLANES, SPATIAL_SIZE, SPATIAL_SIZE)),
        }
    }

    pub fn plane(&self, index: usize) -> Result<ArrayView2<'_, f32>> {
        if index >= SPATIAL_PLANES {
            return Err(Error::OutOfRange {
                value: index as f64,
                lo: 0.0,
                hi: (SPATIAL_PLANES - 1) as f64,
            });
        }
        Ok(self.planes.index_axis(ndarray::Axis(0), index))
    }

    pub fn plane_mut(&mut self, index: usize) -> ndarray::ArrayViewMut2<'_, f32> {
        self.planes.index_axis_mut(ndarray::Axis(0), index)
    }

    fn to_nested(&self) -> Vec<Vec<Vec<f32>>> {
        (0..SPATIAL_PLANES)
            .map(|p| {
                (0..SPATIAL_SIZE)
                    .map(|r| self.planes.slice(ndarray::s![p, r, ..]).to_vec())
                    .collect()
            })
            .collect()
    }

    fn from_nested(nested: Vec<Vec<Vec<f32>>>) -> Result<Self> {
        if nested.len() != SPATIAL_PLANES {
            return Err(Error::ShapeMismatch {
                expected: format!("{SPATIAL_PLANES} planes"),
                got: format!("{} planes", nested.len()),
            });
        }
        let mut planes = Array3::zeros((SPATIAL_PLANES, SPATIAL_SIZE, SPATIAL_SIZE));
        for (p, rows) in nested.iter().enumerate() {
            if rows.len() != SPATIAL_SIZE {
                return Err(Error::ShapeMismatch {
                    expected: format!("{SPATIAL_SIZE} rows"),
                    got: format!("{} rows in plane {p}", rows.len()),
                });
            }
            for (r, row) in rows.iter().enumerate() {
                if row.len() != SPATIAL_SIZE {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{SPATIAL_SIZE} columns"),
                        got: format!("{} columns in plane {p} row {r}", row.len()),
                    });
                }
                for (c, &v) in row.iter().enumerate() {
                    planes[[p, r, c]] = v;
                }
            }
        }
        Self::new(planes)
    }
}

/// One observed step of a replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStep {
    pub global: GlobalFeatures,
    pub spatial: SpatialFeatures,
    pub next_actions: Vec<u32>,
}

/// One full match in the canonical replay schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub matchup: MatchUp,
    pub steps: Vec<ReplayStep>,
    /// 1 = win, 0 = loss, from the player's perspective.
    pub outcome: u8,
    pub frame_count: u64,
    pub player_apm: u32,
    pub opponent_apm: u32,
    pub player_mmr: u32,
    pub opponent_mmr: u32,
}

impl Replay {
    /// Enforce every structural invariant.
    pub fn validate_invariants(&self, catalogs: &RaceCatalogs) -> Result<()> {
        if self.outcome > 1 {
            return Err(Error::InvariantViolation(format!(
                "outcome {} not in {{0, 1}}",
                self.outcome
            )));
        }
        if self.steps.is_empty() {
            return Err(Error::InvariantViolation("replay has no steps".into()));
        }
        let catalog = catalogs.for_race(self.matchup.player);
        let mut prev_progress = 0.0f64;
        for (i, step) in self.steps.iter().enumerate() {
            step.global.validate()?;
            if step.global.progress < prev_progress {
                return Err(Error::InvariantViolation(format!(
                    "progress decreases at step {i}: {} -> {}",
                    prev_progress, step.global.progress
                )));
            }
            prev_progress = step.global.progress;
            for &id in &step.next_actions {
                if !catalog.contains_id(id) {
                    return Err(Error::InvariantViolation(format!(
                        "step {i} action id {id} not in the {} catalog",
                        self.matchup.player
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    matchup: MatchUp,
    outcome: u8,
    frame_count: u64,
    player_apm: u32,
    opponent_apm: u32,
    player_mmr: u32,
    opponent_mmr: u32,
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    progress: f64,
    global: GlobalFeatures,
    spatial: Vec<Vec<Vec<f32>>>,
    next_actions: Vec<u32>,
}

/// Load one replay file, enforcing all invariants.
pub fn load_replay(path: &Path, catalogs: &RaceCatalogs) -> Result<Replay> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let malformed = |line: usize, reason: String| Error::MalformedFile {
        path: path.display().to_string(),
        line: line + 1,
        reason,
    };

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| malformed(0, "empty file".into()))?;
    let header_line = header_line?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| malformed(0, e.to_string()))?;

    let mut steps = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let step: StepLine =
            serde_json::from_str(&line).map_err(|e| malformed(idx, e.to_string()))?;
        if step.progress != step.global.progress {
            return Err(Error::InvariantViolation(format!(
                "line {}: top-level progress {} disagrees with global.progress {}",
                idx + 1,
                step.progress,
                step.global.progress
            )));
        }
        steps.push(ReplayStep {
            global: step.global,
            spatial: SpatialFeatures::from_nested(step.spatial)?,
            next_actions: step.next_actions,
        });
    }

    let replay = Replay {
        matchup: header.matchup,
        steps,
        outcome: header.outcome,
        frame_count: header.frame_count,
        player_apm: header.player_apm,
        opponent_apm: header.opponent_apm,
        player_mmr: header.player_mmr,
        opponent_mmr: header.opponent_mmr,
    };
    replay.validate_invariants(catalogs)?;
    Ok(replay)
}

/// Serialize one replay in the canonical JSONL schema.
pub fn replay_to_jsonl(replay: &Replay) -> Result<String> {
    let header = Header {
        matchup: replay.matchup,
        outcome: replay.outcome,
        frame_count: replay.frame_count,
        player_apm: replay.player_apm,
        opponent_apm: replay.opponent_apm,
        player_mmr: replay.player_mmr,
        opponent_mmr: replay.opponent_mmr,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for step in &replay.steps {
        let line = StepLine {
            progress: step.global.progress,
            global: step.global,
            spatial: step.spatial.to_nested(),
            next_actions: step.next_actions.clone(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&line)?);
    }
    Ok(out)
}

pub fn write_replay(path: &Path, replay: &Replay) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(replay_to_jsonl(replay)?.as_bytes())?;
    Ok(())
}

/// Replay quality thresholds. Defaults follow the preprocessing rules of
/// the source replay corpus: 10000 frames, 10 APM, 1000 MMR.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValidationCriteria {
    pub min_frames: u64,
    pub min_apm: u32,
    pub min_mmr: u32,
}

impl Default for ValidationCriteria {
    fn default() -> Self {
        Self {
            min_frames: 10_000,
            min_apm: 10,
            min_mmr: 1000,
        }
    }
}

/// Which criteria a replay failed, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailedCriterion {
    MinFrames,
    MinApm,
    MinMmr,
}

/// Check a replay against quality thresholds. The outcome is the return
/// value; structural invariants are not re-checked here.
pub fn validate_replay(replay: &Replay, criteria: &ValidationCriteria) -> Vec<FailedCriterion> {
    let mut failed = Vec::new();
    if replay.frame_count < criteria.min_frames {
        failed.push(FailedCriterion::MinFrames);
    }
    if replay.player_apm < criteria.min_apm || replay.opponent_apm < criteria.min_apm {
        failed.push(FailedCriterion::MinApm);
    }
    if replay.player_mmr < criteria.min_mmr || replay.opponent_mmr < criteria.min_mmr {
        failed.push(FailedCriterion::MinMmr);
    }
    failed
}

/// Knobs for the synthetic replay generator.
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Steps emitted per replay. How many steps a real preprocessing run
    /// samples per match is unspecified upstream, so it stays a knob.
    pub steps_per_replay: usize,
    /// Actions per step.
    pub horizon: usize,
    /// Spatial plane that carries the planted building blobs.
    pub building_plane: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            steps_per_replay: 4,
            horizon: 4,
            building_plane: 0,
        }
    }
}

// Grid capacity for planted 2x2 building blobs on a 3-cell pitch.
const BLOB_GRID: usize = SPATIAL_SIZE / 3;
const MAX_BLOBS: usize = BLOB_GRID * BLOB_GRID;

/// Plant `count` disjoint 2x2 blobs of 1.0 into a plane.
fn plant_blobs(plane: &mut ndarray::ArrayViewMut2<'_, f32>, count: usize) {
    for k in 0..count.min(MAX_BLOBS) {
        let row = 3 * (k / BLOB_GRID);
        let col = 3 * (k % BLOB_GRID);
        for dr in 0..2 {
            for dc in 0..2 {
                plane[[row + dr, col + dc]] = 1.0;
            }
        }
    }
}

/// Generate `n` synthetic replays, deterministic in `(matchup, n, seed)`.
///
/// Global features follow per-replay piecewise-linear ramps so early steps
/// bin low and later steps bin higher. Each step plants a distinct number
/// of building blobs, which keeps compiled prompts distinguishable across
/// the generated set (up to the plane capacity). Outcomes alternate, so
/// wins and losses stay balanced to within one.
pub fn synthesize_replays(
    matchup: MatchUp,
    n: usize,
    seed: u64,
    catalogs: &RaceCatalogs,
) -> Vec<Replay> {
    synthesize_replays_with(matchup, n, seed, catalogs, &SynthesisOptions::default())
}

pub fn synthesize_replays_with(
    matchup: MatchUp,
    n: usize,
    seed: u64,
    catalogs: &RaceCatalogs,
    opts: &SynthesisOptions,
) -> Vec<Replay> {
    assert!(n >= 1, "n must be >= 1");
    assert!(opts.steps_per_replay >= 1 && opts.horizon >= 1);
    let catalog = catalogs.for_race(matchup.player);
    let ids: Vec<u32> = catalog.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c2_ca7a);
    let steps_per = opts.steps_per_replay;

    (0..n)
        .map(|j| {
            let outcome = if j % 2 == 0 { 1 } else { 0 };
            let frame_count = 10_000 + rng.gen_range(0..20_000);
            let player_apm = 10 + rng.gen_range(0..150);
            let opponent_apm = 10 + rng.gen_range(0..150);
            let player_mmr = 1000 + rng.gen_range(0..4000);
            let opponent_mmr = 1000 + rng.gen_range(0..4000);

            // Per-replay ramp parameters for the 12 non-progress features.
            let bases: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..0.15)).collect();
            let slopes: Vec<f64> = (0..12).map(|_| rng.gen_range(0.2..0.9)).collect();

            let steps = (0..steps_per)
                .map(|t| {
                    let progress = (t as f64 + rng.gen_range(0.05..0.95)) / steps_per as f64;
                    let feat = |i: usize| (bases[i] + slopes[i] * progress).clamp(0.0, 1.0);
                    let global = GlobalFeatures {
                        progress,
                        army_count: feat(0),
                        minerals_collected: feat(1),
                        minerals_used: feat(2),
                        vespene_collected: feat(3),
                        vespene_used: feat(4),
                        food_used: feat(5),
                        food_cap: feat(6),
                        food_army: feat(7),
                        food_workers: feat(8),
                        idle_workers: feat(9),
                        warp_gates: feat(10),
                        larva: feat(11),
                    };

                    // Non-building planes are sparse, like unit layers on a
                    // mostly empty map.
                    let mut spatial = SpatialFeatures::zeros();
                    for p in 0..SPATIAL_PLANES {
                        if p == opts.building_plane {
                            continue;
                        }
                        let mut plane = spatial.plane_mut(p);
                        for _ in 0..160 {
                            let r = rng.gen_range(0..SPATIAL_SIZE);
                            let c = rng.gen_range(0..SPATIAL_SIZE);
                            let v: f32 = rng.gen_range(0.05..0.95);
                            plane[[r, c]] = (v * 100.0).round() / 100.0;
                        }
                    }
                    let blob_count = (j * steps_per + t + 1).min(MAX_BLOBS);
                    plant_blobs(&mut spatial.plane_mut(opts.building_plane), blob_count);

                    let next_actions = (0..opts.horizon)
                        .map(|_| ids[rng.gen_range(0..ids.len())])
                        .collect();
                    ReplayStep {
                        global,
                        spatial,
                        next_actions,
                    }
                })
                .collect();

            Replay {
                matchup,
                steps,
                outcome,
                frame_count,
                player_apm,
                opponent_apm,
                player_mmr,
                opponent_mmr,
            }
        })
        .collect()
}

/// Uniform sample of `n` replays without replacement, deterministic in `seed`.
pub fn subset_replays(replays: &[Replay], n: usize, seed: u64) -> Result<Vec<Replay>> {
    if n > replays.len() {
        return Err(Error::InsufficientReplays {
            requested: n,
            available: replays.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b5e7);
    let mut indices: Vec<usize> = (0..replays.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(n);
    Ok(indices.into_iter().map(|i| replays[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Race;

    fn tvt() -> MatchUp {
        MatchUp::new(Race::Terran, Race::Terran)
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn shipped_sample_loads_with_three_steps() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("data/replays/sample_tvt.jsonl");
        let replay = load_replay(&path, &RaceCatalogs::full()).unwrap();
        assert_eq!(replay.steps.len(), 3);
        assert_eq!(replay.matchup.to_string(), "TvT");
        replay.validate_invariants(&RaceCatalogs::full()).unwrap();
    }

    #[test]
    fn round_trip_preserves_replays() {
        let cats = RaceCatalogs::full();
        let replays = synthesize_replays(tvt(), 2, 11, &cats);
        for replay in &replays {
            let f = write_temp(&replay_to_jsonl(replay).unwrap());
            let loaded = load_replay(f.path(), &cats).unwrap();
            assert_eq!(&loaded, replay);
        }
    }

    #[test]
    fn load_rejects_wrong_plane_count() {
        let cats = RaceCatalogs::full();
        let replay = &synthesize_replays(tvt(), 1, 0, &cats)[0];
        let text = replay_to_jsonl(replay).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // Drop one plane from the first step.
        let mut step: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        let planes = step["spatial"].as_array_mut().unwrap();
        planes.pop();
        assert_eq!(planes.len(), 12);
        lines[1] = serde_json::to_string(&step).unwrap();
        let f = write_temp(&lines.join("\n"));
        assert!(matches!(
            load_replay(f.path(), &cats),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn load_rejects_outcome_two() {
        let cats = RaceCatalogs::full();
        let replay = &synthesize_replays(tvt(), 1, 0, &cats)[0];
        let text = replay_to_jsonl(replay).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut header: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
        header["outcome"] = 2.into();
        lines[0] = serde_json::to_string(&header).unwrap();
        let f = write_temp(&lines.join("\n"));
        assert!(matches!(
            load_replay(f.path(), &cats),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn validation_boundaries() {
        let cats = RaceCatalogs::full();
        let mut replay = synthesize_replays(tvt(), 1, 3, &cats).remove(0);
        replay.frame_count = 10_000;
        replay.player_apm = 10;
        replay.opponent_apm = 10;
        replay.player_mmr = 1000;
        replay.opponent_mmr = 1000;
        let criteria = ValidationCriteria::default();
        assert!(validate_replay(&replay, &criteria).is_empty());

        replay.frame_count = 9_999;
        assert_eq!(
            validate_replay(&replay, &criteria),
            vec![FailedCriterion::MinFrames]
        );

        replay.frame_count = 10_000;
        replay.opponent_mmr = 999;
        assert_eq!(
            validate_replay(&replay, &criteria),
            vec![FailedCriterion::MinMmr]
        );
    }

    #[test]
    fn validation_is_monotone_in_thresholds() {
        let cats = RaceCatalogs::full();
        let replay = &synthesize_replays(tvt(), 1, 9, &cats)[0];
        let strict = ValidationCriteria {
            min_frames: 25_000,
            min_apm: 120,
            min_mmr: 4500,
        };
        let loose = ValidationCriteria {
            min_frames: 0,
            min_apm: 0,
            min_mmr: 0,
        };
        // Loosening every threshold can only shrink the failure set.
        let strict_failures = validate_replay(replay, &strict).len();
        let loose_failures = validate_replay(replay, &loose).len();
        assert!(loose_failures <= strict_failures);
        assert_eq!(loose_failures, 0);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let cats = RaceCatalogs::full();
        let a = synthesize_replays(tvt(), 10, 7, &cats);
        let b = synthesize_replays(tvt(), 10, 7, &cats);
        let text_a: Vec<String> = a.iter().map(|r| replay_to_jsonl(r).unwrap()).collect();
        let text_b: Vec<String> = b.iter().map(|r| replay_to_jsonl(r).unwrap()).collect();
        assert_eq!(text_a, text_b);
    }

    #[test]
    fn synthesis_balances_outcomes() {
        let cats = RaceCatalogs::full();
        let mu = MatchUp::new(Race::Zerg, Race::Zerg);
        let replays = synthesize_replays(mu, 4, 1, &cats);
        let wins = replays.iter().filter(|r| r.outcome == 1).count();
        assert_eq!(wins, 2);
    }

    #[test]
    fn synthesis_draws_from_the_player_catalog() {
        let cats = RaceCatalogs::full();
        let mu = MatchUp::new(Race::Protoss, Race::Protoss);
        let replays = synthesize_replays(mu, 1, 0, &cats);
        for step in &replays[0].steps {
            for &id in &step.next_actions {
                assert!(cats.protoss.contains_id(id));
            }
        }
    }

    #[test]
    fn synthesis_passes_default_validation_and_invariants() {
        let cats = RaceCatalogs::full();
        for seed in 0..5u64 {
            for replay in synthesize_replays(tvt(), 6, seed, &cats) {
                replay.validate_invariants(&cats).unwrap();
                assert!(validate_replay(&replay, &ValidationCriteria::default()).is_empty());
            }
        }
    }

    #[test]
    fn subset_counts_and_determinism() {
        let cats = RaceCatalogs::full();
        let replays = synthesize_replays(tvt(), 20, 5, &cats);
        let a = subset_replays(&replays, 7, 42).unwrap();
        let b = subset_replays(&replays, 7, 42).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(a, b);
        assert!(matches!(
            subset_replays(&replays, 21, 0),
            Err(Error::InsufficientReplays { .. })
        ));
    }

    #[test]
    fn subset_full_is_a_permutation() {
        let cats = RaceCatalogs::full();
        let replays = synthesize_replays(tvt(), 6, 2, &cats);
        let sub = subset_replays(&replays, 6, 9).unwrap();
        for replay in &replays {
            assert!(sub.contains(replay));
        }
    }
}

