//! Generate synthetic replays, check them against the standard quality
//! thresholds, and draw a training subset.
//!
//! ```bash
//! cargo run --example synthesize_replays
//! ```

use sc2macro::catalog::{MatchUp, Race, RaceCatalogs};
use sc2macro::replay::{
    subset_replays, synthesize_replays, validate_replay, ValidationCriteria,
};

fn main() -> sc2macro::Result<()> {
    let catalogs = RaceCatalogs::full();
    let matchup = MatchUp::new(Race::Zerg, Race::Zerg);
    let replays = synthesize_replays(matchup, 12, 42, &catalogs);

    let criteria = ValidationCriteria::default();
    let wins = replays.iter().filter(|r| r.outcome == 1).count();
    println!(
        "synthesized {} {} replays: {} wins / {} losses",
        replays.len(),
        matchup,
        wins,
        replays.len() - wins
    );
    for (i, replay) in replays.iter().enumerate() {
        let failures = validate_replay(replay, &criteria);
        println!(
            "replay {i}: {} steps, {} frames, APM {}/{}, MMR {}/{} -> {}",
            replay.steps.len(),
            replay.frame_count,
            replay.player_apm,
            replay.opponent_apm,
            replay.player_mmr,
            replay.opponent_mmr,
            if failures.is_empty() { "pass" } else { "FAIL" }
        );
    }

    let subset = subset_replays(&replays, 5, 7)?;
    println!("drew a {}-replay training subset", subset.len());
    Ok(())
}
