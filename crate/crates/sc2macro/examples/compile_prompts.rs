//! Turn replay steps into instruction/target text and parse a target block
//! back into a structured prediction.
//!
//! ```bash
//! cargo run --example compile_prompts
//! ```

use sc2macro::catalog::{MatchUp, Race, RaceCatalogs};
use sc2macro::pipeline::compile_replays;
use sc2macro::prompt::parse_generation;
use sc2macro::replay::synthesize_replays;
use sc2macro::spatial::DescriberConfig;

fn main() -> sc2macro::Result<()> {
    let catalogs = RaceCatalogs::full();
    let matchup = MatchUp::new(Race::Terran, Race::Zerg);
    let replays = synthesize_replays(matchup, 1, 3, &catalogs);
    let pairs = compile_replays(&replays, &catalogs, &DescriberConfig::default(), 4)?;

    let pair = &pairs[1];
    println!("--- instruction ---\n{}\n", pair.instruction);
    println!("--- target ---\n{}\n", pair.target);

    let parsed = parse_generation(&pair.target, 4);
    println!("--- parsed back ---");
    for (k, action) in parsed.actions.iter().enumerate() {
        println!("action {}: {}", k + 1, action.as_deref().unwrap_or("<none>"));
    }
    println!("outcome: {:?}", parsed.outcome);
    Ok(())
}
