//! Dynamic prompt compilation and generation parsing.
//!
//! Numeric game features never appear in a prompt: scalar features are
//! rendered as three categorical levels, match progress as one of four
//! game stages, and the match reward as win/loss. The compiled layout is
//! fixed so that a target block can be parsed back exactly.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::MatchUp;
use crate::error::{Error, Result};
use crate::replay::ReplayStep;

/// Three-level categorical rendering of a normalized feature.
///
/// Low covers [0, 0.2], medium (0.2, 0.7], high (0.7, 1]. The half-open
/// closures leave no gap between low and medium for continuous values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoricalLevel {
    Low,
    Medium,
    High,
}

impl fmt::Display for CategoricalLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CategoricalLevel::Low => "low",
            CategoricalLevel::Medium => "medium",
            CategoricalLevel::High => "high",
        })
    }
}

/// Four match phases by elapsed fraction: early < 0.25, mid [0.25, 0.60],
/// late (0.60, 0.90], end > 0.90.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameStage {
    Early,
    Mid,
    Late,
    End,
}

impl fmt::Display for GameStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GameStage::Early => "Early",
            GameStage::Mid => "Mid",
            GameStage::Late => "Late",
            GameStage::End => "End",
        })
    }
}

/// Match result label. Renders lowercase in prompt text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Win,
    Loss,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Win => "win",
            Outcome::Loss => "loss",
        })
    }
}

/// Map a normalized value to its categorical level.
pub fn bin_value(v: f64) -> Result<CategoricalLevel> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfRange {
            value: v,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(if v <= 0.2 {
        CategoricalLevel::Low
    } else if v <= 0.7 {
        CategoricalLevel::Medium
    } else {
        CategoricalLevel::High
    })
}

/// Map match progress to its game stage.
pub fn stage_of(progress: f64) -> Result<GameStage> {
    if !progress.is_finite() || !(0.0..=1.0).contains(&progress) {
        return Err(Error::OutOfRange {
            value: progress,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(if progress < 0.25 {
        GameStage::Early
    } else if progress <= 0.60 {
        GameStage::Mid
    } else if progress <= 0.90 {
        GameStage::Late
    } else {
        GameStage::End
    })
}

/// Relabel a 0/1 reward as loss/win.
pub fn outcome_label(reward: i64) -> Result<Outcome> {
    match reward {
        0 => Ok(Outcome::Loss),
        1 => Ok(Outcome::Win),
        other => Err(Error::InvalidReward(other)),
    }
}

/// A compiled instruction/target pair plus its scoring ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub instruction: String,
    pub target: String,
    pub meta: PromptMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub matchup: MatchUp,
    pub replay_index: usize,
    pub step_index: usize,
    pub truth_actions: Vec<String>,
    pub truth_outcome: Outcome,
}

/// Compile one step into the fixed instruction layout.
///
/// `building_description` is the text produced by the spatial describer,
/// e.g. "5 buildings". Every scalar feature appears as its categorical
/// level, the progress as its stage name.
pub fn compile_prompt(
    step: &ReplayStep,
    building_description: &str,
    matchup: MatchUp,
    horizon: usize,
) -> Result<String> {
    assert!(horizon >= 1, "horizon must be >= 1");
    let g = &step.global;
    let stage = stage_of(g.progress)?;
    let level = |v: f64| bin_value(v);

    let mut text = String::new();
    let _ = write!(
        text,
        "Instruct: As an expert StarCraft II {} player, playing against the {}, \
         predict the next {} actions and also the result of the game, \
         given the following resources:",
        matchup.player, matchup.opponent, horizon
    );
    let _ = write!(
        text,
        "\nGame Stage: {}, Army Count: {}, Army Units/Buildings: {}",
        stage,
        level(g.army_count)?,
        building_description
    );
    let _ = write!(
        text,
        "\nMinerals collected: {}, Minerals used: {}, Vespene gas collected: {}, Vespene gas used: {}",
        level(g.minerals_collected)?,
        level(g.minerals_used)?,
        level(g.vespene_collected)?,
        level(g.vespene_used)?
    );
    let _ = write!(
        text,
        "\nFood used: {}, Food cap: {}, Food for Army: {}, Food for Workers: {}",
        level(g.food_used)?,
        level(g.food_cap)?,
        level(g.food_army)?,
        level(g.food_workers)?
    );
    let _ = write!(
        text,
        "\nIdle Workers: {}, Warp gates count: {}, Larva count: {}.",
        level(g.idle_workers)?,
        level(g.warp_gates)?,
        level(g.larva)?
    );
    Ok(text)
}

/// Render the target block: "Output:", one line per action, then the result.
pub fn compile_target(actions: &[String], outcome: Outcome) -> String {
    assert!(!actions.is_empty(), "actions must be non-empty");
    let mut text = String::from("Output:");
    for (k, action) in actions.iter().enumerate() {
        let _ = write!(text, "\nAction {}: {}", k + 1, action);
    }
    let _ = write!(text, "\nResult: {}", outcome);
    text
}

/// A parsed model generation. Slots the parser could not fill stay `None`
/// and score as incorrect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub actions: Vec<Option<String>>,
    pub outcome: Option<Outcome>,
}

impl Prediction {
    /// True when nothing at all was parsed out of the generation.
    pub fn is_parse_failure(&self) -> bool {
        self.outcome.is_none() && self.actions.iter().all(Option::is_none)
    }
}

/// Parse arbitrary generated text into a [`Prediction`].
///
/// The parser is total and lenient: it scans lines for `Action <k>: <name>`
/// (filled in order of appearance, up to `horizon`) and for the first
/// case-insensitive `Result: win|loss` line. Anything unparseable just
/// leaves the corresponding slot empty.
pub fn parse_generation(text: &str, horizon: usize) -> Prediction {
    let mut actions: Vec<Option<String>> = vec![None; horizon];
    let mut filled = 0usize;
    let mut outcome = None;

    for line in text.lines() {
        let line = line.trim();
        if let Some(name) = parse_action_line(line) {
            if filled < horizon && !name.is_empty() {
                actions[filled] = Some(name.to_string());
                filled += 1;
            }
            continue;
        }
        if outcome.is_none() {
            if let Some(rest) = strip_prefix_ci(line, "result") {
                let rest = rest.trim_start();
                if let Some(value) = rest.strip_prefix(':') {
                    match value.trim().to_ascii_lowercase().as_str() {
                        "win" => outcome = Some(Outcome::Win),
                        "loss" => outcome = Some(Outcome::Loss),
                        _ => {}
                    }
                }
            }
        }
    }

    Prediction { actions, outcome }
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

/// Match `Action <digits>: <rest>` and return the trimmed rest.
fn parse_action_line(line: &str) -> Option<&str> {
    let rest = strip_prefix_ci(line, "action")?;
    let rest = rest.trim_start();
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = rest[digits..].trim_start();
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim())
}
