//! Per-race action catalogs: bijective maps between action IDs and
//! game-library action names.
//!
//! Full catalogs carry 75 Terran, 61 Protoss, and 74 Zerg actions. A
//! 12-action-per-race mini catalog (a subset of the full one, same IDs)
//! keeps the model vocabulary small for fast desk-scale runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three playable races.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Race {
    Terran,
    Protoss,
    Zerg,
}

impl Race {
    pub const ALL: [Race; 3] = [Race::Terran, Race::Protoss, Race::Zerg];

    /// One-letter code used in match-up strings.
    pub fn letter(self) -> char {
        match self {
            Race::Terran => 'T',
            Race::Protoss => 'P',
            Race::Zerg => 'Z',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Race::Terran => "Terran",
            Race::Protoss => "Protoss",
            Race::Zerg => "Zerg",
        }
    }

    pub fn from_letter(c: char) -> Option<Race> {
        match c.to_ascii_uppercase() {
            'T' => Some(Race::Terran),
            'P' => Some(Race::Protoss),
            'Z' => Some(Race::Zerg),
            _ => None,
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Player race versus opponent race. Renders as e.g. "TvZ".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatchUp {
    pub player: Race,
    pub opponent: Race,
}

impl MatchUp {
    pub fn new(player: Race, opponent: Race) -> Self {
        Self { player, opponent }
    }

    /// All nine ordered race pairings.
    pub fn all() -> Vec<MatchUp> {
        let mut out = Vec::with_capacity(9);
        for p in Race::ALL {
            for o in Race::ALL {
                out.push(MatchUp::new(p, o));
            }
        }
        out
    }
}

impl fmt::Display for MatchUp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}v{}", self.player.letter(), self.opponent.letter())
    }
}

impl FromStr for MatchUp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        let err = || Error::InvalidConfig(format!("bad match-up {s:?}, expected e.g. TvZ"));
        if chars.len() != 3 || (chars[1] != 'v' && chars[1] != 'V') {
            return Err(err());
        }
        let player = Race::from_letter(chars[0]).ok_or_else(err)?;
        let opponent = Race::from_letter(chars[2]).ok_or_else(err)?;
        Ok(MatchUp::new(player, opponent))
    }
}

impl Serialize for MatchUp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MatchUp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Deserialize)]
struct CatalogFile {
    race: Race,
    actions: BTreeMap<String, String>,
}

/// Bijective action ID <-> action name map for one race.
#[derive(Debug, Clone)]
pub struct ActionCatalog {
    race: Race,
    by_id: BTreeMap<u32, String>,
    by_name: HashMap<String, u32>,
}

impl ActionCatalog {
    /// Build a catalog, validating bijectivity.
    pub fn new(race: Race, entries: impl IntoIterator<Item = (u32, String)>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        let mut by_name = HashMap::new();
        for (id, name) in entries {
            if by_id.insert(id, name.clone()).is_some() {
                return Err(Error::InvariantViolation(format!(
                    "duplicate action id {id} in {race} catalog"
                )));
            }
            if by_name.insert(name.clone(), id).is_some() {
                return Err(Error::InvariantViolation(format!(
                    "duplicate action name {name:?} in {race} catalog"
                )));
            }
        }
        Ok(Self {
            race,
            by_id,
            by_name,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CatalogFile = serde_json::from_str(text)?;
        let entries = file
            .actions
            .into_iter()
            .map(|(id, name)| {
                id.parse::<u32>()
                    .map(|id| (id, name))
                    .map_err(|_| Error::InvariantViolation(format!("non-integer action id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.race, entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn race(&self) -> Race {
        self.race
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Action name for an ID.
    pub fn action_name(&self, id: u32) -> Result<&str> {
        self.by_id
            .get(&id)
            .map(String::as_str)
            .ok_or(Error::UnknownAction {
                race: self.race.name().to_string(),
                id,
            })
    }

    /// Inverse of [`ActionCatalog::action_name`].
    pub fn action_id(&self, name: &str) -> Result<u32> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownActionName {
                race: self.race.name().to_string(),
                name: name.to_string(),
            })
    }

    pub fn contains_id(&self, id: u32) -> bool {
        self.by_id.contains_key(&id)
    }

    /// IDs in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_id.keys().copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_id.values().map(String::as_str)
    }
}

/// The three per-race catalogs used by one pipeline run.
#[derive(Debug, Clone)]
pub struct RaceCatalogs {
    pub terran: ActionCatalog,
    pub protoss: ActionCatalog,
    pub zerg: ActionCatalog,
}

impl RaceCatalogs {
    /// Full catalogs embedded from the shipped data files.
    pub fn full() -> Self {
        Self {
            terran: ActionCatalog::from_json(include_str!("../data/catalogs/terran_full.json"))
                .expect("embedded terran catalog"),
            protoss: ActionCatalog::from_json(include_str!("../data/catalogs/protoss_full.json"))
                .expect("embedded protoss catalog"),
            zerg: ActionCatalog::from_json(include_str!("../data/catalogs/zerg_full.json"))
                .expect("embedded zerg catalog"),
        }
    }

    /// 12-action-per-race subset of the full catalogs.
    pub fn mini() -> Self {
        Self {
            terran: ActionCatalog::from_json(include_str!("../data/catalogs/terran_mini.json"))
                .expect("embedded terran mini catalog"),
            protoss: ActionCatalog::from_json(include_str!("../data/catalogs/protoss_mini.json"))
                .expect("embedded protoss mini catalog"),
            zerg: ActionCatalog::from_json(include_str!("../data/catalogs/zerg_mini.json"))
                .expect("embedded zerg mini catalog"),
        }
    }

    pub fn for_race(&self, race: Race) -> &ActionCatalog {
        match race {
            Race::Terran => &self.terran,
            Race::Protoss => &self.protoss,
            Race::Zerg => &self.zerg,
        }
    }
}
