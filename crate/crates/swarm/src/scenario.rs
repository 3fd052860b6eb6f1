//! JSON scenario files. See `docs/scenario.md` for the schema.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swarm_core::adversary::{
    ChurnEvent, ChurnKind, ChurnScript, JokerScript, SanityMode, ScriptSubject, ScriptedAnnounce,
};
use swarm_core::protocol::{Awareness, ConflictMode};
use swarm_core::sync::{ProposerSpec, Scenario};
use swarm_core::topology::{generate, GnomeId, GraphKind, Topology, TopologyError};

use crate::edgelist::{read_edge_list, EdgeListError};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    EdgeList { path: PathBuf, source: EdgeListError },
    #[error("unknown graph kind `{0}`")]
    UnknownKind(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    Generated {
        kind: String,
        n: usize,
        d: u32,
        #[serde(default)]
        seed: u64,
    },
    File {
        file: PathBuf,
    },
    Inline {
        n: usize,
        d_bound: u32,
        edges: Vec<(u32, u32)>,
    },
}

impl TopologySpec {
    /// Relative file paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Topology, ScenarioError> {
        match self {
            TopologySpec::Generated { kind, n, d, seed } => {
                let k = GraphKind::parse(kind).ok_or_else(|| ScenarioError::UnknownKind(kind.clone()))?;
                Ok(generate(k, *n, *d, *seed)?)
            }
            TopologySpec::File { file } => {
                let path = base.join(file);
                let f = File::open(&path).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
                read_edge_list(BufReader::new(f)).map_err(|source| ScenarioError::EdgeList { path, source })
            }
            TopologySpec::Inline { n, d_bound, edges } => {
                Ok(Topology::new(*n, *d_bound, edges.iter().copied())?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposerEntry {
    pub gnome: u32,
    #[serde(default)]
    pub turn: i64,
    #[serde(default)]
    pub payload: String,
}

/// Awareness written either as a number or as `"C"` / `"U"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AwarenessText {
    Radius(u32),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectName {
    Tracked,
    Fresh,
    Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub turn: i64,
    pub subject: SubjectName,
    pub alpha: AwarenessText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum StrategyEntry {
    Confuse { at: i64 },
    Fool { at: i64 },
    Trick { at: i64 },
    Backdate { at: i64, offset: u32 },
    Stubborn { at: i64 },
    Custom { script: Vec<ScriptEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JokerEntry {
    pub gnome: u32,
    #[serde(flatten)]
    pub strategy: StrategyEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChurnName {
    Join,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnEntry {
    pub turn: i64,
    pub gnome: u32,
    pub kind: ChurnName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Plain,
    Ranked,
    Merry,
}

impl From<ModeName> for ConflictMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Plain => ConflictMode::Plain,
            ModeName::Ranked => ConflictMode::Ranked,
            ModeName::Merry => ConflictMode::Merry,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SanityName {
    #[default]
    Off,
    Log,
    Expel,
}

impl From<SanityName> for SanityMode {
    fn from(s: SanityName) -> Self {
        match s {
            SanityName::Off => SanityMode::Off,
            SanityName::Log => SanityMode::Log,
            SanityName::Expel => SanityMode::Expel,
        }
    }
}

/// A scenario as stored on disk.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Overrides any topology given on the command line.
    #[serde(default)]
    pub topology: Option<TopologySpec>,
    /// Empty means: pick one proposer from the command line selection.
    #[serde(default)]
    pub proposers: Vec<ProposerEntry>,
    #[serde(default)]
    pub jokers: Vec<JokerEntry>,
    #[serde(default)]
    pub churn: Vec<ChurnEntry>,
    #[serde(default)]
    pub mode: Option<ModeName>,
    #[serde(default)]
    pub sanity: SanityName,
    #[serde(default)]
    pub max_turns: Option<i64>,
    #[serde(default)]
    pub retry: bool,
    #[serde(default)]
    pub confusion_timeout: Option<i64>,
    #[serde(default)]
    pub ranks: Option<Vec<u64>>,
}

fn awareness(a: &AwarenessText) -> Result<Awareness, String> {
    match a {
        AwarenessText::Radius(k) => Ok(Awareness::Radius(*k)),
        AwarenessText::Text(s) => s.parse().map_err(|e: swarm_core::protocol::ParseAwarenessError| e.to_string()),
    }
}

impl JokerEntry {
    pub fn to_script(&self) -> Result<JokerScript, String> {
        let g = GnomeId(self.gnome);
        Ok(match &self.strategy {
            StrategyEntry::Confuse { at } => JokerScript::confuse(g, *at),
            StrategyEntry::Fool { at } => JokerScript::fool(g, *at),
            StrategyEntry::Trick { at } => JokerScript::trick(g, *at),
            StrategyEntry::Backdate { at, offset } => JokerScript::backdate(g, *at, *offset),
            StrategyEntry::Stubborn { at } => JokerScript::stubborn(g, *at),
            StrategyEntry::Custom { script } => {
                let steps = script
                    .iter()
                    .map(|s| {
                        Ok(ScriptedAnnounce {
                            turn: s.turn,
                            subject: match s.subject {
                                SubjectName::Tracked => ScriptSubject::Tracked,
                                SubjectName::Fresh => ScriptSubject::Fresh,
                                SubjectName::Confusion => ScriptSubject::Confusion,
                            },
                            alpha: awareness(&s.alpha)?,
                        })
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                JokerScript::custom(g, steps)
            }
        })
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let f = File::open(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        serde_json::from_reader(BufReader::new(f))
            .map_err(|source| ScenarioError::Json { path: path.into(), source })
    }

    /// Fills a synchronous scenario. `proposer` is used when the file names
    /// none; `mode` when the file sets none.
    pub fn apply<'a>(
        &self,
        topo: &'a Topology,
        proposer: GnomeId,
        mode: ConflictMode,
    ) -> Result<Scenario<'a>, String> {
        let mut sc = Scenario::single(topo, proposer);
        if !self.proposers.is_empty() {
            sc.proposers = self
                .proposers
                .iter()
                .map(|p| ProposerSpec {
                    gnome: GnomeId(p.gnome),
                    turn: p.turn,
                    payload: p.payload.clone().into_bytes(),
                })
                .collect();
        }
        sc.jokers = self.jokers.iter().map(JokerEntry::to_script).collect::<Result<_, _>>()?;
        sc.churn = ChurnScript {
            events: self
                .churn
                .iter()
                .map(|c| ChurnEvent {
                    turn: c.turn,
                    gnome: GnomeId(c.gnome),
                    kind: match c.kind {
                        ChurnName::Join => ChurnKind::Join,
                        ChurnName::Leave => ChurnKind::Leave,
                    },
                })
                .collect(),
        };
        sc.mode = self.mode.map_or(mode, Into::into);
        sc.sanity = self.sanity.into();
        sc.retry = self.retry;
        sc.confusion_timeout = self.confusion_timeout;
        sc.ranks = self.ranks.clone();
        sc.record_announces = !self.jokers.is_empty();
        let d = topo.d_bound() as i64;
        let last_start = sc
            .proposers
            .iter()
            .map(|p| p.turn)
            .chain(sc.jokers.iter().map(|j| j.inject_at))
            .max()
            .unwrap_or(0);
        // every retry costs a timeout plus a full round
        let retries = if self.retry { 2 } else { 0 };
        sc.max_turns = self
            .max_turns
            .unwrap_or(last_start + 4 * d + 8 + retries * (sc.timeout() + 2 * d + 2));
        Ok(sc)
    }
}
