//! Solved reaching policy and its on-disk container.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "RGPOLICY"
//! format version   u32
//! metadata length  u64
//! metadata         UTF-8 JSON (PolicyMetadata)
//! state count      u64
//! values           f64 x state count
//! actions          u16 x state count, 0xFFFF for terminal states
//! ```
//!
//! States are indexed prev-major (none, left, right, up, down, forward, backward),
//! then z, y, x, each cell index shifted by the grid extent.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::reward::RewardConfig;
use super::solver::ConvergenceStats;
use super::{GridSpec, MdpError, OffsetState, Result};
use crate::direction::Direction;
use crate::hand_model::{CommandModel, CommandSpec};

pub const POLICY_MAGIC: &[u8; 8] = b"RGPOLICY";
pub const POLICY_FORMAT_VERSION: u32 = 1;
pub(crate) const NO_ACTION: u16 = u16::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub format_version: u32,
    pub grid: GridSpec,
    pub resolution: f64,
    pub extent: f64,
    pub gamma: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub reward: RewardConfig,
    pub vocabulary_hash: String,
    pub convergence: ConvergenceStats,
    /// Command model the policy was solved against.
    pub model: CommandModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "command_id", rename_all = "snake_case")]
pub enum QueryResult {
    Done,
    Command(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachPolicy {
    metadata: PolicyMetadata,
    values: Vec<f64>,
    actions: Vec<u16>,
}

#[derive(Serialize)]
struct JsonExport<'a> {
    metadata: &'a PolicyMetadata,
    index_order: &'static str,
    values: &'a [f64],
    actions: Vec<Option<u16>>,
}

impl ReachPolicy {
    pub fn new(metadata: PolicyMetadata, values: Vec<f64>, actions: Vec<u16>) -> Result<Self> {
        let n = metadata.grid.n_states();
        if values.len() != n || actions.len() != n {
            return Err(MdpError::BadPolicyFile(format!(
                "expected {n} states, got {} values and {} actions",
                values.len(),
                actions.len()
            )));
        }
        if metadata.vocabulary_hash != metadata.model.vocabulary_hash() {
            return Err(MdpError::ModelMismatch("vocabulary hash differs".into()));
        }
        for (i, &a) in actions.iter().enumerate() {
            let terminal = metadata.grid.state(i).is_terminal();
            let valid = if terminal {
                a == NO_ACTION
            } else {
                (a as usize) < metadata.model.len()
            };
            if !valid {
                return Err(MdpError::BadPolicyFile(format!(
                    "bad action {a} at state {i}"
                )));
            }
        }
        Ok(Self {
            metadata,
            values,
            actions,
        })
    }

    pub fn metadata(&self) -> &PolicyMetadata {
        &self.metadata
    }

    pub fn grid(&self) -> &GridSpec {
        &self.metadata.grid
    }

    pub fn model(&self) -> &CommandModel {
        &self.metadata.model
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn actions(&self) -> &[u16] {
        &self.actions
    }

    pub fn value(&self, state: &OffsetState) -> f64 {
        self.values[self.metadata.grid.index(state)]
    }

    pub fn action(&self, state: &OffsetState) -> Option<u16> {
        match self.actions[self.metadata.grid.index(state)] {
            NO_ACTION => None,
            a => Some(a),
        }
    }

    pub fn command(&self, id: usize) -> Option<&CommandSpec> {
        self.metadata.model.commands().get(id)
    }

    /// Greedy command for the offset `target - hand` (clamped to the cuboid).
    pub fn query_offset(&self, offset: &Vector3<f64>, prev: Option<Direction>) -> QueryResult {
        let cells = self.metadata.grid.discretize(offset);
        let state = OffsetState::new(cells, prev);
        match self.action(&state) {
            None => QueryResult::Done,
            Some(a) => QueryResult::Command(a as usize),
        }
    }

    pub fn query(
        &self,
        hand: &Vector3<f64>,
        target: &Vector3<f64>,
        prev: Option<Direction>,
    ) -> QueryResult {
        self.query_offset(&(target - hand), prev)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = serde_json::to_vec(&self.metadata)?;
        w.write_all(POLICY_MAGIC)?;
        w.write_all(&POLICY_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 10);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for a in &self.actions {
            buf.extend_from_slice(&a.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| MdpError::BadPolicyFile(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != POLICY_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != POLICY_FORMAT_VERSION {
            return Err(MdpError::BadPolicyFile(format!(
                "unsupported version {version}"
            )));
        }
        let meta_len = u64::from_le_bytes(read_array(&mut r)?) as usize;
        if meta_len > 64 << 20 {
            return Err(bad("metadata block too large"));
        }
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)
            .map_err(|_| bad("truncated metadata"))?;
        let metadata: PolicyMetadata = serde_json::from_slice(&meta)?;
        let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
        if n != metadata.grid.n_states() {
            return Err(bad("state count does not match grid"));
        }
        let mut body = vec![0u8; n * 10];
        r.read_exact(&mut body)
            .map_err(|_| bad("truncated tables"))?;
        let (vals, acts) = body.split_at(n * 8);
        let values = vals
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let actions = acts
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
            .collect();
        Self::new(metadata, values, actions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// Structured-text export for inspection.
    pub fn to_json(&self) -> Result<String> {
        let export = JsonExport {
            metadata: &self.metadata,
            index_order: "prev-major (none,left,right,up,down,forward,backward), then z, y, x",
            values: &self.values,
            actions: self
                .actions
                .iter()
                .map(|&a| (a != NO_ACTION).then_some(a))
                .collect(),
        };
        Ok(serde_json::to_string(&export)?)
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| MdpError::BadPolicyFile("truncated header".into()))?;
    Ok(buf)
}
