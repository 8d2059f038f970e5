//! Transition datasets, expert/random mixing and the on-disk formats.
//!
//! # Dataset file layout (`RDXD`, version 1, all integers little-endian)
//!
//! | field                | type                                   |
//! |----------------------|----------------------------------------|
//! | magic                | `b"RDXD"`                              |
//! | version              | u16 = 1                                |
//! | role                 | u8 (0 unspecified, 1 expert, 2 suboptimal) |
//! | space kind           | u8 (0 tabular, 1 continuous)           |
//! | dim0, dim1           | u32, u32 (states/actions or state_dim/action_dim) |
//! | provenance length    | u32, followed by that many UTF-8 bytes |
//! | record count         | u64                                    |
//! | records              | tabular: `(s, a, s')` as 3 x u32; continuous: `s, a, s'` as f64 |
//! | initial-state count  | u64                                    |
//! | initial states       | tabular: u32 each; continuous: `dim0` f64 each |
//! | CRC32                | u32 over every preceding byte          |
//!
//! # MDP file layout (`RDXM`, version 1)
//!
//! magic, version u16, num_states u32, num_actions u32, gamma f64,
//! `p0[num_states]` f64, `T[s][a][s']` f64, CRC32 trailer.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::mdp::TabularMdp;

pub const DATASET_MAGIC: &[u8; 4] = b"RDXD";
pub const MDP_MAGIC: &[u8; 4] = b"RDXM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

/// What a dataset is used as. Suboptimal (`D^U`) datasets must carry
/// initial states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Unspecified,
    Expert,
    Suboptimal,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Unspecified => 0,
            Role::Expert => 1,
            Role::Suboptimal => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Role::Unspecified,
            1 => Role::Expert,
            2 => Role::Suboptimal,
            t => return Err(Error::Format(format!("unknown role tag {t}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceDescriptor {
    Tabular { num_states: usize, num_actions: usize },
    Continuous { state_dim: usize, action_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    pub num_states: usize,
    pub num_actions: usize,
    pub records: Vec<Transition>,
    pub initial_states: Vec<usize>,
}

/// Row-major continuous transitions: `states[i * state_dim..]` etc.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousData {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub next_states: Vec<f64>,
    pub initial_states: Vec<f64>,
}

impl ContinuousData {
    pub fn len(&self) -> usize {
        self.states.len() / self.state_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn num_initial(&self) -> usize {
        self.initial_states.len() / self.state_dim.max(1)
    }

    pub fn initial_state(&self, i: usize) -> &[f64] {
        &self.initial_states[i * self.state_dim..(i + 1) * self.state_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetBody {
    Tabular(TabularData),
    Continuous(ContinuousData),
}

/// `(s, a, s')` records plus an initial-state pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub role: Role,
    pub provenance: String,
    pub body: DatasetBody,
}

impl TransitionDataset {
    pub fn new(role: Role, provenance: impl Into<String>, body: DatasetBody) -> Self {
        Self { role, provenance: provenance.into(), body }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        match &self.body {
            DatasetBody::Tabular(t) => t.records.len(),
            DatasetBody::Continuous(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_initial(&self) -> usize {
        match &self.body {
            DatasetBody::Tabular(t) => t.initial_states.len(),
            DatasetBody::Continuous(c) => c.num_initial(),
        }
    }

    pub fn space(&self) -> SpaceDescriptor {
        match &self.body {
            DatasetBody::Tabular(t) => SpaceDescriptor::Tabular { num_states: t.num_states, num_actions: t.num_actions },
            DatasetBody::Continuous(c) => SpaceDescriptor::Continuous { state_dim: c.state_dim, action_dim: c.action_dim },
        }
    }

    pub fn tabular(&self) -> Result<&TabularData> {
        match &self.body {
            DatasetBody::Tabular(t) => Ok(t),
            DatasetBody::Continuous(_) => Err(invalid("expected a tabular dataset")),
        }
    }

    pub fn continuous(&self) -> Result<&ContinuousData> {
        match &self.body {
            DatasetBody::Continuous(c) => Ok(c),
            DatasetBody::Tabular(_) => Err(invalid("expected a continuous dataset")),
        }
    }

    /// Checks index bounds, shape consistency and the role-dependent
    /// requirements (suboptimal data needs initial states).
    pub fn validate(&self) -> Result<()> {
        match &self.body {
            DatasetBody::Tabular(t) => {
                for (i, r) in t.records.iter().enumerate() {
                    if r.state >= t.num_states || r.next_state >= t.num_states || r.action >= t.num_actions {
                        return Err(Error::Validation(format!("record {i} {r:?} out of bounds")));
                    }
                }
                if let Some(s) = t.initial_states.iter().find(|s| **s >= t.num_states) {
                    return Err(Error::Validation(format!("initial state {s} out of bounds")));
                }
            }
            DatasetBody::Continuous(c) => {
                if c.state_dim == 0 || c.action_dim == 0 {
                    return Err(Error::Validation("continuous dimensions must be positive".into()));
                }
                let n = c.states.len() / c.state_dim;
                if c.states.len() % c.state_dim != 0
                    || c.next_states.len() != c.states.len()
                    || c.actions.len() != n * c.action_dim
                    || c.initial_states.len() % c.state_dim != 0
                {
                    return Err(Error::Validation("continuous arrays have inconsistent lengths".into()));
                }
            }
        }
        if self.role == Role::Suboptimal && self.num_initial() == 0 {
            return Err(Error::Validation("suboptimal dataset has an empty initial-state pool".into()));
        }
        Ok(())
    }

    /// Empirical `(s, a)` counts, `[s][a]` layout.
    pub fn pair_counts(&self) -> Result<Vec<f64>> {
        let t = self.tabular()?;
        let mut counts = vec![0.0; t.num_states * t.num_actions];
        for r in &t.records {
            counts[r.state * t.num_actions + r.action] += 1.0;
        }
        Ok(counts)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut buf = Vec::new();
        encode_dataset(self, &mut buf)?;
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = verify_crc(bytes)?;
        let mut cur = Cursor::new(body);
        cur.magic(DATASET_MAGIC)?;
        let ds = decode_dataset(&mut cur)?;
        if !cur.is_done() {
            return Err(Error::Format(format!("{} trailing bytes before checksum", cur.remaining())));
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn encode_dataset(ds: &TransitionDataset, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(ds.role.tag());
    let u32_of = |x: usize, what: &str| -> Result<[u8; 4]> {
        u32::try_from(x)
            .map(u32::to_le_bytes)
            .map_err(|_| invalid(format!("{what} {x} does not fit in u32")))
    };
    match &ds.body {
        DatasetBody::Tabular(t) => {
            out.push(0);
            out.extend_from_slice(&u32_of(t.num_states, "num_states")?);
            out.extend_from_slice(&u32_of(t.num_actions, "num_actions")?);
        }
        DatasetBody::Continuous(c) => {
            out.push(1);
            out.extend_from_slice(&u32_of(c.state_dim, "state_dim")?);
            out.extend_from_slice(&u32_of(c.action_dim, "action_dim")?);
        }
    }
    out.extend_from_slice(&u32_of(ds.provenance.len(), "provenance length")?);
    out.extend_from_slice(ds.provenance.as_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    match &ds.body {
        DatasetBody::Tabular(t) => {
            for r in &t.records {
                out.extend_from_slice(&u32_of(r.state, "state")?);
                out.extend_from_slice(&u32_of(r.action, "action")?);
                out.extend_from_slice(&u32_of(r.next_state, "state")?);
            }
            out.extend_from_slice(&(t.initial_states.len() as u64).to_le_bytes());
            for s in &t.initial_states {
                out.extend_from_slice(&u32_of(*s, "state")?);
            }
        }
        DatasetBody::Continuous(c) => {
            for i in 0..c.len() {
                for x in c.state(i).iter().chain(c.action(i)).chain(c.next_state(i)) {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            out.extend_from_slice(&(c.num_initial() as u64).to_le_bytes());
            for x in &c.initial_states {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(())
}

fn decode_dataset(cur: &mut Cursor<'_>) -> Result<TransitionDataset> {
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let role = Role::from_tag(cur.u8()?)?;
    let kind = cur.u8()?;
    let dim0 = cur.u32()? as usize;
    let dim1 = cur.u32()? as usize;
    let plen = cur.u32()? as usize;
    let provenance = String::from_utf8(cur.bytes(plen)?.to_vec())
        .map_err(|_| Error::Format("provenance is not UTF-8".into()))?;
    let count = cur.len_prefix()?;
    let body = match kind {
        0 => {
            cur.expect_at_least(count, 12)?;
            let mut records = Vec::with_capacity(count);
            for _ in 0..count {
                let (s, a, s2) = (cur.u32()?, cur.u32()?, cur.u32()?);
                records.push(Transition { state: s as usize, action: a as usize, next_state: s2 as usize });
            }
            let n0 = cur.len_prefix()?;
            cur.expect_at_least(n0, 4)?;
            let initial_states = (0..n0).map(|_| cur.u32().map(|s| s as usize)).collect::<Result<_>>()?;
            DatasetBody::Tabular(TabularData { num_states: dim0, num_actions: dim1, records, initial_states })
        }
        1 => {
            if dim0 == 0 || dim1 == 0 {
                return Err(Error::Format("continuous dimensions must be positive".into()));
            }
            let per = 2 * dim0 + dim1;
            cur.expect_at_least(count, per * 8)?;
            let (mut states, mut actions, mut next_states) = (
                Vec::with_capacity(count * dim0),
                Vec::with_capacity(count * dim1),
                Vec::with_capacity(count * dim0),
            );
            for _ in 0..count {
                for _ in 0..dim0 {
                    states.push(cur.f64()?);
                }
                for _ in 0..dim1 {
                    actions.push(cur.f64()?);
                }
                for _ in 0..dim0 {
                    next_states.push(cur.f64()?);
                }
            }
            let n0 = cur.len_prefix()?;
            cur.expect_at_least(n0, dim0 * 8)?;
            let initial_states = (0..n0 * dim0).map(|_| cur.f64()).collect::<Result<_>>()?;
            DatasetBody::Continuous(ContinuousData {
                state_dim: dim0,
                action_dim: dim1,
                states,
                actions,
                next_states,
                initial_states,
            })
        }
        k => return Err(Error::Format(format!("unknown space kind {k}"))),
    };
    Ok(TransitionDataset { role, provenance, body })
}

/// Splits off and checks the CRC32 trailer, returning the covered bytes.
fn verify_crc(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(body)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.bytes(4)?;
        if m != expected {
            return Err(Error::Format(format!("bad magic {m:?}")));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn len_prefix(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length field overflows usize".into()))
    }

    /// Rejects length fields that claim more data than the buffer holds,
    /// before anything is allocated.
    fn expect_at_least(&self, count: usize, item_bytes: usize) -> Result<()> {
        match count.checked_mul(item_bytes) {
            Some(n) if n <= self.remaining() => Ok(()),
            _ => Err(Error::Format(format!(
                "length field {count} exceeds the {} remaining bytes",
                self.remaining()
            ))),
        }
    }
}

/// Serializes an MDP in the `RDXM` format.
pub fn write_mdp(mdp: &TabularMdp, w: &mut impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MDP_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(mdp.num_states() as u32).to_le_bytes());
    buf.extend_from_slice(&(mdp.num_actions() as u32).to_le_bytes());
    buf.extend_from_slice(&mdp.discount().to_le_bytes());
    for x in mdp.initial().iter().chain(mdp.transition()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_mdp(r: &mut impl Read) -> Result<TabularMdp> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let body = verify_crc(&bytes)?;
    let mut cur = Cursor::new(body);
    cur.magic(MDP_MAGIC)?;
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let ns = cur.u32()? as usize;
    let na = cur.u32()? as usize;
    let gamma = cur.f64()?;
    let n = ns
        .checked_mul(na)
        .and_then(|x| x.checked_mul(ns))
        .and_then(|x| x.checked_add(ns))
        .ok_or_else(|| Error::Format("MDP dimensions overflow".into()))?;
    cur.expect_at_least(n, 8)?;
    let initial = (0..ns).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    let transition = (0..ns * na * ns).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    if !cur.is_done() {
        return Err(Error::Format("trailing bytes in MDP file".into()));
    }
    TabularMdp::new(ns, na, transition, initial, gamma)
}

pub fn save_mdp(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_mdp(mdp, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_mdp(path: impl AsRef<Path>) -> Result<TabularMdp> {
    read_mdp(&mut std::fs::File::open(path)?)
}

/// Difficulty tag for an expert/random mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelTag {
    L1,
    L2,
    L3,
    L4,
    Custom,
}

impl LevelTag {
    /// `N^E / N^R` for the four standard levels.
    pub fn expert_fraction(self) -> Option<f64> {
        match self {
            LevelTag::L1 => Some(0.2),
            LevelTag::L2 => Some(0.15),
            LevelTag::L3 => Some(0.1),
            LevelTag::L4 => Some(0.05),
            LevelTag::Custom => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LevelTag::L1 => "L1",
            LevelTag::L2 => "L2",
            LevelTag::L3 => "L3",
            LevelTag::L4 => "L4",
            LevelTag::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "L1" => LevelTag::L1,
            "L2" => LevelTag::L2,
            "L3" => LevelTag::L3,
            "L4" => LevelTag::L4,
            "CUSTOM" => LevelTag::Custom,
            _ => return Err(invalid(format!("unknown level {s:?}"))),
        })
    }
}

/// How many expert and random transitions go into `D^U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixSpec {
    pub n_expert: usize,
    pub n_random: usize,
    pub level: LevelTag,
}

impl MixSpec {
    pub fn new(n_expert: usize, n_random: usize, level: LevelTag) -> Result<Self> {
        if n_expert == 0 && n_random == 0 {
            return Err(invalid("mixture needs at least one transition"));
        }
        Ok(Self { n_expert, n_random, level })
    }

    /// Standard level with `n_random` random transitions and
    /// `round(fraction * n_random)` expert ones.
    pub fn for_level(level: LevelTag, n_random: usize) -> Result<Self> {
        let frac = level
            .expert_fraction()
            .ok_or_else(|| invalid("custom level has no preset ratio"))?;
        Self::new((frac * n_random as f64).round() as usize, n_random, level)
    }
}

/// Subsamples without replacement from each pool, concatenates and shuffles.
/// The initial-state pool is the union of both pools' initial states.
pub fn mix_datasets(
    expert_pool: &TransitionDataset,
    random_pool: &TransitionDataset,
    spec: MixSpec,
    seed: u64,
) -> Result<TransitionDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if expert_pool.len() < spec.n_expert {
        return Err(invalid(format!(
            "expert pool has {} records, {} requested",
            expert_pool.len(),
            spec.n_expert
        )));
    }
    if random_pool.len() < spec.n_random {
        return Err(invalid(format!(
            "random pool has {} records, {} requested",
            random_pool.len(),
            spec.n_random
        )));
    }
    let pick = |n_pool: usize, n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        rand::seq::index::sample(rng, n_pool, n).into_vec()
    };
    let e_idx = pick(expert_pool.len(), spec.n_expert, &mut rng);
    let r_idx = pick(random_pool.len(), spec.n_random, &mut rng);
    let realized = if spec.n_random > 0 { spec.n_expert as f64 / spec.n_random as f64 } else { f64::INFINITY };
    let provenance = format!(
        "mix level={} n_expert={} n_random={} ratio={realized} seed={seed}",
        spec.level.name(),
        spec.n_expert,
        spec.n_random
    );
    let body = match (&expert_pool.body, &random_pool.body) {
        (DatasetBody::Tabular(e), DatasetBody::Tabular(r)) => {
            if (e.num_states, e.num_actions) != (r.num_states, r.num_actions) {
                return Err(Error::ShapeMismatch("pools have different spaces".into()));
            }
            let mut records: Vec<Transition> = e_idx
                .iter()
                .map(|&i| e.records[i])
                .chain(r_idx.iter().map(|&i| r.records[i]))
                .collect();
            records.shuffle(&mut rng);
            let initial_states = e.initial_states.iter().chain(&r.initial_states).copied().collect();
            DatasetBody::Tabular(TabularData { num_states: e.num_states, num_actions: e.num_actions, records, initial_states })
        }
        (DatasetBody::Continuous(e), DatasetBody::Continuous(r)) => {
            if (e.state_dim, e.action_dim) != (r.state_dim, r.action_dim) {
                return Err(Error::ShapeMismatch("pools have different spaces".into()));
            }
            let mut picks: Vec<(&ContinuousData, usize)> =
                e_idx.iter().map(|&i| (e, i)).chain(r_idx.iter().map(|&i| (r, i))).collect();
            picks.shuffle(&mut rng);
            let mut out = ContinuousData {
                state_dim: e.state_dim,
                action_dim: e.action_dim,
                states: Vec::with_capacity(picks.len() * e.state_dim),
                actions: Vec::with_capacity(picks.len() * e.action_dim),
                next_states: Vec::with_capacity(picks.len() * e.state_dim),
                initial_states: e.initial_states.iter().chain(&r.initial_states).copied().collect(),
            };
            for (src, i) in picks {
                out.states.extend_from_slice(src.state(i));
                out.actions.extend_from_slice(src.action(i));
                out.next_states.extend_from_slice(src.next_state(i));
            }
            DatasetBody::Continuous(out)
        }
        _ => return Err(Error::ShapeMismatch("cannot mix tabular and continuous pools".into())),
    };
    Ok(TransitionDataset { role: Role::Suboptimal, provenance, body })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_trajectories, TabularPolicy, Termination};

    fn tabular_pool(seed: u64, n: usize) -> TransitionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(6, 2, 0.9, &mut rng).unwrap();
        let pi = TabularPolicy::random(6, 2, &mut rng);
        sample_trajectories(&mdp, &pi, n, Termination::Geometric, seed).unwrap()
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let ds = tabular_pool(1, 300).with_role(Role::Suboptimal);
        let bytes = ds.to_bytes().unwrap();
        let back = TransitionDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(&bytes[..4], b"RDXD");
    }

    #[test]
    fn continuous_round_trip() {
        let ds = TransitionDataset::new(
            Role::Expert,
            "toy",
            DatasetBody::Continuous(ContinuousData {
                state_dim: 2,
                action_dim: 1,
                states: vec![0.0, 1.0, 2.0, 3.0],
                actions: vec![0.5, -0.5],
                next_states: vec![1.0, 2.0, 3.0, 4.0],
                initial_states: vec![0.0, 1.0],
            }),
        );
        let back = TransitionDataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn corrupted_length_field_is_rejected() {
        let ds = tabular_pool(2, 50);
        let mut bytes = ds.to_bytes().unwrap();
        // Record count sits right after the provenance string.
        let plen = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let off = 20 + plen;
        bytes[off..off + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        // Fix the checksum so only the length check can catch it.
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(TransitionDataset::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn checksum_and_truncation_and_version() {
        let ds = tabular_pool(3, 40);
        let bytes = ds.to_bytes().unwrap();
        let mut flipped = bytes.clone();
        flipped[30] ^= 0xff;
        assert!(matches!(TransitionDataset::from_bytes(&flipped), Err(Error::Checksum { .. })));
        assert!(TransitionDataset::from_bytes(&bytes[..bytes.len() / 2]).is_err());

        let mut v2 = bytes.clone();
        v2[4..6].copy_from_slice(&2u16.to_le_bytes());
        let n = v2.len();
        let crc = crc32fast::hash(&v2[..n - 4]);
        v2[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(TransitionDataset::from_bytes(&v2), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn suboptimal_without_initial_states_fails_validation() {
        let mut ds = tabular_pool(4, 20).with_role(Role::Suboptimal);
        if let DatasetBody::Tabular(t) = &mut ds.body {
            t.initial_states.clear();
        }
        let mut bytes = Vec::new();
        // Bypass write-side checks: encoding does not validate.
        ds.write_to(&mut bytes).unwrap();
        assert!(matches!(TransitionDataset::from_bytes(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn mixing_counts_ratio_and_determinism() {
        let expert = tabular_pool(5, 2000);
        let random = tabular_pool(6, 5000);
        let spec = MixSpec::for_level(LevelTag::L4, 4000).unwrap();
        assert_eq!(spec.n_expert, 200);
        let a = mix_datasets(&expert, &random, spec, 9).unwrap();
        let b = mix_datasets(&expert, &random, spec, 9).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(a.len(), 4200);
        assert!(a.provenance.contains("ratio=0.05"));

        let pure = mix_datasets(&expert, &random, MixSpec::new(100, 0, LevelTag::Custom).unwrap(), 1).unwrap();
        let pool: std::collections::HashSet<_> = expert.tabular().unwrap().records.iter().collect();
        assert!(pure.tabular().unwrap().records.iter().all(|r| pool.contains(r)));

        assert!(mix_datasets(&expert, &random, MixSpec::new(3000, 0, LevelTag::Custom).unwrap(), 1).is_err());
    }

    #[test]
    fn mdp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = TabularMdp::random(3, 2, 0.95, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_mdp(&mdp, &mut buf).unwrap();
        assert_eq!(read_mdp(&mut buf.as_slice()).unwrap(), mdp);
        buf[10] ^= 1;
        assert!(read_mdp(&mut buf.as_slice()).is_err());
    }
}
