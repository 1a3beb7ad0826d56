//! Simulated proof-of-stake chain.
//!
//! A single producer appends hash-chained blocks with instant finality.
//! Blocks carry power-table requests, protocol broadcasts and key
//! announcements. The flat model is used throughout: one participant is
//! one unit of power.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{hash_to_scalar, tagged_hash, GroupPoint, Hash32, HashTag, Scalar};
use crate::net::{Channel, Delivery, Index, PrivateMessage};

pub type ParticipantId = u32;

pub const STORE_DUMP_FORMAT: &str = "pikachu-store";
pub const STORE_DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub id: ParticipantId,
    pub pos_key: GroupPoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    pub index: u32,
    /// Sorted by id. A member's protocol index is its 1-based position.
    pub members: Vec<Member>,
    pub formed_at: u64,
}

impl Configuration {
    pub fn new(index: u32, mut members: Vec<Member>, formed_at: u64) -> Self {
        members.sort();
        members.dedup_by_key(|m| m.id);
        Configuration {
            index,
            members,
            formed_at,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<ParticipantId> {
        self.members.iter().map(|m| m.id).collect()
    }

    pub fn index_of(&self, id: ParticipantId) -> Option<Index> {
        self.members
            .iter()
            .position(|m| m.id == id)
            .map(|p| p as Index + 1)
    }

    pub fn id_at(&self, index: Index) -> Option<ParticipantId> {
        self.members.get((index as usize).checked_sub(1)?).map(|m| m.id)
    }
}

/// `|C_a △ C_b|` over member ids.
pub fn symmetric_difference(a: &Configuration, b: &Configuration) -> usize {
    let x: BTreeSet<_> = a.ids().into_iter().collect();
    let y: BTreeSet<_> = b.ids().into_iter().collect();
    x.symmetric_difference(&y).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum PowerRequest {
    Join { id: ParticipantId, pos_key: GroupPoint },
    Leave { id: ParticipantId },
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerError {
    #[error("participant {0} is already a member")]
    AlreadyMember(ParticipantId),
    #[error("participant {0} is not a member")]
    NotMember(ParticipantId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PowerTable {
    members: BTreeMap<ParticipantId, GroupPoint>,
    churn: u32,
}

impl PowerTable {
    pub fn new(members: &[Member]) -> Self {
        PowerTable {
            members: members.iter().map(|m| (m.id, m.pos_key)).collect(),
            churn: 0,
        }
    }

    /// Applies a request; every accepted request adds one to the churn
    /// counter, so a leave followed by a rejoin counts twice.
    pub fn apply(&mut self, req: &PowerRequest) -> Result<(), PowerError> {
        match *req {
            PowerRequest::Join { id, pos_key } => {
                if self.members.contains_key(&id) {
                    return Err(PowerError::AlreadyMember(id));
                }
                self.members.insert(id, pos_key);
            }
            PowerRequest::Leave { id } => {
                if self.members.remove(&id).is_none() {
                    return Err(PowerError::NotMember(id));
                }
            }
        }
        self.churn += 1;
        Ok(())
    }

    pub fn churn(&self) -> u32 {
        self.churn
    }

    pub fn contains(&self, id: ParticipantId) -> bool {
        self.members.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn snapshot(&self, index: u32, formed_at: u64) -> Configuration {
        Configuration::new(
            index,
            self.members
                .iter()
                .map(|(&id, &pos_key)| Member { id, pos_key })
                .collect(),
            formed_at,
        )
    }

    fn reset_churn(&mut self) {
        self.churn = 0;
    }
}

/// A new configuration frozen at the block holding the `u`-th request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigEvent {
    pub config: Configuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyAnnouncement {
    pub config: u32,
    pub pk: GroupPoint,
    /// Height whose block hash is the checkpoint commitment.
    pub formed_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum PosMessage {
    Power(PowerRequest),
    CommitPk {
        id: ParticipantId,
        commitment: Hash32,
    },
    Announce(KeyAnnouncement),
    Protocol {
        sender: ParticipantId,
        config: u32,
        #[serde(with = "crate::codec::hex_bytes")]
        payload: Vec<u8>,
    },
}

impl PosMessage {
    fn write(&self, w: &mut Writer) {
        match self {
            PosMessage::Power(PowerRequest::Join { id, pos_key }) => {
                w.u8(1).u32(*id).point(pos_key);
            }
            PosMessage::Power(PowerRequest::Leave { id }) => {
                w.u8(2).u32(*id);
            }
            PosMessage::CommitPk { id, commitment } => {
                w.u8(3).u32(*id).hash(commitment);
            }
            PosMessage::Announce(a) => {
                w.u8(4).u32(a.config).point(&a.pk).u64(a.formed_at);
            }
            PosMessage::Protocol {
                sender,
                config,
                payload,
            } => {
                w.u8(5).u32(*sender).u32(*config).bytes(payload);
            }
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => PosMessage::Power(PowerRequest::Join {
                id: r.u32()?,
                pos_key: r.point()?,
            }),
            2 => PosMessage::Power(PowerRequest::Leave { id: r.u32()? }),
            3 => PosMessage::CommitPk {
                id: r.u32()?,
                commitment: r.hash()?,
            },
            4 => PosMessage::Announce(KeyAnnouncement {
                config: r.u32()?,
                pk: r.point()?,
                formed_at: r.u64()?,
            }),
            5 => PosMessage::Protocol {
                sender: r.u32()?,
                config: r.u32()?,
                payload: r.bytes()?.to_vec(),
            },
            k => return Err(DecodeError::UnknownKind(k)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosBlock {
    pub height: u64,
    pub parent: Hash32,
    pub beacon: Scalar,
    pub messages: Vec<PosMessage>,
}

impl PosBlock {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.height)
            .hash(&self.parent)
            .scalar(&self.beacon)
            .u32(self.messages.len() as u32);
        for m in &self.messages {
            m.write(&mut w);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let height = r.u64()?;
        let parent = r.hash()?;
        let beacon = r.scalar()?;
        let count = r.count(1)?;
        let messages = (0..count)
            .map(|_| PosMessage::read(&mut r))
            .collect::<Result<_, _>>()?;
        r.finish()?;
        Ok(PosBlock {
            height,
            parent,
            beacon,
            messages,
        })
    }

    pub fn hash(&self) -> Hash32 {
        tagged_hash(HashTag::Block, &self.encode())
    }
}

/// `RB_h` for a chain seeded with `seed`.
pub fn beacon_value(seed: u64, height: u64) -> Scalar {
    let mut data = [0u8; 16];
    data[..8].copy_from_slice(&seed.to_be_bytes());
    data[8..].copy_from_slice(&height.to_be_bytes());
    hash_to_scalar(HashTag::Beacon, &data)
}

/// Whether every block names its predecessor's hash and heights are dense.
pub fn check_linkage(blocks: &[PosBlock]) -> bool {
    blocks.iter().enumerate().all(|(h, b)| {
        b.height == h as u64 && (h == 0 || b.parent == blocks[h - 1].hash())
    })
}

/// Key announcements in chain order with their inclusion height.
pub fn announcements(blocks: &[PosBlock]) -> Vec<(u64, KeyAnnouncement)> {
    blocks
        .iter()
        .flat_map(|b| {
            b.messages.iter().filter_map(move |m| match m {
                PosMessage::Announce(a) => Some((b.height, *a)),
                _ => None,
            })
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PosError {
    #[error("height {requested} is beyond the tip {tip}")]
    FutureHeight { requested: u64, tip: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRequest {
    pub height: u64,
    pub request: PowerRequest,
    pub error: PowerError,
}

#[derive(Debug, Clone)]
pub struct PosChain {
    seed: u64,
    delta: u64,
    churn_threshold: u32,
    blocks: Vec<PosBlock>,
    /// `(inclusion height, message)` in submission order.
    pending: Vec<(u64, PosMessage)>,
    table: PowerTable,
    next_config: u32,
    events: VecDeque<ReconfigEvent>,
    rejected: Vec<RejectedRequest>,
}

impl PosChain {
    /// Genesis (height 0) lists the initial members, so its hash commits to
    /// the starting configuration.
    pub fn new(seed: u64, genesis: &[Member], churn_threshold: u32, delta: u64) -> Self {
        let mut members = genesis.to_vec();
        members.sort();
        let block = PosBlock {
            height: 0,
            parent: Hash32::default(),
            beacon: beacon_value(seed, 0),
            messages: members
                .iter()
                .map(|m| {
                    PosMessage::Power(PowerRequest::Join {
                        id: m.id,
                        pos_key: m.pos_key,
                    })
                })
                .collect(),
        };
        PosChain {
            seed,
            delta: delta.max(1),
            churn_threshold: churn_threshold.max(1),
            blocks: vec![block],
            pending: Vec::new(),
            table: PowerTable::new(&members),
            next_config: 1,
            events: VecDeque::new(),
            rejected: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn blocks(&self) -> &[PosBlock] {
        &self.blocks
    }

    pub fn block(&self, height: u64) -> Option<&PosBlock> {
        self.blocks.get(height as usize)
    }

    pub fn block_hash(&self, height: u64) -> Option<Hash32> {
        self.block(height).map(PosBlock::hash)
    }

    pub fn power_table(&self) -> &PowerTable {
        &self.table
    }

    pub fn rejected(&self) -> &[RejectedRequest] {
        &self.rejected
    }

    pub fn genesis_config(&self) -> Configuration {
        let members = self.blocks[0]
            .messages
            .iter()
            .filter_map(|m| match m {
                PosMessage::Power(PowerRequest::Join { id, pos_key }) => Some(Member {
                    id: *id,
                    pos_key: *pos_key,
                }),
                _ => None,
            })
            .collect();
        Configuration::new(0, members, 0)
    }

    pub fn beacon(&self, height: u64) -> Result<Scalar, PosError> {
        if height > self.height() {
            return Err(PosError::FutureHeight {
                requested: height,
                tip: self.height(),
            });
        }
        Ok(beacon_value(self.seed, height))
    }

    /// Queues `msg`; it lands in the block `Δ` heights above the tip.
    pub fn submit(&mut self, msg: PosMessage) -> u64 {
        let at = self.height() + self.delta;
        self.pending.push((at, msg));
        at
    }

    pub fn produce_block(&mut self) -> &PosBlock {
        let height = self.height() + 1;
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|(at, _)| *at <= height);
        self.pending = later;
        let messages: Vec<PosMessage> = due.into_iter().map(|(_, m)| m).collect();
        for m in &messages {
            if let PosMessage::Power(req) = m {
                match self.table.apply(req) {
                    Ok(()) => {
                        if self.table.churn() >= self.churn_threshold {
                            let config = self.table.snapshot(self.next_config, height);
                            self.next_config += 1;
                            self.table.reset_churn();
                            self.events.push_back(ReconfigEvent { config });
                        }
                    }
                    Err(error) => self.rejected.push(RejectedRequest {
                        height,
                        request: *req,
                        error,
                    }),
                }
            }
        }
        let parent = self.blocks[height as usize - 1].hash();
        self.blocks.push(PosBlock {
            height,
            parent,
            beacon: beacon_value(self.seed, height),
            messages,
        });
        &self.blocks[height as usize]
    }

    pub fn produce_blocks(&mut self, count: u64) {
        for _ in 0..count {
            self.produce_block();
        }
    }

    pub fn take_event(&mut self) -> Option<ReconfigEvent> {
        self.events.pop_front()
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// First public-key commitment posted by `id`.
    pub fn commitment_of(&self, id: ParticipantId) -> Option<Hash32> {
        self.blocks.iter().flat_map(|b| &b.messages).find_map(|m| match m {
            PosMessage::CommitPk { id: who, commitment } if *who == id => Some(*commitment),
            _ => None,
        })
    }

    pub fn announcements(&self) -> Vec<(u64, KeyAnnouncement)> {
        announcements(&self.blocks)
    }
}

/// Protocol transport over the PoS chain for one configuration.
///
/// Broadcasts are chain messages. Private messages travel point to point
/// and are handed over when the round closes. A round lasts `Δ` blocks, or
/// up to `timeout` blocks while an expected sender is still silent.
pub struct PosChannel<'a> {
    chain: &'a mut PosChain,
    config: &'a Configuration,
    timeout: u64,
    private: Vec<PrivateMessage>,
    blocks_used: u64,
}

impl<'a> PosChannel<'a> {
    pub fn new(chain: &'a mut PosChain, config: &'a Configuration, timeout: u64) -> Self {
        PosChannel {
            chain,
            config,
            timeout,
            private: Vec::new(),
            blocks_used: 0,
        }
    }

    pub fn blocks_used(&self) -> u64 {
        self.blocks_used
    }

    fn collect(&mut self, from: u64, into: &mut Vec<(Index, Vec<u8>)>) {
        for b in &self.chain.blocks()[from as usize..] {
            for m in &b.messages {
                if let PosMessage::Protocol {
                    sender,
                    config,
                    payload,
                } = m
                {
                    if *config != self.config.index {
                        continue;
                    }
                    if let Some(i) = self.config.index_of(*sender) {
                        into.push((i, payload.clone()));
                    }
                }
            }
        }
    }
}

impl Channel for PosChannel<'_> {
    fn broadcast(&mut self, sender: Index, payload: Vec<u8>) {
        if let Some(id) = self.config.id_at(sender) {
            self.chain.submit(PosMessage::Protocol {
                sender: id,
                config: self.config.index,
                payload,
            });
        }
    }

    fn send_private(&mut self, sender: Index, recipient: Index, payload: Vec<u8>) {
        self.private.push(PrivateMessage {
            sender,
            recipient,
            payload,
        });
    }

    fn end_round(&mut self) -> Delivery {
        self.end_round_expecting(&[])
    }

    fn end_round_expecting(&mut self, expected: &[Index]) -> Delivery {
        let start = self.chain.height() + 1;
        let mut elapsed = 0;
        let mut broadcasts = Vec::new();
        loop {
            self.chain.produce_block();
            elapsed += 1;
            if elapsed < self.chain.delta() {
                continue;
            }
            broadcasts.clear();
            self.collect(start, &mut broadcasts);
            let heard: BTreeSet<Index> = broadcasts.iter().map(|(i, _)| *i).collect();
            if elapsed >= self.timeout.max(self.chain.delta())
                || expected.iter().all(|i| heard.contains(i))
            {
                break;
            }
        }
        self.blocks_used += elapsed;
        Delivery {
            broadcasts,
            private: std::mem::take(&mut self.private),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("no content stored under {0}")]
    NotFound(Hash32),
    #[error("content under {0} does not hash to its identifier")]
    Corrupted(Hash32),
    #[error("malformed store dump: {0}")]
    Parse(String),
}

pub fn content_id(payload: &[u8]) -> Hash32 {
    tagged_hash(HashTag::Cid, payload)
}

/// In-process content-addressable store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContentStore {
    entries: BTreeMap<Hash32, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoreEntry {
    cid: Hash32,
    #[serde(with = "crate::codec::hex_bytes")]
    payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoreDump {
    format: String,
    version: u32,
    entries: Vec<StoreEntry>,
}

impl ContentStore {
    pub fn new() -> Self {
        ContentStore::default()
    }

    pub fn put(&mut self, payload: &[u8]) -> Hash32 {
        let cid = content_id(payload);
        self.entries.insert(cid, payload.to_vec());
        cid
    }

    /// Returns the payload after re-checking it against `cid`.
    pub fn get(&self, cid: &Hash32) -> Result<&[u8], StoreError> {
        let payload = self.entries.get(cid).ok_or(StoreError::NotFound(*cid))?;
        if content_id(payload) != *cid {
            return Err(StoreError::Corrupted(*cid));
        }
        Ok(payload)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overwrites an entry without rehashing. Test and adversary hook.
    pub fn insert_unchecked(&mut self, cid: Hash32, payload: Vec<u8>) {
        self.entries.insert(cid, payload);
    }

    pub fn to_json(&self) -> String {
        let dump = StoreDump {
            format: STORE_DUMP_FORMAT.into(),
            version: STORE_DUMP_VERSION,
            entries: self
                .entries
                .iter()
                .map(|(cid, payload)| StoreEntry {
                    cid: *cid,
                    payload: payload.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("store dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let dump: StoreDump =
            serde_json::from_str(text).map_err(|e| StoreError::Parse(e.to_string()))?;
        if dump.format != STORE_DUMP_FORMAT || dump.version != STORE_DUMP_VERSION {
            return Err(StoreError::Parse(format!(
                "unsupported header {:?} v{}",
                dump.format, dump.version
            )));
        }
        let mut store = ContentStore::new();
        for e in dump.entries {
            if content_id(&e.payload) != e.cid {
                return Err(StoreError::Corrupted(e.cid));
            }
            store.entries.insert(e.cid, e.payload);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(id: u32) -> Member {
        Member {
            id,
            pos_key: GroupPoint::mul_base(&Scalar::from_u64(id as u64 + 100)),
        }
    }

    fn chain(u: u32) -> PosChain {
        PosChain::new(9, &[member(1), member(2), member(3)], u, 1)
    }

    #[test]
    fn join_leave_and_rejection() {
        let mut t = PowerTable::new(&[member(1), member(2), member(3)]);
        t.apply(&PowerRequest::Join { id: 4, pos_key: member(4).pos_key }).unwrap();
        assert_eq!(t.snapshot(0, 0).ids(), vec![1, 2, 3, 4]);
        assert_eq!(t.apply(&PowerRequest::Leave { id: 9 }), Err(PowerError::NotMember(9)));
        assert_eq!(t.churn(), 1);
        t.apply(&PowerRequest::Leave { id: 1 }).unwrap();
        t.apply(&PowerRequest::Join { id: 1, pos_key: member(1).pos_key }).unwrap();
        assert_eq!(t.churn(), 3);
    }

    #[test]
    fn symmetric_difference_counts() {
        let a = Configuration::new(0, vec![member(1), member(2), member(3)], 0);
        let b = Configuration::new(1, vec![member(2), member(3), member(4)], 0);
        assert_eq!(symmetric_difference(&a, &b), 2);
        assert_eq!(symmetric_difference(&a, &a), 0);
    }

    #[test]
    fn trigger_fires_at_uth_request() {
        let mut c = chain(3);
        c.submit(PosMessage::Power(PowerRequest::Join { id: 4, pos_key: member(4).pos_key }));
        c.submit(PosMessage::Power(PowerRequest::Join { id: 5, pos_key: member(5).pos_key }));
        c.produce_block();
        assert!(c.take_event().is_none());
        c.produce_block();
        c.submit(PosMessage::Power(PowerRequest::Leave { id: 1 }));
        let h = c.produce_block().height;
        let ev = c.take_event().unwrap();
        assert_eq!(ev.config.formed_at, h);
        assert_eq!(ev.config.ids(), vec![2, 3, 4, 5]);
        assert_eq!(ev.config.index, 1);
    }

    #[test]
    fn delta_and_ordering() {
        let mut c = PosChain::new(1, &[member(1)], 5, 2);
        c.submit(PosMessage::CommitPk { id: 1, commitment: Hash32([1; 32]) });
        c.submit(PosMessage::CommitPk { id: 2, commitment: Hash32([2; 32]) });
        assert!(c.produce_block().messages.is_empty());
        let b = c.produce_block();
        assert_eq!(b.messages.len(), 2);
        assert!(matches!(b.messages[0], PosMessage::CommitPk { id: 1, .. }));
        assert_eq!(c.commitment_of(2), Some(Hash32([2; 32])));
    }

    #[test]
    fn beacon_agrees_and_rejects_future() {
        let mut c = chain(2);
        c.produce_blocks(2);
        assert_eq!(c.beacon(1).unwrap(), c.beacon(1).unwrap());
        assert_ne!(c.beacon(1).unwrap(), c.beacon(2).unwrap());
        assert_eq!(c.beacon(1).unwrap(), c.block(1).unwrap().beacon);
        assert!(matches!(c.beacon(3), Err(PosError::FutureHeight { .. })));
    }

    #[test]
    fn blocks_link_and_round_trip() {
        let mut c = chain(2);
        c.submit(PosMessage::Announce(KeyAnnouncement {
            config: 0,
            pk: member(7).pos_key,
            formed_at: 0,
        }));
        c.produce_blocks(3);
        assert!(check_linkage(c.blocks()));
        for b in c.blocks() {
            assert_eq!(&PosBlock::decode(&b.encode()).unwrap(), b);
        }
        let mut forged = c.blocks().to_vec();
        forged[1].messages.clear();
        assert!(!check_linkage(&forged));
        assert_eq!(c.announcements().len(), 1);
    }

    #[test]
    fn store_round_trip_and_tamper() {
        let mut s = ContentStore::new();
        let cid = s.put(b"config");
        assert_eq!(s.put(b"config"), cid);
        assert_eq!(s.get(&cid).unwrap(), b"config");
        assert_eq!(s.get(&Hash32([0; 32])), Err(StoreError::NotFound(Hash32([0; 32]))));
        let back = ContentStore::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        s.insert_unchecked(cid, b"evil".to_vec());
        assert_eq!(s.get(&cid), Err(StoreError::Corrupted(cid)));
    }

    #[test]
    fn channel_waits_for_silent_sender_until_timeout() {
        let mut c = chain(9);
        let config = c.genesis_config();
        let mut ch = PosChannel::new(&mut c, &config, 4);
        ch.broadcast(1, vec![1]);
        let d = ch.end_round_expecting(&[1]);
        assert_eq!(d.broadcasts, vec![(1, vec![1])]);
        assert_eq!(ch.blocks_used(), 1);
        ch.broadcast(2, vec![2]);
        let d = ch.end_round_expecting(&[2, 3]);
        assert_eq!(d.broadcasts.len(), 1);
        assert_eq!(ch.blocks_used(), 5);
    }
}
