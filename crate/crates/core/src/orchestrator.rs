//! The checkpointing protocol.
//!
//! A reconfiguration event starts a DKG among the new members; the result
//! is tweaked with the hash of the PoS block at which the configuration
//! formed. The outgoing configuration then threshold-signs a transaction
//! moving the funds from its own key to the new one, with the configuration
//! cid in an `OP_RETURN` output.
//!
//! Numbering: checkpoint `j` is the transaction paying `Q_j`. Checkpoint 0
//! is the initial transaction built by the funding protocol; checkpoint
//! `j ≥ 1` is signed by configuration `j − 1`.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{tagged_hash, GroupPoint, Hash32, HashTag, Keypair, Scalar};
use crate::dkg::{run_dkg, DkgError, DkgFault, DkgRun};
use crate::frost::{
    participant_rng, run_signing, CommitmentBoard, FrostError, SignerState, SigningFault,
    SigningRequest, SigningRun,
};
use crate::ledger::{
    Destination, LedgerBackend, LedgerTx, Outpoint, Refund, Rejection, SimChain, Submission,
    TxOutput, DEFAULT_FEE,
};
use crate::net::Index;
use crate::pos::{
    Configuration, ContentStore, KeyAnnouncement, Member, ParticipantId, PosChain, PosChannel,
    PosMessage,
};
use crate::taproot::{tweak_pubkey, tweak_signature, verify_key_path, TaprootKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    /// Accepted join/leave requests that trigger a new configuration.
    pub u: u32,
    /// Adversarial fraction per configuration, below one half.
    pub f: f64,
    /// Configurations after which old keys are assumed compromised.
    pub lag: u32,
    /// PoS blocks allotted to a DKG.
    pub y_wait: u64,
    /// Ledger height before which funding must be confirmed.
    pub h0: u64,
    pub settlement_depth: u64,
    /// Ledger height from which unspent funding can be refunded.
    pub release: u64,
    pub fee: u64,
    /// PoS blocks a round waits for silent participants.
    pub timeout: u64,
    pub preprocess_count: usize,
    /// PoS blocks until a broadcast is included.
    pub delta: u64,
    /// Bound on the symmetric difference of consecutive configurations.
    pub churn_bound: u32,
    pub reward_multiplier: u64,
    pub remove_misbehaving: bool,
    pub funding_amount: u64,
    pub initial_coins: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            u: 2,
            f: 0.33,
            lag: 2,
            y_wait: 20,
            h0: 10,
            settlement_depth: 6,
            release: 100,
            fee: DEFAULT_FEE,
            timeout: 10,
            preprocess_count: 4,
            delta: 1,
            churn_bound: 4,
            reward_multiplier: 2,
            remove_misbehaving: false,
            funding_amount: 10_000,
            initial_coins: 100_000,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |msg: &str| Err(OrchestratorError::InvalidParams(msg.to_string()));
        if !(0.0..0.5).contains(&self.f) {
            return bad("f must lie in [0, 0.5)");
        }
        if self.u == 0 {
            return bad("u must be at least 1");
        }
        if self.delta == 0 {
            return bad("delta must be at least 1");
        }
        if self.timeout < self.delta {
            return bad("timeout must be at least delta");
        }
        if self.y_wait < 3 * self.delta {
            return bad("y_wait must cover the three DKG rounds");
        }
        if self.preprocess_count == 0 {
            return bad("preprocess_count must be at least 1");
        }
        if self.release <= self.h0 + self.settlement_depth {
            return bad("release must come after h0 + settlement_depth");
        }
        if self.funding_amount == 0 || self.initial_coins < self.funding_amount + self.fee {
            return bad("initial_coins must cover funding_amount plus fee");
        }
        Ok(())
    }

    /// `t = max(⌊n/2⌋ + 1, ⌊f·n⌋ + 1)`, used for both the DKG and the
    /// signer count.
    pub fn signing_threshold(&self, n: usize) -> usize {
        let by_majority = n / 2 + 1;
        let by_fraction = (self.f * n as f64).floor() as usize + 1;
        by_majority.max(by_fraction).min(n.max(1))
    }

    /// Largest number of corrupt members tolerated in a configuration.
    pub fn max_corrupt(&self, n: usize) -> usize {
        (self.f * n as f64).floor() as usize
    }

    pub fn reward(&self) -> u64 {
        self.fee * self.reward_multiplier
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dkg failed: {0}")]
    Dkg(#[from] DkgError),
    #[error("signing failed: {0}")]
    Frost(#[from] FrostError),
    #[error("dkg used {used} blocks, allowance is {y_wait}")]
    DkgOverran { used: u64, y_wait: u64 },
    #[error("funding exhausted: {available} available, fee {fee}")]
    FundingExhausted { available: u64, fee: u64 },
    #[error("ledger rejected transaction: {0}")]
    Rejected(#[from] Rejection),
    #[error("no output at the initial key was confirmed before h0")]
    NoInitialFunding,
    #[error("aggregated signature does not verify under the tweaked key")]
    BadAggregate,
    #[error("configuration block at height {0} is unknown")]
    UnknownBlock(u64),
}

// ---------------------------------------------------------------------------
// Configuration payload

/// What the cid in a checkpoint points to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigPayload {
    pub index: u32,
    pub formed_at: u64,
    pub members: Vec<Member>,
    pub pk: GroupPoint,
    pub ckpt: Hash32,
}

const PAYLOAD_VERSION: u8 = 1;

impl ConfigPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(PAYLOAD_VERSION)
            .u32(self.index)
            .u64(self.formed_at)
            .u32(self.members.len() as u32);
        for m in &self.members {
            w.u32(m.id).point(&m.pos_key);
        }
        w.point(&self.pk).hash(&self.ckpt);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        if r.u8()? != PAYLOAD_VERSION {
            return Err(DecodeError::Invalid("configuration payload version"));
        }
        let index = r.u32()?;
        let formed_at = r.u64()?;
        let count = r.count(37)?;
        let members = (0..count)
            .map(|_| {
                Ok(Member {
                    id: r.u32()?,
                    pos_key: r.point()?,
                })
            })
            .collect::<Result<Vec<_>, DecodeError>>()?;
        let pk = r.point()?;
        let ckpt = r.hash()?;
        r.finish()?;
        Ok(ConfigPayload {
            index,
            formed_at,
            members,
            pk,
            ckpt,
        })
    }

    pub fn taproot_key(&self) -> TaprootKey {
        tweak_pubkey(&self.pk, &self.ckpt)
    }
}

pub fn publish_config(store: &mut ContentStore, payload: &ConfigPayload) -> Hash32 {
    store.put(&payload.encode())
}

// ---------------------------------------------------------------------------
// Key material

/// Everything the members of one configuration hold after their DKG.
#[derive(Debug, Clone)]
pub struct ConfigKeys {
    pub config: Configuration,
    pub threshold: usize,
    pub group_key: GroupPoint,
    pub ckpt: Hash32,
    pub taproot: TaprootKey,
    pub qualified: Vec<Index>,
    pub verification_shares: BTreeMap<Index, GroupPoint>,
    shares: BTreeMap<Index, Scalar>,
    signers: BTreeMap<Index, SignerState>,
    board: CommitmentBoard,
}

impl ConfigKeys {
    pub fn from_dkg(config: Configuration, threshold: usize, run: &DkgRun, ckpt: Hash32) -> Option<Self> {
        let first = run.results.values().next()?;
        let group_key = first.group_key;
        let shares: BTreeMap<Index, Scalar> =
            run.results.iter().map(|(i, r)| (*i, r.share)).collect();
        let signers = shares
            .iter()
            .map(|(i, s)| (*i, SignerState::new(*i, *s)))
            .collect();
        Some(ConfigKeys {
            threshold,
            group_key,
            ckpt,
            taproot: tweak_pubkey(&group_key, &ckpt),
            qualified: first.qualified.iter().copied().collect(),
            verification_shares: first.verification_shares(),
            shares,
            signers,
            board: CommitmentBoard::default(),
            config,
        })
    }

    pub fn output_key(&self) -> GroupPoint {
        self.taproot.output
    }

    /// Secret shares of every member that finished the DKG.
    pub fn shares(&self) -> &BTreeMap<Index, Scalar> {
        &self.shares
    }

    pub fn payload(&self) -> ConfigPayload {
        ConfigPayload {
            index: self.config.index,
            formed_at: self.config.formed_at,
            members: self.config.members.clone(),
            pk: self.group_key,
            ckpt: self.ckpt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KeyGeneration {
    pub keys: ConfigKeys,
    pub run: DkgRun,
    pub started_at: u64,
    pub finished_at: u64,
}

/// Runs the DKG for `config` over the PoS chain and announces the
/// resulting key.
pub fn on_reconfig<R: RngCore + ?Sized>(
    pos: &mut PosChain,
    config: &Configuration,
    params: &ProtocolParams,
    faults: &BTreeMap<Index, DkgFault>,
    rng: &mut R,
) -> Result<KeyGeneration, OrchestratorError> {
    let n = config.len();
    let t = params.signing_threshold(n);
    let started_at = pos.height();
    let ckpt = pos
        .block_hash(config.formed_at)
        .ok_or(OrchestratorError::UnknownBlock(config.formed_at))?;
    let (run, used) = {
        let mut channel = PosChannel::new(pos, config, params.timeout);
        let run = run_dkg(&mut channel, n as u32, t as u32, faults, rng)?;
        (run, channel.blocks_used())
    };
    if used > params.y_wait {
        return Err(OrchestratorError::DkgOverran {
            used,
            y_wait: params.y_wait,
        });
    }
    let keys = ConfigKeys::from_dkg(config.clone(), t, &run, ckpt).ok_or(
        OrchestratorError::Dkg(DkgError::Unrecoverable {
            qualified: 0,
            threshold: t as u32,
        }),
    )?;
    pos.submit(PosMessage::Announce(KeyAnnouncement {
        config: config.index,
        pk: keys.group_key,
        formed_at: config.formed_at,
    }));
    pos.produce_blocks(pos.delta());
    Ok(KeyGeneration {
        keys,
        run,
        started_at,
        finished_at: pos.height(),
    })
}

// ---------------------------------------------------------------------------
// Checkpoint transactions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointStatus {
    KeyReady,
    Signed,
    Submitted,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub index: u32,
    pub q: GroupPoint,
    pub pk: GroupPoint,
    pub ckpt: Hash32,
    pub cid: Hash32,
    /// The witnessed transaction paying `q`, kept for resubmission.
    pub tx: Option<LedgerTx>,
    pub status: CheckpointStatus,
}

impl CheckpointRecord {
    pub fn new(keys: &ConfigKeys, cid: Hash32) -> Self {
        CheckpointRecord {
            index: keys.config.index,
            q: keys.output_key(),
            pk: keys.group_key,
            ckpt: keys.ckpt,
            cid,
            tx: None,
            status: CheckpointStatus::KeyReady,
        }
    }

    pub fn txid(&self) -> Option<Hash32> {
        self.tx.as_ref().map(LedgerTx::id)
    }

    /// The spendable output at `q` and its amount.
    pub fn head_output(&self) -> Option<(Outpoint, u64)> {
        let tx = self.tx.as_ref()?;
        let vout = tx.outputs.iter().position(|o| o.key() == Some(&self.q))?;
        Some((tx.outpoint(vout as u32), tx.outputs[vout].amount))
    }
}

/// `inputs → ((Σ − fee, Q_next), (0, OP_RETURN cid))`.
pub fn build_consolidating_tx(
    inputs: &[(Outpoint, u64)],
    q_next: GroupPoint,
    cid: &Hash32,
    fee: u64,
) -> Result<LedgerTx, OrchestratorError> {
    let available: u64 = inputs.iter().map(|(_, a)| a).sum();
    if available <= fee {
        return Err(OrchestratorError::FundingExhausted { available, fee });
    }
    Ok(LedgerTx::unsigned(
        inputs.iter().map(|(o, _)| *o).collect(),
        vec![
            TxOutput::to_key(available - fee, q_next),
            TxOutput::op_return(cid.as_bytes().to_vec()),
        ],
    ))
}

pub fn build_checkpoint_tx(
    prev: &CheckpointRecord,
    q_next: GroupPoint,
    cid_next: &Hash32,
    fee: u64,
) -> Result<LedgerTx, OrchestratorError> {
    let head = prev.head_output().ok_or(OrchestratorError::FundingExhausted {
        available: 0,
        fee,
    })?;
    build_consolidating_tx(&[head], q_next, cid_next, fee)
}

#[derive(Debug, Clone)]
pub struct SignedTx {
    pub tx: LedgerTx,
    pub run: SigningRun,
    pub blocks_used: u64,
}

/// Threshold-signs `tx` with the configuration's key, applies the taproot
/// correction and attaches the witness to every input.
pub fn run_signing_round<R: RngCore + ?Sized>(
    pos: &mut PosChain,
    keys: &mut ConfigKeys,
    tx: &LedgerTx,
    params: &ProtocolParams,
    faults: &BTreeMap<Index, SigningFault>,
    rng: &mut R,
) -> Result<SignedTx, OrchestratorError> {
    let digest = tx.digest();
    let beacon = pos
        .beacon(pos.height())
        .expect("tip height is never in the future");
    let request = SigningRequest {
        message: digest.as_bytes(),
        group_key: keys.group_key,
        tweaked_key: keys.output_key(),
        members: keys.qualified.clone(),
        verification_shares: &keys.verification_shares,
        beacon,
        threshold: keys.threshold,
        preprocess_count: params.preprocess_count,
    };
    let (run, blocks_used) = {
        let mut channel = PosChannel::new(pos, &keys.config, params.timeout);
        let run = run_signing(&mut channel, &request, &mut keys.signers, &mut keys.board, faults, rng)?;
        (run, channel.blocks_used())
    };
    let sig = tweak_signature(&run.signature, digest.as_bytes(), &keys.taproot);
    if !verify_key_path(&keys.output_key(), digest.as_bytes(), &sig) {
        return Err(OrchestratorError::BadAggregate);
    }
    Ok(SignedTx {
        tx: tx.clone().with_witness(sig),
        run,
        blocks_used,
    })
}

/// Every member submits the same witnessed transaction; the ledger keeps
/// one copy.
pub fn submit_by_members<L: LedgerBackend>(
    ledger: &mut L,
    tx: &LedgerTx,
    members: usize,
) -> Result<Vec<Submission>, Rejection> {
    (0..members.max(1)).map(|_| ledger.submit(tx.clone())).collect()
}

/// Pre-check before signing: the previous checkpoint must be on the ledger,
/// otherwise its stored witnessed copy is resubmitted. Returns whether a
/// resubmission happened.
pub fn ensure_on_ledger<L: LedgerBackend>(ledger: &mut L, record: &CheckpointRecord) -> Result<bool, Rejection> {
    let Some(tx) = &record.tx else {
        return Ok(false);
    };
    if ledger.confirmation_height(&tx.id()).is_some() {
        return Ok(false);
    }
    match ledger.submit(tx.clone())? {
        Submission::Accepted(_) => Ok(true),
        Submission::Duplicate(_) => Ok(false),
    }
}

/// Confirmed checkpoint `j` must be final by the time configuration
/// `j − 1 + L` forms.
pub fn assumption3_holds(ledger: &SimChain, records: &[CheckpointRecord], forming: u32, lag: u32) -> bool {
    records
        .iter()
        .filter(|r| r.index >= 1 && r.index + lag <= forming + 1)
        .all(|r| r.txid().is_some_and(|id| ledger.is_final(&id)))
}

// ---------------------------------------------------------------------------
// Initialization and funding

#[derive(Debug, Clone)]
pub struct Participant {
    pub id: ParticipantId,
    pub pos: Keypair,
    pub btc: Keypair,
}

impl Participant {
    /// Keys derived from the scenario seed and the participant id.
    pub fn derive(seed: u64, id: ParticipantId) -> Self {
        let mut rng = participant_rng(seed, id, b"participant-keys");
        Participant {
            id,
            pos: Keypair::random(&mut rng),
            btc: Keypair::random(&mut rng),
        }
    }

    pub fn member(&self) -> Member {
        Member {
            id: self.id,
            pos_key: self.pos.public,
        }
    }
}

pub fn btc_commitment(btc_pk: &GroupPoint) -> Hash32 {
    tagged_hash(HashTag::CommitPk, &btc_pk.to_bytes())
}

/// `coin → ((amount, Q₀ with refund to the funder at release), change)`.
pub fn funding_tx<R: RngCore + ?Sized>(
    funder: &Keypair,
    coin: (Outpoint, u64),
    q0: GroupPoint,
    amount: u64,
    release: u64,
    fee: u64,
    rng: &mut R,
) -> Result<LedgerTx, OrchestratorError> {
    let (outpoint, value) = coin;
    if value < amount + fee {
        return Err(OrchestratorError::FundingExhausted {
            available: value,
            fee: amount + fee,
        });
    }
    let mut outputs = vec![TxOutput {
        amount,
        destination: Destination::Key {
            key: q0,
            refund: Some(Refund {
                owner: funder.public,
                release_height: release,
            }),
        },
    }];
    let change = value - amount - fee;
    if change > 0 {
        outputs.push(TxOutput::to_key(change, funder.public));
    }
    let tx = LedgerTx::unsigned(vec![outpoint], outputs);
    let sig = funder.sign(tx.digest().as_bytes(), rng);
    Ok(tx.with_witness(sig))
}

/// Unspent outputs paying `q0` confirmed strictly below `h0`, sorted, so
/// that every member builds the same initial transaction.
pub fn collect_initial_inputs(ledger: &SimChain, q0: &GroupPoint, h0: u64) -> Vec<(Outpoint, u64)> {
    let mut inputs: Vec<(Outpoint, u64)> = ledger
        .outputs_to(q0, Some(h0))
        .into_iter()
        .flat_map(|tx| {
            let id = tx.id();
            tx.outputs.iter().enumerate().filter_map(move |(v, o)| {
                (o.key() == Some(q0)).then_some((
                    Outpoint {
                        txid: id,
                        vout: v as u32,
                    },
                    o.amount,
                ))
            })
        })
        .filter(|(op, _)| ledger.utxo(op).is_some())
        .collect();
    inputs.sort();
    inputs
}

/// Spends a funding output back to its owner through the refund branch.
pub fn refund_tx<R: RngCore + ?Sized>(
    owner: &Keypair,
    outpoint: Outpoint,
    amount: u64,
    fee: u64,
    rng: &mut R,
) -> LedgerTx {
    let tx = LedgerTx::unsigned(
        vec![outpoint],
        vec![TxOutput::to_key(amount.saturating_sub(fee), owner.public)],
    );
    let sig = owner.sign(tx.digest().as_bytes(), rng);
    tx.with_witness(sig)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardClaim {
    pub id: ParticipantId,
    pub btc_pk: GroupPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "decision")]
pub enum RewardDecision {
    Eligible { reward: u64 },
    NoCommitment,
    CommitmentMismatch,
    NotFunded,
}

/// A claim pays out iff the revealed key matches the claimant's earlier
/// commitment and a funding output refundable to that key is an input of
/// the initial transaction.
pub fn judge_reward_claim(
    pos: &PosChain,
    ledger: &SimChain,
    tx0: &LedgerTx,
    claim: &RewardClaim,
    params: &ProtocolParams,
) -> RewardDecision {
    let Some(commitment) = pos.commitment_of(claim.id) else {
        return RewardDecision::NoCommitment;
    };
    if commitment != btc_commitment(&claim.btc_pk) {
        return RewardDecision::CommitmentMismatch;
    }
    let funded = tx0.inputs.iter().any(|input| {
        ledger
            .get_tx(&input.txid)
            .and_then(|t| t.outputs.get(input.vout as usize))
            .is_some_and(|o| {
                matches!(&o.destination, Destination::Key { refund: Some(r), .. } if r.owner == claim.btc_pk)
            })
    });
    if funded {
        RewardDecision::Eligible {
            reward: params.reward(),
        }
    } else {
        RewardDecision::NotFunded
    }
}
