//! Verification for a user coming back online.
//!
//! Starting from the trusted initial key `Q₀`, follow the ledger's spend
//! chain to the unspent head, fetch the configuration its `OP_RETURN`
//! names, then check a served PoS chain against `Q = pk + H_TapTweak(pk ‖
//! ckpt)·G`, rolling back announcement by announcement until one matches.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{GroupPoint, Hash32};
use crate::ledger::{LedgerBackend, LedgerTx, Outpoint};
use crate::orchestrator::ConfigPayload;
use crate::pos::{announcements, check_linkage, ContentStore, ParticipantId, PosBlock, StoreError};
use crate::taproot::tweak_pubkey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("no transaction spending Q0 has all its inputs confirmed before h0")]
    NoValidInitial,
    #[error("transaction {0} does not have the checkpoint shape")]
    MalformedCheckpoint(Hash32),
    #[error("configuration {0} is not available from the store")]
    DataUnavailable(Hash32),
    #[error("configuration {0} cannot be parsed")]
    BadPayload(Hash32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    RejectedNoValidState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    /// `None` while `Q₀` has not been spent.
    pub head_tx: Option<Hash32>,
    pub q_head: GroupPoint,
    pub cid: Hash32,
    pub hops: usize,
    pub accepted_config: Option<u32>,
    pub accepted_members: Vec<ParticipantId>,
    pub rollback_count: usize,
    pub verdict: Verdict,
}

/// Splits a transaction into its single key output and its 32-byte
/// `OP_RETURN` cid.
pub fn checkpoint_shape(tx: &LedgerTx) -> Option<(u32, GroupPoint, Hash32)> {
    if tx.outputs.len() != 2 {
        return None;
    }
    let (vout, key) = tx
        .outputs
        .iter()
        .enumerate()
        .find_map(|(v, o)| o.key().map(|k| (v as u32, *k)))?;
    let data = tx.op_return()?;
    let cid: [u8; 32] = data.try_into().ok()?;
    Some((vout, key, Hash32(cid)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitialTx {
    Found(LedgerTx),
    /// Nothing has spent `Q₀` yet.
    Unspent,
}

/// Among confirmed spenders of `Q₀` outputs, the earliest one whose inputs
/// were all confirmed below `h0` and that has the checkpoint shape.
pub fn resolve_initial_tx<L: LedgerBackend>(ledger: &L, q0: &GroupPoint, h0: u64) -> Result<InitialTx, VerifyError> {
    let mut spenders: Vec<(u64, Hash32, &LedgerTx)> = Vec::new();
    for funding in ledger.outputs_to(q0, None) {
        let id = funding.id();
        for (v, o) in funding.outputs.iter().enumerate() {
            if o.key() != Some(q0) {
                continue;
            }
            let op = Outpoint { txid: id, vout: v as u32 };
            if let Some(spender) = ledger.find_spending_tx(&op) {
                let sid = spender.id();
                if !spenders.iter().any(|(_, s, _)| *s == sid) {
                    let h = ledger.confirmation_height(&sid).unwrap_or(u64::MAX);
                    spenders.push((h, sid, spender));
                }
            }
        }
    }
    if spenders.is_empty() {
        return Ok(InitialTx::Unspent);
    }
    spenders.sort_by_key(|(h, id, _)| (*h, *id));
    spenders
        .into_iter()
        .map(|(_, _, tx)| tx)
        .find(|tx| {
            checkpoint_shape(tx).is_some()
                && tx.inputs.iter().all(|i| {
                    ledger
                        .confirmation_height(&i.txid)
                        .is_some_and(|h| h < h0)
                })
        })
        .cloned()
        .map(InitialTx::Found)
        .ok_or(VerifyError::NoValidInitial)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainHead {
    pub head: LedgerTx,
    pub q: GroupPoint,
    pub cid: Hash32,
    pub hops: usize,
}

/// Follows the spender of each checkpoint's key output until it is unspent.
pub fn walk_chain<L: LedgerBackend>(ledger: &L, tx0: &LedgerTx) -> Result<ChainHead, VerifyError> {
    let mut current = tx0.clone();
    let mut hops = 0;
    loop {
        let (vout, q, cid) =
            checkpoint_shape(&current).ok_or(VerifyError::MalformedCheckpoint(current.id()))?;
        match ledger.find_spending_tx(&current.outpoint(vout)) {
            Some(next) => {
                current = next.clone();
                hops += 1;
            }
            None => {
                return Ok(ChainHead {
                    head: current,
                    q,
                    cid,
                    hops,
                })
            }
        }
    }
}

/// Checks `served` against the head key and configuration.
pub fn validate_served_chain(
    q_head: &GroupPoint,
    cid: &Hash32,
    served: &[PosBlock],
    store: &ContentStore,
) -> Result<VerificationOutcome, VerifyError> {
    let bytes = store.get(cid).map_err(|e| match e {
        StoreError::NotFound(c) | StoreError::Corrupted(c) => VerifyError::DataUnavailable(c),
        StoreError::Parse(_) => VerifyError::DataUnavailable(*cid),
    })?;
    let payload = ConfigPayload::decode(bytes).map_err(|_| VerifyError::BadPayload(*cid))?;
    let mut outcome = VerificationOutcome {
        head_tx: None,
        q_head: *q_head,
        cid: *cid,
        hops: 0,
        accepted_config: None,
        accepted_members: Vec::new(),
        rollback_count: 0,
        verdict: Verdict::RejectedNoValidState,
    };
    if !check_linkage(served) {
        return Ok(outcome);
    }
    let anns = announcements(served);
    for (rollback, (_, a)) in anns.iter().rev().enumerate() {
        let Some(block) = served.get(a.formed_at as usize) else {
            continue;
        };
        let ckpt = block.hash();
        if tweak_pubkey(&a.pk, &ckpt).output == *q_head && payload.pk == a.pk && payload.ckpt == ckpt {
            outcome.verdict = Verdict::Accepted;
            outcome.rollback_count = rollback;
            outcome.accepted_config = Some(a.config);
            outcome.accepted_members = payload.members.iter().map(|m| m.id).collect();
            return Ok(outcome);
        }
    }
    outcome.rollback_count = anns.len();
    Ok(outcome)
}

/// Full verification from `Q₀`. `genesis_cid` is used while `Q₀` is unspent.
pub fn verify<L: LedgerBackend>(
    ledger: &L,
    store: &ContentStore,
    served: &[PosBlock],
    q0: &GroupPoint,
    h0: u64,
    genesis_cid: Option<&Hash32>,
) -> Result<VerificationOutcome, VerifyError> {
    match resolve_initial_tx(ledger, q0, h0)? {
        InitialTx::Found(tx0) => {
            let head = walk_chain(ledger, &tx0)?;
            let mut outcome = validate_served_chain(&head.q, &head.cid, served, store)?;
            outcome.head_tx = Some(head.head.id());
            outcome.hops = head.hops;
            Ok(outcome)
        }
        InitialTx::Unspent => {
            let cid = genesis_cid.ok_or(VerifyError::NoValidInitial)?;
            validate_served_chain(q0, cid, served, store)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Keypair, Scalar};
    use crate::ledger::{SimChain, TxOutput};
    use crate::pos::{KeyAnnouncement, Member, PosChain, PosMessage};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn shape_requires_key_and_cid() {
        let q = GroupPoint::generator();
        let good = LedgerTx::unsigned(vec![], vec![TxOutput::to_key(1, q), TxOutput::op_return(vec![1; 32])]);
        assert_eq!(checkpoint_shape(&good), Some((0, q, Hash32([1; 32]))));
        let short = LedgerTx::unsigned(vec![], vec![TxOutput::to_key(1, q), TxOutput::op_return(vec![1; 5])]);
        assert_eq!(checkpoint_shape(&short), None);
    }

    #[test]
    fn unspent_q0_and_missing_data() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let kp = Keypair::random(&mut rng);
        let mut ledger = SimChain::new(1);
        ledger.mint(kp.public, 10);
        ledger.mine_block();
        assert_eq!(resolve_initial_tx(&ledger, &kp.public, 5), Ok(InitialTx::Unspent));
        let store = ContentStore::new();
        let missing = Hash32([4; 32]);
        assert_eq!(
            verify(&ledger, &store, &[], &kp.public, 5, Some(&missing)),
            Err(VerifyError::DataUnavailable(missing))
        );
    }

    #[test]
    fn genesis_payload_accepts_matching_chain() {
        let member = Member { id: 1, pos_key: GroupPoint::mul_base(&Scalar::from_u64(3)) };
        let mut pos = PosChain::new(2, &[member], 1, 1);
        let pk = GroupPoint::mul_base(&Scalar::from_u64(11));
        let ckpt = pos.block_hash(0).unwrap();
        pos.submit(PosMessage::Announce(KeyAnnouncement { config: 0, pk, formed_at: 0 }));
        pos.produce_block();
        let payload = ConfigPayload { index: 0, formed_at: 0, members: vec![member], pk, ckpt };
        let mut store = ContentStore::new();
        let cid = store.put(&payload.encode());
        let q0 = payload.taproot_key().output;
        let out = validate_served_chain(&q0, &cid, pos.blocks(), &store).unwrap();
        assert_eq!(out.verdict, Verdict::Accepted);
        assert_eq!(out.accepted_members, vec![1]);
        // A different key cannot be matched by any announcement.
        let other = validate_served_chain(&GroupPoint::generator(), &cid, pos.blocks(), &store).unwrap();
        assert_eq!(other.verdict, Verdict::RejectedNoValidState);
        assert_eq!(other.rollback_count, 1);
    }
}
