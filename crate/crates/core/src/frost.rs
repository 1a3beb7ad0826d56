//! FROST threshold Schnorr signing with preprocessing.
//!
//! Each participant publishes a list of nonce commitments `(D, E)` ahead of
//! time. To sign, the signer set `S` is derived from the random beacon, the
//! next unused commitment of every signer forms `B`, and each signer answers
//! with `z_i = d_i + e_i·ρ_i + λ_i·s_i·c`. The challenge `c` binds the
//! tweaked Taproot key `Q`, so the aggregate verifies as
//! `zG = R + c·Y` under the untweaked group key and only needs the additive
//! tweak correction to become a key-path signature for `Q`.
//!
//! Misbehaving or silent signers are named and the round restarts with
//! replacements taken from the beacon ranking.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{
    challenge, hash_to_scalar, GroupPoint, Hash32, HashTag, Scalar, SchnorrSignature, POINT_LEN,
    SCALAR_LEN,
};
use crate::net::{Channel, Index};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrostError {
    #[error("preprocess count must be at least 1")]
    EmptyPreprocess,
    #[error("requested {count} signers from {available} members")]
    NotEnoughMembers { count: usize, available: usize },
    #[error("duplicate or zero signer index {0}")]
    BadIndex(Index),
    #[error("participant {0} is not in the signer set")]
    NotASigner(Index),
    #[error("nonce pair already used; refusing to sign")]
    NonceReused,
    #[error("nonce pair does not match the published commitment of signer {0}")]
    NonceMismatch(Index),
    #[error("no key material for signer {0}")]
    MissingSigner(Index),
    #[error("signing cannot complete: {remaining} usable signers left, threshold {threshold}")]
    Liveness { remaining: usize, threshold: usize },
}

// ---------------------------------------------------------------------------
// Preprocessing

/// One single-use nonce pair. The secret halves are wiped when used.
#[derive(Debug, Clone)]
pub struct NoncePair {
    secret: Option<(Scalar, Scalar)>,
    pub hiding: GroupPoint,
    pub binding: GroupPoint,
}

impl NoncePair {
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let d = Scalar::random_nonzero(rng);
        let e = Scalar::random_nonzero(rng);
        NoncePair {
            secret: Some((d, e)),
            hiding: GroupPoint::mul_base(&d),
            binding: GroupPoint::mul_base(&e),
        }
    }

    pub fn is_used(&self) -> bool {
        self.secret.is_none()
    }

    /// Takes the secret halves, marking the pair used.
    fn consume(&mut self) -> Result<(Scalar, Scalar), FrostError> {
        self.secret.take().ok_or(FrostError::NonceReused)
    }
}

/// The published commitment list `L_i` with its consumption cursor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentList {
    pub owner: Index,
    pub entries: Vec<(GroupPoint, GroupPoint)>,
    cursor: usize,
}

impl CommitmentList {
    pub fn new(owner: Index, entries: Vec<(GroupPoint, GroupPoint)>) -> Self {
        CommitmentList {
            owner,
            entries,
            cursor: 0,
        }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }

    pub fn peek(&self) -> Option<(usize, GroupPoint, GroupPoint)> {
        self.entries
            .get(self.cursor)
            .map(|(d, e)| (self.cursor, *d, *e))
    }

    pub fn advance(&mut self) {
        if self.cursor < self.entries.len() {
            self.cursor += 1;
        }
    }

    pub fn extend(&mut self, entries: &[(GroupPoint, GroupPoint)]) {
        self.entries.extend_from_slice(entries);
    }
}

/// The secret side of a participant's preprocessing.
#[derive(Debug, Clone)]
pub struct NonceStore {
    pub owner: Index,
    pairs: Vec<NoncePair>,
}

impl NonceStore {
    pub fn new(owner: Index) -> Self {
        NonceStore {
            owner,
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair_mut(&mut self, position: usize) -> Option<&mut NoncePair> {
        self.pairs.get_mut(position)
    }

    pub fn pair(&self, position: usize) -> Option<&NoncePair> {
        self.pairs.get(position)
    }

    /// Appends `count` fresh pairs and returns their public halves.
    pub fn extend<R: RngCore + ?Sized>(
        &mut self,
        count: usize,
        rng: &mut R,
    ) -> Vec<(GroupPoint, GroupPoint)> {
        (0..count)
            .map(|_| {
                let pair = NoncePair::generate(rng);
                let public = (pair.hiding, pair.binding);
                self.pairs.push(pair);
                public
            })
            .collect()
    }
}

/// Generates `count` nonce pairs for `owner`.
pub fn preprocess<R: RngCore + ?Sized>(
    owner: Index,
    count: usize,
    rng: &mut R,
) -> Result<(CommitmentList, NonceStore), FrostError> {
    if count == 0 {
        return Err(FrostError::EmptyPreprocess);
    }
    let mut store = NonceStore::new(owner);
    let entries = store.extend(count, rng);
    Ok((CommitmentList::new(owner, entries), store))
}

/// Seeded preprocessing; the seed is mixed with the owner index so that
/// participants sharing a seed still draw different nonces.
pub fn preprocess_seeded(
    owner: Index,
    count: usize,
    seed: u64,
) -> Result<(CommitmentList, NonceStore), FrostError> {
    let mut rng = participant_rng(seed, owner, b"preprocess");
    preprocess(owner, count, &mut rng)
}

pub(crate) fn participant_rng(seed: u64, owner: Index, purpose: &[u8]) -> ChaCha20Rng {
    let mut data = Vec::with_capacity(12 + purpose.len());
    data.extend_from_slice(&seed.to_be_bytes());
    data.extend_from_slice(&owner.to_be_bytes());
    data.extend_from_slice(purpose);
    ChaCha20Rng::from_seed(hash_to_scalar(HashTag::Beacon, &data).to_bytes())
}

// ---------------------------------------------------------------------------
// Signer selection and per-signer values

/// Orders members by `H(id ‖ RB)`, smallest first.
pub fn rank_members(members: &[Index], beacon: &Scalar) -> Vec<Index> {
    let mut keyed: Vec<([u8; 32], Index)> = members
        .iter()
        .map(|&id| {
            let mut data = Vec::with_capacity(4 + SCALAR_LEN);
            data.extend_from_slice(&id.to_be_bytes());
            data.extend_from_slice(&beacon.to_bytes());
            (hash_to_scalar(HashTag::BeaconSelect, &data).to_bytes(), id)
        })
        .collect();
    keyed.sort();
    keyed.dedup_by_key(|(_, id)| *id);
    keyed.into_iter().map(|(_, id)| id).collect()
}

/// The `count` members with the smallest beacon hashes, in ascending index order.
pub fn select_signers(members: &[Index], beacon: &Scalar, count: usize) -> Result<Vec<Index>, FrostError> {
    let ranked = rank_members(members, beacon);
    if count > ranked.len() {
        return Err(FrostError::NotEnoughMembers {
            count,
            available: ranked.len(),
        });
    }
    let mut chosen = ranked[..count].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Removes `cheaters` from `signers` and tops the set back up with the
/// best-ranked members not already used or excluded.
pub fn replace_signers(
    signers: &[Index],
    cheaters: &BTreeSet<Index>,
    ranking: &[Index],
    excluded: &BTreeSet<Index>,
) -> Vec<Index> {
    let mut next: Vec<Index> = signers
        .iter()
        .copied()
        .filter(|i| !cheaters.contains(i))
        .collect();
    let wanted = signers.len();
    for &candidate in ranking {
        if next.len() >= wanted {
            break;
        }
        if !next.contains(&candidate) && !cheaters.contains(&candidate) && !excluded.contains(&candidate) {
            next.push(candidate);
        }
    }
    next.sort_unstable();
    next
}

/// An entry `(i, D_i, E_i)` of the commitment list `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignerCommitment {
    pub index: Index,
    pub hiding: GroupPoint,
    pub binding: GroupPoint,
}

fn encode_commitment_list(w: &mut Writer, commitments: &[SignerCommitment]) {
    w.u32(commitments.len() as u32);
    for c in commitments {
        w.u32(c.index).point(&c.hiding).point(&c.binding);
    }
}

/// `ρ_l = H₁(l, m, B)` over the canonical encoding of `B` (ascending index order).
pub fn binding_value(l: Index, message: &[u8], commitments: &[SignerCommitment]) -> Scalar {
    let mut w = Writer::new();
    w.u32(l).bytes(message);
    encode_commitment_list(&mut w, commitments);
    hash_to_scalar(HashTag::Binding, &w.finish())
}

/// `λ_i = Π_{j∈S, j≠i} j / (j − i)`, the coefficient interpolating at zero.
pub fn lagrange_coefficient(signers: &[Index], i: Index) -> Result<Scalar, FrostError> {
    let mut seen = BTreeSet::new();
    for &j in signers {
        if j == 0 || !seen.insert(j) {
            return Err(FrostError::BadIndex(j));
        }
    }
    if !seen.contains(&i) {
        return Err(FrostError::NotASigner(i));
    }
    let xi = Scalar::from_u64(i as u64);
    let mut num = Scalar::ONE;
    let mut den = Scalar::ONE;
    for &j in signers.iter().filter(|&&j| j != i) {
        let xj = Scalar::from_u64(j as u64);
        num = num * xj;
        den = den * (xj - xi);
    }
    Ok(num * den.invert().expect("distinct indices give a non-zero denominator"))
}

// ---------------------------------------------------------------------------
// Session

/// Evidence that signer `index` sent a bad (or no) partial signature:
/// `z_i·G` against the expected `R_i + c·λ_i·Y_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisbehaviourProof {
    pub index: Index,
    pub submitted: Option<GroupPoint>,
    pub expected: GroupPoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregateOutcome {
    Signature(SchnorrSignature),
    Abort {
        cheaters: BTreeSet<Index>,
        proofs: Vec<MisbehaviourProof>,
    },
}

/// State of one signing attempt: everything every honest participant derives
/// identically from `(m, B, Y, Q)`.
#[derive(Debug, Clone)]
pub struct SigningSession {
    message: Vec<u8>,
    commitments: Vec<SignerCommitment>,
    signers: Vec<Index>,
    group_key: GroupPoint,
    tweaked_key: GroupPoint,
    rhos: BTreeMap<Index, Scalar>,
    lambdas: BTreeMap<Index, Scalar>,
    signer_nonces: BTreeMap<Index, GroupPoint>,
    group_nonce: GroupPoint,
    challenge: Scalar,
    partials: BTreeMap<Index, Scalar>,
}

impl SigningSession {
    pub fn new(
        message: &[u8],
        mut commitments: Vec<SignerCommitment>,
        group_key: GroupPoint,
        tweaked_key: GroupPoint,
    ) -> Result<Self, FrostError> {
        commitments.sort_by_key(|c| c.index);
        let signers: Vec<Index> = commitments.iter().map(|c| c.index).collect();
        for w in signers.windows(2) {
            if w[0] == w[1] {
                return Err(FrostError::BadIndex(w[0]));
            }
        }
        if signers.first() == Some(&0) {
            return Err(FrostError::BadIndex(0));
        }
        let mut rhos = BTreeMap::new();
        let mut lambdas = BTreeMap::new();
        let mut signer_nonces = BTreeMap::new();
        for c in &commitments {
            let rho = binding_value(c.index, message, &commitments);
            rhos.insert(c.index, rho);
            lambdas.insert(c.index, lagrange_coefficient(&signers, c.index)?);
            signer_nonces.insert(c.index, c.hiding + c.binding * rho);
        }
        let group_nonce: GroupPoint = signer_nonces.values().copied().sum();
        let challenge = challenge(message, &group_nonce, &tweaked_key);
        Ok(SigningSession {
            message: message.to_vec(),
            commitments,
            signers,
            group_key,
            tweaked_key,
            rhos,
            lambdas,
            signer_nonces,
            group_nonce,
            challenge,
            partials: BTreeMap::new(),
        })
    }

    pub fn message(&self) -> &[u8] {
        &self.message
    }

    pub fn signers(&self) -> &[Index] {
        &self.signers
    }

    pub fn commitments(&self) -> &[SignerCommitment] {
        &self.commitments
    }

    pub fn group_key(&self) -> GroupPoint {
        self.group_key
    }

    pub fn tweaked_key(&self) -> GroupPoint {
        self.tweaked_key
    }

    pub fn group_nonce(&self) -> GroupPoint {
        self.group_nonce
    }

    pub fn challenge(&self) -> Scalar {
        self.challenge
    }

    pub fn binding(&self, i: Index) -> Option<Scalar> {
        self.rhos.get(&i).copied()
    }

    pub fn lambda(&self, i: Index) -> Option<Scalar> {
        self.lambdas.get(&i).copied()
    }

    /// `R_i = D_i + ρ_i·E_i`
    pub fn signer_nonce(&self, i: Index) -> Option<GroupPoint> {
        self.signer_nonces.get(&i).copied()
    }

    /// Computes `z_i`. The nonce pair is consumed before the response exists,
    /// so a second call with the same pair fails.
    pub fn partial_sign(
        &self,
        index: Index,
        nonce: &mut NoncePair,
        share: &Scalar,
    ) -> Result<Scalar, FrostError> {
        let entry = self
            .commitments
            .iter()
            .find(|c| c.index == index)
            .ok_or(FrostError::NotASigner(index))?;
        if nonce.is_used() {
            return Err(FrostError::NonceReused);
        }
        if nonce.hiding != entry.hiding || nonce.binding != entry.binding {
            return Err(FrostError::NonceMismatch(index));
        }
        let (d, e) = nonce.consume()?;
        Ok(d + e * self.rhos[&index] + self.lambdas[&index] * *share * self.challenge)
    }

    fn expected_image(&self, i: Index, verification_share: &GroupPoint) -> Option<GroupPoint> {
        Some(*self.signer_nonces.get(&i)? + *verification_share * (self.challenge * self.lambdas[&i]))
    }

    /// Checks `z_i·G = R_i + c·λ_i·Y_i`.
    pub fn verify_partial(&self, i: Index, z: &Scalar, verification_share: &GroupPoint) -> bool {
        match self.expected_image(i, verification_share) {
            Some(expected) => GroupPoint::mul_base(z) == expected,
            None => false,
        }
    }

    /// Records a partial from a signer in `S`; later duplicates are ignored.
    pub fn add_partial(&mut self, i: Index, z: Scalar) -> bool {
        if !self.signers.contains(&i) || self.partials.contains_key(&i) {
            return false;
        }
        self.partials.insert(i, z);
        true
    }

    pub fn partials(&self) -> &BTreeMap<Index, Scalar> {
        &self.partials
    }

    /// Verifies every partial and sums them, or names the cheaters.
    pub fn aggregate(&self, verification_shares: &BTreeMap<Index, GroupPoint>) -> AggregateOutcome {
        let mut cheaters = BTreeSet::new();
        let mut proofs = Vec::new();
        for &i in &self.signers {
            let expected = verification_shares
                .get(&i)
                .and_then(|y| self.expected_image(i, y))
                .unwrap_or_else(GroupPoint::identity);
            match self.partials.get(&i) {
                None => {
                    cheaters.insert(i);
                    proofs.push(MisbehaviourProof {
                        index: i,
                        submitted: None,
                        expected,
                    });
                }
                Some(z) => {
                    let submitted = GroupPoint::mul_base(z);
                    if verification_shares.get(&i).is_none() || submitted != expected {
                        cheaters.insert(i);
                        proofs.push(MisbehaviourProof {
                            index: i,
                            submitted: Some(submitted),
                            expected,
                        });
                    }
                }
            }
        }
        if !cheaters.is_empty() {
            return AggregateOutcome::Abort { cheaters, proofs };
        }
        AggregateOutcome::Signature(SchnorrSignature {
            z: self.partials.values().copied().sum(),
            r: self.group_nonce,
        })
    }
}

// ---------------------------------------------------------------------------
// Messages

const KIND_PREPROCESS: u8 = 0x21;
const KIND_PARTIAL: u8 = 0x22;
const KIND_RESTART: u8 = 0x23;
const KIND_FINAL: u8 = 0x24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrostMessage {
    PreProcess {
        index: Index,
        commitments: Vec<(GroupPoint, GroupPoint)>,
    },
    PartialSig {
        index: Index,
        z: Scalar,
    },
    RestartSigning {
        cheaters: Vec<Index>,
    },
    FinalSig {
        tx_id: Hash32,
        signature: SchnorrSignature,
    },
}

impl FrostMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            FrostMessage::PreProcess { index, commitments } => {
                w.u8(KIND_PREPROCESS).u32(*index).u32(commitments.len() as u32);
                for (d, e) in commitments {
                    w.point(d).point(e);
                }
            }
            FrostMessage::PartialSig { index, z } => {
                w.u8(KIND_PARTIAL).u32(*index).scalar(z);
            }
            FrostMessage::RestartSigning { cheaters } => {
                w.u8(KIND_RESTART).u32(cheaters.len() as u32);
                for c in cheaters {
                    w.u32(*c);
                }
            }
            FrostMessage::FinalSig { tx_id, signature } => {
                w.u8(KIND_FINAL)
                    .hash(tx_id)
                    .scalar(&signature.z)
                    .point(&signature.r);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            KIND_PREPROCESS => {
                let index = r.u32()?;
                let n = r.count(2 * POINT_LEN)?;
                let mut commitments = Vec::with_capacity(n);
                for _ in 0..n {
                    commitments.push((r.point()?, r.point()?));
                }
                FrostMessage::PreProcess { index, commitments }
            }
            KIND_PARTIAL => FrostMessage::PartialSig {
                index: r.u32()?,
                z: r.scalar()?,
            },
            KIND_RESTART => {
                let n = r.count(4)?;
                let cheaters = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
                FrostMessage::RestartSigning { cheaters }
            }
            KIND_FINAL => {
                let tx_id = r.hash()?;
                let z = r.scalar()?;
                let rp = r.point()?;
                FrostMessage::FinalSig {
                    tx_id,
                    signature: SchnorrSignature { z, r: rp },
                }
            }
            other => return Err(DecodeError::UnknownKind(other)),
        };
        r.finish()?;
        Ok(msg)
    }
}

// ---------------------------------------------------------------------------
// Driver

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigningFault {
    /// Never posts a partial signature.
    Withhold,
    /// Posts `z_i + 1`.
    BadPartial,
}

/// Long-lived signing material of one participant.
#[derive(Debug, Clone)]
pub struct SignerState {
    pub index: Index,
    pub share: Scalar,
    nonces: NonceStore,
}

impl SignerState {
    pub fn new(index: Index, share: Scalar) -> Self {
        SignerState {
            index,
            share,
            nonces: NonceStore::new(index),
        }
    }

    pub fn nonces(&self) -> &NonceStore {
        &self.nonces
    }
}

/// Public view of every participant's published commitments, as read from
/// the broadcast channel.
#[derive(Debug, Clone, Default)]
pub struct CommitmentBoard {
    lists: BTreeMap<Index, CommitmentList>,
}

impl CommitmentBoard {
    pub fn list(&self, owner: Index) -> Option<&CommitmentList> {
        self.lists.get(&owner)
    }

    pub fn publish(&mut self, owner: Index, entries: &[(GroupPoint, GroupPoint)]) {
        self.lists
            .entry(owner)
            .or_insert_with(|| CommitmentList::new(owner, Vec::new()))
            .extend(entries);
    }

    fn remaining(&self, owner: Index) -> usize {
        self.lists.get(&owner).map_or(0, |l| l.remaining())
    }
}

pub struct SigningRequest<'a> {
    pub message: &'a [u8],
    pub group_key: GroupPoint,
    pub tweaked_key: GroupPoint,
    /// Members eligible to sign (the qualified set of the key's DKG).
    pub members: Vec<Index>,
    pub verification_shares: &'a BTreeMap<Index, GroupPoint>,
    pub beacon: Scalar,
    pub threshold: usize,
    /// Nonce pairs generated per preprocessing batch (π).
    pub preprocess_count: usize,
}

#[derive(Debug, Clone)]
pub struct SigningRun {
    /// Aggregate `(z, R)` with `zG = R + H(m ‖ R ‖ Q)·Y`.
    pub signature: SchnorrSignature,
    pub rounds: usize,
    pub signer_sets: Vec<Vec<Index>>,
    pub cheaters: BTreeSet<Index>,
    pub proofs: Vec<MisbehaviourProof>,
    /// Protocol broadcasts (preprocess and partials) per participant.
    pub broadcasts: BTreeMap<Index, usize>,
    pub restart_notices: usize,
}

/// Runs signing rounds until a valid aggregate exists or too few usable
/// signers remain.
pub fn run_signing<C: Channel, R: RngCore + ?Sized>(
    channel: &mut C,
    request: &SigningRequest<'_>,
    signers: &mut BTreeMap<Index, SignerState>,
    board: &mut CommitmentBoard,
    faults: &BTreeMap<Index, SigningFault>,
    rng: &mut R,
) -> Result<SigningRun, FrostError> {
    if request.preprocess_count == 0 {
        return Err(FrostError::EmptyPreprocess);
    }
    let ranking = rank_members(&request.members, &request.beacon);
    if ranking.len() < request.threshold {
        return Err(FrostError::NotEnoughMembers {
            count: request.threshold,
            available: ranking.len(),
        });
    }
    let mut signer_set = select_signers(&request.members, &request.beacon, request.threshold)?;
    let mut excluded = BTreeSet::new();
    let mut broadcasts: BTreeMap<Index, usize> = BTreeMap::new();
    let mut signer_sets = Vec::new();
    let mut proofs = Vec::new();
    let mut restart_notices = 0;

    // Everyone with an exhausted list preprocesses up front.
    preprocess_round(channel, request, signers, board, &request.members, &mut broadcasts, rng);

    loop {
        // Signers that ran out of published nonces refill first.
        let dry: Vec<Index> = signer_set
            .iter()
            .copied()
            .filter(|i| board.remaining(*i) == 0)
            .collect();
        if !dry.is_empty() {
            preprocess_round(channel, request, signers, board, &dry, &mut broadcasts, rng);
        }

        let mut commitments = Vec::with_capacity(signer_set.len());
        let mut positions = BTreeMap::new();
        let mut unavailable = BTreeSet::new();
        for &i in &signer_set {
            match board.lists.get_mut(&i).and_then(|l| {
                let p = l.peek();
                l.advance();
                p
            }) {
                Some((pos, hiding, binding)) => {
                    positions.insert(i, pos);
                    commitments.push(SignerCommitment {
                        index: i,
                        hiding,
                        binding,
                    });
                }
                None => {
                    unavailable.insert(i);
                }
            }
        }
        signer_sets.push(signer_set.clone());

        let mut outcome = None;
        if unavailable.is_empty() {
            let mut session = SigningSession::new(
                request.message,
                commitments,
                request.group_key,
                request.tweaked_key,
            )?;
            for &i in &signer_set {
                if faults.get(&i) == Some(&SigningFault::Withhold) {
                    continue;
                }
                let Some(state) = signers.get_mut(&i) else {
                    continue;
                };
                let pair = state
                    .nonces
                    .pair_mut(positions[&i])
                    .ok_or(FrostError::NonceMismatch(i))?;
                let mut z = session.partial_sign(i, pair, &state.share)?;
                if faults.get(&i) == Some(&SigningFault::BadPartial) {
                    z += Scalar::ONE;
                }
                channel.broadcast(i, FrostMessage::PartialSig { index: i, z }.encode());
                *broadcasts.entry(i).or_default() += 1;
            }
            for (sender, payload) in channel.end_round_expecting(&signer_set).broadcasts {
                if let Ok(FrostMessage::PartialSig { index, z }) = FrostMessage::decode(&payload) {
                    if index == sender {
                        session.add_partial(index, z);
                    }
                }
            }
            outcome = Some(session.aggregate(request.verification_shares));
        }

        let cheaters = match outcome {
            Some(AggregateOutcome::Signature(signature)) => {
                return Ok(SigningRun {
                    signature,
                    rounds: signer_sets.len(),
                    signer_sets,
                    cheaters: excluded,
                    proofs,
                    broadcasts,
                    restart_notices,
                });
            }
            Some(AggregateOutcome::Abort {
                cheaters,
                proofs: round_proofs,
            }) => {
                proofs.extend(round_proofs);
                cheaters
            }
            None => unavailable,
        };

        excluded.extend(cheaters.iter().copied());
        if let Some(reporter) = signer_set.iter().find(|i| !excluded.contains(i)).copied() {
            channel.broadcast(
                reporter,
                FrostMessage::RestartSigning {
                    cheaters: cheaters.iter().copied().collect(),
                }
                .encode(),
            );
            channel.end_round();
            restart_notices += 1;
        }
        signer_set = replace_signers(&signer_set, &cheaters, &ranking, &excluded);
        if signer_set.len() < request.threshold {
            return Err(FrostError::Liveness {
                remaining: signer_set.len(),
                threshold: request.threshold,
            });
        }
    }
}

fn preprocess_round<C: Channel, R: RngCore + ?Sized>(
    channel: &mut C,
    request: &SigningRequest<'_>,
    signers: &mut BTreeMap<Index, SignerState>,
    board: &mut CommitmentBoard,
    who: &[Index],
    broadcasts: &mut BTreeMap<Index, usize>,
    rng: &mut R,
) {
    let mut posting = Vec::new();
    for &i in who {
        if board.remaining(i) > 0 {
            continue;
        }
        let Some(state) = signers.get_mut(&i) else {
            continue;
        };
        // Keep the secret list aligned with the published one.
        let published = board.list(i).map_or(0, |l| l.entries.len());
        if state.nonces.len() != published {
            continue;
        }
        let entries = state.nonces.extend(request.preprocess_count, rng);
        channel.broadcast(
            i,
            FrostMessage::PreProcess {
                index: i,
                commitments: entries,
            }
            .encode(),
        );
        *broadcasts.entry(i).or_default() += 1;
        posting.push(i);
    }
    if posting.is_empty() {
        return;
    }
    for (sender, payload) in channel.end_round_expecting(&posting).broadcasts {
        if let Ok(FrostMessage::PreProcess { index, commitments }) = FrostMessage::decode(&payload) {
            if index == sender {
                board.publish(index, &commitments);
            }
        }
    }
}
