//! Joint-Feldman distributed key generation.
//!
//! Every participant deals a Feldman sharing of a random secret: shares go
//! out on private channels, coefficient commitments on the broadcast
//! channel. Recipients check their shares against the commitments and
//! broadcast a verdict vector; accused dealers answer by revealing the
//! disputed share. Dealers left with an unanswered or invalid complaint, or
//! who never dealt, are excluded, and the remaining contributions add up to
//! the group key.
//!
//! The group secret itself is never computed.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{GroupPoint, Scalar, POINT_LEN};
use crate::net::{Channel, Index};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DkgError {
    #[error("invalid parameters: need 1 <= t <= n, got t={t}, n={n}")]
    InvalidParameters { t: u32, n: u32 },
    #[error("index {index} outside 1..={n}")]
    IndexOutOfRange { index: Index, n: u32 },
    #[error("expected {expected} commitments, got {got}")]
    WrongCommitmentCount { expected: usize, got: usize },
    #[error("operation not allowed in phase {actual:?} (expected {expected:?})")]
    WrongPhase { expected: DkgPhase, actual: DkgPhase },
    #[error("share addressed to {recipient}, not to this participant")]
    NotRecipient { recipient: Index },
    #[error("only {qualified} qualified dealers remain, threshold is {threshold}; restart required")]
    Unrecoverable { qualified: usize, threshold: u32 },
    #[error("honest participants disagree on the DKG outcome")]
    Disagreement,
}

/// Evaluates `Σ_k coeffs[k]·x^k` by Horner's rule.
pub fn evaluate_polynomial(coefficients: &[Scalar], x: Index) -> Scalar {
    let x = Scalar::from_u64(x as u64);
    coefficients
        .iter()
        .rev()
        .fold(Scalar::ZERO, |acc, a| acc * x + *a)
}

/// Evaluates `Σ_k x^k·A_k` in the exponent.
pub fn evaluate_commitments(commitments: &[GroupPoint], x: Index) -> GroupPoint {
    let x = Scalar::from_u64(x as u64);
    commitments
        .iter()
        .rev()
        .fold(GroupPoint::identity(), |acc, a| acc * x + *a)
}

/// One dealer's secret polynomial, its public commitments and the shares
/// for recipients `1..=n` (`shares[j-1] = f(j)`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DealerOutput {
    pub dealer: Index,
    pub coefficients: Vec<Scalar>,
    pub commitments: Vec<GroupPoint>,
    pub shares: Vec<Scalar>,
}

impl DealerOutput {
    pub fn share_for(&self, recipient: Index) -> Option<Scalar> {
        self.shares.get((recipient as usize).checked_sub(1)?).copied()
    }
}

fn check_params(t: u32, n: u32) -> Result<(), DkgError> {
    if t == 0 || t > n {
        return Err(DkgError::InvalidParameters { t, n });
    }
    Ok(())
}

/// Samples a degree `t-1` polynomial with non-zero constant term and shares it
/// among `n` recipients.
pub fn deal<R: RngCore + ?Sized>(
    dealer: Index,
    t: u32,
    n: u32,
    rng: &mut R,
) -> Result<DealerOutput, DkgError> {
    check_params(t, n)?;
    let coefficients: Vec<Scalar> = (0..t).map(|_| Scalar::random_nonzero(rng)).collect();
    Ok(deal_with_coefficients(dealer, n, coefficients))
}

/// Builds a dealing from explicit coefficients.
pub fn deal_with_coefficients(dealer: Index, n: u32, coefficients: Vec<Scalar>) -> DealerOutput {
    let commitments = coefficients.iter().map(GroupPoint::mul_base).collect();
    let shares = (1..=n)
        .map(|j| evaluate_polynomial(&coefficients, j))
        .collect();
    DealerOutput {
        dealer,
        coefficients,
        commitments,
        shares,
    }
}

/// Checks `share·G = Σ_k i^k·A_jk` for a share of dealer `j` held by `i`.
pub fn verify_share(
    _dealer: Index,
    recipient: Index,
    share: &Scalar,
    commitments: &[GroupPoint],
    t: u32,
) -> Result<bool, DkgError> {
    if commitments.len() != t as usize {
        return Err(DkgError::WrongCommitmentCount {
            expected: t as usize,
            got: commitments.len(),
        });
    }
    Ok(GroupPoint::mul_base(share) == evaluate_commitments(commitments, recipient))
}

/// Reveals the disputed share in response to a complaint.
pub fn answer_complaint(dealer: &DealerOutput, complainer: Index) -> Scalar {
    dealer
        .share_for(complainer)
        .expect("complainer index within the dealt range")
}

// ---------------------------------------------------------------------------
// Messages

const KIND_DEAL_BROADCAST: u8 = 0x11;
const KIND_DEAL_PRIVATE: u8 = 0x12;
const KIND_COMPLAINTS: u8 = 0x13;
const KIND_ANSWER: u8 = 0x14;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DealBroadcast {
    pub dealer: Index,
    pub commitments: Vec<GroupPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DealPrivate {
    pub dealer: Index,
    pub recipient: Index,
    pub share: Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    NoComplaint,
    /// Complaint against the dealer, carrying the share received (if any).
    Complaint(Option<Scalar>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplaintVector {
    pub sender: Index,
    /// `verdicts[j-1]` is the verdict on dealer `j`.
    pub verdicts: Vec<Verdict>,
}

impl ComplaintVector {
    pub fn accused(&self) -> Vec<Index> {
        self.verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| matches!(v, Verdict::Complaint(_)))
            .map(|(j, _)| j as Index + 1)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplaintAnswer {
    pub dealer: Index,
    pub complainer: Index,
    pub share: Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DkgMessage {
    DealBroadcast(DealBroadcast),
    DealPrivate(DealPrivate),
    Complaints(ComplaintVector),
    Answer(ComplaintAnswer),
}

impl DkgMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            DkgMessage::DealBroadcast(m) => {
                w.u8(KIND_DEAL_BROADCAST).u32(m.dealer).u32(m.commitments.len() as u32);
                for a in &m.commitments {
                    w.point(a);
                }
            }
            DkgMessage::DealPrivate(m) => {
                w.u8(KIND_DEAL_PRIVATE).u32(m.dealer).u32(m.recipient).scalar(&m.share);
            }
            DkgMessage::Complaints(m) => {
                w.u8(KIND_COMPLAINTS).u32(m.sender).u32(m.verdicts.len() as u32);
                for v in &m.verdicts {
                    match v {
                        Verdict::NoComplaint => {
                            w.u8(0);
                        }
                        Verdict::Complaint(None) => {
                            w.u8(1);
                        }
                        Verdict::Complaint(Some(s)) => {
                            w.u8(2).scalar(s);
                        }
                    }
                }
            }
            DkgMessage::Answer(m) => {
                w.u8(KIND_ANSWER).u32(m.dealer).u32(m.complainer).scalar(&m.share);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            KIND_DEAL_BROADCAST => {
                let dealer = r.u32()?;
                let count = r.count(POINT_LEN)?;
                let commitments = (0..count).map(|_| r.point()).collect::<Result<_, _>>()?;
                DkgMessage::DealBroadcast(DealBroadcast {
                    dealer,
                    commitments,
                })
            }
            KIND_DEAL_PRIVATE => DkgMessage::DealPrivate(DealPrivate {
                dealer: r.u32()?,
                recipient: r.u32()?,
                share: r.scalar()?,
            }),
            KIND_COMPLAINTS => {
                let sender = r.u32()?;
                let count = r.count(1)?;
                let mut verdicts = Vec::with_capacity(count);
                for _ in 0..count {
                    verdicts.push(match r.u8()? {
                        0 => Verdict::NoComplaint,
                        1 => Verdict::Complaint(None),
                        2 => Verdict::Complaint(Some(r.scalar()?)),
                        _ => return Err(DecodeError::Invalid("verdict tag")),
                    });
                }
                DkgMessage::Complaints(ComplaintVector { sender, verdicts })
            }
            KIND_ANSWER => DkgMessage::Answer(ComplaintAnswer {
                dealer: r.u32()?,
                complainer: r.u32()?,
                share: r.scalar()?,
            }),
            other => return Err(DecodeError::UnknownKind(other)),
        };
        r.finish()?;
        Ok(msg)
    }
}

// ---------------------------------------------------------------------------
// Session

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DkgPhase {
    Dealing,
    Complaining,
    Answering,
    Done,
}

/// The outcome of a DKG for one participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DkgResult {
    pub index: Index,
    pub n: u32,
    pub t: u32,
    pub group_key: GroupPoint,
    pub share: Scalar,
    /// Commitments of every qualified dealer.
    pub commitments: BTreeMap<Index, Vec<GroupPoint>>,
    pub qualified: BTreeSet<Index>,
}

impl DkgResult {
    /// `Y_i = Σ_{j∈S₀} Σ_k i^k·A_jk`, the public image of participant i's share.
    pub fn verification_share(&self, i: Index) -> GroupPoint {
        self.commitments
            .values()
            .map(|c| evaluate_commitments(c, i))
            .sum()
    }

    pub fn verification_shares(&self) -> BTreeMap<Index, GroupPoint> {
        (1..=self.n)
            .map(|i| (i, self.verification_share(i)))
            .collect()
    }
}

/// Single-owner DKG state machine for one participant.
#[derive(Debug, Clone)]
pub struct DkgSession {
    n: u32,
    t: u32,
    my_index: Index,
    phase: DkgPhase,
    own: Option<DealerOutput>,
    received_shares: BTreeMap<Index, Scalar>,
    received_commitments: BTreeMap<Index, Vec<GroupPoint>>,
    misbehaving: BTreeSet<Index>,
    /// Dealers excluded for reasons an answer cannot cure.
    disqualified: BTreeSet<Index>,
    /// Open complaints: dealer -> complainers still awaiting a valid answer.
    open_complaints: BTreeMap<Index, BTreeSet<Index>>,
    complaint_senders: BTreeSet<Index>,
    filed: Vec<Index>,
}

impl DkgSession {
    pub fn new(my_index: Index, n: u32, t: u32) -> Result<Self, DkgError> {
        check_params(t, n)?;
        if my_index == 0 || my_index > n {
            return Err(DkgError::IndexOutOfRange { index: my_index, n });
        }
        Ok(DkgSession {
            n,
            t,
            my_index,
            phase: DkgPhase::Dealing,
            own: None,
            received_shares: BTreeMap::new(),
            received_commitments: BTreeMap::new(),
            misbehaving: BTreeSet::new(),
            disqualified: BTreeSet::new(),
            open_complaints: BTreeMap::new(),
            complaint_senders: BTreeSet::new(),
            filed: Vec::new(),
        })
    }

    pub fn phase(&self) -> DkgPhase {
        self.phase
    }

    pub fn index(&self) -> Index {
        self.my_index
    }

    pub fn misbehaving(&self) -> &BTreeSet<Index> {
        &self.misbehaving
    }

    /// Dealers this participant complained against.
    pub fn complaints_filed(&self) -> &[Index] {
        &self.filed
    }

    pub fn own_dealing(&self) -> Option<&DealerOutput> {
        self.own.as_ref()
    }

    fn expect_phase(&self, expected: DkgPhase) -> Result<(), DkgError> {
        if self.phase != expected {
            return Err(DkgError::WrongPhase {
                expected,
                actual: self.phase,
            });
        }
        Ok(())
    }

    fn check_index(&self, index: Index) -> Result<(), DkgError> {
        if index == 0 || index > self.n {
            return Err(DkgError::IndexOutOfRange { index, n: self.n });
        }
        Ok(())
    }

    /// Samples this participant's own dealing.
    pub fn deal<R: RngCore + ?Sized>(
        &mut self,
        rng: &mut R,
    ) -> Result<(DealBroadcast, Vec<DealPrivate>), DkgError> {
        let output = deal(self.my_index, self.t, self.n, rng)?;
        self.set_own_dealing(output)
    }

    pub fn set_own_dealing(
        &mut self,
        output: DealerOutput,
    ) -> Result<(DealBroadcast, Vec<DealPrivate>), DkgError> {
        self.expect_phase(DkgPhase::Dealing)?;
        let broadcast = DealBroadcast {
            dealer: self.my_index,
            commitments: output.commitments.clone(),
        };
        let private = (1..=self.n)
            .map(|j| DealPrivate {
                dealer: self.my_index,
                recipient: j,
                share: output.shares[(j - 1) as usize],
            })
            .collect();
        self.own = Some(output);
        Ok((broadcast, private))
    }

    pub fn handle_broadcast(&mut self, msg: &DealBroadcast) -> Result<(), DkgError> {
        self.expect_phase(DkgPhase::Dealing)?;
        self.check_index(msg.dealer)?;
        // First broadcast per dealer wins; the channel's total order makes
        // this choice identical for everyone.
        self.received_commitments
            .entry(msg.dealer)
            .or_insert_with(|| msg.commitments.clone());
        Ok(())
    }

    pub fn handle_private(&mut self, msg: &DealPrivate) -> Result<(), DkgError> {
        self.expect_phase(DkgPhase::Dealing)?;
        self.check_index(msg.dealer)?;
        if msg.recipient != self.my_index {
            return Err(DkgError::NotRecipient {
                recipient: msg.recipient,
            });
        }
        self.received_shares.entry(msg.dealer).or_insert(msg.share);
        Ok(())
    }

    /// Closes the dealing phase and produces this participant's verdicts.
    pub fn file_complaints(&mut self) -> Result<ComplaintVector, DkgError> {
        self.expect_phase(DkgPhase::Dealing)?;
        let mut verdicts = Vec::with_capacity(self.n as usize);
        for j in 1..=self.n {
            let commitments = match self.received_commitments.get(&j) {
                Some(c) if c.len() == self.t as usize => c,
                _ => {
                    // Silent or malformed dealer: nothing to verify against.
                    self.misbehaving.insert(j);
                    self.disqualified.insert(j);
                    verdicts.push(Verdict::Complaint(self.received_shares.get(&j).copied()));
                    self.filed.push(j);
                    continue;
                }
            };
            let verdict = match self.received_shares.get(&j) {
                None => {
                    self.misbehaving.insert(j);
                    Verdict::Complaint(None)
                }
                Some(share) => {
                    if verify_share(j, self.my_index, share, commitments, self.t)? {
                        Verdict::NoComplaint
                    } else {
                        Verdict::Complaint(Some(*share))
                    }
                }
            };
            if verdict != Verdict::NoComplaint {
                self.filed.push(j);
            }
            verdicts.push(verdict);
        }
        self.phase = DkgPhase::Complaining;
        Ok(ComplaintVector {
            sender: self.my_index,
            verdicts,
        })
    }

    pub fn handle_complaints(&mut self, msg: &ComplaintVector) -> Result<(), DkgError> {
        self.expect_phase(DkgPhase::Complaining)?;
        self.check_index(msg.sender)?;
        if msg.verdicts.len() != self.n as usize || !self.complaint_senders.insert(msg.sender) {
            return Ok(());
        }
        for dealer in msg.accused() {
            if dealer == msg.sender {
                continue;
            }
            self.misbehaving.insert(dealer);
            if !self.disqualified.contains(&dealer) {
                self.open_complaints
                    .entry(dealer)
                    .or_default()
                    .insert(msg.sender);
            }
        }
        Ok(())
    }

    /// Closes the complaint phase; returns the answers this participant owes.
    pub fn begin_answering(&mut self) -> Result<Vec<ComplaintAnswer>, DkgError> {
        self.expect_phase(DkgPhase::Complaining)?;
        self.phase = DkgPhase::Answering;
        let Some(own) = &self.own else {
            return Ok(Vec::new());
        };
        Ok(self
            .open_complaints
            .get(&self.my_index)
            .map(|complainers| {
                complainers
                    .iter()
                    .map(|&c| ComplaintAnswer {
                        dealer: self.my_index,
                        complainer: c,
                        share: answer_complaint(own, c),
                    })
                    .collect()
            })
            .unwrap_or_default())
    }

    /// Judges a revealed share. A dealer whose every complaint is answered
    /// with a valid share leaves the misbehaving set.
    pub fn handle_answer(&mut self, msg: &ComplaintAnswer) -> Result<bool, DkgError> {
        self.expect_phase(DkgPhase::Answering)?;
        self.check_index(msg.dealer)?;
        self.check_index(msg.complainer)?;
        if !self
            .open_complaints
            .get(&msg.dealer)
            .is_some_and(|p| p.contains(&msg.complainer))
        {
            return Ok(false);
        }
        let commitments = match self.received_commitments.get(&msg.dealer) {
            Some(c) => c,
            None => return Ok(false),
        };
        if !verify_share(msg.dealer, msg.complainer, &msg.share, commitments, self.t)? {
            return Ok(false);
        }
        if msg.complainer == self.my_index {
            self.received_shares.insert(msg.dealer, msg.share);
        }
        let pending = self.open_complaints.get_mut(&msg.dealer).expect("checked above");
        pending.remove(&msg.complainer);
        if pending.is_empty() {
            self.open_complaints.remove(&msg.dealer);
            self.misbehaving.remove(&msg.dealer);
        }
        Ok(true)
    }

    pub fn finalize(&mut self) -> Result<DkgResult, DkgError> {
        self.expect_phase(DkgPhase::Answering)?;
        self.phase = DkgPhase::Done;
        let qualified: BTreeSet<Index> = (1..=self.n)
            .filter(|j| !self.misbehaving.contains(j))
            .collect();
        if qualified.len() < self.t as usize {
            return Err(DkgError::Unrecoverable {
                qualified: qualified.len(),
                threshold: self.t,
            });
        }
        let mut commitments = BTreeMap::new();
        let mut share = Scalar::ZERO;
        for j in &qualified {
            let c = self.received_commitments[j].clone();
            // A qualified dealer either sent a valid share or answered our complaint.
            share += self.received_shares[j];
            commitments.insert(*j, c);
        }
        let group_key = commitments.values().map(|c| c[0]).sum();
        Ok(DkgResult {
            index: self.my_index,
            n: self.n,
            t: self.t,
            group_key,
            share,
            commitments,
            qualified,
        })
    }
}

// ---------------------------------------------------------------------------
// Driver

/// Scripted deviations for one participant in a DKG run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DkgFault {
    /// Sends nothing at all.
    Abort,
    /// Sends a corrupted share to each listed recipient. When
    /// `answer_honestly` is set the true share is revealed on complaint,
    /// otherwise the corrupted one.
    BadShare {
        recipients: Vec<Index>,
        answer_honestly: bool,
    },
    /// Complains against an honest dealer.
    FalseComplaint { against: Index },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DkgMessageCounts {
    pub private_shares: usize,
    pub commitment_broadcasts: usize,
    pub complaint_vectors: usize,
    pub complaint_answers: usize,
}

impl DkgMessageCounts {
    pub fn broadcasts(&self) -> usize {
        self.commitment_broadcasts + self.complaint_vectors + self.complaint_answers
    }

    /// Counts for an all-honest run with `n` participants.
    pub fn honest(n: usize) -> Self {
        DkgMessageCounts {
            private_shares: n * n,
            commitment_broadcasts: n,
            complaint_vectors: n,
            complaint_answers: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DkgRun {
    /// Outcome for every participant that took part (faulty ones included).
    pub results: BTreeMap<Index, DkgResult>,
    /// Final misbehaving set, identical for all honest participants.
    pub misbehaving: BTreeSet<Index>,
    /// `(complainer, dealer)` pairs broadcast during the complaint round.
    pub complaints: Vec<(Index, Index)>,
    /// Dealers whose answers were judged valid.
    pub rehabilitated: BTreeSet<Index>,
    pub counts: DkgMessageCounts,
}

impl DkgRun {
    pub fn group_key(&self) -> Option<GroupPoint> {
        self.results.values().next().map(|r| r.group_key)
    }
}

/// Runs a full DKG among `n` participants over `channel`, one state machine
/// per participant, applying the scripted `faults`.
pub fn run_dkg<C: Channel, R: RngCore + ?Sized>(
    channel: &mut C,
    n: u32,
    t: u32,
    faults: &BTreeMap<Index, DkgFault>,
    rng: &mut R,
) -> Result<DkgRun, DkgError> {
    check_params(t, n)?;
    let mut counts = DkgMessageCounts::default();
    let mut sessions: BTreeMap<Index, DkgSession> = BTreeMap::new();
    for i in 1..=n {
        if faults.get(&i) != Some(&DkgFault::Abort) {
            sessions.insert(i, DkgSession::new(i, n, t)?);
        }
    }

    // Dealing.
    for (&i, session) in sessions.iter_mut() {
        let (bc, shares) = session.deal(rng)?;
        channel.broadcast(i, DkgMessage::DealBroadcast(bc).encode());
        counts.commitment_broadcasts += 1;
        for mut p in shares {
            if let Some(DkgFault::BadShare { recipients, .. }) = faults.get(&i) {
                if recipients.contains(&p.recipient) {
                    p.share += Scalar::ONE;
                }
            }
            let to = p.recipient;
            channel.send_private(i, to, DkgMessage::DealPrivate(p).encode());
            counts.private_shares += 1;
        }
    }
    let everyone: Vec<Index> = (1..=n).collect();
    let delivery = channel.end_round_expecting(&everyone);
    let mut dealt = Vec::new();
    for (sender, payload) in &delivery.broadcasts {
        if let Ok(DkgMessage::DealBroadcast(m)) = DkgMessage::decode(payload) {
            if m.dealer != *sender {
                continue;
            }
            dealt.push(m.dealer);
            for s in sessions.values_mut() {
                s.handle_broadcast(&m)?;
            }
        }
    }
    for pm in &delivery.private {
        if let (Some(s), Ok(DkgMessage::DealPrivate(m))) =
            (sessions.get_mut(&pm.recipient), DkgMessage::decode(&pm.payload))
        {
            if m.dealer == pm.sender && m.recipient == pm.recipient {
                s.handle_private(&m)?;
            }
        }
    }

    // Complaints.
    for (&i, session) in sessions.iter_mut() {
        let mut vector = session.file_complaints()?;
        if let Some(DkgFault::FalseComplaint { against }) = faults.get(&i) {
            if let Some(slot) = vector.verdicts.get_mut((*against as usize).wrapping_sub(1)) {
                *slot = Verdict::Complaint(None);
            }
        }
        channel.broadcast(i, DkgMessage::Complaints(vector).encode());
        counts.complaint_vectors += 1;
    }
    let delivery = channel.end_round_expecting(&dealt);
    let mut complaints = Vec::new();
    for (sender, payload) in &delivery.broadcasts {
        if let Ok(DkgMessage::Complaints(m)) = DkgMessage::decode(payload) {
            if m.sender != *sender {
                continue;
            }
            for dealer in m.accused() {
                complaints.push((m.sender, dealer));
            }
            for s in sessions.values_mut() {
                s.handle_complaints(&m)?;
            }
        }
    }

    // Answers.
    for (&i, session) in sessions.iter_mut() {
        for mut answer in session.begin_answering()? {
            if let Some(DkgFault::BadShare {
                recipients,
                answer_honestly: false,
            }) = faults.get(&i)
            {
                if recipients.contains(&answer.complainer) {
                    answer.share += Scalar::ONE;
                }
            }
            channel.broadcast(i, DkgMessage::Answer(answer).encode());
            counts.complaint_answers += 1;
        }
    }
    let mut accused: Vec<Index> = complaints
        .iter()
        .map(|(_, d)| *d)
        .filter(|d| dealt.contains(d))
        .collect();
    accused.sort_unstable();
    accused.dedup();
    let delivery = channel.end_round_expecting(&accused);
    let mut rehabilitated = BTreeSet::new();
    for (sender, payload) in &delivery.broadcasts {
        if let Ok(DkgMessage::Answer(m)) = DkgMessage::decode(payload) {
            if m.dealer != *sender {
                continue;
            }
            let mut accepted = false;
            for s in sessions.values_mut() {
                accepted |= s.handle_answer(&m)?;
            }
            if accepted {
                rehabilitated.insert(m.dealer);
            }
        }
    }

    let mut results = BTreeMap::new();
    for (&i, session) in sessions.iter_mut() {
        results.insert(i, session.finalize()?);
    }
    let misbehaving: BTreeSet<Index> = (1..=n)
        .filter(|j| !results.values().next().is_some_and(|r| r.qualified.contains(j)))
        .collect();
    rehabilitated.retain(|d| !misbehaving.contains(d));

    let honest: Vec<&DkgResult> = results
        .iter()
        .filter(|(i, _)| !faults.contains_key(i))
        .map(|(_, r)| r)
        .collect();
    if let Some(first) = honest.first() {
        if honest
            .iter()
            .any(|r| r.group_key != first.group_key || r.qualified != first.qualified || r.commitments != first.commitments)
        {
            return Err(DkgError::Disagreement);
        }
    }

    Ok(DkgRun {
        results,
        misbehaving,
        complaints,
        rehabilitated,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LocalChannel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn constant_polynomial_gives_equal_shares() {
        let r = Scalar::from_u64(1234);
        let out = deal_with_coefficients(1, 3, vec![r]);
        assert!(out.shares.iter().all(|s| *s == r));
        assert_eq!(out.commitments, vec![GroupPoint::mul_base(&r)]);
        for i in 1..=3 {
            assert!(verify_share(1, i, &r, &out.commitments, 1).unwrap());
        }
    }

    #[test]
    fn linear_polynomial_shares() {
        let r = Scalar::from_u64(10);
        let a1 = Scalar::from_u64(3);
        let out = deal_with_coefficients(1, 3, vec![r, a1]);
        assert_eq!(
            out.shares,
            vec![Scalar::from_u64(13), Scalar::from_u64(16), Scalar::from_u64(19)]
        );
    }

    #[test]
    fn deal_rejects_bad_threshold() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(deal(1, 0, 3, &mut rng), Err(DkgError::InvalidParameters { t: 0, n: 3 }));
        assert_eq!(deal(1, 4, 3, &mut rng), Err(DkgError::InvalidParameters { t: 4, n: 3 }));
    }

    #[test]
    fn verify_share_detects_mutation_and_wrong_count() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let out = deal(1, 3, 5, &mut rng).unwrap();
        for j in 1..=5 {
            assert!(verify_share(1, j, &out.shares[j as usize - 1], &out.commitments, 3).unwrap());
            let bad = out.shares[j as usize - 1] + Scalar::ONE;
            assert!(!verify_share(1, j, &bad, &out.commitments, 3).unwrap());
        }
        assert!(matches!(
            verify_share(1, 1, &out.shares[0], &out.commitments[..2], 3),
            Err(DkgError::WrongCommitmentCount { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn single_party_dkg() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let run = run_dkg(&mut LocalChannel::new(), 1, 1, &BTreeMap::new(), &mut rng).unwrap();
        let r = &run.results[&1];
        assert_eq!(r.group_key, GroupPoint::mul_base(&r.share));
        assert_eq!(r.qualified, BTreeSet::from([1]));
    }

    #[test]
    fn silent_dealer_is_excluded_everywhere() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let faults = BTreeMap::from([(4, DkgFault::Abort)]);
        let run = run_dkg(&mut LocalChannel::new(), 5, 3, &faults, &mut rng).unwrap();
        assert_eq!(run.misbehaving, BTreeSet::from([4]));
        for r in run.results.values() {
            assert!(!r.qualified.contains(&4));
        }
    }

    #[test]
    fn phases_are_monotone() {
        let mut s = DkgSession::new(1, 3, 2).unwrap();
        assert!(matches!(s.begin_answering(), Err(DkgError::WrongPhase { .. })));
        s.file_complaints().unwrap();
        assert_eq!(s.phase(), DkgPhase::Complaining);
        assert!(s.file_complaints().is_err());
        s.begin_answering().unwrap();
        // Nobody dealt, so nobody qualifies.
        assert!(matches!(s.finalize(), Err(DkgError::Unrecoverable { qualified: 0, .. })));
        assert_eq!(s.phase(), DkgPhase::Done);
    }

    #[test]
    fn truncated_message_fails_to_decode() {
        let msg = DkgMessage::DealPrivate(DealPrivate {
            dealer: 1,
            recipient: 2,
            share: Scalar::from_u64(9),
        });
        let bytes = msg.encode();
        assert_eq!(DkgMessage::decode(&bytes).unwrap(), msg);
        assert_eq!(DkgMessage::decode(&bytes[..bytes.len() - 1]), Err(DecodeError::Truncated));
        assert!(DkgMessage::decode(&[0x99]).is_err());
    }
}
