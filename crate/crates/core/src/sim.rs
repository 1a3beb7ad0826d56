//! Deterministic scenario runner.
//!
//! One scheduler drives every participant: it feeds the join/leave
//! schedule into the PoS chain, runs key generation and checkpoint signing
//! on each reconfiguration, mines the ledger, and finally plays the
//! scripted attacker and the verifiers. Every step is appended to a JSON
//! lines log; protocol invariants that fail are collected as violations.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::adversary::{forge_chain, forge_spend, reconstruct_secret};
use crate::crypto::{GroupPoint, Hash32, Keypair};
use crate::dkg::DkgFault;
use crate::frost::{participant_rng, SigningFault};
use crate::ledger::{LedgerBackend, LedgerTx, Outpoint, Rejection, SimChain, TxOutput};
use crate::net::Index;
use crate::orchestrator::{
    assumption3_holds, btc_commitment, build_checkpoint_tx, build_consolidating_tx,
    collect_initial_inputs, ensure_on_ledger, funding_tx, judge_reward_claim, on_reconfig,
    publish_config, refund_tx, run_signing_round, submit_by_members, CheckpointRecord,
    CheckpointStatus, ConfigKeys, KeyGeneration, OrchestratorError, Participant, ProtocolParams,
    RewardClaim, RewardDecision, SignedTx,
};
use crate::pos::{Configuration, ContentStore, ParticipantId, PosBlock, PosChain, PosMessage, PowerRequest};
use crate::scenario::{AdversaryAction, Scenario, ScheduleOp};
use crate::verifier::{resolve_initial_tx, verify, walk_chain, InitialTx, Verdict, VerificationOutcome};

pub const POS_DUMP_FORMAT: &str = "pikachu-pos";
pub const POS_DUMP_VERSION: u32 = 1;

/// Upper bound on PoS blocks one run may produce.
const MAX_POS_HEIGHT: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{stage}: {source}")]
    Protocol {
        stage: String,
        #[source]
        source: OrchestratorError,
    },
    #[error("simulation did not terminate by PoS height {0}")]
    Runaway(u64),
}

fn at(stage: impl Into<String>) -> impl FnOnce(OrchestratorError) -> SimError {
    let stage = stage.into();
    move |source| SimError::Protocol { stage, source }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    fn event(&mut self, name: &str, fields: Value) {
        let mut obj = match fields {
            Value::Object(map) => map,
            _ => serde_json::Map::new(),
        };
        obj.insert("event".into(), Value::String(name.into()));
        self.lines
            .push(serde_json::to_string(&Value::Object(obj)).expect("log line serializes"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

/// Versioned file holding a PoS chain as served to a verifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosDump {
    pub format: String,
    pub version: u32,
    pub blocks: Vec<PosBlock>,
}

impl PosDump {
    pub fn new(blocks: Vec<PosBlock>) -> Self {
        PosDump {
            format: POS_DUMP_FORMAT.into(),
            version: POS_DUMP_VERSION,
            blocks,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pos dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let d: PosDump = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if d.format != POS_DUMP_FORMAT || d.version != POS_DUMP_VERSION {
            return Err(format!("unsupported header {:?} v{}", d.format, d.version));
        }
        Ok(d)
    }
}

/// What a verifier needs besides the dumps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustAnchor {
    pub q0: GroupPoint,
    pub h0: u64,
    pub genesis_cid: Hash32,
}

#[derive(Debug, Clone)]
pub struct ServedVerdict {
    pub server: String,
    pub outcome: VerificationOutcome,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub log: RunLog,
    pub violations: Vec<String>,
    pub records: Vec<CheckpointRecord>,
    pub dkg_misbehaving: BTreeMap<u32, BTreeSet<ParticipantId>>,
    pub signing_rounds: BTreeMap<u32, usize>,
    pub rewards: Vec<(RewardClaim, RewardDecision)>,
    pub ledger_rejections: Vec<(String, Rejection)>,
    pub verdicts: Vec<ServedVerdict>,
    pub initial_inputs: Vec<Outpoint>,
    pub refunded: Vec<ParticipantId>,
    pub ledger: SimChain,
    pub store: ContentStore,
    pub pos_blocks: Vec<PosBlock>,
    pub forged_chain: Option<Vec<PosBlock>>,
    pub anchor: TrustAnchor,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Confirmed checkpoints after the initial transaction.
    pub fn checkpoints_confirmed(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.index > 0 && r.status == CheckpointStatus::Confirmed)
            .count()
    }

    pub fn verdict(&self, server: &str) -> Option<&VerificationOutcome> {
        self.verdicts.iter().find(|v| v.server == server).map(|v| &v.outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    InitOnly,
    Full,
}

pub fn run(scenario: &Scenario) -> Result<RunReport, SimError> {
    Simulation::new(scenario).run(Stage::Full)
}

/// Runs only the initialization and funding protocol.
pub fn run_init(scenario: &Scenario) -> Result<RunReport, SimError> {
    Simulation::new(scenario).run(Stage::InitOnly)
}

struct Simulation<'a> {
    scenario: &'a Scenario,
    params: ProtocolParams,
    rng: ChaCha20Rng,
    adv_rng: ChaCha20Rng,
    people: BTreeMap<ParticipantId, Participant>,
    coins: BTreeMap<ParticipantId, (Outpoint, u64)>,
    pos: PosChain,
    ledger: SimChain,
    store: ContentStore,
    keys: Vec<ConfigKeys>,
    records: Vec<CheckpointRecord>,
    compromised: BTreeSet<u32>,
    late_funding: BTreeMap<ParticipantId, (Outpoint, u64)>,
    log: RunLog,
    violations: Vec<String>,
    dkg_misbehaving: BTreeMap<u32, BTreeSet<ParticipantId>>,
    signing_rounds: BTreeMap<u32, usize>,
    rewards: Vec<(RewardClaim, RewardDecision)>,
    ledger_rejections: Vec<(String, Rejection)>,
    verdicts: Vec<ServedVerdict>,
    initial_inputs: Vec<Outpoint>,
    refunded: Vec<ParticipantId>,
    forged_chain: Option<Vec<PosBlock>>,
    q0: GroupPoint,
    genesis_cid: Hash32,
}

impl<'a> Simulation<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let params = scenario.params.clone();
        let people: BTreeMap<ParticipantId, Participant> = (1..=scenario.participants)
            .map(|id| (id, Participant::derive(scenario.seed, id)))
            .collect();
        let members: Vec<_> = people.values().map(Participant::member).collect();
        Simulation {
            rng: participant_rng(scenario.seed, 0, b"simulation"),
            adv_rng: participant_rng(scenario.seed, 0, b"adversary"),
            pos: PosChain::new(scenario.seed, &members, params.u, params.delta),
            ledger: SimChain::new(params.settlement_depth),
            store: ContentStore::new(),
            coins: BTreeMap::new(),
            keys: Vec::new(),
            records: Vec::new(),
            compromised: BTreeSet::new(),
            late_funding: BTreeMap::new(),
            log: RunLog::default(),
            violations: Vec::new(),
            dkg_misbehaving: BTreeMap::new(),
            signing_rounds: BTreeMap::new(),
            rewards: Vec::new(),
            ledger_rejections: Vec::new(),
            verdicts: Vec::new(),
            initial_inputs: Vec::new(),
            refunded: Vec::new(),
            forged_chain: None,
            q0: GroupPoint::identity(),
            genesis_cid: Hash32::default(),
            people,
            params,
            scenario,
        }
    }

    fn violation(&mut self, what: String) {
        self.log.event("violation", json!({ "what": what }));
        self.violations.push(what);
    }

    fn person(&mut self, id: ParticipantId) -> &Participant {
        let seed = self.scenario.seed;
        self.people.entry(id).or_insert_with(|| Participant::derive(seed, id))
    }

    fn ids(config: &Configuration, indices: impl IntoIterator<Item = Index>) -> Vec<ParticipantId> {
        indices.into_iter().filter_map(|i| config.id_at(i)).collect()
    }

    fn dkg_faults(&self, config: &Configuration) -> BTreeMap<Index, DkgFault> {
        let mut faults = BTreeMap::new();
        for a in &self.scenario.adversary {
            let (who, fault) = match a {
                AdversaryAction::AbortDkg { participant, config: c } if *c == config.index => {
                    (*participant, DkgFault::Abort)
                }
                AdversaryAction::BadShare {
                    participant,
                    config: c,
                    recipients,
                    answer_honestly,
                } if *c == config.index => (
                    *participant,
                    DkgFault::BadShare {
                        recipients: recipients.iter().filter_map(|r| config.index_of(*r)).collect(),
                        answer_honestly: *answer_honestly,
                    },
                ),
                AdversaryAction::FalseComplaint {
                    participant,
                    config: c,
                    against,
                } if *c == config.index => match config.index_of(*against) {
                    Some(against) => (*participant, DkgFault::FalseComplaint { against }),
                    None => continue,
                },
                _ => continue,
            };
            if let Some(i) = config.index_of(who) {
                faults.insert(i, fault);
            }
        }
        faults
    }

    fn signing_faults(&self, config: &Configuration) -> BTreeMap<Index, SigningFault> {
        let mut faults = BTreeMap::new();
        for a in &self.scenario.adversary {
            let (who, fault) = match a {
                AdversaryAction::WithholdPartial { participant, config: c } if *c == config.index => {
                    (*participant, SigningFault::Withhold)
                }
                AdversaryAction::BadPartial { participant, config: c } if *c == config.index => {
                    (*participant, SigningFault::BadPartial)
                }
                _ => continue,
            };
            if let Some(i) = config.index_of(who) {
                faults.insert(i, fault);
            }
        }
        faults
    }

    fn coin(&mut self, id: ParticipantId) -> (Outpoint, u64) {
        if let Some(c) = self.coins.get(&id) {
            return *c;
        }
        let key = self.person(id).btc.public;
        let amount = self.params.initial_coins;
        let op = self.ledger.mint(key, amount);
        self.ledger.mine_block();
        self.coins.insert(id, (op, amount));
        (op, amount)
    }

    /// Sends `funding_amount` from `id` to `key`; returns the funding output.
    fn fund(&mut self, id: ParticipantId, key: GroupPoint, release: u64) -> Result<(LedgerTx, Outpoint, u64), SimError> {
        let coin = self.coin(id);
        let btc = self.person(id).btc;
        let amount = self.params.funding_amount;
        let tx = funding_tx(&btc, coin, key, amount, release, self.params.fee, &mut self.rng)
            .map_err(at(format!("funding by {id}")))?;
        self.ledger
            .submit(tx.clone())
            .map_err(|r| at(format!("funding by {id}"))(r.into()))?;
        match tx.outputs.get(1) {
            Some(change) => {
                self.coins.insert(id, (tx.outpoint(1), change.amount));
            }
            None => {
                self.coins.remove(&id);
            }
        }
        let op = tx.outpoint(0);
        Ok((tx, op, amount))
    }

    fn mine_until(&mut self, height: u64) {
        while self.ledger.height() < height {
            self.ledger.mine_block();
        }
    }

    fn log_dkg(&mut self, kg: &KeyGeneration) {
        let config = &kg.keys.config;
        let misbehaving: BTreeSet<ParticipantId> =
            Self::ids(config, kg.run.misbehaving.iter().copied()).into_iter().collect();
        self.dkg_misbehaving.insert(config.index, misbehaving.clone());
        let complaints: Vec<Value> = kg
            .run
            .complaints
            .iter()
            .map(|(c, d)| json!([config.id_at(*c), config.id_at(*d)]))
            .collect();
        self.log.event(
            "dkg",
            json!({
                "config": config.index,
                "members": config.ids(),
                "formed_at": config.formed_at,
                "threshold": kg.keys.threshold,
                "pk": kg.keys.group_key,
                "ckpt": kg.keys.ckpt,
                "q": kg.keys.output_key(),
                "misbehaving": misbehaving,
                "complaints": complaints,
                "rehabilitated": Self::ids(config, kg.run.rehabilitated.iter().copied()),
                "messages": kg.run.counts,
                "pos_blocks": [kg.started_at, kg.finished_at],
            }),
        );
    }

    fn log_signing(&mut self, checkpoint: u32, signer_config: &Configuration, signed: &SignedTx) {
        self.signing_rounds.insert(checkpoint, signed.run.rounds);
        let sets: Vec<Vec<ParticipantId>> = signed
            .run
            .signer_sets
            .iter()
            .map(|s| Self::ids(signer_config, s.iter().copied()))
            .collect();
        self.log.event(
            "signing",
            json!({
                "checkpoint": checkpoint,
                "config": signer_config.index,
                "rounds": signed.run.rounds,
                "signer_sets": sets,
                "cheaters": Self::ids(signer_config, signed.run.cheaters.iter().copied()),
                "proofs": signed.run.proofs.len(),
                "restart_notices": signed.run.restart_notices,
                "pos_blocks": signed.blocks_used,
            }),
        );
    }

    /// Submits from every member, mines one block and waits for finality.
    fn confirm(&mut self, record_pos: usize, signed: SignedTx, members: usize) -> Result<(), SimError> {
        let index = self.records[record_pos].index;
        let subs = submit_by_members(&mut self.ledger, &signed.tx, members)
            .map_err(|r| at(format!("checkpoint {index} submission"))(r.into()))?;
        let duplicates = subs.len() - 1;
        self.records[record_pos].tx = Some(signed.tx.clone());
        self.records[record_pos].status = CheckpointStatus::Submitted;
        let height = self.ledger.mine_block();
        let id = signed.tx.id();
        if self.ledger.confirmation_height(&id) != Some(height) {
            self.violation(format!("checkpoint {index} not confirmed in the next block"));
        } else {
            self.records[record_pos].status = CheckpointStatus::Confirmed;
        }
        self.mine_until(height + self.params.settlement_depth);
        let r = &self.records[record_pos];
        self.log.event(
            "checkpoint",
            json!({
                "index": index,
                "txid": id,
                "inputs": signed.tx.inputs.len(),
                "amount": signed.tx.outputs[0].amount,
                "q": r.q,
                "cid": r.cid,
                "confirmed_at": height,
                "duplicate_submissions": duplicates,
                "status": r.status,
            }),
        );
        Ok(())
    }

    fn run(mut self, stage: Stage) -> Result<RunReport, SimError> {
        self.log.event(
            "start",
            json!({
                "scenario": self.scenario.name,
                "seed": self.scenario.seed,
                "participants": self.scenario.participants,
                "params": self.params,
            }),
        );
        self.init()?;
        if stage == Stage::Full {
            self.main_loop()?;
        }
        self.refunds();
        if stage == Stage::Full {
            self.attack()?;
            self.verify_honest();
            self.final_checks();
        }
        self.log.event(
            "summary",
            json!({
                "checkpoints": self.records.len() - 1,
                "pos_height": self.pos.height(),
                "ledger_height": self.ledger.height(),
                "violations": self.violations.len(),
            }),
        );
        Ok(RunReport {
            log: self.log,
            violations: self.violations,
            records: self.records,
            dkg_misbehaving: self.dkg_misbehaving,
            signing_rounds: self.signing_rounds,
            rewards: self.rewards,
            ledger_rejections: self.ledger_rejections,
            verdicts: self.verdicts,
            initial_inputs: self.initial_inputs,
            refunded: self.refunded,
            ledger: self.ledger,
            store: self.store,
            pos_blocks: self.pos.blocks().to_vec(),
            forged_chain: self.forged_chain,
            anchor: TrustAnchor {
                q0: self.q0,
                h0: self.params.h0,
                genesis_cid: self.genesis_cid,
            },
        })
    }

    fn init(&mut self) -> Result<(), SimError> {
        let genesis: Vec<ParticipantId> = (1..=self.scenario.participants).collect();
        for &id in &genesis {
            let key = self.person(id).btc.public;
            let op = self.ledger.mint(key, self.params.initial_coins);
            self.coins.insert(id, (op, self.params.initial_coins));
        }
        self.ledger.mine_block();

        for &id in &genesis {
            let commitment = btc_commitment(&self.person(id).btc.public);
            self.pos.submit(PosMessage::CommitPk { id, commitment });
        }
        self.pos.produce_blocks(self.pos.delta());
        self.log.event("commitments", json!({ "count": genesis.len(), "pos_height": self.pos.height() }));

        let config0 = self.pos.genesis_config();
        let faults = self.dkg_faults(&config0);
        let kg = on_reconfig(&mut self.pos, &config0, &self.params, &faults, &mut self.rng)
            .map_err(at("dkg for configuration 0"))?;
        self.log_dkg(&kg);
        let payload = kg.keys.payload();
        self.genesis_cid = publish_config(&mut self.store, &payload);
        self.q0 = kg.keys.output_key();
        self.records.push(CheckpointRecord::new(&kg.keys, self.genesis_cid));
        self.keys.push(kg.keys);

        let late: BTreeSet<ParticipantId> = self
            .scenario
            .adversary
            .iter()
            .filter_map(|a| match a {
                AdversaryAction::LateFunder { participant } => Some(*participant),
                _ => None,
            })
            .collect();
        let release = self.params.release;
        for &id in genesis.iter().filter(|id| !late.contains(id)) {
            let (tx, _, _) = self.fund(id, self.q0, release)?;
            self.log.event("funding", json!({ "participant": id, "txid": tx.id(), "late": false }));
        }
        self.ledger.mine_block();
        if self.ledger.height() >= self.params.h0 {
            self.violation("on-time funding confirmed at or after h0".into());
        }
        self.mine_until(self.params.h0);
        for &id in &late {
            let (tx, op, amount) = self.fund(id, self.q0, release)?;
            self.late_funding.insert(id, (op, amount));
            self.log.event("funding", json!({ "participant": id, "txid": tx.id(), "late": true }));
        }
        self.ledger.mine_block();
        self.mine_until(self.params.h0 + self.params.settlement_depth);

        let inputs = collect_initial_inputs(&self.ledger, &self.q0, self.params.h0);
        if inputs.is_empty() {
            return Err(at("initial transaction")(OrchestratorError::NoInitialFunding));
        }
        if inputs.len() != genesis.len() - late.len() {
            self.violation(format!(
                "initial transaction has {} inputs, expected {}",
                inputs.len(),
                genesis.len() - late.len()
            ));
        }
        self.initial_inputs = inputs.iter().map(|(o, _)| *o).collect();
        let tx0 = build_consolidating_tx(&inputs, self.q0, &self.genesis_cid, self.params.fee)
            .map_err(at("initial transaction"))?;
        let sign_faults = self.signing_faults(&self.keys[0].config);
        let signed = run_signing_round(&mut self.pos, &mut self.keys[0], &tx0, &self.params, &sign_faults, &mut self.rng)
            .map_err(at("signing the initial transaction"))?;
        let config0 = self.keys[0].config.clone();
        self.log_signing(0, &config0, &signed);
        self.confirm(0, signed, config0.len())?;

        self.judge_rewards(&genesis, &late);

        for (&id, &(op, amount)) in &self.late_funding.clone() {
            if self.ledger.height() + 1 >= self.params.release {
                continue;
            }
            let btc = self.person(id).btc;
            let tx = refund_tx(&btc, op, amount, self.params.fee, &mut self.rng);
            match self.ledger.submit(tx) {
                Err(r @ Rejection::PrematureTimelock { .. }) => {
                    self.log.event("early-refund", json!({ "participant": id, "rejected": r.code() }));
                    self.ledger_rejections.push((format!("early refund by {id}"), r));
                }
                other => self.violation(format!("refund before release by {id} was not rejected: {other:?}")),
            }
        }
        Ok(())
    }

    fn judge_rewards(&mut self, genesis: &[ParticipantId], late: &BTreeSet<ParticipantId>) {
        let tx0 = self.records[0].tx.clone().expect("initial transaction recorded");
        let mut claims: Vec<(RewardClaim, Option<ParticipantId>)> = Vec::new();
        for &id in genesis {
            let btc_pk = self.person(id).btc.public;
            claims.push((RewardClaim { id, btc_pk }, None));
        }
        for a in &self.scenario.adversary {
            if let AdversaryAction::ImpersonateClaim { participant, victim } = a {
                let seed = self.scenario.seed;
                let btc_pk = Participant::derive(seed, *victim).btc.public;
                claims.push((RewardClaim { id: *participant, btc_pk }, Some(*victim)));
            }
        }
        for (claim, victim) in claims {
            let decision = judge_reward_claim(&self.pos, &self.ledger, &tx0, &claim, &self.params);
            let expected = if victim.is_some() {
                RewardDecision::CommitmentMismatch
            } else if late.contains(&claim.id) {
                RewardDecision::NotFunded
            } else {
                RewardDecision::Eligible { reward: self.params.reward() }
            };
            if decision != expected {
                self.violation(format!("reward claim by {} judged {decision:?}, expected {expected:?}", claim.id));
            }
            self.log.event(
                "reward",
                json!({ "participant": claim.id, "impersonating": victim, "decision": decision }),
            );
            self.rewards.push((claim, decision));
        }
    }

    fn main_loop(&mut self) -> Result<(), SimError> {
        let schedule = self.scenario.sorted_schedule();
        let mut next = 0;
        loop {
            while next < schedule.len() && schedule[next].at <= self.pos.height() {
                let e = schedule[next];
                let req = match e.op {
                    ScheduleOp::Join => PowerRequest::Join {
                        id: e.id,
                        pos_key: self.person(e.id).pos.public,
                    },
                    ScheduleOp::Leave => PowerRequest::Leave { id: e.id },
                };
                self.pos.submit(PosMessage::Power(req));
                next += 1;
            }
            if let Some(ev) = self.pos.take_event() {
                self.reconfigure(ev.config)?;
                continue;
            }
            if next >= schedule.len() && !self.pos.has_pending() {
                break;
            }
            if self.pos.height() > MAX_POS_HEIGHT {
                return Err(SimError::Runaway(MAX_POS_HEIGHT));
            }
            self.pos.produce_block();
        }
        for r in self.pos.rejected().to_vec() {
            self.violation(format!("power request {:?} rejected: {}", r.request, r.error));
        }
        Ok(())
    }

    fn reconfigure(&mut self, config: Configuration) -> Result<(), SimError> {
        let m = config.index;
        if !assumption3_holds(&self.ledger, &self.records, m, self.params.lag) {
            self.violation(format!("a checkpoint older than the lag is not final when configuration {m} forms"));
        }
        for j in 0..=m.saturating_sub(self.params.lag) {
            if m >= self.params.lag && self.compromised.insert(j) {
                self.log.event("keys-leaked", json!({ "config": j, "at_config": m }));
            }
        }

        let faults = self.dkg_faults(&config);
        let kg = on_reconfig(&mut self.pos, &config, &self.params, &faults, &mut self.rng)
            .map_err(at(format!("dkg for configuration {m}")))?;
        self.log_dkg(&kg);
        let cid = publish_config(&mut self.store, &kg.keys.payload());
        if self.params.remove_misbehaving {
            for id in Self::ids(&config, kg.run.misbehaving.iter().copied()) {
                if self.pos.power_table().contains(id) {
                    self.pos.submit(PosMessage::Power(PowerRequest::Leave { id }));
                }
            }
        }
        let q_next = kg.keys.output_key();
        self.records.push(CheckpointRecord::new(&kg.keys, cid));
        self.keys.push(kg.keys);
        let pos_in_records = self.records.len() - 1;
        let prev = pos_in_records - 1;

        if ensure_on_ledger(&mut self.ledger, &self.records[prev])
            .map_err(|r| at(format!("resubmitting checkpoint {}", prev))(r.into()))?
        {
            self.log.event("resubmitted", json!({ "checkpoint": prev }));
            self.ledger.mine_block();
        }

        let tx = match build_checkpoint_tx(&self.records[prev], q_next, &cid, self.params.fee) {
            Ok(tx) => tx,
            Err(OrchestratorError::FundingExhausted { .. }) => self.refill(prev, q_next, &cid)?,
            Err(e) => return Err(at(format!("checkpoint {m}"))(e)),
        };
        let signer_config = self.keys[prev].config.clone();
        let sign_faults = self.signing_faults(&signer_config);
        let signed = run_signing_round(&mut self.pos, &mut self.keys[prev], &tx, &self.params, &sign_faults, &mut self.rng)
            .map_err(at(format!("signing checkpoint {m}")))?;
        if signed.run.rounds > sign_faults.len() + 1 {
            self.violation(format!(
                "checkpoint {m} took {} signing rounds with {} faulty signers",
                signed.run.rounds,
                sign_faults.len()
            ));
        }
        self.log_signing(m, &signer_config, &signed);
        self.confirm(pos_in_records, signed, signer_config.len())
    }

    /// Tops up the head key from the outgoing members' own coins and spends
    /// the head together with the new outputs.
    fn refill(&mut self, prev: usize, q_next: GroupPoint, cid: &Hash32) -> Result<LedgerTx, SimError> {
        let head = self.records[prev].head_output();
        let q = self.records[prev].q;
        let release = self.ledger.height() + self.params.release;
        let mut inputs: Vec<(Outpoint, u64)> = head.into_iter().collect();
        for id in self.keys[prev].config.ids() {
            let (_, op, amount) = self.fund(id, q, release)?;
            inputs.push((op, amount));
        }
        self.ledger.mine_block();
        inputs.sort();
        self.log.event("refill", json!({ "checkpoint": prev, "inputs": inputs.len() }));
        build_consolidating_tx(&inputs, q_next, cid, self.params.fee).map_err(at(format!("refill of checkpoint {prev}")))
    }

    fn refunds(&mut self) {
        if self.late_funding.is_empty() {
            return;
        }
        self.mine_until(self.params.release.saturating_sub(1));
        for (&id, &(op, amount)) in &self.late_funding.clone() {
            let btc = self.person(id).btc;
            let tx = refund_tx(&btc, op, amount, self.params.fee, &mut self.rng);
            let id_tx = tx.id();
            match self.ledger.submit(tx) {
                Ok(_) => {
                    let h = self.ledger.mine_block();
                    self.refunded.push(id);
                    self.log.event("refund", json!({ "participant": id, "txid": id_tx, "height": h }));
                }
                Err(r) => self.violation(format!("refund by {id} at release rejected: {r}")),
            }
        }
    }

    fn attack(&mut self) -> Result<(), SimError> {
        if !self.scenario.has_attack() {
            return Ok(());
        }
        let last = self.keys.len() as u32 - 1;
        let seed = self.scenario.seed;
        let actions = self.scenario.adversary.clone();

        let fork_config = actions
            .iter()
            .filter_map(|a| match a {
                AdversaryAction::LraFork { config } => Some(*config),
                _ => None,
            })
            .min()
            .unwrap_or(0);
        let fork_height = self
            .keys
            .get(fork_config as usize + 1)
            .map_or(self.pos.height(), |k| k.config.formed_at - 1);
        let (forged_blocks, forged) = forge_chain(
            self.pos.blocks(),
            fork_height,
            seed,
            fork_config + 1,
            last - fork_config,
            &mut self.adv_rng,
        );
        for f in &forged {
            publish_config(&mut self.store, &f.payload);
        }
        let forged_head = forged.last().expect("at least one forged configuration");
        let forged_q = forged_head.output_key();
        let forged_cid = crate::pos::content_id(&forged_head.payload.encode());
        self.log.event(
            "forged-chain",
            json!({
                "fork_height": fork_height,
                "length": forged_blocks.len(),
                "forged_configs": forged.len(),
                "forged_q": forged_q,
            }),
        );

        for a in &actions {
            match a {
                AdversaryAction::LraFork { config } => {
                    let j = *config as usize;
                    if !self.compromised.contains(config) {
                        self.violation(format!("lra-fork uses configuration {j} before its keys leaked"));
                        continue;
                    }
                    let Some(secret) = reconstruct_secret(&self.keys[j]) else {
                        self.violation(format!("leaked shares of configuration {j} do not rebuild its key"));
                        continue;
                    };
                    self.log.event("key-rebuilt", json!({ "config": j }));
                    // Re-spend the output configuration j controlled.
                    if let Some(head) = self.records[j].head_output() {
                        let tx = forge_spend(&self.keys[j], &secret, &[head], forged_q, &forged_cid, self.params.fee, &mut self.adv_rng)
                            .map_err(at("forging a checkpoint"))?;
                        self.expect_rejection(format!("forged re-spend of checkpoint {j}"), tx, "double-spend");
                    }
                    // Spend the live head with the stale key.
                    if let Some(head) = self.records.last().and_then(CheckpointRecord::head_output) {
                        let tx = forge_spend(&self.keys[j], &secret, &[head], forged_q, &forged_cid, self.params.fee, &mut self.adv_rng)
                            .map_err(at("forging a checkpoint"))?;
                        self.expect_rejection("forged spend of the live head".into(), tx, "bad-signature");
                    }
                }
                AdversaryAction::PostH0Fund => self.post_h0_fund(forged_q, &forged_cid)?,
                _ => {}
            }
        }

        if actions.iter().any(|a| matches!(a, AdversaryAction::ServeForgedChain)) {
            self.serve("forged", forged_blocks.clone(), Verdict::RejectedNoValidState, None);
            let (tip_fork, tip_forged) = forge_chain(
                self.pos.blocks(),
                self.pos.height(),
                seed,
                last + 1,
                1,
                &mut self.adv_rng,
            );
            for f in &tip_forged {
                publish_config(&mut self.store, &f.payload);
            }
            self.serve("forged-tip", tip_fork, Verdict::Accepted, Some(1));
        }
        self.forged_chain = Some(forged_blocks);
        Ok(())
    }

    fn expect_rejection(&mut self, what: String, tx: LedgerTx, code: &str) {
        match self.ledger.submit(tx) {
            Err(r) => {
                if r.code() != code {
                    self.violation(format!("{what} rejected as {} instead of {code}", r.code()));
                }
                self.log.event("ledger-rejected", json!({ "what": what, "reason": r.code() }));
                self.ledger_rejections.push((what, r));
            }
            Ok(_) => self.violation(format!("{what} was accepted by the ledger")),
        }
    }

    fn post_h0_fund(&mut self, to: GroupPoint, cid: &Hash32) -> Result<(), SimError> {
        if !self.compromised.contains(&0) {
            self.violation("post-h0 funding attempted before the initial keys leaked".into());
            return Ok(());
        }
        let Some(secret) = reconstruct_secret(&self.keys[0]) else {
            self.violation("leaked shares of configuration 0 do not rebuild its key".into());
            return Ok(());
        };
        let attacker = Keypair::random(&mut self.adv_rng);
        let amount = self.params.funding_amount;
        let coin = self.ledger.mint(attacker.public, amount + self.params.fee);
        self.ledger.mine_block();
        let fund = LedgerTx::unsigned(vec![coin], vec![TxOutput::to_key(amount, self.q0)]);
        let sig = attacker.sign(fund.digest().as_bytes(), &mut self.adv_rng);
        let fund = fund.with_witness(sig);
        self.ledger
            .submit(fund.clone())
            .map_err(|r| at("attacker funding Q0")(r.into()))?;
        self.ledger.mine_block();
        let spend = forge_spend(&self.keys[0], &secret, &[(fund.outpoint(0), amount)], to, cid, self.params.fee, &mut self.adv_rng)
            .map_err(at("forging a spend of Q0"))?;
        let spend_id = spend.id();
        let accepted = self.ledger.submit(spend).is_ok();
        let h = self.ledger.mine_block();
        self.log.event(
            "post-h0-branch",
            json!({ "funding": fund.id(), "spend": spend_id, "accepted": accepted, "height": h }),
        );
        match resolve_initial_tx(&self.ledger, &self.q0, self.params.h0) {
            Ok(InitialTx::Found(tx)) if Some(tx.id()) == self.records[0].txid() => {}
            other => self.violation(format!("initial transaction resolved to {other:?}")),
        }
        Ok(())
    }

    fn serve(&mut self, server: &str, blocks: Vec<PosBlock>, expected: Verdict, rollback: Option<usize>) {
        match verify(&self.ledger, &self.store, &blocks, &self.q0, self.params.h0, Some(&self.genesis_cid)) {
            Ok(outcome) => {
                if outcome.verdict != expected || rollback.is_some_and(|r| r != outcome.rollback_count) {
                    self.violation(format!(
                        "verifier on {server} chain: {:?} after {} rollbacks",
                        outcome.verdict, outcome.rollback_count
                    ));
                }
                self.log.event(
                    "verify",
                    json!({
                        "server": server,
                        "verdict": outcome.verdict,
                        "rollback_count": outcome.rollback_count,
                        "head_tx": outcome.head_tx,
                        "cid": outcome.cid,
                        "hops": outcome.hops,
                        "accepted_config": outcome.accepted_config,
                    }),
                );
                self.verdicts.push(ServedVerdict {
                    server: server.into(),
                    outcome,
                });
            }
            Err(e) => self.violation(format!("verifier on {server} chain failed: {e}")),
        }
    }

    fn verify_honest(&mut self) {
        let blocks = self.pos.blocks().to_vec();
        self.serve("honest", blocks, Verdict::Accepted, Some(0));
    }

    fn final_checks(&mut self) {
        let unlinked: Vec<u32> = self
            .records
            .windows(2)
            .filter_map(|pair| {
                let head = pair[0].head_output()?;
                let next = pair[1].tx.as_ref()?;
                (!next.inputs.contains(&head.0)).then_some(pair[1].index)
            })
            .collect();
        for i in unlinked {
            self.violation(format!("checkpoint {i} does not spend the previous checkpoint output"));
        }
        if let Ok(InitialTx::Found(tx0)) = resolve_initial_tx(&self.ledger, &self.q0, self.params.h0) {
            match walk_chain(&self.ledger, &tx0) {
                Ok(head) if Some(head.head.id()) == self.records.last().and_then(CheckpointRecord::txid) => {}
                other => self.violation(format!("ledger walk ends at {:?}", other.map(|h| h.head.id()))),
            }
        }
        if !self.ledger.conservation_holds() {
            self.violation("ledger conservation failed".into());
        }
    }
}
