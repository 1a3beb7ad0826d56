//! Scenario files: seed, parameters, a join/leave schedule and a scripted
//! adversary. TOML with a `version = 1` header.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::ProtocolParams;
use crate::pos::ParticipantId;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    /// Genesis members get ids `1..=participants`.
    pub participants: u32,
    #[serde(default)]
    pub params: ProtocolParams,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub adversary: Vec<AdversaryAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    /// PoS height at which the request is submitted.
    pub at: u64,
    pub op: ScheduleOp,
    pub id: ParticipantId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleOp {
    Join,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "action", deny_unknown_fields)]
pub enum AdversaryAction {
    AbortDkg {
        participant: ParticipantId,
        config: u32,
    },
    BadShare {
        participant: ParticipantId,
        config: u32,
        recipients: Vec<ParticipantId>,
        #[serde(default)]
        answer_honestly: bool,
    },
    FalseComplaint {
        participant: ParticipantId,
        config: u32,
        against: ParticipantId,
    },
    WithholdPartial {
        participant: ParticipantId,
        config: u32,
    },
    BadPartial {
        participant: ParticipantId,
        config: u32,
    },
    /// Forks the PoS chain using the leaked keys of `config`.
    LraFork { config: u32 },
    /// Funds `Q₀` after `h0` and spends that output with leaked keys.
    PostH0Fund,
    /// Serves the forked PoS chain to verifiers.
    ServeForgedChain,
    LateFunder { participant: ParticipantId },
    /// `participant` claims the init reward with `victim`'s ledger key.
    ImpersonateClaim {
        participant: ParticipantId,
        victim: ParticipantId,
    },
}

impl AdversaryAction {
    /// `(participant, config)` for actions corrupting a configuration member.
    pub fn corrupts(&self) -> Option<(ParticipantId, u32)> {
        match *self {
            AdversaryAction::AbortDkg { participant, config }
            | AdversaryAction::BadShare { participant, config, .. }
            | AdversaryAction::FalseComplaint { participant, config, .. }
            | AdversaryAction::WithholdPartial { participant, config }
            | AdversaryAction::BadPartial { participant, config } => Some((participant, config)),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        location: location.into(),
        message: message.into(),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Schedule in submission order (stable by height).
    pub fn sorted_schedule(&self) -> Vec<ScheduleEntry> {
        let mut s = self.schedule.clone();
        s.sort_by_key(|e| e.at);
        s
    }

    /// Member sets of every configuration the schedule produces, assuming
    /// no dynamic removals.
    pub fn planned_configs(&self) -> Result<Vec<BTreeSet<ParticipantId>>, ScenarioError> {
        let mut members: BTreeSet<ParticipantId> = (1..=self.participants).collect();
        let mut configs = vec![members.clone()];
        let mut churn = 0;
        let mut order: Vec<(usize, ScheduleEntry)> = self.schedule.iter().copied().enumerate().collect();
        order.sort_by_key(|(_, e)| e.at);
        for (pos, e) in order {
            let loc = format!("schedule[{pos}]");
            if e.id == 0 {
                return Err(invalid(loc, "participant id 0 is reserved"));
            }
            let ok = match e.op {
                ScheduleOp::Join => members.insert(e.id),
                ScheduleOp::Leave => members.remove(&e.id),
            };
            if !ok {
                return Err(invalid(
                    loc,
                    match e.op {
                        ScheduleOp::Join => format!("participant {} is already a member", e.id),
                        ScheduleOp::Leave => format!("participant {} is not a member", e.id),
                    },
                ));
            }
            churn += 1;
            if churn >= self.params.u {
                churn = 0;
                if members.is_empty() {
                    return Err(invalid(loc, "configuration would be empty"));
                }
                let prev = configs.last().expect("genesis present");
                let diff = prev.symmetric_difference(&members).count();
                if diff > self.params.churn_bound as usize {
                    return Err(invalid(
                        loc,
                        format!("configuration change of {diff} exceeds churn bound {}", self.params.churn_bound),
                    ));
                }
                configs.push(members.clone());
            }
        }
        Ok(configs)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(invalid("version", format!("unsupported version {}", self.version)));
        }
        if self.participants == 0 {
            return Err(invalid("participants", "at least one participant is required"));
        }
        self.params
            .validate()
            .map_err(|e| invalid("params", e.to_string()))?;
        if self.params.h0 < 3 {
            return Err(invalid("params.h0", "h0 must leave room for funding (at least 3)"));
        }
        let configs = self.planned_configs()?;
        let last = configs.len() as u32 - 1;
        let genesis = &configs[0];

        let mut corrupt: BTreeMap<u32, BTreeSet<ParticipantId>> = BTreeMap::new();
        for (pos, action) in self.adversary.iter().enumerate() {
            let loc = format!("adversary[{pos}]");
            if let Some((who, config)) = action.corrupts() {
                let members = configs
                    .get(config as usize)
                    .ok_or_else(|| invalid(&loc, format!("configuration {config} never forms")))?;
                if !members.contains(&who) {
                    return Err(invalid(&loc, format!("participant {who} is not in configuration {config}")));
                }
                let named: Vec<ParticipantId> = match action {
                    AdversaryAction::BadShare { recipients, .. } => recipients.clone(),
                    AdversaryAction::FalseComplaint { against, .. } => vec![*against],
                    _ => Vec::new(),
                };
                if let Some(x) = named.iter().find(|x| !members.contains(x) || **x == who) {
                    return Err(invalid(&loc, format!("participant {x} is not a valid target")));
                }
                corrupt.entry(config).or_default().insert(who);
            }
            match action {
                AdversaryAction::LraFork { config } => {
                    if *config + self.params.lag > last {
                        return Err(invalid(
                            &loc,
                            format!("configuration {config} is not older than the lag by the last configuration {last}"),
                        ));
                    }
                }
                AdversaryAction::PostH0Fund => {
                    if self.params.lag > last {
                        return Err(invalid(&loc, "the initial key is never compromised in this schedule"));
                    }
                }
                AdversaryAction::LateFunder { participant } => {
                    if !genesis.contains(participant) {
                        return Err(invalid(&loc, format!("participant {participant} is not a genesis member")));
                    }
                }
                AdversaryAction::ImpersonateClaim { participant, victim }
                    if (!genesis.contains(participant) || !genesis.contains(victim) || participant == victim) => {
                        return Err(invalid(&loc, "impersonation needs two distinct genesis members"));
                    }
                _ => {}
            }
        }
        for (config, who) in corrupt {
            let n = configs[config as usize].len();
            let bound = self.params.max_corrupt(n);
            if who.len() > bound {
                return Err(invalid(
                    format!("adversary (configuration {config})"),
                    format!("{} corrupt members exceed floor(f*n) = {bound}", who.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn has_attack(&self) -> bool {
        self.adversary.iter().any(|a| {
            matches!(
                a,
                AdversaryAction::LraFork { .. } | AdversaryAction::PostH0Fund | AdversaryAction::ServeForgedChain
            )
        })
    }
}
