//! Long-range attacker built from leaked key material.
//!
//! The harness hands over every share of a configuration once it is older
//! than the lag. From there the attacker can rebuild the secret key,
//! sign anything under that configuration's output key, and write an
//! alternative PoS history.

use rand::RngCore;

use crate::crypto::{schnorr_sign, GroupPoint, Hash32, Keypair, Scalar};
use crate::frost::lagrange_coefficient;
use crate::ledger::{LedgerTx, Outpoint};
use crate::net::Index;
use crate::orchestrator::{build_consolidating_tx, ConfigKeys, ConfigPayload, OrchestratorError};
use crate::pos::{beacon_value, KeyAnnouncement, Member, PosBlock, PosMessage, PowerRequest};
use crate::taproot::{tweak_pubkey, tweak_secret};

/// Interpolates the group secret from `threshold` leaked shares.
pub fn reconstruct_secret(keys: &ConfigKeys) -> Option<Scalar> {
    let chosen: Vec<(Index, Scalar)> = keys
        .shares()
        .iter()
        .take(keys.threshold)
        .map(|(i, s)| (*i, *s))
        .collect();
    if chosen.len() < keys.threshold {
        return None;
    }
    let indices: Vec<Index> = chosen.iter().map(|(i, _)| *i).collect();
    let secret: Scalar = chosen
        .iter()
        .map(|(i, s)| lagrange_coefficient(&indices, *i).map(|l| l * *s))
        .sum::<Result<Scalar, _>>()
        .ok()?;
    (GroupPoint::mul_base(&secret) == keys.group_key).then_some(secret)
}

/// A key-path spend of `inputs` under a leaked configuration key, paying a
/// key of the attacker's choosing.
pub fn forge_spend<R: RngCore + ?Sized>(
    keys: &ConfigKeys,
    secret: &Scalar,
    inputs: &[(Outpoint, u64)],
    to: GroupPoint,
    cid: &Hash32,
    fee: u64,
    rng: &mut R,
) -> Result<LedgerTx, OrchestratorError> {
    let tx = build_consolidating_tx(inputs, to, cid, fee)?;
    let q = tweak_secret(secret, &keys.taproot);
    let k = Scalar::random_nonzero(rng);
    let sig = schnorr_sign(&q, &keys.output_key(), tx.digest().as_bytes(), &k)
        .expect("nonzero tweaked secret and nonce");
    Ok(tx.with_witness(sig))
}

/// A fabricated configuration on the forged branch.
#[derive(Debug, Clone)]
pub struct ForgedConfig {
    pub payload: ConfigPayload,
    pub key: Keypair,
}

impl ForgedConfig {
    pub fn output_key(&self) -> GroupPoint {
        tweak_pubkey(&self.payload.pk, &self.payload.ckpt).output
    }
}

/// Keeps `honest[..=fork_height]` and appends `configs` forged
/// configurations. Each one is a block of attacker joins, whose hash is
/// the forged checkpoint commitment, followed by a block announcing a key
/// the attacker controls.
pub fn forge_chain<R: RngCore + ?Sized>(
    honest: &[PosBlock],
    fork_height: u64,
    seed: u64,
    first_index: u32,
    configs: u32,
    rng: &mut R,
) -> (Vec<PosBlock>, Vec<ForgedConfig>) {
    let mut blocks: Vec<PosBlock> = honest[..=(fork_height as usize).min(honest.len() - 1)].to_vec();
    let mut forged = Vec::new();
    let push = |blocks: &mut Vec<PosBlock>, messages: Vec<PosMessage>| {
        let height = blocks.len() as u64;
        let parent = blocks.last().expect("fork keeps genesis").hash();
        blocks.push(PosBlock {
            height,
            parent,
            beacon: beacon_value(seed, height),
            messages,
        });
    };
    for c in 0..configs {
        let sybils: Vec<Member> = (0..2)
            .map(|_| Member {
                id: 1_000_000 + rng.next_u32() % 1_000_000,
                pos_key: Keypair::random(rng).public,
            })
            .collect();
        push(
            &mut blocks,
            sybils
                .iter()
                .map(|m| PosMessage::Power(PowerRequest::Join { id: m.id, pos_key: m.pos_key }))
                .collect(),
        );
        let formed_at = blocks.len() as u64 - 1;
        let ckpt = blocks[formed_at as usize].hash();
        let key = Keypair::random(rng);
        let index = first_index + c;
        push(
            &mut blocks,
            vec![PosMessage::Announce(KeyAnnouncement {
                config: index,
                pk: key.public,
                formed_at,
            })],
        );
        forged.push(ForgedConfig {
            payload: ConfigPayload {
                index,
                formed_at,
                members: sybils,
                pk: key.public,
                ckpt,
            },
            key,
        });
    }
    (blocks, forged)
}
