//! Standalone DKG and signing runs over an in-memory channel, used by the
//! `dkg` and `sign` commands and the timing checks.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::{GroupPoint, Hash32, Scalar, SchnorrSignature};
use crate::dkg::{run_dkg, DkgError, DkgMessageCounts, DkgRun};
use crate::frost::{run_signing, CommitmentBoard, FrostError, SignerState, SigningRequest, SigningRun};
use crate::net::{Index, LocalChannel};
use crate::taproot::{tweak_pubkey, tweak_signature, verify_key_path, TaprootKey};

#[derive(Debug, Clone)]
pub struct DkgBench {
    pub group_key: GroupPoint,
    pub counts: DkgMessageCounts,
    pub run: DkgRun,
    pub elapsed: Duration,
}

pub fn dkg_bench(n: u32, t: u32, seed: u64) -> Result<DkgBench, DkgError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = Instant::now();
    let run = run_dkg(&mut LocalChannel::new(), n, t, &BTreeMap::new(), &mut rng)?;
    let elapsed = start.elapsed();
    Ok(DkgBench {
        group_key: run.group_key().expect("honest run has results"),
        counts: run.counts.clone(),
        run,
        elapsed,
    })
}

#[derive(Debug, Clone)]
pub struct SignBench {
    pub taproot: TaprootKey,
    /// Signature under the tweaked output key.
    pub signature: SchnorrSignature,
    pub run: SigningRun,
    pub valid: bool,
    pub dkg_elapsed: Duration,
    pub sign_elapsed: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Dkg(#[from] DkgError),
    #[error(transparent)]
    Frost(#[from] FrostError),
}

/// Generates a key among `n`, tweaks it with a fixed checkpoint hash and
/// signs `message` with `t` signers.
pub fn sign_bench(n: u32, t: u32, message: &[u8], seed: u64) -> Result<SignBench, BenchError> {
    let dkg = dkg_bench(n, t, seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5167);
    let taproot = tweak_pubkey(&dkg.group_key, &Hash32([0x42; 32]));
    let any = dkg.run.results.values().next().expect("results");
    let shares = any.verification_shares();
    let mut signers: BTreeMap<Index, SignerState> = dkg
        .run
        .results
        .iter()
        .map(|(i, r)| (*i, SignerState::new(*i, r.share)))
        .collect();
    let request = SigningRequest {
        message,
        group_key: dkg.group_key,
        tweaked_key: taproot.output,
        members: any.qualified.iter().copied().collect(),
        verification_shares: &shares,
        beacon: Scalar::from_u64(seed),
        threshold: t as usize,
        preprocess_count: 1,
    };
    let start = Instant::now();
    let run = run_signing(
        &mut LocalChannel::new(),
        &request,
        &mut signers,
        &mut CommitmentBoard::default(),
        &BTreeMap::new(),
        &mut rng,
    )?;
    let signature = tweak_signature(&run.signature, message, &taproot);
    let sign_elapsed = start.elapsed();
    Ok(SignBench {
        valid: verify_key_path(&taproot.output, message, &signature),
        taproot,
        signature,
        run,
        dkg_elapsed: dkg.elapsed,
        sign_elapsed,
    })
}
