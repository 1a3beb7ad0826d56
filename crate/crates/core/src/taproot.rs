//! Taproot-style key tweaking with a checkpoint commitment.
//!
//! `Q = P + H_TapTweak(P ‖ ckpt)·G`. A signature `(z, R)` whose challenge
//! already binds `Q` but whose response is under `P` becomes a key-path
//! signature for `Q` by adding `H(m ‖ R ‖ Q)·H_TapTweak(P ‖ ckpt)` to `z`.
//! Script paths are not modelled.

use serde::{Deserialize, Serialize};

use crate::crypto::{
    challenge, hash_to_scalar, schnorr_verify, GroupPoint, Hash32, HashTag, Scalar,
    SchnorrSignature, POINT_LEN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaprootKey {
    pub internal: GroupPoint,
    /// `None` for the commitment-free variant `H_TapTweak(P)`.
    pub commitment: Option<Hash32>,
    pub tweak: Scalar,
    pub output: GroupPoint,
}

/// `H_TapTweak(P ‖ ckpt)`, or `H_TapTweak(P)` without a commitment.
pub fn tweak_scalar(internal: &GroupPoint, commitment: Option<&Hash32>) -> Scalar {
    let mut data = Vec::with_capacity(POINT_LEN + 32);
    data.extend_from_slice(&internal.to_bytes());
    if let Some(c) = commitment {
        data.extend_from_slice(c.as_bytes());
    }
    hash_to_scalar(HashTag::TapTweak, &data)
}

pub fn tweak_pubkey(internal: &GroupPoint, ckpt: &Hash32) -> TaprootKey {
    build(internal, Some(*ckpt))
}

/// The variant committing to the internal key only.
pub fn tweak_pubkey_without_commitment(internal: &GroupPoint) -> TaprootKey {
    build(internal, None)
}

fn build(internal: &GroupPoint, commitment: Option<Hash32>) -> TaprootKey {
    let tweak = tweak_scalar(internal, commitment.as_ref());
    TaprootKey {
        internal: *internal,
        commitment,
        tweak,
        output: *internal + GroupPoint::mul_base(&tweak),
    }
}

/// `q = p + H_TapTweak(P ‖ ckpt)` for a known internal secret `p`.
pub fn tweak_secret(secret: &Scalar, key: &TaprootKey) -> Scalar {
    *secret + key.tweak
}

/// Whether `Q = pk + H_TapTweak(pk ‖ ckpt)·G`.
pub fn commitment_matches(output: &GroupPoint, internal: &GroupPoint, ckpt: &Hash32) -> bool {
    tweak_pubkey(internal, ckpt).output == *output
}

/// Adds `H(m ‖ R ‖ Q)·tweak` to `z`.
pub fn tweak_signature_with(
    sig: &SchnorrSignature,
    message: &[u8],
    output: &GroupPoint,
    tweak: &Scalar,
) -> SchnorrSignature {
    let c = challenge(message, &sig.r, output);
    SchnorrSignature {
        z: sig.z + c * *tweak,
        r: sig.r,
    }
}

/// Turns a signature valid as `zG = R + H(m ‖ R ‖ Q)·P` into one valid
/// under `Q`.
pub fn tweak_signature(sig: &SchnorrSignature, message: &[u8], key: &TaprootKey) -> SchnorrSignature {
    tweak_signature_with(sig, message, &key.output, &key.tweak)
}

/// The ledger's key-path spend check.
pub fn verify_key_path(output: &GroupPoint, message: &[u8], sig: &SchnorrSignature) -> bool {
    schnorr_verify(output, message, sig)
}
