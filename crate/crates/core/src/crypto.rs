//! Group and field arithmetic over secp256k1, domain-separated hashing and
//! single-party Schnorr signatures.
//!
//! Everything above this module manipulates [`Scalar`] and [`GroupPoint`]
//! values only; the curve backend is an implementation detail. Canonical
//! encodings are 32-byte big-endian scalars and 33-byte compressed points,
//! and these are the exact bytes fed to every hash in the system.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use k256::elliptic_curve::ops::Reduce;
use k256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use k256::elliptic_curve::PrimeField;
use k256::elliptic_curve::bigint::U512;
use k256::{AffinePoint, EncodedPoint, ProjectivePoint};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256, Sha512};
use thiserror::Error;

/// Length of a canonical scalar encoding.
pub const SCALAR_LEN: usize = 32;
/// Length of a canonical compressed point encoding.
pub const POINT_LEN: usize = 33;
/// Length of an encoded [`SchnorrSignature`] (`R ‖ z`).
pub const SIGNATURE_LEN: usize = POINT_LEN + SCALAR_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("scalar encoding is not canonical (value >= group order)")]
    NonCanonicalScalar,
    #[error("point encoding is not a valid compressed subgroup element")]
    InvalidPoint,
    #[error("wrong encoding length: expected {expected}, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("secret key must be non-zero")]
    ZeroSecret,
    #[error("nonce must be non-zero")]
    ZeroNonce,
    #[error("invalid hex: {0}")]
    Hex(String),
}

/// An element of `Z_q`.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct Scalar(k256::Scalar);

impl Scalar {
    pub const ZERO: Scalar = Scalar(k256::Scalar::ZERO);
    pub const ONE: Scalar = Scalar(k256::Scalar::ONE);

    pub fn from_u64(v: u64) -> Self {
        Scalar(k256::Scalar::from(v))
    }

    /// Reduces a 64-byte big-endian string modulo the group order.
    pub fn from_wide_bytes(bytes: &[u8; 64]) -> Self {
        Scalar(<k256::Scalar as Reduce<U512>>::reduce(U512::from_be_slice(bytes)))
    }

    /// Uniform non-zero scalar.
    pub fn random_nonzero<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        loop {
            let mut wide = [0u8; 64];
            rng.fill_bytes(&mut wide);
            let s = Scalar::from_wide_bytes(&wide);
            if !s.is_zero() {
                return s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        bool::from(self.0.is_zero())
    }

    pub fn invert(&self) -> Option<Scalar> {
        Option::from(self.0.invert()).map(Scalar)
    }

    pub fn square(&self) -> Scalar {
        Scalar(self.0.square())
    }

    pub fn pow_u64(&self, mut exp: u64) -> Scalar {
        let mut base = *self;
        let mut acc = Scalar::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base;
            }
            base = base.square();
            exp >>= 1;
        }
        acc
    }

    pub fn to_bytes(&self) -> [u8; SCALAR_LEN] {
        self.0.to_bytes().into()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SCALAR_LEN] = bytes.try_into().map_err(|_| CryptoError::BadLength {
            expected: SCALAR_LEN,
            got: bytes.len(),
        })?;
        Option::from(k256::Scalar::from_repr(arr.into()))
            .map(Scalar)
            .ok_or(CryptoError::NonCanonicalScalar)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
        Scalar::from_bytes(&bytes)
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", self.to_hex())
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl AddAssign for Scalar {
    fn add_assign(&mut self, rhs: Scalar) {
        self.0 += rhs.0;
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 - rhs.0)
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 * rhs.0)
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar(-self.0)
    }
}

impl std::iter::Sum for Scalar {
    fn sum<I: Iterator<Item = Scalar>>(iter: I) -> Scalar {
        iter.fold(Scalar::ZERO, |a, b| a + b)
    }
}

/// An element of the order-`q` group generated by `G`.
///
/// The identity is encoded as 33 zero bytes so that every group element,
/// including degenerate sums, has a fixed-width encoding.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GroupPoint(ProjectivePoint);

impl GroupPoint {
    pub fn generator() -> Self {
        GroupPoint(ProjectivePoint::GENERATOR)
    }

    pub fn identity() -> Self {
        GroupPoint(ProjectivePoint::IDENTITY)
    }

    /// `s·G`
    pub fn mul_base(s: &Scalar) -> Self {
        GroupPoint(ProjectivePoint::GENERATOR * s.0)
    }

    pub fn is_identity(&self) -> bool {
        self.0 == ProjectivePoint::IDENTITY
    }

    pub fn to_bytes(&self) -> [u8; POINT_LEN] {
        let mut out = [0u8; POINT_LEN];
        if self.is_identity() {
            return out;
        }
        let enc = self.0.to_affine().to_encoded_point(true);
        out.copy_from_slice(enc.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != POINT_LEN {
            return Err(CryptoError::BadLength {
                expected: POINT_LEN,
                got: bytes.len(),
            });
        }
        if bytes.iter().all(|b| *b == 0) {
            return Ok(GroupPoint::identity());
        }
        if bytes[0] != 0x02 && bytes[0] != 0x03 {
            return Err(CryptoError::InvalidPoint);
        }
        let enc = EncodedPoint::from_bytes(bytes).map_err(|_| CryptoError::InvalidPoint)?;
        // secp256k1 has cofactor 1, so on-curve implies in-subgroup.
        let affine: Option<AffinePoint> = AffinePoint::from_encoded_point(&enc).into();
        affine
            .map(|a| GroupPoint(ProjectivePoint::from(a)))
            .ok_or(CryptoError::InvalidPoint)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
        GroupPoint::from_bytes(&bytes)
    }
}

impl fmt::Debug for GroupPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupPoint({})", self.to_hex())
    }
}

impl PartialOrd for GroupPoint {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupPoint {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.to_bytes().cmp(&other.to_bytes())
    }
}

impl Add for GroupPoint {
    type Output = GroupPoint;
    fn add(self, rhs: GroupPoint) -> GroupPoint {
        GroupPoint(self.0 + rhs.0)
    }
}

impl AddAssign for GroupPoint {
    fn add_assign(&mut self, rhs: GroupPoint) {
        self.0 += rhs.0;
    }
}

impl Sub for GroupPoint {
    type Output = GroupPoint;
    fn sub(self, rhs: GroupPoint) -> GroupPoint {
        GroupPoint(self.0 - rhs.0)
    }
}

impl Mul<Scalar> for GroupPoint {
    type Output = GroupPoint;
    fn mul(self, rhs: Scalar) -> GroupPoint {
        GroupPoint(self.0 * rhs.0)
    }
}

impl std::iter::Sum for GroupPoint {
    fn sum<I: Iterator<Item = GroupPoint>>(iter: I) -> GroupPoint {
        iter.fold(GroupPoint::identity(), |a, b| a + b)
    }
}

macro_rules! hex_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                <$ty>::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_serde!(Scalar);
hex_serde!(GroupPoint);
hex_serde!(Hash32);

/// A 32-byte digest: block hashes, transaction ids, content identifiers.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
        let arr: [u8; 32] = bytes.as_slice().try_into().map_err(|_| CryptoError::BadLength {
            expected: 32,
            got: bytes.len(),
        })?;
        Ok(Hash32(arr))
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({})", self.to_hex())
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Domain-separation tags. Each tag yields an independent hash function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashTag {
    /// Schnorr challenge `H(m ‖ R ‖ P)`, shared by single-party signatures,
    /// FROST and the ledger's key-path check.
    Sig,
    /// FROST binding values `ρ_l`.
    Binding,
    /// Reserved challenge tag; not used by the protocol itself.
    Challenge,
    /// Taproot tweak `H_TapTweak(P ‖ c)`.
    TapTweak,
    /// Random beacon values.
    Beacon,
    /// Signer-set ranking `H(id ‖ RB)`.
    BeaconSelect,
    /// Content identifiers.
    Cid,
    /// Commitments to ledger public keys published during initialization.
    CommitPk,
    /// Ledger transaction ids.
    TxId,
    /// PoS block hashes.
    Block,
}

impl HashTag {
    pub fn prefix(self) -> &'static [u8] {
        match self {
            HashTag::Sig => b"PIKACHU/SIG",
            HashTag::Binding => b"PIKACHU/BINDING",
            HashTag::Challenge => b"PIKACHU/CHALLENGE",
            HashTag::TapTweak => b"PIKACHU/TAPTWEAK",
            HashTag::Beacon => b"PIKACHU/BEACON",
            HashTag::BeaconSelect => b"PIKACHU/BEACON-SELECT",
            HashTag::Cid => b"PIKACHU/CID",
            HashTag::CommitPk => b"PIKACHU/COMMIT-PK",
            HashTag::TxId => b"PIKACHU/TXID",
            HashTag::Block => b"PIKACHU/BLOCK",
        }
    }
}

/// Hashes `data` under `tag` into `[1, q)`.
///
/// SHA-512 over `prefix ‖ 0x00 ‖ counter ‖ data`, reduced mod q; the counter
/// byte only moves past zero in the (negligible) event of a zero result.
pub fn hash_to_scalar(tag: HashTag, data: &[u8]) -> Scalar {
    let mut counter = 0u8;
    loop {
        let mut h = Sha512::new();
        h.update(tag.prefix());
        h.update([0u8, counter]);
        h.update(data);
        let digest: [u8; 64] = h.finalize().into();
        let s = Scalar::from_wide_bytes(&digest);
        if !s.is_zero() {
            return s;
        }
        counter = counter.wrapping_add(1);
    }
}

/// 32-byte tagged digest, for identifiers rather than field elements.
pub fn tagged_hash(tag: HashTag, data: &[u8]) -> Hash32 {
    let mut h = Sha256::new();
    h.update(tag.prefix());
    h.update([0u8]);
    h.update(data);
    Hash32(h.finalize().into())
}

/// `(z, R)` with `zG = R + H(m ‖ R ‖ P)·P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchnorrSignature {
    pub z: Scalar,
    #[serde(rename = "R")]
    pub r: GroupPoint,
}

impl SchnorrSignature {
    pub fn to_bytes(&self) -> [u8; SIGNATURE_LEN] {
        let mut out = [0u8; SIGNATURE_LEN];
        out[..POINT_LEN].copy_from_slice(&self.r.to_bytes());
        out[POINT_LEN..].copy_from_slice(&self.z.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != SIGNATURE_LEN {
            return Err(CryptoError::BadLength {
                expected: SIGNATURE_LEN,
                got: bytes.len(),
            });
        }
        Ok(SchnorrSignature {
            r: GroupPoint::from_bytes(&bytes[..POINT_LEN])?,
            z: Scalar::from_bytes(&bytes[POINT_LEN..])?,
        })
    }
}

/// `H(m ‖ R ‖ P)` under an explicit tag.
pub fn challenge_with_tag(tag: HashTag, message: &[u8], r: &GroupPoint, key: &GroupPoint) -> Scalar {
    let mut buf = Vec::with_capacity(message.len() + 2 * POINT_LEN);
    buf.extend_from_slice(message);
    buf.extend_from_slice(&r.to_bytes());
    buf.extend_from_slice(&key.to_bytes());
    hash_to_scalar(tag, &buf)
}

/// The Schnorr challenge `H(m ‖ R ‖ P)`.
pub fn challenge(message: &[u8], r: &GroupPoint, key: &GroupPoint) -> Scalar {
    challenge_with_tag(HashTag::Sig, message, r, key)
}

pub fn schnorr_sign(
    sk: &Scalar,
    pk: &GroupPoint,
    message: &[u8],
    nonce: &Scalar,
) -> Result<SchnorrSignature, CryptoError> {
    schnorr_sign_with_tag(HashTag::Sig, sk, pk, message, nonce)
}

pub fn schnorr_sign_with_tag(
    tag: HashTag,
    sk: &Scalar,
    pk: &GroupPoint,
    message: &[u8],
    nonce: &Scalar,
) -> Result<SchnorrSignature, CryptoError> {
    if sk.is_zero() {
        return Err(CryptoError::ZeroSecret);
    }
    if nonce.is_zero() {
        return Err(CryptoError::ZeroNonce);
    }
    let r = GroupPoint::mul_base(nonce);
    let c = challenge_with_tag(tag, message, &r, pk);
    Ok(SchnorrSignature {
        z: *nonce + c * *sk,
        r,
    })
}

/// Signs with a fresh nonce drawn from `rng`.
pub fn schnorr_sign_random<R: RngCore + ?Sized>(
    sk: &Scalar,
    pk: &GroupPoint,
    message: &[u8],
    rng: &mut R,
) -> Result<SchnorrSignature, CryptoError> {
    let k = Scalar::random_nonzero(rng);
    schnorr_sign(sk, pk, message, &k)
}

pub fn schnorr_verify(pk: &GroupPoint, message: &[u8], sig: &SchnorrSignature) -> bool {
    schnorr_verify_with_tag(HashTag::Sig, pk, message, sig)
}

pub fn schnorr_verify_with_tag(
    tag: HashTag,
    pk: &GroupPoint,
    message: &[u8],
    sig: &SchnorrSignature,
) -> bool {
    if pk.is_identity() || sig.r.is_identity() {
        return false;
    }
    let c = challenge_with_tag(tag, message, &sig.r, pk);
    GroupPoint::mul_base(&sig.z) == sig.r + *pk * c
}

/// Verifies `zG = R + H(m ‖ R ‖ binding_key)·pk`.
///
/// This is the shape of a raw FROST output: the challenge commits to the
/// tweaked key while the response is under the untweaked group key.
pub fn schnorr_verify_bound(
    pk: &GroupPoint,
    binding_key: &GroupPoint,
    message: &[u8],
    sig: &SchnorrSignature,
) -> bool {
    let c = challenge(message, &sig.r, binding_key);
    GroupPoint::mul_base(&sig.z) == sig.r + *pk * c
}

/// Verifies an encoded `(key, signature)` pair; malformed input is `false`.
pub fn schnorr_verify_encoded(pk: &[u8], message: &[u8], sig: &[u8]) -> bool {
    match (GroupPoint::from_bytes(pk), SchnorrSignature::from_bytes(sig)) {
        (Ok(pk), Ok(sig)) => schnorr_verify(&pk, message, &sig),
        _ => false,
    }
}

/// A secret scalar together with its public image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keypair {
    pub secret: Scalar,
    pub public: GroupPoint,
}

impl Keypair {
    pub fn from_secret(secret: Scalar) -> Self {
        Keypair {
            secret,
            public: GroupPoint::mul_base(&secret),
        }
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        Keypair::from_secret(Scalar::random_nonzero(rng))
    }

    pub fn sign<R: RngCore + ?Sized>(&self, message: &[u8], rng: &mut R) -> SchnorrSignature {
        schnorr_sign_random(&self.secret, &self.public, message, rng)
            .expect("keypair secret and sampled nonce are non-zero")
    }
}
