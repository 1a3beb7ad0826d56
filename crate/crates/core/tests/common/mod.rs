//! Reference computations written directly against k256 and sha2, kept
//! apart from the crate's own arithmetic so the two can be compared.

#![allow(dead_code)]

use k256::elliptic_curve::bigint::U512;
use k256::elliptic_curve::ops::Reduce;
use k256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use k256::elliptic_curve::{Field, PrimeField};
use k256::{AffinePoint, EncodedPoint, ProjectivePoint, Scalar};
use sha2::{Digest, Sha512};

use pikachu_core::crypto::{GroupPoint, Scalar as CoreScalar};

pub fn scalar(s: &CoreScalar) -> Scalar {
    Option::from(Scalar::from_repr(s.to_bytes().into())).expect("canonical scalar")
}

pub fn core_scalar(s: &Scalar) -> CoreScalar {
    CoreScalar::from_bytes(&s.to_bytes()).expect("canonical scalar")
}

pub fn point(p: &GroupPoint) -> ProjectivePoint {
    let bytes = p.to_bytes();
    if bytes.iter().all(|b| *b == 0) {
        return ProjectivePoint::IDENTITY;
    }
    let enc = EncodedPoint::from_bytes(bytes).expect("sec1");
    let affine: Option<AffinePoint> = AffinePoint::from_encoded_point(&enc).into();
    ProjectivePoint::from(affine.expect("on curve"))
}

pub fn point_bytes(p: &ProjectivePoint) -> Vec<u8> {
    if *p == ProjectivePoint::IDENTITY {
        return vec![0; 33];
    }
    p.to_affine().to_encoded_point(true).as_bytes().to_vec()
}

/// SHA-512(prefix ‖ 0x00 ‖ 0x00 ‖ data) reduced mod q.
pub fn hash_scalar(prefix: &[u8], data: &[u8]) -> Scalar {
    let mut h = Sha512::new();
    h.update(prefix);
    h.update([0u8, 0u8]);
    h.update(data);
    let wide: [u8; 64] = h.finalize().into();
    <Scalar as Reduce<U512>>::reduce(U512::from_be_slice(&wide))
}

pub fn challenge(message: &[u8], r: &ProjectivePoint, key: &ProjectivePoint) -> Scalar {
    let mut data = message.to_vec();
    data.extend(point_bytes(r));
    data.extend(point_bytes(key));
    hash_scalar(b"PIKACHU/SIG", &data)
}

pub fn taptweak(internal: &ProjectivePoint, ckpt: &[u8; 32]) -> Scalar {
    let mut data = point_bytes(internal);
    data.extend_from_slice(ckpt);
    hash_scalar(b"PIKACHU/TAPTWEAK", &data)
}

/// `Q = P + H_TapTweak(P ‖ ckpt)·G`.
pub fn tweaked_key(internal: &ProjectivePoint, ckpt: &[u8; 32]) -> ProjectivePoint {
    *internal + ProjectivePoint::GENERATOR * taptweak(internal, ckpt)
}

/// Whether `zG = R + H(m ‖ R ‖ Q)·Q`.
pub fn schnorr_holds(q: &ProjectivePoint, message: &[u8], z: &Scalar, r: &ProjectivePoint) -> bool {
    ProjectivePoint::GENERATOR * z == *r + *q * challenge(message, r, q)
}

/// f(0) for the polynomial through `points`, with one inversion.
pub fn interpolate_at_zero(points: &[(u32, Scalar)]) -> Scalar {
    let xs: Vec<Scalar> = points.iter().map(|(x, _)| Scalar::from(u64::from(*x))).collect();
    let mut num = Vec::with_capacity(xs.len());
    let mut den = Scalar::ONE;
    let mut dens = Vec::with_capacity(xs.len());
    for (i, xi) in xs.iter().enumerate() {
        let mut n = Scalar::ONE;
        let mut d = Scalar::ONE;
        for (j, xj) in xs.iter().enumerate() {
            if i != j {
                n *= xj;
                d *= *xj - xi;
            }
        }
        num.push(n);
        dens.push(d);
        den *= d;
    }
    let inv = den.invert().expect("distinct nonzero x");
    points
        .iter()
        .enumerate()
        .map(|(i, (_, y))| {
            let others: Scalar = dens
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .fold(Scalar::ONE, |acc, (_, d)| acc * d);
            num[i] * others * inv * y
        })
        .fold(Scalar::ZERO, |acc, v| acc + v)
}

/// All `k`-subsets of `items`, in lexicographic order.
pub fn for_each_subset<T: Copy>(items: &[T], k: usize, mut f: impl FnMut(&[T])) {
    let n = items.len();
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut buf: Vec<T> = idx.iter().map(|i| items[*i]).collect();
    loop {
        f(&buf);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
        for j in i..k {
            buf[j] = items[idx[j]];
        }
    }
}

pub fn random_scalar(rng: &mut impl rand::RngCore) -> Scalar {
    Scalar::random(rng)
}

/// Interpolation at zero over x-coordinates `1..=n`, with the pairwise
/// inverses `1/(x_j - x_i)` computed once.
pub struct LagrangeTable {
    inv: Vec<Vec<Scalar>>,
}

impl LagrangeTable {
    pub fn new(n: u32) -> Self {
        let x = |i: u32| Scalar::from(u64::from(i));
        let inv = (0..=n)
            .map(|i| {
                (0..=n)
                    .map(|j| {
                        if i == j || i == 0 || j == 0 {
                            Scalar::ZERO
                        } else {
                            Option::from((x(j) - x(i)).invert()).expect("distinct")
                        }
                    })
                    .collect()
            })
            .collect();
        LagrangeTable { inv }
    }

    pub fn interpolate(&self, points: &[(u32, Scalar)]) -> Scalar {
        let mut acc = Scalar::ZERO;
        for (i, yi) in points {
            let mut l = Scalar::ONE;
            for (j, _) in points {
                if i != j {
                    l *= Scalar::from(u64::from(*j)) * self.inv[*i as usize][*j as usize];
                }
            }
            acc += l * yi;
        }
        acc
    }
}

/// Wraps a channel and counts what passes through it.
#[derive(Default)]
pub struct CountingChannel<C> {
    pub inner: C,
    pub broadcasts: std::collections::BTreeMap<u32, usize>,
    pub broadcast_payloads: Vec<Vec<u8>>,
    pub private: usize,
}

impl<C: pikachu_core::net::Channel> pikachu_core::net::Channel for CountingChannel<C> {
    fn broadcast(&mut self, sender: u32, payload: Vec<u8>) {
        *self.broadcasts.entry(sender).or_default() += 1;
        self.broadcast_payloads.push(payload.clone());
        self.inner.broadcast(sender, payload);
    }

    fn send_private(&mut self, sender: u32, recipient: u32, payload: Vec<u8>) {
        self.private += 1;
        self.inner.send_private(sender, recipient, payload);
    }

    fn end_round(&mut self) -> pikachu_core::net::Delivery {
        self.inner.end_round()
    }

    fn end_round_expecting(&mut self, expected: &[u32]) -> pikachu_core::net::Delivery {
        self.inner.end_round_expecting(expected)
    }
}

/// Whether 32 big-endian bytes encode an integer below the group order.
pub fn scalar_is_canonical(bytes: &[u8; 32]) -> bool {
    bool::from(Scalar::from_repr((*bytes).into()).is_some())
}
