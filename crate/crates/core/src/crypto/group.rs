use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul, Neg, Sub};

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as Inner;
use curve25519_dalek::traits::{Identity, IsIdentity};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// An exponent modulo the group order.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Scalar(Inner);

impl Scalar {
    pub const LEN: usize = 32;

    pub fn zero() -> Self {
        Scalar(Inner::ZERO)
    }

    pub fn one() -> Self {
        Scalar(Inner::ONE)
    }

    pub fn from_u64(v: u64) -> Self {
        Scalar(Inner::from(v))
    }

    /// Uniform over the whole field, zero included.
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Scalar(Inner::random(rng))
    }

    /// Uniform over `[1, p-1]`; suitable as a private key.
    pub fn random_nonzero<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let s = Scalar::random(rng);
            if !s.is_zero() {
                return s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0 == Inner::ZERO
    }

    pub fn invert(&self) -> Option<Self> {
        (!self.is_zero()).then(|| Scalar(self.0.invert()))
    }

    /// 32-byte little-endian reduced encoding.
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    /// Accepts only canonical (fully reduced) encodings.
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self> {
        Option::from(Inner::from_canonical_bytes(*bytes))
            .map(Scalar)
            .ok_or(Error::InvalidScalar)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: &[u8; 32] = bytes.try_into().map_err(|_| Error::InvalidScalar)?;
        Scalar::from_bytes(arr)
    }

    pub(crate) fn from_wide(bytes: &[u8; 64]) -> Self {
        Scalar(Inner::from_bytes_mod_order_wide(bytes))
    }

    /// Rejects zero, which is never a usable private key.
    pub fn into_private(self) -> Result<Self> {
        if self.is_zero() {
            Err(Error::ZeroScalar)
        } else {
            Ok(self)
        }
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", hex::encode(self.to_bytes()))
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
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

impl Sum for Scalar {
    fn sum<I: Iterator<Item = Scalar>>(iter: I) -> Scalar {
        iter.fold(Scalar::zero(), |a, b| a + b)
    }
}

/// An element of the prime-order group, written multiplicatively.
///
/// The canonical encoding is cached so hashing, sorting and serialisation
/// never recompress.
#[derive(Clone, Copy)]
pub struct GroupElement {
    point: RistrettoPoint,
    bytes: [u8; 32],
}

impl GroupElement {
    pub const LEN: usize = 32;

    fn from_point(point: RistrettoPoint) -> Self {
        GroupElement { bytes: point.compress().to_bytes(), point }
    }

    pub fn generator() -> Self {
        GroupElement::from_point(RISTRETTO_BASEPOINT_POINT)
    }

    pub fn identity() -> Self {
        GroupElement::from_point(RistrettoPoint::identity())
    }

    pub fn is_identity(&self) -> bool {
        self.point.is_identity()
    }

    /// `g^s` for the fixed generator.
    pub fn base_exp(s: &Scalar) -> Self {
        GroupElement::from_point(RistrettoPoint::mul_base(&s.0))
    }

    /// `self^s`.
    pub fn exp(&self, s: &Scalar) -> Self {
        GroupElement::from_point(self.point * s.0)
    }

    /// The group operation, `self · other`.
    pub fn combine(&self, other: &GroupElement) -> Self {
        GroupElement::from_point(self.point + other.point)
    }

    /// `self · other^{-1}`.
    pub fn divide(&self, other: &GroupElement) -> Self {
        GroupElement::from_point(self.point - other.point)
    }

    /// Product of all elements; the identity for an empty iterator.
    pub fn product<'a, I: IntoIterator<Item = &'a GroupElement>>(items: I) -> Self {
        let sum: RistrettoPoint = items.into_iter().map(|e| e.point).sum();
        GroupElement::from_point(sum)
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        GroupElement::from_point(RistrettoPoint::random(rng))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.bytes
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.bytes
    }

    /// Rejects non-canonical encodings and strings that are not group elements.
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self> {
        let point = CompressedRistretto(*bytes)
            .decompress()
            .ok_or(Error::InvalidEncoding)?;
        Ok(GroupElement { point, bytes: *bytes })
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: &[u8; 32] = bytes.try_into().map_err(|_| Error::InvalidEncoding)?;
        GroupElement::from_bytes(arr)
    }
}

impl PartialEq for GroupElement {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}

impl Eq for GroupElement {}

impl std::hash::Hash for GroupElement {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bytes.hash(state);
    }
}

impl PartialOrd for GroupElement {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupElement {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bytes.cmp(&other.bytes)
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", hex::encode(self.bytes))
    }
}

impl Serialize for GroupElement {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.bytes))
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let raw = hex::decode(s).map_err(serde::de::Error::custom)?;
        GroupElement::from_slice(&raw).map_err(serde::de::Error::custom)
    }
}

/// Draws a private key uniform in `[1, p-1]` and returns it with `base^sk`.
pub fn keygen<R: RngCore + CryptoRng>(
    rng: &mut R,
    base: &GroupElement,
) -> Result<(Scalar, GroupElement)> {
    if base.is_identity() {
        return Err(Error::IdentityElement);
    }
    let sk = Scalar::random_nonzero(rng);
    Ok((sk, base.exp(&sk)))
}

/// Diffie-Hellman: `public^private`.
pub fn dh(public: &GroupElement, private: &Scalar) -> Result<GroupElement> {
    if public.is_identity() {
        return Err(Error::IdentityElement);
    }
    Ok(public.exp(private))
}
