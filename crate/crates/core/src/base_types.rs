// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Identifiers, amounts, keys, signatures and the committee.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::FastPayError;

pub const ADDRESS_LENGTH: usize = 32;
pub const PUBLIC_KEY_LENGTH: usize = 32;
pub const SIGNATURE_LENGTH: usize = 64;
pub const MAX_AUTHORITY_NAME_LENGTH: usize = 32;

/// Index of a shard inside one authority.
pub type ShardId = u32;

macro_rules! hex_bytes_type {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &hex::encode(&self.0[..4]))
            }
        }

        impl FromStr for $name {
            type Err = FastPayError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let bytes = hex::decode(s.trim()).map_err(|e| FastPayError::malformed(format!("bad hex: {e}")))?;
                let bytes: [u8; $len] = bytes
                    .try_into()
                    .map_err(|_| FastPayError::malformed(concat!("wrong length for ", stringify!($name))))?;
                Ok(Self(bytes))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A FastPay (or Primary) account address: SHA-256 of the owner's verification key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address([u8; ADDRESS_LENGTH]);
hex_bytes_type!(Address, ADDRESS_LENGTH);

/// Raw Ed25519 verification key bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKeyBytes([u8; PUBLIC_KEY_LENGTH]);
hex_bytes_type!(PublicKeyBytes, PUBLIC_KEY_LENGTH);

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature([u8; SIGNATURE_LENGTH]);
hex_bytes_type!(Signature, SIGNATURE_LENGTH);

/// The address owned by a verification key.
pub fn address_of(key: &PublicKeyBytes) -> Address {
    let digest = Sha256::digest(key.as_bytes());
    Address(digest.into())
}

impl PublicKeyBytes {
    pub fn to_verifying_key(&self) -> Result<VerifyingKey, FastPayError> {
        VerifyingKey::from_bytes(&self.0).map_err(|_| FastPayError::InvalidPublicKey)
    }
}

impl Signature {
    pub fn verify(&self, message: &[u8], key: &PublicKeyBytes) -> Result<(), FastPayError> {
        self.verify_with(message, &key.to_verifying_key()?)
    }

    pub(crate) fn verify_with(&self, message: &[u8], key: &VerifyingKey) -> Result<(), FastPayError> {
        let signature = ed25519_dalek::Signature::from_bytes(&self.0);
        key.verify(message, &signature)
            .map_err(|_| FastPayError::InvalidSignature)
    }

    pub(crate) fn to_dalek(self) -> ed25519_dalek::Signature {
        ed25519_dalek::Signature::from_bytes(&self.0)
    }
}

/// An Ed25519 signing key together with its public half.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair(ed25519_dalek::SigningKey);

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        Self::from_secret_bytes(secret)
    }

    pub fn from_secret_bytes(secret: [u8; 32]) -> Self {
        KeyPair(ed25519_dalek::SigningKey::from_bytes(&secret))
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn public(&self) -> PublicKeyBytes {
        PublicKeyBytes(self.0.verifying_key().to_bytes())
    }

    pub fn address(&self) -> Address {
        address_of(&self.public())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.0.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({:?})", self.public())
    }
}

impl Serialize for KeyPair {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(self.secret_bytes()))
    }
}

impl<'de> Deserialize<'de> for KeyPair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let bytes = hex::decode(s.trim()).map_err(serde::de::Error::custom)?;
        let secret: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("secret key must be 32 bytes"))?;
        Ok(KeyPair::from_secret_bytes(secret))
    }
}

/// A non-negative quantity of value. Arithmetic is checked; overflow is an error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Amount(u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn new(value: u64) -> Self {
        Amount(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn try_add(self, other: Amount) -> Result<Amount, FastPayError> {
        self.0
            .checked_add(other.0)
            .map(Amount)
            .ok_or(FastPayError::ArithmeticOverflow)
    }

    pub fn try_sub(self, other: Amount) -> Result<Amount, FastPayError> {
        self.0
            .checked_sub(other.0)
            .map(Amount)
            .ok_or(FastPayError::ArithmeticOverflow)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for Amount {
    fn from(value: u64) -> Self {
        Amount(value)
    }
}

/// A signed balance. Authority-side balances may be temporarily negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Balance(i128);

impl Balance {
    pub const ZERO: Balance = Balance(0);

    pub const fn new(value: i128) -> Self {
        Balance(value)
    }

    pub const fn value(self) -> i128 {
        self.0
    }

    pub fn try_add(self, amount: Amount) -> Result<Balance, FastPayError> {
        self.0
            .checked_add(i128::from(amount.0))
            .map(Balance)
            .ok_or(FastPayError::ArithmeticOverflow)
    }

    pub fn try_sub(self, amount: Amount) -> Result<Balance, FastPayError> {
        self.0
            .checked_sub(i128::from(amount.0))
            .map(Balance)
            .ok_or(FastPayError::ArithmeticOverflow)
    }

    pub fn covers(self, amount: Amount) -> bool {
        self.0 >= i128::from(amount.0)
    }
}

impl From<Amount> for Balance {
    fn from(amount: Amount) -> Self {
        Balance(i128::from(amount.0))
    }
}

impl fmt::Display for Balance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-account sequence number; starts at 0 and only ever increments by one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SequenceNumber(u64);

impl SequenceNumber {
    pub const fn new(value: u64) -> Self {
        SequenceNumber(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub fn increment(self) -> Result<SequenceNumber, FastPayError> {
        self.0
            .checked_add(1)
            .map(SequenceNumber)
            .ok_or(FastPayError::ArithmeticOverflow)
    }
}

impl fmt::Display for SequenceNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for SequenceNumber {
    fn from(value: u64) -> Self {
        SequenceNumber(value)
    }
}

/// Human-readable authority identifier, 1 to 32 bytes of UTF-8.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct AuthorityName(String);

impl AuthorityName {
    pub fn new(name: impl Into<String>) -> Result<Self, FastPayError> {
        let name = name.into();
        fp_ensure!(
            !name.is_empty() && name.len() <= MAX_AUTHORITY_NAME_LENGTH,
            FastPayError::InvalidAuthorityName
        );
        Ok(AuthorityName(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AuthorityName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for AuthorityName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl<'de> Deserialize<'de> for AuthorityName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        AuthorityName::new(String::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone)]
struct CommitteeMember {
    public_key: PublicKeyBytes,
    verifying_key: VerifyingKey,
}

/// A fixed committee of `3f + 1` authorities.
#[derive(Clone)]
pub struct Committee {
    members: BTreeMap<AuthorityName, CommitteeMember>,
    faults_tolerated: usize,
}

impl Committee {
    /// Builds a committee tolerating `faults_tolerated` Byzantine members.
    /// The roster must contain exactly `3f + 1` uniquely named authorities.
    pub fn new(
        authorities: impl IntoIterator<Item = (AuthorityName, PublicKeyBytes)>,
        faults_tolerated: usize,
    ) -> Result<Self, FastPayError> {
        let mut members = BTreeMap::new();
        for (name, public_key) in authorities {
            let verifying_key = public_key.to_verifying_key()?;
            let member = CommitteeMember {
                public_key,
                verifying_key,
            };
            if members.insert(name.clone(), member).is_some() {
                return Err(FastPayError::InvalidCommittee {
                    reason: format!("duplicate authority name {name}"),
                });
            }
        }
        let expected = faults_tolerated
            .checked_mul(3)
            .and_then(|n| n.checked_add(1))
            .ok_or(FastPayError::ArithmeticOverflow)?;
        fp_ensure!(
            members.len() == expected,
            FastPayError::InvalidCommittee {
                reason: format!(
                    "{} authorities cannot tolerate f = {faults_tolerated} (need {expected})",
                    members.len()
                ),
            }
        );
        Ok(Committee {
            members,
            faults_tolerated,
        })
    }

    /// Builds a committee, deriving `f` from the roster size.
    pub fn from_roster(
        authorities: impl IntoIterator<Item = (AuthorityName, PublicKeyBytes)>,
    ) -> Result<Self, FastPayError> {
        let authorities: Vec<_> = authorities.into_iter().collect();
        let n = authorities.len();
        fp_ensure!(
            n % 3 == 1,
            FastPayError::InvalidCommittee {
                reason: format!("{n} authorities is not of the form 3f + 1"),
            }
        );
        Committee::new(authorities, (n - 1) / 3)
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn faults_tolerated(&self) -> usize {
        self.faults_tolerated
    }

    /// Number of distinct signatures that make a certificate: `2f + 1`.
    pub fn quorum_threshold(&self) -> usize {
        2 * self.faults_tolerated + 1
    }

    /// Smallest set guaranteed to contain an honest authority: `f + 1`.
    pub fn validity_threshold(&self) -> usize {
        self.faults_tolerated + 1
    }

    pub fn contains(&self, name: &AuthorityName) -> bool {
        self.members.contains_key(name)
    }

    pub fn public_key(&self, name: &AuthorityName) -> Option<&PublicKeyBytes> {
        self.members.get(name).map(|m| &m.public_key)
    }

    pub(crate) fn verifying_key(&self, name: &AuthorityName) -> Option<&VerifyingKey> {
        self.members.get(name).map(|m| &m.verifying_key)
    }

    pub fn names(&self) -> impl Iterator<Item = &AuthorityName> {
        self.members.keys()
    }

    pub fn members(&self) -> impl Iterator<Item = (&AuthorityName, &PublicKeyBytes)> {
        self.members.iter().map(|(name, m)| (name, &m.public_key))
    }
}

impl PartialEq for Committee {
    fn eq(&self, other: &Self) -> bool {
        self.faults_tolerated == other.faults_tolerated && self.members().eq(other.members())
    }
}

impl Eq for Committee {}

impl fmt::Debug for Committee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Committee")
            .field("faults_tolerated", &self.faults_tolerated)
            .field("authorities", &self.members.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct CommitteeRepr {
    faults_tolerated: usize,
    authorities: Vec<(AuthorityName, PublicKeyBytes)>,
}

impl Serialize for Committee {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CommitteeRepr {
            faults_tolerated: self.faults_tolerated,
            authorities: self.members().map(|(name, key)| (name.clone(), *key)).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Committee {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = CommitteeRepr::deserialize(deserializer)?;
        Committee::new(repr.authorities, repr.faults_tolerated).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn committee_of(n: usize, rng: &mut ChaCha8Rng) -> Result<Committee, FastPayError> {
        Committee::from_roster((0..n).map(|i| {
            (
                AuthorityName::new(format!("authority-{i}")).unwrap(),
                KeyPair::generate(rng).public(),
            )
        }))
    }

    #[test]
    fn quorum_threshold_is_two_f_plus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, threshold) in [(1, 1), (4, 3), (10, 7)] {
            let committee = committee_of(n, &mut rng).unwrap();
            assert_eq!(committee.quorum_threshold(), threshold);
        }
    }

    #[test]
    fn committee_size_must_be_three_f_plus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [0, 2, 3, 5, 6, 8] {
            assert!(matches!(
                committee_of(n, &mut rng),
                Err(FastPayError::InvalidCommittee { .. })
            ));
        }
        let key = KeyPair::generate(&mut rng).public();
        let name = AuthorityName::new("a").unwrap();
        let duplicate = Committee::new(vec![(name.clone(), key), (name, key)], 0);
        assert!(matches!(duplicate, Err(FastPayError::InvalidCommittee { .. })));
    }

    #[test]
    fn quorums_intersect_in_f_plus_one() {
        // Exhaustive over all pairs of 2f+1 subsets of 3f+1 members.
        for f in 0..4usize {
            let n = 3 * f + 1;
            let q = 2 * f + 1;
            let subsets: Vec<u32> = (0u32..(1 << n)).filter(|s| s.count_ones() as usize == q).collect();
            let min_overlap = subsets
                .iter()
                .flat_map(|a| subsets.iter().map(move |b| (a & b).count_ones()))
                .min()
                .unwrap();
            assert!(min_overlap as usize > f, "f = {f}");
        }
    }

    #[test]
    fn address_is_deterministic_and_fixed_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k1 = KeyPair::generate(&mut rng);
        let k2 = KeyPair::generate(&mut rng);
        assert_eq!(address_of(&k1.public()), address_of(&k1.public()));
        assert_ne!(address_of(&k1.public()), address_of(&k2.public()));
        assert_eq!(address_of(&k1.public()).as_bytes().len(), ADDRESS_LENGTH);
    }

    #[test]
    fn amount_arithmetic_is_checked() {
        assert_eq!(
            Amount::new(u64::MAX).try_add(Amount::new(1)),
            Err(FastPayError::ArithmeticOverflow)
        );
        assert_eq!(
            Amount::new(1).try_sub(Amount::new(2)),
            Err(FastPayError::ArithmeticOverflow)
        );
        assert_eq!(Balance::ZERO.try_sub(Amount::new(5)), Ok(Balance::new(-5)));
        assert!(!Balance::new(-1).covers(Amount::ZERO));
    }

    #[test]
    fn authority_names_are_bounded() {
        assert!(AuthorityName::new("").is_err());
        assert!(AuthorityName::new("x".repeat(33)).is_err());
        assert!(AuthorityName::new("x".repeat(32)).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn signature_round_trip_and_mutation(
                seed in any::<[u8; 32]>(),
                message in proptest::collection::vec(any::<u8>(), 1..128),
                index in any::<prop::sample::Index>(),
                flip in 1u8..=255,
            ) {
                let key = KeyPair::from_secret_bytes(seed);
                let signature = key.sign(&message);
                prop_assert!(signature.verify(&message, &key.public()).is_ok());

                let mut altered = message.clone();
                altered[index.index(message.len())] ^= flip;
                prop_assert!(signature.verify(&altered, &key.public()).is_err());

                let mut bad = *signature.as_bytes();
                bad[index.index(SIGNATURE_LENGTH)] ^= flip;
                prop_assert!(Signature::from_bytes(bad).verify(&message, &key.public()).is_err());
            }
        }
    }
}
