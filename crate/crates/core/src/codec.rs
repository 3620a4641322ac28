// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Canonical binary encoding. These bytes are both what gets signed and what
//! goes on the wire; `docs/wire-format.md` describes every layout.
//!
//! Integers are little-endian and fixed width, enum tags and `Option`
//! markers are one byte, and variable-length sequences carry a `u32` count.

use crate::base_types::{
    Address, Amount, AuthorityName, Balance, PublicKeyBytes, SequenceNumber, Signature, ADDRESS_LENGTH,
    MAX_AUTHORITY_NAME_LENGTH, PUBLIC_KEY_LENGTH, SIGNATURE_LENGTH,
};
use crate::error::{CertificateError, FastPayError};

/// Upper bound on any decoded string, so a hostile length prefix cannot
/// trigger a large allocation.
const MAX_STRING_LENGTH: usize = 1024;

pub trait Encode {
    fn encode(&self, out: &mut Vec<u8>);

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }
}

pub trait Decode: Sized {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError>;

    /// Decodes a value that must span the whole buffer.
    fn from_bytes(bytes: &[u8]) -> Result<Self, FastPayError> {
        let mut reader = Reader::new(bytes);
        let value = Self::decode(&mut reader)?;
        reader.finish()?;
        Ok(value)
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FastPayError> {
        if self.remaining() < n {
            return Err(FastPayError::malformed("unexpected end of input"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn take_array<const N: usize>(&mut self) -> Result<[u8; N], FastPayError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn finish(&self) -> Result<(), FastPayError> {
        fp_ensure!(self.remaining() == 0, FastPayError::malformed("trailing bytes"));
        Ok(())
    }
}

pub fn encode_u8(value: u8, out: &mut Vec<u8>) {
    out.push(value);
}

pub fn encode_u32(value: u32, out: &mut Vec<u8>) {
    out.extend_from_slice(&value.to_le_bytes());
}

pub fn encode_u64(value: u64, out: &mut Vec<u8>) {
    out.extend_from_slice(&value.to_le_bytes());
}

pub fn decode_u8(reader: &mut Reader<'_>) -> Result<u8, FastPayError> {
    Ok(reader.take(1)?[0])
}

pub fn decode_u32(reader: &mut Reader<'_>) -> Result<u32, FastPayError> {
    Ok(u32::from_le_bytes(reader.take_array()?))
}

pub fn decode_u64(reader: &mut Reader<'_>) -> Result<u64, FastPayError> {
    Ok(u64::from_le_bytes(reader.take_array()?))
}

fn encode_len(len: usize, out: &mut Vec<u8>) {
    let len = u32::try_from(len).expect("sequence longer than u32::MAX");
    encode_u32(len, out);
}

fn encode_string(value: &str, out: &mut Vec<u8>) {
    encode_len(value.len(), out);
    out.extend_from_slice(value.as_bytes());
}

fn decode_string(reader: &mut Reader<'_>) -> Result<String, FastPayError> {
    let len = decode_u32(reader)? as usize;
    fp_ensure!(len <= MAX_STRING_LENGTH, FastPayError::malformed("string too long"));
    String::from_utf8(reader.take(len)?.to_vec()).map_err(|_| FastPayError::malformed("invalid utf-8"))
}

impl Encode for u64 {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_u64(*self, out);
    }
}

impl Decode for u64 {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        decode_u64(reader)
    }
}

impl Encode for Address {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.as_bytes());
    }
}

impl Decode for Address {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(Address::from_bytes(reader.take_array::<ADDRESS_LENGTH>()?))
    }
}

impl Encode for PublicKeyBytes {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.as_bytes());
    }
}

impl Decode for PublicKeyBytes {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(PublicKeyBytes::from_bytes(reader.take_array::<PUBLIC_KEY_LENGTH>()?))
    }
}

impl Encode for Signature {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.as_bytes());
    }
}

impl Decode for Signature {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(Signature::from_bytes(reader.take_array::<SIGNATURE_LENGTH>()?))
    }
}

impl Encode for Amount {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_u64(self.value(), out);
    }
}

impl Decode for Amount {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(Amount::new(decode_u64(reader)?))
    }
}

impl Encode for Balance {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.value().to_le_bytes());
    }
}

impl Decode for Balance {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(Balance::new(i128::from_le_bytes(reader.take_array()?)))
    }
}

impl Encode for SequenceNumber {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_u64(self.value(), out);
    }
}

impl Decode for SequenceNumber {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(SequenceNumber::new(decode_u64(reader)?))
    }
}

impl Encode for AuthorityName {
    fn encode(&self, out: &mut Vec<u8>) {
        // Names are at most 32 bytes, so one length byte suffices.
        encode_u8(self.as_str().len() as u8, out);
        out.extend_from_slice(self.as_str().as_bytes());
    }
}

impl Decode for AuthorityName {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        let len = decode_u8(reader)? as usize;
        fp_ensure!(
            len <= MAX_AUTHORITY_NAME_LENGTH,
            FastPayError::malformed("authority name too long")
        );
        let name = std::str::from_utf8(reader.take(len)?).map_err(|_| FastPayError::malformed("invalid utf-8"))?;
        AuthorityName::new(name).map_err(|_| FastPayError::malformed("invalid authority name"))
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            None => encode_u8(0, out),
            Some(value) => {
                encode_u8(1, out);
                value.encode(out);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        match decode_u8(reader)? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(reader)?)),
            tag => Err(FastPayError::malformed(format!("bad option tag {tag}"))),
        }
    }
}

impl<T: Encode> Encode for Vec<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_len(self.len(), out);
        for item in self {
            item.encode(out);
        }
    }
}

impl<T: Decode> Decode for Vec<T> {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        let count = decode_u32(reader)? as usize;
        // Every element occupies at least one byte.
        fp_ensure!(
            count <= reader.remaining(),
            FastPayError::malformed("sequence count exceeds input")
        );
        let mut items = Vec::with_capacity(count);
        for _ in 0..count {
            items.push(T::decode(reader)?);
        }
        Ok(items)
    }
}

impl<A: Encode, B: Encode> Encode for (A, B) {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
        self.1.encode(out);
    }
}

impl<A: Decode, B: Decode> Decode for (A, B) {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok((A::decode(reader)?, B::decode(reader)?))
    }
}

impl Encode for CertificateError {
    fn encode(&self, out: &mut Vec<u8>) {
        let tag = match self {
            CertificateError::UnknownAuthority => 0,
            CertificateError::DuplicateAuthority => 1,
            CertificateError::NonCanonical => 2,
            CertificateError::BadSignature => 3,
            CertificateError::InsufficientQuorum => 4,
            CertificateError::InvalidOrder => 5,
        };
        encode_u8(tag, out);
    }
}

impl Decode for CertificateError {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(match decode_u8(reader)? {
            0 => CertificateError::UnknownAuthority,
            1 => CertificateError::DuplicateAuthority,
            2 => CertificateError::NonCanonical,
            3 => CertificateError::BadSignature,
            4 => CertificateError::InsufficientQuorum,
            5 => CertificateError::InvalidOrder,
            tag => return Err(FastPayError::malformed(format!("bad certificate error {tag}"))),
        })
    }
}

impl Encode for FastPayError {
    fn encode(&self, out: &mut Vec<u8>) {
        use FastPayError::*;
        match self {
            InvalidCommittee { reason } => {
                encode_u8(0, out);
                encode_string(reason, out);
            }
            InvalidAuthorityName => encode_u8(1, out),
            InvalidPublicKey => encode_u8(2, out),
            ArithmeticOverflow => encode_u8(3, out),
            ZeroAmount => encode_u8(4, out),
            SenderKeyMismatch => encode_u8(5, out),
            WrongShard => encode_u8(6, out),
            InvalidSignature => encode_u8(7, out),
            UnknownSender => encode_u8(8, out),
            PreviousTransferPending => encode_u8(9, out),
            UnexpectedSequence { expected } => {
                encode_u8(10, out);
                expected.encode(out);
            }
            InsufficientBalance { balance, amount } => {
                encode_u8(11, out);
                balance.encode(out);
                amount.encode(out);
            }
            InvalidCertificate { reason } => {
                encode_u8(12, out);
                reason.encode(out);
            }
            MissingEarlierCertificates { expected } => {
                encode_u8(13, out);
                expected.encode(out);
            }
            PrimaryRecipient => encode_u8(14, out),
            UnknownChannel { source_shard } => {
                encode_u8(15, out);
                encode_u32(*source_shard, out);
            }
            SkippedFundingIndex { expected } => {
                encode_u8(16, out);
                encode_u64(*expected, out);
            }
            UnknownAccount => encode_u8(17, out),
            CertificateNotFound => encode_u8(18, out),
            InvalidVote { authority } => {
                encode_u8(19, out);
                authority.encode(out);
            }
            InsufficientVotes { found, needed } => {
                encode_u8(20, out);
                encode_u64(*found as u64, out);
                encode_u64(*needed as u64, out);
            }
            InsufficientPrimaryFunds => encode_u8(21, out),
            AlreadyRedeemed => encode_u8(22, out),
            NotPrimaryRecipient => encode_u8(23, out),
            ContractInsolvent => encode_u8(24, out),
            Malformed { reason } => {
                encode_u8(25, out);
                encode_string(reason, out);
            }
            UnsupportedVersion { version } => {
                encode_u8(26, out);
                encode_u8(*version, out);
            }
            ResponseTooLarge => encode_u8(27, out),
            UnexpectedResponse => encode_u8(28, out),
            Unreachable { reason } => {
                encode_u8(29, out);
                encode_string(reason, out);
            }
        }
    }
}

impl Decode for FastPayError {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        use FastPayError::*;
        let usize_of = |v: u64| usize::try_from(v).map_err(|_| FastPayError::malformed("count"));
        Ok(match decode_u8(reader)? {
            0 => InvalidCommittee {
                reason: decode_string(reader)?,
            },
            1 => InvalidAuthorityName,
            2 => InvalidPublicKey,
            3 => ArithmeticOverflow,
            4 => ZeroAmount,
            5 => SenderKeyMismatch,
            6 => WrongShard,
            7 => InvalidSignature,
            8 => UnknownSender,
            9 => PreviousTransferPending,
            10 => UnexpectedSequence {
                expected: SequenceNumber::decode(reader)?,
            },
            11 => InsufficientBalance {
                balance: Balance::decode(reader)?,
                amount: Amount::decode(reader)?,
            },
            12 => InvalidCertificate {
                reason: CertificateError::decode(reader)?,
            },
            13 => MissingEarlierCertificates {
                expected: SequenceNumber::decode(reader)?,
            },
            14 => PrimaryRecipient,
            15 => UnknownChannel {
                source_shard: decode_u32(reader)?,
            },
            16 => SkippedFundingIndex {
                expected: decode_u64(reader)?,
            },
            17 => UnknownAccount,
            18 => CertificateNotFound,
            19 => InvalidVote {
                authority: AuthorityName::decode(reader)?,
            },
            20 => InsufficientVotes {
                found: usize_of(decode_u64(reader)?)?,
                needed: usize_of(decode_u64(reader)?)?,
            },
            21 => InsufficientPrimaryFunds,
            22 => AlreadyRedeemed,
            23 => NotPrimaryRecipient,
            24 => ContractInsolvent,
            25 => Malformed {
                reason: decode_string(reader)?,
            },
            26 => UnsupportedVersion {
                version: decode_u8(reader)?,
            },
            27 => ResponseTooLarge,
            28 => UnexpectedResponse,
            29 => Unreachable {
                reason: decode_string(reader)?,
            },
            tag => return Err(FastPayError::malformed(format!("bad error tag {tag}"))),
        })
    }
}
