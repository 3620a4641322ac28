// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_types::{Amount, AuthorityName, Balance, SequenceNumber, ShardId};

/// Returns early with the given error unless the condition holds.
#[macro_export]
macro_rules! fp_ensure {
    ($cond:expr, $e:expr) => {
        if !($cond) {
            return Err($e.into());
        }
    };
}

/// Reasons a certificate fails validation against a committee.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
pub enum CertificateError {
    #[error("signature from an authority outside the committee")]
    UnknownAuthority,
    #[error("the same authority signed twice")]
    DuplicateAuthority,
    #[error("signatures are not sorted by authority name")]
    NonCanonical,
    #[error("a signature failed to verify")]
    BadSignature,
    #[error("fewer signatures than the quorum threshold")]
    InsufficientQuorum,
    #[error("the embedded transfer order is malformed")]
    InvalidOrder,
}

/// Protocol errors. Every variant has a stable wire encoding (see `codec`),
/// so authorities can return them to clients as typed replies.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
pub enum FastPayError {
    // Construction and arithmetic.
    #[error("invalid committee: {reason}")]
    InvalidCommittee { reason: String },
    #[error("authority names must be 1 to 32 bytes")]
    InvalidAuthorityName,
    #[error("invalid public key")]
    InvalidPublicKey,
    #[error("arithmetic overflow")]
    ArithmeticOverflow,
    #[error("transfer amount must be positive")]
    ZeroAmount,
    #[error("sender address does not match the sender key")]
    SenderKeyMismatch,

    // Authority handlers.
    #[error("message is handled by another shard")]
    WrongShard,
    #[error("invalid signature")]
    InvalidSignature,
    #[error("sender account is unknown to this authority")]
    UnknownSender,
    #[error("a different transfer order is already pending")]
    PreviousTransferPending,
    #[error("unexpected sequence number, expected {expected}")]
    UnexpectedSequence { expected: SequenceNumber },
    #[error("insufficient balance {balance} for amount {amount}")]
    InsufficientBalance { balance: Balance, amount: Amount },
    #[error("invalid certificate: {reason}")]
    InvalidCertificate { reason: CertificateError },
    #[error("missing earlier certificates, next expected sequence is {expected}")]
    MissingEarlierCertificates { expected: SequenceNumber },
    #[error("cross-shard update carries a Primary recipient")]
    PrimaryRecipient,
    #[error("cross-shard update from an unknown channel {source_shard}")]
    UnknownChannel { source_shard: ShardId },
    #[error("skipped funding index, expected {expected}")]
    SkippedFundingIndex { expected: u64 },
    #[error("unknown account")]
    UnknownAccount,
    #[error("certificate not found")]
    CertificateNotFound,

    // Votes and certificates.
    #[error("invalid vote from {authority}")]
    InvalidVote { authority: AuthorityName },
    #[error("insufficient votes: {found} of {needed}")]
    InsufficientVotes { found: usize, needed: usize },

    // Primary ledger.
    #[error("insufficient funds on the Primary account")]
    InsufficientPrimaryFunds,
    #[error("certificate was already redeemed")]
    AlreadyRedeemed,
    #[error("certificate recipient is not a Primary address")]
    NotPrimaryRecipient,
    #[error("smart contract balance would become negative")]
    ContractInsolvent,

    // Wire and transport.
    #[error("malformed message: {reason}")]
    Malformed { reason: String },
    #[error("unsupported protocol version {version}")]
    UnsupportedVersion { version: u8 },
    #[error("response does not fit in a datagram")]
    ResponseTooLarge,
    #[error("unexpected response kind")]
    UnexpectedResponse,
    #[error("authority unreachable: {reason}")]
    Unreachable { reason: String },
}

impl FastPayError {
    pub(crate) fn malformed(reason: impl Into<String>) -> Self {
        FastPayError::Malformed { reason: reason.into() }
    }
}

impl From<CertificateError> for FastPayError {
    fn from(reason: CertificateError) -> Self {
        FastPayError::InvalidCertificate { reason }
    }
}
