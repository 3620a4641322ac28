// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! FastPay: Byzantine fault tolerant settlement over per-account consistent
//! broadcast, with sharded authorities and an emulated Primary ledger.

#[macro_use]
pub mod error;

pub mod audit;
pub mod authority;
pub mod base_types;
pub mod client;
pub mod codec;
pub mod local;
pub mod messages;
pub mod network;
pub mod primary;
pub mod simulator;

#[cfg(test)]
mod testing;

pub use base_types::{
    address_of, Address, Amount, AuthorityName, Balance, Committee, KeyPair, PublicKeyBytes, SequenceNumber, ShardId,
    Signature,
};
pub use error::{CertificateError, FastPayError};
pub use messages::{
    check_certificate, make_certificate, AccountInfoRequest, AccountInfoResponse, CertifiedTransferOrder,
    ConfirmationOrder, CrossShardAck, CrossShardUpdate, PrimarySynchronizationOrder, Recipient, RedeemTransaction,
    SignedTransferOrder, Transfer, TransferOrder, UserData,
};
