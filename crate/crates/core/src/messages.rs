// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Protocol messages, their canonical encodings and certificate handling.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::base_types::{
    address_of, Address, Amount, AuthorityName, Balance, Committee, KeyPair, PublicKeyBytes, SequenceNumber, ShardId,
    Signature,
};
use crate::codec::{decode_u32, decode_u64, decode_u8, encode_u32, encode_u64, encode_u8};
use crate::codec::{Decode, Encode, Reader};
use crate::error::{CertificateError, FastPayError};

pub const USER_DATA_LENGTH: usize = 32;

const TRANSFER_DOMAIN: &[u8] = b"FastPay/Transfer/v1";
const VOTE_DOMAIN: &[u8] = b"FastPay/Vote/v1";
const CROSS_SHARD_DOMAIN: &[u8] = b"FastPay/CrossShard/v1";

/// Opaque data attached to a transfer. Signed and carried, never interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserData(pub [u8; USER_DATA_LENGTH]);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Recipient {
    FastPay(Address),
    Primary(Address),
}

impl Recipient {
    pub fn address(&self) -> Address {
        match self {
            Recipient::FastPay(a) | Recipient::Primary(a) => *a,
        }
    }

    pub fn fastpay(&self) -> Option<Address> {
        match self {
            Recipient::FastPay(a) => Some(*a),
            Recipient::Primary(_) => None,
        }
    }
}

/// The body of a transfer order, i.e. everything the sender signs.
///
/// `sender_key` travels with the order because an address is only a hash:
/// authorities need the key itself to check the signature.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transfer {
    pub sender: Address,
    pub sender_key: PublicKeyBytes,
    pub recipient: Recipient,
    pub amount: Amount,
    pub sequence: SequenceNumber,
    pub user_data: Option<UserData>,
}

impl Transfer {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = TRANSFER_DOMAIN.to_vec();
        self.encode(&mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransferOrder {
    pub transfer: Transfer,
    pub signature: Signature,
}

impl TransferOrder {
    pub fn new(transfer: Transfer, key_pair: &KeyPair) -> Result<Self, FastPayError> {
        fp_ensure!(!transfer.amount.is_zero(), FastPayError::ZeroAmount);
        fp_ensure!(
            key_pair.public() == transfer.sender_key && key_pair.address() == transfer.sender,
            FastPayError::SenderKeyMismatch
        );
        let signature = key_pair.sign(&transfer.signing_bytes());
        Ok(TransferOrder { transfer, signature })
    }

    /// Structural checks that need no signature verification.
    pub fn check_shape(&self) -> Result<(), FastPayError> {
        fp_ensure!(!self.transfer.amount.is_zero(), FastPayError::ZeroAmount);
        fp_ensure!(
            address_of(&self.transfer.sender_key) == self.transfer.sender,
            FastPayError::SenderKeyMismatch
        );
        Ok(())
    }

    pub fn check_signature(&self) -> Result<(), FastPayError> {
        self.check_shape()?;
        self.signature
            .verify(&self.transfer.signing_bytes(), &self.transfer.sender_key)
    }

    /// The bytes an authority signs when it votes for this order.
    pub fn vote_bytes(&self) -> Vec<u8> {
        let mut out = VOTE_DOMAIN.to_vec();
        self.encode(&mut out);
        out
    }

    pub fn sender(&self) -> Address {
        self.transfer.sender
    }

    pub fn sequence(&self) -> SequenceNumber {
        self.transfer.sequence
    }

    pub fn amount(&self) -> Amount {
        self.transfer.amount
    }

    pub fn recipient(&self) -> Recipient {
        self.transfer.recipient
    }
}

/// One authority's vote for a transfer order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedTransferOrder {
    pub value: TransferOrder,
    pub authority: AuthorityName,
    pub signature: Signature,
}

impl SignedTransferOrder {
    pub fn new(value: TransferOrder, authority: AuthorityName, key_pair: &KeyPair) -> Self {
        let signature = key_pair.sign(&value.vote_bytes());
        SignedTransferOrder {
            value,
            authority,
            signature,
        }
    }

    /// Checks the authority's signature. The sender's signature is checked
    /// separately when the vote is aggregated.
    pub fn check(&self, committee: &Committee) -> Result<(), FastPayError> {
        let invalid = || FastPayError::InvalidVote {
            authority: self.authority.clone(),
        };
        let key = committee.verifying_key(&self.authority).ok_or_else(invalid)?;
        self.signature
            .verify_with(&self.value.vote_bytes(), key)
            .map_err(|_| invalid())
    }
}

/// A transfer order together with a quorum of authority signatures.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CertifiedTransferOrder {
    pub value: TransferOrder,
    pub signatures: Vec<(AuthorityName, Signature)>,
}

impl CertifiedTransferOrder {
    pub fn sender(&self) -> Address {
        self.value.sender()
    }

    pub fn sequence(&self) -> SequenceNumber {
        self.value.sequence()
    }

    pub fn amount(&self) -> Amount {
        self.value.amount()
    }

    pub fn recipient(&self) -> Recipient {
        self.value.recipient()
    }

    /// Validates the certificate against `committee`. Cheap structural checks
    /// run first; all signatures, the sender's included, are then verified in
    /// one batch.
    pub fn check(&self, committee: &Committee) -> Result<(), FastPayError> {
        check_certificate(self, committee).map_err(Into::into)
    }
}

pub fn check_certificate(certificate: &CertifiedTransferOrder, committee: &Committee) -> Result<(), CertificateError> {
    let order = &certificate.value;
    order.check_shape().map_err(|_| CertificateError::InvalidOrder)?;

    let mut keys = Vec::with_capacity(certificate.signatures.len() + 1);
    let mut previous: Option<&AuthorityName> = None;
    for (name, _) in &certificate.signatures {
        let key = committee
            .verifying_key(name)
            .ok_or(CertificateError::UnknownAuthority)?;
        if let Some(previous) = previous {
            match previous.cmp(name) {
                std::cmp::Ordering::Less => {}
                std::cmp::Ordering::Equal => return Err(CertificateError::DuplicateAuthority),
                std::cmp::Ordering::Greater => return Err(CertificateError::NonCanonical),
            }
        }
        previous = Some(name);
        keys.push(*key);
    }
    if certificate.signatures.len() < committee.quorum_threshold() {
        return Err(CertificateError::InsufficientQuorum);
    }

    let sender_key = order
        .transfer
        .sender_key
        .to_verifying_key()
        .map_err(|_| CertificateError::InvalidOrder)?;
    keys.push(sender_key);
    let vote_bytes = order.vote_bytes();
    let transfer_bytes = order.transfer.signing_bytes();
    let mut messages: Vec<&[u8]> = vec![&vote_bytes; certificate.signatures.len()];
    messages.push(&transfer_bytes);
    let signatures: Vec<_> = certificate
        .signatures
        .iter()
        .map(|(_, s)| s.to_dalek())
        .chain(std::iter::once(order.signature.to_dalek()))
        .collect();
    ed25519_dalek::verify_batch(&messages, &signatures, &keys).map_err(|_| CertificateError::BadSignature)
}

/// Aggregates votes for `order` into a certificate holding exactly the first
/// `2f + 1` distinct authorities, sorted by name.
pub fn make_certificate(
    order: &TransferOrder,
    votes: &[SignedTransferOrder],
    committee: &Committee,
) -> Result<CertifiedTransferOrder, FastPayError> {
    order.check_signature()?;
    let needed = committee.quorum_threshold();
    let mut seen = BTreeSet::new();
    let mut signatures = Vec::with_capacity(needed);
    for vote in votes {
        fp_ensure!(
            vote.value == *order,
            FastPayError::InvalidVote {
                authority: vote.authority.clone(),
            }
        );
        vote.check(committee)?;
        if seen.insert(vote.authority.clone()) && signatures.len() < needed {
            signatures.push((vote.authority.clone(), vote.signature));
        }
    }
    fp_ensure!(
        signatures.len() == needed,
        FastPayError::InsufficientVotes {
            found: seen.len(),
            needed,
        }
    );
    signatures.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(CertifiedTransferOrder {
        value: order.clone(),
        signatures,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfirmationOrder {
    pub certificate: CertifiedTransferOrder,
}

/// Credits `recipient` after a funding transaction on the Primary.
/// `transaction_index` counts funding events on the recipient's shard,
/// starting at 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimarySynchronizationOrder {
    pub recipient: Address,
    pub amount: Amount,
    pub transaction_index: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RedeemTransaction {
    pub certificate: CertifiedTransferOrder,
}

/// Credit for a recipient that lives on another shard of the same authority.
/// The signature is the authority's own, over `(source, destination,
/// channel sequence, SHA-256 of the certificate bytes)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrossShardUpdate {
    pub source_shard: ShardId,
    pub shard_id: ShardId,
    pub channel_sequence: u64,
    pub certificate: CertifiedTransferOrder,
    pub signature: Signature,
}

impl CrossShardUpdate {
    pub fn new(
        source_shard: ShardId,
        shard_id: ShardId,
        channel_sequence: u64,
        certificate: CertifiedTransferOrder,
        key_pair: &KeyPair,
    ) -> Self {
        let bytes = Self::signing_bytes(source_shard, shard_id, channel_sequence, &certificate);
        CrossShardUpdate {
            source_shard,
            shard_id,
            channel_sequence,
            certificate,
            signature: key_pair.sign(&bytes),
        }
    }

    fn signing_bytes(
        source_shard: ShardId,
        shard_id: ShardId,
        channel_sequence: u64,
        certificate: &CertifiedTransferOrder,
    ) -> Vec<u8> {
        use sha2::{Digest, Sha256};
        let mut out = CROSS_SHARD_DOMAIN.to_vec();
        encode_u32(source_shard, &mut out);
        encode_u32(shard_id, &mut out);
        encode_u64(channel_sequence, &mut out);
        out.extend_from_slice(&Sha256::digest(certificate.to_bytes()));
        out
    }

    pub fn check_signature(&self, key: &PublicKeyBytes) -> Result<(), FastPayError> {
        let bytes = Self::signing_bytes(
            self.source_shard,
            self.shard_id,
            self.channel_sequence,
            &self.certificate,
        );
        self.signature.verify(&bytes, key)
    }

    pub fn ack(&self) -> CrossShardAck {
        CrossShardAck {
            source_shard: self.source_shard,
            shard_id: self.shard_id,
            channel_sequence: self.channel_sequence,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrossShardAck {
    pub source_shard: ShardId,
    pub shard_id: ShardId,
    pub channel_sequence: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccountInfoRequest {
    pub account: Address,
    /// Ask for the confirmed certificate with this sequence number.
    pub certificate_sequence: Option<SequenceNumber>,
    /// Ask for a page of received certificates starting at this index.
    pub received_page: Option<u64>,
}

impl AccountInfoRequest {
    pub fn new(account: Address) -> Self {
        AccountInfoRequest {
            account,
            certificate_sequence: None,
            received_page: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccountInfoResponse {
    pub account: Address,
    pub balance: Balance,
    pub next_sequence: SequenceNumber,
    pub pending: Option<SignedTransferOrder>,
    pub requested_certificate: Option<CertifiedTransferOrder>,
    pub received: Vec<CertifiedTransferOrder>,
}

// Canonical encodings.

impl Encode for UserData {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

impl Decode for UserData {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(UserData(reader.take_array()?))
    }
}

impl Encode for Recipient {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Recipient::FastPay(a) => {
                encode_u8(0, out);
                a.encode(out);
            }
            Recipient::Primary(a) => {
                encode_u8(1, out);
                a.encode(out);
            }
        }
    }
}

impl Decode for Recipient {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        match decode_u8(reader)? {
            0 => Ok(Recipient::FastPay(Address::decode(reader)?)),
            1 => Ok(Recipient::Primary(Address::decode(reader)?)),
            tag => Err(FastPayError::malformed(format!("bad recipient tag {tag}"))),
        }
    }
}

impl Encode for Transfer {
    fn encode(&self, out: &mut Vec<u8>) {
        self.sender.encode(out);
        self.sender_key.encode(out);
        self.recipient.encode(out);
        self.amount.encode(out);
        self.sequence.encode(out);
        self.user_data.encode(out);
    }
}

impl Decode for Transfer {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(Transfer {
            sender: Decode::decode(reader)?,
            sender_key: Decode::decode(reader)?,
            recipient: Decode::decode(reader)?,
            amount: Decode::decode(reader)?,
            sequence: Decode::decode(reader)?,
            user_data: Decode::decode(reader)?,
        })
    }
}

impl Encode for TransferOrder {
    fn encode(&self, out: &mut Vec<u8>) {
        self.transfer.encode(out);
        self.signature.encode(out);
    }
}

impl Decode for TransferOrder {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(TransferOrder {
            transfer: Decode::decode(reader)?,
            signature: Decode::decode(reader)?,
        })
    }
}

impl Encode for SignedTransferOrder {
    fn encode(&self, out: &mut Vec<u8>) {
        self.value.encode(out);
        self.authority.encode(out);
        self.signature.encode(out);
    }
}

impl Decode for SignedTransferOrder {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(SignedTransferOrder {
            value: Decode::decode(reader)?,
            authority: Decode::decode(reader)?,
            signature: Decode::decode(reader)?,
        })
    }
}

impl Encode for CertifiedTransferOrder {
    fn encode(&self, out: &mut Vec<u8>) {
        self.value.encode(out);
        self.signatures.encode(out);
    }
}

impl Decode for CertifiedTransferOrder {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(CertifiedTransferOrder {
            value: Decode::decode(reader)?,
            signatures: Decode::decode(reader)?,
        })
    }
}

impl Encode for ConfirmationOrder {
    fn encode(&self, out: &mut Vec<u8>) {
        self.certificate.encode(out);
    }
}

impl Decode for ConfirmationOrder {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(ConfirmationOrder {
            certificate: Decode::decode(reader)?,
        })
    }
}

impl Encode for RedeemTransaction {
    fn encode(&self, out: &mut Vec<u8>) {
        self.certificate.encode(out);
    }
}

impl Decode for RedeemTransaction {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(RedeemTransaction {
            certificate: Decode::decode(reader)?,
        })
    }
}

impl Encode for PrimarySynchronizationOrder {
    fn encode(&self, out: &mut Vec<u8>) {
        self.recipient.encode(out);
        self.amount.encode(out);
        encode_u64(self.transaction_index, out);
    }
}

impl Decode for PrimarySynchronizationOrder {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(PrimarySynchronizationOrder {
            recipient: Decode::decode(reader)?,
            amount: Decode::decode(reader)?,
            transaction_index: decode_u64(reader)?,
        })
    }
}

impl Encode for CrossShardUpdate {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_u32(self.source_shard, out);
        encode_u32(self.shard_id, out);
        encode_u64(self.channel_sequence, out);
        self.certificate.encode(out);
        self.signature.encode(out);
    }
}

impl Decode for CrossShardUpdate {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(CrossShardUpdate {
            source_shard: decode_u32(reader)?,
            shard_id: decode_u32(reader)?,
            channel_sequence: decode_u64(reader)?,
            certificate: Decode::decode(reader)?,
            signature: Decode::decode(reader)?,
        })
    }
}

impl Encode for CrossShardAck {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_u32(self.source_shard, out);
        encode_u32(self.shard_id, out);
        encode_u64(self.channel_sequence, out);
    }
}

impl Decode for CrossShardAck {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(CrossShardAck {
            source_shard: decode_u32(reader)?,
            shard_id: decode_u32(reader)?,
            channel_sequence: decode_u64(reader)?,
        })
    }
}

impl Encode for AccountInfoRequest {
    fn encode(&self, out: &mut Vec<u8>) {
        self.account.encode(out);
        self.certificate_sequence.encode(out);
        self.received_page.encode(out);
    }
}

impl Decode for AccountInfoRequest {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(AccountInfoRequest {
            account: Decode::decode(reader)?,
            certificate_sequence: Decode::decode(reader)?,
            received_page: Decode::decode(reader)?,
        })
    }
}

impl Encode for AccountInfoResponse {
    fn encode(&self, out: &mut Vec<u8>) {
        self.account.encode(out);
        self.balance.encode(out);
        self.next_sequence.encode(out);
        self.pending.encode(out);
        self.requested_certificate.encode(out);
        self.received.encode(out);
    }
}

impl Decode for AccountInfoResponse {
    fn decode(reader: &mut Reader<'_>) -> Result<Self, FastPayError> {
        Ok(AccountInfoResponse {
            account: Decode::decode(reader)?,
            balance: Decode::decode(reader)?,
            next_sequence: Decode::decode(reader)?,
            pending: Decode::decode(reader)?,
            requested_certificate: Decode::decode(reader)?,
            received: Decode::decode(reader)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{key, make_committee, signed_order};

    fn order_for(amount: u64) -> TransferOrder {
        signed_order(&key(100), Recipient::FastPay(key(101).address()), amount, 0)
    }

    #[test]
    fn encoding_is_deterministic_and_injective() {
        let order = order_for(5);
        assert_eq!(order.to_bytes(), order.to_bytes());
        let other = order_for(6);
        assert_ne!(order.transfer.to_bytes(), other.transfer.to_bytes());
        let mut no_data = order.transfer.clone();
        let mut some_data = order.transfer.clone();
        no_data.user_data = None;
        some_data.user_data = Some(UserData([0; USER_DATA_LENGTH]));
        assert_ne!(no_data.to_bytes(), some_data.to_bytes());
    }

    #[test]
    fn zero_amount_and_foreign_key_are_rejected() {
        let sender = key(1);
        let transfer = Transfer {
            sender: sender.address(),
            sender_key: sender.public(),
            recipient: Recipient::FastPay(key(2).address()),
            amount: Amount::ZERO,
            sequence: SequenceNumber::new(0),
            user_data: None,
        };
        assert_eq!(
            TransferOrder::new(transfer.clone(), &sender),
            Err(FastPayError::ZeroAmount)
        );
        let transfer = Transfer {
            amount: Amount::new(1),
            ..transfer
        };
        assert_eq!(
            TransferOrder::new(transfer, &key(3)),
            Err(FastPayError::SenderKeyMismatch)
        );
    }

    #[test]
    fn make_certificate_takes_exactly_a_quorum() {
        let keys = make_committee(1);
        let order = order_for(4);
        let votes = keys.votes(&order, 0..3);
        let cert = make_certificate(&order, &votes, &keys.committee).unwrap();
        assert_eq!(cert.signatures.len(), 3);
        assert!(cert.check(&keys.committee).is_ok());

        let keys3 = make_committee(3);
        let order = order_for(4);
        let votes = keys3.votes(&order, 0..8);
        let cert = make_certificate(&order, &votes, &keys3.committee).unwrap();
        assert_eq!(cert.signatures.len(), 7);
        assert!(cert.check(&keys3.committee).is_ok());
    }

    #[test]
    fn duplicate_votes_do_not_count() {
        let keys = make_committee(1);
        let order = order_for(4);
        let mut votes = keys.votes(&order, 0..2);
        votes.push(votes[0].clone());
        assert_eq!(
            make_certificate(&order, &votes, &keys.committee),
            Err(FastPayError::InsufficientVotes { found: 2, needed: 3 })
        );
    }

    #[test]
    fn invalid_vote_is_reported() {
        let keys = make_committee(1);
        let order = order_for(4);
        let mut votes = keys.votes(&order, 0..3);
        votes[1].signature = votes[0].signature;
        assert!(matches!(
            make_certificate(&order, &votes, &keys.committee),
            Err(FastPayError::InvalidVote { .. })
        ));
    }

    #[test]
    fn check_certificate_failures() {
        let keys = make_committee(1);
        let order = order_for(4);
        let cert = make_certificate(&order, &keys.votes(&order, 0..4), &keys.committee).unwrap();

        let mut flipped = cert.clone();
        let mut bytes = *flipped.signatures[1].1.as_bytes();
        bytes[10] ^= 1;
        flipped.signatures[1].1 = Signature::from_bytes(bytes);
        assert_eq!(
            check_certificate(&flipped, &keys.committee),
            Err(CertificateError::BadSignature)
        );

        let mut short = cert.clone();
        short.signatures.pop();
        assert_eq!(
            check_certificate(&short, &keys.committee),
            Err(CertificateError::InsufficientQuorum)
        );

        let mut foreign = cert.clone();
        foreign.signatures[0].0 = AuthorityName::new("mallory").unwrap();
        assert_eq!(
            check_certificate(&foreign, &keys.committee),
            Err(CertificateError::UnknownAuthority)
        );

        let mut dup = cert.clone();
        dup.signatures[1] = dup.signatures[0].clone();
        assert_eq!(
            check_certificate(&dup, &keys.committee),
            Err(CertificateError::DuplicateAuthority)
        );

        let mut unsorted = cert.clone();
        unsorted.signatures.swap(0, 1);
        assert_eq!(
            check_certificate(&unsorted, &keys.committee),
            Err(CertificateError::NonCanonical)
        );

        let mut bad_sender = cert;
        let mut bytes = *bad_sender.value.signature.as_bytes();
        bytes[0] ^= 1;
        bad_sender.value.signature = Signature::from_bytes(bytes);
        assert_eq!(
            check_certificate(&bad_sender, &keys.committee),
            Err(CertificateError::BadSignature)
        );
    }

    #[test]
    fn cross_shard_signature_binds_channel() {
        let keys = make_committee(0);
        let order = order_for(4);
        let cert = make_certificate(&order, &keys.votes(&order, 0..1), &keys.committee).unwrap();
        let signer = &keys.key_pairs[0];
        let update = CrossShardUpdate::new(0, 1, 7, cert, signer);
        assert!(update.check_signature(&signer.public()).is_ok());
        let mut moved = update.clone();
        moved.channel_sequence = 8;
        assert!(moved.check_signature(&signer.public()).is_err());
    }

    mod props {
        use super::*;
        use crate::testing::strategies::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn transfer_orders_round_trip(order in arb_transfer_order()) {
                prop_assert_eq!(TransferOrder::from_bytes(&order.to_bytes())?, order);
            }

            #[test]
            fn certificates_round_trip(cert in arb_certificate()) {
                prop_assert_eq!(CertifiedTransferOrder::from_bytes(&cert.to_bytes())?, cert);
            }

            #[test]
            fn responses_round_trip(response in arb_account_info_response()) {
                prop_assert_eq!(AccountInfoResponse::from_bytes(&response.to_bytes())?, response);
            }

            #[test]
            fn decoding_garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..600)) {
                let _ = CertifiedTransferOrder::from_bytes(&bytes);
                let _ = AccountInfoResponse::from_bytes(&bytes);
                let _ = CrossShardUpdate::from_bytes(&bytes);
            }
        }
    }
}
