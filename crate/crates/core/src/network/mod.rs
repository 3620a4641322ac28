// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Wire envelopes, request dispatch, and the UDP/TCP transports.
//!
//! An envelope is one version byte, one kind byte, then the canonical
//! encoding of exactly one message. Requests must fit in one datagram of
//! [`MAX_DATAGRAM`] bytes; larger responses are fetched over TCP, where each
//! envelope is preceded by its length as a little-endian `u32`.

mod client;
mod config;
mod server;

pub use client::{NetworkAuthorityClient, Transport};
pub use config::{AuthorityConfig, CommitteeConfig, ShardEndpoint, BIND_HOST_ENV};
pub use server::{serve_shard, spawn_shard, spawn_shards, ShardHandle};

use crate::authority::AuthorityState;
use crate::codec::{Decode, Encode, Reader};
use crate::error::FastPayError;
use crate::messages::{
    AccountInfoRequest, AccountInfoResponse, ConfirmationOrder, CrossShardAck, CrossShardUpdate,
    PrimarySynchronizationOrder, SignedTransferOrder, TransferOrder,
};

pub const PROTOCOL_VERSION: u8 = 1;
/// Largest envelope sent as a single datagram.
pub const MAX_DATAGRAM: usize = 1400;
/// Largest envelope accepted on a TCP stream.
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    TransferOrder(TransferOrder),
    ConfirmationOrder(ConfirmationOrder),
    AccountInfoRequest(AccountInfoRequest),
    SynchronizationOrder(PrimarySynchronizationOrder),
    CrossShardUpdate(CrossShardUpdate),
    CrossShardAck(CrossShardAck),
    Vote(SignedTransferOrder),
    AccountInfo(AccountInfoResponse),
    Error(FastPayError),
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::TransferOrder(_) => 0x01,
            Message::ConfirmationOrder(_) => 0x02,
            Message::AccountInfoRequest(_) => 0x03,
            Message::SynchronizationOrder(_) => 0x04,
            Message::CrossShardUpdate(_) => 0x05,
            Message::CrossShardAck(_) => 0x06,
            Message::Vote(_) => 0x81,
            Message::AccountInfo(_) => 0x82,
            Message::Error(_) => 0x8f,
        }
    }

    pub fn to_envelope(&self) -> Vec<u8> {
        let mut out = vec![PROTOCOL_VERSION, self.kind()];
        match self {
            Message::TransferOrder(m) => m.encode(&mut out),
            Message::ConfirmationOrder(m) => m.encode(&mut out),
            Message::AccountInfoRequest(m) => m.encode(&mut out),
            Message::SynchronizationOrder(m) => m.encode(&mut out),
            Message::CrossShardUpdate(m) => m.encode(&mut out),
            Message::CrossShardAck(m) => m.encode(&mut out),
            Message::Vote(m) => m.encode(&mut out),
            Message::AccountInfo(m) => m.encode(&mut out),
            Message::Error(m) => m.encode(&mut out),
        }
        out
    }

    pub fn from_envelope(bytes: &[u8]) -> Result<Self, FastPayError> {
        let mut reader = Reader::new(bytes);
        let [version, kind] = reader.take_array()?;
        fp_ensure!(
            version == PROTOCOL_VERSION,
            FastPayError::UnsupportedVersion { version }
        );
        fn body<T: Decode>(reader: &mut Reader<'_>) -> Result<T, FastPayError> {
            let value = T::decode(reader)?;
            reader.finish()?;
            Ok(value)
        }
        let reader = &mut reader;
        Ok(match kind {
            0x01 => Message::TransferOrder(body(reader)?),
            0x02 => Message::ConfirmationOrder(body(reader)?),
            0x03 => Message::AccountInfoRequest(body(reader)?),
            0x04 => Message::SynchronizationOrder(body(reader)?),
            0x05 => Message::CrossShardUpdate(body(reader)?),
            0x06 => Message::CrossShardAck(body(reader)?),
            0x81 => Message::Vote(body(reader)?),
            0x82 => Message::AccountInfo(body(reader)?),
            0x8f => Message::Error(body(reader)?),
            other => return Err(FastPayError::malformed(format!("unknown message kind {other:#04x}"))),
        })
    }
}

/// What a shard does with one inbound envelope.
#[derive(Debug, Default)]
pub struct Dispatch {
    /// Envelope to send back to the source, if any.
    pub reply: Option<Vec<u8>>,
    /// Credit to forward to a sibling shard.
    pub cross_shard: Option<CrossShardUpdate>,
}

/// Decodes `bytes`, runs the matching handler and encodes its answer.
/// Undecodable envelopes and stray responses get no reply.
pub fn dispatch(state: &mut AuthorityState, bytes: &[u8]) -> Dispatch {
    let Ok(message) = Message::from_envelope(bytes) else {
        return Dispatch::default();
    };
    let mut cross_shard = None;
    let reply = match message {
        Message::TransferOrder(order) => state.handle_transfer_order(order).map(Message::Vote),
        Message::ConfirmationOrder(order) => state.handle_confirmation_order(order).map(|outcome| {
            cross_shard = outcome.cross_shard;
            Message::AccountInfo(outcome.info)
        }),
        Message::AccountInfoRequest(request) => state.handle_account_info_request(request).map(Message::AccountInfo),
        Message::SynchronizationOrder(order) => state
            .handle_primary_synchronization_order(order)
            .map(Message::AccountInfo),
        Message::CrossShardUpdate(update) => state.handle_cross_shard_commit(update).map(Message::CrossShardAck),
        Message::CrossShardAck(ack) => {
            state.handle_cross_shard_ack(ack);
            return Dispatch::default();
        }
        Message::Vote(_) | Message::AccountInfo(_) | Message::Error(_) => return Dispatch::default(),
    };
    let reply = reply.unwrap_or_else(Message::Error);
    Dispatch {
        reply: Some(reply.to_envelope()),
        cross_shard,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_types::{Address, Amount, SequenceNumber};
    use crate::messages::Recipient;
    use crate::testing::strategies::*;
    use crate::testing::{key, make_committee, signed_order};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn envelopes_round_trip(
            order in arb_transfer_order(),
            certificate in arb_certificate(),
            vote in arb_vote(),
            info in arb_account_info_response(),
            account in arb_address(),
            amount in 1u64..,
            index in any::<u64>(),
        ) {
            let messages = vec![
                Message::TransferOrder(order),
                Message::ConfirmationOrder(ConfirmationOrder { certificate: certificate.clone() }),
                Message::AccountInfoRequest(AccountInfoRequest {
                    account,
                    certificate_sequence: Some(SequenceNumber::new(index)),
                    received_page: None,
                }),
                Message::SynchronizationOrder(PrimarySynchronizationOrder {
                    recipient: account,
                    amount: Amount::new(amount),
                    transaction_index: index,
                }),
                Message::CrossShardUpdate(CrossShardUpdate::new(0, 1, index, certificate, &key(9))),
                Message::CrossShardAck(CrossShardAck { source_shard: 2, shard_id: 3, channel_sequence: index }),
                Message::Vote(vote),
                Message::AccountInfo(info),
                Message::Error(FastPayError::MissingEarlierCertificates { expected: SequenceNumber::new(index) }),
            ];
            for message in messages {
                let bytes = message.to_envelope();
                prop_assert_eq!(bytes[0], PROTOCOL_VERSION);
                prop_assert_eq!(bytes[1], message.kind());
                prop_assert_eq!(Message::from_envelope(&bytes).unwrap(), message);
            }
        }

        #[test]
        fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = Message::from_envelope(&bytes);
        }
    }

    #[test]
    fn other_versions_are_rejected_not_misparsed() {
        let message = Message::CrossShardAck(CrossShardAck {
            source_shard: 0,
            shard_id: 1,
            channel_sequence: 7,
        });
        let mut bytes = message.to_envelope();
        for version in [0u8, 2, 255] {
            bytes[0] = version;
            assert_eq!(
                Message::from_envelope(&bytes),
                Err(FastPayError::UnsupportedVersion { version })
            );
        }
    }

    // The worked examples in docs/wire-format.md.
    #[test]
    fn golden_envelopes() {
        let ack = Message::CrossShardAck(CrossShardAck {
            source_shard: 1,
            shard_id: 2,
            channel_sequence: 5,
        });
        assert_eq!(hex::encode(ack.to_envelope()), "010601000000020000000500000000000000");
        let request = Message::AccountInfoRequest(AccountInfoRequest {
            account: Address::from_bytes([0x11; 32]),
            certificate_sequence: Some(SequenceNumber::new(3)),
            received_page: None,
        });
        assert_eq!(
            hex::encode(request.to_envelope()),
            format!("0103{}01030000000000000000", "11".repeat(32))
        );
        let error = Message::Error(FastPayError::UnexpectedSequence {
            expected: SequenceNumber::new(2),
        });
        assert_eq!(hex::encode(error.to_envelope()), "018f0a0200000000000000");
        let sync = Message::SynchronizationOrder(PrimarySynchronizationOrder {
            recipient: Address::from_bytes([0xab; 32]),
            amount: Amount::new(1000),
            transaction_index: 1,
        });
        assert_eq!(
            hex::encode(sync.to_envelope()),
            format!("0104{}e8030000000000000100000000000000", "ab".repeat(32))
        );
    }

    #[test]
    fn transfer_order_requests_fit_in_a_datagram() {
        let keys = make_committee(3);
        let order = signed_order(&key(1), Recipient::FastPay(Address::from_bytes([2; 32])), 5, 0);
        let certificate = keys.certify(&order);
        let confirmation = Message::ConfirmationOrder(ConfirmationOrder { certificate });
        assert!(Message::TransferOrder(order).to_envelope().len() <= MAX_DATAGRAM);
        assert!(confirmation.to_envelope().len() <= MAX_DATAGRAM);
    }

    #[test]
    fn dispatch_answers_requests_and_drops_noise() {
        let keys = make_committee(1);
        let mut state = AuthorityState::new(
            keys.names[0].clone(),
            keys.key_pairs[0].clone(),
            keys.committee.clone(),
            0,
            1,
        )
        .unwrap();
        let sender = key(1);
        state
            .handle_primary_synchronization_order(PrimarySynchronizationOrder {
                recipient: sender.address(),
                amount: Amount::new(10),
                transaction_index: 1,
            })
            .unwrap();
        let order = signed_order(&sender, Recipient::FastPay(key(2).address()), 4, 0);
        let request = Message::TransferOrder(order.clone()).to_envelope();
        let first = dispatch(&mut state, &request).reply.unwrap();
        match Message::from_envelope(&first).unwrap() {
            Message::Vote(vote) => assert_eq!(vote.value, order),
            other => panic!("unexpected {other:?}"),
        }
        // A retried datagram gets the same answer.
        assert_eq!(dispatch(&mut state, &request).reply.unwrap(), first);

        let overdraft = signed_order(&key(3), Recipient::FastPay(key(2).address()), 4, 0);
        let reply = dispatch(&mut state, &Message::TransferOrder(overdraft).to_envelope());
        assert!(matches!(
            Message::from_envelope(&reply.reply.unwrap()).unwrap(),
            Message::Error(FastPayError::UnknownSender)
        ));

        let before = state.clone();
        assert!(dispatch(&mut state, &[1, 0x01, 0xff]).reply.is_none());
        assert!(dispatch(&mut state, &[2]).reply.is_none());
        assert!(
            dispatch(&mut state, &Message::Error(FastPayError::WrongShard).to_envelope())
                .reply
                .is_none()
        );
        assert_eq!(state, before);
    }
}
