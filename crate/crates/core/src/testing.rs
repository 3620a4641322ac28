// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the unit tests.

use std::ops::Range;

use crate::base_types::{Amount, AuthorityName, Committee, KeyPair, SequenceNumber};
use crate::messages::{
    make_certificate, CertifiedTransferOrder, Recipient, SignedTransferOrder, Transfer, TransferOrder,
};

pub fn key(seed: u8) -> KeyPair {
    KeyPair::from_secret_bytes([seed; 32])
}

pub struct TestCommittee {
    pub committee: Committee,
    pub names: Vec<AuthorityName>,
    pub key_pairs: Vec<KeyPair>,
}

impl TestCommittee {
    pub fn votes(&self, order: &TransferOrder, range: Range<usize>) -> Vec<SignedTransferOrder> {
        range
            .map(|i| SignedTransferOrder::new(order.clone(), self.names[i].clone(), &self.key_pairs[i]))
            .collect()
    }

    pub fn certify(&self, order: &TransferOrder) -> CertifiedTransferOrder {
        make_certificate(order, &self.votes(order, 0..self.names.len()), &self.committee).unwrap()
    }
}

pub fn make_committee(f: usize) -> TestCommittee {
    let n = 3 * f + 1;
    let names: Vec<_> = (0..n)
        .map(|i| AuthorityName::new(format!("auth{i:02}")).unwrap())
        .collect();
    let key_pairs: Vec<_> = (0..n).map(|i| key(200 + i as u8)).collect();
    let committee = Committee::new(names.iter().cloned().zip(key_pairs.iter().map(KeyPair::public)), f).unwrap();
    TestCommittee {
        committee,
        names,
        key_pairs,
    }
}

pub fn signed_order(sender: &KeyPair, recipient: Recipient, amount: u64, sequence: u64) -> TransferOrder {
    let transfer = Transfer {
        sender: sender.address(),
        sender_key: sender.public(),
        recipient,
        amount: Amount::new(amount),
        sequence: SequenceNumber::new(sequence),
        user_data: None,
    };
    TransferOrder::new(transfer, sender).unwrap()
}

pub mod strategies {
    use proptest::prelude::*;

    use crate::base_types::{Address, Amount, AuthorityName, Balance, PublicKeyBytes, SequenceNumber, Signature};
    use crate::messages::{
        AccountInfoResponse, CertifiedTransferOrder, Recipient, SignedTransferOrder, Transfer, TransferOrder, UserData,
    };

    // Wire round-trips do not care whether signatures verify, so raw bytes
    // are fine here.

    pub fn arb_address() -> impl Strategy<Value = Address> {
        any::<[u8; 32]>().prop_map(Address::from_bytes)
    }

    pub fn arb_signature() -> impl Strategy<Value = Signature> {
        (any::<[u8; 32]>(), any::<[u8; 32]>()).prop_map(|(a, b)| {
            let mut bytes = [0u8; 64];
            bytes[..32].copy_from_slice(&a);
            bytes[32..].copy_from_slice(&b);
            Signature::from_bytes(bytes)
        })
    }

    pub fn arb_name() -> impl Strategy<Value = AuthorityName> {
        "[a-z0-9-]{1,32}".prop_map(|s| AuthorityName::new(s).unwrap())
    }

    pub fn arb_transfer_order() -> impl Strategy<Value = TransferOrder> {
        (
            arb_address(),
            any::<[u8; 32]>(),
            arb_address(),
            any::<bool>(),
            any::<u64>(),
            any::<u64>(),
            proptest::option::of(any::<[u8; 32]>()),
            arb_signature(),
        )
            .prop_map(
                |(sender, key, to, primary, amount, sequence, data, signature)| TransferOrder {
                    transfer: Transfer {
                        sender,
                        sender_key: PublicKeyBytes::from_bytes(key),
                        recipient: if primary {
                            Recipient::Primary(to)
                        } else {
                            Recipient::FastPay(to)
                        },
                        amount: Amount::new(amount),
                        sequence: SequenceNumber::new(sequence),
                        user_data: data.map(UserData),
                    },
                    signature,
                },
            )
    }

    pub fn arb_certificate() -> impl Strategy<Value = CertifiedTransferOrder> {
        (
            arb_transfer_order(),
            proptest::collection::vec((arb_name(), arb_signature()), 0..10),
        )
            .prop_map(|(value, signatures)| CertifiedTransferOrder { value, signatures })
    }

    pub fn arb_vote() -> impl Strategy<Value = SignedTransferOrder> {
        (arb_transfer_order(), arb_name(), arb_signature()).prop_map(|(value, authority, signature)| {
            SignedTransferOrder {
                value,
                authority,
                signature,
            }
        })
    }

    pub fn arb_account_info_response() -> impl Strategy<Value = AccountInfoResponse> {
        (
            arb_address(),
            any::<i128>(),
            any::<u64>(),
            proptest::option::of(arb_vote()),
            proptest::option::of(arb_certificate()),
            proptest::collection::vec(arb_certificate(), 0..3),
        )
            .prop_map(|(account, balance, next, pending, requested_certificate, received)| {
                AccountInfoResponse {
                    account,
                    balance: Balance::new(balance),
                    next_sequence: SequenceNumber::new(next),
                    pending,
                    requested_certificate,
                    received,
                }
            })
    }
}
