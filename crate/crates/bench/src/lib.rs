// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the microbenchmarks.

use fastpay_core::authority::AuthorityState;
use fastpay_core::{
    make_certificate, Address, Amount, AuthorityName, CertifiedTransferOrder, Committee, KeyPair,
    PrimarySynchronizationOrder, Recipient, SequenceNumber, SignedTransferOrder, Transfer, TransferOrder,
};

/// A committee of `size` authorities with deterministic keys.
pub struct Fixture {
    pub committee: Committee,
    pub names: Vec<AuthorityName>,
    pub keys: Vec<KeyPair>,
    pub sender: KeyPair,
}

impl Fixture {
    pub fn new(size: usize) -> Self {
        assert_eq!(size % 3, 1, "committees have 3f+1 members");
        let keys: Vec<KeyPair> = (0..size)
            .map(|i| KeyPair::from_secret_bytes([i as u8 + 1; 32]))
            .collect();
        let names: Vec<AuthorityName> = (0..size)
            .map(|i| AuthorityName::new(format!("auth{i:02}")).unwrap())
            .collect();
        let committee = Committee::new(
            names.iter().cloned().zip(keys.iter().map(KeyPair::public)),
            (size - 1) / 3,
        )
        .unwrap();
        Fixture {
            committee,
            names,
            keys,
            sender: KeyPair::from_secret_bytes([200; 32]),
        }
    }

    pub fn order(&self, sequence: u64, amount: u64) -> TransferOrder {
        TransferOrder::new(
            Transfer {
                sender: self.sender.address(),
                sender_key: self.sender.public(),
                recipient: Recipient::FastPay(Address::from_bytes([9; 32])),
                amount: Amount::new(amount),
                sequence: SequenceNumber::new(sequence),
                user_data: None,
            },
            &self.sender,
        )
        .unwrap()
    }

    pub fn votes(&self, order: &TransferOrder) -> Vec<SignedTransferOrder> {
        self.names
            .iter()
            .zip(&self.keys)
            .map(|(name, key)| SignedTransferOrder::new(order.clone(), name.clone(), key))
            .collect()
    }

    pub fn certificate(&self, order: &TransferOrder) -> CertifiedTransferOrder {
        make_certificate(order, &self.votes(order), &self.committee).unwrap()
    }

    /// Shard 0 of a single-shard authority 0, with the sender funded.
    pub fn funded_authority(&self, amount: u64) -> AuthorityState {
        let mut state = AuthorityState::new(
            self.names[0].clone(),
            self.keys[0].clone(),
            self.committee.clone(),
            0,
            1,
        )
        .unwrap();
        state
            .handle_primary_synchronization_order(PrimarySynchronizationOrder {
                recipient: self.sender.address(),
                amount: Amount::new(amount),
                transaction_index: 1,
            })
            .unwrap();
        state
    }
}
