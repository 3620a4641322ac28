// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! The authority state machine for one shard.
//!
//! Every handler is a deterministic function of `(state, message)` and is
//! idempotent: replaying a processed message returns the same answer and
//! leaves the state untouched.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::base_types::{Address, AuthorityName, Balance, Committee, KeyPair, SequenceNumber, ShardId};
use crate::error::FastPayError;
use crate::messages::{
    AccountInfoRequest, AccountInfoResponse, CertifiedTransferOrder, ConfirmationOrder, CrossShardAck,
    CrossShardUpdate, PrimarySynchronizationOrder, Recipient, SignedTransferOrder, TransferOrder,
};

/// Received certificates returned per account-info page.
pub const RECEIVED_PAGE_SIZE: usize = 16;

/// The shard responsible for `address` when an authority runs
/// `number_of_shards` shards: the first 8 address bytes, read as a
/// little-endian integer, modulo the shard count.
pub fn which_shard(address: &Address, number_of_shards: u32) -> ShardId {
    assert!(number_of_shards >= 1, "an authority has at least one shard");
    let mut prefix = [0u8; 8];
    prefix.copy_from_slice(&address.as_bytes()[..8]);
    (u64::from_le_bytes(prefix) % u64::from(number_of_shards)) as ShardId
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountOffchainState {
    pub balance: Balance,
    pub next_sequence: SequenceNumber,
    pub pending: Option<SignedTransferOrder>,
    /// Certificates sent by this account; entry `k` has sequence number `k`.
    pub confirmed: Vec<CertifiedTransferOrder>,
    pub synchronized: Vec<PrimarySynchronizationOrder>,
    /// Certificates crediting this account, in the order they were applied.
    pub received: Vec<CertifiedTransferOrder>,
}

impl AccountOffchainState {
    fn info(&self, account: Address) -> AccountInfoResponse {
        AccountInfoResponse {
            account,
            balance: self.balance,
            next_sequence: self.next_sequence,
            pending: self.pending.clone(),
            requested_certificate: None,
            received: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct OutgoingChannel {
    next_sequence: u64,
    unacknowledged: BTreeMap<u64, CrossShardUpdate>,
}

/// Delivered channel sequence numbers: everything below `watermark`, plus
/// the out-of-order arrivals in `ahead`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct IncomingChannel {
    watermark: u64,
    ahead: BTreeSet<u64>,
}

impl IncomingChannel {
    fn contains(&self, sequence: u64) -> bool {
        sequence < self.watermark || self.ahead.contains(&sequence)
    }

    fn insert(&mut self, sequence: u64) {
        self.ahead.insert(sequence);
        while self.ahead.remove(&self.watermark) {
            self.watermark += 1;
        }
    }
}

/// What a confirmation did, beyond the sender-side update.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfirmationOutcome {
    pub info: AccountInfoResponse,
    /// Credit to forward to another shard of this authority.
    pub cross_shard: Option<CrossShardUpdate>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityState {
    pub name: AuthorityName,
    pub key_pair: KeyPair,
    pub committee: Committee,
    pub accounts: BTreeMap<Address, AccountOffchainState>,
    /// Index of the last synchronization order applied on this shard.
    pub last_transaction: u64,
    pub shard_id: ShardId,
    pub number_of_shards: u32,
    outgoing: BTreeMap<ShardId, OutgoingChannel>,
    incoming: BTreeMap<ShardId, IncomingChannel>,
}

impl AuthorityState {
    pub fn new(
        name: AuthorityName,
        key_pair: KeyPair,
        committee: Committee,
        shard_id: ShardId,
        number_of_shards: u32,
    ) -> Result<Self, FastPayError> {
        fp_ensure!(
            number_of_shards >= 1 && shard_id < number_of_shards,
            FastPayError::WrongShard
        );
        fp_ensure!(
            committee.public_key(&name) == Some(&key_pair.public()),
            FastPayError::InvalidCommittee {
                reason: format!("{name} is not a member with this key"),
            }
        );
        Ok(AuthorityState {
            name,
            key_pair,
            committee,
            accounts: BTreeMap::new(),
            last_transaction: 0,
            shard_id,
            number_of_shards,
            outgoing: BTreeMap::new(),
            incoming: BTreeMap::new(),
        })
    }

    /// All shards of one authority.
    pub fn new_shards(
        name: AuthorityName,
        key_pair: KeyPair,
        committee: Committee,
        number_of_shards: u32,
    ) -> Result<Vec<Self>, FastPayError> {
        (0..number_of_shards)
            .map(|shard| {
                AuthorityState::new(
                    name.clone(),
                    key_pair.clone(),
                    committee.clone(),
                    shard,
                    number_of_shards,
                )
            })
            .collect()
    }

    pub fn which_shard(&self, address: &Address) -> ShardId {
        which_shard(address, self.number_of_shards)
    }

    pub fn in_shard(&self, address: &Address) -> bool {
        self.which_shard(address) == self.shard_id
    }

    pub fn account(&self, address: &Address) -> Option<&AccountOffchainState> {
        self.accounts.get(address)
    }

    pub fn handle_transfer_order(&mut self, order: TransferOrder) -> Result<SignedTransferOrder, FastPayError> {
        let sender = order.sender();
        fp_ensure!(self.in_shard(&sender), FastPayError::WrongShard);
        order.check_signature()?;
        let account = self.accounts.get_mut(&sender).ok_or(FastPayError::UnknownSender)?;
        if let Some(pending) = &account.pending {
            fp_ensure!(pending.value == order, FastPayError::PreviousTransferPending);
            return Ok(pending.clone());
        }
        fp_ensure!(
            order.sequence() == account.next_sequence,
            FastPayError::UnexpectedSequence {
                expected: account.next_sequence,
            }
        );
        fp_ensure!(
            account.balance.covers(order.amount()),
            FastPayError::InsufficientBalance {
                balance: account.balance,
                amount: order.amount(),
            }
        );
        let signed = SignedTransferOrder::new(order, self.name.clone(), &self.key_pair);
        account.pending = Some(signed.clone());
        Ok(signed)
    }

    /// Settles a certificate. The sender's balance is not checked: a valid,
    /// in-sequence certificate always settles, even if this authority has not
    /// yet seen the funds backing it.
    pub fn handle_confirmation_order(
        &mut self,
        confirmation: ConfirmationOrder,
    ) -> Result<ConfirmationOutcome, FastPayError> {
        let certificate = confirmation.certificate;
        let sender = certificate.sender();
        fp_ensure!(self.in_shard(&sender), FastPayError::WrongShard);
        certificate.check(&self.committee)?;

        let account = self.accounts.entry(sender).or_default();
        if certificate.sequence() < account.next_sequence {
            return Ok(ConfirmationOutcome {
                info: account.info(sender),
                cross_shard: None,
            });
        }
        fp_ensure!(
            certificate.sequence() == account.next_sequence,
            FastPayError::MissingEarlierCertificates {
                expected: account.next_sequence,
            }
        );
        // Compute everything fallible before mutating.
        let balance = account.balance.try_sub(certificate.amount())?;
        let next_sequence = account.next_sequence.increment()?;
        account.balance = balance;
        account.next_sequence = next_sequence;
        account.pending = None;
        account.confirmed.push(certificate.clone());
        let info = account.info(sender);

        let cross_shard = match certificate.recipient() {
            Recipient::Primary(_) => None,
            Recipient::FastPay(recipient) if self.in_shard(&recipient) => {
                self.credit(recipient, certificate)?;
                None
            }
            Recipient::FastPay(recipient) => {
                let destination = self.which_shard(&recipient);
                let channel = self.outgoing.entry(destination).or_default();
                let update = CrossShardUpdate::new(
                    self.shard_id,
                    destination,
                    channel.next_sequence,
                    certificate,
                    &self.key_pair,
                );
                channel.unacknowledged.insert(channel.next_sequence, update.clone());
                channel.next_sequence += 1;
                Some(update)
            }
        };
        Ok(ConfirmationOutcome { info, cross_shard })
    }

    fn credit(&mut self, recipient: Address, certificate: CertifiedTransferOrder) -> Result<(), FastPayError> {
        let account = self.accounts.entry(recipient).or_default();
        account.balance = account.balance.try_add(certificate.amount())?;
        account.received.push(certificate);
        Ok(())
    }

    pub fn handle_cross_shard_commit(&mut self, update: CrossShardUpdate) -> Result<CrossShardAck, FastPayError> {
        fp_ensure!(update.shard_id == self.shard_id, FastPayError::WrongShard);
        fp_ensure!(
            update.source_shard < self.number_of_shards && update.source_shard != self.shard_id,
            FastPayError::UnknownChannel {
                source_shard: update.source_shard,
            }
        );
        let own_key = self
            .committee
            .public_key(&self.name)
            .ok_or(FastPayError::InvalidSignature)?;
        update.check_signature(own_key)?;
        let recipient = match update.certificate.recipient() {
            Recipient::FastPay(recipient) => recipient,
            Recipient::Primary(_) => return Err(FastPayError::PrimaryRecipient),
        };
        fp_ensure!(self.in_shard(&recipient), FastPayError::WrongShard);

        let ack = update.ack();
        let channel = self.incoming.entry(update.source_shard).or_default();
        if !channel.contains(update.channel_sequence) {
            channel.insert(update.channel_sequence);
            self.credit(recipient, update.certificate)?;
        }
        Ok(ack)
    }

    pub fn handle_cross_shard_ack(&mut self, ack: CrossShardAck) {
        if ack.source_shard != self.shard_id {
            return;
        }
        if let Some(channel) = self.outgoing.get_mut(&ack.shard_id) {
            channel.unacknowledged.remove(&ack.channel_sequence);
        }
    }

    /// Cross-shard updates sent but not yet acknowledged, oldest first per channel.
    pub fn unacknowledged_updates(&self) -> Vec<CrossShardUpdate> {
        self.outgoing
            .values()
            .flat_map(|channel| channel.unacknowledged.values().cloned())
            .collect()
    }

    pub fn handle_primary_synchronization_order(
        &mut self,
        order: PrimarySynchronizationOrder,
    ) -> Result<AccountInfoResponse, FastPayError> {
        let recipient = order.recipient;
        fp_ensure!(self.in_shard(&recipient), FastPayError::WrongShard);
        fp_ensure!(
            order.transaction_index >= 1,
            FastPayError::malformed("funding indices start at 1")
        );
        if order.transaction_index <= self.last_transaction {
            return Ok(self
                .accounts
                .get(&recipient)
                .map(|a| a.info(recipient))
                .unwrap_or_else(|| AccountOffchainState::default().info(recipient)));
        }
        fp_ensure!(
            order.transaction_index == self.last_transaction + 1,
            FastPayError::SkippedFundingIndex {
                expected: self.last_transaction + 1,
            }
        );
        let account = self.accounts.entry(recipient).or_default();
        account.balance = account.balance.try_add(order.amount)?;
        account.synchronized.push(order);
        self.last_transaction += 1;
        Ok(account.info(recipient))
    }

    pub fn handle_account_info_request(
        &self,
        request: AccountInfoRequest,
    ) -> Result<AccountInfoResponse, FastPayError> {
        fp_ensure!(self.in_shard(&request.account), FastPayError::WrongShard);
        let account = self
            .accounts
            .get(&request.account)
            .ok_or(FastPayError::UnknownAccount)?;
        let mut response = account.info(request.account);
        if let Some(sequence) = request.certificate_sequence {
            let certificate = usize::try_from(sequence.value())
                .ok()
                .and_then(|k| account.confirmed.get(k))
                .ok_or(FastPayError::CertificateNotFound)?;
            response.requested_certificate = Some(certificate.clone());
        }
        if let Some(start) = request.received_page {
            response.received = usize::try_from(start)
                .ok()
                .and_then(|start| account.received.get(start..))
                .unwrap_or_default()
                .iter()
                .take(RECEIVED_PAGE_SIZE)
                .cloned()
                .collect();
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_types::Amount;
    use crate::testing::{key, make_committee, signed_order, TestCommittee};

    fn shard_state(keys: &TestCommittee, index: usize) -> AuthorityState {
        AuthorityState::new(
            keys.names[index].clone(),
            keys.key_pairs[index].clone(),
            keys.committee.clone(),
            0,
            1,
        )
        .unwrap()
    }

    fn fund(state: &mut AuthorityState, recipient: Address, amount: u64) {
        let index = state.last_transaction + 1;
        state
            .handle_primary_synchronization_order(PrimarySynchronizationOrder {
                recipient,
                amount: Amount::new(amount),
                transaction_index: index,
            })
            .unwrap();
    }

    fn confirmation(keys: &TestCommittee, order: &TransferOrder) -> ConfirmationOrder {
        ConfirmationOrder {
            certificate: keys.certify(order),
        }
    }

    #[test]
    fn one_shard_takes_everything() {
        for seed in 0..50u8 {
            assert_eq!(which_shard(&key(seed).address(), 1), 0);
        }
    }

    #[test]
    fn shard_assignment_is_close_to_uniform() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let address = Address::from_bytes(rng.gen());
            counts[which_shard(&address, 4) as usize] += 1;
        }
        for count in counts {
            assert!((2375..=2625).contains(&count), "{counts:?}");
        }
    }

    #[test]
    fn transfer_order_sets_pending() {
        let keys = make_committee(1);
        let mut state = shard_state(&keys, 0);
        let (sender, recipient) = (key(1), key(2));
        fund(&mut state, sender.address(), 10);
        let order = signed_order(&sender, Recipient::FastPay(recipient.address()), 4, 0);
        let vote = state.handle_transfer_order(order.clone()).unwrap();
        assert!(vote.check(&keys.committee).is_ok());
        let account = state.account(&sender.address()).unwrap();
        assert_eq!(account.pending.as_ref(), Some(&vote));
        assert_eq!(account.balance, Balance::new(10));

        // Retrying returns the same vote, byte for byte, without changes.
        let before = state.clone();
        assert_eq!(state.handle_transfer_order(order).unwrap(), vote);
        assert_eq!(state, before);

        let other = signed_order(&sender, Recipient::FastPay(recipient.address()), 3, 0);
        assert_eq!(
            state.handle_transfer_order(other),
            Err(FastPayError::PreviousTransferPending)
        );
    }

    #[test]
    fn transfer_order_rejections() {
        let keys = make_committee(1);
        let mut state = shard_state(&keys, 0);
        let (sender, recipient) = (key(1), Recipient::FastPay(key(2).address()));

        let order = signed_order(&sender, recipient, 4, 0);
        assert_eq!(
            state.handle_transfer_order(order.clone()),
            Err(FastPayError::UnknownSender)
        );
        fund(&mut state, sender.address(), 10);

        let mut forged = order.clone();
        forged.transfer.amount = Amount::new(5);
        assert_eq!(state.handle_transfer_order(forged), Err(FastPayError::InvalidSignature));
        assert_eq!(
            state.handle_transfer_order(signed_order(&sender, recipient, 11, 0)),
            Err(FastPayError::InsufficientBalance {
                balance: Balance::new(10),
                amount: Amount::new(11)
            })
        );
        assert_eq!(
            state.handle_transfer_order(signed_order(&sender, recipient, 1, 1)),
            Err(FastPayError::UnexpectedSequence {
                expected: SequenceNumber::new(0)
            })
        );
        assert!(state.account(&sender.address()).unwrap().pending.is_none());

        let mut sharded = AuthorityState::new(
            keys.names[0].clone(),
            keys.key_pairs[0].clone(),
            keys.committee.clone(),
            0,
            2,
        )
        .unwrap();
        let foreign = (0..=255u8)
            .map(key)
            .find(|k| which_shard(&k.address(), 2) == 1)
            .unwrap();
        assert_eq!(
            sharded.handle_transfer_order(signed_order(&foreign, recipient, 1, 0)),
            Err(FastPayError::WrongShard)
        );
    }

    #[test]
    fn confirmation_settles_once() {
        let keys = make_committee(1);
        let mut state = shard_state(&keys, 0);
        let (sender, recipient) = (key(1), key(2));
        fund(&mut state, sender.address(), 10);
        let order = signed_order(&sender, Recipient::FastPay(recipient.address()), 4, 0);
        state.handle_transfer_order(order.clone()).unwrap();

        let outcome = state.handle_confirmation_order(confirmation(&keys, &order)).unwrap();
        assert_eq!(outcome.cross_shard, None);
        let account = state.account(&sender.address()).unwrap();
        assert_eq!(account.balance, Balance::new(6));
        assert_eq!(account.next_sequence, SequenceNumber::new(1));
        assert!(account.pending.is_none());
        assert_eq!(state.account(&recipient.address()).unwrap().balance, Balance::new(4));

        let before = state.clone();
        let again = state.handle_confirmation_order(confirmation(&keys, &order)).unwrap();
        assert_eq!(again.info, outcome.info);
        assert_eq!(state, before);
    }

    #[test]
    fn confirmation_gaps_and_negative_balances() {
        let keys = make_committee(1);
        let mut state = shard_state(&keys, 0);
        let sender = key(1);
        let to = Recipient::FastPay(key(2).address());

        let late = signed_order(&sender, to, 1, 2);
        assert_eq!(
            state.handle_confirmation_order(confirmation(&keys, &late)),
            Err(FastPayError::MissingEarlierCertificates {
                expected: SequenceNumber::new(0)
            })
        );

        // This authority never saw the funding, but the certificate settles.
        let first = signed_order(&sender, to, 5, 0);
        state.handle_confirmation_order(confirmation(&keys, &first)).unwrap();
        assert_eq!(state.account(&sender.address()).unwrap().balance, Balance::new(-5));
    }

    #[test]
    fn invalid_certificate_is_rejected() {
        let keys = make_committee(1);
        let mut state = shard_state(&keys, 0);
        let order = signed_order(&key(1), Recipient::FastPay(key(2).address()), 1, 0);
        let mut cert = keys.certify(&order);
        cert.signatures.pop();
        let before = state.clone();
        assert!(matches!(
            state.handle_confirmation_order(ConfirmationOrder { certificate: cert }),
            Err(FastPayError::InvalidCertificate { .. })
        ));
        assert_eq!(state, before);
    }

    fn two_shards(keys: &TestCommittee) -> Vec<AuthorityState> {
        AuthorityState::new_shards(
            keys.names[0].clone(),
            keys.key_pairs[0].clone(),
            keys.committee.clone(),
            2,
        )
        .unwrap()
    }

    fn key_on_shard(shard: ShardId, skip: usize) -> KeyPair {
        (0..=255u8)
            .map(key)
            .filter(|k| which_shard(&k.address(), 2) == shard)
            .nth(skip)
            .unwrap()
    }

    #[test]
    fn cross_shard_credit_is_delivered_once() {
        let keys = make_committee(1);
        let mut shards = two_shards(&keys);
        let sender = key_on_shard(0, 0);
        let recipient = key_on_shard(1, 0);
        fund(&mut shards[0], sender.address(), 10);
        let order = signed_order(&sender, Recipient::FastPay(recipient.address()), 4, 0);

        let update = shards[0]
            .handle_confirmation_order(confirmation(&keys, &order))
            .unwrap()
            .cross_shard
            .unwrap();
        assert_eq!(update.shard_id, 1);
        assert_eq!(shards[0].unacknowledged_updates(), vec![update.clone()]);

        let ack = shards[1].handle_cross_shard_commit(update.clone()).unwrap();
        let after_first = shards[1].clone();
        assert_eq!(shards[1].handle_cross_shard_commit(update.clone()).unwrap(), ack);
        assert_eq!(shards[1], after_first);
        assert_eq!(
            shards[1].account(&recipient.address()).unwrap().balance,
            Balance::new(4)
        );

        shards[0].handle_cross_shard_ack(ack);
        assert!(shards[0].unacknowledged_updates().is_empty());

        let before = shards[0].clone();
        assert_eq!(
            shards[0].handle_cross_shard_commit(update),
            Err(FastPayError::WrongShard)
        );
        assert_eq!(shards[0], before);
    }

    #[test]
    fn cross_shard_rejects_foreign_signers_and_primary_recipients() {
        let keys = make_committee(1);
        let mut shards = two_shards(&keys);
        let sender = key_on_shard(0, 0);
        let order = signed_order(&sender, Recipient::FastPay(key_on_shard(1, 0).address()), 4, 0);
        let cert = keys.certify(&order);
        let forged = CrossShardUpdate::new(0, 1, 0, cert, &keys.key_pairs[1]);
        assert_eq!(
            shards[1].handle_cross_shard_commit(forged),
            Err(FastPayError::InvalidSignature)
        );

        let to_primary = signed_order(&sender, Recipient::Primary(key(9).address()), 4, 0);
        let update = CrossShardUpdate::new(0, 1, 0, keys.certify(&to_primary), &keys.key_pairs[0]);
        assert_eq!(
            shards[1].handle_cross_shard_commit(update),
            Err(FastPayError::PrimaryRecipient)
        );
    }

    #[test]
    fn synchronization_orders_apply_in_index_order() {
        let keys = make_committee(0);
        let mut state = shard_state(&keys, 0);
        let account = key(1).address();
        for (index, amount) in [(1, 5), (2, 7), (3, 1)] {
            state
                .handle_primary_synchronization_order(PrimarySynchronizationOrder {
                    recipient: account,
                    amount: Amount::new(amount),
                    transaction_index: index,
                })
                .unwrap();
        }
        assert_eq!(state.account(&account).unwrap().balance, Balance::new(13));
        assert_eq!(state.last_transaction, 3);

        let before = state.clone();
        let replay = PrimarySynchronizationOrder {
            recipient: account,
            amount: Amount::new(7),
            transaction_index: 2,
        };
        state.handle_primary_synchronization_order(replay).unwrap();
        assert_eq!(state, before);

        let skipped = PrimarySynchronizationOrder {
            recipient: account,
            amount: Amount::new(1),
            transaction_index: 5,
        };
        assert_eq!(
            state.handle_primary_synchronization_order(skipped),
            Err(FastPayError::SkippedFundingIndex { expected: 4 })
        );
    }

    #[test]
    fn account_info_requests() {
        let keys = make_committee(1);
        let mut state = shard_state(&keys, 0);
        let sender = key(1);
        assert_eq!(
            state.handle_account_info_request(AccountInfoRequest::new(sender.address())),
            Err(FastPayError::UnknownAccount)
        );
        fund(&mut state, sender.address(), 10);
        let to = Recipient::FastPay(key(2).address());
        let first = signed_order(&sender, to, 3, 0);
        let conf = confirmation(&keys, &first);
        state.handle_confirmation_order(conf.clone()).unwrap();
        let second = signed_order(&sender, to, 2, 1);
        let vote = state.handle_transfer_order(second).unwrap();

        let response = state
            .handle_account_info_request(AccountInfoRequest {
                account: sender.address(),
                certificate_sequence: Some(SequenceNumber::new(0)),
                received_page: None,
            })
            .unwrap();
        assert_eq!(response.requested_certificate, Some(conf.certificate.clone()));
        assert_eq!(response.pending, Some(vote));
        assert_eq!(response.next_sequence, SequenceNumber::new(1));

        assert_eq!(
            state.handle_account_info_request(AccountInfoRequest {
                account: sender.address(),
                certificate_sequence: Some(SequenceNumber::new(1)),
                received_page: None,
            }),
            Err(FastPayError::CertificateNotFound)
        );

        let page = state
            .handle_account_info_request(AccountInfoRequest {
                account: key(2).address(),
                certificate_sequence: None,
                received_page: Some(0),
            })
            .unwrap();
        assert_eq!(page.received, vec![conf.certificate]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Clone, Debug)]
        enum Step {
            Fund { account: u8, amount: u64 },
            Order { sender: u8, recipient: u8, amount: u64 },
            Confirm { sender: u8 },
            ReplayLast,
        }

        fn arb_step() -> impl Strategy<Value = Step> {
            prop_oneof![
                (0..4u8, 1..20u64).prop_map(|(account, amount)| Step::Fund { account, amount }),
                (0..4u8, 0..4u8, 1..15u64).prop_map(|(sender, recipient, amount)| Step::Order {
                    sender,
                    recipient,
                    amount
                }),
                (0..4u8).prop_map(|sender| Step::Confirm { sender }),
                Just(Step::ReplayLast),
            ]
        }

        /// Checks the per-account invariants of an honest authority.
        fn assert_invariants(state: &AuthorityState) {
            for (address, account) in &state.accounts {
                let sent: i128 = account.confirmed.iter().map(|c| c.amount().value() as i128).sum();
                let synced: i128 = account.synchronized.iter().map(|s| s.amount.value() as i128).sum();
                let received: i128 = account.received.iter().map(|c| c.amount().value() as i128).sum();
                assert!(account.balance.value() + sent <= synced + received, "{address}");
                for (k, cert) in account.confirmed.iter().enumerate() {
                    assert_eq!(cert.sequence().value(), k as u64);
                    assert_eq!(cert.sender(), *address);
                }
                assert_eq!(account.confirmed.len() as u64, account.next_sequence.value());
                if let Some(pending) = &account.pending {
                    assert!(account.balance.covers(pending.value.amount()));
                    assert_eq!(pending.value.sequence(), account.next_sequence);
                }
            }
        }

        proptest! {
            #[test]
            fn handlers_preserve_invariants(steps in proptest::collection::vec(arb_step(), 1..40)) {
                let keys = make_committee(0);
                let mut state = shard_state(&keys, 0);
                let users: Vec<KeyPair> = (1..=4).map(key).collect();
                let mut votes: BTreeMap<(Address, SequenceNumber), SignedTransferOrder> = BTreeMap::new();
                let mut last: Option<ConfirmationOrder> = None;

                for step in steps {
                    match step {
                        Step::Fund { account, amount } => fund(&mut state, users[account as usize].address(), amount),
                        Step::Order { sender, recipient, amount } => {
                            let sender = &users[sender as usize];
                            let next = state.account(&sender.address()).map(|a| a.next_sequence).unwrap_or_default();
                            let order = signed_order(sender, Recipient::FastPay(users[recipient as usize].address()), amount, next.value());
                            if let Ok(vote) = state.handle_transfer_order(order) {
                                // One vote per (sender, sequence), ever.
                                if let Some(previous) = votes.insert((vote.value.sender(), vote.value.sequence()), vote.clone()) {
                                    prop_assert_eq!(previous, vote);
                                }
                            }
                        }
                        Step::Confirm { sender } => {
                            let address = users[sender as usize].address();
                            let pending = state.account(&address).and_then(|a| a.pending.clone());
                            if let Some(vote) = pending {
                                let conf = confirmation(&keys, &vote.value);
                                state.handle_confirmation_order(conf.clone()).unwrap();
                                last = Some(conf);
                            }
                        }
                        Step::ReplayLast => {
                            if let Some(conf) = &last {
                                let before = state.clone();
                                state.handle_confirmation_order(conf.clone()).unwrap();
                                prop_assert_eq!(&state, &before);
                            }
                        }
                    }
                    assert_invariants(&state);
                }
            }
        }
    }
}
