// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! In-memory emulation of the Primary chain's FastPay smart contract.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::authority::which_shard;
use crate::base_types::{Address, Amount, Committee, SequenceNumber, ShardId};
use crate::error::FastPayError;
use crate::messages::{CertifiedTransferOrder, PrimarySynchronizationOrder, Recipient, RedeemTransaction};

/// A deposit into the contract. `transaction_index` numbers all funding
/// globally; `shard_index` numbers the funding of `shard_id` alone and is
/// the index carried by the synchronization order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundingTransaction {
    pub recipient: Address,
    pub amount: Amount,
    pub transaction_index: u64,
    pub shard_id: ShardId,
    pub shard_index: u64,
}

impl FundingTransaction {
    pub fn synchronization_order(&self) -> PrimarySynchronizationOrder {
        PrimarySynchronizationOrder {
            recipient: self.recipient,
            amount: self.amount,
            transaction_index: self.shard_index,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimaryLedgerState {
    pub committee: Committee,
    /// Shard count shared by every authority of the committee.
    pub number_of_shards: u32,
    pub total_balance: Amount,
    pub last_transaction: u64,
    pub shard_last_transaction: BTreeMap<ShardId, u64>,
    pub fundings: Vec<FundingTransaction>,
    pub redeemed: BTreeMap<Address, BTreeSet<SequenceNumber>>,
    pub redemptions: Vec<CertifiedTransferOrder>,
    pub primary_accounts: BTreeMap<Address, Amount>,
}

impl PrimaryLedgerState {
    pub fn new(committee: Committee, number_of_shards: u32) -> Self {
        assert!(number_of_shards >= 1, "an authority has at least one shard");
        PrimaryLedgerState {
            committee,
            number_of_shards,
            total_balance: Amount::ZERO,
            last_transaction: 0,
            shard_last_transaction: BTreeMap::new(),
            fundings: Vec::new(),
            redeemed: BTreeMap::new(),
            redemptions: Vec::new(),
            primary_accounts: BTreeMap::new(),
        }
    }

    /// Credits a Primary account from outside the system.
    pub fn deposit(&mut self, account: Address, amount: Amount) -> Result<(), FastPayError> {
        let balance = self.primary_accounts.entry(account).or_default();
        *balance = balance.try_add(amount)?;
        Ok(())
    }

    pub fn primary_balance(&self, account: &Address) -> Amount {
        self.primary_accounts.get(account).copied().unwrap_or_default()
    }

    /// Moves `amount` from the payer's Primary account into the contract,
    /// crediting the FastPay account `recipient`.
    pub fn fund_from(
        &mut self,
        payer: Address,
        recipient: Address,
        amount: Amount,
    ) -> Result<(FundingTransaction, PrimarySynchronizationOrder), FastPayError> {
        fp_ensure!(!amount.is_zero(), FastPayError::ZeroAmount);
        let remaining = self
            .primary_balance(&payer)
            .try_sub(amount)
            .map_err(|_| FastPayError::InsufficientPrimaryFunds)?;
        let funded = self.fund(recipient, amount)?;
        self.primary_accounts.insert(payer, remaining);
        Ok(funded)
    }

    /// Records a funding transaction paid from outside the emulated accounts.
    pub fn fund(
        &mut self,
        recipient: Address,
        amount: Amount,
    ) -> Result<(FundingTransaction, PrimarySynchronizationOrder), FastPayError> {
        fp_ensure!(!amount.is_zero(), FastPayError::ZeroAmount);
        let total_balance = self.total_balance.try_add(amount)?;
        let shard_id = which_shard(&recipient, self.number_of_shards);
        let shard_index = self.shard_last_transaction.get(&shard_id).copied().unwrap_or(0) + 1;
        let transaction = FundingTransaction {
            recipient,
            amount,
            transaction_index: self.last_transaction + 1,
            shard_id,
            shard_index,
        };
        self.total_balance = total_balance;
        self.last_transaction += 1;
        self.shard_last_transaction.insert(shard_id, shard_index);
        self.fundings.push(transaction.clone());
        let order = transaction.synchronization_order();
        Ok((transaction, order))
    }

    /// Pays out a certificate whose recipient is a Primary address, once.
    pub fn redeem(&mut self, transaction: RedeemTransaction) -> Result<Amount, FastPayError> {
        let certificate = transaction.certificate;
        certificate.check(&self.committee)?;
        let recipient = match certificate.recipient() {
            Recipient::Primary(address) => address,
            Recipient::FastPay(_) => return Err(FastPayError::NotPrimaryRecipient),
        };
        let sender = certificate.sender();
        let sequence = certificate.sequence();
        fp_ensure!(
            !self.redeemed.get(&sender).is_some_and(|log| log.contains(&sequence)),
            FastPayError::AlreadyRedeemed
        );
        let amount = certificate.amount();
        let total_balance = self
            .total_balance
            .try_sub(amount)
            .map_err(|_| FastPayError::ContractInsolvent)?;
        let payout = self.primary_balance(&recipient).try_add(amount)?;

        self.total_balance = total_balance;
        self.primary_accounts.insert(recipient, payout);
        self.redeemed.entry(sender).or_default().insert(sequence);
        self.redemptions.push(certificate);
        Ok(amount)
    }

    /// Total funding ever sent to `account`.
    pub fn funding_of(&self, account: &Address) -> Amount {
        self.fundings
            .iter()
            .filter(|f| f.recipient == *account)
            .fold(Amount::ZERO, |sum, f| {
                sum.try_add(f.amount).expect("funding total fits in u64")
            })
    }

    pub fn total_funding(&self) -> u128 {
        self.fundings.iter().map(|f| u128::from(f.amount.value())).sum()
    }

    pub fn total_redeemed(&self) -> u128 {
        self.redemptions.iter().map(|c| u128::from(c.amount().value())).sum()
    }

    /// The synchronization orders for one shard, in index order.
    pub fn synchronization_orders(&self, shard_id: ShardId) -> Vec<PrimarySynchronizationOrder> {
        self.fundings
            .iter()
            .filter(|f| f.shard_id == shard_id)
            .map(FundingTransaction::synchronization_order)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }

    pub fn save(&self, path: &Path) -> Result<(), std::io::Error> {
        let bytes = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{key, make_committee, signed_order};

    #[test]
    fn funding_accumulates_with_gap_free_indices() {
        let keys = make_committee(1);
        let mut ledger = PrimaryLedgerState::new(keys.committee.clone(), 1);
        let a = key(1).address();
        let (first, sync) = ledger.fund(a, Amount::new(5)).unwrap();
        assert_eq!(first.transaction_index, 1);
        assert_eq!(sync.transaction_index, 1);
        ledger.fund(a, Amount::new(7)).unwrap();
        assert_eq!(ledger.funding_of(&a), Amount::new(12));
        assert_eq!(ledger.total_balance, Amount::new(12));
        assert_eq!(ledger.fund(a, Amount::ZERO), Err(FastPayError::ZeroAmount));
    }

    #[test]
    fn shard_streams_are_independent() {
        let keys = make_committee(0);
        let mut ledger = PrimaryLedgerState::new(keys.committee.clone(), 4);
        for seed in 0..40u8 {
            ledger.fund(key(seed).address(), Amount::new(1)).unwrap();
        }
        let mut seen = 0;
        for shard in 0..4 {
            let stream = ledger.synchronization_orders(shard);
            for (i, order) in stream.iter().enumerate() {
                assert_eq!(order.transaction_index, i as u64 + 1);
                assert_eq!(which_shard(&order.recipient, 4), shard);
            }
            seen += stream.len();
        }
        assert_eq!(seen, 40);
        let globals: Vec<_> = ledger.fundings.iter().map(|f| f.transaction_index).collect();
        assert_eq!(globals, (1..=40).collect::<Vec<_>>());
    }

    #[test]
    fn payer_needs_primary_funds() {
        let keys = make_committee(0);
        let mut ledger = PrimaryLedgerState::new(keys.committee.clone(), 1);
        let (payer, a) = (key(1).address(), key(2).address());
        ledger.deposit(payer, Amount::new(3)).unwrap();
        assert_eq!(
            ledger.fund_from(payer, a, Amount::new(4)),
            Err(FastPayError::InsufficientPrimaryFunds)
        );
        ledger.fund_from(payer, a, Amount::new(3)).unwrap();
        assert_eq!(ledger.primary_balance(&payer), Amount::ZERO);
    }

    #[test]
    fn redeem_pays_once() {
        let keys = make_committee(1);
        let mut ledger = PrimaryLedgerState::new(keys.committee.clone(), 1);
        let sender = key(1);
        let target = key(9).address();
        ledger.fund(sender.address(), Amount::new(10)).unwrap();

        let order = signed_order(&sender, Recipient::Primary(target), 4, 0);
        let certificate = keys.certify(&order);
        let redeem = RedeemTransaction { certificate };
        assert_eq!(ledger.redeem(redeem.clone()), Ok(Amount::new(4)));
        assert_eq!(ledger.total_balance, Amount::new(6));
        assert_eq!(ledger.primary_balance(&target), Amount::new(4));

        let before = ledger.clone();
        assert_eq!(ledger.redeem(redeem), Err(FastPayError::AlreadyRedeemed));
        assert_eq!(ledger, before);

        let to_fastpay = signed_order(&sender, Recipient::FastPay(target), 1, 1);
        assert_eq!(
            ledger.redeem(RedeemTransaction {
                certificate: keys.certify(&to_fastpay)
            }),
            Err(FastPayError::NotPrimaryRecipient)
        );

        let mut weak = keys.certify(&signed_order(&sender, Recipient::Primary(target), 1, 2));
        weak.signatures.truncate(1);
        assert!(matches!(
            ledger.redeem(RedeemTransaction { certificate: weak }),
            Err(FastPayError::InvalidCertificate { .. })
        ));
    }

    #[test]
    fn ledger_round_trips_through_json() {
        let keys = make_committee(1);
        let mut ledger = PrimaryLedgerState::new(keys.committee.clone(), 2);
        ledger.fund(key(1).address(), Amount::new(10)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("primary.json");
        ledger.save(&path).unwrap();
        assert_eq!(PrimaryLedgerState::load(&path).unwrap(), ledger);
    }
}
