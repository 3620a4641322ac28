// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! An in-process authority with all of its shards, reachable through
//! [`AuthorityClient`]. Cross-shard updates are delivered synchronously.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use crate::authority::{which_shard, AuthorityState};
use crate::base_types::{Address, AuthorityName, Balance, Committee, KeyPair};
use crate::client::AuthorityClient;
use crate::error::FastPayError;
use crate::messages::{
    AccountInfoRequest, AccountInfoResponse, ConfirmationOrder, PrimarySynchronizationOrder, SignedTransferOrder,
    TransferOrder,
};

struct LocalAuthority {
    shards: Vec<AuthorityState>,
    reachable: bool,
}

#[derive(Clone)]
pub struct LocalAuthorityClient(Arc<Mutex<LocalAuthority>>);

impl LocalAuthorityClient {
    pub fn new(
        name: AuthorityName,
        key_pair: KeyPair,
        committee: Committee,
        number_of_shards: u32,
    ) -> Result<Self, FastPayError> {
        let shards = AuthorityState::new_shards(name, key_pair, committee, number_of_shards)?;
        Ok(LocalAuthorityClient(Arc::new(Mutex::new(LocalAuthority {
            shards,
            reachable: true,
        }))))
    }

    fn lock(&self) -> MutexGuard<'_, LocalAuthority> {
        self.0.lock().expect("authority lock")
    }

    /// When unreachable, every request fails as if the network dropped it.
    pub fn set_reachable(&self, reachable: bool) {
        self.lock().reachable = reachable;
    }

    pub fn snapshot(&self) -> Vec<AuthorityState> {
        self.lock().shards.clone()
    }

    pub fn account_balance(&self, account: &Address) -> Option<Balance> {
        let inner = self.lock();
        let shard = which_shard(account, inner.shards.len() as u32);
        inner.shards[shard as usize].account(account).map(|a| a.balance)
    }

    pub fn sync(&self, order: PrimarySynchronizationOrder) -> Result<AccountInfoResponse, FastPayError> {
        self.with_shard(&order.recipient.clone(), |shard| {
            shard.handle_primary_synchronization_order(order)
        })
    }

    fn with_shard<T>(
        &self,
        account: &Address,
        f: impl FnOnce(&mut AuthorityState) -> Result<T, FastPayError>,
    ) -> Result<T, FastPayError> {
        let mut inner = self.lock();
        if !inner.reachable {
            return Err(FastPayError::Unreachable {
                reason: "authority is down".into(),
            });
        }
        let shard = which_shard(account, inner.shards.len() as u32);
        f(&mut inner.shards[shard as usize])
    }

    fn confirm(&self, order: ConfirmationOrder) -> Result<AccountInfoResponse, FastPayError> {
        let mut inner = self.lock();
        if !inner.reachable {
            return Err(FastPayError::Unreachable {
                reason: "authority is down".into(),
            });
        }
        let shard = which_shard(&order.certificate.sender(), inner.shards.len() as u32);
        let outcome = inner.shards[shard as usize].handle_confirmation_order(order)?;
        if let Some(update) = outcome.cross_shard {
            let destination = update.shard_id as usize;
            let ack = inner.shards[destination].handle_cross_shard_commit(update)?;
            inner.shards[shard as usize].handle_cross_shard_ack(ack);
        }
        Ok(outcome.info)
    }
}

impl AuthorityClient for LocalAuthorityClient {
    async fn handle_transfer_order(&self, order: TransferOrder) -> Result<SignedTransferOrder, FastPayError> {
        self.with_shard(&order.sender(), |shard| shard.handle_transfer_order(order))
    }

    async fn handle_confirmation_order(&self, order: ConfirmationOrder) -> Result<AccountInfoResponse, FastPayError> {
        self.confirm(order)
    }

    async fn handle_account_info_request(
        &self,
        request: AccountInfoRequest,
    ) -> Result<AccountInfoResponse, FastPayError> {
        self.with_shard(&request.account.clone(), |shard| {
            shard.handle_account_info_request(request)
        })
    }

    async fn handle_primary_synchronization_order(
        &self,
        order: PrimarySynchronizationOrder,
    ) -> Result<AccountInfoResponse, FastPayError> {
        self.sync(order)
    }

    async fn sleep(&self, _duration: Duration) {}
}
