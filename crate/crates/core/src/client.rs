// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Correct-user logic: voting rounds, certificates, catch-up and funding sync.
//!
//! The client talks to authorities through [`AuthorityClient`], so the same
//! code drives in-process authorities, the simulator and real UDP shards.

use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use futures::stream::{FuturesUnordered, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authority::which_shard;
use crate::base_types::{Address, Amount, AuthorityName, Balance, Committee, KeyPair, SequenceNumber};
use crate::error::FastPayError;
use crate::messages::{
    make_certificate, AccountInfoRequest, AccountInfoResponse, CertifiedTransferOrder, ConfirmationOrder,
    PrimarySynchronizationOrder, Recipient, SignedTransferOrder, Transfer, TransferOrder, UserData,
};
use crate::primary::PrimaryLedgerState;

/// How often a lagging authority is brought up to date before giving up on it.
const MAX_UPDATE_ROUNDS: usize = 2;
/// How many catch-up passes a single confirmation may trigger.
const MAX_CATCHUP_ROUNDS: usize = 2;

/// Request/reply access to one authority (all of its shards).
///
/// Transport failures surface as [`FastPayError::Unreachable`]; the client
/// retries those and treats every other error as the authority's answer.
pub trait AuthorityClient {
    fn handle_transfer_order(
        &self,
        order: TransferOrder,
    ) -> impl Future<Output = Result<SignedTransferOrder, FastPayError>>;

    fn handle_confirmation_order(
        &self,
        order: ConfirmationOrder,
    ) -> impl Future<Output = Result<AccountInfoResponse, FastPayError>>;

    fn handle_account_info_request(
        &self,
        request: AccountInfoRequest,
    ) -> impl Future<Output = Result<AccountInfoResponse, FastPayError>>;

    fn handle_primary_synchronization_order(
        &self,
        order: PrimarySynchronizationOrder,
    ) -> impl Future<Output = Result<AccountInfoResponse, FastPayError>>;

    /// Waits before a retry. Simulated transports wait in virtual time.
    fn sleep(&self, duration: Duration) -> impl Future<Output = ()>;
}

/// Exponential backoff for requests that got no answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Attempts per request, the first one included.
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            initial_backoff: Duration::from_millis(10),
            max_backoff: Duration::from_secs(1),
            max_attempts: 8,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("fewer than a quorum of authorities answered: {errors:?}")]
    QuorumUnreachable { errors: Vec<(AuthorityName, FastPayError)> },
    #[error("an earlier transfer order is still unsettled")]
    PendingOrder,
    #[error("spendable balance {spendable} does not cover {amount}")]
    InsufficientSpendable { spendable: Balance, amount: Amount },
    #[error("certificate is not addressed to this account")]
    WrongRecipient,
    #[error(transparent)]
    Protocol(#[from] FastPayError),
    #[error("cannot write the client checkpoint: {0}")]
    Checkpoint(String),
}

/// The part of a client that survives restarts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalletState {
    pub key_pair: KeyPair,
    pub next_sequence: SequenceNumber,
    pub pending_order: Option<TransferOrder>,
    pub sent: Vec<CertifiedTransferOrder>,
    pub received: Vec<CertifiedTransferOrder>,
}

impl WalletState {
    pub fn new(key_pair: KeyPair) -> Self {
        WalletState {
            key_pair,
            next_sequence: SequenceNumber::default(),
            pending_order: None,
            sent: Vec::new(),
            received: Vec::new(),
        }
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?).map_err(std::io::Error::other)
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        let bytes = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)
    }
}

pub struct ClientState<A> {
    address: Address,
    key_pair: KeyPair,
    committee: Committee,
    number_of_shards: u32,
    authority_clients: BTreeMap<AuthorityName, A>,
    next_sequence: SequenceNumber,
    pending_order: Option<TransferOrder>,
    sent: BTreeMap<SequenceNumber, CertifiedTransferOrder>,
    received: BTreeMap<(Address, SequenceNumber), CertifiedTransferOrder>,
    /// Other accounts' certificates learned during catch-up.
    known_certificates: Mutex<BTreeMap<(Address, SequenceNumber), CertifiedTransferOrder>>,
    /// Synchronization orders for this account's shard, in index order.
    funding_stream: Vec<PrimarySynchronizationOrder>,
    known_funding: Amount,
    retry: RetryPolicy,
    wait_for_all: bool,
    checkpoint_path: Option<PathBuf>,
}

impl<A: AuthorityClient> ClientState<A> {
    pub fn new(
        key_pair: KeyPair,
        committee: Committee,
        number_of_shards: u32,
        authority_clients: BTreeMap<AuthorityName, A>,
    ) -> Self {
        Self::from_wallet(
            WalletState::new(key_pair),
            committee,
            number_of_shards,
            authority_clients,
        )
    }

    pub fn from_wallet(
        wallet: WalletState,
        committee: Committee,
        number_of_shards: u32,
        authority_clients: BTreeMap<AuthorityName, A>,
    ) -> Self {
        ClientState {
            address: wallet.key_pair.address(),
            key_pair: wallet.key_pair,
            committee,
            number_of_shards,
            authority_clients,
            next_sequence: wallet.next_sequence,
            pending_order: wallet.pending_order,
            sent: wallet.sent.into_iter().map(|c| (c.sequence(), c)).collect(),
            received: wallet
                .received
                .into_iter()
                .map(|c| ((c.sender(), c.sequence()), c))
                .collect(),
            known_certificates: Mutex::new(BTreeMap::new()),
            funding_stream: Vec::new(),
            known_funding: Amount::ZERO,
            retry: RetryPolicy::default(),
            wait_for_all: false,
            checkpoint_path: None,
        }
    }

    pub fn wallet(&self) -> WalletState {
        WalletState {
            key_pair: self.key_pair.clone(),
            next_sequence: self.next_sequence,
            pending_order: self.pending_order.clone(),
            sent: self.sent.values().cloned().collect(),
            received: self.received.values().cloned().collect(),
        }
    }

    pub fn set_retry_policy(&mut self, retry: RetryPolicy) {
        self.retry = retry;
    }

    /// Wait for every authority instead of stopping at a quorum.
    pub fn set_wait_for_all(&mut self, wait_for_all: bool) {
        self.wait_for_all = wait_for_all;
    }

    /// Persist the wallet to `path` before every broadcast.
    pub fn set_checkpoint_path(&mut self, path: Option<PathBuf>) {
        self.checkpoint_path = path;
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn authority_clients(&self) -> &BTreeMap<AuthorityName, A> {
        &self.authority_clients
    }

    pub fn next_sequence(&self) -> SequenceNumber {
        self.next_sequence
    }

    pub fn pending_order(&self) -> Option<&TransferOrder> {
        self.pending_order.as_ref()
    }

    pub fn sent_certificates(&self) -> impl Iterator<Item = &CertifiedTransferOrder> {
        self.sent.values()
    }

    pub fn received_certificates(&self) -> impl Iterator<Item = &CertifiedTransferOrder> {
        self.received.values()
    }

    pub fn known_funding(&self) -> Amount {
        self.known_funding
    }

    /// Learns this account's funding from the Primary.
    pub fn observe_primary(&mut self, ledger: &PrimaryLedgerState) {
        self.known_funding = ledger.funding_of(&self.address);
        self.funding_stream = ledger.synchronization_orders(which_shard(&self.address, self.number_of_shards));
    }

    /// What this client can safely spend: funding and received certificates
    /// minus everything sent or still pending.
    pub fn spendable_balance(&self) -> Balance {
        let mut total = i128::from(self.known_funding.value());
        total += self
            .received
            .values()
            .map(|c| i128::from(c.amount().value()))
            .sum::<i128>();
        total -= self
            .sent
            .range(..self.next_sequence)
            .map(|(_, c)| i128::from(c.amount().value()))
            .sum::<i128>();
        if let Some(order) = &self.pending_order {
            total -= i128::from(order.amount().value());
        }
        Balance::new(total)
    }

    fn checkpoint(&self) -> Result<(), ClientError> {
        if let Some(path) = &self.checkpoint_path {
            self.wallet()
                .save(path)
                .map_err(|e| ClientError::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }

    /// Signs a transfer at the next sequence number, certifies it and
    /// confirms it with a quorum.
    pub async fn transfer(
        &mut self,
        recipient: Recipient,
        amount: Amount,
        user_data: Option<UserData>,
    ) -> Result<CertifiedTransferOrder, ClientError> {
        if self.pending_order.is_some() {
            return Err(ClientError::PendingOrder);
        }
        let spendable = self.spendable_balance();
        if !spendable.covers(amount) {
            return Err(ClientError::InsufficientSpendable { spendable, amount });
        }
        let transfer = Transfer {
            sender: self.address,
            sender_key: self.key_pair.public(),
            recipient,
            amount,
            sequence: self.next_sequence,
            user_data,
        };
        let order = TransferOrder::new(transfer, &self.key_pair)?;
        self.pending_order = Some(order);
        self.checkpoint()?;
        self.execute_pending().await
    }

    /// Drives a signed but unsettled order to completion, e.g. after a restart.
    pub async fn resume_pending(&mut self) -> Result<Option<CertifiedTransferOrder>, ClientError> {
        if self.pending_order.is_none() {
            return Ok(None);
        }
        self.execute_pending().await.map(Some)
    }

    async fn execute_pending(&mut self) -> Result<CertifiedTransferOrder, ClientError> {
        let order = self.pending_order.clone().expect("a pending order");
        let certificate = match self.collect_votes(&order).await {
            Ok(certificate) => certificate,
            // A previous run may have certified the order already.
            Err(error) => match self.fetch_certificate(self.address, order.sequence()).await {
                Ok(certificate) if certificate.value == order => certificate,
                _ => return Err(error),
            },
        };
        self.next_sequence = order.sequence().increment()?;
        self.sent.insert(order.sequence(), certificate.clone());
        self.pending_order = None;
        self.checkpoint()?;
        self.confirm(&certificate).await?;
        Ok(certificate)
    }

    async fn collect_votes(&self, order: &TransferOrder) -> Result<CertifiedTransferOrder, ClientError> {
        let votes = self
            .communicate(
                |name, client| self.request_vote(name, client, order),
                self.committee.quorum_threshold(),
                self.wait_for_all,
            )
            .await?;
        let votes: Vec<SignedTransferOrder> = votes.into_iter().map(|(_, v)| v).collect();
        Ok(make_certificate(order, &votes, &self.committee)?)
    }

    async fn request_vote(
        &self,
        name: &AuthorityName,
        client: &A,
        order: &TransferOrder,
    ) -> Result<SignedTransferOrder, FastPayError> {
        let mut rounds = 0;
        loop {
            let result = self
                .retrying(client, || client.handle_transfer_order(order.clone()))
                .await;
            match result {
                Ok(vote) => {
                    fp_ensure!(
                        vote.authority == *name && vote.value == *order,
                        FastPayError::InvalidVote {
                            authority: name.clone(),
                        }
                    );
                    vote.check(&self.committee)?;
                    return Ok(vote);
                }
                Err(error) if rounds < MAX_UPDATE_ROUNDS && Self::is_lagging(&error, order) => {
                    rounds += 1;
                    self.update_authority(client).await?;
                }
                Err(error) => return Err(error),
            }
        }
    }

    /// Errors an honest authority returns when it has not yet seen state
    /// this client already knows about.
    fn is_lagging(error: &FastPayError, order: &TransferOrder) -> bool {
        match error {
            FastPayError::InsufficientBalance { .. }
            | FastPayError::UnknownSender
            | FastPayError::PreviousTransferPending => true,
            FastPayError::UnexpectedSequence { expected } => *expected < order.sequence(),
            _ => false,
        }
    }

    /// Confirms a certificate with a quorum of authorities, catching each up
    /// on the sender's earlier certificates if needed.
    pub async fn confirm(&self, certificate: &CertifiedTransferOrder) -> Result<(), ClientError> {
        self.communicate(
            |_, client| self.confirm_with_catchup(client, certificate),
            self.committee.quorum_threshold(),
            self.wait_for_all,
        )
        .await?;
        Ok(())
    }

    /// Settles a certificate received from its sender.
    pub async fn receive_certificate(&mut self, certificate: CertifiedTransferOrder) -> Result<(), ClientError> {
        certificate.check(&self.committee)?;
        if certificate.recipient() != Recipient::FastPay(self.address) {
            return Err(ClientError::WrongRecipient);
        }
        self.confirm(&certificate).await?;
        self.received
            .insert((certificate.sender(), certificate.sequence()), certificate);
        self.checkpoint()
    }

    /// Brings every authority up to date with this account: own
    /// certificates, Primary funding, then received certificates. Every
    /// authority gets the chance to answer; a quorum of them must succeed.
    pub async fn sync_account(&self) -> Result<(), ClientError> {
        self.communicate(
            |_, client| self.update_authority(client),
            self.committee.quorum_threshold(),
            true,
        )
        .await?;
        Ok(())
    }

    /// Like [`Self::sync_account`] but succeeds only if every authority is updated.
    pub async fn sync_account_everywhere(&self) -> Result<(), ClientError> {
        self.communicate(|_, client| self.update_authority(client), self.committee.size(), true)
            .await?;
        Ok(())
    }

    /// Account views reported by the authorities that answered.
    pub async fn query_authorities(
        &self,
        account: Address,
    ) -> Vec<(AuthorityName, Result<AccountInfoResponse, FastPayError>)> {
        let mut futures: FuturesUnordered<_> = self
            .authority_clients
            .iter()
            .map(|(name, client)| async move {
                let result = self
                    .retrying(client, || {
                        client.handle_account_info_request(AccountInfoRequest::new(account))
                    })
                    .await;
                (name.clone(), result)
            })
            .collect();
        let mut out = Vec::new();
        while let Some(item) = futures.next().await {
            out.push(item);
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    async fn update_authority(&self, client: &A) -> Result<(), FastPayError> {
        let known = match self
            .retrying(client, || {
                client.handle_account_info_request(AccountInfoRequest::new(self.address))
            })
            .await
        {
            Ok(info) => info.next_sequence,
            Err(FastPayError::UnknownAccount) => SequenceNumber::default(),
            Err(error) => return Err(error),
        };
        let mut sequence = known;
        while sequence < self.next_sequence {
            let certificate = self.fetch_certificate(self.address, sequence).await?;
            self.confirm_with_catchup(client, &certificate).await?;
            sequence = sequence.increment()?;
        }
        self.push_funding(client).await?;
        for certificate in self.received.values() {
            self.confirm_with_catchup(client, certificate).await?;
        }
        Ok(())
    }

    async fn push_funding(&self, client: &A) -> Result<(), FastPayError> {
        let own = self
            .funding_stream
            .iter()
            .filter(|order| order.recipient == self.address);
        for order in own {
            let result = self
                .retrying(client, || client.handle_primary_synchronization_order(order.clone()))
                .await;
            match result {
                Ok(_) => {}
                Err(FastPayError::SkippedFundingIndex { expected }) => {
                    // The shard missed earlier funding of other accounts.
                    let backlog = self
                        .funding_stream
                        .iter()
                        .filter(|o| o.transaction_index >= expected && o.transaction_index <= order.transaction_index);
                    for earlier in backlog {
                        self.retrying(client, || client.handle_primary_synchronization_order(earlier.clone()))
                            .await?;
                    }
                }
                Err(error) => return Err(error),
            }
        }
        Ok(())
    }

    async fn confirm_with_catchup(
        &self,
        client: &A,
        certificate: &CertifiedTransferOrder,
    ) -> Result<AccountInfoResponse, FastPayError> {
        let confirm = |certificate: &CertifiedTransferOrder| {
            let order = ConfirmationOrder {
                certificate: certificate.clone(),
            };
            self.retrying(client, move || client.handle_confirmation_order(order.clone()))
        };
        let mut rounds = 0;
        loop {
            let expected = match confirm(certificate).await {
                Err(FastPayError::MissingEarlierCertificates { expected })
                    if rounds < MAX_CATCHUP_ROUNDS && expected < certificate.sequence() =>
                {
                    expected
                }
                result => return result,
            };
            rounds += 1;
            // Download C_{n-1} down to C_k, then replay them oldest first.
            let sender = certificate.sender();
            let mut missing = Vec::new();
            let mut sequence = certificate.sequence();
            while sequence > expected {
                sequence = SequenceNumber::new(sequence.value() - 1);
                missing.push(self.fetch_certificate(sender, sequence).await?);
            }
            for earlier in missing.iter().rev() {
                match confirm(earlier).await {
                    Ok(_) => {}
                    // The authority's answer was stale; ask again.
                    Err(FastPayError::MissingEarlierCertificates { .. }) => break,
                    Err(error) => return Err(error),
                }
            }
        }
    }

    /// Finds the certificate `(sender, sequence)` locally or from the first
    /// authority that serves a valid copy.
    pub async fn fetch_certificate(
        &self,
        sender: Address,
        sequence: SequenceNumber,
    ) -> Result<CertifiedTransferOrder, FastPayError> {
        if sender == self.address {
            if let Some(certificate) = self.sent.get(&sequence) {
                return Ok(certificate.clone());
            }
        }
        if let Some(certificate) = self.received.get(&(sender, sequence)) {
            return Ok(certificate.clone());
        }
        let cached = self
            .known_certificates
            .lock()
            .expect("certificate cache")
            .get(&(sender, sequence))
            .cloned();
        if let Some(certificate) = cached {
            return Ok(certificate);
        }

        let request = AccountInfoRequest {
            account: sender,
            certificate_sequence: Some(sequence),
            received_page: None,
        };
        let found = self
            .communicate(
                |_, client| self.query_certificate(client, &request, sender, sequence),
                1,
                false,
            )
            .await
            .map_err(|_| FastPayError::CertificateNotFound)?;
        let certificate = found.into_iter().next().expect("one answer").1;
        self.known_certificates
            .lock()
            .expect("certificate cache")
            .insert((sender, sequence), certificate.clone());
        Ok(certificate)
    }

    async fn query_certificate(
        &self,
        client: &A,
        request: &AccountInfoRequest,
        sender: Address,
        sequence: SequenceNumber,
    ) -> Result<CertifiedTransferOrder, FastPayError> {
        let info = self
            .retrying(client, || client.handle_account_info_request(request.clone()))
            .await?;
        let certificate = info.requested_certificate.ok_or(FastPayError::CertificateNotFound)?;
        fp_ensure!(
            certificate.sender() == sender && certificate.sequence() == sequence,
            FastPayError::CertificateNotFound
        );
        certificate.check(&self.committee)?;
        Ok(certificate)
    }

    async fn retrying<T, F, Fut>(&self, client: &A, mut call: F) -> Result<T, FastPayError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, FastPayError>>,
    {
        let mut attempt = 0;
        loop {
            match call().await {
                Err(FastPayError::Unreachable { .. }) if attempt + 1 < self.retry.max_attempts => {
                    client.sleep(self.retry.backoff(attempt)).await;
                    attempt += 1;
                }
                result => return result,
            }
        }
    }

    /// Runs `call` against every authority concurrently and returns once
    /// `goal` of them succeeded, or as soon as that became impossible.
    async fn communicate<'a, T, F, Fut>(
        &'a self,
        call: F,
        goal: usize,
        wait_for_all: bool,
    ) -> Result<Vec<(AuthorityName, T)>, ClientError>
    where
        F: Fn(&'a AuthorityName, &'a A) -> Fut,
        Fut: Future<Output = Result<T, FastPayError>> + 'a,
    {
        let total = self.authority_clients.len();
        let mut futures: FuturesUnordered<_> = self
            .authority_clients
            .iter()
            .map(|(name, client)| {
                let future = call(name, client);
                async move { (name, future.await) }
            })
            .collect();
        let mut successes = Vec::new();
        let mut errors = Vec::new();
        while let Some((name, result)) = futures.next().await {
            match result {
                Ok(value) => successes.push((name.clone(), value)),
                Err(error) => errors.push((name.clone(), error)),
            }
            if successes.len() >= goal && !wait_for_all {
                break;
            }
            if errors.len() > total.saturating_sub(goal) {
                break;
            }
        }
        if successes.len() >= goal {
            Ok(successes)
        } else {
            Err(ClientError::QuorumUnreachable { errors })
        }
    }
}
