// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic in-process execution of client scripts against a committee
//! over a seeded virtual network.
//!
//! A run alternates between polling client tasks and delivering the next
//! network event until both are exhausted. At each such quiescent point the
//! honest authorities are audited. The same seed always yields the same
//! [`ExecutionTrace`].

mod executor;
pub mod reference;
pub mod script;
pub mod world;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{audit_system, AuditReport, Violation};
use crate::authority::{which_shard, AuthorityState};
use crate::base_types::{Amount, AuthorityName, Committee, KeyPair};
use crate::client::{ClientError, ClientState, RetryPolicy};
use crate::codec::Encode;
use crate::error::FastPayError;
use crate::messages::{
    make_certificate, CertifiedTransferOrder, Recipient, RedeemTransaction, Transfer, TransferOrder,
};
use crate::primary::PrimaryLedgerState;

pub use executor::{Executor, JoinHandle};
pub use reference::{reference_execution, Outcome, ReferenceOutcome};
pub use script::{random_script, Action, Script, ScriptError, Step, UserId};
pub use world::{
    Behavior, Fate, MessageRecord, Micros, Partition, Request, Response, Schedule, SimAuthorityClient, World, WorldRef,
    BEHAVIORS,
};

/// Committee shape for a simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeShape {
    pub faults_tolerated: usize,
    pub shards: u32,
}

impl CommitteeShape {
    pub fn size(&self) -> usize {
        3 * self.faults_tolerated + 1
    }
}

/// Key of simulated authority `index`.
pub fn authority_key(index: usize) -> KeyPair {
    derived_key(b"authority", index as u64)
}

pub fn authority_name(index: usize) -> AuthorityName {
    AuthorityName::new(format!("auth{index:02}")).expect("short name")
}

/// Key of script user `user`. Users are striped over shards: with 1, 2 or 4
/// shards, user `u` lives in shard `u % shards`, so small scripts still move
/// money between shards.
pub fn user_key(user: UserId) -> KeyPair {
    let target = user % 4;
    (0u64..)
        .map(|attempt| derived_key(b"user", (u64::from(user) << 32) | attempt))
        .find(|key| which_shard(&key.address(), 4) == target)
        .expect("a quarter of all keys match")
}

fn derived_key(domain: &[u8], index: u64) -> KeyPair {
    let mut hasher = Sha256::new();
    hasher.update(domain);
    hasher.update(index.to_le_bytes());
    KeyPair::from_secret_bytes(hasher.finalize().into())
}

/// The audit of one quiescent point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Index of the step just completed; the final flush is `steps.len()`.
    pub step: usize,
    pub time: Micros,
    /// SHA-256 over the JSON of every honest authority shard, hex.
    pub state_digest: String,
    pub audit: AuditReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub committee: CommitteeShape,
    pub schedule: Schedule,
    pub script: String,
    pub messages: Vec<MessageRecord>,
    pub snapshots: Vec<Snapshot>,
    /// Every certificate formed, by anyone, in order of discovery.
    pub certificates: Vec<CertifiedTransferOrder>,
    /// One per action, in script order.
    pub outcomes: Vec<Outcome>,
    /// Final balances that at least `2f+1` honest authorities agree on.
    /// Users without an account at a quorum are absent.
    pub balances: BTreeMap<UserId, i128>,
    /// Users whose honest authorities disagree with no quorum value.
    pub unsettled: Vec<UserId>,
    /// Primary payouts received by each user.
    pub payouts: BTreeMap<UserId, u128>,
    pub total_funding: u128,
}

impl ExecutionTrace {
    pub fn violations(&self) -> impl Iterator<Item = (usize, &Violation)> {
        self.snapshots
            .iter()
            .flat_map(|s| s.audit.violations.iter().map(move |v| (s.step, v)))
    }

    pub fn is_safe(&self) -> bool {
        self.snapshots.iter().all(|s| s.audit.is_ok())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("traces serialize")
    }
}

type SimClient = ClientState<SimAuthorityClient>;

/// What a finished action task hands back.
struct Finished {
    clients: Vec<(UserId, SimClient)>,
    outcome: Outcome,
    certificates: Vec<CertifiedTransferOrder>,
}

pub struct Simulation {
    shape: CommitteeShape,
    committee: Committee,
    world: WorldRef,
    executor: Executor,
    ledger: Rc<RefCell<PrimaryLedgerState>>,
    clients: BTreeMap<UserId, SimClient>,
    certificates: BTreeMap<Vec<u8>, CertifiedTransferOrder>,
    certificate_order: Vec<Vec<u8>>,
    outcomes: Vec<Outcome>,
    snapshots: Vec<Snapshot>,
    steps_run: usize,
    retry: RetryPolicy,
}

impl Simulation {
    pub fn new(shape: CommitteeShape, schedule: Schedule) -> Self {
        let size = shape.size();
        assert!(
            schedule.byzantine.keys().all(|&i| i < size),
            "Byzantine authority out of range"
        );
        let committee = Committee::new(
            (0..size).map(|i| (authority_name(i), authority_key(i).public())),
            shape.faults_tolerated,
        )
        .expect("a well-formed committee");
        let authorities = (0..size)
            .map(|i| {
                AuthorityState::new_shards(authority_name(i), authority_key(i), committee.clone(), shape.shards)
                    .expect("valid shards")
            })
            .collect();
        Simulation {
            shape,
            ledger: Rc::new(RefCell::new(PrimaryLedgerState::new(committee.clone(), shape.shards))),
            committee,
            world: Rc::new(RefCell::new(World::new(schedule, authorities))),
            executor: Executor::default(),
            clients: BTreeMap::new(),
            certificates: BTreeMap::new(),
            certificate_order: Vec::new(),
            outcomes: Vec::new(),
            snapshots: Vec::new(),
            steps_run: 0,
            retry: RetryPolicy {
                max_attempts: 30,
                ..RetryPolicy::default()
            },
        }
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn world(&self) -> &WorldRef {
        &self.world
    }

    pub fn ledger(&self) -> PrimaryLedgerState {
        self.ledger.borrow().clone()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn certificates(&self) -> Vec<CertifiedTransferOrder> {
        self.certificate_order
            .iter()
            .map(|k| self.certificates[k].clone())
            .collect()
    }

    pub fn client(&mut self, user: UserId) -> &mut SimClient {
        self.ensure_client(user);
        self.clients.get_mut(&user).expect("client exists")
    }

    /// Shards of every honest authority.
    pub fn honest_states(&self) -> Vec<AuthorityState> {
        self.world
            .borrow()
            .authorities
            .iter()
            .filter(|a| a.is_honest())
            .flat_map(|a| a.shards.iter().cloned())
            .collect()
    }

    /// State of `user`'s account at every honest authority.
    pub fn honest_views(&self, user: UserId) -> Vec<Option<crate::authority::AccountOffchainState>> {
        let address = user_key(user).address();
        self.world
            .borrow()
            .authorities
            .iter()
            .filter(|a| a.is_honest())
            .map(|a| a.shard_of(&address).account(&address).cloned())
            .collect()
    }

    fn ensure_client(&mut self, user: UserId) {
        if self.clients.contains_key(&user) {
            return;
        }
        let authority_clients = (0..self.shape.size())
            .map(|i| (authority_name(i), SimAuthorityClient::new(self.world.clone(), i)))
            .collect();
        let mut client = ClientState::new(
            user_key(user),
            self.committee.clone(),
            self.shape.shards,
            authority_clients,
        );
        client.set_retry_policy(self.retry);
        client.observe_primary(&self.ledger.borrow());
        self.clients.insert(user, client);
    }

    fn record_certificate(&mut self, certificate: CertifiedTransferOrder) {
        let key = certificate.to_bytes();
        if !self.certificates.contains_key(&key) {
            self.certificate_order.push(key.clone());
            self.certificates.insert(key, certificate);
        }
    }

    /// Alternates client tasks and network events until neither can progress.
    pub fn run_to_quiescence(&mut self) {
        loop {
            self.executor.run_until_stalled();
            if !self.world.borrow_mut().step() {
                self.executor.run_until_stalled();
                if self.world.borrow().is_idle() {
                    return;
                }
            }
        }
    }

    /// Lets virtual time pass with nothing happening, e.g. to end a partition.
    pub fn advance_to(&mut self, time: Micros) {
        self.run_to_quiescence();
        self.world.borrow_mut().advance_to(time);
    }

    pub fn run(&mut self, script: &Script) -> Result<(), ScriptError> {
        script.validate()?;
        for step in &script.steps {
            self.run_step(step);
        }
        Ok(())
    }

    pub fn run_step(&mut self, step: &Step) {
        for user in step.actions().iter().flat_map(Action::users) {
            self.ensure_client(user);
        }
        let first = self.outcomes.len();
        self.outcomes
            .extend(std::iter::repeat_n(Outcome::Failed, step.actions().len()));

        // Funding is a Primary transaction; it completes immediately.
        for (i, action) in step.actions().iter().enumerate() {
            if let Action::Fund { user, amount } = *action {
                let address = user_key(user).address();
                let funded = self.ledger.borrow_mut().fund(address, Amount::new(amount));
                self.outcomes[first + i] = match funded {
                    Ok(_) => Outcome::Accepted,
                    Err(_) => Outcome::Rejected,
                };
            }
        }
        let ledger = self.ledger.borrow().clone();
        for client in self.clients.values_mut() {
            client.observe_primary(&ledger);
        }

        let mut handles = Vec::new();
        for (i, action) in step.actions().iter().enumerate() {
            if let Some(handle) = self.spawn_action(*action) {
                handles.push((first + i, handle));
            }
        }
        self.run_to_quiescence();
        for (index, handle) in handles {
            let finished = handle.take().expect("every action completes once the network is idle");
            self.outcomes[index] = finished.outcome;
            self.clients.extend(finished.clients);
            for certificate in finished.certificates {
                self.record_certificate(certificate);
            }
        }
        self.snapshot(self.steps_run);
        self.steps_run += 1;
    }

    fn take_client(&mut self, user: UserId) -> (UserId, SimClient) {
        (user, self.clients.remove(&user).expect("client exists"))
    }

    fn spawn_action(&mut self, action: Action) -> Option<JoinHandle<Finished>> {
        let handle = match action {
            Action::Fund { .. } => return None,
            Action::Transfer { from, to, amount } if from == to => {
                let (_, mut sender) = self.take_client(from);
                self.executor.spawn(async move {
                    let address = sender.address();
                    let result = sender
                        .transfer(Recipient::FastPay(address), Amount::new(amount), None)
                        .await;
                    let (outcome, certificates) = transfer_outcome(result);
                    let mut outcome = outcome;
                    if let Some(certificate) = certificates.first() {
                        if sender.receive_certificate(certificate.clone()).await.is_err() {
                            outcome = Outcome::Failed;
                        }
                    }
                    Finished {
                        clients: vec![(from, sender)],
                        outcome,
                        certificates,
                    }
                })
            }
            Action::Transfer { from, to, amount } => {
                let (_, mut sender) = self.take_client(from);
                let (_, mut recipient) = self.take_client(to);
                self.executor.spawn(async move {
                    let result = sender
                        .transfer(Recipient::FastPay(recipient.address()), Amount::new(amount), None)
                        .await;
                    let (mut outcome, certificates) = transfer_outcome(result);
                    if let Some(certificate) = certificates.first() {
                        if recipient.receive_certificate(certificate.clone()).await.is_err() {
                            outcome = Outcome::Failed;
                        }
                    }
                    Finished {
                        clients: vec![(from, sender), (to, recipient)],
                        outcome,
                        certificates,
                    }
                })
            }
            Action::Redeem { user, amount } => {
                let (_, mut client) = self.take_client(user);
                let ledger = self.ledger.clone();
                self.executor.spawn(async move {
                    let address = client.address();
                    let result = client
                        .transfer(Recipient::Primary(address), Amount::new(amount), None)
                        .await;
                    let (mut outcome, certificates) = transfer_outcome(result);
                    if let Some(certificate) = certificates.first() {
                        let redeemed = ledger.borrow_mut().redeem(RedeemTransaction {
                            certificate: certificate.clone(),
                        });
                        if redeemed.is_err() {
                            outcome = Outcome::Failed;
                        }
                    }
                    Finished {
                        clients: vec![(user, client)],
                        outcome,
                        certificates,
                    }
                })
            }
            Action::Sync { user } => {
                let (_, client) = self.take_client(user);
                self.executor.spawn(async move {
                    let outcome = match client.sync_account().await {
                        Ok(()) => Outcome::Accepted,
                        Err(_) => Outcome::Failed,
                    };
                    Finished {
                        clients: vec![(user, client)],
                        outcome,
                        certificates: Vec::new(),
                    }
                })
            }
            Action::Equivocate { user, first, second } => {
                let (_, client) = self.take_client(user);
                let split = self.equivocation_targets();
                self.executor.spawn(async move {
                    let certificates = equivocate(&client, split, first, second).await;
                    for certificate in &certificates {
                        let _ = client.confirm(certificate).await;
                    }
                    Finished {
                        clients: vec![(user, client)],
                        outcome: if certificates.is_empty() {
                            Outcome::Failed
                        } else {
                            Outcome::Accepted
                        },
                        certificates,
                    }
                })
            }
        };
        Some(handle)
    }

    /// Honest authorities split in two halves; Byzantine ones see both orders.
    fn equivocation_targets(&self) -> (Vec<usize>, Vec<usize>) {
        let world = self.world.borrow();
        let honest: Vec<usize> = (0..self.shape.size())
            .filter(|&i| world.authorities[i].is_honest())
            .collect();
        let byzantine: Vec<usize> = (0..self.shape.size())
            .filter(|&i| !world.authorities[i].is_honest())
            .collect();
        let half = honest.len().div_ceil(2);
        let mut a = honest[..half].to_vec();
        let mut b = honest[half..].to_vec();
        a.extend(&byzantine);
        b.extend(&byzantine);
        (a, b)
    }

    fn snapshot(&mut self, step: usize) {
        let states = self.honest_states();
        // Certificates confirmed anywhere count as formed.
        for state in &states {
            for account in state.accounts.values() {
                for certificate in account.confirmed.iter().chain(&account.received) {
                    self.record_certificate(certificate.clone());
                }
            }
        }
        let certificates = self.certificates();
        let ledger = self.ledger.borrow();
        let audit = audit_system(&states, &certificates, &ledger);
        let json = serde_json::to_vec(&states).expect("states serialize");
        self.snapshots.push(Snapshot {
            step,
            time: self.world.borrow().now(),
            state_digest: hex::encode(Sha256::digest(json)),
            audit,
        });
    }

    /// Every user pushes its state to every authority, then the final
    /// balances are read off the honest authorities.
    pub fn finish(mut self, script: &Script) -> ExecutionTrace {
        let users: Vec<UserId> = self.clients.keys().copied().collect();
        let mut handles = Vec::new();
        for user in users {
            let (_, client) = self.take_client(user);
            handles.push(self.executor.spawn(async move {
                let _ = client.sync_account().await;
                (user, client)
            }));
        }
        self.run_to_quiescence();
        for handle in handles {
            let (user, client) = handle.take().expect("sync completes");
            self.clients.insert(user, client);
        }
        self.snapshot(self.steps_run);

        let quorum = self.committee.quorum_threshold();
        let mut balances = BTreeMap::new();
        let mut unsettled = Vec::new();
        for &user in self.clients.keys() {
            let mut counts: BTreeMap<Option<i128>, usize> = BTreeMap::new();
            for view in self.honest_views(user) {
                *counts.entry(view.map(|a| a.balance.value())).or_default() += 1;
            }
            match counts.into_iter().find(|(_, n)| *n >= quorum) {
                Some((Some(balance), _)) => {
                    balances.insert(user, balance);
                }
                Some((None, _)) => {}
                None => unsettled.push(user),
            }
        }
        let ledger = self.ledger.borrow().clone();
        let payouts = self
            .clients
            .keys()
            .filter_map(|&user| {
                let paid = ledger.primary_balance(&user_key(user).address()).value();
                (paid > 0).then_some((user, u128::from(paid)))
            })
            .collect();
        let world = self.world.borrow();
        ExecutionTrace {
            committee: self.shape,
            schedule: world.schedule().clone(),
            script: script.to_string(),
            messages: world.messages.clone(),
            snapshots: self.snapshots.clone(),
            certificates: self.certificates(),
            outcomes: self.outcomes.clone(),
            balances,
            unsettled,
            payouts,
            total_funding: ledger.total_funding(),
        }
    }
}

fn transfer_outcome(result: Result<CertifiedTransferOrder, ClientError>) -> (Outcome, Vec<CertifiedTransferOrder>) {
    match result {
        Ok(certificate) => (Outcome::Accepted, vec![certificate]),
        Err(ClientError::InsufficientSpendable { .. }) => (Outcome::Rejected, Vec::new()),
        Err(_) => (Outcome::Failed, Vec::new()),
    }
}

/// Signs two orders for the client's next sequence number and shows each
/// to one group of authorities. Returns the certificates that formed.
async fn equivocate(
    client: &SimClient,
    (group_a, group_b): (Vec<usize>, Vec<usize>),
    first: u64,
    second: u64,
) -> Vec<CertifiedTransferOrder> {
    let key_pair = user_key_of(client);
    let order = |amount: u64| {
        TransferOrder::new(
            Transfer {
                sender: client.address(),
                sender_key: key_pair.public(),
                recipient: Recipient::FastPay(client.address()),
                amount: Amount::new(amount),
                sequence: client.next_sequence(),
                user_data: None,
            },
            &key_pair,
        )
        .expect("valid order")
    };
    let clients: Vec<&SimAuthorityClient> = client.authority_clients().values().collect();
    let mut certificates = Vec::new();
    for (order, group) in [(order(first), group_a), (order(second), group_b)] {
        let votes = futures::future::join_all(group.iter().map(|&i| {
            let order = order.clone();
            let authority = clients[i];
            async move {
                for _ in 0..10 {
                    match authority.call(Request::Transfer(order.clone())).await {
                        Ok(Response::Vote(vote)) => return Some(vote),
                        Err(FastPayError::Unreachable { .. }) => continue,
                        _ => return None,
                    }
                }
                None
            }
        }))
        .await;
        let votes: Vec<_> = votes.into_iter().flatten().collect();
        let valid: Vec<_> = votes
            .into_iter()
            .filter(|v| v.check(client.committee()).is_ok() && v.value == order)
            .collect();
        if let Ok(certificate) = make_certificate(&order, &valid, client.committee()) {
            certificates.push(certificate);
        }
    }
    certificates
}

fn user_key_of(client: &SimClient) -> KeyPair {
    client.wallet().key_pair
}

/// Runs `script` on a fresh committee under `schedule` and returns the trace.
pub fn run_scenario(
    committee: CommitteeShape,
    schedule: Schedule,
    script: &Script,
) -> Result<ExecutionTrace, ScriptError> {
    let mut simulation = Simulation::new(committee, schedule);
    simulation.run(script)?;
    Ok(simulation.finish(script))
}

/// Users whose quorum-visible balances differ from the reference ledger.
pub fn oracle_mismatches(trace: &ExecutionTrace, reference: &ReferenceOutcome) -> Vec<UserId> {
    let users: BTreeSet<UserId> = trace
        .balances
        .keys()
        .chain(reference.balances.keys())
        .copied()
        .collect();
    users
        .into_iter()
        .filter(|user| trace.balances.get(user).copied() != reference.balances.get(user).map(|&b| b as i128))
        .collect()
}
