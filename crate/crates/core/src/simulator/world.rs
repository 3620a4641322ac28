// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! The virtual network: a discrete-event queue in virtual time, seeded link
//! faults, and the authorities (honest or Byzantine) it connects.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::authority::{which_shard, AuthorityState};
use crate::base_types::{Address, Balance, ShardId, Signature};
use crate::client::AuthorityClient;
use crate::codec::Encode;
use crate::error::FastPayError;
use crate::messages::{
    AccountInfoRequest, AccountInfoResponse, ConfirmationOrder, CrossShardAck, CrossShardUpdate,
    PrimarySynchronizationOrder, SignedTransferOrder, TransferOrder,
};

/// Virtual time in microseconds.
pub type Micros = u64;

/// How long an unacknowledged cross-shard update waits before it is resent.
const RETRANSMIT_INTERVAL: Micros = 50_000;

/// The fixed menu of Byzantine authority programs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Never answers.
    Silent,
    /// Votes for every well-signed order, ignoring its own state.
    EquivocateVotes,
    /// Claims to know no certificate of the sender, forcing a full replay.
    ReportZeroSequence,
    /// Breaks vote signatures and inflates reported balances.
    CorruptReply,
}

pub const BEHAVIORS: [Behavior; 4] = [
    Behavior::Silent,
    Behavior::EquivocateVotes,
    Behavior::ReportZeroSequence,
    Behavior::CorruptReply,
];

/// Authorities cut off from every client during `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub start: Micros,
    pub end: Micros,
    pub authorities: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub seed: u64,
    /// Every message takes a uniform delay in `[min_delay, max_delay]`.
    pub min_delay: Micros,
    pub max_delay: Micros,
    pub drop_probability: f64,
    pub duplicate_probability: f64,
    pub partitions: Vec<Partition>,
    /// Byzantine authorities by committee index.
    pub byzantine: BTreeMap<usize, Behavior>,
}

impl Schedule {
    /// No faults, fixed one-millisecond delays.
    pub fn reliable(seed: u64) -> Self {
        Schedule {
            seed,
            min_delay: 1_000,
            max_delay: 1_000,
            drop_probability: 0.0,
            duplicate_probability: 0.0,
            partitions: Vec::new(),
            byzantine: BTreeMap::new(),
        }
    }

    /// A seeded adversarial schedule for a committee of `3f+1`: random
    /// delays, drops, duplicates, short partitions and up to `f` Byzantine
    /// authorities.
    pub fn random(seed: u64, faults_tolerated: usize) -> Self {
        let size = 3 * faults_tolerated + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5c4e_d01e);
        let max_delay = rng.gen_range(1_000..50_000);
        let mut byzantine = BTreeMap::new();
        for _ in 0..rng.gen_range(0..=faults_tolerated) {
            let index = rng.gen_range(0..size);
            byzantine.insert(index, BEHAVIORS[rng.gen_range(0..BEHAVIORS.len())]);
        }
        let mut partitions = Vec::new();
        for _ in 0..rng.gen_range(0..3) {
            let start = rng.gen_range(0..2_000_000);
            partitions.push(Partition {
                start,
                end: start + rng.gen_range(10_000..1_000_000),
                authorities: vec![rng.gen_range(0..size)],
            });
        }
        Schedule {
            seed,
            min_delay: rng.gen_range(0..max_delay),
            max_delay,
            drop_probability: rng.gen_range(0.0..0.2),
            duplicate_probability: rng.gen_range(0.0..0.2),
            partitions,
            byzantine,
        }
    }

    /// Long enough for a request and its reply to cross the network.
    pub fn request_timeout(&self) -> Micros {
        2 * self.max_delay + 10_000
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Request {
    Transfer(TransferOrder),
    Confirm(ConfirmationOrder),
    Info(AccountInfoRequest),
    Sync(PrimarySynchronizationOrder),
}

impl Request {
    fn kind(&self) -> &'static str {
        match self {
            Request::Transfer(_) => "transfer_order",
            Request::Confirm(_) => "confirmation_order",
            Request::Info(_) => "account_info_request",
            Request::Sync(_) => "synchronization_order",
        }
    }

    fn account(&self) -> Address {
        match self {
            Request::Transfer(order) => order.sender(),
            Request::Confirm(order) => order.certificate.sender(),
            Request::Info(request) => request.account,
            Request::Sync(order) => order.recipient,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            Request::Transfer(m) => m.to_bytes(),
            Request::Confirm(m) => m.to_bytes(),
            Request::Info(m) => m.to_bytes(),
            Request::Sync(m) => m.to_bytes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    Vote(SignedTransferOrder),
    Info(AccountInfoResponse),
}

type Reply = Result<Response, FastPayError>;

fn reply_kind_and_bytes(reply: &Reply) -> (&'static str, Vec<u8>) {
    match reply {
        Ok(Response::Vote(m)) => ("vote", m.to_bytes()),
        Ok(Response::Info(m)) => ("account_info_response", m.to_bytes()),
        Err(e) => ("error", e.to_bytes()),
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    Delivered,
    Duplicated,
    Dropped,
    /// The reply arrived after the caller gave up.
    Late,
}

/// One message put on the virtual network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub time: Micros,
    pub from: String,
    pub to: String,
    pub kind: String,
    pub fate: Fate,
    /// First 8 bytes of the SHA-256 of the canonical payload, hex.
    pub digest: String,
}

/// A value some task is waiting for.
struct Slot<T> {
    value: Option<T>,
    waker: Option<Waker>,
}

type SlotRef<T> = Rc<RefCell<Slot<T>>>;

fn new_slot<T>() -> SlotRef<T> {
    Rc::new(RefCell::new(Slot {
        value: None,
        waker: None,
    }))
}

/// Fills the slot unless it already has a value. Returns whether it did.
fn fill<T>(slot: &SlotRef<T>, value: T) -> bool {
    let mut slot = slot.borrow_mut();
    if slot.value.is_some() {
        return false;
    }
    slot.value = Some(value);
    if let Some(waker) = slot.waker.take() {
        waker.wake();
    }
    true
}

struct SlotFuture<T>(SlotRef<T>);

impl<T> Future for SlotFuture<T> {
    type Output = T;

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<T> {
        let mut slot = self.0.borrow_mut();
        match slot.value.take() {
            Some(value) => Poll::Ready(value),
            None => {
                slot.waker = Some(cx.waker().clone());
                Poll::Pending
            }
        }
    }
}

enum Event {
    Deliver {
        authority: usize,
        call: u64,
        request: Request,
    },
    Reply {
        authority: usize,
        call: u64,
        reply: Reply,
    },
    Timeout {
        call: u64,
    },
    Wake {
        timer: u64,
    },
    CrossShard {
        authority: usize,
        update: CrossShardUpdate,
    },
    CrossShardAck {
        authority: usize,
        ack: CrossShardAck,
    },
    Retransmit {
        authority: usize,
        shard: ShardId,
    },
}

pub struct SimAuthority {
    pub shards: Vec<AuthorityState>,
    pub behavior: Option<Behavior>,
    retransmit_armed: Vec<bool>,
}

impl SimAuthority {
    pub fn is_honest(&self) -> bool {
        self.behavior.is_none()
    }

    pub fn shard_of(&self, account: &Address) -> &AuthorityState {
        &self.shards[which_shard(account, self.shards.len() as u32) as usize]
    }

    fn shard_of_mut(&mut self, account: &Address) -> &mut AuthorityState {
        let shard = which_shard(account, self.shards.len() as u32);
        &mut self.shards[shard as usize]
    }
}

pub struct World {
    now: Micros,
    events: BTreeMap<(Micros, u64), Event>,
    next_event: u64,
    rng: ChaCha8Rng,
    schedule: Schedule,
    pub authorities: Vec<SimAuthority>,
    calls: BTreeMap<u64, SlotRef<Reply>>,
    timers: BTreeMap<u64, SlotRef<()>>,
    next_id: u64,
    pub messages: Vec<MessageRecord>,
}

/// Shared handle to the world.
pub type WorldRef = Rc<RefCell<World>>;

impl World {
    pub fn new(schedule: Schedule, authorities: Vec<Vec<AuthorityState>>) -> Self {
        let authorities = authorities
            .into_iter()
            .enumerate()
            .map(|(index, shards)| SimAuthority {
                retransmit_armed: vec![false; shards.len()],
                shards,
                behavior: schedule.byzantine.get(&index).copied(),
            })
            .collect();
        World {
            now: 0,
            events: BTreeMap::new(),
            next_event: 0,
            rng: ChaCha8Rng::seed_from_u64(schedule.seed),
            schedule,
            authorities,
            calls: BTreeMap::new(),
            timers: BTreeMap::new(),
            next_id: 0,
            messages: Vec::new(),
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// Moves the clock forward. Only meaningful while no event is queued.
    pub fn advance_to(&mut self, time: Micros) {
        debug_assert!(self.is_idle());
        self.now = self.now.max(time);
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn is_idle(&self) -> bool {
        self.events.is_empty()
    }

    fn push(&mut self, at: Micros, event: Event) {
        self.next_event += 1;
        self.events.insert((at, self.next_event), event);
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn partitioned(&self, authority: usize) -> bool {
        self.schedule
            .partitions
            .iter()
            .any(|p| p.start <= self.now && self.now < p.end && p.authorities.contains(&authority))
    }

    /// Puts a message on a link: it is dropped, delivered, or delivered
    /// twice, each copy after its own random delay.
    fn send(
        &mut self,
        from: String,
        to: String,
        bytes: (&'static str, Vec<u8>),
        cut: bool,
        mut event: impl FnMut() -> Event,
    ) {
        let dropped = cut || self.rng.gen_bool(self.schedule.drop_probability);
        let copies = if dropped {
            0
        } else if self.rng.gen_bool(self.schedule.duplicate_probability) {
            2
        } else {
            1
        };
        self.messages.push(MessageRecord {
            time: self.now,
            from,
            to,
            kind: bytes.0.into(),
            fate: match copies {
                0 => Fate::Dropped,
                1 => Fate::Delivered,
                _ => Fate::Duplicated,
            },
            digest: digest(&bytes.1),
        });
        for _ in 0..copies {
            let delay = self.rng.gen_range(self.schedule.min_delay..=self.schedule.max_delay);
            self.push(self.now + delay, event());
        }
    }

    fn start_call(&mut self, authority: usize, request: Request) -> SlotRef<Reply> {
        let call = self.fresh_id();
        let slot = new_slot();
        self.calls.insert(call, slot.clone());
        let timeout = self.schedule.request_timeout();
        self.push(self.now + timeout, Event::Timeout { call });
        let bytes = (request.kind(), request.to_bytes());
        let cut = self.partitioned(authority);
        self.send("client".into(), authority_label(authority), bytes, cut, || {
            Event::Deliver {
                authority,
                call,
                request: request.clone(),
            }
        });
        slot
    }

    fn start_timer(&mut self, duration: Duration) -> SlotRef<()> {
        let timer = self.fresh_id();
        let slot = new_slot();
        self.timers.insert(timer, slot.clone());
        let at = self.now + duration.as_micros() as Micros;
        self.push(at, Event::Wake { timer });
        slot
    }

    /// Processes the next event. Returns false when there is none.
    pub fn step(&mut self) -> bool {
        let Some(((at, _), event)) = self.events.pop_first() else {
            return false;
        };
        self.now = at;
        match event {
            Event::Deliver {
                authority,
                call,
                request,
            } => {
                if let Some(reply) = self.handle(authority, request) {
                    let bytes = reply_kind_and_bytes(&reply);
                    let cut = self.partitioned(authority);
                    self.send(authority_label(authority), "client".into(), bytes, cut, || {
                        Event::Reply {
                            authority,
                            call,
                            reply: reply.clone(),
                        }
                    });
                }
            }
            Event::Reply { authority, call, reply } => {
                let delivered = self.calls.remove(&call).is_some_and(|slot| fill(&slot, reply));
                if !delivered {
                    self.messages.push(MessageRecord {
                        time: self.now,
                        from: authority_label(authority),
                        to: "client".into(),
                        kind: "late_reply".into(),
                        fate: Fate::Late,
                        digest: String::new(),
                    });
                }
            }
            Event::Timeout { call } => {
                if let Some(slot) = self.calls.remove(&call) {
                    fill(
                        &slot,
                        Err(FastPayError::Unreachable {
                            reason: "request timed out".into(),
                        }),
                    );
                }
            }
            Event::Wake { timer } => {
                if let Some(slot) = self.timers.remove(&timer) {
                    fill(&slot, ());
                }
            }
            Event::CrossShard { authority, update } => {
                let destination = update.shard_id as usize;
                let result = self.authorities[authority].shards[destination].handle_cross_shard_commit(update.clone());
                if let Ok(ack) = result {
                    let from = shard_label(authority, ack.shard_id);
                    let to = shard_label(authority, ack.source_shard);
                    let bytes = ("cross_shard_ack", ack.to_bytes());
                    self.send(from, to, bytes, false, || Event::CrossShardAck { authority, ack });
                }
            }
            Event::CrossShardAck { authority, ack } => {
                self.authorities[authority].shards[ack.source_shard as usize].handle_cross_shard_ack(ack);
            }
            Event::Retransmit { authority, shard } => {
                self.authorities[authority].retransmit_armed[shard as usize] = false;
                let updates = self.authorities[authority].shards[shard as usize].unacknowledged_updates();
                for update in updates {
                    self.send_cross_shard(authority, update);
                }
            }
        }
        true
    }

    fn send_cross_shard(&mut self, authority: usize, update: CrossShardUpdate) {
        let source = update.source_shard;
        let from = shard_label(authority, source);
        let to = shard_label(authority, update.shard_id);
        let bytes = ("cross_shard_update", update.to_bytes());
        self.send(from, to, bytes, false, || Event::CrossShard {
            authority,
            update: update.clone(),
        });
        let armed = &mut self.authorities[authority].retransmit_armed[source as usize];
        if !*armed {
            *armed = true;
            self.push(
                self.now + RETRANSMIT_INTERVAL,
                Event::Retransmit {
                    authority,
                    shard: source,
                },
            );
        }
    }

    /// Runs the request through the authority's program. `None` means no reply.
    fn handle(&mut self, authority: usize, request: Request) -> Option<Reply> {
        let behavior = self.authorities[authority].behavior;
        if behavior == Some(Behavior::Silent) {
            return None;
        }
        let account = request.account();
        let state = self.authorities[authority].shard_of_mut(&account);
        let mut cross_shard = None;
        let mut reply = match request {
            Request::Transfer(order) if behavior == Some(Behavior::EquivocateVotes) => {
                order.check_shape().and_then(|_| order.check_signature()).map(|_| {
                    let name = state.name.clone();
                    Response::Vote(SignedTransferOrder::new(order, name, &state.key_pair))
                })
            }
            Request::Transfer(order) => state.handle_transfer_order(order).map(Response::Vote),
            Request::Confirm(order)
                if behavior == Some(Behavior::ReportZeroSequence) && order.certificate.sequence().value() > 0 =>
            {
                Err(FastPayError::MissingEarlierCertificates {
                    expected: Default::default(),
                })
            }
            Request::Confirm(order) => state.handle_confirmation_order(order).map(|outcome| {
                cross_shard = outcome.cross_shard;
                Response::Info(outcome.info)
            }),
            Request::Info(request) => state.handle_account_info_request(request).map(Response::Info),
            Request::Sync(order) => state.handle_primary_synchronization_order(order).map(Response::Info),
        };
        if let Some(update) = cross_shard {
            self.send_cross_shard(authority, update);
        }
        if behavior == Some(Behavior::CorruptReply) {
            corrupt(&mut reply);
        }
        Some(reply)
    }
}

fn corrupt(reply: &mut Reply) {
    match reply {
        Ok(Response::Vote(vote)) => {
            let mut bytes = *vote.signature.as_bytes();
            bytes[0] ^= 1;
            vote.signature = Signature::from_bytes(bytes);
        }
        Ok(Response::Info(info)) => {
            info.balance = Balance::new(info.balance.value() + 1_000_000);
            if let Some(certificate) = &mut info.requested_certificate {
                if let Some((_, signature)) = certificate.signatures.first_mut() {
                    let mut bytes = *signature.as_bytes();
                    bytes[0] ^= 1;
                    *signature = Signature::from_bytes(bytes);
                }
            }
        }
        Err(_) => {}
    }
}

fn authority_label(authority: usize) -> String {
    format!("authority{authority}")
}

fn shard_label(authority: usize, shard: ShardId) -> String {
    format!("authority{authority}/shard{shard}")
}

/// One authority as seen by a simulated client.
#[derive(Clone)]
pub struct SimAuthorityClient {
    world: WorldRef,
    authority: usize,
}

impl SimAuthorityClient {
    pub fn new(world: WorldRef, authority: usize) -> Self {
        SimAuthorityClient { world, authority }
    }

    pub async fn call(&self, request: Request) -> Reply {
        let slot = self.world.borrow_mut().start_call(self.authority, request);
        SlotFuture(slot).await
    }
}

impl AuthorityClient for SimAuthorityClient {
    async fn handle_transfer_order(&self, order: TransferOrder) -> Result<SignedTransferOrder, FastPayError> {
        match self.call(Request::Transfer(order)).await? {
            Response::Vote(vote) => Ok(vote),
            Response::Info(_) => Err(FastPayError::UnexpectedResponse),
        }
    }

    async fn handle_confirmation_order(&self, order: ConfirmationOrder) -> Result<AccountInfoResponse, FastPayError> {
        expect_info(self.call(Request::Confirm(order)).await)
    }

    async fn handle_account_info_request(
        &self,
        request: AccountInfoRequest,
    ) -> Result<AccountInfoResponse, FastPayError> {
        expect_info(self.call(Request::Info(request)).await)
    }

    async fn handle_primary_synchronization_order(
        &self,
        order: PrimarySynchronizationOrder,
    ) -> Result<AccountInfoResponse, FastPayError> {
        expect_info(self.call(Request::Sync(order)).await)
    }

    async fn sleep(&self, duration: Duration) {
        let slot = self.world.borrow_mut().start_timer(duration);
        SlotFuture(slot).await
    }
}

fn expect_info(reply: Reply) -> Result<AccountInfoResponse, FastPayError> {
    match reply? {
        Response::Info(info) => Ok(info),
        Response::Vote(_) => Err(FastPayError::UnexpectedResponse),
    }
}
