// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Throughput and latency benchmarks against real shard servers on
//! localhost.
//!
//! Throughput: orders and certificates are signed up front, then replayed
//! against the shards of one authority with a bounded number of requests in
//! flight. The transfer-order phase and the confirmation phase are timed
//! separately.
//!
//! Latency: a full committee runs locally, some authorities are stopped,
//! and a client measures how long it takes to gather a certificate and then
//! to have it confirmed by a quorum.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use fastpay_core::audit::{audit_system, AuditReport};
use fastpay_core::authority::{which_shard, AuthorityState};
use fastpay_core::network::{
    spawn_shards, AuthorityConfig, CommitteeConfig, Message, NetworkAuthorityClient, ShardEndpoint, ShardHandle,
    Transport,
};
use fastpay_core::primary::PrimaryLedgerState;
use fastpay_core::{
    make_certificate, AccountInfoRequest, Address, Amount, AuthorityName, CertifiedTransferOrder, Committee,
    ConfirmationOrder, FastPayError, KeyPair, Recipient, SequenceNumber, SignedTransferOrder, Transfer, TransferOrder,
};
use futures::stream::{self, FuturesUnordered, StreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::setup::AuthorityKeyFile;

const LOCALHOST: IpAddr = IpAddr::V4(Ipv4Addr::LOCALHOST);
/// Every benchmark account starts with this much.
const INITIAL_FUNDING: u64 = 100;
const REQUEST_ATTEMPTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub num_authorities: usize,
    pub shards: u32,
    pub num_transactions: usize,
    pub in_flight: usize,
    pub transport: Transport,
    pub out: Option<PathBuf>,
    /// Run each shard as a `run-shard` process of this binary instead of
    /// in-process.
    pub shard_binary: Option<PathBuf>,
    pub timeout: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            num_authorities: 4,
            shards: 1,
            num_transactions: 10_000,
            in_flight: 1000,
            transport: Transport::Udp,
            out: None,
            shard_binary: None,
            timeout: Duration::from_secs(1),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.num_authorities == 0 || !(self.num_authorities - 1).is_multiple_of(3) {
            bail!("the number of authorities must be 3f+1");
        }
        if self.shards == 0 {
            bail!("at least one shard is needed");
        }
        if self.in_flight == 0 {
            bail!("in-flight must be at least 1");
        }
        if self.num_transactions < self.in_flight {
            bail!("the number of transactions must be at least the in-flight cap");
        }
        Ok(())
    }
}

/// Signed orders and matching certificates, one per sender account.
pub struct Workload {
    pub committee: Committee,
    pub authorities: Vec<AuthorityKeyFile>,
    pub accounts: Vec<KeyPair>,
    pub orders: Vec<TransferOrder>,
    pub certificates: Vec<CertifiedTransferOrder>,
}

impl Workload {
    pub fn generate(num_authorities: usize, num_transactions: usize, seed: u64) -> anyhow::Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let faults_tolerated = (num_authorities - 1) / 3;
        let authorities: Vec<AuthorityKeyFile> = (0..num_authorities)
            .map(|i| {
                Ok(AuthorityKeyFile {
                    name: AuthorityName::new(format!("auth{i:02}"))?,
                    key_pair: KeyPair::generate(&mut rng),
                })
            })
            .collect::<anyhow::Result<_>>()?;
        let committee = Committee::new(
            authorities.iter().map(|a| (a.name.clone(), a.key_pair.public())),
            faults_tolerated,
        )?;
        let accounts: Vec<KeyPair> = (0..num_transactions).map(|_| KeyPair::generate(&mut rng)).collect();
        let mut orders = Vec::with_capacity(num_transactions);
        for sender in &accounts {
            let recipient = accounts[rng.gen_range(0..accounts.len())].address();
            let transfer = Transfer {
                sender: sender.address(),
                sender_key: sender.public(),
                recipient: Recipient::FastPay(recipient),
                amount: Amount::new(rng.gen_range(1..=INITIAL_FUNDING)),
                sequence: SequenceNumber::default(),
                user_data: None,
            };
            orders.push(TransferOrder::new(transfer, sender)?);
        }
        // Votes from the first 2f+1 authorities, signed here rather than by
        // the servers so that only authority-side work is timed.
        let mut signers: Vec<&AuthorityKeyFile> = authorities.iter().collect();
        signers.sort_by(|a, b| a.name.cmp(&b.name));
        signers.truncate(committee.quorum_threshold());
        let certificates = orders
            .iter()
            .map(|order| CertifiedTransferOrder {
                value: order.clone(),
                signatures: signers
                    .iter()
                    .map(|a| {
                        let vote = SignedTransferOrder::new(order.clone(), a.name.clone(), &a.key_pair);
                        (vote.authority, vote.signature)
                    })
                    .collect(),
            })
            .collect();
        Ok(Workload {
            committee,
            authorities,
            accounts,
            orders,
            certificates,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub shards: u32,
    pub in_flight: usize,
    /// `transfer` or `confirmation`.
    pub phase: String,
    pub transactions: usize,
    pub elapsed_ms: f64,
    pub tx_per_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub authorities: usize,
    pub fail_count: usize,
    /// `certificate` or `confirmation`.
    pub phase: String,
    pub sample: usize,
    pub ms: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

enum Servers {
    InProcess(Vec<ShardHandle>),
    Processes {
        children: Children,
        state_files: Vec<PathBuf>,
        _dir: tempfile::TempDir,
    },
}

/// Shard processes still running when dropped are killed, so a failed run
/// does not leave servers behind.
struct Children(Vec<Child>);

impl Drop for Children {
    fn drop(&mut self) {
        for child in &mut self.0 {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// The shards of one authority, up and answering.
struct RunningAuthority {
    addresses: Vec<SocketAddr>,
    servers: Servers,
}

impl RunningAuthority {
    async fn in_process(shards: Vec<AuthorityState>) -> anyhow::Result<Self> {
        let handles = spawn_shards(shards, LOCALHOST).await?;
        Ok(RunningAuthority {
            addresses: handles.iter().map(|h| h.address).collect(),
            servers: Servers::InProcess(handles),
        })
    }

    /// One `run-shard` process per shard; they stop when their stdin closes.
    async fn processes(binary: &Path, workload: &Workload, shards: u32, timeout: Duration) -> anyhow::Result<Self> {
        let dir = tempfile::tempdir()?;
        let ports: Vec<u16> = (0..shards).map(|_| free_port()).collect::<anyhow::Result<_>>()?;
        let config = CommitteeConfig {
            faults_tolerated: workload.committee.faults_tolerated(),
            authorities: workload
                .authorities
                .iter()
                .enumerate()
                .map(|(i, a)| AuthorityConfig {
                    name: a.name.clone(),
                    public_key: a.key_pair.public(),
                    shards: (0..shards)
                        .map(|s| ShardEndpoint {
                            shard_id: s,
                            host: "127.0.0.1".into(),
                            // Only the first authority runs.
                            port: if i == 0 { ports[s as usize] } else { 0 },
                        })
                        .collect(),
                })
                .collect(),
        };
        let committee_path = dir.path().join("committee.json");
        config.save(&committee_path)?;
        let key_path = dir.path().join("authority.json");
        workload.authorities[0].save(&key_path)?;
        let mut children = Vec::new();
        let mut state_files = Vec::new();
        for shard in 0..shards {
            let state_file = dir.path().join(format!("shard{shard}.json"));
            let child = Command::new(binary)
                .arg("run-shard")
                .arg("--committee")
                .arg(&committee_path)
                .arg("--key")
                .arg(&key_path)
                .arg("--shard")
                .arg(shard.to_string())
                .arg("--state-out")
                .arg(&state_file)
                .arg("--stop-on-stdin-eof")
                .stdin(Stdio::piped())
                .stdout(Stdio::null())
                .spawn()
                .with_context(|| format!("starting {}", binary.display()))?;
            children.push(child);
            state_files.push(state_file);
        }
        let addresses: Vec<SocketAddr> = ports.iter().map(|&p| SocketAddr::new(LOCALHOST, p)).collect();
        let running = RunningAuthority {
            addresses,
            servers: Servers::Processes {
                children: Children(children),
                state_files,
                _dir: dir,
            },
        };
        running.wait_until_ready(timeout).await?;
        Ok(running)
    }

    async fn wait_until_ready(&self, timeout: Duration) -> anyhow::Result<()> {
        let deadline = Instant::now() + Duration::from_secs(20);
        for &address in &self.addresses {
            let client = NetworkAuthorityClient::new(vec![address], Transport::Udp, timeout);
            let probe = Message::AccountInfoRequest(AccountInfoRequest::new(Address::from_bytes([0; 32])));
            loop {
                match client.request(&Address::from_bytes([0; 32]), &probe).await {
                    Err(FastPayError::Unreachable { .. }) if Instant::now() < deadline => {
                        tokio::time::sleep(Duration::from_millis(50)).await
                    }
                    Err(FastPayError::Unreachable { reason }) => bail!("shard at {address} never came up: {reason}"),
                    _ => break,
                }
            }
        }
        Ok(())
    }

    fn client(&self, transport: Transport, timeout: Duration) -> NetworkAuthorityClient {
        NetworkAuthorityClient::new(self.addresses.clone(), transport, timeout)
    }

    async fn stop(self) -> anyhow::Result<Vec<AuthorityState>> {
        match self.servers {
            Servers::InProcess(handles) => {
                let mut states = Vec::new();
                for handle in handles {
                    states.push(handle.stop().await?);
                }
                Ok(states)
            }
            Servers::Processes {
                mut children,
                state_files,
                _dir,
            } => {
                let mut states = Vec::new();
                for state_file in state_files {
                    let mut child = children.0.remove(0);
                    drop(child.stdin.take());
                    let status = tokio::task::spawn_blocking(move || child.wait()).await??;
                    if !status.success() {
                        bail!("shard process exited with {status}");
                    }
                    let bytes = std::fs::read(&state_file)?;
                    states.push(serde_json::from_slice(&bytes)?);
                }
                Ok(states)
            }
        }
    }
}

fn free_port() -> anyhow::Result<u16> {
    let udp = std::net::UdpSocket::bind((LOCALHOST, 0))?;
    let port = udp.local_addr()?.port();
    std::net::TcpListener::bind((LOCALHOST, port))?;
    Ok(port)
}

async fn request_retrying(
    client: &NetworkAuthorityClient,
    account: &Address,
    message: &Message,
) -> Result<Message, FastPayError> {
    let mut attempt = 1;
    loop {
        match client.request(account, message).await {
            Err(FastPayError::Unreachable { .. }) if attempt < REQUEST_ATTEMPTS => attempt += 1,
            result => return result,
        }
    }
}

/// Sends every request with at most `in_flight` outstanding and returns the
/// wall-clock time it took for all of them to be answered.
async fn timed_phase(
    client: &NetworkAuthorityClient,
    requests: &[(Address, Message)],
    in_flight: usize,
) -> anyhow::Result<Duration> {
    let start = Instant::now();
    let results: Vec<_> = stream::iter(requests)
        .map(|(account, message)| request_retrying(client, account, message))
        .buffer_unordered(in_flight)
        .collect()
        .await;
    let elapsed = start.elapsed();
    if let Some(error) = results.into_iter().find_map(Result::err) {
        bail!("request failed during the benchmark: {error}");
    }
    Ok(elapsed)
}

/// Credits every workload account on the running authority, one
/// synchronization order at a time per shard.
async fn fund_accounts(
    client: &NetworkAuthorityClient,
    workload: &Workload,
    shards: u32,
) -> anyhow::Result<PrimaryLedgerState> {
    let mut ledger = PrimaryLedgerState::new(workload.committee.clone(), shards);
    let mut per_shard = vec![Vec::new(); shards as usize];
    for account in &workload.accounts {
        let (_, order) = ledger.fund(account.address(), Amount::new(INITIAL_FUNDING))?;
        per_shard[which_shard(&order.recipient, shards) as usize].push(order);
    }
    let tasks: FuturesUnordered<_> = per_shard
        .into_iter()
        .map(|orders| async move {
            for order in orders {
                let recipient = order.recipient;
                request_retrying(client, &recipient, &Message::SynchronizationOrder(order)).await?;
            }
            Ok::<_, FastPayError>(())
        })
        .collect();
    let results: Vec<_> = tasks.collect().await;
    for result in results {
        result?;
    }
    Ok(ledger)
}

fn row(config: &BenchConfig, phase: &str, transactions: usize, elapsed: Duration) -> ThroughputRow {
    let seconds = elapsed.as_secs_f64();
    ThroughputRow {
        shards: config.shards,
        in_flight: config.in_flight,
        phase: phase.into(),
        transactions,
        elapsed_ms: seconds * 1e3,
        tx_per_sec: transactions as f64 / seconds,
    }
}

/// Runs both throughput phases against the first authority of `workload`
/// and audits its shards afterwards.
pub async fn bench_throughput(
    config: &BenchConfig,
    workload: &Workload,
) -> anyhow::Result<(Vec<ThroughputRow>, AuditReport)> {
    config.validate()?;
    let transactions = workload.orders.len();
    let authority = match &config.shard_binary {
        Some(binary) => RunningAuthority::processes(binary, workload, config.shards, config.timeout).await?,
        None => {
            let shards = AuthorityState::new_shards(
                workload.authorities[0].name.clone(),
                workload.authorities[0].key_pair.clone(),
                workload.committee.clone(),
                config.shards,
            )?;
            RunningAuthority::in_process(shards).await?
        }
    };
    let client = authority.client(config.transport, config.timeout);
    let ledger = fund_accounts(&client, workload, config.shards).await?;

    let orders: Vec<(Address, Message)> = workload
        .orders
        .iter()
        .map(|o| (o.sender(), Message::TransferOrder(o.clone())))
        .collect();
    let transfer = timed_phase(&client, &orders, config.in_flight).await?;

    let confirmations: Vec<(Address, Message)> = workload
        .certificates
        .iter()
        .map(|c| {
            (
                c.sender(),
                Message::ConfirmationOrder(ConfirmationOrder { certificate: c.clone() }),
            )
        })
        .collect();
    let confirmation = timed_phase(&client, &confirmations, config.in_flight).await?;

    // Let cross-shard credits drain before taking the final state.
    tokio::time::sleep(Duration::from_millis(300)).await;
    let states = authority.stop().await?;
    let audit = audit_system(&states, &workload.certificates, &ledger);
    let rows = vec![
        row(config, "transfer", transactions, transfer),
        row(config, "confirmation", transactions, confirmation),
    ];
    Ok((rows, audit))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub committee_sizes: Vec<usize>,
    pub samples: usize,
    pub transport: Transport,
    /// Wait for every authority's answer instead of stopping at a quorum.
    pub wait_for_all: bool,
    pub timeout: Duration,
    pub out: Option<PathBuf>,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            committee_sizes: vec![4, 10],
            samples: 50,
            transport: Transport::Udp,
            wait_for_all: false,
            timeout: Duration::from_secs(1),
            out: None,
        }
    }
}

/// Sends one request to every authority concurrently and returns once
/// `goal` answers passed `accept` (or every authority answered).
async fn broadcast<T>(
    clients: &[NetworkAuthorityClient],
    account: &Address,
    message: &Message,
    goal: usize,
    wait_for_all: bool,
    accept: impl Fn(Message) -> Option<T>,
) -> Vec<T> {
    let mut pending: FuturesUnordered<_> = clients.iter().map(|client| client.request(account, message)).collect();
    let mut accepted = Vec::new();
    while let Some(result) = pending.next().await {
        if let Some(value) = result.ok().and_then(&accept) {
            accepted.push(value);
        }
        if accepted.len() >= goal && !wait_for_all {
            break;
        }
    }
    accepted
}

/// Certificate and confirmation latency for each committee size and each
/// number of stopped authorities from 0 to f, and one audit per committee
/// over the final shard states.
pub async fn bench_latency(config: &LatencyConfig, seed: u64) -> anyhow::Result<(Vec<LatencyRow>, Vec<AuditReport>)> {
    let mut rows = Vec::new();
    let mut audits = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &size in &config.committee_sizes {
        let workload = Workload::generate(size, 0, rng.gen())?;
        let committee = &workload.committee;
        let quorum = committee.quorum_threshold();
        let mut running = Vec::new();
        for authority in &workload.authorities {
            let shards =
                AuthorityState::new_shards(authority.name.clone(), authority.key_pair.clone(), committee.clone(), 1)?;
            running.push(Some(RunningAuthority::in_process(shards).await?));
        }
        let clients: Vec<NetworkAuthorityClient> = running
            .iter()
            .map(|r| r.as_ref().expect("running").client(config.transport, config.timeout))
            .collect();
        let mut ledger = PrimaryLedgerState::new(committee.clone(), 1);
        let mut certificates = Vec::new();
        let mut states = Vec::new();
        for fail_count in 0..=committee.faults_tolerated() {
            // Stop the last `fail_count` authorities.
            for slot in running.iter_mut().rev().take(fail_count) {
                if let Some(authority) = slot.take() {
                    states.extend(authority.stop().await?);
                }
            }
            let live = &clients[..size - fail_count];
            for sample in 0..config.samples {
                let account = KeyPair::generate(&mut rng);
                let (_, order) = ledger.fund(account.address(), Amount::new(10))?;
                let funding = Message::SynchronizationOrder(order);
                for client in live {
                    request_retrying(client, &account.address(), &funding).await?;
                }
                let order = TransferOrder::new(
                    Transfer {
                        sender: account.address(),
                        sender_key: account.public(),
                        recipient: Recipient::FastPay(Address::from_bytes([7; 32])),
                        amount: Amount::new(1),
                        sequence: SequenceNumber::default(),
                        user_data: None,
                    },
                    &account,
                )?;

                let start = Instant::now();
                let votes = broadcast(
                    &clients,
                    &account.address(),
                    &Message::TransferOrder(order.clone()),
                    quorum,
                    config.wait_for_all,
                    |reply| match reply {
                        Message::Vote(vote) if vote.check(committee).is_ok() => Some(vote),
                        _ => None,
                    },
                )
                .await;
                let certificate = make_certificate(&order, &votes, committee)
                    .with_context(|| format!("{} live authorities", live.len()))?;
                let certified = start.elapsed();

                certificates.push(certificate.clone());
                let confirmation = Message::ConfirmationOrder(ConfirmationOrder { certificate });
                let start = Instant::now();
                let confirmed = broadcast(
                    &clients,
                    &account.address(),
                    &confirmation,
                    quorum,
                    config.wait_for_all,
                    |reply| matches!(reply, Message::AccountInfo(_)).then_some(()),
                )
                .await;
                if confirmed.len() < quorum {
                    bail!("only {} confirmations", confirmed.len());
                }
                let settled = start.elapsed();
                for (phase, elapsed) in [("certificate", certified), ("confirmation", settled)] {
                    rows.push(LatencyRow {
                        authorities: size,
                        fail_count,
                        phase: phase.into(),
                        sample,
                        ms: elapsed.as_secs_f64() * 1e3,
                    });
                }
            }
        }
        for authority in running.into_iter().flatten() {
            states.extend(authority.stop().await?);
        }
        audits.push(audit_system(&states, &certificates, &ledger));
    }
    Ok((rows, audits))
}

/// Median of the `phase` samples for one configuration, in milliseconds.
pub fn median_latency(rows: &[LatencyRow], authorities: usize, fail_count: usize, phase: &str) -> Option<f64> {
    let mut samples: Vec<f64> = rows
        .iter()
        .filter(|r| r.authorities == authorities && r.fail_count == fail_count && r.phase == phase)
        .map(|r| r.ms)
        .collect();
    if samples.is_empty() {
        return None;
    }
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    Some(if samples.len().is_multiple_of(2) {
        (samples[mid - 1] + samples[mid]) / 2.0
    } else {
        samples[mid]
    })
}

/// Writes `rows` to `path` if one is configured.
pub fn save_rows<T: Serialize>(path: Option<&Path>, rows: &[T]) -> anyhow::Result<()> {
    if let Some(path) = path {
        write_csv(path, rows)?;
    }
    Ok(())
}
