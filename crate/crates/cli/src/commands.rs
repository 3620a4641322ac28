// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Subcommands of the `fastpay` binary.
//!
//! State lives in JSON files: the committee configuration, one key file per
//! authority, one wallet per user and the emulated Primary ledger.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fastpay_core::audit::{audit_system, AuditReport};
use fastpay_core::authority::AuthorityState;
use fastpay_core::client::{ClientState, WalletState};
use fastpay_core::network::{serve_shard, CommitteeConfig, Message, NetworkAuthorityClient, Transport};
use fastpay_core::primary::PrimaryLedgerState;
use fastpay_core::{
    AccountInfoRequest, Address, Amount, CertifiedTransferOrder, KeyPair, Recipient, RedeemTransaction,
};
use futures::future::join_all;
use rand::rngs::OsRng;
use serde::Serialize;

use crate::bench::{bench_latency, bench_throughput, save_rows, BenchConfig, LatencyConfig, Workload};
use crate::setup::{generate_committee, read_json, write_json, AuthorityKeyFile};

#[derive(Debug, Parser)]
#[command(name = "fastpay", version, about = "Run, use and benchmark a FastPay committee")]
pub struct Cli {
    /// Output format for results.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a wallet file with a fresh key pair and print its address.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a committee configuration and one key file per authority.
    Committee {
        #[arg(long, default_value_t = 1)]
        faults: usize,
        #[arg(long, default_value_t = 1)]
        shards: u32,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 9100)]
        base_port: u16,
        /// Committee configuration to write.
        #[arg(long)]
        out: PathBuf,
        /// Directory for the authority key files.
        #[arg(long)]
        keys_dir: PathBuf,
    },
    /// Serve one shard of one authority.
    RunShard {
        #[arg(long)]
        committee: PathBuf,
        /// Key file of the authority.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        shard: u32,
        /// Resume from a state file written by an earlier run.
        #[arg(long)]
        state_in: Option<PathBuf>,
        /// Write the shard state here on shutdown.
        #[arg(long)]
        state_out: Option<PathBuf>,
        /// Shut down when standard input is closed, not only on Ctrl-C.
        #[arg(long)]
        stop_on_stdin_eof: bool,
    },
    /// Deposit on the Primary for a FastPay account and notify the authorities.
    Fund {
        #[arg(long)]
        primary: PathBuf,
        #[arg(long)]
        to: Address,
        #[arg(long)]
        amount: u64,
        /// Also push the synchronization order to this committee.
        #[arg(long)]
        committee: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Pay another account and write the certificate for the recipient.
    Transfer {
        #[command(flatten)]
        wallet: WalletArgs,
        #[arg(long)]
        to: Address,
        #[arg(long)]
        amount: u64,
        /// Pay the recipient's Primary account instead of its FastPay account.
        #[arg(long)]
        to_primary: bool,
        #[arg(long)]
        certificate_out: Option<PathBuf>,
    },
    /// Settle a certificate paying this wallet.
    Receive {
        #[command(flatten)]
        wallet: WalletArgs,
        #[arg(long)]
        certificate: PathBuf,
    },
    /// Bring every authority up to date with this wallet's account.
    Sync {
        #[command(flatten)]
        wallet: WalletArgs,
    },
    /// Print the spendable balance of a wallet.
    Balance {
        #[command(flatten)]
        wallet: WalletArgs,
        /// Skip contacting the committee.
        #[arg(long)]
        offline: bool,
    },
    /// Pay out on the Primary: either an existing certificate, or a fresh
    /// transfer of `--amount` from the wallet to its own Primary account.
    Redeem {
        #[arg(long)]
        primary: PathBuf,
        #[arg(long, conflicts_with_all = ["amount", "wallet"])]
        certificate: Option<PathBuf>,
        #[arg(long, requires = "wallet")]
        amount: Option<u64>,
        #[arg(long)]
        wallet: Option<PathBuf>,
        #[arg(long)]
        committee: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Audit shard state files against the Primary ledger.
    Audit {
        #[arg(long)]
        primary: PathBuf,
        /// Shard state files written by `run-shard --state-out`.
        #[arg(long = "state", required = true)]
        states: Vec<PathBuf>,
    },
    /// Show what each authority knows about an account.
    QueryAuthority {
        #[arg(long)]
        committee: PathBuf,
        #[arg(long)]
        account: Address,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Transfer and confirmation throughput of one authority's shards.
    BenchThroughput {
        #[arg(long, default_value_t = 4)]
        num_authorities: usize,
        #[arg(long, default_value_t = 1)]
        shards: u32,
        #[arg(long, default_value_t = 10_000)]
        num_transactions: usize,
        #[arg(long, default_value_t = 1000)]
        in_flight: usize,
        #[arg(long, default_value_t = Transport::Udp)]
        transport: Transport,
        /// CSV file for the results.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the shards in this process instead of as `run-shard` processes.
        #[arg(long)]
        in_process: bool,
        #[arg(long, default_value_t = 1000)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Certificate and confirmation latency with crashed authorities.
    BenchLatency {
        #[arg(long, value_delimiter = ',', default_values_t = [4, 10])]
        committee_sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = Transport::Udp)]
        transport: Transport,
        #[arg(long)]
        wait_for_all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Debug, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = Transport::Udp)]
    pub transport: Transport,
    /// Per-request timeout.
    #[arg(long, default_value_t = 1000)]
    pub timeout_ms: u64,
}

impl NetArgs {
    fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Clone, Debug, Args)]
pub struct WalletArgs {
    #[arg(long)]
    pub wallet: PathBuf,
    #[arg(long)]
    pub committee: PathBuf,
    /// Primary ledger file; funding recorded there counts toward the balance.
    #[arg(long)]
    pub primary: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
}

type NetworkClient = ClientState<NetworkAuthorityClient>;

impl WalletArgs {
    fn open(&self) -> anyhow::Result<NetworkClient> {
        let wallet =
            WalletState::load(&self.wallet).with_context(|| format!("reading wallet {}", self.wallet.display()))?;
        open_client(
            wallet,
            &self.committee,
            self.primary.as_deref(),
            &self.net,
            &self.wallet,
        )
    }
}

fn open_client(
    wallet: WalletState,
    committee: &Path,
    primary: Option<&Path>,
    net: &NetArgs,
    wallet_path: &Path,
) -> anyhow::Result<NetworkClient> {
    let config = CommitteeConfig::load(committee)?;
    let mut client = ClientState::from_wallet(
        wallet,
        config.committee()?,
        config.number_of_shards(),
        config.clients(net.transport, net.timeout())?,
    );
    if let Some(primary) = primary {
        if primary.exists() {
            client.observe_primary(&load_primary(primary)?);
        }
    }
    client.set_checkpoint_path(Some(wallet_path.to_path_buf()));
    Ok(client)
}

fn load_primary(path: &Path) -> anyhow::Result<PrimaryLedgerState> {
    PrimaryLedgerState::load(path).with_context(|| format!("reading Primary ledger {}", path.display()))
}

/// Prints `text`, or `rows` as JSON or CSV.
fn emit<T: Serialize>(format: Format, text: impl Display, rows: &[T]) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match format {
        Format::Text => writeln!(stdout, "{text}")?,
        Format::Json if rows.len() == 1 => writeln!(stdout, "{}", serde_json::to_string_pretty(&rows[0])?)?,
        Format::Json => writeln!(stdout, "{}", serde_json::to_string_pretty(rows)?)?,
        Format::Csv => {
            let mut writer = csv::Writer::from_writer(stdout);
            for row in rows {
                writer.serialize(row)?;
            }
            writer.flush()?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AccountRow {
    address: Address,
    balance: i64,
}

#[derive(Serialize)]
struct CertificateRow {
    sender: Address,
    sequence: u64,
    recipient: Address,
    to_primary: bool,
    amount: u64,
}

impl CertificateRow {
    fn new(certificate: &CertifiedTransferOrder) -> Self {
        CertificateRow {
            sender: certificate.sender(),
            sequence: certificate.sequence().value(),
            recipient: certificate.recipient().address(),
            to_primary: matches!(certificate.recipient(), Recipient::Primary(_)),
            amount: certificate.amount().value(),
        }
    }
}

#[derive(Serialize)]
struct FundRow {
    recipient: Address,
    amount: u64,
    transaction_index: u64,
    shard: u32,
    shard_index: u64,
    authorities_notified: usize,
}

#[derive(Serialize)]
struct RedeemRow {
    sender: Address,
    sequence: u64,
    recipient: Address,
    amount: u64,
    primary_balance: u64,
}

#[derive(Serialize)]
struct AuthorityRow {
    authority: String,
    balance: Option<i64>,
    next_sequence: Option<u64>,
    pending: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct AuditRow {
    authorities_checked: usize,
    accounts_checked: usize,
    certificates_checked: usize,
    violations: usize,
}

fn balance_row(address: Address, balance: fastpay_core::Balance) -> anyhow::Result<AccountRow> {
    Ok(AccountRow {
        address,
        balance: i64::try_from(balance.value()).context("balance out of range")?,
    })
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let format = cli.format;
    match cli.command {
        Command::Keygen { out } => {
            if out.exists() {
                bail!("{} already exists", out.display());
            }
            let wallet = WalletState::new(KeyPair::generate(&mut OsRng));
            wallet.save(&out)?;
            let address = wallet.key_pair.address();
            emit(format, address, &[AccountRow { address, balance: 0 }])
        }
        Command::Committee {
            faults,
            shards,
            host,
            base_port,
            out,
            keys_dir,
        } => {
            let (config, keys) = generate_committee(&mut OsRng, faults, shards, &host, base_port)?;
            std::fs::create_dir_all(&keys_dir)?;
            for key in &keys {
                key.save(&keys_dir.join(format!("{}.json", key.name)))?;
            }
            config.save(&out)?;
            let text = format!(
                "wrote {} with {} authorities of {shards} shards, keys in {}",
                out.display(),
                keys.len(),
                keys_dir.display()
            );
            emit(format, text, &[config])
        }
        Command::RunShard {
            committee,
            key,
            shard,
            state_in,
            state_out,
            stop_on_stdin_eof,
        } => runtime()?.block_on(run_shard(committee, key, shard, state_in, state_out, stop_on_stdin_eof)),
        Command::Fund {
            primary,
            to,
            amount,
            committee,
            net,
        } => {
            let mut ledger = if primary.exists() {
                load_primary(&primary)?
            } else {
                let config = match &committee {
                    Some(path) => CommitteeConfig::load(path)?,
                    None => bail!("a new Primary ledger needs --committee"),
                };
                PrimaryLedgerState::new(config.committee()?, config.number_of_shards())
            };
            let (transaction, order) = ledger.fund(to, Amount::new(amount))?;
            ledger.save(&primary)?;
            let mut notified = 0;
            if let Some(path) = committee {
                let config = CommitteeConfig::load(&path)?;
                let clients = config.clients(net.transport, net.timeout())?;
                let message = Message::SynchronizationOrder(order);
                let replies = runtime()?.block_on(join_all(clients.values().map(|c| c.request(&to, &message))));
                notified = replies
                    .iter()
                    .filter(|r| matches!(r, Ok(Message::AccountInfo(_))))
                    .count();
            }
            let text = format!(
                "funded {to} with {amount} (transaction {}), {notified} authorities notified",
                transaction.transaction_index
            );
            emit(
                format,
                text,
                &[FundRow {
                    recipient: to,
                    amount,
                    transaction_index: transaction.transaction_index,
                    shard: transaction.shard_id,
                    shard_index: transaction.shard_index,
                    authorities_notified: notified,
                }],
            )
        }
        Command::Transfer {
            wallet,
            to,
            amount,
            to_primary,
            certificate_out,
        } => {
            let mut client = wallet.open()?;
            let recipient = if to_primary {
                Recipient::Primary(to)
            } else {
                Recipient::FastPay(to)
            };
            let certificate = runtime()?.block_on(async {
                // Finish anything a previous run left behind first.
                client.resume_pending().await?;
                client.transfer(recipient, Amount::new(amount), None).await
            })?;
            client.wallet().save(&wallet.wallet)?;
            if let Some(path) = &certificate_out {
                write_json(path, &certificate)?;
            }
            let text = format!("transferred {amount} to {to} at sequence {}", certificate.sequence());
            emit(format, text, &[CertificateRow::new(&certificate)])
        }
        Command::Receive { wallet, certificate } => {
            let mut client = wallet.open()?;
            let certificate: CertifiedTransferOrder = read_json(&certificate)?;
            runtime()?.block_on(client.receive_certificate(certificate.clone()))?;
            client.wallet().save(&wallet.wallet)?;
            let text = format!(
                "received {} from {}; spendable balance {}",
                certificate.amount(),
                certificate.sender(),
                client.spendable_balance()
            );
            emit(format, text, &[CertificateRow::new(&certificate)])
        }
        Command::Sync { wallet } => {
            let client = wallet.open()?;
            runtime()?.block_on(client.sync_account())?;
            let row = balance_row(client.address(), client.spendable_balance())?;
            emit(format, format!("synchronized {}", client.address()), &[row])
        }
        Command::Balance { wallet, offline } => {
            let mut client = wallet.open()?;
            if !offline {
                runtime()?.block_on(client.resume_pending())?;
                client.wallet().save(&wallet.wallet)?;
            }
            let balance = client.spendable_balance();
            emit(format, balance, &[balance_row(client.address(), balance)?])
        }
        Command::Redeem {
            primary,
            certificate,
            amount,
            wallet,
            committee,
            net,
        } => {
            let mut ledger = load_primary(&primary)?;
            let certificate: CertifiedTransferOrder = match (certificate, amount, wallet) {
                (Some(path), _, _) => read_json(&path)?,
                (None, Some(amount), Some(wallet_path)) => {
                    let Some(committee) = committee else {
                        bail!("redeeming from a wallet needs --committee");
                    };
                    let wallet = WalletState::load(&wallet_path)?;
                    let mut client = open_client(wallet, &committee, Some(&primary), &net, &wallet_path)?;
                    let own = Recipient::Primary(client.address());
                    let certificate = runtime()?.block_on(async {
                        client.resume_pending().await?;
                        client.transfer(own, Amount::new(amount), None).await
                    })?;
                    client.wallet().save(&wallet_path)?;
                    certificate
                }
                _ => bail!("give either --certificate or --wallet with --amount"),
            };
            let paid = ledger.redeem(RedeemTransaction {
                certificate: certificate.clone(),
            })?;
            ledger.save(&primary)?;
            let recipient = certificate.recipient().address();
            let row = RedeemRow {
                sender: certificate.sender(),
                sequence: certificate.sequence().value(),
                recipient,
                amount: paid.value(),
                primary_balance: ledger.primary_balance(&recipient).value(),
            };
            let text = format!("paid {paid} to {recipient} on the Primary");
            emit(format, text, &[row])
        }
        Command::Audit { primary, states } => {
            let ledger = load_primary(&primary)?;
            let states: Vec<AuthorityState> = states
                .iter()
                .map(|path| read_json(path))
                .collect::<anyhow::Result<_>>()?;
            let report = audit_states(&states, &ledger);
            let row = AuditRow {
                authorities_checked: report.authorities_checked,
                accounts_checked: report.accounts_checked,
                certificates_checked: report.certificates_checked,
                violations: report.violations.len(),
            };
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                _ => emit(format, &report, &[row])?,
            }
            if !report.is_ok() {
                bail!("{} audit violations", report.violations.len());
            }
            Ok(())
        }
        Command::QueryAuthority {
            committee,
            account,
            net,
        } => {
            let config = CommitteeConfig::load(&committee)?;
            let clients = config.clients(net.transport, net.timeout())?;
            let request = Message::AccountInfoRequest(AccountInfoRequest::new(account));
            let replies = runtime()?.block_on(join_all(clients.values().map(|c| c.request(&account, &request))));
            let rows: Vec<AuthorityRow> = clients
                .keys()
                .zip(replies)
                .map(|(name, reply)| match reply {
                    Ok(Message::AccountInfo(info)) => AuthorityRow {
                        authority: name.to_string(),
                        balance: i64::try_from(info.balance.value()).ok(),
                        next_sequence: Some(info.next_sequence.value()),
                        pending: info.pending.is_some(),
                        error: None,
                    },
                    Ok(Message::Error(error)) | Err(error) => AuthorityRow {
                        authority: name.to_string(),
                        balance: None,
                        next_sequence: None,
                        pending: false,
                        error: Some(error.to_string()),
                    },
                    Ok(other) => AuthorityRow {
                        authority: name.to_string(),
                        balance: None,
                        next_sequence: None,
                        pending: false,
                        error: Some(format!("unexpected reply kind {:#04x}", other.kind())),
                    },
                })
                .collect();
            let text: Vec<String> = rows
                .iter()
                .map(|r| match (&r.error, r.balance, r.next_sequence) {
                    (Some(error), _, _) => format!("{}: {error}", r.authority),
                    (None, balance, sequence) => format!(
                        "{}: balance {} next sequence {}{}",
                        r.authority,
                        balance.unwrap_or_default(),
                        sequence.unwrap_or_default(),
                        if r.pending { " (pending order)" } else { "" }
                    ),
                })
                .collect();
            match format {
                // One entry per authority, even for a committee of one.
                Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
                _ => emit(format, text.join("\n"), &rows)?,
            }
            Ok(())
        }
        Command::BenchThroughput {
            num_authorities,
            shards,
            num_transactions,
            in_flight,
            transport,
            out,
            in_process,
            timeout_ms,
            seed,
        } => {
            let shard_binary = if in_process {
                None
            } else {
                Some(std::env::current_exe()?)
            };
            let config = BenchConfig {
                num_authorities,
                shards,
                num_transactions,
                in_flight,
                transport,
                out,
                shard_binary,
                timeout: Duration::from_millis(timeout_ms),
            };
            config.validate()?;
            let workload = Workload::generate(num_authorities, num_transactions, seed)?;
            let (rows, audit) = runtime()?.block_on(bench_throughput(&config, &workload))?;
            save_rows(config.out.as_deref(), &rows)?;
            let text: Vec<String> = rows
                .iter()
                .map(|r| {
                    format!(
                        "{} shards, in-flight {}: {} {:.0} tx/s ({} tx in {:.1} ms)",
                        r.shards, r.in_flight, r.phase, r.tx_per_sec, r.transactions, r.elapsed_ms
                    )
                })
                .collect();
            emit(format, text.join("\n"), &rows)?;
            if !audit.is_ok() {
                bail!("audit after the benchmark failed:\n{audit}");
            }
            Ok(())
        }
        Command::BenchLatency {
            committee_sizes,
            samples,
            transport,
            wait_for_all,
            out,
            timeout_ms,
            seed,
        } => {
            let config = LatencyConfig {
                committee_sizes,
                samples,
                transport,
                wait_for_all,
                timeout: Duration::from_millis(timeout_ms),
                out,
            };
            let (rows, audits) = runtime()?.block_on(bench_latency(&config, seed))?;
            save_rows(config.out.as_deref(), &rows)?;
            if let Some(audit) = audits.iter().find(|a| !a.is_ok()) {
                bail!("audit after the benchmark failed:\n{audit}");
            }
            let mut medians = Vec::new();
            let mut seen = BTreeMap::new();
            for row in &rows {
                seen.insert((row.authorities, row.fail_count, row.phase.clone()), ());
            }
            for (authorities, fail_count, phase) in seen.into_keys() {
                let median = crate::bench::median_latency(&rows, authorities, fail_count, &phase).unwrap_or_default();
                medians.push(format!(
                    "{authorities} authorities, {fail_count} stopped: {phase} median {median:.2} ms"
                ));
            }
            emit(format, medians.join("\n"), &rows)
        }
    }
}

/// Audits shard states, taking the certificates to check from their logs.
pub fn audit_states(states: &[AuthorityState], ledger: &PrimaryLedgerState) -> AuditReport {
    let mut certificates: Vec<CertifiedTransferOrder> = states
        .iter()
        .flat_map(|s| s.accounts.values())
        .flat_map(|a| a.confirmed.iter().chain(&a.received))
        .cloned()
        .collect();
    certificates.extend(ledger.redemptions.iter().cloned());
    audit_system(states, &certificates, ledger)
}

async fn run_shard(
    committee: PathBuf,
    key: PathBuf,
    shard: u32,
    state_in: Option<PathBuf>,
    state_out: Option<PathBuf>,
    stop_on_stdin_eof: bool,
) -> anyhow::Result<()> {
    let config = CommitteeConfig::load(&committee)?;
    let key = AuthorityKeyFile::load(&key)?;
    let endpoint = config
        .endpoint(&key.name, shard)
        .with_context(|| format!("{} has no shard {shard}", key.name))?;
    let address = endpoint.bind_address()?;
    let state = match state_in {
        Some(path) if path.exists() => read_json(&path)?,
        _ => AuthorityState::new(
            key.name.clone(),
            key.key_pair.clone(),
            config.committee()?,
            shard,
            config.number_of_shards(),
        )?,
    };
    let peers = config
        .shard_addresses(&key.name)?
        .into_iter()
        .enumerate()
        .map(|(id, address)| (id as u32, address))
        .collect();
    let shutdown = async move {
        let stdin_closed = async {
            if stop_on_stdin_eof {
                let mut sink = Vec::new();
                let _ = tokio::io::AsyncReadExt::read_to_end(&mut tokio::io::stdin(), &mut sink).await;
            } else {
                std::future::pending::<()>().await;
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = stdin_closed => {}
        }
    };
    log::info!("{} shard {shard} listening on {address}", key.name);
    let state = serve_shard(state, address, peers, shutdown).await?;
    if let Some(path) = state_out {
        write_json(&path, &state)?;
    }
    Ok(())
}
