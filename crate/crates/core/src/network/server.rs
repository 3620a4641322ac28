// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! One authority shard behind a UDP socket and a TCP listener on the same
//! port. Every envelope is dispatched under one lock, so the state machine
//! sees requests one at a time.

use std::collections::BTreeMap;
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{dispatch, Message, MAX_DATAGRAM, MAX_FRAME};
use crate::authority::AuthorityState;
use crate::base_types::ShardId;
use crate::error::FastPayError;
use crate::messages::CrossShardUpdate;

/// How often unacknowledged cross-shard updates are resent.
const RETRANSMIT_INTERVAL: Duration = Duration::from_millis(100);
/// Requested UDP receive buffer. The kernel caps it at `net.core.rmem_max`;
/// the usual default (~200 KiB) holds fewer than a thousand orders.
const RECEIVE_BUFFER: usize = 4 << 20;

type SharedState = Arc<Mutex<AuthorityState>>;

/// A running shard server.
pub struct ShardHandle {
    pub address: SocketAddr,
    shutdown: oneshot::Sender<()>,
    join: JoinHandle<io::Result<AuthorityState>>,
}

impl ShardHandle {
    /// Stops the server and returns the shard's final state.
    pub async fn stop(self) -> io::Result<AuthorityState> {
        let _ = self.shutdown.send(());
        self.join.await.map_err(io::Error::other)?
    }
}

/// Binds UDP and TCP on one port. With port 0 the OS picks a port that is
/// free for both.
async fn bind(address: SocketAddr) -> io::Result<(UdpSocket, TcpListener)> {
    let mut last_error = None;
    for _ in 0..16 {
        let udp = bind_udp(address)?;
        match TcpListener::bind(udp.local_addr()?).await {
            Ok(tcp) => return Ok((udp, tcp)),
            Err(error) if address.port() == 0 => last_error = Some(error),
            Err(error) => return Err(error),
        }
    }
    Err(last_error.expect("at least one attempt"))
}

fn bind_udp(address: SocketAddr) -> io::Result<UdpSocket> {
    let socket = socket2::Socket::new(
        socket2::Domain::for_address(address),
        socket2::Type::DGRAM,
        Some(socket2::Protocol::UDP),
    )?;
    if let Err(error) = socket.set_recv_buffer_size(RECEIVE_BUFFER) {
        log::warn!("cannot enlarge the UDP receive buffer: {error}");
    }
    socket.set_nonblocking(true)?;
    socket.bind(&address.into())?;
    UdpSocket::from_std(socket.into())
}

/// Binds `address` and serves the shard on a background task. `peers` maps
/// sibling shard ids to their addresses; it may be filled in later through
/// the returned handle's owner (see [`spawn_shards`]).
pub async fn spawn_shard(
    state: AuthorityState,
    address: SocketAddr,
    peers: Arc<Mutex<BTreeMap<ShardId, SocketAddr>>>,
) -> io::Result<ShardHandle> {
    let (udp, tcp) = bind(address).await?;
    let address = udp.local_addr()?;
    let (shutdown, stop) = oneshot::channel();
    let join = tokio::spawn(run(state, udp, tcp, peers, async {
        let _ = stop.await;
    }));
    Ok(ShardHandle {
        address,
        shutdown,
        join,
    })
}

/// Starts every shard of one authority on `host` with OS-chosen ports and
/// wires their cross-shard channels together.
pub async fn spawn_shards(shards: Vec<AuthorityState>, host: std::net::IpAddr) -> io::Result<Vec<ShardHandle>> {
    let peers = Arc::new(Mutex::new(BTreeMap::new()));
    let mut handles = Vec::new();
    for state in shards {
        let shard_id = state.shard_id;
        let handle = spawn_shard(state, SocketAddr::new(host, 0), peers.clone()).await?;
        peers.lock().expect("peer table").insert(shard_id, handle.address);
        handles.push(handle);
    }
    Ok(handles)
}

/// Serves one shard at `address` until `shutdown` resolves, then returns
/// its state.
pub async fn serve_shard(
    state: AuthorityState,
    address: SocketAddr,
    peers: BTreeMap<ShardId, SocketAddr>,
    shutdown: impl Future<Output = ()>,
) -> io::Result<AuthorityState> {
    let (udp, tcp) = bind(address).await?;
    run(state, udp, tcp, Arc::new(Mutex::new(peers)), shutdown).await
}

async fn run(
    state: AuthorityState,
    udp: UdpSocket,
    tcp: TcpListener,
    peers: Arc<Mutex<BTreeMap<ShardId, SocketAddr>>>,
    shutdown: impl Future<Output = ()>,
) -> io::Result<AuthorityState> {
    let state: SharedState = Arc::new(Mutex::new(state));
    let udp = Arc::new(udp);
    let mut retransmit = tokio::time::interval(RETRANSMIT_INTERVAL);
    let mut buf = vec![0u8; 64 * 1024];
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            received = udp.recv_from(&mut buf) => {
                let Ok((length, source)) = received else { continue };
                let outcome = dispatch(&mut state.lock().expect("shard state"), &buf[..length]);
                if let Some(mut reply) = outcome.reply {
                    if reply.len() > MAX_DATAGRAM {
                        reply = Message::Error(FastPayError::ResponseTooLarge).to_envelope();
                    }
                    let _ = udp.send_to(&reply, source).await;
                }
                if let Some(update) = outcome.cross_shard {
                    forward(&udp, &peers, &update).await;
                }
            }
            accepted = tcp.accept() => {
                if let Ok((stream, _)) = accepted {
                    tokio::spawn(serve_stream(stream, state.clone(), udp.clone(), peers.clone()));
                }
            }
            _ = retransmit.tick() => {
                let updates = state.lock().expect("shard state").unacknowledged_updates();
                for update in &updates {
                    forward(&udp, &peers, update).await;
                }
            }
        }
    }
    let state = state.lock().expect("shard state").clone();
    Ok(state)
}

async fn forward(udp: &UdpSocket, peers: &Mutex<BTreeMap<ShardId, SocketAddr>>, update: &CrossShardUpdate) {
    let peer = peers.lock().expect("peer table").get(&update.shard_id).copied();
    match peer {
        Some(peer) => {
            let envelope = Message::CrossShardUpdate(update.clone()).to_envelope();
            if let Err(error) = udp.send_to(&envelope, peer).await {
                log::warn!("cross-shard update to shard {}: {error}", update.shard_id);
            }
        }
        None => log::warn!("no address for shard {}", update.shard_id),
    }
}

/// Length-prefixed envelopes over one TCP connection.
async fn serve_stream(
    mut stream: TcpStream,
    state: SharedState,
    udp: Arc<UdpSocket>,
    peers: Arc<Mutex<BTreeMap<ShardId, SocketAddr>>>,
) {
    loop {
        let Ok(frame) = read_frame(&mut stream).await else {
            return;
        };
        let outcome = dispatch(&mut state.lock().expect("shard state"), &frame);
        if let Some(update) = outcome.cross_shard {
            forward(&udp, &peers, &update).await;
        }
        let Some(reply) = outcome.reply else {
            return;
        };
        if write_frame(&mut stream, &reply).await.is_err() {
            return;
        }
    }
}

pub(super) async fn read_frame(stream: &mut TcpStream) -> io::Result<Vec<u8>> {
    let length = stream.read_u32_le().await? as usize;
    if length > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut frame = vec![0u8; length];
    stream.read_exact(&mut frame).await?;
    Ok(frame)
}

pub(super) async fn write_frame(stream: &mut TcpStream, bytes: &[u8]) -> io::Result<()> {
    let length =
        u32::try_from(bytes.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut out = Vec::with_capacity(4 + bytes.len());
    out.extend_from_slice(&length.to_le_bytes());
    out.extend_from_slice(bytes);
    stream.write_all(&out).await
}
