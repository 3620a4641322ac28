// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! [`AuthorityClient`] over UDP, falling back to TCP for large messages.

use std::fmt;
use std::io;
use std::net::SocketAddr;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::net::{TcpStream, UdpSocket};

use super::server::{read_frame, write_frame};
use super::{Message, MAX_DATAGRAM};
use crate::authority::which_shard;
use crate::base_types::Address;
use crate::client::AuthorityClient;
use crate::error::FastPayError;
use crate::messages::{
    AccountInfoRequest, AccountInfoResponse, ConfirmationOrder, PrimarySynchronizationOrder, SignedTransferOrder,
    TransferOrder,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Udp,
    Tcp,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "udp" => Ok(Transport::Udp),
            "tcp" => Ok(Transport::Tcp),
            other => Err(format!("unknown transport `{other}` (udp or tcp)")),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Udp => "udp",
            Transport::Tcp => "tcp",
        })
    }
}

fn unreachable(error: impl fmt::Display) -> FastPayError {
    FastPayError::Unreachable {
        reason: error.to_string(),
    }
}

/// Client side of one authority: routes each request to the shard that
/// owns its account.
#[derive(Clone, Debug)]
pub struct NetworkAuthorityClient {
    shards: Vec<SocketAddr>,
    transport: Transport,
    timeout: Duration,
}

impl NetworkAuthorityClient {
    pub fn new(shards: Vec<SocketAddr>, transport: Transport, timeout: Duration) -> Self {
        assert!(!shards.is_empty(), "an authority has at least one shard");
        NetworkAuthorityClient {
            shards,
            transport,
            timeout,
        }
    }

    pub fn shard_address(&self, account: &Address) -> SocketAddr {
        self.shards[which_shard(account, self.shards.len() as u32) as usize]
    }

    /// Sends `message` to the shard of `account` and returns the answer.
    /// Error envelopes become `Err`.
    pub async fn request(&self, account: &Address, message: &Message) -> Result<Message, FastPayError> {
        let address = self.shard_address(account);
        let envelope = message.to_envelope();
        let reply = if self.transport == Transport::Udp && envelope.len() <= MAX_DATAGRAM {
            match datagram_round_trip(address, &envelope, self.timeout).await? {
                Message::Error(FastPayError::ResponseTooLarge) => {
                    stream_round_trip(address, &envelope, self.timeout).await?
                }
                reply => reply,
            }
        } else {
            stream_round_trip(address, &envelope, self.timeout).await?
        };
        match reply {
            Message::Error(error) => Err(error),
            reply => Ok(reply),
        }
    }

    async fn request_info(&self, account: &Address, message: Message) -> Result<AccountInfoResponse, FastPayError> {
        match self.request(account, &message).await? {
            Message::AccountInfo(info) => Ok(info),
            _ => Err(FastPayError::UnexpectedResponse),
        }
    }
}

async fn datagram_round_trip(address: SocketAddr, envelope: &[u8], timeout: Duration) -> Result<Message, FastPayError> {
    let local: SocketAddr = if address.is_ipv4() {
        "0.0.0.0:0".parse().expect("literal")
    } else {
        "[::]:0".parse().expect("literal")
    };
    let socket = UdpSocket::bind(local).await.map_err(unreachable)?;
    socket.connect(address).await.map_err(unreachable)?;
    socket.send(envelope).await.map_err(unreachable)?;
    let mut buf = vec![0u8; 64 * 1024];
    let receive = async {
        loop {
            let length = socket.recv(&mut buf).await?;
            // Anything undecodable is noise; keep waiting.
            if let Ok(message) = Message::from_envelope(&buf[..length]) {
                return Ok::<_, io::Error>(message);
            }
        }
    };
    tokio::time::timeout(timeout, receive)
        .await
        .map_err(|_| unreachable(format!("no reply from {address}")))?
        .map_err(unreachable)
}

async fn stream_round_trip(address: SocketAddr, envelope: &[u8], timeout: Duration) -> Result<Message, FastPayError> {
    let exchange = async {
        let mut stream = TcpStream::connect(address).await?;
        stream.set_nodelay(true)?;
        write_frame(&mut stream, envelope).await?;
        read_frame(&mut stream).await
    };
    let frame = tokio::time::timeout(timeout, exchange)
        .await
        .map_err(|_| unreachable(format!("no reply from {address}")))?
        .map_err(unreachable)?;
    Message::from_envelope(&frame)
}

impl AuthorityClient for NetworkAuthorityClient {
    async fn handle_transfer_order(&self, order: TransferOrder) -> Result<SignedTransferOrder, FastPayError> {
        let sender = order.sender();
        match self.request(&sender, &Message::TransferOrder(order)).await? {
            Message::Vote(vote) => Ok(vote),
            _ => Err(FastPayError::UnexpectedResponse),
        }
    }

    async fn handle_confirmation_order(&self, order: ConfirmationOrder) -> Result<AccountInfoResponse, FastPayError> {
        let sender = order.certificate.sender();
        self.request_info(&sender, Message::ConfirmationOrder(order)).await
    }

    async fn handle_account_info_request(
        &self,
        request: AccountInfoRequest,
    ) -> Result<AccountInfoResponse, FastPayError> {
        let account = request.account;
        self.request_info(&account, Message::AccountInfoRequest(request)).await
    }

    async fn handle_primary_synchronization_order(
        &self,
        order: PrimarySynchronizationOrder,
    ) -> Result<AccountInfoResponse, FastPayError> {
        let recipient = order.recipient;
        self.request_info(&recipient, Message::SynchronizationOrder(order))
            .await
    }

    async fn sleep(&self, duration: Duration) {
        tokio::time::sleep(duration).await
    }
}
