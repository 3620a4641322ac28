// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Committee configuration file: who the authorities are and where each of
//! their shards listens.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::client::{NetworkAuthorityClient, Transport};
use crate::base_types::{AuthorityName, Committee, PublicKeyBytes, ShardId};
use crate::error::FastPayError;

/// Overrides the host a shard server binds to (the advertised host is
/// still the one in the configuration).
pub const BIND_HOST_ENV: &str = "FASTPAY_BIND_HOST";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEndpoint {
    pub shard_id: ShardId,
    pub host: String,
    pub port: u16,
}

impl ShardEndpoint {
    pub fn address(&self) -> Result<SocketAddr, FastPayError> {
        resolve(&self.host, self.port)
    }

    /// Where the server should listen, honoring [`BIND_HOST_ENV`].
    pub fn bind_address(&self) -> Result<SocketAddr, FastPayError> {
        match std::env::var(BIND_HOST_ENV) {
            Ok(host) if !host.is_empty() => resolve(&host, self.port),
            _ => self.address(),
        }
    }
}

fn resolve(host: &str, port: u16) -> Result<SocketAddr, FastPayError> {
    (host, port)
        .to_socket_addrs()
        .ok()
        .and_then(|mut addresses| addresses.next())
        .ok_or_else(|| FastPayError::InvalidCommittee {
            reason: format!("cannot resolve {host}:{port}"),
        })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityConfig {
    pub name: AuthorityName,
    pub public_key: PublicKeyBytes,
    pub shards: Vec<ShardEndpoint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeConfig {
    pub faults_tolerated: usize,
    pub authorities: Vec<AuthorityConfig>,
}

impl CommitteeConfig {
    /// Checks the committee itself and that every authority runs shards
    /// `0..k` for one common `k`.
    pub fn validate(&self) -> Result<(), FastPayError> {
        self.committee()?;
        let invalid = |reason: String| FastPayError::InvalidCommittee { reason };
        let shards = self.number_of_shards();
        if shards == 0 {
            return Err(invalid("authorities need at least one shard".into()));
        }
        for authority in &self.authorities {
            let ids: BTreeSet<ShardId> = authority.shards.iter().map(|s| s.shard_id).collect();
            if ids.len() != authority.shards.len() || ids != (0..shards).collect() {
                return Err(invalid(format!(
                    "{} must list shards 0..{shards} exactly once",
                    authority.name
                )));
            }
        }
        Ok(())
    }

    pub fn committee(&self) -> Result<Committee, FastPayError> {
        Committee::new(
            self.authorities.iter().map(|a| (a.name.clone(), a.public_key)),
            self.faults_tolerated,
        )
    }

    pub fn number_of_shards(&self) -> u32 {
        self.authorities.first().map_or(0, |a| a.shards.len() as u32)
    }

    pub fn authority(&self, name: &AuthorityName) -> Option<&AuthorityConfig> {
        self.authorities.iter().find(|a| a.name == *name)
    }

    pub fn endpoint(&self, name: &AuthorityName, shard_id: ShardId) -> Option<&ShardEndpoint> {
        self.authority(name)?.shards.iter().find(|s| s.shard_id == shard_id)
    }

    /// Addresses of `name`'s shards, indexed by shard id.
    pub fn shard_addresses(&self, name: &AuthorityName) -> Result<Vec<SocketAddr>, FastPayError> {
        let authority = self.authority(name).ok_or(FastPayError::InvalidCommittee {
            reason: format!("unknown authority {name}"),
        })?;
        let mut shards: Vec<&ShardEndpoint> = authority.shards.iter().collect();
        shards.sort_by_key(|s| s.shard_id);
        shards.into_iter().map(ShardEndpoint::address).collect()
    }

    pub fn clients(
        &self,
        transport: Transport,
        timeout: Duration,
    ) -> Result<BTreeMap<AuthorityName, NetworkAuthorityClient>, FastPayError> {
        self.authorities
            .iter()
            .map(|a| {
                let shards = self.shard_addresses(&a.name)?;
                Ok((a.name.clone(), NetworkAuthorityClient::new(shards, transport, timeout)))
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, FastPayError> {
        let bytes = std::fs::read(path).map_err(|e| FastPayError::InvalidCommittee {
            reason: format!("{}: {e}", path.display()),
        })?;
        let config: CommitteeConfig = serde_json::from_slice(&bytes).map_err(|e| FastPayError::InvalidCommittee {
            reason: format!("{}: {e}", path.display()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }
}
