// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Key files and committee generation.

use std::path::Path;

use anyhow::Context;
use fastpay_core::network::{AuthorityConfig, CommitteeConfig, ShardEndpoint};
use fastpay_core::{AuthorityName, KeyPair};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

/// Secret key of one authority, shared by all of its shards.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityKeyFile {
    pub name: AuthorityName,
    pub key_pair: KeyPair,
}

impl AuthorityKeyFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        write_json(path, self)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// A committee of `3f+1` authorities named `auth00..`, each with `shards`
/// shards on `host`. Shard `s` of authority `i` listens on
/// `base_port + i * shards + s`.
pub fn generate_committee<R: RngCore + CryptoRng>(
    rng: &mut R,
    faults_tolerated: usize,
    shards: u32,
    host: &str,
    base_port: u16,
) -> anyhow::Result<(CommitteeConfig, Vec<AuthorityKeyFile>)> {
    let size = 3 * faults_tolerated + 1;
    let mut keys = Vec::new();
    let mut authorities = Vec::new();
    for i in 0..size {
        let name = AuthorityName::new(format!("auth{i:02}"))?;
        let key_pair = KeyPair::generate(rng);
        let endpoints = (0..shards)
            .map(|s| {
                let port = u32::from(base_port) + (i as u32) * shards + s;
                Ok(ShardEndpoint {
                    shard_id: s,
                    host: host.to_string(),
                    port: u16::try_from(port).context("port range exhausted")?,
                })
            })
            .collect::<anyhow::Result<_>>()?;
        authorities.push(AuthorityConfig {
            name: name.clone(),
            public_key: key_pair.public(),
            shards: endpoints,
        });
        keys.push(AuthorityKeyFile { name, key_pair });
    }
    let config = CommitteeConfig {
        faults_tolerated,
        authorities,
    };
    config.validate()?;
    Ok((config, keys))
}
