// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! The `fastpay` command-line tool and its benchmark harness.

pub mod bench;
pub mod commands;
pub mod setup;
