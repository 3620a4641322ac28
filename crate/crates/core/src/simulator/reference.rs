// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Sequential reference ledger: one map of balances, no shards, no network,
//! no quorums. Simulator runs are compared against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::script::{Action, Script, ScriptError, UserId};

/// What happened to one scripted action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    /// Refused because the account could not cover the amount.
    Rejected,
    /// Did not complete for another reason (unreachable quorum, faulty client).
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceOutcome {
    /// One entry per action, in script order (parallel steps left to right).
    pub outcomes: Vec<Outcome>,
    /// Users that never held money are absent.
    pub balances: BTreeMap<UserId, u128>,
    /// Total paid out on the Primary to each user.
    pub payouts: BTreeMap<UserId, u128>,
}

/// Runs `script` on the sequential ledger. Parallel steps touch distinct
/// users, so running their actions left to right is equivalent to any
/// interleaving.
pub fn reference_execution(script: &Script) -> Result<ReferenceOutcome, ScriptError> {
    let mut state = ReferenceOutcome::default();
    for (index, step) in script.steps.iter().enumerate() {
        for action in step.actions() {
            let outcome = match *action {
                Action::Fund { user, amount } => {
                    *state.balances.entry(user).or_default() += u128::from(amount);
                    Outcome::Accepted
                }
                Action::Transfer { from, to, amount } => {
                    if state.debit(from, amount) {
                        *state.balances.entry(to).or_default() += u128::from(amount);
                        Outcome::Accepted
                    } else {
                        Outcome::Rejected
                    }
                }
                Action::Redeem { user, amount } => {
                    if state.debit(user, amount) {
                        *state.payouts.entry(user).or_default() += u128::from(amount);
                        Outcome::Accepted
                    } else {
                        Outcome::Rejected
                    }
                }
                Action::Sync { .. } => Outcome::Accepted,
                Action::Equivocate { .. } => {
                    return Err(ScriptError {
                        line: index + 1,
                        message: "the reference ledger only runs correct clients".into(),
                    })
                }
            };
            state.outcomes.push(outcome);
        }
    }
    Ok(state)
}

impl ReferenceOutcome {
    fn debit(&mut self, user: UserId, amount: u64) -> bool {
        match self.balances.get_mut(&user) {
            Some(balance) if *balance >= u128::from(amount) => {
                *balance -= u128::from(amount);
                true
            }
            _ => false,
        }
    }

    pub fn total_balance(&self) -> u128 {
        self.balances.values().sum()
    }

    pub fn total_payout(&self) -> u128 {
        self.payouts.values().sum()
    }
}
