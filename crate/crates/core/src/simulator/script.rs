// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Scenario scripts: a list of client actions in a small text format.
//!
//! ```text
//! # comments and blank lines are ignored
//! fund 0 10
//! transfer 0 1 4
//! parallel transfer 1 2 1 ; redeem 0 3
//! sync 2
//! equivocate 1 2 3
//! ```
//!
//! Users are small integers. `parallel` runs its actions concurrently; they
//! must involve pairwise distinct users.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

pub type UserId = u32;

/// Scripts may name users `0..MAX_USERS`.
pub const MAX_USERS: UserId = 64;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// Deposit on the Primary for the user's FastPay account.
    Fund {
        user: UserId,
        amount: u64,
    },
    Transfer {
        from: UserId,
        to: UserId,
        amount: u64,
    },
    /// Pay to the user's Primary account, then redeem the certificate.
    Redeem {
        user: UserId,
        amount: u64,
    },
    Sync {
        user: UserId,
    },
    /// A faulty client signs two different orders for one sequence number
    /// and shows each to a different half of the committee.
    Equivocate {
        user: UserId,
        first: u64,
        second: u64,
    },
}

impl Action {
    pub fn users(&self) -> Vec<UserId> {
        match *self {
            Action::Fund { user, .. }
            | Action::Redeem { user, .. }
            | Action::Sync { user }
            | Action::Equivocate { user, .. } => vec![user],
            Action::Transfer { from, to, .. } => vec![from, to],
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Action::Fund { user, amount } => write!(f, "fund {user} {amount}"),
            Action::Transfer { from, to, amount } => write!(f, "transfer {from} {to} {amount}"),
            Action::Redeem { user, amount } => write!(f, "redeem {user} {amount}"),
            Action::Sync { user } => write!(f, "sync {user}"),
            Action::Equivocate { user, first, second } => write!(f, "equivocate {user} {first} {second}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Single(Action),
    Parallel(Vec<Action>),
}

impl Step {
    pub fn actions(&self) -> &[Action] {
        match self {
            Step::Single(action) => std::slice::from_ref(action),
            Step::Parallel(actions) => actions,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Script {
    pub steps: Vec<Step>,
}

impl Script {
    pub fn users(&self) -> BTreeSet<UserId> {
        self.steps
            .iter()
            .flat_map(|s| s.actions().iter().flat_map(Action::users))
            .collect()
    }

    /// Checks the rules the parser enforces, for scripts built in code.
    pub fn validate(&self) -> Result<(), ScriptError> {
        self.to_string().parse::<Script>().map(|_| ())
    }

    pub fn has_equivocation(&self) -> bool {
        self.steps
            .iter()
            .any(|s| s.actions().iter().any(|a| matches!(a, Action::Equivocate { .. })))
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.steps {
            match step {
                Step::Single(action) => writeln!(f, "{action}")?,
                Step::Parallel(actions) => {
                    let parts: Vec<_> = actions.iter().map(ToString::to_string).collect();
                    writeln!(f, "parallel {}", parts.join(" ; "))?;
                }
            }
        }
        Ok(())
    }
}

fn parse_action(text: &str, line: usize) -> Result<Action, ScriptError> {
    let error = |message: String| ScriptError { line, message };
    let words: Vec<&str> = text.split_whitespace().collect();
    let number = |i: usize| -> Result<u64, ScriptError> {
        let word = words
            .get(i)
            .ok_or_else(|| error(format!("`{}` needs more arguments", words[0])))?;
        word.parse().map_err(|_| error(format!("`{word}` is not a number")))
    };
    let user = |i: usize| -> Result<UserId, ScriptError> {
        let value = number(i)?;
        if value >= u64::from(MAX_USERS) {
            return Err(error(format!("user {value} out of range")));
        }
        Ok(value as UserId)
    };
    let amount = |i: usize| -> Result<u64, ScriptError> {
        match number(i)? {
            0 => Err(error("amounts must be positive".into())),
            value => Ok(value),
        }
    };
    let (action, arity) = match words.first().copied() {
        Some("fund") => (
            Action::Fund {
                user: user(1)?,
                amount: amount(2)?,
            },
            3,
        ),
        Some("transfer") => (
            Action::Transfer {
                from: user(1)?,
                to: user(2)?,
                amount: amount(3)?,
            },
            4,
        ),
        Some("redeem") => (
            Action::Redeem {
                user: user(1)?,
                amount: amount(2)?,
            },
            3,
        ),
        Some("sync") => (Action::Sync { user: user(1)? }, 2),
        Some("equivocate") => (
            Action::Equivocate {
                user: user(1)?,
                first: amount(2)?,
                second: amount(3)?,
            },
            4,
        ),
        Some(other) => return Err(error(format!("unknown action `{other}`"))),
        None => return Err(error("empty action".into())),
    };
    if words.len() != arity {
        return Err(error(format!("`{}` takes {} arguments", words[0], arity - 1)));
    }
    if let Action::Equivocate { first, second, .. } = action {
        if first == second {
            return Err(error("equivocating orders must differ".into()));
        }
    }
    Ok(action)
}

impl FromStr for Script {
    type Err = ScriptError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut steps = Vec::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix("parallel ") {
                let actions = rest
                    .split(';')
                    .map(|part| parse_action(part.trim(), line))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut seen = BTreeSet::new();
                for user in actions.iter().flat_map(Action::users) {
                    if !seen.insert(user) {
                        return Err(ScriptError {
                            line,
                            message: format!("user {user} appears twice in a parallel step"),
                        });
                    }
                }
                steps.push(Step::Parallel(actions));
            } else {
                steps.push(Step::Single(parse_action(content, line)?));
            }
        }
        Ok(Script { steps })
    }
}

/// A random script over `users` users. Honest scripts contain no
/// equivocating clients.
pub fn random_script<R: Rng>(rng: &mut R, users: UserId, steps: usize, honest: bool) -> Script {
    assert!((2..=MAX_USERS).contains(&users));
    let mut script = Script::default();
    // Everybody starts with some money so that most transfers go through.
    for user in 0..users {
        if rng.gen_bool(0.8) {
            script.steps.push(Step::Single(Action::Fund {
                user,
                amount: rng.gen_range(5..30),
            }));
        }
    }
    let random_action = |rng: &mut R, busy: &BTreeSet<UserId>| -> Option<Action> {
        let free: Vec<UserId> = (0..users).filter(|u| !busy.contains(u)).collect();
        if free.is_empty() {
            return None;
        }
        let pick = |rng: &mut R| free[rng.gen_range(0..free.len())];
        let roll = rng.gen_range(0..100);
        let user = pick(rng);
        Some(match roll {
            0..=9 => Action::Fund {
                user,
                amount: rng.gen_range(1..20),
            },
            10..=64 => {
                let others: Vec<UserId> = free.iter().copied().filter(|&u| u != user).collect();
                if others.is_empty() {
                    Action::Sync { user }
                } else {
                    Action::Transfer {
                        from: user,
                        to: others[rng.gen_range(0..others.len())],
                        amount: rng.gen_range(1..15),
                    }
                }
            }
            65..=79 => Action::Redeem {
                user,
                amount: rng.gen_range(1..10),
            },
            _ if honest || roll < 90 => Action::Sync { user },
            _ => {
                let first = rng.gen_range(1..10);
                Action::Equivocate {
                    user,
                    first,
                    second: first + rng.gen_range(1..5),
                }
            }
        })
    };
    for _ in 0..steps {
        if rng.gen_bool(0.25) {
            let mut busy = BTreeSet::new();
            let mut actions = Vec::new();
            for _ in 0..rng.gen_range(2..4) {
                if let Some(action) = random_action(rng, &busy) {
                    busy.extend(action.users());
                    actions.push(action);
                }
            }
            script.steps.push(Step::Parallel(actions));
        } else if let Some(action) = random_action(rng, &BTreeSet::new()) {
            script.steps.push(Step::Single(action));
        }
    }
    script
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parses_every_action() {
        let script: Script =
            "# demo\nfund 0 10\n\ntransfer 0 1 4 # pay\nparallel redeem 1 2 ; sync 0\nequivocate 2 1 2\n"
                .parse()
                .unwrap();
        assert_eq!(
            script.steps,
            vec![
                Step::Single(Action::Fund { user: 0, amount: 10 }),
                Step::Single(Action::Transfer {
                    from: 0,
                    to: 1,
                    amount: 4
                }),
                Step::Parallel(vec![Action::Redeem { user: 1, amount: 2 }, Action::Sync { user: 0 }]),
                Step::Single(Action::Equivocate {
                    user: 2,
                    first: 1,
                    second: 2
                }),
            ]
        );
        assert_eq!(script.to_string().parse::<Script>().unwrap(), script);
    }

    #[test]
    fn malformed_scripts_are_rejected() {
        for (text, line) in [
            ("fund 0", 1),
            ("fund 0 0", 1),
            ("\nsteal 0 1", 2),
            ("transfer 0 1 x", 1),
            ("sync 0 1", 1),
            ("fund 64 1", 1),
            ("parallel sync 0 ; fund 0 1", 1),
            ("equivocate 0 3 3", 1),
        ] {
            let error = text.parse::<Script>().unwrap_err();
            assert_eq!(error.line, line, "{text}: {error}");
        }
    }

    #[test]
    fn random_scripts_round_trip_and_respect_honesty() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let script = random_script(&mut rng, 5, 12, true);
            assert!(!script.has_equivocation());
            assert_eq!(script.to_string().parse::<Script>().unwrap(), script);
        }
    }
}
