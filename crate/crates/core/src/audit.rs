// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! State-based audits of authorities, accounts and the Primary contract.
//!
//! Audits never fail; they return the list of violated properties. All
//! functions are pure in their inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::authority::AuthorityState;
use crate::base_types::{Address, AuthorityName, SequenceNumber, ShardId};
use crate::messages::{CertifiedTransferOrder, Recipient, TransferOrder};
use crate::primary::PrimaryLedgerState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuthorityProperty {
    /// balance + sent <= synchronized + received.
    BalanceBound,
    /// Confirmed certificates are exactly C_0 .. C_{n-1} of this sender.
    ConfirmedChain,
    /// Funding applied by the authority never exceeds funding on the Primary.
    FundingBound,
    /// A pending order is covered by the balance and uses the next sequence.
    PendingCovered,
    /// The account is stored on the shard responsible for it.
    ShardMembership,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Authority {
        authority: AuthorityName,
        shard: ShardId,
        account: Address,
        property: AuthorityProperty,
        detail: String,
    },
    /// The account sent more than it was funded plus what it received.
    AccountSafety {
        account: Address,
        sent: u128,
        funding: u128,
        received: u128,
    },
    /// Certificates to Primary addresses exceed all funding.
    Solvency { redeemable: u128, funding: u128 },
    /// Two different orders were certified for the same slot. `signers`
    /// lists the authorities whose signatures appear on both.
    ConflictingCertificates {
        sender: Address,
        sequence: SequenceNumber,
        signers: Vec<AuthorityName>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Authority {
                authority,
                shard,
                account,
                property,
                detail,
            } => write!(f, "{authority}/{shard}: account {account}: {property:?}: {detail}"),
            Violation::AccountSafety {
                account,
                sent,
                funding,
                received,
            } => write!(
                f,
                "account {account} sent {sent} > funding {funding} + received {received}"
            ),
            Violation::Solvency { redeemable, funding } => {
                write!(f, "redeemable {redeemable} exceeds funding {funding}")
            }
            Violation::ConflictingCertificates {
                sender,
                sequence,
                signers,
            } => {
                let names: Vec<_> = signers.iter().map(AuthorityName::as_str).collect();
                write!(
                    f,
                    "conflicting certificates for {sender} #{sequence}, signed twice by [{}]",
                    names.join(", ")
                )
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub authorities_checked: usize,
    pub accounts_checked: usize,
    pub certificates_checked: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "audited {} authority shards, {} accounts, {} certificates",
            self.authorities_checked, self.accounts_checked, self.certificates_checked
        )?;
        if self.violations.is_empty() {
            return writeln!(f, "no violations");
        }
        writeln!(f, "{} violations:", self.violations.len())?;
        for violation in &self.violations {
            writeln!(f, "  {violation}")?;
        }
        Ok(())
    }
}

/// Certificates keyed by the order they certify, so that several
/// certificates for one order count once.
fn distinct_orders(certificates: &[CertifiedTransferOrder]) -> BTreeMap<Vec<u8>, &CertifiedTransferOrder> {
    use crate::codec::Encode;
    certificates.iter().map(|c| (c.value.to_bytes(), c)).collect()
}

fn sum<'a>(certificates: impl Iterator<Item = &'a CertifiedTransferOrder>) -> u128 {
    certificates.map(|c| u128::from(c.amount().value())).sum()
}

pub fn audit_account_safety(
    certificates: &[CertifiedTransferOrder],
    primary: &PrimaryLedgerState,
    account: Address,
) -> Result<(), Violation> {
    let orders = distinct_orders(certificates);
    let sent = sum(orders.values().copied().filter(|c| c.sender() == account));
    let received = sum(orders
        .values()
        .copied()
        .filter(|c| c.recipient() == Recipient::FastPay(account)));
    let funding = u128::from(primary.funding_of(&account).value());
    if sent <= funding + received {
        Ok(())
    } else {
        Err(Violation::AccountSafety {
            account,
            sent,
            funding,
            received,
        })
    }
}

pub fn audit_solvency(certificates: &[CertifiedTransferOrder], primary: &PrimaryLedgerState) -> Result<(), Violation> {
    let orders = distinct_orders(certificates);
    let redeemable = sum(orders
        .values()
        .copied()
        .filter(|c| matches!(c.recipient(), Recipient::Primary(_))));
    let funding = primary.total_funding();
    if redeemable <= funding {
        Ok(())
    } else {
        Err(Violation::Solvency { redeemable, funding })
    }
}

/// Pairs of certificates for the same `(sender, sequence)` that certify
/// different orders, with the authorities that signed both.
pub fn find_conflicts(certificates: &[CertifiedTransferOrder]) -> Vec<Violation> {
    let mut slots: BTreeMap<(Address, SequenceNumber), Vec<&CertifiedTransferOrder>> = BTreeMap::new();
    for certificate in distinct_orders(certificates).into_values() {
        slots
            .entry((certificate.sender(), certificate.sequence()))
            .or_default()
            .push(certificate);
    }
    let mut conflicts = Vec::new();
    for ((sender, sequence), certs) in slots {
        if certs.len() < 2 {
            continue;
        }
        let mut signers = BTreeSet::new();
        for (i, a) in certs.iter().enumerate() {
            let a_names: BTreeSet<_> = a.signatures.iter().map(|(n, _)| n).collect();
            for b in &certs[i + 1..] {
                signers.extend(
                    b.signatures
                        .iter()
                        .map(|(n, _)| n)
                        .filter(|n| a_names.contains(n))
                        .cloned(),
                );
            }
        }
        conflicts.push(Violation::ConflictingCertificates {
            sender,
            sequence,
            signers: signers.into_iter().collect(),
        });
    }
    conflicts
}

pub fn audit_authority(state: &AuthorityState, primary: &PrimaryLedgerState) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (address, account) in &state.accounts {
        let mut flag = |property, detail: String| {
            violations.push(Violation::Authority {
                authority: state.name.clone(),
                shard: state.shard_id,
                account: *address,
                property,
                detail,
            })
        };
        if !state.in_shard(address) {
            flag(AuthorityProperty::ShardMembership, "stored on the wrong shard".into());
        }

        let sent = sum(account.confirmed.iter()) as i128;
        let received = sum(account.received.iter()) as i128;
        let synchronized: i128 = account.synchronized.iter().map(|s| i128::from(s.amount.value())).sum();
        let balance = account.balance.value();
        if balance + sent > synchronized + received {
            flag(
                AuthorityProperty::BalanceBound,
                format!("balance {balance} + sent {sent} > synchronized {synchronized} + received {received}"),
            );
        }

        let chain_ok = account.confirmed.len() as u64 == account.next_sequence.value()
            && account
                .confirmed
                .iter()
                .enumerate()
                .all(|(k, c)| c.sequence().value() == k as u64 && c.sender() == *address);
        if !chain_ok {
            flag(
                AuthorityProperty::ConfirmedChain,
                format!(
                    "{} confirmed certificates, next sequence {}",
                    account.confirmed.len(),
                    account.next_sequence
                ),
            );
        }

        let funded = u128::from(primary.funding_of(address).value());
        if synchronized as u128 > funded {
            flag(
                AuthorityProperty::FundingBound,
                format!("synchronized {synchronized} > funded {funded}"),
            );
        }

        if let Some(pending) = &account.pending {
            let order: &TransferOrder = &pending.value;
            if !account.balance.covers(order.amount()) || order.sequence() != account.next_sequence {
                flag(
                    AuthorityProperty::PendingCovered,
                    format!(
                        "pending amount {} at #{} against balance {balance}, next #{}",
                        order.amount(),
                        order.sequence(),
                        account.next_sequence
                    ),
                );
            }
        }
    }
    violations
}

/// Full audit: every shard of every authority, every account's safety,
/// certificate uniqueness and global solvency.
pub fn audit_system<'a>(
    authorities: impl IntoIterator<Item = &'a AuthorityState>,
    certificates: &[CertifiedTransferOrder],
    primary: &PrimaryLedgerState,
) -> AuditReport {
    let mut report = AuditReport {
        certificates_checked: certificates.len(),
        ..AuditReport::default()
    };
    for state in authorities {
        report.authorities_checked += 1;
        report.violations.extend(audit_authority(state, primary));
    }

    let mut accounts: BTreeSet<Address> = primary.fundings.iter().map(|f| f.recipient).collect();
    for certificate in certificates {
        accounts.insert(certificate.sender());
        if let Recipient::FastPay(recipient) = certificate.recipient() {
            accounts.insert(recipient);
        }
    }
    report.accounts_checked = accounts.len();
    for account in accounts {
        if let Err(violation) = audit_account_safety(certificates, primary, account) {
            report.violations.push(violation);
        }
    }
    report.violations.extend(find_conflicts(certificates));
    if let Err(violation) = audit_solvency(certificates, primary) {
        report.violations.push(violation);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_types::{Amount, Balance};
    use crate::messages::{ConfirmationOrder, PrimarySynchronizationOrder};
    use crate::testing::{key, make_committee, signed_order, TestCommittee};

    struct World {
        keys: TestCommittee,
        state: AuthorityState,
        ledger: PrimaryLedgerState,
        certificates: Vec<CertifiedTransferOrder>,
    }

    /// `a` funded 12 sends 5 then 3 to `b`.
    fn world() -> World {
        let keys = make_committee(1);
        let mut state = AuthorityState::new(
            keys.names[0].clone(),
            keys.key_pairs[0].clone(),
            keys.committee.clone(),
            0,
            1,
        )
        .unwrap();
        let mut ledger = PrimaryLedgerState::new(keys.committee.clone(), 1);
        let (a, b) = (key(1), key(2));
        let (_, sync) = ledger.fund(a.address(), Amount::new(12)).unwrap();
        state.handle_primary_synchronization_order(sync).unwrap();
        let mut certificates = Vec::new();
        for (seq, amount) in [(0, 5), (1, 3)] {
            let order = signed_order(&a, Recipient::FastPay(b.address()), amount, seq);
            state.handle_transfer_order(order.clone()).unwrap();
            let certificate = keys.certify(&order);
            state
                .handle_confirmation_order(ConfirmationOrder {
                    certificate: certificate.clone(),
                })
                .unwrap();
            certificates.push(certificate);
        }
        World {
            keys,
            state,
            ledger,
            certificates,
        }
    }

    #[test]
    fn honest_world_is_clean() {
        let w = world();
        assert_eq!(
            audit_account_safety(&w.certificates, &w.ledger, key(1).address()),
            Ok(())
        );
        assert_eq!(
            audit_account_safety(&w.certificates, &w.ledger, key(7).address()),
            Ok(())
        );
        let report = audit_system([&w.state], &w.certificates, &w.ledger);
        assert!(report.is_ok(), "{report}");
        assert_eq!(report, audit_system([&w.state], &w.certificates, &w.ledger));
    }

    #[test]
    fn empty_system_is_solvent() {
        let keys = make_committee(0);
        let ledger = PrimaryLedgerState::new(keys.committee.clone(), 1);
        assert_eq!(audit_solvency(&[], &ledger), Ok(()));
        assert!(audit_system([], &[], &ledger).is_ok());
    }

    #[test]
    fn extra_certificate_breaks_account_safety() {
        let mut w = world();
        let forged = signed_order(&key(1), Recipient::FastPay(key(3).address()), 5, 2);
        w.certificates.push(w.keys.certify(&forged));
        assert_eq!(
            audit_account_safety(&w.certificates, &w.ledger, key(1).address()),
            Err(Violation::AccountSafety {
                account: key(1).address(),
                sent: 13,
                funding: 12,
                received: 0
            })
        );
    }

    #[test]
    fn corrupted_balance_is_flagged_on_that_account_only() {
        let mut w = world();
        let b = key(2).address();
        w.state.accounts.get_mut(&b).unwrap().balance = Balance::new(9);
        let violations = audit_authority(&w.state, &w.ledger);
        assert_eq!(violations.len(), 1);
        assert!(matches!(
            &violations[0],
            Violation::Authority { account, property: AuthorityProperty::BalanceBound, .. } if *account == b
        ));
    }

    #[test]
    fn uncovered_pending_is_flagged() {
        let mut w = world();
        let a = key(1);
        let order = signed_order(&a, Recipient::FastPay(key(2).address()), 4, 2);
        w.state.handle_transfer_order(order).unwrap();
        w.state.accounts.get_mut(&a.address()).unwrap().balance = Balance::new(3);
        let violations = audit_authority(&w.state, &w.ledger);
        assert!(violations.iter().any(|v| matches!(
            v,
            Violation::Authority {
                property: AuthorityProperty::PendingCovered,
                ..
            }
        )));
    }

    #[test]
    fn unfunded_synchronization_is_flagged() {
        let mut w = world();
        w.state
            .handle_primary_synchronization_order(PrimarySynchronizationOrder {
                recipient: key(5).address(),
                amount: Amount::new(1),
                transaction_index: 2,
            })
            .unwrap();
        let violations = audit_authority(&w.state, &w.ledger);
        assert!(matches!(
            violations.as_slice(),
            [Violation::Authority {
                property: AuthorityProperty::FundingBound,
                ..
            }]
        ));
    }

    #[test]
    fn colluding_majority_is_detected_and_attributed() {
        // f + 1 = 2 authorities sign two orders spending the same funds.
        let w = world();
        let a = key(1);
        let sink = key(9).address();
        let first = signed_order(&a, Recipient::Primary(sink), 4, 2);
        let second = signed_order(&a, Recipient::Primary(sink), 12, 2);
        let sign = |order: &TransferOrder, who: [usize; 3]| {
            let votes: Vec<_> = who.iter().flat_map(|&i| w.keys.votes(order, i..i + 1)).collect();
            crate::messages::make_certificate(order, &votes, &w.keys.committee).unwrap()
        };
        let mut certificates = w.certificates.clone();
        certificates.push(sign(&first, [0, 1, 2]));
        certificates.push(sign(&second, [1, 2, 3]));
        let mut ledger = w.ledger.clone();
        ledger.fund(key(4).address(), Amount::new(3)).unwrap();

        let report = audit_system([&w.state], &certificates, &ledger);
        assert!(report.violations.contains(&Violation::ConflictingCertificates {
            sender: a.address(),
            sequence: SequenceNumber::new(2),
            signers: vec![w.keys.names[1].clone(), w.keys.names[2].clone()],
        }));
        assert!(report.violations.contains(&Violation::Solvency {
            redeemable: 16,
            funding: 15
        }));
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<AuditReport>(&json).unwrap(), report);
    }
}
