//! A tiny EVM-like world for replaying the generated attack against an
//! abstract victim: balances in wei, a credit ledger, a call stack with a
//! depth cap, and a synchronous `receive` hook on the attacker contract.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WEI_PER_ETHER: u128 = 1_000_000_000_000_000_000;
pub const MAX_CALL_DEPTH: u32 = 1024;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid victim model: {0}")]
    InvalidModel(String),
    #[error("attacker wallet holds {wallet} wei, less than the {deposit} wei deposit")]
    Underfunded { wallet: u128, deposit: u128 },
}

/// Amount operand of a victim op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Amount {
    /// `"credit"` (caller's credit at function entry) or `"value"` (msg.value),
    /// or a decimal wei string.
    Named(String),
    Wei(u128),
}

impl Amount {
    fn check(&self) -> Result<(), SimError> {
        match self {
            Amount::Named(s) if s == "credit" || s == "value" || s.parse::<u128>().is_ok() => Ok(()),
            Amount::Named(s) => Err(SimError::InvalidModel(format!("unknown amount {s:?}"))),
            Amount::Wei(_) => Ok(()),
        }
    }

    fn eval(&self, entry_credit: u128, value: u128) -> u128 {
        match self {
            Amount::Named(s) if s == "credit" => entry_credit,
            Amount::Named(s) if s == "value" => value,
            Amount::Named(s) => s.parse().unwrap_or(0),
            Amount::Wei(w) => *w,
        }
    }
}

// Ops are internally tagged, so serde buffers their numbers and anything
// past u64 arrives as a float. Such amounts must be written as strings.
impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Amount;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"credit\", \"value\" or a wei amount")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Amount, E> {
                Ok(Amount::Named(v.to_string()))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Amount, E> {
                Ok(Amount::Wei(v.into()))
            }
            fn visit_u128<E: serde::de::Error>(self, v: u128) -> Result<Amount, E> {
                Ok(Amount::Wei(v))
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Amount, E> {
                Err(E::custom(format!("amount {v} is not an exact integer; quote large wei amounts as strings")))
            }
        }
        d.deserialize_any(V)
    }
}

fn credit() -> Amount {
    Amount::Named("credit".into())
}

fn value() -> Amount {
    Amount::Named("value".into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// Reverts unless the caller's stored credit is at least `amount` and
    /// `amount` is non-zero.
    RequireCredit {
        #[serde(default = "credit")]
        amount: Amount,
    },
    /// Transfers to the caller, running its receive hook before returning.
    Send {
        #[serde(default = "credit")]
        amount: Amount,
    },
    ZeroCredit,
    AddCredit {
        #[serde(default = "value")]
        amount: Amount,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VictimModel {
    pub deposit: Vec<Op>,
    pub withdrawal: Vec<Op>,
    /// Honest users' deposits held before the attack.
    #[serde(default)]
    pub initial_pot_wei: u128,
}

impl VictimModel {
    pub fn from_json(text: &str) -> Result<VictimModel, SimError> {
        let m: VictimModel = serde_json::from_str(text).map_err(|e| SimError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for op in self.deposit.iter().chain(&self.withdrawal) {
            match op {
                Op::RequireCredit { amount } | Op::Send { amount } | Op::AddCredit { amount } => amount.check()?,
                Op::ZeroCredit => {}
            }
        }
        Ok(())
    }

    /// Sends before zeroing the credit.
    pub fn send_before_zero(pot: u128) -> VictimModel {
        VictimModel {
            deposit: vec![Op::AddCredit { amount: value() }],
            withdrawal: vec![Op::RequireCredit { amount: credit() }, Op::Send { amount: credit() }, Op::ZeroCredit],
            initial_pot_wei: pot,
        }
    }

    /// Checks-effects-interactions ordering.
    pub fn zero_before_send(pot: u128) -> VictimModel {
        VictimModel {
            deposit: vec![Op::AddCredit { amount: value() }],
            withdrawal: vec![Op::RequireCredit { amount: credit() }, Op::ZeroCredit, Op::Send { amount: credit() }],
            initial_pot_wei: pot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Account {
    Honest,
    Victim,
    AttackerWallet,
    AttackerContract,
}

impl Account {
    fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Call,
    Send,
    Revert,
    DepthCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub from: Account,
    pub to: Account,
    pub value: u128,
    pub depth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackParams {
    pub deposit_wei: u128,
    /// `receive` re-enters while the victim holds at least this much.
    pub threshold_wei: u128,
    pub wallet_wei: u128,
    pub max_depth: u32,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams { deposit_wei: WEI_PER_ETHER, threshold_wei: WEI_PER_ETHER, wallet_wei: 2 * WEI_PER_ETHER, max_depth: MAX_CALL_DEPTH }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entry {
    Deposit,
    Withdrawal,
}

/// Accounts plus the victim's storage.
#[derive(Debug, Clone)]
pub struct SimWorld {
    balances: [u128; 4],
    credit: [u128; 4],
    pub max_depth: u32,
    pub trace: Vec<TraceEvent>,
}

struct Revert;

impl SimWorld {
    pub fn new(victim: &VictimModel, wallet_wei: u128, max_depth: u32) -> SimWorld {
        let mut w = SimWorld { balances: [0; 4], credit: [0; 4], max_depth, trace: Vec::new() };
        w.balances[Account::Victim.idx()] = victim.initial_pot_wei;
        w.credit[Account::Honest.idx()] = victim.initial_pot_wei;
        w.balances[Account::AttackerWallet.idx()] = wallet_wei;
        w
    }

    pub fn balance(&self, a: Account) -> u128 {
        self.balances[a.idx()]
    }

    pub fn credit_of(&self, a: Account) -> u128 {
        self.credit[a.idx()]
    }

    /// Sum of all balances; constant across every step.
    pub fn total(&self) -> u128 {
        self.balances.iter().sum()
    }

    fn transfer(&mut self, from: Account, to: Account, v: u128) -> Result<(), Revert> {
        if self.balances[from.idx()] < v {
            return Err(Revert);
        }
        self.balances[from.idx()] -= v;
        self.balances[to.idx()] += v;
        Ok(())
    }

    fn event(&mut self, kind: EventKind, from: Account, to: Account, value: u128, depth: u32) {
        self.trace.push(TraceEvent { kind, from, to, value, depth });
    }

    /// A message call into the victim. On failure every effect of the frame
    /// is rolled back and the failure does not propagate.
    fn call_victim(&mut self, victim: &VictimModel, entry: Entry, caller: Account, value: u128, depth: u32, threshold: u128) -> bool {
        if depth > self.max_depth {
            self.event(EventKind::DepthCap, caller, Account::Victim, value, depth - 1);
            return false;
        }
        let saved = (self.balances, self.credit);
        self.event(EventKind::Call, caller, Account::Victim, value, depth);
        match self.run_body(victim, entry, caller, value, depth, threshold) {
            Ok(()) => true,
            Err(Revert) => {
                self.balances = saved.0;
                self.credit = saved.1;
                self.event(EventKind::Revert, Account::Victim, caller, value, depth);
                false
            }
        }
    }

    fn run_body(&mut self, victim: &VictimModel, entry: Entry, caller: Account, value: u128, depth: u32, threshold: u128) -> Result<(), Revert> {
        self.transfer(caller, Account::Victim, value)?;
        let entry_credit = self.credit[caller.idx()];
        let body = match entry {
            Entry::Deposit => &victim.deposit,
            Entry::Withdrawal => &victim.withdrawal,
        };
        for op in body {
            match op {
                Op::RequireCredit { amount } => {
                    let amt = amount.eval(entry_credit, value);
                    if amt == 0 || self.credit[caller.idx()] < amt {
                        return Err(Revert);
                    }
                }
                Op::Send { amount } => {
                    let amt = amount.eval(entry_credit, value);
                    self.transfer(Account::Victim, caller, amt)?;
                    self.event(EventKind::Send, Account::Victim, caller, amt, depth + 1);
                    if caller == Account::AttackerContract {
                        self.attacker_receive(victim, depth + 1, threshold);
                    }
                }
                Op::ZeroCredit => self.credit[caller.idx()] = 0,
                Op::AddCredit { amount } => {
                    let amt = amount.eval(entry_credit, value);
                    self.credit[caller.idx()] = self.credit[caller.idx()].checked_add(amt).ok_or(Revert)?;
                }
            }
        }
        Ok(())
    }

    fn attacker_receive(&mut self, victim: &VictimModel, depth: u32, threshold: u128) {
        if self.balance(Account::Victim) >= threshold {
            self.call_victim(victim, Entry::Withdrawal, Account::AttackerContract, 0, depth + 1, threshold);
        }
    }

    pub fn max_event_depth(&self) -> u32 {
        self.trace.iter().map(|e| e.depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackOutcome {
    pub wallet_before: u128,
    pub wallet_after: u128,
    pub net_profit: i128,
    pub sends_to_attacker: usize,
    pub trace: Vec<TraceEvent>,
    pub conserved: bool,
}

/// Runs attack_step1 (deposit), attack_step2 (withdrawal with re-entry)
/// and steal (sweep to the wallet) as three transactions.
pub fn run_attack(victim: &VictimModel, params: &AttackParams) -> Result<AttackOutcome, SimError> {
    victim.validate()?;
    if params.wallet_wei < params.deposit_wei {
        return Err(SimError::Underfunded { wallet: params.wallet_wei, deposit: params.deposit_wei });
    }
    let mut w = SimWorld::new(victim, params.wallet_wei, params.max_depth);
    let total = w.total();
    let before = w.balance(Account::AttackerWallet);
    let mut conserved = true;

    // attack_step1
    w.event(EventKind::Call, Account::AttackerWallet, Account::AttackerContract, params.deposit_wei, 0);
    w.transfer(Account::AttackerWallet, Account::AttackerContract, params.deposit_wei)
        .map_err(|_| SimError::Underfunded { wallet: params.wallet_wei, deposit: params.deposit_wei })?;
    w.call_victim(victim, Entry::Deposit, Account::AttackerContract, params.deposit_wei, 1, params.threshold_wei);
    conserved &= w.total() == total;

    // attack_step2
    w.event(EventKind::Call, Account::AttackerWallet, Account::AttackerContract, 0, 0);
    w.call_victim(victim, Entry::Withdrawal, Account::AttackerContract, 0, 1, params.threshold_wei);
    conserved &= w.total() == total;

    // steal
    let loot = w.balance(Account::AttackerContract);
    w.event(EventKind::Call, Account::AttackerWallet, Account::AttackerContract, 0, 0);
    w.transfer(Account::AttackerContract, Account::AttackerWallet, loot).ok();
    w.event(EventKind::Send, Account::AttackerContract, Account::AttackerWallet, loot, 1);
    conserved &= w.total() == total;

    let after = w.balance(Account::AttackerWallet);
    let sends_to_attacker =
        w.trace.iter().filter(|e| e.kind == EventKind::Send && e.from == Account::Victim && e.to == Account::AttackerContract).count();
    Ok(AttackOutcome {
        wallet_before: before,
        wallet_after: after,
        net_profit: after as i128 - before as i128,
        sends_to_attacker,
        trace: w.trace,
        conserved,
    })
}

/// Wei rendered as Ether with two decimals, rounded half away from zero.
pub struct Ether(pub i128);

impl fmt::Display for Ether {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = (WEI_PER_ETHER / 100) as i128;
        let mag = self.0.unsigned_abs() as i128;
        let cents = (mag + unit / 2) / unit;
        let sign = if self.0 < 0 && cents > 0 { "-" } else { "" };
        write!(f, "{sign}{}.{:02}", cents / 100, cents % 100)
    }
}

pub fn verdict(net_profit: i128) -> (bool, &'static str) {
    if net_profit > 0 {
        (true, "The detected reentrancy can be exploited.")
    } else {
        (false, "The detected reentrancy cannot be exploited.")
    }
}

pub fn report(o: &AttackOutcome) -> String {
    format!(
        "Attacker Balance Before Attack : {} Ether(s)\nAttacker Balance After Attack  : {} Ether(s)\nThis exploitation net profit is: {} Ether(s)\n{}\n",
        Ether(o.wallet_before as i128),
        Ether(o.wallet_after as i128),
        Ether(o.net_profit),
        verdict(o.net_profit).1
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const ETH: u128 = WEI_PER_ETHER;

    fn params(deposit: u128, threshold: u128) -> AttackParams {
        AttackParams { deposit_wei: deposit, threshold_wei: threshold, wallet_wei: deposit + ETH, max_depth: MAX_CALL_DEPTH }
    }

    #[test]
    fn send_before_zero_drains_the_pot() {
        let o = run_attack(&VictimModel::send_before_zero(3 * ETH), &params(ETH, ETH)).unwrap();
        // Pot 4 ETH: four nested 1 ETH sends, then the guard fails at 0.
        assert_eq!(o.sends_to_attacker, 4);
        assert_eq!(o.net_profit, 3 * ETH as i128);
        assert!(o.conserved);
        let sends: Vec<u32> = o.trace.iter().filter(|e| e.kind == EventKind::Send && e.from == Account::Victim).map(|e| e.depth).collect();
        assert_eq!(sends, [2, 4, 6, 8]);
        assert!(!o.trace.iter().any(|e| e.kind == EventKind::Revert));
    }

    #[test]
    fn checks_effects_interactions_returns_only_the_deposit() {
        let o = run_attack(&VictimModel::zero_before_send(3 * ETH), &params(ETH, ETH)).unwrap();
        assert_eq!(o.net_profit, 0);
        assert_eq!(o.sends_to_attacker, 1);
        // The re-entered withdrawal fails its credit check and is rolled back.
        assert_eq!(o.trace.iter().filter(|e| e.kind == EventKind::Revert).count(), 1);
        assert!(o.conserved);
    }

    #[test]
    fn depth_cap_bounds_one_transaction() {
        let o = run_attack(&VictimModel::send_before_zero(2000 * ETH), &params(ETH, ETH)).unwrap();
        assert!(o.trace.iter().all(|e| e.depth <= MAX_CALL_DEPTH));
        assert_eq!(o.trace.iter().filter(|e| e.kind == EventKind::DepthCap).count(), 1);
        // Withdrawal frames sit at odd depths 1..=1023.
        assert_eq!(o.sends_to_attacker, 512);
        assert_eq!(o.net_profit, 511 * ETH as i128);
        assert!(o.conserved);
    }

    #[test]
    fn failing_send_reverts_only_the_inner_frame() {
        // Pot 1, credit 2, fixed 1 ETH threshold: the second send cannot be covered.
        let o = run_attack(&VictimModel::send_before_zero(ETH), &params(2 * ETH, ETH)).unwrap();
        assert_eq!(o.net_profit, 0);
        assert_eq!(o.trace.iter().filter(|e| e.kind == EventKind::Revert).count(), 1);
    }

    #[test]
    fn ordering_sweep() {
        let grid = [0u128, 1, 2, 5, 10];
        for c in grid {
            for h in grid {
                let (c, h) = (c * ETH, h * ETH);
                let p = AttackParams { deposit_wei: c, threshold_wei: c, wallet_wei: c, max_depth: MAX_CALL_DEPTH };
                let bad = run_attack(&VictimModel::send_before_zero(h), &p).unwrap();
                let good = run_attack(&VictimModel::zero_before_send(h), &p).unwrap();
                assert!(bad.conserved && good.conserved);
                assert!(good.net_profit <= 0, "c={c} h={h}");
                if c > 0 {
                    assert_eq!(bad.net_profit, (c * (h / c)) as i128);
                    assert_eq!(bad.net_profit > 0, h >= c, "c={c} h={h}");
                } else {
                    assert_eq!(bad.net_profit, 0);
                }
            }
        }
    }

    #[test]
    fn report_lines() {
        let o = AttackOutcome { wallet_before: 100 * ETH, wallet_after: 101 * ETH + 99 * ETH / 100, net_profit: (199 * ETH / 100) as i128, sends_to_attacker: 0, trace: vec![], conserved: true };
        let text = report(&o);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Attacker Balance Before Attack : 100.00 Ether(s)");
        assert_eq!(lines[1], "Attacker Balance After Attack  : 101.99 Ether(s)");
        assert_eq!(lines[2], "This exploitation net profit is: 1.99 Ether(s)");
        assert_eq!(lines[3], "The detected reentrancy can be exploited.");
        assert!(!verdict(0).0);
        assert!(!verdict(-5).0);
        assert_eq!(Ether(-(ETH as i128) / 2).to_string(), "-0.50");
        assert_eq!(Ether(4_999_999_999_999_999).to_string(), "0.00");
        assert_eq!(Ether(5_000_000_000_000_000).to_string(), "0.01");
    }

    #[test]
    fn model_json() {
        let m = VictimModel::from_json(
            r#"{"deposit":[{"op":"add_credit"}],
                "withdrawal":[{"op":"require_credit","amount":"credit"},{"op":"send"},{"op":"zero_credit"}],
                "initial_pot_wei": 3000000000000000000}"#,
        )
        .unwrap();
        assert_eq!(m, VictimModel::send_before_zero(3 * ETH));
        assert!(VictimModel::from_json(r#"{"deposit":[],"withdrawal":[{"op":"send","amount":"all"}]}"#).is_err());
        assert!(VictimModel::from_json(r#"{"deposit":[],"withdrawal":[{"op":"jump"}]}"#).is_err());
        let fixed = VictimModel::from_json(r#"{"deposit":[{"op":"add_credit","amount":"7"}],"withdrawal":[{"op":"send","amount":5}]}"#).unwrap();
        assert_eq!(fixed.withdrawal[0], Op::Send { amount: Amount::Wei(5) });
        assert!(VictimModel::from_json(r#"{"deposit":[],"withdrawal":[{"op":"send","amount":100000000000000000000}]}"#).is_err());
        let big = VictimModel::from_json(r#"{"deposit":[],"withdrawal":[{"op":"send","amount":"100000000000000000000"}]}"#).unwrap();
        // Deposit swallowed without credit, oversized send reverts.
        assert_eq!(run_attack(&big, &AttackParams::default()).unwrap().net_profit, -(ETH as i128));
    }

    #[test]
    fn underfunded_wallet() {
        let p = AttackParams { wallet_wei: 0, ..AttackParams::default() };
        assert!(matches!(run_attack(&VictimModel::send_before_zero(0), &p), Err(SimError::Underfunded { .. })));
    }
}
