//! Contract ABI JSON parsing and function selectors.

use serde::{Deserialize, Serialize};
use sha3::{Digest, Keccak256};

use super::ExploitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateMutability {
    Payable,
    Nonpayable,
    View,
    Pure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbiParam {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<AbiParam>,
}

impl AbiParam {
    pub fn new(name: &str, ty: &str) -> Self {
        AbiParam { name: name.to_string(), ty: ty.to_string(), components: Vec::new() }
    }

    /// Type as it appears in a canonical signature; tuples are expanded.
    pub fn canonical_type(&self) -> String {
        match self.ty.strip_prefix("tuple") {
            Some(suffix) => {
                let inner: Vec<String> = self.components.iter().map(AbiParam::canonical_type).collect();
                format!("({}){suffix}", inner.join(","))
            }
            None => self.ty.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbiFunction {
    pub name: String,
    pub inputs: Vec<AbiParam>,
    pub outputs: Vec<AbiParam>,
    pub state_mutability: StateMutability,
}

impl AbiFunction {
    /// `name(type1,type2)`.
    pub fn signature(&self) -> String {
        let types: Vec<String> = self.inputs.iter().map(AbiParam::canonical_type).collect();
        format!("{}({})", self.name, types.join(","))
    }

    pub fn selector(&self) -> [u8; 4] {
        selector_of(&self.signature())
    }

    pub fn is_payable(&self) -> bool {
        self.state_mutability == StateMutability::Payable
    }
}

/// First four bytes of the Keccak-256 hash of a canonical signature.
pub fn selector_of(signature: &str) -> [u8; 4] {
    let digest = Keccak256::digest(signature.as_bytes());
    [digest[0], digest[1], digest[2], digest[3]]
}

#[derive(Deserialize)]
struct RawEntry {
    #[serde(rename = "type", default)]
    kind: Option<String>,
    name: Option<String>,
    #[serde(default)]
    inputs: Vec<AbiParam>,
    #[serde(default)]
    outputs: Vec<AbiParam>,
    #[serde(rename = "stateMutability")]
    state_mutability: Option<StateMutability>,
    // Pre-0.5 compiler output.
    payable: Option<bool>,
    constant: Option<bool>,
}

/// Parses an ABI JSON array. Events, errors, constructors, fallback and
/// receive entries are skipped.
pub fn parse_abi(text: &str) -> Result<Vec<AbiFunction>, ExploitError> {
    let entries: Vec<RawEntry> = serde_json::from_str(text).map_err(|e| ExploitError::MalformedAbi {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, e) in entries.into_iter().enumerate() {
        if e.kind.as_deref().unwrap_or("function") != "function" {
            continue;
        }
        let name = e.name.filter(|n| !n.is_empty()).ok_or_else(|| ExploitError::MalformedAbi {
            line: 0,
            column: 0,
            message: format!("function entry {i} has no name"),
        })?;
        let state_mutability = match (e.state_mutability, e.payable, e.constant) {
            (Some(m), _, _) => m,
            (None, Some(true), _) => StateMutability::Payable,
            (None, _, Some(true)) => StateMutability::View,
            _ => StateMutability::Nonpayable,
        };
        out.push(AbiFunction { name, inputs: e.inputs, outputs: e.outputs, state_mutability });
    }
    Ok(out)
}
