//! A small Solidity tokenizer, enough to compare generated sources modulo
//! whitespace and to count top-level declarations.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Ident(String),
    Number(String),
    Str(String),
    /// Operators and punctuation; multi-character operators stay whole.
    Punct(String),
}

impl Token {
    pub fn text(&self) -> &str {
        match self {
            Token::Ident(s) | Token::Number(s) | Token::Str(s) | Token::Punct(s) => s,
        }
    }

    fn is(&self, text: &str) -> bool {
        self.text() == text
    }
}

const MULTI: [&str; 16] =
    [">>=", "<<=", "**", ">=", "<=", "==", "!=", "&&", "||", "=>", "+=", "-=", "++", "--", "<<", ">>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizeError {
    pub offset: usize,
    pub message: String,
}

/// Splits source into tokens, dropping whitespace and comments.
pub fn tokenize(src: &str) -> Result<Vec<Token>, TokenizeError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if src[i..].starts_with("//") {
            i = src[i..].find('\n').map_or(bytes.len(), |n| i + n);
        } else if src[i..].starts_with("/*") {
            let end = src[i + 2..].find("*/").ok_or(TokenizeError { offset: i, message: "unterminated comment".into() })?;
            i += end + 4;
        } else if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$') {
                i += 1;
            }
            // hex"..." literals stay one token.
            if &src[start..i] == "hex" && i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
                let end = string_end(src, i)?;
                out.push(Token::Str(src[start..end].to_string()));
                i = end;
            } else {
                out.push(Token::Ident(src[start..i].to_string()));
            }
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.' || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token::Number(src[start..i].to_string()));
        } else if c == b'"' || c == b'\'' {
            let end = string_end(src, i)?;
            out.push(Token::Str(src[i..end].to_string()));
            i = end;
        } else if let Some(op) = MULTI.iter().find(|op| src[i..].starts_with(**op)) {
            out.push(Token::Punct(op.to_string()));
            i += op.len();
        } else if c.is_ascii_punctuation() {
            out.push(Token::Punct((c as char).to_string()));
            i += 1;
        } else {
            return Err(TokenizeError { offset: i, message: format!("unexpected character {:?}", src[i..].chars().next()) });
        }
    }
    Ok(out)
}

fn string_end(src: &str, open: usize) -> Result<usize, TokenizeError> {
    let bytes = src.as_bytes();
    let quote = bytes[open];
    let mut i = open + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b if b == quote => return Ok(i + 1),
            _ => i += 1,
        }
    }
    Err(TokenizeError { offset: open, message: "unterminated string".into() })
}

/// Token-level equality, i.e. equality modulo whitespace and comments.
pub fn token_equivalent(a: &str, b: &str) -> bool {
    match (tokenize(a), tokenize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Top-level shape of a source file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outline {
    pub interfaces: Vec<String>,
    pub contracts: Vec<String>,
    /// Function-like members per interface, in order. `receive` and
    /// `constructor` are listed under those names.
    pub interface_functions: Vec<Vec<String>>,
    pub contract_functions: Vec<Vec<String>>,
}

/// Scans brace nesting to find interfaces, contracts and their members.
pub fn outline(tokens: &[Token]) -> Outline {
    let mut out = Outline::default();
    let mut depth = 0usize;
    let mut current: Option<(bool, usize)> = None;
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if depth == 0 && (t.is("interface") || t.is("contract")) {
            if let Some(Token::Ident(name)) = tokens.get(i + 1) {
                let is_interface = t.is("interface");
                if is_interface {
                    out.interfaces.push(name.clone());
                    out.interface_functions.push(Vec::new());
                } else {
                    out.contracts.push(name.clone());
                    out.contract_functions.push(Vec::new());
                }
                current = Some((is_interface, if is_interface { out.interfaces.len() } else { out.contracts.len() } - 1));
            }
        } else if depth == 1 {
            let member = if t.is("function") {
                tokens.get(i + 1).map(|n| n.text().to_string())
            } else if t.is("receive") || t.is("constructor") || t.is("fallback") {
                Some(t.text().to_string())
            } else {
                None
            };
            if let (Some(name), Some((is_interface, idx))) = (member, current) {
                if is_interface {
                    out.interface_functions[idx].push(name);
                } else {
                    out.contract_functions[idx].push(name);
                }
            }
        }
        if t.is("{") {
            depth += 1;
        } else if t.is("}") {
            depth = depth.saturating_sub(1);
        }
        i += 1;
    }
    out
}
