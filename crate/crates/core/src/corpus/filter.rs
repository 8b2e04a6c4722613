//! Syntactic deny-list for functions that cannot be verified off-chain:
//! mint operations, owner-gated modifiers, `msg.sender` owner checks, and
//! reads of state the constructor initialises. Callees in the same contract
//! are followed transitively.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::extract::{scan, ConstructorDecl, FunctionDecl};
use super::{FunctionRecord, SourceFile};
use crate::lexer::{self, is_reserved, LexKind, Lexeme};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Identifiers treated as mint operations.
    pub mint_identifiers: Vec<String>,
    /// Modifier names treated as owner gates.
    pub owner_modifiers: Vec<String>,
    /// Any modifier starting with one of these prefixes is an owner gate.
    pub owner_modifier_prefixes: Vec<String>,
    /// Lower-case substrings marking an identifier as owner state in
    /// `msg.sender == ...` comparisons.
    pub owner_identifiers: Vec<String>,
    /// Exclude functions reading state assigned in the constructor.
    pub constructor_state: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            mint_identifiers: vec!["mint".into(), "_mint".into()],
            owner_modifiers: vec!["onlyOwner".into()],
            owner_modifier_prefixes: vec!["only".into()],
            owner_identifiers: vec!["owner".into()],
            constructor_state: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Mint,
    OwnerModifier,
    OwnerCheck,
    ConstructorState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Exclude {
        reason: ExclusionReason,
        /// Function in which the match was found (the record itself or a callee).
        via: String,
        matched: String,
    },
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

/// Per-file filter state; parse once, decide for many records.
pub struct StateFilter<'c> {
    cfg: &'c FilterConfig,
    functions: Vec<FunctionDecl>,
    ctor_state: HashMap<Option<String>, BTreeSet<String>>,
}

impl<'c> StateFilter<'c> {
    pub fn new(file: &SourceFile, cfg: &'c FilterConfig) -> Result<Self, super::CorpusError> {
        let s = scan(file)?;
        Ok(Self::from_parts(s.functions, &s.constructors, cfg))
    }

    pub(crate) fn with_declarations(
        file: &SourceFile,
        functions: Vec<FunctionDecl>,
        cfg: &'c FilterConfig,
    ) -> Self {
        let ctors = scan(file).map(|s| s.constructors).unwrap_or_default();
        Self::from_parts(functions, &ctors, cfg)
    }

    fn from_parts(functions: Vec<FunctionDecl>, ctors: &[ConstructorDecl], cfg: &'c FilterConfig) -> Self {
        let mut ctor_state: HashMap<Option<String>, BTreeSet<String>> = HashMap::new();
        for c in ctors {
            ctor_state
                .entry(c.contract.clone())
                .or_default()
                .extend(constructor_assignments(c));
        }
        StateFilter {
            cfg,
            functions,
            ctor_state,
        }
    }

    pub fn decide(&self, record: &FunctionRecord) -> FilterDecision {
        let mut queue = VecDeque::new();
        let mut seen = HashSet::new();
        queue.push_back((record.name.clone(), record.signature.clone(), record.body.clone()));
        seen.insert(record.name.clone());
        let siblings: Vec<&FunctionDecl> = self
            .functions
            .iter()
            .filter(|f| f.contract == record.contract)
            .collect();
        let ctor_state = self.ctor_state.get(&record.contract);
        while let Some((name, signature, body)) = queue.pop_front() {
            let body_lx = code_lexemes(&body);
            if let Some((reason, matched)) = self.check(&signature, &body_lx, ctor_state) {
                return FilterDecision::Exclude {
                    reason,
                    via: name,
                    matched,
                };
            }
            for callee in called_names(&body_lx) {
                if seen.contains(callee) {
                    continue;
                }
                for f in siblings.iter().filter(|f| f.name == callee) {
                    queue.push_back((f.name.clone(), f.signature.clone(), f.body.clone()));
                }
                seen.insert(callee.to_string());
            }
        }
        FilterDecision::Keep
    }

    fn check(
        &self,
        signature: &str,
        body: &[Lexeme<'_>],
        ctor_state: Option<&BTreeSet<String>>,
    ) -> Option<(ExclusionReason, String)> {
        if let Some(m) = body
            .iter()
            .find(|l| l.kind == LexKind::Ident && self.cfg.mint_identifiers.iter().any(|m| m == l.text))
        {
            return Some((ExclusionReason::Mint, m.text.to_string()));
        }
        if let Some(m) = self.owner_modifier(signature) {
            return Some((ExclusionReason::OwnerModifier, m));
        }
        if let Some(m) = self.owner_check(body) {
            return Some((ExclusionReason::OwnerCheck, m));
        }
        if self.cfg.constructor_state {
            if let Some(state) = ctor_state {
                if let Some(l) = body
                    .iter()
                    .find(|l| l.kind == LexKind::Ident && state.contains(l.text))
                {
                    return Some((ExclusionReason::ConstructorState, l.text.to_string()));
                }
            }
        }
        None
    }

    fn owner_modifier(&self, signature: &str) -> Option<String> {
        let lx = code_lexemes(signature);
        // modifiers follow the parameter list
        let mut depth = 0i64;
        let mut after_params = None;
        for (i, l) in lx.iter().enumerate() {
            if l.is_punct("(") {
                depth += 1;
            } else if l.is_punct(")") {
                depth -= 1;
                if depth == 0 {
                    after_params = Some(i + 1);
                    break;
                }
            }
        }
        let start = after_params?;
        lx[start..]
            .iter()
            .filter(|l| l.kind == LexKind::Ident)
            .find(|l| {
                self.cfg.owner_modifiers.iter().any(|m| m == l.text)
                    || self.cfg.owner_modifier_prefixes.iter().any(|p| {
                        l.text.len() > p.len()
                            && l.text.starts_with(p.as_str())
                            && l.text[p.len()..].starts_with(|c: char| c.is_ascii_uppercase())
                    })
            })
            .map(|l| l.text.to_string())
    }

    fn owner_check(&self, body: &[Lexeme<'_>]) -> Option<String> {
        for i in 0..body.len().saturating_sub(1) {
            let (a, b) = (&body[i], &body[i + 1]);
            let is_cmp = (a.is_punct("=") || a.is_punct("!")) && b.is_punct("=") && a.end == b.start;
            if !is_cmp || (i > 0 && body[i - 1].is_punct("=") && body[i - 1].end == a.start) {
                continue;
            }
            let mut left = operand(body[..i].iter().rev(), true);
            left.reverse();
            let right = operand(body[i + 2..].iter(), false);
            let sides = [(&left, &right), (&right, &left)];
            for (s, o) in sides {
                if is_sender(s) {
                    if let Some(owner) = o.iter().find(|l| {
                        l.kind == LexKind::Ident && {
                            let lower = l.text.to_ascii_lowercase();
                            self.cfg.owner_identifiers.iter().any(|w| lower.contains(w.as_str()))
                        }
                    }) {
                        return Some(owner.text.to_string());
                    }
                }
            }
        }
        None
    }
}

/// Decides whether `record` must be excluded as state-dependent.
pub fn filter_state_dependent(
    record: &FunctionRecord,
    file: &SourceFile,
    cfg: &FilterConfig,
) -> Result<FilterDecision, super::CorpusError> {
    Ok(StateFilter::new(file, cfg)?.decide(record))
}

fn code_lexemes(text: &str) -> Vec<Lexeme<'_>> {
    lexer::lex(text)
        .unwrap_or_default()
        .into_iter()
        .filter(|l| !l.is_comment())
        .collect()
}

/// Tokens of one comparison operand, walking away from the operator.
fn operand<'a, 'b>(iter: impl Iterator<Item = &'b Lexeme<'a>>, backwards: bool) -> Vec<Lexeme<'a>>
where
    'a: 'b,
{
    let (open, close) = if backwards { ([")", "]"], ["(", "["]) } else { (["(", "["], [")", "]"]) };
    let mut depth = 0i64;
    let mut out = Vec::new();
    for l in iter {
        if l.kind == LexKind::Punct {
            if open.contains(&l.text) {
                depth += 1;
            } else if close.contains(&l.text) {
                depth -= 1;
            }
            if depth < 0 || (depth == 0 && matches!(l.text, "," | ";" | "{" | "}" | "&" | "|" | "?" | ":")) {
                break;
            }
        }
        out.push(*l);
    }
    out
}

fn is_sender(side: &[Lexeme<'_>]) -> bool {
    side.iter().any(|l| l.is_ident("_msgSender"))
        || side
            .windows(3)
            .any(|w| (w[0].is_ident("msg") || w[0].is_ident("tx")) && w[1].is_punct(".") && (w[2].is_ident("sender") || w[2].is_ident("origin")))
}

fn called_names<'a>(body: &[Lexeme<'a>]) -> Vec<&'a str> {
    let mut out = Vec::new();
    for w in body.windows(2) {
        if w[0].kind == LexKind::Ident && w[1].is_punct("(") && !is_reserved(w[0].text) && !out.contains(&w[0].text) {
            out.push(w[0].text);
        }
    }
    out
}

/// State names assigned in a constructor body, excluding its parameters and
/// locals.
fn constructor_assignments(c: &ConstructorDecl) -> BTreeSet<String> {
    let params: HashSet<&str> = code_lexemes(&c.header)
        .iter()
        .filter(|l| l.kind == LexKind::Ident)
        .map(|l| l.text)
        .collect();
    let lx = code_lexemes(&c.body);
    let mut out = BTreeSet::new();
    let mut stmt_start = 0;
    for i in 0..lx.len() {
        let l = &lx[i];
        if l.is_punct(";") || l.is_punct("{") || l.is_punct("}") {
            stmt_start = i + 1;
            continue;
        }
        let is_assign = l.is_punct("=")
            && !lx.get(i + 1).is_some_and(|n| n.is_punct("=") && n.start == l.end)
            && !(i > 0 && matches!(lx[i - 1].text, "=" | "!" | "<" | ">") && lx[i - 1].end == l.start);
        if !is_assign {
            continue;
        }
        let Some(first) = lx[stmt_start..i].iter().find(|l| l.kind == LexKind::Ident) else {
            continue;
        };
        if is_reserved(first.text) || params.contains(first.text) {
            continue;
        }
        // `Type name = ...` declares a local
        let idents = lx[stmt_start..i].iter().filter(|l| l.kind == LexKind::Ident).count();
        let has_access = lx[stmt_start..i].iter().any(|l| l.is_punct(".") || l.is_punct("["));
        if idents > 1 && !has_access {
            continue;
        }
        out.insert(first.text.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::extract_functions;
    use super::*;

    fn decide_all(src: &str) -> Vec<(String, FilterDecision)> {
        let f = SourceFile::new("f.sol", src).unwrap();
        let cfg = FilterConfig::default();
        let filter = StateFilter::new(&f, &cfg).unwrap();
        extract_functions(&f)
            .unwrap()
            .iter()
            .map(|r| (r.name.clone(), filter.decide(r)))
            .collect()
    }

    fn reason(d: &FilterDecision) -> Option<ExclusionReason> {
        match d {
            FilterDecision::Keep => None,
            FilterDecision::Exclude { reason, .. } => Some(*reason),
        }
    }

    #[test]
    fn mint_is_excluded() {
        let out = decide_all("contract T {\n    /// mint\n    function give(address to, uint amount) external {\n        _mint(to, amount);\n    }\n}\n");
        assert_eq!(reason(&out[0].1), Some(ExclusionReason::Mint));
    }

    #[test]
    fn pure_arithmetic_is_kept() {
        let out = decide_all("contract T {\n    /// add\n    function add(uint a, uint b) public pure returns (uint) {\n        return a + b;\n    }\n}\n");
        assert!(out[0].1.is_keep());
    }

    #[test]
    fn sibling_with_owner_modifier_excludes_caller() {
        let src = "contract T {\n    function setFee(uint f) public onlyOwner {\n        fee = f;\n    }\n    /// reset\n    function reset() external {\n        setFee(0);\n    }\n}\n";
        let out = decide_all(src);
        match &out[0].1 {
            FilterDecision::Exclude { reason, via, matched } => {
                assert_eq!(*reason, ExclusionReason::OwnerModifier);
                assert_eq!(via, "setFee");
                assert_eq!(matched, "onlyOwner");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn own_owner_modifier_and_transitive_chain() {
        let src = "contract T {\n    /// a\n    function a() external onlyAdmin {}\n    function c() internal { _mint(msg.sender, 1); }\n    function b() internal { c(); }\n    /// d\n    function d() external { b(); }\n}\n";
        let out = decide_all(src);
        assert_eq!(reason(&out[0].1), Some(ExclusionReason::OwnerModifier));
        assert_eq!(reason(&out[1].1), Some(ExclusionReason::Mint));
    }

    #[test]
    fn sender_owner_comparisons() {
        let src = "contract T {\n    /// a\n    function a() external view returns (bool) {\n        require(msg.sender == owner, \"no\");\n        return true;\n    }\n    /// b\n    function b() external view {\n        if (_owner() != _msgSender()) revert();\n    }\n    /// c\n    function c(address x) external pure returns (bool) {\n        return x == address(0);\n    }\n}\n";
        let out = decide_all(src);
        assert_eq!(reason(&out[0].1), Some(ExclusionReason::OwnerCheck));
        assert_eq!(reason(&out[1].1), Some(ExclusionReason::OwnerCheck));
        assert!(out[2].1.is_keep());
    }

    #[test]
    fn constructor_state_reads_are_excluded() {
        let src = "contract T {\n    uint cap;\n    uint other;\n    constructor(uint c) {\n        cap = c;\n        uint local = 3;\n    }\n    /// capped\n    function capped(uint x) public view returns (bool) {\n        return x <= cap;\n    }\n    /// local\n    function l(uint local) public pure returns (uint) {\n        return local;\n    }\n}\n";
        let out = decide_all(src);
        assert_eq!(reason(&out[0].1), Some(ExclusionReason::ConstructorState));
        assert!(out[1].1.is_keep());
    }

    #[test]
    fn config_can_disable_rules() {
        let src = "contract T {\n    uint cap;\n    constructor() { cap = 1; }\n    /// capped\n    function capped() public view returns (uint) { return cap; }\n}\n";
        let f = SourceFile::new("f.sol", src).unwrap();
        let cfg = FilterConfig {
            constructor_state: false,
            ..FilterConfig::default()
        };
        let rec = &extract_functions(&f).unwrap()[0];
        assert!(filter_state_dependent(rec, &f, &cfg).unwrap().is_keep());
    }

    #[test]
    fn only_prefix_requires_camel_boundary() {
        let src = "contract T {\n    modifier onlyx() { _; }\n    /// a\n    function a() external onlyx {}\n}\n";
        assert!(decide_all(src)[0].1.is_keep());
    }
}
