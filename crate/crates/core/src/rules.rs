//! Rewrite rules, expression enumeration and the rules file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::RulesError;
use crate::expr::{parse_prefix, variable_mask, PrefixExpr};
use crate::vocab::{Alphabet, Token};

/// Version written to and required from rules files.
pub const RULES_VERSION: u32 = 1;

/// A directed rewrite `pattern => replacement`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub pattern: PrefixExpr,
    pub replacement: PrefixExpr,
    /// True when the pattern has no variables.
    pub explicit: bool,
}

impl Rule {
    /// Builds a rule, checking that it only uses pattern variables and that
    /// it reduces length, or keeps it while dropping constants.
    pub fn new(pattern: PrefixExpr, replacement: PrefixExpr) -> Result<Rule, String> {
        let mp = variable_mask(pattern.tokens());
        let mr = variable_mask(replacement.tokens());
        if mr & !mp != 0 {
            return Err("replacement uses variables absent from the pattern".into());
        }
        if !reduces(&pattern, &replacement) {
            return Err("replacement is not smaller than the pattern".into());
        }
        let explicit = mp == 0;
        Ok(Rule {
            pattern,
            replacement,
            explicit,
        })
    }
}

fn reduces(pattern: &PrefixExpr, replacement: &PrefixExpr) -> bool {
    replacement.len() < pattern.len()
        || (replacement.len() == pattern.len()
            && replacement.count_constants() < pattern.count_constants())
}

/// An ordered rule collection tagged with the alphabet it was discovered
/// under and the discovery limits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    pub alphabet: String,
    pub l_max: usize,
    pub l_tgt: usize,
}

impl RuleSet {
    pub fn new(alphabet: impl Into<String>, l_max: usize, l_tgt: usize) -> RuleSet {
        RuleSet {
            rules: Vec::new(),
            alphabet: alphabet.into(),
            l_max,
            l_tgt,
        }
    }

    /// Inserts a rule keeping file order. Fails on a duplicate pattern.
    pub fn insert(&mut self, rule: Rule) -> Result<(), String> {
        match self
            .rules
            .binary_search_by(|r| order(&r.pattern, &rule.pattern))
        {
            Ok(_) => Err(format!("duplicate pattern `{}`", rule.pattern)),
            Err(pos) => {
                self.rules.insert(pos, rule);
                Ok(())
            }
        }
    }

    /// Appends rules in bulk, then restores file order.
    pub fn extend(&mut self, rules: impl IntoIterator<Item = Rule>) -> Result<(), String> {
        self.rules.extend(rules);
        self.rules.sort_by(|a, b| order(&a.pattern, &b.pattern));
        for w in self.rules.windows(2) {
            if w[0].pattern == w[1].pattern {
                return Err(format!("duplicate pattern `{}`", w[0].pattern));
            }
        }
        Ok(())
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, pattern: &PrefixExpr) -> Option<&Rule> {
        self.rules
            .binary_search_by(|r| order(&r.pattern, pattern))
            .ok()
            .map(|i| &self.rules[i])
    }

    /// Serialized file contents.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(64 + self.rules.len() * 24);
        let _ = writeln!(s, "#version {RULES_VERSION}");
        let _ = writeln!(s, "#alphabet {}", self.alphabet);
        let _ = writeln!(s, "#lmax {}", self.l_max);
        let _ = writeln!(s, "#ltgt {}", self.l_tgt);
        for r in &self.rules {
            let _ = writeln!(s, "{} => {}", r.pattern, r.replacement);
        }
        s
    }

    /// Parses file contents. When `expected` is given the file's alphabet
    /// fingerprint must equal it.
    pub fn parse(text: &str, expected: Option<&str>) -> Result<RuleSet, RulesError> {
        let mut version = None;
        let mut alphabet = None;
        let mut l_max = None;
        let mut l_tgt = None;
        let mut rules = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| RulesError::Parse {
                line: line_no,
                message,
            };
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
                let value = value.trim();
                match key {
                    "version" => {
                        if value != RULES_VERSION.to_string() {
                            return Err(RulesError::VersionMismatch(value.to_string()));
                        }
                        version = Some(());
                    }
                    "alphabet" => {
                        if let Some(exp) = expected {
                            if exp != value {
                                return Err(RulesError::AlphabetMismatch {
                                    expected: exp.to_string(),
                                    found: value.to_string(),
                                });
                            }
                        }
                        alphabet = Some(value.to_string());
                    }
                    "lmax" => {
                        l_max = Some(
                            value
                                .parse()
                                .map_err(|_| err(format!("bad lmax `{value}`")))?,
                        )
                    }
                    "ltgt" => {
                        l_tgt = Some(
                            value
                                .parse()
                                .map_err(|_| err(format!("bad ltgt `{value}`")))?,
                        )
                    }
                    _ => {}
                }
                continue;
            }
            if version.is_none() {
                return Err(RulesError::VersionMismatch("missing".into()));
            }
            let (lhs, rhs) = line
                .split_once("=>")
                .ok_or_else(|| err("expected `pattern => replacement`".into()))?;
            let pattern = parse_prefix(lhs).map_err(|e| err(e.to_string()))?;
            let replacement = parse_prefix(rhs).map_err(|e| err(e.to_string()))?;
            rules.push((line_no, Rule::new(pattern, replacement).map_err(err)?));
        }
        if version.is_none() {
            return Err(RulesError::VersionMismatch("missing".into()));
        }
        let alphabet = alphabet.ok_or(RulesError::Parse {
            line: 0,
            message: "missing #alphabet header".into(),
        })?;
        if let Some(exp) = expected {
            if exp != alphabet {
                return Err(RulesError::AlphabetMismatch {
                    expected: exp.to_string(),
                    found: alphabet,
                });
            }
        }
        let mut set = RuleSet::new(alphabet, l_max.unwrap_or(0), l_tgt.unwrap_or(0));
        for (line, rule) in rules {
            set.insert(rule)
                .map_err(|message| RulesError::Parse { line, message })?;
        }
        Ok(set)
    }
}

/// Ascending length, then lexicographic token order.
pub fn order(a: &PrefixExpr, b: &PrefixExpr) -> std::cmp::Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.tokens().cmp(b.tokens()))
}

/// Writes the set to `path`, returning the number of bytes written.
pub fn save_rules(set: &RuleSet, path: &Path) -> Result<usize, RulesError> {
    let text = set.to_text();
    std::fs::write(path, &text)?;
    Ok(text.len())
}

/// Reads a rules file. With `expected` set, a different alphabet
/// fingerprint is an error.
pub fn load_rules(path: &Path, expected: Option<&Alphabet>) -> Result<RuleSet, RulesError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RulesError::Io(format!("{}: {e}", path.display())))?;
    let fp = expected.map(Alphabet::fingerprint);
    RuleSet::parse(&text, fp.as_deref())
}

/// Calls `f` on every arity-consistent sequence of exactly `len` tokens
/// drawn from `tokens`, in lexicographic order of `tokens`.
pub fn visit_expressions(len: usize, tokens: &[Token], f: &mut dyn FnMut(&[Token])) {
    if len == 0 {
        return;
    }
    let mut toks = tokens.to_vec();
    toks.sort();
    toks.dedup();
    let mut buf = Vec::with_capacity(len);
    walk(len, &toks, 1, &mut buf, f);
}

fn walk(
    len: usize,
    toks: &[Token],
    need: usize,
    buf: &mut Vec<Token>,
    f: &mut dyn FnMut(&[Token]),
) {
    let pos = buf.len();
    if pos == len {
        if need == 0 {
            f(buf);
        }
        return;
    }
    let remaining = len - pos - 1;
    for &t in toks {
        let next = need - 1 + t.arity();
        let feasible = if remaining == 0 {
            next == 0
        } else {
            next >= 1 && next <= remaining
        };
        if !feasible {
            continue;
        }
        buf.push(t);
        walk(len, toks, next, buf, f);
        buf.pop();
    }
}

/// All expressions of length `len` over the alphabet's pattern tokens.
pub fn enumerate_expressions(len: usize, alphabet: &Alphabet) -> Vec<PrefixExpr> {
    enumerate_tokens(len, &alphabet.pattern_tokens())
}

/// All expressions of length `len` over `tokens`.
pub fn enumerate_tokens(len: usize, tokens: &[Token]) -> Vec<PrefixExpr> {
    let mut out = Vec::new();
    visit_expressions(len, tokens, &mut |t| {
        out.push(PrefixExpr::from_valid(t.to_vec()))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{Literal, Operator};

    fn p(s: &str) -> PrefixExpr {
        parse_prefix(s).unwrap()
    }

    #[test]
    fn enumerate_small() {
        let leaves = [
            Token::var(1),
            Token::lit(Literal::Zero),
            Token::lit(Literal::One),
        ];
        let e1: Vec<String> = enumerate_tokens(1, &leaves)
            .iter()
            .map(|e| e.to_string())
            .collect();
        assert_eq!(e1, vec!["x1", "0", "1"]);
        let toks = [
            Token::op(Operator::Neg),
            Token::var(1),
            Token::lit(Literal::Zero),
        ];
        let e2: Vec<String> = enumerate_tokens(2, &toks)
            .iter()
            .map(|e| e.to_string())
            .collect();
        assert_eq!(e2, vec!["neg x1", "neg 0"]);
    }

    #[test]
    fn rule_checks() {
        assert!(!Rule::new(p("+ x1 0"), p("x1")).unwrap().explicit);
        assert!(Rule::new(p("exp 0"), p("1")).unwrap().explicit);
        assert!(Rule::new(p("x1"), p("x2")).is_err());
        assert!(Rule::new(p("neg x1"), p("sin x1")).is_err());
        assert!(Rule::new(p("pow2 C"), p("C")).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let mut set = RuleSet::new("abc", 3, 3);
        set.insert(Rule::new(p("neg neg x1"), p("x1")).unwrap())
            .unwrap();
        set.insert(Rule::new(p("+ x1 0"), p("x1")).unwrap())
            .unwrap();
        let text = set.to_text();
        let back = RuleSet::parse(&text, Some("abc")).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_text(), text);
        assert!(matches!(
            RuleSet::parse(&text, Some("xyz")),
            Err(RulesError::AlphabetMismatch { .. })
        ));
    }

    #[test]
    fn parse_errors() {
        let bad = "#version 1\n#alphabet a\n#lmax 3\n#ltgt 3\n+ x1 0 => x1\nfoo x1 => x1\n";
        match RuleSet::parse(bad, None) {
            Err(RulesError::Parse { line, message }) => {
                assert_eq!(line, 6);
                assert!(message.contains("foo"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            RuleSet::parse("#version 2\n", None),
            Err(RulesError::VersionMismatch(_))
        ));
        let empty = RuleSet::parse("#version 1\n#alphabet a\n#lmax 0\n#ltgt 0\n", None).unwrap();
        assert!(empty.is_empty());
    }
}
