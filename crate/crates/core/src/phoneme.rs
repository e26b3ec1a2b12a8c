//! Lexicons, IPA annotation tables and the concatenated multi-language phoneme table.
//!
//! Every language contributes its own block of ids, so a symbol spelled the same way in two
//! languages gets two rows in the embedding table. Ids 0 and 1 are reserved for padding and
//! end-of-sequence.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: usize = 0;
pub const EOS: usize = 1;
/// Language tag carried by the two engine-level specials.
pub const SPECIAL_LANG: &str = "*";
/// Annotation for symbols with no IPA counterpart.
pub const NO_IPA: &str = "(-)";

#[derive(Debug, Error)]
pub enum PhonemeError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed entry {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: duplicate symbol {symbol:?}")]
    DuplicateSymbol { line: usize, symbol: String },
    #[error("phoneme table needs at least one inventory")]
    NoInventories,
    #[error("language {0:?} listed twice")]
    DuplicateLanguage(String),
    #[error("inventory of {0:?} is empty")]
    EmptyInventory(String),
    #[error("symbol {symbol:?} appears twice in the {lang:?} inventory")]
    DuplicateInInventory { lang: String, symbol: String },
    #[error("out-of-vocabulary words: {}", .0.join(", "))]
    OutOfVocabulary(Vec<String>),
    #[error("unknown phoneme {lang}:{symbol}")]
    UnknownPhoneme { lang: String, symbol: String },
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
}

fn read(path: &Path) -> Result<String, PhonemeError> {
    fs::read_to_string(path).map_err(|source| PhonemeError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSymbol {
    pub lang: String,
    pub symbol: String,
    pub ipa: Option<String>,
}

/// Word → phoneme lookup for one language.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    pub lang: String,
    entries: HashMap<String, Vec<String>>,
    inventory: Vec<String>,
    warnings: Vec<String>,
}

impl Lexicon {
    /// Parses `WORD PH1 PH2 ...` lines; `#` starts a comment. The first entry for a word wins.
    pub fn parse(text: &str, lang: &str) -> Result<Self, PhonemeError> {
        let mut lex = Lexicon {
            lang: lang.to_string(),
            ..Default::default()
        };
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("non-empty line").to_lowercase();
            let phones: Vec<String> = fields.map(str::to_string).collect();
            if phones.is_empty() {
                return Err(PhonemeError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if lex.entries.contains_key(&word) {
                lex.warnings
                    .push(format!("line {}: duplicate entry for {word:?} ignored", i + 1));
                continue;
            }
            for p in &phones {
                if seen.insert(p.clone()) {
                    lex.inventory.push(p.clone());
                }
            }
            lex.entries.insert(word, phones);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>, lang: &str) -> Result<Self, PhonemeError> {
        Self::parse(&read(path.as_ref())?, lang)
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Phonemes in order of first appearance.
    pub fn inventory(&self) -> &[String] {
        &self.inventory
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Symbol → IPA annotations for one language.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IpaTable {
    map: HashMap<String, String>,
}

impl IpaTable {
    /// Parses `SYMBOL<TAB>IPA` lines. Several symbols may share one IPA string.
    pub fn parse(text: &str) -> Result<Self, PhonemeError> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let Some((sym, ipa)) = line.split_once('\t') else {
                return Err(PhonemeError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let (sym, ipa) = (sym.trim(), ipa.trim());
            if sym.is_empty() || ipa.is_empty() {
                return Err(PhonemeError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if map.insert(sym.to_string(), ipa.to_string()).is_some() {
                return Err(PhonemeError::DuplicateSymbol {
                    line: i + 1,
                    symbol: sym.to_string(),
                });
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PhonemeError> {
        Self::parse(&read(path.as_ref())?)
    }

    pub fn insert(&mut self, symbol: &str, ipa: &str) {
        self.map.insert(symbol.to_string(), ipa.to_string());
    }

    pub fn get(&self, symbol: &str) -> Option<&str> {
        self.map.get(symbol).map(String::as_str)
    }

    /// IPA for `symbol`, or `"(-)"` when the table has none.
    pub fn annotate(&self, symbol: &str) -> &str {
        self.get(symbol).unwrap_or(NO_IPA)
    }
}

/// Reads an inventory file: one symbol per line, `#` comments.
pub fn load_inventory(path: impl AsRef<Path>) -> Result<Vec<String>, PhonemeError> {
    Ok(parse_inventory(&read(path.as_ref())?))
}

pub fn parse_inventory(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// The concatenated embedding dictionary: specials, then each language's inventory in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhonemeTable {
    symbols: Vec<PhonemeSymbol>,
    #[serde(skip)]
    index: HashMap<(String, String), usize>,
}

impl PhonemeTable {
    pub fn build(inventories: &[(String, Vec<String>)]) -> Result<Self, PhonemeError> {
        if inventories.is_empty() {
            return Err(PhonemeError::NoInventories);
        }
        let mut langs = HashSet::new();
        let mut symbols = vec![
            PhonemeSymbol {
                lang: SPECIAL_LANG.into(),
                symbol: "<pad>".into(),
                ipa: None,
            },
            PhonemeSymbol {
                lang: SPECIAL_LANG.into(),
                symbol: "<eos>".into(),
                ipa: None,
            },
        ];
        for (lang, inv) in inventories {
            if !langs.insert(lang.clone()) {
                return Err(PhonemeError::DuplicateLanguage(lang.clone()));
            }
            if inv.is_empty() {
                return Err(PhonemeError::EmptyInventory(lang.clone()));
            }
            let mut seen = HashSet::new();
            for s in inv {
                if !seen.insert(s) {
                    return Err(PhonemeError::DuplicateInInventory {
                        lang: lang.clone(),
                        symbol: s.clone(),
                    });
                }
                symbols.push(PhonemeSymbol {
                    lang: lang.clone(),
                    symbol: s.clone(),
                    ipa: None,
                });
            }
        }
        Ok(Self::from_symbols(symbols))
    }

    fn from_symbols(symbols: Vec<PhonemeSymbol>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.lang.clone(), s.symbol.clone()), i))
            .collect();
        Self { symbols, index }
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_symbols(self.symbols)
    }

    /// Attaches IPA annotations to the entries of `lang`.
    pub fn annotate(&mut self, lang: &str, table: &IpaTable) {
        for s in self.symbols.iter_mut().filter(|s| s.lang == lang) {
            s.ipa = table.get(&s.symbol).map(str::to_string);
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, lang: &str, symbol: &str) -> Option<usize> {
        self.index.get(&(lang.to_string(), symbol.to_string())).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&PhonemeSymbol> {
        self.symbols.get(id)
    }

    pub fn symbols(&self) -> &[PhonemeSymbol] {
        &self.symbols
    }

    pub fn is_special(id: usize) -> bool {
        id == PAD || id == EOS
    }

    /// Languages in table order, specials excluded.
    pub fn languages(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.symbols[2..] {
            if out.last() != Some(&s.lang) {
                out.push(s.lang.clone());
            }
        }
        out
    }

    /// Ids of `lang`'s phonemes in table order.
    pub fn lang_ids(&self, lang: &str) -> Vec<usize> {
        self.symbols
            .iter()
            .enumerate()
            .filter(|(_, s)| s.lang == lang)
            .map(|(i, _)| i)
            .collect()
    }

    /// Maps phoneme symbols of `lang` to ids, appending EOS.
    pub fn encode(&self, lang: &str, symbols: &[impl AsRef<str>]) -> Result<Vec<usize>, PhonemeError> {
        let mut ids = Vec::with_capacity(symbols.len() + 1);
        for s in symbols {
            let s = s.as_ref();
            ids.push(self.id(lang, s).ok_or_else(|| PhonemeError::UnknownPhoneme {
                lang: lang.to_string(),
                symbol: s.to_string(),
            })?);
        }
        ids.push(EOS);
        Ok(ids)
    }

    /// Inverse of [`encode`](Self::encode) for non-special ids; specials are dropped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !Self::is_special(i))
            .filter_map(|&i| self.symbol(i).map(|s| s.symbol.clone()))
            .collect()
    }
}

/// Strips every non-alphanumeric character from a token.
pub fn normalize_word(token: &str) -> String {
    token.chars().filter(|c| c.is_alphanumeric()).collect()
}

/// Converts text to EOS-terminated table ids via lexicon lookup.
pub fn phonemize(text: &str, lexicon: &Lexicon, table: &PhonemeTable) -> Result<Vec<usize>, PhonemeError> {
    let mut symbols: Vec<&str> = Vec::new();
    let mut oov = Vec::new();
    for token in text.split_whitespace() {
        let word = normalize_word(token);
        if word.is_empty() {
            continue;
        }
        match lexicon.lookup(&word) {
            Some(ph) => symbols.extend(ph.iter().map(String::as_str)),
            None => oov.push(word),
        }
    }
    if !oov.is_empty() {
        return Err(PhonemeError::OutOfVocabulary(oov));
    }
    table.encode(&lexicon.lang, &symbols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hello_table() -> (Lexicon, PhonemeTable) {
        let lex = Lexicon::parse("HELLO HH AH0 L OW1\n", "en").unwrap();
        let table = PhonemeTable::build(&[("en".into(), lex.inventory().to_vec())]).unwrap();
        (lex, table)
    }

    #[test]
    fn lexicon_lookup_is_case_normalized() {
        let (lex, _) = hello_table();
        assert_eq!(lex.lookup("hello").unwrap(), ["HH", "AH0", "L", "OW1"]);
        assert_eq!(lex.lookup("HeLLo").unwrap().len(), 4);
        assert_eq!(lex.inventory(), ["HH", "AH0", "L", "OW1"]);
    }

    #[test]
    fn empty_lexicon() {
        let lex = Lexicon::parse("", "en").unwrap();
        assert!(lex.is_empty());
        assert!(lex.inventory().is_empty());
    }

    #[test]
    fn duplicate_word_first_wins_with_warning() {
        let text = "A AH0\nA EY1\n";
        let lex = Lexicon::parse(text, "en").unwrap();
        // ordered scan: the first line defining "a" is line 1
        let first = text.lines().find(|l| l.starts_with("A ")).unwrap();
        let expected: Vec<&str> = first.split_whitespace().skip(1).collect();
        assert_eq!(lex.lookup("a").unwrap(), expected.as_slice());
        assert_eq!(lex.warnings().len(), 1);
        assert!(lex.warnings()[0].contains("line 2"));
    }

    #[test]
    fn malformed_lexicon_line_reports_line_number() {
        let err = Lexicon::parse("# header\nHELLO HH\nBROKEN\n", "en").unwrap_err();
        assert!(matches!(err, PhonemeError::Malformed { line: 3, .. }), "{err}");
    }

    #[test]
    fn comments_are_ignored() {
        let lex = Lexicon::parse("# cmudict style\nCAT K AE1 T # trailing\n", "en").unwrap();
        assert_eq!(lex.lookup("cat").unwrap(), ["K", "AE1", "T"]);
    }

    #[test]
    fn ipa_table_lookup_and_missing() {
        let t = IpaTable::parse("HH\th\n").unwrap();
        assert_eq!(t.annotate("HH"), "h");
        assert_eq!(t.annotate("ps"), "(-)");
        let empty = IpaTable::parse("").unwrap();
        assert_eq!(empty.annotate("HH"), "(-)");
        assert_eq!(empty.annotate("anything"), NO_IPA);
    }

    #[test]
    fn ipa_table_shared_ipa_ok_duplicate_symbol_err() {
        let t = IpaTable::parse("AH0\tʌ\nAH1\tʌ\n").unwrap();
        assert_eq!(t.annotate("AH0"), t.annotate("AH1"));
        let err = IpaTable::parse("HH\th\nHH\tx\n").unwrap_err();
        assert!(matches!(err, PhonemeError::DuplicateSymbol { line: 2, .. }));
        assert!(IpaTable::parse("nohtab\n").is_err());
    }

    #[test]
    fn table_sizes_and_ids() {
        let a: Vec<String> = (0..40).map(|i| format!("a{i}")).collect();
        let b: Vec<String> = (0..70).map(|i| format!("b{i}")).collect();
        let t = PhonemeTable::build(&[("A".into(), a), ("B".into(), b)]).unwrap();
        assert_eq!(t.len(), 112);

        let t = PhonemeTable::build(&[("L".into(), vec!["a".into(), "b".into()])]).unwrap();
        assert_eq!(t.id("L", "a"), Some(2));
        assert_eq!(t.id("L", "b"), Some(3));
        assert_eq!(t.symbol(PAD).unwrap().symbol, "<pad>");
        assert_eq!(t.symbol(EOS).unwrap().symbol, "<eos>");
    }

    #[test]
    fn shared_spelling_gets_distinct_ids() {
        let t = PhonemeTable::build(&[
            ("en".into(), vec!["t".into(), "k".into()]),
            ("ko".into(), vec!["t".into()]),
        ])
        .unwrap();
        assert_ne!(t.id("en", "t"), t.id("ko", "t"));
        assert_eq!(t.languages(), ["en", "ko"]);
        assert_eq!(t.lang_ids("ko"), [4]);
    }

    #[test]
    fn table_build_errors() {
        assert!(matches!(PhonemeTable::build(&[]), Err(PhonemeError::NoInventories)));
        let dup = PhonemeTable::build(&[("x".into(), vec!["a".into()]), ("x".into(), vec!["b".into()])]);
        assert!(matches!(dup, Err(PhonemeError::DuplicateLanguage(_))));
        let empty = PhonemeTable::build(&[("x".into(), vec![])]);
        assert!(matches!(empty, Err(PhonemeError::EmptyInventory(_))));
    }

    #[test]
    fn phonemize_examples() {
        let (lex, table) = hello_table();
        assert_eq!(phonemize("", &lex, &table).unwrap(), vec![EOS]);
        let ids = phonemize("Hello!", &lex, &table).unwrap();
        let expected: Vec<usize> = ["HH", "AH0", "L", "OW1"]
            .iter()
            .map(|s| table.id("en", s).unwrap())
            .chain([EOS])
            .collect();
        assert_eq!(ids, expected);
        match phonemize("hello zzz", &lex, &table) {
            Err(PhonemeError::OutOfVocabulary(words)) => assert_eq!(words, vec!["zzz".to_string()]),
            other => panic!("expected OOV, got {other:?}"),
        }
    }

    #[test]
    fn reindex_after_serde() {
        let (_, table) = hello_table();
        let json = serde_json::to_string(&table).unwrap();
        let back: PhonemeTable = serde_json::from_str::<PhonemeTable>(&json).unwrap().reindex();
        assert_eq!(back, table);
    }

    proptest! {
        #[test]
        fn ids_round_trip_and_namespaced(
            a in proptest::collection::hash_set("[a-z]{1,3}", 1..12),
            b in proptest::collection::hash_set("[a-z]{1,3}", 1..12),
        ) {
            let a: Vec<String> = a.into_iter().collect();
            let b: Vec<String> = b.into_iter().collect();
            let inv = vec![("A".to_string(), a.clone()), ("B".to_string(), b.clone())];
            let t = PhonemeTable::build(&inv).unwrap();
            prop_assert_eq!(t.len(), 2 + a.len() + b.len());
            for id in 0..t.len() {
                let s = t.symbol(id).unwrap();
                prop_assert_eq!(t.id(&s.lang, &s.symbol), Some(id));
            }
            for s in a.iter().filter(|s| b.contains(s)) {
                prop_assert_ne!(t.id("A", s), t.id("B", s));
            }
            prop_assert_eq!(PhonemeTable::build(&inv).unwrap(), t);
        }
    }
}
