//! Cross-lingual geometry of the learned phoneme embedding table.
//!
//! Nearest neighbours are ranked by cosine distance with ties broken by table id, so every
//! report is a deterministic function of the embedding values.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::phoneme::{PhonemeTable, NO_IPA};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("cosine distance of a zero vector")]
    ZeroVector,
    #[error("vector lengths differ: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("language {0:?} has no phonemes in the table")]
    UnknownLanguage(String),
    #[error("k = {k} exceeds the {available} phonemes of {lang:?}")]
    TooManyNeighbors { k: usize, available: usize, lang: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("anchor {0:?} is not a phoneme of the anchor language")]
    UnknownAnchor(String),
    #[error("id {id} does not belong to language {lang:?}")]
    ForeignId { id: usize, lang: String },
    #[error("embedding table has {rows} rows but the phoneme table has {table}")]
    TableSize { rows: usize, table: usize },
}

/// `1 − u·v / (‖u‖‖v‖)`, clamped to `[0, 2]`.
pub fn cosine_distance<T: Scalar>(u: &[T], v: &[T]) -> Result<f64, AnalysisError> {
    if u.len() != v.len() {
        return Err(AnalysisError::Dimension(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a.as_f64(), b.as_f64());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(AnalysisError::ZeroVector);
    }
    Ok((1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub symbol: String,
    pub ipa: Option<String>,
    pub distance: f64,
    /// Whether this neighbour is the anchor's known counterpart; `None` when no mapping exists.
    pub hit: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborRow {
    pub anchor_id: usize,
    pub anchor: String,
    pub anchor_ipa: Option<String>,
    /// Counterpart symbol in the target language, when known.
    pub counterpart: Option<String>,
    pub neighbors: Vec<Neighbor>,
}

impl NeighborRow {
    /// Rank (0-based) of the counterpart among the listed neighbours.
    pub fn counterpart_rank(&self) -> Option<usize> {
        self.neighbors.iter().position(|n| n.hit == Some(true))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborReport {
    pub anchor_lang: String,
    pub target_lang: String,
    pub k: usize,
    pub rows: Vec<NeighborRow>,
}

fn label(symbol: &str, ipa: &Option<String>) -> String {
    match ipa {
        Some(i) => format!("{symbol} ({i})"),
        None => format!("{symbol} {NO_IPA}"),
    }
}

impl NeighborReport {
    /// `anchor  rank  neighbor  distance  hit?` with rank starting at 1; hit is `1`, `0` or `-`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("anchor\trank\tneighbor\tdistance\thit?\n");
        for row in &self.rows {
            for (i, n) in row.neighbors.iter().enumerate() {
                let hit = match n.hit {
                    Some(true) => "1",
                    Some(false) => "0",
                    None => "-",
                };
                let _ = writeln!(out, "{}\t{}\t{}\t{:.6}\t{hit}", row.anchor, i + 1, n.symbol, n.distance);
            }
        }
        out
    }

    /// Aligned plain-text table, one anchor per line, counterpart hits wrapped in `[...]`.
    pub fn to_text(&self) -> String {
        let ordinal = |i: usize| match i {
            1 => "1st".to_string(),
            2 => "2nd".to_string(),
            3 => "3rd".to_string(),
            _ => format!("{i}th"),
        };
        let mut cells: Vec<Vec<String>> = vec![std::iter::once(format!("{} phoneme", self.anchor_lang))
            .chain((1..=self.k).map(ordinal))
            .collect()];
        for row in &self.rows {
            let mut line = vec![label(&row.anchor, &row.anchor_ipa)];
            for n in &row.neighbors {
                let l = label(&n.symbol, &n.ipa);
                line.push(if n.hit == Some(true) { format!("[{l}]") } else { l });
            }
            cells.push(line);
        }
        let cols = self.k + 1;
        let widths: Vec<usize> = (0..cols)
            .map(|c| cells.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in cells.iter().enumerate() {
            let padded: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            out.push_str(padded.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        out
    }

    /// Fraction of rows with a known counterpart whose counterpart ranks within the first `k`.
    pub fn hit_rate(&self, k: usize) -> Option<f64> {
        let known: Vec<&NeighborRow> = self.rows.iter().filter(|r| r.counterpart.is_some()).collect();
        if known.is_empty() {
            return None;
        }
        let hits = known.iter().filter(|r| r.counterpart_rank().is_some_and(|p| p < k)).count();
        Some(hits as f64 / known.len() as f64)
    }
}

fn check_table<T: Scalar>(embeddings: &Tensor<T>, table: &PhonemeTable) -> Result<(), AnalysisError> {
    if embeddings.rows() != table.len() {
        return Err(AnalysisError::TableSize {
            rows: embeddings.rows(),
            table: table.len(),
        });
    }
    Ok(())
}

fn lang_ids(table: &PhonemeTable, lang: &str) -> Result<Vec<usize>, AnalysisError> {
    let ids = table.lang_ids(lang);
    if ids.is_empty() {
        return Err(AnalysisError::UnknownLanguage(lang.to_string()));
    }
    Ok(ids)
}

/// Target ids sorted by distance to `anchor`, ties by id.
fn ranked<T: Scalar>(embeddings: &Tensor<T>, anchor: usize, targets: &[usize]) -> Result<Vec<(usize, f64)>, AnalysisError> {
    let mut out = targets
        .iter()
        .map(|&t| Ok((t, cosine_distance(embeddings.row_slice(anchor), embeddings.row_slice(t))?)))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// For every anchor-language phoneme (or the listed `subset`), the `k` nearest phonemes of the
/// target language. `counterparts` maps anchor symbols to their known target symbols.
pub fn nearest_cross_lingual<T: Scalar>(
    embeddings: &Tensor<T>,
    table: &PhonemeTable,
    anchor_lang: &str,
    target_lang: &str,
    k: usize,
    subset: Option<&[String]>,
    counterparts: &HashMap<String, String>,
) -> Result<NeighborReport, AnalysisError> {
    check_table(embeddings, table)?;
    if k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    let anchors = lang_ids(table, anchor_lang)?;
    let targets = lang_ids(table, target_lang)?;
    if k > targets.len() {
        return Err(AnalysisError::TooManyNeighbors {
            k,
            available: targets.len(),
            lang: target_lang.to_string(),
        });
    }
    let anchors: Vec<usize> = match subset {
        None => anchors,
        Some(list) => list
            .iter()
            .map(|s| table.id(anchor_lang, s).ok_or_else(|| AnalysisError::UnknownAnchor(s.clone())))
            .collect::<Result<_, _>>()?,
    };
    let mut rows = Vec::with_capacity(anchors.len());
    for a in anchors {
        let sym = table.symbol(a).expect("id from table");
        let counterpart = counterparts.get(&sym.symbol).cloned();
        let neighbors = ranked(embeddings, a, &targets)?
            .into_iter()
            .take(k)
            .map(|(id, distance)| {
                let t = table.symbol(id).expect("id from table");
                Neighbor {
                    id,
                    symbol: t.symbol.clone(),
                    ipa: t.ipa.clone(),
                    distance,
                    hit: counterpart.as_ref().map(|c| *c == t.symbol),
                }
            })
            .collect();
        rows.push(NeighborRow {
            anchor_id: a,
            anchor: sym.symbol.clone(),
            anchor_ipa: sym.ipa.clone(),
            counterpart,
            neighbors,
        });
    }
    Ok(NeighborReport {
        anchor_lang: anchor_lang.to_string(),
        target_lang: target_lang.to_string(),
        k,
        rows,
    })
}

/// Result of replacing each phoneme with its nearest counterpart in another language.
#[derive(Clone, Debug, PartialEq)]
pub struct Substitution {
    pub ids: Vec<usize>,
    /// `(from symbol, to symbol, distance)` for each distinct source phoneme, in first-use order.
    pub mapping: Vec<(String, String, f64)>,
}

impl Substitution {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("from\tto\tdistance\n");
        for (f, t, d) in &self.mapping {
            let _ = writeln!(out, "{f}\t{t}\t{d:.6}");
        }
        out
    }
}

/// Maps every `from_lang` id to its 1-nearest `to_lang` id; PAD and EOS pass through.
pub fn substitute_nearest<T: Scalar>(
    ids: &[usize],
    embeddings: &Tensor<T>,
    table: &PhonemeTable,
    from_lang: &str,
    to_lang: &str,
) -> Result<Substitution, AnalysisError> {
    check_table(embeddings, table)?;
    let targets = lang_ids(table, to_lang)?;
    let mut cache: HashMap<usize, (usize, f64)> = HashMap::new();
    let mut mapping = Vec::new();
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if PhonemeTable::is_special(id) {
            out.push(id);
            continue;
        }
        match table.symbol(id) {
            Some(s) if s.lang == from_lang => {}
            _ => {
                return Err(AnalysisError::ForeignId {
                    id,
                    lang: from_lang.to_string(),
                })
            }
        }
        let to = match cache.get(&id) {
            Some(&(to, _)) => to,
            None => {
                let best = ranked(embeddings, id, &targets)?[0];
                cache.insert(id, best);
                mapping.push((
                    table.symbol(id).expect("checked").symbol.clone(),
                    table.symbol(best.0).expect("id from table").symbol.clone(),
                    best.1,
                ));
                best.0
            }
        };
        out.push(to);
    }
    Ok(Substitution { ids: out, mapping })
}
