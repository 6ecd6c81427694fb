//! Token → issuing-protocol resolution.
//!
//! Four stages, first match wins: declared issuer from metadata, manual
//! override, TF-IDF similarity between the token description and protocol
//! descriptions (accepted at or above a threshold), and finally the token
//! standing as its own protocol.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{IssuerMap, ProtocolId, TokenId};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMetadata {
    pub token_id: TokenId,
    #[serde(default, rename = "issuer", skip_serializing_if = "Option::is_none")]
    pub declared_issuer: Option<ProtocolId>,
    #[serde(default)]
    pub symbol: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Metadata,
    Manual,
    Tfidf,
    #[serde(rename = "self")]
    SelfProtocol,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Metadata => "metadata",
            Provenance::Manual => "manual",
            Provenance::Tfidf => "tfidf",
            Provenance::SelfProtocol => "self",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mapping {
    pub protocol: ProtocolId,
    pub provenance: Provenance,
    /// Best cosine similarity when the TF-IDF stage ran.
    pub similarity: Option<f64>,
}

/// Sparse vector as `(term index, weight)` pairs sorted by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector(pub Vec<(usize, f64)>);

impl SparseVector {
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|(i, _)| *i);
        SparseVector(pairs)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Lowercase, split on non-alphanumerics, keep tokens of length >= 2.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn cosine_similarity(a: &SparseVector, b: &SparseVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct TfidfModel {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    protocols: Vec<ProtocolId>,
    document_vectors: Vec<SparseVector>,
}

impl TfidfModel {
    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn idf_of(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&i| self.idf[i])
    }

    pub fn document_vector(&self, p: &ProtocolId) -> Option<&SparseVector> {
        let i = self.protocols.binary_search(p).ok()?;
        Some(&self.document_vectors[i])
    }

    pub fn protocols(&self) -> &[ProtocolId] {
        &self.protocols
    }

    /// L2-normalized tf-idf vector of `text`; out-of-vocabulary terms count
    /// toward the document length but carry no weight.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let terms = tokenize(text);
        if terms.is_empty() {
            return SparseVector::default();
        }
        let len = terms.len() as f64;
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in &terms {
            if let Some(&i) = self.vocabulary.get(t) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let mut v: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(i, c)| (i, c as f64 / len * self.idf[i]))
            .collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut v {
                *w /= norm;
            }
        }
        SparseVector(v)
    }

    /// Best-matching protocol for `text`: highest cosine similarity, ties to
    /// the smallest protocol id.
    pub fn best_match(&self, text: &str) -> Option<(ProtocolId, f64)> {
        let v = self.vectorize(text);
        let mut best: Option<(usize, f64)> = None;
        for (i, doc) in self.document_vectors.iter().enumerate() {
            let s = cosine_similarity(&v, doc);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, s)| (self.protocols[i].clone(), s))
    }
}

/// tf = count / length, idf = ln(N / (1 + df)) + 1, rows L2-normalized.
pub fn build_tfidf(descriptions: &BTreeMap<ProtocolId, String>) -> Result<TfidfModel> {
    let docs: Vec<(ProtocolId, Vec<String>)> = descriptions
        .iter()
        .map(|(p, d)| (p.clone(), tokenize(d)))
        .collect();
    if docs.iter().all(|(_, t)| t.is_empty()) {
        return Err(Error::EmptyCorpus);
    }

    let mut vocabulary = BTreeMap::new();
    for (_, terms) in &docs {
        for t in terms {
            vocabulary.entry(t.clone()).or_insert(0usize);
        }
    }
    for (i, idx) in vocabulary.values_mut().enumerate() {
        *idx = i;
    }

    let mut df = vec![0usize; vocabulary.len()];
    for (_, terms) in &docs {
        let mut seen: Vec<usize> = terms.iter().map(|t| vocabulary[t]).collect();
        seen.sort_unstable();
        seen.dedup();
        for i in seen {
            df[i] += 1;
        }
    }
    let n = docs.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| (n / (1.0 + d as f64)).ln() + 1.0).collect();

    let mut model = TfidfModel {
        vocabulary,
        idf,
        protocols: Vec::with_capacity(docs.len()),
        document_vectors: Vec::with_capacity(docs.len()),
    };
    for (p, terms) in docs {
        let v = model.vectorize(&terms.join(" "));
        model.protocols.push(p);
        model.document_vectors.push(v);
    }
    Ok(model)
}

pub fn self_protocol_id(token: &TokenId) -> ProtocolId {
    ProtocolId::new(format!("token:{token}"))
}

pub fn map_token(
    meta: &TokenMetadata,
    manual: &BTreeMap<TokenId, ProtocolId>,
    model: Option<&TfidfModel>,
    theta: f64,
) -> Mapping {
    if let Some(issuer) = &meta.declared_issuer {
        return Mapping {
            protocol: issuer.clone(),
            provenance: Provenance::Metadata,
            similarity: None,
        };
    }
    if let Some(p) = manual.get(&meta.token_id) {
        return Mapping {
            protocol: p.clone(),
            provenance: Provenance::Manual,
            similarity: None,
        };
    }
    let best = model.and_then(|m| m.best_match(&meta.description));
    if let Some((p, s)) = &best {
        if *s >= theta && *s > 0.0 {
            return Mapping {
                protocol: p.clone(),
                provenance: Provenance::Tfidf,
                similarity: Some(*s),
            };
        }
    }
    Mapping {
        protocol: self_protocol_id(&meta.token_id),
        provenance: Provenance::SelfProtocol,
        similarity: best.map(|(_, s)| s),
    }
}

#[derive(Debug, Clone)]
pub struct MappingTable {
    pub entries: BTreeMap<TokenId, Mapping>,
    pub similarity_threshold: f64,
}

impl MappingTable {
    pub fn build(
        tokens: &[TokenMetadata],
        manual: &BTreeMap<TokenId, ProtocolId>,
        model: Option<&TfidfModel>,
        theta: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidConfig(format!("similarity threshold {theta} outside [0, 1]")));
        }
        let entries = tokens
            .iter()
            .map(|m| (m.token_id.clone(), map_token(m, manual, model, theta)))
            .collect();
        Ok(MappingTable {
            entries,
            similarity_threshold: theta,
        })
    }

    pub fn issuer_map(&self) -> IssuerMap {
        self.entries
            .iter()
            .map(|(t, m)| (t.clone(), m.protocol.clone()))
            .collect()
    }

    pub fn count_by_provenance(&self) -> BTreeMap<Provenance, usize> {
        let mut out = BTreeMap::new();
        for m in self.entries.values() {
            *out.entry(m.provenance).or_default() += 1;
        }
        out
    }

    /// CSV `token_id,protocol_id,provenance,similarity`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["token_id", "protocol_id", "provenance", "similarity"])?;
        for (t, m) in &self.entries {
            let sim = m.similarity.map(|s| format!("{:.6}", s)).unwrap_or_default();
            w.write_record([t.as_str(), m.protocol.as_str(), m.provenance.as_str(), &sim])?;
        }
        w.flush().map_err(|e| Error::io("mapping.csv", e))?;
        Ok(())
    }
}

/// Reads a mapping CSV back into an issuer map.
pub fn read_mapping_csv(input: impl Read) -> Result<IssuerMap> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = IssuerMap::new();
    for rec in r.records() {
        let rec = rec?;
        let (Some(t), Some(p)) = (rec.get(0), rec.get(1)) else {
            continue;
        };
        out.insert(TokenId::new(t), ProtocolId::new(p));
    }
    Ok(out)
}

/// Manual overrides: CSV `token_id,protocol_id`.
pub fn read_manual_csv(input: impl Read) -> Result<BTreeMap<TokenId, ProtocolId>> {
    read_mapping_csv(input)
}

pub fn write_manual_csv(manual: &BTreeMap<TokenId, ProtocolId>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["token_id", "protocol_id"])?;
    for (t, p) in manual {
        w.write_record([t.as_str(), p.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("manual_map.csv", e))?;
    Ok(())
}

pub fn read_token_metadata_jsonl(input: impl BufRead) -> Result<Vec<TokenMetadata>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("token metadata", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: TokenMetadata = serde_json::from_str(&line)?;
        if meta.token_id.as_str().is_empty() {
            return Err(Error::InvalidSnapshot("token metadata with empty token_id".into()));
        }
        out.push(meta);
    }
    Ok(out)
}

pub fn write_token_metadata_jsonl(tokens: &[TokenMetadata], mut out: impl Write) -> std::io::Result<()> {
    for t in tokens {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Protocol registry entry; descriptions feed the TF-IDF stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRecord {
    pub protocol_id: ProtocolId,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub chain: String,
    #[serde(default)]
    pub description: String,
}

pub fn read_protocols_jsonl(input: impl BufRead) -> Result<Vec<ProtocolRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("protocol registry", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_protocols_jsonl(protocols: &[ProtocolRecord], mut out: impl Write) -> std::io::Result<()> {
    for p in protocols {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(docs: &[(&str, &str)]) -> BTreeMap<ProtocolId, String> {
        docs.iter().map(|(p, d)| (ProtocolId::new(*p), d.to_string())).collect()
    }

    fn meta(id: &str, issuer: Option<&str>, desc: &str) -> TokenMetadata {
        TokenMetadata {
            token_id: TokenId::new(id),
            declared_issuer: issuer.map(ProtocolId::new),
            symbol: String::new(),
            description: desc.into(),
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Aave V3: lending-pool, a x"), vec!["aave", "v3", "lending", "pool"]);
    }

    #[test]
    fn tf_and_idf_values() {
        let m = build_tfidf(&corpus(&[("p", "alpha alpha beta")])).unwrap();
        let idf = (1.0f64 / 2.0).ln() + 1.0;
        assert!((m.idf_of("alpha").unwrap() - idf).abs() < 1e-15);
        let v = m.document_vector(&ProtocolId::new("p")).unwrap();
        // tf 2/3 and 1/3 with equal idf normalize to (2, 1)/sqrt(5)
        let a = v.0[m.vocabulary()["alpha"]].1;
        let b = v.0[m.vocabulary()["beta"]].1;
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_documents_identical_vectors() {
        let m = build_tfidf(&corpus(&[("a", "curve stable swap"), ("b", "curve stable swap")])).unwrap();
        assert_eq!(
            m.document_vector(&ProtocolId::new("a")),
            m.document_vector(&ProtocolId::new("b"))
        );
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(build_tfidf(&corpus(&[("a", ""), ("b", " - ")])), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn cosine_examples() {
        let a = SparseVector::from_pairs(vec![(0, 1.0), (1, 1.0)]);
        let b = SparseVector::from_pairs(vec![(0, 1.0), (2, 1.0)]);
        assert!((cosine_similarity(&a, &b) - 0.5).abs() < 1e-15);
        assert!((cosine_similarity(&a, &a) - 1.0).abs() < 1e-12);
        let c = SparseVector::from_pairs(vec![(5, 2.0)]);
        assert_eq!(cosine_similarity(&a, &c), 0.0);
        assert_eq!(cosine_similarity(&a, &SparseVector::default()), 0.0);
    }

    #[test]
    fn fallback_stages() {
        let model = build_tfidf(&corpus(&[
            ("aave", "aave lending protocol money market"),
            ("curve", "curve stableswap exchange liquidity pools"),
        ]))
        .unwrap();
        let manual: BTreeMap<_, _> = [(TokenId::new("m"), ProtocolId::new("curve"))].into();

        let r = map_token(&meta("x", Some("lido"), "aave"), &manual, Some(&model), 0.5);
        assert_eq!((r.protocol.as_str(), r.provenance), ("lido", Provenance::Metadata));

        let r = map_token(&meta("m", None, "aave lending"), &manual, Some(&model), 0.5);
        assert_eq!((r.protocol.as_str(), r.provenance), ("curve", Provenance::Manual));

        let r = map_token(&meta("t", None, "aave lending market token"), &manual, Some(&model), 0.5);
        assert_eq!((r.protocol.as_str(), r.provenance), ("aave", Provenance::Tfidf));
        assert!(r.similarity.unwrap() >= 0.5);

        let r = map_token(&meta("weth", None, "wrapped ether"), &manual, Some(&model), 0.5);
        assert_eq!((r.protocol.as_str(), r.provenance), ("token:weth", Provenance::SelfProtocol));
    }

    #[test]
    fn ties_go_to_smallest_protocol() {
        let model = build_tfidf(&corpus(&[("zeta", "bridge relay"), ("alpha", "bridge relay")])).unwrap();
        let r = map_token(&meta("t", None, "bridge relay"), &BTreeMap::new(), Some(&model), 0.3);
        assert_eq!(r.protocol.as_str(), "alpha");
    }

    #[test]
    fn mapping_csv_roundtrip() {
        let model = build_tfidf(&corpus(&[("aave", "aave lending")])).unwrap();
        let tokens = vec![meta("a", Some("aave"), ""), meta("b", None, "aave lending"), meta("c", None, "zzz")];
        let table = MappingTable::build(&tokens, &BTreeMap::new(), Some(&model), 0.3).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("token_id,protocol_id,provenance,similarity\n"));
        assert!(text.contains("c,token:c,self,"));
        assert_eq!(read_mapping_csv(buf.as_slice()).unwrap(), table.issuer_map());
    }

    #[test]
    fn metadata_jsonl_uses_issuer_field() {
        let line = r#"{"token_id":"eth:0x1","issuer":"aave","symbol":"aUSDC","description":"x"}"#;
        let toks = read_token_metadata_jsonl(line.as_bytes()).unwrap();
        assert_eq!(toks[0].declared_issuer, Some(ProtocolId::new("aave")));
        let line = r#"{"token_id":"eth:0x2","symbol":"W","description":"wrapped"}"#;
        assert_eq!(read_token_metadata_jsonl(line.as_bytes()).unwrap()[0].declared_issuer, None);
    }
}
