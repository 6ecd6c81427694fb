//! Resolves token issuers by declaration, manual table and description
//! similarity, then scores the result against the generator's ground truth.
//!
//! cargo run --release --example map_tokens -- [similarity_threshold]

use std::collections::BTreeMap;

use dexp_core::mapper::{build_tfidf, MappingTable, Provenance, DEFAULT_SIMILARITY_THRESHOLD};
use dexp_core::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let theta: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(DEFAULT_SIMILARITY_THRESHOLD);

    let data = generate(&SynthConfig::default())?;
    let descriptions: BTreeMap<_, _> = data
        .protocols
        .iter()
        .map(|p| (p.protocol_id.clone(), p.description.clone()))
        .collect();
    let tfidf = build_tfidf(&descriptions)?;
    let table = MappingTable::build(&data.tokens, &data.manual, Some(&tfidf), theta)?;

    let mut hits: BTreeMap<Provenance, (usize, usize)> = BTreeMap::new();
    for (token, m) in &table.entries {
        let correct = match data.issuers.get(token) {
            Some(q) => &m.protocol == q,
            None => m.provenance == Provenance::SelfProtocol,
        };
        let e = hits.entry(m.provenance).or_default();
        e.0 += usize::from(correct);
        e.1 += 1;
    }
    println!("threshold {theta}: {} tokens", table.entries.len());
    for (prov, (ok, n)) in &hits {
        println!("  {:<14} {:>5} tokens, {:>6.1}% correct", prov.as_str(), n, 100.0 * *ok as f64 / *n as f64);
    }
    Ok(())
}
