//! Plain-text dataset manifests: a header, then one tab-separated line per
//! item with its class letter, name and the SHA-256 of its raw pixels.
//!
//! ```text
//! cycledm-dataset 1
//! domain	hw
//! split	train
//! resolution	32
//! provenance	synthetic:seed=0
//! items	2
//! A	A_0000	<sha256>
//! A	A_0001	<sha256>
//! ```

use super::{DomainDataset, Split};
use crate::batch::{class_from_letter, class_letter, Domain};
use crate::error::{Error, Result};
use crate::rng::sha256_hex;

const HEADER: &str = "cycledm-dataset 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub class: u8,
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub domain: Domain,
    pub split: Split,
    pub resolution: usize,
    pub provenance: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn of(ds: &DomainDataset) -> Manifest {
        Manifest {
            domain: ds.domain,
            split: ds.split,
            resolution: ds.resolution,
            provenance: ds.provenance.clone(),
            entries: ds
                .items
                .iter()
                .map(|it| ManifestEntry { class: it.class, name: it.name.clone(), sha256: sha256_hex(&it.pixels) })
                .collect(),
        }
    }
}

fn clean(field: &str, what: &str) -> Result<()> {
    if field.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!("{what} `{}` contains a tab or newline", field.escape_debug())));
    }
    Ok(())
}

pub fn render_manifest(ds: &DomainDataset) -> Result<String> {
    let m = Manifest::of(ds);
    clean(&m.provenance, "provenance")?;
    let mut out = format!(
        "{HEADER}\ndomain\t{}\nsplit\t{}\nresolution\t{}\nprovenance\t{}\nitems\t{}\n",
        m.domain,
        m.split,
        m.resolution,
        m.provenance,
        m.entries.len()
    );
    for e in &m.entries {
        clean(&e.name, "item name")?;
        out.push_str(&format!("{}\t{}\t{}\n", class_letter(e.class), e.name, e.sha256));
    }
    Ok(out)
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let bad = |line: usize, r: String| Error::format("dataset manifest", format!("line {line}: {r}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, HEADER)) => {}
        _ => return Err(bad(1, format!("expected `{HEADER}`"))),
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (n, l) = lines.next().ok_or_else(|| bad(0, format!("missing `{key}`")))?;
        match l.split_once('\t') {
            Some((k, v)) if k == key => Ok((n, v.to_string())),
            _ => Err(bad(n, format!("expected `{key}<TAB>value`"))),
        }
    };
    let (n, domain) = field("domain")?;
    let domain: Domain = domain.parse().map_err(|e| bad(n, format!("{e}")))?;
    let (n, split) = field("split")?;
    let split: Split = split.parse().map_err(|e| bad(n, format!("{e}")))?;
    let (n, res) = field("resolution")?;
    let resolution: usize = res.parse().map_err(|_| bad(n, format!("bad resolution `{res}`")))?;
    let (_, provenance) = field("provenance")?;
    let (n, count) = field("items")?;
    let count: usize = count.parse().map_err(|_| bad(n, format!("bad item count `{count}`")))?;

    let mut entries = Vec::new();
    for (n, l) in lines {
        let parts: Vec<&str> = l.split('\t').collect();
        let [letter, name, sha] = parts[..] else {
            return Err(bad(n, "expected `CLASS<TAB>name<TAB>sha256`".into()));
        };
        let class = class_from_letter(letter).ok_or_else(|| bad(n, format!("bad class `{letter}`")))?;
        if sha.len() != 64 || !sha.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
            return Err(bad(n, "hash must be 64 lowercase hex digits".into()));
        }
        entries.push(ManifestEntry { class, name: name.to_string(), sha256: sha.to_string() });
    }
    if entries.len() != count {
        return Err(bad(0, format!("header declares {count} items, found {}", entries.len())));
    }
    Ok(Manifest { domain, split, resolution, provenance, entries })
}
