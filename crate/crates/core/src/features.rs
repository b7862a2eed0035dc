//! Per-item feature vectors: `[target flag, 0.1 × name length, 4-dim PCA of
//! the name embedding]`.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{MenuSpec, Organization};
use crate::error::{Error, Result};
use crate::numkit::{pca_fit, Matrix, PcaProjection, RngStream};

pub const EMBED_DIM: usize = 50;
pub const SEMANTIC_DIM: usize = 4;
pub const ITEM_DIM: usize = 2 + SEMANTIC_DIM;
pub const ORG_DIM: usize = 3;
pub const NAME_LENGTH_SCALE: f64 = 0.1;

/// Lower-cased token → 50-dim vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
}

fn normalize_token(token: &str) -> String {
    token.trim().to_lowercase()
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(&normalize_token(token)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != EMBED_DIM {
            return Err(Error::Shape(format!(
                "embedding for `{token}` has {} values, expected {EMBED_DIM}",
                vector.len()
            )));
        }
        self.vectors.insert(normalize_token(token), vector);
        Ok(())
    }
}

/// Parse the common `token v1 … v50` text layout.
pub fn load_embeddings<R: BufRead>(source: R) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::default();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != EMBED_DIM {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {EMBED_DIM} values after the token, found {}", values.len()),
            });
        }
        let vector = values
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: format!("`{v}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if table.get(token).is_some() {
            log::warn!("line {lineno}: duplicate token `{token}`, keeping the later vector");
        }
        table.insert(token, vector)?;
    }
    Ok(table)
}

/// Deterministic unit vector for a token, keyed by SHA-256 of (seed, token).
pub fn synth_vector(token: &str, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(normalize_token(token).as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 8];
    key.copy_from_slice(&digest[..8]);
    let mut rng = RngStream::new(u64::from_le_bytes(key));
    let v: Vec<f64> = (0..EMBED_DIM).map(|_| rng.standard_normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn tokens(name: &str) -> impl Iterator<Item = &str> {
    name.split_whitespace()
}

/// Hash-derived embeddings for every token of `names`.
pub fn synth_embeddings<S: AsRef<str>>(names: &[S], seed: u64) -> EmbeddingTable {
    let mut table = EmbeddingTable::default();
    for name in names {
        for tok in tokens(name.as_ref()) {
            if table.get(tok).is_none() {
                table
                    .insert(tok, synth_vector(tok, seed))
                    .expect("synthetic vectors have EMBED_DIM entries");
            }
        }
    }
    table
}

/// Mean of per-word vectors; out-of-vocabulary words count as zero.
pub fn embed_name(name: &str, table: &EmbeddingTable) -> Vec<f64> {
    let mut out = vec![0.0; EMBED_DIM];
    let mut words = 0usize;
    for tok in tokens(name) {
        words += 1;
        if let Some(v) = table.get(tok) {
            out.iter_mut().zip(v).for_each(|(o, x)| *o += x);
        }
    }
    if words > 1 {
        out.iter_mut().for_each(|o| *o /= words as f64);
    }
    out
}

/// PCA to 4 dims over the distinct embedded names.
pub fn fit_name_projection<S: AsRef<str>>(names: &[S], table: &EmbeddingTable) -> Result<PcaProjection> {
    let distinct: BTreeSet<&str> = names.iter().map(AsRef::as_ref).collect();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "name projection needs >= 2 distinct names, got {}",
            distinct.len()
        )));
    }
    let rows: Vec<Vec<f64>> = distinct.iter().map(|n| embed_name(n, table)).collect();
    pca_fit(&Matrix::from_rows(&rows)?, SEMANTIC_DIM)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemFeatures(pub [f64; ITEM_DIM]);

impl ItemFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_target(&self) -> bool {
        self.0[0] == 1.0
    }
}

pub fn item_features(
    name: &str,
    is_target: bool,
    table: &EmbeddingTable,
    proj: &PcaProjection,
) -> Result<ItemFeatures> {
    if proj.k() != SEMANTIC_DIM {
        return Err(Error::Shape(format!(
            "name projection has k = {}, expected {SEMANTIC_DIM}",
            proj.k()
        )));
    }
    let semantic = proj.transform(&embed_name(name, table))?;
    let mut v = [0.0; ITEM_DIM];
    v[0] = if is_target { 1.0 } else { 0.0 };
    v[1] = name.chars().count() as f64 * NAME_LENGTH_SCALE;
    v[2..].copy_from_slice(&semantic);
    Ok(ItemFeatures(v))
}

pub fn org_one_hot(org: Organization) -> [f64; ORG_DIM] {
    match org {
        Organization::Unordered => [1.0, 0.0, 0.0],
        Organization::Alphabetical => [0.0, 1.0, 0.0],
        Organization::Semantic => [0.0, 0.0, 1.0],
    }
}

/// Where the embedding table comes from; stored in checkpoints so that
/// evaluation rebuilds the same features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    Synthetic { seed: u64 },
    /// Pretrained text table identified by the SHA-256 of its file.
    Table { sha256: String },
}

/// Embedding table plus the frozen name projection.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub table: EmbeddingTable,
    pub projection: PcaProjection,
}

impl FeatureContext {
    /// Fit the projection on the distinct item names of `menus`.
    pub fn fit<'a>(table: EmbeddingTable, menus: impl IntoIterator<Item = &'a MenuSpec>) -> Result<Self> {
        let names: Vec<&str> = menus
            .into_iter()
            .flat_map(|m| m.items.iter().map(String::as_str))
            .collect();
        let projection = fit_name_projection(&names, &table)?;
        Ok(Self { table, projection })
    }

    /// Features of every item with all target flags cleared.
    pub fn menu_features(&self, menu: &MenuSpec) -> Result<Vec<ItemFeatures>> {
        menu.items
            .iter()
            .map(|name| item_features(name, false, &self.table, &self.projection))
            .collect()
    }

    /// Features for one trial: exactly one item flagged as target.
    pub fn trial_features(&self, menu: &MenuSpec, target: usize) -> Result<Vec<ItemFeatures>> {
        if target >= menu.n() {
            return Err(Error::Validation(format!(
                "target {target} out of range for menu of {} items",
                menu.n()
            )));
        }
        let mut feats = self.menu_features(menu)?;
        feats[target].0[0] = 1.0;
        debug_assert_eq!(feats.iter().filter(|f| f.is_target()).count(), 1);
        Ok(feats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::symmetric_eigen;
    use proptest::prelude::*;

    fn line(token: &str, count: usize) -> String {
        let vals: Vec<String> = (0..count).map(|i| format!("{}", i as f64 * 0.01)).collect();
        format!("{token} {}", vals.join(" "))
    }

    #[test]
    fn load_examples() {
        assert!(load_embeddings(&b""[..]).unwrap().is_empty());
        let t = load_embeddings(line("canada", 50).as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("  Canada ").unwrap()[3], 0.03);

        let bad = format!("{}\n{}\n", line("a", 50), line("b", 49));
        match load_embeddings(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let nonnum = line("a", 50).replace("0.02", "abc");
        assert!(matches!(load_embeddings(nonnum.as_bytes()), Err(Error::Parse { line: 1, .. })));

        let dup = format!("{}\n{}\n", line("a", 50), line("A", 50).replace("0.01 ", "9 "));
        let t = load_embeddings(dup.as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a").unwrap()[1], 9.0);
    }

    fn corpus(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("name{i}")).collect()
    }

    #[test]
    fn synthetic_tables() {
        let names = corpus(200);
        let a = synth_embeddings(&names, 11);
        let b = synth_embeddings(&names, 11);
        assert_eq!(a, b);
        let mut seen: Vec<&[f64]> = Vec::new();
        for n in &names {
            let v = a.get(n).unwrap();
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert!(seen.iter().all(|s| *s != v));
            seen.push(v);
        }
        assert_ne!(synth_embeddings(&names, 12).get("name0"), a.get("name0"));
    }

    #[test]
    fn embed_name_examples() {
        let table = synth_embeddings(&["new", "zealand", "chad"], 1);
        assert_eq!(embed_name("atlantis", &table), vec![0.0; EMBED_DIM]);
        let u = table.get("new").unwrap();
        let w = table.get("zealand").unwrap();
        let nz = embed_name("New Zealand", &table);
        for i in 0..EMBED_DIM {
            assert!((nz[i] - (u[i] + w[i]) / 2.0).abs() < 1e-15);
        }
        assert_eq!(embed_name("chad", &table), table.get("chad").unwrap());
    }

    #[test]
    fn projection_from_two_names() {
        let table = synth_embeddings(&["peru", "chad"], 2);
        let p = fit_name_projection(&["peru", "chad", "peru"], &table).unwrap();
        assert_eq!(p.k(), 4);
        for name in ["peru", "chad"] {
            let e = embed_name(name, &table);
            let back = p.reconstruct(&p.transform(&e).unwrap()).unwrap();
            for (a, b) in back.iter().zip(&e) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(matches!(
            fit_name_projection(&["peru", "peru"], &table),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn projection_of_four_dim_names_is_lossless() {
        let mut table = EmbeddingTable::default();
        let mut rng = RngStream::new(8);
        let basis: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..EMBED_DIM).map(|_| rng.standard_normal()).collect())
            .collect();
        let names: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        for n in &names {
            let coeffs: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            let v = (0..EMBED_DIM)
                .map(|d| (0..4).map(|k| coeffs[k] * basis[k][d]).sum())
                .collect();
            table.insert(n, v).unwrap();
        }
        let p = fit_name_projection(&names, &table).unwrap();
        for n in &names {
            let e = embed_name(n, &table);
            let back = p.reconstruct(&p.transform(&e).unwrap()).unwrap();
            let err: f64 = back.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn projection_matches_brute_force_eigen() {
        let names = corpus(20);
        let table = synth_embeddings(&names, 5);
        let p = fit_name_projection(&names, &table).unwrap();
        // brute force: explicit covariance, power iteration with deflation
        let rows: Vec<Vec<f64>> = names.iter().map(|n| embed_name(n, &table)).collect();
        let mean: Vec<f64> = (0..EMBED_DIM)
            .map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64)
            .collect();
        let mut cov = vec![vec![0.0; EMBED_DIM]; EMBED_DIM];
        for r in &rows {
            for i in 0..EMBED_DIM {
                for j in 0..EMBED_DIM {
                    cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (rows.len() - 1) as f64;
                }
            }
        }
        let (vals, _) = symmetric_eigen(&Matrix::from_rows(&cov).unwrap()).unwrap();
        for k in 0..4 {
            let mut v = vec![1.0; EMBED_DIM];
            for _ in 0..5000 {
                let mut next = vec![0.0; EMBED_DIM];
                for i in 0..EMBED_DIM {
                    for j in 0..EMBED_DIM {
                        next[i] += cov[i][j] * v[j];
                    }
                }
                let nrm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                v = next.into_iter().map(|x| x / nrm).collect();
            }
            let lambda: f64 = (0..EMBED_DIM)
                .map(|i| v[i] * (0..EMBED_DIM).map(|j| cov[i][j] * v[j]).sum::<f64>())
                .sum();
            assert!((lambda - vals[k]).abs() < 1e-9, "eigenvalue {k}: {lambda} vs {}", vals[k]);
            let align: f64 = v.iter().zip(&p.components[k]).map(|(a, b)| a * b).sum();
            assert!((align.abs() - 1.0).abs() < 1e-6, "component {k} alignment {align}");
            for i in 0..EMBED_DIM {
                for j in 0..EMBED_DIM {
                    cov[i][j] -= lambda * v[i] * v[j];
                }
            }
        }
    }

    fn fixed_projection(semantic: [f64; 4]) -> PcaProjection {
        // a projection whose output on embed("canada") is `semantic`
        let mut components = vec![vec![0.0; EMBED_DIM]; 4];
        for k in 0..4 {
            components[k][k] = 1.0;
        }
        let mut mean = vec![0.0; EMBED_DIM];
        for k in 0..4 {
            mean[k] = -semantic[k];
        }
        PcaProjection { mean, components }
    }

    #[test]
    fn item_feature_examples() {
        let table = EmbeddingTable::default();
        let proj = fixed_projection([0.1, -0.2, 0.3, 0.0]);
        let f = item_features("Canada", true, &table, &proj).unwrap();
        let expect = [1.0, 0.6, 0.1, -0.2, 0.3, 0.0];
        for (a, b) in f.0.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = fixed_projection([0.0; 4]);
        assert_eq!(item_features("", false, &table, &zero).unwrap().0, [0.0; 6]);
    }

    #[test]
    fn one_hot_convention() {
        assert_eq!(org_one_hot(Organization::Unordered), [1.0, 0.0, 0.0]);
        assert_eq!(org_one_hot(Organization::Alphabetical), [0.0, 1.0, 0.0]);
        assert_eq!(org_one_hot(Organization::Semantic), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn trial_features_flag_exactly_one_target() {
        let menu = MenuSpec {
            menu_id: "m".into(),
            organization: Organization::Semantic,
            items: vec!["Peru".into(), "Chile".into(), "Cuba".into()],
        };
        let table = synth_embeddings(&menu.items, 3);
        let ctx = FeatureContext::fit(table, [&menu]).unwrap();
        for t in 0..3 {
            let f = ctx.trial_features(&menu, t).unwrap();
            assert_eq!(f.iter().filter(|x| x.is_target()).count(), 1);
            assert!(f[t].is_target());
        }
        assert!(ctx.trial_features(&menu, 3).is_err());
    }

    proptest! {
        #[test]
        fn target_flag_flips_only_first_coordinate(name in "[ -~]{0,24}") {
            let table = synth_embeddings(&[name.as_str(), "x y"], 4);
            let proj = fit_name_projection(&[name.as_str(), "x y", "z"], &table).unwrap();
            let a = item_features(&name, true, &table, &proj).unwrap();
            let b = item_features(&name, false, &table, &proj).unwrap();
            prop_assert_eq!(a.0[0], 1.0);
            prop_assert_eq!(b.0[0], 0.0);
            prop_assert_eq!(&a.0[1..], &b.0[1..]);
            prop_assert!(a.0.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn projection_ignores_duplicates(dups in proptest::collection::vec(0usize..6, 0..20)) {
            let names = corpus(6);
            let table = synth_embeddings(&names, 6);
            let mut with_dups = names.clone();
            with_dups.extend(dups.iter().map(|&i| names[i].clone()));
            let a = fit_name_projection(&names, &table).unwrap();
            let b = fit_name_projection(&with_dups, &table).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
