//! Translation paths over a registry of direction-keyed scorers.
//!
//! A direct path decodes `src -> tgt` with one scorer. A pivot path decodes
//! `src -> pivot` first and then `pivot -> tgt` from that intermediate. As an
//! ensemble component, a pivot path is the second-leg scorer conditioned on
//! a fixed intermediate that is decoded once per input.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::beam_search::beam_search;
use crate::config::{DecodeConfig, DecodeResult};
use crate::error::{Error, Result};
use crate::scorer::{load_scorer, scorer_from_json, Scorer, SharedScorer};
use crate::vocab::{TokenId, Vocabulary};

/// Pivot languages tried in order when paths are chosen automatically.
pub const DEFAULT_PIVOT_ORDER: [&str; 3] = ["es", "de", "fr"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionFile {
    pub src: String,
    pub tgt: String,
    /// A path (relative to the manifest) or an inline scorer description.
    pub scorer: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub directions: Vec<DirectionFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct PivotKey {
    src: String,
    pivot: String,
    input: Vec<TokenId>,
    config: String,
}

/// Scorers keyed by `(source, target)` language tags, all over one
/// vocabulary.
pub struct ModelRegistry {
    vocab: Arc<Vocabulary>,
    directions: BTreeMap<(String, String), SharedScorer>,
    pivot_cache: Mutex<HashMap<PivotKey, Vec<TokenId>>>,
    pivot_decodes: AtomicUsize,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRegistry")
            .field("directions", &self.directions.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ModelRegistry {
    pub fn new(directions: Vec<(String, String, SharedScorer)>) -> Result<Self> {
        let first = directions
            .first()
            .ok_or_else(|| Error::config("registry has no directions"))?;
        let vocab = Arc::new(first.2.vocab().clone());
        let mut map = BTreeMap::new();
        for (src, tgt, scorer) in directions {
            if src == tgt {
                return Err(Error::config(format!("direction {src}->{tgt} has the same source and target")));
            }
            if scorer.vocab() != vocab.as_ref() {
                return Err(Error::config(format!(
                    "direction {src}->{tgt} uses a different vocabulary from the registry"
                )));
            }
            let key = (src, tgt);
            if map.contains_key(&key) {
                return Err(Error::config(format!("duplicate direction {}->{}", key.0, key.1)));
            }
            map.insert(key, scorer);
        }
        Ok(Self {
            vocab,
            directions: map,
            pivot_cache: Mutex::new(HashMap::new()),
            pivot_decodes: AtomicUsize::new(0),
        })
    }

    pub fn from_manifest(manifest: RegistryManifest, base_dir: &Path) -> Result<Self> {
        let directions = manifest
            .directions
            .into_iter()
            .map(|d| {
                let scorer = match &d.scorer {
                    serde_json::Value::String(p) => load_scorer(&base_dir.join(p))?,
                    inline => scorer_from_json(inline, base_dir, &format!("direction {}->{}", d.src, d.tgt))?,
                };
                Ok((d.src, d.tgt, scorer))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(directions)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: RegistryManifest = crate::io::read_json(path)?;
        Self::from_manifest(manifest, path.parent().unwrap_or_else(|| Path::new(".")))
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn directions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.directions.keys().map(|(s, t)| (s.as_str(), t.as_str()))
    }

    pub fn contains(&self, src: &str, tgt: &str) -> bool {
        self.directions.contains_key(&(src.to_string(), tgt.to_string()))
    }

    pub fn scorer(&self, src: &str, tgt: &str) -> Result<&SharedScorer> {
        self.directions
            .get(&(src.to_string(), tgt.to_string()))
            .ok_or_else(|| Error::Path(format!("no scorer registered for direction {src}->{tgt}")))
    }

    /// Number of first-leg pivot decodes run so far (cache misses).
    pub fn pivot_decodes(&self) -> usize {
        self.pivot_decodes.load(Ordering::Relaxed)
    }

    /// Content tokens of the best `src -> pivot` decode of `input`, cached
    /// per `(src, pivot, input, config)`. Concurrent misses on one key may
    /// decode twice; both produce the same value.
    pub fn pivot_intermediate(&self, src: &str, pivot: &str, input: &[TokenId], config: &DecodeConfig) -> Result<Vec<TokenId>> {
        let key = PivotKey {
            src: src.to_string(),
            pivot: pivot.to_string(),
            input: input.to_vec(),
            config: format!("{config:?}"),
        };
        if let Some(hit) = self.cache().get(&key) {
            return Ok(hit.clone());
        }
        let scorer = self.scorer(src, pivot)?;
        let first = beam_search(scorer.as_ref(), input, config)?;
        self.pivot_decodes.fetch_add(1, Ordering::Relaxed);
        let intermediate = self.vocab.content(&first.output.tokens);
        self.cache().entry(key).or_insert(intermediate.clone());
        Ok(intermediate)
    }

    fn cache(&self) -> std::sync::MutexGuard<'_, HashMap<PivotKey, Vec<TokenId>>> {
        // the map is never left half-updated, so a poisoned lock is still usable
        self.pivot_cache.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TranslationPath {
    Direct { src: String, tgt: String },
    Pivot { src: String, pivot: String, tgt: String },
}

impl TranslationPath {
    pub fn direct(src: &str, tgt: &str) -> Self {
        TranslationPath::Direct {
            src: src.into(),
            tgt: tgt.into(),
        }
    }

    pub fn pivot(src: &str, pivot: &str, tgt: &str) -> Result<Self> {
        if pivot == src || pivot == tgt {
            return Err(Error::config(format!(
                "pivot language {pivot} must differ from source {src} and target {tgt}"
            )));
        }
        Ok(TranslationPath::Pivot {
            src: src.into(),
            pivot: pivot.into(),
            tgt: tgt.into(),
        })
    }

    /// Parses `direct` or `pivot:<lang>` for the direction `src -> tgt`.
    pub fn parse(spec: &str, src: &str, tgt: &str) -> Result<Self> {
        match spec.trim() {
            "direct" => Ok(Self::direct(src, tgt)),
            s => match s.strip_prefix("pivot:") {
                Some(lang) if !lang.is_empty() => Self::pivot(src, lang, tgt),
                _ => Err(Error::config(format!("unknown path {s:?} (expected direct or pivot:<lang>)"))),
            },
        }
    }

    /// Parses a comma-separated list of paths.
    pub fn parse_list(spec: &str, src: &str, tgt: &str) -> Result<Vec<Self>> {
        let paths = spec
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| Self::parse(s, src, tgt))
            .collect::<Result<Vec<_>>>()?;
        if paths.is_empty() {
            return Err(Error::config("no translation paths given"));
        }
        Ok(paths)
    }

    pub fn label(&self) -> String {
        match self {
            TranslationPath::Direct { .. } => "direct".into(),
            TranslationPath::Pivot { pivot, .. } => format!("pivot:{pivot}"),
        }
    }
}

impl fmt::Display for TranslationPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TranslationPath::Direct { src, tgt } => write!(f, "{src}->{tgt}"),
            TranslationPath::Pivot { src, pivot, tgt } => write!(f, "{src}->{pivot}->{tgt}"),
        }
    }
}

/// The direct path followed by every pivot in `pivot_order` whose two legs
/// are registered, in that order.
pub fn available_paths(registry: &ModelRegistry, src: &str, tgt: &str, pivot_order: &[&str]) -> Vec<TranslationPath> {
    let mut paths = Vec::new();
    if registry.contains(src, tgt) {
        paths.push(TranslationPath::direct(src, tgt));
    }
    for &p in pivot_order {
        if p != src && p != tgt && registry.contains(src, p) && registry.contains(p, tgt) {
            paths.push(TranslationPath::Pivot {
                src: src.into(),
                pivot: p.into(),
                tgt: tgt.into(),
            });
        }
    }
    paths
}

pub fn direct_translate(registry: &ModelRegistry, src: &str, tgt: &str, input: &[TokenId], config: &DecodeConfig) -> Result<DecodeResult> {
    beam_search(registry.scorer(src, tgt)?.as_ref(), input, config)
}

/// Two-step translation. The result is the second leg's, with the
/// intermediate recorded.
pub fn pivot_translate(
    registry: &ModelRegistry,
    src: &str,
    pivot: &str,
    tgt: &str,
    input: &[TokenId],
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    let second = registry.scorer(pivot, tgt)?;
    let intermediate = registry.pivot_intermediate(src, pivot, input, config)?;
    if intermediate.is_empty() {
        return Err(Error::Decode(format!("{src}->{pivot} produced an empty intermediate")));
    }
    let mut result = beam_search(second.as_ref(), &intermediate, config)?;
    result.intermediate = Some(intermediate);
    Ok(result)
}

pub fn translate(registry: &ModelRegistry, path: &TranslationPath, input: &[TokenId], config: &DecodeConfig) -> Result<DecodeResult> {
    match path {
        TranslationPath::Direct { src, tgt } => direct_translate(registry, src, tgt, input, config),
        TranslationPath::Pivot { src, pivot, tgt } => pivot_translate(registry, src, pivot, tgt, input, config),
    }
}

/// A scorer that ignores the query input and conditions on a fixed one.
pub struct FixedInputScorer {
    inner: SharedScorer,
    input: Vec<TokenId>,
}

impl FixedInputScorer {
    pub fn new(inner: SharedScorer, input: Vec<TokenId>) -> Self {
        Self { inner, input }
    }

    pub fn fixed_input(&self) -> &[TokenId] {
        &self.input
    }
}

impl Scorer for FixedInputScorer {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn next_log_distribution(&self, _input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        self.inner.next_log_distribution(&self.input, prefix)
    }
}

/// One ensemble component per path, in path order.
pub fn make_component_scorers(
    registry: &ModelRegistry,
    paths: &[TranslationPath],
    input: &[TokenId],
    config: &DecodeConfig,
) -> Result<Vec<SharedScorer>> {
    paths
        .iter()
        .map(|p| match p {
            TranslationPath::Direct { src, tgt } => Ok(registry.scorer(src, tgt)?.clone()),
            TranslationPath::Pivot { src, pivot, tgt } => {
                let second = registry.scorer(pivot, tgt)?.clone();
                let intermediate = registry.pivot_intermediate(src, pivot, input, config)?;
                Ok(Arc::new(FixedInputScorer::new(second, intermediate)) as SharedScorer)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam_search::brute_force_decode;
    use crate::ebbs::{ebbs_decode, tally_votes, EbbsOptions, VotingScheme};
    use crate::hypothesis::{Beam, Hypothesis};
    use crate::scorer::test_support::table;
    use crate::scorer::{TableEntry, TableScorer, TableScorerSpec};
    use crate::synth;

    // <s>=0 </s>=1 a=2 b=3 c=4
    fn vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::with_content(&["a", "b", "c"]).unwrap())
    }

    fn cfg(z: usize) -> DecodeConfig {
        DecodeConfig {
            max_len_factor: 0.0,
            max_len_offset: 4,
            ..DecodeConfig::with_beam(z)
        }
    }

    /// Deterministically emits `out` then `</s>` for any input.
    fn emit(v: &Arc<Vocabulary>, out: &[TokenId]) -> SharedScorer {
        let n = v.len();
        let one_hot = |t: TokenId| (0..n).map(|i| if i as TokenId == t { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        let mut entries = Vec::new();
        let mut prefix = vec![v.bos()];
        for &t in out.iter().chain([v.eos()].iter()) {
            entries.push(TableEntry {
                input: None,
                prefix: prefix.clone(),
                probs: one_hot(t),
            });
            prefix.push(t);
        }
        Arc::new(
            TableScorer::from_spec(TableScorerSpec {
                vocab: v.clone(),
                entries,
                fallback: one_hot(v.eos()),
            })
            .unwrap(),
        )
    }

    /// Copies the input to the output.
    fn copier(v: &Arc<Vocabulary>, inputs: &[Vec<TokenId>]) -> SharedScorer {
        let n = v.len();
        let one_hot = |t: TokenId| (0..n).map(|i| if i as TokenId == t { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        let mut entries = Vec::new();
        for x in inputs {
            let mut prefix = vec![v.bos()];
            for &t in x.iter().chain([v.eos()].iter()) {
                entries.push(TableEntry {
                    input: Some(x.clone()),
                    prefix: prefix.clone(),
                    probs: one_hot(t),
                });
                prefix.push(t);
            }
        }
        Arc::new(
            TableScorer::from_spec(TableScorerSpec {
                vocab: v.clone(),
                entries,
                fallback: one_hot(v.eos()),
            })
            .unwrap(),
        )
    }

    #[test]
    fn direct_delegates_to_beam_search() {
        let v = vocab();
        let mut rng = synth::rng(31);
        let s = synth::random_table_scorer(&mut rng, &v, 4, 0.2);
        let reg = ModelRegistry::new(vec![("it".into(), "nl".into(), s.clone())]).unwrap();
        let r = direct_translate(&reg, "it", "nl", &[2], &cfg(3)).unwrap();
        assert_eq!(r, beam_search(s.as_ref(), &[2], &cfg(3)).unwrap());
        let exhaustive = direct_translate(&reg, "it", "nl", &[2], &cfg(64)).unwrap();
        let oracle = brute_force_decode(s.as_ref(), &[2], 4, true).unwrap();
        assert_eq!(exhaustive.output.tokens, oracle.output.tokens);
        assert!(matches!(direct_translate(&reg, "nl", "it", &[2], &cfg(3)), Err(Error::Path(_))));
    }

    #[test]
    fn identity_pivot_equals_direct() {
        let v = vocab();
        let x = vec![2, 4];
        let mut rng = synth::rng(32);
        let direct = synth::random_table_scorer(&mut rng, &v, 4, 0.2);
        let reg = ModelRegistry::new(vec![
            ("it".into(), "nl".into(), direct.clone()),
            ("it".into(), "en".into(), copier(&v, std::slice::from_ref(&x))),
            ("en".into(), "nl".into(), direct),
        ])
        .unwrap();
        let d = direct_translate(&reg, "it", "nl", &x, &cfg(3)).unwrap();
        let p = pivot_translate(&reg, "it", "en", "nl", &x, &cfg(3)).unwrap();
        assert_eq!(p.output, d.output);
        assert_eq!(p.intermediate.as_deref(), Some(&x[..]));
    }

    #[test]
    fn forced_intermediate_feeds_second_leg() {
        let v = vocab();
        let mut rng = synth::rng(33);
        let second = synth::random_table_scorer(&mut rng, &v, 4, 0.2);
        let reg = ModelRegistry::new(vec![
            ("it".into(), "en".into(), emit(&v, &[3, 3])),
            ("en".into(), "nl".into(), second.clone()),
        ])
        .unwrap();
        let p = pivot_translate(&reg, "it", "en", "nl", &[2], &cfg(2)).unwrap();
        let mut expected = beam_search(second.as_ref(), &[3, 3], &cfg(2)).unwrap();
        expected.intermediate = Some(vec![3, 3]);
        assert_eq!(p, expected);
        assert!(matches!(pivot_translate(&reg, "it", "en", "de", &[2], &cfg(2)), Err(Error::Path(_))));
        assert!(matches!(pivot_translate(&reg, "it", "fr", "nl", &[2], &cfg(2)), Err(Error::Path(_))));
    }

    #[test]
    fn components_follow_path_order_and_cache_the_intermediate() {
        let v = vocab();
        let end = [0.0, 1.0, 0.0, 0.0, 0.0];
        let direct = table(&v, &[(&[0], &[0.0, 0.1, 0.6, 0.3, 0.0])], Some(&end));
        // second leg is conditioned on the intermediate [b]
        let second = Arc::new(
            TableScorer::from_spec(TableScorerSpec {
                vocab: v.clone(),
                entries: vec![TableEntry {
                    input: Some(vec![3]),
                    prefix: vec![0],
                    probs: vec![0.0, 0.1, 0.2, 0.7, 0.0],
                }],
                fallback: end.to_vec(),
            })
            .unwrap(),
        );
        let reg = ModelRegistry::new(vec![
            ("it".into(), "nl".into(), direct),
            ("it".into(), "en".into(), emit(&v, &[3])),
            ("en".into(), "nl".into(), second),
        ])
        .unwrap();
        let paths = TranslationPath::parse_list("direct,pivot:en", "it", "nl").unwrap();
        let comps = make_component_scorers(&reg, &paths, &[2], &cfg(2)).unwrap();
        assert_eq!(comps.len(), 2);
        assert_eq!(reg.pivot_decodes(), 1);

        let start = Beam::singleton(Hypothesis::start(0), 2);
        let lower: Vec<Beam> = comps
            .iter()
            .map(|c| crate::ebbs::expand_lower(&start, c.as_ref(), &[2], 2))
            .collect();
        let t = tally_votes(&lower, VotingScheme::TopZSum, &comps, &[2], &start).unwrap();
        assert_eq!(t[0].candidate, vec![0, 3]);
        assert!((t[0].tally_log.exp() - 1.0).abs() < 1e-12);
        assert!((t[1].tally_log.exp() - 0.8).abs() < 1e-12);

        let r = ebbs_decode(&comps, &[2], &cfg(2), EbbsOptions::default()).unwrap();
        assert_eq!(r.output.tokens, vec![0, 3, 1]);
        // repeated construction and decoding reuse the cached intermediate
        make_component_scorers(&reg, &paths, &[2], &cfg(2)).unwrap();
        pivot_translate(&reg, "it", "en", "nl", &[2], &cfg(2)).unwrap();
        assert_eq!(reg.pivot_decodes(), 1);
        make_component_scorers(&reg, &paths, &[4], &cfg(2)).unwrap();
        assert_eq!(reg.pivot_decodes(), 2);

        let dup = [paths[0].clone(), paths[0].clone()];
        assert_eq!(make_component_scorers(&reg, &dup, &[2], &cfg(2)).unwrap().len(), 2);
    }

    #[test]
    fn path_parsing() {
        assert_eq!(TranslationPath::parse("direct", "it", "nl").unwrap(), TranslationPath::direct("it", "nl"));
        assert_eq!(TranslationPath::parse("pivot:en", "it", "nl").unwrap().label(), "pivot:en");
        assert!(TranslationPath::parse("pivot:it", "it", "nl").is_err());
        assert!(TranslationPath::parse("pivot:", "it", "nl").is_err());
        assert!(TranslationPath::parse("sideways", "it", "nl").is_err());
        assert!(TranslationPath::parse_list(" , ", "it", "nl").is_err());
    }

    #[test]
    fn available_paths_follow_preference_order() {
        let v = vocab();
        let u: SharedScorer = Arc::new(TableScorer::uniform(v.clone()));
        let reg = ModelRegistry::new(
            [("it", "nl"), ("it", "fr"), ("fr", "nl"), ("it", "es"), ("es", "nl"), ("it", "de")]
                .iter()
                .map(|(s, t)| (s.to_string(), t.to_string(), u.clone()))
                .collect(),
        )
        .unwrap();
        let labels: Vec<_> = available_paths(&reg, "it", "nl", &DEFAULT_PIVOT_ORDER)
            .iter()
            .map(|p| p.label())
            .collect();
        assert_eq!(labels, ["direct", "pivot:es", "pivot:fr"]);
    }

    #[test]
    fn registry_validation() {
        let v = vocab();
        let u: SharedScorer = Arc::new(TableScorer::uniform(v.clone()));
        let other: SharedScorer = Arc::new(TableScorer::uniform(Arc::new(Vocabulary::with_content(&["x"]).unwrap())));
        assert!(ModelRegistry::new(vec![]).is_err());
        assert!(ModelRegistry::new(vec![("a".into(), "b".into(), u.clone()), ("a".into(), "b".into(), u.clone())]).is_err());
        assert!(ModelRegistry::new(vec![("a".into(), "b".into(), u.clone()), ("b".into(), "c".into(), other)]).is_err());
        assert!(ModelRegistry::new(vec![("a".into(), "a".into(), u)]).is_err());
    }

    #[test]
    fn manifest_with_inline_and_file_scorers() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab();
        std::fs::write(dir.path().join("vocab.json"), serde_json::to_string(&v.to_file_repr()).unwrap()).unwrap();
        let spec = serde_json::json!({
            "vocab": "vocab.json",
            "entries": [{"prefix": ["<s>"], "probs": {"a": 0.5, "</s>": 0.5}}],
            "fallback": "uniform"
        });
        std::fs::write(dir.path().join("en-nl.json"), spec.to_string()).unwrap();
        let manifest = serde_json::json!({
            "directions": [
                {"src": "en", "tgt": "nl", "scorer": "en-nl.json"},
                {"src": "it", "tgt": "en", "scorer": spec},
            ]
        });
        std::fs::write(dir.path().join("registry.json"), manifest.to_string()).unwrap();
        let reg = ModelRegistry::load(&dir.path().join("registry.json")).unwrap();
        assert_eq!(reg.directions().count(), 2);
        let r = direct_translate(&reg, "en", "nl", &[2], &cfg(2)).unwrap();
        assert_eq!(r.output.tokens, vec![0, 1]);
    }
}
