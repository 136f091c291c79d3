use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::recipes::{intent_text, propose, Ctx, RECIPES};
use super::tamper::{apply_tamper, diff_mask, TamperKind, TamperOp};
use super::{render_chart, ChartKind, ChartSpec};
use crate::detect::TamperMask;
use crate::error::{Error, Result};
use crate::imaging::{encode_png, load_image, ImageTensor};
use crate::intent::TruthOp;

/// Fewest changed pixels an op must produce to be kept.
pub const MIN_OP_PIXELS: usize = 16;
/// Clearance kept between the footprints of ops on the same chart.
const OP_GAP: usize = 2;
const CHART_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n: usize,
    /// Op kinds allowed; empty means all.
    pub kinds: Vec<String>,
    /// 0 produces an untampered corpus.
    pub ops_per_item: usize,
    pub seed: u64,
    /// `(height, width)`.
    pub size: (usize, usize),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n: 50,
            kinds: Vec::new(),
            ops_per_item: 1,
            seed: 0,
            size: (128, 128),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::arg("corpus size must be positive"));
        }
        if self.ops_per_item > 3 {
            return Err(Error::arg(format!("ops_per_item {} outside 0..=3", self.ops_per_item)));
        }
        for k in &self.kinds {
            if !TamperKind::NAMES.contains(&k.as_str()) {
                return Err(Error::arg(format!("unknown tamper op kind `{k}`")));
            }
        }
        let (h, w) = self.size;
        if h % 2 != 0 || w % 2 != 0 || h < 64 || w < 64 {
            return Err(Error::arg(format!("corpus image size {h}x{w} must be even and at least 64x64")));
        }
        Ok(())
    }

    fn allows(&self, kind: &str) -> bool {
        self.kinds.is_empty() || self.kinds.iter().any(|k| k == kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    pub spec: ChartSpec,
    pub clean: ImageTensor,
    pub tampered: ImageTensor,
    pub truth_mask: TamperMask,
    pub ops: Vec<TamperOp>,
}

/// Manifest entry; paths are relative to the corpus root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub chart: ChartKind,
    pub clean: String,
    pub tampered: String,
    pub mask: String,
    pub ops: Vec<TamperOp>,
}

impl ManifestItem {
    pub fn load_clean(&self, root: &Path) -> Result<ImageTensor> {
        load_image(root.join(&self.clean))
    }

    pub fn load_tampered(&self, root: &Path) -> Result<ImageTensor> {
        load_image(root.join(&self.tampered))
    }

    pub fn load_mask(&self, root: &Path) -> Result<TamperMask> {
        Ok(TamperMask::from_image(&load_image(root.join(&self.mask))?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    /// Ground truth for the truth-backed mock, keyed by item id.
    pub fn truth_table(&self) -> BTreeMap<String, Vec<TruthOp>> {
        self.items
            .iter()
            .map(|it| {
                let ops = it
                    .ops
                    .iter()
                    .map(|op| TruthOp {
                        method: op.method,
                        bbox: op.bbox().tuple(),
                    })
                    .collect();
                (it.id.clone(), ops)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub items: Vec<CorpusItem>,
    pub manifest: Manifest,
}

fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Adds one op that changes at least [`MIN_OP_PIXELS`] pixels and keeps
/// clear of earlier ops.
fn add_op(
    cfg: &CorpusConfig,
    ctx: &Ctx,
    current: &ImageTensor,
    ops: &[TamperOp],
    rng: &mut ChaCha8Rng,
) -> Result<Option<(TamperOp, ImageTensor)>> {
    let mut candidates: Vec<_> = RECIPES.iter().filter(|(_, k)| cfg.allows(k)).collect();
    candidates.shuffle(rng);
    for &&(method, kind) in &candidates {
        for _ in 0..4 {
            let Some(geom) = propose(method, kind, ctx, rng) else {
                continue;
            };
            let (h, w) = cfg.size;
            if !geom.bbox().fits(h, w) {
                continue;
            }
            let footprint = geom.bbox().dilate(OP_GAP);
            if ops.iter().any(|o| o.bbox().intersects(&footprint)) {
                continue;
            }
            let op = TamperOp {
                kind: geom,
                method,
                intent: intent_text(method).to_string(),
            };
            let (next, _) = apply_tamper(current, std::slice::from_ref(&op))?;
            if diff_mask(current, &next)?.count() >= MIN_OP_PIXELS {
                return Ok(Some((op, next)));
            }
        }
    }
    Ok(None)
}

fn gen_item(cfg: &CorpusConfig, index: usize) -> Result<CorpusItem> {
    let mut rng = item_rng(cfg.seed, index);
    let (h, w) = cfg.size;
    'chart: for _ in 0..CHART_ATTEMPTS {
        let spec = ChartSpec::random(rng.gen(), h, w);
        let (clean, layout) = render_chart(&spec)?;
        let ctx = Ctx {
            spec: &spec,
            layout: &layout,
        };
        let mut ops = Vec::new();
        let mut current = clean.clone();
        for _ in 0..cfg.ops_per_item {
            match add_op(cfg, &ctx, &current, &ops, &mut rng)? {
                Some((op, next)) => {
                    ops.push(op);
                    current = next;
                }
                None => continue 'chart,
            }
        }
        let (tampered, truth_mask) = apply_tamper(&clean, &ops)?;
        return Ok(CorpusItem {
            id: format!("{index:04}"),
            spec,
            clean,
            tampered,
            truth_mask,
            ops,
        });
    }
    Err(Error::arg(format!(
        "could not place {} ops of kinds {:?} on item {index}",
        cfg.ops_per_item, cfg.kinds
    )))
}

/// Deterministic in `cfg`; each item draws from its own RNG stream.
pub fn gen_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let items = (0..cfg.n).map(|i| gen_item(cfg, i)).collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        items: items
            .iter()
            .map(|it| ManifestItem {
                id: it.id.clone(),
                chart: it.spec.kind,
                clean: format!("clean/{}.png", it.id),
                tampered: format!("tampered/{}.png", it.id),
                mask: format!("mask/{}.png", it.id),
                ops: it.ops.clone(),
            })
            .collect(),
    };
    Ok(Corpus { items, manifest })
}

/// Writes `<root>/{clean,tampered,mask}/NNNN.png` and `manifest.json`.
pub fn write_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    for dir in ["clean", "tampered", "mask"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(d, e))?;
    }
    let write = |rel: &str, bytes: Vec<u8>| {
        let p = root.join(rel);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    for (item, entry) in corpus.items.iter().zip(&corpus.manifest.items) {
        write(&entry.clean, encode_png(&item.clean))?;
        write(&entry.tampered, encode_png(&item.tampered))?;
        write(&entry.mask, item.truth_mask.encode_png())?;
    }
    write("manifest.json", corpus.manifest.to_json().into_bytes())
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::TamperMethod;

    fn cfg(n: usize, ops: usize, seed: u64) -> CorpusConfig {
        CorpusConfig {
            n,
            ops_per_item: ops,
            seed,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn zero_items_rejected() {
        assert!(matches!(gen_corpus(&cfg(0, 1, 0)), Err(Error::Argument(_))));
        let mut bad = cfg(1, 1, 0);
        bad.kinds = vec!["smudge".into()];
        assert!(matches!(gen_corpus(&bad), Err(Error::Argument(_))));
    }

    #[test]
    fn three_ops_each() {
        let c = gen_corpus(&cfg(8, 3, 5)).unwrap();
        for (item, entry) in c.items.iter().zip(&c.manifest.items) {
            assert_eq!(entry.ops.len(), 3);
            assert_eq!(diff_mask(&item.clean, &item.tampered).unwrap(), item.truth_mask);
            let (replayed, mask) = apply_tamper(&item.clean, &entry.ops).unwrap();
            assert_eq!(replayed, item.tampered);
            assert_eq!(mask, item.truth_mask);
        }
    }

    #[test]
    fn untampered_corpus() {
        let c = gen_corpus(&cfg(3, 0, 1)).unwrap();
        assert!(c.items.iter().all(|i| i.truth_mask.is_empty() && i.clean == i.tampered));
    }

    #[test]
    fn kinds_filter() {
        let mut c = cfg(6, 1, 2);
        c.kinds = vec!["recolor_region".into()];
        let corpus = gen_corpus(&c).unwrap();
        for it in &corpus.manifest.items {
            assert_eq!(it.ops[0].kind.name(), "recolor_region");
            assert!(matches!(it.ops[0].method, TamperMethod::Ml | TamperMethod::Mc));
        }
    }

    #[test]
    fn every_method_reachable() {
        let corpus = gen_corpus(&cfg(80, 2, 9)).unwrap();
        for m in TamperMethod::ALL.iter().filter(|m| **m != TamperMethod::Others) {
            assert!(
                corpus.manifest.items.iter().flat_map(|i| &i.ops).any(|o| o.method == *m),
                "{m:?} never generated"
            );
        }
    }

    #[test]
    fn written_corpus_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            write_corpus(&gen_corpus(&cfg(4, 2, 77)).unwrap(), d.path()).unwrap();
        }
        for rel in ["manifest.json", "clean/0003.png", "tampered/0001.png", "mask/0002.png"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
        let m = load_manifest(a.path()).unwrap();
        assert_eq!(m.items.len(), 4);
        let c = gen_corpus(&cfg(4, 2, 77)).unwrap();
        assert_eq!(m.items[2].load_mask(a.path()).unwrap(), c.items[2].truth_mask);
        assert_eq!(m.items[1].load_tampered(a.path()).unwrap(), c.items[1].tampered);
        assert_eq!(m.truth_table()["0001"].len(), 2);
    }
}
