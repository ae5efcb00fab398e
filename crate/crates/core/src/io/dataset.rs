//! Corpus loading and on-disk hazy dataset generation.

use std::fs;
use std::path::Path;

use log::warn;

use super::{load_depth, load_image, save_depth_pfm, save_image, Manifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::haze::{synthesize_dataset, DepthMap, SceneImage};

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    /// File stem used for every output derived from this item.
    pub name: String,
    pub image: SceneImage,
    pub depth: DepthMap,
}

/// Items skipped while loading or synthesizing, with the reason.
pub type Skipped = Vec<(String, String)>;

/// Reads `(clean, depth)` records; records without a readable depth map are skipped.
pub fn load_corpus(manifest: &Manifest) -> Result<(Vec<CorpusItem>, Skipped)> {
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for r in &manifest.records {
        let name = r
            .clean_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let loaded = (|| -> Result<CorpusItem> {
            let depth_path = r
                .depth_path
                .as_ref()
                .ok_or_else(|| Error::Param("no depth_path".into()))?;
            Ok(CorpusItem {
                name: name.clone(),
                image: load_image(manifest.resolve(&r.clean_path))?,
                depth: load_depth(manifest.resolve(depth_path))?,
            })
        })();
        match loaded {
            Ok(item) => items.push(item),
            Err(e) => {
                warn!("skipping {}: {e}", r.clean_path.display());
                skipped.push((r.clean_path.display().to_string(), e.to_string()));
            }
        }
    }
    Ok((items, skipped))
}

/// Writes `variants` hazy versions of every item under `out_dir` as
/// `clean/`, `depth/` and `hazy/` plus `manifest.jsonl`, and returns the manifest.
pub fn write_dataset(
    items: &[CorpusItem],
    variants: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(Manifest, Skipped)> {
    for sub in ["clean", "depth", "hazy"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut names = std::collections::HashSet::new();
    if let Some(dup) = items.iter().find(|i| !names.insert(i.name.as_str())) {
        return Err(Error::Param(format!(
            "duplicate corpus item name `{}`",
            dup.name
        )));
    }
    let corpus: Vec<(SceneImage, DepthMap)> = items
        .iter()
        .map(|i| (i.image.clone(), i.depth.clone()))
        .collect();
    let synth = synthesize_dataset(&corpus, variants, seed)?;
    let mut manifest = Manifest::new(out_dir);
    let mut written = vec![false; items.len()];
    for s in &synth.samples {
        let item = &items[s.source];
        let clean_rel = Path::new("clean").join(format!("{}.png", item.name));
        let depth_rel = Path::new("depth").join(format!("{}.pfm", item.name));
        if !written[s.source] {
            save_image(&item.image, out_dir.join(&clean_rel))?;
            save_depth_pfm(&item.depth.clone().normalized(), out_dir.join(&depth_rel))?;
            written[s.source] = true;
        }
        let hazy_rel = Path::new("hazy").join(format!("{}-{}.png", item.name, s.variant));
        save_image(&s.hazy, out_dir.join(&hazy_rel))?;
        manifest.records.push(ManifestRecord {
            clean_path: clean_rel,
            hazy_path: Some(hazy_rel),
            depth_path: Some(depth_rel),
            k: Some(s.params.k()),
            beta: Some(s.params.beta),
            seed: Some(s.seed),
        });
    }
    manifest.save(out_dir.join("manifest.jsonl"))?;
    let skipped = synth
        .skipped
        .into_iter()
        .map(|(i, why)| (items[i].name.clone(), why))
        .collect();
    Ok((manifest, skipped))
}
