use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::{Dataset, Item, StickerImage, TagVocabulary};
use crate::{Error, Result};

/// One line of a JSON-Lines manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Image path relative to the manifest's directory.
    pub image: String,
    pub tags: Vec<String>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub height: usize,
    pub width: usize,
}

impl LoadOptions {
    /// Keep every image at its stored size.
    pub const NATIVE: Self = Self { height: 0, width: 0 };
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            height: 224,
            width: 224,
        }
    }
}

/// Reads a manifest and its vocabulary, decoding every image to RGB and
/// resizing it bilinearly to the configured size.
pub fn load_manifest(manifest_path: &Path, vocab_path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let vocabulary = TagVocabulary::load(vocab_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let file = File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;

    let mut items = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidArgument(format!(
                "{}:{}: malformed record: {e}",
                manifest_path.display(),
                lineno + 1
            ))
        })?;
        if record.tags.is_empty() {
            return Err(Error::EmptyTags(record.id));
        }
        let tags = record
            .tags
            .iter()
            .map(|t| vocabulary.id(t).ok_or_else(|| Error::UnknownTag(t.clone())))
            .collect::<Result<BTreeSet<_>>>()?;
        let image = load_image(&record.id, &base.join(&record.image), opts)?.with_meta(record.meta);
        items.push(Item { image, tags });
    }
    Dataset::new(items, vocabulary)
}

/// Decodes one image to RGB, resized to `opts` unless that is [`LoadOptions::NATIVE`].
pub fn load_image(id: &str, path: &Path, opts: LoadOptions) -> Result<StickerImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        id: id.to_string(),
        message: format!("{}: {e}", path.display()),
    })?;
    let mut rgb = img.to_rgb8();
    let native = opts == LoadOptions::NATIVE;
    if !native && (rgb.width() as usize != opts.width || rgb.height() as usize != opts.height) {
        rgb = image::imageops::resize(&rgb, opts.width as u32, opts.height as u32, FilterType::Triangle);
    }
    Ok(StickerImage::from_rgb8(id, &rgb))
}

/// Writes `manifest.jsonl`, `vocab.txt` and one PNG per item under `dir`.
/// Records are emitted in id order. Returns the manifest and vocabulary paths.
pub fn write_manifest(ds: &Dataset, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let vocab_path = dir.join("vocab.txt");
    ds.vocabulary.write(&vocab_path)?;

    let mut order: Vec<&Item> = ds.items.iter().collect();
    order.sort_by(|a, b| a.image.id.cmp(&b.image.id));

    let manifest_path = dir.join("manifest.jsonl");
    let file = File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut out = BufWriter::new(file);
    for item in order {
        let rel = format!("images/{}.png", item.image.id);
        let path = dir.join(&rel);
        item.image.to_rgb8().save(&path).map_err(|e| Error::Image {
            id: item.image.id.clone(),
            message: format!("{}: {e}", path.display()),
        })?;
        let record = ManifestRecord {
            id: item.image.id.clone(),
            image: rel,
            tags: item
                .tags
                .iter()
                .map(|&t| ds.vocabulary.tag(t).unwrap_or_default().to_string())
                .collect(),
            meta: item.image.meta.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(&manifest_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok((manifest_path, vocab_path))
}
