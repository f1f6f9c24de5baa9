//! Procedural sticker corpus.
//!
//! Every image is a composition of up to three attribute primitives: a
//! character shape, a color (frame plus shape fill) and an action glyph. Each
//! attribute present contributes its name as a ground-truth tag, and the
//! attribute names are recorded in the item meta so the offline describer can
//! template descriptions from them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_manifest, Dataset, Item, StickerImage, TagVocabulary};
use crate::{Error, Result};

pub const SHAPES: [&str; 6] = ["circle", "square", "triangle", "diamond", "cross", "ring"];
pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "purple", "orange"];
pub const ACTIONS: [&str; 6] = ["waving", "sleeping", "crying", "jumping", "laughing", "pointing"];

const COLOR_RGB: [[u8; 3]; 6] = [
    [220, 40, 40],
    [40, 170, 60],
    [40, 80, 220],
    [235, 200, 30],
    [140, 50, 170],
    [245, 130, 20],
];
const NEUTRAL: [u8; 3] = [120, 120, 120];
const INK: [u8; 3] = [25, 25, 25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Group {
    Shape,
    Color,
    Action,
}

impl Group {
    const ALL: [Group; 3] = [Group::Shape, Group::Color, Group::Action];

    fn names(self) -> &'static [&'static str; 6] {
        match self {
            Group::Shape => &SHAPES,
            Group::Color => &COLORS,
            Group::Action => &ACTIONS,
        }
    }

    fn key(self) -> &'static str {
        match self {
            Group::Shape => "shape",
            Group::Color => "color",
            Group::Action => "action",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    /// Number of tags `m`, drawn round-robin from the shape, color and action
    /// inventories.
    pub num_tags: usize,
    pub height: usize,
    pub width: usize,
    /// Relative weights of stickers carrying 1, 2 and 3 tags.
    pub mixture: Vec<f64>,
    /// Amplitude of uniform per-pixel background noise, in 8-bit levels.
    pub noise: u8,
    /// Render exactly these attributes on every item instead of sampling.
    pub force_attributes: Option<Vec<String>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            num_tags: 12,
            height: 64,
            width: 64,
            mixture: vec![0.5, 0.35, 0.15],
            noise: 12,
            force_attributes: None,
        }
    }
}

impl SynthConfig {
    pub fn inventory_size() -> usize {
        SHAPES.len() + COLORS.len() + ACTIONS.len()
    }

    /// The active tag list, in id order.
    fn tags(&self) -> Vec<(Group, usize)> {
        let mut out = Vec::with_capacity(self.num_tags);
        let mut i = 0;
        while out.len() < self.num_tags {
            let group = Group::ALL[i % 3];
            out.push((group, i / 3));
            i += 1;
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let inv = Self::inventory_size();
        if self.num_tags < 2 {
            return Err(Error::Config(format!("need at least 2 tags, got {}", self.num_tags)));
        }
        if self.num_tags > inv {
            return Err(Error::Config(format!(
                "{} tags requested but the attribute inventory has {inv}",
                self.num_tags
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config("images must be at least 16x16".into()));
        }
        if self.mixture.is_empty()
            || self.mixture.len() > 3
            || self.mixture.iter().any(|w| !(*w >= 0.0))
            || self.mixture.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(format!(
                "mixture must hold 1 to 3 non-negative weights with a positive sum, got {:?}",
                self.mixture
            )));
        }
        Ok(())
    }
}

/// Renders the corpus in memory. Identical `(config, seed)` gives identical output.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let active = cfg.tags();
    let vocabulary = TagVocabulary::new(
        active.iter().map(|(g, i)| g.names()[*i].to_string()).collect(),
    )?;
    let mut by_group: BTreeMap<Group, Vec<usize>> = BTreeMap::new();
    for (id, (g, _)) in active.iter().enumerate() {
        by_group.entry(*g).or_default().push(id);
    }

    let forced = match &cfg.force_attributes {
        Some(names) => {
            let mut ids = BTreeSet::new();
            let mut groups = BTreeSet::new();
            for name in names {
                let id = vocabulary.id(name).ok_or_else(|| {
                    Error::Config(format!("forced attribute {name:?} is not among the {} active tags", cfg.num_tags))
                })?;
                if !groups.insert(active[id].0) {
                    return Err(Error::Config(format!("forced attributes repeat the {} group", active[id].0.key())));
                }
                ids.insert(id);
            }
            if ids.is_empty() {
                return Err(Error::Config("forced attribute list is empty".into()));
            }
            Some(ids)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = tag_count_quota(&cfg.mixture, by_group.len(), cfg.n);
    counts.shuffle(&mut rng);
    let groups: Vec<Group> = by_group.keys().copied().collect();
    let width = cfg.n.to_string().len().max(5);

    let mut items = Vec::with_capacity(cfg.n);
    for (i, &k) in counts.iter().enumerate() {
        let tags: BTreeSet<usize> = match &forced {
            Some(ids) => ids.clone(),
            None => {
                let mut gs = groups.clone();
                gs.shuffle(&mut rng);
                gs.into_iter()
                    .take(k)
                    .map(|g| {
                        let pool = &by_group[&g];
                        pool[rng.random_range(0..pool.len())]
                    })
                    .collect()
            }
        };
        let mut attrs = Attributes::default();
        let mut meta = BTreeMap::new();
        for &t in &tags {
            let (g, idx) = active[t];
            meta.insert(g.key().to_string(), g.names()[idx].to_string());
            match g {
                Group::Shape => attrs.shape = Some(idx),
                Group::Color => attrs.color = Some(idx),
                Group::Action => attrs.action = Some(idx),
            }
        }
        let img = render(&attrs, cfg, &mut rng);
        let image = StickerImage::from_rgb8(format!("syn{:0width$}", i, width = width), &img).with_meta(meta);
        items.push(Item { image, tags });
    }
    Dataset::new(items, vocabulary)
}

/// Generates the corpus and writes it under `dir`.
pub fn generate_synthetic_to(cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<(Dataset, PathBuf, PathBuf)> {
    let ds = generate_synthetic(cfg, seed)?;
    let (manifest, vocab) = write_manifest(&ds, dir)?;
    Ok((ds, manifest, vocab))
}

/// Per-item tag counts realizing the mixture exactly (largest remainder),
/// with counts above the number of available groups folded down.
fn tag_count_quota(mixture: &[f64], groups: usize, n: usize) -> Vec<usize> {
    let mut weights = vec![0.0; groups.min(3)];
    for (k, w) in mixture.iter().enumerate() {
        let slot = k.min(weights.len() - 1);
        weights[slot] += w;
    }
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        quota[k] += 1;
        rest -= 1;
    }
    quota
        .iter()
        .enumerate()
        .flat_map(|(k, &q)| std::iter::repeat_n(k + 1, q))
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
struct Attributes {
    shape: Option<usize>,
    color: Option<usize>,
    action: Option<usize>,
}

fn render(attrs: &Attributes, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (cfg.width as i32, cfg.height as i32);
    let base = rng.random_range(195..=235) as i32;
    let noise = cfg.noise as i32;
    let mut img = RgbImage::from_fn(w as u32, h as u32, |_, _| {
        let v = if noise > 0 {
            base + rng.random_range(-noise..=noise)
        } else {
            base
        };
        let v = v.clamp(0, 255) as u8;
        Rgb([v, v, v])
    });

    let fill = attrs.color.map(|c| COLOR_RGB[c]).unwrap_or(NEUTRAL);
    if attrs.color.is_some() {
        let t = (w.min(h) / 20).max(2);
        for y in 0..h {
            for x in 0..w {
                if x < t || y < t || x >= w - t || y >= h - t {
                    img.put_pixel(x as u32, y as u32, Rgb(fill));
                }
            }
        }
    }

    if let Some(shape) = attrs.shape {
        let s = w.min(h) as f32;
        let jit = (s * 0.08) as i32;
        let cx = w as f32 / 2.0 + rng.random_range(-jit..=jit) as f32;
        let cy = h as f32 / 2.0 + rng.random_range(-jit..=jit) as f32;
        let r = s * rng.random_range(0.2..0.28);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f32 + 0.5 - cx;
                let dy = y as f32 + 0.5 - cy;
                if inside(shape, dx, dy, r) {
                    img.put_pixel(x as u32, y as u32, Rgb(fill));
                }
            }
        }
    }

    if let Some(action) = attrs.action {
        draw_glyph(&mut img, action, rng);
    }
    img
}

fn inside(shape: usize, dx: f32, dy: f32, r: f32) -> bool {
    match shape {
        // circle
        0 => dx * dx + dy * dy <= r * r,
        // square
        1 => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        // triangle, apex up
        2 => {
            let top = -r;
            let bottom = r * 0.8;
            if dy < top || dy > bottom {
                return false;
            }
            let half = r * (dy - top) / (bottom - top);
            dx.abs() <= half
        }
        // diamond
        3 => dx.abs() + dy.abs() <= r,
        // cross
        4 => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
        // ring
        _ => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
    }
}

fn stamp(img: &mut RgbImage, x: f32, y: f32, radius: f32, color: [u8; 3]) {
    let (w, h) = (img.width() as i32, img.height() as i32);
    let r = radius.ceil() as i32;
    for yy in (y as i32 - r)..=(y as i32 + r) {
        for xx in (x as i32 - r)..=(x as i32 + r) {
            if xx < 0 || yy < 0 || xx >= w || yy >= h {
                continue;
            }
            let dx = xx as f32 + 0.5 - x;
            let dy = yy as f32 + 0.5 - y;
            if dx * dx + dy * dy <= radius * radius {
                img.put_pixel(xx as u32, yy as u32, Rgb(color));
            }
        }
    }
}

fn line(img: &mut RgbImage, a: (f32, f32), b: (f32, f32), radius: f32, color: [u8; 3]) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        stamp(img, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), radius, color);
    }
}

fn draw_glyph(img: &mut RgbImage, action: usize, rng: &mut ChaCha8Rng) {
    let w = img.width() as f32;
    let h = img.height() as f32;
    let ox = rng.random_range(-2.0..=2.0f32);
    let oy = rng.random_range(-2.0..=2.0f32);
    let th = (w.min(h) / 48.0).max(1.0);
    match action {
        // waving: a sine stroke along the top band
        0 => {
            let y0 = h * 0.16 + oy;
            let mut prev = (w * 0.2 + ox, y0);
            let mut x = w * 0.2;
            while x <= w * 0.8 {
                let p = (x + ox, y0 + (x / (w / 16.0)).sin() * h * 0.04);
                line(img, prev, p, th, INK);
                prev = p;
                x += 1.0;
            }
        }
        // sleeping: a "Z" in the top-right corner
        1 => {
            let (x0, y0, s) = (w * 0.68 + ox, h * 0.1 + oy, w * 0.2);
            line(img, (x0, y0), (x0 + s, y0), th, INK);
            line(img, (x0 + s, y0), (x0, y0 + s), th, INK);
            line(img, (x0, y0 + s), (x0 + s, y0 + s), th, INK);
        }
        // crying: two drops in the lower-left corner
        2 => {
            stamp(img, w * 0.18 + ox, h * 0.74 + oy, w * 0.05, [60, 110, 200]);
            stamp(img, w * 0.28 + ox, h * 0.86 + oy, w * 0.05, [60, 110, 200]);
        }
        // jumping: motion dashes along the bottom
        3 => {
            for k in 0..3 {
                let x0 = w * (0.25 + 0.2 * k as f32) + ox;
                line(img, (x0, h * 0.88 + oy), (x0 + w * 0.1, h * 0.88 + oy), th, INK);
            }
        }
        // laughing: short rays fanning out of the top-left corner
        4 => {
            let c = (w * 0.16 + ox, h * 0.16 + oy);
            for k in 0..5 {
                let a = k as f32 * std::f32::consts::FRAC_PI_2 / 4.0;
                let (s, co) = a.sin_cos();
                let r0 = w * 0.04;
                let r1 = w * 0.13;
                line(img, (c.0 + co * r0, c.1 + s * r0), (c.0 + co * r1, c.1 + s * r1), th, INK);
            }
        }
        // pointing: an arrow on the right edge
        _ => {
            let y0 = h * 0.5 + oy;
            let (x0, x1) = (w * 0.74 + ox, w * 0.92 + ox);
            line(img, (x0, y0), (x1, y0), th, INK);
            line(img, (x1, y0), (x1 - w * 0.06, y0 - h * 0.06), th, INK);
            line(img, (x1, y0), (x1 - w * 0.06, y0 + h * 0.06), th, INK);
        }
    }
}
