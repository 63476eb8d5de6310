//! Synthetic multi-class segmentation data: colored geometric shapes
//! composited on a textured background, with exact rasterized masks.
//! Also: mask ↔ embedding codecs, augmentation and overlap tiling.

use std::path::Path;

use pmsdiff_core::metrics::Mask;
use pmsdiff_core::rng::stream;
use pmsdiff_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::pnm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Disk,
    Bar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub num_samples: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub shapes: Vec<ShapeKind>,
    /// Target pixel share of class c+1 relative to class c; 1.0 means
    /// all classes (including background) get equal area.
    pub imbalance: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_samples: 16,
            height: 32,
            width: 32,
            num_classes: 3,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Bar],
            imbalance: 1.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height % 32 != 0 || self.width % 32 != 0 || self.height == 0 || self.width == 0 {
            return Err(CliError::Config(format!(
                "H and W must be positive multiples of 32, got {}×{}",
                self.height, self.width
            )));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(CliError::Config(format!(
                "num_classes must be in 2..=256, got {}",
                self.num_classes
            )));
        }
        if self.shapes.is_empty() {
            return Err(CliError::Config("shape vocabulary is empty".into()));
        }
        if !(self.imbalance > 0.0 && self.imbalance.is_finite()) {
            return Err(CliError::Config(format!(
                "imbalance ratio must be positive, got {}",
                self.imbalance
            )));
        }
        Ok(())
    }

    /// Target pixel fraction per class: share of class c is
    /// imbalance^c, normalized over all classes.
    pub fn class_fractions(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.num_classes).map(|c| self.imbalance.powi(c as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    pub image: Tensor,
    pub mask: Mask,
    pub id: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<SegmentationSample>,
    pub num_classes: usize,
    pub palette: Vec<[u8; 3]>,
}

/// Evenly hue-spaced RGB palette; class 0 is a dark background tone.
pub fn class_palette(num_classes: usize) -> Vec<[u8; 3]> {
    (0..num_classes)
        .map(|c| {
            if c == 0 {
                [40, 44, 48]
            } else {
                let hue = (c - 1) as f64 / (num_classes - 1).max(1) as f64;
                let (r, g, b) = hsv_to_rgb(hue, 0.65, 0.85);
                [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
            }
        })
        .collect()
}

struct ShapeStamp {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    half_h: f64,
    half_w: f64,
}

impl ShapeStamp {
    fn covers(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 + 0.5 - self.cy;
        let dx = x as f64 + 0.5 - self.cx;
        match self.kind {
            ShapeKind::Rectangle | ShapeKind::Bar => dy.abs() <= self.half_h && dx.abs() <= self.half_w,
            ShapeKind::Disk => {
                let r = self.half_h;
                dy * dy + dx * dx <= r * r
            }
        }
    }

    fn bounds(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let y0 = (self.cy - self.half_h - 1.0).max(0.0) as usize;
        let y1 = ((self.cy + self.half_h + 1.0) as usize).min(h);
        let x0 = (self.cx - self.half_w - 1.0).max(0.0) as usize;
        let x1 = ((self.cx + self.half_w + 1.0) as usize).min(w);
        (y0, y1, x0, x1)
    }
}

fn sample_stamp(kind: ShapeKind, area: f64, h: usize, w: usize, rng: &mut impl Rng) -> ShapeStamp {
    let max_half = (h.min(w) as f64 / 2.0 - 1.0).max(1.5);
    let (half_h, half_w) = match kind {
        ShapeKind::Rectangle => {
            let aspect: f64 = rng.gen_range(0.5..2.0);
            let hh = (area * aspect).sqrt() / 2.0;
            let hw = (area / aspect).sqrt() / 2.0;
            (hh.clamp(1.0, max_half), hw.clamp(1.0, max_half))
        }
        ShapeKind::Disk => {
            let r = (area / std::f64::consts::PI).sqrt();
            (r.clamp(1.0, max_half), r.clamp(1.0, max_half))
        }
        ShapeKind::Bar => {
            let aspect: f64 = rng.gen_range(4.0..8.0);
            let (long, short) = ((area * aspect).sqrt() / 2.0, (area / aspect).sqrt() / 2.0);
            let (long, short) = (long.clamp(2.0, max_half), short.clamp(0.6, max_half));
            if rng.gen_bool(0.5) {
                (long, short)
            } else {
                (short, long)
            }
        }
    };
    ShapeStamp {
        kind,
        cy: rng.gen_range(0.0..h as f64),
        cx: rng.gen_range(0.0..w as f64),
        half_h,
        half_w,
    }
}

/// Paint `stamp` with class `id` onto background pixels only; returns
/// how many pixels changed.
fn paint(mask: &mut [u8], h: usize, w: usize, stamp: &ShapeStamp, id: u8) -> usize {
    let (y0, y1, x0, x1) = stamp.bounds(h, w);
    let mut painted = 0;
    for y in y0..y1 {
        for x in x0..x1 {
            let idx = y * w + x;
            if mask[idx] == 0 && stamp.covers(y, x) {
                mask[idx] = id;
                painted += 1;
            }
        }
    }
    painted
}

fn generate_one(spec: &DatasetSpec, index: usize) -> Result<SegmentationSample> {
    let (h, w) = (spec.height, spec.width);
    let area = (h * w) as f64;
    let fractions = spec.class_fractions();
    let foreground: f64 = fractions[1..].iter().sum();
    if foreground > 0.85 {
        return Err(CliError::Generation(format!(
            "foreground target {:.0}% exceeds the packable area",
            foreground * 100.0
        )));
    }

    let mut rng = stream(spec.seed, "data", index as u64);
    let mut mask = vec![0u8; h * w];
    let mut counts = vec![0usize; spec.num_classes];

    for c in 1..spec.num_classes {
        let target = fractions[c] * area;
        let mut attempts = 0;
        while (counts[c] as f64) < 0.9 * target {
            attempts += 1;
            if attempts > 600 {
                return Err(CliError::Generation(format!(
                    "could not place enough class-{c} shapes after {attempts} attempts"
                )));
            }
            let deficit = target - counts[c] as f64;
            let shape_area = deficit.clamp(9.0, area / 8.0);
            let kind = spec.shapes[rng.gen_range(0..spec.shapes.len())];
            let stamp = sample_stamp(kind, shape_area, h, w, &mut rng);
            counts[c] += paint(&mut mask, h, w, &stamp, c as u8);
        }
        if (counts[c] as f64) > 1.2 * target {
            return Err(CliError::Generation(format!(
                "class {c} overshot its target share: {} of {target} pixels",
                counts[c]
            )));
        }
    }

    let mask = Mask::new(h, w, mask)?;
    let image = render(spec, &mask, &mut rng);
    Ok(SegmentationSample { image, mask, id: format!("sample{index:05}") })
}

/// Textured background plus per-class colors with pixel jitter; values
/// are quantized to the 1/255 grid so PNM round trips are exact.
fn render(spec: &DatasetSpec, mask: &Mask, rng: &mut impl Rng) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let palette = class_palette(spec.num_classes);
    let phase_y: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_x: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let id = mask.get(y, x) as usize;
            let base = palette[id];
            let wave = 0.06
                * ((y as f64 / h as f64 * std::f64::consts::TAU + phase_y).sin()
                    + (x as f64 / w as f64 * std::f64::consts::TAU + phase_x).cos());
            for c in 0..3 {
                let jitter: f64 = rng.gen_range(-0.05..0.05);
                let v = base[c] as f64 / 255.0 + wave + jitter;
                data[c * h * w + y * w + x] = quantize(v.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::from_vec(vec![3, h, w], data).expect("shape and data agree")
}

fn quantize(v: f64) -> f64 {
    (v * 255.0).round() / 255.0
}

/// Generate the full dataset; deterministic under the spec seed.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let samples = (0..spec.num_samples)
        .map(|i| generate_one(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        num_classes: spec.num_classes,
        palette: class_palette(spec.num_classes),
    })
}

/// Encode a class mask as a {−1,+1} embedding: +1 on the true class
/// channel, −1 elsewhere. This centers the embedding for additive
/// Gaussian corruption.
pub fn encode_mask(mask: &Mask, num_classes: usize) -> Result<Tensor> {
    let hot = pmsdiff_core::metrics::one_hot(mask, num_classes)?;
    Ok(hot.map(|v| 2.0 * v - 1.0))
}

/// Channel argmax; ties resolve to the lowest class id.
pub fn decode_mask(embedding: &Tensor) -> Result<Mask> {
    if embedding.rank() != 3 {
        return Err(CliError::Data(format!(
            "mask embedding must be C×H×W, got {:?}",
            embedding.shape()
        )));
    }
    let (c, h, w) = (embedding.shape()[0], embedding.shape()[1], embedding.shape()[2]);
    if c > 256 {
        return Err(CliError::Data(format!("{c} channels exceed the u8 class-id range")));
    }
    let plane = h * w;
    let mut ids = vec![0u8; plane];
    for (i, id) in ids.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_v = embedding.data()[i];
        for ch in 1..c {
            let v = embedding.data()[ch * plane + i];
            if v > best_v {
                best_v = v;
                best = ch;
            }
        }
        *id = best as u8;
    }
    Ok(Mask::new(h, w, ids)?)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { flip_prob: 0.5, brightness: 0.2, contrast: 0.2, saturation: 0.1, hue: 0.1 }
    }
}

fn flip_image(image: &Tensor) -> Tensor {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                data[ch * h * w + y * w + x] = image.at(&[ch, y, w - 1 - x]);
            }
        }
    }
    Tensor::from_vec(vec![c, h, w], data).expect("same extents")
}

fn flip_mask(mask: &Mask) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let mut ids = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            ids[y * w + x] = mask.get(y, w - 1 - x);
        }
    }
    Mask::new(h, w, ids).expect("same extents")
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

/// Horizontal flip applies jointly to image and mask; the photometric
/// jitters touch only the image.
pub fn augment(sample: &SegmentationSample, rng: &mut impl Rng, policy: &AugmentPolicy) -> SegmentationSample {
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if rng.gen_bool(policy.flip_prob.clamp(0.0, 1.0)) {
        image = flip_image(&image);
        mask = flip_mask(&mask);
    }

    let db = rng.gen_range(-policy.brightness..=policy.brightness);
    let dc = rng.gen_range(-policy.contrast..=policy.contrast);
    let ds = rng.gen_range(-policy.saturation..=policy.saturation);
    let dh = rng.gen_range(-policy.hue..=policy.hue);

    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut data = image.data().to_vec();
    for i in 0..plane {
        let (mut r, mut g, mut b) = (data[i], data[plane + i], data[2 * plane + i]);
        let (hh, ss, vv) = rgb_to_hsv(r, g, b);
        let (nr, ng, nb) = hsv_to_rgb(hh + dh, (ss * (1.0 + ds)).clamp(0.0, 1.0), vv);
        r = nr;
        g = ng;
        b = nb;
        for (ch, v) in [r, g, b].into_iter().enumerate() {
            let adjusted = ((v - 0.5) * (1.0 + dc) + 0.5 + db).clamp(0.0, 1.0);
            data[ch * plane + i] = adjusted;
        }
    }
    let image = Tensor::from_vec(vec![c, h, w], data).expect("same extents");
    SegmentationSample { image, mask, id: sample.id.clone() }
}

/// One positioned tile cut from an image (and optionally its mask).
#[derive(Debug, Clone)]
pub struct Tile {
    pub y: usize,
    pub x: usize,
    pub image: Tensor,
    pub mask: Option<Mask>,
}

fn tile_starts(extent: usize, tile: usize, overlap: usize) -> Vec<usize> {
    let stride = tile - overlap;
    let mut starts = Vec::new();
    let mut pos = 0;
    loop {
        if pos + tile >= extent {
            starts.push(extent - tile);
            break;
        }
        starts.push(pos);
        pos += stride;
    }
    starts.dedup();
    starts
}

fn crop(image: &Tensor, y: usize, x: usize, th: usize, tw: usize) -> Tensor {
    let (c, _, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let plane = image.shape()[1] * w;
    let mut data = vec![0.0; c * th * tw];
    for ch in 0..c {
        for dy in 0..th {
            for dx in 0..tw {
                data[ch * th * tw + dy * tw + dx] = image.data()[ch * plane + (y + dy) * w + (x + dx)];
            }
        }
    }
    Tensor::from_vec(vec![c, th, tw], data).expect("crop extents")
}

/// Cut an image (and optional mask) into overlapping tiles that cover
/// every pixel.
pub fn tile(
    image: &Tensor,
    mask: Option<&Mask>,
    tile_size: usize,
    overlap: usize,
) -> Result<Vec<Tile>> {
    if image.rank() != 3 {
        return Err(CliError::Data(format!("expected c×h×w image, got {:?}", image.shape())));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if tile_size == 0 || tile_size > h || tile_size > w {
        return Err(CliError::Core(pmsdiff_core::Error::Dimension(format!(
            "tile size {tile_size} exceeds image extents {h}×{w}"
        ))));
    }
    if overlap >= tile_size {
        return Err(CliError::Config(format!(
            "overlap {overlap} must be smaller than tile size {tile_size}"
        )));
    }
    let mut tiles = Vec::new();
    for &y in &tile_starts(h, tile_size, overlap) {
        for &x in &tile_starts(w, tile_size, overlap) {
            let mask_tile = mask.map(|m| {
                let mut ids = vec![0u8; tile_size * tile_size];
                for dy in 0..tile_size {
                    for dx in 0..tile_size {
                        ids[dy * tile_size + dx] = m.get(y + dy, x + dx);
                    }
                }
                Mask::new(tile_size, tile_size, ids).expect("tile extents")
            });
            tiles.push(Tile { y, x, image: crop(image, y, x, tile_size, tile_size), mask: mask_tile });
        }
    }
    Ok(tiles)
}

/// Average per-tile class probabilities over the full canvas, then
/// argmax into a mask. Every pixel must be covered by at least one tile.
pub fn stitch(tiles: &[(usize, usize, Tensor)], height: usize, width: usize) -> Result<Mask> {
    let classes = tiles
        .first()
        .map(|(_, _, t)| t.shape()[0])
        .ok_or_else(|| CliError::Data("stitch needs at least one tile".into()))?;
    let mut sums = vec![0.0; classes * height * width];
    let mut hits = vec![0u32; height * width];
    for (y, x, probs) in tiles {
        let (c, th, tw) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
        if c != classes || y + th > height || x + tw > width {
            return Err(CliError::Data(format!(
                "tile at ({y},{x}) with shape {:?} does not fit a {classes}×{height}×{width} canvas",
                probs.shape()
            )));
        }
        for dy in 0..th {
            for dx in 0..tw {
                hits[(y + dy) * width + (x + dx)] += 1;
                for ch in 0..c {
                    sums[ch * height * width + (y + dy) * width + (x + dx)] +=
                        probs.at(&[ch, dy, dx]);
                }
            }
        }
    }
    if let Some(i) = hits.iter().position(|&h| h == 0) {
        return Err(CliError::Data(format!(
            "pixel ({}, {}) is not covered by any tile",
            i / width,
            i % width
        )));
    }
    let mut avg = vec![0.0; classes * height * width];
    for ch in 0..classes {
        for i in 0..height * width {
            avg[ch * height * width + i] = sums[ch * height * width + i] / hits[i] as f64;
        }
    }
    let probs = Tensor::from_vec(vec![classes, height, width], avg)?;
    decode_mask(&probs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub ids: Vec<String>,
    pub split: String,
    pub num_classes: usize,
    pub palette: Vec<[u8; 3]>,
}

/// Write `root/{images/*.ppm, masks/*.pgm, manifest.json}`.
pub fn save_dataset(root: &Path, dataset: &Dataset, split: &str) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    std::fs::create_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
    std::fs::create_dir_all(&masks).map_err(|e| CliError::io(&masks, e))?;
    for sample in &dataset.samples {
        pnm::write_ppm(&images.join(format!("{}.ppm", sample.id)), &sample.image)?;
        pnm::write_pgm(&masks.join(format!("{}.pgm", sample.id)), &sample.mask)?;
    }
    let manifest = Manifest {
        ids: dataset.samples.iter().map(|s| s.id.clone()).collect(),
        split: split.into(),
        num_classes: dataset.num_classes,
        palette: dataset.palette.clone(),
    };
    let path = root.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Json { path: path.clone(), source: e })?;
    std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join("manifest.json");
    let raw = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&raw).map_err(|e| CliError::Json { path: path.clone(), source: e })?;
    let mut samples = Vec::with_capacity(manifest.ids.len());
    for id in &manifest.ids {
        let image = pnm::read_ppm(&root.join("images").join(format!("{id}.ppm")))?;
        let mask = pnm::read_pgm(&root.join("masks").join(format!("{id}.pgm")))?;
        if mask.max_class() > manifest.num_classes {
            return Err(CliError::Data(format!(
                "mask {id} contains ids beyond the manifest's {} classes",
                manifest.num_classes
            )));
        }
        samples.push(SegmentationSample { image, mask, id: id.clone() });
    }
    Ok(Dataset { samples, num_classes: manifest.num_classes, palette: manifest.palette })
}
