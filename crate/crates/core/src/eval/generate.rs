//! Synthetic scenes with engineered ground truth and injected segmentation faults.
//!
//! Each scene is a 64x64 image of two colored rectangles on a gray texture:
//! the target, and a refer object the query mentions. Feature patches are
//! mixtures of one basis vector per object (by pixel coverage) plus uniform
//! noise, so patches of the same object are mutually similar. Target
//! rectangles are aligned to the patch grid.
//!
//! The scripted segmenter answers text and box prompts with the faulty mask
//! and point prompts by color flood fill, so only self-refinement can repair
//! the fault:
//! * `under`: a corner block of the target is missing;
//! * `over`: either a differently colored strip attached below the target
//!   is included, or the target is dilated by one pixel;
//! * `none`: the mask is exact.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::manifest::Sample;
use super::EvalError;
use crate::backends::ReasoningOptions;
use crate::mask::{io, BBox, BinaryMask};
use crate::similarity::FeatureMap;

pub const SIZE: u32 = 64;
pub const GRID: u32 = 16;
pub const DIM: u32 = 16;
const CELL: u32 = SIZE / GRID;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fault {
    None,
    Under,
    Over,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Fault::None),
            "under" => Ok(Fault::Under),
            "over" => Ok(Fault::Over),
            other => Err(format!("unknown fault {other:?} (expected none, under or over)")),
        }
    }
}

impl std::fmt::Display for Fault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fault::None => "none",
            Fault::Under => "under",
            Fault::Over => "over",
        })
    }
}

/// Relative weights of each fault, e.g. `none=6,under=7,over=7`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultMix(pub Vec<(Fault, usize)>);

impl FromStr for FaultMix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = Vec::new();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| format!("expected fault=count, got {item:?}"))?;
            let n: usize = v.trim().parse().map_err(|_| format!("bad count in {item:?}"))?;
            parts.push((k.parse()?, n));
        }
        if parts.iter().map(|(_, n)| n).sum::<usize>() == 0 {
            return Err("fault mix has no weight".into());
        }
        Ok(FaultMix(parts))
    }
}

impl FaultMix {
    /// Fault per scene for `count` scenes: largest-remainder apportionment
    /// of the weights, emitted in mix order.
    pub fn assign(&self, count: usize) -> Vec<Fault> {
        let total: usize = self.0.iter().map(|(_, n)| n).sum();
        let mut shares: Vec<(usize, usize)> =
            self.0.iter().map(|(_, n)| (n * count / total, n * count % total)).collect();
        let mut left = count - shares.iter().map(|(q, _)| q).sum::<usize>();
        let mut order: Vec<usize> = (0..shares.len()).collect();
        order.sort_by(|&a, &b| shares[b].1.cmp(&shares[a].1).then(a.cmp(&b)));
        for i in order {
            if left == 0 {
                break;
            }
            shares[i].0 += 1;
            left -= 1;
        }
        self.0.iter().zip(shares).flat_map(|((f, _), (n, _))| std::iter::repeat_n(*f, n)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverStyle {
    /// Differently colored strip attached below the target.
    Decoy,
    /// Target dilated by one pixel.
    Dilate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    /// Two alternative names used for prompt augmentation.
    pub synonyms: [String; 2],
    pub color: [u8; 3],
    pub rect: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub target: ObjectSpec,
    pub refer: Option<ObjectSpec>,
    pub query: String,
    pub short: String,
    pub long: String,
    pub relation: String,
    pub fault: Fault,
    pub over_style: OverStyle,
    pub decoy_color: [u8; 3],
    /// Corner removed for `under` faults: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    pub corner: u8,
    pub noise_seed: u64,
}

const PALETTE: [(&str, [u8; 3]); 7] = [
    ("red", [210, 35, 35]),
    ("blue", [40, 70, 210]),
    ("yellow", [225, 205, 30]),
    ("green", [40, 180, 60]),
    ("magenta", [200, 40, 200]),
    ("cyan", [30, 200, 210]),
    ("orange", [235, 130, 20]),
];

const TARGET_NOUNS: [(&str, [&str; 2]); 6] = [
    ("box", ["crate", "carton"]),
    ("book", ["volume", "notebook"]),
    ("card", ["tag", "label"]),
    ("sign", ["placard", "board"]),
    ("tile", ["slab", "panel"]),
    ("door", ["gate", "hatch"]),
];

const REFER_NOUNS: [(&str, [&str; 2]); 5] = [
    ("cup", ["mug", "beaker"]),
    ("lamp", ["light", "lantern"]),
    ("ball", ["sphere", "orb"]),
    ("kite", ["glider", "sail"]),
    ("bag", ["sack", "pouch"]),
];

fn object(color: &str, noun: (&str, [&str; 2]), rgb: [u8; 3], rect: BBox) -> ObjectSpec {
    ObjectSpec {
        name: format!("{color} {}", noun.0),
        synonyms: [format!("{color} {}", noun.1[0]), format!("{color} {}", noun.1[1])],
        color: rgb,
        rect,
    }
}

/// A random scene layout. Consumes a fixed number of draws per call.
pub fn random_scene(rng: &mut ChaCha8Rng, id: String, fault: Fault, over_style: OverStyle) -> SceneSpec {
    let sizes = [20u32, 24, 28];
    let w = sizes[rng.random_range(0..3)];
    let h = sizes[rng.random_range(0..3)];
    let left = rng.random_bool(0.5);
    let tx0 = if left { 4 * rng.random_range(1..=2u32) } else { SIZE - w - 4 * rng.random_range(1..=2u32) };
    let ty0 = 4 * rng.random_range(1..=4u32);
    let target_rect = BBox::new(tx0, ty0, tx0 + w, ty0 + h).expect("nonempty");

    let rw = rng.random_range(8..=12u32);
    let rh = rng.random_range(8..=12u32);
    let (lo, hi) = if left { (tx0 + w + 6, SIZE - rw - 2) } else { (2, tx0 - 6 - rw) };
    let rx0 = rng.random_range(lo..=hi);
    let ry0 = rng.random_range(4..=SIZE - rh - 4);
    let refer_rect = BBox::new(rx0, ry0, rx0 + rw, ry0 + rh).expect("nonempty");

    let mut colors: Vec<usize> = (0..PALETTE.len()).collect();
    let mut pick = |rng: &mut ChaCha8Rng| colors.remove(rng.random_range(0..colors.len()));
    let (tc, rc, dc) = (pick(rng), pick(rng), pick(rng));
    let tn = TARGET_NOUNS[rng.random_range(0..TARGET_NOUNS.len())];
    let rn = REFER_NOUNS[rng.random_range(0..REFER_NOUNS.len())];
    let corner = rng.random_range(0..4u8);
    let noise_seed = rng.next_u64();

    let target = object(PALETTE[tc].0, tn, PALETTE[tc].1, target_rect);
    let refer = object(PALETTE[rc].0, rn, PALETTE[rc].1, refer_rect);
    let side = if left { "left" } else { "right" };
    SceneSpec {
        id,
        query: format!("the {} to the {side} of the {}", target.name, refer.name),
        short: format!("the {}", target.name),
        long: format!("the {} that sits to the {side} of the {}", target.name, refer.name),
        relation: format!("{side} of"),
        target,
        refer: Some(refer),
        fault,
        over_style,
        decoy_color: PALETTE[dc].1,
        corner,
        noise_seed,
    }
}

/// Rendered scene: image, per-pixel object labels and the derived masks.
pub struct RenderedScene {
    pub image: RgbImage,
    pub labels: Vec<u8>,
    pub gt: BinaryMask,
    pub faulty: BinaryMask,
    pub refer: Option<BinaryMask>,
    pub features: FeatureMap,
}

const BACKGROUND: u8 = 0;
const TARGET: u8 = 1;
const REFER: u8 = 2;
const DECOY: u8 = 3;

fn decoy_rect(t: &BBox) -> BBox {
    let dw = (t.width() / 3).max(1);
    let x0 = t.x_min + (t.width() - dw) / 2;
    BBox::new(x0, t.y_max, x0 + dw, (t.y_max + 5).min(SIZE)).expect("target leaves room below")
}

fn corner_block(t: &BBox, corner: u8) -> BBox {
    let (bw, bh) = (t.width() / 3, t.height() / 3);
    let x0 = if corner.is_multiple_of(2) { t.x_min } else { t.x_max - bw };
    let y0 = if corner < 2 { t.y_min } else { t.y_max - bh };
    BBox::new(x0, y0, x0 + bw, y0 + bh).expect("block is nonempty")
}

pub fn render(spec: &SceneSpec) -> RenderedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let n = (SIZE * SIZE) as usize;
    let mut labels = vec![BACKGROUND; n];
    let mut image = RgbImage::new(SIZE, SIZE);
    for px in image.pixels_mut() {
        let v = rng.random_range(110..=140u8);
        *px = Rgb([v, v, v]);
    }
    let paint = |image: &mut RgbImage, labels: &mut [u8], rng: &mut ChaCha8Rng, r: &BBox, color: [u8; 3], label: u8| {
        for y in r.y_min..r.y_max {
            for x in r.x_min..r.x_max {
                let mut c = [0u8; 3];
                for k in 0..3 {
                    c[k] = (color[k] as i16 + rng.random_range(-6..=6i16)).clamp(0, 255) as u8;
                }
                image.put_pixel(x, y, Rgb(c));
                labels[(y * SIZE + x) as usize] = label;
            }
        }
    };
    paint(&mut image, &mut labels, &mut rng, &spec.target.rect, spec.target.color, TARGET);
    if let Some(r) = &spec.refer {
        paint(&mut image, &mut labels, &mut rng, &r.rect, r.color, REFER);
    }
    let decoy = (spec.fault == Fault::Over && spec.over_style == OverStyle::Decoy).then(|| decoy_rect(&spec.target.rect));
    if let Some(d) = &decoy {
        paint(&mut image, &mut labels, &mut rng, d, spec.decoy_color, DECOY);
    }

    let label_mask = |l: u8| BinaryMask::from_fn(SIZE, SIZE, |x, y| labels[(y * SIZE + x) as usize] == l).expect("valid dims");
    let gt = label_mask(TARGET);
    let refer = spec.refer.as_ref().map(|_| label_mask(REFER));
    let faulty = match spec.fault {
        Fault::None => gt.clone(),
        Fault::Under => {
            let block = BinaryMask::from_box(SIZE, SIZE, &corner_block(&spec.target.rect, spec.corner)).expect("in bounds");
            gt.difference(&block).expect("same dims")
        }
        Fault::Over => match spec.over_style {
            OverStyle::Decoy => gt.union(&label_mask(DECOY)).expect("same dims"),
            OverStyle::Dilate => gt.dilate(1),
        },
    };

    let mut values = Vec::with_capacity((GRID * GRID * DIM) as usize);
    for gy in 0..GRID {
        for gx in 0..GRID {
            let mut frac = [0f32; 4];
            for y in gy * CELL..(gy + 1) * CELL {
                for x in gx * CELL..(gx + 1) * CELL {
                    frac[labels[(y * SIZE + x) as usize] as usize] += 1.0 / (CELL * CELL) as f32;
                }
            }
            for d in 0..DIM as usize {
                let base = if d < 4 { frac[d] } else { 0.0 };
                values.push(base + rng.random_range(-0.1f32..=0.1));
            }
        }
    }
    let features = FeatureMap::new(GRID, GRID, DIM, SIZE, SIZE, values).expect("noisy mixtures are nonzero");
    RenderedScene { image, labels, gt, faulty, refer, features }
}

fn canned(op: &str, args: Value, response: Value) -> Value {
    json!({ "op": op, "args": args, "response": response })
}

fn scenario_document(spec: &SceneSpec) -> Value {
    let t = &spec.target;
    let gt_box = t.rect;
    let mut responses = vec![canned("augment", json!({"target": t.name}), json!({"texts": [t.name, t.synonyms[0], t.synonyms[1]]}))];
    let mut text = serde_json::Map::new();
    text.insert(t.name.clone(), json!([{"mask": "faulty.png", "score": 0.92}]));
    text.insert(t.synonyms[0].clone(), json!([{"mask": "faulty.png", "score": 0.88}]));
    text.insert(t.synonyms[1].clone(), json!([]));

    let refer_names: Vec<&str> = spec.refer.iter().map(|r| r.name.as_str()).collect();
    responses.push(canned(
        "parse",
        json!({"query": spec.query, "options": ReasoningOptions::all()}),
        json!({
            "is_explicit": true,
            "is_multi_object": false,
            "target_name": t.name,
            "refer_names": refer_names,
            "adjectives": [t.name.split(' ').next()],
            "confusion_notes": "",
        }),
    ));
    match &spec.refer {
        None => {
            responses.push(canned(
                "parse",
                json!({"query": spec.query, "options": ReasoningOptions::none()}),
                json!({"is_explicit": true, "is_multi_object": false, "target_name": t.name}),
            ));
            responses.push(canned("ground", json!({"text": spec.query}), json!({"box": gt_box})));
        }
        Some(r) => {
            // Without structured reasoning the head noun of the query is misread as the refer object.
            responses.push(canned(
                "parse",
                json!({"query": spec.query, "options": ReasoningOptions::none()}),
                json!({"is_explicit": true, "is_multi_object": false, "target_name": r.name}),
            ));
            responses.push(canned(
                "augment",
                json!({"target": r.name}),
                json!({"texts": [r.name, r.synonyms[0], r.synonyms[1]]}),
            ));
            responses.push(canned(
                "criterion",
                json!({"target": t.name, "refer": r.name, "box": r.rect}),
                json!({"relation": spec.relation}),
            ));
            responses.push(canned(
                "rephrase",
                json!({"query": spec.query, "target": t.name, "refers": [r.name], "relation": spec.relation}),
                json!({"short": spec.short, "long": spec.long}),
            ));
            let mut grounded = vec![spec.query.as_str(), spec.short.as_str(), spec.long.as_str()];
            grounded.dedup();
            for text in grounded {
                responses.push(canned("ground", json!({"text": text}), json!({"box": gt_box})));
            }
            text.insert(r.name.clone(), json!([{"mask": "refer.png", "score": 0.9}]));
            text.insert(r.synonyms[0].clone(), json!([{"mask": "refer.png", "score": 0.85}]));
            text.insert(r.synonyms[1].clone(), json!([]));
            // The target phrase also picks up the refer object with low confidence.
            text.insert(
                t.name.clone(),
                json!([{"mask": "faulty.png", "score": 0.92}, {"mask": "refer.png", "score": 0.55}]),
            );
        }
    }

    json!({
        "reasoner": {
            "oracle_mask": "gt.png",
            "procedures": {"score": "gt_iou", "prefer": "consensus", "affiliate": "gt_overlap"},
            "responses": responses,
        },
        "segmenter": {
            "oracle_mask": "gt.png",
            "text": text,
            "box": [{"box": gt_box, "mask": "faulty.png", "score": 0.9}],
            "points": {"kind": "color_flood", "tolerance": 40},
        },
        "features": {"map": "features.fmap"},
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io(format!("{}: {e}", path.display()))
}

/// Writes one scene into `dir` (created if needed) and returns its manifest
/// record with paths relative to `dir`'s parent.
pub fn write_scenario(spec: &SceneSpec, dir: &Path) -> Result<Sample, EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let scene = render(spec);
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    };
    let mut png = std::io::Cursor::new(Vec::new());
    scene.image.write_to(&mut png, image::ImageFormat::Png).map_err(|e| io_err(dir, e))?;
    write("image.png", png.get_ref())?;
    write("gt.png", &io::encode_png(&scene.gt))?;
    write("faulty.png", &io::encode_png(&scene.faulty))?;
    if let Some(r) = &scene.refer {
        write("refer.png", &io::encode_png(r))?;
    }
    write("features.fmap", &scene.features.to_bytes())?;
    let doc = serde_json::to_string_pretty(&scenario_document(spec)).expect("JSON values serialize");
    write("scenario.json", doc.as_bytes())?;
    write("scene.json", serde_json::to_string_pretty(spec).expect("spec serializes").as_bytes())?;

    let name = dir.file_name().map(PathBuf::from).unwrap_or_default();
    Ok(Sample {
        image: name.join("image.png"),
        query: spec.query.clone(),
        gt_mask: name.join("gt.png"),
        split: "synthetic".into(),
        scenario: Some(name),
        meta: Some(json!({
            "id": spec.id,
            "fault": spec.fault,
            "over_style": (spec.fault == Fault::Over).then_some(spec.over_style),
        })),
    })
}

/// Generates `count` scenes under `out_dir` plus `manifest.jsonl`; returns the manifest path.
///
/// Output bytes depend only on `(seed, count, mix)`.
pub fn generate_scenarios(seed: u64, count: usize, mix: &FaultMix, out_dir: &Path) -> Result<PathBuf, EvalError> {
    if count == 0 {
        return Err(EvalError::Input("scenario count must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    let mut overs = 0;
    for (i, fault) in mix.assign(count).into_iter().enumerate() {
        let style = if fault == Fault::Over && overs % 2 == 1 { OverStyle::Dilate } else { OverStyle::Decoy };
        if fault == Fault::Over {
            overs += 1;
        }
        let id = format!("scene-{i:03}");
        let spec = random_scene(&mut rng, id.clone(), fault, style);
        records.push(write_scenario(&spec, &out_dir.join(&id))?);
    }
    let manifest = out_dir.join("manifest.jsonl");
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("samples serialize"));
        text.push('\n');
    }
    std::fs::write(&manifest, text).map_err(|e| io_err(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parsing_and_assignment() {
        let mix: FaultMix = "none=6,under=7,over=7".parse().unwrap();
        let faults = mix.assign(20);
        assert_eq!(faults.iter().filter(|f| **f == Fault::None).count(), 6);
        assert_eq!(faults.iter().filter(|f| **f == Fault::Under).count(), 7);
        let even: FaultMix = "under=1,over=1".parse().unwrap();
        assert_eq!(even.assign(5), vec![Fault::Under, Fault::Under, Fault::Under, Fault::Over, Fault::Over]);
        assert!("none=0".parse::<FaultMix>().is_err());
        assert!("sideways=2".parse::<FaultMix>().is_err());
    }

    #[test]
    fn rendered_masks_match_fault() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (fault, style) in [
            (Fault::None, OverStyle::Decoy),
            (Fault::Under, OverStyle::Decoy),
            (Fault::Over, OverStyle::Decoy),
            (Fault::Over, OverStyle::Dilate),
        ] {
            let spec = random_scene(&mut rng, "s".into(), fault, style);
            let r = render(&spec);
            assert_eq!(r.gt.bounding_box(), Some(spec.target.rect));
            assert_eq!(r.gt.area(), spec.target.rect.area());
            match fault {
                Fault::None => assert_eq!(r.faulty, r.gt),
                Fault::Under => assert!(r.faulty.is_subset_of(&r.gt).unwrap() && r.faulty.area() < r.gt.area()),
                Fault::Over => assert!(r.gt.is_subset_of(&r.faulty).unwrap() && r.faulty.area() > r.gt.area()),
            }
            assert!(r.refer.unwrap().is_disjoint(&r.gt).unwrap());
            assert_eq!(spec.target.rect.x_min % CELL, 0);
            assert_eq!(spec.target.rect.y_min % CELL, 0);
        }
    }
}
