//! Scene layout, viewpoint transforms and flat-shaded rendering.
//!
//! Layout happens on a fixed 64×64 canvas: two pieces of furniture side by
//! side, objects standing on their surfaces. Each view is the canvas seen
//! after a horizontal camera shift (scaled by per-furniture depth, so near
//! and far furniture move by different amounts) and an optional mirror.
//! Larger output sizes are nearest-neighbour upscales of the canvas.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, Result};
use crate::image::{Image, Rgb};

pub const CANVAS: i64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Ball,
    Box,
    Bottle,
    Doll,
    Cup,
    Can,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
    White,
    Black,
    Orange,
    Purple,
    Pink,
    Brown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FurnitureKind {
    Shelf,
    Cabinet,
    Table,
    Sofa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Upper,
    Lower,
    Whole,
}

impl Shape {
    pub const ALL: [Shape; 6] = [Shape::Ball, Shape::Box, Shape::Bottle, Shape::Doll, Shape::Cup, Shape::Can];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Ball => "ball",
            Shape::Box => "box",
            Shape::Bottle => "bottle",
            Shape::Doll => "doll",
            Shape::Cup => "cup",
            Shape::Can => "can",
        }
    }

    /// Canvas extent (w, h) for a size class.
    pub fn extent(self, size: SizeClass) -> (i64, i64) {
        let big = size == SizeClass::Big;
        match self {
            Shape::Ball => if big { (7, 7) } else { (5, 5) },
            Shape::Box => if big { (8, 7) } else { (5, 5) },
            Shape::Bottle => if big { (4, 10) } else { (3, 7) },
            Shape::Doll => if big { (6, 10) } else { (4, 7) },
            Shape::Cup => if big { (6, 6) } else { (4, 4) },
            Shape::Can => if big { (5, 8) } else { (4, 5) },
        }
    }
}

impl Color {
    pub const ALL: [Color; 10] = [
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Yellow,
        Color::White,
        Color::Black,
        Color::Orange,
        Color::Purple,
        Color::Pink,
        Color::Brown,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::White => "white",
            Color::Black => "black",
            Color::Orange => "orange",
            Color::Purple => "purple",
            Color::Pink => "pink",
            Color::Brown => "brown",
        }
    }

    pub fn rgb(self) -> Rgb {
        match self {
            Color::Red => [220, 40, 40],
            Color::Blue => [40, 70, 220],
            Color::Green => [40, 170, 60],
            Color::Yellow => [240, 220, 40],
            Color::White => [250, 250, 250],
            Color::Black => [20, 20, 20],
            Color::Orange => [245, 140, 30],
            Color::Purple => [140, 50, 170],
            Color::Pink => [245, 150, 190],
            Color::Brown => [115, 65, 25],
        }
    }
}

impl SizeClass {
    pub fn word(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Big => "big",
        }
    }
}

impl FurnitureKind {
    pub const ALL: [FurnitureKind; 4] =
        [FurnitureKind::Shelf, FurnitureKind::Cabinet, FurnitureKind::Table, FurnitureKind::Sofa];

    pub fn word(self) -> &'static str {
        match self {
            FurnitureKind::Shelf => "shelf",
            FurnitureKind::Cabinet => "cabinet",
            FurnitureKind::Table => "table",
            FurnitureKind::Sofa => "sofa",
        }
    }

    pub fn has_parts(self) -> bool {
        matches!(self, FurnitureKind::Shelf | FurnitureKind::Cabinet)
    }

    /// Canvas box of the furniture when its slot starts at x0.
    fn frame(self, x0: i64) -> (i64, i64, i64, i64) {
        match self {
            FurnitureKind::Shelf => (x0, 8, 22, 42),
            FurnitureKind::Cabinet => (x0, 14, 22, 36),
            FurnitureKind::Table => (x0, 36, 22, 18),
            FurnitureKind::Sofa => (x0, 30, 22, 20),
        }
    }

    /// Surfaces objects stand on: (part, bottom y, x start, x end).
    fn surfaces(self, x0: i64) -> Vec<(Part, i64, i64, i64)> {
        match self {
            FurnitureKind::Shelf => vec![(Part::Upper, 28, x0 + 2, x0 + 20), (Part::Lower, 48, x0 + 2, x0 + 20)],
            FurnitureKind::Cabinet => vec![(Part::Upper, 32, x0 + 2, x0 + 20), (Part::Lower, 48, x0 + 2, x0 + 20)],
            FurnitureKind::Table => vec![(Part::Whole, 36, x0 + 1, x0 + 21)],
            FurnitureKind::Sofa => vec![(Part::Whole, 44, x0 + 3, x0 + 19)],
        }
    }
}

impl Part {
    pub fn word(self) -> Option<&'static str> {
        match self {
            Part::Upper => Some("upper"),
            Part::Lower => Some("lower"),
            Part::Whole => None,
        }
    }
}

/// Axis-aligned pixel box in one view. Serialized as `[x, y, w, h]`; the
/// frame is implied by the position in the per-view list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub frame: usize,
}

impl From<[u32; 4]> for BoundingBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        BoundingBox { x, y, w, h, frame: 0 }
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

impl BoundingBox {
    pub fn as_array(&self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Twice the horizontal centre, kept integral.
    pub fn center2(&self) -> u32 {
        2 * self.x + self.w
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = (x1 - x0) as f64 * (y1 - y0) as f64;
        inter / (self.area() as f64 + other.area() as f64 - inter)
    }

    pub fn inside(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && (self.x + self.w) as usize <= width && (self.y + self.h) as usize <= height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub shift: i64,
    pub mirror: bool,
}

impl ViewTransform {
    pub const MAIN: ViewTransform = ViewTransform { shift: 0, mirror: false };

    /// Canvas x of a box of width w placed at x at the given depth.
    fn apply(&self, x: i64, w: i64, depth: f64) -> i64 {
        let moved = x + (self.shift as f64 * depth).round() as i64;
        if self.mirror {
            CANVAS - moved - w
        } else {
            moved
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Furniture {
    pub kind: FurnitureKind,
    pub depth: f64,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub size: SizeClass,
    pub furniture: usize,
    pub part: Part,
    /// Top-left corner on the 64×64 layout canvas, main view.
    pub anchor: [i64; 2],
    pub boxes: Vec<BoundingBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub views: Vec<ViewTransform>,
    pub furniture: Vec<Furniture>,
    pub objects: Vec<SceneObject>,
    #[serde(skip)]
    pub images: Vec<Image>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub image_size: usize,
    pub views: usize,
    /// (object count, weight) pairs.
    pub object_counts: Vec<(usize, f64)>,
    pub max_shift: i64,
    pub mirror_prob: f64,
    /// Chance that a new object copies the shape of one already placed.
    pub distractor_prob: f64,
    pub references_per_target: usize,
    pub val_fraction: f64,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_size: 64,
            views: 3,
            object_counts: vec![(2, 0.2), (3, 0.35), (4, 0.3), (5, 0.15)],
            max_shift: 4,
            mirror_prob: 0.3,
            distractor_prob: 0.4,
            references_per_target: 2,
            val_fraction: 0.2,
            max_attempts: 64,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DatasetError::Config(m.into()));
        if self.views == 0 {
            return bad("views must be at least 1");
        }
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        if self.object_counts.is_empty() || self.object_counts.iter().any(|&(n, w)| n == 0 || n > 8 || !(w >= 0.0)) {
            return bad("object_counts must be non-empty with counts in 1..=8 and non-negative weights");
        }
        if self.object_counts.iter().map(|p| p.1).sum::<f64>() <= 0.0 {
            return bad("object_counts weights sum to zero");
        }
        if !(0..=6).contains(&self.max_shift) {
            return bad("max_shift must be in 0..=6");
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) || !(0.0..=1.0).contains(&self.distractor_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.references_per_target == 0 {
            return bad("references_per_target must be at least 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        Ok(())
    }
}

const WALL: Rgb = [200, 190, 170];
const FLOOR: Rgb = [150, 132, 112];
const HORIZON: i64 = 46;
const SLOTS: [i64; 2] = [6, 36];

fn canvas_box(x: i64, y: i64, w: i64, h: i64, frame: usize, size: usize) -> BoundingBox {
    let s = |v: i64| (v as usize * size / CANVAS as usize) as u32;
    let (x0, y0, x1, y1) = (s(x), s(y), s(x + w), s(y + h));
    BoundingBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0, frame }
}

/// Lays out and renders one scene. Fails only when the requested objects
/// cannot be placed without overlap.
pub fn generate_scene(seed: u64, id: usize, cfg: &GenConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = cfg.object_counts.iter().map(|p| p.1).sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut count = cfg.object_counts[0].0;
    for &(n, w) in &cfg.object_counts {
        count = n;
        if pick < w {
            break;
        }
        pick -= w;
    }

    let mut kinds = FurnitureKind::ALL.to_vec();
    kinds.shuffle(&mut rng);
    let depths = if rng.gen_bool(0.5) { [0.6, 1.4] } else { [1.4, 0.6] };

    let mut views = vec![ViewTransform::MAIN];
    for _ in 1..cfg.views {
        let shift = if cfg.max_shift == 0 { 0 } else { rng.gen_range(-cfg.max_shift..=cfg.max_shift) };
        views.push(ViewTransform { shift, mirror: rng.gen_bool(cfg.mirror_prob) });
    }

    struct Placed {
        shape: Shape,
        color: Color,
        size: SizeClass,
        furniture: usize,
        surface: usize,
        x: i64,
        w: i64,
        h: i64,
    }
    let mut placed: Vec<Placed> = Vec::new();
    for _ in 0..count {
        let (shape, color) = if !placed.is_empty() && rng.gen_bool(cfg.distractor_prob) {
            let other = &placed[rng.gen_range(0..placed.len())];
            let color = if rng.gen_bool(0.5) { other.color } else { *Color::ALL.choose(&mut rng).unwrap() };
            (other.shape, color)
        } else {
            (*Shape::ALL.choose(&mut rng).unwrap(), *Color::ALL.choose(&mut rng).unwrap())
        };
        let size = if rng.gen_bool(0.5) { SizeClass::Small } else { SizeClass::Big };
        let (w, h) = shape.extent(size);
        let mut done = false;
        for _ in 0..40 {
            let furniture = rng.gen_range(0..2);
            let surfaces = kinds[furniture].surfaces(SLOTS[furniture]);
            let surface = rng.gen_range(0..surfaces.len());
            let (_, _, xs, xe) = surfaces[surface];
            if xe - xs < w {
                continue;
            }
            let x = rng.gen_range(xs..=xe - w);
            let clash = placed
                .iter()
                .any(|p| p.furniture == furniture && p.surface == surface && x < p.x + p.w + 1 && p.x < x + w + 1);
            if !clash {
                placed.push(Placed { shape, color, size, furniture, surface, x, w, h });
                done = true;
                break;
            }
        }
        if !done {
            return Err(DatasetError::Placement { objects: count, attempts: 40 });
        }
    }

    let size = cfg.image_size;
    let furniture = (0..2)
        .map(|i| {
            let (x, y, w, h) = kinds[i].frame(SLOTS[i]);
            let boxes = views
                .iter()
                .enumerate()
                .map(|(v, t)| canvas_box(t.apply(x, w, depths[i]), y, w, h, v, size))
                .collect();
            Furniture { kind: kinds[i], depth: depths[i], boxes }
        })
        .collect::<Vec<_>>();
    let objects = placed
        .iter()
        .map(|p| {
            let (part, bottom, _, _) = kinds[p.furniture].surfaces(SLOTS[p.furniture])[p.surface];
            let boxes = views
                .iter()
                .enumerate()
                .map(|(v, t)| canvas_box(t.apply(p.x, p.w, depths[p.furniture]), bottom - p.h, p.w, p.h, v, size))
                .collect();
            SceneObject {
                shape: p.shape,
                color: p.color,
                size: p.size,
                furniture: p.furniture,
                part,
                anchor: [p.x, bottom - p.h],
                boxes,
            }
        })
        .collect::<Vec<_>>();

    let mut scene = Scene { id, seed, width: size, height: size, views, furniture, objects, images: Vec::new() };
    scene.images = (0..scene.views.len()).map(|v| render_view(&scene, v)).collect();
    Ok(scene)
}

fn canvas_x(scene: &Scene, v: usize, x: i64, w: i64, depth: f64) -> i64 {
    scene.views[v].apply(x, w, depth)
}

fn draw_furniture(img: &mut Image, kind: FurnitureKind, x: i64, mirror: bool) {
    let (_, y, w, h) = kind.frame(0);
    match kind {
        FurnitureKind::Shelf => {
            let c = [96, 82, 70];
            img.fill_rect(x, y, 2, h, c);
            img.fill_rect(x + w - 2, y, 2, h, c);
            img.fill_rect(x, y, w, 2, c);
            img.fill_rect(x, 28, w, 2, c);
            img.fill_rect(x, 48, w, 2, c);
        }
        FurnitureKind::Cabinet => {
            let c = [120, 128, 146];
            img.fill_rect(x, y, w, h, [170, 176, 190]);
            img.fill_rect(x, y, 2, h, c);
            img.fill_rect(x + w - 2, y, 2, h, c);
            img.fill_rect(x, y, w, 2, c);
            img.fill_rect(x, 32, w, 2, c);
            img.fill_rect(x, 48, w, 2, c);
        }
        FurnitureKind::Table => {
            let c = [130, 110, 96];
            img.fill_rect(x, 36, w, 3, c);
            img.fill_rect(x + 1, 39, 2, 15, c);
            img.fill_rect(x + w - 3, 39, 2, 15, c);
        }
        FurnitureKind::Sofa => {
            let c = [70, 100, 112];
            img.fill_rect(x, 30, w, 14, c);
            img.fill_rect(x, 44, w, 6, [90, 124, 136]);
            // the armrest on the far side sits higher, which makes mirroring visible
            let (arm_l, arm_r) = if mirror { (3, 5) } else { (5, 3) };
            img.fill_rect(x, 44 - arm_l, 3, 6 + arm_l, c);
            img.fill_rect(x + w - 3, 44 - arm_r, 3, 6 + arm_r, c);
        }
    }
}

fn draw_object(img: &mut Image, o: &SceneObject, x: i64, y: i64, mirror: bool) {
    let (w, h) = o.shape.extent(o.size);
    let c = o.color.rgb();
    let shade = [c[0] / 2 + 20, c[1] / 2 + 20, c[2] / 2 + 20];
    match o.shape {
        Shape::Ball => img.fill_ellipse(x, y, w, h, c),
        Shape::Box => {
            img.fill_rect(x, y, w, h, c);
            img.fill_rect(x, y, w, 1, shade);
        }
        Shape::Bottle => {
            let neck = h * 3 / 10;
            img.fill_rect(x, y + neck, w, h - neck, c);
            img.fill_rect(x + w / 2 - w / 4, y, (w / 2).max(1), neck, c);
        }
        Shape::Doll => {
            let head = h * 2 / 5;
            img.fill_ellipse(x + w / 6, y, w - w / 3, head, [240, 200, 170]);
            img.fill_rect(x, y + head, w, h - head, c);
        }
        Shape::Cup => {
            let body = w * 3 / 4;
            let bx = if mirror { x + w - body } else { x };
            let hx = if mirror { x } else { x + body };
            img.fill_rect(bx, y, body, h, c);
            img.fill_rect(hx, y + 1, w - body, (h - 2).max(1), shade);
        }
        Shape::Can => {
            img.fill_rect(x, y, w, h, c);
            img.fill_rect(x, y, w, 1, [200, 200, 200]);
            img.fill_rect(x, y + h - 1, w, 1, [200, 200, 200]);
        }
    }
}

/// Renders view v from the scene description (deterministic).
pub fn render_view(scene: &Scene, v: usize) -> Image {
    let mut img = Image::new(CANVAS as usize, CANVAS as usize, WALL);
    img.fill_rect(0, HORIZON, CANVAS, CANVAS - HORIZON, FLOOR);
    let mirror = scene.views[v].mirror;
    // far furniture first so near furniture occludes it
    let mut order: Vec<usize> = (0..scene.furniture.len()).collect();
    order.sort_by(|&a, &b| scene.furniture[a].depth.partial_cmp(&scene.furniture[b].depth).unwrap());
    for &i in &order {
        let f = &scene.furniture[i];
        let (x, _, w, _) = f.kind.frame(SLOTS[i]);
        draw_furniture(&mut img, f.kind, canvas_x(scene, v, x, w, f.depth), mirror);
        for o in scene.objects.iter().filter(|o| o.furniture == i) {
            let (w, _) = o.shape.extent(o.size);
            let [ax, ay] = o.anchor;
            draw_object(&mut img, o, canvas_x(scene, v, ax, w, f.depth), ay, mirror);
        }
    }
    if scene.width == CANVAS as usize && scene.height == CANVAS as usize {
        img
    } else {
        img.resize(scene.width, scene.height)
    }
}
