//! Template grammar for fetching instructions and the brute-force checker
//! that decides whether a description picks out exactly one object.
//!
//! Sentence shape:
//!
//! ```text
//! <verb phrase> the [size] [color] <shape> [to the <left|right> of the <color> <shape>]
//!     <from|on> the [<upper|lower> part of the] <furniture>
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DatasetError, Result};
use crate::scene::{Color, FurnitureKind, Part, Scene, Shape, SizeClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Relation {
    pub side: Side,
    pub color: Color,
    pub shape: Shape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Descriptor {
    pub size: Option<SizeClass>,
    pub color: Option<Color>,
    pub shape: Shape,
    pub relation: Option<Relation>,
    pub source: FurnitureKind,
    pub part: Option<Part>,
}

/// Verb phrases with sampling weights. None of them contains "the".
pub const VERB_PHRASES: [(&str, f64); 7] = [
    ("bring me", 0.3),
    ("give me", 0.15),
    ("please bring me", 0.15),
    ("go get", 0.1),
    ("fetch", 0.1),
    ("could you bring me", 0.1),
    ("pick up", 0.1),
];

/// Chance of naming the color even when it is not needed.
const OVERSPECIFY_COLOR: f64 = 0.55;
/// Chance of naming the furniture part even when it is not needed.
const OVERSPECIFY_PART: f64 = 0.4;
/// Chance of adding a view-consistent left/right landmark even when it is not needed.
const OVERSPECIFY_RELATION: f64 = 0.15;

fn lookup<T: Copy>(all: &[T], word: &str, name: impl Fn(T) -> &'static str) -> Option<T> {
    all.iter().copied().find(|&t| name(t) == word)
}

fn size_of(word: &str) -> Option<SizeClass> {
    lookup(&[SizeClass::Small, SizeClass::Big], word, SizeClass::word)
}

fn color_of(word: &str) -> Option<Color> {
    lookup(&Color::ALL, word, Color::word)
}

fn shape_of(word: &str) -> Option<Shape> {
    lookup(&Shape::ALL, word, Shape::word)
}

fn kind_of(word: &str) -> Option<FurnitureKind> {
    lookup(&FurnitureKind::ALL, word, FurnitureKind::word)
}

impl Descriptor {
    pub fn render(&self, verb: &str, preposition: &str) -> String {
        let mut w: Vec<&str> = vec![verb, "the"];
        if let Some(s) = self.size {
            w.push(s.word());
        }
        if let Some(c) = self.color {
            w.push(c.word());
        }
        w.push(self.shape.word());
        if let Some(r) = self.relation {
            let side = if r.side == Side::Left { "left" } else { "right" };
            w.extend(["to", "the", side, "of", "the", r.color.word(), r.shape.word()]);
        }
        w.extend([preposition, "the"]);
        if let Some(p) = self.part.and_then(Part::word) {
            w.extend([p, "part", "of", "the"]);
        }
        w.push(self.source.word());
        w.join(" ")
    }

    /// Parses a tokenized instruction back into a descriptor.
    pub fn parse(tokens: &[String]) -> Result<Descriptor> {
        let err = |m: &str| DatasetError::Parse(format!("{m} in {:?}", tokens.join(" ")));
        let start = tokens.iter().position(|t| t == "the").ok_or_else(|| err("no determiner"))?;
        let mut it = tokens[start + 1..].iter().map(String::as_str).peekable();
        let expect = |it: &mut std::iter::Peekable<_>, word: &str| -> Result<()> {
            match Iterator::next(it) {
                Some(w) if w == word => Ok(()),
                _ => Err(err(&format!("expected {word:?}"))),
            }
        };
        let size = it.peek().and_then(|w| size_of(w));
        if size.is_some() {
            it.next();
        }
        let color = it.peek().and_then(|w| color_of(w));
        if color.is_some() {
            it.next();
        }
        let shape = it.next().and_then(shape_of).ok_or_else(|| err("expected a shape"))?;
        let mut relation = None;
        if it.peek() == Some(&"to") {
            it.next();
            expect(&mut it, "the")?;
            let side = match it.next() {
                Some("left") => Side::Left,
                Some("right") => Side::Right,
                _ => return Err(err("expected left or right")),
            };
            expect(&mut it, "of")?;
            expect(&mut it, "the")?;
            let color = it.next().and_then(color_of).ok_or_else(|| err("expected a landmark color"))?;
            let shape = it.next().and_then(shape_of).ok_or_else(|| err("expected a landmark shape"))?;
            relation = Some(Relation { side, color, shape });
        }
        match it.next() {
            Some("from") | Some("on") => {}
            _ => return Err(err("expected a source phrase")),
        }
        expect(&mut it, "the")?;
        let mut part = None;
        match it.peek().copied() {
            Some("upper") | Some("lower") => {
                part = Some(if it.next() == Some("upper") { Part::Upper } else { Part::Lower });
                expect(&mut it, "part")?;
                expect(&mut it, "of")?;
                expect(&mut it, "the")?;
            }
            _ => {}
        }
        let source = it.next().and_then(kind_of).ok_or_else(|| err("expected a furniture word"))?;
        if it.next().is_some() {
            return Err(err("trailing words"));
        }
        Ok(Descriptor { size, color, shape, relation, source, part })
    }
}

/// Index of the unique object with this color and shape, if there is one.
fn landmark(scene: &Scene, color: Color, shape: Shape) -> Option<usize> {
    let mut found = scene.objects.iter().enumerate().filter(|(_, o)| o.color == color && o.shape == shape);
    match (found.next(), found.next()) {
        (Some((i, _)), None) => Some(i),
        _ => None,
    }
}

/// Objects the descriptor matches in view `view`, by exhaustive scan.
pub fn matches_in_view(scene: &Scene, d: &Descriptor, view: usize) -> Vec<usize> {
    let lm = match d.relation {
        Some(r) => match landmark(scene, r.color, r.shape) {
            Some(i) => Some((i, r.side)),
            None => return Vec::new(),
        },
        None => None,
    };
    scene
        .objects
        .iter()
        .enumerate()
        .filter(|(i, o)| {
            let f = &scene.furniture[o.furniture];
            o.shape == d.shape
                && d.size.map_or(true, |s| s == o.size)
                && d.color.map_or(true, |c| c == o.color)
                && f.kind == d.source
                && d.part.map_or(true, |p| p == o.part)
                && lm.map_or(true, |(l, side)| {
                    let (a, b) = (o.boxes[view].center2(), scene.objects[l].boxes[view].center2());
                    *i != l && if side == Side::Left { a < b } else { a > b }
                })
        })
        .map(|(i, _)| i)
        .collect()
}

/// True when the descriptor picks out exactly `target` in every view.
pub fn identifies(scene: &Scene, d: &Descriptor, target: usize) -> bool {
    (0..scene.views.len()).all(|v| matches_in_view(scene, d, v) == [target])
}

/// Parses a tokenized reference and checks it against every view.
pub fn check_reference(scene: &Scene, tokens: &[String], target: usize) -> Result<bool> {
    Ok(identifies(scene, &Descriptor::parse(tokens)?, target))
}

/// True when `target` lies strictly on `side` of `landmark` in every view.
pub fn side_holds(scene: &Scene, target: usize, landmark: usize, side: Side) -> bool {
    (0..scene.views.len()).all(|v| {
        let (a, b) = (scene.objects[target].boxes[v].center2(), scene.objects[landmark].boxes[v].center2());
        if side == Side::Left { a < b } else { a > b }
    })
}

/// Builds a descriptor for `target`, adding qualifiers until it is unique
/// in all views. `color_anyway` and `part_anyway` name those attributes
/// even when they are not needed.
pub fn describe(scene: &Scene, target: usize, color_anyway: bool, part_anyway: bool) -> Result<Descriptor> {
    describe_with(scene, target, color_anyway, part_anyway, false)
}

/// Like [`describe`]; `relation_anyway` also adds a left/right landmark
/// whenever one holds in every view.
pub fn describe_with(
    scene: &Scene,
    target: usize,
    color_anyway: bool,
    part_anyway: bool,
    relation_anyway: bool,
) -> Result<Descriptor> {
    let o = &scene.objects[target];
    let kind = scene.furniture[o.furniture].kind;
    let mut d = Descriptor {
        size: None,
        color: color_anyway.then_some(o.color),
        shape: o.shape,
        relation: None,
        source: kind,
        part: (part_anyway && kind.has_parts()).then_some(o.part),
    };
    let count = |d: &Descriptor| matches_in_view(scene, d, 0).len();
    if kind.has_parts() && d.part.is_none() {
        let with = Descriptor { part: Some(o.part), ..d };
        if count(&with) < count(&d) {
            d = with;
        }
    }
    if d.color.is_none() {
        let with = Descriptor { color: Some(o.color), ..d };
        if count(&with) < count(&d) {
            d = with;
        }
    }
    let with = Descriptor { size: Some(o.size), ..d };
    if count(&with) < count(&d) {
        d = with;
    }
    let unique = identifies(scene, &d, target);
    if unique && !relation_anyway {
        return Ok(d);
    }
    for (l, lo) in scene.objects.iter().enumerate() {
        if l == target || landmark(scene, lo.color, lo.shape) != Some(l) {
            continue;
        }
        for side in [Side::Left, Side::Right] {
            if !side_holds(scene, target, l, side) {
                continue;
            }
            let with = Descriptor { relation: Some(Relation { side, color: lo.color, shape: lo.shape }), ..d };
            if identifies(scene, &with, target) {
                return Ok(with);
            }
        }
    }
    if unique {
        return Ok(d);
    }
    Err(DatasetError::Ambiguous { scene: scene.id, target })
}

fn weighted<'a, R: Rng>(rng: &mut R, items: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = items.iter().map(|p| p.1).sum();
    let mut x = rng.gen::<f64>() * total;
    for &(s, w) in items {
        if x < w {
            return s;
        }
        x -= w;
    }
    items[items.len() - 1].0
}

/// One fetching instruction for `target`. The style seed controls wording
/// and optional over-specification, never correctness.
pub fn generate_instruction(scene: &Scene, target: usize, style_seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(style_seed);
    let (color, part) = (rng.gen_bool(OVERSPECIFY_COLOR), rng.gen_bool(OVERSPECIFY_PART));
    let d = describe_with(scene, target, color, part, rng.gen_bool(OVERSPECIFY_RELATION))?;
    let verb = weighted(&mut rng, &VERB_PHRASES);
    let prep = if rng.gen_bool(0.6) { "from" } else { "on" };
    Ok(d.render(verb, prep))
}

/// Every word the grammar can emit.
pub fn grammar_words() -> Vec<&'static str> {
    let mut w: Vec<&str> = VERB_PHRASES.iter().flat_map(|p| p.0.split(' ')).collect();
    w.extend(["the", "to", "left", "right", "of", "from", "on", "upper", "lower", "part", "small", "big"]);
    w.extend(Color::ALL.iter().map(|c| c.word()));
    w.extend(Shape::ALL.iter().map(|s| s.word()));
    w.extend(FurnitureKind::ALL.iter().map(|k| k.word()));
    w.sort();
    w.dedup();
    w
}
