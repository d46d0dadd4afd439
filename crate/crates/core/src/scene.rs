//! Synthetic scene environment.
//!
//! A `Scene` is a small symbolic image: colored, sized shapes on a grid.
//! Because the scene is symbolic, the complete set of verifiable visual
//! facts is enumerable, which makes every downstream fidelity check exact.
//! The module also synthesizes questions with gold answers derived from the
//! fact set alone, and renders a structured caption (the pseudo ground
//! truth) that round-trips back into the exact fact set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

pub const SHAPES: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];
pub const COLORS: [Color; 3] = [Color::Red, Color::Blue, Color::Green];
pub const SIZES: [Size; 2] = [Size::Small, Size::Large];

impl Shape {
    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

impl Color {
    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
        }
    }

    /// Next color in the fixed cycle; used by the caption noise knob.
    pub fn cycled(self) -> Color {
        match self {
            Color::Red => Color::Blue,
            Color::Blue => Color::Green,
            Color::Green => Color::Red,
        }
    }
}

impl Size {
    pub fn word(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }
}

/// Which attribute slot of an object a value or question refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Shape,
    Color,
    Size,
}

impl AttributeKind {
    pub fn word(self) -> &'static str {
        match self {
            AttributeKind::Shape => "shape",
            AttributeKind::Color => "color",
            AttributeKind::Size => "size",
        }
    }
}

/// A concrete attribute value of any kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeValue {
    Shape(Shape),
    Color(Color),
    Size(Size),
}

impl AttributeValue {
    pub fn kind(self) -> AttributeKind {
        match self {
            AttributeValue::Shape(_) => AttributeKind::Shape,
            AttributeValue::Color(_) => AttributeKind::Color,
            AttributeValue::Size(_) => AttributeKind::Size,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            AttributeValue::Shape(s) => s.word(),
            AttributeValue::Color(c) => c.word(),
            AttributeValue::Size(z) => z.word(),
        }
    }

    /// All eight attribute values in canonical order.
    pub fn all() -> Vec<AttributeValue> {
        let mut v = Vec::with_capacity(8);
        v.extend(SHAPES.iter().map(|&s| AttributeValue::Shape(s)));
        v.extend(COLORS.iter().map(|&c| AttributeValue::Color(c)));
        v.extend(SIZES.iter().map(|&z| AttributeValue::Size(z)));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Object {
    pub obj_id: u8,
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    /// (row, col) grid coordinates.
    pub position: (u8, u8),
}

impl Object {
    pub fn attribute(&self, kind: AttributeKind) -> AttributeValue {
        match kind {
            AttributeKind::Shape => AttributeValue::Shape(self.shape),
            AttributeKind::Color => AttributeValue::Color(self.color),
            AttributeKind::Size => AttributeValue::Size(self.size),
        }
    }

    #[cfg(test)]
    fn matches(&self, attr: AttributeValue) -> bool {
        match attr {
            AttributeValue::Shape(s) => self.shape == s,
            AttributeValue::Color(c) => self.color == c,
            AttributeValue::Size(z) => self.size == z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub objects: Vec<Object>,
    pub grid_size: u8,
}

/// Scene generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub grid_size: u8,
    pub max_objects: u8,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { grid_size: 4, max_objects: 8 }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_objects < 1 {
            return Err(Error::Config("max_objects must be >= 1".into()));
        }
        if self.grid_size < 1 {
            return Err(Error::Config("grid_size must be >= 1".into()));
        }
        let cells = (self.grid_size as usize) * (self.grid_size as usize);
        if cells < self.max_objects as usize {
            return Err(Error::Config(format!(
                "grid {}x{} cannot hold up to {} objects",
                self.grid_size, self.grid_size, self.max_objects
            )));
        }
        Ok(())
    }
}

/// Generate a scene as a pure function of (seed, config).
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=cfg.max_objects);
    let mut cells: Vec<(u8, u8)> = (0..cfg.grid_size)
        .flat_map(|r| (0..cfg.grid_size).map(move |c| (r, c)))
        .collect();
    cells.shuffle(&mut rng);
    let objects = (0..n)
        .map(|i| Object {
            obj_id: i,
            shape: SHAPES[rng.gen_range(0..SHAPES.len())],
            color: COLORS[rng.gen_range(0..COLORS.len())],
            size: SIZES[rng.gen_range(0..SIZES.len())],
            position: cells[i as usize],
        })
        .collect();
    Ok(Scene { scene_id: format!("sc{seed:016x}"), objects, grid_size: cfg.grid_size })
}

// ---------------------------------------------------------------------------
// Facts
// ---------------------------------------------------------------------------

/// A verifiable visual fact. The same schema doubles as the claim schema,
/// so checking a claim against the fact set is an exact lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum Fact {
    CountByAttribute { attr: AttributeValue, count: u8 },
    HasObject { shape: Shape, color: Color, size: Size, present: bool },
    AttributeOf { obj_id: u8, value: AttributeValue },
    LeftOf { a: u8, b: u8, holds: bool },
    Above { a: u8, b: u8, holds: bool },
}

/// Predicate instance identity: a fact's key minus its value. Two facts with
/// the same key but different values contradict each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FactKey {
    Count(AttributeValue),
    Has(Shape, Color, Size),
    AttributeOf(u8, AttributeKind),
    LeftOf(u8, u8),
    Above(u8, u8),
}

/// A fact's value, detached from its key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactValue {
    Count(u8),
    Bool(bool),
    Attribute(AttributeValue),
}

impl Fact {
    pub fn key(&self) -> FactKey {
        match *self {
            Fact::CountByAttribute { attr, .. } => FactKey::Count(attr),
            Fact::HasObject { shape, color, size, .. } => FactKey::Has(shape, color, size),
            Fact::AttributeOf { obj_id, value } => FactKey::AttributeOf(obj_id, value.kind()),
            Fact::LeftOf { a, b, .. } => FactKey::LeftOf(a, b),
            Fact::Above { a, b, .. } => FactKey::Above(a, b),
        }
    }

    pub fn value(&self) -> FactValue {
        match *self {
            Fact::CountByAttribute { count, .. } => FactValue::Count(count),
            Fact::HasObject { present, .. } => FactValue::Bool(present),
            Fact::AttributeOf { value, .. } => FactValue::Attribute(value),
            Fact::LeftOf { holds, .. } => FactValue::Bool(holds),
            Fact::Above { holds, .. } => FactValue::Bool(holds),
        }
    }

    /// Compact single-token text form, used when decoding trajectories.
    pub fn claim_text(&self) -> String {
        fn yn(b: bool) -> &'static str {
            if b {
                "yes"
            } else {
                "no"
            }
        }
        match *self {
            Fact::CountByAttribute { attr, count } => format!("count({})={count}", attr.word()),
            Fact::HasObject { shape, color, size, present } => {
                format!("has({} {} {})={}", size.word(), color.word(), shape.word(), yn(present))
            }
            Fact::AttributeOf { obj_id, value } => {
                format!("{}({obj_id})={}", value.kind().word(), value.word())
            }
            Fact::LeftOf { a, b, holds } => format!("left_of({a},{b})={}", yn(holds)),
            Fact::Above { a, b, holds } => format!("above({a},{b})={}", yn(holds)),
        }
    }
}

pub type FactSet = BTreeSet<Fact>;

/// Enumerate the complete fact set of a scene: one fact per instantiable
/// predicate instance, including zero counts and false relations.
pub fn enumerate_facts(scene: &Scene) -> FactSet {
    let mut facts = FactSet::new();

    let mut counts: BTreeMap<AttributeValue, u8> =
        AttributeValue::all().into_iter().map(|a| (a, 0)).collect();
    for obj in &scene.objects {
        for kind in [AttributeKind::Shape, AttributeKind::Color, AttributeKind::Size] {
            *counts.get_mut(&obj.attribute(kind)).expect("closed vocabulary") += 1;
        }
    }
    for (attr, count) in counts {
        facts.insert(Fact::CountByAttribute { attr, count });
    }

    for &shape in &SHAPES {
        for &color in &COLORS {
            for &size in &SIZES {
                let present = scene
                    .objects
                    .iter()
                    .any(|o| o.shape == shape && o.color == color && o.size == size);
                facts.insert(Fact::HasObject { shape, color, size, present });
            }
        }
    }

    for obj in &scene.objects {
        for kind in [AttributeKind::Shape, AttributeKind::Color, AttributeKind::Size] {
            facts.insert(Fact::AttributeOf { obj_id: obj.obj_id, value: obj.attribute(kind) });
        }
    }

    for a in &scene.objects {
        for b in &scene.objects {
            if a.obj_id == b.obj_id {
                continue;
            }
            facts.insert(Fact::LeftOf {
                a: a.obj_id,
                b: b.obj_id,
                holds: a.position.1 < b.position.1,
            });
            facts.insert(Fact::Above {
                a: a.obj_id,
                b: b.obj_id,
                holds: a.position.0 < b.position.0,
            });
        }
    }

    facts
}

/// Closed-form size of the complete fact set for `n` objects.
pub fn expected_fact_count(n: usize) -> usize {
    8 + 18 + 3 * n + 2 * n * (n.saturating_sub(1))
}

// ---------------------------------------------------------------------------
// Questions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionTemplate {
    Count,
    AttributeLookup,
    Comparison,
    Relation,
}

pub const TEMPLATES: [QuestionTemplate; 4] = [
    QuestionTemplate::Count,
    QuestionTemplate::AttributeLookup,
    QuestionTemplate::Comparison,
    QuestionTemplate::Relation,
];

impl QuestionTemplate {
    pub fn word(self) -> &'static str {
        match self {
            QuestionTemplate::Count => "count",
            QuestionTemplate::AttributeLookup => "attribute_lookup",
            QuestionTemplate::Comparison => "comparison",
            QuestionTemplate::Relation => "relation",
        }
    }

    /// Stable index into the policy context schema.
    pub fn index(self) -> usize {
        match self {
            QuestionTemplate::Count => 0,
            QuestionTemplate::AttributeLookup => 1,
            QuestionTemplate::Comparison => 2,
            QuestionTemplate::Relation => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    LeftOf,
    Above,
}

impl RelationKind {
    pub fn phrase(self) -> &'static str {
        match self {
            RelationKind::LeftOf => "left of",
            RelationKind::Above => "above",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionParams {
    Count { attr: AttributeValue },
    AttributeLookup { obj_id: u8, attribute: AttributeKind },
    Comparison { left: AttributeValue, right: AttributeValue },
    Relation { relation: RelationKind, a: u8, b: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub template_id: QuestionTemplate,
    pub params: QuestionParams,
    pub gold_answer: String,
}

impl Question {
    /// Deterministic natural-language rendering, used in judge prompts.
    pub fn text(&self) -> String {
        match &self.params {
            QuestionParams::Count { attr } => {
                format!("How many {} objects are in the scene?", attr.word())
            }
            QuestionParams::AttributeLookup { obj_id, attribute } => {
                format!("What is the {} of object {obj_id}?", attribute.word())
            }
            QuestionParams::Comparison { left, right } => {
                format!("Are there more {} objects than {} objects?", left.word(), right.word())
            }
            QuestionParams::Relation { relation, a, b } => {
                format!("Is object {a} {} object {b}?", relation.phrase())
            }
        }
    }
}

fn fact_lookup(facts: &FactSet, key: FactKey) -> Option<FactValue> {
    facts.iter().find(|f| f.key() == key).map(|f| f.value())
}

fn yes_no(b: bool) -> String {
    if b {
        "yes".into()
    } else {
        "no".into()
    }
}

/// Instantiate a question template on a scene. The gold answer is computed
/// from `enumerate_facts(scene)` alone, never from the raw objects.
pub fn generate_question(
    scene: &Scene,
    template: QuestionTemplate,
    seed: u64,
) -> Result<Question> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let facts = enumerate_facts(scene);
    let n = scene.objects.len() as u8;
    let skip = |reason: &str| Error::TemplateSkip {
        template: template.word().into(),
        reason: reason.into(),
    };

    let (params, gold_answer) = match template {
        QuestionTemplate::Count => {
            let all = AttributeValue::all();
            let attr = all[rng.gen_range(0..all.len())];
            let count = match fact_lookup(&facts, FactKey::Count(attr)) {
                Some(FactValue::Count(c)) => c,
                _ => unreachable!("count facts are always enumerated"),
            };
            (QuestionParams::Count { attr }, count.to_string())
        }
        QuestionTemplate::AttributeLookup => {
            if n == 0 {
                return Err(skip("needs at least one object"));
            }
            let obj_id = rng.gen_range(0..n);
            let kinds = [AttributeKind::Shape, AttributeKind::Color, AttributeKind::Size];
            let attribute = kinds[rng.gen_range(0..kinds.len())];
            let value = match fact_lookup(&facts, FactKey::AttributeOf(obj_id, attribute)) {
                Some(FactValue::Attribute(v)) => v,
                _ => unreachable!("attribute facts cover every object"),
            };
            (QuestionParams::AttributeLookup { obj_id, attribute }, value.word().to_string())
        }
        QuestionTemplate::Comparison => {
            // Two distinct values of the same attribute kind.
            let pools: [&[AttributeValue]; 2] = [
                &[
                    AttributeValue::Shape(SHAPES[0]),
                    AttributeValue::Shape(SHAPES[1]),
                    AttributeValue::Shape(SHAPES[2]),
                ],
                &[
                    AttributeValue::Color(COLORS[0]),
                    AttributeValue::Color(COLORS[1]),
                    AttributeValue::Color(COLORS[2]),
                ],
            ];
            let pool = pools[rng.gen_range(0..pools.len())];
            let left = pool[rng.gen_range(0..pool.len())];
            let right = loop {
                let r = pool[rng.gen_range(0..pool.len())];
                if r != left {
                    break r;
                }
            };
            let count_of = |attr| match fact_lookup(&facts, FactKey::Count(attr)) {
                Some(FactValue::Count(c)) => c,
                _ => unreachable!(),
            };
            let gold = yes_no(count_of(left) > count_of(right));
            (QuestionParams::Comparison { left, right }, gold)
        }
        QuestionTemplate::Relation => {
            if n < 2 {
                return Err(skip("needs at least two objects"));
            }
            let a = rng.gen_range(0..n);
            let b = loop {
                let x = rng.gen_range(0..n);
                if x != a {
                    break x;
                }
            };
            let relation =
                if rng.gen_bool(0.5) { RelationKind::LeftOf } else { RelationKind::Above };
            let key = match relation {
                RelationKind::LeftOf => FactKey::LeftOf(a, b),
                RelationKind::Above => FactKey::Above(a, b),
            };
            let gold = match fact_lookup(&facts, key) {
                Some(FactValue::Bool(h)) => yes_no(h),
                _ => unreachable!("relation facts cover every ordered pair"),
            };
            (QuestionParams::Relation { relation, a, b }, gold)
        }
    };

    Ok(Question { template_id: template, params, gold_answer })
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub scene: Scene,
    pub question: Question,
    pub domain_tag: String,
}

// ---------------------------------------------------------------------------
// Structured captions (pseudo ground truth)
// ---------------------------------------------------------------------------

/// Textual enumeration of a scene's content, one fact per line. Object lines
/// carry all attributes; relation lines list the true spatial facts. Parsing
/// a caption reconstructs the exact fact set of the scene it describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredCaption {
    pub text: String,
}

impl fmt::Display for StructuredCaption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Render the canonical caption: object lines by ascending id, then all true
/// relation facts sorted lexicographically.
pub fn render_pseudo_gt(scene: &Scene) -> StructuredCaption {
    let mut lines: Vec<String> = Vec::new();
    for obj in &scene.objects {
        lines.push(format!(
            "object {}: {} {} {} at ({},{})",
            obj.obj_id,
            obj.size.word(),
            obj.color.word(),
            obj.shape.word(),
            obj.position.0,
            obj.position.1
        ));
    }
    let mut relations: Vec<String> = Vec::new();
    for fact in enumerate_facts(scene) {
        match fact {
            Fact::LeftOf { a, b, holds: true } => {
                relations.push(format!("object {a} is left of object {b}"));
            }
            Fact::Above { a, b, holds: true } => {
                relations.push(format!("object {a} is above object {b}"));
            }
            _ => {}
        }
    }
    relations.sort();
    lines.extend(relations);
    StructuredCaption { text: lines.join("\n") }
}

/// Parse a structured caption back into a complete fact set.
///
/// Object lines define the object roster; the derived facts (counts,
/// presence, attributes) are recomputed from them. Relation lines assert the
/// true relations; every unlisted ordered pair is reconstructed as false.
pub fn parse_caption(text: &str) -> Result<FactSet> {
    let mut objects: Vec<Object> = Vec::new();
    let mut true_relations: BTreeSet<(RelationKind, u8, u8)> = BTreeSet::new();

    fn parse_shape(w: &str) -> Option<Shape> {
        SHAPES.iter().copied().find(|s| s.word() == w)
    }
    fn parse_color(w: &str) -> Option<Color> {
        COLORS.iter().copied().find(|c| c.word() == w)
    }
    fn parse_size(w: &str) -> Option<Size> {
        SIZES.iter().copied().find(|z| z.word() == w)
    }

    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Caption(format!("line {}: {what}: {line:?}", ln + 1));

        if let Some(rest) = line.strip_prefix("object ") {
            if let Some((a_str, tail)) = rest.split_once(" is left of object ") {
                let a = a_str.parse::<u8>().map_err(|_| bad("bad object id"))?;
                let b = tail.parse::<u8>().map_err(|_| bad("bad object id"))?;
                true_relations.insert((RelationKind::LeftOf, a, b));
                continue;
            }
            if let Some((a_str, tail)) = rest.split_once(" is above object ") {
                let a = a_str.parse::<u8>().map_err(|_| bad("bad object id"))?;
                let b = tail.parse::<u8>().map_err(|_| bad("bad object id"))?;
                true_relations.insert((RelationKind::Above, a, b));
                continue;
            }
            let (id_str, attrs) = rest.split_once(": ").ok_or_else(|| bad("missing colon"))?;
            let obj_id = id_str.parse::<u8>().map_err(|_| bad("bad object id"))?;
            let words: Vec<&str> = attrs.split_whitespace().collect();
            if words.len() < 3 {
                return Err(bad("too few attribute words"));
            }
            let size = parse_size(words[0]).ok_or_else(|| bad("unknown size"))?;
            let color = parse_color(words[1]).ok_or_else(|| bad("unknown color"))?;
            let shape = parse_shape(words[2]).ok_or_else(|| bad("unknown shape"))?;
            // Position garnish ("at (r,c)") is accepted but not needed: the
            // relation lines carry the spatial truth.
            if objects.iter().any(|o| o.obj_id == obj_id) {
                return Err(bad("duplicate object id"));
            }
            objects.push(Object { obj_id, shape, color, size, position: (0, 0) });
        } else {
            return Err(bad("unrecognized line"));
        }
    }

    let ids: BTreeSet<u8> = objects.iter().map(|o| o.obj_id).collect();
    for &(_, a, b) in &true_relations {
        if !ids.contains(&a) || !ids.contains(&b) {
            return Err(Error::Caption(format!(
                "relation references unknown object ({a},{b})"
            )));
        }
    }

    let mut facts = FactSet::new();

    let mut counts: BTreeMap<AttributeValue, u8> =
        AttributeValue::all().into_iter().map(|a| (a, 0)).collect();
    for obj in &objects {
        for kind in [AttributeKind::Shape, AttributeKind::Color, AttributeKind::Size] {
            *counts.get_mut(&obj.attribute(kind)).expect("closed vocabulary") += 1;
        }
    }
    for (attr, count) in counts {
        facts.insert(Fact::CountByAttribute { attr, count });
    }
    for &shape in &SHAPES {
        for &color in &COLORS {
            for &size in &SIZES {
                let present = objects
                    .iter()
                    .any(|o| o.shape == shape && o.color == color && o.size == size);
                facts.insert(Fact::HasObject { shape, color, size, present });
            }
        }
    }
    for obj in &objects {
        for kind in [AttributeKind::Shape, AttributeKind::Color, AttributeKind::Size] {
            facts.insert(Fact::AttributeOf { obj_id: obj.obj_id, value: obj.attribute(kind) });
        }
    }
    for &a in &ids {
        for &b in &ids {
            if a == b {
                continue;
            }
            facts.insert(Fact::LeftOf {
                a,
                b,
                holds: true_relations.contains(&(RelationKind::LeftOf, a, b)),
            });
            facts.insert(Fact::Above {
                a,
                b,
                holds: true_relations.contains(&(RelationKind::Above, a, b)),
            });
        }
    }

    Ok(facts)
}
