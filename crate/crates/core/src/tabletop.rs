//! Simulated tabletop rearrangement world.
//!
//! Blocks and bowls live on a square table. Poses are `(x, y, z)` in meters
//! where `z` is the bottom face of the object; an object resting on another
//! sits at the summed heights of everything beneath it. Support is explicit
//! (`rests_on`) and always forms linear chains: at most one object rests
//! directly on any other.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TABLE_HALF_EXTENT: f64 = 0.3;
pub const BLOCK_EDGE: f64 = 0.04;
pub const BOWL_RADIUS: f64 = 0.06;
pub const BOWL_HEIGHT: f64 = 0.02;
pub const MIN_SPACING: f64 = 0.15;
pub const SAMPLING_BUDGET: usize = 10_000;
/// Object centers are sampled inside this half-extent so bowls stay on the table.
pub const SPAWN_HALF_EXTENT: f64 = TABLE_HALF_EXTENT - BOWL_RADIUS;
/// Offset of the outer named-location anchors from the table center.
pub const LOCATION_OFFSET: f64 = 0.2;
pub const MAX_BLOCKS: usize = 4;
pub const MAX_BOWLS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("rejection sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("unknown task: {0}")]
    UnknownTask(String),
    #[error("invalid episode setup: {0}")]
    InvalidSetup(String),
    #[error("malformed snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
}

/// The fixed ten-color palette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue,
    Red,
    Green,
    Orange,
    Yellow,
    Purple,
    Pink,
    Cyan,
    Brown,
    Gray,
}

impl Color {
    pub const ALL: [Color; 10] = [
        Color::Blue,
        Color::Red,
        Color::Green,
        Color::Orange,
        Color::Yellow,
        Color::Purple,
        Color::Pink,
        Color::Cyan,
        Color::Brown,
        Color::Gray,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Red => "red",
            Color::Green => "green",
            Color::Orange => "orange",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Pink => "pink",
            Color::Cyan => "cyan",
            Color::Brown => "brown",
            Color::Gray => "gray",
        }
    }
}

impl FromStr for Color {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Color::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| WorldError::InvalidTarget(format!("unknown color `{s}`")))
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Block,
    Bowl,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Block => "block",
            ObjectKind::Bowl => "bowl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub color: Color,
    pub pose: [f64; 3],
    /// Block edge or bowl radius.
    pub size: f64,
    pub rests_on: Option<ObjectId>,
}

impl ObjectSpec {
    pub fn name(&self) -> String {
        format!("{} {}", self.color.name(), self.kind.name())
    }

    pub fn height(&self) -> f64 {
        match self.kind {
            ObjectKind::Block => self.size,
            ObjectKind::Bowl => BOWL_HEIGHT,
        }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.pose[0], self.pose[1]]
    }

    pub fn is_block(&self) -> bool {
        self.kind == ObjectKind::Block
    }
}

/// The nine named table locations on a 3x3 grid. "Top" is +y, "left" is -x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedLocation {
    TopLeftCorner,
    TopSide,
    TopRightCorner,
    LeftSide,
    Middle,
    RightSide,
    BottomLeftCorner,
    BottomSide,
    BottomRightCorner,
}

impl NamedLocation {
    pub const ALL: [NamedLocation; 9] = [
        NamedLocation::TopLeftCorner,
        NamedLocation::TopSide,
        NamedLocation::TopRightCorner,
        NamedLocation::LeftSide,
        NamedLocation::Middle,
        NamedLocation::RightSide,
        NamedLocation::BottomLeftCorner,
        NamedLocation::BottomSide,
        NamedLocation::BottomRightCorner,
    ];

    pub const CORNERS: [NamedLocation; 4] = [
        NamedLocation::TopLeftCorner,
        NamedLocation::TopRightCorner,
        NamedLocation::BottomLeftCorner,
        NamedLocation::BottomRightCorner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NamedLocation::TopLeftCorner => "top left corner",
            NamedLocation::TopSide => "top side",
            NamedLocation::TopRightCorner => "top right corner",
            NamedLocation::LeftSide => "left side",
            NamedLocation::Middle => "middle",
            NamedLocation::RightSide => "right side",
            NamedLocation::BottomLeftCorner => "bottom left corner",
            NamedLocation::BottomSide => "bottom side",
            NamedLocation::BottomRightCorner => "bottom right corner",
        }
    }

    pub fn anchor(self) -> [f64; 2] {
        let idx = NamedLocation::ALL.iter().position(|l| *l == self).unwrap();
        let col = (idx % 3) as f64 - 1.0;
        let row = (idx / 3) as f64 - 1.0;
        [col * LOCATION_OFFSET, -row * LOCATION_OFFSET]
    }

    /// Case-insensitive lookup, tolerating a leading "the ".
    pub fn parse(s: &str) -> Option<NamedLocation> {
        let s = s.trim().trim_end_matches('.');
        let s = strip_prefix_ci(s, "the ").unwrap_or(s).trim();
        NamedLocation::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for NamedLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len()
        && s.is_char_boundary(prefix.len())
        && s[..prefix.len()].eq_ignore_ascii_case(prefix)
    {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

/// Where a pick-and-place deposits the picked block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaceTarget {
    Object(ObjectId),
    Location(NamedLocation),
}

/// Reference to an object by kind and color, used in task parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub kind: ObjectKind,
    pub color: Color,
}

impl ObjectRef {
    pub fn block(color: Color) -> Self {
        Self {
            kind: ObjectKind::Block,
            color,
        }
    }

    pub fn bowl(color: Color) -> Self {
        Self {
            kind: ObjectKind::Bowl,
            color,
        }
    }

    pub fn name(&self) -> String {
        format!("{} {}", self.color.name(), self.kind.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    PickAndPlace,
    StackAll,
    AllOnLocation,
    AllInBowl,
    DifferentCorners,
    MatchingBowls,
    MismatchedBowls,
    StackOnLocation,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 8] = [
        TaskFamily::PickAndPlace,
        TaskFamily::StackAll,
        TaskFamily::AllOnLocation,
        TaskFamily::AllInBowl,
        TaskFamily::DifferentCorners,
        TaskFamily::MatchingBowls,
        TaskFamily::MismatchedBowls,
        TaskFamily::StackOnLocation,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TaskFamily::PickAndPlace => "pick-and-place",
            TaskFamily::StackAll => "stack-all",
            TaskFamily::AllOnLocation => "all-on-location",
            TaskFamily::AllInBowl => "all-in-bowl",
            TaskFamily::DifferentCorners => "different-corners",
            TaskFamily::MatchingBowls => "matching-bowls",
            TaskFamily::MismatchedBowls => "mismatched-bowls",
            TaskFamily::StackOnLocation => "stack-on-location",
        }
    }

    /// Default `(blocks, bowls)` used by the benchmark.
    pub fn default_counts(self) -> (usize, usize) {
        match self {
            TaskFamily::PickAndPlace => (3, 2),
            TaskFamily::StackAll => (3, 0),
            TaskFamily::AllOnLocation => (3, 1),
            TaskFamily::AllInBowl => (3, 2),
            TaskFamily::DifferentCorners => (3, 0),
            TaskFamily::MatchingBowls => (3, 3),
            TaskFamily::MismatchedBowls => (3, 3),
            TaskFamily::StackOnLocation => (3, 0),
        }
    }
}

impl FromStr for TaskFamily {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskFamily::ALL
            .into_iter()
            .find(|f| f.id() == s.trim())
            .ok_or_else(|| WorldError::UnknownTask(s.to_string()))
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// A concrete tabletop task: family plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TabletopTask {
    PickAndPlace { pick: Color, place: ObjectRef },
    StackAll,
    AllOnLocation(NamedLocation),
    AllInBowl(Color),
    DifferentCorners,
    MatchingBowls,
    MismatchedBowls,
    StackOnLocation(NamedLocation),
}

impl TabletopTask {
    pub fn family(&self) -> TaskFamily {
        match self {
            TabletopTask::PickAndPlace { .. } => TaskFamily::PickAndPlace,
            TabletopTask::StackAll => TaskFamily::StackAll,
            TabletopTask::AllOnLocation(_) => TaskFamily::AllOnLocation,
            TabletopTask::AllInBowl(_) => TaskFamily::AllInBowl,
            TabletopTask::DifferentCorners => TaskFamily::DifferentCorners,
            TabletopTask::MatchingBowls => TaskFamily::MatchingBowls,
            TabletopTask::MismatchedBowls => TaskFamily::MismatchedBowls,
            TabletopTask::StackOnLocation(_) => TaskFamily::StackOnLocation,
        }
    }

    pub fn instruction(&self) -> String {
        match self {
            TabletopTask::PickAndPlace { pick, place } => {
                format!(
                    "Pick up the {pick} block and place it on the {}.",
                    place.name()
                )
            }
            TabletopTask::StackAll => "Stack all the blocks.".to_string(),
            TabletopTask::AllOnLocation(loc) => format!("Put all the blocks on the {loc}."),
            TabletopTask::AllInBowl(c) => format!("Put all the blocks in the {c} bowl."),
            TabletopTask::DifferentCorners => {
                "Put all the blocks in different corners.".to_string()
            }
            TabletopTask::MatchingBowls => "Put the blocks in their matching bowls.".to_string(),
            TabletopTask::MismatchedBowls => "Put the blocks on mismatched bowls.".to_string(),
            TabletopTask::StackOnLocation(loc) => format!("Stack all the blocks on the {loc}."),
        }
    }

    /// Recognizes the instruction templates (and the "Move all (the) blocks to ..."
    /// phrasing) case-insensitively.
    pub fn parse_instruction(text: &str) -> Option<TabletopTask> {
        let t = text.trim().trim_end_matches('.').to_ascii_lowercase();
        let t = t.as_str();
        if t == "stack all the blocks" || t == "stack all blocks" {
            return Some(TabletopTask::StackAll);
        }
        if let Some(rest) = t.strip_prefix("stack all the blocks on ") {
            return NamedLocation::parse(rest).map(TabletopTask::StackOnLocation);
        }
        for prefix in [
            "put all the blocks on ",
            "move all the blocks to ",
            "move all blocks to ",
            "put all blocks on ",
        ] {
            if let Some(rest) = t.strip_prefix(prefix) {
                return NamedLocation::parse(rest).map(TabletopTask::AllOnLocation);
            }
        }
        if t == "put all the blocks in different corners" {
            return Some(TabletopTask::DifferentCorners);
        }
        if t == "put the blocks in their matching bowls" {
            return Some(TabletopTask::MatchingBowls);
        }
        if t == "put the blocks on mismatched bowls" {
            return Some(TabletopTask::MismatchedBowls);
        }
        if let Some(rest) = t.strip_prefix("put all the blocks in the ") {
            let color = rest.strip_suffix(" bowl")?;
            return color.parse().ok().map(TabletopTask::AllInBowl);
        }
        if let Some(rest) = t.strip_prefix("pick up the ") {
            let (pick, place) = rest.split_once(" and place it on the ")?;
            let pick = pick.strip_suffix(" block")?.parse().ok()?;
            let (color, kind) = place.rsplit_once(' ')?;
            let color = color.parse().ok()?;
            let place = match kind {
                "block" => ObjectRef::block(color),
                "bowl" => ObjectRef::bowl(color),
                _ => return None,
            };
            return Some(TabletopTask::PickAndPlace { pick, place });
        }
        None
    }

    fn required_colors(&self) -> (Vec<Color>, Vec<Color>) {
        match *self {
            TabletopTask::PickAndPlace { pick, place } => match place.kind {
                ObjectKind::Block => (vec![pick, place.color], vec![]),
                ObjectKind::Bowl => (vec![pick], vec![place.color]),
            },
            TabletopTask::AllInBowl(c) => (vec![], vec![c]),
            _ => (vec![], vec![]),
        }
    }
}

/// Place noise, optional grasp noise and the per-step disturbance rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-axis standard deviation of the planar place offset (meters).
    pub place_sigma: f64,
    /// Clip each axis of the place offset at this multiple of `place_sigma`.
    #[serde(default)]
    pub place_clip: Option<f64>,
    #[serde(default)]
    pub pick: Option<PickNoise>,
    pub disturbance_prob: f64,
    /// Stream id for the noise generator, independent of object sampling.
    #[serde(default = "default_noise_stream")]
    pub rng_stream: u64,
}

fn default_noise_stream() -> u64 {
    1
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            place_sigma: 0.02,
            place_clip: None,
            pick: None,
            disturbance_prob: 0.0,
            rng_stream: default_noise_stream(),
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            place_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.place_sigma >= 0.0) {
            return Err(WorldError::InvalidSetup("place_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.disturbance_prob) {
            return Err(WorldError::InvalidSetup(
                "disturbance_prob must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Generator for this noise stream, seeded from the episode seed.
    pub fn rng(&self, episode_seed: u64) -> ChaCha8Rng {
        stream_rng(episode_seed, self.rng_stream)
    }
}

/// Grasp-point noise: a planar offset whose magnitude is `|N(0, sigma)|`
/// capped at `cap * sigma`, in a uniformly random direction. A grasp whose
/// offset exceeds half the block edge misses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickNoise {
    pub sigma: f64,
    pub cap: f64,
}

/// Derives an independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabletopState {
    pub objects: Vec<ObjectSpec>,
    pub table_half_extent: f64,
    pub rng_seed: u64,
}

/// Result of one pick-and-place execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub state: TabletopState,
    /// Where the block was actually released (or would have been, on a missed grasp).
    pub place_point: [f64; 2],
    /// The intended target point before noise.
    pub intended_point: [f64; 2],
    pub grasped: bool,
}

pub fn planar_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl TabletopState {
    pub fn get(&self, id: ObjectId) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    fn get_mut(&mut self, id: ObjectId) -> Option<&mut ObjectSpec> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    /// Case-insensitive lookup by "<color> <kind>".
    pub fn find_by_name(&self, name: &str) -> Option<&ObjectSpec> {
        let name = name.trim();
        let name = strip_prefix_ci(name, "the ").unwrap_or(name).trim();
        self.objects
            .iter()
            .find(|o| o.name().eq_ignore_ascii_case(name))
    }

    pub fn find(&self, r: ObjectRef) -> Option<&ObjectSpec> {
        self.objects
            .iter()
            .find(|o| o.kind == r.kind && o.color == r.color)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(|o| o.is_block())
    }

    pub fn bowls(&self) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::Bowl)
    }

    pub fn names(&self) -> Vec<String> {
        self.objects.iter().map(ObjectSpec::name).collect()
    }

    /// The object resting directly on `id`, if any.
    pub fn supported_by(&self, id: ObjectId) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.rests_on == Some(id))
    }

    /// Topmost object of the chain containing `id` (walking upward).
    pub fn top_of_stack(&self, id: ObjectId) -> ObjectId {
        let mut cur = id;
        let mut guard = 0;
        while let Some(above) = self.supported_by(cur) {
            cur = above.id;
            guard += 1;
            if guard > self.objects.len() {
                break;
            }
        }
        cur
    }

    /// Objects below `id`, nearest first.
    pub fn support_chain(&self, id: ObjectId) -> Vec<ObjectId> {
        let mut out = Vec::new();
        let mut cur = self.get(id).and_then(|o| o.rests_on);
        while let Some(below) = cur {
            if out.contains(&below) || out.len() > self.objects.len() {
                break;
            }
            out.push(below);
            cur = self.get(below).and_then(|o| o.rests_on);
        }
        out
    }

    pub fn recompute_heights(&mut self) {
        let zs: Vec<(ObjectId, f64)> = self
            .objects
            .iter()
            .map(|o| {
                let z = self
                    .support_chain(o.id)
                    .iter()
                    .filter_map(|id| self.get(*id))
                    .map(ObjectSpec::height)
                    .sum();
                (o.id, z)
            })
            .collect();
        for (id, z) in zs {
            if let Some(o) = self.get_mut(id) {
                o.pose[2] = z;
            }
        }
    }

    /// Checks the structural invariants, returning a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let h = self.table_half_extent + 1e-12;
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(format!("duplicate id {}", o.id));
            }
            if o.pose[0].abs() > h || o.pose[1].abs() > h {
                return Err(format!("{} off the table", o.name()));
            }
            if o.pose[2] < 0.0 {
                return Err(format!("{} below the table", o.name()));
            }
        }
        for o in &self.objects {
            let mut seen = BTreeSet::from([o.id]);
            let mut cur = o.rests_on;
            let mut z = 0.0;
            while let Some(below) = cur {
                if !seen.insert(below) {
                    return Err(format!("support cycle through {}", o.name()));
                }
                let b = self
                    .get(below)
                    .ok_or_else(|| format!("dangling support {below}"))?;
                z += b.height();
                cur = b.rests_on;
            }
            if (o.pose[2] - z).abs() > 1e-9 {
                return Err(format!(
                    "{} at z={} but supported height is {z}",
                    o.name(),
                    o.pose[2]
                ));
            }
            let children = self
                .objects
                .iter()
                .filter(|c| c.rests_on == Some(o.id))
                .count();
            if children > 1 {
                return Err(format!("{} supports {children} objects", o.name()));
            }
        }
        Ok(())
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                min = min.min(planar_distance(a.xy(), b.xy()));
            }
        }
        min
    }

    fn target_point(&self, target: PlaceTarget) -> Option<[f64; 2]> {
        match target {
            PlaceTarget::Object(id) => self.get(id).map(ObjectSpec::xy),
            PlaceTarget::Location(loc) => Some(loc.anchor()),
        }
    }

    /// Serializes to the line-oriented replay snapshot format:
    ///
    /// ```text
    /// table_half_extent 0.3
    /// rng_seed 7
    /// object <id> <kind> <color> <x> <y> <z> <size> <rests_on|->
    /// ```
    pub fn to_snapshot(&self) -> String {
        let mut out = format!(
            "table_half_extent {}\nrng_seed {}\n",
            self.table_half_extent, self.rng_seed
        );
        for o in &self.objects {
            let support = o.rests_on.map_or("-".to_string(), |id| id.to_string());
            out.push_str(&format!(
                "object {} {} {} {} {} {} {} {}\n",
                o.id,
                o.kind.name(),
                o.color,
                o.pose[0],
                o.pose[1],
                o.pose[2],
                o.size,
                support
            ));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, WorldError> {
        let mut state = TabletopState {
            objects: Vec::new(),
            table_half_extent: TABLE_HALF_EXTENT,
            rng_seed: 0,
        };
        for (i, line) in text.lines().enumerate() {
            let err = |reason: &str| WorldError::Snapshot {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                [first, ..] if first.starts_with('#') => {}
                ["table_half_extent", v] => {
                    state.table_half_extent = v.parse().map_err(|_| err("bad extent"))?
                }
                ["rng_seed", v] => state.rng_seed = v.parse().map_err(|_| err("bad seed"))?,
                ["object", id, kind, color, x, y, z, size, support] => {
                    let kind = match *kind {
                        "block" => ObjectKind::Block,
                        "bowl" => ObjectKind::Bowl,
                        _ => return Err(err("bad kind")),
                    };
                    let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
                    state.objects.push(ObjectSpec {
                        id: ObjectId(id.parse().map_err(|_| err("bad id"))?),
                        kind,
                        color: color.parse().map_err(|_| err("bad color"))?,
                        pose: [num(x)?, num(y)?, num(z)?],
                        size: num(size)?,
                        rests_on: match *support {
                            "-" => None,
                            s => Some(ObjectId(s.parse().map_err(|_| err("bad support"))?)),
                        },
                    });
                }
                _ => return Err(err("unrecognized line")),
            }
        }
        Ok(state)
    }
}

fn pick_colors(
    rng: &mut ChaCha8Rng,
    n: usize,
    required: &[Color],
    pool: &[Color],
) -> Result<Vec<Color>, WorldError> {
    let mut out: Vec<Color> = Vec::with_capacity(n);
    for c in required {
        if !out.contains(c) {
            out.push(*c);
        }
    }
    if out.len() > n {
        return Err(WorldError::InvalidSetup(format!(
            "task needs {} distinct colors but only {n} objects requested",
            out.len()
        )));
    }
    let mut rest: Vec<Color> = pool.iter().copied().filter(|c| !out.contains(c)).collect();
    rest.shuffle(rng);
    if out.len() + rest.len() < n {
        return Err(WorldError::InvalidSetup("not enough colors".into()));
    }
    out.extend(rest.into_iter().take(n - out.len()));
    Ok(out)
}

fn sample_free_point(
    rng: &mut impl Rng,
    occupied: &[[f64; 2]],
    attempts: &mut usize,
) -> Option<[f64; 2]> {
    while *attempts < SAMPLING_BUDGET {
        *attempts += 1;
        let p = [
            rng.random_range(-SPAWN_HALF_EXTENT..=SPAWN_HALF_EXTENT),
            rng.random_range(-SPAWN_HALF_EXTENT..=SPAWN_HALF_EXTENT),
        ];
        if occupied
            .iter()
            .all(|q| planar_distance(p, *q) >= MIN_SPACING)
        {
            return Some(p);
        }
    }
    None
}

/// Samples an initial state for `task` with objects at least `MIN_SPACING` apart.
pub fn init_episode(
    task: &TabletopTask,
    n_blocks: usize,
    n_bowls: usize,
    seed: u64,
) -> Result<TabletopState, WorldError> {
    if n_blocks == 0 || n_blocks > MAX_BLOCKS {
        return Err(WorldError::InvalidSetup(format!(
            "n_blocks must be 1..={MAX_BLOCKS}"
        )));
    }
    if n_bowls > MAX_BOWLS {
        return Err(WorldError::InvalidSetup(format!(
            "n_bowls must be <= {MAX_BOWLS}"
        )));
    }
    match task.family() {
        TaskFamily::MatchingBowls if n_bowls < n_blocks => {
            return Err(WorldError::InvalidSetup(
                "matching bowls needs a bowl per block".into(),
            ))
        }
        TaskFamily::MismatchedBowls if n_bowls < 2 => {
            return Err(WorldError::InvalidSetup(
                "mismatched bowls needs two bowls".into(),
            ))
        }
        TaskFamily::AllInBowl if n_bowls == 0 => {
            return Err(WorldError::InvalidSetup("task references a bowl".into()))
        }
        _ => {}
    }
    let mut rng = stream_rng(seed, 0);
    let (req_blocks, req_bowls) = task.required_colors();
    let bowl_colors = pick_colors(&mut rng, n_bowls, &req_bowls, &Color::ALL)?;
    let block_colors = if task.family() == TaskFamily::MatchingBowls {
        pick_colors(&mut rng, n_blocks, &req_blocks, &bowl_colors)?
    } else {
        pick_colors(&mut rng, n_blocks, &req_blocks, &Color::ALL)?
    };

    let mut objects = Vec::with_capacity(n_blocks + n_bowls);
    let mut occupied = Vec::new();
    let mut attempts = 0;
    let specs = block_colors
        .iter()
        .map(|c| (ObjectKind::Block, *c))
        .chain(bowl_colors.iter().map(|c| (ObjectKind::Bowl, *c)));
    for (i, (kind, color)) in specs.enumerate() {
        let p = sample_free_point(&mut rng, &occupied, &mut attempts)
            .ok_or(WorldError::SamplingExhausted(SAMPLING_BUDGET))?;
        occupied.push(p);
        objects.push(ObjectSpec {
            id: ObjectId(i as u32),
            kind,
            color,
            pose: [p[0], p[1], 0.0],
            size: match kind {
                ObjectKind::Block => BLOCK_EDGE,
                ObjectKind::Bowl => BOWL_RADIUS,
            },
            rests_on: None,
        });
    }
    Ok(TabletopState {
        objects,
        table_half_extent: TABLE_HALF_EXTENT,
        rng_seed: seed,
    })
}

/// Draws task parameters for `family` from the episode's colors and locations,
/// then samples the matching initial state.
pub fn sample_episode(
    family: TaskFamily,
    n_blocks: usize,
    n_bowls: usize,
    seed: u64,
) -> Result<(TabletopTask, TabletopState), WorldError> {
    let mut rng = stream_rng(seed, 2);
    let task = match family {
        TaskFamily::PickAndPlace => {
            let colors = pick_colors(&mut rng, 2, &[], &Color::ALL)?;
            let place = if n_bowls > 0 && (n_blocks < 2 || rng.random_bool(0.5)) {
                ObjectRef::bowl(colors[1])
            } else if n_blocks >= 2 {
                ObjectRef::block(colors[1])
            } else {
                return Err(WorldError::InvalidSetup(
                    "pick-and-place needs a second object".into(),
                ));
            };
            TabletopTask::PickAndPlace {
                pick: colors[0],
                place,
            }
        }
        TaskFamily::StackAll => TabletopTask::StackAll,
        TaskFamily::AllOnLocation => {
            TabletopTask::AllOnLocation(NamedLocation::ALL[rng.random_range(0..9)])
        }
        TaskFamily::AllInBowl => {
            TabletopTask::AllInBowl(Color::ALL[rng.random_range(0..Color::ALL.len())])
        }
        TaskFamily::DifferentCorners => TabletopTask::DifferentCorners,
        TaskFamily::MatchingBowls => TabletopTask::MatchingBowls,
        TaskFamily::MismatchedBowls => TabletopTask::MismatchedBowls,
        TaskFamily::StackOnLocation => {
            TabletopTask::StackOnLocation(NamedLocation::ALL[rng.random_range(0..9)])
        }
    };
    let state = init_episode(&task, n_blocks, n_bowls, seed)?;
    Ok((task, state))
}

/// Three blocks, two of them already stacked; the tower's base is covered.
pub fn init_partial_tower(seed: u64) -> Result<TabletopState, WorldError> {
    let mut state = init_episode(&TabletopTask::StackAll, 3, 0, seed)?;
    let base = state.objects[0].clone();
    let top = &mut state.objects[1];
    top.pose[0] = base.pose[0];
    top.pose[1] = base.pose[1];
    top.rests_on = Some(base.id);
    state.recompute_heights();
    Ok(state)
}

/// Executes one pick-and-place.
///
/// Blocks resting on the picked block drop onto whatever supported it. The
/// released block lands at the target point plus planar Gaussian noise and,
/// for object targets, on top of the target's current stack.
pub fn execute_pick_place(
    state: &TabletopState,
    pick: ObjectId,
    place: PlaceTarget,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<Placement, WorldError> {
    let picked = state
        .get(pick)
        .ok_or_else(|| WorldError::InvalidTarget(format!("no object with id {pick}")))?;
    if !picked.is_block() {
        return Err(WorldError::InvalidTarget(format!(
            "cannot pick the {}",
            picked.name()
        )));
    }
    if place == PlaceTarget::Object(pick) {
        return Err(WorldError::InvalidTarget(
            "cannot place a block on itself".into(),
        ));
    }
    let intended = state
        .target_point(place)
        .ok_or_else(|| WorldError::InvalidTarget("place target does not exist".into()))?;

    let mut grasp_offset = [0.0, 0.0];
    if let Some(pn) = noise.pick {
        let mag = (rng.sample::<f64, _>(StandardNormal) * pn.sigma)
            .abs()
            .min(pn.cap * pn.sigma);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        if mag > picked.size / 2.0 {
            return Ok(Placement {
                state: state.clone(),
                place_point: intended,
                intended_point: intended,
                grasped: false,
            });
        }
        grasp_offset = [mag * angle.cos(), mag * angle.sin()];
    }
    let mut offset = [
        rng.sample::<f64, _>(StandardNormal) * noise.place_sigma,
        rng.sample::<f64, _>(StandardNormal) * noise.place_sigma,
    ];
    if let Some(clip) = noise.place_clip {
        let bound = clip * noise.place_sigma;
        offset = offset.map(|v| v.clamp(-bound, bound));
    }

    let mut next = state.clone();
    let former_support = picked.rests_on;
    for o in next.objects.iter_mut() {
        if o.rests_on == Some(pick) {
            o.rests_on = former_support;
        } else if o.id == pick {
            // detach first so the target's stack never ends at the picked block
            o.rests_on = None;
        }
    }
    let support = match place {
        PlaceTarget::Object(id) => Some(next.top_of_stack(id)),
        PlaceTarget::Location(_) => None,
    };
    let h = next.table_half_extent;
    let point = [
        (intended[0] + offset[0] + grasp_offset[0]).clamp(-h, h),
        (intended[1] + offset[1] + grasp_offset[1]).clamp(-h, h),
    ];
    let moved = next.get_mut(pick).expect("picked object exists");
    moved.pose[0] = point[0];
    moved.pose[1] = point[1];
    moved.rests_on = support;
    next.recompute_heights();
    Ok(Placement {
        state: next,
        place_point: point,
        intended_point: intended,
        grasped: true,
    })
}

/// Number of blocks in the chain ending at `top` (inclusive).
fn blocks_in_chain(state: &TabletopState, top: ObjectId) -> usize {
    let below = state
        .support_chain(top)
        .into_iter()
        .filter(|id| state.get(*id).is_some_and(ObjectSpec::is_block))
        .count();
    below + 1
}

/// With probability `disturbance_prob`, moves the topmost block of the tallest
/// stack (ties to the lowest id) to a free point on the table.
///
/// Always consumes one uniform draw so the stream stays aligned whether or not
/// the disturbance fires. Returns the moved block's id alongside the state.
pub fn apply_disturbance(
    state: &TabletopState,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> (TabletopState, Option<ObjectId>) {
    let roll: f64 = rng.random();
    if roll >= noise.disturbance_prob {
        return (state.clone(), None);
    }
    let victim = state
        .blocks()
        .filter(|b| state.supported_by(b.id).is_none())
        .map(|b| (blocks_in_chain(state, b.id), b.id))
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, id)| id);
    let Some(victim) = victim else {
        return (state.clone(), None);
    };
    let occupied: Vec<[f64; 2]> = state
        .objects
        .iter()
        .filter(|o| o.id != victim)
        .map(ObjectSpec::xy)
        .collect();
    let mut attempts = 0;
    let Some(p) = sample_free_point(rng, &occupied, &mut attempts) else {
        return (state.clone(), None);
    };
    let mut next = state.clone();
    let moved = next.get_mut(victim).expect("victim exists");
    moved.pose = [p[0], p[1], 0.0];
    moved.rests_on = None;
    next.recompute_heights();
    (next, Some(victim))
}

/// The on(top, target) predicate: planar distance below `radius` and, unless
/// the target is a table location, `top` strictly higher than the target.
pub fn is_on(state: &TabletopState, top: ObjectId, target: PlaceTarget, radius: f64) -> bool {
    let Some(t) = state.get(top) else {
        return false;
    };
    match target {
        PlaceTarget::Location(loc) => planar_distance(t.xy(), loc.anchor()) < radius,
        PlaceTarget::Object(id) => match state.get(id) {
            Some(b) => planar_distance(t.xy(), b.xy()) < radius && t.pose[2] > b.pose[2],
            None => false,
        },
    }
}

/// Location tolerance for "at location" goals; shares the success radius.
pub const LOCATION_TOLERANCE: f64 = 0.04;

fn stacked_in_one_chain(state: &TabletopState) -> Option<Vec<ObjectId>> {
    let mut blocks: Vec<&ObjectSpec> = state.blocks().collect();
    blocks.sort_by(|a, b| a.pose[2].total_cmp(&b.pose[2]).then(a.id.cmp(&b.id)));
    let ok = blocks.windows(2).all(|w| {
        is_on(
            state,
            w[1].id,
            PlaceTarget::Object(w[0].id),
            LOCATION_TOLERANCE,
        )
    });
    ok.then(|| blocks.iter().map(|b| b.id).collect())
}

/// Evaluates the binary reward for `task` against ground truth.
pub fn goal_satisfied(task: &TabletopTask, state: &TabletopState) -> Result<bool, WorldError> {
    let r = LOCATION_TOLERANCE;
    let unresolved =
        |what: String| WorldError::InvalidTarget(format!("{what} is not in the scene"));
    Ok(match *task {
        TabletopTask::PickAndPlace { pick, place } => {
            let top = state
                .find(ObjectRef::block(pick))
                .ok_or_else(|| unresolved(format!("{pick} block")))?;
            let base = state.find(place).ok_or_else(|| unresolved(place.name()))?;
            is_on(state, top.id, PlaceTarget::Object(base.id), r)
        }
        TabletopTask::StackAll => stacked_in_one_chain(state).is_some(),
        TabletopTask::AllOnLocation(loc) => state
            .blocks()
            .all(|b| is_on(state, b.id, PlaceTarget::Location(loc), r)),
        TabletopTask::AllInBowl(color) => {
            let bowl = state
                .find(ObjectRef::bowl(color))
                .ok_or_else(|| unresolved(format!("{color} bowl")))?;
            state
                .blocks()
                .all(|b| is_on(state, b.id, PlaceTarget::Object(bowl.id), r))
        }
        TabletopTask::DifferentCorners => {
            let mut used = BTreeSet::new();
            state.blocks().all(|b| {
                NamedLocation::CORNERS
                    .into_iter()
                    .find(|c| is_on(state, b.id, PlaceTarget::Location(*c), r))
                    .is_some_and(|c| used.insert(c))
            })
        }
        TabletopTask::MatchingBowls => state.blocks().all(|b| {
            state
                .find(ObjectRef::bowl(b.color))
                .is_some_and(|bowl| is_on(state, b.id, PlaceTarget::Object(bowl.id), r))
        }),
        TabletopTask::MismatchedBowls => state.blocks().all(|b| {
            state
                .bowls()
                .filter(|bowl| bowl.color != b.color)
                .any(|bowl| is_on(state, b.id, PlaceTarget::Object(bowl.id), r))
        }),
        TabletopTask::StackOnLocation(loc) => match stacked_in_one_chain(state) {
            Some(chain) => is_on(state, chain[0], PlaceTarget::Location(loc), r),
            None => false,
        },
    })
}
