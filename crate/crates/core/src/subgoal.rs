//! Subgoals, decomposition of demonstrations into subgoal sequences, and the
//! transition / segment-head datasets built from them.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::action::Action;
use crate::env::Instruction;
use crate::inventory::{render_map, Inventory};
use crate::rng::SimRng;
use crate::tasks::TrajectoryRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubgoalError {
    #[error("a subgoal needs at least one threshold")]
    Empty,
    #[error("threshold for `{0}` must be at least 1")]
    ZeroThreshold(String),
    #[error("trajectory contains no state-changing craft")]
    NoCrafts,
    #[error("remap fraction {0} is outside [0, 1]")]
    BadFraction(f64),
}

/// Item thresholds; achieved when the inventory holds at least every count.
///
/// Keys keep their insertion order for rendering. Equality ignores order.
#[derive(Debug, Clone, Eq)]
pub struct Subgoal {
    thresholds: Vec<(String, u32)>,
}

impl Subgoal {
    /// Builds a subgoal; a repeated item keeps its last threshold.
    pub fn new<I, S>(pairs: I) -> Result<Self, SubgoalError>
    where
        I: IntoIterator<Item = (S, u32)>,
        S: Into<String>,
    {
        let mut thresholds: Vec<(String, u32)> = Vec::new();
        for (item, q) in pairs {
            let item = item.into();
            if q == 0 {
                return Err(SubgoalError::ZeroThreshold(item));
            }
            match thresholds.iter_mut().find(|(k, _)| *k == item) {
                Some(slot) => slot.1 = q,
                None => thresholds.push((item, q)),
            }
        }
        if thresholds.is_empty() {
            return Err(SubgoalError::Empty);
        }
        Ok(Subgoal { thresholds })
    }

    pub fn single(item: impl Into<String>, qty: u32) -> Self {
        Subgoal {
            thresholds: alloc::vec![(item.into(), qty.max(1))],
        }
    }

    /// Every held item of a non-empty inventory becomes a threshold.
    pub fn from_inventory(inv: &Inventory) -> Result<Self, SubgoalError> {
        Self::new(inv.iter())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> + '_ {
        self.thresholds.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn get(&self, item: &str) -> Option<u32> {
        self.thresholds
            .iter()
            .find(|(k, _)| k == item)
            .map(|(_, v)| *v)
    }

    /// Items and thresholds sorted by item name.
    pub fn canonical(&self) -> Vec<(&str, u32)> {
        let mut v: Vec<(&str, u32)> = self.iter().collect();
        v.sort_unstable();
        v
    }

    pub fn render(&self) -> String {
        render_map(self.iter())
    }

    /// Thresholds still unmet in `s`, as `(item, missing)`.
    pub fn deficits<'a>(&'a self, s: &'a Inventory) -> impl Iterator<Item = (&'a str, u32)> + 'a {
        self.iter()
            .filter_map(move |(k, q)| q.checked_sub(s.count(k)).filter(|d| *d > 0).map(|d| (k, d)))
    }
}

impl PartialEq for Subgoal {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().all(|(k, v)| other.get(k) == Some(v))
    }
}

impl fmt::Display for Subgoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Completion test: every threshold is met.
pub fn subgoal_achieved(s: &Inventory, g: &Subgoal) -> bool {
    s.satisfies(g.iter())
}

/// Every threshold set to 1.
pub fn strip_quantities(g: &Subgoal) -> Subgoal {
    Subgoal {
        thresholds: g.thresholds.iter().map(|(k, _)| (k.clone(), 1)).collect(),
    }
}

// ---------------------------------------------------------------------------
// decomposition program

enum Line {
    Craft {
        out_qty: u64,
        out_item: String,
        ingredients: Vec<(u64, String)>,
    },
    Get {
        item: String,
    },
}

fn is_item_char(c: char) -> bool {
    c.is_ascii_lowercase() || c == ' '
}

/// `^(\d+)\s+(rest)` where rest is returned unparsed.
fn leading_number(s: &str) -> Option<(u64, &str)> {
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let (num, rest) = s.split_at(digits);
    let trimmed = rest.trim_start();
    if trimmed.len() == rest.len() {
        return None;
    }
    let n = num.bytes().fold(0u64, |acc, b| {
        acc.saturating_mul(10).saturating_add(u64::from(b - b'0'))
    });
    Some((n, trimmed))
}

/// `^(\d+)\s+([a-z ]+?)$`
fn qty_item(s: &str) -> Option<(u64, String)> {
    let (n, rest) = leading_number(s)?;
    if rest.is_empty() || !rest.chars().all(is_item_char) {
        return None;
    }
    Some((n, rest.trim().to_string()))
}

fn parse_ingredients(txt: &str) -> Vec<(u64, String)> {
    txt.split(',')
        .filter_map(|p| {
            let p = p.trim();
            qty_item(p).or_else(|| qty_item(p.trim_end_matches(['.', ',', ';', ':'])))
        })
        .collect()
}

/// The lenient line parser of the decomposition program.
fn parse_line(line: &str) -> Option<Line> {
    let mut line = line.trim();
    if let Some(i) = line.find(", {") {
        line = line[..i].trim();
    }
    if let Some(rest) = line.strip_prefix("craft") {
        let (out_qty, rest) = leading_number(
            rest.strip_prefix(char::is_whitespace)
                .map(|_| rest.trim_start())?,
        )?;
        // shortest [a-z ]+ prefix followed by \s+using\s+.+
        for (i, c) in rest.char_indices() {
            if !is_item_char(c) {
                break;
            }
            let end = i + c.len_utf8();
            let tail = &rest[end..];
            let after_ws = tail.trim_start();
            if after_ws.len() == tail.len() {
                continue;
            }
            if let Some(after) = after_ws.strip_prefix("using") {
                let body = after.trim_start();
                if body.len() < after.len() && !body.is_empty() {
                    let ingredients = parse_ingredients(body.trim().trim_end_matches('.'));
                    return Some(Line::Craft {
                        out_qty,
                        out_item: rest[..end].trim().to_string(),
                        ingredients,
                    });
                }
            }
        }
    }
    if let Some(rest) = line.strip_prefix("get") {
        if rest.starts_with(char::is_whitespace) {
            let (_, item) = qty_item(rest.trim_start())?;
            return Some(Line::Get { item });
        }
    }
    None
}

type RecipeTable = BTreeMap<String, (u64, Vec<(u64, String)>)>;

/// Requirement propagation from `(goal, 1)` and Kahn ordering, returning the
/// non-goal items with their accumulated requirement in topological order.
/// `rank` breaks ties by first appearance. `goal` must have a recipe.
fn propagate(goal: &str, recipes: &RecipeTable, rank: &[String]) -> Vec<(String, u64)> {
    // Cyclic recipe sets never drain the frontier; bound the expansions.
    const MAX_EXPANSIONS: usize = 1 << 16;
    let rank_of = |item: &str| rank.iter().position(|r| r == item).unwrap_or(usize::MAX);

    let mut total: BTreeMap<String, u64> = BTreeMap::new();
    total.insert(goal.into(), 1);
    let mut nodes: Vec<String> = Vec::new();
    let mut edges: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut frontier: VecDeque<(String, u64)> = VecDeque::new();
    frontier.push_back((goal.into(), 1));
    let mut expansions = 0;
    let add_node = |nodes: &mut Vec<String>, n: &str| {
        if !nodes.iter().any(|x| x == n) {
            nodes.push(n.into());
        }
    };
    while let Some((item, need)) = frontier.pop_front() {
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            break;
        }
        add_node(&mut nodes, &item);
        if let Some((out_qty, ing)) = recipes.get(&item) {
            let crafts = need.div_ceil(*out_qty);
            for (q, ing_item) in ing {
                let req = q.saturating_mul(crafts);
                let t = total.entry(ing_item.clone()).or_default();
                *t = t.saturating_add(req);
                let succ = edges.entry(ing_item.clone()).or_default();
                if !succ.contains(&item) {
                    succ.push(item.clone());
                }
                add_node(&mut nodes, ing_item);
                if recipes.contains_key(ing_item) {
                    frontier.push_back((ing_item.clone(), req));
                }
            }
        }
    }

    nodes.sort_by_key(|n| rank_of(n));
    let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    for succ in edges.values() {
        for v in succ {
            *indeg.get_mut(v.as_str()).expect("successors are nodes") += 1;
        }
    }
    for succ in edges.values_mut() {
        succ.sort_by_key(|n| rank_of(n));
    }
    let mut queue: VecDeque<&str> = nodes
        .iter()
        .map(String::as_str)
        .filter(|n| indeg[n] == 0)
        .collect();
    let mut out = Vec::new();
    while let Some(u) = queue.pop_front() {
        if u != goal {
            if let Some(&t) = total.get(u) {
                if t > 0 {
                    out.push((u.to_string(), t));
                }
            }
        }
        if let Some(succ) = edges.get(u) {
            for v in succ {
                let d = indeg.get_mut(v.as_str()).expect("node");
                *d -= 1;
                if *d == 0 {
                    queue.push_back(v.as_str());
                }
            }
        }
    }
    out
}

fn clamp_u32(x: u64) -> u32 {
    u32::try_from(x).unwrap_or(u32::MAX)
}

/// Decomposes a demonstration (`action, {state}` lines) into single-item
/// requirement subgoals ending with `{goal: 1}`.
///
/// Unparseable lines are skipped. A later recipe for the same product replaces
/// an earlier one. Ties in the topological order follow first appearance in
/// the lines.
pub fn decompose_llm<S: AsRef<str>>(goal: &str, lines: &[S]) -> Vec<Subgoal> {
    let mut recipes: RecipeTable = BTreeMap::new();
    let mut rank: Vec<String> = Vec::new();
    let note = |rank: &mut Vec<String>, item: &str| {
        if !rank.iter().any(|r| r == item) {
            rank.push(item.into());
        }
    };
    for line in lines {
        match parse_line(line.as_ref()) {
            Some(Line::Craft {
                out_qty,
                out_item,
                ingredients,
            }) => {
                note(&mut rank, &out_item);
                for (_, i) in &ingredients {
                    note(&mut rank, i);
                }
                if out_qty > 0 {
                    recipes.insert(out_item, (out_qty, ingredients));
                }
            }
            Some(Line::Get { item }) => note(&mut rank, &item),
            None => {}
        }
    }
    if !recipes.contains_key(goal) {
        return alloc::vec![Subgoal::single(goal, 1)];
    }
    let mut out: Vec<Subgoal> = propagate(goal, &recipes, &rank)
        .into_iter()
        .map(|(item, q)| Subgoal::single(item, clamp_u32(q)))
        .collect();
    out.push(Subgoal::single(goal, 1));
    out
}

/// Same program run on an instruction's command list instead of a demonstration.
/// Used to enumerate requirement-style subgoals for a task.
pub fn instruction_requirements(instruction: &Instruction) -> Vec<(String, u32)> {
    let mut recipes: RecipeTable = BTreeMap::new();
    let mut rank: Vec<String> = Vec::new();
    for r in instruction.commands() {
        for item in core::iter::once(&r.out_item).chain(r.ingredients.iter().map(|(_, i)| i)) {
            if !rank.iter().any(|x| x == item) {
                rank.push(item.clone());
            }
        }
        recipes.insert(
            r.out_item.clone(),
            (
                u64::from(r.out_qty),
                r.ingredients
                    .iter()
                    .map(|(q, i)| (u64::from(*q), i.clone()))
                    .collect(),
            ),
        );
    }
    if !recipes.contains_key(instruction.goal()) {
        return Vec::new();
    }
    propagate(instruction.goal(), &recipes, &rank)
        .into_iter()
        .map(|(i, q)| (i, clamp_u32(q)))
        .collect()
}

/// One subgoal per state-changing craft: the full inventory right after it.
pub fn decompose_hand(record: &TrajectoryRecord) -> Result<Vec<Subgoal>, SubgoalError> {
    let mut out = Vec::new();
    let mut prev = Inventory::new();
    for step in &record.steps {
        if step.action.is_craft() && step.state != prev {
            out.push(Subgoal::from_inventory(&step.state)?);
        }
        prev = step.state.clone();
    }
    if out.is_empty() {
        return Err(SubgoalError::NoCrafts);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// remapping

/// A fixed permutation over a fraction of item names.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRemap {
    p: f64,
    pairs: Vec<(String, String)>,
}

impl ItemRemap {
    pub fn identity() -> Self {
        ItemRemap {
            p: 0.0,
            pairs: Vec::new(),
        }
    }

    /// Picks `round(p * n)` items and permutes them as a single cycle, so every
    /// chosen item maps to a different name. A lone chosen item would have to map
    /// to itself, so at least two are chosen whenever `p > 0` and `n >= 2`.
    pub fn sample(items: &[String], p: f64, rng: &mut SimRng) -> Result<Self, SubgoalError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(SubgoalError::BadFraction(p));
        }
        let n = items.len();
        let mut k = libm::round(p * n as f64) as usize;
        if k == 1 || (p > 0.0 && k == 0) {
            k = 2;
        }
        if n < 2 {
            k = 0;
        }
        let k = k.min(n);
        let mut chosen: Vec<&String> = items.choose_multiple(rng, k).collect();
        let targets = {
            // Sattolo: a uniformly random cyclic permutation
            let mut t: Vec<&String> = chosen.clone();
            for i in (1..t.len()).rev() {
                let j = rng.gen_range(0..i);
                t.swap(i, j);
            }
            t
        };
        let mut pairs: Vec<(String, String)> = chosen
            .drain(..)
            .zip(targets)
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect();
        pairs.sort();
        Ok(ItemRemap { p, pairs })
    }

    pub fn from_pairs(p: f64, pairs: Vec<(String, String)>) -> Self {
        ItemRemap { p, pairs }
    }

    pub fn fraction(&self) -> f64 {
        self.p
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn map<'a>(&'a self, item: &'a str) -> &'a str {
        self.pairs
            .iter()
            .find(|(a, _)| a == item)
            .map_or(item, |(_, b)| b.as_str())
    }

    pub fn inverse(&self) -> Self {
        let mut pairs: Vec<(String, String)> = self
            .pairs
            .iter()
            .map(|(a, b)| (b.clone(), a.clone()))
            .collect();
        pairs.sort();
        ItemRemap { p: self.p, pairs }
    }

    pub fn apply(&self, g: &Subgoal) -> Subgoal {
        Subgoal {
            thresholds: g
                .thresholds
                .iter()
                .map(|(k, q)| (self.map(k).to_string(), *q))
                .collect(),
        }
    }
}

pub fn remap_subgoals(subgoals: &[Subgoal], remap: &ItemRemap) -> Vec<Subgoal> {
    subgoals.iter().map(|g| remap.apply(g)).collect()
}

// ---------------------------------------------------------------------------
// segmentation and datasets

/// How demonstrations are turned into subgoal sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum SubgoalMode {
    Llm,
    Hand,
    NoQuantity,
    Remap(ItemRemap),
    /// The ultimate goal `{g: 1}` as the only subgoal.
    Flat,
}

impl SubgoalMode {
    pub fn name(&self) -> &'static str {
        match self {
            SubgoalMode::Llm => "llm",
            SubgoalMode::Hand => "hand",
            SubgoalMode::NoQuantity => "no-quantity",
            SubgoalMode::Remap(_) => "remap",
            SubgoalMode::Flat => "flat",
        }
    }

    pub fn decompose(&self, record: &TrajectoryRecord) -> Result<Vec<Subgoal>, SubgoalError> {
        let llm = || decompose_llm(record.goal(), &record.lines());
        Ok(match self {
            SubgoalMode::Llm => llm(),
            SubgoalMode::Hand => decompose_hand(record)?,
            SubgoalMode::NoQuantity => llm().iter().map(strip_quantities).collect(),
            SubgoalMode::Remap(r) => remap_subgoals(&llm(), r),
            SubgoalMode::Flat => alloc::vec![Subgoal::single(record.goal(), 1)],
        })
    }

    /// Applies the mode's post-processing to a requirement-style subgoal.
    pub fn transform(&self, g: Subgoal) -> Subgoal {
        match self {
            SubgoalMode::NoQuantity => strip_quantities(&g),
            SubgoalMode::Remap(r) => r.apply(&g),
            _ => g,
        }
    }
}

/// `(start index, subgoal, end index)` segments of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedTrajectory {
    pub segments: Vec<(usize, Subgoal, usize)>,
}

/// Aligns `subgoals` with the trajectory states: each boundary is the first
/// later state satisfying the subgoal. `None` when some subgoal is never reached.
pub fn segment(record: &TrajectoryRecord, subgoals: &[Subgoal]) -> Option<DecomposedTrajectory> {
    let states = record.states();
    let mut prev = 0;
    let mut segments = Vec::with_capacity(subgoals.len());
    for g in subgoals {
        let end = (prev + 1..states.len()).find(|&j| subgoal_achieved(states[j], g))?;
        segments.push((prev, g.clone(), end));
        prev = end;
    }
    Some(DecomposedTrajectory { segments })
}

/// The two previous states, most recent first, padded with empty inventories.
pub type History = [Inventory; 2];

pub fn history_at(states: &[&Inventory], i: usize) -> History {
    let at = |k: Option<usize>| k.map_or_else(Inventory::new, |k| states[k].clone());
    [at(i.checked_sub(1)), at(i.checked_sub(2))]
}

/// One demonstrated transition tagged with its active subgoal.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiEntry {
    pub state: Inventory,
    pub history: History,
    pub action: Action,
    pub subgoal: Subgoal,
    pub instruction: Arc<Instruction>,
}

/// A segment start: the state the subgoal was pursued from.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentHead {
    pub state: Inventory,
    /// Previous primitive states.
    pub history: History,
    /// States at the two previous segment starts.
    pub manager_history: History,
    pub subgoal: Subgoal,
    pub instruction: Arc<Instruction>,
    /// Position of the segment within its trajectory.
    pub index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhiDatasets {
    pub phi: Vec<PhiEntry>,
    pub phi0: Vec<SegmentHead>,
    pub kept: usize,
    /// Records whose subgoals could not be aligned or decomposed.
    pub dropped: usize,
}

/// Decomposes every record and compiles transition and segment-head datasets.
/// Transitions after the last boundary are not covered by any subgoal and are
/// left out.
pub fn build_phi(records: &[TrajectoryRecord], mode: &SubgoalMode) -> PhiDatasets {
    let mut out = PhiDatasets::default();
    for record in records {
        let Some(dec) = mode
            .decompose(record)
            .ok()
            .and_then(|sg| segment(record, &sg))
        else {
            out.dropped += 1;
            continue;
        };
        out.kept += 1;
        let instruction = Arc::new(record.instruction.clone());
        let states = record.states();
        let starts: Vec<usize> = dec.segments.iter().map(|(s, _, _)| *s).collect();
        for (k, (start, g, end)) in dec.segments.iter().enumerate() {
            let mgr_hist = [
                k.checked_sub(1)
                    .map_or_else(Inventory::new, |j| states[starts[j]].clone()),
                k.checked_sub(2)
                    .map_or_else(Inventory::new, |j| states[starts[j]].clone()),
            ];
            out.phi0.push(SegmentHead {
                state: states[*start].clone(),
                history: history_at(&states, *start),
                manager_history: mgr_hist,
                subgoal: g.clone(),
                instruction: Arc::clone(&instruction),
                index: k,
            });
            for i in *start..*end {
                out.phi.push(PhiEntry {
                    state: states[i].clone(),
                    history: history_at(&states, i),
                    action: record.steps[i].action.clone(),
                    subgoal: g.clone(),
                    instruction: Arc::clone(&instruction),
                });
            }
        }
    }
    out
}
