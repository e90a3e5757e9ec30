//! Sparse candidate features.
//!
//! Each `(context, candidate)` pair maps to a short list of `(id, value)` pairs.
//! Ids below [`RELATIONAL`] are fixed relational indicators; the rest of the
//! vocabulary is filled by FNV-1a hashes of item identities.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::action::{Action, Recipe};
use crate::env::Instruction;
use crate::inventory::Inventory;
use crate::subgoal::{History, Subgoal};

/// Number of reserved relational ids.
pub const RELATIONAL: u32 = 64;

/// Flat per-candidate feature lists: candidate `c` owns `offsets[c]..offsets[c + 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureBatch {
    pub ids: Vec<u32>,
    pub vals: Vec<f64>,
    pub offsets: Vec<usize>,
}

impl FeatureBatch {
    pub fn new() -> Self {
        FeatureBatch {
            ids: Vec::new(),
            vals: Vec::new(),
            offsets: alloc::vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn candidate(&self, c: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[c]..self.offsets[c + 1];
        (&self.ids[r.clone()], &self.vals[r])
    }

    fn push(&mut self, id: u32, v: f64) {
        if v != 0.0 {
            self.ids.push(id);
            self.vals.push(v);
        }
    }

    fn finish(&mut self) {
        self.offsets.push(self.ids.len());
    }
}

struct Fnv(u64);

impl Fnv {
    fn new(tag: u8) -> Self {
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        h.byte(tag);
        h
    }

    fn byte(&mut self, b: u8) {
        self.0 ^= u64::from(b);
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }

    fn str(mut self, s: &str) -> Self {
        for b in s.bytes() {
            self.byte(b);
        }
        self.byte(0xff);
        self
    }

    fn num(mut self, n: u32) -> Self {
        for b in n.to_le_bytes() {
            self.byte(b);
        }
        self
    }

    fn id(&self, vocab: u32) -> u32 {
        RELATIONAL + (self.0 % u64::from(vocab - RELATIONAL)) as u32
    }
}

/// 0, 1, 2-3, 4-7, 8+
pub fn count_bucket(n: u32) -> u32 {
    match n {
        0 => 0,
        1 => 1,
        2..=3 => 2,
        4..=7 => 3,
        _ => 4,
    }
}

fn clipped(n: u32) -> f64 {
    f64::from(n.min(8)) / 8.0
}

/// Items reachable from `roots` through ingredient edges of `instruction`,
/// excluding the roots themselves unless reached again.
fn ingredient_closure<'a>(
    roots: impl Iterator<Item = &'a str>,
    instruction: &'a Instruction,
) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    let mut stack: Vec<&str> = roots
        .filter_map(|r| instruction.recipe_for(r))
        .flat_map(|r| r.ingredients.iter().map(|(_, i)| i.as_str()))
        .collect();
    while let Some(i) = stack.pop() {
        if out.contains(&i) {
            continue;
        }
        out.push(i);
        if let Some(r) = instruction.recipe_for(i) {
            stack.extend(r.ingredients.iter().map(|(_, x)| x.as_str()));
        }
    }
    out
}

/// Ingredient level of each item in the instruction (0 for gettable items).
pub(crate) fn levels(instruction: &Instruction) -> BTreeMap<&str, u32> {
    fn level<'a>(
        item: &'a str,
        instr: &'a Instruction,
        memo: &mut BTreeMap<&'a str, u32>,
        depth: u32,
    ) -> u32 {
        if let Some(&l) = memo.get(item) {
            return l;
        }
        let l = match instr.recipe_for(item) {
            Some(r) if depth < 32 => {
                1 + r
                    .ingredients
                    .iter()
                    .map(|(_, i)| level(i, instr, memo, depth + 1))
                    .max()
                    .unwrap_or(0)
            }
            _ => 0,
        };
        memo.insert(item, l);
        l
    }
    let mut memo = BTreeMap::new();
    for c in instruction.commands() {
        level(&c.out_item, instruction, &mut memo, 0);
    }
    memo
}

/// Per-context quantities shared by every employee candidate.
pub struct EmployeeView<'a> {
    state: &'a Inventory,
    history: &'a History,
    subgoal: &'a Subgoal,
    instruction: &'a Instruction,
    deficits: Vec<(&'a str, u32)>,
    direct: Vec<&'a str>,
    closure: Vec<&'a str>,
}

const REL_DEFICIT: u32 = 0;
const REL_MET: u32 = 1;
const REL_DIRECT: u32 = 2;
const REL_CLOSURE: u32 = 3;
const REL_UNRELATED: u32 = 4;

impl<'a> EmployeeView<'a> {
    pub fn new(
        state: &'a Inventory,
        history: &'a History,
        subgoal: &'a Subgoal,
        instruction: &'a Instruction,
    ) -> Self {
        let deficits: Vec<(&str, u32)> = subgoal.deficits(state).collect();
        let direct: Vec<&str> = deficits
            .iter()
            .filter_map(|(d, _)| instruction.recipe_for(d))
            .flat_map(|r| r.ingredients.iter().map(|(_, i)| i.as_str()))
            .collect();
        let closure = ingredient_closure(deficits.iter().map(|(d, _)| *d), instruction);
        EmployeeView {
            state,
            history,
            subgoal,
            instruction,
            deficits,
            direct,
            closure,
        }
    }

    fn relation(&self, item: &str) -> u32 {
        if self.deficits.iter().any(|(d, _)| *d == item) {
            REL_DEFICIT
        } else if self.subgoal.get(item).is_some() {
            REL_MET
        } else if self.direct.contains(&item) {
            REL_DIRECT
        } else if self.closure.contains(&item) {
            REL_CLOSURE
        } else {
            REL_UNRELATED
        }
    }

    /// True when `item` is held in at least the amount some closure recipe uses per craft.
    fn enough_for_a_craft(&self, item: &str) -> Option<bool> {
        let per_craft = self
            .closure
            .iter()
            .chain(self.deficits.iter().map(|(d, _)| d))
            .filter_map(|p| self.instruction.recipe_for(p))
            .flat_map(|r| r.ingredients.iter())
            .filter(|(_, i)| i == item)
            .map(|(q, _)| *q)
            .max()?;
        Some(self.state.count(item) >= per_craft)
    }

    pub fn push_candidate(&self, action: &Action, vocab: u32, out: &mut FeatureBatch) {
        let (kind, item, qty) = match action {
            Action::Get { qty, item } => (0u32, item.as_str(), *qty),
            Action::Craft(r) => (1u32, r.out_item.as_str(), r.out_qty),
        };
        let feasible = match action {
            Action::Get { .. } => true,
            Action::Craft(r) => self.state.satisfies(r.requirements()),
        };
        let kind3 = match (kind, feasible) {
            (0, _) => 0,
            (_, true) => 1,
            (_, false) => 2,
        };
        out.push(kind3, 1.0);
        let rel = self.relation(item);
        out.push(3 + kind3 * 5 + rel, 1.0);
        let have = self.state.count(item);
        out.push(18 + kind * 5 + count_bucket(have), 1.0);
        if let Some(&(_, d)) = self.deficits.iter().find(|(i, _)| *i == item) {
            out.push(if qty >= d { 28 } else { 29 }, 1.0);
        }
        if let Action::Craft(r) = action {
            if self.consumes_below_threshold(r) {
                out.push(30, 1.0);
            }
        }
        match self.enough_for_a_craft(item) {
            Some(true) => out.push(31 + kind * 2, 1.0),
            Some(false) => out.push(32 + kind * 2, 1.0),
            None => {}
        }

        out.push(Fnv::new(1).num(kind).str(item).id(vocab), 1.0);
        out.push(Fnv::new(2).num(kind).str(item).num(qty).id(vocab), 1.0);
        out.push(
            Fnv::new(3)
                .num(kind)
                .str(item)
                .num(count_bucket(have))
                .id(vocab),
            1.0,
        );
        for (c, q) in self.subgoal.iter() {
            let deficit = q.saturating_sub(self.state.count(c));
            out.push(
                Fnv::new(4)
                    .num(kind)
                    .str(item)
                    .str(c)
                    .num(count_bucket(deficit))
                    .id(vocab),
                1.0,
            );
        }
        for (s, n) in self.state.iter() {
            out.push(Fnv::new(5).num(kind).str(item).str(s).id(vocab), clipped(n));
        }
        for (h, inv) in self.history.iter().enumerate() {
            for (s, n) in inv.iter() {
                out.push(
                    Fnv::new(6 + h as u8).num(kind).str(item).str(s).id(vocab),
                    0.5 * clipped(n),
                );
            }
        }
        if let Action::Craft(r) = action {
            for (q, ing) in &r.ingredients {
                let ok = u32::from(self.state.count(ing) >= *q);
                out.push(Fnv::new(8).str(item).str(ing).num(ok).id(vocab), 1.0);
            }
        }
        out.finish();
    }

    fn consumes_below_threshold(&self, r: &Recipe) -> bool {
        r.requirements()
            .iter()
            .any(|&(i, q)| match self.subgoal.get(i) {
                Some(t) => {
                    let have = self.state.count(i);
                    have >= t && have - q.min(have) < t
                }
                None => false,
            })
    }
}

/// Features for every employee candidate.
pub fn employee_features(
    state: &Inventory,
    history: &History,
    subgoal: &Subgoal,
    instruction: &Instruction,
    candidates: &[Action],
    vocab: u32,
) -> FeatureBatch {
    let view = EmployeeView::new(state, history, subgoal, instruction);
    let mut out = FeatureBatch::new();
    for c in candidates {
        view.push_candidate(c, vocab, &mut out);
    }
    out
}

/// Per-context quantities shared by every manager candidate.
pub struct ManagerView<'a> {
    state: &'a Inventory,
    history: &'a History,
    instruction: &'a Instruction,
    levels: BTreeMap<&'a str, u32>,
}

impl<'a> ManagerView<'a> {
    pub fn new(state: &'a Inventory, history: &'a History, instruction: &'a Instruction) -> Self {
        ManagerView {
            state,
            history,
            instruction,
            levels: levels(instruction),
        }
    }

    fn ready(&self, item: &str) -> bool {
        match self.instruction.recipe_for(item) {
            Some(r) => self.state.satisfies(r.requirements()),
            None => self.instruction.is_base(item),
        }
    }

    pub fn push_candidate(&self, g: &Subgoal, vocab: u32, out: &mut FeatureBatch) {
        let goal = self.instruction.goal();
        let deficits: Vec<(&str, u32)> = g.deficits(self.state).collect();
        out.push(if deficits.is_empty() { 0 } else { 1 }, 1.0);
        if g.get(goal).is_some() {
            out.push(2, 1.0);
        }
        out.push(3 + (g.len() as u32 - 1).min(3), 1.0);
        let w = if deficits.is_empty() {
            0.0
        } else {
            1.0 / deficits.len() as f64
        };
        for &(x, d) in &deficits {
            out.push(if self.instruction.in_closure(x) { 7 } else { 8 }, w);
            let ready = self.ready(x);
            out.push(if ready { 9 } else { 10 }, w);
            let lvl = self.levels.get(x).copied().unwrap_or(0).min(4);
            out.push(11 + lvl, w);
            out.push(16 + count_bucket(d), w);
            if ready {
                out.push(21 + lvl, w);
            }
            if x == goal && ready {
                out.push(26, w);
            }
            if let Some(r) = self.instruction.recipe_for(x) {
                if d <= r.out_qty {
                    out.push(27, w);
                }
            }
        }

        for (x, q) in g.iter() {
            let have = self.state.count(x);
            out.push(Fnv::new(20).str(x).num(count_bucket(q)).id(vocab), 1.0);
            out.push(Fnv::new(21).str(goal).str(x).num(q.min(16)).id(vocab), 1.0);
            out.push(Fnv::new(22).str(x).num(count_bucket(have)).id(vocab), 1.0);
            for (s, n) in self.state.iter() {
                out.push(Fnv::new(23).str(x).str(s).id(vocab), clipped(n));
            }
            for (s, n) in self.history[0].iter() {
                out.push(Fnv::new(24).str(x).str(s).id(vocab), 0.5 * clipped(n));
            }
        }
        out.finish();
    }
}

pub fn manager_features(
    state: &Inventory,
    history: &History,
    instruction: &Instruction,
    candidates: &[Subgoal],
    vocab: u32,
) -> FeatureBatch {
    let view = ManagerView::new(state, history, instruction);
    let mut out = FeatureBatch::new();
    for c in candidates {
        view.push_candidate(c, vocab, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixtures::*;
    use alloc::string::ToString;

    #[test]
    fn hashed_ids_stay_in_range() {
        let instr = trapdoor();
        let s = Inventory::from_pairs([("birch logs", 2)]);
        let h = [Inventory::new(), Inventory::new()];
        let g = Subgoal::single("birch planks", 6);
        let cands = crate::policy::enumerate_employee_candidates(&s, &instr);
        let f = employee_features(&s, &h, &g, &instr, &cands, 1024);
        assert_eq!(f.len(), cands.len());
        assert!(f.ids.iter().all(|&i| i < 1024));
        // the plank craft is feasible and targets the deficit item
        let idx = cands
            .iter()
            .position(|a| a.to_string().contains("birch planks using"))
            .unwrap();
        let (ids, _) = f.candidate(idx);
        assert!(ids.contains(&1) && ids.contains(&(3 + 5 + REL_DEFICIT)));
    }

    #[test]
    fn levels_of_trapdoor() {
        let instr = trapdoor();
        let l = levels(&instr);
        assert_eq!(l["birch trapdoor"], 2);
        assert_eq!(l["birch planks"], 1);
        assert_eq!(l["birch logs"], 0);
    }

    #[test]
    fn buckets() {
        let b: Vec<u32> = [0, 1, 2, 3, 4, 7, 8, 100]
            .iter()
            .map(|&n| count_bucket(n))
            .collect();
        assert_eq!(b, [0, 1, 2, 2, 3, 3, 4, 4]);
    }
}
