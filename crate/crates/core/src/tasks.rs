//! Recipe universes, tasks, optimal plans and noisy demonstration datasets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::action::{Action, Recipe};
use crate::env::{apply_action, ultimate_goal_achieved, EnvError, Instruction};
use crate::inventory::Inventory;
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("unsatisfiable universe config: {0}")]
    Config(String),
    #[error("no plan: {0}")]
    Unsolvable(String),
    #[error("could not draw {needed} distinct tasks for the {split} split")]
    SplitExhausted { split: &'static str, needed: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("record replay diverged at step {step}: {reason}")]
    Replay { step: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniverseConfig {
    /// Total items, base and craftable.
    pub n_items: usize,
    /// Longest ingredient chain from a base item to a craftable.
    pub max_depth: usize,
    pub max_ingredients: usize,
    /// Inclusive range of recipe output quantities.
    pub out_qty_range: (u32, u32),
    /// Inclusive upper bound on a single ingredient quantity.
    pub max_ingredient_qty: u32,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            n_items: 18,
            max_depth: 3,
            max_ingredients: 2,
            out_qty_range: (1, 4),
            max_ingredient_qty: 2,
        }
    }
}

/// A recipe DAG from base items to craftables. Each craftable has one recipe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecipeUniverse {
    pub items: Vec<String>,
    pub base_items: Vec<String>,
    pub recipes: Vec<Recipe>,
    pub depth: usize,
}

const MATERIALS: &[&str] = &[
    "amber", "ash", "basalt", "birch", "bone", "brass", "cedar", "clay", "cobalt", "copper",
    "coral", "crimson", "dusk", "ember", "flint", "frost", "granite", "honey", "iron", "jade",
    "kelp", "lapis", "lime", "maple", "moss", "oak", "obsidian", "pearl", "quartz", "rose", "rust",
    "sand", "silver", "slate", "spruce", "tin", "umber", "violet", "willow", "zinc",
];

const FORMS: &[&str] = &[
    "bar", "beam", "block", "bolt", "brick", "button", "chain", "chest", "dust", "fence", "gear",
    "hinge", "hook", "ingot", "lantern", "lever", "logs", "nugget", "pane", "planks", "plate",
    "powder", "rod", "rope", "shard", "sheet", "slab", "spring", "stairs", "stick", "tile",
    "trapdoor", "wire", "wool",
];

impl RecipeUniverse {
    pub fn craftables(&self) -> impl Iterator<Item = &str> {
        self.recipes.iter().map(|r| r.out_item.as_str())
    }

    pub fn recipe_for(&self, item: &str) -> Option<&Recipe> {
        self.recipes.iter().find(|r| r.out_item == item)
    }

    /// Longest ingredient chain ending at `item` (0 for base items).
    pub fn level(&self, item: &str) -> usize {
        match self.recipe_for(item) {
            None => 0,
            Some(r) => {
                1 + r
                    .ingredients
                    .iter()
                    .map(|(_, i)| self.level(i))
                    .max()
                    .unwrap_or(0)
            }
        }
    }

    /// Recipes needed to craft `goal`, in universe order.
    pub fn closure_recipes(&self, goal: &str) -> Vec<&Recipe> {
        let mut needed: BTreeSet<&str> = BTreeSet::new();
        let mut stack = alloc::vec![goal];
        while let Some(item) = stack.pop() {
            if let Some(r) = self.recipe_for(item) {
                if needed.insert(r.out_item.as_str()) {
                    stack.extend(r.ingredients.iter().map(|(_, i)| i.as_str()));
                }
            }
        }
        self.recipes
            .iter()
            .filter(|r| needed.contains(r.out_item.as_str()))
            .collect()
    }
}

/// Synthesizes an acyclic recipe universe whose longest chain is exactly `max_depth`.
pub fn build_recipe_universe(cfg: &UniverseConfig, seed: u64) -> Result<RecipeUniverse, TaskError> {
    let (lo, hi) = cfg.out_qty_range;
    if cfg.n_items < 2 || cfg.max_depth < 1 {
        return Err(TaskError::Config(
            "need n_items >= 2 and max_depth >= 1".into(),
        ));
    }
    if cfg.n_items < cfg.max_depth + 1 {
        return Err(TaskError::Config(format!(
            "{} items cannot form a chain of depth {}",
            cfg.n_items, cfg.max_depth
        )));
    }
    if cfg.max_ingredients < 1 || lo < 1 || lo > hi || cfg.max_ingredient_qty < 1 {
        return Err(TaskError::Config(
            "quantities and ingredient counts must be positive".into(),
        ));
    }
    if cfg.n_items > MATERIALS.len() * FORMS.len() {
        return Err(TaskError::Config("not enough distinct item names".into()));
    }
    let mut rng = rng::seeded(seed);

    let mut names: Vec<String> = Vec::with_capacity(cfg.n_items);
    let mut used: BTreeSet<String> = BTreeSet::new();
    while names.len() < cfg.n_items {
        let m = MATERIALS.choose(&mut rng).expect("non-empty");
        let f = FORMS.choose(&mut rng).expect("non-empty");
        let name = format!("{m} {f}");
        if used.insert(name.clone()) {
            names.push(name);
        }
    }

    let n_base = (cfg.n_items / 3).clamp(1, cfg.n_items - cfg.max_depth);
    let n_craft = cfg.n_items - n_base;
    // Levels: a guaranteed chain 1..=max_depth, the rest uniform.
    let mut levels: Vec<usize> = (1..=cfg.max_depth).collect();
    while levels.len() < n_craft {
        levels.push(rng.gen_range(1..=cfg.max_depth));
    }
    levels.sort_unstable();

    let mut by_level: Vec<Vec<usize>> = alloc::vec![Vec::new(); cfg.max_depth + 1];
    by_level[0].extend(0..n_base);
    let mut recipes = Vec::with_capacity(n_craft);
    let mut chain_prev: usize = 0;
    let mut chain_level = 0;
    for (k, &level) in levels.iter().enumerate() {
        let idx = n_base + k;
        let anchor = if level == chain_level + 1 && chain_level < cfg.max_depth {
            // first item at this level extends the guaranteed chain
            let a = if level == 1 {
                *by_level[0].choose(&mut rng).expect("bases")
            } else {
                chain_prev
            };
            chain_prev = idx;
            chain_level = level;
            a
        } else {
            *by_level[level - 1]
                .choose(&mut rng)
                .expect("lower level populated")
        };
        let lower: Vec<usize> = by_level[..level]
            .iter()
            .flatten()
            .copied()
            .filter(|&i| i != anchor)
            .collect();
        let extra = rng.gen_range(0..cfg.max_ingredients).min(lower.len());
        let mut ingredients = alloc::vec![anchor];
        ingredients.extend(lower.choose_multiple(&mut rng, extra).copied());
        let recipe = Recipe::new(
            names[idx].clone(),
            rng.gen_range(lo..=hi),
            ingredients
                .into_iter()
                .map(|i| (rng.gen_range(1..=cfg.max_ingredient_qty), names[i].clone()))
                .collect(),
        )
        .expect("generated recipes are well formed");
        recipes.push(recipe);
        by_level[level].push(idx);
    }

    Ok(RecipeUniverse {
        base_items: names[..n_base].to_vec(),
        items: names,
        recipes,
        depth: cfg.max_depth,
    })
}

/// A goal plus its instruction, padded with distractor commands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub instruction: Instruction,
    pub distractors: usize,
}

impl Task {
    /// Order-insensitive identity used to keep dataset splits disjoint.
    pub fn key(&self) -> (String, Vec<String>) {
        let mut cmds: Vec<String> = self
            .instruction
            .commands()
            .iter()
            .map(|c| c.to_string())
            .collect();
        cmds.sort_unstable();
        (self.instruction.goal().to_string(), cmds)
    }
}

/// Draws a task for `goal` with 5 to 15 distractor commands (fewer if the universe
/// has fewer unrelated recipes), shuffled into the needed ones.
pub fn sample_task(
    universe: &RecipeUniverse,
    goal: &str,
    rng: &mut SimRng,
) -> Result<Task, TaskError> {
    let needed = universe.closure_recipes(goal);
    let pool: Vec<&Recipe> = universe
        .recipes
        .iter()
        .filter(|r| !needed.iter().any(|n| n.out_item == r.out_item))
        .collect();
    let want = rng.gen_range(5..=15usize).min(pool.len());
    let mut commands: Vec<Recipe> = needed.into_iter().cloned().collect();
    commands.extend(pool.choose_multiple(rng, want).map(|r| (*r).clone()));
    commands.shuffle(rng);
    Ok(Task {
        instruction: Instruction::new(goal, commands)?,
        distractors: want,
    })
}

/// Items of the goal closure ordered ingredients-first (DFS post-order).
fn topo_closure(instruction: &Instruction) -> Result<Vec<String>, TaskError> {
    fn visit(
        item: &str,
        instruction: &Instruction,
        state: &mut BTreeMap<String, bool>,
        order: &mut Vec<String>,
    ) -> Result<(), TaskError> {
        match state.get(item) {
            Some(true) => return Ok(()),
            Some(false) => {
                return Err(TaskError::Unsolvable(format!(
                    "recipe cycle through `{item}`"
                )))
            }
            None => {}
        }
        state.insert(item.into(), false);
        if let Some(r) = instruction.recipe_for(item) {
            for (_, ing) in &r.ingredients {
                visit(ing, instruction, state, order)?;
            }
        }
        state.insert(item.into(), true);
        order.push(item.into());
        Ok(())
    }
    let mut state = BTreeMap::new();
    let mut order = Vec::new();
    visit(instruction.goal(), instruction, &mut state, &mut order)?;
    Ok(order)
}

/// Plans primitive actions that raise `state` to every `(item, qty)` threshold,
/// using the first recipe for each item. Returns `None` when a threshold item is
/// neither craftable nor gettable.
///
/// Requirements are propagated consumers-first: an item's total requirement is
/// its threshold plus what later crafts consume; the deficit over what is held is
/// covered with `ceil(deficit / out_qty)` crafts.
pub fn plan_to_thresholds(
    state: &Inventory,
    thresholds: &[(&str, u32)],
    instruction: &Instruction,
) -> Option<Vec<Action>> {
    // topological order over the union of threshold closures
    let mut order: Vec<String> = Vec::new();
    let mut marks: BTreeMap<String, bool> = BTreeMap::new();
    fn visit(
        item: &str,
        instruction: &Instruction,
        marks: &mut BTreeMap<String, bool>,
        order: &mut Vec<String>,
    ) -> Option<()> {
        match marks.get(item) {
            Some(true) => return Some(()),
            Some(false) => return None,
            None => {}
        }
        marks.insert(item.into(), false);
        if let Some(r) = instruction.recipe_for(item) {
            for (_, ing) in &r.ingredients {
                visit(ing, instruction, marks, order)?;
            }
        } else if !instruction.is_base(item) {
            return None;
        }
        marks.insert(item.into(), true);
        order.push(item.into());
        Some(())
    }
    for &(item, _) in thresholds {
        if state.count(item)
            < thresholds
                .iter()
                .filter(|(i, _)| *i == item)
                .map(|(_, q)| *q)
                .sum()
        {
            visit(item, instruction, &mut marks, &mut order)?;
        }
    }

    let mut required: BTreeMap<&str, u64> = BTreeMap::new();
    for &(item, q) in thresholds {
        *required.entry(item).or_default() += u64::from(q);
    }
    let mut crafts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut gets: BTreeMap<&str, u64> = BTreeMap::new();
    for item in order.iter().rev() {
        let need = required.get(item.as_str()).copied().unwrap_or(0);
        let deficit = need.saturating_sub(u64::from(state.count(item)));
        if deficit == 0 {
            continue;
        }
        match instruction.recipe_for(item) {
            Some(r) => {
                let n = deficit.div_ceil(u64::from(r.out_qty));
                crafts.insert(item.as_str(), n);
                for (q, ing) in &r.ingredients {
                    *required.entry(ing.as_str()).or_default() += u64::from(*q) * n;
                }
            }
            None => {
                gets.insert(item.as_str(), deficit);
            }
        }
    }

    let mut plan = Vec::new();
    for item in &order {
        if let Some(&q) = gets.get(item.as_str()) {
            plan.push(Action::get(u32::try_from(q).ok()?, item.as_str()));
        }
    }
    for item in &order {
        if let Some(&n) = crafts.get(item.as_str()) {
            let r = instruction
                .recipe_for(item)
                .expect("crafted items have recipes");
            for _ in 0..n {
                plan.push(Action::Craft(r.clone()));
            }
        }
    }
    Some(plan)
}

/// Shortest action list crafting one goal item from an empty inventory: one `get`
/// per base item for its full requirement, then crafts ingredients-first.
pub fn optimal_plan(instruction: &Instruction) -> Result<Vec<Action>, TaskError> {
    topo_closure(instruction)?;
    plan_to_thresholds(&Inventory::new(), &[(instruction.goal(), 1)], instruction).ok_or_else(
        || TaskError::Unsolvable(format!("goal `{}` is unreachable", instruction.goal())),
    )
}

/// Inserts a noise action before each planned action with probability `rate`.
///
/// Noise is a redundant `get 1` of a base item (70%) or a craft from the
/// instruction whose ingredients are currently missing (30%, falling back to a
/// get when every command is feasible). Neither kind consumes items, so the
/// noisy plan still succeeds.
pub fn inject_noise(
    plan: &[Action],
    rate: f64,
    instruction: &Instruction,
    rng: &mut SimRng,
) -> Vec<Action> {
    let mut out = Vec::with_capacity(plan.len() + plan.len() / 4 + 1);
    let mut state = Inventory::new();
    let gettable: Vec<&String> = instruction
        .base_items()
        .iter()
        .filter(|b| b.as_str() != instruction.goal())
        .collect();
    for action in plan {
        if rate > 0.0 && rng.gen_bool(rate) {
            let noise = if rng.gen_bool(0.3) {
                let failing: Vec<&Recipe> = instruction
                    .commands()
                    .iter()
                    .filter(|r| !state.satisfies(r.requirements()))
                    .collect();
                failing.choose(rng).map(|r| Action::Craft((*r).clone()))
            } else {
                None
            };
            let noise = noise.or_else(|| gettable.choose(rng).map(|b| Action::get(1, b.as_str())));
            if let Some(n) = noise {
                state = apply_action(&state, &n, instruction).next;
                out.push(n);
            }
        }
        state = apply_action(&state, action, instruction).next;
        out.push(action.clone());
    }
    out
}

/// One executed step of a demonstration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub action: Action,
    pub state: Inventory,
}

/// A demonstration: `(s_0 = {}, a_0, s_1, ..., s_M)` for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryRecord {
    pub instruction: Instruction,
    pub steps: Vec<Step>,
}

impl TrajectoryRecord {
    /// Replays `actions` from the empty inventory and records each post-state.
    pub fn from_actions(instruction: Instruction, actions: &[Action]) -> Self {
        let mut state = Inventory::new();
        let mut steps = Vec::with_capacity(actions.len());
        for a in actions {
            state = apply_action(&state, a, &instruction).next;
            steps.push(Step {
                action: a.clone(),
                state: state.clone(),
            });
        }
        TrajectoryRecord { instruction, steps }
    }

    pub fn goal(&self) -> &str {
        self.instruction.goal()
    }

    /// States `s_0 ..= s_M`.
    pub fn states(&self) -> Vec<&Inventory> {
        static EMPTY: Inventory = Inventory::EMPTY;
        core::iter::once(&EMPTY)
            .chain(self.steps.iter().map(|s| &s.state))
            .collect()
    }

    /// `action, {state}` lines as shown to the decomposition program.
    pub fn lines(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| format!("{}, {}", s.action, s.state.render()))
            .collect()
    }

    /// Checks that replay reproduces every stored state and ends at the goal.
    pub fn verify(&self) -> Result<(), TaskError> {
        let mut state = Inventory::new();
        for (i, step) in self.steps.iter().enumerate() {
            let out = apply_action(&state, &step.action, &self.instruction);
            if out.next != step.state || out.next.render() != step.state.render() {
                return Err(TaskError::Replay {
                    step: i,
                    reason: format!("expected {}, replay gave {}", step.state, out.next),
                });
            }
            state = out.next;
        }
        if !ultimate_goal_achieved(&state, self.goal()) {
            return Err(TaskError::Replay {
                step: self.steps.len(),
                reason: "final state lacks the goal".into(),
            });
        }
        Ok(())
    }
}

/// Train / validation / test demonstrations with disjoint task sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<TrajectoryRecord>,
    pub val: Vec<TrajectoryRecord>,
    pub test: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise_rate: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 5000,
            n_val: 200,
            n_test: 200,
            noise_rate: 0.1,
        }
    }
}

/// Generates noisy demonstrations. Held-out tasks are drawn first; training tasks
/// never repeat a held-out task, though they may repeat each other.
pub fn generate_dataset(
    universe: &RecipeUniverse,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Dataset, TaskError> {
    if cfg.n_train == 0 || cfg.n_val == 0 || cfg.n_test == 0 {
        return Err(TaskError::Config("split sizes must be at least 1".into()));
    }
    let goals: Vec<&str> = universe.craftables().collect();
    if goals.is_empty() {
        return Err(TaskError::Config("universe has no craftable items".into()));
    }
    let mut held_out: BTreeSet<(String, Vec<String>)> = BTreeSet::new();
    let draw_split = |split: &'static str,
                      stream: u64,
                      n: usize,
                      unique: bool,
                      held_out: &mut BTreeSet<(String, Vec<String>)>|
     -> Result<Vec<TrajectoryRecord>, TaskError> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        let max_attempts = n.saturating_mul(50).max(1000);
        while out.len() < n {
            let mut rng = rng::substream(seed, stream, attempts as u64);
            attempts += 1;
            if attempts > max_attempts {
                return Err(TaskError::SplitExhausted { split, needed: n });
            }
            let goal = goals.choose(&mut rng).expect("non-empty");
            let task = sample_task(universe, goal, &mut rng)?;
            let key = task.key();
            if unique {
                if !held_out.insert(key) {
                    continue;
                }
            } else if held_out.contains(&key) {
                continue;
            }
            let plan = optimal_plan(&task.instruction)?;
            let noisy = inject_noise(&plan, cfg.noise_rate, &task.instruction, &mut rng);
            out.push(TrajectoryRecord::from_actions(task.instruction, &noisy));
        }
        Ok(out)
    };
    let val = draw_split("val", 1, cfg.n_val, true, &mut held_out)?;
    let test = draw_split("test", 2, cfg.n_test, true, &mut held_out)?;
    let train = draw_split("train", 0, cfg.n_train, false, &mut held_out)?;
    Ok(Dataset { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixtures::*;
    use alloc::vec;

    fn texts(plan: &[Action]) -> Vec<String> {
        plan.iter().map(|a| a.to_string()).collect()
    }

    #[test]
    fn trapdoor_plan() {
        let plan = optimal_plan(&trapdoor()).unwrap();
        assert_eq!(
            texts(&plan),
            vec![
                "get 2 birch logs",
                "craft 4 birch planks using 1 birch logs",
                "craft 4 birch planks using 1 birch logs",
                "craft 2 birch trapdoor using 6 birch planks",
            ]
        );
    }

    #[test]
    fn black_terracotta_plan_replays() {
        let instr = black_terracotta();
        let plan = optimal_plan(&instr).unwrap();
        assert_eq!(
            texts(&plan),
            vec![
                "get 8 terracotta",
                "get 1 wither rose",
                "craft 1 black dye using 1 wither rose",
                "craft 8 black terracotta using 8 terracotta, 1 black dye",
            ]
        );
        TrajectoryRecord::from_actions(instr, &plan)
            .verify()
            .unwrap();
    }

    #[test]
    fn base_goal_plan_is_single_get() {
        let instr = Instruction::new("stone", vec![recipe("craft 1 wall using 2 stone")]).unwrap();
        assert_eq!(texts(&optimal_plan(&instr).unwrap()), vec!["get 1 stone"]);
    }

    #[test]
    fn minimal_universe() {
        let cfg = UniverseConfig {
            n_items: 2,
            max_depth: 1,
            max_ingredients: 1,
            out_qty_range: (1, 1),
            max_ingredient_qty: 1,
        };
        let u = build_recipe_universe(&cfg, 3).unwrap();
        assert_eq!(u.recipes.len(), 1);
        assert_eq!(u.base_items.len(), 1);
        assert_eq!(u.recipes[0].ingredients[0].1, u.base_items[0]);
    }

    #[test]
    fn config_errors() {
        let mut cfg = UniverseConfig::default();
        cfg.n_items = 3;
        cfg.max_depth = 3;
        assert!(matches!(
            build_recipe_universe(&cfg, 0),
            Err(TaskError::Config(_))
        ));
        cfg = UniverseConfig {
            out_qty_range: (3, 1),
            ..UniverseConfig::default()
        };
        assert!(matches!(
            build_recipe_universe(&cfg, 0),
            Err(TaskError::Config(_))
        ));
    }

    #[test]
    fn zero_noise_is_identity() {
        let instr = trapdoor();
        let plan = optimal_plan(&instr).unwrap();
        let mut rng = rng::seeded(1);
        assert_eq!(inject_noise(&plan, 0.0, &instr, &mut rng), plan);
    }

    #[test]
    fn plan_to_thresholds_uses_holdings() {
        let instr = trapdoor();
        let s = Inventory::from_pairs([("birch planks", 4), ("birch logs", 1)]);
        let plan = plan_to_thresholds(&s, &[("birch planks", 8)], &instr).unwrap();
        assert_eq!(
            texts(&plan),
            vec!["craft 4 birch planks using 1 birch logs"]
        );
        assert!(plan_to_thresholds(&s, &[("diamond", 1)], &instr).is_none());
        assert!(plan_to_thresholds(&s, &[("birch planks", 2)], &instr)
            .unwrap()
            .is_empty());
    }
}
