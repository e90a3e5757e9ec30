//! The crafting environment: task instructions, exact inventory dynamics and the
//! ultimate-goal test.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::action::{Action, Recipe, RecipeError};
use crate::inventory::Inventory;

/// Default primitive step budget per episode.
pub const DEFAULT_STEP_BUDGET: u32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("invalid command in instruction: {0}")]
    Recipe(#[from] RecipeError),
    #[error("`{0}` is not a canonical item name")]
    BadGoal(String),
    #[error("episode already terminated")]
    Terminated,
}

/// A task: the goal item and the ordered crafting commands that come with it.
///
/// An item is gettable (a base item) when no command produces it and it appears in
/// the transitive ingredient closure of the goal. A goal without any recipe is
/// itself a base item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    goal: String,
    commands: Vec<Recipe>,
    closure: Vec<String>,
    base_items: Vec<String>,
}

impl Instruction {
    pub fn new<S: Into<String>>(goal: S, commands: Vec<Recipe>) -> Result<Self, EnvError> {
        let goal = goal.into();
        if !crate::action::is_canonical_item(&goal) {
            return Err(EnvError::BadGoal(goal));
        }
        for c in &commands {
            c.validate()?;
        }
        let closure = goal_closure(&goal, &commands);
        let produced: BTreeSet<&str> = commands.iter().map(|c| c.out_item.as_str()).collect();
        let in_closure: BTreeSet<&str> = closure.iter().map(String::as_str).collect();
        // Base items ordered by first mention in the command list.
        let mut base_items: Vec<String> = Vec::new();
        let push_base = |item: &str, out: &mut Vec<String>| {
            if in_closure.contains(item)
                && !produced.contains(item)
                && !out.iter().any(|b| b == item)
            {
                out.push(item.into());
            }
        };
        for c in &commands {
            for (_, item) in &c.ingredients {
                push_base(item, &mut base_items);
            }
        }
        push_base(&goal, &mut base_items);
        Ok(Instruction {
            goal,
            commands,
            closure,
            base_items,
        })
    }

    pub fn goal(&self) -> &str {
        &self.goal
    }

    pub fn commands(&self) -> &[Recipe] {
        &self.commands
    }

    /// Gettable items, ordered by first mention in the command list.
    pub fn base_items(&self) -> &[String] {
        &self.base_items
    }

    pub fn is_base(&self, item: &str) -> bool {
        self.base_items.iter().any(|b| b == item)
    }

    /// Items reachable from the goal through ingredient edges (goal first, BFS order).
    pub fn closure(&self) -> &[String] {
        &self.closure
    }

    pub fn in_closure(&self, item: &str) -> bool {
        self.closure.iter().any(|c| c == item)
    }

    /// First command producing `item`.
    pub fn recipe_for(&self, item: &str) -> Option<&Recipe> {
        self.commands.iter().find(|c| c.out_item == item)
    }

    pub fn contains_recipe(&self, recipe: &Recipe) -> bool {
        self.commands.iter().any(|c| c.same_as(recipe))
    }
}

fn goal_closure(goal: &str, commands: &[Recipe]) -> Vec<String> {
    let mut seen: Vec<String> = alloc::vec![goal.into()];
    let mut head = 0;
    while head < seen.len() {
        let item = seen[head].clone();
        head += 1;
        for c in commands.iter().filter(|c| c.out_item == item) {
            for (_, ing) in &c.ingredients {
                if !seen.iter().any(|s| s == ing) {
                    seen.push(ing.clone());
                }
            }
        }
    }
    seen
}

/// Result of one primitive step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub next: Inventory,
    pub valid: bool,
    pub done: bool,
    pub reward: u8,
}

/// True when the inventory holds at least one goal item.
pub fn ultimate_goal_achieved(state: &Inventory, goal: &str) -> bool {
    state.count(goal) >= 1
}

/// Whether `action` can be executed from `state` under `instruction`.
pub fn is_valid(state: &Inventory, action: &Action, instruction: &Instruction) -> bool {
    match action {
        Action::Get { qty, item } => *qty >= 1 && instruction.is_base(item),
        Action::Craft(recipe) => {
            instruction.contains_recipe(recipe) && state.satisfies(recipe.requirements())
        }
    }
}

/// Exact dynamics. A rejected action leaves the state untouched.
pub fn apply_action(state: &Inventory, action: &Action, instruction: &Instruction) -> StepOutcome {
    let valid = is_valid(state, action, instruction);
    let next = if valid {
        let mut next = state.clone();
        match action {
            Action::Get { qty, item } => next.add(item, *qty),
            Action::Craft(r) => next.craft(&r.requirements(), &r.out_item, r.out_qty),
        }
        next
    } else {
        state.clone()
    };
    let done = ultimate_goal_achieved(&next, instruction.goal());
    StepOutcome {
        next,
        valid,
        done,
        reward: u8::from(done),
    }
}

/// An episode with a primitive step budget.
#[derive(Debug, Clone)]
pub struct EpisodeState<'a> {
    instruction: &'a Instruction,
    state: Inventory,
    steps: u32,
    budget: u32,
    terminal: bool,
    reward: u8,
    last_valid: bool,
}

impl<'a> EpisodeState<'a> {
    pub fn new(instruction: &'a Instruction, budget: u32) -> Self {
        Self::from_state(instruction, Inventory::new(), budget)
    }

    pub fn from_state(instruction: &'a Instruction, state: Inventory, budget: u32) -> Self {
        let done = ultimate_goal_achieved(&state, instruction.goal());
        EpisodeState {
            instruction,
            terminal: done || budget == 0,
            reward: u8::from(done),
            state,
            steps: 0,
            budget,
            last_valid: true,
        }
    }

    pub fn instruction(&self) -> &'a Instruction {
        self.instruction
    }

    pub fn state(&self) -> &Inventory {
        &self.state
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn reward(&self) -> u8 {
        self.reward
    }

    pub fn last_valid(&self) -> bool {
        self.last_valid
    }

    /// Applies `action`; terminal once the goal is reached or the budget is spent.
    pub fn step(self, action: &Action) -> Result<Self, EnvError> {
        if self.terminal {
            return Err(EnvError::Terminated);
        }
        let out = apply_action(&self.state, action, self.instruction);
        let steps = self.steps + 1;
        Ok(EpisodeState {
            instruction: self.instruction,
            terminal: out.done || steps >= self.budget,
            reward: out.reward,
            state: out.next,
            steps,
            budget: self.budget,
            last_valid: out.valid,
        })
    }
}

/// Advances an episode by one action.
pub fn run_episode_step<'a>(
    ep: EpisodeState<'a>,
    action: &Action,
) -> Result<EpisodeState<'a>, EnvError> {
    ep.step(action)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::action::parse_action;
    use alloc::vec::Vec;

    pub fn recipe(text: &str) -> Recipe {
        match parse_action(text).unwrap() {
            Action::Craft(r) => r,
            other => panic!("not a craft: {other}"),
        }
    }

    /// Birch trapdoor task with a distractor slab recipe.
    pub fn trapdoor() -> Instruction {
        Instruction::new(
            "birch trapdoor",
            [
                "craft 6 birch slab using 3 birch planks",
                "craft 4 birch planks using 1 birch logs",
                "craft 2 birch trapdoor using 6 birch planks",
            ]
            .iter()
            .map(|t| recipe(t))
            .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    pub fn black_terracotta() -> Instruction {
        Instruction::new(
            "black terracotta",
            [
                "craft 1 black dye using 1 wither rose",
                "craft 8 black terracotta using 8 terracotta, 1 black dye",
            ]
            .iter()
            .map(|t| recipe(t))
            .collect::<Vec<_>>(),
        )
        .unwrap()
    }
}
