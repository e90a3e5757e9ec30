//! Candidate actions for the employee and candidate subgoals for the manager.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::action::Action;
use crate::env::{apply_action, Instruction};
use crate::inventory::Inventory;
use crate::subgoal::{instruction_requirements, strip_quantities, Subgoal, SubgoalMode};
use crate::tasks::plan_to_thresholds;

/// Every command of the instruction, then `get q b` for each gettable item `b`
/// with `q` in `{1}` and the quantities `b` is used in.
pub fn enumerate_employee_candidates(_state: &Inventory, instruction: &Instruction) -> Vec<Action> {
    let mut out: Vec<Action> = instruction
        .commands()
        .iter()
        .cloned()
        .map(Action::Craft)
        .collect();
    for b in instruction.base_items() {
        let mut qtys: Vec<u32> = alloc::vec![1];
        for c in instruction.commands() {
            for (q, i) in &c.ingredients {
                if i == b && !qtys.contains(q) {
                    qtys.push(*q);
                }
            }
        }
        qtys.sort_unstable();
        out.extend(qtys.into_iter().map(|q| Action::get(q, b.as_str())));
    }
    out
}

fn push_unique(out: &mut Vec<Subgoal>, g: Subgoal) {
    if !out.contains(&g) {
        out.push(g);
    }
}

/// Requirement-style candidates: `{x: q}` and `{x: 1}` for every item of the goal's
/// requirement list, then `{goal: 1}`.
fn requirement_candidates(instruction: &Instruction) -> Vec<Subgoal> {
    let mut out = Vec::new();
    for (x, q) in instruction_requirements(instruction) {
        push_unique(&mut out, Subgoal::single(x.as_str(), q));
        push_unique(&mut out, Subgoal::single(x, 1));
    }
    push_unique(&mut out, Subgoal::single(instruction.goal(), 1));
    out
}

/// Inventories reachable by one closure recipe from `state`, or from `state` with
/// gettable items raised to the full-plan totals when the recipe is not yet
/// feasible; then `{goal: 1}`.
fn snapshot_candidates(state: &Inventory, instruction: &Instruction) -> Vec<Subgoal> {
    let mut totals: BTreeMap<String, u32> = BTreeMap::new();
    if let Some(plan) =
        plan_to_thresholds(&Inventory::new(), &[(instruction.goal(), 1)], instruction)
    {
        for a in plan {
            if let Action::Get { qty, item } = a {
                *totals.entry(item).or_default() += qty;
            }
        }
    }
    let mut raised = state.clone();
    for (b, &q) in &totals {
        let have = raised.count(b);
        if have < q {
            raised.add(b, q - have);
        }
    }
    let mut out = Vec::new();
    for item in instruction.closure() {
        let Some(r) = instruction.recipe_for(item) else {
            continue;
        };
        let craft = Action::Craft(r.clone());
        for from in [state, &raised] {
            let step = apply_action(from, &craft, instruction);
            if step.valid {
                if let Ok(g) = Subgoal::from_inventory(&step.next) {
                    push_unique(&mut out, g);
                }
                break;
            }
        }
    }
    push_unique(&mut out, Subgoal::single(instruction.goal(), 1));
    out
}

/// Candidate subgoals for the manager under a decomposition mode.
pub fn enumerate_manager_candidates(
    state: &Inventory,
    instruction: &Instruction,
    mode: &SubgoalMode,
) -> Vec<Subgoal> {
    match mode {
        SubgoalMode::Llm => requirement_candidates(instruction),
        SubgoalMode::NoQuantity => {
            let mut out = Vec::new();
            for g in requirement_candidates(instruction) {
                push_unique(&mut out, strip_quantities(&g));
            }
            out
        }
        SubgoalMode::Remap(r) => {
            let mut out = Vec::new();
            for g in requirement_candidates(instruction) {
                push_unique(&mut out, r.apply(&g));
            }
            out
        }
        SubgoalMode::Hand => snapshot_candidates(state, instruction),
        SubgoalMode::Flat => alloc::vec![Subgoal::single(instruction.goal(), 1)],
    }
}
