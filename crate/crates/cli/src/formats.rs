//! On-disk formats: trajectories, segment datasets, remaps, checkpoints,
//! classifiers and recipe universes.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use craftplan_core::action::{parse_action, Action};
use craftplan_core::policy::{PolicyParams, Section, Shape, Weights};
use craftplan_core::subgoal::{ItemRemap, PhiDatasets, Subgoal};
use craftplan_core::tasks::{RecipeUniverse, Step, TrajectoryRecord};
use craftplan_core::world::{ValidityClassifier, VALIDITY_FEATURES};
use craftplan_core::{Instruction, Inventory};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bad(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------------------
// trajectories

fn inventory_json(inv: &Inventory) -> Value {
    Value::Object(inv.iter().map(|(k, v)| (k.to_string(), json!(v))).collect())
}

fn subgoal_json(g: &Subgoal) -> Value {
    Value::Object(g.iter().map(|(k, v)| (k.to_string(), json!(v))).collect())
}

fn json_inventory(v: &Value, line: usize) -> Result<Inventory, FormatError> {
    let map = v
        .as_object()
        .ok_or_else(|| bad(line, "inventory must be an object"))?;
    let mut pairs = Vec::with_capacity(map.len());
    for (k, c) in map {
        let c = c
            .as_u64()
            .and_then(|c| u32::try_from(c).ok())
            .ok_or_else(|| bad(line, "bad count"))?;
        pairs.push((k.as_str(), c));
    }
    Ok(Inventory::from_pairs(pairs))
}

pub fn record_to_json(r: &TrajectoryRecord) -> Value {
    json!({
        "goal": r.goal(),
        "commands": r.instruction.commands().iter().map(ToString::to_string).collect::<Vec<_>>(),
        "steps": r.steps.iter().map(|s| json!([s.action.to_string(), inventory_json(&s.state)])).collect::<Vec<_>>(),
    })
}

/// Parses one record and checks every stored state against a replay of the actions.
pub fn record_from_json(v: &Value, line: usize) -> Result<TrajectoryRecord, FormatError> {
    let goal = v["goal"]
        .as_str()
        .ok_or_else(|| bad(line, "missing goal"))?;
    let mut commands = Vec::new();
    for c in v["commands"]
        .as_array()
        .ok_or_else(|| bad(line, "missing commands"))?
    {
        let text = c
            .as_str()
            .ok_or_else(|| bad(line, "command must be a string"))?;
        match parse_action(text) {
            Ok(Action::Craft(r)) => commands.push(r),
            Ok(_) => return Err(bad(line, format!("`{text}` is not a craft command"))),
            Err(e) => return Err(bad(line, e.to_string())),
        }
    }
    let instruction = Instruction::new(goal, commands).map_err(|e| bad(line, e.to_string()))?;
    let mut actions = Vec::new();
    let mut states = Vec::new();
    for s in v["steps"]
        .as_array()
        .ok_or_else(|| bad(line, "missing steps"))?
    {
        let pair = s
            .as_array()
            .filter(|p| p.len() == 2)
            .ok_or_else(|| bad(line, "step must be [action, state]"))?;
        let text = pair[0]
            .as_str()
            .ok_or_else(|| bad(line, "action must be a string"))?;
        actions.push(parse_action(text).map_err(|e| bad(line, e.to_string()))?);
        states.push(json_inventory(&pair[1], line)?);
    }
    let record = TrajectoryRecord::from_actions(instruction, &actions);
    for (i, (Step { state, .. }, stored)) in record.steps.iter().zip(&states).enumerate() {
        if state != stored {
            return Err(bad(
                line,
                format!("step {i}: stored state does not match replay"),
            ));
        }
    }
    Ok(record)
}

pub fn write_records<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> Result<(), FormatError> {
    for r in records {
        writeln!(w, "{}", record_to_json(r))?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<TrajectoryRecord>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        out.push(record_from_json(&v, i + 1)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// segment datasets

/// Writes Φ (one transition per line) and Φ0 (one segment start per line).
/// `record` indexes the trajectory file the datasets were built from.
pub fn write_phi<W: Write, W0: Write>(
    mut phi: W,
    mut phi0: W0,
    data: &PhiDatasets,
    records: &[TrajectoryRecord],
) -> Result<(), FormatError> {
    let index_of = |instr: &Instruction| records.iter().position(|r| r.instruction == *instr);
    for e in &data.phi {
        let v = json!({
            "record": index_of(&e.instruction),
            "goal": e.instruction.goal(),
            "state": inventory_json(&e.state),
            "history": [inventory_json(&e.history[0]), inventory_json(&e.history[1])],
            "action": e.action.to_string(),
            "subgoal": subgoal_json(&e.subgoal),
        });
        writeln!(phi, "{v}")?;
    }
    for h in &data.phi0 {
        let v = json!({
            "record": index_of(&h.instruction),
            "goal": h.instruction.goal(),
            "index": h.index,
            "state": inventory_json(&h.state),
            "history": [inventory_json(&h.history[0]), inventory_json(&h.history[1])],
            "manager_history": [inventory_json(&h.manager_history[0]), inventory_json(&h.manager_history[1])],
            "subgoal": subgoal_json(&h.subgoal),
        });
        writeln!(phi0, "{v}")?;
    }
    Ok(())
}

/// Subgoal maps from the `subgoal` field of each line of a Φ or Φ0 file.
pub fn read_phi_subgoals<R: BufRead>(r: R) -> Result<Vec<Subgoal>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        let map: &Map<String, Value> = v["subgoal"]
            .as_object()
            .ok_or_else(|| bad(i + 1, "missing subgoal"))?;
        let mut pairs = Vec::new();
        for (k, c) in map {
            let c = c
                .as_u64()
                .and_then(|c| u32::try_from(c).ok())
                .ok_or_else(|| bad(i + 1, "bad count"))?;
            pairs.push((k.as_str(), c));
        }
        out.push(Subgoal::new(pairs).map_err(|e| bad(i + 1, e.to_string()))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// remap

pub fn write_remap<W: Write>(mut w: W, remap: &ItemRemap) -> Result<(), FormatError> {
    writeln!(w, "# p={}", remap.fraction())?;
    for (a, b) in remap.pairs() {
        writeln!(w, "{a}\t{b}")?;
    }
    Ok(())
}

pub fn read_remap<R: BufRead>(r: R) -> Result<ItemRemap, FormatError> {
    let mut p = 0.0;
    let mut pairs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# p=") {
            p = rest
                .trim()
                .parse()
                .map_err(|_| bad(i + 1, "bad fraction"))?;
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| bad(i + 1, "expected two tab-separated columns"))?;
        pairs.push((a.to_string(), b.to_string()));
    }
    Ok(ItemRemap::from_pairs(p, pairs))
}

// ---------------------------------------------------------------------------
// checkpoints

pub const CHECKPOINT_MAGIC: &str = "craftplan-checkpoint v1";

fn write_section<W: Write>(w: &mut W, name: &str, values: &[f64]) -> Result<(), FormatError> {
    writeln!(w, "[{name}] {}", values.len())?;
    let mut line = String::new();
    for chunk in values.chunks(16) {
        line.clear();
        for (i, v) in chunk.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v:e}").expect("writing to a String");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Text tensor file: a versioned header, the shape, then the live weights in
/// three sections and the shadow copy.
pub fn write_checkpoint<W: Write>(mut w: W, p: &PolicyParams) -> Result<(), FormatError> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(
        w,
        "vocab={} dim={} hidden={} temperature={:e} epsilon={:e}",
        p.shape.vocab, p.shape.dim, p.shape.hidden, p.temperature, p.epsilon
    )?;
    write_section(
        &mut w,
        "embeddings",
        p.section(Section::Embeddings, Weights::Live),
    )?;
    write_section(&mut w, "layer1", p.section(Section::Layer1, Weights::Live))?;
    write_section(&mut w, "layer2", p.section(Section::Layer2, Weights::Live))?;
    write_section(&mut w, "shadow", &p.shadow)?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<PolicyParams, FormatError> {
    let mut lines = r.lines().enumerate();
    let mut next = || -> Result<(usize, String), FormatError> {
        let (i, l) = lines
            .next()
            .ok_or_else(|| FormatError::Header("truncated checkpoint".into()))?;
        Ok((i + 1, l?))
    };
    let (_, magic) = next()?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(FormatError::Header(format!(
            "expected `{CHECKPOINT_MAGIC}`, found `{magic}`"
        )));
    }
    let (ln, header) = next()?;
    let field = |key: &str| -> Result<&str, FormatError> {
        header
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| bad(ln, format!("missing `{key}`")))
    };
    let num = |key: &str| -> Result<usize, FormatError> {
        field(key)?
            .parse()
            .map_err(|_| bad(ln, format!("bad `{key}`")))
    };
    let shape = Shape {
        vocab: num("vocab")?,
        dim: num("dim")?,
        hidden: num("hidden")?,
    };
    let mut p = PolicyParams::zeros(shape);
    p.temperature = field("temperature")?
        .parse()
        .map_err(|_| bad(ln, "bad temperature"))?;
    p.epsilon = field("epsilon")?
        .parse()
        .map_err(|_| bad(ln, "bad epsilon"))?;
    let mut theta = Vec::with_capacity(shape.len());
    let mut shadow = Vec::with_capacity(shape.len());
    for name in ["embeddings", "layer1", "layer2", "shadow"] {
        let (ln, head) = next()?;
        let expected = format!("[{name}] ");
        let n: usize = head
            .strip_prefix(&expected)
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad(ln, format!("expected section `{name}`")))?;
        let dst = if name == "shadow" {
            &mut shadow
        } else {
            &mut theta
        };
        let start = dst.len();
        while dst.len() - start < n {
            let (ln, l) = next()?;
            for tok in l.split_whitespace() {
                dst.push(
                    tok.parse()
                        .map_err(|_| bad(ln, format!("bad value `{tok}`")))?,
                );
            }
        }
        if dst.len() - start != n {
            return Err(bad(ln, format!("section `{name}` has the wrong length")));
        }
    }
    p.theta = theta;
    p.shadow = shadow;
    p.validate()
        .map_err(|e| FormatError::Header(e.to_string()))?;
    Ok(p)
}

// ---------------------------------------------------------------------------
// validity classifier

pub const CLASSIFIER_MAGIC: &str = "craftplan-validity v1";

pub fn write_classifier<W: Write>(mut w: W, c: &ValidityClassifier) -> Result<(), FormatError> {
    writeln!(w, "{CLASSIFIER_MAGIC}")?;
    writeln!(w, "{}", VALIDITY_FEATURES.join(","))?;
    writeln!(
        w,
        "{}",
        c.weights
            .iter()
            .map(|x| format!("{x:e}"))
            .collect::<Vec<_>>()
            .join(",")
    )?;
    writeln!(
        w,
        "threshold={:e} held_out_accuracy={:e}",
        c.threshold, c.held_out_accuracy
    )?;
    Ok(())
}

pub fn read_classifier<R: BufRead>(r: R) -> Result<ValidityClassifier, FormatError> {
    let lines: Vec<String> = r.lines().collect::<Result<_, _>>()?;
    if lines.len() < 4 || lines[0].trim() != CLASSIFIER_MAGIC {
        return Err(FormatError::Header(format!(
            "expected `{CLASSIFIER_MAGIC}` and three more lines"
        )));
    }
    let names: Vec<&str> = lines[1].split(',').collect();
    if names != VALIDITY_FEATURES {
        return Err(FormatError::Header(format!(
            "feature header must be {}",
            VALIDITY_FEATURES.join(",")
        )));
    }
    let values: Vec<f64> = lines[2]
        .split(',')
        .map(|t| t.parse().map_err(|_| bad(3, format!("bad weight `{t}`"))))
        .collect::<Result<_, _>>()?;
    let weights: [f64; 9] = values
        .try_into()
        .map_err(|_| bad(3, "expected 9 weights"))?;
    let kv = |key: &str| -> Result<f64, FormatError> {
        lines[3]
            .split_whitespace()
            .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(4, format!("missing `{key}`")))
    };
    Ok(ValidityClassifier {
        weights,
        threshold: kv("threshold")?,
        held_out_accuracy: kv("held_out_accuracy")?,
    })
}

// ---------------------------------------------------------------------------
// universe

pub const UNIVERSE_MAGIC: &str = "craftplan-universe v1";

pub fn write_universe<W: Write>(mut w: W, u: &RecipeUniverse) -> Result<(), FormatError> {
    writeln!(w, "{UNIVERSE_MAGIC}")?;
    writeln!(w, "depth {}", u.depth)?;
    for b in &u.base_items {
        writeln!(w, "base {b}")?;
    }
    for r in &u.recipes {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

pub fn read_universe<R: BufRead>(r: R) -> Result<RecipeUniverse, FormatError> {
    let mut lines = r.lines();
    let magic = lines.next().transpose()?.unwrap_or_default();
    if magic.trim() != UNIVERSE_MAGIC {
        return Err(FormatError::Header(format!("expected `{UNIVERSE_MAGIC}`")));
    }
    let mut u = RecipeUniverse {
        items: Vec::new(),
        base_items: Vec::new(),
        recipes: Vec::new(),
        depth: 0,
    };
    for (i, line) in lines.enumerate() {
        let line = line?;
        let ln = i + 2;
        if let Some(d) = line.strip_prefix("depth ") {
            u.depth = d.trim().parse().map_err(|_| bad(ln, "bad depth"))?;
        } else if let Some(b) = line.strip_prefix("base ") {
            u.base_items.push(b.trim().to_string());
        } else if line.starts_with("craft ") {
            match parse_action(&line) {
                Ok(Action::Craft(r)) => u.recipes.push(r),
                _ => return Err(bad(ln, "bad recipe")),
            }
        } else if !line.trim().is_empty() {
            return Err(bad(ln, format!("unexpected `{line}`")));
        }
    }
    u.items = u
        .base_items
        .iter()
        .cloned()
        .chain(u.recipes.iter().map(|r| r.out_item.clone()))
        .collect();
    Ok(u)
}
