//! Inventory multiset.
//!
//! Entries keep an insertion order that is used only for rendering. Equality is
//! order-insensitive: two inventories are equal when they hold the same counts.
//!
//! Ordering rules, chosen so rendered states are stable across replays:
//! - `get` of a new item appends it; `get` of a held item updates it in place;
//! - a craft removes every consumed ingredient entry, adds the product (in place if
//!   already held, appended otherwise), then re-appends partially consumed
//!   ingredients in recipe order.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Default)]
pub struct Inventory {
    entries: Vec<(String, u32)>,
}

impl Inventory {
    pub const EMPTY: Inventory = Inventory {
        entries: Vec::new(),
    };

    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an inventory from `(item, count)` pairs in order, merging repeated
    /// items and dropping zero counts.
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, u32)>,
        S: AsRef<str>,
    {
        let mut inv = Self::new();
        for (item, count) in pairs {
            inv.add(item.as_ref(), count);
        }
        inv
    }

    pub fn count(&self, item: &str) -> u32 {
        self.position(item).map_or(0, |i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> + '_ {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn contains_at_least(&self, item: &str, qty: u32) -> bool {
        self.count(item) >= qty
    }

    /// Adds `qty` of `item`. Zero is a no-op.
    pub fn add(&mut self, item: &str, qty: u32) {
        if qty == 0 {
            return;
        }
        match self.position(item) {
            Some(i) => self.entries[i].1 = self.entries[i].1.saturating_add(qty),
            None => self.entries.push((item.to_string(), qty)),
        }
    }

    /// Returns a copy with `qty` of `item` added.
    pub fn with_added(&self, item: &str, qty: u32) -> Self {
        let mut next = self.clone();
        next.add(item, qty);
        next
    }

    /// True when every `(item, qty)` requirement is held.
    pub fn satisfies<'a, I>(&self, requirements: I) -> bool
    where
        I: IntoIterator<Item = (&'a str, u32)>,
    {
        requirements
            .into_iter()
            .all(|(item, qty)| self.count(item) >= qty)
    }

    /// Applies a craft in place. The caller must have checked that the
    /// aggregated `requirements` are held and do not mention `out_item`.
    pub(crate) fn craft(&mut self, requirements: &[(&str, u32)], out_item: &str, out_qty: u32) {
        let mut leftovers: Vec<(String, u32)> = Vec::new();
        for &(item, qty) in requirements {
            let i = self
                .position(item)
                .expect("craft requirements checked by caller");
            let (name, held) = self.entries.remove(i);
            let rest = held - qty;
            if rest > 0 {
                leftovers.push((name, rest));
            }
        }
        self.add(out_item, out_qty);
        self.entries.extend(leftovers);
    }

    /// Entries sorted by item name, for order-insensitive keys.
    pub fn canonical(&self) -> Vec<(&str, u32)> {
        let mut v: Vec<(&str, u32)> = self.iter().collect();
        v.sort_unstable();
        v
    }

    /// Python-dict style rendering, e.g. `{'birch planks': 4, 'birch logs': 1}`.
    pub fn render(&self) -> String {
        render_map(self.iter())
    }

    fn position(&self, item: &str) -> Option<usize> {
        self.entries.iter().position(|(k, _)| k == item)
    }
}

impl PartialEq for Inventory {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().all(|(k, v)| other.count(k) == v)
    }
}

impl Eq for Inventory {}

impl fmt::Display for Inventory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub(crate) fn render_map<'a>(entries: impl Iterator<Item = (&'a str, u32)>) -> String {
    let mut out = String::from("{");
    for (i, (k, v)) in entries.enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('\'');
        out.push_str(k);
        out.push_str("': ");
        out.push_str(&v.to_string());
    }
    out.push('}');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_counts_are_never_stored() {
        let inv = Inventory::from_pairs([("a", 0), ("b", 2)]);
        assert_eq!(inv.len(), 1);
        assert_eq!(inv.count("a"), 0);
        assert_eq!(inv.render(), "{'b': 2}");
    }

    #[test]
    fn equality_ignores_order() {
        let a = Inventory::from_pairs([("x", 1), ("y", 2)]);
        let b = Inventory::from_pairs([("y", 2), ("x", 1)]);
        assert_eq!(a, b);
        assert_ne!(a.render(), b.render());
    }

    #[test]
    fn craft_reorders_partially_consumed_ingredients() {
        let mut inv = Inventory::from_pairs([("birch logs", 2)]);
        inv.craft(&[("birch logs", 1)], "birch planks", 4);
        assert_eq!(inv.render(), "{'birch planks': 4, 'birch logs': 1}");
        inv.craft(&[("birch logs", 1)], "birch planks", 4);
        assert_eq!(inv.render(), "{'birch planks': 8}");
    }

    #[test]
    fn empty_renders_as_braces() {
        assert_eq!(Inventory::new().render(), "{}");
    }
}
