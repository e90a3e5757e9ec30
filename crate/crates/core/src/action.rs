//! Recipes, primitive actions and the action grammar.
//!
//! ```text
//! get <uint> <item>
//! craft <uint> <item> using <uint> <item>(, <uint> <item>)*
//! ```
//!
//! Items are lowercase words separated by single spaces. Parsing tolerates
//! whitespace runs, a trailing state annotation (`, {...}`) and trailing
//! punctuation; rendering is always canonical.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use thiserror::Error;

/// A crafting rule: `out_qty` of `out_item` from the listed ingredients.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Recipe {
    pub out_item: String,
    pub out_qty: u32,
    pub ingredients: Vec<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecipeError {
    #[error("recipe for `{0}` has no ingredients")]
    NoIngredients(String),
    #[error("recipe for `{0}` has a zero quantity")]
    ZeroQuantity(String),
    #[error("recipe for `{0}` consumes its own output")]
    SelfReferential(String),
    #[error("`{0}` is not a canonical item name")]
    BadItemName(String),
}

impl Recipe {
    pub fn new<S: Into<String>>(
        out_item: S,
        out_qty: u32,
        ingredients: Vec<(u32, String)>,
    ) -> Result<Self, RecipeError> {
        let recipe = Recipe {
            out_item: out_item.into(),
            out_qty,
            ingredients,
        };
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<(), RecipeError> {
        let out = &self.out_item;
        if !is_canonical_item(out) {
            return Err(RecipeError::BadItemName(out.clone()));
        }
        if self.ingredients.is_empty() {
            return Err(RecipeError::NoIngredients(out.clone()));
        }
        if self.out_qty == 0 || self.ingredients.iter().any(|(q, _)| *q == 0) {
            return Err(RecipeError::ZeroQuantity(out.clone()));
        }
        if let Some((_, bad)) = self.ingredients.iter().find(|(_, i)| !is_canonical_item(i)) {
            return Err(RecipeError::BadItemName(bad.clone()));
        }
        if self.ingredients.iter().any(|(_, i)| i == out) {
            return Err(RecipeError::SelfReferential(out.clone()));
        }
        Ok(())
    }

    /// Ingredient quantities aggregated per item, in order of first mention.
    pub fn requirements(&self) -> Vec<(&str, u32)> {
        let mut req: Vec<(&str, u32)> = Vec::with_capacity(self.ingredients.len());
        for (q, item) in &self.ingredients {
            match req.iter_mut().find(|(i, _)| *i == item.as_str()) {
                Some(entry) => entry.1 += q,
                None => req.push((item.as_str(), *q)),
            }
        }
        req
    }

    /// Same output item and quantity and the same ingredient multiset.
    pub fn same_as(&self, other: &Recipe) -> bool {
        if self.out_item != other.out_item || self.out_qty != other.out_qty {
            return false;
        }
        let mut a = self.requirements();
        let mut b = other.requirements();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    pub fn uses(&self, item: &str) -> bool {
        self.ingredients.iter().any(|(_, i)| i == item)
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "craft {} {} using ", self.out_qty, self.out_item)?;
        for (i, (q, item)) in self.ingredients.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{q} {item}")?;
        }
        Ok(())
    }
}

/// A primitive employee action.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Get { qty: u32, item: String },
    Craft(Recipe),
}

impl Action {
    pub fn get<S: Into<String>>(qty: u32, item: S) -> Self {
        Action::Get {
            qty,
            item: item.into(),
        }
    }

    /// The item fetched or produced.
    pub fn item(&self) -> &str {
        match self {
            Action::Get { item, .. } => item,
            Action::Craft(r) => &r.out_item,
        }
    }

    /// The quantity fetched or produced.
    pub fn quantity(&self) -> u32 {
        match self {
            Action::Get { qty, .. } => *qty,
            Action::Craft(r) => r.out_qty,
        }
    }

    pub fn is_craft(&self) -> bool {
        matches!(self, Action::Craft(_))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Get { qty, item } => write!(f, "get {qty} {item}"),
            Action::Craft(r) => r.fmt(f),
        }
    }
}

impl core::str::FromStr for Action {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    UnknownVerb,
    ExpectedQuantity,
    ZeroQuantity,
    QuantityOverflow,
    ExpectedItem,
    BadItemChar,
    MissingUsing,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            ParseErrorKind::Empty => "empty action",
            ParseErrorKind::UnknownVerb => "expected `get` or `craft`",
            ParseErrorKind::ExpectedQuantity => "expected a quantity",
            ParseErrorKind::ZeroQuantity => "quantity must be at least 1",
            ParseErrorKind::QuantityOverflow => "quantity too large",
            ParseErrorKind::ExpectedItem => "expected an item name",
            ParseErrorKind::BadItemChar => "item names are lowercase words",
            ParseErrorKind::MissingUsing => "craft is missing `using`",
        };
        f.write_str(msg)
    }
}

/// Rejected action text, with the byte span of the offending fragment.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {}..{}: `{fragment}`", span.start, span.end)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub span: Range<usize>,
    pub fragment: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, text: &str, span: Range<usize>) -> Self {
        let fragment = text.get(span.clone()).unwrap_or("").to_string();
        ParseError {
            kind,
            span,
            fragment,
        }
    }
}

pub(crate) fn is_canonical_item(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with(' ')
        && !s.ends_with(' ')
        && !s.contains("  ")
        && s.bytes().all(|b| b.is_ascii_lowercase() || b == b' ')
}

/// Removes a trailing `, {...}` state annotation and trailing punctuation.
pub(crate) fn strip_annotations(text: &str) -> &str {
    let cut = match text.find(", {") {
        Some(i) => &text[..i],
        None => text,
    };
    cut.trim_end_matches(|c: char| c.is_whitespace() || ".,;:".contains(c))
}

/// Whitespace-separated words with their byte offsets.
struct Words<'a> {
    text: &'a str,
    words: Vec<Range<usize>>,
    pos: usize,
}

impl<'a> Words<'a> {
    fn new(text: &'a str, range: Range<usize>) -> Self {
        let mut words = Vec::new();
        let mut start = None;
        for (i, c) in text[range.clone()].char_indices() {
            let i = i + range.start;
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    words.push(s..i);
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            words.push(s..range.end);
        }
        Words {
            text,
            words,
            pos: 0,
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.words.get(self.pos).map(|r| &self.text[r.clone()])
    }

    fn next(&mut self) -> Option<(&'a str, Range<usize>)> {
        let r = self.words.get(self.pos)?.clone();
        self.pos += 1;
        Some((&self.text[r.clone()], r))
    }

    fn end_offset(&self) -> usize {
        self.words.last().map_or(0, |r| r.end)
    }

    fn quantity(&mut self) -> Result<u32, ParseError> {
        let Some((w, span)) = self.next() else {
            let end = self.end_offset();
            return Err(ParseError::new(
                ParseErrorKind::ExpectedQuantity,
                self.text,
                end..end,
            ));
        };
        if !w.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::new(
                ParseErrorKind::ExpectedQuantity,
                self.text,
                span,
            ));
        }
        let q: u32 = w.parse().map_err(|_| {
            ParseError::new(ParseErrorKind::QuantityOverflow, self.text, span.clone())
        })?;
        if q == 0 {
            return Err(ParseError::new(
                ParseErrorKind::ZeroQuantity,
                self.text,
                span,
            ));
        }
        Ok(q)
    }

    /// Item words up to (not including) `stop` or the end of input.
    fn item(&mut self, stop: Option<&str>) -> Result<String, ParseError> {
        let mut item = String::new();
        let mut first_span: Option<Range<usize>> = None;
        while let Some(w) = self.peek() {
            if stop == Some(w) && !item.is_empty() {
                break;
            }
            let (w, span) = self.next().expect("peeked");
            if !w.bytes().all(|b| b.is_ascii_lowercase()) {
                return Err(ParseError::new(
                    ParseErrorKind::BadItemChar,
                    self.text,
                    span,
                ));
            }
            first_span.get_or_insert(span);
            if !item.is_empty() {
                item.push(' ');
            }
            item.push_str(w);
        }
        if item.is_empty() {
            let end = self.end_offset();
            return Err(ParseError::new(
                ParseErrorKind::ExpectedItem,
                self.text,
                end..end,
            ));
        }
        Ok(item)
    }
}

/// Parses one action. Invalid text yields a [`ParseError`] carrying the span of
/// the offending fragment.
pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    let body = strip_annotations(text);
    let mut words = Words::new(text, 0..body.len());
    let Some((verb, span)) = words.next() else {
        return Err(ParseError::new(ParseErrorKind::Empty, text, 0..text.len()));
    };
    match verb {
        "get" => {
            let qty = words.quantity()?;
            let item = words.item(None)?;
            Ok(Action::Get { qty, item })
        }
        "craft" => {
            let out_qty = words.quantity()?;
            if !words.words[words.pos..]
                .iter()
                .any(|r| &text[r.clone()] == "using")
            {
                let end = words.end_offset();
                return Err(ParseError::new(
                    ParseErrorKind::MissingUsing,
                    text,
                    end..end,
                ));
            }
            let out_item = words.item(Some("using"))?;
            match words.next() {
                Some(("using", _)) => {}
                _ => {
                    let end = words.end_offset();
                    return Err(ParseError::new(
                        ParseErrorKind::MissingUsing,
                        text,
                        end..end,
                    ));
                }
            }
            let ingredients = parse_ingredient_list(
                text,
                words.words.get(words.pos).map(|r| r.start),
                body.len(),
            )?;
            Ok(Action::Craft(Recipe {
                out_item,
                out_qty,
                ingredients,
            }))
        }
        _ => Err(ParseError::new(ParseErrorKind::UnknownVerb, text, span)),
    }
}

fn parse_ingredient_list(
    text: &str,
    start: Option<usize>,
    end: usize,
) -> Result<Vec<(u32, String)>, ParseError> {
    let Some(start) = start else {
        return Err(ParseError::new(
            ParseErrorKind::ExpectedQuantity,
            text,
            end..end,
        ));
    };
    let mut out = Vec::new();
    let mut part_start = start;
    loop {
        let part_end = text[part_start..end]
            .find(',')
            .map_or(end, |i| part_start + i);
        let mut words = Words::new(text, part_start..part_end);
        if words.words.is_empty() {
            return Err(ParseError::new(
                ParseErrorKind::ExpectedQuantity,
                text,
                part_start..part_end,
            ));
        }
        let q = words.quantity()?;
        let item = words.item(None)?;
        out.push((q, item));
        if part_end == end {
            break;
        }
        part_start = part_end + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn parses_plain_get() {
        assert_eq!(
            parse_action("get 2 birch logs").unwrap(),
            Action::get(2, "birch logs")
        );
    }

    #[test]
    fn parses_craft_with_annotation() {
        let a = parse_action(
            "craft 4 birch planks using 1 birch logs, {'birch planks': 4, 'birch logs': 1}",
        )
        .unwrap();
        let expected = Action::Craft(Recipe {
            out_item: "birch planks".into(),
            out_qty: 4,
            ingredients: vec![(1, "birch logs".into())],
        });
        assert_eq!(a, expected);
        assert_eq!(a.to_string(), "craft 4 birch planks using 1 birch logs");
    }

    #[test]
    fn multi_ingredient_craft() {
        let a = parse_action("craft 8 black terracotta using 8 terracotta, 1 black dye.").unwrap();
        assert_eq!(
            a.to_string(),
            "craft 8 black terracotta using 8 terracotta, 1 black dye"
        );
    }

    #[test]
    fn word_quantities_are_rejected() {
        let err = parse_action("craft one plank using log").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::ExpectedQuantity);
        assert_eq!(err.fragment, "one");
        assert_eq!(err.span, 6..9);
    }

    #[test]
    fn error_paths() {
        assert_eq!(parse_action("").unwrap_err().kind, ParseErrorKind::Empty);
        assert_eq!(
            parse_action("mine 1 stone").unwrap_err().kind,
            ParseErrorKind::UnknownVerb
        );
        assert_eq!(
            parse_action("get 0 stone").unwrap_err().kind,
            ParseErrorKind::ZeroQuantity
        );
        assert_eq!(
            parse_action("get 2").unwrap_err().kind,
            ParseErrorKind::ExpectedItem
        );
        assert_eq!(
            parse_action("get 2 Stone").unwrap_err().kind,
            ParseErrorKind::BadItemChar
        );
        assert_eq!(
            parse_action("craft 1 stick from 2 bamboo")
                .unwrap_err()
                .kind,
            ParseErrorKind::MissingUsing
        );
        assert_eq!(
            parse_action("craft 1 stick using 2 bamboo, ").unwrap(),
            parse_action("craft 1 stick using 2 bamboo").unwrap()
        );
        assert_eq!(
            parse_action("craft 1 stick using 2 bamboo,, 1 a")
                .unwrap_err()
                .kind,
            ParseErrorKind::ExpectedQuantity
        );
        assert_eq!(
            parse_action("get 99999999999 a").unwrap_err().kind,
            ParseErrorKind::QuantityOverflow
        );
    }

    #[test]
    fn whitespace_runs_are_tolerated() {
        assert_eq!(
            parse_action("  get   3  iron   ingot ").unwrap(),
            Action::get(3, "iron ingot")
        );
    }

    #[test]
    fn recipe_validation() {
        assert!(Recipe::new("a", 1, vec![(1, "b".into())]).is_ok());
        assert_eq!(
            Recipe::new("a", 1, vec![]).unwrap_err(),
            RecipeError::NoIngredients("a".into())
        );
        assert_eq!(
            Recipe::new("a", 1, vec![(1, "a".into())]).unwrap_err(),
            RecipeError::SelfReferential("a".into())
        );
        assert_eq!(
            Recipe::new("a", 0, vec![(1, "b".into())]).unwrap_err(),
            RecipeError::ZeroQuantity("a".into())
        );
    }

    #[test]
    fn same_as_ignores_ingredient_order() {
        let a = Recipe::new("x", 1, vec![(1, "a".into()), (2, "b".into())]).unwrap();
        let b = Recipe::new("x", 1, vec![(2, "b".into()), (1, "a".into())]).unwrap();
        let c = Recipe::new("x", 2, vec![(2, "b".into()), (1, "a".into())]).unwrap();
        assert!(a.same_as(&b));
        assert!(!a.same_as(&c));
    }
}
