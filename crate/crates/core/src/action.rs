//! The interaction grammar: bounding boxes, actions and their canonical
//! string form.
//!
//! Canonical strings look like
//!
//! ```text
//! click("NAME",[x1,y1][x2,y2])
//! scroll("NAME",[x1,y1][x2,y2],"DIR")
//! input("NAME",[x1,y1][x2,y2],"TEXT")
//! STATUS_TASK_COMPLETE
//! ```
//!
//! Quoted strings escape `"` and `\` with a backslash. The parser also
//! accepts typographic quotes and whitespace between tokens, which model
//! outputs frequently contain; formatting always produces the canonical form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const COMPLETE_TOKEN: &str = "STATUS_TASK_COMPLETE";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed action: {reason}")]
pub struct MalformedAction {
    pub reason: String,
}

impl MalformedAction {
    fn new(reason: impl Into<String>) -> Self {
        Self { reason: reason.into() }
    }
}

/// Screen rectangle in pixels, top-left `(x1, y1)` to bottom-right `(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    x1: u32,
    y1: u32,
    x2: u32,
    y2: u32,
}

impl BoundingBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self, MalformedAction> {
        if x2 < x1 || y2 < y1 {
            return Err(MalformedAction::new(format!(
                "inverted bounding box [{x1},{y1}][{x2},{y2}]"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> u32 {
        self.x1
    }

    pub fn y1(&self) -> u32 {
        self.y1
    }

    pub fn x2(&self) -> u32 {
        self.x2
    }

    pub fn y2(&self) -> u32 {
        self.y2
    }

    pub fn width(&self) -> u64 {
        u64::from(self.x2 - self.x1)
    }

    pub fn height(&self) -> u64 {
        u64::from(self.y2 - self.y1)
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let w = self.x2.min(other.x2).saturating_sub(self.x1.max(other.x1));
        let h = self.y2.min(other.y2).saturating_sub(self.y1.max(other.y1));
        u64::from(w) * u64::from(h)
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = MalformedAction;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}][{},{}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union. Zero-area boxes score 0 unless they are identical.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

impl FromStr for Direction {
    type Err = MalformedAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            other => Err(MalformedAction::new(format!("unknown scroll direction {other:?}"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Click,
    Scroll,
    Input,
    Complete,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::Scroll => "scroll",
            ActionKind::Input => "input",
            ActionKind::Complete => "complete",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A well-formed GUI action. Construct through the checked constructors or
/// [`parse_action`]; every value of this type satisfies the grammar.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Click {
        element: String,
        bbox: BoundingBox,
    },
    Scroll {
        element: String,
        bbox: BoundingBox,
        direction: Direction,
    },
    Input {
        element: String,
        bbox: BoundingBox,
        text: String,
    },
    Complete,
}

impl Action {
    pub fn click(element: impl Into<String>, bbox: BoundingBox) -> Result<Self, MalformedAction> {
        let element = checked_name(element.into())?;
        Ok(Action::Click { element, bbox })
    }

    pub fn scroll(
        element: impl Into<String>,
        bbox: BoundingBox,
        direction: Direction,
    ) -> Result<Self, MalformedAction> {
        let element = checked_name(element.into())?;
        Ok(Action::Scroll {
            element,
            bbox,
            direction,
        })
    }

    pub fn input(
        element: impl Into<String>,
        bbox: BoundingBox,
        text: impl Into<String>,
    ) -> Result<Self, MalformedAction> {
        let element = checked_name(element.into())?;
        let text = text.into();
        if text.is_empty() {
            return Err(MalformedAction::new("input text is empty"));
        }
        Ok(Action::Input { element, bbox, text })
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::Scroll { .. } => ActionKind::Scroll,
            Action::Input { .. } => ActionKind::Input,
            Action::Complete => ActionKind::Complete,
        }
    }

    pub fn element(&self) -> Option<&str> {
        match self {
            Action::Click { element, .. } | Action::Scroll { element, .. } | Action::Input { element, .. } => {
                Some(element)
            }
            Action::Complete => None,
        }
    }

    pub fn bbox(&self) -> Option<&BoundingBox> {
        match self {
            Action::Click { bbox, .. } | Action::Scroll { bbox, .. } | Action::Input { bbox, .. } => Some(bbox),
            Action::Complete => None,
        }
    }

    pub fn direction(&self) -> Option<Direction> {
        match self {
            Action::Scroll { direction, .. } => Some(*direction),
            _ => None,
        }
    }

    pub fn is_complete(&self) -> bool {
        matches!(self, Action::Complete)
    }

    /// The textual parameter compared by the text-match channel: the typed
    /// text for inputs, the element name otherwise.
    pub fn textual_content(&self) -> Option<&str> {
        match self {
            Action::Click { element, .. } | Action::Scroll { element, .. } => Some(element),
            Action::Input { text, .. } => Some(text),
            Action::Complete => None,
        }
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

fn checked_name(name: String) -> Result<String, MalformedAction> {
    if name.trim().is_empty() {
        return Err(MalformedAction::new("element name is empty"));
    }
    Ok(name)
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Complete => f.write_str(COMPLETE_TOKEN),
            Action::Click { element, bbox } => {
                f.write_str("click(")?;
                write_quoted(f, element)?;
                write!(f, ",{bbox})")
            }
            Action::Scroll {
                element,
                bbox,
                direction,
            } => {
                f.write_str("scroll(")?;
                write_quoted(f, element)?;
                write!(f, ",{bbox},")?;
                write_quoted(f, direction.as_str())?;
                f.write_str(")")
            }
            Action::Input { element, bbox, text } => {
                f.write_str("input(")?;
                write_quoted(f, element)?;
                write!(f, ",{bbox},")?;
                write_quoted(f, text)?;
                f.write_str(")")
            }
        }
    }
}

impl FromStr for Action {
    type Err = MalformedAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_action(&s).map_err(serde::de::Error::custom)
    }
}

/// Parse an action string. Accepts the canonical grammar plus incidental
/// whitespace, case-insensitive kind names and typographic quotes.
pub fn parse_action(text: &str) -> Result<Action, MalformedAction> {
    let text = text.trim();
    if text == COMPLETE_TOKEN {
        return Ok(Action::Complete);
    }
    let mut cur = Cursor::new(text);
    let kind = cur.ident();
    if kind.is_empty() {
        return Err(MalformedAction::new(format!("no action kind in {text:?}")));
    }
    let kind = kind.to_ascii_lowercase();
    cur.expect('(')?;
    let element = cur.quoted()?;
    cur.expect(',')?;
    let bbox = cur.bbox()?;
    let extra = if cur.peek_is(',') {
        cur.expect(',')?;
        Some(cur.quoted()?)
    } else {
        None
    };
    cur.expect(')')?;
    cur.skip_ws();
    if !cur.at_end() {
        return Err(MalformedAction::new(format!(
            "trailing characters after action: {:?}",
            cur.rest()
        )));
    }
    match (kind.as_str(), extra) {
        ("click", None) => Action::click(element, bbox),
        ("click", Some(_)) => Err(MalformedAction::new("click takes no extra parameter")),
        ("scroll", Some(dir)) => Action::scroll(element, bbox, dir.parse()?),
        ("scroll", None) => Err(MalformedAction::new("scroll requires a direction")),
        ("input", Some(t)) => Action::input(element, bbox, t),
        ("input", None) => Err(MalformedAction::new("input requires text")),
        (other, _) => Err(MalformedAction::new(format!("unknown action kind {other:?}"))),
    }
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    src: &'a str,
    consumed: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.chars().peekable(),
            src,
            consumed: 0,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        self.consumed += c.len_utf8();
        Some(c)
    }

    fn rest(&self) -> &'a str {
        &self.src[self.consumed..]
    }

    fn at_end(&mut self) -> bool {
        self.chars.peek().is_none()
    }

    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.bump();
        }
    }

    fn peek_is(&mut self, want: char) -> bool {
        self.skip_ws();
        self.chars.peek() == Some(&want)
    }

    fn ident(&mut self) -> String {
        let mut out = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_alphabetic() || c == '_' {
                out.push(c);
                self.bump();
            } else {
                break;
            }
        }
        out
    }

    fn expect(&mut self, want: char) -> Result<(), MalformedAction> {
        self.skip_ws();
        match self.bump() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(MalformedAction::new(format!("expected {want:?}, found {c:?}"))),
            None => Err(MalformedAction::new(format!("expected {want:?}, found end of input"))),
        }
    }

    fn quoted(&mut self) -> Result<String, MalformedAction> {
        self.skip_ws();
        match self.bump() {
            Some('"' | '\u{201c}' | '\u{201d}') => {}
            Some(c) => return Err(MalformedAction::new(format!("expected quote, found {c:?}"))),
            None => return Err(MalformedAction::new("expected quote, found end of input")),
        }
        let mut out = String::new();
        loop {
            match self.bump() {
                Some('\\') => match self.bump() {
                    Some(c) => out.push(c),
                    None => return Err(MalformedAction::new("dangling escape")),
                },
                Some('"' | '\u{201c}' | '\u{201d}') => return Ok(out),
                Some(c) => out.push(c),
                None => return Err(MalformedAction::new("unterminated string")),
            }
        }
    }

    fn number(&mut self) -> Result<u32, MalformedAction> {
        self.skip_ws();
        let mut digits = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                digits.push(c);
                self.bump();
            } else {
                break;
            }
        }
        if digits.is_empty() {
            return Err(MalformedAction::new("expected a coordinate"));
        }
        digits
            .parse()
            .map_err(|_| MalformedAction::new(format!("coordinate out of range: {digits}")))
    }

    fn point(&mut self) -> Result<(u32, u32), MalformedAction> {
        self.expect('[')?;
        let x = self.number()?;
        self.expect(',')?;
        let y = self.number()?;
        self.expect(']')?;
        Ok((x, y))
    }

    fn bbox(&mut self) -> Result<BoundingBox, MalformedAction> {
        let (x1, y1) = self.point()?;
        let (x2, y2) = self.point()?;
        BoundingBox::new(x1, y1, x2, y2)
    }
}

/// Something a policy proposed: either a parsed action or the raw text that
/// failed to parse. Malformed candidates fail the verifier's first rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidate {
    Action(Action),
    Malformed { raw: String, reason: String },
}

impl Candidate {
    pub fn from_text(text: &str) -> Self {
        match parse_action(text) {
            Ok(a) => Candidate::Action(a),
            Err(e) => Candidate::Malformed {
                raw: text.to_string(),
                reason: e.reason,
            },
        }
    }

    pub fn action(&self) -> Option<&Action> {
        match self {
            Candidate::Action(a) => Some(a),
            Candidate::Malformed { .. } => None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.action().is_some_and(Action::is_complete)
    }

    /// Text used when listing the candidate in prompts and records.
    pub fn display_text(&self) -> String {
        match self {
            Candidate::Action(a) => a.canonical(),
            Candidate::Malformed { raw, .. } => raw.clone(),
        }
    }
}

impl From<Action> for Candidate {
    fn from(a: Action) -> Self {
        Candidate::Action(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn parses_delivery_click() {
        let a = parse_action(r#"click("delivery_entry",[375,740][704,1032])"#).unwrap();
        assert_eq!(a, Action::click("delivery_entry", bb(375, 740, 704, 1032)).unwrap());
        assert_eq!(a.canonical(), r#"click("delivery_entry",[375,740][704,1032])"#);
    }

    #[test]
    fn parses_complete_token() {
        assert_eq!(parse_action("STATUS_TASK_COMPLETE").unwrap(), Action::Complete);
        assert_eq!(Action::Complete.canonical(), "STATUS_TASK_COMPLETE");
    }

    #[test]
    fn rejects_inverted_box() {
        let err = parse_action(r#"click("X",[10,10][5,5])"#).unwrap_err();
        assert!(err.reason.contains("inverted"), "{err}");
    }

    #[test]
    fn parses_scroll_and_input() {
        let s = parse_action(r#"scroll("Customize",[0,1474][1080,2400],"up")"#).unwrap();
        assert_eq!(s.direction(), Some(Direction::Up));
        let i = parse_action(r#"input("input",[46,242][848,346],"blact tea latte")"#).unwrap();
        assert_eq!(i.textual_content(), Some("blact tea latte"));
    }

    #[test]
    fn accepts_loose_spacing_and_curly_quotes() {
        let a = parse_action("scroll(\u{201c}Customize\",[0,1474][1080,2400],\u{201c}down\")").unwrap();
        assert_eq!(a.canonical(), r#"scroll("Customize",[0,1474][1080,2400],"down")"#);
        let b = parse_action(r#"Click ( "Search Box" , [1, 2] [3, 4] )"#).unwrap();
        assert_eq!(b.canonical(), r#"click("Search Box",[1,2][3,4])"#);
    }

    #[test]
    fn rejects_grammar_violations() {
        for bad in [
            "",
            "click",
            r#"click("a")"#,
            r#"click("a",[1,2][3,4],"x")"#,
            r#"scroll("a",[1,2][3,4])"#,
            r#"scroll("a",[1,2][3,4],"sideways")"#,
            r#"input("a",[1,2][3,4])"#,
            r#"input("a",[1,2][3,4],"")"#,
            r#"tap("a",[1,2][3,4])"#,
            r#"click("",[1,2][3,4])"#,
            r#"click("a",[1,2][3,4]) trailing"#,
            r#"click("a,[1,2][3,4])"#,
            r#"click("a",[-1,2][3,4])"#,
            "status_task_complete",
        ] {
            assert!(parse_action(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn escapes_quotes_in_names() {
        let a = Action::input("say \"hi\"", bb(0, 0, 1, 1), r"a\b").unwrap();
        let s = a.canonical();
        assert_eq!(s, r#"input("say \"hi\"",[0,0][1,1],"a\\b")"#);
        assert_eq!(parse_action(&s).unwrap(), a);
    }

    #[test]
    fn iou_reference_values() {
        let a = bb(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20, 20, 30, 30)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bb(10, 0, 20, 10)), 0.0);
        let z = bb(5, 5, 5, 5);
        assert_eq!(iou(&z, &z), 1.0);
        assert_eq!(iou(&z, &bb(5, 5, 5, 6)), 0.0);
        assert_eq!(iou(&z, &a), 0.0);
    }

    /// Pixel-counting oracle: unit cells [x, x+1) x [y, y+1) covered by each box.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let covers = |bx: &BoundingBox, x: u32, y: u32| x >= bx.x1() && x < bx.x2() && y >= bx.y1() && y < bx.y2();
        let max_x = a.x2().max(b.x2());
        let max_y = a.y2().max(b.y2());
        let (mut inter, mut union) = (0u64, 0u64);
        for x in 0..max_x {
            for y in 0..max_y {
                let (ia, ib) = (covers(a, x, y), covers(b, x, y));
                inter += u64::from(ia && ib);
                union += u64::from(ia || ib);
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_half_overlap_is_one_third() {
        let a = bb(0, 0, 10, 10);
        let b = bb(5, 0, 15, 10);
        let oracle = raster_iou(&a, &b);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &b) - oracle).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BoundingBox> {
            (0u32..40, 0u32..40, 1u32..20, 1u32..20)
                .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
        }

        fn arb_text() -> impl Strategy<Value = String> {
            "[a-zA-Z0-9 _\"\\\\\u{4e00}-\u{4e10}]{1,12}".prop_filter("non-blank", |s| !s.trim().is_empty())
        }

        pub(super) fn arb_action() -> impl Strategy<Value = Action> {
            let dir = prop::sample::select(Direction::ALL.to_vec());
            prop_oneof![
                Just(Action::Complete),
                (arb_text(), arb_box()).prop_map(|(n, b)| Action::click(n, b).unwrap()),
                (arb_text(), arb_box(), dir).prop_map(|(n, b, d)| Action::scroll(n, b, d).unwrap()),
                (arb_text(), arb_box(), arb_text()).prop_map(|(n, b, t)| Action::input(n, b, t).unwrap()),
            ]
        }

        proptest! {
            #[test]
            fn format_parse_round_trip(a in arb_action()) {
                let s = a.canonical();
                let back = parse_action(&s).unwrap();
                prop_assert_eq!(&back, &a);
                prop_assert_eq!(back.canonical(), s);
            }

            #[test]
            fn iou_symmetric_bounded_and_matches_raster(a in arb_box(), b in arb_box()) {
                let v = iou(&a, &b);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v, iou(&b, &a));
                prop_assert!((v - raster_iou(&a, &b)).abs() < 1e-12);
                prop_assert_eq!(v == 1.0, a == b);
            }
        }
    }
}
