//! Correction grammar: the phrases the scripted user speaks and the parser
//! the oracle critic uses to read them back.
//!
//! Direction words follow the interpretation pointers given to the critic:
//! forward/backward is ±x, right/left is ±y, up/down is ±z and rotations
//! change yaw.

use regex::Regex;
use std::sync::OnceLock;

use crate::types::{GRIP_CLOSED, GRIP_OPEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
    Left,
    Right,
    Up,
    Down,
    CounterClockwise,
    Clockwise,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::Forward,
        Direction::Backward,
        Direction::Left,
        Direction::Right,
        Direction::Up,
        Direction::Down,
        Direction::CounterClockwise,
        Direction::Clockwise,
    ];

    /// Action component index and sign this direction moves along.
    pub fn axis(self) -> (usize, i32) {
        match self {
            Direction::Forward => (0, 1),
            Direction::Backward => (0, -1),
            Direction::Right => (1, 1),
            Direction::Left => (1, -1),
            Direction::Up => (2, 1),
            Direction::Down => (2, -1),
            Direction::CounterClockwise => (5, 1),
            Direction::Clockwise => (5, -1),
        }
    }

    pub fn from_axis(axis: usize, positive: bool) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.axis() == (axis, if positive { 1 } else { -1 }))
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Direction::CounterClockwise | Direction::Clockwise)
    }

    /// Phrase used after "move" (or "rotate") in long corrections.
    pub fn phrase(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backwards",
            Direction::Left => "to your left",
            Direction::Right => "to your right",
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::CounterClockwise => "counterclockwise",
            Direction::Clockwise => "clockwise",
        }
    }
}

/// What went wrong, as the scripted user describes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Complaint {
    /// Not making progress toward an object to reach.
    Reach { object: String, direction: Direction },
    /// Not making progress carrying toward a target.
    Aim { target: String, direction: Direction },
    /// Hovering at an object without closing.
    Grasp { object: String },
    /// Hovering at the target without opening.
    Release { object: String },
    /// Opened the gripper while carrying.
    Dropped { target: String, direction: Direction },
    /// Closed the gripper away from the object.
    ClosedEarly { object: String, direction: Direction },
}

/// Detailed correction with direction words.
pub fn long_text(c: &Complaint) -> String {
    match c {
        Complaint::Reach { object, direction } if direction.is_rotation() => {
            format!("Stop. You should rotate {} to align with the {object}.", direction.phrase())
        }
        Complaint::Reach { object, direction } => {
            format!("Stop. You should move {} to reach the {object}.", direction.phrase())
        }
        Complaint::Aim { target, direction } => {
            format!("Stop. You should move {} to aim at the {target}.", direction.phrase())
        }
        Complaint::Grasp { object } => format!("Stop. You should close the gripper to grasp the {object}."),
        Complaint::Release { object } => format!("Stop. You should open the gripper to release the {object}."),
        Complaint::Dropped { target, direction } => {
            format!("You should not release! And you should move {} to aim at the {target}.", direction.phrase())
        }
        Complaint::ClosedEarly { object, direction } => format!(
            "You should not close the gripper now, you should move {} to reach the {object} first.",
            direction.phrase()
        ),
    }
}

/// High-level, object-centric correction without direction words.
pub fn short_text(c: &Complaint) -> String {
    match c {
        Complaint::Reach { object, .. } => format!("Move closer to the {object}."),
        Complaint::Aim { target, .. } => format!("You should aim at the {target}."),
        Complaint::Grasp { object } => format!("Grasp the {object}."),
        Complaint::Release { object } => format!("Release the {object}."),
        Complaint::Dropped { .. } => "You should not release!".to_string(),
        Complaint::ClosedEarly { .. } => "You should not close the gripper now.".to_string(),
    }
}

/// Gripper decision carried by a correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GripDirective {
    Close,
    Open,
    Unchanged,
}

impl GripDirective {
    /// The grip command, or `None` for unchanged.
    pub fn value(self) -> Option<i32> {
        match self {
            GripDirective::Close => Some(GRIP_CLOSED),
            GripDirective::Open => Some(GRIP_OPEN),
            GripDirective::Unchanged => None,
        }
    }

    pub fn from_value(v: Option<i32>) -> Self {
        match v {
            Some(GRIP_CLOSED) => GripDirective::Close,
            Some(GRIP_OPEN) => GripDirective::Open,
            _ => GripDirective::Unchanged,
        }
    }
}

/// Everything the grammar can recover from a correction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCorrection {
    pub grip: GripDirective,
    pub directions: Vec<Direction>,
    /// Object named in an object-centric phrase ("closer to the X", "aim at the X").
    pub focus: Option<String>,
}

impl ParsedCorrection {
    pub fn is_empty(&self) -> bool {
        self.grip == GripDirective::Unchanged && self.directions.is_empty() && self.focus.is_none()
    }
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[a-z]+").unwrap())
}

fn focus_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:closer to|aim(?: it)? at) the ([a-z][a-z ]*?)(?:[.!,]|$| first)").unwrap())
}

fn grasp_imperative_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[.!?]\s*)grasp the ").unwrap())
}

/// Reads the gripper decision from a correction.
pub fn parse_grip(text: &str) -> GripDirective {
    let t = text.to_lowercase();
    if t.contains("not release") || t.contains("not open") || t.contains("keep the gripper closed") {
        GripDirective::Close
    } else if t.contains("not close") {
        GripDirective::Open
    } else if t.contains("close the gripper") || grasp_imperative_re().is_match(&t) {
        GripDirective::Close
    } else if t.contains("open the gripper") || t.contains("release the") {
        GripDirective::Open
    } else {
        GripDirective::Unchanged
    }
}

pub fn parse(text: &str) -> ParsedCorrection {
    let lower = text.to_lowercase();
    let mut directions = Vec::new();
    fn push(directions: &mut Vec<Direction>, d: Direction) {
        if !directions.contains(&d) {
            directions.push(d);
        }
    }
    let mut saw_rotate = false;
    for w in word_re().find_iter(&lower).map(|m| m.as_str()) {
        match w {
            "forward" | "forwards" => push(&mut directions, Direction::Forward),
            "backward" | "backwards" => push(&mut directions, Direction::Backward),
            "left" => push(&mut directions, Direction::Left),
            "right" => push(&mut directions, Direction::Right),
            "up" | "upward" | "upwards" => push(&mut directions, Direction::Up),
            "down" | "downward" | "downwards" => push(&mut directions, Direction::Down),
            "counterclockwise" | "anticlockwise" => push(&mut directions, Direction::CounterClockwise),
            "clockwise" => push(&mut directions, Direction::Clockwise),
            "rotate" | "turn" => saw_rotate = true,
            _ => {}
        }
    }
    if saw_rotate && !directions.iter().any(|d| d.is_rotation()) {
        push(&mut directions, Direction::CounterClockwise);
        push(&mut directions, Direction::Clockwise);
    }
    let focus = focus_re().captures(&lower).map(|c| c[1].trim().to_string());
    ParsedCorrection { grip: parse_grip(text), directions, focus }
}
