//! Mark space of a visualization and the click streams recorded over it.
//!
//! Positions are normalized to the unit square at load time, so every
//! downstream parameter (drift and observation spreads in particular) is a
//! fraction of the canvas width or height.
//!
//! Two file formats are supported:
//!
//! * visualization spec: one UTF-8 JSON document
//!   `{"width": .., "height": .., "color_count": .., "marks": [{"id", "x", "y", "color"}]}`
//!   with positions in pixels. Unknown fields (extra channels) are ignored.
//! * click log: UTF-8 JSON lines `{"t": .., "mark_id": ..}`, `t` optional and
//!   renumbered `1..n` in file order.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub type MarkId = u64;

/// Categorical color index, `1..=K`.
pub type Color = u32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mark<T> {
    pub id: MarkId,
    pub x: T,
    pub y: T,
    pub color: Color,
}

#[derive(Debug, thiserror::Error)]
pub enum MarkSpaceError {
    #[error("failed to read visualization spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed visualization spec: {0}")]
    Malformed(#[source] serde_json::Error),
    #[error("invalid canvas size {width}x{height}")]
    InvalidCanvas { width: f64, height: f64 },
    #[error("color_count must be at least 1")]
    NoColors,
    #[error("visualization has no marks")]
    Empty,
    #[error("mark record {index}: duplicate id {id}")]
    DuplicateId { index: usize, id: MarkId },
    #[error("mark record {index} (id {id}): color {color} outside 1..={color_count}")]
    ColorOutOfRange {
        index: usize,
        id: MarkId,
        color: i64,
        color_count: Color,
    },
    #[error("mark record {index} (id {id}): position ({x}, {y}) outside the {width}x{height} canvas")]
    OutOfCanvas {
        index: usize,
        id: MarkId,
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum ClickLogError {
    #[error("failed to read click log: {0}")]
    Io(#[from] std::io::Error),
    #[error("click log line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("click log line {line}: unknown mark id {mark_id}")]
    UnknownMark { line: usize, mark_id: MarkId },
    #[error("click log contains no clicks")]
    Empty,
}

/// The candidate set for prediction: all marks of a visualization, indexed by
/// id and by color. Immutable once built.
#[derive(Clone, Debug)]
pub struct MarkSpace<T> {
    marks: Vec<Mark<T>>,
    color_count: Color,
    by_color: Vec<Vec<usize>>,
    by_id: HashMap<MarkId, usize>,
}

impl<T: Scalar> MarkSpace<T> {
    /// Builds a space from marks already normalized to the unit square.
    pub fn new(marks: Vec<Mark<T>>, color_count: Color) -> Result<Self, MarkSpaceError> {
        if color_count < 1 {
            return Err(MarkSpaceError::NoColors);
        }
        if marks.is_empty() {
            return Err(MarkSpaceError::Empty);
        }
        let mut by_id = HashMap::with_capacity(marks.len());
        let mut by_color = vec![Vec::new(); color_count as usize];
        for (index, mark) in marks.iter().enumerate() {
            let (x, y) = (mark.x.as_f64(), mark.y.as_f64());
            if !((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)) {
                return Err(MarkSpaceError::OutOfCanvas {
                    index,
                    id: mark.id,
                    x,
                    y,
                    width: 1.0,
                    height: 1.0,
                });
            }
            if mark.color < 1 || mark.color > color_count {
                return Err(MarkSpaceError::ColorOutOfRange {
                    index,
                    id: mark.id,
                    color: mark.color as i64,
                    color_count,
                });
            }
            if by_id.insert(mark.id, index).is_some() {
                return Err(MarkSpaceError::DuplicateId { index, id: mark.id });
            }
            by_color[mark.color as usize - 1].push(index);
        }
        Ok(Self {
            marks,
            color_count,
            by_color,
            by_id,
        })
    }

    pub fn marks(&self) -> &[Mark<T>] {
        &self.marks
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// Number of colors `K`; colors are `1..=K`.
    pub fn color_count(&self) -> Color {
        self.color_count
    }

    pub fn mark(&self, id: MarkId) -> Option<&Mark<T>> {
        self.by_id.get(&id).map(|&i| &self.marks[i])
    }

    pub fn index_of(&self, id: MarkId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    /// Indices (into [`marks`](Self::marks)) of the marks with color `c`.
    /// Empty for colors outside `1..=K`.
    pub fn indices_of_color(&self, c: Color) -> &[usize] {
        match c.checked_sub(1) {
            Some(i) if (i as usize) < self.by_color.len() => &self.by_color[i as usize],
            _ => &[],
        }
    }

    pub fn ids_of_color(&self, c: Color) -> impl Iterator<Item = MarkId> + '_ {
        self.indices_of_color(c).iter().map(|&i| self.marks[i].id)
    }

    /// Number of marks with color `c`.
    pub fn color_size(&self, c: Color) -> usize {
        self.indices_of_color(c).len()
    }

    /// Builds the click event for `mark_id` at time `t`.
    pub fn click(&self, t: usize, mark_id: MarkId) -> Option<ClickEvent<T>> {
        self.mark(mark_id).map(|m| ClickEvent::on(t, m))
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> MarkSpace<U> {
        let marks = self
            .marks
            .iter()
            .map(|m| Mark {
                id: m.id,
                x: U::of(m.x.as_f64()),
                y: U::of(m.y.as_f64()),
                color: m.color,
            })
            .collect();
        MarkSpace::new(marks, self.color_count).expect("casting preserves validity")
    }
}

/// One observed click: the mark clicked at time `t` and its features
/// `(x', y', k')`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClickEvent<T> {
    pub t: usize,
    pub mark_id: MarkId,
    pub x: T,
    pub y: T,
    pub color: Color,
}

impl<T: Scalar> ClickEvent<T> {
    pub fn on(t: usize, mark: &Mark<T>) -> Self {
        Self {
            t,
            mark_id: mark.id,
            x: mark.x,
            y: mark.y,
            color: mark.color,
        }
    }
}

/// On-disk visualization spec, positions in pixels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VisSpec {
    pub width: f64,
    pub height: f64,
    pub color_count: i64,
    pub marks: Vec<MarkRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkRecord {
    pub id: MarkId,
    pub x: f64,
    pub y: f64,
    pub color: i64,
}

impl VisSpec {
    /// Validates and normalizes into a [`MarkSpace`].
    pub fn into_space<T: Scalar>(self) -> Result<MarkSpace<T>, MarkSpaceError> {
        let (width, height) = (self.width, self.height);
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(MarkSpaceError::InvalidCanvas { width, height });
        }
        if self.color_count < 1 || self.color_count > Color::MAX as i64 {
            return Err(MarkSpaceError::NoColors);
        }
        let color_count = self.color_count as Color;
        let mut marks = Vec::with_capacity(self.marks.len());
        for (index, rec) in self.marks.into_iter().enumerate() {
            if !((0.0..=width).contains(&rec.x) && (0.0..=height).contains(&rec.y)) {
                return Err(MarkSpaceError::OutOfCanvas {
                    index,
                    id: rec.id,
                    x: rec.x,
                    y: rec.y,
                    width,
                    height,
                });
            }
            if rec.color < 1 || rec.color > color_count as i64 {
                return Err(MarkSpaceError::ColorOutOfRange {
                    index,
                    id: rec.id,
                    color: rec.color,
                    color_count,
                });
            }
            marks.push(Mark {
                id: rec.id,
                x: T::of(rec.x / width),
                y: T::of(rec.y / height),
                color: rec.color as Color,
            });
        }
        MarkSpace::new(marks, color_count)
    }

    /// Spec for a space on the unit canvas; loading it back is lossless.
    pub fn from_space<T: Scalar>(space: &MarkSpace<T>) -> Self {
        Self {
            width: 1.0,
            height: 1.0,
            color_count: space.color_count() as i64,
            marks: space
                .marks()
                .iter()
                .map(|m| MarkRecord {
                    id: m.id,
                    x: m.x.as_f64(),
                    y: m.y.as_f64(),
                    color: m.color as i64,
                })
                .collect(),
        }
    }
}

pub fn load_markspace<T: Scalar, R: Read>(source: R) -> Result<MarkSpace<T>, MarkSpaceError> {
    let spec: VisSpec = serde_json::from_reader(source).map_err(|e| {
        if e.is_io() {
            MarkSpaceError::Io(e.into())
        } else {
            MarkSpaceError::Malformed(e)
        }
    })?;
    spec.into_space()
}

pub fn save_markspace<T: Scalar, W: Write>(space: &MarkSpace<T>, sink: W) -> std::io::Result<()> {
    serde_json::to_writer(sink, &VisSpec::from_space(space)).map_err(std::io::Error::from)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClickRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    pub mark_id: MarkId,
}

/// Reads a JSON-lines click log. Blank lines are skipped; events are
/// renumbered `t = 1..n` in file order.
pub fn load_clicklog<T: Scalar, R: BufRead>(
    source: R,
    space: &MarkSpace<T>,
) -> Result<Vec<ClickEvent<T>>, ClickLogError> {
    let mut events = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClickRecord = serde_json::from_str(&line)
            .map_err(|source| ClickLogError::Malformed { line: i + 1, source })?;
        let event = space
            .click(events.len() + 1, rec.mark_id)
            .ok_or(ClickLogError::UnknownMark {
                line: i + 1,
                mark_id: rec.mark_id,
            })?;
        events.push(event);
    }
    if events.is_empty() {
        return Err(ClickLogError::Empty);
    }
    Ok(events)
}

pub fn save_clicklog<T: Scalar, W: Write>(
    clicks: &[ClickEvent<T>],
    mut sink: W,
) -> std::io::Result<()> {
    for c in clicks {
        let rec = ClickRecord {
            t: Some(c.t),
            mark_id: c.mark_id,
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}
