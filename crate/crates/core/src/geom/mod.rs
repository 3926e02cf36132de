//! Planar geometry: windows, point and segment patterns, pixel rasters.
//!
//! Coordinates are planar meters; there is no CRS handling.

mod raster;
mod window;

pub use raster::{rasterize, Raster, DEFAULT_NODATA};
pub use window::Window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub const fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(&self.b)
    }

    /// Point at parameter `t` in `[0, 1]` along the segment.
    pub fn at(&self, t: f64) -> Point {
        Point::new(
            self.a.x + t * (self.b.x - self.a.x),
            self.a.y + t * (self.b.y - self.a.y),
        )
    }
}

/// Euclidean distance from `p` to the nearest point of the closed segment `s`.
pub fn dist_point_segment(p: Point, s: &Segment) -> f64 {
    let dx = s.b.x - s.a.x;
    let dy = s.b.y - s.a.y;
    let len_sq = dx * dx + dy * dy;
    if len_sq == 0.0 {
        return p.dist(&s.a);
    }
    let t = (((p.x - s.a.x) * dx + (p.y - s.a.y) * dy) / len_sq).clamp(0.0, 1.0);
    p.dist(&s.at(t))
}

/// A finite planar point pattern with optional discrete marks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointPattern {
    points: Vec<Point>,
    marks: Option<Vec<String>>,
    mark_name: Option<String>,
}

impl PointPattern {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Input(format!(
                "point {i} has non-finite coordinates"
            )));
        }
        Ok(Self {
            points,
            marks: None,
            mark_name: None,
        })
    }

    pub fn with_marks(
        points: Vec<Point>,
        marks: Vec<String>,
        mark_name: Option<String>,
    ) -> Result<Self> {
        if marks.len() != points.len() {
            return Err(Error::Input(format!(
                "{} marks for {} points",
                marks.len(),
                points.len()
            )));
        }
        let mut pattern = Self::new(points)?;
        pattern.marks = Some(marks);
        pattern.mark_name = mark_name;
        Ok(pattern)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn marks(&self) -> Option<&[String]> {
        self.marks.as_deref()
    }

    pub fn mark_name(&self) -> Option<&str> {
        self.mark_name.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Errors if any point falls outside `w`.
    pub fn check_inside(&self, w: &Window) -> Result<()> {
        match self.points.iter().position(|p| !w.contains(*p)) {
            Some(i) => Err(Error::Input(format!(
                "point {i} ({}, {}) lies outside the window",
                self.points[i].x, self.points[i].y
            ))),
            None => Ok(()),
        }
    }

    /// Keeps the points at `indices` (in the given order), carrying marks along.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            marks: self
                .marks
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i].clone()).collect()),
            mark_name: self.mark_name.clone(),
        }
    }

    /// Marginal sub-pattern of the events whose mark equals `value`.
    ///
    /// `filter` is either `value` or `name=value`; in the latter form the name
    /// must match the pattern's mark column.
    pub fn filter_mark(&self, filter: &str) -> Result<Self> {
        let marks = self.marks.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "mark filter '{filter}' given but pattern has no marks"
            ))
        })?;
        let value = match filter.split_once('=') {
            Some((name, value)) => {
                let name = name.trim();
                if self.mark_name.as_deref() != Some(name) {
                    return Err(Error::Config(format!(
                        "mark filter names column '{name}' but pattern mark column is '{}'",
                        self.mark_name.as_deref().unwrap_or("")
                    )));
                }
                value.trim()
            }
            None => filter.trim(),
        };
        let keep: Vec<usize> = (0..marks.len()).filter(|&i| marks[i] == value).collect();
        let mut out = self.subset(&keep);
        out.marks = Some(keep.iter().map(|&i| marks[i].clone()).collect());
        Ok(out)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
            marks: self.marks.clone(),
            mark_name: self.mark_name.clone(),
        }
    }
}

/// A pattern of line segments, e.g. a road network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentPattern {
    segments: Vec<Segment>,
}

impl SegmentPattern {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if !s.a.is_finite() || !s.b.is_finite() {
                return Err(Error::Input(format!(
                    "segment {i} has non-finite endpoints"
                )));
            }
            if s.length() <= 0.0 {
                return Err(Error::Input(format!("segment {i} has zero length")));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.segments.iter().map(Segment::length).collect()
    }
}
