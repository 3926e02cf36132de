use super::{dist_point_segment, Point, Segment};
use crate::error::{Error, Result};

/// A simple polygonal observation window.
///
/// Points on the boundary count as inside.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    vertices: Vec<Point>,
    min: Point,
    max: Point,
    area: f64,
}

impl Window {
    /// Builds a window from a vertex ring in either orientation. A repeated
    /// closing vertex is dropped.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidWindow(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidWindow("non-finite vertex".into()));
        }
        let area = shoelace(&vertices).abs();
        if !(area > 0.0) {
            return Err(Error::InvalidWindow("polygon has zero area".into()));
        }
        check_simple(&vertices)?;
        let (mut min, mut max) = (vertices[0], vertices[0]);
        for v in &vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        Ok(Self {
            vertices,
            min,
            max,
            area,
        })
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn unit_square() -> Self {
        Self::rectangle(0.0, 0.0, 1.0, 1.0).expect("unit square is valid")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Shoelace area of the boundary polygon.
    pub fn area(&self) -> f64 {
        self.area
    }

    /// Lower-left and upper-right corners of the bounding box.
    pub fn bbox(&self) -> (Point, Point) {
        (self.min, self.max)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn edges(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| Segment::new(self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd membership test; boundary points are inside.
    pub fn contains(&self, p: Point) -> bool {
        if p.x < self.min.x || p.x > self.max.x || p.y < self.min.y || p.y > self.max.y {
            return false;
        }
        let eps = 1e-12 * (1.0 + self.diameter());
        if self.edges().any(|e| dist_point_segment(p, &e) <= eps) {
            return true;
        }
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (vi, vj) = (self.vertices[i], self.vertices[j]);
            if (vi.y > p.y) != (vj.y > p.y) {
                let x_cross = vj.x + (p.y - vj.y) * (vi.x - vj.x) / (vi.y - vj.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Distance from `p` to the window boundary.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        self.edges()
            .map(|e| dist_point_segment(p, &e))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        let shifted = self
            .vertices
            .iter()
            .map(|v| Point::new(v.x + dx, v.y + dy))
            .collect();
        Self::new(shifted).expect("translation preserves validity")
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::new(
            self.vertices
                .iter()
                .map(|v| Point::new(v.x * c, v.y * c))
                .collect(),
        )
    }
}

fn shoelace(v: &[Point]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

fn check_simple(v: &[Point]) -> Result<()> {
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        if a == b {
            return Err(Error::InvalidWindow(format!(
                "repeated vertex at index {i}"
            )));
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (c, d) = (v[j], v[(j + 1) % n]);
            if adjacent {
                // adjacent edges share one vertex; they must not fold back onto each other
                let (shared, other_i, other_j) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if orient(shared, other_i, other_j) == 0.0
                    && (other_j.x - shared.x) * (other_i.x - shared.x)
                        + (other_j.y - shared.y) * (other_i.y - shared.y)
                        > 0.0
                {
                    return Err(Error::InvalidWindow(format!("edges {i} and {j} overlap")));
                }
            } else if segments_intersect(a, b, c, d) {
                return Err(Error::InvalidWindow(format!("edges {i} and {j} intersect")));
            }
        }
    }
    Ok(())
}
