//! Layout geometry: rectilinear polygons in integer nanometers.

mod io;
mod patterns;
mod raster;
mod vectorize;

pub use io::{parse_layout, write_layout};
pub use patterns::{generate_test_pattern, Topology};
pub use raster::rasterize;
pub use vectorize::vectorize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }
}

/// Axis-aligned bounding box, `(xmin, ymin)` inclusive, `(xmax, ymax)` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

impl BBox {
    pub const fn new(xmin: i64, ymin: i64, xmax: i64, ymax: i64) -> Self {
        BBox {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn width(&self) -> i64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> i64 {
        self.ymax - self.ymin
    }

    pub fn expand(&self, d: i64) -> BBox {
        BBox::new(self.xmin - d, self.ymin - d, self.xmax + d, self.ymax + d)
    }

    pub fn union(&self, o: &BBox) -> BBox {
        BBox::new(
            self.xmin.min(o.xmin),
            self.ymin.min(o.ymin),
            self.xmax.max(o.xmax),
            self.ymax.max(o.ymax),
        )
    }
}

/// Closed rectilinear polygon; the closing edge from the last vertex back to
/// the first is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polygon {
    pub points: Vec<Point>,
}

impl Polygon {
    pub fn new(points: Vec<Point>) -> Self {
        Polygon { points }
    }

    pub fn rect(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Polygon::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox::new(i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for p in &self.points {
            b.xmin = b.xmin.min(p.x);
            b.ymin = b.ymin.min(p.y);
            b.xmax = b.xmax.max(p.x);
            b.ymax = b.ymax.max(p.y);
        }
        b
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Enclosed area in nm² (shoelace).
    pub fn area(&self) -> i64 {
        let twice: i64 = self
            .edges()
            .map(|(a, b)| a.x * b.y - b.x * a.y)
            .sum();
        twice.abs() / 2
    }

    pub fn shortest_edge(&self) -> i64 {
        self.edges()
            .map(|(a, b)| (b.x - a.x).abs() + (b.y - a.y).abs())
            .min()
            .unwrap_or(0)
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Polygon {
        Polygon::new(
            self.points
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        )
    }

    /// Checks closure, rectilinearity and simplicity. `index` names the
    /// polygon in the error.
    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |reason: String| Error::Geometry {
            polygon: index,
            reason,
        };
        let n = self.points.len();
        if n < 4 || n % 2 != 0 {
            return Err(fail(format!("{n} vertices; need an even count of at least 4")));
        }
        let edges: Vec<(Point, Point)> = self.edges().collect();
        for (i, (a, b)) in edges.iter().enumerate() {
            if a == b {
                return Err(fail(format!("zero-length edge {i}")));
            }
            if a.x != b.x && a.y != b.y {
                return Err(fail(format!(
                    "edge {i} ({},{})->({},{}) is not axis-parallel",
                    a.x, a.y, b.x, b.y
                )));
            }
        }
        for i in 0..n {
            let (a, b) = edges[i];
            let (c, d) = edges[(i + 1) % n];
            let horizontal_ab = a.y == b.y;
            let horizontal_cd = c.y == d.y;
            if horizontal_ab == horizontal_cd {
                return Err(fail(format!("edges {i} and {} are collinear", (i + 1) % n)));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_touch(edges[i], edges[j]) {
                    return Err(fail(format!("edges {i} and {j} intersect")));
                }
            }
        }
        Ok(())
    }
}

/// Closed axis-parallel segments share at least one point.
fn segments_touch((a, b): (Point, Point), (c, d): (Point, Point)) -> bool {
    let (ax0, ax1) = (a.x.min(b.x), a.x.max(b.x));
    let (ay0, ay1) = (a.y.min(b.y), a.y.max(b.y));
    let (cx0, cx1) = (c.x.min(d.x), c.x.max(d.x));
    let (cy0, cy1) = (c.y.min(d.y), c.y.max(d.y));
    ax0 <= cx1 && cx0 <= ax1 && ay0 <= cy1 && cy0 <= ay1
}

/// A single-layer layout: the design target or a corrected mask.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayoutPattern {
    pub layer: i32,
    pub polygons: Vec<Polygon>,
}

impl LayoutPattern {
    /// Validates every polygon.
    pub fn new(layer: i32, polygons: Vec<Polygon>) -> Result<Self> {
        for (i, p) in polygons.iter().enumerate() {
            p.validate(i)?;
        }
        Ok(LayoutPattern { layer, polygons })
    }

    pub fn empty(layer: i32) -> Self {
        LayoutPattern {
            layer,
            polygons: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// Tight bound over all vertices; `None` for an empty pattern.
    pub fn bbox(&self) -> Option<BBox> {
        self.polygons
            .iter()
            .map(Polygon::bbox)
            .reduce(|a, b| a.union(&b))
    }

    pub fn translate(&self, dx: i64, dy: i64) -> LayoutPattern {
        LayoutPattern {
            layer: self.layer,
            polygons: self.polygons.iter().map(|p| p.translate(dx, dy)).collect(),
        }
    }

    /// Digest of the serialized form.
    pub fn checksum(&self) -> String {
        crate::checksum::digest_bytes(write_layout(self).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_bbox_and_area() {
        let p = Polygon::rect(0, 0, 100, 40);
        assert_eq!(p.bbox(), BBox::new(0, 0, 100, 40));
        assert_eq!(p.area(), 4000);
        assert_eq!(p.shortest_edge(), 40);
        p.validate(0).unwrap();
    }

    #[test]
    fn l_shape_is_valid() {
        let p = Polygon::new(vec![
            Point::new(0, 0),
            Point::new(20, 0),
            Point::new(20, 10),
            Point::new(10, 10),
            Point::new(10, 20),
            Point::new(0, 20),
        ]);
        p.validate(0).unwrap();
        assert_eq!(p.area(), 300);
    }

    #[test]
    fn diagonal_edge_rejected() {
        let p = Polygon::new(vec![
            Point::new(0, 0),
            Point::new(10, 0),
            Point::new(10, 10),
            Point::new(5, 15),
        ]);
        let err = LayoutPattern::new(0, vec![Polygon::rect(0, 0, 1, 1), p]).unwrap_err();
        assert!(matches!(err, Error::Geometry { polygon: 1, .. }), "{err}");
    }

    #[test]
    fn self_intersecting_rejected() {
        // figure-eight made of two rectangles sharing a crossing
        let p = Polygon::new(vec![
            Point::new(0, 0),
            Point::new(20, 0),
            Point::new(20, 10),
            Point::new(5, 10),
            Point::new(5, -5),
            Point::new(0, -5),
        ]);
        assert!(matches!(p.validate(3), Err(Error::Geometry { polygon: 3, .. })));
    }

    #[test]
    fn empty_pattern_has_no_bbox() {
        let p = LayoutPattern::empty(1);
        assert!(p.is_empty());
        assert_eq!(p.bbox(), None);
    }
}
