use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LayoutPattern, Polygon};
use crate::error::{Error, Result};

/// Canonical test-structure families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    IsolatedLine,
    LineSpace,
    Square,
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolated_line" => Ok(Topology::IsolatedLine),
            "line_space" => Ok(Topology::LineSpace),
            "square" => Ok(Topology::Square),
            _ => Err(Error::Param(format!("unknown topology {s:?}"))),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::IsolatedLine => "isolated_line",
            Topology::LineSpace => "line_space",
            Topology::Square => "square",
        })
    }
}

/// Vertical lines (`width` along x, `length` along y) or a square, centered
/// on the origin. `pitch` is only read for line-space, `length` is ignored
/// for squares.
pub fn generate_test_pattern(
    topology: Topology,
    width: i64,
    pitch: i64,
    count: usize,
    length: i64,
) -> Result<LayoutPattern> {
    if width <= 0 {
        return Err(Error::Param(format!("width must be > 0, got {width}")));
    }
    if count == 0 {
        return Err(Error::Param("count must be >= 1".into()));
    }
    let centered = |extent: i64| -(extent / 2);
    let polygons = match topology {
        Topology::Square => {
            let x0 = centered(width);
            vec![Polygon::rect(x0, x0, x0 + width, x0 + width)]
        }
        Topology::IsolatedLine | Topology::LineSpace => {
            if length <= 0 {
                return Err(Error::Param(format!("length must be > 0, got {length}")));
            }
            let (n, pitch) = match topology {
                Topology::IsolatedLine => (1, 0),
                _ => {
                    if pitch <= width {
                        return Err(Error::Param(format!(
                            "pitch {pitch} must exceed width {width}"
                        )));
                    }
                    (count, pitch)
                }
            };
            let span = (n as i64 - 1) * pitch + width;
            let x0 = centered(span);
            let y0 = centered(length);
            (0..n as i64)
                .map(|k| {
                    let x = x0 + k * pitch;
                    Polygon::rect(x, y0, x + width, y0 + length)
                })
                .collect()
        }
    };
    LayoutPattern::new(1, polygons)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::BBox;

    #[test]
    fn isolated_line() {
        let p = generate_test_pattern(Topology::IsolatedLine, 40, 0, 1, 400).unwrap();
        assert_eq!(p.polygons.len(), 1);
        assert_eq!(p.bbox(), Some(BBox::new(-20, -200, 20, 200)));
    }

    #[test]
    fn line_space_three_lines() {
        let p = generate_test_pattern(Topology::LineSpace, 140, 280, 3, 400).unwrap();
        assert_eq!(p.polygons.len(), 3);
        let boxes: Vec<BBox> = p.polygons.iter().map(|q| q.bbox()).collect();
        for b in &boxes {
            assert_eq!(b.width(), 140);
            assert_eq!(b.height(), 400);
        }
        assert_eq!(boxes[1].xmin - boxes[0].xmax, 140);
        assert_eq!(boxes[2].xmin - boxes[1].xmax, 140);
        let bb = p.bbox().unwrap();
        assert_eq!(bb.xmin + bb.xmax, 0);
    }

    #[test]
    fn square() {
        let p = generate_test_pattern(Topology::Square, 100, 0, 1, 0).unwrap();
        assert_eq!(p.bbox(), Some(BBox::new(-50, -50, 50, 50)));
    }

    #[test]
    fn bad_params() {
        assert!(generate_test_pattern(Topology::LineSpace, 40, 40, 2, 100).is_err());
        assert!(generate_test_pattern(Topology::IsolatedLine, 0, 0, 1, 100).is_err());
        assert!(generate_test_pattern(Topology::Square, 10, 0, 0, 0).is_err());
    }
}
