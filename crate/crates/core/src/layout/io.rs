use serde::{Deserialize, Serialize};

use super::{LayoutPattern, Point, Polygon};
use crate::error::{Error, Result};

/// On-disk form: `{"units":"nm","layer":1,"polygons":[[x0,y0,x1,y1,...],...]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    units: String,
    layer: i32,
    polygons: Vec<Vec<i64>>,
}

pub fn parse_layout(text: &str) -> Result<LayoutPattern> {
    let file: LayoutFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.units != "nm" {
        return Err(Error::Parse(format!(
            "unsupported units {:?}, expected \"nm\"",
            file.units
        )));
    }
    let mut polygons = Vec::with_capacity(file.polygons.len());
    for (i, coords) in file.polygons.iter().enumerate() {
        if coords.len() % 2 != 0 {
            return Err(Error::Parse(format!(
                "polygon {i}: odd number of coordinates ({})",
                coords.len()
            )));
        }
        let points = coords
            .chunks_exact(2)
            .map(|c| Point::new(c[0], c[1]))
            .collect();
        polygons.push(Polygon::new(points));
    }
    LayoutPattern::new(file.layer, polygons)
}

pub fn write_layout(p: &LayoutPattern) -> String {
    let file = LayoutFile {
        units: "nm".into(),
        layer: p.layer,
        polygons: p
            .polygons
            .iter()
            .map(|poly| poly.points.iter().flat_map(|pt| [pt.x, pt.y]).collect())
            .collect(),
    };
    let mut s = serde_json::to_string(&file).expect("layout serialization cannot fail");
    s.push('\n');
    s
}
