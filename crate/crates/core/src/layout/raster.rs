use super::{BBox, LayoutPattern};
use crate::error::{Error, Result};
use crate::grid::RasterGrid;

/// Binary raster of `p` over `region`. A pixel is 1 iff its center lies
/// inside some polygon, with edges half-open: left and bottom edges are
/// inside, right and top edges are outside.
pub fn rasterize(p: &LayoutPattern, px_per_nm: f64, region: BBox) -> Result<RasterGrid> {
    if !(px_per_nm > 0.0) || !px_per_nm.is_finite() {
        return Err(Error::Param(format!("px_per_nm must be > 0, got {px_per_nm}")));
    }
    if region.width() <= 0 || region.height() <= 0 {
        return Err(Error::Region(format!(
            "region ({}, {}, {}, {}) has non-positive extent",
            region.xmin, region.ymin, region.xmax, region.ymax
        )));
    }
    let width = (region.width() as f64 * px_per_nm).ceil() as usize;
    let height = (region.height() as f64 * px_per_nm).ceil() as usize;
    let half = 0.5 / px_per_nm;
    let origin = (region.xmin as f64 + half, region.ymin as f64 + half);
    let mut grid = RasterGrid::zeros(width, height, origin, px_per_nm);
    let center_x = |i: usize| origin.0 + i as f64 / px_per_nm;

    let mut crossings: Vec<i64> = Vec::new();
    for row in 0..height {
        let yc = origin.1 + row as f64 / px_per_nm;
        for poly in &p.polygons {
            crossings.clear();
            for (a, b) in poly.edges() {
                if a.x != b.x {
                    continue;
                }
                let (y0, y1) = (a.y.min(b.y) as f64, a.y.max(b.y) as f64);
                if y0 <= yc && yc < y1 {
                    crossings.push(a.x);
                }
            }
            crossings.sort_unstable();
            for span in crossings.chunks_exact(2) {
                let (x0, x1) = (span[0] as f64, span[1] as f64);
                let first = first_pixel_at_or_after(x0, origin.0, px_per_nm, width, center_x);
                let end = first_pixel_at_or_after(x1, origin.0, px_per_nm, width, center_x);
                let base = row * width;
                grid.values[base + first..base + end].fill(1.0);
            }
        }
    }
    Ok(grid)
}

/// Smallest pixel index whose center is `>= x`, clamped to `[0, width]`.
fn first_pixel_at_or_after(
    x: f64,
    origin: f64,
    px_per_nm: f64,
    width: usize,
    center: impl Fn(usize) -> f64,
) -> usize {
    let guess = ((x - origin) * px_per_nm).ceil();
    if guess <= 0.0 {
        return 0;
    }
    let mut i = (guess as usize).min(width);
    while i > 0 && center(i - 1) >= x {
        i -= 1;
    }
    while i < width && center(i) < x {
        i += 1;
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Point, Polygon};

    /// Brute-force oracle: ray-crossing parity over every pixel center.
    fn brute(p: &LayoutPattern, r: f64, region: BBox) -> Vec<f64> {
        let w = (region.width() as f64 * r).ceil() as usize;
        let h = (region.height() as f64 * r).ceil() as usize;
        let ox = region.xmin as f64 + 0.5 / r;
        let oy = region.ymin as f64 + 0.5 / r;
        let mut out = vec![0.0; w * h];
        for j in 0..h {
            for i in 0..w {
                let (xc, yc) = (ox + i as f64 / r, oy + j as f64 / r);
                let inside = p.polygons.iter().any(|poly| {
                    poly.edges()
                        .filter(|(a, b)| {
                            a.x == b.x
                                && (a.x as f64) > xc
                                && (a.y.min(b.y) as f64) <= yc
                                && yc < a.y.max(b.y) as f64
                        })
                        .count()
                        % 2
                        == 1
                });
                out[j * w + i] = inside as u8 as f64;
            }
        }
        out
    }

    fn rect(x0: i64, y0: i64, x1: i64, y1: i64) -> LayoutPattern {
        LayoutPattern::new(0, vec![Polygon::rect(x0, y0, x1, y1)]).unwrap()
    }

    #[test]
    fn rectangle_fills_its_region() {
        let g = rasterize(&rect(0, 0, 4, 2), 1.0, BBox::new(0, 0, 4, 2)).unwrap();
        assert_eq!(g.dims(), (4, 2));
        assert!(g.values.iter().all(|&v| v == 1.0));
        assert_eq!(g.values, brute(&rect(0, 0, 4, 2), 1.0, BBox::new(0, 0, 4, 2)));
    }

    #[test]
    fn rectangle_at_two_px_per_nm() {
        let g = rasterize(&rect(0, 0, 4, 2), 2.0, BBox::new(0, 0, 4, 2)).unwrap();
        assert_eq!(g.dims(), (8, 4));
        assert_eq!(g.count_ones(), 32);
    }

    #[test]
    fn empty_pattern_gives_zeros() {
        let g = rasterize(&LayoutPattern::empty(0), 1.0, BBox::new(0, 0, 5, 5)).unwrap();
        assert_eq!(g.count_ones(), 0);
    }

    #[test]
    fn degenerate_region_rejected() {
        assert!(matches!(
            rasterize(&rect(0, 0, 1, 1), 1.0, BBox::new(0, 0, 0, 5)),
            Err(Error::Region(_))
        ));
    }

    #[test]
    fn matches_brute_force_on_l_shape_and_odd_resolution() {
        let l = LayoutPattern::new(
            0,
            vec![
                Polygon::new(vec![
                    Point::new(0, 0),
                    Point::new(20, 0),
                    Point::new(20, 7),
                    Point::new(9, 7),
                    Point::new(9, 19),
                    Point::new(0, 19),
                ]),
                Polygon::rect(25, 3, 31, 30),
            ],
        )
        .unwrap();
        for r in [1.0, 2.0, 0.5, 0.3, 1.7] {
            let region = BBox::new(-5, -4, 36, 33);
            assert_eq!(rasterize(&l, r, region).unwrap().values, brute(&l, r, region), "r={r}");
        }
    }
}
