use std::collections::HashMap;

use super::{LayoutPattern, Point, Polygon};
use crate::grid::RasterGrid;

/// Traces the 4-connected components of nonzero pixels back to rectilinear
/// polygons, one per component in raster-scan order of the component's first
/// pixel.
///
/// Components whose boundary is not a single simple loop (holes, or diagonal
/// pinches that enclose background) are emitted as a set of rectangles
/// instead. Pixel corners are snapped to the nearest integer nanometer, so
/// the result re-rasterizes exactly whenever the pixel pitch is a whole
/// number of nanometers.
pub fn vectorize(g: &RasterGrid) -> LayoutPattern {
    let (w, h) = g.dims();
    let x_min = g.origin.0 - 0.5 / g.px_per_nm;
    let y_min = g.origin.1 - 0.5 / g.px_per_nm;
    let to_nm = |i: i64, j: i64| {
        Point::new(
            (x_min + i as f64 / g.px_per_nm).round() as i64,
            (y_min + j as f64 / g.px_per_nm).round() as i64,
        )
    };

    let labels = label_components(g);
    let mut components: Vec<Vec<(usize, usize)>> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let Some(l) = labels[y * w + x] {
                if l as usize == components.len() {
                    components.push(Vec::new());
                }
                components[l as usize].push((x, y));
            }
        }
    }

    let mut polygons = Vec::new();
    for (label, pixels) in components.iter().enumerate() {
        let inside = |x: i64, y: i64| {
            x >= 0
                && y >= 0
                && (x as usize) < w
                && (y as usize) < h
                && labels[y as usize * w + x as usize] == Some(label as u32)
        };
        let loops = trace_loops(pixels, &inside);
        let traced = match loops.as_slice() {
            [single] => {
                let pts: Vec<Point> = single.iter().map(|&(i, j)| to_nm(i, j)).collect();
                simplify(pts).filter(|p| p.validate(0).is_ok())
            }
            _ => None,
        };
        match traced {
            Some(p) => polygons.push(p),
            None => polygons.extend(rectangles(pixels, &to_nm)),
        }
    }
    LayoutPattern {
        layer: 0,
        polygons,
    }
}

fn label_components(g: &RasterGrid) -> Vec<Option<u32>> {
    let (w, h) = g.dims();
    let mut labels = vec![None; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if g.values[start] == 0.0 || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            let mut visit = |n: usize| {
                if g.values[n] != 0.0 && labels[n].is_none() {
                    labels[n] = Some(next);
                    stack.push(n);
                }
            };
            if x > 0 {
                visit(idx - 1);
            }
            if x + 1 < w {
                visit(idx + 1);
            }
            if y > 0 {
                visit(idx - w);
            }
            if y + 1 < h {
                visit(idx + w);
            }
        }
        next += 1;
    }
    labels
}

type Corner = (i64, i64);

/// Boundary loops of one component in pixel-corner coordinates, oriented
/// with the interior on the left.
fn trace_loops(pixels: &[(usize, usize)], inside: &impl Fn(i64, i64) -> bool) -> Vec<Vec<Corner>> {
    // directed boundary edges keyed by start corner
    let mut outgoing: HashMap<Corner, Vec<Corner>> = HashMap::new();
    let mut order: Vec<Corner> = Vec::new();
    let mut add = |a: Corner, b: Corner| {
        let e = outgoing.entry(a).or_default();
        if e.is_empty() {
            order.push(a);
        }
        e.push(b);
    };
    for &(x, y) in pixels {
        let (x, y) = (x as i64, y as i64);
        if !inside(x, y - 1) {
            add((x, y), (x + 1, y));
        }
        if !inside(x + 1, y) {
            add((x + 1, y), (x + 1, y + 1));
        }
        if !inside(x, y + 1) {
            add((x + 1, y + 1), (x, y + 1));
        }
        if !inside(x - 1, y) {
            add((x, y + 1), (x, y));
        }
    }

    let mut loops = Vec::new();
    for start in order {
        while let Some(first) = outgoing.get_mut(&start).and_then(|v| v.pop()) {
            let mut cycle = vec![start];
            let mut prev = start;
            let mut cur = first;
            while cur != start {
                cycle.push(cur);
                let dir = (cur.0 - prev.0, cur.1 - prev.1);
                let options = outgoing.get_mut(&cur).expect("boundary edges form closed loops");
                // at a pinch corner turn left so diagonal pixels stay separate
                let pick = if options.len() > 1 {
                    let left = (-dir.1, dir.0);
                    options
                        .iter()
                        .position(|&n| (n.0 - cur.0, n.1 - cur.1) == left)
                        .unwrap_or(0)
                } else {
                    0
                };
                let next = options.swap_remove(pick);
                prev = cur;
                cur = next;
            }
            loops.push(cycle);
        }
    }
    loops
}

/// Drops zero-length edges and collinear vertices.
fn simplify(mut pts: Vec<Point>) -> Option<Polygon> {
    loop {
        let n = pts.len();
        if n < 4 {
            return None;
        }
        let mut keep = Vec::with_capacity(n);
        for i in 0..n {
            let prev = pts[(i + n - 1) % n];
            let cur = pts[i];
            let next = pts[(i + 1) % n];
            if cur == prev {
                continue;
            }
            let collinear = (prev.x == cur.x && cur.x == next.x) || (prev.y == cur.y && cur.y == next.y);
            if !collinear {
                keep.push(cur);
            }
        }
        if keep.len() == n {
            return Some(Polygon::new(keep));
        }
        pts = keep;
    }
}

/// Decomposes a component into rectangles by merging identical row runs.
fn rectangles(pixels: &[(usize, usize)], to_nm: &impl Fn(i64, i64) -> Point) -> Vec<Polygon> {
    let mut rows: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &(x, y) in pixels {
        rows.entry(y).or_default().push(x);
    }
    // (x0, x1) -> starting row of the open rectangle
    let mut open: Vec<(usize, usize, usize)> = Vec::new();
    let mut done: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut last_row: Option<usize> = None;
    for (&y, xs) in rows.iter_mut() {
        xs.sort_unstable();
        let mut runs = Vec::new();
        let mut i = 0;
        while i < xs.len() {
            let s = xs[i];
            let mut e = s + 1;
            while i + 1 < xs.len() && xs[i + 1] == e {
                i += 1;
                e += 1;
            }
            runs.push((s, e));
            i += 1;
        }
        let contiguous = last_row.map_or(false, |r| r + 1 == y);
        let mut still_open = Vec::new();
        for (s, e, y0) in open.drain(..) {
            if contiguous && runs.contains(&(s, e)) {
                still_open.push((s, e, y0));
            } else {
                done.push((s, e, y0, last_row.unwrap() + 1));
            }
        }
        for &(s, e) in &runs {
            if !still_open.iter().any(|&(a, b, _)| (a, b) == (s, e)) {
                still_open.push((s, e, y));
            }
        }
        open = still_open;
        last_row = Some(y);
    }
    if let Some(r) = last_row {
        done.extend(open.into_iter().map(|(s, e, y0)| (s, e, y0, r + 1)));
    }
    done.sort_by_key(|&(s, _, y0, _)| (y0, s));
    done.into_iter()
        .filter_map(|(s, e, y0, y1)| {
            let a = to_nm(s as i64, y0 as i64);
            let b = to_nm(e as i64, y1 as i64);
            (a.x < b.x && a.y < b.y).then(|| Polygon::rect(a.x, a.y, b.x, b.y))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{rasterize, BBox};

    fn grid(w: usize, h: usize, ones: &[(usize, usize)]) -> RasterGrid {
        let mut g = RasterGrid::zeros(w, h, (0.5, 0.5), 1.0);
        for &(x, y) in ones {
            g.set(x, y, 1.0);
        }
        g
    }

    fn region(g: &RasterGrid) -> BBox {
        BBox::new(0, 0, g.width as i64, g.height as i64)
    }

    #[test]
    fn all_zero_is_empty() {
        assert!(vectorize(&RasterGrid::zeros(6, 6, (0.5, 0.5), 1.0)).is_empty());
    }

    #[test]
    fn single_block_is_one_rectangle() {
        let g = RasterGrid::filled(4, 2, (0.5, 0.5), 1.0, 1.0);
        let p = vectorize(&g);
        assert_eq!(p.polygons.len(), 1);
        assert_eq!(p.polygons[0].bbox(), BBox::new(0, 0, 4, 2));
        assert_eq!(p.polygons[0].points.len(), 4);
        assert_eq!(rasterize(&p, 1.0, region(&g)).unwrap(), g);
    }

    #[test]
    fn two_blocks_two_polygons() {
        let g = grid(8, 3, &[(0, 0), (1, 0), (0, 1), (1, 1), (5, 1), (6, 1), (5, 2), (6, 2)]);
        let p = vectorize(&g);
        assert_eq!(p.polygons.len(), 2);
        assert_eq!(rasterize(&p, 1.0, region(&g)).unwrap(), g);
    }

    #[test]
    fn diagonal_neighbours_are_separate() {
        let g = grid(3, 3, &[(0, 0), (1, 1), (2, 2)]);
        let p = vectorize(&g);
        assert_eq!(p.polygons.len(), 3);
        assert_eq!(rasterize(&p, 1.0, region(&g)).unwrap(), g);
    }

    #[test]
    fn ring_with_hole_falls_back_to_rectangles() {
        let mut ones = Vec::new();
        for y in 0..5 {
            for x in 0..5 {
                if !(x == 2 && y == 2) {
                    ones.push((x, y));
                }
            }
        }
        let g = grid(5, 5, &ones);
        let p = vectorize(&g);
        assert!(p.polygons.len() > 1);
        for (i, poly) in p.polygons.iter().enumerate() {
            poly.validate(i).unwrap();
        }
        assert_eq!(rasterize(&p, 1.0, region(&g)).unwrap(), g);
    }

    #[test]
    fn l_shape_traced_as_one_polygon() {
        let g = grid(4, 4, &[(0, 0), (1, 0), (2, 0), (0, 1), (0, 2)]);
        let p = vectorize(&g);
        assert_eq!(p.polygons.len(), 1);
        assert_eq!(p.polygons[0].points.len(), 6);
        assert_eq!(p.polygons[0].area(), 5);
    }
}
