use crate::mask::Mask;

/// Even-odd scanline fill sampled at pixel centers.
///
/// Vertices are in continuous pixel coordinates (pixel `(x, y)` covers
/// `[x, x+1) x [y, y+1)`); the polygon is closed implicitly.
pub fn fill_polygon(vertices: &[[f64; 2]], height: usize, width: usize) -> Mask {
    let mut mask = Mask::empty(height, width);
    if vertices.len() < 3 {
        return mask;
    }
    let mut crossings = Vec::with_capacity(vertices.len());
    for y in 0..height {
        let py = y as f64 + 0.5;
        crossings.clear();
        for (i, a) in vertices.iter().enumerate() {
            let b = &vertices[(i + 1) % vertices.len()];
            if (a[1] > py) != (b[1] > py) {
                crossings.push(a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let (x0, x1) = (span[0], span[1]);
            let start = (x0 - 0.5).floor().max(0.0) as usize;
            let end = ((x1 + 0.5).ceil().max(0.0) as usize).min(width);
            for x in start..end {
                let px = x as f64 + 0.5;
                if px >= x0 && px < x1 {
                    mask.set(y, x, true);
                }
            }
        }
    }
    mask
}
