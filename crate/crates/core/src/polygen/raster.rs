/// Even-odd fill sampled at pixel centres `(r + 0.5, c + 0.5)`.
/// Vertices are `(row, col)` coordinates.
pub fn rasterize_even_odd(vertices: &[(f64, f64)], height: usize, width: usize) -> Vec<u8> {
    let mut mask = vec![0u8; height * width];
    let n = vertices.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(n);
    for r in 0..height {
        let y = r as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (y0, x0) = vertices[i];
            let (y1, x1) = vertices[(i + 1) % n];
            // half-open rule: an edge counts when the scanline lies in [min, max)
            if (y0 <= y && y < y1) || (y1 <= y && y < y0) {
                crossings.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in crossings.chunks_exact(2) {
            for c in 0..width {
                let x = c as f64 + 0.5;
                if x >= pair[0] && x < pair[1] {
                    mask[r * width + c] = 1;
                }
            }
        }
    }
    mask
}

/// Signed shoelace area of a closed polygon.
pub fn shoelace_area(vertices: &[(f64, f64)]) -> f64 {
    let n = vertices.len();
    let mut s = 0.0;
    for i in 0..n {
        let (y0, x0) = vertices[i];
        let (y1, x1) = vertices[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s
}

/// Area centroid `(row, col)` of a simple polygon.
pub fn centroid(vertices: &[(f64, f64)]) -> (f64, f64) {
    let a = shoelace_area(vertices);
    let n = vertices.len();
    let (mut cy, mut cx) = (0.0, 0.0);
    for i in 0..n {
        let (y0, x0) = vertices[i];
        let (y1, x1) = vertices[(i + 1) % n];
        let cross = x0 * y1 - x1 * y0;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    (cy / (6.0 * a), cx / (6.0 * a))
}

/// Number of 4-connected foreground components.
pub fn component_count(mask: &[u8], height: usize, width: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..mask.len() {
        if mask[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / width, i % width);
            let mut visit = |j: usize| {
                if mask[j] != 0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - width);
            }
            if r + 1 < height {
                visit(i + width);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < width {
                visit(i + 1);
            }
        }
    }
    count
}
