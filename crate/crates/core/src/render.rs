//! Raster helpers: a heat colormap, a tiny bitmap font and table grids.

use image::{Rgb, RgbImage};

/// Inferno samples at t = 0, 0.1, …, 1.
const INFERNO: [[u8; 3]; 11] = [
    [0, 0, 4],
    [22, 11, 57],
    [66, 10, 104],
    [106, 23, 110],
    [147, 38, 103],
    [188, 55, 84],
    [221, 81, 58],
    [243, 120, 25],
    [252, 165, 10],
    [246, 215, 70],
    [252, 255, 164],
];

/// Piecewise-linear inferno colormap; `t` is clamped to [0, 1].
pub fn heat_color(t: f64) -> [f64; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * 10.0;
    let i = (x.floor() as usize).min(9);
    let f = x - i as f64;
    let (a, b) = (INFERNO[i], INFERNO[i + 1]);
    [0, 1, 2].map(|c| (a[c] as f64 * (1.0 - f) + b[c] as f64 * f) / 255.0)
}

/// 3×5 glyphs, one row per entry, bit 2 = leftmost column.
fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 3, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '%' => [5, 1, 2, 4, 5],
        '.' => [0, 0, 0, 0, 2],
        '+' => [0, 2, 7, 2, 0],
        '-' => [0, 0, 7, 0, 0],
        'I' => [7, 2, 2, 2, 7],
        'a' => [0, 6, 1, 7, 7],
        'b' => [4, 4, 6, 5, 6],
        ' ' => [0; 5],
        _ => return None,
    })
}

/// Pixel width of `text` at `scale`.
pub fn text_width(text: &str, scale: u32) -> u32 {
    let n = text.chars().count() as u32;
    if n == 0 { 0 } else { (4 * n - 1) * scale }
}

/// Draws `text` with its top-left corner at `(x, y)`. Unknown characters
/// render as blanks.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: u32, color: [u8; 3]) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch).unwrap_or([0; 5]);
        let gx = x + (i as i64) * 4 * scale as i64;
        for (r, bits) in rows.iter().enumerate() {
            for c in 0..3 {
                if bits & (4 >> c) == 0 {
                    continue;
                }
                for dy in 0..scale as i64 {
                    for dx in 0..scale as i64 {
                        let px = gx + c as i64 * scale as i64 + dx;
                        let py = y + r as i64 * scale as i64 + dy;
                        if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                            img.put_pixel(px as u32, py as u32, Rgb(color));
                        }
                    }
                }
            }
        }
    }
}

/// One table cell: background and centred text lines.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub fill: [u8; 3],
    pub lines: Vec<String>,
}

/// Renders a row-major table of equally sized cells with 1-pixel borders.
pub fn render_grid(cells: &[Vec<GridCell>], cell_w: u32, cell_h: u32, scale: u32) -> RgbImage {
    let rows = cells.len() as u32;
    let cols = cells.iter().map(|r| r.len()).max().unwrap_or(0) as u32;
    let mut img = RgbImage::from_pixel(cols * cell_w + 1, rows * cell_h + 1, Rgb([255, 255, 255]));
    let line_h = 7 * scale;
    for (r, row) in cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let (x0, y0) = (c as u32 * cell_w, r as u32 * cell_h);
            for y in y0..=y0 + cell_h {
                for x in x0..=x0 + cell_w {
                    let border = y == y0 || y == y0 + cell_h || x == x0 || x == x0 + cell_w;
                    img.put_pixel(x, y, Rgb(if border { [60, 60, 60] } else { cell.fill }));
                }
            }
            let ink = if luminance(cell.fill) < 110.0 { [255, 255, 255] } else { [0, 0, 0] };
            let block = cell.lines.len() as u32 * line_h;
            let top = y0 as i64 + (cell_h as i64 - block as i64) / 2 + scale as i64;
            for (i, line) in cell.lines.iter().enumerate() {
                let x = x0 as i64 + (cell_w as i64 - text_width(line, scale) as i64) / 2;
                draw_text(&mut img, x, top + (i as u32 * line_h) as i64, line, scale, ink);
            }
        }
    }
    img
}

fn luminance(c: [u8; 3]) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints_and_monotone_brightness() {
        assert_eq!(heat_color(0.0), [0.0, 0.0, 4.0 / 255.0]);
        assert_eq!(heat_color(1.0), [252.0 / 255.0, 1.0, 164.0 / 255.0]);
        assert_eq!(heat_color(2.0), heat_color(1.0));
        let lum = |t: f64| {
            let c = heat_color(t);
            0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
        };
        for i in 0..100 {
            assert!(lum((i + 1) as f64 / 100.0) >= lum(i as f64 / 100.0));
        }
    }

    #[test]
    fn text_draws_inside_bounds_only() {
        let mut img = RgbImage::new(20, 10);
        draw_text(&mut img, -2, 0, "83%", 1, [255, 0, 0]);
        draw_text(&mut img, 15, 8, "Ia+IIb", 2, [255, 0, 0]);
        assert!(img.pixels().any(|p| p.0 == [255, 0, 0]));
        assert_eq!(text_width("83%", 2), 22);
    }

    #[test]
    fn grid_size() {
        let cell = GridCell { fill: [0, 128, 0], lines: vec!["51.8".into(), "49.3%".into()] };
        let img = render_grid(&[vec![cell.clone(), cell.clone()], vec![cell]], 60, 30, 1);
        assert_eq!(img.dimensions(), (121, 61));
    }
}
