//! Bar-chart PNG rendering for class-distribution figures.
//!
//! Self-contained: bars, axes, gridlines and a small embedded 5x7 bitmap
//! font, painted straight into an RGB buffer. Output bytes are a pure
//! function of the inputs.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::catalog::ClassStats;
use crate::error::{CapsuleError, Result};
use crate::synthetic::CLASS_PALETTE;

const LEFT: u32 = 70;
const RIGHT: u32 = 20;
const TOP: u32 = 50;
const BOTTOM: u32 = 120;
const PLOT_H: u32 = 240;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([215, 215, 215]);

#[derive(Debug, Clone)]
pub struct Bar {
    pub label: String,
    pub value: usize,
    pub color: [u8; 3],
}

/// Horizontal placement of `n` bars inside a plot area `plot_w` wide:
/// (x offset, bar width) per bar, evenly slotted with a fixed gap fraction.
pub fn bar_layout(n: usize, plot_w: u32) -> Vec<(u32, u32)> {
    if n == 0 {
        return Vec::new();
    }
    let slot = plot_w / n as u32;
    let bar_w = (slot * 72 / 100).max(1);
    let pad = (slot - bar_w) / 2;
    (0..n as u32).map(|i| (i * slot + pad, bar_w)).collect()
}

/// Render `bars` to a PNG; returns the number of bars drawn.
pub fn render_bar_chart(title: &str, bars: &[Bar], out: &Path) -> Result<usize> {
    if bars.is_empty() {
        return Err(CapsuleError::Data("nothing to plot: no bars".into()));
    }
    let n = bars.len();
    let width = (LEFT + RIGHT + (n as u32) * 56).max(380);
    let height = TOP + PLOT_H + BOTTOM;
    let plot_w = width - LEFT - RIGHT;

    let mut img = RgbImage::from_pixel(width, height, BG);
    let max_value = bars.iter().map(|b| b.value).max().unwrap_or(0).max(1);

    // Gridlines and tick labels at quarters of the max.
    for q in 0..=4u32 {
        let frac = q as f32 / 4.0;
        let y = TOP + PLOT_H - (frac * PLOT_H as f32).round() as u32;
        for x in LEFT..LEFT + plot_w {
            img.put_pixel(x, y, GRID);
        }
        let tick = ((max_value as f32) * frac).round() as usize;
        let text = tick.to_string();
        let tw = text_width(&text, 1);
        draw_text(&mut img, &text, LEFT.saturating_sub(tw + 6), y.saturating_sub(3), 1, INK);
    }

    // Axes.
    for y in TOP..=TOP + PLOT_H {
        img.put_pixel(LEFT, y, INK);
    }
    for x in LEFT..LEFT + plot_w {
        img.put_pixel(x, TOP + PLOT_H, INK);
    }

    let layout = bar_layout(n, plot_w);
    for (bar, (x_off, bar_w)) in bars.iter().zip(&layout) {
        let h = ((bar.value as f32 / max_value as f32) * PLOT_H as f32).round() as u32;
        let x0 = LEFT + x_off;
        let y0 = TOP + PLOT_H - h;
        for x in x0..x0 + bar_w {
            for y in y0..TOP + PLOT_H {
                img.put_pixel(x, y, Rgb(bar.color));
            }
        }
        // Count above the bar.
        let text = bar.value.to_string();
        let tw = text_width(&text, 1);
        let tx = (x0 + bar_w / 2).saturating_sub(tw / 2);
        draw_text(&mut img, &text, tx, y0.saturating_sub(10), 1, INK);
        // Class name below, rotated to read downward.
        draw_text_vertical(
            &mut img,
            &bar.label,
            x0 + bar_w / 2,
            TOP + PLOT_H + 8,
            INK,
        );
    }

    draw_text(&mut img, title, LEFT, 14, 2, INK);
    img.save(out).map_err(|e| CapsuleError::image(out, e))?;
    Ok(n)
}

/// Distribution figure for `stats`, bars sorted by descending count. With
/// `include_normal = false` the Normal class is omitted entirely.
pub fn emit_distribution_plot(stats: &ClassStats, include_normal: bool, out: &Path) -> Result<usize> {
    let mut entries: Vec<(&String, usize)> = stats
        .counts
        .iter()
        .filter(|(class, _)| include_normal || **class != stats.normal_class)
        .map(|(c, &n)| (c, n))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let bars: Vec<Bar> = entries
        .iter()
        .enumerate()
        .map(|(i, (label, value))| Bar {
            label: (*label).clone(),
            value: *value,
            color: CLASS_PALETTE[i % CLASS_PALETTE.len()],
        })
        .collect();

    let origin = stats
        .origin_filter
        .map_or("all".to_string(), |o| o.to_string());
    let title = if include_normal {
        format!("CLASS DISTRIBUTION ({}, {})", stats.split, origin)
    } else {
        format!("CLASS DISTRIBUTION W/O NORMAL ({}, {})", stats.split, origin)
    };
    render_bar_chart(&title, &bars, out)
}

// --- tiny bitmap font -------------------------------------------------

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;

fn glyph(c: char) -> [u8; 7] {
    let c = c.to_ascii_uppercase();
    match c {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F],
        '3' => [0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        ' ' => [0x00; 7],
        // Unknown characters render as a hollow box.
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F],
    }
}

pub fn text_width(text: &str, scale: u32) -> u32 {
    text.chars().count() as u32 * (GLYPH_W + 1) * scale
}

fn draw_text(img: &mut RgbImage, text: &str, x: u32, y: u32, scale: u32, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (gy, row) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if row >> (GLYPH_W - 1 - gx) & 1 == 1 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            let px = cx + gx * scale + sx;
                            let py = y + gy as u32 * scale + sy;
                            if px < img.width() && py < img.height() {
                                img.put_pixel(px, py, color);
                            }
                        }
                    }
                }
            }
        }
        cx += (GLYPH_W + 1) * scale;
    }
}

/// Text rotated 90 degrees clockwise, reading downward from (x, y).
fn draw_text_vertical(img: &mut RgbImage, text: &str, x: u32, y: u32, color: Rgb<u8>) {
    let mut cy = y;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (gy, row) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if row >> (GLYPH_W - 1 - gx) & 1 == 1 {
                    let px = x + (GLYPH_H - 1 - gy as u32);
                    let py = cy + gx;
                    if px >= GLYPH_H && px - GLYPH_H < img.width() && py < img.height() {
                        img.put_pixel(px - GLYPH_H, py, color);
                    }
                }
            }
        }
        cy += GLYPH_W + 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Origin, Split};
    use std::collections::BTreeMap;

    fn stats_for(counts: &[(&str, usize)]) -> ClassStats {
        ClassStats {
            counts: counts
                .iter()
                .map(|(c, n)| (c.to_string(), *n))
                .collect::<BTreeMap<_, _>>(),
            normal_class: "Normal".into(),
            split: Split::Train,
            origin_filter: Some(Origin::Original),
        }
    }

    #[test]
    fn layout_has_one_slot_per_bar() {
        assert_eq!(bar_layout(10, 560).len(), 10);
        assert_eq!(bar_layout(0, 560).len(), 0);
        let l = bar_layout(3, 300);
        assert!(l[0].0 < l[1].0 && l[1].0 < l[2].0);
        assert!(l.iter().all(|(_, w)| *w > 0));
    }

    #[test]
    fn plot_writes_png_with_and_without_normal() {
        let dir = tempfile::tempdir().unwrap();
        let stats = stats_for(&[
            ("Normal", 100),
            ("A", 20),
            ("B", 10),
            ("C", 5),
            ("D", 4),
            ("E", 3),
            ("F", 3),
            ("G", 2),
            ("H", 2),
            ("I", 1),
        ]);
        let with = dir.path().join("with.png");
        let without = dir.path().join("without.png");
        assert_eq!(emit_distribution_plot(&stats, true, &with).unwrap(), 10);
        assert_eq!(emit_distribution_plot(&stats, false, &without).unwrap(), 9);
        let img = image::open(&with).unwrap();
        assert!(img.width() > 0 && img.height() > 0);
    }

    #[test]
    fn empty_stats_error_and_unwritable_path_error() {
        let stats = stats_for(&[]);
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_distribution_plot(&stats, true, &dir.path().join("x.png")).is_err());

        let ok_stats = stats_for(&[("A", 1)]);
        let missing_parent = dir.path().join("no/such/dir/x.png");
        assert!(emit_distribution_plot(&ok_stats, true, &missing_parent).is_err());
    }
}
