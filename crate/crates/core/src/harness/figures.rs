//! Static raster figures. Every figure has a CSV with the numbers behind it.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::metrics::csv_err;
use crate::world::Image;
use crate::{Error, Result};

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Other(format!("{}: {e}", path.display())))
}

/// Grid of images, one row per entry, each pixel scaled by `scale`.
pub fn image_grid(rows: &[Vec<Image>], scale: u32) -> RgbImage {
    let (h, w) = rows
        .iter()
        .flat_map(|r| r.first())
        .map(|im| (im.height() as u32, im.width() as u32))
        .next()
        .unwrap_or((1, 1));
    let gap = 2;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let width = (cols * (w * scale + gap)).max(1);
    let height = (rows.len() as u32 * (h * scale + gap)).max(1);
    let mut out = RgbImage::from_pixel(width, height, Rgb([40, 40, 40]));
    for (ri, row) in rows.iter().enumerate() {
        for (ci, im) in row.iter().enumerate() {
            let (ox, oy) = (ci as u32 * (w * scale + gap), ri as u32 * (h * scale + gap));
            for y in 0..h * scale {
                for x in 0..w * scale {
                    let px = im.pixel((y / scale) as usize, (x / scale) as usize);
                    let c = px.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8);
                    out.put_pixel(ox + x, oy + y, Rgb(c));
                }
            }
        }
    }
    out
}

pub fn write_image_grid(rows: &[Vec<Image>], scale: u32, path: &Path) -> Result<()> {
    save(&image_grid(rows, scale), path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let mut counts = vec![0; bins.max(1)];
        let width = (hi - lo) / counts.len() as f64;
        for &v in values.iter().filter(|v| v.is_finite()) {
            let i = ((v - lo) / width).floor().max(0.0) as usize;
            let last = counts.len() - 1;
            counts[i.min(last)] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Lower edge of the most populated bin.
    pub fn mode_lower_edge(&self) -> f64 {
        let (i, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i)))
            .unwrap();
        self.lo + i as f64 * self.bin_width()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lo + i as f64 * self.bin_width();
            w.write_record([lo.to_string(), (lo + self.bin_width()).to_string(), c.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let (bar, height) = (16u32, 160u32);
        let width = bar * self.counts.len() as u32 + 8;
        let mut img = RgbImage::from_pixel(width, height + 8, Rgb([255, 255, 255]));
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        for (i, &c) in self.counts.iter().enumerate() {
            let h = ((c as f64 / max) * height as f64).round() as u32;
            for x in 0..bar - 2 {
                for y in 0..h {
                    img.put_pixel(4 + i as u32 * bar + x, height + 4 - 1 - y, Rgb([60, 90, 170]));
                }
            }
        }
        for x in 0..width {
            img.put_pixel(x, height + 4, Rgb([0, 0, 0]));
        }
        save(&img, path)
    }
}

/// Top-down plot of a square room with paths drawn as polylines.
pub struct RoomPlot {
    img: RgbImage,
    room: f64,
    px: u32,
}

impl RoomPlot {
    pub fn new(room: f64, px: u32) -> Self {
        let mut img = RgbImage::from_pixel(px, px, Rgb([250, 250, 250]));
        for i in 0..px {
            for p in [(i, 0), (i, px - 1), (0, i), (px - 1, i)] {
                img.put_pixel(p.0, p.1, Rgb([0, 0, 0]));
            }
        }
        Self { img, room, px }
    }

    fn to_px(&self, p: [f64; 2]) -> (i64, i64) {
        let s = (self.px - 1) as f64 / self.room;
        ((p[0] * s).round() as i64, ((self.room - p[1]) * s).round() as i64)
    }

    fn plot(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.px && (y as u32) < self.px {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn line(&mut self, a: [f64; 2], b: [f64; 2], c: Rgb<u8>) {
        let (mut x0, mut y0) = self.to_px(a);
        let (x1, y1) = self.to_px(b);
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.plot(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn path(&mut self, pts: &[[f64; 2]], c: Rgb<u8>) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], c);
        }
    }

    pub fn marker(&mut self, p: [f64; 2], c: Rgb<u8>) {
        let (x, y) = self.to_px(p);
        for dx in -3..=3 {
            for dy in -3..=3 {
                if dx * dx + dy * dy <= 9 {
                    self.plot(x + dx, y + dy, c);
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save(&self.img, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins() {
        let h = Histogram::new(&[0.05, 0.15, 0.16, 0.99, 5.0, -1.0], 10, 0.0, 1.0);
        assert_eq!(h.counts.iter().sum::<usize>(), 6);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 2);
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.mode_lower_edge(), 0.0);
    }

    #[test]
    fn grid_dimensions() {
        let im = Image::from_raw(2, 3, vec![255; 18]);
        let g = image_grid(&[vec![im.clone(), im.clone()], vec![im]], 2);
        assert_eq!(g.dimensions(), (2 * (6 + 2), 2 * (4 + 2)));
        assert_eq!(g.get_pixel(0, 0), &Rgb([255, 255, 255]));
    }
}
