use std::path::Path;

use anyhow::{bail, Context, Result};
use gapfill::{PixelStatus, Scene, ValueSpace};
use image::{Rgb, RgbImage};

const LAND: Rgb<u8> = Rgb([128, 128, 128]);
const CLOUD: Rgb<u8> = Rgb([255, 255, 255]);
const GAP: Rgb<u8> = Rgb([0, 0, 0]);
const GAP_PX: u32 = 4;

pub struct Panel<'a> {
    pub scene: &'a Scene,
    pub space: ValueSpace,
}

/// Shared log10 range over the observed pixels of every panel.
fn log_range(panels: &[Panel]) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in panels {
        for (&v, &s) in p.scene.values().iter().zip(p.scene.status()) {
            if s.is_observed() {
                let l = p.space.to_log10(v);
                if l.is_finite() {
                    lo = lo.min(l);
                    hi = hi.max(l);
                }
            }
        }
    }
    lo.is_finite().then_some((lo, hi))
}

/// Draws the panels side by side, `scale` screen pixels per grid pixel, on
/// one log10 colour scale. Land is gray and cloud white.
pub fn render(panels: &[Panel], scale: u32, gray: bool) -> Result<RgbImage> {
    if panels.is_empty() {
        bail!("nothing to render");
    }
    if scale == 0 {
        bail!("--scale must be >= 1");
    }
    let (h, w) = panels[0].scene.dim();
    if panels.iter().any(|p| p.scene.dim() != (h, w)) {
        bail!("panels have different grid sizes");
    }
    let (lo, hi) = log_range(panels).unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = panels.len() as u32;
    let pw = w as u32 * scale;
    let mut img = RgbImage::from_pixel(n * pw + (n - 1) * GAP_PX, h as u32 * scale, GAP);
    for (i, p) in panels.iter().enumerate() {
        let x0 = i as u32 * (pw + GAP_PX);
        for ((r, c), &s) in p.scene.status().indexed_iter() {
            let colour = match s {
                PixelStatus::Land => LAND,
                PixelStatus::Cloud => CLOUD,
                _ => {
                    let t =
                        ((p.space.to_log10(p.scene.values()[[r, c]]) - lo) / span).clamp(0.0, 1.0);
                    if gray {
                        let g = (t * 255.0).round() as u8;
                        Rgb([g, g, g])
                    } else {
                        let col = colorous::VIRIDIS.eval_continuous(t);
                        Rgb([col.r, col.g, col.b])
                    }
                }
            };
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(x0 + c as u32 * scale + dx, r as u32 * scale + dy, colour);
                }
            }
        }
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", path.display()))
}
