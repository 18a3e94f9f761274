//! Full-reference quality metrics over [0,1] image buffers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::ImageBuffer;

fn check_dims(a: &ImageBuffer, b: &ImageBuffer, op: &'static str) -> Result<()> {
    if (a.channels, a.height, a.width) != (b.channels, b.height, b.width) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.channels, a.height, a.width],
            rhs: vec![b.channels, b.height, b.width],
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB against peak 1.0. Identical images
/// give +inf.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims(a, b, "psnr")?;
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(-10.0 * mse.log10())
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size - 1) as f64 / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Structural similarity: 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, dynamic range 1.0. Valid-mode windows only (no padding), mean
/// over positions, averaged over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims(a, b, "ssim")?;
    const WIN: usize = 11;
    if a.height < WIN || a.width < WIN {
        return Err(Error::Contract {
            op: "ssim",
            msg: format!("image {}x{} smaller than the {WIN}x{WIN} window", a.height, a.width),
        });
    }
    let w1d = gaussian_window(WIN, 1.5);
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let (h, w) = (a.height, a.width);
    let mut acc = 0.0;
    for c in 0..a.channels {
        // Separable Gaussian filtering of x, y, x^2, y^2, x*y.
        let px = &a.data[c * h * w..(c + 1) * h * w];
        let py = &b.data[c * h * w..(c + 1) * h * w];
        let blur = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
            // Horizontal pass (valid), then vertical pass (valid).
            let w2 = w - WIN + 1;
            let mut tmp = vec![0.0; h * w2];
            for y in 0..h {
                for x in 0..w2 {
                    let mut s = 0.0;
                    for k in 0..WIN {
                        s += w1d[k] * f(y * w + x + k);
                    }
                    tmp[y * w2 + x] = s;
                }
            }
            let h2 = h - WIN + 1;
            let mut out = vec![0.0; h2 * w2];
            for y in 0..h2 {
                for x in 0..w2 {
                    let mut s = 0.0;
                    for k in 0..WIN {
                        s += w1d[k] * tmp[(y + k) * w2 + x];
                    }
                    out[y * w2 + x] = s;
                }
            }
            out
        };
        let mu_x = blur(&|i| px[i]);
        let mu_y = blur(&|i| py[i]);
        let xx = blur(&|i| px[i] * px[i]);
        let yy = blur(&|i| py[i] * py[i]);
        let xy = blur(&|i| px[i] * py[i]);
        let mut total = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = xx[i] - mx * mx;
            let var_y = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        }
        acc += total / mu_x.len() as f64;
    }
    Ok(acc / a.channels as f64)
}

/// Per-image metric rows plus the averages, serializable as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn from_rows(per_image: Vec<ImageMetrics>) -> MetricReport {
        let n = per_image.len().max(1) as f64;
        let mean_psnr = per_image.iter().map(|m| m.psnr).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|m| m.ssim).sum::<f64>() / n;
        MetricReport {
            per_image,
            mean_psnr,
            mean_ssim,
        }
    }
}
