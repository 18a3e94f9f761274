//! PNG decode/encode, [0,1] image buffers, paired-dataset indexing and
//! patch sampling.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A decoded image: CHW layout, all values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// Source bit depth (8 or 16).
    pub bit_depth: u8,
}

impl ImageBuffer {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert!(channels == 1 || channels == 3);
        assert!(height > 0 && width > 0);
        assert_eq!(data.len(), channels * height * width);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        ImageBuffer {
            channels,
            height,
            width,
            data,
            bit_depth: 8,
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImageBuffer {
        assert!(y0 + h <= self.height && x0 + w <= self.width);
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    data.push(self.get(c, y0 + y, x0 + x));
                }
            }
        }
        let mut out = ImageBuffer::new(self.channels, h, w, data);
        out.bit_depth = self.bit_depth;
        out
    }

    /// Replicate-pad to (h2, w2), original content at the top-left.
    pub fn pad_replicate(&self, h2: usize, w2: usize) -> ImageBuffer {
        assert!(h2 >= self.height && w2 >= self.width);
        let mut data = Vec::with_capacity(self.channels * h2 * w2);
        for c in 0..self.channels {
            for y in 0..h2 {
                for x in 0..w2 {
                    data.push(self.get(c, y.min(self.height - 1), x.min(self.width - 1)));
                }
            }
        }
        let mut out = ImageBuffer::new(self.channels, h2, w2, data);
        out.bit_depth = self.bit_depth;
        out
    }
}

pub fn load_png(path: &Path) -> Result<ImageBuffer> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let decoded = image::open(path).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        source: e,
    })?;
    use image::DynamicImage::*;
    let (channels, height, width, bit_depth, data): (usize, usize, usize, u8, Vec<f64>) =
        match decoded {
            ImageLuma8(img) => {
                let (w, h) = img.dimensions();
                let data = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
                (1, h as usize, w as usize, 8, data)
            }
            ImageLuma16(img) => {
                let (w, h) = img.dimensions();
                let data = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
                (1, h as usize, w as usize, 16, data)
            }
            ImageRgb8(img) => {
                let (w, h) = img.dimensions();
                let (w, h) = (w as usize, h as usize);
                let mut data = vec![0.0; 3 * w * h];
                for (x, y, p) in img.enumerate_pixels() {
                    for c in 0..3 {
                        data[(c * h + y as usize) * w + x as usize] = p.0[c] as f64 / 255.0;
                    }
                }
                (3, h, w, 8, data)
            }
            ImageRgb16(img) => {
                let (w, h) = img.dimensions();
                let (w, h) = (w as usize, h as usize);
                let mut data = vec![0.0; 3 * w * h];
                for (x, y, p) in img.enumerate_pixels() {
                    for c in 0..3 {
                        data[(c * h + y as usize) * w + x as usize] = p.0[c] as f64 / 65535.0;
                    }
                }
                (3, h, w, 16, data)
            }
            other => {
                return Err(Error::UnsupportedColorType {
                    path: path.to_path_buf(),
                    detail: format!("{:?}; expected 8/16-bit grayscale or RGB", other.color()),
                })
            }
        };
    let mut buf = ImageBuffer::new(channels, height, width, data);
    buf.bit_depth = bit_depth;
    Ok(buf)
}

/// Encode as 8-bit PNG (grayscale or RGB to match the buffer).
pub fn save_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (img.width as u32, img.height as u32);
    let res = match img.channels {
        1 => {
            let pixels: Vec<u8> = img.data.iter().map(|v| to_u8(*v)).collect();
            image::GrayImage::from_raw(w, h, pixels)
                .expect("sized buffer")
                .save(path)
        }
        3 => {
            let mut pixels = vec![0u8; 3 * img.width * img.height];
            for c in 0..3 {
                for y in 0..img.height {
                    for x in 0..img.width {
                        pixels[(y * img.width + x) * 3 + c] = to_u8(img.get(c, y, x));
                    }
                }
            }
            image::RgbImage::from_raw(w, h, pixels)
                .expect("sized buffer")
                .save(path)
        }
        _ => unreachable!("ImageBuffer enforces 1 or 3 channels"),
    };
    res.map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        source: e,
    })
}

/// One (low, normal) filename pairing.
#[derive(Debug, Clone)]
pub struct PairRecord {
    pub name: String,
    pub low_path: PathBuf,
    pub normal_path: PathBuf,
}

/// Directory convention: root/low/*.png paired with root/high/*.png by
/// identical filename. Indexing is sorted by filename, so deterministic
/// for a given tree.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub records: Vec<PairRecord>,
}

impl PairedDataset {
    pub fn index(root: &Path) -> Result<PairedDataset> {
        let low_dir = root.join("low");
        let high_dir = root.join("high");
        for d in [&low_dir, &high_dir] {
            if !d.is_dir() {
                return Err(Error::Dataset(format!(
                    "expected directory {} (layout: root/low + root/high)",
                    d.display()
                )));
            }
        }
        let mut names: Vec<String> = std::fs::read_dir(&low_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| {
                e.path()
                    .extension()
                    .map(|x| x.eq_ignore_ascii_case("png"))
                    .unwrap_or(false)
            })
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::Dataset(format!(
                "no PNG files under {}",
                low_dir.display()
            )));
        }
        let mut records = Vec::with_capacity(names.len());
        for name in names {
            let normal_path = high_dir.join(&name);
            if !normal_path.exists() {
                return Err(Error::Dataset(format!(
                    "low image {name} has no partner in {}",
                    high_dir.display()
                )));
            }
            records.push(PairRecord {
                low_path: low_dir.join(&name),
                normal_path,
                name,
            });
        }
        Ok(PairedDataset { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A decoded pair with verified matching dimensions.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub name: String,
    pub low: ImageBuffer,
    pub normal: ImageBuffer,
}

pub fn load_pair(rec: &PairRecord) -> Result<LoadedPair> {
    let low = load_png(&rec.low_path)?;
    let normal = load_png(&rec.normal_path)?;
    if (low.height, low.width, low.channels) != (normal.height, normal.width, normal.channels) {
        return Err(Error::Dataset(format!(
            "pair {} dimensions differ: low {}x{}x{}, normal {}x{}x{}",
            rec.name, low.channels, low.height, low.width, normal.channels, normal.height,
            normal.width
        )));
    }
    Ok(LoadedPair {
        name: rec.name.clone(),
        low,
        normal,
    })
}

/// Identical random crop window applied to both images of a pair; the
/// window is uniform over all valid positions.
pub fn sample_patch_pair(
    pair: &LoadedPair,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageBuffer, ImageBuffer)> {
    let (h, w) = (pair.low.height, pair.low.width);
    if h < size || w < size {
        return Err(Error::PatchTooLarge {
            path: PathBuf::from(&pair.name),
            h,
            w,
            patch: size,
        });
    }
    let y0 = rng.gen_range(0..=(h - size));
    let x0 = rng.gen_range(0..=(w - size));
    Ok((
        pair.low.crop(y0, x0, size, size),
        pair.normal.crop(y0, x0, size, size),
    ))
}

/// Value range convention for tensors derived from images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Keep [0,1].
    ZeroOne,
    /// Map to [-1,1] (diffusion convention).
    Sym,
}

pub fn normalize<T: Scalar>(img: &ImageBuffer, mode: NormMode) -> Tensor<T> {
    let data: Vec<T> = img
        .data
        .iter()
        .map(|v| match mode {
            NormMode::ZeroOne => T::fl(*v),
            NormMode::Sym => T::fl(2.0 * v - 1.0),
        })
        .collect();
    Tensor::from_vec(data, &[img.channels, img.height, img.width])
}

/// Inverse of [`normalize`], clamping into [0,1].
pub fn denormalize<T: Scalar>(t: &Tensor<T>, mode: NormMode) -> ImageBuffer {
    let (c, h, w) = match t.shape() {
        [c, h, w] => (*c, *h, *w),
        other => panic!("denormalize expects [C,H,W], got {other:?}"),
    };
    let data: Vec<f64> = t
        .data()
        .iter()
        .map(|v| {
            let x = v.as_f64();
            match mode {
                NormMode::ZeroOne => x.clamp(0.0, 1.0),
                NormMode::Sym => ((x + 1.0) / 2.0).clamp(0.0, 1.0),
            }
        })
        .collect();
    ImageBuffer::new(c, h, w, data)
}

/// Smooth random image in [lo, hi]: bilinear interpolation of a coarse
/// random grid. Used for synthetic training fixtures.
pub fn synth_smooth_image(
    channels: usize,
    height: usize,
    width: usize,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> ImageBuffer {
    let gh = 5usize;
    let gw = 5usize;
    let grid: Vec<f64> = (0..channels * gh * gw)
        .map(|_| rng.gen_range(lo..hi))
        .collect();
    let mut data = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                let fy = y as f64 / (height - 1).max(1) as f64 * (gh - 1) as f64;
                let fx = x as f64 / (width - 1).max(1) as f64 * (gw - 1) as f64;
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
                let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
                let g = |yy: usize, xx: usize| grid[(c * gh + yy) * gw + xx];
                let v = g(y0, x0) * (1.0 - dy) * (1.0 - dx)
                    + g(y0, x1) * (1.0 - dy) * dx
                    + g(y1, x0) * dy * (1.0 - dx)
                    + g(y1, x1) * dy * dx;
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageBuffer::new(channels, height, width, data)
}

/// Write `count` synthetic (low, normal) PNG pairs under root/low and
/// root/high: smooth dim images, with gamma brightening as the
/// ground-truth enhancement.
pub fn write_synthetic_pairs(
    root: &Path,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<()> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(root.join("low"))?;
    std::fs::create_dir_all(root.join("high"))?;
    for i in 0..count {
        let low = synth_smooth_image(3, height, width, 0.02, 0.25, &mut rng);
        let normal = gamma_brighten(&low, 2.8);
        save_png(&root.join("low").join(format!("{i:03}.png")), &low)?;
        save_png(&root.join("high").join(format!("{i:03}.png")), &normal)?;
    }
    Ok(())
}

/// Pointwise v^(1/gamma): an invertible brightening for synthetic
/// low/normal pairs.
pub fn gamma_brighten(img: &ImageBuffer, gamma: f64) -> ImageBuffer {
    let data = img.data.iter().map(|v| v.powf(1.0 / gamma)).collect();
    let mut out = ImageBuffer::new(img.channels, img.height, img.width, data);
    out.bit_depth = img.bit_depth;
    out
}
