//! PNG I/O and the on-disk dataset layout
//! `<root>/<split>/{left,right,target}/<stem>.png`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb};

use crate::data::DualPixelSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VIEWS: [&str; 3] = ["left", "right", "target"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> f32 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Reads a PNG as an `H×W×3` tensor in `[0, 1]`. Gray images are replicated
/// to three channels and alpha is dropped.
pub fn read_image(path: &Path) -> Result<(Tensor<f32>, BitDepth)> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let color = img.color();
    let sixteen = color.bytes_per_pixel() / color.channel_count() >= 2;
    let (data, depth): (Vec<f32>, BitDepth) = if sixteen {
        let buf = img.to_rgb16();
        let scale = BitDepth::Sixteen.max_value();
        (
            buf.into_raw()
                .into_iter()
                .map(|v| f32::from(v) / scale)
                .collect(),
            BitDepth::Sixteen,
        )
    } else {
        let buf = img.to_rgb8();
        let scale = BitDepth::Eight.max_value();
        (
            buf.into_raw()
                .into_iter()
                .map(|v| f32::from(v) / scale)
                .collect(),
            BitDepth::Eight,
        )
    };
    Ok((Tensor::new(vec![h, w, 3], data)?, depth))
}

/// Writes an `H×W×3` tensor, clamping to `[0, 1]` and rounding to the
/// nearest code value.
pub fn write_png(path: &Path, img: &Tensor<f32>, depth: BitDepth) -> Result<()> {
    let [h, w, 3] = *img.shape() else {
        return Err(Error::invalid(
            "write_png",
            format!("expected H×W×3, got {:?}", img.shape()),
        ));
    };
    let scale = depth.max_value();
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * scale).round();
    let dynamic = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v) as u8).collect();
            DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, raw).expect("sized buffer"),
            )
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v) as u16).collect();
            DynamicImage::ImageRgb16(
                ImageBuffer::<Rgb<u16>, _>::from_raw(w as u32, h as u32, raw)
                    .expect("sized buffer"),
            )
        }
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    dynamic
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Sorted stems of the `.png` files in `dir`; an absent directory is empty.
pub fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(stems);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

/// Lazily loaded split of a dual-pixel dataset, in lexicographic stem order.
#[derive(Debug, Clone)]
pub struct DatasetStream {
    split_dir: PathBuf,
    stems: Vec<String>,
    next: usize,
}

/// Opens `<root>/<split>`; images are read as the stream is consumed.
pub fn load_dataset(root: &Path, split: Split) -> Result<DatasetStream> {
    let split_dir = root.join(split.dir_name());
    if !split_dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!(
                "dataset split directory {} does not exist",
                split_dir.display()
            ),
        )));
    }
    let mut stems = BTreeSet::new();
    for view in VIEWS {
        stems.extend(png_stems(&split_dir.join(view))?);
    }
    Ok(DatasetStream {
        split_dir,
        stems: stems.into_iter().collect(),
        next: 0,
    })
}

impl DatasetStream {
    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    fn load(&self, stem: &str) -> Result<DualPixelSample> {
        let mut views = Vec::with_capacity(3);
        for view in VIEWS {
            let path = self.split_dir.join(view).join(format!("{stem}.png"));
            if !path.is_file() {
                return Err(Error::MissingCounterpart {
                    stem: stem.to_string(),
                    missing: view,
                });
            }
            views.push(read_image(&path)?.0);
        }
        let target = views.pop().unwrap();
        let right = views.pop().unwrap();
        let left = views.pop().unwrap();
        DualPixelSample::new(stem, left, right, target)
    }
}

impl Iterator for DatasetStream {
    type Item = Result<DualPixelSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let stem = self.stems.get(self.next)?.clone();
        self.next += 1;
        Some(self.load(&stem))
    }
}

/// Writes a sample into the dataset layout under `split_dir`.
pub fn write_sample(split_dir: &Path, sample: &DualPixelSample, depth: BitDepth) -> Result<()> {
    for (view, img) in VIEWS
        .iter()
        .zip([&sample.left, &sample.right, &sample.target])
    {
        write_png(
            &split_dir.join(view).join(format!("{}.png", sample.id)),
            img,
            depth,
        )?;
    }
    Ok(())
}
