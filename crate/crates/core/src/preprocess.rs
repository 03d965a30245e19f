//! Frame reduction: augmentation, vertical crop, block-average resize and the
//! label inflate/re-binarize step that keeps one-pixel lanes alive.

use crate::dataset::{Sample, SampleSource};
use crate::error::{Error, Result};
use crate::numerics::{Grid2D, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    /// Rows removed from the top of every raw frame.
    pub crop_top: usize,
    /// Rows removed from the bottom.
    pub crop_bottom: usize,
    /// Network input size as (width, height).
    pub input_size: (usize, usize),
    /// Output mask size as (width, height).
    pub label_size: (usize, usize),
    /// Value given to lane pixels before the label is averaged down.
    pub denorm_value: f64,
    /// Augmented copies appended to the training split.
    pub augment_count: usize,
    /// Vertical translation range, pixels (symmetric).
    pub max_translate: i64,
    /// Rotation range, degrees (symmetric).
    pub max_rotate_deg: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            crop_top: 300,
            crop_bottom: 200,
            input_size: (80, 20),
            label_size: (40, 10),
            denorm_value: 400.0,
            augment_count: 271,
            max_translate: 100,
            max_rotate_deg: 30.0,
        }
    }
}

/// Randomly translate vertically and rotate a raw sample.
pub fn augment(sample: &Sample, rng: &mut Rng, cfg: &PreprocessConfig) -> Result<Sample> {
    let shift = rng.int_inclusive(-cfg.max_translate, cfg.max_translate);
    let angle = rng.range(-cfg.max_rotate_deg, cfg.max_rotate_deg);
    transform(sample, shift, angle)
}

/// Apply the same translation (+ = down) and rotation about the frame centre to
/// input and label. Inputs are sampled bilinearly, labels by nearest neighbour;
/// anything mapped from outside the frame becomes 0.
pub fn transform(sample: &Sample, shift: i64, angle_deg: f64) -> Result<Sample> {
    if sample.input.rows() != sample.label.rows() || sample.input.cols() != sample.label.cols() {
        return Err(Error::invalid("input and label sizes differ"));
    }
    let (input, label) = if angle_deg == 0.0 {
        (shift_rows(&sample.input, shift), shift_rows(&sample.label, shift))
    } else {
        warp(&sample.input, &sample.label, shift, angle_deg.to_radians())
    };
    Ok(Sample {
        input,
        label,
        id: sample.id.clone(),
    })
}

fn shift_rows(img: &Grid2D, shift: i64) -> Grid2D {
    let rows = img.rows() as i64;
    let mut out = Grid2D::zeros(img.rows(), img.cols()).expect("non-empty");
    for r in 0..rows {
        let src = r - shift;
        if (0..rows).contains(&src) {
            let cols = img.cols();
            out.data_mut()[r as usize * cols..(r as usize + 1) * cols].copy_from_slice(img.row(src as usize));
        }
    }
    out
}

fn warp(input: &Grid2D, label: &Grid2D, shift: i64, theta: f64) -> (Grid2D, Grid2D) {
    let (rows, cols) = (input.rows(), input.cols());
    let (cx, cy) = (cols as f64 / 2.0, rows as f64 / 2.0);
    let (sin, cos) = theta.sin_cos();
    let mut out_in = Grid2D::zeros(rows, cols).expect("non-empty");
    let mut out_lb = Grid2D::zeros(rows, cols).expect("non-empty");
    for r in 0..rows {
        for c in 0..cols {
            // Inverse map: undo the translation, then rotate by -theta.
            let px = c as f64 + 0.5 - cx;
            let py = r as f64 + 0.5 - shift as f64 - cy;
            let sx = cos * px + sin * py + cx;
            let sy = -sin * px + cos * py + cy;
            out_in.set(r, c, bilinear(input, sx - 0.5, sy - 0.5));
            let (nx, ny) = (sx.floor(), sy.floor());
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < cols && (ny as usize) < rows {
                out_lb.set(r, c, label.get(ny as usize, nx as usize));
            }
        }
    }
    (out_in, out_lb)
}

fn bilinear(img: &Grid2D, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi as usize >= img.cols() || yi as usize >= img.rows() {
            0.0
        } else {
            img.get(yi as usize, xi as usize)
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Keep rows `[top, rows - bottom)`.
pub fn crop_vertical(img: &Grid2D, top: usize, bottom: usize) -> Result<Grid2D> {
    if top + bottom >= img.rows() {
        return Err(Error::invalid(format!(
            "cropping {top}+{bottom} rows from a {}-row image leaves nothing",
            img.rows()
        )));
    }
    let rows = img.rows() - top - bottom;
    let start = top * img.cols();
    Grid2D::from_vec(rows, img.cols(), img.data()[start..start + rows * img.cols()].to_vec())
}

/// Integer-ratio area interpolation: every output pixel is the mean of its
/// source block. Blocks are summed row by row, left to right.
pub fn area_resize(img: &Grid2D, out_rows: usize, out_cols: usize) -> Result<Grid2D> {
    if out_rows == 0 || out_cols == 0 || img.rows() % out_rows != 0 || img.cols() % out_cols != 0 {
        return Err(Error::invalid(format!(
            "area resize {}x{} -> {out_rows}x{out_cols} needs integer block ratios",
            img.rows(),
            img.cols()
        )));
    }
    let (bh, bw) = (img.rows() / out_rows, img.cols() / out_cols);
    let count = (bh * bw) as f64;
    let mut out = Grid2D::zeros(out_rows, out_cols)?;
    for orow in 0..out_rows {
        for ocol in 0..out_cols {
            let mut sum = 0.0;
            for r in orow * bh..(orow + 1) * bh {
                for &v in &img.row(r)[ocol * bw..(ocol + 1) * bw] {
                    sum += v;
                }
            }
            out.set(orow, ocol, sum / count);
        }
    }
    Ok(out)
}

/// Inflate lane pixels, average down to the label size, then mark every
/// non-zero block as lane.
pub fn process_label(label: &Grid2D, cfg: &PreprocessConfig) -> Result<Grid2D> {
    if let Some(&bad) = label.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("label is not binary (found {bad})")));
    }
    let inflated = label.map(|v| v * cfg.denorm_value);
    let (w, h) = cfg.label_size;
    Ok(area_resize(&inflated, h, w)?.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
}

/// Crop and resize one raw sample to network resolution.
pub fn process_sample(sample: &Sample, cfg: &PreprocessConfig) -> Result<Sample> {
    let crop = |g: &Grid2D| crop_vertical(g, cfg.crop_top, cfg.crop_bottom);
    let (w, h) = cfg.input_size;
    Ok(Sample {
        input: area_resize(&crop(&sample.input)?, h, w)?,
        label: process_label(&crop(&sample.label)?, cfg)?,
        id: sample.id.clone(),
    })
}

/// Reduce a whole split. Training splits additionally get `augment_count`
/// transformed copies of samples drawn with replacement, appended after the
/// originals.
pub fn process_split<S>(source: &S, rng: &mut Rng, cfg: &PreprocessConfig, is_train: bool) -> Result<Vec<Sample>>
where
    S: SampleSource + ?Sized,
{
    let n = source.len();
    let extra = if is_train { cfg.augment_count } else { 0 };
    let mut out = Vec::with_capacity(n + extra);
    for i in 0..n {
        out.push(process_sample(&source.get(i)?, cfg)?);
    }
    if extra > 0 && n == 0 {
        return Err(Error::invalid("cannot augment an empty split"));
    }
    for k in 0..extra {
        let pick = rng.below(n);
        let mut aug = augment(&source.get(pick)?, rng, cfg)?;
        aug.id = format!("{}_aug{:03}", aug.id, k);
        out.push(process_sample(&aug, cfg)?);
    }
    Ok(out)
}
