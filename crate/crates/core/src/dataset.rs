//! Synthetic event-frame lane data, PGM storage, and split manifests.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Grid2D, Rng};

/// Raw sensor resolution of the reference dataset.
pub const RAW_WIDTH: usize = 1280;
pub const RAW_HEIGHT: usize = 800;

/// Manifest file written inside every split directory.
pub const MANIFEST_NAME: &str = "manifest.tsv";

/// An input frame together with its binary lane mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Gray intensities in `[0, 1]`.
    pub input: Grid2D,
    /// Lane mask, values exactly 0 or 1.
    pub label: Grid2D,
    pub id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

/// Random-access collection of samples, possibly materialized lazily.
///
/// Raw frames are 1280x800 and a few hundred of them do not fit comfortably
/// in memory, so preprocessing pulls them one at a time through this trait.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn get(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Sample> {
        <[Sample]>::get(self, index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        SampleSource::get(self.as_slice(), index)
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator

/// Knobs of the synthetic lane renderer.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub width: usize,
    pub height: usize,
    pub min_lanes: usize,
    pub max_lanes: usize,
    pub min_stroke: usize,
    pub max_stroke: usize,
    /// Per-pixel probability of a salt-or-pepper event.
    pub flip_prob: f64,
    /// Std of the additive intensity jitter.
    pub jitter_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            width: RAW_WIDTH,
            height: RAW_HEIGHT,
            min_lanes: 2,
            max_lanes: 4,
            min_stroke: 3,
            max_stroke: 9,
            flip_prob: 0.02,
            jitter_std: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synthetic frame size must be positive"));
        }
        if self.min_lanes == 0 || self.min_lanes > self.max_lanes {
            return Err(Error::invalid("lane count range is empty"));
        }
        if self.min_stroke == 0 || self.min_stroke > self.max_stroke {
            return Err(Error::invalid("stroke width range is empty"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) || !(self.jitter_std >= 0.0) {
            return Err(Error::invalid("noise parameters out of range"));
        }
        Ok(())
    }
}

/// Generate `n` synthetic samples. Each sample draws one 64-bit seed from `rng`.
pub fn generate_synthetic(rng: &mut Rng, n: usize, cfg: &SyntheticConfig) -> Result<Vec<Sample>> {
    SyntheticSource::new(rng, n, "syn", cfg.clone())?.materialize()
}

/// Lazily rendered synthetic split: sample `i` is re-rendered from its seed on demand.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    seeds: Vec<u64>,
    prefix: String,
    cfg: SyntheticConfig,
}

impl SyntheticSource {
    pub fn new(rng: &mut Rng, n: usize, prefix: &str, cfg: SyntheticConfig) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        cfg.validate()?;
        let seeds = (0..n).map(|_| rand::RngCore::next_u64(rng)).collect();
        Ok(Self {
            seeds,
            prefix: prefix.to_string(),
            cfg,
        })
    }

    pub fn materialize(&self) -> Result<Vec<Sample>> {
        (0..self.seeds.len()).map(|i| self.get(i)).collect()
    }
}

impl SampleSource for SyntheticSource {
    fn len(&self) -> usize {
        self.seeds.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        let seed = *self
            .seeds
            .get(index)
            .ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))?;
        let mut rng = Rng::new(seed);
        let id = format!("{}_{:05}", self.prefix, index);
        render_sample(&mut rng, &self.cfg, id)
    }
}

struct Lane {
    from: (f64, f64),
    to: (f64, f64),
    half_width: f64,
    intensity: f64,
}

fn render_sample(rng: &mut Rng, cfg: &SyntheticConfig, id: String) -> Result<Sample> {
    let w = cfg.width as f64;
    let h = cfg.height as f64;

    // Vanishing point somewhere in the upper third, horizontally central.
    let vp = (rng.range(0.3 * w, 0.7 * w), rng.range(0.05 * h, h / 3.0));
    let n_lanes = rng.int_inclusive(cfg.min_lanes as i64, cfg.max_lanes as i64) as usize;

    // Bottom anchors spread across (and slightly beyond) the frame width.
    let span = 1.4 * w / n_lanes as f64;
    let mut lanes = Vec::with_capacity(n_lanes);
    for i in 0..n_lanes {
        let bottom_x = -0.2 * w + span * (i as f64 + rng.range(0.25, 0.75));
        let bottom = (bottom_x, h);
        // Start a little below the vanishing point so strokes don't all merge.
        let start_frac = rng.range(0.02, 0.12);
        let from = (vp.0 + (bottom.0 - vp.0) * start_frac, vp.1 + (bottom.1 - vp.1) * start_frac);
        let stroke = rng.int_inclusive(cfg.min_stroke as i64, cfg.max_stroke as i64) as f64;
        lanes.push(Lane {
            from,
            to: bottom,
            half_width: stroke / 2.0,
            intensity: rng.range(0.85, 1.0),
        });
    }

    let mut input = Grid2D::zeros(cfg.height, cfg.width)?;
    let mut label = Grid2D::zeros(cfg.height, cfg.width)?;
    for lane in &lanes {
        draw_segment(&mut input, &mut label, lane);
    }

    // Sensor noise touches the input only.
    for v in input.data_mut() {
        let mut x = *v;
        if cfg.jitter_std > 0.0 {
            x += cfg.jitter_std * rng.standard_normal();
        }
        if rng.uniform() < cfg.flip_prob {
            x = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
        }
        *v = x.clamp(0.0, 1.0);
    }

    Ok(Sample { input, label, id })
}

fn draw_segment(input: &mut Grid2D, label: &mut Grid2D, lane: &Lane) {
    let (x0, y0) = lane.from;
    let (x1, y1) = lane.to;
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    let r = lane.half_width;
    let rows = input.rows() as f64;
    let cols = input.cols() as f64;

    let y_lo = (y0.min(y1) - r).floor().max(0.0) as usize;
    let y_hi = ((y0.max(y1) + r).ceil().min(rows)) as usize;
    for py in y_lo..y_hi {
        let cy = py as f64 + 0.5;
        // Horizontal extent of the stroke on this row.
        let t_row = if dy.abs() > 1e-12 { ((cy - y0) / dy).clamp(0.0, 1.0) } else { 0.0 };
        let x_mid = x0 + dx * t_row;
        let reach = r * (len2.sqrt() / dy.abs().max(1e-12)).min(1e6) + r + 1.0;
        let x_lo = (x_mid - reach).floor().max(0.0);
        let x_hi = (x_mid + reach).ceil().min(cols);
        if x_lo >= x_hi {
            continue;
        }
        for px in x_lo as usize..x_hi as usize {
            let cx = px as f64 + 0.5;
            let t = (((cx - x0) * dx + (cy - y0) * dy) / len2).clamp(0.0, 1.0);
            let ex = x0 + t * dx - cx;
            let ey = y0 + t * dy - cy;
            if ex * ex + ey * ey <= r * r {
                if lane.intensity > input.get(py, px) {
                    input.set(py, px, lane.intensity);
                }
                label.set(py, px, 1.0);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// PGM (P5) storage

/// Write a grid with values in `[0, 1]` as an 8-bit binary graymap.
pub fn save_pgm(path: &Path, img: &Grid2D) -> Result<()> {
    let mut buf = Vec::with_capacity(img.len() + 32);
    write!(buf, "P5\n{} {}\n255\n", img.cols(), img.rows()).expect("write to Vec");
    buf.extend(img.data().iter().map(|&v| to_u8(v)));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Quantize an intensity to a byte, rounding half away from zero.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Read a P5 graymap; values are divided by maxval.
pub fn load_pgm(path: &Path) -> Result<Grid2D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(path, &bytes)
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<Grid2D> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::parse(path, "magic", "missing"))?;
    if magic != b"P5" {
        return Err(Error::parse(
            path,
            "magic",
            format!("expected P5, found '{}'", String::from_utf8_lossy(magic)),
        ));
    }
    let width = header_number(path, bytes, &mut pos, "width")?;
    let height = header_number(path, bytes, &mut pos, "height")?;
    let maxval = header_number(path, bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(path, "width", format!("degenerate size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(path, "maxval", format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(path, "raster", "missing separator after maxval"));
    }
    pos += 1;
    let need = width * height;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::parse(
            path,
            "raster",
            format!("truncated: {} of {need} bytes", raster.len()),
        ));
    }
    let scale = maxval as f64;
    let data = raster[..need].iter().map(|&b| b as f64 / scale).collect();
    Grid2D::from_vec(height, width, data)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn header_number(path: &Path, bytes: &[u8], pos: &mut usize, field: &'static str) -> Result<usize> {
    let tok = next_token(bytes, pos).ok_or_else(|| Error::parse(path, field, "missing"))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(path, field, format!("not a number: '{}'", String::from_utf8_lossy(tok))))
}

/// Load any supported grayscale image: PGM natively, PNG/JPEG/BMP through `image`.
pub fn load_gray(path: &Path) -> Result<Grid2D> {
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        return load_pgm(path);
    }
    let img = image::open(path)
        .map_err(|e| Error::parse(path, "image", e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Grid2D::from_vec(h as usize, w as usize, data)
}

/// Write input and label PGMs. Labels are stored as {0, 255}.
pub fn save_sample(sample: &Sample, input_path: &Path, label_path: &Path) -> Result<()> {
    save_pgm(input_path, &sample.input)?;
    save_pgm(label_path, &sample.label.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
}

/// Load a sample; any non-zero label byte is treated as lane.
pub fn load_sample(input_path: &Path, label_path: &Path, id: &str) -> Result<Sample> {
    let input = load_gray(input_path)?;
    let label = load_gray(label_path)?.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    Ok(Sample {
        input,
        label,
        id: id.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub input: PathBuf,
    pub label: PathBuf,
    pub id: String,
}

/// One split's list of (input, label, id) triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(split: Split) -> Self {
        Self {
            split,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Write `input<TAB>label<TAB>id` lines. Paths are written as given.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.input.display(), e.label.display(), e.id));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Read a manifest, resolving relative paths against its directory and
    /// checking that every file exists and ids are unique.
    pub fn read(path: &Path, split: Split) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    path,
                    "manifest line",
                    format!("line {}: expected 3 tab-separated fields, found {}", lineno + 1, fields.len()),
                ));
            }
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let entry = ManifestEntry {
                input: resolve(fields[0]),
                label: resolve(fields[1]),
                id: fields[2].to_string(),
            };
            for p in [&entry.input, &entry.label] {
                if !p.is_file() {
                    return Err(Error::io(
                        p.clone(),
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                    ));
                }
            }
            if !seen.insert(entry.id.clone()) {
                return Err(Error::parse(path, "id", format!("duplicate id '{}'", entry.id)));
            }
            entries.push(entry);
        }
        Ok(Self { split, entries })
    }
}

/// A manifest whose samples are loaded from disk on demand.
#[derive(Clone, Debug)]
pub struct ManifestSource {
    pub manifest: DatasetManifest,
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        let e = self
            .manifest
            .entries
            .get(index)
            .ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))?;
        load_sample(&e.input, &e.label, &e.id)
    }
}

/// Outcome of scanning a DET-style directory.
#[derive(Clone, Debug)]
pub struct DetScan {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

/// Pair `root/input/*` with `root/label/*` by file stem.
pub fn load_det_layout(root: &Path, split: Split) -> Result<DetScan> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let inputs = stems_in(&root.join("input"))?;
    let labels = stems_in(&root.join("label"))?;
    let mut warnings = Vec::new();
    let mut entries = Vec::new();
    for (stem, input) in &inputs {
        match labels.get(stem) {
            Some(label) => entries.push(ManifestEntry {
                input: input.clone(),
                label: label.clone(),
                id: stem.clone(),
            }),
            None => warnings.push(format!("{}: no matching label", input.display())),
        }
    }
    for (stem, label) in &labels {
        if !inputs.contains_key(stem) {
            warnings.push(format!("{}: no matching input", label.display()));
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyManifest(root.to_path_buf()));
    }
    Ok(DetScan {
        manifest: DatasetManifest { split, entries },
        warnings,
    })
}

fn stems_in(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}
