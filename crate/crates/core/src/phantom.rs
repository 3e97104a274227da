//! Synthetic nine-class head phantoms, structured label noise and datasets.
//!
//! A phantom is a stack of nested ellipses (skin ⊃ bone ⊃ CSF ⊃ GM ⊃ WM)
//! with ventricles inside the white matter and small anterior cavity and eye
//! structures. Intensities are per-class means plus Gaussian noise, with CSF
//! and bone deliberately close so that intensity alone cannot separate them.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, format_err, Error, Result};
use crate::label::LabelMap;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 9;

/// Display names in class-index order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "background",
    "WM",
    "GM",
    "CSF",
    "bones",
    "skin",
    "cavities",
    "eyes",
    "ventricles",
];

/// Machine-readable keys in class-index order.
pub const CLASS_KEYS: [&str; NUM_CLASSES] = [
    "background",
    "wm",
    "gm",
    "csf",
    "bone",
    "skin",
    "cavities",
    "eyes",
    "ventricles",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum HeadClass {
    Background = 0,
    WhiteMatter = 1,
    GrayMatter = 2,
    Csf = 3,
    Bone = 4,
    Skin = 5,
    Cavities = 6,
    Eyes = 7,
    Ventricles = 8,
}

impl HeadClass {
    pub const ALL: [HeadClass; NUM_CLASSES] = [
        HeadClass::Background,
        HeadClass::WhiteMatter,
        HeadClass::GrayMatter,
        HeadClass::Csf,
        HeadClass::Bone,
        HeadClass::Skin,
        HeadClass::Cavities,
        HeadClass::Eyes,
        HeadClass::Ventricles,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }
}

/// Mean intensity per class plus additive Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityModel {
    pub means: [f32; NUM_CLASSES],
    pub noise_sigma: f32,
}

impl Default for IntensityModel {
    fn default() -> Self {
        Self {
            //       bg    WM    GM    CSF   bone  skin  cav   eyes  vent
            means: [0.00, 0.80, 0.55, 0.22, 0.15, 0.65, 0.05, 0.40, 0.22],
            noise_sigma: 0.06,
        }
    }
}

impl IntensityModel {
    /// Bhattacharyya coefficient of two classes' intensity distributions
    /// (equal-variance Gaussians); zero means perfectly separable.
    pub fn overlap(&self, a: HeadClass, b: HeadClass) -> f64 {
        let d = (self.means[a.index()] - self.means[b.index()]) as f64;
        let s = self.noise_sigma as f64;
        (-d * d / (8.0 * s * s)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Maximum head-centre offset, as a fraction of the half-extent.
    pub center_jitter: f64,
    /// Maximum relative change of the global head scale.
    pub scale_jitter: f64,
    pub intensity: IntensityModel,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            center_jitter: 0.03,
            scale_jitter: 0.05,
            intensity: IntensityModel::default(),
            seed: 0,
        }
    }
}

/// Nested head layers as normalised semi-axes `(vertical, horizontal)`.
const LAYERS: [(HeadClass, f64, f64); 5] = [
    (HeadClass::Skin, 0.90, 0.78),
    (HeadClass::Bone, 0.83, 0.71),
    (HeadClass::Csf, 0.73, 0.61),
    (HeadClass::GrayMatter, 0.64, 0.52),
    (HeadClass::WhiteMatter, 0.49, 0.38),
];
const MIN_RESOLUTION: usize = 32;
/// Eye radius in pixels at 64 rows.
const EYE_RADIUS_AT_64: f64 = 1.4;

impl PhantomSpec {
    pub fn with_resolution(resolution: usize, seed: u64) -> Self {
        Self {
            height: resolution,
            width: resolution,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_RESOLUTION || self.width < MIN_RESOLUTION {
            return config_err(format!(
                "phantom needs at least {MIN_RESOLUTION}×{MIN_RESOLUTION} pixels, got {}×{}",
                self.height, self.width
            ));
        }
        if !(0.0..0.5).contains(&self.center_jitter) || !(0.0..0.5).contains(&self.scale_jitter) {
            return config_err("jitter fractions must lie in [0, 0.5)");
        }
        let reach = LAYERS[0].1 * (1.0 + self.scale_jitter) + self.center_jitter;
        if reach > 0.98 {
            return config_err(format!(
                "jittered head reaches {reach:.3} of the half-extent and would leave the image"
            ));
        }
        if !(self.intensity.noise_sigma >= 0.0 && self.intensity.noise_sigma.is_finite()) {
            return config_err("noise sigma must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl Ellipse {
    /// Whether the centre of pixel `(y, x)` lies inside.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

/// Concrete geometry of one phantom sample, in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGeometry {
    /// Skin, bone, CSF, GM, WM.
    pub layers: [(HeadClass, Ellipse); 5],
    pub ventricles: [Ellipse; 2],
    pub cavities: Ellipse,
    pub eyes: [Ellipse; 2],
}

impl PhantomGeometry {
    pub fn layer(&self, class: HeadClass) -> Option<&Ellipse> {
        self.layers.iter().find(|(c, _)| *c == class).map(|(_, e)| e)
    }

    fn label_at(&self, y: usize, x: usize) -> HeadClass {
        let mut label = HeadClass::Background;
        for (class, e) in &self.layers {
            if e.contains(y, x) {
                label = *class;
            } else {
                break;
            }
        }
        if self.ventricles.iter().any(|e| e.contains(y, x)) {
            label = HeadClass::Ventricles;
        }
        if self.cavities.contains(y, x) {
            label = HeadClass::Cavities;
        }
        if self.eyes.iter().any(|e| e.contains(y, x)) {
            label = HeadClass::Eyes;
        }
        label
    }
}

fn sample_rng(spec: &PhantomSpec, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index))
}

fn draw_geometry(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> PhantomGeometry {
    let (hy, hx) = (spec.height as f64 / 2.0, spec.width as f64 / 2.0);
    let jitter = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
    let cy = hy * (1.0 + jitter(rng, spec.center_jitter));
    let cx = hx * (1.0 + jitter(rng, spec.center_jitter));
    let scale = 1.0 + jitter(rng, spec.scale_jitter);
    let at = |u: f64, v: f64, ry: f64, rx: f64| Ellipse {
        cy: cy + u * hy * scale,
        cx: cx + v * hx * scale,
        ry: ry * hy * scale,
        rx: rx * hx * scale,
    };
    let layers = LAYERS.map(|(class, ry, rx)| (class, at(0.0, 0.0, ry, rx)));
    let ventricles = [at(-0.05, -0.12, 0.20, 0.06), at(-0.05, 0.12, 0.20, 0.06)];
    let cavities = at(-0.78, 0.0, 0.07, 0.18);
    let eye_r = EYE_RADIUS_AT_64 * spec.height.min(spec.width) as f64 / 64.0 * scale;
    let eye = |v: f64| Ellipse {
        ry: eye_r,
        rx: eye_r,
        ..at(-0.72, v, 0.0, 0.0)
    };
    PhantomGeometry {
        layers,
        ventricles,
        cavities,
        eyes: [eye(-0.38), eye(0.38)],
    }
}

/// The geometry that [`generate_phantom`] realises for sample `index`.
pub fn phantom_geometry(spec: &PhantomSpec, index: u64) -> Result<PhantomGeometry> {
    spec.validate()?;
    Ok(draw_geometry(spec, &mut sample_rng(spec, index)))
}

/// Generates image `[1, H, W]` and clean labels for sample `index`.
pub fn generate_phantom(spec: &PhantomSpec, index: u64) -> Result<(Tensor, LabelMap)> {
    spec.validate()?;
    let mut rng = sample_rng(spec, index);
    let geometry = draw_geometry(spec, &mut rng);
    let (h, w) = (spec.height, spec.width);
    let mut labels = LabelMap::filled(h, w, 0);
    for y in 0..h {
        for x in 0..w {
            labels.set(y, x, geometry.label_at(y, x) as u8);
        }
    }
    let noise = Normal::new(0.0f64, spec.intensity.noise_sigma as f64)
        .map_err(|e| Error::Config(e.to_string()))?;
    let pixels = labels
        .data()
        .iter()
        .map(|&c| spec.intensity.means[c as usize] + noise.sample(&mut rng) as f32)
        .collect();
    Ok((Tensor::new(vec![1, h, w], pixels)?, labels))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapPair {
    pub a: u8,
    pub b: u8,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub swap_pairs: Vec<SwapPair>,
    /// Chebyshev distance (pixels) from the other class within which swaps may happen.
    pub band_width: usize,
    pub seed: u64,
}

impl NoiseSpec {
    /// CSF↔bone and cavities↔bone at rate 0.3 within a 2-pixel band.
    pub fn default_preset(seed: u64) -> Self {
        Self {
            swap_pairs: vec![
                SwapPair {
                    a: HeadClass::Csf as u8,
                    b: HeadClass::Bone as u8,
                    rate: 0.3,
                },
                SwapPair {
                    a: HeadClass::Cavities as u8,
                    b: HeadClass::Bone as u8,
                    rate: 0.3,
                },
            ],
            band_width: 2,
            seed,
        }
    }

    pub fn none(seed: u64) -> Self {
        Self {
            swap_pairs: Vec::new(),
            band_width: 0,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "default" => Ok(Self::default_preset(seed)),
            "none" => Ok(Self::none(seed)),
            other => config_err(format!("unknown noise preset `{other}` (expected default|none)")),
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        for p in &self.swap_pairs {
            if !(0.0..=1.0).contains(&p.rate) {
                return config_err(format!("swap rate {} outside [0, 1]", p.rate));
            }
            if p.a as usize >= classes || p.b as usize >= classes || p.a == p.b {
                return config_err(format!("invalid swap pair ({}, {})", p.a, p.b));
            }
        }
        Ok(())
    }

    /// Classes that the noise process can change.
    pub fn affected_classes(&self) -> Vec<u8> {
        let mut classes: Vec<u8> = self
            .swap_pairs
            .iter()
            .filter(|p| p.rate > 0.0)
            .flat_map(|p| [p.a, p.b])
            .collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Marks every pixel within Chebyshev distance `radius` of a `class` pixel.
fn dilate(labels: &LabelMap, class: u8, radius: usize) -> Vec<bool> {
    let (h, w) = (labels.height(), labels.width());
    // Horizontal pass via prefix counts, then vertical.
    let mut horiz = vec![false; h * w];
    let mut prefix = vec![0usize; w.max(h) + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + (labels.get(y, x) == class) as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(w);
            horiz[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; h * w];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + horiz[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    out
}

/// Boundary-banded class swaps.
///
/// Eligibility is judged on the input labels. Pairs are processed in order;
/// within a pair, pixels are visited in row-major order and each eligible
/// pixel (class `a` within the band of `b`, or vice versa, and not already
/// flipped by an earlier pair) consumes one `f64` draw from a ChaCha8 stream
/// seeded with `noise.seed`, flipping when the draw is below the pair's rate.
pub fn corrupt_labels(labels: &LabelMap, noise: &NoiseSpec) -> LabelMap {
    let mut out = labels.clone();
    let mut flipped = vec![false; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    for pair in &noise.swap_pairs {
        let near_a = dilate(labels, pair.a, noise.band_width);
        let near_b = dilate(labels, pair.b, noise.band_width);
        for (i, &c) in labels.data().iter().enumerate() {
            if flipped[i] {
                continue;
            }
            let target = if c == pair.a && near_b[i] {
                pair.b
            } else if c == pair.b && near_a[i] {
                pair.a
            } else {
                continue;
            };
            if rng.random::<f64>() < pair.rate {
                out.data_mut()[i] = target;
                flipped[i] = true;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => config_err(format!("unknown split `{other}` (expected train|val|test)")),
        }
    }

    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            other => format_err(format!("invalid split code {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    /// `(train, val, test)` counts: floors of each share, remainder to train.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let fractions = [self.train, self.val, self.test];
        if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return config_err(format!("split fractions {fractions:?} must be positive and sum to 1"));
        }
        let val = (self.val * n as f64).floor() as usize;
        let test = (self.test * n as f64).floor() as usize;
        let train = n - val - test;
        if train == 0 || val == 0 || test == 0 {
            return config_err(format!("{n} samples cannot populate all three splits"));
        }
        Ok((train, val, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// `[1, H, W]` per sample.
    pub images: Vec<Tensor>,
    pub clean_labels: Vec<LabelMap>,
    pub noisy_labels: Vec<LabelMap>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sample indices in ascending order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn labels(&self, source: LabelSource) -> &[LabelMap] {
        match source {
            LabelSource::Clean => &self.clean_labels,
            LabelSource::Noisy => &self.noisy_labels,
        }
    }

    /// Stacks the images at `indices` into `[N, 1, H, W]`.
    pub fn batch_images(&self, indices: &[usize]) -> Result<Tensor> {
        let items: Vec<&Tensor> = indices.iter().map(|&i| &self.images[i]).collect();
        Tensor::stack(&items)
    }

    pub fn batch_labels(&self, source: LabelSource, indices: &[usize]) -> Vec<LabelMap> {
        let labels = self.labels(source);
        indices.iter().map(|&i| labels[i].clone()).collect()
    }

    /// Pixel fraction per class over the given samples.
    pub fn class_frequencies(&self, source: LabelSource, indices: &[usize]) -> Vec<f64> {
        let mut counts = vec![0u64; self.classes];
        let labels = self.labels(source);
        for &i in indices {
            for &c in labels[i].data() {
                counts[c as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let n = self.images.len();
        if self.clean_labels.len() != n || self.noisy_labels.len() != n || self.splits.len() != n {
            return format_err("dataset lists have different lengths");
        }
        for (img, (clean, noisy)) in self.images.iter().zip(self.clean_labels.iter().zip(&self.noisy_labels)) {
            if img.shape() != [1, self.height, self.width] {
                return format_err(format!("image shape {:?} does not match dataset", img.shape()));
            }
            for l in [clean, noisy] {
                if (l.height(), l.width()) != (self.height, self.width) {
                    return format_err("label map shape does not match dataset");
                }
                l.check_range(self.classes)
                    .map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSource {
    Clean,
    Noisy,
}

impl LabelSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(LabelSource::Clean),
            "noisy" => Ok(LabelSource::Noisy),
            other => config_err(format!("unknown label source `{other}` (expected clean|noisy)")),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Clean => "clean",
            LabelSource::Noisy => "noisy",
        }
    }
}

/// Generates `n` phantoms, corrupts their labels and assigns splits.
///
/// Sample `i` uses phantom stream `i` of `spec.seed` and noise seed
/// `derive_seed(noise.seed, i)`. The split is a ChaCha8 shuffle (seeded by
/// `seed`) of `0..n`: the first `train` entries go to train, then val, then test.
pub fn build_dataset(
    n: usize,
    spec: &PhantomSpec,
    noise: &NoiseSpec,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Dataset> {
    if n < 5 {
        return config_err(format!("need at least 5 samples, got {n}"));
    }
    spec.validate()?;
    noise.validate(NUM_CLASSES)?;
    let (train, val, _) = fractions.sizes(n)?;

    let mut images = Vec::with_capacity(n);
    let mut clean_labels = Vec::with_capacity(n);
    let mut noisy_labels = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let (image, labels) = generate_phantom(spec, i)?;
        noisy_labels.push(corrupt_labels(&labels, &noise.with_seed(derive_seed(noise.seed, i))));
        clean_labels.push(labels);
        images.push(image);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }

    Ok(Dataset {
        height: spec.height,
        width: spec.width,
        classes: NUM_CLASSES,
        images,
        clean_labels,
        noisy_labels,
        splits,
    })
}

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const IMAGES: &str = "images.f32";
const CLEAN: &str = "labels_clean.u8";
const NOISY: &str = "labels_noisy.u8";
const SPLITS: &str = "splits.u8";

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    dataset.check()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = format!(
        "format_version={DATASET_FORMAT_VERSION}\ncount={}\nheight={}\nwidth={}\nclass_count={}\n",
        dataset.len(),
        dataset.height,
        dataset.width,
        dataset.classes
    );
    fs::write(dir.join(MANIFEST), manifest)?;
    let mut images = Vec::with_capacity(4 * dataset.len() * dataset.height * dataset.width);
    for img in &dataset.images {
        for v in img.data() {
            images.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(IMAGES), images)?;
    let flat = |labels: &[LabelMap]| labels.iter().flat_map(|l| l.data().iter().copied()).collect::<Vec<u8>>();
    fs::write(dir.join(CLEAN), flat(&dataset.clean_labels))?;
    fs::write(dir.join(NOISY), flat(&dataset.noisy_labels))?;
    fs::write(dir.join(SPLITS), dataset.splits.iter().map(|s| s.code()).collect::<Vec<u8>>())?;
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    fs::read(dir.join(name)).map_err(|e| Error::Format(format!("cannot read {name}: {e}")))
}

fn parse_manifest(text: &str) -> Result<HashMap<String, usize>> {
    let mut values = HashMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("manifest line `{line}` is not key=value")))?;
        let key = key.trim();
        if !["format_version", "count", "height", "width", "class_count"].contains(&key) {
            return format_err(format!("unknown manifest key `{key}`"));
        }
        let value = value
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("manifest value for `{key}` is not an integer")))?;
        values.insert(key.to_string(), value);
    }
    Ok(values)
}

/// Reads a dataset directory. Shapes come from the manifest.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = String::from_utf8(read_file(dir, MANIFEST)?)
        .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let values = parse_manifest(&manifest)?;
    let get = |key: &str| {
        values
            .get(key)
            .copied()
            .ok_or_else(|| Error::Format(format!("manifest lacks `{key}`")))
    };
    let version = get("format_version")?;
    if version != DATASET_FORMAT_VERSION as usize {
        return format_err(format!("unsupported dataset format version {version}"));
    }
    let (count, height, width, classes) = (get("count")?, get("height")?, get("width")?, get("class_count")?);
    if classes == 0 || classes > 256 {
        return format_err(format!("invalid class_count {classes}"));
    }
    let plane = height
        .checked_mul(width)
        .ok_or_else(|| Error::Format("manifest dimensions overflow".into()))?;

    let images = read_file(dir, IMAGES)?;
    let clean = read_file(dir, CLEAN)?;
    let noisy = read_file(dir, NOISY)?;
    let splits = read_file(dir, SPLITS)?;
    let expect = |name: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            format_err(format!("{name} holds {got} bytes, manifest implies {want}"))
        }
    };
    expect(IMAGES, images.len(), 4 * count * plane)?;
    expect(CLEAN, clean.len(), count * plane)?;
    expect(NOISY, noisy.len(), count * plane)?;
    expect(SPLITS, splits.len(), count)?;

    let mut dataset = Dataset {
        height,
        width,
        classes,
        images: Vec::with_capacity(count),
        clean_labels: Vec::with_capacity(count),
        noisy_labels: Vec::with_capacity(count),
        splits: splits.iter().map(|&c| Split::from_code(c)).collect::<Result<_>>()?,
    };
    for i in 0..count {
        let bytes = &images[4 * i * plane..4 * (i + 1) * plane];
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        dataset.images.push(Tensor::new(vec![1, height, width], data)?);
        dataset
            .clean_labels
            .push(LabelMap::new(height, width, clean[i * plane..(i + 1) * plane].to_vec())?);
        dataset
            .noisy_labels
            .push(LabelMap::new(height, width, noisy[i * plane..(i + 1) * plane].to_vec())?);
    }
    dataset.check()?;
    Ok(dataset)
}
