//! Phantom generation, simulated k-space acquisition and undersampling masks.

use num_complex::{Complex32, Complex64};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::Fft2;
use crate::raw_format::{flags, Acquisition, DatasetHeader, RawDataset};

/// Vendor string stamped on datasets produced by [`simulate_dataset`]; the
/// gateway uses it to regenerate the ground-truth phantom.
pub const SIM_VENDOR: &str = "CMRI-SIM";

pub const MIN_PHANTOM_SIZE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("phantom size {0} below minimum {MIN_PHANTOM_SIZE}")]
    SizeTooSmall(usize),
    #[error("image is {width}x{height}; a square image is required")]
    NonSquareImage { width: usize, height: usize },
    #[error("sampling budget round(n/R)={budget} cannot hold {center} center lines")]
    InfeasibleBudget { budget: usize, center: usize },
    #[error("invalid mask parameters: {0}")]
    InvalidMask(String),
    #[error("dataset cannot be converted to k-space: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceGrid {
    pub width: usize,
    pub height: usize,
    /// Row-major, row = ky. DC at (0, 0).
    pub values: Vec<Complex64>,
}

impl KSpaceGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![Complex64::default(); width * height],
        }
    }

    pub fn row(&self, ky: usize) -> &[Complex64] {
        &self.values[ky * self.width..(ky + 1) * self.width]
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPattern {
    Full,
    UniformLines,
    RandomLinesCenter,
}

impl MaskPattern {
    pub fn name(self) -> &'static str {
        match self {
            MaskPattern::Full => "full",
            MaskPattern::UniformLines => "uniform_lines",
            MaskPattern::RandomLinesCenter => "random_lines_center",
        }
    }
}

/// Serialized form of a mask request, as carried in job specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub pattern: MaskPattern,
    pub n: usize,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn full(n: usize) -> Self {
        Self {
            pattern: MaskPattern::Full,
            n,
            acceleration: 1.0,
            center_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn random_center(n: usize, acceleration: f64, center_fraction: f64, seed: u64) -> Self {
        Self {
            pattern: MaskPattern::RandomLinesCenter,
            n,
            acceleration,
            center_fraction,
            seed,
        }
    }
}

/// Which phase-encode lines are acquired.
///
/// Lines are indexed in centered order: line `i` holds spatial frequency
/// `i - n/2`, so the centermost lines are the low frequencies. Use
/// [`SamplingMask::row_sampled`] to query by k-space grid row, where the
/// DC term is row 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    pub height: usize,
    pub sampled: Vec<bool>,
    pub pattern_name: String,
    pub acceleration: f64,
    pub seed: u64,
}

impl SamplingMask {
    pub fn count(&self) -> usize {
        self.sampled.iter().filter(|s| **s).count()
    }

    /// Centered line index of a grid row.
    pub fn line_of_row(&self, row: usize) -> usize {
        (row + self.height / 2) % self.height
    }

    pub fn row_sampled(&self, row: usize) -> bool {
        self.sampled[self.line_of_row(row)]
    }

    /// Sampling flags in grid-row order.
    pub fn rows(&self) -> Vec<bool> {
        (0..self.height).map(|r| self.row_sampled(r)).collect()
    }

    /// Mask sampling exactly the given grid rows.
    pub fn from_rows(rows: &[bool]) -> Self {
        let height = rows.len();
        let mut sampled = vec![false; height];
        for (row, &s) in rows.iter().enumerate() {
            sampled[(row + height / 2) % height] = s;
        }
        let count = sampled.iter().filter(|s| **s).count().max(1);
        Self {
            height,
            sampled,
            pattern_name: "explicit".into(),
            acceleration: height as f64 / count as f64,
            seed: 0,
        }
    }

    /// Lines sampled by both masks.
    pub fn intersect(&self, other: &SamplingMask) -> SamplingMask {
        let sampled: Vec<bool> = self
            .sampled
            .iter()
            .zip(&other.sampled)
            .map(|(a, b)| *a && *b)
            .collect();
        let count = sampled.iter().filter(|s| **s).count().max(1);
        SamplingMask {
            height: self.height,
            sampled,
            pattern_name: self.pattern_name.clone(),
            acceleration: self.height as f64 / count as f64,
            seed: self.seed,
        }
    }
}

// Modified Shepp-Logan (Toft): intensity, semi-axis a, semi-axis b, x0, y0, angle in degrees.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Normalized coordinates of pixel `(col, row)` in an `n x n` image: x to the
/// right, y up, both spanning (-1, 1).
pub fn pixel_coords(col: usize, row: usize, n: usize) -> (f64, f64) {
    let n = n as f64;
    (
        (2.0 * col as f64 + 1.0 - n) / n,
        (n - 1.0 - 2.0 * row as f64) / n,
    )
}

/// `n x n` modified Shepp-Logan phantom, intensities clipped to [0, 1].
pub fn generate_phantom(n: usize) -> Result<Image, AcquisitionError> {
    if n < MIN_PHANTOM_SIZE {
        return Err(AcquisitionError::SizeTooSmall(n));
    }
    let mut img = Image::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            let (x, y) = pixel_coords(col, row, n);
            let mut v = 0.0;
            for [amp, a, b, x0, y0, deg] in SHEPP_LOGAN {
                let (s, c) = deg.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * c + dy * s;
                let w = -dx * s + dy * c;
                if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                    v += amp;
                }
            }
            img.pixels[row * n + col] = v.clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

/// Unitary 2D DFT of a square image plus optional complex Gaussian noise.
pub fn forward_kspace(
    img: &Image,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceGrid, AcquisitionError> {
    if img.width != img.height {
        return Err(AcquisitionError::NonSquareImage {
            width: img.width,
            height: img.height,
        });
    }
    let mut values: Vec<Complex64> = img.pixels.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    Fft2::new(img.width, img.height).forward(&mut values);
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| AcquisitionError::InvalidMask(format!("noise sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut values {
            v.re += normal.sample(&mut rng);
            v.im += normal.sample(&mut rng);
        }
    }
    Ok(KSpaceGrid {
        width: img.width,
        height: img.height,
        values,
    })
}

fn round_count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

pub fn make_mask(spec: &MaskSpec) -> Result<SamplingMask, AcquisitionError> {
    let n = spec.n;
    let r = spec.acceleration;
    let c = spec.center_fraction;
    if n == 0 {
        return Err(AcquisitionError::InvalidMask("n must be >= 1".into()));
    }
    if !(r.is_finite() && r >= 1.0) {
        return Err(AcquisitionError::InvalidMask(format!(
            "acceleration {r} must be >= 1"
        )));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(AcquisitionError::InvalidMask(format!(
            "center_fraction {c} outside [0, 1]"
        )));
    }
    let mut sampled = vec![false; n];
    match spec.pattern {
        MaskPattern::Full => sampled.fill(true),
        MaskPattern::UniformLines => {
            let step = round_count(r).max(1);
            for line in (0..n).step_by(step) {
                sampled[line] = true;
            }
        }
        MaskPattern::RandomLinesCenter => {
            let budget = round_count(n as f64 / r);
            let center = round_count(c * n as f64);
            if budget < center || budget == 0 {
                return Err(AcquisitionError::InfeasibleBudget { budget, center });
            }
            let start = n / 2 - center / 2;
            sampled[start..start + center].fill(true);
            let rest: Vec<usize> = (0..n).filter(|&i| !sampled[i]).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            for pick in index::sample(&mut rng, rest.len(), budget - center) {
                sampled[rest[pick]] = true;
            }
        }
    }
    Ok(SamplingMask {
        height: n,
        sampled,
        pattern_name: spec.pattern.name().into(),
        acceleration: r,
        seed: spec.seed,
    })
}

/// Packs per-coil k-space grids into a dataset, one acquisition per sampled row.
pub fn dataset_from_kspace(
    header: DatasetHeader,
    coils: &[KSpaceGrid],
    mask: &SamplingMask,
) -> Result<RawDataset, AcquisitionError> {
    let first = coils
        .first()
        .ok_or_else(|| AcquisitionError::Dataset("no coil grids".into()))?;
    let (w, h) = (first.width, first.height);
    if coils.iter().any(|g| g.width != w || g.height != h) || mask.height != h {
        return Err(AcquisitionError::Dataset("coil grid / mask shapes differ".into()));
    }
    let header = DatasetHeader {
        matrix_x: w as u32,
        matrix_y: h as u32,
        coils: coils.len() as u32,
        ..header
    };
    let rows: Vec<usize> = (0..h).filter(|&r| mask.row_sampled(r)).collect();
    let last = rows.len().saturating_sub(1);
    let acquisitions = rows
        .iter()
        .enumerate()
        .map(|(i, &row)| {
            let mut f = 0;
            if i == 0 {
                f |= flags::FIRST_IN_SLICE;
            }
            if i == last {
                f |= flags::LAST_IN_SLICE;
            }
            Acquisition {
                flags: f,
                coil_count: coils.len() as u16,
                num_samples: w as u32,
                ky_index: row as u32,
                samples: coils
                    .iter()
                    .flat_map(|g| g.row(row).iter().map(|v| Complex32::new(v.re as f32, v.im as f32)))
                    .collect(),
            }
        })
        .collect();
    Ok(RawDataset::new(header, acquisitions))
}

/// Grid for one coil, zero on rows the dataset does not contain, plus the
/// acquired-row flags.
pub fn kspace_from_dataset(
    d: &RawDataset,
    coil: usize,
) -> Result<(KSpaceGrid, Vec<bool>), AcquisitionError> {
    let (w, h) = (d.header.matrix_x as usize, d.header.matrix_y as usize);
    if coil >= d.header.coils as usize {
        return Err(AcquisitionError::Dataset(format!(
            "coil {coil} out of range (dataset has {})",
            d.header.coils
        )));
    }
    let mut grid = KSpaceGrid::zeros(w, h);
    let mut acquired = vec![false; h];
    for a in &d.acquisitions {
        let row = a.ky_index as usize;
        if row >= h || a.num_samples as usize != w || a.samples.len() < (coil + 1) * w {
            return Err(AcquisitionError::Dataset(format!("malformed acquisition at ky {row}")));
        }
        for (dst, src) in grid.values[row * w..(row + 1) * w].iter_mut().zip(a.coil(coil)) {
            *dst = Complex64::new(f64::from(src.re), f64::from(src.im));
        }
        acquired[row] = true;
    }
    Ok((grid, acquired))
}

/// Single-coil, fully sampled dataset of an `n x n` phantom, plus the phantom.
pub fn simulate_dataset(
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(RawDataset, Image), AcquisitionError> {
    let phantom = generate_phantom(n)?;
    let grid = forward_kspace(&phantom, noise_sigma, seed)?;
    let header = DatasetHeader {
        vendor: SIM_VENDOR.into(),
        patient_pseudo_id: format!("phantom-{n}-seed-{seed}"),
        ..DatasetHeader::with_matrix(n as u32, n as u32)
    };
    let mask = make_mask(&MaskSpec::full(n))?;
    Ok((dataset_from_kspace(header, &[grid], &mask)?, phantom))
}
