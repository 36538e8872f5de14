//! Image reconstruction from (undersampled) Cartesian k-space.
//!
//! Two routes are provided: the zero-filled inverse DFT and compressed
//! sensing, which solves
//!
//! ```text
//! min_x  1/2 ||M F x - y||^2 + lambda ||W x||_1
//! ```
//!
//! with `F` the unitary DFT, `M` the line mask and `W` an orthonormal Haar
//! wavelet, by iterative soft-thresholding (ISTA) or its momentum variant
//! (FISTA). Because `F` is unitary and `M` a projection, the gradient of the
//! data term is 1-Lipschitz and a unit step is used.

mod bench;
mod haar;
mod metrics;

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{Image, KSpaceGrid, SamplingMask};
use crate::fourier::Fft2;

pub use bench::{benchmark_local_vs_cloud, compute_units, BenchNode, BenchRow, TEN_GB};
pub use haar::Haar2d;
pub use metrics::{image_metrics, Metrics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{width}x{height} is not divisible by 2^{levels} as the Haar levels require")]
    NonPowerOfTwoSize {
        width: usize,
        height: usize,
        levels: u32,
    },
    #[error("invalid reconstruction parameters: {0}")]
    InvalidParams(String),
    #[error("reference image is all zero")]
    ZeroReference,
    #[error("benchmark error: {0}")]
    Bench(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ZeroFilled,
    Ista,
    Fista,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ZeroFilled => "zero_filled",
            Algorithm::Ista => "ista",
            Algorithm::Fista => "fista",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = ReconError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_filled" => Ok(Algorithm::ZeroFilled),
            "ista" => Ok(Algorithm::Ista),
            "fista" => Ok(Algorithm::Fista),
            other => Err(ReconError::InvalidParams(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconParams {
    pub algorithm: Algorithm,
    /// l1 weight on the wavelet coefficients.
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the relative change of the image iterate drops below this.
    pub tol: f64,
    pub wavelet_levels: u32,
}

impl Default for ReconParams {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Fista,
            lambda: 0.01,
            max_iters: 200,
            tol: 1e-6,
            wavelet_levels: 2,
        }
    }
}

impl ReconParams {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ReconError::InvalidParams(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(ReconError::InvalidParams("max_iters must be >= 1".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(ReconError::InvalidParams(format!("tol {} must be > 0", self.tol)));
        }
        if self.wavelet_levels == 0 {
            return Err(ReconError::InvalidParams("wavelet_levels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Complex64>,
}

impl ComplexImage {
    pub fn magnitude(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.values.iter().map(|v| v.norm()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    /// Magnitude of `complex_image`.
    pub image: Image,
    pub complex_image: ComplexImage,
    pub iterations_used: usize,
    /// Objective after each iteration; empty for zero-filled.
    pub objective_trace: Vec<f64>,
    pub wall_seconds: f64,
}

/// Complex soft-threshold: shrinks the magnitude by `lambda`, keeps the phase.
pub fn soft_threshold(z: Complex64, lambda: f64) -> Complex64 {
    let mag = z.norm();
    if mag <= lambda {
        Complex64::default()
    } else {
        z * ((mag - lambda) / mag)
    }
}

fn check_shapes(y: &KSpaceGrid, m: &SamplingMask) -> Result<(), ReconError> {
    if m.height != y.height {
        return Err(ReconError::ShapeMismatch(format!(
            "mask has {} lines, grid has {} rows",
            m.height, y.height
        )));
    }
    if y.values.len() != y.width * y.height {
        return Err(ReconError::ShapeMismatch("grid values length".into()));
    }
    Ok(())
}

fn masked(y: &KSpaceGrid, rows: &[bool]) -> Vec<Complex64> {
    let w = y.width;
    let mut out = y.values.clone();
    for (r, &keep) in rows.iter().enumerate() {
        if !keep {
            out[r * w..(r + 1) * w].fill(Complex64::default());
        }
    }
    out
}

fn finish(values: Vec<Complex64>, y: &KSpaceGrid, iters: usize, trace: Vec<f64>, start: Instant) -> ReconResult {
    let complex_image = ComplexImage {
        width: y.width,
        height: y.height,
        values,
    };
    ReconResult {
        image: complex_image.magnitude(),
        complex_image,
        iterations_used: iters,
        objective_trace: trace,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Inverse DFT with unsampled lines set to zero.
pub fn zero_filled_recon(y: &KSpaceGrid, m: &SamplingMask) -> Result<ReconResult, ReconError> {
    let start = Instant::now();
    check_shapes(y, m)?;
    let mut data = masked(y, &m.rows());
    Fft2::new(y.width, y.height).inverse(&mut data);
    Ok(finish(data, y, 0, Vec::new(), start))
}

/// Operators shared by the iterations of one reconstruction.
struct Problem<'a> {
    fft: Fft2,
    haar: Haar2d,
    rows: Vec<bool>,
    y: &'a KSpaceGrid,
    lambda: f64,
}

impl Problem<'_> {
    /// `x - F^H M^T (M F x - y)`: replaces the sampled rows of `F x` by the data.
    fn gradient_step(&self, x: &[Complex64]) -> Vec<Complex64> {
        let w = self.y.width;
        let mut k = x.to_vec();
        self.fft.forward(&mut k);
        for (r, &s) in self.rows.iter().enumerate() {
            if s {
                k[r * w..(r + 1) * w].copy_from_slice(self.y.row(r));
            }
        }
        self.fft.inverse(&mut k);
        k
    }

    fn prox(&self, mut v: Vec<Complex64>) -> Vec<Complex64> {
        self.haar.forward(&mut v);
        for c in &mut v {
            *c = soft_threshold(*c, self.lambda);
        }
        self.haar.inverse(&mut v);
        v
    }

    fn objective(&self, x: &[Complex64]) -> f64 {
        let w = self.y.width;
        let mut k = x.to_vec();
        self.fft.forward(&mut k);
        let mut misfit = 0.0;
        for (r, &s) in self.rows.iter().enumerate() {
            if s {
                misfit += k[r * w..(r + 1) * w]
                    .iter()
                    .zip(self.y.row(r))
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>();
            }
        }
        let mut c = x.to_vec();
        self.haar.forward(&mut c);
        0.5 * misfit + self.lambda * c.iter().map(|v| v.norm()).sum::<f64>()
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Compressed-sensing reconstruction. `Algorithm::ZeroFilled` short-circuits
/// to [`zero_filled_recon`].
pub fn cs_recon(y: &KSpaceGrid, m: &SamplingMask, p: &ReconParams) -> Result<ReconResult, ReconError> {
    p.validate()?;
    if p.algorithm == Algorithm::ZeroFilled {
        return zero_filled_recon(y, m);
    }
    let start = Instant::now();
    check_shapes(y, m)?;
    let problem = Problem {
        fft: Fft2::new(y.width, y.height),
        haar: Haar2d::new(y.width, y.height, p.wavelet_levels)?,
        rows: m.rows(),
        y,
        lambda: p.lambda,
    };

    let mut x = masked(y, &problem.rows);
    problem.fft.inverse(&mut x);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::new();

    for _ in 0..p.max_iters {
        let point = if p.algorithm == Algorithm::Fista { &z } else { &x };
        let next = problem.prox(problem.gradient_step(point));

        let diff: Vec<Complex64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let change = norm(&diff);
        let base = norm(&x);
        let rel = if base > 0.0 {
            change / base
        } else if change == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };

        if p.algorithm == Algorithm::Fista {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            z = next.iter().zip(&diff).map(|(a, d)| a + d * beta).collect();
            t = t_next;
        }
        x = next;
        trace.push(problem.objective(&x));
        if rel < p.tol {
            break;
        }
    }
    let iters = trace.len();
    Ok(finish(x, y, iters, trace, start))
}

/// Reconstruction of a whole dataset.
#[derive(Debug, Clone)]
pub struct DatasetRecon {
    /// Coil 0 magnitude for single-coil data, root-sum-of-squares otherwise.
    pub image: Image,
    pub per_coil: Vec<ReconResult>,
    /// Requested mask restricted to the rows the dataset contains.
    pub effective_mask: SamplingMask,
}

/// Reconstructs every coil of `d` under `mask` (intersected with the
/// acquired rows) and combines them.
pub fn reconstruct_dataset(
    d: &crate::raw_format::RawDataset,
    mask: &SamplingMask,
    params: &ReconParams,
) -> Result<DatasetRecon, ReconError> {
    params.validate()?;
    let coils = d.header.coils as usize;
    let mut per_coil = Vec::with_capacity(coils);
    let mut effective = None;
    for coil in 0..coils {
        let (grid, acquired) = crate::acquisition::kspace_from_dataset(d, coil)
            .map_err(|e| ReconError::ShapeMismatch(e.to_string()))?;
        if mask.height != grid.height {
            return Err(ReconError::ShapeMismatch(format!(
                "mask has {} lines, dataset has {} rows",
                mask.height, grid.height
            )));
        }
        let eff = mask.intersect(&SamplingMask::from_rows(&acquired));
        if eff.count() == 0 {
            return Err(ReconError::InvalidParams(
                "mask selects no acquired line".into(),
            ));
        }
        per_coil.push(cs_recon(&grid, &eff, params)?);
        effective = Some(eff);
    }
    let effective_mask = effective.ok_or_else(|| ReconError::ShapeMismatch("dataset has no coils".into()))?;
    let image = if per_coil.len() == 1 {
        per_coil[0].image.clone()
    } else {
        let first = &per_coil[0].image;
        let mut pixels = vec![0.0; first.pixels.len()];
        for r in &per_coil {
            for (acc, v) in pixels.iter_mut().zip(&r.image.pixels) {
                *acc += v * v;
            }
        }
        Image {
            width: first.width,
            height: first.height,
            pixels: pixels.into_iter().map(f64::sqrt).collect(),
        }
    };
    Ok(DatasetRecon {
        image,
        per_coil,
        effective_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{forward_kspace, generate_phantom, make_mask, MaskSpec};

    #[test]
    fn shrinkage_values() {
        let a = soft_threshold(Complex64::new(0.5, 0.0), 0.2);
        assert!((a - Complex64::new(0.3, 0.0)).norm() < 1e-15);
        assert_eq!(soft_threshold(Complex64::new(0.06, 0.08), 0.2), Complex64::default());
        // phase preserved
        let b = soft_threshold(Complex64::new(3.0, 4.0), 1.0);
        assert!((b - Complex64::new(2.4, 3.2)).norm() < 1e-12);
    }

    #[test]
    fn zero_filled_full_mask_is_inverse_dft() {
        let p = generate_phantom(16).unwrap();
        let y = forward_kspace(&p, 0.0, 0).unwrap();
        let m = make_mask(&MaskSpec::full(16)).unwrap();
        let r = zero_filled_recon(&y, &m).unwrap();
        let mut inv = y.values.clone();
        Fft2::new(16, 16).inverse(&mut inv);
        for (a, b) in r.complex_image.values.iter().zip(&inv) {
            assert!((a - b).norm() <= 1e-10);
        }
        assert_eq!(r.iterations_used, 0);
        assert!(r.objective_trace.is_empty());
    }

    #[test]
    fn zero_data_gives_zero_image() {
        let y = KSpaceGrid::zeros(8, 8);
        let m = make_mask(&MaskSpec::random_center(8, 2.0, 0.25, 1)).unwrap();
        assert!(zero_filled_recon(&y, &m).unwrap().image.pixels.iter().all(|v| *v == 0.0));
        let r = cs_recon(&y, &m, &ReconParams::default()).unwrap();
        assert!(r.image.pixels.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lambda_zero_full_mask_single_ista_step() {
        let p = generate_phantom(16).unwrap();
        let y = forward_kspace(&p, 0.0, 0).unwrap();
        let m = make_mask(&MaskSpec::full(16)).unwrap();
        let params = ReconParams {
            algorithm: Algorithm::Ista,
            lambda: 0.0,
            max_iters: 1,
            ..ReconParams::default()
        };
        let r = cs_recon(&y, &m, &params).unwrap();
        assert_eq!(r.iterations_used, 1);
        for (a, b) in r.image.pixels.iter().zip(&p.pixels) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn shape_and_size_errors() {
        let y = KSpaceGrid::zeros(12, 12);
        let m = make_mask(&MaskSpec::full(8)).unwrap();
        assert!(matches!(zero_filled_recon(&y, &m), Err(ReconError::ShapeMismatch(_))));
        let m = make_mask(&MaskSpec::full(12)).unwrap();
        let params = ReconParams {
            wavelet_levels: 3,
            ..ReconParams::default()
        };
        assert!(matches!(
            cs_recon(&y, &m, &params),
            Err(ReconError::NonPowerOfTwoSize { .. })
        ));
    }

    #[test]
    fn invalid_params() {
        let bad = [
            ReconParams { lambda: -1.0, ..ReconParams::default() },
            ReconParams { max_iters: 0, ..ReconParams::default() },
            ReconParams { tol: 0.0, ..ReconParams::default() },
            ReconParams { wavelet_levels: 0, ..ReconParams::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn params_json_defaults() {
        let p: ReconParams = serde_json::from_str(r#"{"algorithm":"ista","lambda":0.02}"#).unwrap();
        assert_eq!(p.algorithm, Algorithm::Ista);
        assert_eq!(p.lambda, 0.02);
        assert_eq!(p.max_iters, 200);
        assert_eq!(p.wavelet_levels, 2);
    }
}
