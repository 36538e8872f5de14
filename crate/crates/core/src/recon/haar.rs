//! Orthonormal separable 2D Haar wavelet.

use num_complex::Complex64;

use super::ReconError;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy)]
pub struct Haar2d {
    width: usize,
    height: usize,
    levels: u32,
}

impl Haar2d {
    /// Both dimensions must be divisible by `2^levels`.
    pub fn new(width: usize, height: usize, levels: u32) -> Result<Self, ReconError> {
        if levels == 0 {
            return Err(ReconError::InvalidParams("wavelet_levels must be >= 1".into()));
        }
        let block = 1usize
            .checked_shl(levels)
            .filter(|b| *b <= width.max(height))
            .ok_or(ReconError::NonPowerOfTwoSize {
                width,
                height,
                levels,
            })?;
        if width % block != 0 || height % block != 0 {
            return Err(ReconError::NonPowerOfTwoSize {
                width,
                height,
                levels,
            });
        }
        Ok(Self {
            width,
            height,
            levels,
        })
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.width * self.height);
        let mut scratch = vec![Complex64::default(); self.width.max(self.height)];
        let (mut w, mut h) = (self.width, self.height);
        for _ in 0..self.levels {
            for y in 0..h {
                let row = &mut data[y * self.width..y * self.width + w];
                analyze(row, &mut scratch[..w]);
            }
            let mut col = vec![Complex64::default(); h];
            for x in 0..w {
                for y in 0..h {
                    col[y] = data[y * self.width + x];
                }
                analyze(&mut col, &mut scratch[..h]);
                for y in 0..h {
                    data[y * self.width + x] = col[y];
                }
            }
            w /= 2;
            h /= 2;
        }
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.width * self.height);
        let mut scratch = vec![Complex64::default(); self.width.max(self.height)];
        for level in (0..self.levels).rev() {
            let (w, h) = (self.width >> level, self.height >> level);
            let mut col = vec![Complex64::default(); h];
            for x in 0..w {
                for y in 0..h {
                    col[y] = data[y * self.width + x];
                }
                synthesize(&mut col, &mut scratch[..h]);
                for y in 0..h {
                    data[y * self.width + x] = col[y];
                }
            }
            for y in 0..h {
                let row = &mut data[y * self.width..y * self.width + w];
                synthesize(row, &mut scratch[..w]);
            }
        }
    }
}

// Pairwise averages to the first half, differences to the second.
fn analyze(v: &mut [Complex64], scratch: &mut [Complex64]) {
    let half = v.len() / 2;
    for i in 0..half {
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        scratch[i] = (a + b) * INV_SQRT2;
        scratch[half + i] = (a - b) * INV_SQRT2;
    }
    v.copy_from_slice(&scratch[..v.len()]);
}

fn synthesize(v: &mut [Complex64], scratch: &mut [Complex64]) {
    let half = v.len() / 2;
    for i in 0..half {
        let (s, d) = (v[i], v[half + i]);
        scratch[2 * i] = (s + d) * INV_SQRT2;
        scratch[2 * i + 1] = (s - d) * INV_SQRT2;
    }
    v.copy_from_slice(&scratch[..v.len()]);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_compacts_to_one_coefficient() {
        let h = Haar2d::new(8, 8, 3).unwrap();
        let mut d = vec![Complex64::new(1.0, 0.0); 64];
        h.forward(&mut d);
        assert!((d[0].re - 8.0).abs() < 1e-12);
        assert!(d[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn rejects_indivisible_sizes() {
        assert!(matches!(
            Haar2d::new(12, 12, 3),
            Err(ReconError::NonPowerOfTwoSize { .. })
        ));
        assert!(Haar2d::new(12, 12, 2).is_ok());
        assert!(Haar2d::new(4, 4, 40).is_err());
    }
}
