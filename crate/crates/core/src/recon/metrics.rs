use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ReconError;
use crate::acquisition::Image;

/// Image quality versus a reference.
///
/// `psnr_db` is `f64::INFINITY` when the images are identical; in JSON that
/// is written as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nrmse: f64,
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr_db: f64,
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

pub fn image_metrics(x: &Image, reference: &Image) -> Result<Metrics, ReconError> {
    if x.width != reference.width || x.height != reference.height {
        return Err(ReconError::ShapeMismatch(format!(
            "image {}x{} vs reference {}x{}",
            x.width, x.height, reference.width, reference.height
        )));
    }
    let ref_norm = reference.pixels.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(ReconError::ZeroReference);
    }
    let err_sq: f64 = x
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let nrmse = err_sq.sqrt() / ref_norm;
    let rmse = (err_sq / x.pixels.len() as f64).sqrt();
    let peak = reference.pixels.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let psnr_db = if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (peak / rmse).log10()
    };
    Ok(Metrics { nrmse, psnr_db })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(pixels: Vec<f64>) -> Image {
        Image {
            width: 2,
            height: pixels.len() / 2,
            pixels,
        }
    }

    #[test]
    fn identical_images() {
        let a = img(vec![0.1, 0.5, 1.0, 0.0]);
        let m = image_metrics(&a, &a).unwrap();
        assert_eq!(m.nrmse, 0.0);
        assert_eq!(m.psnr_db, f64::INFINITY);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"nrmse":0.0,"psnr_db":null}"#);
        assert_eq!(serde_json::from_str::<Metrics>(&json).unwrap(), m);
    }

    #[test]
    fn hand_arithmetic() {
        // ||0.1 * 1||_2 / ||1||_2 over four pixels = 0.2 / 2
        let m = image_metrics(&img(vec![0.9; 4]), &img(vec![1.0; 4])).unwrap();
        assert!((m.nrmse - 0.1).abs() < 1e-12);
        assert!((m.psnr_db - 20.0).abs() < 1e-9);
    }

    #[test]
    fn scale_invariance() {
        let x = img(vec![0.3, 0.2, 0.9, 0.4]);
        let r = img(vec![0.25, 0.2, 1.0, 0.5]);
        let x2 = img(x.pixels.iter().map(|v| v * 2.0).collect());
        let r2 = img(r.pixels.iter().map(|v| v * 2.0).collect());
        let a = image_metrics(&x, &r).unwrap().nrmse;
        let b = image_metrics(&x2, &r2).unwrap().nrmse;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(
            image_metrics(&img(vec![1.0; 4]), &img(vec![0.0; 4])),
            Err(ReconError::ZeroReference)
        );
        assert!(matches!(
            image_metrics(&img(vec![1.0; 4]), &img(vec![1.0; 6])),
            Err(ReconError::ShapeMismatch(_))
        ));
    }
}
