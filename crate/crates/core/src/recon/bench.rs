//! Local versus cloud reconstruction comparison.
//!
//! Each node runs the same reconstruction on the same inputs, so image
//! quality is identical; only the modeled transfer and compute times differ.

use serde::{Deserialize, Serialize};

use super::{image_metrics, reconstruct_dataset, ReconError, ReconParams};
use crate::acquisition::{Image, SamplingMask};
use crate::raw_format::{encode_dataset, RawDataset};
use crate::transport::{estimate_transfer_time, NetworkProfile};

/// Bytes in the "10 GB" reference transfer.
pub const TEN_GB: u64 = 10_000_000_000;

/// Estimated work of a reconstruction job in abstract compute units.
pub fn compute_units(params: &ReconParams, matrix_x: u32, matrix_y: u32) -> f64 {
    params.max_iters as f64 * f64::from(matrix_x) * f64::from(matrix_y) / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchNode {
    pub name: String,
    pub profile: NetworkProfile,
    pub compute_rate_units_per_s: f64,
}

impl BenchNode {
    pub fn local() -> Self {
        Self {
            name: "local".into(),
            profile: NetworkProfile::local_4g(),
            compute_rate_units_per_s: 1.0,
        }
    }

    pub fn cloud() -> Self {
        Self {
            name: "cloud".into(),
            profile: NetworkProfile::cloud_6g(),
            compute_rate_units_per_s: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub node: String,
    pub profile: String,
    pub dataset_bytes: u64,
    pub transfer_s: f64,
    pub transfer_10gb_s: f64,
    pub compute_s: f64,
    pub total_s: f64,
    pub nrmse: f64,
    pub wall_seconds: f64,
}

/// Runs the reconstruction once per node. Without an explicit `reference`
/// the zero-filled reconstruction of every acquired line is used.
pub fn benchmark_local_vs_cloud(
    dataset: &RawDataset,
    mask: &SamplingMask,
    params: &ReconParams,
    nodes: &[BenchNode],
    reference: Option<&Image>,
) -> Result<Vec<BenchRow>, ReconError> {
    if nodes.len() < 2 {
        return Err(ReconError::Bench("at least two node profiles are required".into()));
    }
    for n in nodes {
        if !(n.compute_rate_units_per_s.is_finite() && n.compute_rate_units_per_s > 0.0) {
            return Err(ReconError::Bench(format!("node {}: compute rate must be > 0", n.name)));
        }
        n.profile
            .validate()
            .map_err(|e| ReconError::Bench(e.to_string()))?;
    }
    let bytes = encode_dataset(dataset)
        .map_err(|e| ReconError::Bench(e.to_string()))?
        .len() as u64;
    let fallback;
    let reference = match reference {
        Some(r) => r,
        None => {
            let full = SamplingMask::from_rows(&vec![true; mask.height]);
            let zf = ReconParams::with_algorithm(super::Algorithm::ZeroFilled);
            fallback = reconstruct_dataset(dataset, &full, &zf)?.image;
            &fallback
        }
    };
    let units = compute_units(params, dataset.header.matrix_x, dataset.header.matrix_y);

    nodes
        .iter()
        .map(|node| {
            let recon = reconstruct_dataset(dataset, mask, params)?;
            let nrmse = image_metrics(&recon.image, reference)?.nrmse;
            let transfer_s = estimate_transfer_time(bytes, &node.profile);
            let compute_s = units / node.compute_rate_units_per_s;
            Ok(BenchRow {
                node: node.name.clone(),
                profile: node.profile.name.clone(),
                dataset_bytes: bytes,
                transfer_s,
                transfer_10gb_s: estimate_transfer_time(TEN_GB, &node.profile),
                compute_s,
                total_s: transfer_s + compute_s,
                nrmse,
                wall_seconds: recon.per_coil.iter().map(|r| r.wall_seconds).sum(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{make_mask, simulate_dataset, MaskSpec};
    use crate::recon::Algorithm;

    fn setup() -> (RawDataset, Image, SamplingMask, ReconParams) {
        let (d, phantom) = simulate_dataset(16, 0.0, 3).unwrap();
        let mask = make_mask(&MaskSpec::random_center(16, 2.0, 0.125, 3)).unwrap();
        let params = ReconParams {
            max_iters: 20,
            ..ReconParams::with_algorithm(Algorithm::Fista)
        };
        (d, phantom, mask, params)
    }

    #[test]
    fn same_compute_different_network() {
        let (d, phantom, mask, params) = setup();
        let a = BenchNode {
            compute_rate_units_per_s: 1.0,
            ..BenchNode::local()
        };
        let b = BenchNode {
            compute_rate_units_per_s: 1.0,
            ..BenchNode::cloud()
        };
        let rows = benchmark_local_vs_cloud(&d, &mask, &params, &[a, b], Some(&phantom)).unwrap();
        assert_eq!(rows[0].nrmse, rows[1].nrmse);
        assert_eq!(rows[0].compute_s, rows[1].compute_s);
        assert_ne!(rows[0].total_s, rows[1].total_s);
    }

    #[test]
    fn compute_scales_with_rate() {
        let (d, _, mask, params) = setup();
        let rows =
            benchmark_local_vs_cloud(&d, &mask, &params, &[BenchNode::local(), BenchNode::cloud()], None)
                .unwrap();
        assert!((rows[1].compute_s * 100.0 - rows[0].compute_s).abs() < 1e-15);
        assert_eq!(rows[1].transfer_10gb_s, 0.01);
        assert!((rows[0].transfer_10gb_s - 816.0).abs() <= 0.5);
    }

    #[test]
    fn needs_two_nodes() {
        let (d, _, mask, params) = setup();
        assert!(benchmark_local_vs_cloud(&d, &mask, &params, &[BenchNode::local()], None).is_err());
    }
}
