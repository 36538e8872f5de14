//! Local vs cloud: modeled transfer and compute time plus measured
//! reconstruction quality for one scan.
//!
//!     cargo run --release --example local_vs_cloud_bench -- [size] [accel]

use cloudmri::acquisition::{make_mask, simulate_dataset, MaskSpec};
use cloudmri::recon::{benchmark_local_vs_cloud, BenchNode, ReconParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(64), |s| s.parse())?;
    let accel: f64 = args.get(1).map_or(Ok(4.0), |s| s.parse())?;

    let (d, truth) = simulate_dataset(n, 0.005, 42)?;
    let mask = make_mask(&MaskSpec::random_center(n, accel, 0.08, 42))?;
    let params = ReconParams { max_iters: 100, ..ReconParams::default() };
    let rows = benchmark_local_vs_cloud(&d, &mask, &params, &[BenchNode::local(), BenchNode::cloud()], Some(&truth))?;

    println!("{:<6} {:<9} {:>12} {:>14} {:>10} {:>10} {:>7}", "node", "profile", "transfer s", "10 GB transfer", "compute s", "total s", "nrmse");
    for r in rows {
        println!(
            "{:<6} {:<9} {:>12.6} {:>14.4} {:>10.3} {:>10.3} {:>7.4}",
            r.node, r.profile, r.transfer_s, r.transfer_10gb_s, r.compute_s, r.total_s, r.nrmse
        );
    }
    Ok(())
}
