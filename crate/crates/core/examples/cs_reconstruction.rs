//! Compares zero-filling, ISTA and FISTA on an undersampled phantom.
//!
//!     cargo run --release --example cs_reconstruction -- [size] [accel] [lambda]

use cloudmri::acquisition::{forward_kspace, generate_phantom, make_mask, MaskSpec};
use cloudmri::recon::{cs_recon, image_metrics, zero_filled_recon, Algorithm, ReconParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(128), |s| s.parse())?;
    let accel: f64 = args.get(1).map_or(Ok(4.0), |s| s.parse())?;
    let lambda: f64 = args.get(2).map_or(Ok(0.01), |s| s.parse())?;

    let truth = generate_phantom(n)?;
    let y = forward_kspace(&truth, 0.005, 1)?;
    let mask = make_mask(&MaskSpec::random_center(n, accel, 0.08, 42))?;
    println!("{n}x{n}, R={accel}, {} lines sampled, lambda={lambda}", mask.count());

    let zf = zero_filled_recon(&y, &mask)?;
    let m = image_metrics(&zf.image, &truth)?;
    println!("{:<12} nrmse {:.4}  psnr {:5.2} dB", "zero-filled", m.nrmse, m.psnr_db);

    for algorithm in [Algorithm::Ista, Algorithm::Fista] {
        let params = ReconParams { algorithm, lambda, max_iters: 300, tol: 1e-6, wavelet_levels: 3 };
        let t = std::time::Instant::now();
        let r = cs_recon(&y, &mask, &params)?;
        let m = image_metrics(&r.image, &truth)?;
        let trace = &r.objective_trace;
        println!(
            "{:<12} nrmse {:.4}  psnr {:5.2} dB  {} iters  objective {:.5} -> {:.5}  {:.2}s",
            algorithm.name(),
            m.nrmse,
            m.psnr_db,
            r.iterations_used,
            trace.first().copied().unwrap_or(f64::NAN),
            trace.last().copied().unwrap_or(f64::NAN),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
