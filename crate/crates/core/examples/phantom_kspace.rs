//! Generates the Shepp-Logan phantom, its k-space and a few undersampling
//! masks, then prints the zero-filled error for each.
//!
//!     cargo run --example phantom_kspace

use cloudmri::acquisition::{forward_kspace, generate_phantom, make_mask, MaskSpec};
use cloudmri::recon::{image_metrics, zero_filled_recon};

fn ascii(img: &cloudmri::acquisition::Image, step: usize) {
    let ramp = b" .:-=+*#%@";
    let max = img.max().max(1e-12);
    for y in (0..img.height).step_by(step) {
        let line: String = (0..img.width)
            .step_by(step / 2)
            .map(|x| ramp[((img.get(x, y) / max) * 9.0).round().clamp(0.0, 9.0) as usize] as char)
            .collect();
        println!("  {line}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 64;
    let phantom = generate_phantom(n)?;
    println!("phantom {n}x{n}:");
    ascii(&phantom, 4);

    let k = forward_kspace(&phantom, 0.0, 0)?;
    let img_energy: f64 = phantom.pixels.iter().map(|p| p * p).sum();
    println!("energy image {img_energy:.4}, k-space {:.4} (unitary transform)", k.energy());

    for r in [1.0, 2.0, 4.0, 8.0] {
        let spec = if r == 1.0 { MaskSpec::full(n) } else { MaskSpec::random_center(n, r, 0.08, 42) };
        let mask = make_mask(&spec)?;
        let zf = zero_filled_recon(&k, &mask)?;
        let m = image_metrics(&zf.image, &phantom)?;
        println!("R={r}: {:>2} of {n} lines, zero-filled NRMSE {:.4}, PSNR {:.1} dB", mask.count(), m.nrmse, m.psnr_db);
    }
    Ok(())
}
