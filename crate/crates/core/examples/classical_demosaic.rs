//! The bilinear baseline on Bayer and QxQ mosaics of the same scene.

use qxqnet::cfa::{self, CfaSpec};
use qxqnet::datapipe::synthetic_scene;
use qxqnet::losses;

fn main() -> qxqnet::Result<()> {
    let gt = synthetic_scene(192, 192, 3);
    for spec in [CfaSpec::bayer(), CfaSpec::qxq()] {
        let out = cfa::classical_demosaic(&cfa::mosaic(&gt, spec)?);
        println!(
            "{spec}: PSNR {} dB, MS-SSIM {:.4}",
            losses::format_psnr(losses::psnr(&out, &gt, 1.0)?),
            losses::ms_ssim(&out, &gt)?
        );
    }
    Ok(())
}
