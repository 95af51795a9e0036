//! PSNR and MS-SSIM of increasingly noisy copies of one image.

use qxqnet::datapipe::synthetic_scene;
use qxqnet::image::RgbImage;
use qxqnet::losses::{self, MetricsRow};
use rand::{Rng, SeedableRng};

fn main() -> qxqnet::Result<()> {
    let gt = synthetic_scene(192, 192, 2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::new();
    for amp in [0.0f32, 0.01, 0.05, 0.2] {
        let noisy = if amp == 0.0 {
            gt.clone()
        } else {
            let d = gt.data().iter().map(|v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0)).collect();
            RgbImage::new(gt.width(), gt.height(), d)?
        };
        rows.push(MetricsRow {
            method: format!("noise {amp}"),
            psnr: losses::psnr(&noisy, &gt, 1.0)?,
            ms_ssim: losses::ms_ssim(&noisy, &gt)?,
            params: None,
            macs: None,
        });
    }
    print!("{}", losses::format_table(&rows));
    Ok(())
}
