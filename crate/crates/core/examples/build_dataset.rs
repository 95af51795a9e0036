//! Build a hybrid manifest from a scratch tree of 3CCD dumps and PNGs,
//! then load its training patches.

use qxqnet::datapipe::{self, HybridConfig, Split};
use qxqnet::rawio;
use std::path::Path;

fn main() -> qxqnet::Result<()> {
    let root = std::env::temp_dir().join("qxqnet_build_dataset");
    let (ccd, common) = (root.join("ccd"), root.join("common"));
    for d in [&ccd, &common] {
        std::fs::create_dir_all(d).expect("scratch dir");
    }
    for i in 0..3u64 {
        let frame = datapipe::to_3ccd_frame(&datapipe::synthetic_scene(192, 128, i), rawio::DEFAULT_BLACK_LEVEL);
        std::fs::write(ccd.join(format!("f{i}.raw")), rawio::encode_3ccd(&frame)?).expect("write raw");
        rawio::export_png8(&datapipe::synthetic_scene(192, 128, 10 + i), &common.join(format!("p{i}.png")))?;
    }

    let cfg = HybridConfig {
        patch_size: 64,
        stride: 64,
        raw_width: 192,
        raw_height: 128,
        split_ratio: 0.7,
        ..HybridConfig::default()
    };
    let m = datapipe::build_hybrid(&root, Some(Path::new("ccd")), Some(Path::new("common")), &cfg)?;
    m.save(&root.join("manifest.tsv"))?;
    println!(
        "{} patches ({} train) -> {}",
        m.records.len(),
        m.split(Split::Train).count(),
        root.join("manifest.tsv").display()
    );
    let patches = datapipe::load_patches(&m, &root, Split::Train, &cfg)?;
    println!("first training patch {}x{}", patches[0].width(), patches[0].height());
    Ok(())
}
