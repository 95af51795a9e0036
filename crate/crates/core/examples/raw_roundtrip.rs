//! Write a synthetic 3CCD dump, decode it again, and export PNG previews of
//! the RGB frame and its QxQ-sampled counterpart.

use qxqnet::cfa::CfaSpec;
use qxqnet::datapipe;
use qxqnet::rawio::{self, RawQxqFrame};

fn main() -> qxqnet::Result<()> {
    let (w, h) = (128, 96);
    let scene = datapipe::synthetic_scene(w, h, 1);
    let frame = datapipe::to_3ccd_frame(&scene, rawio::DEFAULT_BLACK_LEVEL);
    let bytes = rawio::encode_3ccd(&frame)?;
    println!("3CCD {w}x{h}: {} bytes (w * h * 3 * 2)", bytes.len());

    let back = rawio::decode_3ccd(&bytes, w, h)?;
    assert_eq!(back, frame);
    // A dump that is one byte short is rejected, never truncated.
    let err = rawio::decode_3ccd(&bytes[1..], w, h).unwrap_err();
    println!("short buffer: error[{}] {err}", err.class());

    let cfa = CfaSpec::qxq();
    let plane = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| frame.planes[cfa.color_at(x, y).index()][y * w + x])
        .collect();
    let q = RawQxqFrame { width: w, height: h, plane, black_level: frame.black_level, cfa };
    let qbytes = rawio::encode_qxq(&q)?;
    assert_eq!(rawio::decode_qxq(&qbytes, w, h, cfa)?, q);
    println!("QxQ {w}x{h}: {} bytes (w * h * 2)", qbytes.len());

    let dir = std::env::temp_dir();
    rawio::export_png8(&back.to_rgb()?, &dir.join("raw_roundtrip_rgb.png"))?;
    let m = q.to_mosaic()?;
    rawio::export_gray_png8(m.data(), w, h, &dir.join("raw_roundtrip_qxq.png"))?;
    println!("previews in {}", dir.display());
    Ok(())
}
