//! CFA layouts: print the top-left period of Bayer and QxQ patterns, then
//! mosaic an image and pack it into the 4-channel half-resolution input.

use qxqnet::cfa::{self, CfaSpec};
use qxqnet::datapipe::synthetic_scene;

fn show(cfa: CfaSpec) {
    println!("{cfa} (period {}):", cfa.period());
    for y in 0..cfa.period() {
        let row: String = (0..cfa.period())
            .map(|x| ["R", "G", "B"][cfa.color_at(x, y).index()])
            .collect();
        println!("  {row}");
    }
}

fn main() -> qxqnet::Result<()> {
    show(CfaSpec::bayer());
    show(CfaSpec::qxq());
    show("2,GRBG".parse()?);

    let img = synthetic_scene(64, 64, 7);
    let m = cfa::mosaic(&img, CfaSpec::qxq())?;
    let packed = cfa::space_to_depth(&m)?;
    println!("mosaic {}x{} -> packed {:?}", m.width(), m.height(), packed.shape());
    let back = cfa::depth_to_space(&packed, CfaSpec::qxq())?;
    assert_eq!(back, m);
    Ok(())
}
