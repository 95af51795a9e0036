//! Demosaic a frame in overlapping tiles and compare with a single pass.

use qxqnet::cfa::{self, CfaSpec};
use qxqnet::datapipe::synthetic_scene;
use qxqnet::model::{ModelConfig, Network};
use qxqnet::tiling::{tiled_demosaic, Demosaicer};

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn main() -> qxqnet::Result<()> {
    let m = cfa::mosaic(&synthetic_scene(256, 192, 5), CfaSpec::qxq())?;

    let d = Demosaicer::Classical;
    let whole = d.run(&m)?;
    let tiled = tiled_demosaic(&m, &d, 64, 32)?;
    println!("classical: tiled vs whole max diff {:.2e}", max_diff(whole.data(), tiled.data()));

    let net = Network::student(&ModelConfig::student_desk())?;
    let d = Demosaicer::Network(&net);
    let whole = d.run(&m)?;
    let tiled = tiled_demosaic(&m, &d, 128, 32)?;
    println!("untrained student: tiled vs whole max diff {:.2e}", max_diff(whole.data(), tiled.data()));
    Ok(())
}
