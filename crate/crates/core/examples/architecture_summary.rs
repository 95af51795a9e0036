//! Parameter and MAC counts of the student and teacher at desk and full
//! scale, and the ablation variants of the student.

use qxqnet::model::{ModelConfig, Network, UpsampleKind};

fn main() -> qxqnet::Result<()> {
    let (h, w) = (448, 448);
    for (name, s, t) in [
        ("desk", ModelConfig::student_desk(), ModelConfig::teacher_desk()),
        ("full", ModelConfig::student_full(), ModelConfig::teacher_full()),
    ] {
        let s = Network::student(&s)?;
        let t = Network::teacher(&t)?;
        println!(
            "{name}: student {} params / {} MACs, teacher {} params / {} MACs, ratio {:.4}",
            s.param_count(),
            s.mac_count(h, w),
            t.param_count(),
            t.mac_count(h, w),
            s.param_count() as f64 / t.param_count() as f64
        );
    }

    println!("\nablations (desk student):");
    for (name, rl, sp) in [("baseline", false, false), ("+RL", true, false), ("+SP", false, true), ("+RL+SP", true, true)] {
        let cfg = ModelConfig {
            use_residual_gray: rl,
            upsample_kind: if sp { UpsampleKind::Subpixel } else { UpsampleKind::Bilinear },
            ..ModelConfig::student_desk()
        };
        let n = Network::student(&cfg)?;
        println!(
            "  {name:<8} {:>6} params (upsamplers {}, gray path {})",
            n.param_count(),
            n.upsampler_param_count(),
            n.gray_path_param_count()
        );
    }
    Ok(())
}
