//! Train a small teacher, keep two checkpoints, then distill the student
//! from them in turn, switching when the feature loss saturates.

use qxqnet::cfa::CfaSpec;
use qxqnet::datapipe::{synthetic_scene, Dataset};
use qxqnet::distill::{self, ProgressiveConfig, SwitchMode, TeacherPlan, TrainConfig};
use qxqnet::losses::LossWeights;
use qxqnet::model::{ModelConfig, Network};
use qxqnet::tensor::AdamConfig;

fn main() -> qxqnet::Result<()> {
    let imgs: Vec<_> = (0..4).map(|i| synthetic_scene(32, 32, 40 + i)).collect();
    let data = Dataset::from_images(&imgs, CfaSpec::qxq())?;
    let tc = TrainConfig { adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, ..TrainConfig::default() };

    let plan = TeacherPlan { level_epochs: 3, checkpoint_epochs: vec![3, 6] };
    let teacher = distill::train_teacher(&ModelConfig::teacher_desk().with_seed(1), &data, &plan, &tc)?;
    println!("teacher bank: {} checkpoints", teacher.bank.len());

    let mut student = Network::student(&ModelConfig::student_desk())?;
    distill::train_level1(&mut student, &data, 3, &LossWeights::level1(), &tc)?;

    let sigma = 1e-2;
    let cfg = ProgressiveConfig {
        switch: SwitchMode::Saturation { sigma },
        max_epochs: 40,
        train: tc,
        ..ProgressiveConfig::default()
    };
    let (_, events) = distill::train_level0_progressive(student, &teacher.bank, &data, cfg)?;
    for e in &events {
        let t = e.transition.map(|p| format!("  -> {p}")).unwrap_or_default();
        println!("epoch {:>2} {:<10} monitored {:.3e}{t}", e.epoch, e.phase.to_string(), e.monitored_loss);
    }
    assert_eq!(distill::replay_transitions(&events, sigma), distill::logged_transitions(&events));
    Ok(())
}
