//! Train a desk-scale student without a teacher: level 1 first, then level 0.

use qxqnet::cfa::CfaSpec;
use qxqnet::datapipe::{synthetic_scene, Dataset};
use qxqnet::distill::{self, TrainConfig};
use qxqnet::losses::LossWeights;
use qxqnet::model::{ModelConfig, Network};
use qxqnet::tensor::AdamConfig;

fn main() -> qxqnet::Result<()> {
    let imgs: Vec<_> = (0..8).map(|i| synthetic_scene(32, 32, i)).collect();
    let data = Dataset::from_images(&imgs, CfaSpec::qxq())?;
    let tc = TrainConfig { adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, batch_size: 2, ..TrainConfig::default() };

    let mut student = Network::student(&ModelConfig::student_desk())?;
    let l1 = distill::train_level1(&mut student, &data, 20, &LossWeights::level1(), &tc)?;
    println!("level 1: {:.5} -> {:.5}", l1[0].loss, l1.last().unwrap().loss);

    let (student, l0) = distill::train_level0_plain(student, &data, 20, LossWeights::level0(), tc)?;
    println!("level 0: {:.5} -> {:.5}", l0[0].loss, l0.last().unwrap().loss);

    let path = std::env::temp_dir().join("train_student.qxqw");
    student.to_checkpoint().save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
