//! Compare the tape's gradient of a small conv + sigmoid + MSE graph with
//! central finite differences.

use qxqnet::tensor::Tensor;
use rand::{Rng, SeedableRng};

fn main() -> qxqnet::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut rand_vec = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0f32)).collect::<Vec<_>>();
    let x = Tensor::constant([1, 2, 6, 6], rand_vec(72));
    let target = Tensor::constant([1, 3, 6, 6], rand_vec(108));
    let w0 = rand_vec(54);

    let loss = |w: &Tensor| -> qxqnet::Result<Tensor> { x.conv2d(w, None, 1, 1)?.sigmoid().mse(&target) };
    let w = Tensor::leaf([3, 2, 3, 3], w0.clone());
    loss(&w)?.backward()?;
    let grad = w.grad().expect("leaf has a gradient");

    let h = 1e-2f32;
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for i in 0..w0.len() {
        let at = |d: f32| -> qxqnet::Result<f64> {
            let mut v = w0.clone();
            v[i] += d;
            Ok(f64::from(loss(&Tensor::constant([3, 2, 3, 3], v))?.item()))
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * f64::from(h));
        diff += (fd - f64::from(grad[i])).powi(2);
        norm += fd * fd;
    }
    println!("{} weights, |fd - tape| / |fd| = {:.2e}", w0.len(), (diff / norm).sqrt());
    Ok(())
}
