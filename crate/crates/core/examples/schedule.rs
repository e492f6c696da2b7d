//! The warm-restart cosine schedule and Adam under a constant gradient.

use rmfa::train::{Adam, Schedule};
use rmfa::Tensor;

fn main() {
    let s = Schedule::default();
    for epoch in [0, 25, 50, 75, 99, 100, 150] {
        println!("epoch {epoch:>3}  lr {:.6e}", s.lr(epoch as f64));
    }
    let mut p = [Tensor::full(&[1], 0.0f32)];
    let mut adam = Adam::new(p.iter());
    let g = [Tensor::full(&[1], 0.3f32)];
    for step in 1..=5 {
        adam.update(p.iter_mut(), &g, 1e-3);
        println!("adam step {step}: param {:.6}", p[0].data()[0]);
    }
}
