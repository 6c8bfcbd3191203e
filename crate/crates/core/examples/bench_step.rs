use std::time::Instant;

use setvae::data::{batch_pad, gen_synthetic, SyntheticKind};
use setvae::{ModelConfig, SetRng, SetVae};

fn main() {
    let bs: usize = std::env::args().nth(1).map_or(8, |s| s.parse().unwrap());
    let mut rng = SetRng::new(0);
    let ds = gen_synthetic(SyntheticKind::Circle, bs, (32, 64), 0.01, &mut rng).unwrap();
    let model = SetVae::new(ModelConfig::default(), 0).unwrap();
    let batch = batch_pad(ds.sets()).unwrap();
    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        model.loss_and_grads(&batch, 0.01, &mut rng).unwrap();
    }
    println!("batch {bs}: {:.3}s per step", t.elapsed().as_secs_f64() / reps as f64);
}
