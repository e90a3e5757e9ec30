use craftplan_core::policy::{
    weighted_nll, weighted_nll_grad, FeatureBatch, PolicyParams, Shape, WeightedExample,
};
use craftplan_core::rng::seeded;
use rand::Rng;

fn random_batch(rng: &mut impl Rng, vocab: u32) -> FeatureBatch {
    let mut f = FeatureBatch::new();
    for _ in 0..rng.gen_range(2..6) {
        for _ in 0..rng.gen_range(1..6) {
            f.ids.push(rng.gen_range(0..vocab));
            f.vals.push(rng.gen_range(0.2..1.5));
        }
        f.offsets.push(f.ids.len());
    }
    f
}

#[test]
fn gradient_matches_central_differences() {
    let shape = Shape {
        vocab: 96,
        dim: 4,
        hidden: 6,
    };
    let start = std::time::Instant::now();
    let mut worst = 0.0f64;
    for fixture in 0..20u64 {
        let mut rng = seeded(fixture);
        let mut params = PolicyParams::init(shape, &mut rng);
        for w in params.theta.iter_mut() {
            *w += rng.gen_range(-0.3..0.3);
        }
        params.temperature = rng.gen_range(0.5..2.0);
        let batch: Vec<WeightedExample> = (0..rng.gen_range(1..5))
            .map(|_| {
                let features = random_batch(&mut rng, shape.vocab as u32);
                WeightedExample {
                    chosen: rng.gen_range(0..features.len()),
                    features,
                    weight: if rng.gen_bool(0.2) {
                        0.0
                    } else {
                        rng.gen_range(0.1..1.0)
                    },
                }
            })
            .collect();
        if batch.iter().all(|e| e.weight == 0.0) {
            continue;
        }
        let (_, grad) = weighted_nll_grad(&params, &batch).unwrap();
        let eps = 1e-6;
        for i in 0..params.theta.len() {
            let orig = params.theta[i];
            params.theta[i] = orig + eps;
            let up = weighted_nll(&params, &batch).unwrap();
            params.theta[i] = orig - eps;
            let down = weighted_nll(&params, &batch).unwrap();
            params.theta[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-5);
            worst = worst.max(rel);
        }
    }
    println!("max relative error {worst:.3e} in {:?}", start.elapsed());
    assert!(worst < 1e-4, "{worst}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}
