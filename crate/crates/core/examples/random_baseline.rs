//! Monte Carlo random baseline next to its hypergeometric closed form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use underloc::evaluation::random_baseline;
use underloc::GroundTruthMatrix;

fn main() {
    let (nd, nq, g) = (200, 50, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gt = GroundTruthMatrix::from_fn(nd, nq, 1.0, |_, _| false);
    for i in 0..nq {
        for j in rand::seq::index::sample(&mut rng, nd, g) {
            gt.set(j, i, true);
        }
    }
    let curve = random_baseline(&gt, 10, 100, 42);
    println!(" K  measured  expected");
    for k in 1..=10 {
        let miss: f64 = (0..k).map(|t| (nd - g - t) as f64 / (nd - t) as f64).product();
        println!("{k:>2}  {:.4}    {:.4}", curve.at(k), 1.0 - miss);
    }
}
