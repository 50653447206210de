//! Active element count of the adaptive projection of a problem's initial data.
//!
//! `cargo run --release --example adapt_count -- <problem> <k> <N> <eps>`

use sgvm::adaptivity::{adaptive_project_separable, AdaptConfig};
use sgvm::basis1d::{Basis1D, Basis1DConfig};
use sgvm::problems::Problem;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let problem = Problem::from_name(&args[1]).unwrap();
    let k: usize = args[2].parse().unwrap();
    let n: u32 = args[3].parse().unwrap();
    let eps: f64 = args[4].parse().unwrap();
    let basis = Basis1D::new(Basis1DConfig { k, max_level: n as usize }).unwrap();
    let cfg = AdaptConfig::new(n, k, eps).unwrap();
    let t0 = std::time::Instant::now();
    let (t, _) = adaptive_project_separable::<f64>(&cfg, &basis, &problem.initial_f(), &problem.domain()).unwrap();
    println!("active {} leaves {} in {:.2}s, |Omega| = {}", t.len(), t.num_leaves(), t0.elapsed().as_secs_f64(), problem.domain().volume());
}
