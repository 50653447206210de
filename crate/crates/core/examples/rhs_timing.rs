//! Times one right-hand-side evaluation for a problem, degree and level.
//!
//! Usage: `cargo run --release --example rhs_timing -- <problem> <k> <N> [full|sparse]`

use std::sync::Arc;
use std::time::Instant;

use sgvm::hiergrid::{ElementSet, SpaceSpec, Truncation};
use sgvm::operators::{FluxConfig, VlasovSolver, VmState};
use sgvm::problems::{project_fields, project_separable, Problem};

fn main() -> sgvm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let problem = Problem::from_name(args.get(1).map(String::as_str).unwrap_or("sw1"))?;
    let k: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let n: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let trunc: Truncation = args.get(4).map(String::as_str).unwrap_or("sparse").parse()?;
    let t0 = Instant::now();
    let solver = VlasovSolver::<f64>::new(problem.system(), problem.domain(), k, n, FluxConfig::default(), Truncation::Full)?;
    let spec = SpaceSpec { d: problem.system().d(), k, n: n as u32, truncation: trunc };
    let set = Arc::new(ElementSet::from_spec(&spec)?);
    let f = project_separable(&solver.basis, &problem.initial_f(), spec, &problem.domain(), set.clone())?;
    let em = project_fields(&solver.basis, &problem)?;
    let state = VmState { t: 0.0, f, em };
    println!("setup {:.3}s, {} elements", t0.elapsed().as_secs_f64(), set.len());
    let t1 = Instant::now();
    let pairs = solver.pair_counts(&set);
    println!("plan {:.3}s, pairs per term {:?}", t1.elapsed().as_secs_f64(), pairs);
    let a = solver.alpha_bounds(&state.em)?;
    let mut best = f64::INFINITY;
    let mut norm = 0.0;
    for _ in 0..5 {
        let t2 = Instant::now();
        let r = solver.rhs(&state, &a.speeds)?;
        best = best.min(t2.elapsed().as_secs_f64());
        norm = r.f.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    println!("rhs {best:.4}s (best of 5, |r| = {norm:.15e})");
    Ok(())
}
