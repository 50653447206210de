use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use sgvm::basis1d::{quadrature, Basis1D, Side};
use sgvm::hiergrid::{ElementSet, SpaceSpec, Truncation};
use sgvm::operators::{
    DistributionField, EmField, FluxConfig, MaxwellFlux, PhaseDomain, SystemKind, VlasovSolver, VmState,
};
use sgvm::problems::{self, project_fields, project_separable};

fn random_state(solver: &VlasovSolver<f64>, set: Arc<ElementSet>, seed: usize) -> VmState<f64> {
    let spec = SpaceSpec { d: solver.system.d(), k: solver.k(), n: solver.max_level() as u32, truncation: Truncation::Full };
    let mut rng = StdRng::seed_from_u64(seed as u64);
    let mut f = DistributionField::zeros(spec, solver.domain.clone(), set);
    f.coeffs.iter_mut().for_each(|c| *c = rng.gen_range(-0.5..0.5));
    let mut em = EmField::zeros(solver.system, solver.k(), solver.max_level());
    em.comps.iter_mut().flatten().for_each(|v| *v = rng.gen_range(-0.15..0.15));
    VmState { t: 0.0, f, em }
}

/// Field value at unit coordinate `y` (interior point).
fn field_at(basis: &Basis1D, comp: &[f64], dx: usize, y: &[f64], xlen: &[f64]) -> f64 {
    let n = basis.n();
    let side = basis.num_ids() * n;
    let mut vals = vec![vec![0.0; side]; dx];
    let mut buf = [0.0; 4];
    for m in 0..dx {
        for id in 0..basis.num_ids() as u32 {
            basis.trace(id, y[m], Side::Left, &mut buf);
            for i in 0..n {
                vals[m][id as usize * n + i] = buf[i];
            }
        }
    }
    let mut s = 0.0;
    for (o, c) in comp.iter().enumerate() {
        let mut v = *c;
        let mut rem = o;
        for m in (0..dx).rev() {
            v *= vals[m][rem % side];
            rem /= side;
        }
        s += v;
    }
    s / xlen.iter().product::<f64>().sqrt()
}

/// Speed of direction `m` at unit coordinates `y`.
fn speed(solver: &VlasovSolver<f64>, em: &EmField<f64>, m: usize, y: &[f64]) -> f64 {
    let dom = &solver.domain;
    let dx = solver.system.dx();
    let xlen: Vec<f64> = (0..dx).map(|i| dom.len(i)).collect();
    let w = |c: usize| field_at(&solver.basis, &em.comps[c], dx, &y[..dx], &xlen);
    match solver.system {
        SystemKind::Maxwell1D2V => match m {
            0 => dom.map(2, y[2]),
            1 => w(0) + dom.map(2, y[2]) * w(2),
            _ => w(1) - dom.map(1, y[1]) * w(2),
        },
        SystemKind::Ampere2D2V => {
            if m < 2 {
                dom.map(2 + m, y[2 + m])
            } else {
                w(m - 2)
            }
        }
    }
}

/// Test-function values: `phi[t][r]` at a point with the given sides, and
/// the derivative in direction `dm` when requested.
fn test_values(basis: &Basis1D, set: &ElementSet, y: &[f64], sides: &[Side], dm: Option<usize>, scale: f64) -> Vec<f64> {
    let d = y.len();
    let n = basis.n();
    let bs = n.pow(d as u32);
    let mut out = vec![0.0; set.len() * bs];
    let mut v = vec![[0.0; 4]; d];
    let mut dv = [0.0; 4];
    let mut tmp = [0.0; 4];
    for (e, key) in set.keys().iter().enumerate() {
        for m in 0..d {
            if Some(m) == dm {
                basis.interior(key.id(m), y[m], &mut tmp, &mut dv);
                v[m] = dv;
            } else {
                basis.trace(key.id(m), y[m], sides[m], &mut v[m]);
            }
        }
        for r in 0..bs {
            let mut p = scale;
            let mut rr = r;
            for m in (0..d).rev() {
                p *= v[m][rr % n];
                rr /= n;
            }
            out[e * bs + r] = p;
        }
    }
    out
}

/// Direct quadrature of the Lax-Friedrichs DG weak form on the level-N grid.
fn brute_force_rhs(solver: &VlasovSolver<f64>, state: &VmState<f64>, alpha: &[f64]) -> Vec<f64> {
    let basis = &solver.basis;
    let d = solver.system.d();
    let dx = solver.system.dx();
    let dom = &solver.domain;
    let set = &*state.f.set;
    let vol = dom.volume();
    let norm = 1.0 / vol.sqrt();
    let cells = basis.num_ids();
    let (xq, wq) = quadrature::gauss_legendre(basis.k() + 2);
    let pts1: Vec<(f64, f64)> = (0..cells)
        .flat_map(|c| xq.iter().zip(wq.iter()).map(move |(x, w)| ((c as f64 + x) / cells as f64, w / cells as f64)))
        .collect();
    let mut out = vec![0.0; state.f.coeffs.len()];
    let any = vec![Side::Left; d];
    // Volume terms.
    let total = pts1.len().pow(d as u32);
    let mut y = vec![0.0; d];
    for p in 0..total {
        let mut w = 1.0;
        let mut rem = p;
        for m in (0..d).rev() {
            let (yy, ww) = pts1[rem % pts1.len()];
            y[m] = yy;
            w *= ww;
            rem /= pts1.len();
        }
        let fval = state.f.eval_unit(basis, &y, &any);
        for m in 0..d {
            let a = speed(solver, &state.em, m, &y);
            let dphi = test_values(basis, set, &y, &any, Some(m), norm);
            let c = vol / dom.len(m) * w * a * fval;
            for (o, v) in out.iter_mut().zip(dphi) {
                *o += c * v;
            }
        }
    }
    // Face terms.
    for m in 0..d {
        let periodic = m < dx;
        let nedges = if periodic { cells } else { cells + 1 };
        let face_pts = pts1.len().pow(d as u32 - 1);
        for j in 0..nedges {
            let ye = j as f64 / cells as f64;
            for p in 0..face_pts {
                let mut w = 1.0;
                let mut rem = p;
                for mm in (0..d).rev() {
                    if mm == m {
                        continue;
                    }
                    let (yy, ww) = pts1[rem % pts1.len()];
                    y[mm] = yy;
                    w *= ww;
                    rem /= pts1.len();
                }
                let mut yl = y.clone();
                let mut yr = y.clone();
                yl[m] = if periodic && j == 0 { 1.0 } else { ye };
                yr[m] = ye;
                let mut sl = any.clone();
                let mut sr = any.clone();
                sl[m] = Side::Left;
                sr[m] = Side::Right;
                let fl = state.f.eval_unit(basis, &yl, &sl);
                let fr = state.f.eval_unit(basis, &yr, &sr);
                let a = speed(solver, &state.em, m, &yr);
                let flux = a * 0.5 * (fl + fr) + 0.5 * alpha[m] * (fl - fr);
                let pl = test_values(basis, set, &yl, &sl, None, norm);
                let pr = test_values(basis, set, &yr, &sr, None, norm);
                let c = vol / dom.len(m) * w * flux;
                for (o, (a, b)) in out.iter_mut().zip(pl.iter().zip(pr.iter())) {
                    *o -= c * (a - b);
                }
            }
        }
    }
    out
}

fn compare(solver: &VlasovSolver<f64>, state: &VmState<f64>, alpha: &[f64]) {
    let got = solver.vlasov_rhs(&state.f, &state.em, alpha).unwrap();
    let want = brute_force_rhs(solver, state, alpha);
    let scale = want.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let err = got.iter().zip(want.iter()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    assert!(err < 1e-12 * scale, "max error {err} (scale {scale})");
}

#[test]
fn vlasov_maxwell_rhs_matches_quadrature_oracle() {
    let dom = PhaseDomain::new(vec![0.0, -1.2, -1.0], vec![3.0, 1.2, 1.4]).unwrap();
    for (k, n, trunc) in [(1, 2, Truncation::Full), (2, 2, Truncation::Sparse), (0, 3, Truncation::Full)] {
        let solver = VlasovSolver::new(SystemKind::Maxwell1D2V, dom.clone(), k, n, FluxConfig::default(), Truncation::Full).unwrap();
        let spec = SpaceSpec { d: 3, k, n: n as u32, truncation: trunc };
        let set = Arc::new(ElementSet::from_spec(&spec).unwrap());
        let state = random_state(&solver, set, 7 * k + n);
        compare(&solver, &state, &[0.7, 0.3, 0.45]);
    }
}

#[test]
fn vlasov_ampere_rhs_matches_quadrature_oracle() {
    let dom = PhaseDomain::new(vec![0.0, 0.0, -2.0, -1.5], vec![2.0, 3.0, 2.0, 2.5]).unwrap();
    for (k, n, trunc) in [(1, 1, Truncation::Full), (1, 2, Truncation::Sparse)] {
        let solver = VlasovSolver::new(SystemKind::Ampere2D2V, dom.clone(), k, n, FluxConfig::default(), Truncation::Full).unwrap();
        let spec = SpaceSpec { d: 4, k, n: n as u32, truncation: trunc };
        let set = Arc::new(ElementSet::from_spec(&spec).unwrap());
        let state = random_state(&solver, set, 3 + n);
        compare(&solver, &state, &[0.5, 0.6, 0.2, 0.35]);
    }
}

#[test]
fn constant_f_without_fields_is_steady() {
    let p = problems::sw_setup(1).unwrap();
    let solver = VlasovSolver::new(p.system(), p.domain(), 2, 4, FluxConfig::default(), Truncation::Full).unwrap();
    let spec = SpaceSpec { d: 3, k: 2, n: 4, truncation: Truncation::Sparse };
    let set = Arc::new(ElementSet::from_spec(&spec).unwrap());
    let mut f = DistributionField::zeros(spec, p.domain(), set);
    f.coeffs[0] = 2.5;
    let em = EmField::zeros(p.system(), 2, 4);
    let alpha = solver.alpha_bounds(&em).unwrap();
    assert_eq!(alpha.alpha1, 1.2);
    assert_eq!(alpha.alpha2, 0.0);
    let r: Vec<f64> = solver.vlasov_rhs(&f, &em, &alpha.speeds).unwrap();
    assert!(r.iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn constant_field_gives_alpha() {
    let p = problems::sw_setup(1).unwrap();
    let solver = VlasovSolver::new(p.system(), p.domain(), 1, 3, FluxConfig::default(), Truncation::Full).unwrap();
    let mut em = EmField::zeros(p.system(), 1, 3);
    // Constant E1 = 0.25: root coefficient 0.25 * sqrt(L).
    em.comps[0][0] = 0.25 * p.domain().len(0).sqrt();
    let a = solver.alpha_bounds(&em).unwrap();
    assert!((a.speeds[1] - 0.25).abs() < 1e-14);
    assert_eq!(a.speeds[2], 0.0);
}

#[test]
fn curl_of_sine_is_consistent() {
    let p = problems::sw_setup(1).unwrap();
    let solver = VlasovSolver::new(p.system(), p.domain(), 3, 7, FluxConfig::default(), Truncation::Full).unwrap();
    let em = project_fields::<f64>(&solver.basis, &p).unwrap();
    let zero_j = vec![vec![0.0; em.comps[0].len()]; 2];
    let de = solver.maxwell_rhs(&em, &zero_j).unwrap();
    let k0 = 0.2;
    let want = sgvm::problems::project_1d(&solver.basis, &|x: f64| 0.001 * k0 * (k0 * x).cos(), 0.0, p.domain().len(0)).unwrap();
    let sl = p.domain().len(0).sqrt();
    let err: f64 = de.comps[0].iter().zip(want.iter()).map(|(a, b)| (a - b * sl).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = want.iter().map(|b| (b * sl).powi(2)).sum::<f64>().sqrt();
    // Normalized L2 error, sqrt(1/L int (.)^2).
    let normalized = err / sl;
    assert!(normalized < 1e-10, "normalized error {normalized:e} (relative {:e})", err / scale);
    // Only the upwind jump of the projected B3 remains.
    assert!(de.comps[2].iter().map(|v| v * v).sum::<f64>().sqrt() / sl < 1e-10);
}

#[test]
fn maxwell_energy_identity() {
    let p = problems::sw_setup(1).unwrap();
    for flux in [MaxwellFlux::AlternatingPlusMinus, MaxwellFlux::AlternatingMinusPlus, MaxwellFlux::Upwind] {
        let solver = VlasovSolver::new(p.system(), p.domain(), 2, 5, FluxConfig { maxwell: flux, lf_scale: 1.0 }, Truncation::Full).unwrap();
        let set = Arc::new(ElementSet::from_spec(&SpaceSpec { d: 3, k: 2, n: 1, truncation: Truncation::Full }).unwrap());
        let state = random_state(&solver, set, 11);
        let zero_j = vec![vec![0.0; state.em.comps[0].len()]; 2];
        let de = solver.maxwell_rhs(&state.em, &zero_j).unwrap();
        let rate: f64 = state.em.comps.iter().zip(de.comps.iter()).flat_map(|(a, b)| a.iter().zip(b.iter())).map(|(a, b)| a * b).sum();
        match flux {
            MaxwellFlux::Upwind => assert!(rate < 0.0),
            _ => assert!(rate.abs() < 1e-13, "{flux:?}: {rate}"),
        }
    }
}

#[test]
fn lax_friedrichs_is_l2_stable_and_conservative() {
    let p = problems::sw_setup(1).unwrap();
    let solver = VlasovSolver::new(p.system(), p.domain(), 2, 4, FluxConfig::default(), Truncation::Full).unwrap();
    let spec = SpaceSpec { d: 3, k: 2, n: 4, truncation: Truncation::Sparse };
    let set = Arc::new(ElementSet::from_spec(&spec).unwrap());
    let state = random_state(&solver, set.clone(), 5);
    let a = solver.alpha_bounds(&state.em).unwrap();
    let r = solver.vlasov_rhs(&state.f, &state.em, &a.speeds).unwrap();
    let ip: f64 = r.iter().zip(state.f.coeffs.iter()).map(|(a, b)| a * b).sum();
    assert!(ip <= 0.0, "<f, R(f)> = {ip}");
    // Mass rate for data that vanishes at the velocity boundary.
    let f0 = project_separable::<f64>(&solver.basis, &p.initial_f(), spec, &p.domain(), set).unwrap();
    let r = solver.vlasov_rhs(&f0, &state.em, &a.speeds).unwrap();
    assert!(r[0].abs() < 1e-12 * f0.coeffs[0].abs(), "{} vs {}", r[0], f0.coeffs[0]);
}
