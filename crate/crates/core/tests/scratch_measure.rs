use std::time::Instant;
use vpb_core::collision::{build_tables, CollisionKernelSpec};
use vpb_core::phase_grid::build_phase_grid;
use vpb_core::states::{build_initial_data, InitialData, WeightSpec};
use vpb_core::stepper::{StepConfig, Stepper};

#[test]
#[ignore]
fn measure_reference_step() {
    let g = build_phase_grid::<f64>(1, 16, 10, 6.0, 2, 6).unwrap();
    let tab = build_tables(&g, &CollisionKernelSpec::new(1.0).unwrap(), usize::MAX).unwrap();
    let wspec = WeightSpec::new(9.0, 4.0, 1.0 / 16.0).unwrap();
    let mut cfg = StepConfig::new(0.01);
    cfg.picard_tol = 1e-2;
    let s = Stepper::new(g, tab, wspec.clone(), cfg).unwrap();
    let (mut state, _) = build_initial_data(
        &InitialData::DensityModulation { amplitude: 0.3, neutrality_gap: 1e-3 },
        s.grid(),
        &wspec,
    )
    .unwrap();
    let t1 = Instant::now();
    let mut t = 0.0;
    for k in 0..5 {
        let (st, rep) = s.advance(&state, t).unwrap();
        state = st;
        t += 0.01;
        eprintln!("step {k}: cum {:?}, iters {}, first diffs {:?}", t1.elapsed(), rep.iterations, &rep.picard_diffs[..3.min(rep.picard_diffs.len())]);
    }
}

#[test]
#[ignore]
fn probe_invariant_refinement() {
    use vpb_core::collision::q_field;
    use vpb_core::phase_grid::PhaseGrid;
    use vpb_core::scalar::norm_sq3;

    let defect = |g: &PhaseGrid<f64>, r: &[f64]| -> f64 {
        let q = q_field(g, 1.0, r, r).unwrap();
        let mut m = [0.0f64; 5];
        for (j, &x) in q.iter().enumerate() {
            let v = g.v.node(j);
            m[0] += x;
            for a in 0..3 { m[1+a] += v[a]*x; }
            m[4] += norm_sq3(v)*x;
        }
        let dv3 = g.v.cell_volume();
        m.iter().map(|x| (x*dv3).abs()).fold(0.0, f64::max)
    };
    let states: Vec<(&str, Box<dyn Fn([f64;3]) -> f64>)> = vec![
        ("mild", Box::new(|v: [f64;3]| 1.0 + 0.3*(0.9*v[0]+0.2).sin()*(0.6*v[1]-0.4).cos() + 0.2*(0.5*v[2]).cos())),
        ("aniso", Box::new(|v: [f64;3]| 1.0 + 0.4*(1.3*v[0]).sin() + 0.3*(1.1*v[1]+0.5).cos()*(0.8*v[2]).sin())),
        ("gauss", Box::new(|v: [f64;3]| 1.0 + 0.5*(-0.3*((v[0]-1.0).powi(2)+(v[1]+0.5).powi(2)+v[2].powi(2))).exp())),
    ];
    for (name, f) in &states {
        for (nv, st, sp) in [(12usize, 2usize, 6usize), (12,2,12), (16,2,6), (16,2,12)] {
            let g = build_phase_grid::<f64>(1, 2, nv, 6.0, st, sp).unwrap();
            let r: Vec<f64> = g.v.nodes().iter().map(|&v| f(v)).collect();
            let t0 = Instant::now();
            let d = defect(&g, &r);
            println!("{name}: n_v={nv} sphere=({st},{sp}) defect={d:.4e}  [{:?}]", t0.elapsed());
        }
    }
}

#[test]
#[ignore]
fn probe_invariant_components() {
    use vpb_core::collision::q_field;
    use vpb_core::phase_grid::PhaseGrid;
    use vpb_core::scalar::norm_sq3;

    let defects = |g: &PhaseGrid<f64>, r: &[f64]| -> [f64; 5] {
        let q = q_field(g, 1.0, r, r).unwrap();
        let mut m = [0.0f64; 5];
        for (j, &x) in q.iter().enumerate() {
            let v = g.v.node(j);
            m[0] += x;
            for a in 0..3 { m[1+a] += v[a]*x; }
            m[4] += norm_sq3(v)*x;
        }
        let dv3 = g.v.cell_volume();
        m.map(|x| (x*dv3).abs())
    };
    let f = |v: [f64;3]| 1.0 + 0.3*(0.9*v[0]+0.2).sin()*(0.6*v[1]-0.4).cos() + 0.2*(0.5*v[2]).cos();
    for (nv, st, sp) in [(12usize, 2usize, 6usize), (16,2,12)] {
        let g = build_phase_grid::<f64>(1, 2, nv, 6.0, st, sp).unwrap();
        let r: Vec<f64> = g.v.nodes().iter().map(|&v| f(v)).collect();
        let d = defects(&g, &r);
        println!("n_v={nv} sphere=({st},{sp}): mass={:.3e} mom=({:.3e},{:.3e},{:.3e}) energy={:.3e}", d[0], d[1], d[2], d[3], d[4]);
    }
}

#[test]
#[ignore]
fn probe_coarse_sphere_refinement() {
    use vpb_core::collision::q_field;
    use vpb_core::phase_grid::PhaseGrid;
    use vpb_core::scalar::norm_sq3;

    let defect = |g: &PhaseGrid<f64>, r: &[f64]| -> f64 {
        let q = q_field(g, 1.0, r, r).unwrap();
        let mut m = [0.0f64; 5];
        for (j, &x) in q.iter().enumerate() {
            let v = g.v.node(j);
            m[0] += x;
            for a in 0..3 { m[1+a] += v[a]*x; }
            m[4] += norm_sq3(v)*x;
        }
        let dv3 = g.v.cell_volume();
        m.iter().map(|x| (x*dv3).abs()).fold(0.0, f64::max)
    };
    let f = |v: [f64;3]| 1.0 + 0.3*(0.9*v[0]+0.2).sin()*(0.6*v[1]-0.4).cos() + 0.2*(0.5*v[2]).cos();
    for (nv, st, sp) in [(12usize,2usize,2usize),(16,2,4),(12,2,3),(16,2,6),(12,2,4),(16,2,8)] {
        let g = build_phase_grid::<f64>(1, 2, nv, 6.0, st, sp).unwrap();
        let r: Vec<f64> = g.v.nodes().iter().map(|&v| f(v)).collect();
        let d = defect(&g, &r);
        println!("n_v={nv} sphere=({st},{sp}) nodes={} defect={d:.4e}", st*sp);
    }
}

#[test]
#[ignore]
fn probe_projected_refinement() {
    use vpb_core::collision::q_conservative;
    use vpb_core::phase_grid::PhaseGrid;
    use vpb_core::scalar::norm_sq3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let defect = |g: &PhaseGrid<f64>, r: &[f64]| -> f64 {
        let q = q_conservative(g, 1.0, r, r).unwrap();
        let mut m = [0.0f64; 5];
        for (j, &x) in q.iter().enumerate() {
            let v = g.v.node(j);
            m[0] += x;
            for a in 0..3 { m[1+a] += v[a]*x; }
            m[4] += norm_sq3(v)*x;
        }
        let dv3 = g.v.cell_volume();
        m.iter().map(|x| (x*dv3).abs()).fold(0.0, f64::max)
    };
    for (nv, st, sp) in [(12usize,2usize,6usize),(16,2,12)] {
        let g = build_phase_grid::<f64>(1, 2, nv, 6.0, st, sp).unwrap();
        let mut rng = StdRng::seed_from_u64(2024);
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let r: Vec<f64> = (0..g.v.len()).map(|_| 0.5 + rng.gen::<f64>()).collect();
            worst = worst.max(defect(&g, &r));
        }
        println!("projected: n_v={nv} sphere=({st},{sp}) worst defect={worst:.4e}");
    }
}

#[test]
#[ignore]
fn probe_symmetric_states() {
    use vpb_core::collision::q_field;
    use vpb_core::phase_grid::PhaseGrid;
    use vpb_core::scalar::norm_sq3;

    let defect = |g: &PhaseGrid<f64>, r: &[f64]| -> f64 {
        let q = q_field(g, 1.0, r, r).unwrap();
        let mut m = [0.0f64; 5];
        for (j, &x) in q.iter().enumerate() {
            let v = g.v.node(j);
            m[0] += x;
            for a in 0..3 { m[1+a] += v[a]*x; }
            m[4] += norm_sq3(v)*x;
        }
        let dv3 = g.v.cell_volume();
        m.iter().map(|x| (x*dv3).abs()).fold(0.0, f64::max)
    };
    let states: Vec<(&str, Box<dyn Fn([f64;3]) -> f64>)> = vec![
        ("radial", Box::new(|v: [f64;3]| 1.0 + 0.5*(-0.3*norm_sq3(v)).exp())),
        ("radial2", Box::new(|v: [f64;3]| 1.0 + 0.4*(0.5*norm_sq3(v).sqrt()).cos())),
        ("shifted-gauss", Box::new(|v: [f64;3]| 1.0 + 0.6*(-0.25*((v[0]-0.8).powi(2)+v[1].powi(2)+v[2].powi(2))).exp())),
    ];
    for (name, f) in &states {
        let mut ds = Vec::new();
        for (nv, st, sp) in [(12usize,2usize,6usize),(16,2,12)] {
            let g = build_phase_grid::<f64>(1, 2, nv, 6.0, st, sp).unwrap();
            let r: Vec<f64> = g.v.nodes().iter().map(|&v| f(v)).collect();
            ds.push(defect(&g, &r));
        }
        println!("{name}: d12={:.4e} d16={:.4e} ratio={:.3}", ds[0], ds[1], ds[1]/ds[0]);
    }
}
