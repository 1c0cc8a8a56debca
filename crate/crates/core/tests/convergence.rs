use nsf_core::profile::ProfileSpec;
use nsf_core::solver1d::{
    entropy_balance_residual, init_smooth, integrate, ManufacturedSolution, Solver1D,
};
use nsf_core::solver3d::{
    build_domain, lift_initial_data, CrossSection, PerturbationSpec, Resolution, Solver3D,
};
use nsf_core::ThermoModel;

#[test]
fn manufactured_solution_converges_at_second_order() {
    let ms = ManufacturedSolution {
        model: ThermoModel::reference(),
    };
    let errs: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| ms.run(n, 0.05).unwrap())
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.7..=2.3).contains(&order), "{errs:?}");
    }
}

fn entropy_residual(n: usize, corrupt: bool) -> f64 {
    let m = ThermoModel::reference();
    let s0 = init_smooth(&m, &ProfileSpec::default(), n).unwrap();
    // output spacing shrinks with h so the time differences are second order too
    let outputs = n / 16;
    let mut traj = integrate(&m, &s0, 0.002 * outputs as f64 / 8.0, outputs).unwrap();
    if corrupt {
        let k = traj.snapshots.len() / 2;
        let s = &traj.snapshots[k];
        let theta: Vec<f64> = s.theta().iter().map(|t| 1.01 * t).collect();
        traj.snapshots[k] = nsf_core::solver1d::State1D::from_primitive(
            &m,
            s.time(),
            s.rho().to_vec(),
            s.u().to_vec(),
            theta,
        )
        .unwrap();
    }
    entropy_balance_residual(&m, &traj.snapshots).unwrap()
}

#[test]
fn entropy_balance_residual_is_second_order_and_sensitive() {
    let (a, b) = (entropy_residual(128, false), entropy_residual(256, false));
    let ratio = a / b;
    assert!((2.5..=6.0).contains(&ratio), "{a:e} {b:e} ratio {ratio}");
    let spiked = entropy_residual(128, true);
    assert!(spiked > 100.0 * a, "{spiked:e} vs {a:e}");
}

#[test]
fn exact_lift_follows_the_one_dimensional_solver_step_by_step() {
    let m = ThermoModel::reference();
    let res = Resolution {
        n1: 4,
        n2: 3,
        n3: 32,
    };
    let mut s1 = init_smooth(&m, &ProfileSpec::default(), res.n3).unwrap();
    let dom = build_domain(CrossSection::default(), 0.25, res).unwrap();
    let flat = PerturbationSpec {
        delta: 0.0,
        ..Default::default()
    };
    let mut s3 = lift_initial_data(&m, &s1, &flat, dom).unwrap();
    let mut solver3 = Solver3D::new(m, dom);
    let mut solver1 = Solver1D::new(m, res.n3);
    for _ in 0..200 {
        let dt = solver3.advance_stable(&mut s3, 1.0).unwrap();
        solver1.advance(&mut s1, dt, None).unwrap();
    }
    let mut worst: f64 = 0.0;
    for i in 0..res.n1 {
        for j in 0..res.n2 {
            for k in 0..res.n3 {
                let c = dom.index(i, j, k);
                worst = worst
                    .max((s3.rho()[c] - s1.rho()[k]).abs())
                    .max((s3.u()[2][c] - s1.u()[k]).abs())
                    .max((s3.theta()[c] - s1.theta()[k]).abs())
                    .max(s3.u()[0][c].abs())
                    .max(s3.u()[1][c].abs());
            }
        }
    }
    assert!(worst < 1e-12, "{worst:e}");
}
