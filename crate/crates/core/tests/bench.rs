use poincare_opt::bench::{
    embed_tree, mean_distortion, rosenbrock, run_comparison, ProblemKind, TestProblem, TreeTask,
};
use poincare_opt::optim::{OptimizerConfig, OptimizerKind};
use poincare_opt::records::CSV_HEADER;
use proptest::prelude::*;

fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

// Richardson-extrapolated central difference; exact up to rounding for
// polynomials of degree four or less.
fn richardson_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let coarse = fd_grad(&f, x, h);
    let fine = fd_grad(&f, x, h / 2.0);
    fine.iter().zip(&coarse).map(|(f2, f1)| (4.0 * f2 - f1) / 3.0).collect()
}

proptest! {
    #[test]
    fn rosenbrock_gradient(x in prop::collection::vec(-2.0f64..2.0, 2..6)) {
        let (_, g) = rosenbrock(&x).unwrap();
        let fd = richardson_grad(|y| rosenbrock(y).unwrap().0, &x, 1e-3);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn sgd_on_quadratic_is_monotone(lr in 0.01f64..0.99, x in prop::collection::vec(-3.0f64..3.0, 1..5)) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
        let p = TestProblem::with_start(ProblemKind::Quadratic, x).unwrap();
        let c = OptimizerConfig::new(OptimizerKind::Sgd, lr);
        let t = &run_comparison(&p, &[("sgd".into(), c)], 30, 0).unwrap()[0];
        let f0 = p.objective(p.start()).unwrap();
        prop_assert!(t.values[0] < f0);
        prop_assert!(t.values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn hyperbolic_runs_stay_in_ball(lr in 0.001f64..2.0, kind in prop::sample::select(vec![OptimizerKind::HyperSgd, OptimizerKind::HyperAdamW])) {
        let p = TestProblem::new(ProblemKind::Rosenbrock, 3).unwrap();
        let t = &run_comparison(&p, &[("h".into(), OptimizerConfig::new(kind, lr))], 200, 0).unwrap()[0];
        prop_assert!(!t.diverged);
        prop_assert!(t.norms.iter().all(|n| *n < 1.0));
    }
}

#[test]
fn problem_gradients_match_differences() {
    for (kind, dim) in [(ProblemKind::Quadratic, 3), (ProblemKind::Rosenbrock, 4)] {
        let p = TestProblem::new(kind, dim).unwrap();
        let x: Vec<f64> = (0..dim).map(|i| 0.3 - 0.2 * i as f64).collect();
        let g = p.gradient(&x).unwrap();
        let fd = fd_grad(|y| p.objective(y).unwrap(), &x, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3));
        }
        assert_eq!(p.optimum_value(), 0.0);
    }
    assert!(TestProblem::new(ProblemKind::Rosenbrock, 1).is_err());
}

#[test]
fn records_share_one_schema() {
    let p = TestProblem::new(ProblemKind::Quadratic, 2).unwrap();
    let configs: Vec<_> = OptimizerKind::ALL
        .iter()
        .map(|k| (k.to_string(), OptimizerConfig::new(*k, 0.05)))
        .collect();
    let ts = run_comparison(&p, &configs, 10, 9).unwrap();
    let recs: Vec<_> = ts.iter().flat_map(|t| t.to_records("b", 9)).collect();
    assert_eq!(recs.len(), 40);
    let csv = poincare_opt::records::render_csv(&recs);
    assert!(csv.starts_with(CSV_HEADER));
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 7));
}

#[test]
fn tree_embedding_makes_progress() {
    let task = TreeTask::balanced(2, 3).unwrap();
    assert_eq!(task.nodes(), 15);
    let c = OptimizerConfig::new(OptimizerKind::HyperSgd, 0.1);
    let r = embed_tree(&task, &c, 500, 0).unwrap();
    assert!(r.losses.last().unwrap() < &r.losses[0]);
    for p in r.embeddings.chunks(2) {
        assert!((p[0] * p[0] + p[1] * p[1]).sqrt() < 1.0);
    }
    assert_eq!(mean_distortion(&task, &r.embeddings).unwrap(), r.distortion);
    let again = embed_tree(&task, &c, 500, 0).unwrap();
    assert_eq!(again, r);
}

#[test]
fn two_node_tree_fits_its_scale() {
    let task = TreeTask::from_edges(2, vec![(0, 1)]).unwrap();
    let c = OptimizerConfig::new(OptimizerKind::HyperAdamW, 0.01);
    let r = embed_tree(&task, &c, 100, 1).unwrap();
    assert!(r.distortion <= 0.1, "{}", r.distortion);
}
