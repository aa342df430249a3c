use poincare_opt::geometry::{
    conformal_factor, poincare_distance, poincare_distance_grad, project_to_ball,
    riemannian_rescale, ParamTensor, DEFAULT_PROJ_EPS,
};
use proptest::prelude::*;

/// Plain textbook evaluation, kept separate from the library's stable form.
fn distance_oracle(u: &[f64], v: &[f64]) -> f64 {
    let sq = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    (1.0 + 2.0 * sq(&diff) / ((1.0 - sq(u)) * (1.0 - sq(v)))).acosh()
}

fn ball_point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, dim), 0.0f64..0.95).prop_map(|(d, r)| {
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        d.iter().map(|x| x / n * r).collect()
    })
}

proptest! {
    #[test]
    fn distance_matches_oracle((u, v) in (1usize..6).prop_flat_map(|d| (ball_point(d), ball_point(d)))) {
        let d = poincare_distance(&u, &v).unwrap();
        let o = distance_oracle(&u, &v);
        prop_assert!((d - o).abs() <= 1e-9 * o.max(1.0), "{} vs {}", d, o);
    }

    #[test]
    fn triangle_inequality((a, b, c) in (1usize..4).prop_flat_map(|d| (ball_point(d), ball_point(d), ball_point(d)))) {
        let ab = poincare_distance(&a, &b).unwrap();
        let bc = poincare_distance(&b, &c).unwrap();
        let ac = poincare_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn distance_gradient_matches_differences((u, v) in (1usize..4).prop_flat_map(|d| (ball_point(d), ball_point(d)))) {
        prop_assume!(poincare_distance(&u, &v).unwrap() > 1e-3);
        let (_, gu, gv) = poincare_distance_grad(&u, &v).unwrap();
        let h = 1e-6;
        for i in 0..u.len() {
            let (mut up, mut um) = (u.clone(), u.clone());
            up[i] += h;
            um[i] -= h;
            let fd = (poincare_distance(&up, &v).unwrap() - poincare_distance(&um, &v).unwrap()) / (2.0 * h);
            prop_assert!((fd - gu[i]).abs() <= 1e-4 * gu[i].abs().max(1.0));
            let (mut vp, mut vm) = (v.clone(), v.clone());
            vp[i] += h;
            vm[i] -= h;
            let fd = (poincare_distance(&u, &vp).unwrap() - poincare_distance(&u, &vm).unwrap()) / (2.0 * h);
            prop_assert!((fd - gv[i]).abs() <= 1e-4 * gv[i].abs().max(1.0));
        }
    }

    #[test]
    fn projection_lands_on_shell(x in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let t = ParamTensor::from_vec(x.clone());
        let p = project_to_ball(&t, DEFAULT_PROJ_EPS).unwrap();
        if t.norm() >= 1.0 {
            prop_assert!((p.norm() - (1.0 - DEFAULT_PROJ_EPS)).abs() <= 1e-12);
            // direction is kept
            for (a, b) in p.data.iter().zip(&x) {
                prop_assert!(a * b >= 0.0);
            }
        } else {
            prop_assert_eq!(&p, &t);
        }
        prop_assert_eq!(project_to_ball(&p, DEFAULT_PROJ_EPS).unwrap(), p);
    }

    #[test]
    fn rescale_is_scalar_multiple(theta in ball_point(3), g in prop::collection::vec(-10.0f64..10.0, 3)) {
        let t = ParamTensor::from_vec(theta.clone());
        let r = riemannian_rescale(&t, &ParamTensor::from_vec(g.clone())).unwrap();
        let n2 = theta.iter().map(|x| x * x).sum::<f64>();
        let f = (1.0 - n2).powi(2) / 4.0;
        prop_assert!(f > 0.0 && f <= 0.25);
        prop_assert!((conformal_factor(n2) - f).abs() <= 1e-15);
        for (a, b) in r.data.iter().zip(&g) {
            prop_assert!((a - f * b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }
}

#[test]
fn errors_name_the_argument() {
    let err = poincare_distance(&[0.2, 0.0], &[1.0, 0.0]).unwrap_err();
    assert!(err.to_string().contains("`v`"));
    assert!(poincare_distance(&[0.1], &[0.1, 0.0]).is_err());
    assert!(poincare_distance(&[f64::NAN], &[0.0]).is_err());
}
