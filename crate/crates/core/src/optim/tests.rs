use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::manifolds::{dist, dist_sq_rows, stiefel_project};
use crate::numerics::Tape;

fn single(name: &str, value: Matrix, kind: ParamKind) -> ModelParams {
    let mut p = ModelParams::new();
    p.insert(name, value, kind);
    p
}

fn grads(name: &str, g: Matrix) -> BTreeMap<String, Matrix> {
    BTreeMap::from([(name.to_string(), g)])
}

fn random_grad(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    // |g| in [1e-3, 2] with random sign.
    let data = (0..r * c)
        .map(|_| {
            let mag = 10f64.powf(rng.gen_range(-3.0..0.3));
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Matrix::from_vec(r, c, data).unwrap()
}

#[test]
fn zero_gradient_leaves_parameter() {
    let x = Matrix::from_rows(&[vec![0.3, -0.2]]).unwrap();
    let mut p = single("w", x.clone(), ParamKind::Euclidean);
    let mut s = OptimState::new(0.1);
    adam_step(&mut s, &mut p, &grads("w", Matrix::zeros(1, 2))).unwrap();
    assert_eq!(p.get("w").unwrap(), &x);
}

#[test]
fn first_step_moves_by_lr() {
    for &g in &[1e-3, 0.5, -7.0] {
        let mut p = single("w", Matrix::scalar(1.0), ParamKind::Euclidean);
        let mut s = OptimState::new(0.01);
        adam_step(&mut s, &mut p, &grads("w", Matrix::scalar(g))).unwrap();
        let delta = (p.get("w").unwrap().get(0, 0) - 1.0).abs();
        assert!((delta - 0.01).abs() < 1e-6, "g={g}: {delta}");
    }
}

#[test]
fn first_step_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_grad(&mut rng, 3, 4);
    let run = |g: Matrix| {
        let mut p = single("w", Matrix::zeros(3, 4), ParamKind::Euclidean);
        let mut s = OptimState::new(0.01);
        adam_step(&mut s, &mut p, &grads("w", g)).unwrap();
        p.get("w").unwrap().clone()
    };
    let a = run(g.clone());
    let b = run(g.scale(10.0));
    assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
}

#[test]
fn adam_converges_on_quadratic() {
    let target = Matrix::from_rows(&[vec![1.0, -2.0, 0.5, 0.0]]).unwrap();
    let mut p = single("w", Matrix::zeros(1, 4), ParamKind::Euclidean);
    let mut s = OptimState::new(0.01);
    let mut steps = 0;
    while p.get("w").unwrap().max_abs_diff(&target).unwrap() >= 1e-4 {
        assert!(steps < 2000, "no convergence after 2000 steps");
        let g = p.get("w").unwrap().sub(&target).unwrap().scale(2.0);
        adam_step(&mut s, &mut p, &grads("w", g)).unwrap();
        steps += 1;
    }
}

#[test]
fn riemannian_converges_on_poincare_target() {
    let k = Curvature::new(-1.0).unwrap();
    let target = vec![0.6, -0.3];
    let mut p = single(
        "b",
        Matrix::from_rows(&[vec![-0.4, 0.5]]).unwrap(),
        ParamKind::Stereographic(k),
    );
    let mut s = OptimState::new(0.01);
    for step in 0..=5000 {
        let x = p.get("b").unwrap().row(0).to_vec();
        if dist(k, &x, &target).unwrap() < 1e-3 {
            return;
        }
        assert!(step < 5000, "no convergence");
        let mut tape = Tape::new();
        let xv = tape.param("b", p.get("b").unwrap().clone());
        let tv = tape.constant(Matrix::row_vector(&target));
        let d2 = dist_sq_rows(&mut tape, k, xv, tv).unwrap();
        let loss = tape.sum(d2).unwrap();
        let g = tape.backward(loss).unwrap().into_map();
        riemannian_adam_step(&mut s, &mut p, &g).unwrap();
    }
}

#[test]
fn riemannian_steps_stay_in_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &kv in &[-3.0, -1.0] {
        let k = Curvature::new(kv).unwrap();
        let mut p = single("b", Matrix::zeros(4, 3), ParamKind::Stereographic(k));
        let mut s = OptimState::new(0.5);
        for _ in 0..1000 {
            let g = random_grad(&mut rng, 4, 3).scale(100.0);
            riemannian_adam_step(&mut s, &mut p, &g_map(g)).unwrap();
            let x = p.get("b").unwrap();
            for r in 0..4 {
                assert!(k.contains(x.row(r)));
            }
        }
    }
}

fn g_map(g: Matrix) -> BTreeMap<String, Matrix> {
    grads("b", g)
}

#[test]
fn flat_riemannian_matches_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = Matrix::random_uniform(3, 5, 1.0, &mut rng);
    let mut pa = single("w", x0.clone(), ParamKind::Euclidean);
    let mut pr = single("w", x0.clone(), ParamKind::Stereographic(Curvature::FLAT));
    let mut sa = OptimState::new(0.01);
    let mut sr = OptimState::new(0.01);
    for _ in 0..5 {
        let g = random_grad(&mut rng, 3, 5);
        let before = pa.get("w").unwrap().clone();
        adam_step(&mut sa, &mut pa, &grads("w", g.clone())).unwrap();
        riemannian_adam_step(&mut sr, &mut pr, &grads("w", g)).unwrap();
        let da = pa
            .get("w")
            .unwrap()
            .sub(&before)
            .unwrap()
            .scale(1.0 / sa.lr);
        let dr = pr
            .get("w")
            .unwrap()
            .sub(&before)
            .unwrap()
            .scale(1.0 / sr.lr);
        assert!(da.max_abs_diff(&dr).unwrap() < 1e-6);
        pr.set("w", pa.get("w").unwrap().clone()).unwrap();
    }
}

#[test]
fn stiefel_parameter_stays_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = stiefel_project(&Matrix::random_uniform(6, 3, 1.0, &mut rng)).unwrap();
    let mut p = single("q", x.into_matrix(), ParamKind::Stiefel);
    let mut s = OptimState::new(0.05);
    for _ in 0..50 {
        let g = random_grad(&mut rng, 6, 3);
        riemannian_adam_step(&mut s, &mut p, &grads("q", g)).unwrap();
        assert!(crate::manifolds::orth_residual(p.get("q").unwrap()) < 1e-10);
    }
}

#[test]
fn state_round_trips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = single("w", Matrix::zeros(2, 3), ParamKind::Euclidean);
    p.insert(
        "b",
        Matrix::zeros(2, 2),
        ParamKind::Stereographic(Curvature::new(-1.0).unwrap()),
    );
    let mut s = OptimState::new(0.01);
    for _ in 0..3 {
        let mut g = grads("w", random_grad(&mut rng, 2, 3));
        g.insert("b".into(), random_grad(&mut rng, 2, 2));
        s.step(&mut p, &g).unwrap();
    }
    let restored = OptimState::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(restored, s);
    let mut g = grads("w", random_grad(&mut rng, 2, 3));
    g.insert("b".into(), random_grad(&mut rng, 2, 2));
    let (mut p1, mut p2) = (p.clone(), p.clone());
    let (mut s1, mut s2) = (s, restored);
    s1.step(&mut p1, &g).unwrap();
    s2.step(&mut p2, &g).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn shape_mismatch_is_contract_error() {
    let mut p = single("w", Matrix::zeros(2, 2), ParamKind::Euclidean);
    let mut s = OptimState::new(0.01);
    let r = adam_step(&mut s, &mut p, &grads("w", Matrix::zeros(1, 2)));
    assert!(matches!(r, Err(GeoError::Contract(_))));
}
