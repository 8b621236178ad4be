use rnan::gradsuite::{run_seed, TOLERANCE};
use rnan::tensor::{grad_check, relu, relu_backward, GradOp};
use rnan::Tensor4;

#[test]
fn gradient_suite_seed_0() {
    let reports = run_seed(0).unwrap();
    for r in &reports {
        println!("{:<32} max_rel={:.3e} checked={}", r.op_name, r.max_rel_error, r.checked);
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passes(TOLERANCE)).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

struct Relu {
    /// Multiplies the analytic gradient, so anything but 1 is a wrong backward.
    gain: f64,
}

impl GradOp for Relu {
    fn name(&self) -> String {
        "relu".into()
    }

    fn forward(&self, x: &[Tensor4<f64>]) -> rnan::Result<Tensor4<f64>> {
        Ok(relu(&x[0]))
    }

    fn backward(&self, x: &[Tensor4<f64>], g: &Tensor4<f64>) -> rnan::Result<Vec<Tensor4<f64>>> {
        Ok(vec![relu_backward(&x[0], g)?.scale(self.gain)])
    }
}

#[test]
fn step_across_a_kink_is_remeasured() {
    // 3e-6 lies inside a 1e-5 step around the kink but outside a 1e-6 one.
    let x = Tensor4::from_vec([1, 1, 1, 3], vec![3e-6, -0.4, 0.7]).unwrap();
    let r = grad_check(&Relu { gain: 1.0 }, &[x.clone()], 1e-5).unwrap();
    assert!(r.passes(TOLERANCE), "{r:?}");
    let r = grad_check(&Relu { gain: 1.001 }, &[x], 1e-5).unwrap();
    assert!(!r.passes(TOLERANCE), "{r:?}");
}

#[test]
fn wrong_gradient_fails_away_from_kinks() {
    let x = Tensor4::from_vec([1, 1, 2, 2], vec![0.3, -0.2, 1.5, 0.8]).unwrap();
    let r = grad_check(&Relu { gain: 0.5 }, &[x], 1e-5).unwrap();
    assert!((r.max_rel_error - 0.5).abs() < 1e-6, "{r:?}");
}
