//! Check every analytic gradient against central finite differences.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use debias_opt::nn::{finite_diff_check, LossKind, LossTarget, MlpConfig, MlpModel};
use debias_opt::rng::SplitMix64;

fn main() {
    let mut rng = SplitMix64::new(7);
    let model = MlpModel::new(
        &MlpConfig {
            input_dim: 4,
            hidden: vec![8, 6],
            outputs: 3,
            freeze_bias: false,
        },
        &mut rng,
    )
    .unwrap();
    let x: Vec<f64> = (0..4).map(|_| rng.next_normal()).collect();

    let cases = [
        ("cross-entropy", LossKind::CrossEntropySoftmax, LossTarget::Class(1)),
        (
            "per-label BCE",
            LossKind::BceSigmoidPerLabel,
            LossTarget::Binary(vec![1.0, 0.0, 1.0]),
        ),
        (
            "distillation KL (tau=2)",
            LossKind::KdKlWithTemperature { temperature: 2.0 },
            LossTarget::TeacherLogits(vec![0.8, -0.3, 0.1]),
        ),
    ];

    println!("loss gradient vs central differences (h = 1e-5)\n");
    for (name, kind, target) in cases {
        let (logits, taps) = model.forward(&x).unwrap();
        let at_logits = kind.grad(&logits, &target).unwrap();
        let grads = model.backward(&x, &taps, &at_logits).unwrap();
        let mut flat = Vec::new();
        for (dw, db) in grads.d_weights.iter().zip(&grads.d_biases) {
            flat.extend_from_slice(dw.as_slice());
            flat.extend_from_slice(db);
        }
        let params = model.params_vec();
        let model_ref = &model;
        let x_ref = &x;
        let err = finite_diff_check(
            |p| {
                let mut m = model_ref.clone();
                m.set_params(p).unwrap();
                let (logits, _) = m.forward(x_ref).unwrap();
                kind.value(&logits, &target).unwrap()
            },
            &flat,
            &params,
            1e-5,
        )
        .unwrap();
        println!("  {name:<26} max relative error {err:.3e}");
    }
    println!("\nthe full 100-trial suite: debias-opt gradcheck --config <cfg> --out <dir>");
}
