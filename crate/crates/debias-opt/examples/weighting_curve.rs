//! The confidence-margin weighting scheme as a table.
//!
//! Misclassified instances are weighted `exp(beta * cm^alpha)`: beta caps
//! the scale, alpha shapes how sharply the curve rises at low margins
//! (smaller alpha jumps earlier).
//!
//! ```bash
//! cargo run --release --example weighting_curve
//! ```

use debias_opt::dedier::weighting_curve;

fn main() {
    let alphas = [0.01, 0.05, 0.1, 0.2, 0.5];
    let beta = 4.0;
    let curves: Vec<_> = alphas
        .iter()
        .map(|&a| weighting_curve(a, beta, 10).unwrap())
        .collect();

    println!("instance weight exp(beta * cm^alpha) for misreadouts, beta = {beta}\n");
    print!("     cm |");
    for a in alphas {
        print!("  alpha={a:<5}");
    }
    println!();
    for i in 0..10 {
        print!("  {:>5.2} |", curves[0][i].0);
        for curve in &curves {
            print!("  {:>11.2}", curve[i].1);
        }
        println!();
    }
    println!("\ncorrect readouts always keep weight 1; the cap is e^beta = {:.2}", beta.exp());
    println!("smaller alpha rises earlier, larger beta scales every curve up.");
}
