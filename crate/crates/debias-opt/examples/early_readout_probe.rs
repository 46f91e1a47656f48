//! Early readouts flag bias-conflicting instances.
//!
//! After one epoch of plain training on the spurious-correlation
//! benchmark, linear decoders are fitted to every layer. The earliest
//! readout misses far more minority (bias-conflicting) instances than the
//! final layer, and its minority errors come with a larger confidence
//! margin: the two signals the weighting scheme feeds on.
//!
//! ```bash
//! cargo run --release --example early_readout_probe
//! ```

use debias_opt::data::{gen_spurious_binary, SpuriousSpec};
use debias_opt::dedier::readout_probe;
use debias_opt::harness::{train_erm, ModelCfg};

fn main() {
    let seed = 0;
    let data = gen_spurious_binary(&SpuriousSpec {
        rho: 0.95,
        core_snr: 4.0,
        spur_snr: 8.0,
        n_train: 1200,
        n_val: 600,
        n_test_per_group: 150,
        seed,
    })
    .unwrap();
    let cfg = ModelCfg {
        hidden: vec![32, 32],
        lr: 0.3,
        batch_size: 8,
    };
    let model = train_erm(&data, &cfg, 1, seed).unwrap();
    let reports = readout_probe(&model, &data, &[1, 2, 3], 2, 0.1, 32, seed).unwrap();

    println!("linear decoders on each layer after 1 training epoch (rho = 0.95)\n");
    println!("groups: 0 = (y0,a0)  1 = (y0,a1)*  2 = (y1,a0)*  3 = (y1,a1)   * bias-conflicting\n");
    for report in &reports {
        println!("depth {} readout:", report.depth);
        println!("  group   population   error rate   mean error margin   share of errors");
        for g in &report.groups {
            println!(
                "  {:>5}   {:>10}   {:>10.3}   {:>17.3}   {:>15.3}",
                g.group, g.population, g.error_rate, g.mean_error_margin, g.error_share
            );
        }
        println!(
            "  minority recall by the error set: {:.3}\n",
            report.minority_recall(&[1, 2])
        );
    }
}
