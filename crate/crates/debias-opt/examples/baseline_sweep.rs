//! A small seeded sweep over the baseline suite.
//!
//! Trains ERM, JTT-lite, GroupDRO-lite, plain KD, and weighted KD on the
//! spurious-correlation benchmark across three seeds and prints the
//! mean and spread of average and worst-group accuracy.
//!
//! ```bash
//! cargo run --release --example baseline_sweep
//! ```

use debias_opt::data::{gen_spurious_binary, Split, SpuriousSpec};
use debias_opt::dedier::{dedier_train, AuxSource, TrainSettings, WeightingParams};
use debias_opt::harness::{
    cache_teacher_logits, eval_metrics, mean_std, sweep, train_erm, train_groupdro_lite,
    train_jtt_lite, train_kd, ModelCfg,
};
use debias_opt::nn::{MlpConfig, MlpModel};
use debias_opt::rng::{stream_seed, SplitMix64};

fn main() {
    let data = gen_spurious_binary(&SpuriousSpec {
        rho: 0.95,
        core_snr: 4.0,
        spur_snr: 8.0,
        n_train: 800,
        n_val: 400,
        n_test_per_group: 100,
        seed: 0,
    })
    .unwrap();
    let test = data.grouped_view(Split::Test);
    let cfg = ModelCfg {
        hidden: vec![24, 24],
        lr: 0.02,
        batch_size: 32,
    };
    let seeds = [0u64, 1, 2];
    let methods: Vec<String> = ["erm", "jtt", "groupdro", "kd", "dedier"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let grid = vec![("alpha".to_string(), vec![0.05]), ("beta".to_string(), vec![4.0])];

    let mut teachers = std::collections::BTreeMap::new();
    for &seed in &seeds {
        let teacher_cfg = ModelCfg {
            hidden: vec![32, 32],
            lr: 0.05,
            batch_size: 64,
        };
        let teacher =
            train_groupdro_lite(&data, &teacher_cfg, 0.5, 40, stream_seed(seed, "teacher"))
                .unwrap();
        let logits = cache_teacher_logits(&teacher, &data.class_view(Split::Train)).unwrap();
        teachers.insert(seed, logits);
    }

    let result = sweep(&grid, &seeds, &methods, |cell| {
        let seed = cell.seed;
        let model = match cell.method.as_str() {
            "erm" => train_erm(&data, &cfg, 25, seed)?,
            "jtt" => train_jtt_lite(&data, &cfg, 1, 20.0, 25, seed)?.model,
            "groupdro" => train_groupdro_lite(&data, &cfg, 0.5, 25, seed)?,
            "kd" => train_kd(&data, &cfg, &teachers[&seed], 1.0, 2.0, 25, seed)?,
            _ => {
                let mut rng = SplitMix64::stream(seed, "student-init");
                let student = MlpModel::new(
                    &MlpConfig {
                        input_dim: 10,
                        hidden: cfg.hidden.clone(),
                        outputs: 2,
                        freeze_bias: false,
                    },
                    &mut rng,
                )?;
                dedier_train(
                    student,
                    &teachers[&seed],
                    &data,
                    &WeightingParams::default(),
                    25,
                    &TrainSettings {
                        lr: cfg.lr,
                        batch_size: cfg.batch_size,
                        aux_lr: 0.2,
                    },
                    seed,
                    AuxSource::Learned,
                )?
                .student
            }
        };
        eval_metrics(&model, &test)
    });

    println!("3-seed sweep on the rho = 0.95 benchmark\n");
    println!("  method      avg acc (mean +- std)    wga (mean +- std)");
    for method in &methods {
        let avg: Vec<f64> = result
            .rows
            .iter()
            .filter(|(c, _)| &c.method == method)
            .map(|(_, r)| r.avg_acc)
            .collect();
        let wga: Vec<f64> = result
            .rows
            .iter()
            .filter(|(c, _)| &c.method == method)
            .map(|(_, r)| r.wga)
            .collect();
        let (am, asd) = mean_std(&avg);
        let (wm, wsd) = mean_std(&wga);
        println!("  {method:<10}  {am:.3} +- {asd:.3}          {wm:.3} +- {wsd:.3}");
    }
    if !result.failures.is_empty() {
        println!("  ({} runs failed)", result.failures.len());
    }
}
