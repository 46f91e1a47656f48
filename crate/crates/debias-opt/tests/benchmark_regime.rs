//! Multi-seed behavior of the synthetic benchmark and the baseline suite:
//! the spurious regime really is biased, the unbiased regime really is
//! not, and the reweighting baselines recover worst-group accuracy.

use debias_opt::data::{gen_spurious_binary, Split, SpuriousSpec};
use debias_opt::harness::{
    eval_metrics, train_erm, train_groupdro_lite, train_jtt_lite, ModelCfg,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn spec(rho: f64, seed: u64) -> SpuriousSpec {
    SpuriousSpec {
        rho,
        core_snr: 4.0,
        spur_snr: 8.0,
        n_train: 1200,
        n_val: 600,
        n_test_per_group: 150,
        seed,
    }
}

fn student_cfg() -> ModelCfg {
    ModelCfg {
        hidden: vec![24, 24],
        lr: 0.02,
        batch_size: 32,
    }
}

#[test]
fn spurious_regime_leaves_erm_at_least_20_points_behind_its_average() {
    let mut gaps = Vec::new();
    for &seed in &SEEDS {
        let data = gen_spurious_binary(&spec(0.95, seed)).unwrap();
        let erm = train_erm(&data, &student_cfg(), 30, seed).unwrap();
        let m = eval_metrics(&erm, &data.grouped_view(Split::Test)).unwrap();
        gaps.push(m.avg_acc - m.wga);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(
        mean_gap >= 0.20,
        "mean avg-wga gap {mean_gap:.3} must reach 20 points; per-seed {gaps:?}"
    );
}

#[test]
fn balanced_rho_shows_no_group_gap() {
    let mut diffs = Vec::new();
    for &seed in &SEEDS {
        let data = gen_spurious_binary(&spec(0.5, seed)).unwrap();
        let erm = train_erm(&data, &student_cfg(), 30, seed).unwrap();
        let m = eval_metrics(&erm, &data.grouped_view(Split::Test)).unwrap();
        diffs.push(m.avg_acc - m.wga);
    }
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!(
        mean_diff < 0.03,
        "without spurious correlation the gap {mean_diff:.3} stays under 3 points"
    );
}

#[test]
fn upweighting_baselines_beat_erm_on_worst_group() {
    for &seed in &SEEDS {
        let data = gen_spurious_binary(&spec(0.95, seed)).unwrap();
        let test = data.grouped_view(Split::Test);
        let cfg = student_cfg();
        let erm = eval_metrics(&train_erm(&data, &cfg, 30, seed).unwrap(), &test).unwrap();
        let jtt = eval_metrics(
            &train_jtt_lite(&data, &cfg, 1, 20.0, 30, seed).unwrap().model,
            &test,
        )
        .unwrap();
        let dro = eval_metrics(
            &train_groupdro_lite(&data, &cfg, 0.5, 30, seed).unwrap(),
            &test,
        )
        .unwrap();
        assert!(
            jtt.wga > erm.wga,
            "seed {seed}: jtt {:.3} vs erm {:.3}",
            jtt.wga,
            erm.wga
        );
        assert!(
            dro.wga > erm.wga,
            "seed {seed}: groupdro {:.3} vs erm {:.3}",
            dro.wga,
            erm.wga
        );
    }
}

#[test]
fn erm_benchmark_metrics_are_pinned() {
    // Regression values from the first verified run of this fixture; any
    // change to the generator, the stream layout, or the training loop
    // shows up here.
    let data = gen_spurious_binary(&spec(0.95, 0)).unwrap();
    let erm = train_erm(&data, &student_cfg(), 30, 0).unwrap();
    let m = eval_metrics(&erm, &data.grouped_view(Split::Test)).unwrap();
    assert_eq!(m.avg_acc, 0.84);
    assert_eq!(m.wga, 0.6266666666666667);
    assert_eq!(
        m.per_group_acc,
        vec![1.0, 0.6266666666666667, 0.7333333333333333, 1.0]
    );
}
