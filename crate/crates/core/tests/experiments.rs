use cyclelife::dataset::{split_dataset, synth_cohort, SplitName, SplitSpec, SynthRanges};
use cyclelife::eval::{
    run_experiments, run_single, sweep_terminal_cycles, terminal_cycles, write_plot_rows, ExperimentConfig,
};
use cyclelife::features::Window;
use cyclelife::nn::Architecture;
use cyclelife::optim::TrainConfig;
use cyclelife::Error;

fn setup() -> (Vec<cyclelife::dataset::CellRecord>, cyclelife::dataset::DatasetSplit, ExperimentConfig) {
    let ranges = SynthRanges { life: (200, 900), cycles_to_emit: 40, ..SynthRanges::default() };
    let cells = synth_cohort(9, &ranges, 3).unwrap();
    let split = split_dataset(&cells, &SplitSpec::Counts { train: 3, primary: 3, secondary: 3, seed: 3 }).unwrap();
    let config = ExperimentConfig {
        architecture: Architecture { input_size: 151, lstm1: 3, lstm2: 4, dense: 4 },
        train: TrainConfig { epochs: 3, window: Window::new(11, 20), ..TrainConfig::default() },
        k: 3,
        base_seed: 17,
        ..ExperimentConfig::default()
    };
    (cells, split, config)
}

#[test]
fn per_seed_results_equal_single_runs() {
    let (cells, split, config) = setup();
    let report = run_experiments(&cells, &split, &config).unwrap();
    assert_eq!(report.k, 3);
    for (i, r) in report.per_seed.iter().enumerate() {
        let single = run_single(&cells, &split, &config, 17 + i as u64).unwrap();
        assert_eq!(r, &single);
    }
    let primary = report.split(SplitName::PrimaryTest).unwrap();
    let values: Vec<f64> = report.per_seed.iter().map(|s| s.metrics[1].rmse).collect();
    let mean = values.iter().sum::<f64>() / 3.0;
    assert!((primary.rmse_mean - mean).abs() < 1e-9);
}

#[test]
fn sweep_emits_one_row_per_terminal_split_and_metric() {
    let (cells, split, mut config) = setup();
    config.k = 1;
    config.train.epochs = 1;
    let terminals = terminal_cycles(14, 26, 4);
    assert_eq!(terminals, vec![14, 18, 22, 26]);
    let reports = sweep_terminal_cycles(&cells, &split, &config, &terminals).unwrap();
    let mut out = Vec::new();
    write_plot_rows(&reports, &mut out).unwrap();
    let rows = String::from_utf8(out).unwrap();
    assert_eq!(rows.lines().count(), 4 * 3 * 2);
    assert!(rows.lines().all(|l| l.split(',').count() == 5));
}

#[test]
fn sweep_beyond_cycle_life_is_rejected_up_front() {
    let (cells, split, config) = setup();
    let err = sweep_terminal_cycles(&cells, &split, &config, &[20, 5000]).unwrap_err();
    assert!(matches!(err, Error::WindowExceedsLife { terminal: 5000, .. }), "{err}");
}
