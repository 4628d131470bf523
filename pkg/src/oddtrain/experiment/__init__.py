from .grid import (
    DEFAULT_ALPHAS, DEFAULT_SEEDS, DEFAULT_SKELETONS, ODD, ODT, STABILITY_FRACTIONS,
    ExperimentConfig, GridSpec, Partition, RunRecord, SweepRow, accuracy_table_csv,
    compare_odd_odt, fragmentation_csv, grid_search, mean_test_accuracy, prepare_splits,
    records_csv, run_one, select_winner, stability_sweep, sweep_csv, sweep_detail_csv,
)
