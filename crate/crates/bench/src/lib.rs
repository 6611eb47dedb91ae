//! Shared fixtures for the criterion benchmarks.

use psd_core::pipeline::ForwardModel;
use psd_core::scenario::MeasurementSet;
use psd_core::Config;

/// Default scenario with a reduced wavelength grid so benches stay quick.
pub fn bench_config() -> Config {
    let mut cfg = Config::default();
    cfg.wavelength_grid.points = 50;
    cfg.size_grid.points = 120;
    cfg
}

pub fn bench_model(cfg: &Config) -> ForwardModel {
    ForwardModel::build(cfg).expect("bench model builds")
}

pub fn bench_measurements(cfg: &Config, model: &ForwardModel) -> MeasurementSet {
    let (_, set) = psd_core::pipeline::simulate(cfg, model, cfg.seed).expect("bench simulation");
    set
}
