//! Properties of the shipped preset that the designed scenario relies on.

use clogsa_core::clogsim::{self, Ph, SimConfig, Species};
use clogsa_core::pce::{self, FitOptions};
use clogsa_core::probmodel::InputModel;
use clogsa_core::sobol;

fn segment(cfg: &SimConfig, species: Species, ph: Ph) -> usize {
    cfg.segments.iter().position(|s| s.species == species && s.ph == ph).unwrap()
}

#[test]
fn preset_rankings_and_kinetics() {
    let model = InputModel::preset("sg-clogging-7d").unwrap();
    let cfg = SimConfig::preset();
    let ds = clogsim::monte_carlo(&model, &cfg, 1000, 2024).unwrap();
    let (s, _) = pce::fit(&ds, &model, &FitOptions::default()).unwrap();
    let ts = sobol::sobol_timeseries(&s);
    let mids = cfg.segment_midpoints();
    let idx = |n: &str| model.index_of(n).unwrap();

    let low = mids[segment(&cfg, Species::Chi1, Ph::Low)];
    let mut top: Vec<usize> = ts.ranking(low).unwrap()[..3].to_vec();
    top.sort_unstable();
    let mut want = vec![idx("d_p"), idx("gamma_p0"), idx("a_v")];
    want.sort_unstable();
    assert_eq!(top, want);

    let chi2 = segment(&cfg, Species::Chi2, Ph::High);
    assert!(ts.ranking(mids[chi2]).unwrap()[..2].contains(&idx("eps_c")));

    // Mean clogging speed per segment, skipping intervals that end on a cleaning.
    let events: Vec<usize> = cfg.cleanings.iter().map(|c| cfg.snap(c.t)).collect();
    let steps = cfg.segment_steps();
    let rate = |j: usize| {
        let (a, b) = steps[j];
        let ks: Vec<usize> = (a..b).filter(|k| !events.contains(&(k + 1))).collect();
        let total: f64 = ks
            .iter()
            .map(|&k| {
                let dt = ds.times[k + 1] - ds.times[k];
                (0..ds.n()).map(|r| (ds.outputs[(r, k + 1)] - ds.outputs[(r, k)]) / dt).sum::<f64>()
            })
            .sum();
        total / (ks.len() * ds.n()) as f64
    };
    assert!(rate(chi2) < rate(segment(&cfg, Species::Chi1, Ph::Low)));
}
