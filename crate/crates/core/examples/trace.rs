//! Per-tick trace of metered ramps for one run.

use rampflow::pipeline::{run_controller, ControllerKind};
use rampflow::scenario::default_scenario;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let c: ControllerKind = args.get(1).map_or("local", |s| s.as_str()).parse().unwrap();
    let every: usize = args.get(2).map_or(8, |s| s.parse().unwrap());
    let s = match std::env::var("SCENARIO") {
        Ok(p) => rampflow::scenario::ScenarioConfig::load(std::path::Path::new(&p)).unwrap(),
        Err(_) => default_scenario(),
    };
    let r = run_controller(&s, c, 1).unwrap();
    let metered = r.network.metered_ramps();
    for (t, st) in r.trajectory.states.iter().enumerate().step_by(every) {
        let mut line = format!("{t:4} ");
        for &i in &metered {
            let a = r.network.ramps[i].attach_cell;
            line += &format!(
                "| r{i} q{:5.1} r{:6.0} rho{:5.1} ",
                st.queues[i], r.rates[t][i], st.densities[a]
            );
        }
        let cong: Vec<usize> = (0..st.densities.len())
            .filter(|&k| st.densities[k] > r.network.cells[k].fd.critical_density + 0.5)
            .collect();
        line += &format!("| cong {:?} spill {:.1}", cong, r.trajectory.flows(t).total_spill());
        println!("{line}");
    }
    let kinds = ["RampCoordination", "ClearRampCoordination", "Congestion", "PredictedCongestion", "PredictedRampOverflow", "ClearCongestion"];
    for k in kinds {
        let n = r.events.iter().filter(|e| e.kind.as_str() == k).count();
        println!("{k}: {n}");
    }
    println!("{}", r.metrics.table());
}
