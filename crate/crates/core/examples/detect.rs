//! Detection and forecast scores over synthetic annotated runs.

use rampflow::event::EventKind;
use rampflow::metrics::{forecast_lead_times, precision_recall};
use rampflow::synthetic::{detect, generate, SyntheticConfig};

fn main() {
    let cfg = SyntheticConfig::default();
    let th = cfg.thresholds();
    let (mut ev, mut ann) = (Vec::new(), Vec::new());
    let (mut led, mut total) = (0, 0);
    for seed in 0..20u64 {
        let run = generate(&cfg, seed);
        let mut out = detect(&run, &th).unwrap();
        let leads = forecast_lead_times(&out, 0.6, 900);
        total += leads.len();
        led += leads.iter().filter(|l| l.is_some_and(|s| s >= 180)).count();
        // Keep locations distinct across runs.
        let off = seed as u32 * 1000;
        for e in &mut out {
            e.location += off;
        }
        ev.extend(out);
        ann.extend(run.annotations.iter().map(|a| {
            let mut a = *a;
            a.location += off;
            a
        }));
    }
    let c = precision_recall(&ev, EventKind::Congestion, &ann, 0.6).unwrap();
    let f = precision_recall(&ev, EventKind::PredictedCongestion, &ann, 0.6).unwrap();
    println!("congestion P {:.3} R {:.3} ({} emitted, {} annotations)", c.precision, c.recall, c.emitted, c.annotations);
    println!("forecast   P {:.3} R {:.3} ({} emitted)", f.precision, f.recall, f.emitted);
    println!("lead>=3min {led}/{total} = {:.3}", led as f64 / total as f64);
}
