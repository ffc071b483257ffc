//! Side-by-side vehicle counts of two controllers.

use rampflow::pipeline::{run_controller, ControllerKind};
use rampflow::scenario::default_scenario;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let a: ControllerKind = args.get(1).map_or("none", |s| s.as_str()).parse().unwrap();
    let b: ControllerKind = args.get(2).map_or("coordinated", |s| s.as_str()).parse().unwrap();
    let s = match std::env::var("SCENARIO") {
        Ok(p) => rampflow::scenario::ScenarioConfig::load(std::path::Path::new(&p)).unwrap(),
        Err(_) => default_scenario(),
    };
    let ra = run_controller(&s, a, 1).unwrap();
    let rb = run_controller(&s, b, 1).unwrap();
    let (mut ea, mut eb, mut oa, mut ob) = (0.0, 0.0, 0.0, 0.0);
    let mut da = 0.0;
    for t in 0..ra.trajectory.steps() {
        let (fa, fb) = (ra.trajectory.flows(t), rb.trajectory.flows(t));
        ea += fa.exit_flow / 240.0;
        eb += fb.exit_flow / 240.0;
        oa += fa.offramp_flows.iter().sum::<f64>() / 240.0;
        ob += fb.offramp_flows.iter().sum::<f64>() / 240.0;
        let (sa, sb) = (&ra.trajectory.states[t], &rb.trajectory.states[t]);
        let ml = |s: &rampflow::ctm::SimState| s.densities.iter().sum::<f64>() * 0.5;
        let qs = |s: &rampflow::ctm::SimState| s.queues[1..].iter().sum::<f64>();
        da += (ml(sb) + qs(sb) + sb.queues[0] - ml(sa) - qs(sa) - sa.queues[0]) / 240.0;
        if t % 20 == 0 {
            println!(
                "{t:4} ml {:7.1} {:7.1}  q {:6.1} {:6.1}  exit {:8.1} {:8.1}  off {:8.1} {:8.1}  dTTS {:6.2}",
                ml(sa), ml(sb), qs(sa), qs(sb), ea, eb, oa, ob, da
            );
        }
    }
}
