//! Prints TTS and savings of the three controllers over a range of seeds.

use rampflow::metrics::relative_savings;
use rampflow::pipeline::{run_controller, ControllerKind};
use rampflow::scenario::{default_scenario, ScenarioConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let s = match args.get(1) {
        Some(p) => ScenarioConfig::load(std::path::Path::new(p)).expect("scenario"),
        None => default_scenario(),
    };
    let seeds: u64 = args.get(2).map_or(10, |n| n.parse().expect("seed count"));
    let start = std::time::Instant::now();
    for seed in 1..=seeds {
        let r: Vec<_> = ControllerKind::ALL
            .iter()
            .map(|&c| run_controller(&s, c, seed).expect("run").metrics)
            .collect();
        let tft = r[0].tft;
        let cl = relative_savings(r[0].tts, r[1].tts, tft).unwrap();
        let co = relative_savings(r[0].tts, r[2].tts, tft).unwrap();
        println!(
            "seed {seed:>2}  TFT {tft:8.1}  TTS ol {:8.1} cl {:8.1} co {:8.1}  delay saving cl {:5.1}% co {:5.1}%  spill {:.1}/{:.1}/{:.1}",
            r[0].tts, r[1].tts, r[2].tts, 100.0 * cl.delay, 100.0 * co.delay, r[0].spill, r[1].spill, r[2].spill
        );
    }
    println!("elapsed {:.1?}", start.elapsed());
}
