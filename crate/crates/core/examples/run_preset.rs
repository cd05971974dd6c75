use std::time::Instant;

use mnmt::experiments::{preset, run_experiment};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map_or("toy-mtl", String::as_str);
    let seed: u64 = args.get(2).map_or(1, |s| s.parse().unwrap());
    let mut p = preset(name).unwrap();
    if let Some(o) = args.get(3) {
        p = p.with_overrides(&toml::from_str(&o.replace(';', "\n")).unwrap()).unwrap();
    }
    let t = Instant::now();
    let s = run_experiment(&p, seed, None).unwrap();
    println!("{}", s.table());
    println!("{:.1} s", t.elapsed().as_secs_f64());
}
