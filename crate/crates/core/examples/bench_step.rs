use std::time::Instant;

use mnmt::corpus::*;
use mnmt::model::ModelConfig;
use mnmt::noising::{DaeConfig, MlmConfig, Task};
use mnmt::scheduling::{MixPlan, Schedules, TaskData};
use mnmt::tokenizer::train_vocab;
use mnmt::toy::ToyWorld;
use mnmt::trainer::*;

fn main() {
    let l = |s: &str| LanguageId::new(s).unwrap();
    let langs = vec![l("en"), l("xa"), l("xb")];
    let world = ToyWorld::new(&langs, 1);
    let bitext: Vec<_> = ["xa", "xb"].iter().enumerate().map(|(i, x)| world.bitext(&LangPair::new(l(x), l("en")), 200, 1, "train", i as u64)).collect();
    let mono = vec![
        world.mono(&l("xa"), MonoSide::Source, 500, 1, 0),
        world.mono(&l("xb"), MonoSide::Source, 500, 1, 1),
        world.mono(&l("en"), MonoSide::Target, 500, 1, 2),
    ];
    let mut text: Vec<String> = bitext.iter().flat_map(|b| b.pairs.iter().flat_map(|(a, c)| [a.clone(), c.clone()])).collect();
    text.extend(mono.iter().flat_map(|m| m.sentences.clone()));
    let vocab = train_vocab(&text, &langs, 400).unwrap();
    println!("vocab {}", vocab.len());
    let manifest = CorpusManifest { languages: langs.clone(), direction: Direction::X2en, hub: l("en"), bitext, valid: vec![], mono, filter: FilterConfig::default() };
    let data = TaskData::from_manifest(&manifest, &vocab, &[], 64);
    let bt: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(256);
    let cfg = TrainConfig {
        model: ModelConfig::desk(vocab.len()),
        optim: OptimConfig { accumulation: 1, max_steps: 40, ..Default::default() },
        schedules: Schedules::default(),
        plan: MixPlan::new(&[Task::Mt, Task::Mlm, Task::Dae], bt),
        mlm: MlmConfig::default(),
        dae: DaeConfig::default(),
        max_len: 64,
    };
    let mut t = Trainer::<f32>::new(cfg, vocab, data, vec![]).unwrap();
    let start = Instant::now();
    for _ in 0..40 {
        t.train_step().unwrap();
    }
    println!("{:.1} ms/step", start.elapsed().as_secs_f64() * 1000.0 / 40.0);
}
