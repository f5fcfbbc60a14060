use stochpool::encoder::Checkpoint;
use stochpool::training::toy::{finetune_plan, pretrain_plan};
use stochpool::training::{self, Dataset, Mode, ToyBench, TrainLogRecord, TrainPlan, Trainer};
use stochpool::{CompressionConfig, Encoder, Error, FactorSets, Tensor};

fn bench() -> ToyBench {
    ToyBench::new(64, 3)
}

fn stochastic() -> Mode {
    Mode::Stochastic(FactorSets::up_to(2, 2, 2).unwrap())
}

fn params(enc: &Encoder<f64>) -> Vec<Tensor<f64>> {
    enc.params().iter().map(|(_, t)| t.clone()).collect()
}

fn without_time(log: &[TrainLogRecord]) -> Vec<TrainLogRecord> {
    log.iter()
        .map(|r| TrainLogRecord { wall_ms: 0.0, ..r.clone() })
        .collect()
}

/// Validation every 3 steps, so the resumed run carries a best snapshot.
fn finetune_with_eval(steps: usize) -> TrainPlan {
    TrainPlan {
        eval_every: 3,
        ..finetune_plan(stochastic(), steps, 9)
    }
}

fn pretrain(steps: usize, seed: u64, mode: Mode) -> (Encoder<f64>, Vec<TrainLogRecord>) {
    let data = bench();
    let enc = Encoder::from_preset("tiny", seed).unwrap();
    training::pretrain_toy(enc, pretrain_plan(mode, steps, seed), &data.pretrain).unwrap()
}

#[test]
fn same_seed_same_run() {
    let (a, log_a) = pretrain(6, 5, stochastic());
    let (b, log_b) = pretrain(6, 5, stochastic());
    assert_eq!(params(&a), params(&b));
    assert_eq!(without_time(&log_a), without_time(&log_b));
    let (c, _) = pretrain(6, 6, stochastic());
    assert_ne!(params(&a), params(&c));
}

#[test]
fn resume_is_bit_identical() {
    let data = bench();
    let enc = Encoder::from_preset("tiny", 1).unwrap();
    let plan = || finetune_with_eval(10);
    let straight = {
        let mut t = Trainer::finetune(enc.clone(), plan(), &data.train, Some(&data.val)).unwrap();
        t.run(|_| Ok(())).unwrap();
        t.finish().unwrap()
    };
    let mut first = Trainer::finetune(enc, plan(), &data.train, Some(&data.val)).unwrap();
    for _ in 0..5 {
        first.step_once().unwrap();
    }
    let bytes = first.checkpoint().to_bytes().unwrap();
    drop(first);
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let mut second = Trainer::resume(&ck, plan(), &data.train, Some(&data.val)).unwrap();
    assert_eq!(second.step(), 5);
    second.run(|_| Ok(())).unwrap();
    assert_eq!(params(&second.finish().unwrap()), params(&straight));
}

#[test]
fn finetune_adds_exactly_the_head() {
    let data = bench();
    let enc = Encoder::from_preset("tiny", 2).unwrap();
    let before = enc.params().numel();
    let (tuned, log) = training::finetune(enc, finetune_plan(stochastic(), 0, 2), &data.train, None).unwrap();
    assert!(log.is_empty());
    let vocab = data.train.vocab();
    assert_eq!(tuned.vocab(), Some(vocab));
    assert_eq!(tuned.params().numel() - before, 64 * vocab + vocab);
}

#[test]
fn stochastic_runs_visit_several_configs() {
    let (_, log) = pretrain(8, 4, stochastic());
    let mut configs: Vec<&str> = log.iter().map(|r| r.config.as_str()).collect();
    configs.sort();
    configs.dedup();
    assert!(configs.len() >= 2, "{configs:?}");

    let fixed = CompressionConfig::fixed(2, 1, 1, 2).unwrap();
    let (_, log) = pretrain(8, 4, Mode::Deterministic(fixed));
    assert!(log.iter().all(|r| r.config == "2-1-1"));
}

#[test]
fn empty_data_is_an_error() {
    let enc = Encoder::from_preset("tiny", 0).unwrap();
    let empty = Dataset::default();
    let r = Trainer::pretrain(enc.clone(), pretrain_plan(stochastic(), 5, 0), &empty);
    assert!(matches!(r, Err(Error::EmptyDataset)));
    let r = Trainer::finetune(enc, finetune_plan(stochastic(), 5, 0), &empty, None);
    assert!(matches!(r, Err(Error::EmptyDataset)));
}

#[test]
fn fixed_config_must_match_depth() {
    let data = bench();
    let enc = Encoder::from_preset("tiny", 0).unwrap();
    let three_layers = CompressionConfig::fixed(1, 1, 1, 3).unwrap();
    let r = Trainer::pretrain(enc, pretrain_plan(Mode::Deterministic(three_layers), 5, 0), &data.pretrain);
    assert!(matches!(r, Err(Error::Config(_))));
}
