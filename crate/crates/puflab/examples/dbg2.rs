// scratch: dropout/train-size probe
use ndarray::Array1;
use puflab::dataset::{collect_crps, split_dataset};
use puflab::lfsr::{lfsr_generate, GaloisLfsr};
use puflab::ml::mlp::{Activation, MlpConfig, MlpModel};
use puflab::puf::{calibrate_threshold, NoiseModel, XorPufInstance};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let act = if args[1] == "tanh" { Activation::Tanh } else { Activation::Relu };
    let batch: usize = args[2].parse().unwrap();
    let lr: f64 = args[3].parse().unwrap();
    let dropout: f64 = args[4].parse().unwrap();
    let max_iters: usize = args[5].parse().unwrap();
    let train_n: usize = args[6].parse().unwrap();

    let m = 64;
    let puf = XorPufInstance::new_br(m, 4, 42).unwrap();
    let mut lfsr = GaloisLfsr::with_defaults(1).unwrap();
    let calib = lfsr_generate(&mut lfsr, 10_000, m).unwrap();
    let theta = calibrate_threshold(&puf, 0.8, &calib).unwrap();
    let mut lfsr2 = GaloisLfsr::with_defaults(2).unwrap();
    let need = ((train_n + 20_000) as f64 / 0.78) as usize + 2000;
    let challenges = lfsr_generate(&mut lfsr2, need, m).unwrap();
    let ds = collect_crps(&puf, None, &challenges, 1, &NoiseModel::noiseless(), theta).unwrap();
    let (train, test) = split_dataset(&ds, train_n, 20_000, 7).unwrap();
    let (tx, tyv) = train.encode_pm1();
    let ty = Array1::from_vec(tyv.to_vec());
    let (sx, sy) = test.encode_pm1();
    // class balance
    let ones: f64 = sy.iter().sum::<f64>() / sy.len() as f64;
    let mut cfg = MlpConfig::new(m, 4, 256, 1);
    cfg.activation = act;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.dropout_rate = dropout;
    cfg.max_iterations = max_iters;
    let mut model = MlpModel::build(cfg).unwrap();
    let t1 = Instant::now();
    let trace = model.train(&tx, &ty).unwrap();
    let acc = model.accuracy(&sx.view(), sy.as_slice().unwrap()).unwrap();
    let last = trace.checkpoints.last().unwrap();
    println!(
        "act={} batch={} lr={} drop={} train_n={}: stop {:?}@{} train_acc {:.4} TEST {:.4} bias {:.3} ({:.0}s)",
        args[1], batch, lr, dropout, train_n, trace.stop_reason, model.trained_iterations(),
        last.training_accuracy, acc, ones, t1.elapsed().as_secs_f64()
    );
}
