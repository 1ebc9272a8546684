// scratch: writes fuzz corpus seed files
use ndarray::{Array1, Array2};
use puflab::dataset::{collect_crps, write_dataset_binary, write_dataset_csv};
use puflab::experiment::report::{
    CellOutcome, CellTiming, Environment, ExperimentReport, ReportBody, ReportCell, Timing,
    REPORT_SCHEMA_VERSION,
};
use puflab::lfsr::{lfsr_generate, GaloisLfsr};
use puflab::ml::mlp::{MlpConfig, MlpModel};
use puflab::obfuscation::{MaskConfig, ObfuscationConfig, ShuffleConfig};
use puflab::puf::{NoiseModel, XorPufInstance};
use std::fs;
use std::path::Path;

fn main() {
    let base = Path::new("fuzz/corpus");
    let puf = XorPufInstance::new_br(16, 2, 3).unwrap();
    let mut lfsr = GaloisLfsr::with_defaults(1).unwrap();
    let challenges = lfsr_generate(&mut lfsr, 40, 16).unwrap();
    let ds = collect_crps(&puf, None, &challenges, 3, &NoiseModel::noiseless(), 0.0).unwrap();
    let mut csv = Vec::new();
    write_dataset_csv(&ds, &mut csv).unwrap();
    fs::write(base.join("fuzz_crp_csv/valid_small.csv"), &csv).unwrap();
    let mut bin = Vec::new();
    write_dataset_binary(&ds, &mut bin).unwrap();
    fs::write(base.join("fuzz_crp_binary/valid_small.crpd"), &bin).unwrap();

    let mask = ObfuscationConfig::Mask(MaskConfig::new(16, 7).unwrap());
    fs::write(
        base.join("fuzz_obfuscation_config/mask.json"),
        mask.to_json().unwrap(),
    )
    .unwrap();
    let shuffle = ObfuscationConfig::Shuffle(ShuffleConfig::new(16, 9).unwrap());
    fs::write(
        base.join("fuzz_obfuscation_config/shuffle.json"),
        shuffle.to_json().unwrap(),
    )
    .unwrap();

    let config_text = "\
[experiment]
master_seed = 7

[puf]
kind = xor-br
m = 64
k = 4
chips = 3

[obfuscation]
kind = shuffle

[dataset]
train_sizes = 5000, 20000
test_size = 20000
iterations = 3
sigma = auto
lfsr_taps = 0xd800000000000000

[mlp]
layers = 4
hidden = 256

[svm]
degree = 4
c_grid = 0.1, 1

[lda]
samples = 50000

[sweep]
layers = 1, 4
hidden = 64, 128

[output]
dir = out
format = table
";
    fs::write(base.join("fuzz_experiment_config/full.conf"), config_text).unwrap();

    let mut cfg = MlpConfig::new(8, 2, 4, 5);
    cfg.max_iterations = 40;
    cfg.checkpoint_every = 20;
    cfg.batch_size = 8;
    let mut model = MlpModel::build(cfg).unwrap();
    let x = Array2::from_shape_fn((16, 8), |(r, c)| if (r + c) % 2 == 0 { 1.0 } else { -1.0 });
    let y = Array1::from_shape_fn(16, |r| (r % 2) as f64);
    model.train(&x, &y).unwrap();
    fs::write(
        base.join("fuzz_model_checkpoint/small_model.json"),
        model.to_json().unwrap(),
    )
    .unwrap();

    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        body: ReportBody {
            config_hash: "2c26b46b68ffc68ff99b453c1d30413413422d706483bfa0f98a5e886266e7ae".into(),
            master_seed: 7,
            puf_kind: "xor-br".into(),
            m: 64,
            k: 4,
            obfuscation: Some("shuffle".into()),
            theta: 1.25,
            sigma: 0.31,
            cells: vec![ReportCell {
                train_size: 20000,
                attacker: "mlp[N=4,K=256]".into(),
                config_hash: "2c26b46b68ffc68ff99b453c1d30413413422d706483bfa0f98a5e886266e7ae".into(),
                outcome: CellOutcome::Ok {
                    accuracy: 0.962,
                    iterations_to_stop: Some(9000),
                    detail: None,
                },
            }],
            winner: None,
        },
        timing: Timing {
            cells: vec![CellTiming {
                id: "train20000/mlp[N=4,K=256]".into(),
                seconds: 120.5,
            }],
            total_seconds: 125.0,
        },
        environment: Environment::current(),
    };
    fs::write(
        base.join("fuzz_report_json/attack_report.json"),
        report.to_json().unwrap(),
    )
    .unwrap();

    fs::write(base.join("fuzz_bitvec_parse/bits.txt"), "1010110010").unwrap();
    let mut packed = vec![9u8];
    packed.extend_from_slice(&[0b1010_1010, 0b0000_0001]);
    fs::write(base.join("fuzz_bitvec_parse/packed.bin"), packed).unwrap();
    println!("corpus written");
}
