use fedaot_core::client::ClientUpdate;
use fedaot_core::data::synth_blobs;
use fedaot_core::meta::{aggregate_weighted, meta_gradient, meta_round, ImportanceWeights, MetaConfig, StabilizationMode};
use fedaot_core::nn::{backward, MlpArchitecture};
use fedaot_core::seed::derived_rng;
use fedaot_core::tensor::ParamVector;
use rand::Rng;

struct Fixture {
    arch: MlpArchitecture,
    updates: Vec<ClientUpdate>,
    metaval: fedaot_core::data::LabeledDataset,
}

fn fixture(seed: u64, sizes: Vec<usize>, clients: usize) -> Fixture {
    let arch = MlpArchitecture::new(sizes).unwrap();
    let base = arch.init_params(seed);
    let mut rng = derived_rng(seed, &[99]);
    let updates = (0..clients)
        .map(|i| {
            let p: Vec<f64> = base.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
            ClientUpdate::new(i, ParamVector::new(p), 10)
        })
        .collect();
    let metaval = synth_blobs(arch.output_size(), 5, arch.input_size(), seed + 1);
    Fixture { arch, updates, metaval }
}

fn loss_at(f: &Fixture, w: &ImportanceWeights) -> f64 {
    let agg = aggregate_weighted(&f.updates, w).unwrap();
    backward(&agg, &f.arch, f.metaval.features(), f.metaval.labels()).unwrap().0
}

fn descends(f: &Fixture, w: &ImportanceWeights, eta: f64) -> bool {
    let before = loss_at(f, w);
    [eta, eta / 2.0].iter().any(|&eta| {
        let config = MetaConfig {
            eta,
            meta_steps: 1,
            re_aggregate_after_update: true,
        };
        let out = meta_round(&f.updates, w, &config, &f.arch, &f.metaval).unwrap();
        let after = backward(&out.model, &f.arch, f.metaval.features(), f.metaval.labels()).unwrap().0;
        after <= before + 1e-9
    })
}

#[test]
fn one_meta_step_does_not_increase_validation_loss() {
    for seed in 0..20 {
        let f = fixture(seed, vec![4, 3, 2], 4);
        let uniform = ImportanceWeights::uniform(4, StabilizationMode::Renormalize).unwrap();
        assert!(descends(&f, &uniform, 1e-3), "renormalize, seed {seed}");

        let mut rng = derived_rng(seed, &[7]);
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let k: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let softmax = ImportanceWeights::from_k(k, StabilizationMode::Softmax { temperature: 0.7 }).unwrap();
        assert!(descends(&f, &softmax, 1e-3), "softmax, seed {seed}");
    }
}

#[test]
fn meta_gradient_matches_central_differences_on_deeper_net() {
    let f = fixture(3, vec![5, 6, 4, 3], 5);
    let w = ImportanceWeights::from_k(vec![0.1, 0.3, 0.2, 0.15, 0.25], StabilizationMode::Renormalize).unwrap();
    let agg = aggregate_weighted(&f.updates, &w).unwrap();
    let (_, g) = meta_gradient(&f.updates, &agg, &f.arch, &f.metaval).unwrap();
    let h = 1e-6;
    for i in 0..5 {
        let shifted = |delta: f64| {
            let mut p = vec![0.0; agg.len()];
            for (j, u) in f.updates.iter().enumerate() {
                let kj = w.k()[j] + if i == j { delta } else { 0.0 };
                for (acc, v) in p.iter_mut().zip(u.params.iter()) {
                    *acc += kj * v;
                }
            }
            backward(&ParamVector::new(p), &f.arch, f.metaval.features(), f.metaval.labels()).unwrap().0
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let rel = (fd - g.g[i]).abs() / fd.abs().max(g.g[i].abs()).max(1e-12);
        assert!(rel <= 1e-4, "client {i}: analytic {} numeric {fd}", g.g[i]);
    }
}
