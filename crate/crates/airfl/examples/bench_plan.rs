use airfl::config::ExperimentConfig;
use airfl::experiment::run_experiment;

fn cfg(seed: u64, scheme: &str) -> ExperimentConfig {
    let text = format!(
        r#"
seed = {seed}
scheme = "{scheme}"
rounds = 200
eval_every = 50

[fleet]
devices = 20
clusters = 4
byzantine = 3

[task]
kind = "image"
train = 2000
test = 1000
batch = 32

[attack]
kind = "sign_flip"

[channel]
sigma2 = 1e-6

[defense]
m0 = 20

[training]
eta = 0.1
g_bound = 5.0

[weighting]
v = 1e5
"#
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

fn main() {
    let mut pass = 0;
    for seed in 1u64..=10 {
        let mut acc = std::collections::HashMap::new();
        for scheme in ["fedsac", "random_clustering", "non_robust"] {
            let c = cfg(seed, scheme);
            let out = run_experiment(&c).unwrap();
            acc.insert(scheme, out.summary.final_accuracy.unwrap_or(f64::NAN));
        }
        let f = acc["fedsac"];
        let r = acc["random_clustering"];
        let n = acc["non_robust"];
        let ok = f >= r + 0.02 && f >= n + 0.10;
        pass += ok as u32;
        println!(
            "seed {seed}: fedsac {f:.3} random {r:.3} non_robust {n:.3} -> {}",
            if ok { "pass" } else { "FAIL" }
        );
    }
    println!("paired pass: {pass}/10");
}
