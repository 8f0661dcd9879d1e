//! Acceptance criteria AC1-AC10, one PASS/FAIL line each. Exits nonzero if
//! any criterion fails.

use std::path::Path;
use std::time::Instant;

use leankan::gradcheck::{run_gradcheck, GradCheckSizes};
use leankan::kanode::{
    discrete_mass, generate_schrodinger_data, kanode_loss_and_grad, kanode_predict, LotkaVolterra, SchrodingerConfig,
};
use leankan::{Layer, LayerKind, LayerSpec, Network, NormalizerKind, OdeData};
use leankan_cli::audit::published_rows;
use leankan_cli::config::{Architecture, Experiment, RunConfig};
use leankan_cli::experiments::SeedRun;
use leankan_cli::record::median;
use leankan_cli::runner::{run_experiment, run_sweep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn ac1() -> Outcome {
    let rows = published_rows();
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| !r.matches())
        .map(|r| format!("{}: {} act / {} params", r.label, r.activations, r.parameters))
        .collect();
    Ok((bad.is_empty(), format!("{} published counts, mismatches: {bad:?}", rows.len())))
}

fn ac2() -> Outcome {
    let report = run_gradcheck(0, GradCheckSizes::default(), false).map_err(|e| e.to_string())?;
    let names: Vec<&str> = report.cases.iter().map(|c| c.name.as_str()).collect();
    let covers = |s: &str| names.iter().any(|n| n.contains(s));
    let coverage = ["layer add", "layer mult", "layer lean", "net [", "ode "].iter().all(|s| covers(s));
    let ok = report.passed() && report.cases.len() >= 20 && coverage;
    Ok((
        ok,
        format!("{} cases, worst rel err {:.2e} (< 1e-5), coverage {coverage}", report.cases.len(), report.worst()),
    ))
}

fn ac3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n_in, n_out, grid) = (4, 3, 5);
    let add = LayerSpec::new(LayerKind::Add, n_in, n_out, grid, NormalizerKind::Tanh, true).unwrap();
    let lean = LayerSpec { kind: LayerKind::Lean { n_mu: 0 }, ..add.clone() };
    let mult = LayerSpec { kind: LayerKind::Mult { n_a: n_out, k: 2 }, ..add.clone() };
    let add_layer = Layer::random(add, &mut rng);
    let w = add_layer.weights().to_vec();
    let lean_layer = Layer::from_weights(lean, w.clone()).map_err(|e| e.to_string())?;
    let mult_layer = Layer::from_weights(mult, w).map_err(|e| e.to_string())?;
    let mut mismatches = 0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let z = add_layer.forward(&x).unwrap().0;
        if lean_layer.forward(&x).unwrap().0 != z || mult_layer.forward(&x).unwrap().0 != z {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("100 inputs, {mismatches} differ from Add")))
}

fn final_per_output(run: &SeedRun) -> Vec<f64> {
    run.trace.last().unwrap().train_per_output.clone()
}

fn group_mse(per_output: &[f64], outputs: &[usize]) -> f64 {
    outputs.iter().map(|&o| per_output[o - 1]).sum::<f64>() / outputs.len() as f64
}

fn med(values: impl IntoIterator<Item = f64>) -> f64 {
    median(&values.into_iter().collect::<Vec<_>>()).unwrap_or(f64::INFINITY)
}

fn train(tmp: &Path, name: &str, mut cfg: RunConfig) -> Result<Vec<SeedRun>, String> {
    cfg.output_dir = tmp.join(name);
    run_experiment(&cfg, 0).map(|o| o.runs).map_err(|e| format!("{name}: {e}"))
}

fn ac4(tmp: &Path) -> Outcome {
    let mut cfg = RunConfig::defaults(Experiment::Toy);
    cfg.seeds = (0..5).collect();
    cfg.architecture = Some(Architecture::Lean { n_mu: 2 });
    let lean = train(tmp, "ac4-lean", cfg.clone())?;
    cfg.architecture = Some(Architecture::Mult { n_a: 2, k: 2 });
    let mult = train(tmp, "ac4-mult", cfg)?;

    let lean_good = med(lean.iter().map(|r| group_mse(&final_per_output(r), &[1, 3])));
    let lean_bad = med(lean.iter().map(|r| group_mse(&final_per_output(r), &[2, 4])));
    let mult_good = med(mult.iter().map(|r| group_mse(&final_per_output(r), &[3, 4])));
    let mult_bad = med(mult.iter().map(|r| group_mse(&final_per_output(r), &[1, 2])));
    let checks = [
        lean_good < 1e-4,
        lean_bad > 10.0 * lean_good,
        mult_good < 1e-4,
        mult_bad > 10.0 * mult_good,
        lean_good * 2.0 < mult_good,
    ];
    Ok((
        checks.iter().all(|&c| c),
        format!(
            "lean {{1,3}} {lean_good:.2e} {{2,4}} {lean_bad:.2e}; mult {{3,4}} {mult_good:.2e} {{1,2}} {mult_bad:.2e}; checks {checks:?}"
        ),
    ))
}

fn final_train(runs: &[SeedRun]) -> f64 {
    med(runs.iter().map(|r| r.trace.last().unwrap().train_mse))
}

fn final_test(runs: &[SeedRun]) -> f64 {
    med(runs.iter().map(|r| r.trace.last().unwrap().test_mse))
}

fn ac5(tmp: &Path) -> Outcome {
    let mut cfg = RunConfig::defaults(Experiment::LvRapid);
    cfg.seeds = (0..5).collect();
    cfg.grid = 4;
    cfg.epochs = 7000;
    cfg.lr = 5e-3;
    cfg.architecture = Some(Architecture::LeanSecond { hidden: 5, n_mu: 3 });
    let lean = train(tmp, "ac5-lean", cfg.clone())?;
    cfg.architecture = Some(Architecture::MultFirst { hidden: 4, n_a: 2, k: 2 });
    let mult = train(tmp, "ac5-mult", cfg)?;
    let n = (lean[0].network.total_parameters(), mult[0].network.total_parameters());
    let (lt, mt) = (final_train(&lean), final_train(&mult));
    let (ls, ms) = (final_test(&lean), final_test(&mult));
    let checks = [n == (100, 100), lt < 1e-2, lt < mt, ls < ms];
    Ok((
        checks.iter().all(|&c| c),
        format!("params {n:?}; train lean {lt:.2e} mult {mt:.2e}; test lean {ls:.2e} mult {ms:.2e}; checks {checks:?}"),
    ))
}

fn ac6() -> Outcome {
    let lv = LotkaVolterra::default();
    let traj = lv.integrate(&[1.0, 1.0], (0.0, 3.5), 0.001).map_err(|e| e.to_string())?;
    let v0 = lv.conserved(&traj.states[0]);
    let lv_drift = traj
        .states
        .iter()
        .map(|u| ((lv.conserved(u) - v0) / v0).abs())
        .fold(0.0, f64::max);

    let cfg = SchrodingerConfig::default();
    let nls = generate_schrodinger_data(&cfg).map_err(|e| e.to_string())?;
    let m0 = discrete_mass(&nls.states[0], cfg.dx());
    let mass_drift = nls
        .states
        .iter()
        .map(|u| ((discrete_mass(u, cfg.dx()) - m0) / m0).abs())
        .fold(0.0, f64::max);
    let t_end = *nls.times.last().unwrap();
    Ok((
        lv_drift < 1e-6 && mass_drift < 1e-3 && cfg.n_x == 33,
        format!("LV drift {lv_drift:.2e} (< 1e-6); NLS mass drift {mass_drift:.2e} (< 1e-3) to t = {t_end:.2}"),
    ))
}

fn ac7() -> Outcome {
    let mut worst_loss: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut cases = 0;
    for (seed, (first, second)) in [
        (LayerKind::Add, LayerKind::Add),
        (LayerKind::Mult { n_a: 2, k: 2 }, LayerKind::Add),
        (LayerKind::Add, LayerKind::Lean { n_mu: 2 }),
    ]
    .into_iter()
    .enumerate()
    {
        let specs = vec![
            LayerSpec::new(first, 2, 4, 5, NormalizerKind::Tanh, true).unwrap(),
            LayerSpec::new(second, 4, 2, 5, NormalizerKind::Tanh, true).unwrap(),
        ];
        let net = Network::random(specs, 100 + seed as u64).map_err(|e| e.to_string())?;
        for times in [
            (1..=20).map(|i| i as f64 * 0.1).collect::<Vec<_>>(),
            vec![0.03, 0.41, 0.77, 1.26, 1.9],
        ] {
            let probe = OdeData {
                t0: 0.0,
                u0: vec![1.0, 0.5],
                states: vec![vec![0.0; 2]; times.len()],
                times,
            };
            let states = kanode_predict(&net, &probe, 0.1).map_err(|e| e.to_string())?;
            let data = OdeData { states, ..probe };
            let (loss, grad) = kanode_loss_and_grad(&net, &data, 0.1).map_err(|e| e.to_string())?;
            worst_loss = worst_loss.max(loss);
            worst_grad = worst_grad.max(grad.norm());
            cases += 1;
        }
    }
    Ok((
        worst_loss == 0.0 && worst_grad < 1e-12,
        format!("{cases} cases, max loss {worst_loss:e}, max grad norm {worst_grad:.1e} (< 1e-12)"),
    ))
}

fn ac8(tmp: &Path) -> Outcome {
    let mut cfg = RunConfig::defaults(Experiment::LvSweep);
    cfg.seeds = vec![0, 1, 2];
    cfg.epochs = 20_000;
    cfg.output_dir = tmp.join("ac8");
    let out = run_sweep(&cfg, 0).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut rows = Vec::new();
    for pair in out.rows.chunks(2) {
        let (mult, lean) = (&pair[0], &pair[1]);
        if lean.final_train_mse <= mult.final_train_mse {
            wins += 1;
        }
        rows.push(format!(
            "{}/{}: lean {:.2e} mult {:.2e}",
            lean.n_param, mult.n_param, lean.final_train_mse, mult.final_train_mse
        ));
    }
    Ok((wins >= 3 && out.rows.len() == 8, format!("lean <= mult in {wins}/4 rows; {}", rows.join("; "))))
}

fn ac9(tmp: &Path) -> Outcome {
    let mut cfg = RunConfig::defaults(Experiment::LvNoisy);
    cfg.seeds = vec![0, 1, 2];
    cfg.architecture = match cfg.architecture {
        Some(Architecture::LeanSecond { n_mu, .. }) => Some(Architecture::LeanSecond { hidden: 5, n_mu }),
        _ => return Err("noisy LV default is not lean-second".into()),
    };
    cfg.grid = 10;
    cfg.epochs = 10_000;
    cfg.noise = 0.05;
    cfg.n_samples = 35;
    let runs = train(tmp, "ac9", cfg)?;
    let test = final_test(&runs);
    Ok((test < 5e-2, format!("3 seeds completed; median noise-free test rollout mse {test:.2e} (< 5e-2)")))
}

fn ac10(tmp: &Path) -> Outcome {
    let mut cfg = RunConfig::defaults(Experiment::Schrodinger);
    cfg.n_x = 33;
    cfg.epochs = 2000;
    let hidden = match cfg.architecture {
        Some(Architecture::LeanSecond { hidden, .. }) => hidden,
        _ => return Err("schrodinger default is not lean-second".into()),
    };
    let lean = train(tmp, "ac10-lean", cfg.clone())?;
    cfg.architecture = Some(Architecture::AddAdd { hidden });
    let add = train(tmp, "ac10-add", cfg)?;
    let at_epoch_1 = lean[0].trace.records.iter().find(|r| r.epoch == 1).map(|r| r.train_mse);
    let at_epoch_1 = at_epoch_1.ok_or("no epoch-1 record")?;
    let (lf, af) = (final_train(&lean), final_train(&add));
    let drop = at_epoch_1 / lf;
    let checks = [drop >= 10.0, lf * 2.0 < af];
    Ok((
        checks.iter().all(|&c| c),
        format!(
            "66-dim; lean epoch 1 {at_epoch_1:.2e} -> {lf:.2e} ({drop:.1}x); add final {af:.2e} ({:.1}x lean); checks {checks:?}",
            af / lf
        ),
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let tmp = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("AC1 parameter counts", Box::new(ac1)),
        ("AC2 gradient check", Box::new(ac2)),
        ("AC3 reduction identities", Box::new(ac3)),
        ("AC4 toy expressivity", Box::new(|| ac4(tmp))),
        ("AC5 LV rapid", Box::new(|| ac5(tmp))),
        ("AC6 generator physics", Box::new(ac6)),
        ("AC7 KAN-ODE self-consistency", Box::new(ac7)),
        ("AC8 sweep ordering", Box::new(|| ac8(tmp))),
        ("AC9 noisy LV", Box::new(|| ac9(tmp))),
        ("AC10 Schrodinger", Box::new(|| ac10(tmp))),
    ];
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let mut failed = 0;
    for (name, f) in &criteria {
        if let Some(only) = &only {
            let id = name.split_whitespace().next().unwrap();
            if !only.split(',').any(|o| o == id) {
                continue;
            }
        }
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.1} s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
