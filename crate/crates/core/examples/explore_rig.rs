//! Brute-force feasibility check for a rigged benchmark configuration.
//!
//! ```text
//! cargo run --release -p alcd --example explore_rig -- CONFIG [path=json ...] [--grid]
//! ```
//!
//! `path` is a dotted key into the experiment config; keys under `task.`
//! patch the task spec instead. Everything runs in memory. Prints the test
//! F1 of greedy and the four ALCD variants, the hallucination rates, and
//! optionally the validation grid.

use std::path::PathBuf;
use std::time::Instant;

use alcd::bench::TaskSpec;
use alcd::decoding::Strategy;
use alcd::harness::{self, ExperimentConfig};
use serde_json::Value;

fn set(root: &mut Value, path: &str, v: Value) {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for k in &keys[..keys.len() - 1] {
        if cur.get(k).map_or(true, |x| x.is_null()) {
            cur[*k] = Value::Object(Default::default());
        }
        cur = cur.get_mut(*k).unwrap();
    }
    cur[keys[keys.len() - 1]] = v;
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = PathBuf::from(args.first().expect("config path"));
    let cfg0 = ExperimentConfig::load(&path)?;
    let mut cfg_json = serde_json::to_value(&cfg0)?;
    let mut task_json = serde_json::to_value(TaskSpec::from_file(&cfg0.task)?)?;
    let mut grid = false;
    for a in &args[1..] {
        if a == "--grid" {
            grid = true;
            continue;
        }
        let (k, v) = a.split_once('=').expect("key=value");
        let v: Value = serde_json::from_str(v).unwrap_or(Value::String(v.to_string()));
        match k.strip_prefix("task.") {
            Some(t) => set(&mut task_json, t, v),
            None => set(&mut cfg_json, k, v),
        }
    }
    let dir = tempfile::tempdir()?;
    let task_path = dir.path().join("task.json");
    std::fs::write(&task_path, serde_json::to_string(&task_json)?)?;
    let mut cfg: ExperimentConfig = serde_json::from_value(cfg_json)?;
    cfg.task = task_path;

    let t0 = Instant::now();
    let data = harness::generate(&cfg)?;
    let run = harness::train_models(&cfg, &data)?;
    let ck = harness::Checkpoints::from_run(&run)?;
    let t_train = t0.elapsed().as_secs_f64();
    let sources = ck.sources(data.vocab.clone())?;
    let seed = cfg.seeds().decode;
    let run = |s: Strategy| harness::run_strategy(&sources, &data, &data.test, s, cfg.decode.max_length, seed).map(|r| r.report);
    let greedy = run(Strategy::Greedy)?;
    let (alpha, beta, marg) = if grid {
        let g = harness::grid_search(&cfg, &data, &ck)?;
        for a in &cfg.alpha_grid {
            let row: Vec<String> = g
                .points
                .iter()
                .filter(|x| x.alpha == *a)
                .map(|x| format!("{:.2}", 100.0 * x.f1))
                .collect();
            eprintln!("  a={a:<5} {}", row.join(" "));
        }
        let am = harness::marginal(&g.points, true);
        let bm = harness::marginal(&g.points, false);
        let top = |m: &[(f64, f64)]| m.iter().fold(m[0], |b, x| if x.1 > b.1 { *x } else { b }).0;
        (g.best.alpha, g.best.beta, format!(" argmax_a={} argmax_b={}", top(&am), top(&bm)))
    } else {
        (cfg.decode.params.alpha, cfg.decode.params.beta, String::new())
    };
    let rows = harness::ablation(&cfg, &data, &ck, alpha, beta)?;
    let f = |r: &harness::StrategyReport| 100.0 * r.eval.f1;
    let (a, nc, as_, ws) = (f(&rows[0]), f(&rows[1]), f(&rows[2]), f(&rows[3]));
    let g = f(&greedy);
    let (ge, ae) = (&greedy.eval, &rows[0].eval);
    let hall = ae.identification_not_exist <= ge.identification_not_exist
        && ae.identification_pred_wrong <= ge.identification_pred_wrong
        && ae.classification_pred_wrong <= ge.classification_pred_wrong;
    let ok7 = a >= g + 2.0 && a >= nc && nc >= ws && a >= as_;
    let ok8 = !grid || (alpha != 0.5 && beta != 0.65);
    println!(
        "{} a={alpha} b={beta} greedy={g:.2} alcd={a:.2} nc={nc:.2} as={as_:.2} ws={ws:.2} hall=[{:.3},{:.3},{:.3}]vs[{:.3},{:.3},{:.3}]{marg} c7={ok7} c8={ok8} c9={hall} t={:.0}s",
        if ok7 && ok8 && hall { "PASS" } else { "FAIL" },
        ae.identification_not_exist,
        ae.identification_pred_wrong,
        ae.classification_pred_wrong,
        ge.identification_not_exist,
        ge.identification_pred_wrong,
        ge.classification_pred_wrong,
        t0.elapsed().as_secs_f64()
    );
    let _ = t_train;
    Ok(())
}
