//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 7-10 run the shipped rigged experiment end to end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use alcd::bench::Split;
use alcd::decoding::{
    alcd_combine, alcd_next_token, apply_intersection_constraint, decode, head_set, jsd, AlcdParams, DecodeConfig,
    Sources, Strategy,
};
use alcd::harness::{self, ExperimentConfig, GridPoint, StrategyReport};
use alcd::logits::{softmax, DecodeContext, LogitSource, LogitVector, ModelTriple, ProbVector, TabularSource};
use alcd::roles::{build_mask, next_token_role, MaskMode, TokenRole};
use alcd::tinylm::{TinyLm, TinyLmDims};
use alcd::train::{masked_nll, masked_nll_against, masked_nll_grad, TrainExample};
use alcd::vocab::Vocab;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn small_vocab() -> Vocab {
    Vocab::build("ab :\n".chars()).unwrap()
}

fn random_text(v: &Vocab, rng: &mut ChaCha8Rng, max: usize) -> Vec<usize> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen_range(0..v.eos_id())).collect()
}

fn random_ctx(v: &Vocab, rng: &mut ChaCha8Rng) -> DecodeContext {
    DecodeContext::new(random_text(v, rng, 4), random_text(v, rng, 6), Vec::new())
}

fn random_tinylm(v: &Vocab, rng: &mut ChaCha8Rng) -> TinyLm {
    let dims = TinyLmDims {
        vocab_size: v.len(),
        context_window: rng.gen_range(2..=8),
        embedding_dim: rng.gen_range(2..=4),
        hidden_dim: rng.gen_range(2..=8),
    };
    let mut m = TinyLm::init(v, dims, rng.gen()).unwrap();
    let s = rng.gen_range(1.0..6.0);
    m.params_mut().scale(s);
    m
}

fn random_logits(n: usize, rng: &mut ChaCha8Rng) -> LogitVector {
    LogitVector((0..n).map(|_| rng.gen_range(-4.0..4.0)).collect())
}

fn random_tabular(v: &Vocab, rng: &mut ChaCha8Rng) -> TabularSource {
    let n = v.len();
    let mut s = TabularSource::new(random_logits(n, rng)).unwrap();
    for _ in 0..rng.gen_range(0..12) {
        let suffix = random_text(v, rng, 3);
        s = s.with_rule(suffix, random_logits(n, rng)).unwrap();
    }
    s
}

fn random_source(v: &Vocab, rng: &mut ChaCha8Rng, tabular: bool) -> Arc<dyn LogitSource> {
    if tabular {
        Arc::new(random_tabular(v, rng))
    } else {
        Arc::new(random_tinylm(v, rng))
    }
}

fn greedy(src: &Arc<dyn LogitSource>, v: &Arc<Vocab>, ctx: &DecodeContext, len: usize) -> Vec<usize> {
    let triple = ModelTriple::uniform(v.clone(), src.clone()).unwrap();
    decode(&Sources::new(triple), ctx, &DecodeConfig::new(Strategy::Greedy, len))
        .unwrap()
        .tokens
}

fn alcd_decode(triple: ModelTriple, ctx: &DecodeContext, p: AlcdParams, len: usize) -> Vec<usize> {
    decode(&Sources::new(triple), ctx, &DecodeConfig::new(Strategy::Alcd(p), len))
        .unwrap()
        .tokens
}

fn c1_reduction() -> Outcome {
    let v = Arc::new(small_vocab());
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut models = 0;
    for i in 0..120 {
        let tab = i % 2 == 0;
        let nl = random_source(&v, &mut rng, tab);
        let ctx = random_ctx(&v, &mut rng);
        let expected = greedy(&nl, &v, &ctx, 64);

        let cl = random_source(&v, &mut rng, tab);
        let id = random_source(&v, &mut rng, !tab);
        let triple = ModelTriple::new(v.clone(), nl.clone(), cl, id).unwrap();
        let zero = AlcdParams {
            alpha: 0.0,
            beta: rng.gen_range(0.0..=1.0),
            constraint_enabled: true,
        };
        check(alcd_decode(triple, &ctx, zero, 64) == expected, format!("alpha=0 differs on model {i}"))?;

        let same = ModelTriple::uniform(v.clone(), nl.clone()).unwrap();
        let p = AlcdParams {
            alpha: rng.gen_range(0.01..2.0),
            beta: rng.gen_range(0.0..=1.0),
            constraint_enabled: rng.gen(),
        };
        check(alcd_decode(same, &ctx, p, 64) == expected, format!("identical triple differs on model {i}"))?;
        models += 1;
    }
    Ok(format!("{models} models, both reductions exact"))
}

fn random_dist(n: usize, rng: &mut ChaCha8Rng, zeros: bool) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|_| if zeros && rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0f64).powi(3) })
        .collect();
    if x.iter().sum::<f64>() == 0.0 {
        x[rng.gen_range(0..n)] = 1.0;
    }
    let s: f64 = x.iter().sum();
    x.iter().map(|a| a / s).collect()
}

fn c2_jsd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let ln2 = std::f64::consts::LN_2;
    let mut worst_sym: f64 = 0.0;
    for i in 0..10_000 {
        let n = rng.gen_range(2..=12);
        let zeros = i % 3 == 0;
        let p = ProbVector(random_dist(n, &mut rng, zeros));
        let q = ProbVector(random_dist(n, &mut rng, zeros));
        let pq = jsd(&p, &q).map_err(|e| e.to_string())?;
        let qp = jsd(&q, &p).map_err(|e| e.to_string())?;
        worst_sym = worst_sym.max((pq - qp).abs());
        check((pq - qp).abs() <= 1e-12, format!("asymmetric at pair {i}"))?;
        check(jsd(&p, &p).unwrap() <= 1e-12, format!("jsd(p,p) > 0 at pair {i}"))?;
        check((0.0..=ln2 + 1e-12).contains(&pq), format!("out of range at pair {i}: {pq}"))?;
        // disjoint supports
        let split = rng.gen_range(1..n);
        let mut a = random_dist(split, &mut rng, false);
        a.resize(n, 0.0);
        let mut b = vec![0.0; split];
        b.extend(random_dist(n - split, &mut rng, false));
        let d = jsd(&ProbVector(a), &ProbVector(b)).unwrap();
        check((d - ln2).abs() <= 1e-9, format!("disjoint pair {i} gave {d}"))?;
    }
    Ok(format!("10000 pairs, worst asymmetry {worst_sym:e}"))
}

/// Random target in the `mention: label\n` grammar, sentinel-terminated.
fn random_target(v: &Vocab, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let a = v.id('a').unwrap();
    let b = v.id('b').unwrap();
    let sp = v.id(' ').unwrap();
    let mut t = Vec::new();
    for _ in 0..rng.gen_range(0..4) {
        for _ in 0..rng.gen_range(1..4) {
            t.push(if rng.gen() { a } else { b });
        }
        t.push(v.colon_id());
        t.push(sp);
        for _ in 0..rng.gen_range(1..4) {
            t.push(if rng.gen() { a } else { b });
        }
        t.push(v.newline_id());
    }
    t.push(v.eos_id());
    t
}

fn c3_masks() -> Outcome {
    let v = small_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let model = random_tinylm(&v, &mut rng);
    for i in 0..1000 {
        let target = random_target(&v, &mut rng);
        let cls = build_mask(&target, &v, MaskMode::MaskClassification);
        let ide = build_mask(&target, &v, MaskMode::MaskIdentification);
        check(cls.positions.is_disjoint(&ide.positions), format!("masks overlap on target {i}"))?;
        check(cls.len() + ide.len() == target.len(), format!("masks do not cover target {i}"))?;
        for mode in [MaskMode::MaskClassification, MaskMode::MaskIdentification] {
            let ex = TrainExample::new(random_text(&v, &mut rng, 3), random_text(&v, &mut rng, 5), target.clone())
                .with_mask(&v, mode);
            let base = masked_nll(&model, &ex);
            let mut gold = target.clone();
            for &t in &ex.mask.positions {
                gold[t] = rng.gen_range(0..v.len());
            }
            let perturbed = masked_nll_against(&model, &ex, &gold);
            check(base.to_bits() == perturbed.to_bits(), format!("loss moved under masked perturbation, target {i}"))?;
        }
    }
    Ok("1000 targets partitioned, loss bitwise invariant".into())
}

fn c4_gradients() -> Outcome {
    let v = small_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for m in 0..20 {
        let dims = TinyLmDims {
            vocab_size: v.len(),
            context_window: rng.gen_range(1..=3),
            embedding_dim: rng.gen_range(1..=3),
            hidden_dim: rng.gen_range(1..=4),
        };
        let mut model = TinyLm::init(&v, dims, rng.gen()).unwrap();
        let modes = [MaskMode::NoMask, MaskMode::MaskClassification, MaskMode::MaskIdentification];
        let ex = TrainExample::new(random_text(&v, &mut rng, 2), random_text(&v, &mut rng, 3), random_target(&v, &mut rng))
            .with_mask(&v, modes[m % 3]);
        let mut grad = alcd::tinylm::Params::zeros(&dims);
        masked_nll_grad(&model, &ex, 1.0, &mut grad);
        let h = 1e-5;
        for i in 0..grad.len() {
            let x = model.params().get(i);
            model.params_mut().set(i, x + h);
            let up = masked_nll(&model, &ex);
            model.params_mut().set(i, x - h);
            let down = masked_nll(&model, &ex);
            model.params_mut().set(i, x);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.get(i);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            check(rel <= 1e-4, format!("model {m} param {i}: analytic {analytic} numeric {numeric}"))?;
        }
    }
    Ok(format!("20 models, worst relative error {worst:.2e}"))
}

/// Exhaustive argmax over every sequence of length <= `len`.
fn brute_force(src: &dyn LogitSource, ctx: &DecodeContext, eos: usize, len: usize) -> (Vec<usize>, f64) {
    fn rec(src: &dyn LogitSource, ctx: &DecodeContext, eos: usize, left: usize, seq: &mut Vec<usize>, score: f64, best: &mut (Vec<usize>, f64)) {
        if seq.last() == Some(&eos) || left == 0 {
            if score > best.1 {
                *best = (seq.clone(), score);
            }
            return;
        }
        let lp = alcd::logits::log_softmax(&src.next_logits(&ctx.with_prefix(seq.clone()))).unwrap();
        for (v, &x) in lp.iter().enumerate() {
            seq.push(v);
            rec(src, ctx, eos, left - 1, seq, score + x, best);
            seq.pop();
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    rec(src, ctx, eos, len, &mut Vec::new(), 0.0, &mut best);
    best
}

fn c5_decoders() -> Outcome {
    let v = Arc::new(small_vocab());
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for i in 0..200 {
        let src = random_source(&v, &mut rng, i % 2 == 0);
        let ctx = random_ctx(&v, &mut rng);
        let sources = Sources::new(ModelTriple::uniform(v.clone(), src.clone()).unwrap());
        let b1 = decode(&sources, &ctx, &DecodeConfig::new(Strategy::Beam { width: 1 }, 32)).unwrap();
        check(b1.tokens == greedy(&src, &v, &ctx, 32), format!("beam-1 differs from greedy on source {i}"))?;
    }
    let mut instances = 0;
    for sz in 3..=6 {
        let alphabet: String = ['\n', ':', 'a', 'b', 'c'][..sz - 1].iter().collect();
        let v = Arc::new(Vocab::build(alphabet.chars()).unwrap());
        for len in 1..=4 {
            for _ in 0..6 {
                let src = random_source(&v, &mut rng, instances % 2 == 0);
                let ctx = random_ctx(&v, &mut rng);
                let width = v.len().pow(len as u32);
                let sources = Sources::new(ModelTriple::uniform(v.clone(), src.clone()).unwrap());
                let got = decode(&sources, &ctx, &DecodeConfig::new(Strategy::Beam { width }, len)).unwrap();
                let (want, _) = brute_force(&*src, &ctx, v.eos_id(), len);
                check(got.tokens == want, format!("exhaustive beam |V|={} L={len} differs", v.len()))?;
                instances += 1;
            }
        }
    }
    Ok(format!("200 beam-1 sources, {instances} exhaustive instances"))
}

fn oracle_head(l: &LogitVector, beta: f64) -> Vec<usize> {
    let p = softmax(l).unwrap().0;
    let max = p.iter().copied().fold(0.0, f64::max);
    (0..p.len()).filter(|&i| p[i] > 0.0 && p[i] >= beta * max).collect()
}

fn c6_constraint() -> Outcome {
    let v = Arc::new(small_vocab());
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut steps = 0;
    let mut fallbacks = 0;
    let colon = v.colon_id();
    let a = v.id('a').unwrap();
    while steps < 1000 {
        let tab = steps % 2 == 0;
        let (nl, cl, id) = if steps % 3 == 0 {
            // specialists close to the normal model, so intersections are nonempty
            let base = random_logits(v.len(), &mut rng);
            let mut near = |scale: f64| -> Arc<dyn LogitSource> {
                let l = base.0.iter().map(|x| x + rng.gen_range(-scale..=scale)).collect();
                Arc::new(TabularSource::new(LogitVector(l)).unwrap())
            };
            (near(0.0), near(1.0), near(1.0))
        } else {
            (
                random_source(&v, &mut rng, tab),
                random_source(&v, &mut rng, tab),
                random_source(&v, &mut rng, !tab),
            )
        };
        let triple = ModelTriple::new(v.clone(), nl.clone(), cl.clone(), id.clone()).unwrap();
        let mut ctx = random_ctx(&v, &mut rng);
        ctx.prefix = if rng.gen() { vec![a, colon] } else { vec![a] };
        let role = next_token_role(&ctx.prefix, &v);
        check(role != TokenRole::Other, "context must be Cls or Ide")?;
        let beta = rng.gen_range(0.0..=1.0);
        let p = AlcdParams {
            alpha: rng.gen_range(0.01..1.0),
            beta,
            constraint_enabled: true,
        };
        let (l_nl, l_cl, l_id) = (nl.next_logits(&ctx), cl.next_logits(&ctx), id.next_logits(&ctx));
        let hn = oracle_head(&l_nl, beta);
        let hc = oracle_head(&l_cl, beta);
        let hi = oracle_head(&l_id, beta);
        let inter: Vec<usize> = hn.iter().copied().filter(|t| hc.contains(t) && hi.contains(t)).collect();
        let allowed = if inter.is_empty() {
            fallbacks += 1;
            hn.clone()
        } else {
            inter
        };
        let combined = alcd_combine(&l_nl, &l_cl, &l_id, role, p.alpha).unwrap();
        let (adj, _) = apply_intersection_constraint(&combined, &l_nl, &l_cl, &l_id, beta).unwrap();
        for (t, &x) in adj.0.iter().enumerate() {
            if allowed.contains(&t) {
                check(x == combined.0[t], format!("allowed token {t} altered at step {steps}"))?;
            } else {
                check(x == f64::NEG_INFINITY, format!("excluded token {t} finite at step {steps}"))?;
            }
        }
        let (tok, _) = alcd_next_token(&triple, &ctx, &p).unwrap();
        check(allowed.contains(&tok), format!("chosen token {tok} outside allowed set at step {steps}"))?;
        // antitone in beta, argmax retained
        let argmax = l_nl.argmax().unwrap();
        let mut prev: Option<Vec<usize>> = None;
        for k in 0..=10 {
            let h = head_set(&l_nl, k as f64 / 10.0).unwrap().members;
            check(h.contains(&argmax), format!("argmax dropped at beta {}", k as f64 / 10.0))?;
            if let Some(p) = &prev {
                check(h.iter().all(|t| p.contains(t)), "head set grew with beta")?;
            }
            prev = Some(h);
        }
        steps += 1;
    }
    Ok(format!("{steps} steps, {fallbacks} fallbacks"))
}

fn rigged_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/rigged.json")
}

struct Pipeline {
    greedy: StrategyReport,
    ablation: Vec<StrategyReport>,
    grid: Vec<GridPoint>,
    sweep: Vec<harness::SweepPoint>,
    hashes: BTreeMap<String, String>,
    elapsed: Duration,
}

fn run_pipeline(out: &Path) -> Result<Pipeline, String> {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::load(&rigged_config()).map_err(|e| e.to_string())?;
    cfg.out_dir = out.to_path_buf();
    let err = |e: alcd::Error| e.to_string();
    let mut manifests = vec![harness::cmd_gen(&cfg).map_err(err)?, harness::cmd_train(&cfg).map_err(err)?];
    let (m, grid) = harness::cmd_grid(&cfg, true).map_err(err)?;
    manifests.push(m);
    let (m, ablation) = harness::cmd_ablate(&cfg).map_err(err)?;
    manifests.push(m);
    let (m, mut evals) = harness::cmd_eval(&cfg, &["greedy".to_string()], Split::Test).map_err(err)?;
    manifests.push(m);
    let (m, sweep) = harness::cmd_sweep_steps(&cfg, true).map_err(err)?;
    manifests.push(m);
    let mut hashes = BTreeMap::new();
    for m in &manifests {
        m.verify().map_err(err)?;
        for a in &m.artifacts {
            let rel = a.path.strip_prefix(out).unwrap_or(&a.path).display().to_string();
            hashes.insert(rel, a.sha256.clone());
        }
    }
    Ok(Pipeline {
        greedy: evals.remove(0),
        ablation,
        grid: grid.points,
        sweep,
        hashes,
        elapsed: start.elapsed(),
    })
}

/// Argmax of a marginal curve, ties to the smaller grid value.
fn curve_argmax(curve: &[(f64, f64)]) -> f64 {
    let mut best = curve[0];
    for &(k, f) in curve {
        if f > best.1 || (f == best.1 && k < best.0) {
            best = (k, f);
        }
    }
    best.0
}

fn f1(r: &StrategyReport) -> f64 {
    100.0 * r.eval.f1
}

fn row<'a>(rows: &'a [StrategyReport], id: &str) -> &'a StrategyReport {
    rows.iter().find(|r| r.strategy.id() == id).expect("ablation row")
}

fn c7_ordering(p: &Pipeline) -> Outcome {
    let g = f1(&p.greedy);
    let a = f1(row(&p.ablation, "alcd"));
    let nc = f1(row(&p.ablation, "no-constraint"));
    let as_ = f1(row(&p.ablation, "alternate-sum"));
    let ws = f1(row(&p.ablation, "weighted-sum"));
    let msg = format!("greedy {g:.2}, alcd {a:.2}, no-constraint {nc:.2}, alternate-sum {as_:.2}, weighted-sum {ws:.2}");
    check(p.greedy.eval.records == 200, "test split must hold 200 records")?;
    check(a >= g + 2.0, format!("alcd < greedy + 2: {msg}"))?;
    check(a >= nc && nc >= ws, format!("alcd >= no-constraint >= weighted-sum violated: {msg}"))?;
    check(a >= as_, format!("alcd < alternate-sum: {msg}"))?;
    let at0 = p.sweep.iter().find(|s| s.step == 0).map(|s| s.f1);
    let best = p.sweep.iter().map(|s| s.f1).fold(f64::NEG_INFINITY, f64::max);
    check(at0.is_some_and(|x| x <= best), "sweep at step 0 beats the best sweep point")?;
    check(p.elapsed < Duration::from_secs(600), format!("pipeline took {:?}", p.elapsed))?;
    Ok(format!("{msg}; pipeline {:.0}s", p.elapsed.as_secs_f64()))
}

fn c8_grid(p: &Pipeline) -> Outcome {
    let a = curve_argmax(&harness::marginal(&p.grid, true));
    let b = curve_argmax(&harness::marginal(&p.grid, false));
    let msg = format!("{} points, validation peak at alpha={a}, beta={b}", p.grid.len());
    check(p.grid.len() == 36, format!("expected a 6x6 grid: {msg}"))?;
    check(a != 0.5, format!("alpha curve peaks at the largest value: {msg}"))?;
    check(b != 0.65, format!("beta curve peaks at the largest value: {msg}"))?;
    Ok(msg)
}

fn c9_hallucination(p: &Pipeline) -> Outcome {
    let g = &p.greedy.eval;
    let a = &row(&p.ablation, "alcd").eval;
    let pairs = [
        ("identification_not_exist", a.identification_not_exist, g.identification_not_exist),
        ("identification_pred_wrong", a.identification_pred_wrong, g.identification_pred_wrong),
        ("classification_pred_wrong", a.classification_pred_wrong, g.classification_pred_wrong),
    ];
    let msg = pairs
        .iter()
        .map(|(n, x, y)| format!("{n} {x:.4} vs {y:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    for (n, x, y) in pairs {
        check(x <= y, format!("{n} above greedy: {msg}"))?;
    }
    Ok(msg)
}

fn c10_determinism(first: &Pipeline, second: &Pipeline) -> Outcome {
    check(first.hashes.len() == second.hashes.len(), "artifact sets differ")?;
    let mut checkpoints = 0;
    for (path, h) in &first.hashes {
        let other = second.hashes.get(path).ok_or(format!("{path} missing in rerun"))?;
        check(h == other, format!("{path} differs between runs"))?;
        checkpoints += path.starts_with("checkpoints") as usize;
    }
    Ok(format!("{} artifacts identical ({checkpoints} checkpoints)", first.hashes.len()))
}

fn main() {
    // `cargo test` passes harness flags; a name filter skips the suite
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.is_some_and(|f| !"acceptance".contains(f.as_str())) {
        return;
    }
    let mut failed = 0;
    let mut report = |n: usize, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        let t = start.elapsed();
        let out = match out {
            Ok(m) if t > budget => Err(format!("{m}; took {t:?}, budget {budget:?}")),
            other => other,
        };
        match out {
            Ok(m) => println!("PASS [{n:>2}] {name}: {m} ({:.2}s)", t.as_secs_f64()),
            Err(m) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {m} ({:.2}s)", t.as_secs_f64());
            }
        }
    };
    let s = Duration::from_secs;
    report(1, "reduction to greedy", s(10), &mut c1_reduction);
    report(2, "jsd properties", s(5), &mut c2_jsd);
    report(3, "mask partition and invariance", s(10), &mut c3_masks);
    report(4, "gradient check", s(30), &mut c4_gradients);
    report(5, "decoder oracles", s(60), &mut c5_decoders);
    report(6, "constraint soundness", s(10), &mut c6_constraint);

    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(dirs.0.path());
    let budget = s(30 * 60);
    match &first {
        Ok(p) => {
            report(7, "rigged ordering", budget, &mut || c7_ordering(p));
            report(8, "grid interior peaks", budget, &mut || c8_grid(p));
            report(9, "hallucination taxonomy", budget, &mut || c9_hallucination(p));
        }
        Err(e) => {
            for (n, name) in [(7, "rigged ordering"), (8, "grid interior peaks"), (9, "hallucination taxonomy")] {
                report(n, name, budget, &mut || Err(format!("pipeline failed: {e}")));
            }
        }
    }
    let second = run_pipeline(dirs.1.path());
    report(10, "determinism", budget, &mut || match (&first, &second) {
        (Ok(a), Ok(b)) => c10_determinism(a, b),
        (Err(e), _) | (_, Err(e)) => Err(format!("pipeline failed: {e}")),
    });
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
