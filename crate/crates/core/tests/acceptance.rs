//! Acceptance suite: one PASS/FAIL line per criterion.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use engageformer::config::RunConfig;
use engageformer::data::{
    decode_clip, encode_clip, parse_ppm, stratified_split, synth_dataset, Clip, Entry, EvalReport, Manifest,
    SplitRatio,
};
use engageformer::encoder::{encoder_layer, run_stack, EncoderStack, StackConfig};
use engageformer::fusion::{cvaf, fuse_all, pool_weights, sequence_pool, CvafParams, SeqPoolParams};
use engageformer::model::{checkpoint, count_params, Model, ModelConfig, ShapeLedger};
use engageformer::numerics::{softmax, Rng, Tape, Tensor};
use engageformer::params::ParamStore;
use engageformer::tokenizer::{Geometry, TokenSequence};
use engageformer::training::{cosine_lr, gradcheck, AdamW, OptimizerState, Trainer};
use proptest::test_runner::{Config, TestRunner};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Independent count for one encoder layer: two norms, `heads` Q/K/V
/// projections of width ⌊d/heads⌋ with biases, W^O from the concatenated
/// heads back to d, and a two-layer MLP.
fn layer_params(d: usize, heads: usize, mlp: usize) -> usize {
    let dh = d / heads;
    let norms = 2 * 2 * d;
    let qkv = heads * 3 * (d * dh + dh);
    let out = heads * dh * d + d;
    let ffn = d * mlp + mlp + mlp * d + d;
    norms + qkv + out + ffn
}

fn model_params_oracle(c: &ModelConfig) -> usize {
    let g = c.geometry;
    let d = c.d;
    let mut total = 0;
    for t in &c.views {
        let tokens = (g.frames / t.t) * (g.height / t.h) * (g.width / t.w);
        let volume = t.t * t.h * t.w * g.channels;
        total += volume * d + d + tokens * d;
        total += c.view_layers * layer_params(d, c.view_heads, c.view_mlp);
        total += d;
    }
    let fused = (1..=c.view_layers).filter(|&l| c.fusion_layers.applies_after(l - 1)).count();
    total += fused * (c.views.len() - 1) * 4 * d * d;
    total += c.views.len() * d;
    total += c.global_layers * layer_params(d, c.global_heads, c.global_mlp);
    total += d;
    total + d * c.classes + c.classes
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let cfg = RunConfig::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.conf"))
        .map_err(|e| e.to_string())?;
    ensure(cfg.model == ModelConfig::toy(), || "shipped toy config differs from the built-in one".into())?;
    let report = gradcheck(&cfg.model, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let model = Model::<f64>::new(cfg.model.clone(), 0).map_err(|e| e.to_string())?;
    let names: Vec<&str> = report.entries.iter().map(|e| e.name.as_str()).collect();
    ensure(names == model.params().names(), || "report does not list every parameter once".into())?;
    ensure(report.passed(), || format!("{}", report))?;
    ensure(elapsed <= Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    println!(
        "     {} tensors, max relative error {:.2e}, {:.1}s",
        report.entries.len(),
        report.max_error(),
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn shape_ledger() -> Check {
    let cfg = ModelConfig::default();
    let ledger = ShapeLedger::of(&cfg).map_err(|e| e.to_string())?;
    let mut tokens = ledger.view_tokens.clone();
    tokens.sort_unstable();
    ensure(tokens == [784, 1568, 3136], || format!("view tokens {tokens:?}"))?;
    ensure(ledger.global_len == 3, || format!("global length {}", ledger.global_len))?;
    ensure(ledger.logits == 6, || format!("logits {}", ledger.logits))?;
    let count = count_params(&cfg).map_err(|e| e.to_string())?;
    ensure(count == 31_472_586, || format!("parameter count {count}"))?;
    ensure(count == model_params_oracle(&cfg), || "closed form disagrees with oracle".into())?;
    let toy = ModelConfig::toy();
    ensure(count_params(&toy).unwrap() == model_params_oracle(&toy), || "toy count".into())?;
    ensure(Model::<f32>::new(toy, 3).unwrap().params().numel() == 11_603, || "toy numel".into())
}

fn overfit_run() -> Result<(f64, Vec<u8>, Duration), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy_train.conf"))
        .map_err(|e| e.to_string())?;
    let manifest = synth_dataset(8, cfg.model.classes, &cfg.model.geometry, 1, dir.path()).map_err(|e| e.to_string())?;
    let samples = manifest.load_samples(&cfg.model.geometry).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let model = Model::new(cfg.model.clone(), cfg.train.seed).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), samples.len()).map_err(|e| e.to_string())?;
    trainer.fit(&samples, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if trainer.step() > 300 {
        return Err(format!("{} optimiser steps", trainer.step()));
    }
    let report = engageformer::data::evaluate(trainer.model(), &samples).map_err(|e| e.to_string())?;
    Ok((report.accuracy, checkpoint::encode(trainer.model().params()), elapsed))
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
    }
    #[cfg(not(feature = "parallel"))]
    f()
}

fn overfit_oracle() -> Check {
    let (acc, first, elapsed) = single_threaded(overfit_run)?;
    ensure(acc >= 0.95, || format!("train accuracy {acc}"))?;
    ensure(elapsed <= Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    let (_, second, _) = single_threaded(overfit_run)?;
    ensure(first == second, || "rerun produced a different checkpoint".into())?;
    println!("     32 clips, 300 steps, accuracy {acc:.3}, {:.1}s", elapsed.as_secs_f64());
    Ok(())
}

fn probability_vectors() -> Check {
    let mut rng = Rng::new(1);
    for case in 0..200 {
        let rows = 1 + rng.below(6);
        let cols = 1 + rng.below(40);
        let scale = [1e-3, 1.0, 30.0, 500.0][case % 4];
        let x: Tensor<f64> = rng.gaussian_tensor(&[rows, cols], 0.0, scale);
        let s = softmax(&x, 1).map_err(|e| e.to_string())?;
        for r in 0..rows {
            let row = s.row(r);
            ensure(row.iter().all(|&p| (0.0..=1.0).contains(&p)), || format!("entry outside [0,1] in case {case}"))?;
            let total: f64 = row.iter().sum();
            ensure((total - 1.0).abs() <= 1e-6, || format!("row sum {total} in case {case}"))?;
        }
        let mut store = ParamStore::<f64>::new();
        let pool = SeqPoolParams::init(&mut store, "p", cols, &mut rng.derive(case as u64));
        let tape = Tape::new();
        let p = store.bind(&tape);
        let n = 1 + rng.below(20);
        let z = tape.constant(rng.gaussian_tensor(&[n, cols], 0.0, scale));
        let w = pool_weights(&p, z, &pool).value();
        let total: f64 = w.data().iter().sum();
        ensure(w.data().iter().all(|&v| v >= 0.0) && (total - 1.0).abs() <= 1e-6, || {
            format!("pool weights sum {total} in case {case}")
        })?;
    }
    Ok(())
}

fn convex_hull() -> Check {
    let mut rng = Rng::new(2);
    for case in 0..200 {
        let (n, d) = (1 + rng.below(30), 1 + rng.below(12));
        let mut store = ParamStore::<f64>::new();
        let pool = SeqPoolParams::init(&mut store, "p", d, &mut rng.derive(case));
        let tape = Tape::new();
        let p = store.bind(&tape);
        let zt: Tensor<f64> = rng.gaussian_tensor(&[n, d], 0.0, 3.0);
        let out = sequence_pool(&p, tape.constant(zt.clone()), &pool).value();
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| zt.row(i)[j]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = out.data()[j];
            ensure(v >= lo - 1e-12 && v <= hi + 1e-12, || format!("coordinate {j} = {v} outside [{lo}, {hi}]"))?;
        }
    }
    Ok(())
}

fn cvaf_zero_values_identity() -> Check {
    let d = 6;
    let mut store = ParamStore::<f64>::new();
    let mut rng = Rng::new(3);
    let params: Vec<_> = (0..2).map(|j| CvafParams::init(&mut store, &format!("f{j}"), d, &mut rng)).collect();
    for pr in &params {
        let id = pr.wv;
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let tape = Tape::new();
    let p = store.bind(&tape);
    let views: Vec<_> = [3, 7, 12]
        .iter()
        .enumerate()
        .map(|(i, &n)| TokenSequence::new(tape.constant(rng.gaussian_tensor(&[n, d], 0.0, 1.0)), i))
        .collect();
    let fused = fuse_all(&p, &views, &params).map_err(|e| e.to_string())?;
    for (a, b) in views.iter().zip(&fused) {
        ensure(a.tokens.value() == b.tokens.value(), || format!("view {} changed", a.view_index))?;
    }
    Ok(())
}

fn permute_rows(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let rows: Vec<f64> = perm.iter().flat_map(|&i| x.row(i).to_vec()).collect();
    Tensor::from_vec(x.shape(), rows).unwrap()
}

fn permutation_equivariance() -> Check {
    let cfg = StackConfig {
        d: 9,
        heads: 2,
        layers: 2,
        mlp: 13,
    };
    let mut rng = Rng::new(4);
    for case in 0..20u64 {
        let mut store = ParamStore::<f64>::new();
        let stack = EncoderStack::init(&mut store, "e", &cfg, &[0.0, 0.0], &mut rng.derive(case));
        let cv = CvafParams::init(&mut store, "c", cfg.d, &mut rng.derive(100 + case));
        let pool = SeqPoolParams::init(&mut store, "p", cfg.d, &mut rng.derive(200 + case));
        let n = 2 + rng.below(10);
        let z: Tensor<f64> = rng.gaussian_tensor(&[n, cfg.d], 0.0, 1.0);
        let kv: Tensor<f64> = rng.gaussian_tensor(&[n + 3, cfg.d], 0.0, 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let mut kv_perm: Vec<usize> = (0..n + 3).collect();
        rng.shuffle(&mut kv_perm);

        let tape = Tape::new();
        let p = store.bind(&tape);
        let run = |x: &Tensor<f64>| run_stack(&p, tape.constant(x.clone()), &stack, &Rng::new(0), false).value();
        let direct = permute_rows(&run(&z), &perm);
        let permuted = run(&permute_rows(&z, &perm));
        let err = max_abs_diff(direct.data(), permuted.data());
        ensure(err <= 1e-6, || format!("encoder stack: {err:e} in case {case}"))?;

        let fuse = |q: &Tensor<f64>, k: &Tensor<f64>| {
            cvaf(&p, tape.constant(q.clone()), tape.constant(k.clone()), &cv).unwrap().value()
        };
        let base = fuse(&z, &kv);
        let err = max_abs_diff(permute_rows(&base, &perm).data(), fuse(&permute_rows(&z, &perm), &kv).data());
        ensure(err <= 1e-6, || format!("fusion queries: {err:e}"))?;
        let err = max_abs_diff(base.data(), fuse(&z, &permute_rows(&kv, &kv_perm)).data());
        ensure(err <= 1e-6, || format!("fusion keys: {err:e}"))?;

        let pooled = |x: &Tensor<f64>| sequence_pool(&p, tape.constant(x.clone()), &pool).value();
        let err = max_abs_diff(pooled(&z).data(), pooled(&permute_rows(&z, &perm)).data());
        ensure(err <= 1e-6, || format!("pooling: {err:e}"))?;
    }
    Ok(())
}

/// Monte Carlo mean of the training-mode layer output against the inference
/// output. Each residual branch is tested with the other one made
/// deterministic, since only then is the inference output the exact mean.
fn stochastic_depth_mean() -> Check {
    let cfg = StackConfig {
        d: 6,
        heads: 2,
        layers: 1,
        mlp: 10,
    };
    let draws = 10_000;
    for silenced in ["mlp.fc2.weight", "msa.wo"] {
        let mut store = ParamStore::<f64>::new();
        let stack = EncoderStack::init(&mut store, "e", &cfg, &[0.5], &mut Rng::new(5));
        let mut rng = Rng::new(6);
        let names: Vec<String> = store.names().to_vec();
        for name in names {
            let id = store.id(&name).unwrap();
            let shape = store.get(id).shape().to_vec();
            if name.ends_with(silenced) || (silenced == "msa.wo" && name.ends_with("msa.bo")) {
                store.set(id, Tensor::zeros(&shape)).unwrap();
            } else if name.ends_with("bias") || name.ends_with(".bo") {
                store.set(id, rng.gaussian_tensor(&shape, 0.0, 0.5)).unwrap();
            }
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let z = tape.constant(Rng::new(7).gaussian_tensor(&[4, cfg.d], 0.0, 1.0));
        let layer = &stack.layers[0];
        let inference = encoder_layer(&p, z, layer, &mut Rng::new(0), false).value();
        let len = inference.len();
        let (mut sum, mut sq) = (vec![0.0; len], vec![0.0; len]);
        let mc = Rng::new(8);
        for k in 0..draws {
            let t = Tape::new();
            let pk = store.bind(&t);
            let zk = t.constant((*z.value()).clone());
            let out = encoder_layer(&pk, zk, layer, &mut mc.derive(k), true).value();
            for (i, &v) in out.data().iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let n = draws as f64;
        let mut varied = false;
        for i in 0..len {
            let mean = sum[i] / n;
            let var = (sq[i] / n - mean * mean).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            varied |= se > 0.0;
            let dev = (mean - inference.data()[i]).abs();
            ensure(dev <= 3.0 * se + 1e-12, || {
                format!("{silenced} silenced: element {i} mean {mean} vs {} (3σ = {})", inference.data()[i], 3.0 * se)
            })?;
        }
        ensure(varied, || "training output never varied".into())?;
    }
    Ok(())
}

fn optimizer_and_schedule() -> Check {
    let lr = |s, t| cosine_lr(s, t, 1e-4).unwrap();
    ensure(lr(0, 1000) == 1e-4, || format!("step 0: {}", lr(0, 1000)))?;
    ensure(lr(500, 1000) == 5e-5, || format!("midpoint: {}", lr(500, 1000)))?;
    ensure(lr(1000, 1000) == 0.0, || format!("end: {}", lr(1000, 1000)))?;

    let scalar = |v: f64| {
        let mut s = ParamStore::<f64>::new();
        s.add("theta", Tensor::scalar(v));
        s
    };
    let opt = AdamW {
        weight_decay: 0.0,
        ..AdamW::default()
    };
    let mut p = scalar(0.0);
    let mut st = OptimizerState::new(&p);
    opt.step(&mut p, &[Tensor::scalar(1.0)], &mut st, 1e-4);
    let got = p.tensors().next().unwrap().data()[0];
    let expect = -1e-4 / (1.0 + 1e-8);
    ensure((got - expect).abs() <= 1e-10, || format!("first step {got} vs {expect}"))?;

    let mut p = scalar(1.0);
    let mut st = OptimizerState::new(&p);
    let mut steps = 0;
    while p.tensors().next().unwrap().data()[0].abs() > 1e-2 {
        if steps == 2000 {
            return Err("|θ| > 1e-2 after 2000 steps".into());
        }
        let theta = p.tensors().next().unwrap().data()[0];
        opt.step(&mut p, &[Tensor::scalar(2.0 * theta)], &mut st, 1e-2);
        steps += 1;
    }
    println!("     θ² converged in {steps} steps");
    Ok(())
}

fn runner_config() -> Config {
    Config {
        cases: 128,
        failure_persistence: None,
        ..Config::default()
    }
}

fn format_round_trips() -> Check {
    let mut runner = TestRunner::new(runner_config());
    let dims = (1usize..5, 1usize..6, 1usize..6, 1usize..4, proptest::num::u64::ANY);
    runner
        .run(&dims, |(t, h, w, d, seed)| {
            let g = Geometry::new(t, h, w, d);
            let mut rng = Rng::new(seed);
            let clip = Clip::new(g, (0..g.numel()).map(|_| rng.below(256) as u8).collect()).unwrap();
            let bytes = encode_clip(&clip);
            assert_eq!(bytes.len(), 20 + g.numel());
            assert_eq!(decode_clip(&bytes, Path::new("p")).unwrap(), clip);
            Ok(())
        })
        .map_err(|e| format!("clip: {e}"))?;

    let mut runner = TestRunner::new(runner_config());
    runner
        .run(&(1usize..5, proptest::num::u64::ANY), |(count, seed)| {
            let mut rng = Rng::new(seed);
            let mut store = ParamStore::<f32>::new();
            for i in 0..count {
                let rank = 1 + rng.below(3);
                let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(5)).collect();
                let data = (0..shape.iter().product())
                    .map(|_| f32::from_bits(rng.next_u64() as u32 & 0x7f7f_ffff))
                    .collect();
                store.add(format!("t{i}.w"), Tensor::from_vec(&shape, data).unwrap());
            }
            let bytes = checkpoint::encode(&store);
            let mut target = store.with_tensors(store.tensors().map(|t| Tensor::zeros(t.shape())).collect());
            checkpoint::load_into(&mut target, &checkpoint::decode(&bytes, Path::new("c")).unwrap()).unwrap();
            for (a, b) in store.tensors().zip(target.tensors()) {
                let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
            assert_eq!(checkpoint::encode(&target), bytes);
            Ok(())
        })
        .map_err(|e| format!("checkpoint: {e}"))
}

fn ppm_fixture() -> Check {
    let img = parse_ppm(b"P6 1 1 255\n\xff\xff\xff", Path::new("white.ppm")).map_err(|e| e.to_string())?;
    ensure((img.width, img.height) == (1, 1) && img.pixels == [255, 255, 255], || format!("{img:?}"))
}

fn split_partition() -> Check {
    let mut entries = Vec::new();
    for (c, n) in [10usize, 5, 7].iter().enumerate() {
        for k in 0..*n {
            entries.push(Entry {
                path: format!("c{c}/{k}.efv").into(),
                label: c,
            });
        }
    }
    let m = Manifest::new(vec!["a".into(), "b".into(), "c".into()], entries, ".".into()).unwrap();
    let (train, test) = stratified_split(&m, SplitRatio::default(), 9).map_err(|e| e.to_string())?;
    ensure(train.class_counts() == [8, 4, 6], || format!("train {:?}", train.class_counts()))?;
    ensure(test.class_counts() == [2, 1, 1], || format!("test {:?}", test.class_counts()))?;
    let mut union: Vec<_> = train.entries.iter().chain(&test.entries).map(|e| e.path.clone()).collect();
    union.sort();
    union.dedup();
    ensure(union.len() == m.len(), || "not a partition".into())?;
    let again = stratified_split(&m, SplitRatio::default(), 9).unwrap();
    ensure(again == (train, test), || "split not deterministic".into())
}

fn metrics_example() -> Check {
    let r = EvalReport::from_predictions(&[0, 1, 0], &[0, 1, 1], 2).map_err(|e| e.to_string())?;
    ensure(r.accuracy == 2.0 / 3.0, || format!("accuracy {}", r.accuracy))?;
    ensure(r.macro_precision == 0.75, || format!("precision {}", r.macro_precision))?;
    ensure(r.macro_recall == 0.75, || format!("recall {}", r.macro_recall))
}

fn main() {
    let criteria: &[Criterion] = &[
        ("gradient correctness (toy gradcheck ≤ 1e-4, ≤ 5 min)", gradient_correctness),
        ("shape ledger and stable parameter count", shape_ledger),
        ("overfit 32 clips ≥ 95% in 300 steps, bit-exact rerun", overfit_oracle),
        ("softmax and pooling weights are probability vectors", probability_vectors),
        ("sequence pool stays in the coordinatewise hull", convex_hull),
        ("fusion with zero value weights is the identity", cvaf_zero_values_identity),
        ("permutation equivariance without positions", permutation_equivariance),
        ("stochastic depth mean matches inference (3σ, 1e4 draws)", stochastic_depth_mean),
        ("cosine schedule and AdamW closed forms", optimizer_and_schedule),
        ("clip and checkpoint round-trips (128 cases each)", format_round_trips),
        ("minimal P6 fixture", ppm_fixture),
        ("stratified split partition with ceil rule", split_partition),
        ("hand-counted confusion example", metrics_example),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
