//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use camelot::attention::{augment, prefix_causal_attention};
use camelot::lm::{eval_clm, setup_for, LexiconSpec, LmConfig, MemorySetup, Model, ModelArtifact, ModelShape, Vocab};
use camelot::memory::{Ablation, BankConfig, MemoryBank, ReadResult, WriteAction};
use camelot::sim::{
    fifo_oracle_check, generate_stream, mode_recovery_metrics, run_memory_on_samples, run_memory_on_stream,
    MixtureSpec, Phase, StreamSample, ValueRule,
};
use camelot::vector::nearest_slot;
use camelot::{DenseVector, Error, SimilarityKind};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn vector(v: Vec<f64>) -> DenseVector {
    DenseVector::new(v).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> DenseVector {
    vector((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn basis(d: usize, i: usize) -> DenseVector {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    vector(v)
}

fn mean_of(vs: &[DenseVector]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].dim()];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    out.iter().map(|x| x / vs.len() as f64).collect()
}

fn close_rel(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300) || (x - y).abs() <= 1e-15)
}

/// Instance-level replay of a bank: every vector routed to every slot.
#[derive(Clone)]
struct InstanceOracle {
    keys: Vec<Vec<DenseVector>>,
    values: Vec<Vec<DenseVector>>,
    ages: Vec<u64>,
}

fn check_invariants(rng: &mut ChaCha8Rng, events_target: usize) -> Outcome {
    let mut events = 0;
    let mut banks = 0;
    while events < events_target {
        banks += 1;
        let d = rng.random_range(2..=6);
        let capacity = rng.random_range(1..=12);
        let similarity = if rng.random_bool(0.7) { SimilarityKind::Cosine } else { SimilarityKind::NegativeEuclidean };
        let ablation =
            *[Ablation::Full, Ablation::Full, Ablation::NoRecency, Ablation::NoNovelty, Ablation::NoConsolidation]
                .choose(rng)
                .unwrap();
        let cfg = BankConfig::new(capacity, d)
            .with_threshold(rng.random_range(0.5..0.99))
            .with_similarity(similarity)
            .with_ablation(ablation)
            .with_seed(rng.random());
        let mut bank = MemoryBank::new(cfg).unwrap();
        let centers: Vec<DenseVector> =
            (0..rng.random_range(1..=capacity + 4)).map(|_| random_vector(rng, d)).collect();
        let mut oracle = InstanceOracle {
            keys: vec![Vec::new(); capacity],
            values: vec![Vec::new(); capacity],
            ages: vec![0; capacity],
        };
        let mut written = 0u64;
        let mut destroyed = 0u64;
        for _ in 0..rng.random_range(5..40) {
            let len = rng.random_range(1..=8);
            let keys: Vec<DenseVector> = (0..len)
                .map(|_| {
                    let c = centers.choose(rng).unwrap();
                    vector(c.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect())
                })
                .collect();
            let values: Vec<DenseVector> = (0..len).map(|_| random_vector(rng, d)).collect();
            let before = bank.slots().to_vec();
            let report = bank.write(&keys, &values).unwrap();
            let mut ages = oracle.ages.clone();
            let mut occupied: Vec<bool> = before.iter().map(|s| s.occupied).collect();
            let mut touched = vec![false; capacity];
            for (t, w) in report.per_token.iter().enumerate() {
                let s = w.slot;
                match w.action {
                    WriteAction::Consolidated => {
                        ensure(occupied[s], || format!("bank {banks}: consolidated into empty slot {s}"))?;
                        oracle.keys[s].push(keys[t].clone());
                        oracle.values[s].push(values[t].clone());
                    }
                    WriteAction::Inserted => {
                        ensure(!occupied[s], || format!("bank {banks}: inserted into occupied slot {s}"))?;
                        ensure(occupied.iter().position(|o| !o) == Some(s), || {
                            format!("bank {banks}: insert skipped a lower free slot")
                        })?;
                        oracle.keys[s] = vec![keys[t].clone()];
                        oracle.values[s] = vec![values[t].clone()];
                    }
                    WriteAction::Replaced { destroyed_count } => {
                        ensure(occupied.iter().all(|&o| o), || format!("bank {banks}: eviction with a free slot"))?;
                        if ablation != Ablation::NoRecency {
                            let oldest = *ages.iter().max().unwrap();
                            ensure(ages[s] == oldest, || {
                                format!("bank {banks}: evicted age {} < max {oldest}", ages[s])
                            })?;
                        }
                        ensure(destroyed_count == oracle.keys[s].len() as u64, || {
                            format!("bank {banks}: destroyed count")
                        })?;
                        destroyed += destroyed_count;
                        oracle.keys[s] = vec![keys[t].clone()];
                        oracle.values[s] = vec![values[t].clone()];
                    }
                }
                occupied[s] = true;
                touched[s] = true;
                ages[s] = 0;
            }
            written += len as u64;
            events += len;
            for s in 0..capacity {
                oracle.ages[s] = if touched[s] {
                    0
                } else if before[s].occupied {
                    before[s].age + 1
                } else {
                    0
                };
            }
            for (s, slot) in bank.slots().iter().enumerate() {
                ensure(slot.occupied == occupied[s], || format!("bank {banks}: occupancy of slot {s}"))?;
                if !slot.occupied {
                    continue;
                }
                ensure(slot.count == oracle.keys[s].len() as u64, || format!("bank {banks}: count of slot {s}"))?;
                ensure(slot.age == oracle.ages[s], || format!("bank {banks}: age of slot {s}"))?;
                ensure(close_rel(&slot.key, &mean_of(&oracle.keys[s]), 1e-9), || {
                    format!("bank {banks}: key mean of slot {s}")
                })?;
                ensure(close_rel(&slot.value, &mean_of(&oracle.values[s]), 1e-9), || {
                    format!("bank {banks}: value mean of slot {s}")
                })?;
            }
            ensure(written == bank.total_count() + destroyed, || format!("bank {banks}: count conservation"))?;
        }
    }
    Ok(format!("{events} write events over {banks} banks"))
}

fn check_update_rate(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst: f64 = 0.0;
    for chain in 0..1000 {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=60);
        let xs: Vec<DenseVector> = (0..n).map(|_| random_vector(rng, d)).collect();
        // incremental form: K <- K + (x - K) / (c + 1)
        let mut k = xs[0].to_vec();
        let mut closed = xs[0].to_vec();
        for (c, x) in xs.iter().enumerate().skip(1) {
            let eps = 1.0 / (c as f64 + 1.0);
            for i in 0..d {
                k[i] += eps * (x[i] - k[i]);
                closed[i] = (x[i] + c as f64 * closed[i]) / (c as f64 + 1.0);
            }
        }
        let mean = mean_of(&xs);
        let mut bank = MemoryBank::new(BankConfig::new(1, d).with_ablation(Ablation::NoNovelty)).unwrap();
        bank.write(&xs, &xs).unwrap();
        for i in 0..d {
            for got in [closed[i], mean[i], bank.slots()[0].key[i]] {
                worst = worst.max((k[i] - got).abs());
            }
        }
        ensure(bank.slots()[0].count == n as u64, || format!("chain {chain}: count"))?;
        ensure(worst <= 1e-12, || format!("chain {chain}: deviation {worst:e}"))?;
    }
    Ok(format!("1000 chains, max deviation {worst:.1e}"))
}

fn linear_scan(keys: &[Vec<f64>], occupied: &[bool], q: &[f64], kind: SimilarityKind) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, k) in keys.iter().enumerate().filter(|(i, _)| occupied[*i]) {
        let score = match kind {
            SimilarityKind::Cosine => {
                let dot: f64 = k.iter().zip(q).map(|(a, b)| a * b).sum();
                let nk = k.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nq = q.iter().map(|a| a * a).sum::<f64>().sqrt();
                if nk == 0.0 {
                    0.0
                } else {
                    (dot / (nk * nq)).clamp(-1.0, 1.0)
                }
            }
            SimilarityKind::NegativeEuclidean => -k.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best
}

fn check_retrieval(rng: &mut ChaCha8Rng) -> Outcome {
    let mut ties = 0;
    for case in 0..1000 {
        let d = rng.random_range(1..=6);
        let m = rng.random_range(1..=16);
        // a small integer grid with duplicates and power-of-two multiples makes ties common
        let pool: Vec<Vec<f64>> =
            (0..rng.random_range(1..=4)).map(|_| (0..d).map(|_| rng.random_range(-2..=2) as f64).collect()).collect();
        let keys: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let scale = [1.0, 2.0, 4.0].choose(rng).copied().unwrap();
                pool.choose(rng).unwrap().iter().map(|x| x * scale).collect()
            })
            .collect();
        let occupied: Vec<bool> = (0..m).map(|_| rng.random_bool(0.8)).collect();
        let mut q: Vec<f64> = (0..d).map(|_| rng.random_range(-2..=2) as f64).collect();
        if q.iter().all(|&x| x == 0.0) {
            q[0] = 1.0;
        }
        for kind in [SimilarityKind::Cosine, SimilarityKind::NegativeEuclidean] {
            let got = nearest_slot(&keys, &occupied, &q, kind).unwrap();
            let want = linear_scan(&keys, &occupied, &q, kind);
            ensure(got == want, || format!("case {case} {kind}: {got:?} != {want:?}"))?;
            if let Some((i, s)) = want {
                ties += (0..m)
                    .filter(|&j| j != i && occupied[j] && linear_scan(&keys[j..=j], &[true], &q, kind).unwrap().1 == s)
                    .count()
                    .min(1);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for shape in 0..500 {
        let l = rng.random_range(1..=16);
        let p = rng.random_range(0..=16);
        let d = rng.random_range(1..=32);
        let dv = rng.random_range(1..=32);
        let scale = rng.random_range(0.05..2.0);
        let q: Vec<DenseVector> = (0..l).map(|_| random_vector(rng, d)).collect();
        let nk: Vec<DenseVector> = (0..l).map(|_| random_vector(rng, d)).collect();
        let nv: Vec<DenseVector> = (0..l).map(|_| random_vector(rng, dv)).collect();
        let read = ReadResult {
            keys: (0..p).map(|_| random_vector(rng, d)).collect(),
            values: (0..p).map(|_| random_vector(rng, dv)).collect(),
            slot_indices: (0..p).collect(),
            scores: vec![0.0; p],
        };
        let kv = augment(&nk, &nv, &read).unwrap();
        let got = prefix_causal_attention(&q, &kv, scale).unwrap();
        // dense oracle: full score matrix, additive -inf mask, row softmax, times V
        let keys: Vec<&DenseVector> = read.keys.iter().chain(&nk).collect();
        let values: Vec<&DenseVector> = read.values.iter().chain(&nv).collect();
        for i in 0..l {
            let row: Vec<f64> = (0..p + l)
                .map(|j| {
                    let mask = if j < p || j - p <= i { 0.0 } else { f64::NEG_INFINITY };
                    scale * q[i].iter().zip(keys[j].iter()).map(|(a, b)| a * b).sum::<f64>() + mask
                })
                .collect();
            let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dv {
                let want: f64 = (0..p + l).map(|j| e[j] / z * values[j][c]).sum();
                worst = worst.max((got[i][c] - want).abs());
            }
        }
        ensure(worst <= 1e-8, || format!("shape {shape}: deviation {worst:e}"))?;
    }
    Ok(format!(
        "1000 nearest-slot instances ({ties} tied argmax cases), 500 attention shapes, max deviation {worst:.1e}"
    ))
}

fn check_empty_prefix() -> Outcome {
    let shape = ModelShape { vocab: 11, d_model: 16, heads: 2, layers: 2, d_ff: 32, max_len: 16 };
    let model = Model::init(shape.clone(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let doc: Vec<u32> = (0..160).map(|_| rng.random_range(0..11)).collect();
    let window = 16;
    let plain = eval_clm(&model, &doc, &MemorySetup::baseline(window)).unwrap();
    let mut setup = MemorySetup::all_layers(&shape, window, BankConfig::new(64, shape.head_dim()));
    setup.write = false;
    let memory = eval_clm(&model, &doc, &setup).unwrap();
    ensure(plain.per_window.len() == 10, || format!("{} windows", plain.per_window.len()))?;
    ensure(plain.trace.len() == memory.trace.len(), || "trace lengths differ".into())?;
    let worst = plain.trace.iter().zip(&memory.trace).map(|(a, b)| (a.nll - b.nll).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-9, || format!("max NLL difference {worst:e}"))?;
    Ok(format!("10 windows, {} tokens, max NLL difference {worst:.1e}", plain.trace.len()))
}

fn mixture(phases: Vec<Phase>, seed: u64) -> MixtureSpec {
    MixtureSpec { phases, values: ValueRule::default(), seed }
}

fn uniform_phase(means: Vec<DenseVector>, sigma: f64, length: usize) -> Phase {
    let n = means.len();
    Phase { means, weights: vec![1.0 / n as f64; n], sigma, length }
}

fn check_mode_recovery() -> Outcome {
    let d = 8;
    let modes: Vec<DenseVector> = (0..3).map(|i| basis(d, i)).collect();
    let cfg = BankConfig::new(10, d).with_threshold(0.9);
    let spec = mixture(vec![uniform_phase(modes.clone(), 0.0, 300)], 11);
    let run = run_memory_on_stream(&spec, &cfg, 10).unwrap();
    let r = mode_recovery_metrics(&run, &spec).unwrap();
    ensure(run.bank.occupancy() == 3, || format!("zero noise: {} occupied slots", run.bank.occupancy()))?;
    ensure(r.recovered == 3 && r.max_key_error == 0.0 && r.purity == 1.0, || {
        format!("zero noise: recovered {}, key error {:e}, purity {}", r.recovered, r.max_key_error, r.purity)
    })?;

    let noisy = mixture(vec![uniform_phase(modes, 0.01, 300)], 12);
    let run = run_memory_on_stream(&noisy, &cfg, 10).unwrap();
    let n = mode_recovery_metrics(&run, &noisy).unwrap();
    ensure(n.recovered == 3 && n.max_key_error <= 0.02, || {
        format!("noisy: recovered {}, max key error {:.4}", n.recovered, n.max_key_error)
    })?;
    Ok(format!("zero noise exact with purity 1; noisy max key error {:.2e}", n.max_key_error))
}

fn distinct_stream(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<StreamSample> {
    (0..n)
        .map(|i| StreamSample { key: random_vector(rng, d), value: random_vector(rng, d), true_mode: i, phase: 0 })
        .collect()
}

fn check_ablations(rng: &mut ChaCha8Rng) -> Outcome {
    for stream in 0..100 {
        let capacity = rng.random_range(1..=16);
        let divisors: Vec<usize> = (1..=capacity).filter(|w| capacity % w == 0).collect();
        let window = *divisors.choose(rng).unwrap();
        let d = rng.random_range(3..=6);
        let n = rng.random_range(capacity + 1..=5 * capacity + 5);
        let samples = distinct_stream(rng, n, d);
        let cfg = BankConfig::new(capacity, d).with_threshold(1.0);
        let run = run_memory_on_samples(samples, &cfg, window, false).unwrap();
        let check = fifo_oracle_check(&run.events, capacity);
        ensure(check.passed, || format!("fifo stream {stream} (M={capacity}, L={window}): {:?}", check.divergence))?;
    }

    for stream in 0..20 {
        let d = 4;
        let samples = distinct_stream(rng, 200, d);
        let cfg = BankConfig::new(8, d).with_threshold(-1.0);
        let run = run_memory_on_samples(samples, &cfg, rng.random_range(1..=10), false).unwrap();
        let evictions = run.events.iter().filter(|e| matches!(e.action, WriteAction::Replaced { .. })).count();
        ensure(evictions == 0 && run.bank.occupancy() == 1, || {
            format!("no-novelty stream {stream}: {evictions} evictions, occupancy {}", run.bank.occupancy())
        })?;
    }

    for ablation in [Ablation::NoRecency, Ablation::NoRead] {
        let means: Vec<DenseVector> = (0..6).map(|_| random_vector(rng, 5)).collect();
        let spec = mixture(vec![uniform_phase(means, 0.2, 400)], 9);
        let samples = generate_stream(&spec, 400).unwrap();
        let cfg = BankConfig::new(4, 5).with_ablation(ablation).with_seed(41);
        let a = run_memory_on_samples(samples.clone(), &cfg, 7, true).unwrap();
        let b = run_memory_on_samples(samples.clone(), &cfg, 7, true).unwrap();
        ensure(a.bank.state_eq(&b.bank) && a.events == b.events, || {
            format!("{ablation} differs across identical runs")
        })?;
        let mut fresh = MemoryBank::new(cfg.clone()).unwrap();
        let keys: Vec<DenseVector> = samples.iter().take(20).map(|s| s.key.clone()).collect();
        fresh.write(&keys, &keys).unwrap();
        let mut again = fresh.clone();
        ensure(fresh.read(&keys).unwrap() == again.read(&keys).unwrap(), || format!("{ablation} reads differ"))?;
    }
    Ok("100 FIFO streams, 20 no-novelty streams, no-recency and no-read reproducible".into())
}

fn check_topic_shift(rng: &mut ChaCha8Rng) -> Outcome {
    for trial in 0..20 {
        let capacity = rng.random_range(2..=6);
        let d = 2 * capacity + 2;
        let old: Vec<DenseVector> = (0..capacity).map(|i| basis(d, i)).collect();
        let new: Vec<DenseVector> = (capacity..2 * capacity).map(|i| basis(d, i)).collect();
        let window = rng.random_range(1..=4);
        let phases = vec![uniform_phase(old, 0.0, 20 * capacity), uniform_phase(new, 0.0, window * (capacity + 2) * 4)];
        let spec = mixture(phases, rng.random());
        let run = run_memory_on_stream(&spec, &BankConfig::new(capacity, d).with_threshold(0.9), window).unwrap();
        // replay oracle: the phase of each slot's latest (re)fill
        let mut phase = vec![None; capacity];
        for e in &run.events {
            if !matches!(e.action, WriteAction::Consolidated) {
                phase[e.slot] = Some(run.samples[e.token].phase);
            }
        }
        let survivors = phase.iter().filter(|p| **p == Some(0)).count();
        ensure(survivors == 0, || format!("trial {trial}: {survivors} phase-1 slots survive"))?;
        ensure(run.bank.slots().iter().all(|s| s.key.iter().take(capacity).all(|&x| x == 0.0)), || {
            format!("trial {trial}: an old-mode key remains")
        })?;
    }
    Ok("20 two-phase streams, no phase-1 slot survives".into())
}

struct LmRun {
    base: Vec<f64>,
    full: Vec<f64>,
    no_read: Vec<f64>,
}

const WINDOWS: [usize; 3] = [32, 64, 128];

fn lm_runs() -> Vec<LmRun> {
    let lexicon = LexiconSpec { min_passage: 8, max_passage: 256, ..LexiconSpec::default() };
    (0..3u64)
        .map(|seed| {
            let text = lexicon.corpus(seed, 100_000, 600).unwrap();
            let vocab = Vocab::from_text(&text);
            let mut cfg = LmConfig::small(vocab.len());
            cfg.train.steps = 2000;
            cfg.train.learning_rate = 1e-2;
            cfg.train.batch_size = 4;
            cfg.train.seed = seed;
            let (artifact, _) = ModelArtifact::train(&text, cfg.shape.clone(), &cfg.train).unwrap();
            let doc = lexicon.repetition_document(1000 + seed, 256, 20, lexicon.max_words).unwrap();
            let tokens = artifact.vocab.encode(&doc).unwrap();
            let mut run = LmRun { base: Vec::new(), full: Vec::new(), no_read: Vec::new() };
            for window in WINDOWS {
                let setup = MemorySetup { window, ..cfg.memory_setup() };
                let ppl = |s: &MemorySetup| eval_clm(&artifact.model, &tokens, s).unwrap().perplexity;
                run.base.push(ppl(&setup_for(&setup, None)));
                run.full.push(ppl(&setup));
                run.no_read.push(ppl(&setup_for(&setup, Some(Ablation::NoRead))));
            }
            run
        })
        .collect()
}

fn seed_mean(runs: &[LmRun], pick: impl Fn(&LmRun) -> &Vec<f64>, w: usize) -> f64 {
    runs.iter().map(|r| pick(r)[w]).sum::<f64>() / runs.len() as f64
}

fn check_clm_benefit(runs: &[LmRun]) -> Outcome {
    let w = 1;
    let (base, full, no_read) =
        (seed_mean(runs, |r| &r.base, w), seed_mean(runs, |r| &r.full, w), seed_mean(runs, |r| &r.no_read, w));
    let detail = format!("L=64 perplexity base {base:.3}, full {full:.3} ({:.3}x), no-read {no_read:.3}", full / base);
    ensure(full <= 0.97 * base && no_read >= full, || detail.clone())?;
    Ok(detail)
}

fn spread(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::MIN, f64::max);
    let min = xs.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / min
}

fn check_window_stability(runs: &[LmRun]) -> Outcome {
    let full: Vec<f64> = (0..WINDOWS.len()).map(|w| seed_mean(runs, |r| &r.full, w)).collect();
    let base: Vec<f64> = (0..WINDOWS.len()).map(|w| seed_mean(runs, |r| &r.base, w)).collect();
    let detail = format!("relative spread over L=32/64/128: full {:.4}, base {:.4}", spread(&full), spread(&base));
    ensure(spread(&full) < spread(&base), || detail.clone())?;
    Ok(detail)
}

fn check_snapshot(rng: &mut ChaCha8Rng) -> Outcome {
    let d = 6;
    let cfg = BankConfig::new(32, d).with_threshold(0.8).with_ablation(Ablation::NoRecency).with_seed(77);
    let mut bank = MemoryBank::new(cfg.clone()).unwrap();
    let centers: Vec<DenseVector> = (0..48).map(|_| random_vector(rng, d)).collect();
    let mut written = 0;
    while written < 1000 {
        let keys: Vec<DenseVector> = (0..10)
            .map(|_| vector(centers.choose(rng).unwrap().iter().map(|x| x + rng.random_range(-0.1..0.1)).collect()))
            .collect();
        bank.write(&keys, &keys).unwrap();
        written += keys.len();
    }
    let bytes = bank.snapshot();
    let restored = MemoryBank::restore(&bytes, &cfg).map_err(|e| e.to_string())?;
    ensure(restored.state_eq(&bank) && restored.slots() == bank.slots(), || "restored state differs".into())?;
    ensure(restored.snapshot() == bytes, || "re-serialized bytes differ".into())?;
    let (mut a, mut b) = (bank.clone(), restored);
    let probe: Vec<DenseVector> = (0..10).map(|_| random_vector(rng, d)).collect();
    ensure(a.write(&probe, &probe) == b.write(&probe, &probe) && a.state_eq(&b), || {
        "restored bank diverges on later writes".into()
    })?;

    let truncated = MemoryBank::restore(&bytes[..bytes.len() - 3], &cfg);
    ensure(matches!(truncated, Err(Error::SnapshotCorrupt(_))), || format!("truncated: {truncated:?}"))?;
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let r = MemoryBank::restore(&bad_magic, &cfg);
    ensure(matches!(r, Err(Error::SnapshotCorrupt(_))), || format!("bad magic: {r:?}"))?;
    let mut bad_version = bytes.clone();
    bad_version[4] = 2;
    let r = MemoryBank::restore(&bad_version, &cfg);
    ensure(matches!(r, Err(Error::SnapshotVersion { .. })), || format!("bad version: {r:?}"))?;
    let wrong_dim = BankConfig { dim: 5, ..cfg.clone() };
    let r = MemoryBank::restore(&bytes, &wrong_dim);
    ensure(matches!(r, Err(Error::SnapshotConfigMismatch(_))), || format!("wrong dim: {r:?}"))?;
    let wrong_capacity = BankConfig { capacity: 31, ..cfg };
    let r = MemoryBank::restore(&bytes, &wrong_capacity);
    ensure(matches!(r, Err(Error::SnapshotConfigMismatch(_))), || format!("wrong capacity: {r:?}"))?;
    Ok(format!("{written} writes round-trip; corrupt, version and mismatch errors distinct"))
}

fn main() -> ExitCode {
    let mut rng = ChaCha8Rng::seed_from_u64(20240607);
    let mut failures = 0;
    let mut report = |name: &str, budget: Option<f64>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let mut outcome = f();
        let secs = start.elapsed().as_secs_f64();
        if let (Some(limit), Ok(detail)) = (budget, &outcome) {
            if secs > limit {
                outcome = Err(format!("{detail}; took {secs:.1}s, budget {limit}s"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail} ({secs:.1}s)");
            }
        }
    };

    report("memory invariants", Some(30.0), &mut || check_invariants(&mut rng, 10_000));
    report("update-rate closed form", None, &mut || check_update_rate(&mut rng));
    report("retrieval and attention oracles", Some(10.0), &mut || check_retrieval(&mut rng));
    report("empty-prefix identity", None, &mut check_empty_prefix);
    report("mode recovery", Some(5.0), &mut check_mode_recovery);
    report("ablation semantics", None, &mut || check_ablations(&mut rng));
    report("topic-shift recency", None, &mut || check_topic_shift(&mut rng));
    let start = Instant::now();
    let runs = lm_runs();
    let lm_secs = start.elapsed().as_secs_f64();
    report("directional CLM benefit", None, &mut || {
        let detail = check_clm_benefit(&runs)?;
        ensure(lm_secs <= 600.0, || format!("{detail}; training and evaluation took {lm_secs:.0}s"))?;
        Ok(format!("{detail}; 3 seeds in {lm_secs:.0}s"))
    });
    report("window-size stability", None, &mut || check_window_stability(&runs));
    report("snapshot round-trip", None, &mut || check_snapshot(&mut rng));

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
