//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs on a single rayon thread so the timing limits are single-core
//! figures.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::corrupt::{checkpoint_cases, embedding_cases, valid_checkpoint, valid_embeddings};
use common::{max_abs_diff, perturbed_params, random_samples, reference};
use mian::attention::{gate_combine, inverse_attention, scaled_dot_attention, GateParams};
use mian::cli::{cmd_gradcheck, cmd_train, RunConfig};
use mian::data::{decode_embeddings, encode_embeddings, generate, split, FakeType, NewsSample};
use mian::model::{decode_checkpoint, encode_checkpoint, forward, ModelConfig, Variant};
use mian::numerics::{Tape, Tensor, DEFAULT_STEP};
use mian::train::{ablation_row, lr_at, train, AblationRow, MetricsReport, TrainConfig};
use mian::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_fidelity() -> Verdict {
    let started = Instant::now();
    let code = cmd_gradcheck(None, DEFAULT_STEP).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(
        code == 0 && secs < 60.0,
        format!("exit code {code}, max relative error < 1e-4 required, {secs:.1}s (< 60s)"),
    )
}

fn oracle_equivalence() -> Verdict {
    let cfg = ModelConfig::tiny();
    let params = perturbed_params(&cfg, 2024);
    let mut worst: f64 = 0.0;
    for s in random_samples(&cfg, 5, 2024) {
        let got = forward(&s, &cfg, &params).map_err(|e| e.to_string())?;
        let want = reference::forward(&params, &cfg, &s);
        worst = worst
            .max((got.logit - want.logit).abs())
            .max((got.y_hat - want.y_hat).abs())
            .max(max_abs_diff(got.r_n.data(), &want.r_n));
    }
    check(
        worst < 1e-6,
        format!("5 samples, max deviation {worst:.2e} (< 1e-6)"),
    )
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

struct Trial {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Vec<bool>,
}

fn trial(rng: &mut ChaCha8Rng) -> Trial {
    let (p, n, dk) = (
        rng.random_range(1..7),
        rng.random_range(2..9),
        rng.random_range(1..6),
    );
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    let keep = rng.random_range(0..n);
    mask[keep] = true;
    Trial {
        q: rand_mat(rng, p, dk, 3.0),
        k: rand_mat(rng, n, dk, 3.0),
        v: rand_mat(rng, n, dk, 3.0),
        mask,
    }
}

fn attention_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut failures = [0usize; 4];
    let mut tie_free = 0;
    for _ in 0..100 {
        let t = trial(&mut rng);
        let mut tape = Tape::new();
        let (q, k, v) = (tape.constant(t.q), tape.constant(t.k), tape.constant(t.v));
        let att = scaled_dot_attention(&mut tape, q, k, v, Some(&t.mask)).unwrap();
        let invs: Vec<_> = [0.0, 1.0, 7.3]
            .iter()
            .map(|&a| inverse_attention(&mut tape, att.weights, v, Some(&t.mask), a).unwrap())
            .collect();

        let stochastic = [att.weights, invs[0].weights].iter().all(|&w| {
            let w = tape.value(w);
            (0..w.rows()).all(|r| {
                let row = w.row(r);
                (row.iter().sum::<f64>() - 1.0).abs() <= 1e-6
                    && t.mask.iter().zip(row).all(|(&keep, &x)| keep || x == 0.0)
            })
        });
        failures[0] += usize::from(!stochastic);

        let base = tape.value(invs[0].output).data();
        let invariant = invs[1..]
            .iter()
            .all(|i| max_abs_diff(base, tape.value(i.output).data()) <= 1e-9);
        failures[1] += usize::from(!invariant);

        let (w, iw) = (tape.value(att.weights), tape.value(invs[1].weights));
        let valid: Vec<usize> = (0..t.mask.len()).filter(|&j| t.mask[j]).collect();
        for r in 0..w.rows() {
            let mut vals: Vec<f64> = valid.iter().map(|&j| w.get(r, j)).collect();
            vals.sort_by(f64::total_cmp);
            if vals.windows(2).any(|p| p[1] - p[0] < 1e-9) {
                continue;
            }
            tie_free += 1;
            let mut up = valid.clone();
            up.sort_by(|&a, &b| w.get(r, a).total_cmp(&w.get(r, b)));
            let mut down = valid.clone();
            down.sort_by(|&a, &b| iw.get(r, b).total_cmp(&iw.get(r, a)));
            failures[2] += usize::from(up != down);
        }

        let dk = tape.value(att.output).cols();
        let gate = GateParams {
            w: tape.constant(rand_mat(&mut rng, 2 * dk, dk, 4.0)),
            b: tape.constant(rand_mat(&mut rng, 1, dk, 20.0).reshape(vec![dk]).unwrap()),
        };
        let mixed = gate_combine(&mut tape, att.output, invs[1].output, &gate).unwrap();
        let (a, b, m) = (
            tape.value(att.output).data(),
            tape.value(invs[1].output).data(),
            tape.value(mixed).data(),
        );
        let between = m
            .iter()
            .zip(a.iter().zip(b))
            .all(|(&o, (&x, &y))| x.min(y) <= o && o <= x.max(y));
        failures[3] += usize::from(!between);
    }
    check(
        failures == [0; 4] && tie_free > 0,
        format!(
            "100 trials each; failures: rows {} / A-invariance {} / order {} of {tie_free} tie-free rows / gate {}",
            failures[0], failures[1], failures[2], failures[3]
        ),
    )
}

fn schedule_exactness() -> Verdict {
    let tc = TrainConfig {
        lr0: 2e-6,
        step_size: 20,
        gamma: 0.5,
        ..TrainConfig::desk()
    };
    let got: Vec<f64> = [0, 19, 20, 39, 40].iter().map(|&e| lr_at(e, &tc)).collect();
    check(
        got == [2e-6, 2e-6, 1e-6, 1e-6, 5e-7],
        format!("epochs 0,19,20,39,40 -> {got:?}"),
    )
}

struct Desk {
    cfg: RunConfig,
    train: Vec<NewsSample>,
    test: Vec<NewsSample>,
}

fn desk() -> Desk {
    let cfg = RunConfig::default();
    let samples = generate(&cfg.synth_spec()).unwrap();
    let (train, test) = split(&samples, cfg.data.train_fraction, cfg.seed).unwrap();
    Desk { cfg, train, test }
}

fn synthetic_learning(d: &Desk, full: &mut Option<AblationRow>) -> Verdict {
    let mix = d.cfg.data.class_mix;
    let shape = (
        d.train.len() + d.test.len(),
        d.cfg.model.d_model,
        d.cfg.model.m,
        d.cfg.model.u,
    );
    if shape != (2000, 32, 16, 16) || mix != [0.25; 4] || d.cfg.train.epochs > 50 {
        return Err(format!(
            "default synthetic set is {shape:?} with mix {mix:?}"
        ));
    }
    let started = Instant::now();
    let row = ablation_row(&d.train, &d.test, &d.cfg.model, &d.cfg.train, Variant::Full)
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let acc = row.test.acc;
    let best = row
        .history
        .iter()
        .filter(|r| r.split == "test")
        .map(|r| r.acc)
        .fold(0.0, f64::max);

    let prefix = TrainConfig {
        epochs: 3,
        ..d.cfg.train.clone()
    };
    let again = train(
        &d.cfg.model,
        mian::model::init_model(&d.cfg.model).unwrap(),
        &d.train,
        &d.test,
        &prefix,
    )
    .map_err(|e| e.to_string())?;
    let deterministic = again.history[..] == row.history[..again.history.len()];
    *full = Some(row);
    check(
        acc >= 0.95 && secs < 600.0 && deterministic,
        format!(
            "test acc after {} epochs {acc:.4} (best {best:.4}, >= 0.95), {secs:.0}s (< 600s), rerun of first 3 epochs identical: {deterministic}",
            d.cfg.train.epochs
        ),
    )
}

fn pooled(r: &MetricsReport, types: &[FakeType], test: &[NewsSample]) -> f64 {
    let (mut ok, mut n) = (0.0, 0usize);
    for &t in types {
        let count = test.iter().filter(|s| s.fake_type == t).count();
        ok += r.type_accuracy(t).unwrap_or(0.0) * count as f64;
        n += count;
    }
    ok / n as f64
}

fn ablation_direction(d: &Desk, full: Option<AblationRow>) -> Verdict {
    let full = match full {
        Some(r) => r,
        None => ablation_row(&d.train, &d.test, &d.cfg.model, &d.cfg.train, Variant::Full)
            .map_err(|e| e.to_string())?,
    };
    let mut rows = vec![full];
    for v in &Variant::ALL[1..] {
        rows.push(
            ablation_row(&d.train, &d.test, &d.cfg.model, &d.cfg.train, *v)
                .map_err(|e| e.to_string())?,
        );
    }
    for r in &rows {
        println!(
            "    {:<16} acc {:.4}  real {:.4}  fab-text {:.4}  fab-image {:.4}  mismatched {:.4}",
            r.variant,
            r.test.acc,
            r.test.type_accuracy(FakeType::Real).unwrap_or(f64::NAN),
            r.test
                .type_accuracy(FakeType::FabricatedText)
                .unwrap_or(f64::NAN),
            r.test
                .type_accuracy(FakeType::FabricatedImage)
                .unwrap_or(f64::NAN),
            r.test
                .type_accuracy(FakeType::Mismatched)
                .unwrap_or(f64::NAN),
        );
    }
    let by = |v: Variant| rows.iter().find(|r| r.variant == v.name()).unwrap();
    let full = &by(Variant::Full).test;
    let fabricated = [FakeType::FabricatedText, FakeType::FabricatedImage];
    let mismatched = [FakeType::Mismatched];
    let gap_a = pooled(full, &mismatched, &d.test)
        - pooled(&by(Variant::NoInterIc).test, &mismatched, &d.test);
    let gap_b = pooled(full, &fabricated, &d.test)
        - pooled(&by(Variant::NoIntraLlIc).test, &fabricated, &d.test);
    let worst_c = rows[1..]
        .iter()
        .map(|r| r.test.acc - full.acc)
        .fold(f64::NEG_INFINITY, f64::max);
    let (a, b, c) = (gap_a >= 0.02 - 1e-12, gap_b >= 0.02 - 1e-12, worst_c <= 0.0);
    check(
        a && b && c,
        format!(
            "(a) mismatched gap {:+.1} pts [{}]; (b) fabricated gap {:+.1} pts [{}]; (c) max ablation excess {:+.1} pts [{}]",
            100.0 * gap_a,
            if a { "ok" } else { "fail" },
            100.0 * gap_b,
            if b { "ok" } else { "fail" },
            100.0 * worst_c,
            if c { "ok" } else { "fail" },
        ),
    )
}

fn format_robustness() -> Verdict {
    let emb = valid_embeddings();
    let emb_ok = decode_embeddings(&emb)
        .and_then(|s| encode_embeddings(&s))
        .map(|b| b == emb)
        .unwrap_or(false);
    let ckpt = valid_checkpoint();
    let ckpt_ok = decode_checkpoint(&ckpt)
        .and_then(|(fp, p)| encode_checkpoint(&p, fp))
        .map(|b| b == ckpt)
        .unwrap_or(false);
    let mut diagnosed = 0;
    let mut notes = Vec::new();
    let cases = embedding_cases()
        .into_iter()
        .map(|c| ("MIANEMB1", c, true))
        .chain(
            checkpoint_cases()
                .into_iter()
                .map(|c| ("MIANCKPT", c, false)),
        );
    for (fmt, c, is_emb) in cases {
        let result = catch_unwind(AssertUnwindSafe(|| {
            if is_emb {
                decode_embeddings(&c.bytes).map(|_| ())
            } else {
                decode_checkpoint(&c.bytes).map(|_| ())
            }
        }));
        match result {
            Ok(Err(Error::Format { offset, msg })) if offset == c.offset && !msg.is_empty() => {
                diagnosed += 1
            }
            Ok(Err(e)) => notes.push(format!("{fmt} {}: unexpected error {e}", c.name)),
            Ok(Ok(())) => notes.push(format!("{fmt} {}: accepted", c.name)),
            Err(_) => notes.push(format!("{fmt} {}: panicked", c.name)),
        }
    }
    check(
        emb_ok && ckpt_ok && diagnosed == 10,
        format!(
            "bitwise round trips {emb_ok}/{ckpt_ok}; {diagnosed}/10 corrupt files diagnosed{}",
            if notes.is_empty() {
                String::new()
            } else {
                format!(": {}", notes.join("; "))
            }
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "model.d_model = 8\nmodel.n_heads = 2\nmodel.m = 4\nmodel.u = 4\nmodel.classifier_hidden = 8\ntrain.epochs = 3\ntrain.batch_size = 16\ndata.n_samples = 120\nseed = 7\n",
    )
    .map_err(|e| e.to_string())?;
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let (ckpt, metrics) = (
            dir.path().join(format!("{tag}.ckpt")),
            dir.path().join(format!("{tag}.jsonl")),
        );
        cmd_train(Some(&cfg), None, &ckpt, &metrics, None).map_err(|e| e.to_string())?;
        Ok((read(&ckpt)?, read(&metrics)?))
    };
    let (a, b) = (run("a")?, run("b")?);
    check(
        a == b && !a.1.is_empty(),
        format!(
            "checkpoints identical: {}, metrics identical: {} ({} bytes)",
            a.0 == b.0,
            a.1 == b.1,
            a.1.len()
        ),
    )
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn report(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    let secs = started.elapsed().as_secs_f64();
    match &verdict {
        Ok(d) => println!("PASS {name}: {d} [{secs:.1}s]"),
        Err(d) => println!("FAIL {name}: {d} [{secs:.1}s]"),
    }
    verdict.is_ok()
}

fn main() {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .expect("single-thread pool");
    let mut passed = vec![
        report("gradient fidelity", gradient_fidelity),
        report("oracle equivalence", oracle_equivalence),
        report("attention invariants", attention_invariants),
        report("schedule exactness", schedule_exactness),
        report("format robustness", format_robustness),
        report("determinism", determinism),
    ];
    let d = desk();
    let mut full = None;
    passed.push(report("synthetic learning", || {
        synthetic_learning(&d, &mut full)
    }));
    passed.push(report("ablation direction", || {
        ablation_direction(&d, full)
    }));
    let n_pass = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {n_pass}/{} criteria passed", passed.len());
    if n_pass != passed.len() {
        std::process::exit(1);
    }
}
