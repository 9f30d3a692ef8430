//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails. Criteria listed with a reason in `UNATTAINABLE` still
//! run at full tolerance and still print FAIL; only they are allowed to fail
//! without failing the target.

mod support;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use cornvit::backbone::{attention_block, block_prefix, BackboneConfig, StageModel, TokenMap};
use cornvit::cascade::{infer_hierarchical, joint_accuracy_estimate};
use cornvit::config::DEFAULT_MAX_UPLOAD;
use cornvit::data::synthetic::{generate, SyntheticConfig};
use cornvit::data::{split_manifest, AugmentConfig, DatasetManifest, ManifestRecord, Split, SplitRatios};
use cornvit::labels::Stage;
use cornvit::metrics::{report, ClassificationReport};
use cornvit::service::{router, InferenceEngine};
use cornvit::tensor::{Conv2dParams, GradTape, Tensor, Var};
use cornvit::training::{
    cosine_lr, decode_checkpoint, encode_checkpoint, evaluate, file_sha256, train_stage, TrainConfig,
};
use http_body_util::BodyExt;
use serde_json::Value;
use sha2::{Digest, Sha256};
use support::gradcheck::{max_relative_error, projected, random_tensor, rng};
use support::service::*;
use tower::ServiceExt;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

const UNATTAINABLE: &[(&str, &str)] = &[
    (
        "metrics oracle",
        "published Stage 3 weighted recall/F1 contradict the published accuracy and per-class rows",
    ),
    (
        "joint accuracy",
        "0.9376 x 0.9411 x 0.9112 = 0.80402, 1.02e-3 from the published 0.803; the stated 0.8037 is not the product",
    ),
    ("split conformance", "published Stage 1 val/test 555+535 / 554+536 cannot come from the floor rule, which gives 1089"),
];

fn close(name: &str, got: f64, want: f64, tol: f64, failures: &mut Vec<String>) {
    if (got - want).abs() > tol {
        failures.push(format!("{name}: {got:.6} vs {want}"));
    }
}

// ---------------------------------------------------------------- metrics

struct Table {
    stage: &'static str,
    classes: [&'static str; 2],
    counts: [[usize; 2]; 2],
    rows: [[f64; 3]; 2],
    accuracy: f64,
    macro_avg: [f64; 3],
    weighted: [f64; 3],
    supports: [u64; 2],
    /// Cells documented as misprinted, reported but not scored.
    exempt: &'static [&'static str],
}

const TABLES: [Table; 3] = [
    Table {
        stage: "stage 1",
        classes: ["pure", "impure"],
        counts: [[521, 33], [35, 501]],
        rows: [[0.9370, 0.9404, 0.9387], [0.9382, 0.9347, 0.9365]],
        accuracy: 0.9376,
        macro_avg: [0.9376, 0.9375, 0.9376],
        weighted: [0.9376, 0.9376, 0.9376],
        supports: [554, 536],
        exempt: &[],
    },
    Table {
        stage: "stage 2",
        classes: ["flat", "round"],
        counts: [[279, 15], [19, 265]],
        rows: [[0.9362, 0.9489, 0.9425], [0.9464, 0.9330, 0.9396]],
        accuracy: 0.9411,
        macro_avg: [0.9413, 0.9409, 0.9410],
        weighted: [0.9413, 0.9405, 0.9413],
        supports: [294, 284],
        exempt: &["weighted recall"],
    },
    Table {
        stage: "stage 3",
        classes: ["embryo_down", "embryo_up"],
        counts: [[104, 15], [11, 163]],
        rows: [[0.9043, 0.8739, 0.8890], [0.9157, 0.9367, 0.9261]],
        accuracy: 0.9112,
        macro_avg: [0.9100, 0.9053, 0.9076],
        weighted: [0.9110, 0.9102, 0.9100],
        supports: [119, 174],
        exempt: &[],
    },
];

fn report_from_counts(counts: [[usize; 2]; 2], classes: [&str; 2]) -> ClassificationReport {
    let (mut preds, mut truth) = (Vec::new(), Vec::new());
    for (t, row) in counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            preds.extend(std::iter::repeat(p).take(n));
            truth.extend(std::iter::repeat(t).take(n));
        }
    }
    report(&preds, &truth, &classes).unwrap()
}

fn metrics_oracle() -> Check {
    const TOL: f64 = 5e-4;
    let mut failures = Vec::new();
    let mut exempted = Vec::new();
    let mut cells = 0;
    for table in &TABLES {
        let r = report_from_counts(table.counts, table.classes);
        let mut check = |cell: String, got: f64, want: f64| {
            if table.exempt.contains(&cell.as_str()) {
                exempted.push(format!("{} {cell} {got:.4} vs {want}", table.stage));
                return;
            }
            cells += 1;
            close(&format!("{} {cell}", table.stage), got, want, TOL, &mut failures);
        };
        for (k, class) in table.classes.iter().enumerate() {
            let m = &r.per_class[k];
            check(format!("{class} precision"), m.precision, table.rows[k][0]);
            check(format!("{class} recall"), m.recall, table.rows[k][1]);
            check(format!("{class} f1"), m.f1, table.rows[k][2]);
        }
        check("accuracy".into(), r.accuracy, table.accuracy);
        for (avg, want, label) in [(&r.macro_avg, table.macro_avg, "macro"), (&r.weighted_avg, table.weighted, "weighted")] {
            check(format!("{label} precision"), avg.precision, want[0]);
            check(format!("{label} recall"), avg.recall, want[1]);
            check(format!("{label} f1"), avg.f1, want[2]);
        }
        let supports: Vec<u64> = r.per_class.iter().map(|m| m.support).collect();
        if supports != table.supports {
            failures.push(format!("{} supports {supports:?}", table.stage));
        }
    }
    let exempt = format!("exempt: {}", exempted.join(", "));
    if failures.is_empty() {
        Ok(format!("{cells} cells within {TOL}; {exempt}"))
    } else {
        Err(format!("{} of {cells} cells off by more than {TOL}: {}; {exempt}", failures.len(), failures.join("; ")))
    }
}

fn joint_accuracy() -> Check {
    let j = joint_accuracy_estimate(0.9376, 0.9411, 0.9112).map_err(|e| e.to_string())?;
    let oracle = 0.9376 * 0.9411 * 0.9112;
    if (j - 0.803).abs() <= 1e-3 && (j - oracle).abs() < 1e-15 {
        Ok(format!("{j:.6} vs 0.803"))
    } else {
        Err(format!("{j:.6} vs 0.803"))
    }
}

// -------------------------------------------------------------- gradients

const GRAD_SEEDS: u64 = 10;
const GRAD_TOL: f64 = 1e-4;

fn worst(inputs: impl Fn(u64) -> Vec<Tensor<f64>>, f: impl Fn(&GradTape<f64>, &[Var<f64>], u64) -> Var<f64>) -> f64 {
    (0..GRAD_SEEDS)
        .map(|seed| max_relative_error(&|t: &GradTape<f64>, v: &[Var<f64>]| f(t, v, seed), &inputs(seed)))
        .fold(0.0, f64::max)
}

fn attention_block_worst() -> f64 {
    let mut cfg = BackboneConfig::tiny();
    cfg.stages[0].num_heads = 2;
    (0..GRAD_SEEDS)
        .map(|seed| {
            let mut m = StageModel::<f64>::new(cfg.clone(), seed).unwrap();
            let mut r = rng(5000 + seed);
            for name in m.params().names().to_vec() {
                let shape = m.params().get(&name).unwrap().shape().to_vec();
                m.params_mut().set(&name, random_tensor(&mut r, &shape, 0.5)).unwrap();
            }
            let prefix = format!("{}.", block_prefix(0, 0));
            let block: Vec<usize> =
                (0..m.params().len()).filter(|&i| m.params().names()[i].starts_with(&prefix)).collect();
            let mut inputs = vec![random_tensor(&mut r, &[1, 8, 4, 3], 1.0)];
            inputs.extend(block.iter().map(|&i| m.params().tensor(i).clone()));
            let f = |tape: &GradTape<f64>, v: &[Var<f64>]| {
                let mut vars: Vec<Var<f64>> = m.params().iter().map(|(_, t)| tape.constant(t.clone())).collect();
                for (slot, var) in block.iter().zip(&v[1..]) {
                    vars[*slot] = var.clone();
                }
                let params = m.params().bind_vars(vars).unwrap();
                let flat = tape.reshape(&v[0], [1, 8, 12]).unwrap();
                let input = TokenMap { tokens: tape.permute(&flat, &[0, 2, 1]).unwrap(), grid: (4, 3) };
                let out = attention_block(tape, &params, m.config(), 0, 0, &input).unwrap();
                projected(tape, &out.tokens, seed)
            };
            max_relative_error(&f, &inputs)
        })
        .fold(0.0, f64::max)
}

fn gradients() -> Check {
    let t3 = |s: u64, shapes: &[&[usize]], scales: &[f64]| {
        let mut r = rng(s);
        shapes.iter().zip(scales).map(|(sh, &sc)| random_tensor(&mut r, sh, sc)).collect::<Vec<_>>()
    };
    let results = [
        (
            "conv2d",
            worst(
                |s| t3(s, &[&[2, 3, 7, 6], &[4, 3, 3, 3], &[4]], &[1.0, 0.5, 0.5]),
                |t, v, s| projected(t, &t.conv2d(&v[0], &v[1], Some(&v[2]), Conv2dParams::square(2, 1)).unwrap(), s),
            ),
        ),
        (
            "conv2d k7/s4",
            worst(
                |s| t3(100 + s, &[&[1, 3, 12, 12], &[2, 3, 7, 7]], &[1.0, 0.3]),
                |t, v, s| projected(t, &t.conv2d(&v[0], &v[1], None, Conv2dParams::square(4, 2)).unwrap(), s),
            ),
        ),
        (
            "depthwise conv2d",
            worst(
                |s| t3(200 + s, &[&[2, 4, 6, 6], &[4, 1, 3, 3]], &[1.0, 0.5]),
                |t, v, s| {
                    let p = Conv2dParams::square(2, 1).with_groups(4);
                    projected(t, &t.conv2d(&v[0], &v[1], None, p).unwrap(), s)
                },
            ),
        ),
        (
            "linear",
            worst(
                |s| t3(300 + s, &[&[2, 3, 5], &[4, 5], &[4]], &[1.0, 1.0, 1.0]),
                |t, v, s| projected(t, &t.linear(&v[0], &v[1], Some(&v[2])).unwrap(), s),
            ),
        ),
        (
            "layer_norm",
            worst(
                |s| t3(400 + s, &[&[3, 6], &[6], &[6]], &[2.0, 1.0, 1.0]),
                |t, v, s| projected(t, &t.layer_norm(&v[0], &v[1], &v[2], 1e-5).unwrap(), s),
            ),
        ),
        ("softmax", worst(|s| t3(500 + s, &[&[4, 5]], &[3.0]), |t, v, s| projected(t, &t.softmax(&v[0]).unwrap(), s))),
        ("gelu", worst(|s| t3(600 + s, &[&[3, 7]], &[4.0]), |t, v, s| projected(t, &t.gelu(&v[0]).unwrap(), s))),
        ("attention block", attention_block_worst()),
        (
            "soft_cross_entropy",
            worst(
                |s| t3(900 + s, &[&[3, 2]], &[3.0]),
                |t, v, _| {
                    let targets = Tensor::new([3, 2], vec![0.95, 0.05, 0.05, 0.95, 0.3, 0.7]).unwrap();
                    t.soft_cross_entropy(&v[0], &targets).unwrap()
                },
            ),
        ),
    ];
    let summary: Vec<String> = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    let line = format!("{GRAD_SEEDS} seeds each, max rel err: {}", summary.join(", "));
    if results.iter().all(|(_, e)| *e < GRAD_TOL) {
        Ok(line)
    } else {
        Err(line)
    }
}

// ----------------------------------------------------------------- shapes

fn shapes() -> Check {
    let cfg = BackboneConfig::cvt13();
    let model = StageModel::<f32>::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let x = Tensor::from_fn([1, 3, 384, 384], |i| ((i % 89) as f32 / 44.0) - 1.0);
    let (logits, trace) = model.forward_traced(&x).map_err(|e| e.to_string())?;
    let mut side = 384;
    let mut expected = Vec::new();
    for s in &cfg.stages {
        side = (side + 2 * s.embed_pad - s.embed_kernel) / s.embed_stride + 1;
        expected.push((side, side));
    }
    let grids: Vec<_> = trace.iter().map(|t| t.grid).collect();
    let line = format!("grids {grids:?}, logits {:?}", logits.shape());
    if grids == expected && grids == [(96, 96), (48, 48), (24, 24)] && logits.shape() == [1, 2] {
        Ok(line)
    } else {
        Err(format!("{line}, expected {expected:?} and [1, 2]"))
    }
}

// --------------------------------------------------------------- training

fn synthetic_config(head_only: bool) -> TrainConfig {
    // Vertical flips would swap the two synthetic classes.
    let augment = AugmentConfig { vflip_prob: 0.0, ..Default::default() };
    if head_only {
        // A frozen random backbone needs a larger step than the pretrained one the default assumes.
        TrainConfig { head_only, augment, base_lr: 1e-3, warmup_lr_init: 1e-4, min_lr: 1e-5, ..Default::default() }
    } else {
        TrainConfig { head_only, augment, ..Default::default() }
    }
}

fn synthetic_training() -> Check {
    let set = generate(&SyntheticConfig::default());
    let mut parts = Vec::new();
    let mut ok = true;
    for (head_only, threshold, label) in [(false, 0.95, "all parameters"), (true, 0.80, "head only")] {
        let start = Instant::now();
        let model = StageModel::<f32>::new(BackboneConfig::tiny(), 0).map_err(|e| e.to_string())?;
        let cfg = synthetic_config(head_only);
        let out = train_stage(Stage::Purity, model, &set.train, &set.val, &cfg).map_err(|e| e.to_string())?;
        let acc = evaluate(&out.model, Stage::Purity, &set.test, 64).map_err(|e| e.to_string())?.accuracy;
        let took = start.elapsed();
        ok &= acc >= threshold && took < Duration::from_secs(300) && out.history.len() == 20;
        parts.push(format!("{label} test acc {acc:.3} (>= {threshold}) in {:.0}s", took.as_secs_f64()));
    }
    let line = parts.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn scheduler() -> Check {
    let cfg = TrainConfig::default();
    let lr = |e: f64| cosine_lr(e, &cfg).unwrap();
    let exact = lr(0.0) == 1e-5 && lr(5.0) == 1e-4 && lr(20.0) == 1e-6;
    let mid = lr(12.5);
    let grid: Vec<f64> = (0..=15_000).map(|i| 5.0 + i as f64 / 1000.0).collect();
    let decreasing = grid.windows(2).all(|w| lr(w[1]) < lr(w[0]));
    let line = format!("lr(0, 5, 20) = ({:e}, {:e}, {:e}), lr(12.5) = {mid:e}", lr(0.0), lr(5.0), lr(20.0));
    if exact && (mid - 5.05e-5).abs() < 1e-9 && decreasing {
        Ok(format!("{line}, strictly decreasing on (5, 20]"))
    } else {
        Err(format!("{line}, decreasing: {decreasing}"))
    }
}

// ------------------------------------------------------------------ split

fn split() -> Check {
    let cases = [
        ("stage 1", Stage::Purity, [3570, 3695], [5085, 1090, 1090]),
        ("stage 2", Stage::Shape, [1962, 1897], [2703, 578, 578]),
        ("stage 3", Stage::Embryo, [799, 1161], [1374, 293, 293]),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, stage, counts, want) in cases {
        let records = (0..2)
            .flat_map(|label| {
                (0..counts[label]).map(move |i| ManifestRecord {
                    path: format!("{label}/{i}.png").into(),
                    label,
                    split: None,
                })
            })
            .collect();
        let manifest = DatasetManifest::new(stage, records).map_err(|e| e.to_string())?;
        let split = split_manifest(&manifest, SplitRatios::default(), 0).map_err(|e| e.to_string())?;
        let got = Split::ALL.map(|s| split.split_counts(s).iter().sum::<usize>());
        ok &= got == want;
        parts.push(format!("{name} {}/{}/{} (want {}/{}/{})", got[0], got[1], got[2], want[0], want[1], want[2]));
    }
    let line = parts.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

// ---------------------------------------------------------------- cascade

fn cascade() -> Check {
    let mut shapes = BTreeSet::new();
    for bits in 0..8usize {
        let classes = [bits & 1, (bits >> 1) & 1, (bits >> 2) & 1];
        let stubs = StubSet::new(classes);
        let [f1, f2, f3] = &stubs.stubs;
        let pre = cornvit::cascade::ValPreprocessor { resolution: 8 };
        let label =
            infer_hierarchical(f1.as_ref(), f2.as_ref(), f3.as_ref(), &pre, &test_image(bits as u32, 8)).unwrap();
        // Algorithm line by line: stage 1 always, stage 2 iff pure, stage 3 iff pure and flat.
        let pure = classes[0] == 1;
        let flat = pure && classes[1] == 0;
        let expected_calls = [1, usize::from(pure), usize::from(flat)];
        if stubs.calls() != expected_calls {
            return Err(format!("outcomes {classes:?}: calls {:?}, expected {expected_calls:?}", stubs.calls()));
        }
        if label.decisions.len() != expected_calls.iter().sum::<usize>() {
            return Err(format!("outcomes {classes:?}: {} decisions", label.decisions.len()));
        }
        shapes.insert(label.summary());
    }
    let want: BTreeSet<String> =
        ["(impure, –, –)", "(pure, round, –)", "(pure, flat, embryo_up)", "(pure, flat, embryo_down)"]
            .map(String::from)
            .into();
    if shapes == want {
        Ok(format!("8 combinations -> {} shapes, skipped stages never called", shapes.len()))
    } else {
        Err(format!("shapes {shapes:?}"))
    }
}

// ------------------------------------------------------------ determinism

fn determinism() -> Check {
    let set = generate(&SyntheticConfig { train: 64, val: 16, test: 16, ..Default::default() });
    let cfg = TrainConfig { epochs: 3, warmup_epochs: 1, head_only: false, ..synthetic_config(false) };
    let run = || {
        let model = StageModel::<f32>::new(BackboneConfig::tiny(), 7).unwrap();
        let out = train_stage(Stage::Embryo, model, &set.train, &set.val, &cfg).unwrap();
        let bytes = encode_checkpoint(&out.model, Some(&out.history));
        (out.history, hex::encode(Sha256::digest(&bytes)), bytes, out.model)
    };
    let (h1, d1, bytes, model) = run();
    let (h2, d2, _, _) = run();
    if h1 != h2 || d1 != d2 {
        return Err(format!("runs differ: {} vs {}", &d1[..12], &d2[..12]));
    }
    let restored = decode_checkpoint(&bytes).map_err(|e| e.to_string())?.model;
    let x = Tensor::stack(&[cornvit::data::val_transforms(&set.test[0].image.load().unwrap(), 64)]).unwrap();
    let (a, b) = (model.forward(&x).unwrap(), restored.forward(&x).unwrap());
    let bitwise = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    if bitwise {
        Ok(format!("two runs share checkpoint sha256 {}…; reload forward bit-identical", &d1[..16]))
    } else {
        Err("reloaded forward differs".into())
    }
}

// ---------------------------------------------------------------- service

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn upload(body: Vec<u8>) -> Request<Body> {
    Request::post("/analyze")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn service_contract() -> Check {
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let image = png(&test_image(1, 24));
    for (classes, file) in [
        ([0, 1, 1], "impure.json"),
        ([1, 1, 0], "pure_round.json"),
        ([1, 0, 1], "pure_flat_up.json"),
        ([1, 0, 0], "pure_flat_down.json"),
    ] {
        let app = router(Arc::new(StubSet::new(classes).engine()), DEFAULT_MAX_UPLOAD);
        let (status, body) = send(&app, upload(multipart(&[("image", "k.png", &image)]))).await;
        let golden: Value = serde_json::from_str(&std::fs::read_to_string(golden_dir.join(file)).unwrap()).unwrap();
        if status != StatusCode::OK || body != golden {
            return Err(format!("{file}: status {status}, body differs from golden"));
        }
    }

    let stubs = StubSet::new([1, 0, 1]);
    let app = router(Arc::new(stubs.engine()), 4096);
    let errors = [
        (multipart(&[("image", "a.txt", b"plain text")]), StatusCode::BAD_REQUEST, "undecodable_image"),
        (multipart(&[("other", "k.png", &image)]), StatusCode::BAD_REQUEST, "missing_image"),
        (multipart(&[("image", "big", &vec![0u8; 16 * 1024])]), StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large"),
    ];
    for (body, want_status, want_code) in errors {
        let (status, body) = send(&app, upload(body)).await;
        if status != want_status || body["error"] != want_code {
            return Err(format!("expected {want_status} {want_code}, got {status} {body}"));
        }
    }
    if stubs.calls() != [0, 0, 0] {
        return Err("a rejected upload reached a model".into());
    }

    let dir = tempfile::tempdir().unwrap();
    let paths = write_checkpoints(dir.path());
    let hashes = || paths.iter().map(|p| file_sha256(p).unwrap()).collect::<Vec<_>>();
    let before = hashes();
    let engine = InferenceEngine::from_checkpoints(paths.each_ref().map(|p| p.as_path())).unwrap();
    let sequential: Vec<Value> =
        (0..8u32).map(|i| serde_json::to_value(engine.analyze_image(&test_image(i, 24)).unwrap()).unwrap()).collect();
    let app = router(Arc::new(engine), DEFAULT_MAX_UPLOAD);
    let uploads: Vec<Vec<u8>> = (0..8u32).map(|i| multipart(&[("image", "k.png", &png(&test_image(i, 24)))])).collect();
    for i in 0..1000 {
        let (status, body) = send(&app, upload(uploads[i % 8].clone())).await;
        if status != StatusCode::OK || body != sequential[i % 8] {
            return Err(format!("soak request {i} diverged"));
        }
    }
    if hashes() != before {
        return Err("checkpoint files changed during the soak".into());
    }
    let handles: Vec<_> = (0..32)
        .map(|i| {
            let (app, body) = (app.clone(), uploads[i % 8].clone());
            tokio::spawn(async move { send(&app, upload(body)).await })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let (status, body) = h.await.unwrap();
        if status != StatusCode::OK || body != sequential[i % 8] {
            return Err(format!("concurrent request {i} differs from the sequential result"));
        }
    }
    Ok("4 golden shapes, 3 error paths, 1000-request soak with unchanged hashes, 32 concurrent = sequential".into())
}

fn service() -> Check {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    rt.block_on(service_contract())
}

// ------------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 10] = [
        ("metrics oracle", metrics_oracle),
        ("joint accuracy", joint_accuracy),
        ("gradient verification", gradients),
        ("shape conformance", shapes),
        ("synthetic training", synthetic_training),
        ("scheduler conformance", scheduler),
        ("split conformance", split),
        ("cascade semantics", cascade),
        ("determinism and persistence", determinism),
        ("service contract", service),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => match UNATTAINABLE.iter().find(|(n, _)| *n == name) {
                Some((_, why)) => println!("FAIL  {name} [{secs:.1}s]: {detail} (unattainable: {why})"),
                None => {
                    unexpected += 1;
                    println!("FAIL  {name} [{secs:.1}s]: {detail}");
                }
            },
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
