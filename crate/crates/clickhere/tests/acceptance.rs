//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The process fails when a property criterion fails. The three criteria
//! measured on trained models (variant ordering, blank-input ordering,
//! sweep) are reported but only fail the process under
//! `CLICKHERE_ACCEPTANCE_STRICT=1`.
//! `CLICKHERE_ACCEPTANCE_SKIP_TRAINING=1` skips them.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use clickhere::config::ProjectConfig;
use clickhere::pipeline::init_model;
use clickhere_core::autodiff::Graph;
use clickhere_core::eval::{ablation_eval, evaluate, sensitivity_sweep, EvalOptions};
use clickhere_core::geometry::{geodesic_distance, rotation_from_viewpoint, RotationMatrix, Viewpoint, ViewpointBins};
use clickhere_core::gradcheck::{check_model, STEP};
use clickhere_core::keypoint::{KeypointClassVector, KeypointMap};
use clickhere_core::metrics::{acc_at, acc_curve_nauc, med_err};
use clickhere_core::model::{fixed_attention_map, FixedAttention, Model, ModelConfig, ModelInput, ModelVariant};
use clickhere_core::objective::{cross_entropy, structure_aware_loss, structure_aware_loss_value};
use clickhere_core::render::{catalog, flip_augment, generate_dataset, Dataset, Domain, GenerationConfig, Instance, Split};
use clickhere_core::tensor::Tensor;
use clickhere_core::train::{train, StageData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{snapshot, SMALL};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Suite {
    failed_required: Vec<&'static str>,
    failed_trained: Vec<&'static str>,
}

impl Suite {
    fn run(&mut self, name: &'static str, trained: bool, limit: Duration, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let o = f();
        let took = t.elapsed();
        let in_time = took <= limit;
        let pass = o.pass && in_time;
        let time = format!("{:.1}s of {}s", took.as_secs_f64(), limit.as_secs());
        let time = if in_time { time } else { format!("{time}, over time") };
        println!("{} {name}: {} ({time})", if pass { "PASS" } else { "FAIL" }, o.detail);
        if !pass {
            if trained {
                self.failed_trained.push(name);
            } else {
                self.failed_required.push(name);
            }
        }
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

// gradient fidelity

fn jittered_model(variant: ModelVariant, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(ModelConfig::tiny().with_variant(variant), &mut rng).unwrap();
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for name in names {
        for v in model.params.get_mut(&name).unwrap().data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    model
}

fn gradient_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for variant in ModelVariant::ALL {
        for batch in 0..5 {
            let model = jittered_model(variant, 100 + batch);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + batch);
            let c = &model.config;
            let s = c.image_size;
            let image = Tensor::new(&[3, s, s], (0..3 * s * s).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let obj = rng.random_range(0..c.objects.len());
            let kp = rng.random_range(0..c.objects[obj].keypoints.len());
            let (map, class) = model
                .encode_keypoint(rng.random_range(0..s), rng.random_range(0..s), obj, kp)
                .unwrap();
            let n = c.n_bins;
            let target = ViewpointBins::from_array(std::array::from_fn(|_| rng.random_range(0..n)));
            let input = ModelInput {
                image: &image,
                map: &map,
                class: &class,
                object: obj,
            };
            let r = check_model(&model, &input, target, STEP).unwrap();
            if r.checked != model.parameter_count() {
                return outcome(false, format!("{variant}: checked {} of {}", r.checked, model.parameter_count()));
            }
            checked += r.checked;
            worst = worst.max(r.max_rel_err);
        }
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} < 1e-4 over {checked} parameter checks, 6 variants x 5 batches"),
    )
}

// attention invariants

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = None;
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    for i in 0..10_000u64 {
        if i % 1000 == 0 {
            model = Some(Model::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(i)).unwrap());
        }
        let m = model.as_ref().unwrap();
        let c = &m.config;
        let s = c.image_size;
        let img = Tensor::new(&[3, s, s], (0..3 * s * s).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let obj = rng.random_range(0..c.objects.len());
        let kp = rng.random_range(0..c.objects[obj].keypoints.len());
        let w = m
            .predict_click(&img, rng.random_range(0..s), rng.random_range(0..s), kp, obj)
            .unwrap()
            .weight_map
            .unwrap();
        negative += w.values.iter().filter(|v| **v < 0.0).count();
        worst = worst.max((w.values.iter().sum::<f64>() - 1.0).abs());
    }

    let m = model.unwrap();
    let c = &m.config;
    let (_, h, w) = c.attention_grid();
    let uniform = fixed_attention_map(FixedAttention::Uniform, h, w);
    let mut blank_ok = true;
    for _ in 0..20 {
        let s = c.image_size;
        let img = Tensor::new(&[3, s, s], (0..3 * s * s).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let p = m
            .predict(&ModelInput {
                image: &img,
                map: &KeypointMap::blank(s, c.map_kind),
                class: &KeypointClassVector::blank(c.total_keypoint_classes()),
                object: rng.random_range(0..c.objects.len()),
            })
            .unwrap();
        blank_ok &= p.weight_map.as_ref() == Some(&uniform);
    }
    outcome(
        negative == 0 && worst <= 1e-10 && blank_ok,
        format!(
            "10000 forwards: {negative} negative weights, max |sum - 1| = {worst:.1e}; blank-blank uniform exactly: {blank_ok}"
        ),
    )
}

// metric oracles

type M3 = [[f64; 3]; 3];
const I3: M3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mul(a: &M3, b: &M3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn lin(a: &M3, x: f64, b: &M3, y: f64) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| x * a[i][j] + y * b[i][j]))
}

fn inv(a: &M3) -> M3 {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det
        })
    })
}

/// Denman-Beavers square root.
fn sqrtm(a: &M3) -> M3 {
    let (mut y, mut z) = (*a, I3);
    for _ in 0..100 {
        let (yi, zi) = (inv(&y), inv(&z));
        let ny = lin(&y, 0.5, &zi, 0.5);
        z = lin(&z, 0.5, &yi, 0.5);
        let done = (0..3).all(|i| (0..3).all(|j| (ny[i][j] - y[i][j]).abs() < 1e-16));
        y = ny;
        if done {
            break;
        }
    }
    y
}

/// Inverse scaling and squaring, then the Mercator series.
fn logm(a: &M3) -> M3 {
    let k = 8;
    let mut r = *a;
    for _ in 0..k {
        r = sqrtm(&r);
    }
    let x = lin(&r, 1.0, &I3, -1.0);
    let (mut term, mut sum) = (x, [[0.0; 3]; 3]);
    for n in 1..40 {
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        sum = lin(&sum, 1.0, &term, sign / n as f64);
        term = mul(&term, &x);
    }
    lin(&sum, f64::from(1 << k), &I3, 0.0)
}

fn oracle_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let l = logm(&mul(&a.transpose().0, &b.0));
    (l.iter().flatten().map(|v| v * v).sum::<f64>() / 2.0).sqrt()
}

fn random_viewpoint(rng: &mut ChaCha8Rng) -> Viewpoint {
    Viewpoint::new(rng.random_range(0.0..360.0), rng.random_range(-90.0..90.0), rng.random_range(0.0..360.0))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut worst, mut pairs): (f64, usize) = (0.0, 0);
    while pairs < 1000 {
        let a = rotation_from_viewpoint(&random_viewpoint(&mut rng));
        let b = rotation_from_viewpoint(&random_viewpoint(&mut rng));
        let d = geodesic_distance(&a, &b).unwrap();
        // The principal logarithm is ill-conditioned at a half turn.
        if d > PI - 1e-3 {
            continue;
        }
        worst = worst.max((d - oracle_angle(&a, &b)).abs());
        pairs += 1;
    }

    let e: Vec<f64> = [3.0f64, 12.0, 29.0, 30.0, 31.0, 90.0].iter().map(|d| d.to_radians()).collect();
    let fixtures = [
        acc_at(&e, PI / 6.0).unwrap() == 0.5,
        acc_at(&e, 0.0).unwrap() == 0.0,
        acc_at(&e, PI).unwrap() == 1.0,
        (med_err(&e).unwrap() - 29.5).abs() < 1e-12,
        acc_curve_nauc(&[0.0, PI / 8.0], &[0.0, PI / 8.0, PI / 4.0])
            .map(|c| c.accuracy == [0.0, 0.5, 1.0] && (c.nauc - 0.5).abs() < 1e-15)
            .unwrap(),
        acc_curve_nauc(&[0.0, 0.0, PI], &[0.0, PI / 4.0])
            .map(|c| (c.nauc - 1.0 / 3.0).abs() < 1e-15)
            .unwrap(),
    ];
    let fixtures_ok = fixtures.iter().filter(|f| **f).count();
    outcome(
        worst < 1e-8 && fixtures_ok == fixtures.len(),
        format!(
            "geodesic vs matrix log max |diff| {worst:.1e} < 1e-8 on {pairs} pairs; fixtures {fixtures_ok}/{}",
            fixtures.len()
        ),
    )
}

// loss limit

fn loss_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut equal = 0;
    for _ in 0..100 {
        let logits: Vec<f64> = (0..24).map(|_| rng.random_range(-10.0..10.0)).collect();
        let gt = rng.random_range(0..24);
        let mut g = Graph::new();
        let v = g.input(Tensor::vector(logits.clone())).unwrap();
        let sa = structure_aware_loss(&mut g, v, gt, 1e-6).unwrap();
        let ce = cross_entropy(&mut g, v, gt).unwrap();
        let (a, b) = (g.value(sa).data()[0], g.value(ce).data()[0]);
        let direct = structure_aware_loss_value(&logits, gt, 1e-6).unwrap();
        if a.to_bits() == b.to_bits() && direct.to_bits() == b.to_bits() {
            equal += 1;
        }
    }
    outcome(equal == 100, format!("{equal}/100 bitwise equal to cross-entropy at t = 1e-6, N = 24"))
}

// flip exactness

fn flip_exactness() -> Outcome {
    let g = GenerationConfig {
        domain: Domain::Realish,
        renders_per_class: 40,
        seed: 41,
        ..GenerationConfig::default()
    };
    let ds = generate_dataset(&g, &catalog::builtin_objects()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut exact = 0;
    for _ in 0..1000 {
        let inst = &ds.instances[rng.random_range(0..ds.instances.len())];
        let mirror = &ds.mirror[inst.object];
        let twice = flip_augment(&flip_augment(inst, mirror), mirror);
        if bits(&twice.image.data) == bits(&inst.image.data) && &twice == inst {
            exact += 1;
        }
    }
    let tables_ok = ds.mirror.iter().all(|t| t.iter().enumerate().all(|(k, &m)| m < t.len() && t[m] == k));
    let classes: usize = ds.mirror.iter().map(Vec::len).sum();
    outcome(
        exact == 1000 && tables_ok,
        format!("flip twice identity on {exact}/1000 instances; mirror involution over {classes} keypoint classes: {tables_ok}"),
    )
}

// determinism

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_clickhere"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |r: &str| dir.join(r).display().to_string();
    std::fs::write(dir.join("config.toml"), SMALL).map_err(|e| e.to_string())?;
    cli(&["gen-data", "--config", &p("config.toml"), "--out", &p("data")])?;
    cli(&["train", "--config", &p("config.toml"), "--data", &p("data"), "--out", &p("out/model.ckpt")])?;
    cli(&[
        "eval",
        "--config",
        &p("config.toml"),
        "--checkpoint",
        &p("out/model.ckpt"),
        "--data",
        &p("data/test"),
        "--out",
        &p("out/eval"),
    ])?;
    Ok(snapshot(dir))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (cli_pipeline(a.path()), cli_pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&str> = x
                .iter()
                .zip(&y)
                .filter(|(p, q)| p != q)
                .map(|(p, _)| p.0.as_str())
                .collect();
            let same = x.len() == y.len() && differing.is_empty();
            outcome(
                same,
                format!("gen-data, train, eval twice: {} files, differing {differing:?}", x.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

// trained-model criteria

struct TrainedSet {
    test: Vec<Instance>,
    acc: Vec<(ModelVariant, f64)>,
    full: Model,
    config: ProjectConfig,
}

fn generate(cfg: &ProjectConfig, label: &str) -> Dataset {
    generate_dataset(&cfg.dataset(label).unwrap(), &catalog::builtin_objects()).unwrap()
}

fn train_variants() -> TrainedSet {
    let cfg = ProjectConfig::default();
    let (syn, real, test) = (generate(&cfg, "synthetic"), generate(&cfg, "realish"), generate(&cfg, "test"));
    let pick = |d: &Dataset, s: Split| d.split(s).into_iter().cloned().collect::<Vec<_>>();
    let (st, sv) = (pick(&syn, Split::Train), pick(&syn, Split::Val));
    let (rt, rv) = (pick(&real, Split::Train), pick(&real, Split::Val));
    let test = pick(&test, Split::Test);
    eprintln!(
        "variants: {} synthetic / {} realish training instances, {} test",
        st.len(),
        rt.len(),
        test.len()
    );

    let mut acc = Vec::new();
    let mut full = None;
    for variant in [
        ModelVariant::ChFull,
        ModelVariant::ChMapOnly,
        ModelVariant::ChClassOnly,
        ModelVariant::FixedUniform,
        ModelVariant::ImageOnly,
    ] {
        let t = Instant::now();
        let mut c = cfg.clone();
        c.model.variant = variant;
        let mut model = init_model(&c).unwrap();
        train(
            &mut model,
            StageData {
                train: &st,
                val: &sv,
                mirror: &syn.mirror,
            },
            Some(StageData {
                train: &rt,
                val: &rv,
                mirror: &real.mirror,
            }),
            &c.train,
            c.train_seed(),
            &mut |_| {},
        )
        .unwrap();
        let r = evaluate(&model, &model.config.objects, &test, EvalOptions::default(), variant.name()).unwrap();
        eprintln!("variants: {variant} acc {:.4} ({:.0}s)", r.mean_acc, t.elapsed().as_secs_f64());
        acc.push((variant, r.mean_acc));
        if variant == ModelVariant::ChFull {
            full = Some(model);
        }
    }
    TrainedSet {
        test,
        acc,
        full: full.unwrap(),
        config: cfg,
    }
}

fn variant_ordering(set: &TrainedSet) -> Outcome {
    let get = |v| set.acc.iter().find(|(w, _)| *w == v).unwrap().1;
    let full = get(ModelVariant::ChFull);
    let image = get(ModelVariant::ImageOnly);
    let best_other = [ModelVariant::ChMapOnly, ModelVariant::ChClassOnly, ModelVariant::FixedUniform]
        .map(get)
        .into_iter()
        .fold(f64::MIN, f64::max);
    let rows: Vec<String> = set.acc.iter().map(|(v, a)| format!("{v} {:.1}", 100.0 * a)).collect();
    outcome(
        full >= image + 0.05 && full >= best_other - 0.01,
        format!(
            "{}; ch_full - image_only = {:+.1} pp (need >= 5), ch_full - best attention variant = {:+.1} pp (need >= -1)",
            rows.join(", "),
            100.0 * (full - image),
            100.0 * (full - best_other)
        ),
    )
}

fn blank_input_ordering(set: &TrainedSet) -> Outcome {
    let rows = ablation_eval(&set.full, &set.test).unwrap();
    let acc = |map, class| rows.iter().find(|r| r.map == map && r.class == class).unwrap().mean_acc;
    let (tt, tf, ft, ff) = (acc(true, true), acc(true, false), acc(false, true), acc(false, false));
    let gaps = [tt - tf, tt - ft, tf - ff, ft - ff];
    let pp = |x: f64| format!("{:.1}", 100.0 * x);
    outcome(
        gaps.iter().all(|g| *g >= 0.01),
        format!(
            "both {} map-only {} class-only {} blank {}; gaps {} pp (each need >= 1)",
            pp(tt),
            pp(tf),
            pp(ft),
            pp(ff),
            gaps.map(pp).join("/")
        ),
    )
}

fn sweep(set: &TrainedSet) -> Outcome {
    let s = set.full.config.image_size as f64;
    let rows = sensitivity_sweep(
        &set.full,
        &set.test,
        &[0.0, 0.2 * s],
        set.config.eval.trials,
        set.config.sweep_seed(),
    )
    .unwrap();
    let (base, noisy) = (rows[0].mean_acc, rows[1].mean_acc);
    outcome(
        noisy >= 0.9 * base,
        format!(
            "acc at sigma 0 {:.1}, at sigma {:.1} px {:.1}; retained {:.1}% (need >= 90)",
            100.0 * base,
            rows[1].sigma,
            100.0 * noisy,
            100.0 * noisy / base
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags such as --list or a name filter.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if args.iter().any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str())) {
        return;
    }

    let mut suite = Suite {
        failed_required: Vec::new(),
        failed_trained: Vec::new(),
    };
    suite.run("gradient_fidelity", false, minutes(5), gradient_fidelity);
    suite.run("attention_invariants", false, minutes(1), attention_invariants);
    suite.run("metric_oracles", false, minutes(1), metric_oracles);
    suite.run("loss_limit", false, Duration::from_secs(10), loss_limit);
    suite.run("flip_exactness", false, minutes(1), flip_exactness);

    if env_flag("CLICKHERE_ACCEPTANCE_SKIP_TRAINING") {
        for name in ["variant_ordering", "blank_input_ordering", "perturbation_robustness"] {
            println!("SKIP {name}");
        }
        suite.run("determinism", false, minutes(10), determinism);
    } else {
        let t = Instant::now();
        let mut set = None;
        suite.run("variant_ordering", true, minutes(60), || {
            let s = train_variants();
            let o = variant_ordering(&s);
            set = Some(s);
            o
        });
        let set = set.unwrap();
        let one_run = t.elapsed() / 5;
        suite.run("blank_input_ordering", true, minutes(5), || blank_input_ordering(&set));
        suite.run("perturbation_robustness", true, minutes(10), || sweep(&set));
        suite.run("determinism", false, one_run.max(Duration::from_secs(60)), determinism);
    }

    let strict = env_flag("CLICKHERE_ACCEPTANCE_STRICT");
    if !suite.failed_trained.is_empty() && !strict {
        println!(
            "note: trained-model criteria failed ({}); reported only, set CLICKHERE_ACCEPTANCE_STRICT=1 to fail on them",
            suite.failed_trained.join(", ")
        );
    }
    let failed = !suite.failed_required.is_empty() || (strict && !suite.failed_trained.is_empty());
    if failed {
        std::process::exit(1);
    }
}
