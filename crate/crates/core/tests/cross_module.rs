use kaclab::experiment::{
    emit_report, read_values_csv, run_experiment, ExperimentConfig, ExperimentKind, ReportFormat,
};
use kaclab::finiteness::{check_finiteness, Remainder, TailSpec};
use kaclab::fixed_point::{sample_steady, MixtureLaw};
use kaclab::fourier::{chi_contraction_measurement, evolve_cf, CfGrid};
use kaclab::kernel::CollisionKernel;
use kaclab::metrics::{d1_bound_from_chi, wasserstein_coupled, wasserstein_empirical, EmpiricalMeasure, Estimator};
use kaclab::numerics::integrate;
use kaclab::rng::par_batches;
use kaclab::stable::StableParams;
use kaclab::wild::{coupled_pair_with, sample_v_t_with, InitialDatum, SteadyQuantile, WeightArray, DEFAULT_N_CAP};
use kaclab::Complex64;
use serde_json::Value;

fn half() -> CollisionKernel {
    let h = 0.5f64.sqrt();
    CollisionKernel::deterministic(h, h).unwrap()
}

fn centered_uniform() -> (InitialDatum, impl Fn(f64) -> Complex64) {
    let a = 3f64.sqrt();
    let cf = move |x: f64| Complex64::new(if x == 0.0 { 1.0 } else { (a * x).sin() / (a * x) }, 0.0);
    (InitialDatum::UniformInterval { a: -a, b: a }, cf)
}

fn draw(kernel: &CollisionKernel, datum: &InitialDatum, t: f64, n: usize, seed: u64) -> Vec<f64> {
    par_batches(seed, n, |rng, _, len| {
        let mut buf = WeightArray::new();
        (0..len)
            .map(|_| sample_v_t_with(kernel, datum, t, DEFAULT_N_CAP, &mut buf, rng).unwrap())
            .collect()
    })
}

#[test]
fn monte_carlo_matches_cf_evolution() {
    let k = half();
    let (datum, cf) = centered_uniform();
    let grid = CfGrid::new(&k, 1e2, 2f64.sqrt(), 400).unwrap().with_values(cf);
    let t = 1.0;
    let evolved = evolve_cf(&grid, t, 0.01).unwrap();
    let n = 200_000;
    let em = EmpiricalMeasure::new(draw(&k, &datum, t, n, 5)).unwrap();
    let tol = 4.0 / (n as f64).sqrt() + 1e-8;
    for (x, v) in evolved.xi().iter().zip(&evolved.values) {
        if (0.05..=8.0).contains(x) {
            let d = (em.cf(*x) - v).norm();
            assert!(d <= tol, "ξ = {x}: {d} > {tol}");
        }
    }
}

#[test]
fn d1_bound_dominates_measured_d1() {
    let k = half();
    let (datum, cf) = centered_uniform();
    let gauss = |x: f64| Complex64::new((-0.5 * x * x).exp(), 0.0);
    let grid = CfGrid::new(&k, 1e2, 2f64.sqrt(), 1100).unwrap().with_values(cf);
    let delta = 0.5;
    let times = [0.0, 1.0, 2.0, 4.0];
    let series = chi_contraction_measurement(&grid, gauss, 2.0 + delta, &times, 0.01).unwrap();
    let n = 50_000;
    let mut rng_seed = 40;
    let steady: Vec<f64> = par_batches(9, n, |rng, _, len| {
        let st = StableParams::gaussian(0.5).unwrap();
        let law = MixtureLaw::point_mass(2.0);
        (0..len).map(|_| sample_steady(&law, &st, rng).unwrap()).collect()
    });
    let steady = EmpiricalMeasure::new(steady).unwrap();
    for (t, chi) in times.iter().zip(&series.chi) {
        rng_seed += 1;
        let v = EmpiricalMeasure::new(draw(&k, &datum, *t, n, rng_seed)).unwrap();
        let d1 = wasserstein_empirical(&v, &steady, 1.0).unwrap().value;
        let bound = d1_bound_from_chi(*chi, 1.0, delta).unwrap();
        assert!(d1 <= bound, "t = {t}: d1 {d1} > bound {bound}");
    }
}

#[test]
fn coupled_at_zero_reproduces_empirical_distance() {
    let steady = StableParams::cauchy(1.0, 0.0).unwrap();
    let datum: InitialDatum = "perturbed:eps=0.5:cauchy:scale=1,pos=0".parse().unwrap();
    let q = SteadyQuantile::exact(steady, true).unwrap();
    let n = 100_000;
    let pairs: Vec<(f64, f64)> = par_batches(3, n, |rng, _, len| {
        let mut buf = WeightArray::new();
        (0..len)
            .map(|_| {
                coupled_pair_with(&CollisionKernel::Uniform, &datum, &q, 0.0, DEFAULT_N_CAP, &mut buf, rng).unwrap()
            })
            .collect()
    });
    let c = wasserstein_coupled(&pairs, 2.0).unwrap();
    let a = EmpiricalMeasure::new(pairs.iter().map(|p| p.0).collect()).unwrap();
    let b = EmpiricalMeasure::new(pairs.iter().map(|p| p.1).collect()).unwrap();
    let e = wasserstein_empirical(&a, &b, 2.0).unwrap();
    // exact value: ε (E(2U-1)²)^{1/2} = 0.5/√3
    let exact = 0.5 / 3f64.sqrt();
    let se = c.stderr.unwrap();
    assert!(
        (c.value - e.value).abs() <= 4.0 * se * 2f64.sqrt(),
        "{} vs {}",
        c.value,
        e.value
    );
    assert!((c.value - exact).abs() <= 4.0 * se);
}

fn decay_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        kernel: "uniform".into(),
        datum: "perturbed:eps=0.5:cauchy:scale=1,pos=0".into(),
        stable: None,
        kind: ExperimentKind::Decay,
        p: 2.0,
        regime: None,
        t_grid: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        samples: 20_000,
        replicas: 1,
        seed,
        estimators: vec![Estimator::Coupled, Estimator::Ks],
        tolerance: 0.03,
        replica_budget: None,
        n_cap: DEFAULT_N_CAP,
        pool_size: 1000,
        out_dir: None,
    }
}

fn emitted_bytes(cfg: &ExperimentConfig) -> (Vec<u8>, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(cfg).unwrap();
    emit_report(&report, ReportFormat::Both, dir.path()).unwrap();
    (
        std::fs::read(dir.path().join("report.csv")).unwrap(),
        std::fs::read(dir.path().join("summary.json")).unwrap(),
    )
}

#[test]
fn reports_are_reproducible_across_thread_counts() {
    let cfg = decay_config(17);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| emitted_bytes(&cfg));
    let b = three.install(|| emitted_bytes(&cfg));
    assert_eq!(a, b);
    let c = emitted_bytes(&decay_config(18));
    assert_ne!(a.0, c.0);
}

#[test]
fn uniform_decay_config_passes() {
    let report = run_experiment(&decay_config(3)).unwrap();
    assert!(report.pass, "{:?}", report.fit);
    assert_eq!(report.rows.len(), 10);
    assert_eq!(report.truncation_events, 0);
}

/// Checks `value` against the subset of JSON Schema used by the pinned
/// schema files: `type`, `required`, `properties`, `additionalProperties`,
/// `minimum`, `items` and `enum`.
fn conforms(schema: &Value, value: &Value) -> Result<(), String> {
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        return if options.contains(value) {
            Ok(())
        } else {
            Err(format!("{value} not in enum"))
        };
    }
    if let Some(ty) = schema.get("type") {
        let types: Vec<&str> = match ty {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => vec![],
        };
        let ok = types.iter().any(|t| match *t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_i64() || value.is_u64(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            _ => false,
        });
        if !ok {
            return Err(format!("{value} is not of type {types:?}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), value.as_f64()) {
        if x < min {
            return Err(format!("{x} < minimum {min}"));
        }
    }
    if let Some(obj) = value.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = key.as_str().unwrap();
            if !obj.contains_key(key) {
                return Err(format!("missing key {key}"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => conforms(sub, v).map_err(|e| format!("{k}: {e}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for v in arr {
            conforms(items, v)?;
        }
    }
    Ok(())
}

fn schema(name: &str) -> Value {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schema")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn summary_matches_pinned_schema() {
    let (csv, json) = emitted_bytes(&decay_config(5));
    let summary: Value = serde_json::from_slice(&json).unwrap();
    conforms(&schema("report_summary.schema.json"), &summary).unwrap();
    let header = String::from_utf8(csv).unwrap();
    assert!(header.starts_with("t,p,estimate,stderr,n_samples,estimator\n"));

    let bad = serde_json::json!({"slope": "steep", "slope_stderr": null, "theory_rate": 0.1, "pass": true, "partial": false, "tolerance": 0.03});
    assert!(conforms(&schema("report_summary.schema.json"), &bad).is_err());
}

#[test]
fn config_schema_accepts_a_real_config() {
    let cfg = serde_json::to_value(decay_config(1)).unwrap();
    conforms(&schema("experiment_config.schema.json"), &cfg).unwrap();
}

#[test]
fn report_csv_round_trips_through_reader() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&decay_config(8)).unwrap();
    emit_report(&report, ReportFormat::Csv, dir.path()).unwrap();
    let values = read_values_csv(&dir.path().join("report.csv")).unwrap();
    let expected: Vec<f64> = report.rows.iter().map(|r| r.estimate.value).collect();
    assert_eq!(values, expected);
}

#[test]
fn finiteness_shortcut_agrees_with_moment_check() {
    // α = 1 kernel with data of finite mean: the tail constants vanish
    let st = StableParams::cauchy(0.0, 0.0).unwrap();
    let p = 2.0;
    let data: Vec<InitialDatum> = vec![
        "point:a=0.5".parse().unwrap(),
        "uniform:a=-1,b=2".parse().unwrap(),
        "gaussian:mean=0,var=2".parse().unwrap(),
        "table:-3,-1,0,0.5,4".parse().unwrap(),
        // |x|^{-1.5} tails: finite mean, infinite variance
        "pareto-sym:alpha=1.5,c0=1".parse().unwrap(),
    ];
    let mut finite_count = 0;
    for d in &data {
        let direct = integrate(|u| d.quantile(u).abs().powf(p), 0.0, 1.0, 1e-9);
        let finite = direct.is_finite() && direct < 1e6;
        finite_count += usize::from(finite);
        let tail = TailSpec {
            c_minus: vec![0.0],
            c_plus: vec![0.0],
            remainder: Remainder::Power(1.0),
            gamma0: d.metadata().gamma0,
            one_sided_moment: None,
            finite_absolute_moment: Some(finite),
        };
        let v = check_finiteness(&tail, &CollisionKernel::Uniform, &st, p).unwrap();
        assert_eq!(v.established, finite, "{d}: {v:?}");
    }
    assert_eq!(finite_count, 4);
}
