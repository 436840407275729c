use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use tempfile::TempDir;

use giwvol::likelihood::{loglik_at_filter_path, perf_metrics};
use giwvol::simulate::{simulate_seeded, SimModel};
use giwvol::{filter_run, ModelConfig, SymPosDefMatrix};

fn giwvol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_giwvol")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = giwvol(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

const TRUE_CONFIG: &str = r#"{"delta": 0.9, "phi": 1.0, "omega_diag": [0.25, 1.0], "seed": 42}"#;

fn simulated(tmp: &Path) -> (PathBuf, PathBuf) {
    let cfg = write(tmp, "true.json", TRUE_CONFIG);
    let sim = tmp.join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--steps", "500"]);
    (cfg, sim.join("returns.csv"))
}

#[test]
fn simulate_then_filter_is_calibrated() {
    let tmp = TempDir::new().unwrap();
    let (cfg, returns) = simulated(tmp.path());
    let out = tmp.path().join("filt");
    ok(&["filter", "--config", s(&cfg), "--input", s(&returns), "--out", s(&out)]);
    let r = report(&out);
    for m in floats(&r["perf"]["msse"]) {
        assert!(m > 0.8 && m < 1.2, "msse {m}");
    }
    assert_eq!(r["n_obs"], 500);
    assert!(out.join("volatility.csv").exists() && out.join("forecast.csv").exists());
}

#[test]
fn csv_round_trip_matches_in_memory_pipeline() {
    let tmp = TempDir::new().unwrap();
    let (cfg, returns) = simulated(tmp.path());
    let out = tmp.path().join("filt");
    ok(&["filter", "--config", s(&cfg), "--input", s(&returns), "--out", s(&out)]);
    let r = report(&out);

    let model = SimModel::new(0.9, 1.0, &DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 1.0]))).unwrap();
    let path = simulate_seeded(42, &model, &SymPosDefMatrix::identity(2), &DVector::zeros(2), 500).unwrap();
    let config = ModelConfig::new(0.9, 1.0, SymPosDefMatrix::from_diagonal(&[0.25, 1.0]).unwrap()).unwrap();
    let run = filter_run(&path.ys, &config).unwrap();
    let perf = perf_metrics(&run.records).unwrap();
    let lik = loglik_at_filter_path(&path.ys, &config).unwrap();
    assert_eq!(floats(&r["perf"]["msse"]), perf.msse);
    assert_eq!(floats(&r["perf"]["mse"]), perf.mse);
    assert_eq!(r["loglik"]["total"].as_f64().unwrap(), lik.total);
    assert_eq!(r["loglik"]["lt_term"].as_f64().unwrap(), lik.lt_term);
    let state: Vec<f64> = run.state.m.iter().copied().collect();
    assert_eq!(floats(&r["final_state"]["m"]), state);
}

#[test]
fn filter_and_loglik_commands_agree_bit_for_bit() {
    let tmp = TempDir::new().unwrap();
    let (cfg, returns) = simulated(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["filter", "--config", s(&cfg), "--input", s(&returns), "--out", s(&a)]);
    ok(&["loglik", "--config", s(&cfg), "--input", s(&returns), "--out", s(&b)]);
    assert_eq!(report(&a)["loglik"], report(&b)["loglik"]);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (cfg, returns) = simulated(tmp.path());
    let sim2 = tmp.path().join("sim2");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim2), "--steps", "500"]);
    for f in ["returns.csv", "truth.csv", "report.json"] {
        assert_eq!(fs::read(tmp.path().join("sim").join(f)).unwrap(), fs::read(sim2.join(f)).unwrap(), "{f}");
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["filter", "--config", s(&cfg), "--input", s(&returns), "--out", s(&a)]);
    ok(&["filter", "--config", s(&cfg), "--input", s(&returns), "--out", s(&b)]);
    for f in ["volatility.csv", "forecast.csv", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn different_seeds_differ() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", TRUE_CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a), "--steps", "20"]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&b), "--steps", "20", "--seed", "7"]);
    assert_ne!(fs::read(a.join("returns.csv")).unwrap(), fs::read(b.join("returns.csv")).unwrap());
    assert_eq!(report(&b)["manifest"]["seed"], 7);
    assert_eq!(report(&a)["manifest"]["seed"], 42);
}

#[test]
fn metrics_recomputed_from_forecast_file() {
    let tmp = TempDir::new().unwrap();
    let (cfg, returns) = simulated(tmp.path());
    let (a, m) = (tmp.path().join("a"), tmp.path().join("m"));
    ok(&["filter", "--config", s(&cfg), "--input", s(&returns), "--out", s(&a)]);
    ok(&["metrics", "--input", s(&a.join("forecast.csv")), "--out", s(&m)]);
    assert_eq!(report(&a)["perf"], report(&m)["perf"]);
}

#[test]
fn volatility_file_layout() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"delta": 0.8, "omega_diag": [0.5, 0.5, 0.5]}"#);
    let mut prices = String::from("date,a,b,c\n");
    let mut level = [100.0f64, 50.0, 20.0];
    for day in 1..=40 {
        for (j, x) in level.iter_mut().enumerate() {
            *x *= 1.0 + 0.01 * ((day * (j + 2)) as f64).sin();
        }
        prices.push_str(&format!("2021-01-{day:02},{},{},{}\n", level[0], level[1], level[2]));
    }
    let input = write(tmp.path(), "prices.csv", &prices);
    let out = tmp.path().join("o");
    ok(&["filter", "--config", s(&cfg), "--input", s(&input), "--out", s(&out), "--levels"]);
    let mut rdr = csv::Reader::from_path(out.join("volatility.csv")).unwrap();
    let head: Vec<String> = rdr.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(&head[..5], ["t", "date", "s_1_1", "s_2_1", "s_2_2"]);
    let rho: Vec<usize> = head.iter().enumerate().filter(|(_, h)| h.starts_with("rho_")).map(|(i, _)| i).collect();
    assert_eq!(rho.len(), 6);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        rows += 1;
        assert_eq!(&rec[1], format!("2021-01-{:02}", rows + 1));
        for &i in &rho {
            let v: f64 = rec[i].parse().unwrap();
            assert!(v.abs() <= 1.0);
            let (a, b) = (head[i].split('_').nth(1).unwrap(), head[i].split('_').nth(2).unwrap());
            if a == b {
                assert_eq!(v, 1.0);
            }
        }
    }
    assert_eq!(rows, 39);
    assert_eq!(report(&out)["manifest"]["input"]["kind"], "levels");
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let (_, returns) = simulated(tmp.path());
    let bad_delta = write(tmp.path(), "d.json", r#"{"delta": 0.5, "omega_diag": [1.0, 1.0]}"#);
    let out = giwvol(&["filter", "--config", s(&bad_delta), "--input", s(&returns), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2/3"));

    let unknown = write(tmp.path(), "u.json", r#"{"delta": 0.8, "omega_diag": [1.0, 1.0], "omgea": 1}"#);
    let out = giwvol(&["filter", "--config", s(&unknown), "--input", s(&returns), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = write(tmp.path(), "c.json", r#"{"delta": 0.8, "omega_diag": [1.0, 1.0]}"#);
    let gap = write(tmp.path(), "gap.csv", "a,b\n0.1,0.2\n0.3,\n0.1,0.1\n");
    let out = giwvol(&["filter", "--config", s(&cfg), "--input", s(&gap), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = giwvol(&["filter", "--config", s(&cfg), "--input", s(&returns)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three_and_name_the_step() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"delta": 0.8, "omega_diag": [1.0]}"#);
    // the first forecast error is exactly zero, where the likelihood is undefined
    let input = write(tmp.path(), "z.csv", "x\n0\n1\n-1\n");
    let out = giwvol(&["loglik", "--config", s(&cfg), "--input", s(&input), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t = 1"));
    // filter still succeeds and reports the undefined likelihood
    let f = tmp.path().join("f");
    ok(&["filter", "--config", s(&cfg), "--input", s(&input), "--out", s(&f)]);
    assert!(report(&f)["loglik"].is_null());
}

#[test]
fn search_writes_trace_and_is_thread_count_invariant() {
    let tmp = TempDir::new().unwrap();
    let (_, returns) = simulated(tmp.path());
    let cfg = write(tmp.path(), "s.json", r#"{"q": 1, "delta_candidates": [0.85, 0.9]}"#);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["search", "--config", s(&cfg), "--input", s(&returns), "--out", s(&a), "--jobs", "1"]);
    ok(&["search", "--config", s(&cfg), "--input", s(&returns), "--out", s(&b), "--jobs", "2"]);
    for f in ["search_trace.csv", "report.json", "volatility.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let r = report(&a);
    let z = floats(&r["search"]["z"]);
    assert_eq!(z.len(), 2);
    let trace = fs::read_to_string(a.join("search_trace.csv")).unwrap();
    assert!(trace.starts_with("delta,sweep,coordinate,z_1,z_2,objective,accepted,error"));
    assert_eq!(trace.lines().count() - 1, r["search"]["evaluations"].as_u64().unwrap() as usize);
}

#[test]
fn timing_is_opt_in() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", TRUE_CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a), "--steps", "10"]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&b), "--steps", "10", "--record-timing"]);
    assert!(report(&a)["manifest"].get("timing_seconds").is_none());
    assert!(report(&b)["manifest"]["timing_seconds"].as_f64().unwrap() >= 0.0);
}
