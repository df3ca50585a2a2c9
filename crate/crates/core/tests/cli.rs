//! End-to-end tests of the command-line surface: exit codes, determinism
//! of the written artifacts, and equivalence of the CLI pipeline with a
//! direct composition of the library calls.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use specdep::cli::{run_analyze, AnalysisConfig, InputKind, MeasureSel, NormSel};
use specdep::crossspectra::{accumulate, pool, FrequencyBand};
use specdep::inference::{test_dependence, ScaleChoice};
use specdep::ingest::{detrend, load_segments, BlockPartition, DetrendMode, SegmentFormat};
use specdep::measures::{linear_dependence, nonlinear_dependence};
use specdep::simulate::white_noise;
use specdep::spectral::{dft, normalize_block, write_spectra_binary, FreqSelection};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specdep"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn specdep");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn vc_spec(dir: &Path, noise_sd: f64, extra: &str) -> std::path::PathBuf {
    let path = dir.join("spec.json");
    fs::write(
        &path,
        format!(
            r#"{{"model":"volume-conduction","n_segments":60,"n_samples":64,
                "mixing_c":[[1.0]],"mixing_d":[[1.0]],"source":{{"type":"white"}},
                "noise_sd":{noise_sd},"seed":9{extra}}}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn simulate_then_analyze_round_trip_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = vc_spec(tmp.path(), 1.0, "");

    let sim_a = tmp.path().join("sim_a");
    let sim_b = tmp.path().join("sim_b");
    run_ok(
        bin()
            .args(["simulate", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&sim_a),
    );
    run_ok(
        bin()
            .args(["simulate", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&sim_b),
    );
    assert_eq!(
        fs::read(sim_a.join("segments.bin")).unwrap(),
        fs::read(sim_b.join("segments.bin")).unwrap()
    );
    assert_eq!(
        fs::read(sim_a.join("config.json")).unwrap(),
        fs::read(sim_b.join("config.json")).unwrap()
    );

    let analyze = |out: &Path| {
        run_ok(
            bin()
                .args(["analyze", "--input"])
                .arg(sim_a.join("segments.bin"))
                .args([
                    "--format",
                    "binary-f64",
                    "--partition",
                    "X=0;Y=1",
                    "--bands",
                    "low=2-6",
                    "--measures",
                    "linear,nonlinear,all-univariate",
                    "--norm",
                    "block,channel",
                    "--scale",
                    "calibrated-2NRm1",
                    "--out",
                ])
                .arg(out),
        );
    };
    let res_a = tmp.path().join("res_a");
    let res_b = tmp.path().join("res_b");
    analyze(&res_a);
    analyze(&res_b);
    for f in ["reports.json", "tests.json", "connectivity.csv"] {
        assert_eq!(
            fs::read(res_a.join(f)).unwrap(),
            fs::read(res_b.join(f)).unwrap(),
            "artifact {f} differs between identical runs"
        );
    }
    // simulated volume conduction: strong instantaneous, null lagged
    let csv = fs::read_to_string(res_a.join("connectivity.csv")).unwrap();
    let row = csv
        .lines()
        .find(|l| l.starts_with("linear,X,Y,low"))
        .expect("pairwise band row present");
    let cols: Vec<&str> = row.split(',').collect();
    let rho2_lagged: f64 = cols[5].parse().unwrap();
    let rho2_inst: f64 = cols[6].parse().unwrap();
    assert!(rho2_inst > 0.1, "instantaneous {rho2_inst}");
    assert!(rho2_lagged < 0.1, "lagged {rho2_lagged}");
}

#[test]
fn white_noise_input_yields_null_level_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("wn.json");
    fs::write(
        &spec,
        r#"{"model":"white-noise","n_segments":64,"n_samples":128,"n_channels":2,"seed":314}"#,
    )
    .unwrap();
    let sim = tmp.path().join("sim");
    run_ok(
        bin()
            .args(["simulate", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&sim),
    );
    let res = tmp.path().join("res");
    run_ok(
        bin()
            .args(["analyze", "--input"])
            .arg(sim.join("segments.bin"))
            .args([
                "--format",
                "binary-f64",
                "--partition",
                "X=0;Y=1",
                "--measures",
                "linear",
                "--scale",
                "calibrated-2NRm1",
                "--out",
            ])
            .arg(&res),
    );

    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(res.join("reports.json")).unwrap()).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 64);
    for r in reports {
        let rho2 = r["rho2"]["total"].as_f64().unwrap();
        assert!(rho2 < 0.35, "null rho2 {rho2}");
    }

    // p-values of the total measure sit near uniform: mean ~ 0.5 and a
    // 5%-level rejection fraction near nominal
    let tests: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(res.join("tests.json")).unwrap()).unwrap();
    let mut ps = Vec::new();
    for bundle in tests.as_array().unwrap() {
        for t in bundle["tests"].as_array().unwrap() {
            if t["measure"] == "total" {
                ps.push(t["p_value"].as_f64().unwrap());
            }
        }
    }
    assert_eq!(ps.len(), 64);
    let mean = ps.iter().sum::<f64>() / ps.len() as f64;
    assert!((0.35..0.65).contains(&mean), "mean null p {mean}");
    let rej = ps.iter().filter(|&&p| p < 0.05).count();
    assert!(rej <= 8, "{rej} of 64 rejected at the 5% level");
}

#[test]
fn nonlinear_without_norm_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = vc_spec(tmp.path(), 1.0, "");
    let sim = tmp.path().join("sim");
    run_ok(
        bin()
            .args(["simulate", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&sim),
    );

    let out = bin()
        .args(["analyze", "--input"])
        .arg(sim.join("segments.bin"))
        .args([
            "--format",
            "binary-f64",
            "--partition",
            "X=0;Y=1",
            "--measures",
            "nonlinear",
            "--out",
        ])
        .arg(tmp.path().join("res"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error: config:"), "{stderr}");
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    // missing file
    let out = bin()
        .args(["analyze", "--input"])
        .arg(tmp.path().join("absent.csv"))
        .args(["--partition", "X=0;Y=1", "--out"])
        .arg(tmp.path().join("res"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // malformed csv
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "segment,time,a\n0,0,oops\n").unwrap();
    let out = bin()
        .args(["analyze", "--input"])
        .arg(&bad)
        .args(["--partition", "X=0;Y=0", "--out"])
        .arg(tmp.path().join("res2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: data:"));
}

#[test]
fn singular_spectra_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    // one segment cannot support a 2x2 block covariance
    let csv = tmp.path().join("tiny.csv");
    let mut text = String::from("segment,time,a,b,c,d\n");
    for t in 0..8 {
        text.push_str(&format!(
            "0,{t},{},{},{},{}\n",
            t,
            t * t,
            t + 1,
            3 - t as i64
        ));
    }
    fs::write(&csv, text).unwrap();
    let out = bin()
        .args(["analyze", "--input"])
        .arg(&csv)
        .args([
            "--partition",
            "X=a,b;Y=c,d",
            "--measures",
            "linear",
            "--out",
        ])
        .arg(tmp.path().join("res"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: numerical:"));
}

#[test]
fn zero_noise_spec_without_acknowledgment_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = vc_spec(tmp.path(), 0.0, "");
    let out = bin()
        .args(["simulate", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp.path().join("sim"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let spec = vc_spec(tmp.path(), 0.0, r#","allow_zero_noise":true"#);
    run_ok(
        bin()
            .args(["simulate", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(tmp.path().join("sim2")),
    );
}

#[test]
fn hz_bands_without_rate_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = vc_spec(tmp.path(), 1.0, "");
    let sim = tmp.path().join("sim");
    run_ok(
        bin()
            .args(["simulate", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&sim),
    );
    let out = bin()
        .args(["analyze", "--input"])
        .arg(sim.join("segments.bin"))
        .args([
            "--format",
            "binary-f64",
            "--partition",
            "X=0;Y=1",
            "--bands",
            "alpha=8-12hz",
            "--out",
        ])
        .arg(tmp.path().join("res"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_passes_and_the_perturb_hook_trips_it() {
    let out = run_ok(bin().arg("selftest"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for suite in [
        "univariate-closed-forms",
        "additivity-nonnegativity",
        "zero-lag-identity",
        "degrees-of-freedom",
    ] {
        assert!(stdout.contains(&format!("PASS {suite}")), "{stdout}");
    }

    let out = bin()
        .arg("selftest")
        .env("SPECDEP_SELFTEST_PERTURB", "1e-6")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn precomputed_spectra_input_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let set = white_noise(20, 32, 2, 77);
    let e = dft(
        &detrend(&set, DetrendMode::Mean),
        FreqSelection::PositiveHalf,
    )
    .unwrap();
    let path = tmp.path().join("coeffs.spc");
    write_spectra_binary(&e, &path).unwrap();

    run_ok(
        bin()
            .args(["analyze", "--input"])
            .arg(&path)
            .args([
                "--format",
                "spectra-bin",
                "--partition",
                "X=0;Y=1",
                "--measures",
                "linear",
                "--scale",
                "segments-NR",
                "--out",
            ])
            .arg(tmp.path().join("res")),
    );
    let reports = fs::read_to_string(tmp.path().join("res").join("reports.json")).unwrap();
    assert!(reports.contains("\"two-block\""));
}

#[test]
fn cli_pipeline_equals_direct_library_composition() {
    let tmp = tempfile::tempdir().unwrap();
    let set = white_noise(24, 32, 4, 2025);
    let input = tmp.path().join("data.bin");
    specdep::ingest::write_segments_binary(&set, &input).unwrap();

    let cfg = AnalysisConfig {
        input: input.clone(),
        format: InputKind::BinaryF64,
        partition: vec![
            ("A".into(), vec!["0".into(), "1".into()]),
            ("B".into(), vec!["2".into(), "3".into()]),
        ],
        bands: specdep::cli::parse_band_spec("low=1-4").unwrap(),
        measures: vec![MeasureSel::Linear, MeasureSel::Nonlinear],
        norms: vec![NormSel::Block],
        scale: ScaleChoice::Calibrated2NrM1,
        ridge: None,
        sampling_rate: None,
        detrend: true,
        taper_hann: false,
        out_dir: tmp.path().join("out"),
        dump_spectra: false,
    };
    let outputs = run_analyze(&cfg).unwrap();

    // direct composition of the same pipeline
    let loaded = load_segments(&input, SegmentFormat::BinaryF64).unwrap();
    let d = detrend(&loaded, DetrendMode::Mean);
    let e = dft(&d, FreqSelection::PositiveHalf).unwrap();
    let p = BlockPartition::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
    let en = normalize_block(&e, &p).unwrap();

    let mut expected_linear = Vec::new();
    for &w in e.freq_indices() {
        expected_linear.push(linear_dependence(&accumulate(&e, w).unwrap(), &p).unwrap());
    }
    let band = FrequencyBand::new("low", vec![1, 2, 3, 4]).unwrap();
    let members: Vec<_> = (1..=4).map(|w| accumulate(&e, w).unwrap()).collect();
    let refs: Vec<&_> = members.iter().collect();
    expected_linear.push(linear_dependence(&pool(&refs, &band).unwrap(), &p).unwrap());

    let linear_reports: Vec<_> = outputs
        .reports
        .iter()
        .filter(|r| r.kind == specdep::measures::MeasureKind::Linear)
        .collect();
    assert_eq!(linear_reports.len(), expected_linear.len());
    for (got, want) in linear_reports.iter().zip(&expected_linear) {
        assert_eq!(got.freq, want.freq);
        assert_eq!(
            got.total, want.total,
            "field-for-field totals at {:?}",
            got.freq
        );
        assert_eq!(got.lagged, want.lagged);
        assert_eq!(got.instantaneous, want.instantaneous);
        assert_eq!(got.rho2.total, want.rho2.total);
    }

    // one nonlinear spot check
    let w = 3usize;
    let want = nonlinear_dependence(&accumulate(&en, w).unwrap(), &p).unwrap();
    let got = outputs
        .reports
        .iter()
        .find(|r| {
            r.kind == specdep::measures::MeasureKind::Nonlinear
                && r.freq == specdep::crossspectra::FreqTag::Bin(w)
        })
        .unwrap();
    assert_eq!(got.total, want.total);

    // tests match a direct call too
    let first = &outputs.tests[0];
    let direct =
        test_dependence(&expected_linear[0], 32, 24, ScaleChoice::Calibrated2NrM1).unwrap();
    assert_eq!(first.tests[0].statistic, direct[0].statistic);
    assert_eq!(first.tests[0].p_value, direct[0].p_value);
    assert_eq!(first.tests[0].df, direct[0].df);
}
