//! End-to-end exercises of the `siqss` binary: determinism, exit codes,
//! sweep output shape, and the analyze/tomography round trips.

use std::path::Path;
use std::process::{Command, Output};

use siqss::keyrate::KeyReport;
use siqss::qmath::tomography::{expected_counts, PROJECTORS};
use siqss::qmath::{bell_state, BellKind};

const BIN: &str = env!("CARGO_BIN_EXE_siqss");

const SIM_CFG: &str = "\
mode = montecarlo
n_players = 3
n_pulses = 1000000
seed = 42
source1.mu = 0.05
channel1.loss_db_dealer = 0
channel1.loss_db_player = 0
channel1.eta_d = 0.9
channel1.p_d = 1e-7
channel1.p_x = 0.5
channel1.rep_rate_hz = 96.7e6
e_d_x = 0.005
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn siqss")
}

fn write_cfg(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn read_report(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn simulate_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SIM_CFG);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&["simulate", "--config", &cfg, "--out", &out.display().to_string()]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let a = read_report(&out_a, "report.csv");
    let b = read_report(&out_b, "report.csv");
    assert_eq!(a, b);
    assert!(a.starts_with(KeyReport::<f64>::csv_header()));
    // A different seed gives a different report.
    let out_c = tmp.path().join("c");
    let res = run(&[
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "43",
        "--out",
        &out_c.display().to_string(),
    ]);
    assert!(res.status.success());
    assert_ne!(a, read_report(&out_c, "report.csv"));
}

#[test]
fn sweep_emits_monotone_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{}sweep.parameter = loss_db\nsweep.start = 0\nsweep.stop = 25\nsweep.step = 0.5\n",
        SIM_CFG
            .replace("mode = montecarlo", "mode = analytic")
            .replace("n_pulses = 1000000", "n_pulses = 100000000000")
            .replace("source1.mu = 0.05", "source1.mu = 0.023")
    );
    let cfg = write_cfg(tmp.path(), &text);
    let out = tmp.path().join("sweep");
    let res = run(&["sweep", "--config", &cfg, "--out", &out.display().to_string()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let body = read_report(&out, "sweep.csv");
    let rows: Vec<&str> = body.lines().skip(1).collect();
    assert_eq!(rows.len(), 51);
    let rate_at = |row: &str| -> f64 { row.split(',').nth(7).unwrap().parse().unwrap() };
    let mut last = f64::INFINITY;
    for row in &rows {
        let rate = rate_at(row);
        assert!(rate <= last, "rates must be non-increasing in loss");
        last = rate;
    }
    assert!(rate_at(rows[50]) < rate_at(rows[0]));
}

#[test]
fn analyze_ingests_simulated_event_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SIM_CFG);
    let out = tmp.path().join("sim");
    let res = run(&[
        "simulate",
        "--config",
        &cfg,
        "--emit-events",
        "--emit-transcript",
        "--out",
        &out.display().to_string(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let sim_report = read_report(&out, "report.csv");
    let transcript = read_report(&out, "transcript.csv");
    assert!(transcript.starts_with("round_index,basis,dealer_bit"));
    assert!(transcript.lines().count() > 1000);

    let logs = format!(
        "{},{}",
        out.join("events_session1.csv").display(),
        out.join("events_session2.csv").display()
    );
    let analyze_cfg = write_cfg(
        tmp.path().join("").as_path(),
        &format!(
            "{}analyze.logs = {logs}\n",
            SIM_CFG.replace("mode = montecarlo", "mode = analyze")
        ),
    );
    let out2 = tmp.path().join("analyzed");
    let res = run(&[
        "analyze",
        "--config",
        &analyze_cfg,
        "--out",
        &out2.display().to_string(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    // The analyzer recovers the simulator's counts and rates exactly from
    // the logs (same matching, sifting and estimation path).
    let re_report = read_report(&out2, "report.csv");
    let field = |body: &str, idx: usize| -> String {
        body.lines().nth(1).unwrap().split(',').nth(idx).unwrap().to_string()
    };
    for idx in [3, 4, 5, 6] {
        // n_x, E_X, max_phi_bar, l_bits
        assert_eq!(field(&sim_report, idx), field(&re_report, idx));
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    // Malformed config -> 2.
    let bad = write_cfg(tmp.path(), "mode = montecarlo\nthis is not a key value line\n");
    let res = run(&["simulate", "--config", &bad]);
    assert_eq!(res.status.code(), Some(2));

    // Missing config file -> 3.
    let res = run(&["simulate", "--config", tmp.path().join("nope.cfg").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));

    // Aborted protocol (error rates too high for any key) -> 1.
    let abort_cfg = write_cfg(
        tmp.path().join("").as_path(),
        &SIM_CFG
            .replace("mode = montecarlo", "mode = analytic")
            .replace("e_d_x = 0.005", "e_d_x = 0.45"),
    );
    let out = tmp.path().join("aborted");
    let res = run(&["keyrate", "--config", &abort_cfg, "--out", &out.display().to_string()]);
    assert_eq!(res.status.code(), Some(1));
    let body = read_report(&out, "report.csv");
    assert!(body.lines().nth(1).unwrap().ends_with(",1"));

    // Healthy analytic run -> 0.
    let ok_cfg = write_cfg(
        tmp.path().join("").as_path(),
        &SIM_CFG.replace("mode = montecarlo", "mode = analytic"),
    );
    let res = run(&["keyrate", "--config", &ok_cfg, "--out", &out.display().to_string()]);
    assert_eq!(res.status.code(), Some(0));
}

#[test]
fn tomography_subcommand_reconstructs_state() {
    let tmp = tempfile::tempdir().unwrap();
    let rho = bell_state::<f64>(BellKind::PsiMinus).to_density();
    let counts = expected_counts(&rho, 1e5).unwrap();
    let mut csv = String::from("projector_signal,projector_idler,count\n");
    for &s in &PROJECTORS {
        for &i in &PROJECTORS {
            csv.push_str(&format!("{},{},{}\n", s.label(), i.label(), counts.get(s, i)));
        }
    }
    let counts_path = tmp.path().join("counts.csv");
    std::fs::write(&counts_path, csv).unwrap();
    let cfg = write_cfg(
        tmp.path(),
        &format!(
            "mode = analytic\nn_players = 3\nn_pulses = 1\n\
             source1.mu = 0.01\n\
             channel1.loss_db_dealer = 0\nchannel1.loss_db_player = 0\n\
             channel1.p_x = 0.5\nchannel1.rep_rate_hz = 96.7e6\n\
             tomography.counts = {}\n",
            counts_path.display()
        ),
    );
    let out = tmp.path().join("tomo");
    let res = run(&["tomography", "--config", &cfg, "--out", &out.display().to_string()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let body = read_report(&out, "tomography.txt");
    let fid_line = body
        .lines()
        .find(|l| l.starts_with("fidelity_psi_minus"))
        .unwrap();
    let fid: f64 = fid_line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((fid - 1.0).abs() < 1e-6, "{fid_line}");
    assert!(body.contains("purity"));
}
