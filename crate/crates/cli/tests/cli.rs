//! End-to-end smoke tests through the installed binary.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

fn coupon() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coupon"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn pipeline_gen_fit_eval_calibrate_fit_lambda_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.jsonl");
    let records = dir.path().join("records.jsonl");
    let model = dir.path().join("model.json");
    let dual = dir.path().join("dual.json");
    let runs = dir.path().join("runs");

    run_ok(coupon()
        .args(["gen-pop", "--size", "4000", "--seed", "7"])
        .arg("--out")
        .arg(&pop)
        .args(["--campaign", "medium"])
        .arg("--records-out")
        .arg(&records));
    assert!(pop.exists() && records.exists());

    run_ok(coupon()
        .args(["cvr", "fit", "--bins", "8"])
        .arg("--records")
        .arg(&records)
        .arg("--out")
        .arg(&model));
    let eval = run_ok(coupon()
        .args(["cvr", "eval"])
        .arg("--model")
        .arg(&model)
        .arg("--records")
        .arg(&records));
    for key in ["auc=", "pcoc=", "nonmonotonic_fraction="] {
        assert!(eval.contains(key), "missing {key} in output:\n{eval}");
    }

    // Calibrate a small matrix written by hand.
    let matrix = dir.path().join("cvr.csv");
    std::fs::write(
        &matrix,
        "customer_id,q_1,q_2,q_3,q_4,q_5\n1,0.5,0.2,0.4,0.6,0.9\n2,0.1,0.2,0.3,0.4,0.5\n",
    )
    .unwrap();
    let calibrated = dir.path().join("cvr_ir.csv");
    run_ok(coupon()
        .args(["calibrate"])
        .arg("--in")
        .arg(&matrix)
        .arg("--out")
        .arg(&calibrated));
    let body = std::fs::read_to_string(&calibrated).unwrap();
    assert!(body.lines().count() == 3, "expected header + 2 rows:\n{body}");

    // Instance for fit-lambda and oracle.
    let inst = dir.path().join("inst.csv");
    std::fs::write(
        &inst,
        "customer_id,q_1,q_2,v_1,v_2\n\
         1,0.2,0.6,3.2,4.8\n\
         2,0.1,0.5,1.6,4.0\n\
         3,0.3,0.7,4.8,5.6\n",
    )
    .unwrap();
    let ladder_conf = dir.path().join("ladder.conf");
    std::fs::write(&ladder_conf, "base_price=16\ncoupons=0,8\np_b=12\n").unwrap();
    let fit_out = run_ok(coupon()
        .args(["fit-lambda", "--pb", "12"])
        .arg("--instance")
        .arg(&inst)
        .arg("--config")
        .arg(&ladder_conf)
        .arg("--out")
        .arg(&dual));
    assert!(fit_out.contains("lambda="));
    let payload: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(&dual).unwrap()).unwrap();
    assert_eq!(payload["assignment"].as_array().unwrap().len(), 3);

    let oracle_out = run_ok(coupon()
        .args(["oracle", "--pb", "12"])
        .arg("--instance")
        .arg(&inst)
        .arg("--config")
        .arg(&ladder_conf));
    assert!(oracle_out.contains("feasible=true"));
    assert!(oracle_out.contains("objective="));

    run_ok(coupon()
        .args(["simulate", "--days", "2", "--strategies", "random,manual,ipgroup:20,ldm,ldmir"])
        .args(["--pb", "14", "--seed", "11", "--bins", "8"])
        .arg("--pop")
        .arg(&pop)
        .arg("--out")
        .arg(&runs));
    for artifact in ["day_report.csv", "decisions.jsonl", "lambda_trace.csv"] {
        assert!(runs.join(artifact).exists(), "missing {artifact}");
    }
    let report = std::fs::read_to_string(runs.join("day_report.csv")).unwrap();
    // 2 days x 5 strategies + header
    assert_eq!(report.lines().count(), 11, "unexpected report:\n{report}");
}

struct ChildGuard(Child);
impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_answers_requests() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("server.conf");
    std::fs::write(
        &conf,
        "base_price=16\ncoupons=0,2,4,6,8\np_b=12\nlambda_init=0.5\nzero_timing=true\n",
    )
    .unwrap();
    // Ports in the ephemeral range; retry a few in case of collisions.
    let mut spawned = None;
    for port in [38141u16, 38517, 38923, 39341] {
        let child = coupon()
            .args(["serve", "--port", &port.to_string()])
            .arg("--config")
            .arg(&conf)
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut guard = ChildGuard(child);
        for _ in 0..50 {
            std::thread::sleep(std::time::Duration::from_millis(20));
            if let Ok(stream) = TcpStream::connect(("127.0.0.1", port)) {
                spawned = Some((guard, stream));
                break;
            }
            if let Ok(Some(_)) = guard.0.try_wait() {
                break; // bind failed; try next port
            }
        }
        if spawned.is_some() {
            break;
        }
    }
    let (_guard, stream) = spawned.expect("server failed to start on any port");
    stream.set_nodelay(true).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;

    writer
        .write_all(
            b"{\"type\":\"alloc\",\"request_id\":\"x\",\"customer_id\":1,\"cvr\":[0.1,0.2,0.3,0.4,0.5]}\n",
        )
        .unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["type"], "alloc");
    assert_eq!(v["request_id"], "x");

    writer.write_all(b"{\"type\":\"snapshot\"}\n").unwrap();
    line.clear();
    reader.read_line(&mut line).unwrap();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["type"], "snapshot");
    assert_eq!(v["lambda"], 0.5);
}
