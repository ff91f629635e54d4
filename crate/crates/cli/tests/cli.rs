mod common;

use std::path::Path;

use serde_json::Value;

use common::{fixture, ok, run};

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// The last stderr line is the machine-readable error.
fn error_of(out: &std::process::Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    json(stderr.lines().last().expect("stderr is not empty"))
}

#[test]
fn single_step_commands_reproduce_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let piped = tmp.path().join("piped");
    ok(&["pipeline", "--input", s(&fx), "--out", s(&piped)]);

    for video in ["vid000", "vid001", "vid002"] {
        let src = fx.join(video);
        let dst = tmp.path().join("steps").join(video);
        let tracks = dst.join("tracks.jsonl");
        let events = dst.join("events.jsonl");
        let matrix = dst.join("matrix.json");
        let instructions = dst.join("instructions.jsonl");
        let sequence = dst.join("sequence.txt");
        ok(&[
            "track",
            "--detections",
            s(&src.join("detections.jsonl")),
            "--out",
            s(&tracks),
        ]);
        ok(&[
            "segment",
            "--frames",
            s(&src.join("frames.jsonl")),
            "--tracks",
            s(&tracks),
            "--out",
            s(&events),
        ]);
        ok(&[
            "matrix",
            "--video",
            s(&src.join("video.json")),
            "--tracks",
            s(&tracks),
            "--events",
            s(&events),
            "--clues",
            s(&src.join("clues.jsonl")),
            "--out",
            s(&matrix),
        ]);
        ok(&["gen", "--matrix", s(&matrix), "--out", s(&instructions)]);
        ok(&[
            "seq",
            "render",
            "--matrix",
            s(&matrix),
            "--format",
            "seconds",
            "--out",
            s(&sequence),
        ]);

        for name in [
            "tracks.jsonl",
            "events.jsonl",
            "matrix.json",
            "instructions.jsonl",
            "sequence.txt",
        ] {
            assert_eq!(
                read(&dst.join(name)),
                read(&piped.join(video).join(name)),
                "{video}/{name}"
            );
        }
        assert_eq!(
            read(&dst.join("instructions.jsonl.failures.jsonl")),
            read(&piped.join(video).join("failures.jsonl"))
        );
    }
}

#[test]
fn sidecars_hash_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let out = tmp.path().join("tracks.jsonl");
    let detections = fx.join("vid000/detections.jsonl");
    ok(&["track", "--detections", s(&detections), "--out", s(&out)]);
    let sidecar = json(&read(&tmp.path().join("tracks.jsonl.provenance.json")));
    let digest = |bytes: &[u8]| {
        use sha2::Digest;
        hex::encode(sha2::Sha256::digest(bytes))
    };
    assert_eq!(sidecar["command"], "track");
    assert_eq!(
        sidecar["output_sha256"],
        digest(&std::fs::read(&out).unwrap())
    );
    assert_eq!(sidecar["inputs"][0]["name"], "detections.jsonl");
    assert_eq!(
        sidecar["inputs"][0]["sha256"],
        digest(&std::fs::read(&detections).unwrap())
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let frames = fx.join("vid000/frames.jsonl");
    let tracks = tmp.path().join("tracks.jsonl");
    ok(&[
        "track",
        "--detections",
        s(&fx.join("vid000/detections.jsonl")),
        "--out",
        s(&tracks),
    ]);
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"segment": {"merge_threshold": -3.0}}"#).unwrap();

    let count = |extra: &[&str]| {
        let out = tmp.path().join("events.jsonl");
        let mut args = vec![
            "segment",
            "--frames",
            s(&frames),
            "--tracks",
            s(&tracks),
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        read(&out).lines().count()
    };
    let default = count(&[]);
    // Every consistency exceeds -3, so everything merges into one event.
    assert_eq!(count(&["--config", s(&config)]), 1);
    assert_eq!(
        count(&["--config", s(&config), "--merge-threshold", "1.0"]),
        default
    );
    assert!(default > 1);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"segment": {"sigmaa": 2.0}}"#).unwrap();
    let out = run(&["--config", s(&config), "gradcheck", "--cases", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_of(&out);
    assert_eq!(err["error"], "validation");
    assert!(err["message"].as_str().unwrap().contains("sigmaa"));
}

#[test]
fn errors_are_json_with_exit_codes() {
    let out = run(&[
        "track",
        "--detections",
        "/nonexistent/detections.jsonl",
        "--out",
        "/tmp/x.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "io");
    assert!(out.stdout.is_empty());

    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"], "usage");

    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pipeline"));

    let tmp = tempfile::tempdir().unwrap();
    let space = tmp.path().join("space.bin");
    ok(&["init-space", "--n", "10", "--dim", "4", "--out", s(&space)]);
    let out = run(&["encode-time", "--space", s(&space), "--tau", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"], "range");
    let out = run(&[
        "encode-time",
        "--space",
        s(&space),
        "--tau",
        "0.5",
        "--n",
        "11",
    ]);
    assert_eq!(error_of(&out)["error"], "shape");
}

#[test]
fn encode_then_decode_recovers_the_time() {
    let tmp = tempfile::tempdir().unwrap();
    let space = tmp.path().join("space.bin");
    ok(&[
        "init-space",
        "--n",
        "50",
        "--dim",
        "8",
        "--seed",
        "3",
        "--out",
        s(&space),
    ]);
    for tau in ["0", "0.3", "0.731", "1"] {
        let embedding = ok(&[
            "encode-time",
            "--space",
            s(&space),
            "--tau",
            tau,
            "--n",
            "50",
        ]);
        let decoded = json(&ok(&[
            "decode-time",
            "--space",
            s(&space),
            "--embedding",
            embedding.trim(),
        ]));
        let got = decoded["tau"].as_f64().unwrap();
        assert!(
            (got - tau.parse::<f64>().unwrap()).abs() <= 1e-9,
            "{tau}: {got}"
        );
        assert!(decoded["residual"].as_f64().unwrap() <= 1e-12);
    }
}

#[test]
fn seq_render_and_parse_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let events = tmp.path().join("events.jsonl");
    std::fs::write(
        &events,
        concat!(
            r#"{"start": 0.155, "end": 0.3075, "caption": "A group of children"}"#,
            "\n",
            r#"{"start": 0.5, "end": 0.75, "caption": "Kids: \"run\""}"#,
            "\n",
        ),
    )
    .unwrap();
    let doc = tmp.path().join("doc.txt");
    ok(&[
        "seq",
        "render",
        "--events",
        s(&events),
        "--format",
        "seconds",
        "--duration",
        "100",
        "--out",
        s(&doc),
    ]);
    let text = read(&doc);
    assert!(
        text.starts_with("#format=seconds;duration=100\n15.50s-30.75s : A group of children\n"),
        "{text}"
    );

    let parsed = tmp.path().join("parsed.jsonl");
    ok(&["seq", "parse", "--input", s(&doc), "--out", s(&parsed)]);
    let again = tmp.path().join("again.txt");
    ok(&[
        "seq",
        "render",
        "--events",
        s(&parsed),
        "--format",
        "seconds",
        "--duration",
        "100",
        "--out",
        s(&again),
    ]);
    assert_eq!(read(&again), text);
}

#[test]
fn metrics_commands_report_hand_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = tmp.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };

    let pred = write(
        "g_pred.jsonl",
        "{\"query_id\": \"a\", \"start\": 0, \"end\": 6}\n{\"query_id\": \"b\", \"start\": 0, \"end\": 1}\n",
    );
    let gt = write(
        "g_gt.jsonl",
        "{\"query_id\": \"a\", \"start\": 0, \"end\": 10}\n{\"query_id\": \"b\", \"start\": 5, \"end\": 6}\n",
    );
    let report_path = tmp.path().join("grounding.json");
    let report = json(&ok(&[
        "metrics",
        "grounding",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--thresholds",
        "0.5,0.7",
        "--out",
        s(&report_path),
    ]));
    assert_eq!(report["recall_at"][0]["value"], 0.5);
    assert_eq!(report["recall_at"][1]["value"], 0.0);
    assert!((report["mean_iou"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(json(&read(&report_path)), report);

    let pred = write(
        "a_pred.jsonl",
        "{\"start\": 0, \"end\": 4, \"label\": \"x\"}\n{\"start\": 4, \"end\": 10, \"label\": \"y\"}\n",
    );
    let gt = write(
        "a_gt.jsonl",
        "{\"start\": 0, \"end\": 5, \"label\": \"x\"}\n{\"start\": 5, \"end\": 10, \"label\": \"y\"}\n",
    );
    let report = json(&ok(&[
        "metrics",
        "actionseg",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--fps",
        "1",
    ]));
    assert!((report["mof"].as_f64().unwrap() - 0.9).abs() < 1e-12);
    assert_eq!(report["f1_at"][2]["value"], 1.0);

    let pred = write(
        "h_pred.jsonl",
        "{\"query_id\": \"q\", \"start\": 0, \"end\": 6, \"score\": 1.0}\n",
    );
    let gt = write(
        "h_gt.jsonl",
        "{\"query_id\": \"q\", \"start\": 0, \"end\": 10}\n",
    );
    let config = write(
        "h_config.json",
        r#"{"metrics": {"iou_grid": [0.5, 0.55, 0.6, 0.65]}}"#,
    );
    let report = json(&ok(&[
        "metrics",
        "highlight",
        "--config",
        s(&config),
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
    ]));
    assert_eq!(report["map"], 0.75);
    assert_eq!(report["r1_at_05"], 1.0);
}

#[test]
fn gradcheck_and_continuity_commands_succeed() {
    let summary = json(&ok(&["gradcheck", "--cases", "20", "--seed", "4"]));
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["cases"], 20);

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("continuity");
    let summary = json(&ok(&["continuity", "--out-dir", s(&dir), "--steps", "100"]));
    assert_eq!(summary["gap_improved"], true);
    for name in ["pca_ntp.csv", "pca_plain.csv", "report.json"] {
        assert!(dir.join(name).is_file(), "{name}");
        assert!(
            dir.join(format!("{name}.provenance.json")).is_file(),
            "{name} sidecar"
        );
    }
    let report = json(&read(&dir.join("report.json")));
    assert_eq!(
        report["without_ntp"]["report"]["unsupervised_displacement"],
        0.0
    );
    assert_eq!(read(&dir.join("pca_ntp.csv")).lines().count(), 65);
}
