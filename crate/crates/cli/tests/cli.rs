use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duet_core::biometric::QscLevel;
use duet_core::corpus::{decode_measure, write_corpus, Session, STEPS_PER_MEASURE};
use duet_core::netio::{events_to_smf, MidiEvent};
use serde_json::Value;
use tempfile::TempDir;

fn duet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duet"))
        .args(args)
        .current_dir(dir)
        .env_remove("DUET_MODEL")
        .env_remove("DUET_VOCAB")
        .env_remove("DUET_SCRIPT")
        .env_remove("DUET_CONFIG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = duet(dir, args);
    assert!(out.status.success(), "{args:?}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = duet(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

const TINY: &str = r#"
[data]
min_count = 1
fractions = { train = 0.6, validation = 0.2, test = 0.2 }

[model]
embed_dim = 4
hidden_units = 8
dropout_rate = 0.0
seed = 3

[train]
max_epochs = 5
batch_size = 4
learning_rate = 0.01
"#;

/// A 120 bpm duet: kick/snare/hi-hat with a variation every third measure,
/// and a one-note-per-beat melody on channel 1.
fn duet_midi(measures: usize, shift: u8) -> Vec<u8> {
    let beat = 500.0;
    let mut ev = Vec::new();
    for m in 0..measures {
        let t0 = m as f64 * 4.0 * beat;
        for b in 0..4 {
            let t = t0 + b as f64 * beat;
            ev.push(MidiEvent::note_on(t, 9, if b % 2 == 0 { 36 } else { 38 }, 90).unwrap());
            ev.push(MidiEvent::note_on(t + beat / 2.0, 9, 42, 50).unwrap());
            let pitch = 60 + shift + ((m + b) % 5) as u8;
            ev.push(MidiEvent::note_on(t, 0, pitch, 70).unwrap());
            ev.push(MidiEvent::checked(t + beat * 0.75, duet_core::netio::MidiStatus::NoteOff, 0, pitch, 0).unwrap());
        }
        if m % 3 == 2 {
            ev.push(MidiEvent::note_on(t0 + 2.5 * beat, 9, 36, 110).unwrap());
        }
    }
    events_to_smf(&ev, 120.0).unwrap()
}

/// Calibration (negative times) then a session with one sharp rise at 10 s.
fn sc_csv() -> String {
    let mut s = String::from("t_s,microsiemens\n");
    let mut i = -720i64;
    while i < 160 {
        let t = i as f64 * 0.25;
        let wobble = 0.05 * ((i as f64) * 0.7).sin();
        let jump = if t >= 10.0 { 1.0 } else { 0.0 };
        s += &format!("{t},{}\n", 5.0 + wobble + jump);
        i += 1;
    }
    s
}

struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

/// corpus build -> vocab -> train (5 epochs).
fn pipeline() -> Pipeline {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("midi")).unwrap();
    fs::write(d.join("midi/duo1.mid"), duet_midi(16, 0)).unwrap();
    fs::write(d.join("midi/duo1.sc.csv"), sc_csv()).unwrap();
    fs::write(d.join("midi/duo2.mid"), duet_midi(16, 2)).unwrap();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let p = Pipeline { dir };
    let d = p.dir.path();
    ok(d, &["corpus", "build", &p.p("midi"), "-o", &p.p("corpus.txt")]);
    ok(d, &["--config", &p.p("tiny.toml"), "corpus", "vocab", &p.p("corpus.txt"), "-o", &p.p("vocab.tsv")]);
    ok(d, &["--config", &p.p("tiny.toml"), "train", "--corpus", &p.p("corpus.txt"), "--vocab", &p.p("vocab.tsv"), "-o", &p.p("model.bin")]);
    p
}

#[test]
fn corpus_train_eval_and_perform() {
    let p = pipeline();
    let d = p.dir.path();

    let corpus = fs::read_to_string(p.path("corpus.txt")).unwrap();
    assert!(corpus.contains("#session id=duo1 tempo=120") && corpus.contains("#session id=duo2 tempo=120"));
    // the sidecar's rise lands at measure 5 (10 s)
    let duo1: Vec<&str> = corpus.lines().skip(1).take(16).collect();
    assert!(duo1[5].starts_with("High\t"), "{}", duo1[5]);
    let m = manifest(&p.path("corpus.txt.manifest.json"));
    assert_eq!(m["command"], "corpus build");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let stats = ok(d, &["corpus", "stats", &p.p("corpus.txt"), "--min-count", "1", "--json"]);
    let s: Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(s["sessions"], 2);
    assert_eq!(s["measures"], 32);
    assert_eq!(s["token_occurrences"], 32 * STEPS_PER_MEASURE as u64);
    assert_eq!(s["qsc_counts"]["High"], 1);
    let props: f64 = ["High", "Med", "Low"].iter().map(|k| s["qsc_proportions"][k].as_f64().unwrap()).sum();
    assert!((props - 1.0).abs() < 1e-12);
    let text = ok(d, &["corpus", "stats", &p.p("corpus.txt")]);
    assert!(text.contains("pruned") && text.contains("QSC High"), "{text}");

    // training history: finite and improving
    let m = manifest(&p.path("model.bin.manifest.json"));
    let hist: Vec<f64> = m["results"]["history"].as_array().unwrap().iter().map(|h| h["monitor"]["perplexity"].as_f64().unwrap()).collect();
    assert_eq!(hist.len(), 5);
    assert!(hist.iter().all(|p| p.is_finite()));
    assert!(hist[4] < hist[0], "{hist:?}");
    assert_eq!(m["config"]["model"]["hidden_units"], 8);

    let ev = ok(
        d,
        &[
            "--config",
            &p.p("tiny.toml"),
            "eval",
            "--model",
            &p.p("model.bin"),
            "--corpus",
            &p.p("corpus.txt"),
            "--vocab",
            &p.p("vocab.tsv"),
        ],
    );
    assert!(ev.contains("validation perplexity") && ev.contains("test") && ev.contains("perplexity"), "{ev}");

    // scripted smoke session, twice: the logs and recordings match byte for byte
    let run = |tag: &str| {
        let log = p.p(&format!("{tag}.jsonl"));
        let mid = p.p(&format!("{tag}.mid"));
        ok(
            d,
            &[
                "perform",
                "--model",
                &p.p("model.bin"),
                "--vocab",
                &p.p("vocab.tsv"),
                "--script",
                &p.p("corpus.txt"),
                "--measures",
                "4",
                "--seed",
                "9",
                "--vis",
                "deceptive",
                "--bio",
                "deceptive",
                "--simulated-clock",
                "--no-visualizer",
                "--log",
                &log,
                "--record",
                &mid,
            ],
        );
        (fs::read(&log).unwrap(), fs::read(&mid).unwrap())
    };
    let (a, a_mid) = run("a");
    let (b, b_mid) = run("b");
    assert_eq!(a, b);
    assert_eq!(a_mid, b_mid);
    let lines: Vec<Value> = String::from_utf8(a).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let measures: Vec<&Value> = lines.iter().filter(|l| l["type"] == "measure").collect();
    assert_eq!(measures.len(), 4);
    assert!(measures.iter().all(|m| m["origin"] != "fallback"));
    assert_eq!(lines.last().unwrap()["outcome"]["status"], "completed");

    let m = manifest(&p.path("a.jsonl.manifest.json"));
    assert_eq!(m["command"], "perform");
    assert_eq!(m["config"]["vis_condition"], "deceptive");
    assert_eq!(m["config"]["bio_condition"], "deceptive");
    assert_eq!(m["config"]["input_mode"], "script");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["results"]["measures"], 4);
    assert_eq!(m["exit_code"], 0);
}

#[test]
fn repeated_deadline_misses_exit_with_runtime_code() {
    let p = pipeline();
    let d = p.dir.path();
    let err = fails(
        d,
        &[
            "perform",
            "--model",
            &p.p("model.bin"),
            "--vocab",
            &p.p("vocab.tsv"),
            "--script",
            &p.p("corpus.txt"),
            "--measures",
            "8",
            "--simulated-clock",
            "--no-visualizer",
            "--inject-delay-ms",
            "100",
            "--inject-delay-at",
            "1,2,3,4",
            "--log",
            &p.p("late.jsonl"),
        ],
        3,
    );
    assert!(err.contains("aborted"), "{err}");
    let m = manifest(&p.path("late.jsonl.manifest.json"));
    assert_eq!(m["exit_code"], 3);
    assert_eq!(m["results"]["misses"].as_array().unwrap().len(), 4);
}

#[test]
fn untrained_model_on_ten_token_vocabulary_is_near_uniform() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // five musical tokens plus five specials
    let texts = ["o", "36mf", "38mf", "42mf", "36mf|42mf"];
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as usize % texts.len()
    };
    let sessions: Vec<Session> = (0..3)
        .map(|s| {
            let measures = (0..12)
                .map(|_| {
                    let cells: Vec<&str> = (0..STEPS_PER_MEASURE).map(|_| texts[next()]).collect();
                    decode_measure(&cells).unwrap()
                })
                .collect();
            Session::new(format!("r{s}"), 120.0, measures, vec![QscLevel::Med; 12])
        })
        .collect();
    let mut buf = Vec::new();
    write_corpus(&mut buf, &sessions).unwrap();
    fs::write(d.join("random.txt"), buf).unwrap();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let c = d.join("tiny.toml").display().to_string();
    ok(d, &["--config", &c, "corpus", "vocab", "random.txt", "-o", "vocab.tsv"]);
    ok(d, &["--config", &c, "train", "--corpus", "random.txt", "--vocab", "vocab.tsv", "-o", "untrained.bin", "--untrained"]);
    let out = ok(d, &["--config", &c, "eval", "--model", "untrained.bin", "--corpus", "random.txt", "--vocab", "vocab.tsv", "--json"]);
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["vocab_size"], 10);
    for split in ["validation", "test"] {
        let ppl = r[split]["perplexity"].as_f64().unwrap();
        assert!((ppl - 10.0).abs() < 0.5, "{split}: {ppl}");
    }
    assert!(d.join("duet-eval.manifest.json").is_file());
}

#[test]
fn analyze_reports() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let flow = ok(d, &["analyze", "flow", &core_fixture("flow_sessions.csv").display().to_string()]);
    for want in ["3.57", "3.74", "4.00", "first component"] {
        assert!(flow.contains(want), "{flow}");
    }
    let published = ok(d, &["analyze", "flow", "--published"]);
    assert!(published.contains("3.57") && published.contains("0.76"), "{published}");
    let json = ok(d, &["analyze", "flow", "--published", "--json"]);
    let v: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["summary"]["rows"].as_array().unwrap().len(), 7);

    let table4 = ok(d, &["analyze", "listener", "--published"]);
    for want in ["44%", "51%", "67%", "65%", "57%", "60%", "53%", "55%"] {
        assert!(table4.contains(want), "{table4}");
    }
    let listener = ok(d, &["analyze", "listener", &core_fixture("listener_responses.csv").display().to_string(), "--json"]);
    let v: Value = serde_json::from_str(&listener).unwrap();
    assert_eq!(v["included"], 96);
    assert_eq!(v["participants"], 100);
    assert!(d.join("duet-analyze-listener.manifest.json").is_file());
}

#[test]
fn error_exits() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("empty")).unwrap();
    let err = fails(d, &["corpus", "build", "empty", "-o", "c.txt"], 2);
    assert!(err.contains("no .mid files"), "{err}");

    fs::write(d.join("bad.csv"), "participant,condition,item1,item2,item3,item4,item5,item6,item7,item8,item9\nP1,truthful,4,4,4,4,4,4,4,4,4\nP1,sideways,4,4,4,4,4,4,4,4,4\n").unwrap();
    let err = fails(d, &["analyze", "flow", "bad.csv"], 2);
    assert!(err.contains("line 3"), "{err}");
    fs::write(d.join("empty.csv"), "").unwrap();
    fails(d, &["analyze", "listener", "empty.csv"], 2);
    fails(d, &["analyze", "flow", "missing.csv"], 2);

    fails(d, &["eval", "--model", "nope.bin", "--corpus", "c.txt", "--vocab", "v.tsv"], 2);
    fails(d, &["perform", "--vis", "sideways"], 1);
    fails(d, &["train", "--no-such-flag"], 1);
    fails(d, &["analyze", "flow"], 1);
    // a session needs a model
    fails(d, &["perform", "--simulated-clock", "--no-visualizer"], 1);
    assert!(duet(d, &["--help"]).status.success());
}

#[test]
fn config_and_vocabulary_must_agree() {
    let p = pipeline();
    let d = p.dir.path();
    fs::write(p.path("wrong.toml"), TINY.replace("seed = 3", "seed = 3\nvocab_size = 7")).unwrap();
    let err = fails(
        d,
        &["--config", &p.p("wrong.toml"), "train", "--corpus", &p.p("corpus.txt"), "--vocab", &p.p("vocab.tsv"), "-o", &p.p("m2.bin")],
        2,
    );
    assert!(err.contains("vocab_size 7"), "{err}");

    // a model trained on another vocabulary is refused
    ok(d, &["corpus", "vocab", &p.p("corpus.txt"), "-o", &p.p("other.tsv"), "--min-count", "1000"]);
    let err = fails(d, &["eval", "--model", &p.p("model.bin"), "--corpus", &p.p("corpus.txt"), "--vocab", &p.p("other.tsv")], 2);
    assert!(err.contains("vocabulary"), "{err}");
}

#[test]
fn sweep_keeps_the_best_point() {
    let p = pipeline();
    let d = p.dir.path();
    let cfg = format!("{TINY}\n[sweep]\nlearning_rate = [0.01, 0.0001]\n").replace("max_epochs = 5", "max_epochs = 2");
    fs::write(p.path("sweep.toml"), cfg).unwrap();
    let out = ok(
        d,
        &[
            "--config",
            &p.p("sweep.toml"),
            "train",
            "--sweep",
            "--corpus",
            &p.p("corpus.txt"),
            "--vocab",
            &p.p("vocab.tsv"),
            "-o",
            &p.p("s.bin"),
        ],
    );
    assert!(out.contains("sweep 2/2"), "{out}");
    let m = manifest(&p.path("s.bin.manifest.json"));
    let pts = m["results"]["sweep"].as_array().unwrap();
    assert_eq!(pts.len(), 2);
    let best = pts.iter().map(|p| p["best_perplexity"].as_f64().unwrap()).fold(f64::INFINITY, f64::min);
    let hist_best = m["results"]["history"]
        .as_array()
        .unwrap()
        .iter()
        .map(|h| h["monitor"]["perplexity"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best, hist_best);
    fails(
        d,
        &[
            "--config",
            &p.p("tiny.toml"),
            "train",
            "--sweep",
            "--corpus",
            &p.p("corpus.txt"),
            "--vocab",
            &p.p("vocab.tsv"),
            "-o",
            &p.p("s2.bin"),
        ],
        1,
    );
}
