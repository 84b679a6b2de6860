use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use varspace::synth::{build_trials, generate, split_enrollment};
use varspace::{Embedding, EmbeddingFormat, EmbeddingSet, Matrix, PopulationConfig, SweepResult, VariabilitySpace};

fn varspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varspace"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key}= in {text:?}"))
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Work {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, contents).unwrap();
        p
    }

    fn csv(&self, name: &str, set: &EmbeddingSet) -> PathBuf {
        let p = self.path(name);
        set.save(&p, EmbeddingFormat::Csv).unwrap();
        p
    }

    fn diagonal_space(&self, name: &str, eigenvalues: &[f64]) -> PathBuf {
        let d = eigenvalues.len();
        let space = VariabilitySpace::from_parts(vec![0.0; d], Matrix::identity(d), eigenvalues.to_vec()).unwrap();
        let p = self.path(name);
        space.save(&p).unwrap();
        p
    }
}

fn set_of(rows: &[(&str, &str, &[f64])]) -> EmbeddingSet {
    EmbeddingSet::from_records(
        rows.iter()
            .map(|(u, k, v)| Embedding {
                utt_id: u.to_string(),
                spk_id: k.to_string(),
                vector: v.to_vec(),
            })
            .collect(),
    )
    .unwrap()
}

const ACCEPTANCE_CONFIG: &str = "\
# 40 speakers, 8 planted dimensions
n_speakers = 40
utts_per_speaker = 20
dim = 32
between = 0.9x8,0.0x24
within = 0.1x32
seed = 20240901
";

/// Space fitted on one population, enroll/test/trials drawn from another.
struct Synthetic {
    space: PathBuf,
    enroll: PathBuf,
    test: PathBuf,
    trials: PathBuf,
}

fn synthetic(w: &Work) -> Synthetic {
    let config = PopulationConfig::parse(ACCEPTANCE_CONFIG).unwrap();
    let train = generate(&PopulationConfig {
        seed: config.seed + 1,
        ..config.clone()
    })
    .unwrap();
    let train_path = w.csv("train.csv", &train);
    let space = w.path("space.vsp");
    assert_eq!(code(&varspace(&["fit", "--embeddings", s(&train_path), "--out", s(&space)])), 0);
    let (enroll, test) = split_enrollment(&generate(&config).unwrap(), 10).unwrap();
    let trials = w.path("trials.txt");
    build_trials(&test, 500, 7).unwrap().save(&trials).unwrap();
    Synthetic {
        space,
        enroll: w.csv("enroll.csv", &enroll),
        test: w.csv("test.csv", &test),
        trials,
    }
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&varspace(&["--help"])), 0);
    assert_eq!(code(&varspace(&["--version"])), 0);
}

#[test]
fn usage_errors_are_prefixed() {
    let out = varspace(&["fit", "--bogus"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:usage:"), "{}", stderr(&out));
}

#[test]
fn fit_writes_space_and_summary() {
    let w = Work::new();
    let set = generate(&PopulationConfig::planted(10, 10, 16, 4, 1.0, 0.1, 5)).unwrap();
    let input = w.csv("e.csv", &set);
    let before = fs::read(&input).unwrap();
    let space = w.path("s.vsp");
    let out = varspace(&["fit", "--embeddings", s(&input), "--out", s(&space)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(field(&text, "D"), "16");
    assert_eq!(field(&text, "N"), "100");
    assert_eq!(VariabilitySpace::load(&space).unwrap().dim(), 16);
    assert_eq!(fs::read(&input).unwrap(), before);

    let bin = w.path("e.emb");
    set.save(&bin, EmbeddingFormat::Binary).unwrap();
    let again = w.path("s2.vsp");
    assert_eq!(code(&varspace(&["fit", "--embeddings", s(&bin), "--out", s(&again)])), 0);
}

#[test]
fn fit_error_categories() {
    let w = Work::new();
    let one = w.csv("one.csv", &set_of(&[("u", "k", &[1.0, 2.0])]));
    let out = varspace(&["fit", "--embeddings", s(&one), "--out", s(&w.path("x"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:data:"), "{}", stderr(&out));
    assert!(!w.path("x").exists());

    let out = varspace(&["fit", "--embeddings", s(&w.path("missing.csv")), "--out", s(&w.path("x"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).starts_with("error:io:"));

    let bad = w.write("bad.csv", "utt_id,spk_id,d1\nu,k,oops\n");
    let out = varspace(&["fit", "--embeddings", s(&bad), "--out", s(&w.path("x"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:format:"));
}

#[test]
fn spectrum_rows_and_deltas() {
    let w = Work::new();
    let set = generate(&PopulationConfig::planted(10, 10, 16, 4, 1.0, 0.1, 6)).unwrap();
    let input = w.csv("e.csv", &set);
    let space = w.path("s.vsp");
    assert_eq!(code(&varspace(&["fit", "--embeddings", s(&input), "--out", s(&space)])), 0);
    let csv = w.path("spec.csv");
    assert_eq!(code(&varspace(&["spectrum", "--space", s(&space), "--out", s(&csv)])), 0);

    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,log_eigenvalue,delta"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 16);
    let logs: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1).to_string());
        if i + 1 < rows.len() {
            let delta: f64 = r[2].parse().unwrap();
            assert!((delta - (logs[i + 1] - logs[i])).abs() <= 1e-12);
        } else {
            assert_eq!(r[2], "");
        }
    }
}

#[test]
fn spectrum_error_categories() {
    let w = Work::new();
    let out = varspace(&["spectrum", "--space", s(&w.path("none")), "--out", s(&w.path("o"))]);
    assert_eq!(code(&out), 3);
    let junk = w.write("junk.vsp", "not a space");
    let out = varspace(&["spectrum", "--space", s(&junk), "--out", s(&w.path("o"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:format:"));
}

#[test]
fn detect_knee_on_planted_spectrum() {
    let w = Work::new();
    let mut deltas: Vec<f64> = (0..11).map(|j| if j % 2 == 0 { -0.48 } else { -0.52 }).collect();
    deltas.extend((0..8).map(|j| -1.0 - 0.2 * j as f64));
    let mut log = vec![0.0];
    for a in &deltas {
        log.push(log.last().unwrap() + a);
    }
    let eigen: Vec<f64> = log.iter().map(|l| l.exp()).collect();
    assert_eq!(eigen.len(), 20);
    let space = w.diagonal_space("knee.vsp", &eigen);
    let out = varspace(&["detect-knee", "--space", s(&space)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(field(&stdout(&out), "turning"), "12");
    assert_eq!(field(&stdout(&out), "strength"), "strong");
}

#[test]
fn detect_knee_on_monotone_spectrum() {
    let w = Work::new();
    let mut l = 0.0;
    let eigen: Vec<f64> = (0..20)
        .map(|j| {
            l -= 0.1 * j as f64;
            f64::exp(l)
        })
        .collect();
    let space = w.diagonal_space("mono.vsp", &eigen);
    let out = varspace(&["detect-knee", "--space", s(&space)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(field(&stdout(&out), "turning"), "1");
    assert_eq!(field(&stdout(&out), "strength"), "strong");
}

#[test]
fn detect_knee_rejects_tiny_space() {
    let w = Work::new();
    let space = w.diagonal_space("tiny.vsp", &[2.0, 1.0]);
    let out = varspace(&["detect-knee", "--space", s(&space)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:validation:"));
}

#[test]
fn modify_on_256_dimensions() {
    let w = Work::new();
    let set = generate(&PopulationConfig::planted(30, 10, 256, 20, 1.0, 0.1, 9)).unwrap();
    let input = w.csv("e.csv", &set);
    let before = fs::read(&input).unwrap();
    let space = w.path("s.vsp");
    assert_eq!(code(&varspace(&["fit", "--embeddings", s(&input), "--out", s(&space)])), 0);
    let space_before = fs::read(&space).unwrap();

    let out_path = w.path("mod.csv");
    let out = varspace(&[
        "modify", "--space", s(&space), "--embeddings", s(&input), "--spec", "secondary:200:45:-", "--out",
        s(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(field(&stdout(&out), "mean_removed_energy").parse::<f64>().unwrap() > 0.0);
    assert_eq!(EmbeddingSet::load(&out_path, None).unwrap().len(), 300);
    assert_eq!(fs::read(&input).unwrap(), before);
    assert_eq!(fs::read(&space).unwrap(), space_before);

    let same = w.path("same.csv");
    let out = varspace(&[
        "modify", "--space", s(&space), "--embeddings", s(&input), "--spec", "primary:1:0:+", "--out", s(&same),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&same).unwrap(), before);

    let out = varspace(&[
        "modify", "--space", s(&space), "--embeddings", s(&input), "--spec", "primary:1:300:+", "--out",
        s(&w.path("x.csv")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:validation:"));
}

#[test]
fn modify_reports_grammar_for_bad_spec() {
    let w = Work::new();
    let space = w.diagonal_space("s.vsp", &[2.0, 1.0]);
    let input = w.csv("e.csv", &set_of(&[("u", "k", &[1.0, 2.0])]));
    let out = varspace(&[
        "modify", "--space", s(&space), "--embeddings", s(&input), "--spec", "first-three", "--out",
        s(&w.path("o.csv")),
    ]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.starts_with("error:"));
    assert!(err.contains("secondary:200:45:-"), "{err}");
}

#[test]
fn modify_output_format_follows_extension() {
    let w = Work::new();
    let space = w.diagonal_space("s.vsp", &[2.0, 1.0]);
    let input = w.csv("e.csv", &set_of(&[("u", "k", &[1.0, 2.0])]));
    let bin = w.path("o.emb");
    let args = ["modify", "--space", s(&space), "--embeddings", s(&input), "--spec", "1:1:+", "--out", s(&bin)];
    assert_eq!(code(&varspace(&args)), 0);
    assert!(fs::read(&bin).unwrap().starts_with(b"EMB1"));
    let set = EmbeddingSet::load(&bin, None).unwrap();
    assert_eq!(set.records()[0].vector, vec![0.0, 2.0]);
}

fn eer_fixture(w: &Work, tests: &[(&str, f64)], trials: &str) -> Output {
    let enroll = w.csv("enroll.csv", &set_of(&[("a0", "A", &[1.0, 0.0]), ("b0", "B", &[0.0, 1.0])]));
    let rows: Vec<(String, Vec<f64>)> = tests
        .iter()
        .map(|&(u, c)| (u.to_string(), vec![c, (1.0 - c * c).sqrt()]))
        .collect();
    let set = set_of(&rows.iter().map(|(u, v)| (u.as_str(), "T", v.as_slice())).collect::<Vec<_>>());
    let test = w.csv("test.csv", &set);
    let trials = w.write("trials.txt", trials);
    varspace(&["eer", "--enroll", s(&enroll), "--embeddings", s(&test), "--trials", s(&trials)])
}

#[test]
fn eer_separated_fixture() {
    let w = Work::new();
    let out = eer_fixture(
        &w,
        &[("t1", 0.9), ("t2", 0.2)],
        "A t1 target\nB t2 target\nA t2 nontarget\nB t1 nontarget\n",
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("eer_percent=0 "), "{text}");
    assert_eq!(field(&text, "n_target"), "2");
    assert_eq!(field(&text, "n_nontarget"), "2");
}

#[test]
fn eer_overlap_fixture() {
    let w = Work::new();
    let out = eer_fixture(
        &w,
        &[("t1", 0.8), ("t2", 0.2), ("n1", 0.7), ("n2", 0.1)],
        "A t1 target\nA t2 target\nA n1 nontarget\nA n2 nontarget\n",
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(field(&stdout(&out), "eer_percent"), "50");
}

#[test]
fn eer_unknown_utterance_names_line() {
    let w = Work::new();
    let out = eer_fixture(&w, &[("t1", 0.8)], "A t1 target\n\nB ghost nontarget\n");
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.starts_with("error:data:"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn sweep_matches_modify_then_eer() {
    let w = Work::new();
    let syn = synthetic(&w);
    let out_csv = w.path("sweep.csv");
    let out = varspace(&[
        "sweep", "--space", s(&syn.space), "--enroll", s(&syn.enroll), "--embeddings", s(&syn.test), "--trials",
        s(&syn.trials), "--family", "primary", "--k", "0:20:5", "--out", s(&out_csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sweep = SweepResult::parse_csv(&fs::read_to_string(&out_csv).unwrap()).unwrap();
    assert_eq!(sweep.rows.len(), 5);

    for row in &sweep.rows {
        let spec = format!("primary:1:{}:+", row.size);
        let me = w.path("me.csv");
        let mt = w.path("mt.csv");
        for (input, output) in [(&syn.enroll, &me), (&syn.test, &mt)] {
            let args = ["modify", "--space", s(&syn.space), "--embeddings", s(input), "--spec", &spec, "--out", s(output)];
            assert_eq!(code(&varspace(&args)), 0);
        }
        let out = varspace(&["eer", "--enroll", s(&me), "--embeddings", s(&mt), "--trials", s(&syn.trials)]);
        let eer: f64 = field(&stdout(&out), "eer_percent").parse().unwrap();
        assert_eq!(eer, row.eer_percent, "K={}", row.size);
    }
}

#[test]
fn sweep_is_repeatable_and_validates_family() {
    let w = Work::new();
    let syn = synthetic(&w);
    let run = |name: &str, family: &str, extra: &[&str]| {
        let out_csv = w.path(name);
        let mut args = vec![
            "sweep", "--space", s(&syn.space), "--enroll", s(&syn.enroll), "--embeddings", s(&syn.test), "--trials",
            s(&syn.trials), "--family", family, "--k", "0:10:5",
        ];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", s(&out_csv)]);
        (varspace(&args), out_csv)
    };
    let (a, pa) = run("a.csv", "residual", &[]);
    let (b, pb) = run("b.csv", "residual", &[]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());

    let (missing, path) = run("c.csv", "secondary", &[]);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).starts_with("error:validation:"));
    assert!(!path.exists());

    let (ok, _) = run("d.csv", "secondary", &["--is", "20"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
}

#[test]
fn synth_writes_population_deterministically() {
    let w = Work::new();
    let config = w.write("pop.conf", ACCEPTANCE_CONFIG);
    let a = w.path("a.emb");
    let b = w.path("b.emb");
    let out = varspace(&["synth", "--config", s(&config), "--out", s(&a)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(field(&stdout(&out), "records"), "800");
    assert_eq!(EmbeddingSet::load(&a, None).unwrap().len(), 800);
    assert_eq!(code(&varspace(&["synth", "--config", s(&config), "--out", s(&b)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn synth_split_and_trials() {
    let w = Work::new();
    let config = w.write("pop.conf", ACCEPTANCE_CONFIG);
    let (test, enroll, trials) = (w.path("t.csv"), w.path("e.csv"), w.path("trials.txt"));
    let out = varspace(&[
        "synth", "--config", s(&config), "--out", s(&test), "--enroll-out", s(&enroll), "--enroll-utts", "10",
        "--trials", s(&trials), "--nontarget", "300",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(EmbeddingSet::load(&enroll, None).unwrap().len(), 400);
    assert_eq!(EmbeddingSet::load(&test, None).unwrap().len(), 400);
    assert_eq!(fs::read_to_string(&trials).unwrap().lines().count(), 700);
    let out = varspace(&["eer", "--enroll", s(&enroll), "--embeddings", s(&test), "--trials", s(&trials)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn synth_rejects_empty_population() {
    let w = Work::new();
    let config = w.write("pop.conf", &ACCEPTANCE_CONFIG.replace("n_speakers = 40", "n_speakers = 0"));
    let out = varspace(&["synth", "--config", s(&config), "--out", s(&w.path("a.emb"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:validation:"));
    assert!(!w.path("a.emb").exists());
}
