//! Shared fixture generators for integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sawtooth_core::action::tools;
use sawtooth_core::{parse_trajectories, Action, Step, TaskHeader, Trajectory};

pub use rand::SeedableRng;
pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` whitespace tokens, unique to `tag`.
pub fn words(tag: &str, n: usize) -> String {
    (0..n).map(|i| format!("{tag}.{i}")).collect::<Vec<_>>().join(" ")
}

const PAYLOADS: &[&str] = &[
    "grep -n \"def f\" a.py",
    "if x == '{':\n    return {\"k\": [1, 2]}\n",
    "fn main() {\n    println!(\"{}\", 1);\n}",
    "echo 'single' \"double\" `tick`",
    "<div class=\"x\">{{ value }}</div>",
    "a < b && c > d",
    "  leading and trailing spaces  ",
    "\n\nblank lines\n\n",
    "tab\tseparated\tvalues",
    "unicode: λ → ∑ 日本",
    "",
    "json: {\"a\": {\"b\": [\"c\", null]}}",
    "path/with spaces/file name.py",
    "backslash \\n not a newline \\\"",
];

const KEYS: &[&str] = &["cmd", "path", "command", "old_str", "new_str", "file_text", "search_term", "patch"];

pub fn random_payload(rng: &mut Rng8) -> String {
    let mut s = String::new();
    for _ in 0..rng.gen_range(1..=3) {
        if rng.gen_bool(0.7) {
            s.push_str(PAYLOADS.choose(rng).unwrap());
        } else {
            let n = rng.gen_range(0..6);
            s.push_str(&words(&format!("w{}", rng.gen::<u16>()), n));
        }
        if rng.gen_bool(0.3) {
            s.push('\n');
        }
    }
    s
}

pub fn random_action(rng: &mut Rng8) -> Action {
    let tool = *tools::ALL.choose(rng).unwrap();
    let n = rng.gen_range(0..=3);
    let mut keys: Vec<&str> = KEYS.to_vec();
    keys.shuffle(rng);
    let params: Vec<(String, String)> = keys[..n].iter().map(|k| (k.to_string(), random_payload(rng))).collect();
    Action::new(tool, params).unwrap()
}

pub fn header() -> TaskHeader {
    TaskHeader {
        system_prompt: "You are a software engineering agent.".into(),
        issue_statement: "The parser rejects valid input.".into(),
    }
}

/// Step sizes in whitespace tokens.
#[derive(Debug, Clone, Copy)]
pub struct Sizes {
    pub o: usize,
    pub r: usize,
    pub d: usize,
}

/// Enriched trajectory whose texts have exactly the given whitespace token
/// counts and are unique per step.
pub fn sized_trajectory(task_id: &str, sizes: &[Sizes], action: impl Fn(usize) -> Action) -> Trajectory {
    let steps = sizes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = i + 1;
            Step::new(t, words(&format!("{task_id}.o{t}"), s.o), action(t))
                .with_thinking(words(&format!("{task_id}.r{t}"), s.r), words(&format!("{task_id}.d{t}"), s.d))
        })
        .collect();
    Trajectory::new(task_id, header(), true, steps)
}

/// Bash action that costs exactly one whitespace token.
pub fn probe(t: usize) -> Action {
    Action::new(tools::EXECUTE_BASH, [("cmd", format!("probe-{t}"))]).unwrap()
}

/// Random enriched trajectory with up to `max_t` steps and random sizes.
pub fn random_trajectory(rng: &mut Rng8, id: usize, max_t: usize) -> Trajectory {
    let t = rng.gen_range(1..=max_t);
    let task_id = format!("task-{id}");
    let sizes: Vec<Sizes> = (0..t)
        .map(|_| Sizes {
            o: rng.gen_range(0..40),
            r: rng.gen_range(1..120),
            d: rng.gen_range(0..20),
        })
        .collect();
    let actions: Vec<Action> = (0..t).map(|_| random_action(rng)).collect();
    let mut traj = sized_trajectory(&task_id, &sizes, |i| actions[i - 1].clone());
    traj.success = rng.gen_bool(0.5);
    traj
}

/// Random trajectory exercising the optional fields and code payloads in
/// every text field.
pub fn random_rich_trajectory(rng: &mut Rng8, id: usize) -> Trajectory {
    let t = rng.gen_range(0..=8);
    let steps = (1..=t)
        .map(|i| {
            let mut step = Step::new(i, random_payload(rng), random_action(rng));
            if rng.gen_bool(0.5) {
                step = step.with_shallow_thought(random_payload(rng));
            }
            if rng.gen_bool(0.7) {
                step = step.with_thinking(random_payload(rng), random_payload(rng));
            }
            step
        })
        .collect();
    let mut traj = Trajectory::new(
        format!("rich-{id}"),
        TaskHeader {
            system_prompt: random_payload(rng) + "system",
            issue_statement: random_payload(rng) + "issue",
        },
        rng.gen_bool(0.5),
        steps,
    );
    if rng.gen_bool(0.3) {
        traj.extras.insert("source".into(), serde_json::json!({"repo": "x/y", "n": id}));
    }
    traj
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

/// `(file name, trajectories)` for every corpus file, sorted by name.
pub fn load_corpus() -> Vec<(String, Vec<Trajectory>)> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p.file_name().unwrap().to_string_lossy().into_owned(), parse_trajectories(&text).unwrap())
        })
        .collect()
}

/// Drops reasoning and digest, keeping the shallow thought as hint.
pub fn strip_thinking(traj: &Trajectory) -> Trajectory {
    let mut t = traj.clone();
    for s in &mut t.steps {
        s.reasoning = None;
        s.digest = None;
    }
    t
}
