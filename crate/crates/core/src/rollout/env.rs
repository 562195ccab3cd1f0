//! Environments.
//!
//! [`ScriptedEnvironment`] is a deterministic stand-in for a repository
//! sandbox: a virtual file tree, canned shell outputs, and the four scaffold
//! tools (`file_editor`, `search`, `execute_bash`, `submit`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{tools, Action};
use crate::trajectory::TaskHeader;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub observation: String,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("environment already finished")]
    Finished,
    #[error("environment not reset")]
    NotReset,
    #[error("environment fault: {0}")]
    Fault(String),
}

pub trait Environment {
    fn task_id(&self) -> &str;
    fn header(&self) -> TaskHeader;
    /// Starts an episode and returns the first observation.
    fn reset(&mut self) -> Result<String, EnvError>;
    fn step(&mut self, action: &Action) -> Result<Transition, EnvError>;
    /// Terminal success verdict.
    fn verdict(&self) -> bool;
}

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a software engineering agent working in a repository. \
Tools: file_editor (command=view|create|str_replace, path, file_text, old_str, new_str), \
search (search_term, path), execute_bash (cmd), submit (patch). \
Each turn, think inside <think></think>, then write a short digest of that thinking inside \
<digest></digest>, then call exactly one tool as \
<function=NAME><parameter=KEY>VALUE</parameter></function>.";

/// Scenario file: `{task_id, file_tree, command_outputs, expected_patch,
/// scripted_responses?}` plus optional prompt overrides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue_statement: Option<String>,
    #[serde(default)]
    pub file_tree: BTreeMap<String, String>,
    #[serde(default)]
    pub command_outputs: BTreeMap<String, String>,
    pub expected_patch: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted_responses: Option<Vec<String>>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn header(&self) -> TaskHeader {
        TaskHeader {
            system_prompt: self
                .system_prompt
                .clone()
                .unwrap_or_else(|| DEFAULT_SYSTEM_PROMPT.to_string()),
            issue_statement: self
                .issue_statement
                .clone()
                .unwrap_or_else(|| format!("Resolve the reported issue for task {}.", self.task_id)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedEnvironment {
    scenario: Scenario,
    files: BTreeMap<String, String>,
    started: bool,
    finished: bool,
    submitted_patch: Option<String>,
}

impl ScriptedEnvironment {
    pub fn new(scenario: Scenario) -> Self {
        let files = scenario.file_tree.clone();
        Self {
            scenario,
            files,
            started: false,
            finished: false,
            submitted_patch: None,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn submitted_patch(&self) -> Option<&str> {
        self.submitted_patch.as_deref()
    }

    /// Whole-file patch of every changed path, sorted by path.
    pub fn current_patch(&self) -> String {
        let mut paths: Vec<&String> = self.files.keys().chain(self.scenario.file_tree.keys()).collect();
        paths.sort();
        paths.dedup();
        let mut out = String::new();
        for path in paths {
            let before = self.scenario.file_tree.get(path);
            let after = self.files.get(path);
            if before == after {
                continue;
            }
            out.push_str(&format!(
                "--- {}\n+++ {}\n",
                before.map_or("/dev/null".to_string(), |_| format!("a/{path}")),
                after.map_or("/dev/null".to_string(), |_| format!("b/{path}")),
            ));
            for line in before.map(|s| s.lines().collect::<Vec<_>>()).unwrap_or_default() {
                out.push_str(&format!("-{line}\n"));
            }
            for line in after.map(|s| s.lines().collect::<Vec<_>>()).unwrap_or_default() {
                out.push_str(&format!("+{line}\n"));
            }
        }
        out
    }

    fn file_editor(&mut self, action: &Action) -> String {
        let Some(path) = action.param("path") else {
            return "ERROR: missing parameter `path`".into();
        };
        match action.param("command").unwrap_or("view") {
            "view" => {
                if let Some(content) = self.files.get(path) {
                    return content
                        .lines()
                        .enumerate()
                        .map(|(i, l)| format!("{:>4}\t{l}\n", i + 1))
                        .collect();
                }
                let prefix = format!("{}/", path.trim_end_matches('/'));
                let listing: Vec<&str> = self
                    .files
                    .keys()
                    .filter(|p| path == "." || path == "/" || p.starts_with(&prefix))
                    .map(String::as_str)
                    .collect();
                if listing.is_empty() {
                    format!("ERROR: {path} does not exist")
                } else {
                    listing.join("\n")
                }
            }
            "create" => {
                let text = action.param("file_text").unwrap_or("");
                self.files.insert(path.to_string(), text.to_string());
                format!("File created at {path}")
            }
            "str_replace" => {
                let (Some(old), new) = (action.param("old_str"), action.param("new_str").unwrap_or("")) else {
                    return "ERROR: missing parameter `old_str`".into();
                };
                let Some(content) = self.files.get_mut(path) else {
                    return format!("ERROR: {path} does not exist");
                };
                match content.matches(old).count() {
                    1 => {
                        *content = content.replacen(old, new, 1);
                        format!("The file {path} has been edited.")
                    }
                    n => format!("ERROR: old_str found {n} times in {path}; it must be unique"),
                }
            }
            other => format!("ERROR: unknown file_editor command `{other}`"),
        }
    }

    fn search(&self, action: &Action) -> String {
        let Some(term) = action.param("search_term") else {
            return "ERROR: missing parameter `search_term`".into();
        };
        let scope = action.param("path").unwrap_or("");
        let mut hits = Vec::new();
        for (path, content) in &self.files {
            if !path.starts_with(scope.trim_start_matches("./")) {
                continue;
            }
            for (i, line) in content.lines().enumerate() {
                if line.contains(term) {
                    hits.push(format!("{path}:{}:{line}", i + 1));
                }
            }
        }
        if hits.is_empty() {
            format!("No matches found for \"{term}\"")
        } else {
            hits.join("\n")
        }
    }
}

impl Environment for ScriptedEnvironment {
    fn task_id(&self) -> &str {
        &self.scenario.task_id
    }

    fn header(&self) -> TaskHeader {
        self.scenario.header()
    }

    fn reset(&mut self) -> Result<String, EnvError> {
        self.files = self.scenario.file_tree.clone();
        self.started = true;
        self.finished = false;
        self.submitted_patch = None;
        let listing: Vec<&str> = self.files.keys().map(String::as_str).collect();
        Ok(format!("Repository files:\n{}", listing.join("\n")))
    }

    fn step(&mut self, action: &Action) -> Result<Transition, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.finished {
            return Err(EnvError::Finished);
        }
        let observation = match action.tool_name.as_str() {
            tools::FILE_EDITOR => self.file_editor(action),
            tools::SEARCH => self.search(action),
            tools::EXECUTE_BASH => match action.param("cmd") {
                Some(cmd) => self
                    .scenario
                    .command_outputs
                    .get(cmd)
                    .cloned()
                    .unwrap_or_else(|| format!("bash: {cmd}: not available in the simulated environment")),
                None => "ERROR: missing parameter `cmd`".into(),
            },
            tools::SUBMIT => {
                let patch = action
                    .param("patch")
                    .map(str::to_string)
                    .unwrap_or_else(|| self.current_patch());
                self.submitted_patch = Some(patch);
                self.finished = true;
                return Ok(Transition {
                    observation: "Submitted.".into(),
                    done: true,
                });
            }
            other => format!("ERROR: unknown tool `{other}`; available: {}", tools::ALL.join(", ")),
        };
        Ok(Transition {
            observation,
            done: false,
        })
    }

    fn verdict(&self) -> bool {
        self.submitted_patch
            .as_deref()
            .is_some_and(|p| p.trim() == self.scenario.expected_patch.trim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::from_json(
            r#"{
                "task_id": "calc-1",
                "file_tree": {"calc/add.py": "def add(a, b):\n    return a - b\n", "README.md": "calc\n"},
                "command_outputs": {"pytest -q": "1 failed"},
                "expected_patch": "--- a/calc/add.py\n+++ b/calc/add.py\n-def add(a, b):\n-    return a - b\n+def add(a, b):\n+    return a + b\n"
            }"#,
        )
        .unwrap()
    }

    fn act(tool: &str, params: &[(&str, &str)]) -> Action {
        Action::new(tool, params.iter().copied()).unwrap()
    }

    #[test]
    fn tools_behave() {
        let mut env = ScriptedEnvironment::new(scenario());
        assert_eq!(env.step(&Action::submit()), Err(EnvError::NotReset));
        let first = env.reset().unwrap();
        assert!(first.contains("calc/add.py"));

        let o = env.step(&act(tools::EXECUTE_BASH, &[("cmd", "pytest -q")])).unwrap();
        assert_eq!(o.observation, "1 failed");
        let o = env.step(&act(tools::SEARCH, &[("search_term", "a - b")])).unwrap();
        assert_eq!(o.observation, "calc/add.py:2:    return a - b");
        let o = env.step(&act(tools::FILE_EDITOR, &[("command", "view"), ("path", "calc/add.py")])).unwrap();
        assert_eq!(o.observation, "   1\tdef add(a, b):\n   2\t    return a - b\n");
        let o = env.step(&act(tools::FILE_EDITOR, &[("command", "view"), ("path", "calc")])).unwrap();
        assert_eq!(o.observation, "calc/add.py");
        let o = env.step(&act(tools::EXECUTE_BASH, &[("cmd", "rm -rf /")])).unwrap();
        assert!(o.observation.contains("not available"));
        let o = env.step(&act("browse", &[])).unwrap();
        assert!(o.observation.starts_with("ERROR: unknown tool"));
        assert!(!o.done);
    }

    #[test]
    fn correct_edit_then_submit_succeeds() {
        let mut env = ScriptedEnvironment::new(scenario());
        env.reset().unwrap();
        let o = env
            .step(&act(
                tools::FILE_EDITOR,
                &[("command", "str_replace"), ("path", "calc/add.py"), ("old_str", "a - b"), ("new_str", "a + b")],
            ))
            .unwrap();
        assert!(o.observation.contains("has been edited"));
        let o = env.step(&Action::submit()).unwrap();
        assert!(o.done);
        assert!(env.verdict());
        assert_eq!(env.step(&Action::submit()), Err(EnvError::Finished));
    }

    #[test]
    fn wrong_patch_fails_verdict() {
        let mut env = ScriptedEnvironment::new(scenario());
        env.reset().unwrap();
        env.step(&act(
            tools::FILE_EDITOR,
            &[("command", "create"), ("path", "calc/new.py"), ("file_text", "x = 1\n")],
        ))
        .unwrap();
        env.step(&Action::submit()).unwrap();
        assert!(!env.verdict());
        assert_eq!(env.submitted_patch().unwrap(), "--- /dev/null\n+++ b/calc/new.py\n+x = 1\n");
    }

    #[test]
    fn explicit_patch_parameter() {
        let sc = scenario();
        let mut env = ScriptedEnvironment::new(sc.clone());
        env.reset().unwrap();
        env.step(&act(tools::SUBMIT, &[("patch", &sc.expected_patch)])).unwrap();
        assert!(env.verdict());
    }

    #[test]
    fn ambiguous_replace_rejected() {
        let mut sc = scenario();
        sc.file_tree.insert("dup.py".into(), "x\nx\n".into());
        let mut env = ScriptedEnvironment::new(sc);
        env.reset().unwrap();
        let o = env
            .step(&act(tools::FILE_EDITOR, &[("command", "str_replace"), ("path", "dup.py"), ("old_str", "x"), ("new_str", "y")]))
            .unwrap();
        assert!(o.observation.contains("found 2 times"));
    }

    #[test]
    fn header_defaults() {
        let h = scenario().header();
        assert_eq!(h.system_prompt, DEFAULT_SYSTEM_PROMPT);
        assert!(h.issue_statement.contains("calc-1"));
    }
}
