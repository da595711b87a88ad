//! Agent runner contract and the two built-in runners: a scripted runner that
//! replays canned task fixtures, and a command runner that drives an external
//! agent process over line-delimited JSON.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{Actor, Trajectory};

/// One finished agent run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRun {
    pub answer: String,
    pub trajectory: Trajectory,
}

/// Runner failure carrying whatever steps were produced before it failed.
#[derive(Debug, Error)]
#[error("agent runner failed: {message}")]
pub struct RunnerError {
    pub message: String,
    pub partial: Trajectory,
}

/// Pluggable agent contract. The rendered map arrives verbatim as
/// `system_prefix`; runners never mutate the map.
pub trait AgentRunner {
    fn run(&self, system_prefix: &str, task: &str) -> Result<AgentRun, RunnerError>;
}

/// On-disk script: `{"task", "answer", "steps": [{"actor", "content"}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunnerScript {
    pub task: String,
    pub answer: String,
    #[serde(default)]
    pub steps: Vec<ScriptStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptStep {
    pub actor: Actor,
    pub content: String,
}

/// Replays scripts in order, verifying each script's task matches the task
/// the loop dispatched. A mismatch means the fixtures and task list drifted
/// apart, which should fail loudly.
pub struct ScriptedRunner {
    scripts: Vec<RunnerScript>,
    cursor: Mutex<usize>,
}

impl ScriptedRunner {
    pub fn new(scripts: Vec<RunnerScript>) -> ScriptedRunner {
        ScriptedRunner {
            scripts,
            cursor: Mutex::new(0),
        }
    }

    /// Loads every `*.json` in `dir`, sorted by file name.
    pub fn from_dir(dir: &Path) -> Result<ScriptedRunner, std::io::Error> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        let mut scripts = Vec::new();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            let script: RunnerScript = serde_json::from_str(&text).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            scripts.push(script);
        }
        Ok(ScriptedRunner::new(scripts))
    }
}

impl AgentRunner for ScriptedRunner {
    fn run(&self, _system_prefix: &str, task: &str) -> Result<AgentRun, RunnerError> {
        let mut cursor = self.cursor.lock().unwrap();
        let script = self.scripts.get(*cursor).ok_or_else(|| RunnerError {
            message: format!(
                "no script for task {} (have {})",
                *cursor + 1,
                self.scripts.len()
            ),
            partial: Trajectory::default(),
        })?;
        if script.task != task {
            return Err(RunnerError {
                message: format!(
                    "script {} is for task {:?}, loop dispatched {:?}",
                    *cursor + 1,
                    script.task,
                    task
                ),
                partial: Trajectory::default(),
            });
        }
        *cursor += 1;
        let mut trajectory = Trajectory::from_steps(
            &script.task,
            script.steps.iter().map(|s| (s.actor, s.content.clone())),
        );
        trajectory.final_answer = Some(script.answer.clone());
        Ok(AgentRun {
            answer: script.answer.clone(),
            trajectory,
        })
    }
}

/// Wire format the command runner writes to the child's stdin, one JSON
/// object per line.
#[derive(Serialize)]
struct CommandRequest<'a> {
    system_prefix: &'a str,
    task: &'a str,
}

/// Expected child stdout: one JSON object, `{"answer", "steps"}`.
#[derive(Deserialize)]
struct CommandResponse {
    answer: String,
    #[serde(default)]
    steps: Vec<ScriptStep>,
}

/// Spawns an external agent per task and speaks the line-JSON protocol:
/// `{"system_prefix", "task"}` on stdin, `{"answer", "steps"}` on stdout.
pub struct CommandRunner {
    program: PathBuf,
    args: Vec<String>,
}

impl CommandRunner {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> CommandRunner {
        CommandRunner {
            program: program.into(),
            args,
        }
    }
}

impl AgentRunner for CommandRunner {
    fn run(&self, system_prefix: &str, task: &str) -> Result<AgentRun, RunnerError> {
        let fail = |message: String| RunnerError {
            message,
            partial: Trajectory::default(),
        };

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("spawn {}: {e}", self.program.display())))?;

        let request = CommandRequest {
            system_prefix,
            task,
        };
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(line.as_bytes())
            .map_err(|e| fail(format!("write to agent stdin: {e}")))?;

        let stdout = child.stdout.take().expect("stdout piped");
        let mut response_line = String::new();
        for read in BufReader::new(stdout).lines() {
            let read = read.map_err(|e| fail(format!("read agent stdout: {e}")))?;
            if !read.trim().is_empty() {
                response_line = read;
                break;
            }
        }
        let status = child
            .wait()
            .map_err(|e| fail(format!("wait for agent: {e}")))?;
        if !status.success() {
            return Err(fail(format!("agent exited with {status}")));
        }
        if response_line.is_empty() {
            return Err(fail("agent produced no output line".to_string()));
        }
        let response: CommandResponse = serde_json::from_str(&response_line)
            .map_err(|e| fail(format!("agent output is not the expected JSON: {e}")))?;

        let mut trajectory = Trajectory::from_steps(
            task,
            response.steps.into_iter().map(|s| (s.actor, s.content)),
        );
        trajectory.final_answer = Some(response.answer.clone());
        Ok(AgentRun {
            answer: response.answer,
            trajectory,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(task: &str, answer: &str) -> RunnerScript {
        RunnerScript {
            task: task.into(),
            answer: answer.into(),
            steps: vec![ScriptStep {
                actor: Actor::Model,
                content: "probe".into(),
            }],
        }
    }

    #[test]
    fn scripted_runner_replays_in_order() {
        let runner = ScriptedRunner::new(vec![script("t1", "a1"), script("t2", "a2")]);
        let run = runner.run("prefix", "t1").unwrap();
        assert_eq!(run.answer, "a1");
        assert_eq!(run.trajectory.steps.len(), 1);
        assert_eq!(run.trajectory.final_answer.as_deref(), Some("a1"));
        assert_eq!(runner.run("prefix", "t2").unwrap().answer, "a2");
    }

    #[test]
    fn task_mismatch_fails_loudly() {
        let runner = ScriptedRunner::new(vec![script("expected task", "a")]);
        let err = runner.run("prefix", "different task").unwrap_err();
        assert!(err.message.contains("expected task"));
    }

    #[test]
    fn exhausted_scripts_error() {
        let runner = ScriptedRunner::new(vec![]);
        assert!(runner.run("p", "t").is_err());
    }

    #[test]
    fn from_dir_sorts_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, s: &RunnerScript| {
            std::fs::write(dir.path().join(name), serde_json::to_string(s).unwrap()).unwrap()
        };
        write("task-002.json", &script("t2", "a2"));
        write("task-001.json", &script("t1", "a1"));
        let runner = ScriptedRunner::from_dir(dir.path()).unwrap();
        assert_eq!(runner.run("p", "t1").unwrap().answer, "a1");
        assert_eq!(runner.run("p", "t2").unwrap().answer, "a2");
    }
}
