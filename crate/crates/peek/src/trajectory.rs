//! Agent execution trajectories: the ordered record of model reasoning and
//! environment observations for one task, as consumed by the Distiller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Model,
    Environment,
}

impl Actor {
    pub fn label(self) -> &'static str {
        match self {
            Actor::Model => "MODEL",
            Actor::Environment => "ENVIRONMENT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Iteration number, 1-based; non-decreasing across a trajectory.
    pub index: u32,
    pub actor: Actor,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_text: String,
    pub steps: Vec<TrajectoryStep>,
    pub final_answer: Option<String>,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory file is not valid JSON: {0}")]
    Malformed(String),
    #[error("step {position}: index {index} decreases (previous {previous})")]
    OutOfOrder {
        position: usize,
        index: u32,
        previous: u32,
    },
}

/// On-disk trajectory document: `{"task", "steps": [{"actor", "content"}],
/// "final_answer"?}`. Step indices are implied by position.
#[derive(Deserialize)]
struct TrajectoryFile {
    task: String,
    #[serde(default)]
    steps: Vec<FileStep>,
    #[serde(default)]
    final_answer: Option<String>,
}

#[derive(Deserialize)]
struct FileStep {
    actor: Actor,
    content: String,
}

impl Trajectory {
    /// Builds a trajectory assigning step indices 1..=n in order.
    pub fn from_steps(
        task_text: impl Into<String>,
        steps: impl IntoIterator<Item = (Actor, String)>,
    ) -> Trajectory {
        Trajectory {
            task_text: task_text.into(),
            steps: steps
                .into_iter()
                .enumerate()
                .map(|(i, (actor, content))| TrajectoryStep {
                    index: (i + 1) as u32,
                    actor,
                    content,
                })
                .collect(),
            final_answer: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Trajectory, TrajectoryError> {
        let file: TrajectoryFile =
            serde_json::from_str(text).map_err(|e| TrajectoryError::Malformed(e.to_string()))?;
        let mut traj = Trajectory::from_steps(
            file.task,
            file.steps.into_iter().map(|s| (s.actor, s.content)),
        );
        traj.final_answer = file.final_answer;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let mut previous = 0u32;
        for (position, step) in self.steps.iter().enumerate() {
            if step.index < previous {
                return Err(TrajectoryError::OutOfOrder {
                    position,
                    index: step.index,
                    previous,
                });
            }
            previous = step.index;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_json_assigns_indices() {
        let traj = Trajectory::from_json(
            r#"{"task": "count records", "steps": [
                {"actor": "model", "content": "len(context)"},
                {"actor": "environment", "content": "38000"}
            ], "final_answer": "388"}"#,
        )
        .unwrap();
        assert_eq!(traj.task_text, "count records");
        assert_eq!(traj.steps.len(), 2);
        assert_eq!(traj.steps[0].index, 1);
        assert_eq!(traj.steps[1].index, 2);
        assert_eq!(traj.steps[1].actor, Actor::Environment);
        assert_eq!(traj.final_answer.as_deref(), Some("388"));
        traj.validate().unwrap();
    }

    #[test]
    fn malformed_file_is_an_error() {
        assert!(matches!(
            Trajectory::from_json("{nope"),
            Err(TrajectoryError::Malformed(_))
        ));
        assert!(Trajectory::from_json(r#"{"steps": []}"#).is_err()); // missing task
    }

    #[test]
    fn out_of_order_indices_fail_validation() {
        let mut traj = Trajectory::from_steps("t", vec![(Actor::Model, "a".into())]);
        traj.steps.push(TrajectoryStep {
            index: 0,
            actor: Actor::Model,
            content: "b".into(),
        });
        assert!(traj.validate().is_err());
    }
}
