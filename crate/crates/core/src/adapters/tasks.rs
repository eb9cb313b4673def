use crate::state::SceneState;

/// Manipulation task recognized by the scripted collector.
///
/// Task ids follow three patterns: `pick_<cat>`, `push_<cat>` and
/// `place_<cat>_on_<cat>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskSpec {
    Pick(String),
    Push(String),
    Place(String, String),
}

impl TaskSpec {
    pub fn parse(task: &str) -> Option<TaskSpec> {
        let valid = |c: &str| !c.is_empty() && c.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if let Some(rest) = task.strip_prefix("place_") {
            let (a, b) = rest.split_once("_on_")?;
            return (valid(a) && valid(b)).then(|| TaskSpec::Place(a.into(), b.into()));
        }
        if let Some(c) = task.strip_prefix("pick_") {
            return valid(c).then(|| TaskSpec::Pick(c.into()));
        }
        if let Some(c) = task.strip_prefix("push_") {
            return valid(c).then(|| TaskSpec::Push(c.into()));
        }
        None
    }

    pub fn categories(&self) -> Vec<&str> {
        match self {
            TaskSpec::Pick(c) | TaskSpec::Push(c) => vec![c],
            TaskSpec::Place(a, b) => vec![a, b],
        }
    }

    /// Categories the task needs that the scene lacks.
    pub fn missing_in(&self, scene: &SceneState) -> Vec<String> {
        self.categories()
            .into_iter()
            .filter(|c| scene.entities_of(c).next().is_none())
            .map(str::to_string)
            .collect()
    }
}
