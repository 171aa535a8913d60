//! Closed label sets for objects and actions.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLabel(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectLabel(pub String);

impl ActionLabel {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl ObjectLabel {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ObjectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ActionLabel {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<&str> for ObjectLabel {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Registered object and action names for one scenario.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub objects: Vec<ObjectLabel>,
    pub actions: Vec<ActionLabel>,
}

impl Vocabulary {
    pub fn has_object(&self, label: &str) -> bool {
        self.objects.iter().any(|o| o.0 == label)
    }

    pub fn has_action(&self, label: &str) -> bool {
        self.actions.iter().any(|a| a.0 == label)
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.0 == label)
    }
}
