//! Agent forest, expert topics and the approval log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::HierarchyError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Authorization {
    ParentChild,
    SameTopic { topic: String },
    Approved { approval_id: u64, approver: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRecord {
    pub approval_id: u64,
    pub approver: String,
    pub sender: String,
    pub receiver: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub owner: String,
    pub subscribers: BTreeSet<String>,
}

impl Topic {
    pub fn members(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.owner).chain(self.subscribers.iter().filter(move |s| **s != self.owner))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.owner == id || self.subscribers.contains(id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlanketTopology {
    parents: BTreeMap<String, Option<String>>,
    retired: BTreeSet<String>,
    topics: BTreeMap<String, Topic>,
    approvals: Vec<ApprovalRecord>,
}

impl BlanketTopology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_root(&mut self, id: &str) -> Result<(), HierarchyError> {
        if let Some(r) = self.root() {
            return Err(HierarchyError::SecondRoot(format!("{id} (existing root {r})")));
        }
        self.insert(id, None)
    }

    pub fn add_child(&mut self, parent: &str, child: &str) -> Result<(), HierarchyError> {
        if !self.is_active(parent) {
            return Err(HierarchyError::UnknownAgent(parent.to_string()));
        }
        self.insert(child, Some(parent.to_string()))
    }

    fn insert(&mut self, id: &str, parent: Option<String>) -> Result<(), HierarchyError> {
        if self.parents.contains_key(id) || self.retired.contains(id) {
            return Err(HierarchyError::DuplicateAgent(id.to_string()));
        }
        self.parents.insert(id.to_string(), parent);
        Ok(())
    }

    /// Removes `old` from the tree. Its children move to `replacement`, which
    /// takes `old`'s place, or to `old`'s parent when there is none.
    pub fn retire(&mut self, old: &str, replacement: Option<&str>) -> Result<(), HierarchyError> {
        let parent = self.parents.get(old).cloned().ok_or_else(|| HierarchyError::UnknownAgent(old.to_string()))?;
        if let Some(new) = replacement {
            if self.parents.contains_key(new) || self.retired.contains(new) {
                return Err(HierarchyError::DuplicateAgent(new.to_string()));
            }
        } else if parent.is_none() {
            return Err(HierarchyError::SecondRoot(format!("retiring root {old} without a replacement")));
        }
        let heir = replacement.map(str::to_string).or(parent.clone());
        self.parents.remove(old);
        for p in self.parents.values_mut() {
            if p.as_deref() == Some(old) {
                *p = heir.clone();
            }
        }
        if let Some(new) = replacement {
            self.parents.insert(new.to_string(), parent);
        }
        for t in self.topics.values_mut() {
            if t.subscribers.remove(old) {
                if let Some(new) = replacement {
                    t.subscribers.insert(new.to_string());
                }
            }
            if t.owner == old {
                t.owner = heir.clone().unwrap_or_default();
            }
        }
        self.retired.insert(old.to_string());
        Ok(())
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.parents.contains_key(id)
    }

    pub fn is_retired(&self, id: &str) -> bool {
        self.retired.contains(id)
    }

    pub fn parent(&self, id: &str) -> Option<&str> {
        self.parents.get(id).and_then(|p| p.as_deref())
    }

    pub fn children(&self, id: &str) -> Vec<String> {
        self.parents
            .iter()
            .filter(|(_, p)| p.as_deref() == Some(id))
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn root(&self) -> Option<&str> {
        self.parents.iter().find(|(_, p)| p.is_none()).map(|(id, _)| id.as_str())
    }

    pub fn agents(&self) -> impl Iterator<Item = &String> {
        self.parents.keys()
    }

    /// One root, and every agent reaches it without cycles.
    pub fn is_forest_with_single_root(&self) -> bool {
        let roots = self.parents.values().filter(|p| p.is_none()).count();
        if roots != 1 {
            return false;
        }
        self.parents.keys().all(|start| {
            let mut seen = BTreeSet::new();
            let mut cur = start.as_str();
            loop {
                if !seen.insert(cur) {
                    return false;
                }
                match self.parents.get(cur) {
                    Some(Some(p)) => cur = p,
                    Some(None) => return true,
                    None => return false,
                }
            }
        })
    }

    pub fn register_topic(&mut self, topic: &str, owner: &str) -> Result<(), HierarchyError> {
        if !self.is_active(owner) {
            return Err(HierarchyError::UnknownAgent(owner.to_string()));
        }
        self.topics
            .entry(topic.to_string())
            .or_insert_with(|| Topic { owner: owner.to_string(), subscribers: BTreeSet::new() });
        Ok(())
    }

    pub fn subscribe(&mut self, topic: &str, agent: &str) -> Result<(), HierarchyError> {
        if !self.is_active(agent) {
            return Err(HierarchyError::UnknownAgent(agent.to_string()));
        }
        let t = self.topics.get_mut(topic).ok_or_else(|| HierarchyError::UnknownTopic(topic.to_string()))?;
        t.subscribers.insert(agent.to_string());
        Ok(())
    }

    pub fn topic(&self, topic: &str) -> Option<&Topic> {
        self.topics.get(topic)
    }

    pub fn topics(&self) -> &BTreeMap<String, Topic> {
        &self.topics
    }

    pub fn approvals(&self) -> &[ApprovalRecord] {
        &self.approvals
    }

    fn adjacent(&self, a: &str, b: &str) -> bool {
        self.parent(a) == Some(b) || self.parent(b) == Some(a)
    }

    /// Records an approval when `approver` is the parent in between `sender`
    /// and `receiver`.
    pub fn record_approval(&mut self, record: ApprovalRecord) -> Result<(), HierarchyError> {
        let between = (self.parent(&record.sender) == Some(record.approver.as_str())
            || self.parent(&record.receiver) == Some(record.approver.as_str()))
            && self.adjacent(&record.approver, &record.sender)
            && self.adjacent(&record.approver, &record.receiver);
        if !between {
            return Err(HierarchyError::SchemaViolation(format!(
                "{} is not the intermediate parent between {} and {}",
                record.approver, record.sender, record.receiver
            )));
        }
        self.approvals.push(record);
        Ok(())
    }

    /// The rule that allows `sender` to reach `receiver`, if any.
    pub fn authorize(&self, sender: &str, receiver: &str, provenance: &[u64], topic: Option<&str>) -> Option<Authorization> {
        if !self.is_active(sender) || !self.is_active(receiver) {
            return None;
        }
        if self.adjacent(sender, receiver) {
            return Some(Authorization::ParentChild);
        }
        let shared = |t: &Topic| t.contains(sender) && t.contains(receiver);
        match topic {
            Some(name) => {
                if self.topics.get(name).is_some_and(shared) {
                    return Some(Authorization::SameTopic { topic: name.to_string() });
                }
            }
            None => {
                if let Some((name, _)) = self.topics.iter().find(|(_, t)| shared(t)) {
                    return Some(Authorization::SameTopic { topic: name.clone() });
                }
            }
        }
        self.approvals
            .iter()
            .find(|a| a.sender == sender && a.receiver == receiver && provenance.contains(&a.approval_id))
            .map(|a| Authorization::Approved { approval_id: a.approval_id, approver: a.approver.clone() })
    }
}
