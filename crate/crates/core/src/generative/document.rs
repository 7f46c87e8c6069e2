//! Declarative JSON form of a [`GenerativeModel`]. The layout is documented in
//! `docs/formats.md`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::dist::CategoricalDist;
use super::model::{GenerativeModel, LikelihoodModel, PreferenceModel, PriorBelief, TransitionModel};
use super::ModelError;

/// A matrix given either as nested rows or as one flat row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixDoc {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixDoc {
    fn rows(&self, rows: usize, cols: usize, what: &str) -> Result<Vec<Vec<f64>>, ModelError> {
        match self {
            MatrixDoc::Rows(r) => {
                if r.len() != rows {
                    return Err(ModelError::Dimension { what: format!("{what} rows"), expected: rows, found: r.len() });
                }
                if let Some(bad) = r.iter().find(|row| row.len() != cols) {
                    return Err(ModelError::Dimension {
                        what: format!("{what} columns"),
                        expected: cols,
                        found: bad.len(),
                    });
                }
                Ok(r.clone())
            }
            MatrixDoc::Flat(f) => {
                if f.len() != rows * cols {
                    return Err(ModelError::Dimension {
                        what: format!("{what} entries"),
                        expected: rows * cols,
                        found: f.len(),
                    });
                }
                Ok(f.chunks(cols.max(1)).map(|c| c.to_vec()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDoc {
    pub log_pref: Vec<f64>,
    #[serde(default)]
    pub hard_constraints: Vec<String>,
    #[serde(default = "default_precision")]
    pub precision: f64,
}

fn default_precision() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    #[serde(rename = "A", default)]
    pub a: Vec<String>,
    #[serde(rename = "B", default)]
    pub b: Vec<String>,
    #[serde(rename = "C", default)]
    pub c: Vec<String>,
    #[serde(rename = "D", default)]
    pub d: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub state_labels: Vec<String>,
    pub observation_labels: Vec<String>,
    pub action_labels: Vec<String>,
    #[serde(rename = "A")]
    pub a: MatrixDoc,
    #[serde(rename = "B")]
    pub b: Vec<MatrixDoc>,
    #[serde(rename = "C")]
    pub c: PreferenceDoc,
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    #[serde(default)]
    pub annotations: AnnotationDoc,
}

fn or_blank(v: &[String], n: usize) -> Vec<String> {
    if v.is_empty() {
        vec![String::new(); n]
    } else {
        v.to_vec()
    }
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<GenerativeModel, ModelError> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| ModelError::Document(e.to_string()))?;
        doc.to_model()
    }

    pub fn to_model(&self) -> Result<GenerativeModel, ModelError> {
        let ns = self.state_labels.len();
        let no = self.observation_labels.len();
        let na = self.action_labels.len();
        let a_rows = self.a.rows(ns, no, "A")?;
        let a = LikelihoodModel::from_matrix(&self.observation_labels, &a_rows, or_blank(&self.annotations.a, ns))?;
        if self.b.len() != na {
            return Err(ModelError::Dimension { what: "B matrices".into(), expected: na, found: self.b.len() });
        }
        let b_mats = self
            .b
            .iter()
            .enumerate()
            .map(|(i, m)| m.rows(ns, ns, &format!("B[{}]", self.action_labels[i])))
            .collect::<Result<Vec<_>, _>>()?;
        let b = TransitionModel::from_matrices(
            &self.state_labels,
            self.action_labels.clone(),
            &b_mats,
            or_blank(&self.annotations.b, na),
        )?;
        let c = PreferenceModel::new(
            self.observation_labels.clone(),
            self.c.log_pref.clone(),
            self.c.hard_constraints.iter().cloned().collect::<BTreeSet<_>>(),
            self.annotations.c.clone(),
            self.c.precision,
        )?;
        let d = PriorBelief::new(
            CategoricalDist::new(self.state_labels.clone(), self.d.clone())?,
            self.annotations.d.clone(),
        );
        GenerativeModel::new(a, b, c, d)
    }

    pub fn from_model(model: &GenerativeModel) -> Self {
        let a = model.likelihood().rows().iter().map(|r| r.probs().to_vec()).collect();
        let b = model
            .transitions()
            .matrices()
            .iter()
            .map(|m| MatrixDoc::Rows(m.iter().map(|r| r.probs().to_vec()).collect()))
            .collect();
        Self {
            state_labels: model.state_labels().to_vec(),
            observation_labels: model.observation_labels().to_vec(),
            action_labels: model.action_labels().to_vec(),
            a: MatrixDoc::Rows(a),
            b,
            c: PreferenceDoc {
                log_pref: model.preferences().log_pref().to_vec(),
                hard_constraints: model.preferences().hard_constraints().iter().cloned().collect(),
                precision: model.preferences().precision(),
            },
            d: model.prior().dist.probs().to_vec(),
            annotations: AnnotationDoc {
                a: model.likelihood().annotations().to_vec(),
                b: model.transitions().annotations().to_vec(),
                c: model.preferences().annotations().to_vec(),
                d: model.prior().annotations.clone(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "state_labels": ["left", "right"],
        "observation_labels": ["see_left", "see_right"],
        "action_labels": ["wait"],
        "A": [0.9, 0.1, 0.1, 0.9],
        "B": [[[1, 0], [0, 1]]],
        "C": {"log_pref": [0.0, 1.0], "hard_constraints": []},
        "D": [0.5, 0.5],
        "annotations": {"A": ["left shows left", "right shows right"], "B": ["waiting changes nothing"]}
    }"#;

    #[test]
    fn loads_flat_and_nested_matrices() {
        let m = ModelDocument::from_json(DOC).unwrap();
        assert_eq!(m.likelihood().p(1, 1), 0.9);
        assert_eq!(m.transitions().annotations()[0], "waiting changes nothing");
        assert_eq!(m.preferences().precision(), 1.0);
        let back = ModelDocument::from_model(&m).to_model().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn reports_dimension_errors() {
        let bad = DOC.replace("[0.9, 0.1, 0.1, 0.9]", "[0.9, 0.1, 0.1]");
        let err = ModelDocument::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("A entries"), "{err}");
        let garbage = ModelDocument::from_json("{").unwrap_err();
        assert!(matches!(garbage, ModelError::Document(_)));
    }
}
