use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::FactorAssignment;
use crate::linker::CompatibilityMatrix;
use crate::proposer::PropertyPool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProperty {
    pub text: String,
    pub mi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub id: usize,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub properties: Vec<ReportProperty>,
    pub top_documents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFactorReport {
    pub factors: Vec<FactorReport>,
}

/// Lists each factor's top properties by MI and the documents with the highest
/// mean compatibility over those properties. `doc_ids` names the matrix rows.
pub fn build_report(
    assignment: &FactorAssignment,
    pool: &PropertyPool,
    matrix: &CompatibilityMatrix,
    doc_ids: &[String],
    top_k_props: usize,
    top_k_docs: usize,
) -> LatentFactorReport {
    let factors = assignment
        .factors
        .iter()
        .enumerate()
        .map(|(id, members)| {
            let top: Vec<usize> = members.iter().take(top_k_props).cloned().collect();
            let properties = top
                .iter()
                .map(|&pid| ReportProperty {
                    text: pool.properties()[pid].text.clone(),
                    mi: assignment.properties[pid].mi,
                })
                .collect();
            let top_documents = if top.is_empty() {
                Vec::new()
            } else {
                let mut scored: Vec<(usize, f64)> = (0..matrix.rows())
                    .map(|r| {
                        let mean = top.iter().map(|&c| f64::from(matrix.get(r, c))).sum::<f64>() / top.len() as f64;
                        (r, mean)
                    })
                    .collect();
                scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                scored
                    .into_iter()
                    .take(top_k_docs)
                    .map(|(r, _)| doc_ids[r].clone())
                    .collect()
            };
            FactorReport {
                id,
                label: String::new(),
                properties,
                top_documents,
            }
        })
        .collect();
    LatentFactorReport { factors }
}

impl LatentFactorReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Latent factors\n");
        for f in &self.factors {
            let title = if f.label.is_empty() {
                format!("Factor {}", f.id)
            } else {
                format!("Factor {}: {}", f.id, f.label)
            };
            let _ = writeln!(out, "\n## {title}\n");
            if f.properties.is_empty() {
                out.push_str("_no properties assigned_\n");
                continue;
            }
            out.push_str("| property | MI (nats) |\n|---|---|\n");
            for p in &f.properties {
                let _ = writeln!(out, "| {} | {:.4} |", p.text.replace('|', "\\|"), p.mi);
            }
            if !f.top_documents.is_empty() {
                let _ = writeln!(out, "\nTop documents: {}", f.top_documents.join(", "));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corex::assign::PropertyAssignment;
    use crate::proposer::Property;
    use std::collections::BTreeSet;

    fn setup() -> (FactorAssignment, PropertyPool, CompatibilityMatrix, Vec<String>) {
        let props = ["dark humor", "comedy", "satire", "romance"]
            .iter()
            .enumerate()
            .map(|(i, t)| Property {
                pid: i as u32,
                text: t.to_string(),
                canonical_key: t.to_string(),
            })
            .collect();
        let pool = PropertyPool::from_parts(props, BTreeSet::new()).unwrap();
        let assignment = FactorAssignment {
            properties: vec![
                PropertyAssignment { factor: 0, mi: 0.2 },
                PropertyAssignment { factor: 0, mi: 0.9 },
                PropertyAssignment { factor: 0, mi: 0.5 },
                PropertyAssignment { factor: 2, mi: 0.1 },
            ],
            factors: vec![vec![1, 2, 0], vec![], vec![3]],
        };
        let matrix = CompatibilityMatrix::from_parts(
            3,
            4,
            vec![0.1, 0.2, 0.3, 0.9, 0.8, 0.9, 0.7, 0.0, 0.5, 0.5, 0.5, 0.95],
            false,
        )
        .unwrap();
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        (assignment, pool, matrix, ids)
    }

    #[test]
    fn lists_fewer_than_k_in_mi_order() {
        let (a, pool, m, ids) = setup();
        let r = build_report(&a, &pool, &m, &ids, 10, 2);
        let f0 = &r.factors[0];
        let texts: Vec<_> = f0.properties.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["comedy", "satire", "dark humor"]);
        assert_eq!(f0.top_documents, ["b", "c"]);
        assert!(r.factors[1].properties.is_empty());
        assert!(r.factors[1].top_documents.is_empty());
        assert_eq!(r.factors[2].top_documents, ["c", "a"]);
    }

    #[test]
    fn json_shape_and_markdown() {
        let (a, pool, m, ids) = setup();
        let r = build_report(&a, &pool, &m, &ids, 2, 1);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["factors"][0]["id"], 0);
        assert_eq!(v["factors"][0]["properties"][0]["text"], "comedy");
        assert_eq!(v["factors"][0]["properties"][0]["mi"], 0.9);
        assert!(v["factors"][0].get("label").is_none());
        let md = r.to_markdown();
        assert!(md.contains("## Factor 1\n\n_no properties assigned_"));
        assert!(md.contains("| comedy | 0.9000 |"));
    }
}
