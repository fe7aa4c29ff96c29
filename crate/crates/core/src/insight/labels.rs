use serde::{Deserialize, Serialize};

use super::fcm::{hard_assign, ClusterModel};
use super::{EmbeddingSet, InsightError};
use crate::gateway::{bindings, Gateway};
use crate::ids::ContributionId;
use crate::text;

pub const MAX_TITLE_CHARS: usize = 80;
/// Member texts quoted in a labelling prompt.
pub const LABEL_PROMPT_MEMBERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub cluster_index: usize,
    pub title: String,
    pub description: String,
    /// Hard-assigned members, descending membership, index tie-break.
    pub member_ids: Vec<ContributionId>,
    /// Membership of each entry of `member_ids`.
    pub memberships: Vec<f64>,
    /// Set when the gateway failed and the title is a placeholder.
    pub placeholder: bool,
}

/// Indices of points hard-assigned to each cluster, ordered by descending
/// membership with ties to the lower point index.
pub fn cluster_members(model: &ClusterModel) -> Vec<Vec<usize>> {
    let assign = hard_assign(model);
    let mut out = vec![Vec::new(); model.k];
    for (i, j) in assign.into_iter().enumerate() {
        out[j].push(i);
    }
    for (j, members) in out.iter_mut().enumerate() {
        members.sort_by(|&a, &b| model.membership[b][j].total_cmp(&model.membership[a][j]).then(a.cmp(&b)));
    }
    out
}

pub fn label_clusters(
    model: &ClusterModel,
    set: &EmbeddingSet,
    texts: &[String],
    gateway: &Gateway,
) -> Result<Vec<ClusterLabel>, InsightError> {
    if texts.len() != set.len() || model.n() != set.len() {
        return Err(InsightError::InvalidInput(format!(
            "{} texts, {} embeddings, {} model rows",
            texts.len(),
            set.len(),
            model.n()
        )));
    }
    let mut labels = Vec::with_capacity(model.k);
    for (j, members) in cluster_members(model).into_iter().enumerate() {
        let quoted: Vec<String> = members
            .iter()
            .take(LABEL_PROMPT_MEMBERS)
            .map(|&i| format!("- {}", texts[i]))
            .collect();
        let quoted = quoted.join("\n");
        let named = gateway
            .complete("cluster_label", &bindings([("cluster_index", (j + 1).to_string()), ("members", quoted.clone())]))
            .and_then(|title| {
                let title = text::truncate_chars(title.trim(), MAX_TITLE_CHARS);
                let description =
                    gateway.complete("cluster_description", &bindings([("title", title.clone()), ("members", quoted.clone())]))?;
                Ok((title, description))
            });
        let (title, description, placeholder) = match named {
            Ok((t, d)) if !t.is_empty() => (t, d.trim().to_string(), false),
            other => {
                if let Err(e) = other {
                    log::warn!("labelling cluster {j} failed: {e}");
                }
                let excerpt: Vec<&str> = members.iter().take(3).map(|&i| texts[i].as_str()).collect();
                (format!("Cluster {}", j + 1), excerpt.join(" / "), true)
            }
        };
        labels.push(ClusterLabel {
            cluster_index: j,
            title,
            description,
            memberships: members.iter().map(|&i| model.membership[i][j]).collect(),
            member_ids: members.iter().map(|&i| set.ids[i].clone()).collect(),
            placeholder,
        });
    }
    Ok(labels)
}
