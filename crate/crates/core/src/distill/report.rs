use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{DistillError, PolicyRecommendation};
use crate::gateway::{bindings, Gateway};
use crate::graph::{ArgumentGraph, ContestedPosition, ContributionKind};
use crate::ids::{ContributionId, DiscussionId, Timestamp};
use crate::text;

/// Positions listed in the contested section.
pub const REPORT_TOP_CONTESTED: usize = 5;
/// Claims quoted per recommendation.
pub const REPORT_CLAIMS_PER_RECOMMENDATION: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReportStyle {
    Executive,
    Analytical,
    Narrative,
}

impl ReportStyle {
    pub fn template(self) -> &'static str {
        match self {
            ReportStyle::Executive => "report_executive",
            ReportStyle::Analytical => "report_analytical",
            ReportStyle::Narrative => "report_narrative",
        }
    }

    fn order(self) -> [SectionKind; 4] {
        use SectionKind::*;
        match self {
            ReportStyle::Executive => [Recommendations, Contested, Focal, Stats],
            ReportStyle::Analytical => [Focal, Stats, Contested, Recommendations],
            ReportStyle::Narrative => [Focal, Contested, Recommendations, Stats],
        }
    }
}

impl std::str::FromStr for ReportStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "executive" => Ok(ReportStyle::Executive),
            "analytical" => Ok(ReportStyle::Analytical),
            "narrative" => Ok(ReportStyle::Narrative),
            other => Err(format!("unknown report style {other:?} (executive, analytical, narrative)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SectionKind {
    Focal,
    Contested,
    Recommendations,
    Stats,
}

impl SectionKind {
    fn heading(self) -> &'static str {
        match self {
            SectionKind::Focal => "Focal question",
            SectionKind::Contested => "Most contested positions",
            SectionKind::Recommendations => "Policy recommendations",
            SectionKind::Stats => "Statistics",
        }
    }

    fn slot(self) -> &'static str {
        match self {
            SectionKind::Focal => "focal_question",
            SectionKind::Contested => "contested_positions",
            SectionKind::Recommendations => "recommendations",
            SectionKind::Stats => "statistics",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub heading: String,
    pub body: String,
    pub source_links: Vec<ContributionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub position_id: ContributionId,
    pub pro: usize,
    pub con: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportStats {
    /// Contributions excluding the focal question.
    pub n_contributions: usize,
    /// Distinct authors of those contributions.
    pub n_participants: usize,
    pub per_position: Vec<PositionStats>,
    pub contestedness_ranking: Vec<ContestedPosition>,
}

impl ReportStats {
    pub fn compute(graph: &ArgumentGraph, discussion: &DiscussionId) -> Result<Self, DistillError> {
        let d = graph.discussion(discussion)?;
        let contributions: Vec<_> = graph.contributions_of(discussion).filter(|c| c.id != d.focal_question).collect();
        let authors: BTreeSet<_> = contributions.iter().map(|c| &c.author).collect();
        let mut per_position: Vec<PositionStats> = contributions
            .iter()
            .filter(|c| c.kind == ContributionKind::Position)
            .map(|c| {
                let (pro, con) = graph.stance_counts(&c.id);
                PositionStats { position_id: c.id.clone(), pro, con }
            })
            .collect();
        per_position.sort_by(|a, b| a.position_id.cmp(&b.position_id));
        Ok(Self {
            n_contributions: contributions.len(),
            n_participants: authors.len(),
            per_position,
            contestedness_ranking: graph.contested_positions(discussion, usize::MAX)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliberationReport {
    pub id: String,
    pub discussion_id: DiscussionId,
    pub style: ReportStyle,
    pub sections: Vec<ReportSection>,
    pub stats: ReportStats,
    pub generated_at: Timestamp,
    pub gateway_tag: String,
    /// Some section summary could not be generated and was left extractive.
    pub extractive_fallback: bool,
}

fn quote(t: &str) -> String {
    format!("\"{}\"", text::truncate_chars(t, 240))
}

/// Extractive body and source links of one section.
fn section_core(
    kind: SectionKind,
    graph: &ArgumentGraph,
    discussion: &DiscussionId,
    stats: &ReportStats,
    recommendations: &[PolicyRecommendation],
) -> Result<(String, Vec<ContributionId>), DistillError> {
    let d = graph.discussion(discussion)?;
    let mut body = String::new();
    let mut links = Vec::new();
    match kind {
        SectionKind::Focal => {
            let focal = graph.contribution(&d.focal_question)?;
            let _ = write!(body, "{} ({} contributions from {} participants)", quote(&focal.text), stats.n_contributions, stats.n_participants);
            links.push(focal.id.clone());
        }
        SectionKind::Contested => {
            if stats.contestedness_ranking.is_empty() {
                body.push_str("No position has received arguments yet.");
            }
            for cp in stats.contestedness_ranking.iter().take(REPORT_TOP_CONTESTED) {
                let p = graph.contribution(&cp.position_id)?;
                let _ = writeln!(body, "- {} (pro {}, con {}, contestedness {:.3})", quote(&p.text), cp.pro, cp.con, cp.score);
                links.push(p.id.clone());
            }
        }
        SectionKind::Recommendations => {
            if recommendations.is_empty() {
                body.push_str("No recommendations have been distilled.");
            }
            for r in recommendations {
                let _ = writeln!(body, "- {}: {}", r.key_position, r.synthesis);
                for c in r.supporting_claims.iter().take(REPORT_CLAIMS_PER_RECOMMENDATION) {
                    let node = graph.contribution(&c.contribution_id)?;
                    let _ = writeln!(body, "  - {} (membership {:.3})", quote(&node.text), c.membership);
                    links.push(node.id.clone());
                }
            }
        }
        SectionKind::Stats => {
            let _ = writeln!(body, "- contributions: {}", stats.n_contributions);
            let _ = writeln!(body, "- participants: {}", stats.n_participants);
            let _ = writeln!(body, "- positions: {}", stats.per_position.len());
            for p in &stats.per_position {
                let _ = writeln!(body, "  - {}: pro {}, con {}", p.position_id, p.pro, p.con);
            }
        }
    }
    Ok((body.trim_end().to_string(), links))
}

/// Report over the discussion and already-distilled recommendations. Each
/// section gets a gateway summary followed by its extractive core; a gateway
/// failure leaves the extractive core alone.
pub fn generate_report(
    graph: &ArgumentGraph,
    discussion: &DiscussionId,
    style: ReportStyle,
    recommendations: &[PolicyRecommendation],
    gateway: &Gateway,
    at: Timestamp,
) -> Result<DeliberationReport, DistillError> {
    let stats = ReportStats::compute(graph, discussion)?;
    for r in recommendations {
        for c in &r.supporting_claims {
            graph.contribution(&c.contribution_id)?;
        }
    }
    let mut sections = Vec::new();
    let mut extractive_fallback = false;
    if stats.n_contributions == 0 {
        let (body, links) = section_core(SectionKind::Focal, graph, discussion, &stats, recommendations)?;
        sections.push(ReportSection { heading: SectionKind::Focal.heading().into(), body, source_links: links });
        sections.push(ReportSection {
            heading: "No contributions".into(),
            body: "The discussion has no contributions beyond its focal question.".into(),
            source_links: Vec::new(),
        });
        let (body, links) = section_core(SectionKind::Stats, graph, discussion, &stats, recommendations)?;
        sections.push(ReportSection { heading: SectionKind::Stats.heading().into(), body, source_links: links });
    } else {
        for kind in style.order() {
            let (core, links) = section_core(kind, graph, discussion, &stats, recommendations)?;
            let body = match gateway.complete(style.template(), &bindings([("section", kind.slot().into()), ("content", core.clone())])) {
                Ok(summary) => format!("{}\n\n{core}", summary.trim()),
                Err(e) => {
                    log::warn!("report section {} summary failed: {e}", kind.slot());
                    extractive_fallback = true;
                    core
                }
            };
            sections.push(ReportSection { heading: kind.heading().into(), body, source_links: links });
        }
    }
    let digest_src = serde_json::to_vec(&(discussion, style, &sections, &stats)).expect("report serializes");
    Ok(DeliberationReport {
        id: format!("rep-{}", text::short_digest(&digest_src)),
        discussion_id: discussion.clone(),
        style,
        sections,
        stats,
        generated_at: at,
        gateway_tag: gateway.tag(),
        extractive_fallback,
    })
}

impl DeliberationReport {
    pub fn all_links(&self) -> impl Iterator<Item = &ContributionId> {
        self.sections.iter().flat_map(|s| s.source_links.iter())
    }

    /// Markdown with numbered footnotes `[n] contribution:<id>`, numbered by
    /// first appearance.
    pub fn to_markdown(&self) -> String {
        let mut numbers: BTreeMap<&ContributionId, usize> = BTreeMap::new();
        let mut order: Vec<&ContributionId> = Vec::new();
        let mut out = String::new();
        let _ = writeln!(out, "# Deliberation report ({:?})\n", self.style);
        for s in &self.sections {
            let _ = writeln!(out, "## {}\n", s.heading);
            let _ = writeln!(out, "{}\n", s.body);
            if !s.source_links.is_empty() {
                let refs: Vec<String> = s
                    .source_links
                    .iter()
                    .map(|id| {
                        let next = order.len() + 1;
                        let n = *numbers.entry(id).or_insert_with(|| {
                            order.push(id);
                            next
                        });
                        format!("[{n}]")
                    })
                    .collect();
                let _ = writeln!(out, "Sources: {}\n", refs.join(" "));
            }
        }
        if !order.is_empty() {
            out.push_str("---\n\n");
            for (i, id) in order.iter().enumerate() {
                let _ = writeln!(out, "[{}] contribution:{id}", i + 1);
            }
        }
        out
    }
}
