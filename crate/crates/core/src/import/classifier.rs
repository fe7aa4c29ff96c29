//! Argument-component classifiers: the deterministic rule-based baseline and
//! the remote model reached through the gateway.

use crate::gateway::{Gateway, GatewayError};
use crate::graph::CharRange;
use crate::text;
use crate::transcript::Segment;

use super::markup::{Component, ComponentMarkup, Relation, RelationKind};

pub trait SpanClassifier {
    fn classify(&self, segments: &[Segment]) -> Result<Vec<ComponentMarkup>, GatewayError>;
}

impl SpanClassifier for Gateway {
    fn classify(&self, segments: &[Segment]) -> Result<Vec<ComponentMarkup>, GatewayError> {
        self.classify_spans(segments)
    }
}

pub const CLAIM_CONFIDENCE: f64 = 0.8;
pub const PREMISE_CONFIDENCE: f64 = 0.75;
pub const ATTACK_CONFIDENCE: f64 = 0.7;
pub const LOOSE_PREMISE_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Because,
    Since,
    As,
    Therefore,
    But,
    However,
}

impl Marker {
    fn parse(word: &str) -> Option<Self> {
        match word {
            "because" => Some(Marker::Because),
            "since" => Some(Marker::Since),
            "as" => Some(Marker::As),
            "therefore" => Some(Marker::Therefore),
            "but" => Some(Marker::But),
            "however" => Some(Marker::However),
            _ => None,
        }
    }

    fn is_support(self) -> bool {
        matches!(self, Marker::Because | Marker::Since | Marker::As | Marker::Therefore)
    }

    /// Markers that open a fronted subordinate clause ("Because X, Y").
    fn can_front(self) -> bool {
        matches!(self, Marker::Because | Marker::Since | Marker::As)
    }
}

#[derive(Debug, Clone)]
struct Clause {
    marker: Option<Marker>,
    start: usize,
    end: usize,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn trim_range(chars: &[char], mut start: usize, mut end: usize) -> (usize, usize) {
    let junk = |c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':' | '.' | '!' | '?' | '-' | '—' | '–');
    while start < end && junk(chars[start]) {
        start += 1;
    }
    while end > start && junk(chars[end - 1]) {
        end -= 1;
    }
    (start, end)
}

/// Sentence spans split after terminal punctuation followed by whitespace.
fn sentences(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if is_terminal(chars[i]) {
            let mut j = i + 1;
            while j < chars.len() && (is_terminal(chars[j]) || matches!(chars[j], '"' | '\'' | ')' | '”' | '’')) {
                j += 1;
            }
            if j == chars.len() || chars[j].is_whitespace() {
                out.push((start, j));
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        out.push((start, chars.len()));
    }
    out.into_iter()
        .map(|(s, e)| trim_range(chars, s, e))
        .filter(|(s, e)| s < e)
        .collect()
}

/// Words of `chars[start..end]` as (start, end, lowercase text).
fn words(chars: &[char], start: usize, end: usize) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut i = start;
    while i < end {
        if chars[i].is_alphanumeric() || chars[i] == '\'' {
            let s = i;
            while i < end && (chars[i].is_alphanumeric() || chars[i] == '\'' || chars[i] == '’') {
                i += 1;
            }
            out.push((s, i, chars[s..i].iter().collect::<String>().to_lowercase().replace('’', "'")));
        } else {
            i += 1;
        }
    }
    out
}

fn clauses(chars: &[char], start: usize, end: usize) -> Vec<Clause> {
    let ws = words(chars, start, end);
    let mut out = Vec::new();
    let mut cur = Clause { marker: None, start, end };
    for (k, (ws_start, ws_end, w)) in ws.iter().enumerate() {
        let Some(marker) = Marker::parse(w) else { continue };
        let preceded_by_comma = chars[start..*ws_start].iter().rev().find(|c| !c.is_whitespace()) == Some(&',');
        let sentence_initial = k == 0;
        // "as" is too common to split on unless it follows a comma or opens the sentence
        if marker == Marker::As && !(preceded_by_comma || sentence_initial) {
            continue;
        }
        if sentence_initial {
            cur.marker = Some(marker);
            cur.start = *ws_end;
            continue;
        }
        cur.end = *ws_start;
        out.push(cur);
        cur = Clause { marker: Some(marker), start: *ws_end, end };
    }
    out.push(cur);

    // "Because X, Y": the fronted clause ends at its first comma
    let mut split = Vec::with_capacity(out.len() + 1);
    for (idx, c) in out.into_iter().enumerate() {
        if idx == 0 && c.marker.is_some_and(Marker::can_front) {
            if let Some(comma) = (c.start..c.end).find(|&i| chars[i] == ',') {
                split.push(Clause { marker: c.marker, start: c.start, end: comma });
                split.push(Clause { marker: None, start: comma + 1, end: c.end });
                continue;
            }
        }
        split.push(c);
    }
    split
        .into_iter()
        .map(|c| {
            let (s, e) = trim_range(chars, c.start, c.end);
            Clause { marker: c.marker, start: s, end: e }
        })
        .filter(|c| c.start < c.end)
        .collect()
}

fn has_stance_cue(clause: &str) -> bool {
    let toks = text::tokens(clause);
    toks.iter().any(|t| matches!(t.as_str(), "should" | "shouldn't" | "must" | "mustn't"))
        || toks.windows(2).any(|w| w[0] == "we" && w[1] == "need")
}

/// Deterministic baseline: sentences are split on terminal punctuation and
/// clauses on discourse markers. Clauses with modal stance cues become Claims;
/// clauses opened by because/since/as/therefore become Premises supporting the
/// nearest earlier Claim; but/however after a Claim become attacking Premises;
/// other sentences following a Claim in the same turn become loose Premises.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedClassifier;

impl RuleBasedClassifier {
    pub fn markup(&self, segments: &[Segment]) -> Vec<ComponentMarkup> {
        let mut out: Vec<ComponentMarkup> = Vec::new();
        let mut last_claim: Option<usize> = None;
        for (seg_idx, seg) in segments.iter().enumerate() {
            let chars: Vec<char> = seg.text.chars().collect();
            let mut claim_in_segment = false;
            for (s_start, s_end) in sentences(&chars) {
                // premises fronted before any claim wait for the sentence's claim
                let mut waiting: Vec<usize> = Vec::new();
                for clause in clauses(&chars, s_start, s_end) {
                    let body: String = chars[clause.start..clause.end].iter().collect();
                    let range = CharRange::new(clause.start, clause.end);
                    let id = out.len();
                    let push = |out: &mut Vec<ComponentMarkup>, component, confidence, relations| {
                        out.push(ComponentMarkup { id, segment_index: seg_idx, char_range: range, component, confidence, relations })
                    };
                    match clause.marker {
                        Some(m) if m.is_support() => {
                            let relations = match last_claim {
                                Some(t) => vec![Relation { target: t, kind: RelationKind::Supports }],
                                None => {
                                    waiting.push(id);
                                    vec![]
                                }
                            };
                            push(&mut out, Component::Premise, PREMISE_CONFIDENCE, relations);
                        }
                        Some(_) if last_claim.is_some() => {
                            let t = last_claim.expect("checked");
                            push(&mut out, Component::Premise, ATTACK_CONFIDENCE, vec![Relation { target: t, kind: RelationKind::Attacks }]);
                        }
                        _ if has_stance_cue(&body) => {
                            push(&mut out, Component::Claim, CLAIM_CONFIDENCE, vec![]);
                            for w in waiting.drain(..) {
                                out[w].relations.push(Relation { target: id, kind: RelationKind::Supports });
                            }
                            last_claim = Some(id);
                            claim_in_segment = true;
                        }
                        _ if claim_in_segment => {
                            push(&mut out, Component::Premise, LOOSE_PREMISE_CONFIDENCE, vec![]);
                        }
                        _ => {}
                    }
                }
            }
        }
        out
    }
}

impl SpanClassifier for RuleBasedClassifier {
    fn classify(&self, segments: &[Segment]) -> Result<Vec<ComponentMarkup>, GatewayError> {
        Ok(self.markup(segments))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::import::markup::validate_markup;

    fn seg(speaker: &str, text: &str) -> Segment {
        Segment { speaker: speaker.into(), start_ms: 0, end_ms: 1, text: text.into() }
    }

    fn span<'a>(segments: &'a [Segment], m: &ComponentMarkup) -> &'a str {
        text::char_slice(&segments[m.segment_index].text, m.char_range.start, m.char_range.end).unwrap()
    }

    #[test]
    fn because_splits_claim_and_premise() {
        let segs = vec![seg("A", "We should ban X because it harms Y")];
        let m = RuleBasedClassifier.markup(&segs);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].component, span(&segs, &m[0])), (Component::Claim, "We should ban X"));
        assert_eq!((m[1].component, span(&segs, &m[1])), (Component::Premise, "it harms Y"));
        assert_eq!(m[1].relations, vec![Relation { target: 0, kind: RelationKind::Supports }]);
        assert_eq!(m[0].char_range, CharRange::new(0, 15));
        assert_eq!(m[1].char_range, CharRange::new(24, 34));
    }

    #[test]
    fn however_attacks_prior_claim_across_segments() {
        let segs = vec![
            seg("A", "We must tax sugary drinks."),
            seg("B", "However, the tax hits poorer families hardest."),
        ];
        let m = RuleBasedClassifier.markup(&segs);
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].segment_index, 1);
        assert_eq!(m[1].relations, vec![Relation { target: 0, kind: RelationKind::Attacks }]);
        assert_eq!(span(&segs, &m[1]), "the tax hits poorer families hardest");
    }

    #[test]
    fn fronted_premise_attaches_to_following_claim() {
        let segs = vec![seg("A", "Because farmers lose income, we need fairer contracts.")];
        let m = RuleBasedClassifier.markup(&segs);
        assert_eq!(span(&segs, &m[0]), "farmers lose income");
        assert_eq!(span(&segs, &m[1]), "we need fairer contracts");
        assert_eq!(m[0].relations, vec![Relation { target: 1, kind: RelationKind::Supports }]);
    }

    #[test]
    fn plain_as_is_not_a_marker() {
        let segs = vec![seg("A", "We should treat food as a public good.")];
        let m = RuleBasedClassifier.markup(&segs);
        assert_eq!(m.len(), 1);
        assert_eq!(span(&segs, &m[0]), "We should treat food as a public good");
    }

    #[test]
    fn loose_sentences_after_claim_are_premises() {
        let segs = vec![seg("A", "Hello everyone. Schools should serve local produce. Kids eat better that way.")];
        let m = RuleBasedClassifier.markup(&segs);
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].component, Component::Premise);
        assert!(m[1].relations.is_empty());
        assert_eq!(span(&segs, &m[1]), "Kids eat better that way");
    }

    #[test]
    fn non_argumentative_text_yields_nothing() {
        let segs = vec![seg("A", "Good morning. Thanks for coming!"), seg("B", "")];
        assert!(RuleBasedClassifier.markup(&segs).is_empty());
    }

    #[test]
    fn output_always_valid_and_multibyte_safe() {
        let segs = vec![
            seg("A", "Wir müssen — ja — we must act, because the café closes. But über-regulation hurts?"),
            seg("B", "since… we should; however"),
        ];
        let m = RuleBasedClassifier.markup(&segs);
        validate_markup(&m, &segs).unwrap();
    }
}
