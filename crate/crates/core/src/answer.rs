//! Answer generation: fuse the question, the resolved entity, and the
//! ranked knowledge snippets into a prompt, then hand it to a generator
//! backend.
//!
//! The default backend is a deterministic template so the whole pipeline
//! runs offline and end-to-end accuracy is reproducible; a live model is
//! reachable only as an HTTP contract. When the entity is unknown the
//! pipeline says so with a fixed sentinel instead of guessing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::KnowledgeSnippet;
use crate::resolve::Resolution;
use crate::text::whitespace_token_count;

/// Fixed answer when no entity hypothesis survived resolution.
pub const UNKNOWN_ANSWER: &str = "I could not identify the entity.";

/// Default whitespace-token budget for snippet text in a prompt.
pub const DEFAULT_MAX_SNIPPET_TOKENS: usize = 512;

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("question must be non-empty")]
    EmptyQuestion,
    #[error("generator unavailable: {0}")]
    GeneratorUnavailable(String),
    #[error("generator timed out: {0}")]
    GeneratorTimeout(String),
    #[error("generator returned an empty answer")]
    EmptyAnswer,
    #[error("malformed generator response: {0}")]
    MalformedResponse(String),
}

/// Prompt assembly tunables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Whitespace-token budget across all included snippet texts.
    /// Snippets are included whole, in rank order, while the running
    /// total stays within budget; the first snippet that would overflow
    /// is dropped along with everything after it.
    pub max_snippet_tokens: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            max_snippet_tokens: DEFAULT_MAX_SNIPPET_TOKENS,
        }
    }
}

/// The fused generation input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub question: String,
    /// Present iff resolution produced a hypothesis.
    pub entity_name: Option<String>,
    /// Rank order preserved from knowledge aggregation.
    pub snippets: Vec<KnowledgeSnippet>,
    pub template_id: String,
}

/// A generated answer with the snippets that were supplied as context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Exactly the snippets the generator was shown — never invented.
    pub provenance: Vec<KnowledgeSnippet>,
}

/// Build a prompt bundle from the resolution outcome and ranked
/// snippets. `entity_name` maps the resolved hypothesis to its display
/// name (the knowledge layer knows it; resolution only carries the id).
pub fn assemble_prompt(
    question: &str,
    resolution: &Resolution,
    entity_name: Option<&str>,
    snippets: &[KnowledgeSnippet],
    config: &PromptConfig,
) -> Result<PromptBundle, AnswerError> {
    if question.trim().is_empty() {
        return Err(AnswerError::EmptyQuestion);
    }
    let entity_name = match resolution {
        Resolution::Entity(h) => {
            Some(entity_name.map_or_else(|| h.entity_id.clone(), str::to_string))
        }
        Resolution::Unknown => None,
    };
    let mut included = Vec::new();
    let mut used_tokens = 0usize;
    for snippet in snippets {
        let cost = whitespace_token_count(&snippet.text);
        if used_tokens + cost > config.max_snippet_tokens {
            break;
        }
        used_tokens += cost;
        included.push(snippet.clone());
    }
    Ok(PromptBundle {
        question: question.to_string(),
        entity_name,
        snippets: included,
        template_id: "qa-snippets-v1".to_string(),
    })
}

/// Deterministic textual form of a bundle: question line, entity line
/// (`unknown` when unresolved), then numbered snippets.
pub fn serialize_prompt(bundle: &PromptBundle) -> String {
    let mut out = format!(
        "Question: {}\nEntity: {}\nSnippets:\n",
        bundle.question,
        bundle.entity_name.as_deref().unwrap_or("unknown"),
    );
    for (i, snippet) in bundle.snippets.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, snippet.text));
    }
    out
}

/// Answer backend contract: a bundle in, non-empty text out (or an
/// explicit failure — never a silent empty string).
pub trait AnswerGenerator: Send + Sync {
    fn generate_text(&self, bundle: &PromptBundle) -> Result<String, AnswerError>;
}

/// Produce an answer and its provenance through the given backend.
pub fn generate(
    bundle: &PromptBundle,
    generator: &dyn AnswerGenerator,
) -> Result<Answer, AnswerError> {
    let text = generator.generate_text(bundle)?;
    if text.trim().is_empty() {
        return Err(AnswerError::EmptyAnswer);
    }
    Ok(Answer {
        text,
        provenance: bundle.snippets.clone(),
    })
}

/// Offline deterministic backend: names the entity and repeats the
/// top-ranked snippet. Guarantees the entity name appears verbatim in
/// the answer whenever a hypothesis is present.
#[derive(Debug, Default, Clone, Copy)]
pub struct TemplateGenerator;

impl AnswerGenerator for TemplateGenerator {
    fn generate_text(&self, bundle: &PromptBundle) -> Result<String, AnswerError> {
        match &bundle.entity_name {
            None => Ok(UNKNOWN_ANSWER.to_string()),
            Some(name) => match bundle.snippets.first() {
                Some(snippet) => Ok(format!("This is {name}. {}", snippet.text)),
                None => Ok(format!("This is {name}.")),
            },
        }
    }
}

/// Live model contract: POST `{url}` with `{"prompt": …}`, expecting
/// `{"answer": …}`.
pub struct HttpGenerator {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, timeout: std::time::Duration) -> Self {
        HttpGenerator {
            url: url.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("client construction cannot fail with static options"),
        }
    }
}

impl AnswerGenerator for HttpGenerator {
    fn generate_text(&self, bundle: &PromptBundle) -> Result<String, AnswerError> {
        #[derive(Serialize)]
        struct Request {
            prompt: String,
        }
        #[derive(Deserialize)]
        struct Response {
            answer: String,
        }
        let response = self
            .client
            .post(&self.url)
            .json(&Request {
                prompt: serialize_prompt(bundle),
            })
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    AnswerError::GeneratorTimeout(e.to_string())
                } else {
                    AnswerError::GeneratorUnavailable(e.to_string())
                }
            })?;
        if !response.status().is_success() {
            return Err(AnswerError::GeneratorUnavailable(format!(
                "{} returned {}",
                self.url,
                response.status()
            )));
        }
        let payload: Response = response
            .json()
            .map_err(|e| AnswerError::MalformedResponse(e.to_string()))?;
        Ok(payload.answer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::SourceKind;
    use crate::resolve::EntityHypothesis;

    fn snippet(text: &str) -> KnowledgeSnippet {
        KnowledgeSnippet {
            text: text.to_string(),
            source_kind: SourceKind::LocalKB,
            score: 1.0,
            timestamp: None,
            source_uri: None,
        }
    }

    fn resolved(id: &str) -> Resolution {
        Resolution::Entity(EntityHypothesis {
            entity_id: id.to_string(),
            score: 1.5,
            support_count: 2,
            runner_up_score: 0.0,
        })
    }

    #[test]
    fn resolved_bundle_carries_name_and_ranked_snippets() {
        let snippets = vec![snippet("first fact"), snippet("second fact")];
        let bundle = assemble_prompt(
            "Where is the attraction located?",
            &resolved("abel-tasman-national-park"),
            Some("Abel Tasman National Park"),
            &snippets,
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(
            bundle.entity_name.as_deref(),
            Some("Abel Tasman National Park")
        );
        assert_eq!(bundle.snippets, snippets);
    }

    #[test]
    fn unknown_bundle_has_no_name() {
        let bundle = assemble_prompt(
            "What is this?",
            &Resolution::Unknown,
            None,
            &[],
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(bundle.entity_name, None);
        assert!(bundle.snippets.is_empty());
    }

    #[test]
    fn serialization_is_deterministic_and_numbered() {
        let bundle = assemble_prompt(
            "Who painted it?",
            &resolved("mona-lisa"),
            Some("Mona Lisa"),
            &[
                snippet("Painted by Leonardo da Vinci."),
                snippet("Housed in the Louvre."),
            ],
            &PromptConfig::default(),
        )
        .unwrap();
        let first = serialize_prompt(&bundle);
        assert_eq!(
            first,
            "Question: Who painted it?\nEntity: Mona Lisa\nSnippets:\n\
             1. Painted by Leonardo da Vinci.\n2. Housed in the Louvre.\n"
        );
        assert_eq!(first.as_bytes(), serialize_prompt(&bundle).as_bytes());

        let unknown = assemble_prompt(
            "Who painted it?",
            &Resolution::Unknown,
            None,
            &[],
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(
            serialize_prompt(&unknown),
            "Question: Who painted it?\nEntity: unknown\nSnippets:\n"
        );
    }

    #[test]
    fn snippet_budget_truncates_whole_snippets_in_rank_order() {
        let snippets = vec![
            snippet("one two three four"),  // 4 tokens
            snippet("five six seven"),      // 3 tokens
            snippet("eight nine ten more"), // 4 tokens — would overflow 8
        ];
        let bundle = assemble_prompt(
            "q",
            &resolved("x"),
            Some("X"),
            &snippets,
            &PromptConfig {
                max_snippet_tokens: 8,
            },
        )
        .unwrap();
        assert_eq!(bundle.snippets.len(), 2);
        assert_eq!(bundle.snippets[1].text, "five six seven");

        // A budget smaller than the top snippet includes nothing.
        let bundle = assemble_prompt(
            "q",
            &resolved("x"),
            Some("X"),
            &snippets,
            &PromptConfig {
                max_snippet_tokens: 3,
            },
        )
        .unwrap();
        assert!(bundle.snippets.is_empty());
    }

    #[test]
    fn empty_question_is_rejected() {
        assert!(matches!(
            assemble_prompt(
                "  ",
                &Resolution::Unknown,
                None,
                &[],
                &PromptConfig::default()
            ),
            Err(AnswerError::EmptyQuestion)
        ));
    }

    #[test]
    fn template_answers_follow_the_contract() {
        let with_snippet = assemble_prompt(
            "Where is it?",
            &resolved("abel-tasman-national-park"),
            Some("Abel Tasman National Park"),
            &[snippet(
                "A national park at the north end of the South Island.",
            )],
            &PromptConfig::default(),
        )
        .unwrap();
        let answer = generate(&with_snippet, &TemplateGenerator).unwrap();
        assert_eq!(
            answer.text,
            "This is Abel Tasman National Park. A national park at the north end of the South Island."
        );
        assert_eq!(answer.provenance, with_snippet.snippets);

        let bare = assemble_prompt(
            "Where is it?",
            &resolved("eiffel-tower"),
            Some("Eiffel Tower"),
            &[],
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(
            generate(&bare, &TemplateGenerator).unwrap().text,
            "This is Eiffel Tower."
        );

        let unknown = assemble_prompt(
            "Where is it?",
            &Resolution::Unknown,
            None,
            &[],
            &PromptConfig::default(),
        )
        .unwrap();
        let answer = generate(&unknown, &TemplateGenerator).unwrap();
        assert_eq!(answer.text, UNKNOWN_ANSWER);
        assert!(answer.provenance.is_empty());
    }

    #[test]
    fn resolved_template_answer_always_names_the_entity() {
        for name in ["Eiffel Tower", "Mona Lisa", "Abel Tasman National Park"] {
            let bundle = assemble_prompt(
                "What is this?",
                &resolved("id"),
                Some(name),
                &[snippet("some context")],
                &PromptConfig::default(),
            )
            .unwrap();
            let answer = generate(&bundle, &TemplateGenerator).unwrap();
            assert!(
                answer.text.contains(name),
                "{name} missing from {:?}",
                answer.text
            );
        }
    }

    #[test]
    fn empty_generator_output_is_an_explicit_error() {
        struct SilentGenerator;
        impl AnswerGenerator for SilentGenerator {
            fn generate_text(&self, _: &PromptBundle) -> Result<String, AnswerError> {
                Ok("   ".to_string())
            }
        }
        let bundle = assemble_prompt(
            "q",
            &Resolution::Unknown,
            None,
            &[],
            &PromptConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            generate(&bundle, &SilentGenerator),
            Err(AnswerError::EmptyAnswer)
        ));
    }

    #[test]
    fn missing_name_falls_back_to_entity_id() {
        let bundle = assemble_prompt(
            "q",
            &resolved("eiffel-tower"),
            None,
            &[],
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(bundle.entity_name.as_deref(), Some("eiffel-tower"));
    }
}
