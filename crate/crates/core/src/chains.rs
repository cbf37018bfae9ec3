//! Reasoning chains.
//!
//! The enrichment chain runs identify → retrieve → rewrite → classify, each
//! step's context being the previous context joined with the previous output.
//! Ablation variants drop the retrieval and/or rewrite steps. The domain chain
//! runs identify-with-cues → summarize and yields a domain rationale.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, Decoding};
use crate::classify::{classification_step, predict_step, Prediction, PromptStyle, Strategy};
use crate::corpus::{Example, Label, LabelSet};
use crate::error::{Error, Result};
use crate::templates::{
    join_parts, render_step, RenderedStep, TemplateRegistry, DA_IDENTIFY, DA_SUMMARIZE,
    SSE_CLASSIFY, SSE_IDENTIFY, SSE_RETRIEVE, SSE_REWRITE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    Sse,
    Da,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainVariant {
    Full,
    NoRewrite,
    NoRetrieval,
    NoBoth,
}

impl ChainVariant {
    pub const ALL: [ChainVariant; 4] = [
        ChainVariant::Full,
        ChainVariant::NoRewrite,
        ChainVariant::NoRetrieval,
        ChainVariant::NoBoth,
    ];

    /// Backend calls per example, classification included.
    pub fn calls(self) -> usize {
        match self {
            ChainVariant::Full => 4,
            ChainVariant::NoRewrite => 3,
            ChainVariant::NoRetrieval => 2,
            ChainVariant::NoBoth => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChainVariant::Full => "full",
            ChainVariant::NoRewrite => "no_rewrite",
            ChainVariant::NoRetrieval => "no_retrieval",
            ChainVariant::NoBoth => "no_both",
        }
    }
}

impl std::str::FromStr for ChainVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChainVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown chain variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub step_index: usize,
    pub template_id: String,
    pub context: String,
    pub instruction: String,
    pub output: String,
}

impl ChainStep {
    pub fn prompt(&self) -> String {
        RenderedStep {
            context: self.context.clone(),
            instruction: self.instruction.clone(),
        }
        .prompt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFailure {
    pub step_index: usize,
    pub message: String,
    #[serde(default)]
    pub refused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub example_id: String,
    pub chain_kind: ChainKind,
    pub variant: ChainVariant,
    pub steps: Vec<ChainStep>,
    pub final_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StepFailure>,
    /// Enrichment chain stopped after the rewrite step (rationale generation).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rationale_only: bool,
    /// In-context prefix prepended to every prompt of this chain.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub prefix: String,
}

impl ChainTrace {
    fn new(example_id: &str, chain_kind: ChainKind, variant: ChainVariant) -> Self {
        ChainTrace {
            example_id: example_id.to_string(),
            chain_kind,
            variant,
            steps: Vec::new(),
            final_label: None,
            prediction: None,
            error: None,
            rationale_only: false,
            prefix: String::new(),
        }
    }

    pub fn expected_steps(&self) -> usize {
        match (self.chain_kind, self.rationale_only) {
            (ChainKind::Da, _) => 2,
            (ChainKind::Sse, true) => 3,
            (ChainKind::Sse, false) => self.variant.calls(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_none() && self.steps.len() == self.expected_steps()
    }

    /// Rewritten text R (enrichment chain) or domain summary O (domain chain).
    pub fn rationale(&self) -> Option<&str> {
        if !self.is_complete() {
            return None;
        }
        let step = match self.chain_kind {
            ChainKind::Sse if self.variant == ChainVariant::Full => self.steps.get(2)?,
            ChainKind::Sse => return None,
            ChainKind::Da => self.steps.get(1)?,
        };
        Some(step.output.as_str())
    }

    /// Every accumulating step (all but classification) extends the previous
    /// context: `context[i+1] == join(context[i], output[i])`, a strict prefix.
    pub fn prefix_property_holds(&self) -> bool {
        let chain: Vec<&ChainStep> = self
            .steps
            .iter()
            .filter(|s| s.template_id != SSE_CLASSIFY)
            .collect();
        chain.windows(2).all(|w| {
            let (prev, next) = (w[0], w[1]);
            next.context.len() > prev.context.len()
                && next.context.starts_with(&prev.context)
                && next.context == join_parts(&[prev.context.as_str(), prev.output.as_str()])
        })
    }

    /// Prompt actually sent for `step`, prefix included.
    pub fn sent_prompt(&self, step: &ChainStep) -> String {
        with_prefix(&self.prefix, &step.prompt())
    }
}

fn with_prefix(prefix: &str, prompt: &str) -> String {
    if prefix.is_empty() {
        prompt.to_string()
    } else {
        format!("{prefix}\n\n{prompt}")
    }
}

/// Domain cue words injected into the domain chain's instructions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueProfile {
    pub domain_name: String,
    pub identification_cue: String,
    pub synthesis_cue: String,
}

impl CueProfile {
    pub fn new(
        domain_name: impl Into<String>,
        identification_cue: impl Into<String>,
        synthesis_cue: impl Into<String>,
    ) -> Result<Self> {
        let profile = CueProfile {
            domain_name: domain_name.into(),
            identification_cue: identification_cue.into(),
            synthesis_cue: synthesis_cue.into(),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.identification_cue.trim().is_empty() || self.synthesis_cue.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cue profile {:?} has an empty cue",
                self.domain_name
            )));
        }
        Ok(())
    }

    pub fn news() -> Self {
        CueProfile {
            domain_name: "news".into(),
            identification_cue: "the main entities, actions, and events described".into(),
            synthesis_cue:
                "their interrelations and the overall significance within the context of the text"
                    .into(),
        }
    }

    /// Editable default; not a transcription of any published prompt.
    pub fn medical() -> Self {
        CueProfile {
            domain_name: "medical".into(),
            identification_cue:
                "the diseases, symptoms, anatomical structures, and treatments mentioned".into(),
            synthesis_cue:
                "their clinical relationships and the overall medical significance within the context of the text"
                    .into(),
        }
    }

    /// Editable default; not a transcription of any published prompt.
    pub fn computer_science() -> Self {
        CueProfile {
            domain_name: "computer_science".into(),
            identification_cue:
                "the programming languages, technologies, tools, and technical problems described"
                    .into(),
            synthesis_cue:
                "their technical relationships and the overall significance within the computing context of the text"
                    .into(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "news" => Some(Self::news()),
            "medical" => Some(Self::medical()),
            "computer_science" | "cs" => Some(Self::computer_science()),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CueEntry {
    identification: String,
    synthesis: String,
}

/// Reads a cue profile file: a TOML table per domain with `identification`
/// and `synthesis` strings.
pub fn load_cue_profiles(path: &Path) -> Result<BTreeMap<String, CueProfile>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, CueEntry> = toml::from_str(&content)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    raw.into_iter()
        .map(|(name, e)| {
            let profile = CueProfile::new(name.clone(), e.identification, e.synthesis)?;
            Ok((name, profile))
        })
        .collect()
}

/// A worked enrichment chain for one category, used as in-context demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExemplar {
    pub text: String,
    pub gold: Label,
    pub worked_chain: ChainTrace,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExemplarRecord {
    text: String,
    gold: String,
    /// Authored outputs of identify, retrieve and rewrite.
    #[serde(default)]
    outputs: Option<Vec<String>>,
    #[serde(default)]
    worked_chain: Option<ChainTrace>,
}

impl FewShotExemplar {
    /// Builds the full four-step worked chain from authored step outputs; the
    /// classification step answers with the gold label.
    pub fn from_outputs(
        registry: &TemplateRegistry,
        id: &str,
        text: &str,
        gold: Label,
        labels: &LabelSet,
        outputs: [&str; 3],
    ) -> Result<Self> {
        let c1 = registry.short_text_context(text)?;
        let s1 = render_step(registry, SSE_IDENTIFY, &[&c1], &[])?;
        let s2 = render_step(registry, SSE_RETRIEVE, &[&s1.context, outputs[0]], &[])?;
        let s3 = render_step(registry, SSE_REWRITE, &[&s2.context, outputs[1]], &[])?;
        let s4 = classification_step(registry, outputs[2], labels, PromptStyle::QlfrStep4)?;
        let mut chain = ChainTrace::new(id, ChainKind::Sse, ChainVariant::Full);
        for (i, (template, step, output)) in [
            (SSE_IDENTIFY, s1, outputs[0]),
            (SSE_RETRIEVE, s2, outputs[1]),
            (SSE_REWRITE, s3, outputs[2]),
            (SSE_CLASSIFY, s4, gold.as_str()),
        ]
        .into_iter()
        .enumerate()
        {
            chain.steps.push(ChainStep {
                step_index: i + 1,
                template_id: template.into(),
                context: step.context,
                instruction: step.instruction,
                output: output.to_string(),
            });
        }
        chain.final_label = Some(gold.clone());
        let exemplar = FewShotExemplar {
            text: text.to_string(),
            gold,
            worked_chain: chain,
        };
        exemplar.validate()?;
        Ok(exemplar)
    }

    pub fn validate(&self) -> Result<()> {
        let chain = &self.worked_chain;
        if chain.steps.is_empty()
            || chain.steps.len() != chain.expected_steps()
            || chain.steps.iter().any(|s| s.output.trim().is_empty())
        {
            return Err(Error::Exemplars(format!(
                "worked chain for {:?} is incomplete",
                self.gold.as_str()
            )));
        }
        Ok(())
    }
}

/// Loads exemplars from JSONL. Each line has `text`, `gold` and either
/// `outputs` (three authored step outputs) or a complete `worked_chain`.
pub fn load_exemplars(
    path: &Path,
    registry: &TemplateRegistry,
    labels: &LabelSet,
) -> Result<Vec<FewShotExemplar>> {
    let records: Vec<ExemplarRecord> = crate::jsonl::read(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let gold = labels
                .resolve(&rec.gold)
                .cloned()
                .ok_or_else(|| Error::UnknownLabel {
                    path: path.to_path_buf(),
                    line: i + 1,
                    label: rec.gold.clone(),
                })?;
            match (rec.outputs, rec.worked_chain) {
                (Some(outputs), None) => {
                    let [a, b, c]: [String; 3] =
                        outputs.try_into().map_err(|_| Error::Malformed {
                            path: path.to_path_buf(),
                            line: i + 1,
                            message: "outputs must hold exactly three step outputs".into(),
                        })?;
                    FewShotExemplar::from_outputs(
                        registry,
                        &format!("exemplar-{}", i + 1),
                        &rec.text,
                        gold,
                        labels,
                        [&a, &b, &c],
                    )
                }
                (None, Some(worked_chain)) => {
                    let ex = FewShotExemplar {
                        text: rec.text,
                        gold,
                        worked_chain,
                    };
                    ex.validate()?;
                    Ok(ex)
                }
                _ => Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "give exactly one of outputs or worked_chain".into(),
                }),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InContextMode {
    ZeroShot,
    OneShot,
}

/// Zero-shot: empty. One-shot: one worked chain per label, in label-set
/// order, each step rendered as its prompt followed by its output.
pub fn build_fewshot_context(
    exemplars: &[FewShotExemplar],
    labels: &LabelSet,
    mode: InContextMode,
) -> Result<String> {
    if mode == InContextMode::ZeroShot {
        return Ok(String::new());
    }
    let mut by_label: Vec<Option<&FewShotExemplar>> = vec![None; labels.len()];
    for ex in exemplars {
        let idx = labels.index_of(&ex.gold).ok_or_else(|| {
            Error::Exemplars(format!(
                "exemplar label {:?} is not in the label set",
                ex.gold.as_str()
            ))
        })?;
        if by_label[idx].replace(ex).is_some() {
            return Err(Error::Exemplars(format!(
                "duplicate exemplar for category {:?}",
                ex.gold.as_str()
            )));
        }
        ex.validate()?;
    }
    let mut blocks = Vec::with_capacity(labels.len());
    for (label, ex) in labels.iter().zip(&by_label) {
        let ex = ex.ok_or_else(|| {
            Error::Exemplars(format!(
                "missing exemplar for category {:?}",
                label.as_str()
            ))
        })?;
        let block: Vec<String> = ex
            .worked_chain
            .steps
            .iter()
            .map(|s| format!("{}\n{}", s.prompt(), s.output))
            .collect();
        blocks.push(block.join("\n"));
    }
    Ok(blocks.join("\n\n"))
}

/// Executes chains against one backend with fixed decoding settings.
pub struct ChainRunner<'a> {
    backend: &'a dyn Backend,
    registry: &'a TemplateRegistry,
    decoding: Decoding,
    strategy: Strategy,
    prefix: String,
}

impl<'a> ChainRunner<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        registry: &'a TemplateRegistry,
        decoding: Decoding,
    ) -> Self {
        ChainRunner {
            backend,
            registry,
            decoding,
            strategy: Strategy::ParseText,
            prefix: String::new(),
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    /// In-context prefix (see [`build_fewshot_context`]) for every prompt.
    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = prefix.into();
        self
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend
    }

    pub fn decoding(&self) -> &Decoding {
        &self.decoding
    }

    fn call(&self, step: &RenderedStep) -> std::result::Result<String, BackendError> {
        let request = self
            .decoding
            .reasoning_request(with_prefix(&self.prefix, &step.prompt()));
        Ok(self.backend.complete(&request)?.text.trim().to_string())
    }

    /// Runs one reasoning step, recording it on success and the failure otherwise.
    fn reason(
        &self,
        trace: &mut ChainTrace,
        template_id: &str,
        step: RenderedStep,
    ) -> Option<String> {
        let step_index = trace.steps.len() + 1;
        match self.call(&step) {
            Ok(output) => {
                trace.steps.push(ChainStep {
                    step_index,
                    template_id: template_id.to_string(),
                    context: step.context,
                    instruction: step.instruction,
                    output: output.clone(),
                });
                Some(output)
            }
            Err(e) => {
                fail(trace, step_index, &e);
                None
            }
        }
    }

    fn classify(&self, trace: &mut ChainTrace, content: &str, labels: &LabelSet) -> Result<()> {
        let step = classification_step(self.registry, content, labels, PromptStyle::QlfrStep4)?;
        let step_index = trace.steps.len() + 1;
        let sent = RenderedStep {
            context: String::new(),
            instruction: with_prefix(&self.prefix, &step.prompt()),
        };
        match predict_step(self.backend, &sent, labels, self.strategy, &self.decoding) {
            Ok(prediction) => {
                let prediction = prediction.for_example(&trace.example_id);
                trace.steps.push(ChainStep {
                    step_index,
                    template_id: SSE_CLASSIFY.into(),
                    context: step.context,
                    instruction: step.instruction,
                    output: prediction.raw_output.trim().to_string(),
                });
                trace.final_label = prediction.label.clone();
                trace.prediction = Some(prediction);
            }
            Err(e) => fail(trace, step_index, &e),
        }
        Ok(())
    }

    /// Runs the enrichment chain for `variant`, ending with classification.
    ///
    /// Backend failures do not return `Err`: the trace comes back partial with
    /// [`ChainTrace::error`] set. `Err` is reserved for invalid inputs, which
    /// are rejected before any backend call.
    pub fn run_sse_cot(
        &self,
        example: &Example,
        labels: &LabelSet,
        variant: ChainVariant,
    ) -> Result<ChainTrace> {
        example.validate()?;
        let mut trace = ChainTrace::new(&example.id, ChainKind::Sse, variant);
        trace.prefix = self.prefix.clone();
        let c1 = self.registry.short_text_context(&example.text)?;

        let content = match variant {
            ChainVariant::Full => {
                let Some(concepts) = self.identify(&mut trace, &c1)? else {
                    return Ok(trace);
                };
                let c2 = join_parts(&[c1.as_str(), concepts.as_str()]);
                let Some(knowledge) = self.retrieve(&mut trace, &c2)? else {
                    return Ok(trace);
                };
                let c3 = join_parts(&[c2.as_str(), knowledge.as_str()]);
                let Some(rewritten) = self.rewrite(&mut trace, &c3)? else {
                    return Ok(trace);
                };
                rewritten
            }
            ChainVariant::NoRewrite => {
                let Some(concepts) = self.identify(&mut trace, &c1)? else {
                    return Ok(trace);
                };
                let c2 = join_parts(&[c1.as_str(), concepts.as_str()]);
                let Some(knowledge) = self.retrieve(&mut trace, &c2)? else {
                    return Ok(trace);
                };
                join_parts(&[example.text.as_str(), knowledge.as_str()])
            }
            ChainVariant::NoRetrieval => {
                let Some(rewritten) = self.rewrite(&mut trace, &c1)? else {
                    return Ok(trace);
                };
                rewritten
            }
            ChainVariant::NoBoth => example.text.clone(),
        };
        self.classify(&mut trace, &content, labels)?;
        Ok(trace)
    }

    /// Identify → retrieve → rewrite, no classification. The rewrite output is
    /// the rationale.
    pub fn run_sse_rationale(&self, example: &Example) -> Result<ChainTrace> {
        example.validate()?;
        let mut trace = ChainTrace::new(&example.id, ChainKind::Sse, ChainVariant::Full);
        trace.rationale_only = true;
        trace.prefix = self.prefix.clone();
        let c1 = self.registry.short_text_context(&example.text)?;
        let Some(concepts) = self.identify(&mut trace, &c1)? else {
            return Ok(trace);
        };
        let c2 = join_parts(&[c1.as_str(), concepts.as_str()]);
        let Some(knowledge) = self.retrieve(&mut trace, &c2)? else {
            return Ok(trace);
        };
        let c3 = join_parts(&[c2.as_str(), knowledge.as_str()]);
        self.rewrite(&mut trace, &c3)?;
        Ok(trace)
    }

    /// Identify components with the domain cue, then summarize them.
    pub fn run_da_cot(&self, example: &Example, cues: &CueProfile) -> Result<ChainTrace> {
        example.validate()?;
        cues.validate()?;
        let mut trace = ChainTrace::new(&example.id, ChainKind::Da, ChainVariant::Full);
        trace.prefix = self.prefix.clone();
        let c1 = self.registry.short_text_context(&example.text)?;
        let step = render_step(
            self.registry,
            DA_IDENTIFY,
            &[&c1],
            &[("identification_cue", &cues.identification_cue)],
        )?;
        let Some(components) = self.reason(&mut trace, DA_IDENTIFY, step) else {
            return Ok(trace);
        };
        let step = render_step(
            self.registry,
            DA_SUMMARIZE,
            &[c1.as_str(), components.as_str()],
            &[("synthesis_cue", &cues.synthesis_cue)],
        )?;
        self.reason(&mut trace, DA_SUMMARIZE, step);
        Ok(trace)
    }

    fn identify(&self, trace: &mut ChainTrace, context: &str) -> Result<Option<String>> {
        let step = render_step(self.registry, SSE_IDENTIFY, &[context], &[])?;
        Ok(self.reason(trace, SSE_IDENTIFY, step))
    }

    fn retrieve(&self, trace: &mut ChainTrace, context: &str) -> Result<Option<String>> {
        let step = render_step(self.registry, SSE_RETRIEVE, &[context], &[])?;
        Ok(self.reason(trace, SSE_RETRIEVE, step))
    }

    fn rewrite(&self, trace: &mut ChainTrace, context: &str) -> Result<Option<String>> {
        let step = render_step(self.registry, SSE_REWRITE, &[context], &[])?;
        Ok(self.reason(trace, SSE_REWRITE, step))
    }
}

fn fail(trace: &mut ChainTrace, step_index: usize, err: &BackendError) {
    tracing::warn!(example = %trace.example_id, step = step_index, error = %err, "chain step failed");
    trace.error = Some(StepFailure {
        step_index,
        message: err.to_string(),
        refused: matches!(err, BackendError::Refusal(_)),
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, MockBackend, MockRule};
    use crate::classify::PredictionFlag;

    fn news() -> LabelSet {
        LabelSet::new(
            "news",
            [
                "health",
                "sport",
                "entertainment",
                "business",
                "sci_tech",
                "U.S.",
                "world",
            ],
        )
        .unwrap()
    }

    fn generic_mock() -> MockBackend {
        MockBackend::new(vec![
            MockRule::text("identify key concepts", "concept A; concept B"),
            MockRule::text("retrieve related common knowledge", "background knowledge"),
            MockRule::text("Refine and enhance", "a rewritten sentence"),
            MockRule::text("identify the key components", "entity X; action Y"),
            MockRule::text("Provide a summary", "X does Y, which matters."),
            MockRule::text("classify it into", "world"),
        ])
    }

    fn example(text: &str) -> Example {
        Example::new("ex1", text, None).unwrap()
    }

    #[test]
    fn every_variant_makes_its_declared_calls() {
        let reg = TemplateRegistry::builtin();
        let mock = CountingBackend::new(generic_mock());
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        for variant in ChainVariant::ALL {
            mock.reset();
            let trace = runner
                .run_sse_cot(&example("some text"), &news(), variant)
                .unwrap();
            assert_eq!(mock.calls(), variant.calls(), "{variant:?}");
            assert_eq!(trace.steps.len(), variant.calls());
            assert!(trace.is_complete());
            assert_eq!(trace.final_label.as_ref().unwrap().as_str(), "world");
            assert!(trace.prefix_property_holds());
        }
    }

    #[test]
    fn no_rewrite_classifies_text_plus_knowledge() {
        let reg = TemplateRegistry::builtin();
        let mock = CountingBackend::new(generic_mock());
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        runner
            .run_sse_cot(&example("original words"), &news(), ChainVariant::NoRewrite)
            .unwrap();
        let prompts = mock.prompts();
        assert_eq!(prompts.len(), 3);
        assert_eq!(
            prompts[2],
            "Given the short text 'original words. background knowledge'. classify it into one of \
             the categories. The categories are 'health', 'sport', 'entertainment', 'business', \
             'sci_tech', 'U.S.' and 'world'."
        );
    }

    #[test]
    fn no_retrieval_rewrites_the_input_directly() {
        let reg = TemplateRegistry::builtin();
        let mock = CountingBackend::new(generic_mock());
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        let trace = runner
            .run_sse_cot(&example("raw"), &news(), ChainVariant::NoRetrieval)
            .unwrap();
        assert_eq!(trace.steps[0].template_id, SSE_REWRITE);
        assert_eq!(trace.steps[0].context, "Given the short text 'raw'");
        assert!(mock.prompts()[1].contains("'a rewritten sentence'"));
    }

    #[test]
    fn instructions_are_registry_text() {
        let reg = TemplateRegistry::builtin();
        let mock = generic_mock();
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        let trace = runner
            .run_sse_cot(&example("t"), &news(), ChainVariant::Full)
            .unwrap();
        for step in &trace.steps[..3] {
            assert_eq!(step.instruction, reg.get(&step.template_id).unwrap());
        }
    }

    #[test]
    fn backend_failure_yields_partial_trace() {
        let reg = TemplateRegistry::builtin();
        let mock = MockBackend::new(vec![
            MockRule::text("identify key concepts", "k"),
            MockRule::refusal("retrieve related"),
        ]);
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        let trace = runner
            .run_sse_cot(&example("t"), &news(), ChainVariant::Full)
            .unwrap();
        assert_eq!(trace.steps.len(), 1);
        let err = trace.error.as_ref().unwrap();
        assert_eq!(err.step_index, 2);
        assert!(err.refused);
        assert!(!trace.is_complete());
        assert!(trace.final_label.is_none());
    }

    #[test]
    fn unparseable_label_is_flagged() {
        let reg = TemplateRegistry::builtin();
        let mock = MockBackend::new(vec![MockRule::text("classify it into", "no idea")]);
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        let trace = runner
            .run_sse_cot(&example("t"), &news(), ChainVariant::NoBoth)
            .unwrap();
        assert!(trace.final_label.is_none());
        assert!(trace.error.is_none());
        assert!(trace
            .prediction
            .as_ref()
            .unwrap()
            .is_flagged(PredictionFlag::Unparsed));
    }

    #[test]
    fn domain_chain_embeds_cues() {
        let reg = TemplateRegistry::builtin();
        let mock = CountingBackend::new(generic_mock());
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        let trace = runner
            .run_da_cot(&example("t"), &CueProfile::news())
            .unwrap();
        assert_eq!(mock.calls(), 2);
        assert_eq!(trace.steps.len(), 2);
        assert_eq!(
            trace.steps[0].instruction,
            "identify the key components, consider the main entities, actions, and events described."
        );
        assert_eq!(
            trace.steps[1].instruction,
            "Provide a summary of the identified components, including their interrelations and \
             the overall significance within the context of the text."
        );
        assert_eq!(trace.rationale(), Some("X does Y, which matters."));
        assert!(trace.prefix_property_holds());
    }

    #[test]
    fn empty_text_rejected_before_any_call() {
        let reg = TemplateRegistry::builtin();
        let mock = CountingBackend::new(generic_mock());
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        let empty = Example {
            id: "e".into(),
            text: "   ".into(),
            gold: None,
        };
        assert!(runner.run_da_cot(&empty, &CueProfile::news()).is_err());
        assert!(runner
            .run_sse_cot(&empty, &news(), ChainVariant::Full)
            .is_err());
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn rationale_chain_stops_after_rewrite() {
        let reg = TemplateRegistry::builtin();
        let mock = CountingBackend::new(generic_mock());
        let runner = ChainRunner::new(&mock, &reg, Decoding::for_model("mock"));
        let trace = runner.run_sse_rationale(&example("t")).unwrap();
        assert_eq!(mock.calls(), 3);
        assert!(trace.is_complete());
        assert_eq!(trace.rationale(), Some("a rewritten sentence"));
        assert!(trace.final_label.is_none());
    }

    fn exemplars(labels: &LabelSet) -> Vec<FewShotExemplar> {
        let reg = TemplateRegistry::builtin();
        labels
            .iter()
            .rev()
            .map(|l| {
                FewShotExemplar::from_outputs(
                    &reg,
                    "x",
                    &format!("text about {l}"),
                    l.clone(),
                    labels,
                    ["k", "s", "r"],
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn fewshot_context_modes() {
        let labels = news();
        let all = exemplars(&labels);
        assert_eq!(
            build_fewshot_context(&all, &labels, InContextMode::ZeroShot).unwrap(),
            ""
        );
        let prefix = build_fewshot_context(&all, &labels, InContextMode::OneShot).unwrap();
        let blocks: Vec<&str> = prefix.split("\n\n").collect();
        assert_eq!(blocks.len(), 7);
        for (block, label) in blocks.iter().zip(&labels) {
            assert!(block.starts_with(&format!("Given the short text 'text about {label}'")));
            assert!(block.ends_with(&format!("\n{label}")));
        }

        let missing: Vec<_> = all
            .iter()
            .filter(|e| e.gold.as_str() != "business")
            .cloned()
            .collect();
        let err = build_fewshot_context(&missing, &labels, InContextMode::OneShot).unwrap_err();
        assert!(err.to_string().contains("business"));

        let mut dup = all.clone();
        dup.push(all[0].clone());
        assert!(build_fewshot_context(&dup, &labels, InContextMode::OneShot).is_err());
    }

    #[test]
    fn prefix_reaches_every_prompt() {
        let reg = TemplateRegistry::builtin();
        let mock = CountingBackend::new(generic_mock());
        let runner =
            ChainRunner::new(&mock, &reg, Decoding::for_model("mock")).with_prefix("DEMO BLOCK");
        let trace = runner
            .run_sse_cot(&example("t"), &news(), ChainVariant::Full)
            .unwrap();
        assert!(mock
            .prompts()
            .iter()
            .all(|p| p.starts_with("DEMO BLOCK\n\n")));
        assert_eq!(trace.prefix, "DEMO BLOCK");
        assert!(trace.prefix_property_holds());
    }

    #[test]
    fn cue_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cues.toml");
        fs::write(
            &path,
            "[medical]\nidentification = \"the symptoms\"\nsynthesis = \"their links\"\n",
        )
        .unwrap();
        let profiles = load_cue_profiles(&path).unwrap();
        assert_eq!(profiles["medical"].identification_cue, "the symptoms");
        fs::write(&path, "[x]\nidentification = \"\"\nsynthesis = \"s\"\n").unwrap();
        assert!(load_cue_profiles(&path).is_err());
    }
}
