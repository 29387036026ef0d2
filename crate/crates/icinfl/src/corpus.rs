//! Task datasets, prompt templates, splits, and label-balanced sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ExampleId = u64;

/// The slot name every template must end with; it marks where the
/// continuation (answer choice) begins.
pub const ANSWER_SLOT: &str = "answer";

/// One labeled task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: ExampleId,
    pub fields: BTreeMap<String, String>,
    pub label_index: usize,
    pub choices: Vec<String>,
}

impl Example {
    fn validate(&self, index: usize) -> Result<()> {
        if self.choices.len() < 2 {
            return Err(Error::Record {
                index,
                message: format!("need at least 2 choices, got {}", self.choices.len()),
            });
        }
        if self.label_index >= self.choices.len() {
            return Err(Error::Record {
                index,
                message: format!(
                    "label out of range at record {index}: label_index {} with {} choices",
                    self.label_index,
                    self.choices.len()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Slot(String),
}

/// A prompt template with named `{slot}` placeholders. The body must end
/// with the `{answer}` slot so that the unlabeled rendering is exactly the
/// prefix shared by all continuations.
#[derive(Debug, Clone)]
pub struct TaskTemplate {
    pub name: String,
    pub body: String,
    pub separator: String,
    pub k_max: usize,
    segments: Vec<Segment>,
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    name: String,
    body: String,
    separator: String,
    k_max: usize,
}

impl TaskTemplate {
    pub fn new(name: &str, body: &str, separator: &str, k_max: usize) -> Result<Self> {
        if separator.is_empty() {
            return Err(Error::Config("template separator must be non-empty".into()));
        }
        if k_max < 1 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        let segments = parse_segments(body)?;
        match segments.last() {
            Some(Segment::Slot(s)) if s == ANSWER_SLOT => {}
            _ => {
                return Err(Error::Config(format!(
                    "template body must end with the {{{ANSWER_SLOT}}} slot"
                )))
            }
        }
        Ok(TaskTemplate {
            name: name.to_string(),
            body: body.to_string(),
            separator: separator.to_string(),
            k_max,
            segments,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: TemplateFile =
            toml::from_str(text).map_err(|e| Error::Parse(format!("template file: {e}")))?;
        TaskTemplate::new(&f.name, &f.body, &f.separator, f.k_max)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Slot names referenced by the body, answer slot excluded.
    pub fn slots(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(name) if name != ANSWER_SLOT => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }
}

fn parse_segments(body: &str) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '{' {
            let mut name = String::new();
            loop {
                match chars.next() {
                    Some('}') => break,
                    Some(ch) => name.push(ch),
                    None => return Err(Error::Parse("unterminated slot in template body".into())),
                }
            }
            if name.is_empty() {
                return Err(Error::Parse("empty slot name in template body".into()));
            }
            if !literal.is_empty() {
                segments.push(Segment::Literal(std::mem::take(&mut literal)));
            }
            segments.push(Segment::Slot(name));
        } else {
            literal.push(c);
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Render an example through a template. With `include_label` the chosen
/// continuation is appended at the answer slot; without, the text ends
/// exactly where the continuation would begin.
pub fn render_example(template: &TaskTemplate, ex: &Example, include_label: bool) -> Result<String> {
    let mut out = String::new();
    for seg in &template.segments {
        match seg {
            Segment::Literal(text) => out.push_str(text),
            Segment::Slot(name) if name == ANSWER_SLOT => {
                if include_label {
                    out.push_str(&ex.choices[ex.label_index]);
                }
                // answer slot is last by construction
            }
            Segment::Slot(name) => match ex.fields.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(Error::UnresolvedSlot(name.clone())),
            },
        }
    }
    if out.contains(&template.separator) {
        return Err(Error::SeparatorCollision(ex.id));
    }
    Ok(out)
}

/// Train/dev/test splits with disjoint ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl DatasetSplits {
    pub fn index(&self) -> ExampleIndex<'_> {
        let mut map = HashMap::new();
        for ex in self.train.iter().chain(&self.dev).chain(&self.test) {
            map.insert(ex.id, ex);
        }
        ExampleIndex { map }
    }

    pub fn train_ids(&self) -> Vec<ExampleId> {
        self.train.iter().map(|e| e.id).collect()
    }
}

/// Id lookup over all splits.
pub struct ExampleIndex<'a> {
    map: HashMap<ExampleId, &'a Example>,
}

impl<'a> ExampleIndex<'a> {
    pub fn from_examples(examples: &'a [Example]) -> Self {
        ExampleIndex {
            map: examples.iter().map(|e| (e.id, e)).collect(),
        }
    }

    pub fn get(&self, id: ExampleId) -> Result<&'a Example> {
        self.map.get(&id).copied().ok_or(Error::UnknownId(id))
    }
}

/// A structured prompt: ordered context examples plus one query. The unit
/// the model backend consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub context_ids: Vec<ExampleId>,
    pub query_id: ExampleId,
    /// Labeled context renderings joined by the separator, then the
    /// separator, then the unlabeled query rendering.
    pub prompt_text: String,
    pub choices: Vec<String>,
    pub gold_label: usize,
}

/// Build a prompt preserving the given context ordering exactly.
pub fn build_prompt(
    template: &TaskTemplate,
    context_ids: &[ExampleId],
    query_id: ExampleId,
    index: &ExampleIndex,
) -> Result<PromptSpec> {
    if context_ids.contains(&query_id) {
        return Err(Error::QueryInContext(query_id));
    }
    let query = index.get(query_id)?;
    let mut text = String::new();
    for &id in context_ids {
        let ex = index.get(id)?;
        text.push_str(&render_example(template, ex, true)?);
        text.push_str(&template.separator);
    }
    text.push_str(&render_example(template, query, false)?);
    Ok(PromptSpec {
        context_ids: context_ids.to_vec(),
        query_id,
        prompt_text: text,
        choices: query.choices.clone(),
        gold_label: query.label_index,
    })
}

/// How raw dataset records map onto template slots, label, and choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    /// template slot name -> record key
    pub slots: BTreeMap<String, String>,
    pub label_key: String,
    /// Record key holding the per-record choice list; if absent,
    /// `fixed_choices` is used for every record.
    #[serde(default)]
    pub choices_key: Option<String>,
    #[serde(default)]
    pub fixed_choices: Option<Vec<String>>,
}

fn json_str(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Parse one line-delimited record into an `Example`.
pub fn parse_record(line: &str, schema: &DatasetSchema, index: usize) -> Result<Example> {
    let rec: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Record {
        index,
        message: format!("invalid record: {e}"),
    })?;
    let obj = rec.as_object().ok_or_else(|| Error::Record {
        index,
        message: "record is not an object".into(),
    })?;

    let mut fields = BTreeMap::new();
    for (slot, key) in &schema.slots {
        let v = obj.get(key).and_then(json_str).ok_or_else(|| Error::Record {
            index,
            message: format!("missing slot {slot} (record key {key})"),
        })?;
        fields.insert(slot.clone(), v);
    }

    let choices: Vec<String> = match (&schema.choices_key, &schema.fixed_choices) {
        (Some(key), _) => {
            let arr = obj.get(key).and_then(|v| v.as_array()).ok_or_else(|| Error::Record {
                index,
                message: format!("missing choices at key {key}"),
            })?;
            arr.iter()
                .map(|v| {
                    json_str(v).ok_or_else(|| Error::Record {
                        index,
                        message: "non-text choice".into(),
                    })
                })
                .collect::<Result<_>>()?
        }
        (None, Some(fixed)) => fixed.clone(),
        (None, None) => {
            return Err(Error::Config(
                "schema needs either choices_key or fixed_choices".into(),
            ))
        }
    };
    if choices.is_empty() {
        return Err(Error::Record {
            index,
            message: "empty choices".into(),
        });
    }

    let label_value = obj.get(&schema.label_key).ok_or_else(|| Error::Record {
        index,
        message: format!("missing label at key {}", schema.label_key),
    })?;
    let label_index = match label_value {
        serde_json::Value::Number(n) => n.as_u64().ok_or_else(|| Error::Record {
            index,
            message: "label must be a non-negative integer or choice text".into(),
        })? as usize,
        other => {
            let text = json_str(other).ok_or_else(|| Error::Record {
                index,
                message: "label must be a non-negative integer or choice text".into(),
            })?;
            choices
                .iter()
                .position(|c| c == &text)
                .ok_or_else(|| Error::Record {
                    index,
                    message: format!("label {text:?} not among choices"),
                })?
        }
    };

    let ex = Example {
        id: index as ExampleId,
        fields,
        label_index,
        choices,
    };
    ex.validate(index)?;
    Ok(ex)
}

/// Load a line-delimited dataset file. Ids are assigned sequentially in
/// file order.
pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, schema, index)?);
    }
    Ok(out)
}

/// Deterministic disjoint train/dev/test split.
pub fn split_dataset(
    examples: &[Example],
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplits> {
    let (n_train, n_dev, n_test) = sizes;
    let required = n_train + n_dev + n_test;
    if required > examples.len() {
        return Err(Error::InsufficientExamples {
            required,
            available: examples.len(),
        });
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = crate::seeded_rng(seed);
    order.shuffle(&mut rng);
    let pick = |range: std::ops::Range<usize>| -> Vec<Example> {
        order[range].iter().map(|&i| examples[i].clone()).collect()
    };
    Ok(DatasetSplits {
        train: pick(0..n_train),
        dev: pick(n_train..n_train + n_dev),
        test: pick(n_train + n_dev..required),
    })
}

/// Label-balanced k-shot sampling without replacement. Per-class counts
/// differ by at most one; the returned order is randomized.
pub fn sample_label_balanced<R: Rng>(
    train: &[Example],
    k: usize,
    rng: &mut R,
) -> Result<Vec<ExampleId>> {
    if k > train.len() {
        return Err(Error::InsufficientExamples {
            required: k,
            available: train.len(),
        });
    }
    let mut by_class: BTreeMap<usize, Vec<ExampleId>> = BTreeMap::new();
    for ex in train {
        by_class.entry(ex.label_index).or_default().push(ex.id);
    }
    let classes: Vec<usize> = by_class.keys().copied().collect();
    let c = classes.len();

    // Per-class quotas: k < c samples k distinct classes, one example each;
    // otherwise floor(k/c) per class with the remainder assigned to
    // uniformly chosen classes.
    let mut quotas: BTreeMap<usize, usize> = BTreeMap::new();
    if k < c {
        let mut chosen = classes.clone();
        chosen.shuffle(rng);
        chosen.truncate(k);
        for cls in chosen {
            quotas.insert(cls, 1);
        }
    } else {
        let base = k / c;
        let extra = k % c;
        let mut extras = classes.clone();
        extras.shuffle(rng);
        extras.truncate(extra);
        for &cls in &classes {
            quotas.insert(cls, base);
        }
        for cls in extras {
            *quotas.get_mut(&cls).unwrap() += 1;
        }
    }

    let mut picked = Vec::with_capacity(k);
    for (&cls, &quota) in &quotas {
        let pool = &by_class[&cls];
        if quota > pool.len() {
            return Err(Error::ClassExhausted {
                label: cls,
                needed: quota,
                available: pool.len(),
            });
        }
        let mut ids = pool.clone();
        ids.shuffle(rng);
        picked.extend(ids.into_iter().take(quota));
    }
    picked.shuffle(rng);
    Ok(picked)
}

/// Assert splits are pairwise disjoint by id (used by load-time validation).
pub fn assert_disjoint(splits: &DatasetSplits) -> Result<()> {
    let mut seen = BTreeSet::new();
    for ex in splits.train.iter().chain(&splits.dev).chain(&splits.test) {
        if !seen.insert(ex.id) {
            return Err(Error::Config(format!("id {} appears in two splits", ex.id)));
        }
    }
    Ok(())
}
