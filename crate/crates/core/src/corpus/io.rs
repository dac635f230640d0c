use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Instance, Language, Task, TokenizerModel};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    task: Task,
    label_set: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    language: Language,
    split: String,
    words: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
}

/// Writes a header line `{task, label_set}` followed by one record per
/// instance, in split order train, validation, test.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let header = Header { task: dataset.task, label_set: dataset.label_set.clone() };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for (split, instances) in dataset.splits() {
        for inst in instances {
            let name = |i: usize| dataset.label_set[i].clone();
            let record = Record {
                id: inst.id.clone(),
                language: inst.language,
                split: split.to_string(),
                words: inst.words.clone(),
                label: inst.sentence_label.map(name),
                tags: inst.token_labels.as_ref().map(|t| t.iter().map(|&i| name(i)).collect()),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.push(b'\n');
        }
    }
    write_file(path, &out)
}

pub fn load_dataset(path: &Path, task: Task) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let schema = |line: usize, msg: String| Error::Schema { path: shown.clone(), line, msg };
    let parse = |line: usize, msg: String| Error::Parse { path: shown.clone(), line, msg };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, htext)) = lines.next() else {
        return Ok(Dataset::empty(task, Vec::new()));
    };
    let header: Header = serde_json::from_str(htext).map_err(|e| parse(hline, format!("bad header: {e}")))?;
    if header.task != task {
        return Err(schema(hline, format!("file holds {:?} data, expected {:?}", header.task, task)));
    }
    let lookup = |line: usize, name: &str| {
        header
            .label_set
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| schema(line, format!("unknown label {name:?}")))
    };

    let mut dataset = Dataset::empty(task, header.label_set.clone());
    for (line, raw) in lines {
        let r: Record = serde_json::from_str(raw).map_err(|e| parse(line, e.to_string()))?;
        let inst = match (task, r.label, r.tags) {
            (Task::SentenceClassification, Some(label), None) => {
                Instance::sentence(r.id, r.language, r.words, lookup(line, &label)?)
            }
            (Task::SequenceLabeling, None, Some(tags)) => {
                if tags.len() != r.words.len() {
                    return Err(schema(line, format!("{} words but {} tags", r.words.len(), tags.len())));
                }
                let tags = tags.iter().map(|t| lookup(line, t)).collect::<Result<Vec<_>>>()?;
                Instance::tagged(r.id, r.language, r.words, tags)
            }
            (Task::SentenceClassification, _, _) => {
                return Err(schema(line, "sentence records need exactly a `label` field".into()))
            }
            (Task::SequenceLabeling, _, _) => {
                return Err(schema(line, "labeling records need exactly a `tags` field".into()))
            }
        };
        if inst.words.is_empty() || inst.words.iter().any(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
            return Err(schema(line, "words must be non-empty and contain no whitespace".into()));
        }
        match r.split.as_str() {
            "train" => dataset.train.push(inst),
            "validation" => dataset.validation.push(inst),
            "test" => dataset.test.push(inst),
            other => return Err(schema(line, format!("unknown split {other:?}"))),
        }
    }
    Ok(dataset)
}

/// One piece per line; the line index is the piece id.
pub fn save_tokenizer(tok: &TokenizerModel, path: &Path) -> Result<()> {
    let mut out = tok.pieces().join("\n");
    out.push('\n');
    write_file(path, out.as_bytes())
}

pub fn load_tokenizer(path: &Path) -> Result<TokenizerModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TokenizerModel::from_pieces(text.lines().map(str::to_string).collect())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
