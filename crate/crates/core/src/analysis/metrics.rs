use super::AnalysisError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length.
    pub n: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimum-edit alignment with unit costs, counts recovered by backtrace.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for (j, cell) in d.iter_mut().take(w).enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut c = EditCounts { n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                c.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// `(S + D + I) / N` at word granularity; may exceed 1.
pub fn word_error_rate<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64, AnalysisError> {
    if reference.is_empty() {
        return Err(AnalysisError::EmptyReference);
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let c = edit_counts(&r, &h);
    Ok(c.errors() as f64 / c.n as f64)
}

/// Fraction of positions where the labels agree.
pub fn agreement_score<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AnalysisError::EmptyLabels);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

/// Aggregated downstream-task metrics; `None` when a task is absent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TaskMetrics {
    pub wer: Option<f64>,
    pub sca: Option<f64>,
    pub spkrec: Option<f64>,
}

#[derive(Deserialize)]
#[serde(tag = "task", rename_all = "lowercase", deny_unknown_fields)]
enum TaskLine {
    Asr {
        r#ref: String,
        hyp: String,
    },
    Emotion {
        r#ref: String,
        hyp: String,
    },
    Speaker {
        #[serde(default)]
        r#ref: Option<String>,
        #[serde(default)]
        hyp: Option<String>,
        #[serde(default)]
        score: Option<f64>,
    },
}

/// Reads JSON-lines of externally produced labels:
///
/// ```text
/// {"task":"asr","ref":"the cat sat","hyp":"the cat sad"}
/// {"task":"emotion","ref":"happy","hyp":"sad"}
/// {"task":"speaker","ref":"alice","hyp":"alice"}
/// {"task":"speaker","score":0.93}
/// ```
///
/// WER is pooled over utterances (total edits over total reference words),
/// SCA is emotion label agreement, and SpkRec averages speaker scores, a
/// label pair counting 1 when equal and 0 otherwise.
pub fn metrics_from_tasks(text: &str) -> Result<TaskMetrics, AnalysisError> {
    let (mut edits, mut words) = (0usize, 0usize);
    let (mut emo_ref, mut emo_hyp) = (Vec::new(), Vec::new());
    let mut spk = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| AnalysisError::TaskParse { line: i + 1, message };
        match serde_json::from_str::<TaskLine>(line).map_err(|e| parse_err(e.to_string()))? {
            TaskLine::Asr { r#ref, hyp } => {
                let r: Vec<&str> = r#ref.split_whitespace().collect();
                let h: Vec<&str> = hyp.split_whitespace().collect();
                let c = edit_counts(&r, &h);
                edits += c.errors();
                words += c.n;
            }
            TaskLine::Emotion { r#ref, hyp } => {
                emo_ref.push(r#ref);
                emo_hyp.push(hyp);
            }
            TaskLine::Speaker { r#ref, hyp, score } => match (score, r#ref, hyp) {
                (Some(s), None, None) if (0.0..=1.0).contains(&s) => spk.push(s),
                (None, Some(r), Some(h)) => spk.push(if r == h { 1.0 } else { 0.0 }),
                _ => return Err(parse_err("speaker line needs either score in [0, 1] or ref and hyp".into())),
            },
        }
    }
    let wer = if words > 0 { Some(edits as f64 / words as f64) } else { None };
    let sca = if emo_ref.is_empty() { None } else { Some(agreement_score(&emo_ref, &emo_hyp)?) };
    let spkrec = if spk.is_empty() { None } else { Some(spk.iter().sum::<f64>() / spk.len() as f64) };
    Ok(TaskMetrics { wer, sca, spkrec })
}
