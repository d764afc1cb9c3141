//! Generation-based accuracy: whitespace-insensitive exact match,
//! containment, label-constrained accuracy and scene-text exact match.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn fold(s: &str) -> String {
    s.to_lowercase()
}

/// Equal after case folding and removing every space.
pub fn match_equal_ws(pred: &str, gt: &str) -> bool {
    fold(pred).replace(' ', "") == fold(gt).replace(' ', "")
}

/// The case-folded ground truth occurs inside the case-folded prediction.
pub fn match_in(pred: &str, gt: &str) -> bool {
    fold(pred).contains(&fold(gt))
}

/// Case-folded exact match that keeps internal spaces (outer ones trimmed).
pub fn match_scene_text(pred: &str, gt: &str) -> bool {
    fold(pred.trim()) == fold(gt.trim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Equal,
    In,
    VocPrior,
    SceneText,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Equal => "equal",
            EvalMode::In => "in",
            EvalMode::VocPrior => "voc-prior",
            EvalMode::SceneText => "scene-text",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [EvalMode::Equal, EvalMode::In, EvalMode::VocPrior, EvalMode::SceneText]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown eval mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub prediction: String,
    pub ground_truth: String,
    pub equal: bool,
    #[serde(rename = "in")]
    pub contains: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_text: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub n: usize,
    pub equal_acc: f64,
    pub in_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocprior_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_text_acc: Option<f64>,
    pub samples: Vec<SampleVerdict>,
}

impl EvalReport {
    /// The accuracy the report's mode is about.
    pub fn headline(&self) -> f64 {
        match self.mode {
            EvalMode::Equal => self.equal_acc,
            EvalMode::In => self.in_acc,
            EvalMode::VocPrior => self.vocprior_acc.unwrap_or(self.equal_acc),
            EvalMode::SceneText => self.scene_text_acc.unwrap_or(0.0),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary_table(&self) -> String {
        let mut rows = vec![("equal", Some(self.equal_acc)), ("in", Some(self.in_acc))];
        rows.push(("voc-prior", self.vocprior_acc));
        rows.push(("scene-text", self.scene_text_acc));
        let mut out = format!("mode {}  n={}\n", self.mode.as_str(), self.n);
        let _ = writeln!(out, "{:<12} {:>8}", "metric", "accuracy");
        for (name, v) in rows {
            if let Some(v) = v {
                let _ = writeln!(out, "{:<12} {:>7.2}%", name, 100.0 * v);
            }
        }
        out
    }
}

fn ratio(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Scores `predictions` against `ground_truths`.
///
/// The per-sample "in" verdict tests containment with spaces removed from
/// both sides, so an equal verdict always implies an "in" verdict.
///
/// `labels` is required in voc-prior mode: every prediction must be one of
/// them (compared with [`match_equal_ws`]), otherwise the predictions did not
/// come from constrained decoding and a contract error is returned.
pub fn evaluate<P: AsRef<str>, G: AsRef<str>>(
    predictions: &[P],
    ground_truths: &[G],
    mode: EvalMode,
    labels: Option<&[String]>,
) -> Result<EvalReport> {
    if predictions.len() != ground_truths.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            ground_truths.len()
        )));
    }
    if mode == EvalMode::VocPrior {
        let labels = labels.ok_or_else(|| {
            Error::Validation("voc-prior evaluation needs the label set".into())
        })?;
        if let Some(p) = predictions
            .iter()
            .find(|p| !labels.iter().any(|l| match_equal_ws(p.as_ref(), l)))
        {
            return Err(Error::Contract(format!(
                "voc-prior prediction {:?} is not in the label set",
                p.as_ref()
            )));
        }
    }
    let samples: Vec<SampleVerdict> = predictions
        .iter()
        .zip(ground_truths)
        .map(|(p, g)| {
            let (p, g) = (p.as_ref(), g.as_ref());
            SampleVerdict {
                prediction: p.to_string(),
                ground_truth: g.to_string(),
                equal: match_equal_ws(p, g),
                contains: match_in(&p.replace(' ', ""), &g.replace(' ', "")),
                scene_text: (mode == EvalMode::SceneText).then(|| match_scene_text(p, g)),
            }
        })
        .collect();
    let n = samples.len();
    let equal_acc = ratio(samples.iter().filter(|s| s.equal).count(), n);
    let in_acc = ratio(samples.iter().filter(|s| s.contains).count(), n);
    Ok(EvalReport {
        mode,
        n,
        equal_acc,
        in_acc,
        vocprior_acc: (mode == EvalMode::VocPrior).then_some(equal_acc),
        scene_text_acc: (mode == EvalMode::SceneText)
            .then(|| ratio(samples.iter().filter(|s| s.scene_text == Some(true)).count(), n)),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_ignores_spaces_and_case() {
        assert!(match_equal_ws("crane bird", "cranebird"));
        assert!(match_equal_ws("Light Blue", "lightblue"));
        assert!(!match_equal_ws("ipad", "hand-held computer"));
        assert!(match_equal_ws("", ""));
    }

    #[test]
    fn containment() {
        assert!(match_in("a white stingray swimming", "stingray"));
        assert!(!match_in("cat", "category"));
        assert!(match_in("anything", ""));
    }

    #[test]
    fn scene_text_keeps_inner_spaces() {
        assert!(match_scene_text("Ab C", "ab c"));
        assert!(!match_scene_text("abc", "ab c"));
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let gt = ["red", "light blue"];
        let labels: Vec<String> = gt.iter().map(|s| s.to_string()).collect();
        for mode in [EvalMode::Equal, EvalMode::In, EvalMode::VocPrior, EvalMode::SceneText] {
            let r = evaluate(&gt, &gt, mode, Some(&labels)).unwrap();
            assert_eq!(r.headline(), 1.0);
            assert_eq!((r.equal_acc, r.in_acc), (1.0, 1.0));
        }
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let r = evaluate(&[""], &["red"], EvalMode::SceneText, None).unwrap();
        assert_eq!((r.equal_acc, r.in_acc, r.scene_text_acc), (0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate(&["a"], &["a", "b"], EvalMode::Equal, None), Err(Error::Input(_))));
        let labels = vec!["red".to_string()];
        assert!(matches!(
            evaluate(&["blue"], &["red"], EvalMode::VocPrior, Some(&labels)),
            Err(Error::Contract(_))
        ));
        assert!(evaluate(&["red"], &["red"], EvalMode::VocPrior, None).is_err());
    }

    #[test]
    fn report_json_and_table() {
        let r = evaluate(&["red", "dark red"], &["red", "red"], EvalMode::Equal, None).unwrap();
        assert_eq!((r.equal_acc, r.in_acc), (0.5, 1.0));
        let r = evaluate(&["lightblue"], &["light blue"], EvalMode::In, None).unwrap();
        assert_eq!((r.equal_acc, r.in_acc), (1.0, 1.0));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.summary_table().contains("100.00%"));
    }

    proptest! {
        #[test]
        fn equal_implies_in_without_spaces(p in "[a-c ]{0,6}", g in "[a-c ]{0,6}") {
            if match_equal_ws(&p, &g) {
                prop_assert!(match_in(&p.replace(' ', ""), &g.replace(' ', "")));
            }
        }

        #[test]
        fn order_does_not_matter(pairs in proptest::collection::vec(("[ab ]{0,3}", "[ab ]{0,3}"), 1..12)) {
            let (p, g): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
            let a = evaluate(&p, &g, EvalMode::Equal, None).unwrap();
            let (mut pr, mut gr) = (p.clone(), g.clone());
            pr.reverse();
            gr.reverse();
            let b = evaluate(&pr, &gr, EvalMode::Equal, None).unwrap();
            prop_assert_eq!((a.equal_acc, a.in_acc), (b.equal_acc, b.in_acc));
        }
    }
}
