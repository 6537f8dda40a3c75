use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrialLabel {
    Genuine,
    TargetWrong,
    ImposterCorrect,
    ImposterWrong,
}

impl TrialLabel {
    pub const NON_TARGET: [TrialLabel; 3] = [
        TrialLabel::TargetWrong,
        TrialLabel::ImposterCorrect,
        TrialLabel::ImposterWrong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrialLabel::Genuine => "genuine",
            TrialLabel::TargetWrong => "target_wrong",
            TrialLabel::ImposterCorrect => "imposter_correct",
            TrialLabel::ImposterWrong => "imposter_wrong",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            TrialLabel::Genuine => "TC",
            TrialLabel::TargetWrong => "TW",
            TrialLabel::ImposterCorrect => "IC",
            TrialLabel::ImposterWrong => "IW",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TrialLabel::Genuine,
            TrialLabel::TargetWrong,
            TrialLabel::ImposterCorrect,
            TrialLabel::ImposterWrong,
        ]
        .into_iter()
        .find(|l| l.name() == s)
    }
}

impl fmt::Display for TrialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    label: TrialLabel,
    score: Option<f64>,
}

impl Trial {
    pub fn new(
        enroll_id: impl Into<String>,
        test_id: impl Into<String>,
        label: TrialLabel,
    ) -> Self {
        Trial {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            label,
            score: None,
        }
    }

    pub fn label(&self) -> TrialLabel {
        self.label
    }

    pub fn score(&self) -> Option<f64> {
        self.score
    }

    pub fn key(&self) -> (String, String) {
        (self.enroll_id.clone(), self.test_id.clone())
    }

    /// Scores can be assigned once.
    pub fn set_score(&mut self, score: f64) -> Result<()> {
        if self.score.is_some() {
            return Err(Error::Config(format!(
                "trial {} / {} already scored",
                self.enroll_id, self.test_id
            )));
        }
        self.score = Some(score);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    /// Tab-separated `enroll_id, test_id, label`; `#` starts a comment line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut trials = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: String| Error::Text {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            }
            let label = TrialLabel::parse(fields[2])
                .ok_or_else(|| bad(format!("unknown label {:?}", fields[2])))?;
            trials.push(Trial::new(fields[0], fields[1], label));
        }
        Ok(TrialList { trials })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        self.trials
            .iter()
            .map(|t| format!("{}\t{}\t{}\n", t.enroll_id, t.test_id, t.label))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Attaches scores by trial key; every trial must be covered.
    pub fn attach(&mut self, scores: &ScoreFile) -> Result<()> {
        let map: HashMap<(&str, &str), f64> = scores
            .entries
            .iter()
            .map(|(e, t, s)| ((e.as_str(), t.as_str()), *s))
            .collect();
        let mut missing = Vec::new();
        for trial in &mut self.trials {
            match map.get(&(trial.enroll_id.as_str(), trial.test_id.as_str())) {
                Some(&s) => trial.set_score(s)?,
                None => missing.push(format!("{}\t{}", trial.enroll_id, trial.test_id)),
            }
        }
        if !missing.is_empty() {
            return Err(Error::KeyMismatch { missing });
        }
        Ok(())
    }
}

/// Lines of `enroll_id \t test_id \t score`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreFile {
    pub entries: Vec<(String, String, f64)>,
}

impl ScoreFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: String| Error::Text {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            }
            let score: f64 = fields[2]
                .parse()
                .map_err(|_| bad(format!("bad score {:?}", fields[2])))?;
            entries.push((fields[0].to_string(), fields[1].to_string(), score));
        }
        Ok(ScoreFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Scores use the shortest decimal form that reads back to the same bits.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(e, t, s)| format!("{e}\t{t}\t{s}\n"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Per-trial weighted mean of several score files (equal weights by default),
/// in the first file's order.
pub fn fuse_scores(systems: &[ScoreFile], weights: Option<&[f64]>) -> Result<ScoreFile> {
    let Some(first) = systems.first() else {
        return Err(Error::EmptyInput("no score files to fuse".into()));
    };
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() != systems.len() => {
            return Err(Error::Config(format!(
                "{} weights for {} systems",
                w.len(),
                systems.len()
            )));
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; systems.len()],
    };
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || !(total > 0.0) {
        return Err(Error::Config(
            "fusion weights must be non-negative with a positive sum".into(),
        ));
    }
    let maps: Vec<HashMap<(&str, &str), f64>> = systems
        .iter()
        .map(|s| {
            s.entries
                .iter()
                .map(|(e, t, v)| ((e.as_str(), t.as_str()), *v))
                .collect()
        })
        .collect();

    let mut missing = Vec::new();
    for (idx, sys) in systems.iter().enumerate() {
        for (e, t, _) in &first.entries {
            if !maps[idx].contains_key(&(e.as_str(), t.as_str())) {
                missing.push(format!("system {idx}: {e}\t{t}"));
            }
        }
        for (e, t, _) in &sys.entries {
            if !maps[0].contains_key(&(e.as_str(), t.as_str())) {
                missing.push(format!("system 0: {e}\t{t}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::KeyMismatch { missing });
    }

    let entries = first
        .entries
        .iter()
        .map(|(e, t, _)| {
            let key = (e.as_str(), t.as_str());
            let sum: f64 = maps.iter().zip(&weights).map(|(m, w)| w * m[&key]).sum();
            (e.clone(), t.clone(), sum / total)
        })
        .collect();
    Ok(ScoreFile { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(values: &[(&str, &str, f64)]) -> ScoreFile {
        ScoreFile {
            entries: values
                .iter()
                .map(|(e, t, s)| (e.to_string(), t.to_string(), *s))
                .collect(),
        }
    }

    #[test]
    fn trial_list_round_trip() {
        let text = "# comment\nspk1_p0\tu7\tgenuine\nspk1_p0\tu8\timposter_wrong\n";
        let list = TrialList::parse(text, Path::new("t.tsv")).unwrap();
        assert_eq!(list.trials.len(), 2);
        assert_eq!(list.trials[1].label(), TrialLabel::ImposterWrong);
        assert_eq!(
            TrialList::parse(&list.to_text(), Path::new("t")).unwrap(),
            list
        );
        let err = TrialList::parse("a\tb\tnope\n", Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, Error::Text { line: 1, .. }));
    }

    #[test]
    fn score_is_set_once() {
        let mut t = Trial::new("a", "b", TrialLabel::Genuine);
        t.set_score(1.5).unwrap();
        assert!(t.set_score(2.0).is_err());
        assert_eq!(t.score(), Some(1.5));
    }

    #[test]
    fn score_text_is_bit_exact() {
        let s = scores(&[
            ("a", "b", 0.1 + 0.2),
            ("c", "d", -1e-300),
            ("e", "f", 12345.678901234567),
        ]);
        let back = ScoreFile::parse(&s.to_text(), Path::new("s")).unwrap();
        for (x, y) in s.entries.iter().zip(&back.entries) {
            assert_eq!(x.2.to_bits(), y.2.to_bits());
        }
    }

    #[test]
    fn fusion_rules() {
        let a = scores(&[("e1", "t1", 1.0), ("e1", "t2", -2.0)]);
        let b = scores(&[("e1", "t2", 4.0), ("e1", "t1", 3.0)]);
        let c = scores(&[("e1", "t1", -0.5), ("e1", "t2", 0.25)]);
        assert_eq!(fuse_scores(&[a.clone(), a.clone()], None).unwrap(), a);
        assert_eq!(
            fuse_scores(&[a.clone(), b.clone()], Some(&[1.0, 0.0])).unwrap(),
            a
        );
        let fused = fuse_scores(&[a.clone(), b.clone(), c.clone()], None).unwrap();
        assert!((fused.entries[0].2 - (1.0 + 3.0 - 0.5) / 3.0).abs() < 1e-15);
        assert!((fused.entries[1].2 - (-2.0 + 4.0 + 0.25) / 3.0).abs() < 1e-15);

        let short = scores(&[("e1", "t1", 0.0)]);
        match fuse_scores(&[a, short], None).unwrap_err() {
            Error::KeyMismatch { missing } => {
                assert_eq!(missing, vec!["system 1: e1\tt2".to_string()])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn attach_reports_missing_keys() {
        let mut list = TrialList {
            trials: vec![
                Trial::new("e", "t1", TrialLabel::Genuine),
                Trial::new("e", "t2", TrialLabel::TargetWrong),
            ],
        };
        let err = list.attach(&scores(&[("e", "t1", 0.5)])).unwrap_err();
        assert!(matches!(err, Error::KeyMismatch { .. }));
    }
}
