use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UniversalTag;
use crate::router::TaskKind;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{what} = {value} is not a probability")]
    NotAProbability { what: String, value: f64 },
    #[error("confusion row for {gold} sums to {sum}, expected 1")]
    RowSum { gold: UniversalTag, sum: f64 },
    #[error("confusion row for {gold} puts mass on the gold tag")]
    GoldInRow { gold: UniversalTag },
}

pub(crate) fn check_probability(what: &str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::NotAProbability {
            what: what.to_string(),
            value,
        })
    }
}

/// Distribution of wrong answers given the gold tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Confusion {
    /// Each of the 16 other tags equally likely.
    #[default]
    Uniform,
    /// Explicit rows; a missing row falls back to uniform.
    Rows {
        rows: BTreeMap<UniversalTag, BTreeMap<UniversalTag, f64>>,
    },
}

impl Confusion {
    pub fn validate(&self) -> Result<(), ModelError> {
        if let Confusion::Rows { rows } = self {
            for (gold, row) in rows {
                if row.get(gold).is_some_and(|p| *p > 0.0) {
                    return Err(ModelError::GoldInRow { gold: *gold });
                }
                for (tag, p) in row {
                    check_probability(&format!("confusion[{gold}][{tag}]"), *p)?;
                }
                let sum: f64 = row.values().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(ModelError::RowSum { gold: *gold, sum });
                }
            }
        }
        Ok(())
    }

    /// P(answer = `wrong` | gold, answer is wrong).
    pub fn prob(&self, gold: UniversalTag, wrong: UniversalTag) -> f64 {
        if gold == wrong {
            return 0.0;
        }
        match self {
            Confusion::Rows { rows } if rows.contains_key(&gold) => {
                rows[&gold].get(&wrong).copied().unwrap_or(0.0)
            }
            _ => 1.0 / (UniversalTag::COUNT - 1) as f64,
        }
    }

    pub fn draw_wrong<R: Rng>(&self, gold: UniversalTag, rng: &mut R) -> UniversalTag {
        match self {
            Confusion::Rows { rows } if rows.contains_key(&gold) => {
                let mut u: f64 = rng.gen();
                let row = &rows[&gold];
                let mut last = None;
                for (tag, p) in row {
                    if *p <= 0.0 {
                        continue;
                    }
                    last = Some(*tag);
                    if u < *p {
                        return *tag;
                    }
                    u -= p;
                }
                last.expect("validated row has mass")
            }
            _ => {
                let k = rng.gen_range(0..UniversalTag::COUNT - 1);
                let k = if k >= gold.index() { k + 1 } else { k };
                UniversalTag::from_index(k).unwrap()
            }
        }
    }
}

fn one() -> f64 {
    1.0
}

/// A synthetic annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerModel {
    /// Probability of answering the gold tag.
    pub reliability: f64,
    /// Per-task overrides of `reliability`.
    #[serde(default)]
    pub task_reliability: BTreeMap<TaskKind, f64>,
    #[serde(default)]
    pub confusion: Confusion,
    /// Probability of answering each screening question correctly.
    #[serde(default = "one")]
    pub quiz_skill: f64,
}

impl WorkerModel {
    pub fn perfect() -> Self {
        calibrate(1.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_probability("reliability", self.reliability)?;
        for (task, p) in &self.task_reliability {
            check_probability(&format!("task_reliability[{}]", task.as_str()), *p)?;
        }
        check_probability("quiz_skill", self.quiz_skill)?;
        self.confusion.validate()
    }

    pub fn reliability_for(&self, task: TaskKind) -> f64 {
        self.task_reliability
            .get(&task)
            .copied()
            .unwrap_or(self.reliability)
    }

    /// The tag this worker means to give, before it is turned into answers.
    pub fn draw<R: Rng>(&self, gold: UniversalTag, task: TaskKind, rng: &mut R) -> UniversalTag {
        if rng.gen_bool(self.reliability_for(task)) {
            gold
        } else {
            self.confusion.draw_wrong(gold, rng)
        }
    }

    pub fn answer_quiz<R: Rng>(&self, key: &[usize], options: &[usize], rng: &mut R) -> Vec<usize> {
        key.iter()
            .zip(options)
            .map(|(&right, &n)| {
                if n < 2 || rng.gen_bool(self.quiz_skill) {
                    right
                } else {
                    (right + rng.gen_range(1..n)) % n
                }
            })
            .collect()
    }
}

/// A model whose expected single-judgment accuracy is `target`.
pub fn calibrate(target: f64) -> WorkerModel {
    WorkerModel {
        reliability: target.clamp(0.0, 1.0),
        task_reliability: BTreeMap::new(),
        confusion: Confusion::Uniform,
        quiz_skill: 1.0,
    }
}
