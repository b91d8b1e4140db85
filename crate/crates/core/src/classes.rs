//! Failure-class taxonomy and per-edge categorical distributions.

use serde::{Deserialize, Serialize};

/// Severity category of a traversal outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassKind {
    /// Ends the task.
    #[serde(rename = "CF")]
    Catastrophic,
    /// Recoverable at a cost.
    #[serde(rename = "NCF")]
    NonCatastrophic,
    #[serde(rename = "success")]
    Success,
}

impl ClassKind {
    pub fn label(self) -> &'static str {
        match self {
            ClassKind::Catastrophic => "CF",
            ClassKind::NonCatastrophic => "NCF",
            ClassKind::Success => "success",
        }
    }
}

/// Index of a class in `[0, L)`; the last index is always success.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FailureClass(pub usize);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("a taxonomy needs at least one failure class and the success class")]
    TooFewClasses,
    #[error("success must be the last class and appear exactly once")]
    MisplacedSuccess,
}

/// Ordered set of classes `f_1..f_L`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassKind>", into = "Vec<ClassKind>")]
pub struct Taxonomy {
    kinds: Vec<ClassKind>,
}

impl Taxonomy {
    pub fn new(kinds: Vec<ClassKind>) -> Result<Self, TaxonomyError> {
        if kinds.len() < 2 {
            return Err(TaxonomyError::TooFewClasses);
        }
        let successes = kinds.iter().filter(|k| **k == ClassKind::Success).count();
        if successes != 1 || kinds.last() != Some(&ClassKind::Success) {
            return Err(TaxonomyError::MisplacedSuccess);
        }
        Ok(Self { kinds })
    }

    /// Catastrophic, non-catastrophic, success.
    pub fn standard() -> Self {
        Self {
            kinds: vec![
                ClassKind::Catastrophic,
                ClassKind::NonCatastrophic,
                ClassKind::Success,
            ],
        }
    }

    /// `L`, including success.
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn failure_count(&self) -> usize {
        self.kinds.len() - 1
    }

    pub fn success(&self) -> FailureClass {
        FailureClass(self.kinds.len() - 1)
    }

    pub fn kind(&self, class: FailureClass) -> Option<ClassKind> {
        self.kinds.get(class.0).copied()
    }

    pub fn is_failure(&self, class: FailureClass) -> bool {
        class.0 < self.failure_count()
    }

    pub fn failure_classes(&self) -> impl Iterator<Item = FailureClass> {
        (0..self.failure_count()).map(FailureClass)
    }

    pub fn first_of_kind(&self, kind: ClassKind) -> Option<FailureClass> {
        self.kinds.iter().position(|k| *k == kind).map(FailureClass)
    }

    /// Categorical with all mass on success.
    pub fn certain_success(&self) -> ClassDist {
        let mut probs = vec![0.0; self.len()];
        probs[self.len() - 1] = 1.0;
        ClassDist(probs)
    }

    /// `1/L` on every class.
    pub fn uniform(&self) -> ClassDist {
        ClassDist(vec![1.0 / self.len() as f64; self.len()])
    }
}

impl TryFrom<Vec<ClassKind>> for Taxonomy {
    type Error = TaxonomyError;

    fn try_from(kinds: Vec<ClassKind>) -> Result<Self, Self::Error> {
        Taxonomy::new(kinds)
    }
}

impl From<Taxonomy> for Vec<ClassKind> {
    fn from(t: Taxonomy) -> Self {
        t.kinds
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::standard()
    }
}

/// Categorical distribution over the classes of a taxonomy, success last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassDist(pub Vec<f64>);

impl ClassDist {
    pub fn prob(&self, class: FailureClass) -> f64 {
        self.0[class.0]
    }

    pub fn success(&self) -> f64 {
        *self.0.last().expect("non-empty distribution")
    }

    pub fn failure_mass(&self) -> f64 {
        self.0[..self.0.len() - 1].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.0.iter().all(|p| (0.0..=1.0 + tol).contains(p)) && (self.total() - 1.0).abs() <= tol
    }

    /// Draws a class by inverse CDF on `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> FailureClass {
        let mut acc = 0.0;
        for (i, p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return FailureClass(i);
            }
        }
        // u landed in rounding slack above the cumulative sum
        let last_nonzero = self.0.iter().rposition(|p| *p > 0.0).unwrap_or(self.0.len() - 1);
        FailureClass(last_nonzero)
    }
}
