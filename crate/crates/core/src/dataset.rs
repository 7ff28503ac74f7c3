use ndarray::{Array2, Axis};

use crate::error::{invalid, Result};
use crate::loss::LossKind;

/// A collection of per-task datasets stored as one pooled sample table.
///
/// Row `i` belongs to task `task_of[i]`. Regression datasets have
/// `num_classes == 1`; classification targets are class indices in
/// `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    features: Array2<f64>,
    targets: Vec<f64>,
    task_of: Vec<usize>,
    num_tasks: usize,
    num_classes: usize,
}

impl MultiTaskDataset {
    pub fn new(
        features: Array2<f64>,
        targets: Vec<f64>,
        task_of: Vec<usize>,
        num_tasks: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return invalid("dataset has no samples");
        }
        if targets.len() != n || task_of.len() != n {
            return invalid(format!(
                "per-sample lengths differ: features {n}, targets {}, tasks {}",
                targets.len(),
                task_of.len()
            ));
        }
        if num_tasks == 0 || num_classes == 0 {
            return invalid("num_tasks and num_classes must be positive");
        }
        if features.iter().any(|v| !v.is_finite()) {
            return invalid("features contain non-finite values");
        }
        let mut counts = vec![0usize; num_tasks];
        for &t in &task_of {
            if t >= num_tasks {
                return invalid(format!("task id {t} out of range 0..{num_tasks}"));
            }
            counts[t] += 1;
        }
        if let Some(t) = counts.iter().position(|&c| c == 0) {
            return invalid(format!("task {t} has no samples"));
        }
        if num_classes == 1 {
            if targets.iter().any(|y| !y.is_finite()) {
                return invalid("regression targets contain non-finite values");
            }
        } else if let Some(y) = targets
            .iter()
            .find(|&&y| y < 0.0 || y.fract() != 0.0 || y as usize >= num_classes)
        {
            return invalid(format!("class label {y} outside 0..{num_classes}"));
        }
        let features = features.as_standard_layout().into_owned();
        Ok(Self { features, targets, task_of, num_tasks, num_classes })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn task_of(&self) -> &[usize] {
        &self.task_of
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Loss implied by the label space.
    pub fn loss_kind(&self) -> LossKind {
        if self.num_classes == 1 {
            LossKind::SquaredError
        } else {
            LossKind::CrossEntropy
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.loss_kind().num_outputs(self.num_classes)
    }

    pub fn task_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_tasks];
        for &t in &self.task_of {
            counts[t] += 1;
        }
        counts
    }

    /// Row indices of each task, in input order.
    pub fn task_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_tasks];
        for (i, &t) in self.task_of.iter().enumerate() {
            idx[t].push(i);
        }
        idx
    }

    /// Features and targets of a single task.
    pub fn task_slice(&self, task: usize) -> Result<(Array2<f64>, Vec<f64>)> {
        if task >= self.num_tasks {
            return invalid(format!("task {task} out of range 0..{}", self.num_tasks));
        }
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.task_of[i] == task).collect();
        Ok((
            self.features.select(Axis(0), &rows),
            rows.iter().map(|&i| self.targets[i]).collect(),
        ))
    }

    /// Sub-dataset made of `rows`, keeping the task and class spaces.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select(Axis(0), rows),
            rows.iter().map(|&i| self.targets[i]).collect(),
            rows.iter().map(|&i| self.task_of[i]).collect(),
            self.num_tasks,
            self.num_classes,
        )
    }
}
