use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which population a row was drawn from in a covariate-shift scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[serde(rename = "so")]
    Source,
    #[serde(rename = "ta")]
    Target,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Source => "so",
            Domain::Target => "ta",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "so" => Some(Domain::Source),
            "ta" => Some(Domain::Target),
            _ => None,
        }
    }
}

/// Named binary group-membership columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupColumns {
    pub names: Vec<String>,
    /// Row-major `n x G` membership values.
    pub members: Vec<bool>,
}

impl GroupColumns {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn column(&self, g: usize) -> impl Iterator<Item = bool> + '_ {
        let width = self.names.len();
        self.members.iter().skip(g).step_by(width).copied()
    }
}

/// Row-major table of features, labels and optional annotations.
///
/// Missing feature cells are stored as `NaN` and flagged in `miss_mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    groups: Option<GroupColumns>,
    domain: Option<Vec<Domain>>,
    /// `true` = observed.
    miss_mask: Option<Vec<bool>>,
    complete: Option<Vec<bool>>,
}

impl Dataset {
    /// Builds a dataset from one feature vector per row.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::input("dataset must have at least one row"));
        }
        if labels.len() != n {
            return Err(Error::input(format!(
                "{} feature rows but {} labels",
                n,
                labels.len()
            )));
        }
        let d = rows[0].len();
        let mut features = Vec::with_capacity(n * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::input(format!(
                    "row {i} has {} features, expected {d}",
                    row.len()
                )));
            }
            features.extend(row);
        }
        Self::from_flat(n, d, features, labels)
    }

    /// Builds a dataset from a row-major `n x d` buffer.
    pub fn from_flat(n: usize, d: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("dataset must have at least one row"));
        }
        if features.len() != n * d || labels.len() != n {
            return Err(Error::input(format!(
                "buffer sizes do not match n={n}, d={d}"
            )));
        }
        let has_nan = features.iter().any(|v| v.is_nan());
        let mut ds = Dataset {
            n,
            d,
            features,
            labels,
            groups: None,
            domain: None,
            miss_mask: None,
            complete: None,
        };
        if has_nan {
            let mask = ds.features.iter().map(|v| !v.is_nan()).collect();
            ds = ds.with_miss_mask(mask)?;
        }
        Ok(ds)
    }

    pub fn with_groups(mut self, groups: GroupColumns) -> Result<Self> {
        if groups.members.len() != self.n * groups.names.len() {
            return Err(Error::input("group matrix does not have n rows"));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn with_domain(mut self, domain: Vec<Domain>) -> Result<Self> {
        if domain.len() != self.n {
            return Err(Error::input("domain tags do not have n rows"));
        }
        self.domain = Some(domain);
        Ok(self)
    }

    /// Attaches an observation mask (`true` = observed). Unobserved cells are
    /// set to `NaN` and the complete-case flags are derived from the mask.
    pub fn with_miss_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n * self.d {
            return Err(Error::input("miss mask must be n x d"));
        }
        for (v, &obs) in self.features.iter_mut().zip(&mask) {
            if !obs {
                *v = f64::NAN;
            }
        }
        let complete = mask
            .chunks(self.d.max(1))
            .map(|r| r.iter().all(|&b| b))
            .collect();
        self.miss_mask = Some(mask);
        self.complete = Some(complete);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn feature_column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn groups(&self) -> Option<&GroupColumns> {
        self.groups.as_ref()
    }

    pub fn domain(&self) -> Option<&[Domain]> {
        self.domain.as_deref()
    }

    pub fn miss_mask(&self) -> Option<&[bool]> {
        self.miss_mask.as_deref()
    }

    /// Complete-case flags; every row is complete when no mask is attached.
    pub fn complete_flags(&self) -> Vec<bool> {
        self.complete.clone().unwrap_or_else(|| vec![true; self.n])
    }

    pub fn is_complete(&self, i: usize) -> bool {
        self.complete.as_ref().is_none_or(|c| c[i])
    }

    /// Rows `indices` in the given order, carrying along every annotation.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::input("subset must contain at least one row"));
        }
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let groups = self.groups.as_ref().map(|g| {
            let w = g.names.len();
            let mut members = Vec::with_capacity(indices.len() * w);
            for &i in indices {
                members.extend_from_slice(&g.members[i * w..(i + 1) * w]);
            }
            GroupColumns {
                names: g.names.clone(),
                members,
            }
        });
        let domain = self
            .domain
            .as_ref()
            .map(|z| indices.iter().map(|&i| z[i]).collect());
        let miss_mask = self.miss_mask.as_ref().map(|m| {
            let mut out = Vec::with_capacity(indices.len() * self.d);
            for &i in indices {
                out.extend_from_slice(&m[i * self.d..(i + 1) * self.d]);
            }
            out
        });
        let complete = self
            .complete
            .as_ref()
            .map(|c| indices.iter().map(|&i| c[i]).collect());
        Ok(Dataset {
            n: indices.len(),
            d: self.d,
            features,
            labels,
            groups,
            domain,
            miss_mask,
            complete,
        })
    }

    /// The complete-case rows (`R = 1`).
    pub fn complete_cases(&self) -> Result<Self> {
        let idx: Vec<usize> = (0..self.n).filter(|&i| self.is_complete(i)).collect();
        if idx.is_empty() {
            return Err(Error::input("dataset has no complete rows"));
        }
        self.subset(&idx)
    }

    /// Rows carrying the given domain tag.
    pub fn domain_rows(&self, domain: Domain) -> Result<Self> {
        let tags = self
            .domain
            .as_ref()
            .ok_or_else(|| Error::input("dataset has no domain column"))?;
        let idx: Vec<usize> = (0..self.n).filter(|&i| tags[i] == domain).collect();
        if idx.is_empty() {
            return Err(Error::input(format!("no rows tagged {}", domain.tag())));
        }
        self.subset(&idx)
    }

    /// Appends `values` as a new last feature column.
    pub fn with_feature_column(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.n {
            return Err(Error::input("appended column must have n entries"));
        }
        let d = self.d + 1;
        let mut features = Vec::with_capacity(self.n * d);
        for (i, &v) in values.iter().enumerate() {
            features.extend_from_slice(self.row(i));
            features.push(v);
        }
        let miss_mask = self.miss_mask.as_ref().map(|m| {
            let mut out = Vec::with_capacity(self.n * d);
            for (i, &v) in values.iter().enumerate() {
                out.extend_from_slice(&m[i * self.d..(i + 1) * self.d]);
                out.push(!v.is_nan());
            }
            out
        });
        let mut out = self.clone();
        out.d = d;
        out.features = features;
        match miss_mask {
            Some(mask) => out.with_miss_mask(mask),
            None if values.iter().any(|v| v.is_nan()) => {
                let mask = out.features.iter().map(|v| !v.is_nan()).collect();
                out.with_miss_mask(mask)
            }
            None => Ok(out),
        }
    }

    /// Replaces the label column, keeping everything else.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::input("label vector must have n entries"));
        }
        let mut out = self.clone();
        out.labels = labels;
        Ok(out)
    }
}
