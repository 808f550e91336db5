use std::fmt;

use serde::{Deserialize, Serialize};

/// Sequence of 0-based discrete codes, one per hierarchy level.
///
/// A full path has one code per level; any non-empty prefix is a subpath and
/// names a node of the hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct CodePath(pub Vec<u16>);

impl CodePath {
    pub fn new(codes: Vec<u16>) -> Self {
        Self(codes)
    }

    pub fn codes(&self) -> &[u16] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The first `depth` codes.
    pub fn prefix(&self, depth: usize) -> CodePath {
        CodePath(self.0[..depth].to_vec())
    }

    /// All non-empty prefixes, shallowest first (the path itself last).
    pub fn prefixes(&self) -> impl Iterator<Item = CodePath> + '_ {
        (1..=self.0.len()).map(move |d| self.prefix(d))
    }

    pub fn is_prefix_of(&self, other: &CodePath) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl From<Vec<u16>> for CodePath {
    fn from(v: Vec<u16>) -> Self {
        Self(v)
    }
}

impl fmt::Display for CodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefixes_and_ordering() {
        let p = CodePath::new(vec![2, 0, 1]);
        let pre: Vec<CodePath> = p.prefixes().collect();
        assert_eq!(pre, vec![CodePath::new(vec![2]), CodePath::new(vec![2, 0]), p.clone()]);
        assert!(pre[0].is_prefix_of(&p));
        assert!(!CodePath::new(vec![1]).is_prefix_of(&p));
        assert!(CodePath::new(vec![1, 9]) < CodePath::new(vec![2]));
        assert_eq!(p.to_string(), "[2,0,1]");
        assert_eq!(serde_json::to_string(&p).unwrap(), "[2,0,1]");
    }
}
