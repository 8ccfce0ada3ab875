//! Alpha-carbon contact maps.
//!
//! A contact map is stored as the sorted list of off-diagonal pairs `(i, j)`
//! with `i < j`; the diagonal is always in contact.

use std::fmt::Write as _;

use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContactError {
    #[error("position {0} has a non-finite coordinate")]
    NonFiniteCoordinate(usize),
    #[error("malformed contact text: {0}")]
    FormatError(String),
    #[error("contact ({i}, {j}) outside a map of size {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContactMap {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl ContactMap {
    /// Builds a map from arbitrary pairs: self pairs are dropped, each pair is
    /// ordered, and duplicates collapse.
    pub fn from_pairs(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, ContactError> {
        let mut out = Vec::new();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(ContactError::IndexOutOfRange { i: a, j: b, n });
            }
            if a != b {
                out.push((a.min(b), a.max(b)));
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self { n, pairs: out })
    }

    /// Every pair in contact.
    pub fn complete(n: usize) -> Self {
        let pairs = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self { n, pairs }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Off-diagonal contacts, `i < j`, ascending.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        if i >= self.n || j >= self.n {
            return false;
        }
        i == j || self.pairs.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    /// Leading `len × len` block.
    pub fn truncate(&self, len: usize) -> Self {
        if len >= self.n {
            return self.clone();
        }
        Self {
            n: len,
            pairs: self
                .pairs
                .iter()
                .copied()
                .filter(|&(_, j)| j < len)
                .collect(),
        }
    }

    /// Row-major dense Boolean matrix.
    pub fn to_dense(&self) -> Vec<bool> {
        let n = self.n;
        let mut m = vec![false; n * n];
        for i in 0..n {
            m[i * n + i] = true;
        }
        for &(i, j) in &self.pairs {
            m[i * n + j] = true;
            m[j * n + i] = true;
        }
        m
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

/// Pairs whose Euclidean distance does not exceed `threshold`.
pub fn build_contact_map(
    positions: &[[f64; 3]],
    threshold: f64,
) -> Result<ContactMap, ContactError> {
    if let Some(bad) = positions
        .iter()
        .position(|p| p.iter().any(|v| !v.is_finite()))
    {
        return Err(ContactError::NonFiniteCoordinate(bad));
    }
    let cutoff = threshold * threshold;
    let mut pairs = Vec::new();
    for (i, a) in positions.iter().enumerate() {
        for (j, b) in positions.iter().enumerate().skip(i + 1) {
            if dist2(a, b) <= cutoff {
                pairs.push((i, j));
            }
        }
    }
    Ok(ContactMap {
        n: positions.len(),
        pairs,
    })
}

/// `n=<N>` followed by one `i j` line per contact.
pub fn serialize_contacts(map: &ContactMap) -> String {
    let mut out = format!("n={}\n", map.n);
    for &(i, j) in &map.pairs {
        let _ = writeln!(out, "{i} {j}");
    }
    out
}

pub fn deserialize_contacts(text: &str) -> Result<ContactMap, ContactError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ContactError::FormatError("missing header".into()))?;
    let n = header
        .strip_prefix("n=")
        .and_then(|v| v.trim().parse::<usize>().ok())
        .ok_or_else(|| ContactError::FormatError(format!("bad header {header:?}")))?;
    let mut pairs = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut it = line.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(i)), Some(Ok(j)), None) = (it.next(), it.next(), it.next()) else {
            return Err(ContactError::FormatError(format!("bad pair {line:?}")));
        };
        if i >= n || j >= n {
            return Err(ContactError::IndexOutOfRange { i, j, n });
        }
        if i >= j {
            return Err(ContactError::FormatError(format!(
                "pair {line:?} must have i < j"
            )));
        }
        pairs.push((i, j));
    }
    if pairs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ContactError::FormatError(
            "pairs must be strictly ascending".into(),
        ));
    }
    Ok(ContactMap { n, pairs })
}

/// Compact one-field encoding `i-j,i-j,...` used in processed entry files.
pub fn encode_pairs(map: &ContactMap) -> String {
    let mut out = String::new();
    for (k, (i, j)) in map.pairs.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{i}-{j}");
    }
    out
}

pub fn decode_pairs(n: usize, field: &str) -> Result<ContactMap, ContactError> {
    let mut pairs = Vec::new();
    for item in field.split(',').filter(|s| !s.is_empty()) {
        let (a, b) = item
            .split_once('-')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| ContactError::FormatError(format!("bad pair {item:?}")))?;
        pairs.push((a, b));
    }
    ContactMap::from_pairs(n, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn close_pair_is_a_contact() {
        let m = build_contact_map(&[[0.0; 3], [5.0, 0.0, 0.0]], DEFAULT_THRESHOLD).unwrap();
        assert!(m.contains(0, 1));
    }

    #[test]
    fn far_pair_is_not_a_contact() {
        let m = build_contact_map(&[[0.0; 3], [8.1, 0.0, 0.0]], DEFAULT_THRESHOLD).unwrap();
        assert!(!m.contains(0, 1));
        assert!(m.contains(0, 0) && m.contains(1, 1));
    }

    #[test]
    fn threshold_distance_is_inclusive() {
        let m = build_contact_map(&[[0.0; 3], [8.0, 0.0, 0.0]], DEFAULT_THRESHOLD).unwrap();
        assert!(m.contains(0, 1));
    }

    #[test]
    fn non_finite_coordinates_are_rejected() {
        let err = build_contact_map(&[[0.0; 3], [f64::NAN, 0.0, 0.0]], 8.0).unwrap_err();
        assert_eq!(err, ContactError::NonFiniteCoordinate(1));
    }

    #[test]
    fn text_format_is_exact() {
        let m = ContactMap::from_pairs(3, [(0, 1)]).unwrap();
        assert_eq!(serialize_contacts(&m), "n=3\n0 1\n");
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        assert_eq!(
            deserialize_contacts("n=2\n0 5\n"),
            Err(ContactError::IndexOutOfRange { i: 0, j: 5, n: 2 })
        );
    }

    #[test]
    fn malformed_text_is_rejected() {
        for bad in [
            "",
            "x=3\n",
            "n=3\n0\n",
            "n=3\n1 0\n",
            "n=3\n0 2\n0 1\n",
            "n=3\n0 1 2\n",
        ] {
            assert!(
                matches!(deserialize_contacts(bad), Err(ContactError::FormatError(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn truncation_keeps_leading_block() {
        let m = ContactMap::from_pairs(5, [(0, 1), (1, 4), (2, 3), (3, 4)]).unwrap();
        assert_eq!(m.truncate(4).pairs(), &[(0, 1), (2, 3)]);
    }

    #[test]
    fn dense_matrix_is_symmetric_with_unit_diagonal() {
        let m = ContactMap::from_pairs(4, [(0, 2), (1, 3)]).unwrap();
        let d = m.to_dense();
        for i in 0..4 {
            assert!(d[i * 4 + i]);
            for j in 0..4 {
                assert_eq!(d[i * 4 + j], d[j * 4 + i]);
                assert_eq!(d[i * 4 + j], m.contains(i, j));
            }
        }
    }

    fn arb_map() -> impl Strategy<Value = ContactMap> {
        (1usize..40).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..60)
                .prop_map(move |p| ContactMap::from_pairs(n, p).unwrap())
        })
    }

    proptest! {
        #[test]
        fn text_round_trip(m in arb_map()) {
            prop_assert_eq!(deserialize_contacts(&serialize_contacts(&m)).unwrap(), m.clone());
            prop_assert_eq!(decode_pairs(m.len(), &encode_pairs(&m)).unwrap(), m);
        }

        #[test]
        fn larger_threshold_keeps_every_contact(
            pts in proptest::collection::vec(proptest::array::uniform3(-20.0f64..20.0), 1..30),
            t1 in 0.0f64..15.0,
            extra in 0.0f64..10.0,
        ) {
            let small = build_contact_map(&pts, t1).unwrap();
            let large = build_contact_map(&pts, t1 + extra).unwrap();
            for &(i, j) in small.pairs() {
                prop_assert!(large.contains(i, j));
            }
        }
    }
}
