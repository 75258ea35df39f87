use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{fps_sample, FeatureMap};
use crate::error::{Error, Result};

/// Number of leading key coordinates holding head rotation angles in pose
/// databases (yaw, pitch, roll).
pub const POSE_ANGLES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbEntry {
    pub key: Vec<f32>,
    pub value: FeatureMap,
    pub class_label: Option<u16>,
}

/// Head pose plus expression code. Stored in a database as the key
/// `[yaw, pitch, roll, expression...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseExprKey {
    pub angles: [f32; POSE_ANGLES],
    pub expression: Vec<f32>,
    pub angle_weight: f64,
}

impl PoseExprKey {
    pub fn to_key(&self) -> Vec<f32> {
        self.angles
            .iter()
            .chain(&self.expression)
            .copied()
            .collect()
    }
}

/// Exact-search store. Entries are either all labelled or all unlabelled;
/// `class_index` partitions entry indices by label (a single `None` bucket
/// for unlabelled databases).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchDatabase {
    entries: Vec<DbEntry>,
    key_dim: usize,
    class_index: BTreeMap<Option<u16>, Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit<'a> {
    pub index: usize,
    pub distance: f64,
    pub entry: &'a DbEntry,
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

impl PatchDatabase {
    pub fn empty(key_dim: usize) -> Result<Self> {
        if key_dim == 0 {
            return Err(Error::Schema("key dimension must be >= 1".into()));
        }
        Ok(Self {
            entries: Vec::new(),
            key_dim,
            class_index: BTreeMap::new(),
        })
    }

    /// Wraps `entries` as-is, validating the schema and building the index.
    pub fn from_entries(key_dim: usize, entries: Vec<DbEntry>) -> Result<Self> {
        let mut db = Self::empty(key_dim)?;
        check_schema(key_dim, &entries)?;
        for (i, e) in entries.iter().enumerate() {
            db.class_index.entry(e.class_label).or_default().push(i);
        }
        db.entries = entries;
        Ok(db)
    }

    pub fn entries(&self) -> &[DbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn class_index(&self) -> &BTreeMap<Option<u16>, Vec<usize>> {
        &self.class_index
    }

    pub fn is_labelled(&self) -> bool {
        self.entries
            .first()
            .is_some_and(|e| e.class_label.is_some())
    }
}

fn check_schema(key_dim: usize, entries: &[DbEntry]) -> Result<()> {
    let labelled = entries.first().map(|e| e.class_label.is_some());
    for (i, e) in entries.iter().enumerate() {
        if e.key.len() != key_dim {
            return Err(Error::Schema(format!(
                "entry {i}: key has {} dims, database uses {key_dim}",
                e.key.len()
            )));
        }
        if e.key.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("entry {i}: non-finite key")));
        }
        if Some(e.class_label.is_some()) != labelled {
            return Err(Error::Schema(format!(
                "entry {i}: mixes labelled and unlabelled entries"
            )));
        }
    }
    Ok(())
}

/// Build a database, keeping at most `per_class_cap` entries per class.
///
/// Over-full classes keep exactly the farthest-point selection of size
/// `per_class_cap`, seeded at the class-local `start_index`. Surviving
/// entries keep their original relative order.
pub fn build_database(
    entries: Vec<DbEntry>,
    per_class_cap: usize,
    start_index: usize,
) -> Result<PatchDatabase> {
    if per_class_cap == 0 {
        return Err(Error::Argument("per-class cap must be >= 1".into()));
    }
    let key_dim = entries
        .first()
        .map(|e| e.key.len())
        .ok_or_else(|| Error::Argument("no entries to build from".into()))?;
    check_schema(key_dim, &entries)?;

    let mut buckets: BTreeMap<Option<u16>, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        buckets.entry(e.class_label).or_default().push(i);
    }
    let mut keep = vec![false; entries.len()];
    for members in buckets.values() {
        if members.len() <= per_class_cap {
            members.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let keys: Vec<&[f32]> = members.iter().map(|&i| entries[i].key.as_slice()).collect();
        for local in fps_sample(&keys, per_class_cap, start_index)? {
            keep[members[local]] = true;
        }
    }
    let retained = entries
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect();
    PatchDatabase::from_entries(key_dim, retained)
}

fn argmin<'a>(
    db: &'a PatchDatabase,
    candidates: impl Iterator<Item = usize>,
    dist: impl Fn(&[f32]) -> f64,
) -> Option<Hit<'a>> {
    let mut best: Option<Hit<'a>> = None;
    for i in candidates {
        let e = &db.entries[i];
        let d = dist(&e.key);
        if best.is_none_or(|b| d < b.distance) {
            best = Some(Hit {
                index: i,
                distance: d,
                entry: e,
            });
        }
    }
    best
}

/// Closest entry by squared Euclidean distance, restricted to `class_label`
/// when given. Ties go to the lowest entry index.
pub fn query_nearest<'a>(
    db: &'a PatchDatabase,
    key: &[f32],
    class_label: Option<u16>,
) -> Result<Hit<'a>> {
    if key.len() != db.key_dim {
        return Err(Error::Schema(format!(
            "query has {} dims, database uses {}",
            key.len(),
            db.key_dim
        )));
    }
    let hit = match class_label {
        None => argmin(db, 0..db.len(), |k| squared_distance(k, key)),
        Some(c) => {
            let members = db
                .class_index
                .get(&Some(c))
                .ok_or_else(|| Error::NotFound(format!("class {c} has no entries")))?;
            argmin(db, members.iter().copied(), |k| squared_distance(k, key))
        }
    };
    hit.ok_or_else(|| Error::NotFound("database is empty".into()))
}

/// Closest entry under `angle_weight * |d_angles|^2 + |d_expression|^2`.
pub fn query_pose<'a>(db: &'a PatchDatabase, key: &PoseExprKey) -> Result<Hit<'a>> {
    if db.key_dim != POSE_ANGLES + key.expression.len() {
        return Err(Error::Schema(format!(
            "pose key with {}-dim expression does not match {}-dim database keys",
            key.expression.len(),
            db.key_dim
        )));
    }
    if !(key.angle_weight >= 0.0 && key.angle_weight.is_finite()) {
        return Err(Error::Argument(
            "angle_weight must be finite and >= 0".into(),
        ));
    }
    let query = key.to_key();
    let (qa, qe) = query.split_at(POSE_ANGLES);
    argmin(db, 0..db.len(), |k| {
        let (ka, ke) = k.split_at(POSE_ANGLES);
        key.angle_weight * squared_distance(ka, qa) + squared_distance(ke, qe)
    })
    .ok_or_else(|| Error::NotFound("database is empty".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: Vec<f32>, class: Option<u16>) -> DbEntry {
        let tag = key.first().copied().unwrap_or(0.0);
        DbEntry {
            key,
            value: FeatureMap::new(1, 1, 1, vec![tag]).unwrap(),
            class_label: class,
        }
    }

    #[test]
    fn single_entry_always_wins() {
        let db = build_database(vec![entry(vec![3.0, 4.0], None)], 5, 0).unwrap();
        for q in [[0.0, 0.0], [100.0, -7.0]] {
            assert_eq!(query_nearest(&db, &q, None).unwrap().index, 0);
        }
    }

    #[test]
    fn exact_key_has_zero_distance() {
        let es: Vec<_> = (0..5).map(|i| entry(vec![i as f32, 1.0], None)).collect();
        let db = build_database(es, 10, 0).unwrap();
        let hit = query_nearest(&db, &[3.0, 1.0], None).unwrap();
        assert_eq!((hit.index, hit.distance), (3, 0.0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let es = vec![
            entry(vec![1.0], None),
            entry(vec![-1.0], None),
            entry(vec![1.0], None),
        ];
        let db = build_database(es, 10, 0).unwrap();
        assert_eq!(query_nearest(&db, &[0.0], None).unwrap().index, 0);
    }

    #[test]
    fn under_cap_keeps_everything() {
        let es: Vec<_> = (0..10).map(|i| entry(vec![i as f32], Some(0))).collect();
        let db = build_database(es.clone(), 10, 0).unwrap();
        assert_eq!(db.entries(), &es[..]);
    }

    #[test]
    fn per_class_fps_pairs() {
        let es = vec![
            entry(vec![0.0], Some(1)),
            entry(vec![1.0], Some(1)),
            entry(vec![10.0], Some(1)),
            entry(vec![5.0], Some(2)),
            entry(vec![6.0], Some(2)),
            entry(vec![-5.0], Some(2)),
        ];
        let db = build_database(es, 2, 0).unwrap();
        let keys: Vec<f32> = db.entries().iter().map(|e| e.key[0]).collect();
        assert_eq!(keys, vec![0.0, 10.0, 5.0, -5.0]);
        assert_eq!(db.class_index()[&Some(1)], vec![0, 1]);
        assert_eq!(db.class_index()[&Some(2)], vec![2, 3]);
    }

    #[test]
    fn class_restricted_query() {
        let es = vec![entry(vec![0.0], Some(1)), entry(vec![9.0], Some(2))];
        let db = build_database(es, 5, 0).unwrap();
        assert_eq!(query_nearest(&db, &[0.0], Some(2)).unwrap().index, 1);
        assert!(matches!(
            query_nearest(&db, &[0.0], Some(3)),
            Err(Error::NotFound(_))
        ));
        assert!(matches!(
            query_nearest(&db, &[0.0, 1.0], None),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(
            build_database(
                vec![entry(vec![0.0], None), entry(vec![0.0, 1.0], None)],
                2,
                0
            ),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            build_database(
                vec![entry(vec![0.0], None), entry(vec![1.0], Some(1))],
                2,
                0
            ),
            Err(Error::Schema(_))
        ));
        assert!(build_database(vec![], 2, 0).is_err());
        let empty = PatchDatabase::empty(4).unwrap();
        assert!(matches!(
            query_nearest(&empty, &[0.0; 4], None),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn pose_query_without_angle_weight_uses_expression() {
        let mk = |angles: [f32; 3], expr: [f32; 2]| {
            entry(angles.iter().chain(&expr).copied().collect(), None)
        };
        let db = build_database(
            vec![
                mk([0.0, 0.0, 0.0], [1.0, 1.0]),
                mk([3.0, 3.0, 3.0], [0.0, 0.0]),
                mk([0.0, 0.0, 0.0], [1.0, 1.0]),
            ],
            10,
            0,
        )
        .unwrap();
        let q = PoseExprKey {
            angles: [0.0; 3],
            expression: vec![0.0, 0.0],
            angle_weight: 0.0,
        };
        assert_eq!(query_pose(&db, &q).unwrap().index, 1);
        let weighted = PoseExprKey {
            angle_weight: 10.0,
            ..q.clone()
        };
        assert_eq!(query_pose(&db, &weighted).unwrap().index, 0);
        let bad = PoseExprKey {
            expression: vec![0.0],
            ..q
        };
        assert!(matches!(query_pose(&db, &bad), Err(Error::Schema(_))));
    }
}
