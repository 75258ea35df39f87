use crate::error::{Error, Result};

use super::squared_distance;

/// Greedy farthest-point sampling.
///
/// Starts at `start_index`; every later pick maximises the distance to the
/// nearest already-selected key, lowest index on ties. Returns indices in
/// selection order.
pub fn fps_sample<K: AsRef<[f32]>>(keys: &[K], k: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = keys.len();
    if k == 0 {
        return Err(Error::Argument("fps sample size must be >= 1".into()));
    }
    if k > n {
        return Err(Error::Argument(format!(
            "cannot select {k} points from a population of {n}"
        )));
    }
    if start_index >= n {
        return Err(Error::Range {
            what: "start_index",
            value: start_index as i64,
            min: 0,
            max: n as i64 - 1,
        });
    }

    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = start_index;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            return Ok(selected);
        }
        let anchor = keys[current].as_ref();
        let mut best: Option<(usize, f64)> = None;
        for (i, key) in keys.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = squared_distance(key.as_ref(), anchor);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if best.is_none_or(|(_, bd)| nearest[i] > bd) {
                best = Some((i, nearest[i]));
            }
        }
        current = best.expect("k <= n leaves an untaken point").0;
    }
}
