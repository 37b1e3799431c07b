//! Sobol low-discrepancy sequence from published Joe-Kuo direction numbers,
//! dimensions 1 through 8.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Highest dimension covered by the embedded direction-number table.
pub const MAX_DIM: usize = 8;

/// (s, a, m) rows from the new-joe-kuo-6.21201 table for dimensions 2..=8.
/// Dimension 1 is the van der Corput sequence.
const TABLE: [(u32, u32, &[u32]); 7] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

const BITS: usize = 32;

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (31 - k);
        }
        return v;
    }
    let (s, a, m) = TABLE[dim - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (31 - k);
    }
    for k in s..BITS {
        v[k] = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                v[k] ^= v[k - j];
            }
        }
    }
    v
}

/// First `m` Sobol points in `[0,1)^d`, row-major.
///
/// With `skip_zero` the sequence starts at index 1, so the first emitted
/// point is `(0.5, ..., 0.5)` rather than the origin.
pub fn sobol_points<T: Scalar>(d: usize, m: usize, skip_zero: bool) -> Result<Vec<T>> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "sobol dimension must be in 1..={MAX_DIM}, got {d}"
        )));
    }
    let skip = u64::from(skip_zero);
    if skip + m as u64 > (1u64 << BITS) {
        return Err(Error::InvalidInput(format!(
            "sobol sequence exhausted: {m} points requested"
        )));
    }
    let dirs: Vec<[u32; BITS]> = (0..d).map(direction_numbers).collect();
    let mut state = vec![0u32; d];
    let mut out = Vec::with_capacity(m * d);
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut emit = |state: &[u32], out: &mut Vec<T>| {
        for &s in state {
            out.push(T::of(s as f64 * scale));
        }
    };
    if !skip_zero && m > 0 {
        emit(&state, &mut out); // index 0: the origin
    }
    let mut index: u64 = 0;
    while out.len() < m * d {
        index += 1;
        // Gray-code advance from index-1 to index.
        let flip = index.trailing_zeros() as usize;
        for (j, s) in state.iter_mut().enumerate() {
            *s ^= dirs[j][flip];
        }
        emit(&state, &mut out);
    }
    Ok(out)
}
