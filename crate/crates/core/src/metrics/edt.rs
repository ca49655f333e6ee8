//! Exact squared Euclidean distance transform on anisotropic grids.
//!
//! Source and query points may sit on different lattices: along each axis a
//! lattice is `len` samples at positions `(index - shift) * spacing`. Voxel
//! centers use shift 0; faces normal to an axis use shift 0.5 along it and
//! one extra sample.

/// Sample layout of one lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Lattice {
    pub dims: [usize; 3],
    pub shift: [f64; 3],
}

impl Lattice {
    pub fn centers(dims: [usize; 3]) -> Self {
        Lattice {
            dims,
            shift: [0.0; 3],
        }
    }

    /// Faces normal to `axis`.
    pub fn faces(dims: [usize; 3], axis: usize) -> Self {
        let mut d = dims;
        d[axis] += 1;
        let mut shift = [0.0; 3];
        shift[axis] = 0.5;
        Lattice { dims: d, shift }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Squared distance (mm²) from every query sample to the nearest source
/// sample flagged in `sources`; infinity when there is none.
pub(crate) fn squared_distances(
    sources: &[bool],
    from: Lattice,
    to: Lattice,
    spacing: [f64; 3],
) -> Vec<f64> {
    debug_assert_eq!(sources.len(), from.len());
    let mut cur: Vec<f64> = sources
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let mut dims = from.dims;
    let mut line_in = Vec::new();
    let mut line_out = Vec::new();
    let mut env = Envelope::default();
    for axis in 0..3 {
        let mut nd = dims;
        nd[axis] = to.dims[axis];
        let mut next = vec![f64::INFINITY; nd.iter().product()];
        let s_in = [1, dims[0], dims[0] * dims[1]];
        let s_out = [1, nd[0], nd[0] * nd[1]];
        let (b, c) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let sp = spacing[axis];
        let (src_shift, dst_shift) = (from.shift[axis], to.shift[axis]);
        for ic in 0..dims[c] {
            for ib in 0..dims[b] {
                let base_in = ib * s_in[b] + ic * s_in[c];
                let base_out = ib * s_out[b] + ic * s_out[c];
                line_in.clear();
                line_in.extend((0..dims[axis]).map(|x| cur[base_in + x * s_in[axis]]));
                if line_in.iter().all(|v| v.is_infinite()) {
                    continue;
                }
                line_out.clear();
                line_out.resize(nd[axis], f64::INFINITY);
                env.run(
                    &line_in,
                    |i| (i as f64 - src_shift) * sp,
                    |j| (j as f64 - dst_shift) * sp,
                    &mut line_out,
                );
                for (x, &v) in line_out.iter().enumerate() {
                    next[base_out + x * s_out[axis]] = v;
                }
            }
        }
        cur = next;
        dims = nd;
    }
    cur
}

/// Lower envelope of parabolas, reused across lines.
#[derive(Default)]
struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn run(
        &mut self,
        f: &[f64],
        src_pos: impl Fn(usize) -> f64,
        dst_pos: impl Fn(usize) -> f64,
        out: &mut [f64],
    ) {
        self.v.clear();
        self.z.clear();
        for q in 0..f.len() {
            if f[q].is_infinite() {
                continue;
            }
            let pq = src_pos(q);
            let mut s = f64::NEG_INFINITY;
            while let Some(&p) = self.v.last() {
                let pp = src_pos(p);
                s = ((f[q] + pq * pq) - (f[p] + pp * pp)) / (2.0 * (pq - pp));
                if s <= *self.z.last().unwrap() {
                    self.v.pop();
                    self.z.pop();
                    s = f64::NEG_INFINITY;
                } else {
                    break;
                }
            }
            self.v.push(q);
            self.z.push(s);
        }
        if self.v.is_empty() {
            return;
        }
        let mut k = 0;
        for (j, o) in out.iter_mut().enumerate() {
            let x = dst_pos(j);
            while k + 1 < self.v.len() && self.z[k + 1] < x {
                k += 1;
            }
            let p = self.v[k];
            let d = x - src_pos(p);
            *o = d * d + f[p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(sources: &[bool], from: Lattice, to: Lattice, spacing: [f64; 3]) -> Vec<f64> {
        let pos = |l: &Lattice, n: usize| {
            let i = n % l.dims[0];
            let j = (n / l.dims[0]) % l.dims[1];
            let k = n / (l.dims[0] * l.dims[1]);
            [
                (i as f64 - l.shift[0]) * spacing[0],
                (j as f64 - l.shift[1]) * spacing[1],
                (k as f64 - l.shift[2]) * spacing[2],
            ]
        };
        (0..to.len())
            .map(|q| {
                let x = pos(&to, q);
                (0..from.len())
                    .filter(|&s| sources[s])
                    .map(|s| {
                        let y = pos(&from, s);
                        (0..3).map(|a| (x[a] - y[a]).powi(2)).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_across_lattices() {
        let dims = [6, 5, 4];
        let spacing = [0.7, 1.3, 2.9];
        let mut state = 99u64;
        let lattices: Vec<Lattice> = std::iter::once(Lattice::centers(dims))
            .chain((0..3).map(|a| Lattice::faces(dims, a)))
            .collect();
        for from in &lattices {
            let sources: Vec<bool> = (0..from.len())
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    (state >> 40) % 11 == 0
                })
                .collect();
            for to in &lattices {
                let fast = squared_distances(&sources, *from, *to, spacing);
                let slow = brute(&sources, *from, *to, spacing);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn no_sources_gives_infinity() {
        let l = Lattice::centers([3, 3, 3]);
        let d = squared_distances(&[false; 27], l, l, [1.0; 3]);
        assert!(d.iter().all(|v| v.is_infinite()));
    }
}
