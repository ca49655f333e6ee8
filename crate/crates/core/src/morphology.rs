//! Binary morphology with box (cubic) structuring elements.
//!
//! Dilation treats voxels outside the grid as background; erosion ignores
//! them, so a solid box touching the grid border survives erosion.

/// Dilate with a box of half-widths `radius` (voxels) per axis.
pub fn dilate(mask: &[bool], dims: [usize; 3], radius: [usize; 3]) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for axis in 0..3 {
        if radius[axis] > 0 {
            cur = sweep(&cur, dims, axis, radius[axis], Mode::Any);
        }
    }
    cur
}

/// Erode with a box of half-widths `radius` (voxels) per axis.
pub fn erode(mask: &[bool], dims: [usize; 3], radius: [usize; 3]) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for axis in 0..3 {
        if radius[axis] > 0 {
            cur = sweep(&cur, dims, axis, radius[axis], Mode::All);
        }
    }
    cur
}

/// Dilation followed by erosion, computed on a grid padded by `radius` so
/// the result never grows past what the structuring element can bridge.
pub fn close(mask: &[bool], dims: [usize; 3], radius: [usize; 3]) -> Vec<bool> {
    let pdims = [
        dims[0] + 2 * radius[0],
        dims[1] + 2 * radius[1],
        dims[2] + 2 * radius[2],
    ];
    let mut padded = vec![false; pdims[0] * pdims[1] * pdims[2]];
    for_each_voxel(dims, |i, j, k, n| {
        let p = (i + radius[0]) + pdims[0] * ((j + radius[1]) + pdims[1] * (k + radius[2]));
        padded[p] = mask[n];
    });
    let closed = erode(&dilate(&padded, pdims, radius), pdims, radius);
    let mut out = vec![false; mask.len()];
    for_each_voxel(dims, |i, j, k, n| {
        let p = (i + radius[0]) + pdims[0] * ((j + radius[1]) + pdims[1] * (k + radius[2]));
        out[n] = closed[p];
    });
    out
}

fn for_each_voxel(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize, usize)) {
    let mut n = 0;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                f(i, j, k, n);
                n += 1;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Any,
    All,
}

/// Sliding-window any/all along one axis, using running counts.
fn sweep(src: &[bool], dims: [usize; 3], axis: usize, r: usize, mode: Mode) -> Vec<bool> {
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let len = dims[axis];
    let mut out = vec![false; src.len()];
    let mut line_starts = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let c = [i, j, k];
                if c[axis] == 0 {
                    line_starts.push(i + dims[0] * (j + dims[1] * k));
                }
            }
        }
    }
    for start in line_starts {
        // trues inside the current window [x - r, x + r] ∩ [0, len)
        let mut count = 0usize;
        for x in 0..r.min(len) {
            count += src[start + x * stride] as usize;
        }
        for x in 0..len {
            let hi = x + r;
            if hi < len {
                count += src[start + hi * stride] as usize;
            }
            if x > r {
                count -= src[start + (x - r - 1) * stride] as usize;
            }
            let window = hi.min(len - 1) + 1 - x.saturating_sub(r);
            out[start + x * stride] = match mode {
                Mode::Any => count > 0,
                Mode::All => count == window,
            };
        }
    }
    out
}
