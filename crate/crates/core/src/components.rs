//! Connected-component labeling on voxel grids.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    Face6,
    /// Face, edge and corner neighbours.
    #[default]
    Full26,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dk in -1..=1isize {
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    let manhattan = di.abs() + dj.abs() + dk.abs();
                    let keep = match self {
                        Connectivity::Face6 => manhattan == 1,
                        Connectivity::Full26 => manhattan >= 1,
                    };
                    if keep {
                        out.push([di, dj, dk]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentInfo {
    /// Voxel value shared by the component.
    pub value: u8,
    pub size: usize,
    /// Flat index of the component's first voxel in scan order.
    pub first_index: usize,
}

#[derive(Debug, Clone)]
pub struct Components {
    /// Component number per voxel (1-based); 0 for unselected voxels.
    pub ids: Vec<u32>,
    /// Info for component `n` at position `n - 1`, in scan order of first voxels.
    pub info: Vec<ComponentInfo>,
}

/// Group voxels with equal values into connected components. Only values
/// with `selected[value]` set take part.
pub fn label_components(
    dims: [usize; 3],
    values: &[u8],
    selected: &[bool; 256],
    connectivity: Connectivity,
) -> Components {
    let n = dims[0] * dims[1] * dims[2];
    assert_eq!(values.len(), n, "value buffer does not match dims");
    let offsets = connectivity.offsets();
    let mut ids = vec![0u32; n];
    let mut info = Vec::new();
    let mut queue: Vec<usize> = Vec::new();
    let (nx, ny, nz) = (dims[0] as isize, dims[1] as isize, dims[2] as isize);
    for start in 0..n {
        let value = values[start];
        if ids[start] != 0 || !selected[value as usize] {
            continue;
        }
        let id = info.len() as u32 + 1;
        ids[start] = id;
        queue.clear();
        queue.push(start);
        let mut head = 0;
        while head < queue.len() {
            let idx = queue[head];
            head += 1;
            let i = (idx % dims[0]) as isize;
            let j = ((idx / dims[0]) % dims[1]) as isize;
            let k = (idx / (dims[0] * dims[1])) as isize;
            for off in &offsets {
                let (a, b, c) = (i + off[0], j + off[1], k + off[2]);
                if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                    continue;
                }
                let nb = (a + nx * (b + ny * c)) as usize;
                if ids[nb] == 0 && values[nb] == value {
                    ids[nb] = id;
                    queue.push(nb);
                }
            }
        }
        info.push(ComponentInfo {
            value,
            size: queue.len(),
            first_index: start,
        });
    }
    Components { ids, info }
}

impl Components {
    /// Largest component per value; ties go to the component seen first in
    /// scan order. Indexed by value, holding a 1-based component id.
    pub fn largest_per_value(&self) -> [u32; 256] {
        let mut best = [0u32; 256];
        let mut best_size = [0usize; 256];
        for (n, c) in self.info.iter().enumerate() {
            let v = c.value as usize;
            if c.size > best_size[v] {
                best_size[v] = c.size;
                best[v] = n as u32 + 1;
            }
        }
        best
    }
}
