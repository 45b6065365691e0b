use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3-D neighbourhood: faces (6), faces and edges (18), or all (26).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    #[default]
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    pub fn neighbours(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dk in -1isize..=1 {
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    let l1 = di.abs() + dj.abs() + dk.abs();
                    let keep = match self {
                        Connectivity::Six => l1 == 1,
                        Connectivity::Eighteen => l1 == 1 || l1 == 2,
                        Connectivity::TwentySix => l1 >= 1,
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

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::Validation(format!("connectivity must be 6, 18 or 26, got {n}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.neighbours()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// 0 for absent voxels, otherwise the 1-based component id. Ids are
    /// assigned in order of each component's lowest linear index.
    pub labels: Vec<u32>,
    /// `sizes[id - 1]`.
    pub sizes: Vec<usize>,
}

/// Connected components of the `present` voxels by breadth-first search.
pub fn label_components(present: &[bool], dims: [usize; 3], connectivity: Connectivity) -> Components {
    let [d0, d1, d2] = dims;
    assert_eq!(present.len(), d0 * d1 * d2, "mask length must match dims");
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; present.len()];
    let mut sizes = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for start in 0..present.len() {
        if !present[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            let (i, j, k) = (v % d0, (v / d0) % d1, v / (d0 * d1));
            for [di, dj, dk] in &offsets {
                let (ni, nj, nk) = (i as isize + di, j as isize + dj, k as isize + dk);
                if ni < 0 || nj < 0 || nk < 0 || ni >= d0 as isize || nj >= d1 as isize || nk >= d2 as isize {
                    continue;
                }
                let n = ni as usize + d0 * (nj as usize + d1 * nk as usize);
                if present[n] && labels[n] == 0 {
                    labels[n] = id;
                    queue.push_back(n);
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}
