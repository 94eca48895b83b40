/// Strided read-only view: element `(i, j)` lives at `base + i*rs + j*cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub base: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View<'_> {
    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.base + i * self.rs + j * self.cs]
    }
}

/// Strided mutable view over a buffer shared by workers that own disjoint
/// elements.
#[derive(Clone, Copy)]
pub(crate) struct ViewMut {
    pub ptr: *mut f64,
    pub len: usize,
    pub base: usize,
    pub rs: usize,
    pub cs: usize,
}

impl ViewMut {
    #[inline(always)]
    fn offset(&self, i: usize, j: usize) -> usize {
        let o = self.base + i * self.rs + j * self.cs;
        assert!(o < self.len);
        o
    }

    #[inline(always)]
    unsafe fn get(&self, i: usize, j: usize) -> f64 {
        *self.ptr.add(self.offset(i, j))
    }

    #[inline(always)]
    unsafe fn set(&self, i: usize, j: usize, v: f64) {
        *self.ptr.add(self.offset(i, j)) = v;
    }
}

const STACK_TILE: usize = 256;

/// `c_tile += a_panel * b_panel` for an `m_r x n_r` tile held across all
/// `k_c` steps. `a_panel` is column-major (`m_r` per step), `b_panel` holds
/// one row of `n_r` per step and `c_tile` is column-major.
pub fn micro_kernel(m_r: usize, n_r: usize, k_c: usize, a_panel: &[f64], b_panel: &[f64], c_tile: &mut [f64]) {
    assert!(a_panel.len() >= m_r * k_c && b_panel.len() >= n_r * k_c && c_tile.len() >= m_r * n_r);
    let a = View { data: a_panel, base: 0, rs: 1, cs: m_r };
    let b = View { data: b_panel, base: 0, rs: n_r, cs: 1 };
    let c = ViewMut { ptr: c_tile.as_mut_ptr(), len: c_tile.len(), base: 0, rs: 1, cs: m_r };
    // SAFETY: `c` covers `c_tile`, which is borrowed exclusively.
    unsafe { kernel_c(m_r, n_r, k_c, a, b, c) }
}

/// Register-resident C: the tile is loaded once, updated for every `p`, and
/// stored once.
///
/// # Safety
/// `c` must point to a live buffer whose addressed elements no other thread
/// touches during the call.
pub(crate) unsafe fn kernel_c(m: usize, n: usize, k: usize, a: View, b: View, c: ViewMut) {
    let mut stack = [0.0f64; STACK_TILE];
    let mut heap = Vec::new();
    let tile: &mut [f64] = if m * n <= STACK_TILE {
        &mut stack[..m * n]
    } else {
        heap.resize(m * n, 0.0);
        &mut heap
    };
    for j in 0..n {
        for i in 0..m {
            tile[i + j * m] = c.get(i, j);
        }
    }
    for p in 0..k {
        for j in 0..n {
            let bpj = b.at(p, j);
            let col = &mut tile[j * m..(j + 1) * m];
            for (i, t) in col.iter_mut().enumerate() {
                *t += a.at(i, p) * bpj;
            }
        }
    }
    for j in 0..n {
        for i in 0..m {
            c.set(i, j, tile[i + j * m]);
        }
    }
}

/// Resident A block, one column of B and C per step along n.
///
/// # Safety
/// As for [`kernel_c`].
pub(crate) unsafe fn kernel_a(m: usize, n: usize, k: usize, a: View, b: View, c: ViewMut) {
    for j in 0..n {
        for i in 0..m {
            let mut acc = c.get(i, j);
            for p in 0..k {
                acc += a.at(i, p) * b.at(p, j);
            }
            c.set(i, j, acc);
        }
    }
}

/// Resident B block, one row of A and C per step along m.
///
/// # Safety
/// As for [`kernel_c`].
pub(crate) unsafe fn kernel_b(m: usize, n: usize, k: usize, a: View, b: View, c: ViewMut) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = c.get(i, j);
            for p in 0..k {
                acc += a.at(i, p) * b.at(p, j);
            }
            c.set(i, j, acc);
        }
    }
}
