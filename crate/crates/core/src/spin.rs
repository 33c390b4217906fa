//! Spin-½ operators and the electron ⊗ nucleus product basis.
//!
//! Basis order is `|↑⇑⟩, |↑⇓⟩, |↓⇑⟩, |↓⇓⟩`, electron first.

use crate::operator::{kron, ComplexMatrix, C64};

pub const JOINT_DIM: usize = 4;

pub const UP_UP: usize = 0;
pub const UP_DOWN: usize = 1;
pub const DOWN_UP: usize = 2;
pub const DOWN_DOWN: usize = 3;

fn m2(a: C64, b: C64, c: C64, d: C64) -> ComplexMatrix {
    ComplexMatrix::from_row_major(2, &[a, b, c, d]).expect("2x2")
}

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

pub fn identity2() -> ComplexMatrix {
    ComplexMatrix::identity(2)
}

pub fn pauli_x() -> ComplexMatrix {
    m2(ZERO, ONE, ONE, ZERO)
}

pub fn pauli_y() -> ComplexMatrix {
    m2(ZERO, -I, I, ZERO)
}

pub fn pauli_z() -> ComplexMatrix {
    m2(ONE, ZERO, ZERO, -ONE)
}

/// Raising operator `|↑⟩⟨↓|`.
pub fn sigma_plus() -> ComplexMatrix {
    m2(ZERO, ONE, ZERO, ZERO)
}

/// Lowering operator `|↓⟩⟨↑|`.
pub fn sigma_minus() -> ComplexMatrix {
    m2(ZERO, ZERO, ONE, ZERO)
}

pub fn sx() -> ComplexMatrix {
    pauli_x().scale(0.5)
}

pub fn sy() -> ComplexMatrix {
    pauli_y().scale(0.5)
}

pub fn sz() -> ComplexMatrix {
    pauli_z().scale(0.5)
}

/// Lifts a single-spin operator onto the electron factor.
pub fn electron(op: &ComplexMatrix) -> ComplexMatrix {
    kron(op, &identity2())
}

/// Lifts a single-spin operator onto the nuclear factor.
pub fn nucleus(op: &ComplexMatrix) -> ComplexMatrix {
    kron(&identity2(), op)
}

/// Precomputed joint-space spin operators.
#[derive(Clone, Debug)]
pub struct SpinOps {
    pub s_x: ComplexMatrix,
    pub s_y: ComplexMatrix,
    pub s_z: ComplexMatrix,
    pub i_x: ComplexMatrix,
    pub i_y: ComplexMatrix,
    pub i_z: ComplexMatrix,
    pub sz_ix: ComplexMatrix,
    pub sz_iz: ComplexMatrix,
}

impl SpinOps {
    pub fn new() -> Self {
        Self {
            s_x: electron(&sx()),
            s_y: electron(&sy()),
            s_z: electron(&sz()),
            i_x: nucleus(&sx()),
            i_y: nucleus(&sy()),
            i_z: nucleus(&sz()),
            sz_ix: kron(&sz(), &sx()),
            sz_iz: kron(&sz(), &sz()),
        }
    }
}

impl Default for SpinOps {
    fn default() -> Self {
        Self::new()
    }
}

/// Computational basis vector of the joint space.
pub fn basis_state(index: usize) -> [C64; JOINT_DIM] {
    let mut v = [ZERO; JOINT_DIM];
    v[index] = ONE;
    v
}
